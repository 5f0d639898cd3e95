//! Window-level winner estimators compared against a hidden-truth oracle.
//!
//! Several pairs train side by side with the mean-teacher recipe. At each
//! window boundary, four selectors each pick the pair they believe is
//! currently best:
//!
//! * **oracle** — lowest labeled-form loss accumulated on the *unlabeled*
//!   batches, scored against their hidden ground truth (harness-only);
//! * **accumulative** — lowest labeled loss summed over the whole window;
//! * **single sample** — lowest labeled loss on the window's final batch;
//! * **stable sample** — most self-consistent predictions across two
//!   mirrored views of a probe batch.
//!
//! A selector is *consistent* for a window when it picks exactly the
//! oracle's pair.

use rand::Rng;

use crate::detector::config::DetectorConfig;
use crate::detector::decode::{decode, Detection, NMS_IOU};
use crate::detector::loss::{loss_on_annotations, supervised_loss_value};
use crate::detector::model::forward;
use crate::error::{Error, Result};
use crate::numerics::params::ParamSet;
use crate::numerics::tape::Tape;
use crate::rng::{stream, StreamId};
use crate::ssod::{
    build_labeled_views, build_unlabeled_views, labeled_batch_indices, mean_teacher_step,
    unlabeled_batch_indices, MtHyper, PairState,
};
use crate::synthdata::augment::{flip_horizontal, AugmentationSpec};
use crate::synthdata::generate::SplitSet;
use crate::synthdata::types::Sample;

/// IoU needed for two detections to count as the same prediction when
/// measuring stability.
pub const STABILITY_MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct ConsistencyConfig {
    /// Number of selection windows to run.
    pub windows: usize,
    /// Training iterations per window.
    pub window_len: u64,
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    /// Probe batch size for the stability selector.
    pub stability_batch: usize,
    pub hp: MtHyper,
    /// Seed for batch composition, augmentation, and probe draws (shared
    /// by all pairs).
    pub master_seed: u64,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        ConsistencyConfig {
            windows: 100,
            window_len: 100,
            labeled_batch: 4,
            unlabeled_batch: 4,
            stability_batch: 8,
            hp: MtHyper::default(),
            master_seed: 0,
        }
    }
}

impl ConsistencyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.windows == 0 || self.window_len == 0 {
            return Err(Error::InvalidConfig(
                "consistency experiment: windows and window_len must be positive".to_string(),
            ));
        }
        if self.labeled_batch == 0 || self.unlabeled_batch == 0 || self.stability_batch == 0 {
            return Err(Error::InvalidConfig(
                "consistency experiment: batch sizes must be positive".to_string(),
            ));
        }
        self.hp.validate()
    }
}

/// The four selections made at one window boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowPicks {
    pub window: usize,
    pub oracle: usize,
    pub accumulative: usize,
    pub single_sample: usize,
    pub stable_sample: usize,
}

#[derive(Debug, Clone)]
pub struct ConsistencyReport {
    pub picks: Vec<WindowPicks>,
    pub windows: usize,
    pub accumulative_consistent: usize,
    pub single_sample_consistent: usize,
    pub stable_sample_consistent: usize,
}

impl ConsistencyReport {
    pub fn accumulative_rate(&self) -> f64 {
        self.accumulative_consistent as f64 / self.windows as f64
    }

    pub fn single_sample_rate(&self) -> f64 {
        self.single_sample_consistent as f64 / self.windows as f64
    }

    pub fn stable_sample_rate(&self) -> f64 {
        self.stable_sample_consistent as f64 / self.windows as f64
    }
}

/// Index of the smallest value; ties go to the lower index.
fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Index of the largest value; ties go to the lower index.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Labeled-form loss of `params` on raw samples, reading annotations
/// through the harness accessor. This is the hidden-truth oracle: it may
/// score unlabeled samples, which training code must never do.
fn harness_loss_value(cfg: &DetectorConfig, params: &ParamSet, batch: &[&Sample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("harness_loss_value: empty batch".to_string()));
    }
    let tape = Tape::new();
    let vars = params.lease(&tape)?;
    let mut acc: Option<crate::numerics::tape::Var> = None;
    for s in batch {
        let term = loss_on_annotations(cfg, &tape, &vars, s.image(), s.annotations_for_harness())?;
        acc = Some(match acc {
            Some(a) => a.add(term)?,
            None => term,
        });
    }
    let total = acc.expect("non-empty batch");
    total.mul_scalar(1.0 / batch.len() as f64)?.value().item()
}

fn detect_at(
    cfg: &DetectorConfig,
    params: &ParamSet,
    sample: &Sample,
    threshold: f64,
) -> Result<Vec<Detection>> {
    let tape = Tape::new();
    let vars = params.lease(&tape)?;
    let raw = forward(cfg, &tape, &vars, sample.image())?;
    decode(cfg, &raw.value(), threshold, NMS_IOU)
}

/// Mirrors detections made on a flipped view back into the original frame.
fn unflip(dets: Vec<Detection>, flipped: bool, image_size: usize) -> Vec<Detection> {
    if !flipped {
        return dets;
    }
    let w = image_size as f64;
    dets.into_iter()
        .map(|d| {
            let mut b = d.bbox;
            let (x1, x2) = (w - b.x2, w - b.x1);
            b.x1 = x1;
            b.x2 = x2;
            Detection { bbox: b, ..d }
        })
        .collect()
}

/// Fraction of predictions that agree between two views: greedy same-class
/// matching at IoU ≥ 0.5, normalized by the larger detection count. Two
/// empty sets agree on nothing and score zero, so silent models are not
/// rewarded for vacuous consistency.
fn agreement(a: &[Detection], b: &[Detection]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..a.len()).collect();
    order.sort_by(|&i, &j| {
        a[j].score.partial_cmp(&a[i].score).expect("finite scores").then(i.cmp(&j))
    });
    let mut used = vec![false; b.len()];
    let mut matched = 0usize;
    for &i in &order {
        let mut best: Option<(usize, f64)> = None;
        for (j, cand) in b.iter().enumerate() {
            if used[j] || cand.class_id != a[i].class_id {
                continue;
            }
            let iou = a[i].bbox.iou(&cand.bbox);
            if iou >= STABILITY_MATCH_IOU && best.map_or(true, |(_, bi)| iou > bi) {
                best = Some((j, iou));
            }
        }
        if let Some((j, _)) = best {
            used[j] = true;
            matched += 1;
        }
    }
    matched as f64 / a.len().max(b.len()) as f64
}

/// Stability score of one teacher on a probe batch: mean agreement between
/// its predictions on two mirrored views of each image, mapped back to a
/// common frame before matching.
fn stability_score(
    cfg: &DetectorConfig,
    teacher: &ParamSet,
    probes: &[(Sample, bool, Sample, bool)],
    threshold: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for (view_a, flip_a, view_b, flip_b) in probes {
        let da = unflip(detect_at(cfg, teacher, view_a, threshold)?, *flip_a, cfg.image_size);
        let db = unflip(detect_at(cfg, teacher, view_b, threshold)?, *flip_b, cfg.image_size);
        total += agreement(&da, &db);
    }
    Ok(total / probes.len() as f64)
}

/// Runs the estimator-consistency experiment. `pairs` must hold at least
/// two pairs (normally already burned in); they continue training in place
/// with the shared mean-teacher recipe while the four selectors are scored
/// at every window boundary.
pub fn dpc_consistency_experiment(
    det_cfg: &DetectorConfig,
    data: &SplitSet,
    pairs: &mut [PairState],
    cfg: &ConsistencyConfig,
) -> Result<ConsistencyReport> {
    cfg.validate()?;
    if pairs.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "consistency experiment: need at least 2 pairs, got {}",
            pairs.len()
        )));
    }
    if data.labeled.is_empty() || data.unlabeled.is_empty() {
        return Err(Error::InvalidConfig(
            "consistency experiment: need labeled and unlabeled samples".to_string(),
        ));
    }
    let n_pairs = pairs.len();
    let labeled_spec = AugmentationSpec::labeled(det_cfg.image_size);
    let weak_spec = AugmentationSpec::weak(det_cfg.image_size);
    let strong_spec = AugmentationSpec::strong(det_cfg.image_size);

    let mut picks = Vec::with_capacity(cfg.windows);
    let mut acc_ok = 0usize;
    let mut single_ok = 0usize;
    let mut stable_ok = 0usize;

    for window in 0..cfg.windows {
        let mut acc = vec![0.0; n_pairs];
        let mut oracle_acc = vec![0.0; n_pairs];
        let mut single = vec![0.0; n_pairs];

        for t in 1..=cfg.window_len {
            let iter = window as u64 * cfg.window_len + t;
            let lidx = labeled_batch_indices(
                data.labeled.len(),
                cfg.labeled_batch,
                cfg.master_seed,
                iter,
            );
            let labeled_views =
                build_labeled_views(&data.labeled, &lidx, &labeled_spec, cfg.master_seed, iter)?;
            let uidx = unlabeled_batch_indices(
                data.unlabeled.len(),
                cfg.unlabeled_batch,
                cfg.master_seed,
                iter,
            );
            let views = build_unlabeled_views(
                &data.unlabeled,
                &uidx,
                &weak_spec,
                &strong_spec,
                cfg.master_seed,
                iter,
            )?;
            let raw_unlabeled: Vec<&Sample> = uidx.iter().map(|&i| &data.unlabeled[i]).collect();
            let labeled_refs: Vec<&Sample> = labeled_views.iter().collect();

            for pair in pairs.iter_mut() {
                mean_teacher_step(pair, det_cfg, &labeled_views, &views, &cfg.hp)?;
            }
            // selector bookkeeping, all on post-step teachers
            for (i, pair) in pairs.iter().enumerate() {
                let labeled_loss = supervised_loss_value(det_cfg, &pair.teacher, &labeled_refs)?;
                acc[i] += labeled_loss;
                if t == cfg.window_len {
                    single[i] = labeled_loss;
                }
                oracle_acc[i] += harness_loss_value(det_cfg, &pair.teacher, &raw_unlabeled)?;
            }
        }

        // probe batch for the stability selector: shared views per window
        let mut probe_rng = stream(cfg.master_seed, StreamId::StabilityView, &[window as u64]);
        let pidx = rand::seq::index::sample(
            &mut probe_rng,
            data.unlabeled.len(),
            cfg.stability_batch.min(data.unlabeled.len()),
        )
        .into_vec();
        let probes: Vec<(Sample, bool, Sample, bool)> = pidx
            .iter()
            .map(|&i| {
                let s = &data.unlabeled[i];
                let fa = probe_rng.gen::<bool>();
                let fb = probe_rng.gen::<bool>();
                let va = if fa { flip_horizontal(s) } else { s.clone() };
                let vb = if fb { flip_horizontal(s) } else { s.clone() };
                (va, fa, vb, fb)
            })
            .collect();
        let stability: Vec<f64> = pairs
            .iter()
            .map(|p| stability_score(det_cfg, &p.teacher, &probes, cfg.hp.pseudo_threshold))
            .collect::<Result<_>>()?;

        let row = WindowPicks {
            window,
            oracle: argmin(&oracle_acc),
            accumulative: argmin(&acc),
            single_sample: argmin(&single),
            stable_sample: argmax(&stability),
        };
        if row.accumulative == row.oracle {
            acc_ok += 1;
        }
        if row.single_sample == row.oracle {
            single_ok += 1;
        }
        if row.stable_sample == row.oracle {
            stable_ok += 1;
        }
        picks.push(row);
    }

    Ok(ConsistencyReport {
        picks,
        windows: cfg.windows,
        accumulative_consistent: acc_ok,
        single_sample_consistent: single_ok,
        stable_sample_consistent: stable_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::config::DetectorConfig;
    use crate::numerics::optim::OptimConfig;
    use crate::ssod::burn_in;
    use crate::synthdata::generate::{generate_dataset, DatasetConfig};
    use crate::synthdata::types::BBox;

    fn small_setup() -> (DetectorConfig, SplitSet) {
        let cfg = DetectorConfig::for_image_size(32, 3, vec![4, 8]).unwrap();
        let data = generate_dataset(&DatasetConfig {
            image_size: 32,
            num_classes: 3,
            n_labeled: 6,
            n_unlabeled: 12,
            n_val: 1,
            master_seed: 3,
            ..DatasetConfig::default()
        })
        .unwrap();
        (cfg, data)
    }

    fn tiny_config() -> ConsistencyConfig {
        ConsistencyConfig {
            windows: 2,
            window_len: 3,
            labeled_batch: 2,
            unlabeled_batch: 2,
            stability_batch: 2,
            master_seed: 9,
            ..ConsistencyConfig::default()
        }
    }

    #[test]
    fn agreement_scores_are_sane() {
        let d = |x1: f64, class_id: usize, score: f64| Detection {
            bbox: BBox::new(x1, 4.0, x1 + 8.0, 12.0).unwrap(),
            class_id,
            score,
        };
        // empty sets never count as agreeing
        assert_eq!(agreement(&[], &[]), 0.0);
        assert_eq!(agreement(&[d(2.0, 0, 0.9)], &[]), 0.0);
        // identical predictions agree perfectly
        assert_eq!(agreement(&[d(2.0, 0, 0.9)], &[d(2.0, 0, 0.8)]), 1.0);
        // class mismatch blocks the match
        assert_eq!(agreement(&[d(2.0, 0, 0.9)], &[d(2.0, 1, 0.8)]), 0.0);
        // one of two matches -> 0.5
        assert_eq!(
            agreement(&[d(2.0, 0, 0.9), d(20.0, 0, 0.8)], &[d(2.0, 0, 0.7)]),
            0.5
        );
    }

    #[test]
    fn unflip_restores_original_frame() {
        let d = Detection {
            bbox: BBox::new(4.0, 6.0, 10.0, 14.0).unwrap(),
            class_id: 1,
            score: 0.9,
        };
        let undone = unflip(vec![d], true, 32);
        assert_eq!(undone[0].bbox.x1, 22.0);
        assert_eq!(undone[0].bbox.x2, 28.0);
        assert_eq!(undone[0].bbox.y1, 6.0);
        assert_eq!(undone[0].bbox.y2, 14.0);
    }

    #[test]
    fn identical_pairs_are_fully_consistent() {
        let (cfg, data) = small_setup();
        // same seed -> the pairs never diverge, every pick ties to index 0
        let mut pairs = vec![
            PairState::init(0, 7, &cfg).unwrap(),
            PairState::init(1, 7, &cfg).unwrap(),
        ];
        let report = dpc_consistency_experiment(&cfg, &data, &mut pairs, &tiny_config()).unwrap();
        assert_eq!(report.windows, 2);
        for p in &report.picks {
            assert_eq!(p.oracle, 0);
            assert_eq!(p.accumulative, 0);
            assert_eq!(p.single_sample, 0);
            assert_eq!(p.stable_sample, 0);
        }
        assert_eq!(report.accumulative_consistent, 2);
    }

    #[test]
    fn experiment_replays_bit_identically() {
        let (cfg, data) = small_setup();
        let run = || {
            let mut pairs = vec![
                PairState::init(0, 1, &cfg).unwrap(),
                PairState::init(1, 5, &cfg).unwrap(),
            ];
            dpc_consistency_experiment(&cfg, &data, &mut pairs, &tiny_config()).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.picks, b.picks);
    }

    #[test]
    fn trained_pair_beats_fresh_pair_on_loss_selectors() {
        let (cfg, data) = small_setup();
        let optim = OptimConfig { learning_rate: 0.01, momentum: 0.9, weight_decay: 1e-4 };
        let mut trained = PairState::init(0, 1, &cfg).unwrap();
        burn_in(&mut trained, &cfg, &data.labeled, &AugmentationSpec::labeled(32), &optim, 60, 6)
            .unwrap();
        let fresh = PairState::init(1, 5, &cfg).unwrap();
        let mut pairs = vec![trained, fresh];
        let report = dpc_consistency_experiment(
            &cfg,
            &data,
            &mut pairs,
            &ConsistencyConfig { windows: 1, window_len: 2, ..tiny_config() },
        )
        .unwrap();
        let p = &report.picks[0];
        assert_eq!(p.oracle, 0);
        assert_eq!(p.accumulative, 0);
        assert_eq!(p.single_sample, 0);
    }

    #[test]
    fn experiment_never_reads_unlabeled_truth_outside_harness() {
        let (cfg, data) = small_setup();
        data.guard().clear();
        let mut pairs = vec![
            PairState::init(0, 1, &cfg).unwrap(),
            PairState::init(1, 5, &cfg).unwrap(),
        ];
        dpc_consistency_experiment(&cfg, &data, &mut pairs, &tiny_config()).unwrap();
        assert!(data.guard().is_clean());
    }

    #[test]
    fn rejects_degenerate_setups() {
        let (cfg, data) = small_setup();
        let mut one = vec![PairState::init(0, 1, &cfg).unwrap()];
        assert!(dpc_consistency_experiment(&cfg, &data, &mut one, &tiny_config()).is_err());
        let mut pairs = vec![
            PairState::init(0, 1, &cfg).unwrap(),
            PairState::init(1, 5, &cfg).unwrap(),
        ];
        let bad = ConsistencyConfig { windows: 0, ..tiny_config() };
        assert!(dpc_consistency_experiment(&cfg, &data, &mut pairs, &bad).is_err());
    }
}
