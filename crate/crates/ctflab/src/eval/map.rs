//! Average-precision evaluation with deterministic tie-breaking.

use crate::detector::config::DetectorConfig;
use crate::detector::decode::{decode, Detection, NMS_IOU};
use crate::detector::model::forward;
use crate::error::{Error, Result};
use crate::numerics::params::ParamSet;
use crate::numerics::tape::Tape;
use crate::synthdata::types::{Annotation, Sample};

/// Score cutoff used when decoding for evaluation: low enough to keep the
/// full precision-recall curve.
pub const EVAL_SCORE_THRESHOLD: f64 = 0.001;

/// One evaluated image: its stable identity, the model's detections, and
/// the ground truth.
#[derive(Debug, Clone)]
pub struct EvalScene {
    pub image_id: u64,
    pub detections: Vec<Detection>,
    pub truths: Vec<Annotation>,
}

/// Per-class, per-threshold average precision plus the overall mean.
#[derive(Debug, Clone)]
pub struct ApReport {
    /// IoU thresholds evaluated, in input order.
    pub thresholds: Vec<f64>,
    /// Classes with at least one ground-truth box, ascending.
    pub classes: Vec<usize>,
    /// `per_class[c][t]` = AP of `classes[c]` at `thresholds[t]`.
    pub per_class: Vec<Vec<f64>>,
    /// Arithmetic mean over present classes and thresholds; 0 when no
    /// ground truth exists.
    pub mean: f64,
}

/// The ten IoU thresholds 0.50, 0.55, …, 0.95.
pub fn ap50_95_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// Canonical detection order: score descending, then box coordinates, then
/// original index. Within one image this fixes the matching order; combined
/// with the image id it fixes the global precision-recall order, making the
/// result independent of input permutations.
fn canonical_order(dets: &[&Detection]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    idx.sort_by(|&a, &b| {
        let (x, y) = (dets[a], dets[b]);
        y.score
            .partial_cmp(&x.score)
            .expect("finite scores")
            .then(x.bbox.x1.partial_cmp(&y.bbox.x1).expect("finite"))
            .then(x.bbox.y1.partial_cmp(&y.bbox.y1).expect("finite"))
            .then(x.bbox.x2.partial_cmp(&y.bbox.x2).expect("finite"))
            .then(x.bbox.y2.partial_cmp(&y.bbox.y2).expect("finite"))
            .then(a.cmp(&b))
    });
    idx
}

/// Greedy matching of one image's class-`c` detections (already in
/// canonical order) against its ground truth: each detection takes the
/// unmatched truth with the highest IoU that clears the threshold (ties by
/// lower truth index); each truth matches at most once.
fn greedy_match(dets: &[&Detection], truths: &[&Annotation], tau: f64) -> Vec<bool> {
    let mut used = vec![false; truths.len()];
    dets.iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (gi, g) in truths.iter().enumerate() {
                if used[gi] {
                    continue;
                }
                let iou = d.bbox.iou(&g.bbox);
                if iou >= tau && best.map_or(true, |(_, bi)| iou > bi) {
                    best = Some((gi, iou));
                }
            }
            match best {
                Some((gi, _)) => {
                    used[gi] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// All-points interpolated average precision from a globally ordered
/// true-positive sequence.
fn average_precision(tp: &[bool], total_gt: usize) -> f64 {
    if total_gt == 0 || tp.is_empty() {
        return 0.0;
    }
    let n = tp.len();
    let mut precision = Vec::with_capacity(n);
    let mut recall = Vec::with_capacity(n);
    let mut tp_cum = 0usize;
    for (k, &hit) in tp.iter().enumerate() {
        if hit {
            tp_cum += 1;
        }
        precision.push(tp_cum as f64 / (k + 1) as f64);
        recall.push(tp_cum as f64 / total_gt as f64);
    }
    // precision envelope from the right, then sum recall increments
    let mut envelope = vec![0.0; n];
    let mut env = 0.0_f64;
    for k in (0..n).rev() {
        env = env.max(precision[k]);
        envelope[k] = env;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for k in 0..n {
        if recall[k] > prev_recall {
            ap += (recall[k] - prev_recall) * envelope[k];
            prev_recall = recall[k];
        }
    }
    ap
}

/// Standard average precision over IoU thresholds: detections are matched
/// greedily by descending score per image, the precision-recall curve is
/// integrated with all-points interpolation, and the mean runs over the
/// classes present in ground truth. Deterministic and invariant to the
/// order of scenes and of detections within a scene.
pub fn compute_map(scenes: &[EvalScene], thresholds: &[f64]) -> Result<ApReport> {
    if thresholds.is_empty() {
        return Err(Error::InvalidConfig("compute_map: no IoU thresholds".to_string()));
    }
    for &t in thresholds {
        if !t.is_finite() || t <= 0.0 || t > 1.0 {
            return Err(Error::InvalidConfig(format!("compute_map: bad IoU threshold {t}")));
        }
    }
    // stable scene order by image id (input order must not matter)
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    order.sort_by_key(|&i| scenes[i].image_id);

    let mut classes: Vec<usize> =
        scenes.iter().flat_map(|s| s.truths.iter().map(|a| a.class_id)).collect();
    classes.sort_unstable();
    classes.dedup();

    let mut per_class = Vec::with_capacity(classes.len());
    for &class in &classes {
        let total_gt: usize = scenes
            .iter()
            .map(|s| s.truths.iter().filter(|a| a.class_id == class).count())
            .sum();
        let mut class_aps = Vec::with_capacity(thresholds.len());
        for &tau in thresholds {
            // match per image, then merge by (score desc, image id, coords,
            // within-image rank) for one global precision-recall curve
            let mut flat: Vec<(&Detection, u64, usize, bool)> = Vec::new();
            for &si in &order {
                let scene = &scenes[si];
                let dets: Vec<&Detection> =
                    scene.detections.iter().filter(|d| d.class_id == class).collect();
                let truths: Vec<&Annotation> =
                    scene.truths.iter().filter(|a| a.class_id == class).collect();
                let ord = canonical_order(&dets);
                let ordered: Vec<&Detection> = ord.iter().map(|&i| dets[i]).collect();
                let hits = greedy_match(&ordered, &truths, tau);
                for (rank, (&d, &hit)) in ordered.iter().zip(hits.iter()).enumerate() {
                    flat.push((d, scene.image_id, rank, hit));
                }
            }
            flat.sort_by(|a, b| {
                b.0.score
                    .partial_cmp(&a.0.score)
                    .expect("finite scores")
                    .then(a.1.cmp(&b.1))
                    .then(a.0.bbox.x1.partial_cmp(&b.0.bbox.x1).expect("finite"))
                    .then(a.0.bbox.y1.partial_cmp(&b.0.bbox.y1).expect("finite"))
                    .then(a.0.bbox.x2.partial_cmp(&b.0.bbox.x2).expect("finite"))
                    .then(a.0.bbox.y2.partial_cmp(&b.0.bbox.y2).expect("finite"))
                    .then(a.2.cmp(&b.2))
            });
            let tp: Vec<bool> = flat.iter().map(|row| row.3).collect();
            class_aps.push(average_precision(&tp, total_gt));
        }
        per_class.push(class_aps);
    }

    let mean = if per_class.is_empty() {
        0.0
    } else {
        let total: f64 = per_class.iter().flat_map(|row| row.iter()).sum();
        total / (per_class.len() * thresholds.len()) as f64
    };
    Ok(ApReport { thresholds: thresholds.to_vec(), classes, per_class, mean })
}

/// Runs the model on one sample and decodes detections for evaluation.
pub fn detect(cfg: &DetectorConfig, params: &ParamSet, sample: &Sample) -> Result<Vec<Detection>> {
    let tape = Tape::new();
    let vars = params.lease(&tape)?;
    let raw = forward(cfg, &tape, &vars, sample.image())?;
    decode(cfg, &raw.value(), EVAL_SCORE_THRESHOLD, NMS_IOU)
}

/// Builds evaluation scenes for a model over a sample set. Ground truth is
/// read through the harness accessor, so evaluating on unlabeled samples
/// does not count as a training-side access.
pub fn scenes_for_model(
    cfg: &DetectorConfig,
    params: &ParamSet,
    samples: &[Sample],
) -> Result<Vec<EvalScene>> {
    samples
        .iter()
        .map(|s| {
            Ok(EvalScene {
                image_id: s.id(),
                detections: detect(cfg, params, s)?,
                truths: s.annotations_for_harness().to_vec(),
            })
        })
        .collect()
}

/// Mean AP over the ten 0.50–0.95 IoU thresholds for a model on a sample
/// set.
pub fn mean_ap50_95(cfg: &DetectorConfig, params: &ParamSet, samples: &[Sample]) -> Result<f64> {
    let scenes = scenes_for_model(cfg, params, samples)?;
    Ok(compute_map(&scenes, &ap50_95_thresholds())?.mean)
}
