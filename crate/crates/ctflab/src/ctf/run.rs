//! The collaborative training loop: alternating windows of independent
//! mean-teacher training and winner-guided training, with a matching
//! single-pair baseline.

use serde::{Deserialize, Serialize};

use crate::ctf::config::{CtfConfig, Representative};
use crate::ctf::ledger::DpcoLedger;
use crate::ctf::schedule::{closes_stage1_window, opens_stage1_window, phase_of, Phase};
use crate::ctf::stage2::stage2_student_loss;
use crate::detector::config::DetectorConfig;
use crate::error::{Error, Result};
use crate::eval::mean_ap50_95;
use crate::numerics::tape::Tape;
use crate::ssod::{
    apply_student_update, build_labeled_views, build_unlabeled_views, generate_pseudo_labels,
    labeled_batch_indices, mean_teacher_step, unlabeled_batch_indices, MtHyper, PairState,
};
use crate::synthdata::augment::AugmentationSpec;
use crate::synthdata::generate::SplitSet;
use crate::synthdata::types::Sample;

/// One line of the training log: losses, ledger state, winner in effect,
/// and weight-space distances for one pair at one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iter: u64,
    pub phase: String,
    pub pair_id: usize,
    pub l_l: f64,
    pub l_u: f64,
    pub l_dpc: f64,
    pub l_acc: f64,
    pub winner_k: Option<usize>,
    pub inter_pair_distance: f64,
    pub intra_pair_distance: f64,
}

/// Validation AP of one pair's teacher at one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub iter: u64,
    pub pair_id: usize,
    pub val_ap: f64,
}

/// One winner selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WinnerDecision {
    pub iter: u64,
    pub winner: usize,
}

/// Everything the loop needs to continue a run: the pairs, the ledger,
/// how many iterations completed, and the winner currently in effect.
#[derive(Debug, Clone)]
pub struct CtfState {
    pub pairs: Vec<PairState>,
    pub ledger: DpcoLedger,
    pub iteration: u64,
    pub winner: Option<usize>,
}

impl CtfState {
    /// Fresh state with newly initialized pairs, one per configured seed.
    /// Burn the pairs in on labeled data before running the loop.
    pub fn new(cfg: &CtfConfig, det_cfg: &DetectorConfig) -> Result<Self> {
        cfg.validate()?;
        let pairs = cfg
            .pair_seeds
            .iter()
            .enumerate()
            .map(|(i, &seed)| PairState::init(i, seed, det_cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(CtfState {
            pairs,
            ledger: DpcoLedger::new(cfg.num_pairs, cfg.reset_policy)?,
            iteration: 0,
            winner: None,
        })
    }
}

/// Collected results of (the continued portion of) a collaborative run.
#[derive(Debug, Clone, Default)]
pub struct CtfRunOutput {
    pub metrics: Vec<MetricsRecord>,
    pub eval_points: Vec<EvalPoint>,
    pub winner_history: Vec<WinnerDecision>,
    /// Number of ledger accumulations verified bit-stable (only counted
    /// when the config asks for verification).
    pub no_backprop_checks: u64,
}

fn check_run_inputs(cfg: &CtfConfig, data: &SplitSet) -> Result<()> {
    if data.labeled.is_empty() || data.unlabeled.is_empty() {
        return Err(Error::InvalidConfig(
            "training needs labeled and unlabeled samples".to_string(),
        ));
    }
    if cfg.eval_every > 0 && data.validation.is_empty() {
        return Err(Error::InvalidConfig(
            "eval_every is set but there is no validation split".to_string(),
        ));
    }
    Ok(())
}

fn hyper_of(cfg: &CtfConfig) -> MtHyper {
    MtHyper {
        optim: cfg.optim.clone(),
        lambda_u: cfg.lambda_u,
        ema_rate: cfg.ema_rate,
        pseudo_threshold: cfg.pseudo_threshold,
    }
}

/// Runs the collaborative loop from `state.iteration` up to
/// `cfg.max_iter`, mutating `state` in place. Each iteration emits one
/// metrics record per pair, in pair order, to both the returned output
/// and the `on_record` sink (for streaming logs). Resuming a run from a
/// restored state reproduces exactly the records a straight run would
/// have produced from that point.
pub fn run_ctf(
    cfg: &CtfConfig,
    det_cfg: &DetectorConfig,
    data: &SplitSet,
    state: &mut CtfState,
    on_record: impl FnMut(&MetricsRecord) -> Result<()>,
) -> Result<CtfRunOutput> {
    run_ctf_span(cfg, det_cfg, data, state, None, on_record)
}

/// Like [`run_ctf`] but pauses after iteration `pause_at` instead of
/// running to the full budget. Pausing is invisible to the schedule: the
/// end-of-budget winner selection and forced final evaluation still key
/// off `cfg.max_iter`, so checkpointing at `pause_at` and resuming later
/// reproduces a straight run exactly. `pause_at` must not exceed
/// `cfg.max_iter`; a `pause_at` at or below the state's iteration runs
/// nothing.
pub fn run_ctf_until(
    cfg: &CtfConfig,
    det_cfg: &DetectorConfig,
    data: &SplitSet,
    state: &mut CtfState,
    pause_at: u64,
    on_record: impl FnMut(&MetricsRecord) -> Result<()>,
) -> Result<CtfRunOutput> {
    run_ctf_span(cfg, det_cfg, data, state, Some(pause_at), on_record)
}

fn run_ctf_span(
    cfg: &CtfConfig,
    det_cfg: &DetectorConfig,
    data: &SplitSet,
    state: &mut CtfState,
    pause_at: Option<u64>,
    mut on_record: impl FnMut(&MetricsRecord) -> Result<()>,
) -> Result<CtfRunOutput> {
    cfg.validate()?;
    check_run_inputs(cfg, data)?;
    if state.pairs.len() != cfg.num_pairs || state.ledger.num_pairs() != cfg.num_pairs {
        return Err(Error::InvalidConfig(format!(
            "state holds {} pairs and a {}-pair ledger, config wants {}",
            state.pairs.len(),
            state.ledger.num_pairs(),
            cfg.num_pairs
        )));
    }
    if state.iteration > cfg.max_iter {
        return Err(Error::InvalidConfig(format!(
            "state is at iteration {}, beyond max_iter {}",
            state.iteration, cfg.max_iter
        )));
    }
    let last = match pause_at {
        Some(p) if p > cfg.max_iter => {
            return Err(Error::InvalidConfig(format!(
                "pause_at {p} is beyond max_iter {}",
                cfg.max_iter
            )))
        }
        Some(p) => p,
        None => cfg.max_iter,
    };
    let labeled_spec = AugmentationSpec::labeled(det_cfg.image_size);
    let weak_spec = AugmentationSpec::weak(det_cfg.image_size);
    let strong_spec = AugmentationSpec::strong(det_cfg.image_size);
    let hp = hyper_of(cfg);
    let mut out = CtfRunOutput::default();

    for t in (state.iteration + 1)..=last {
        let phase = phase_of(t, cfg.stage_length);
        if opens_stage1_window(t, cfg.stage_length) {
            state.winner = None;
            state.ledger.window_start = t;
        }
        if phase == Phase::Stage2 && state.winner.is_none() {
            return Err(Error::Domain {
                op: "run_ctf",
                detail: format!("stage 2 at iteration {t} with no winner selected"),
            });
        }

        // all pairs share the same batches and augmentation draws; stage 2
        // replays the unlabeled indices of the preceding stage-1 window
        let lidx =
            labeled_batch_indices(data.labeled.len(), cfg.labeled_batch, cfg.master_seed, t);
        let labeled_views =
            build_labeled_views(&data.labeled, &lidx, &labeled_spec, cfg.master_seed, t)?;
        let u_iter = match phase {
            Phase::Stage1 => t,
            Phase::Stage2 => t - cfg.stage_length,
        };
        let uidx = unlabeled_batch_indices(
            data.unlabeled.len(),
            cfg.unlabeled_batch,
            cfg.master_seed,
            u_iter,
        );
        let views = build_unlabeled_views(
            &data.unlabeled,
            &uidx,
            &weak_spec,
            &strong_spec,
            cfg.master_seed,
            t,
        )?;
        let labeled_refs: Vec<&Sample> = labeled_views.iter().collect();

        let mut losses: Vec<(f64, f64, f64)> = Vec::with_capacity(cfg.num_pairs);
        match phase {
            Phase::Stage1 => {
                for pair in state.pairs.iter_mut() {
                    let o = mean_teacher_step(pair, det_cfg, &labeled_views, &views, &hp)?;
                    losses.push((o.labeled_loss, o.unlabeled_loss, 0.0));
                }
                for i in 0..cfg.num_pairs {
                    let rep = match cfg.representative {
                        Representative::Teacher => &state.pairs[i].teacher,
                        Representative::Student => &state.pairs[i].student,
                    };
                    let before = cfg.verify_no_backprop.then(|| rep.clone());
                    state.ledger.accumulate(i, phase, det_cfg, rep, &labeled_refs)?;
                    if let Some(b) = before {
                        if !rep.values_bit_equal(&b) {
                            return Err(Error::Domain {
                                op: "run_ctf",
                                detail: format!(
                                    "ledger accumulation changed pair {i} parameters at iteration {t}"
                                ),
                            });
                        }
                        out.no_backprop_checks += 1;
                    }
                }
            }
            Phase::Stage2 => {
                let k = state.winner.expect("winner checked above");
                // a per-iteration snapshot of the winner teacher guides
                // every other pair, so update order cannot matter
                let winner_teacher = state.pairs[k].teacher.clone();
                let tilde = generate_pseudo_labels(
                    det_cfg,
                    &winner_teacher,
                    &views.weak,
                    cfg.pseudo_threshold,
                    k,
                )?;
                for i in 0..cfg.num_pairs {
                    if i == k {
                        let o = mean_teacher_step(
                            &mut state.pairs[i],
                            det_cfg,
                            &labeled_views,
                            &views,
                            &hp,
                        )?;
                        losses.push((o.labeled_loss, o.unlabeled_loss, 0.0));
                    } else {
                        let own = generate_pseudo_labels(
                            det_cfg,
                            &state.pairs[i].teacher,
                            &views.weak,
                            cfg.pseudo_threshold,
                            i,
                        )?;
                        let tape = Tape::new();
                        let vars = state.pairs[i].student.lease(&tape)?;
                        let (total, parts) = stage2_student_loss(
                            det_cfg,
                            &tape,
                            &vars,
                            &labeled_views,
                            &views,
                            &own,
                            &tilde,
                            cfg.lambda_u,
                            cfg.beta,
                        )?;
                        apply_student_update(
                            &mut state.pairs[i],
                            &tape,
                            &vars,
                            total,
                            &cfg.optim,
                            cfg.ema_rate,
                        )?;
                        losses.push((parts.labeled, parts.unlabeled, parts.dpc));
                    }
                }
            }
        }

        // the totals as used for selection, before any reset
        let l_acc: Vec<f64> = state.ledger.totals().to_vec();
        if phase == Phase::Stage1
            && (closes_stage1_window(t, cfg.stage_length) || t == cfg.max_iter)
        {
            let k = state.ledger.select_winner()?;
            state.winner = Some(k);
            out.winner_history.push(WinnerDecision { iter: t, winner: k });
        }

        for i in 0..cfg.num_pairs {
            let mut inter = 0.0;
            for j in 0..cfg.num_pairs {
                if j != i {
                    inter += state.pairs[i].teacher.l2_distance(&state.pairs[j].teacher)?;
                }
            }
            inter /= (cfg.num_pairs - 1) as f64;
            let intra = state.pairs[i].teacher.l2_distance(&state.pairs[i].student)?;
            let record = MetricsRecord {
                iter: t,
                phase: phase.as_str().to_string(),
                pair_id: i,
                l_l: losses[i].0,
                l_u: losses[i].1,
                l_dpc: losses[i].2,
                l_acc: l_acc[i],
                winner_k: state.winner,
                inter_pair_distance: inter,
                intra_pair_distance: intra,
            };
            on_record(&record)?;
            out.metrics.push(record);
        }

        if should_eval(cfg, data, t) {
            for (i, pair) in state.pairs.iter().enumerate() {
                let ap = mean_ap50_95(det_cfg, &pair.teacher, &data.validation)?;
                out.eval_points.push(EvalPoint { iter: t, pair_id: i, val_ap: ap });
            }
        }
        state.iteration = t;
    }
    Ok(out)
}

fn should_eval(cfg: &CtfConfig, data: &SplitSet, t: u64) -> bool {
    !data.validation.is_empty()
        && ((cfg.eval_every > 0 && t % cfg.eval_every == 0) || t == cfg.max_iter)
}

/// Results of a single-pair baseline run.
#[derive(Debug, Clone, Default)]
pub struct MtRunOutput {
    pub metrics: Vec<MetricsRecord>,
    pub eval_points: Vec<EvalPoint>,
}

/// Trains one pair with the plain mean-teacher recipe under exactly the
/// budget of a collaborative run: same master seed, same batch and view
/// streams, same stage-aligned unlabeled replay, same iteration count —
/// only the ledger, winner selection, and guidance term are absent. This
/// is the control arm for measuring what collaboration adds.
pub fn run_mean_teacher(
    cfg: &CtfConfig,
    det_cfg: &DetectorConfig,
    data: &SplitSet,
    pair: &mut PairState,
    mut on_record: impl FnMut(&MetricsRecord) -> Result<()>,
) -> Result<MtRunOutput> {
    cfg.validate()?;
    check_run_inputs(cfg, data)?;
    if pair.iteration > cfg.max_iter {
        return Err(Error::InvalidConfig(format!(
            "pair is at iteration {}, beyond max_iter {}",
            pair.iteration, cfg.max_iter
        )));
    }
    let labeled_spec = AugmentationSpec::labeled(det_cfg.image_size);
    let weak_spec = AugmentationSpec::weak(det_cfg.image_size);
    let strong_spec = AugmentationSpec::strong(det_cfg.image_size);
    let hp = hyper_of(cfg);
    let mut out = MtRunOutput::default();

    for t in (pair.iteration + 1)..=cfg.max_iter {
        let phase = phase_of(t, cfg.stage_length);
        let lidx =
            labeled_batch_indices(data.labeled.len(), cfg.labeled_batch, cfg.master_seed, t);
        let labeled_views =
            build_labeled_views(&data.labeled, &lidx, &labeled_spec, cfg.master_seed, t)?;
        let u_iter = match phase {
            Phase::Stage1 => t,
            Phase::Stage2 => t - cfg.stage_length,
        };
        let uidx = unlabeled_batch_indices(
            data.unlabeled.len(),
            cfg.unlabeled_batch,
            cfg.master_seed,
            u_iter,
        );
        let views = build_unlabeled_views(
            &data.unlabeled,
            &uidx,
            &weak_spec,
            &strong_spec,
            cfg.master_seed,
            t,
        )?;
        let o = mean_teacher_step(pair, det_cfg, &labeled_views, &views, &hp)?;
        let record = MetricsRecord {
            iter: t,
            phase: phase.as_str().to_string(),
            pair_id: pair.pair_id,
            l_l: o.labeled_loss,
            l_u: o.unlabeled_loss,
            l_dpc: 0.0,
            l_acc: 0.0,
            winner_k: None,
            inter_pair_distance: 0.0,
            intra_pair_distance: pair.teacher.l2_distance(&pair.student)?,
        };
        on_record(&record)?;
        out.metrics.push(record);
        if should_eval(cfg, data, t) {
            let ap = mean_ap50_95(det_cfg, &pair.teacher, &data.validation)?;
            out.eval_points.push(EvalPoint { iter: t, pair_id: pair.pair_id, val_ap: ap });
        }
    }
    Ok(out)
}

/// Picks the deployment model: the pair whose teacher scores the highest
/// validation AP (ties go to the lower index). Returns the pair index and
/// its AP.
pub fn best_teacher_for_inference(
    det_cfg: &DetectorConfig,
    pairs: &[PairState],
    validation: &[Sample],
) -> Result<(usize, f64)> {
    if pairs.is_empty() {
        return Err(Error::InvalidConfig("best_teacher_for_inference: no pairs".to_string()));
    }
    if validation.is_empty() {
        return Err(Error::InvalidConfig(
            "best_teacher_for_inference: empty validation split".to_string(),
        ));
    }
    let mut best = 0usize;
    let mut best_ap = f64::NEG_INFINITY;
    for (i, pair) in pairs.iter().enumerate() {
        let ap = mean_ap50_95(det_cfg, &pair.teacher, validation)?;
        if ap > best_ap {
            best = i;
            best_ap = ap;
        }
    }
    Ok((best, best_ap))
}
