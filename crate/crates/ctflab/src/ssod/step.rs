//! One Mean Teacher training iteration.

use std::collections::BTreeMap;

use crate::detector::config::DetectorConfig;
use crate::detector::loss::supervised_loss;
use crate::error::Result;
use crate::numerics::optim::{sgd_step, OptimConfig};
use crate::numerics::params::collect_grads;
use crate::numerics::tape::{Tape, Var};
use crate::ssod::loss::{total_loss, unlabeled_loss};
use crate::ssod::pair::{ema_update, PairState};
use crate::ssod::pseudo::generate_pseudo_labels;
use crate::ssod::views::UnlabeledViews;
use crate::synthdata::types::Sample;

/// Hyperparameters of semi-supervised training shared by every pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MtHyper {
    pub optim: OptimConfig,
    /// Weight of the unlabeled loss in the total objective.
    pub lambda_u: f64,
    /// Fraction of the old teacher kept per EMA update.
    pub ema_rate: f64,
    /// Confidence cutoff for pseudo-labels.
    pub pseudo_threshold: f64,
}

impl Default for MtHyper {
    fn default() -> Self {
        MtHyper {
            optim: OptimConfig { learning_rate: 0.01, momentum: 0.9, weight_decay: 1e-4 },
            lambda_u: 2.0,
            ema_rate: 0.996,
            pseudo_threshold: 0.7,
        }
    }
}

impl MtHyper {
    pub fn validate(&self) -> Result<()> {
        self.optim.validate()?;
        if !self.lambda_u.is_finite() || self.lambda_u < 0.0 {
            return Err(crate::error::Error::InvalidConfig(format!(
                "lambda_u must be finite and non-negative, got {}",
                self.lambda_u
            )));
        }
        if !self.ema_rate.is_finite() || !(0.0..=1.0).contains(&self.ema_rate) {
            return Err(crate::error::Error::InvalidConfig(format!(
                "ema_rate must be in [0,1], got {}",
                self.ema_rate
            )));
        }
        if !self.pseudo_threshold.is_finite()
            || self.pseudo_threshold <= 0.0
            || self.pseudo_threshold > 1.0
        {
            return Err(crate::error::Error::InvalidConfig(format!(
                "pseudo_threshold must be in (0,1], got {}",
                self.pseudo_threshold
            )));
        }
        Ok(())
    }
}

/// Loss values observed during one training step, recorded before the
/// parameter update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub labeled_loss: f64,
    pub unlabeled_loss: f64,
    pub total_loss: f64,
    /// Pseudo-boxes the teacher produced on the weak views (before the
    /// strong geometric transfer).
    pub pseudo_boxes: usize,
}

/// Applies one student update from an assembled total loss: backward pass,
/// SGD step on the student, EMA update of the teacher, iteration count.
/// Callers build the loss however the current training phase requires.
pub fn apply_student_update<'t>(
    pair: &mut PairState,
    tape: &'t Tape,
    vars: &BTreeMap<String, Var<'t>>,
    total: Var<'t>,
    optim: &OptimConfig,
    ema_rate: f64,
) -> Result<()> {
    let grads = collect_grads(tape, total, vars)?;
    sgd_step(&mut pair.student, &grads, optim)?;
    ema_update(pair, ema_rate)?;
    pair.iteration += 1;
    Ok(())
}

/// One plain Mean Teacher iteration for one pair: the teacher pseudo-labels
/// the weak views, the student takes a gradient step on
/// `L_l + lambda_u · L_u` over the labeled views and strong views, and the
/// teacher EMA-follows the updated student.
pub fn mean_teacher_step(
    pair: &mut PairState,
    cfg: &DetectorConfig,
    labeled_views: &[Sample],
    views: &UnlabeledViews,
    hp: &MtHyper,
) -> Result<StepOutcome> {
    hp.validate()?;
    let pseudo =
        generate_pseudo_labels(cfg, &pair.teacher, &views.weak, hp.pseudo_threshold, pair.pair_id)?;
    let tape = Tape::new();
    let vars = pair.student.lease(&tape)?;
    let refs: Vec<&Sample> = labeled_views.iter().collect();
    let l_l = supervised_loss(cfg, &tape, &vars, &refs)?;
    let l_u = unlabeled_loss(cfg, &tape, &vars, &views.strong, &views.strong_geoms, &pseudo)?;
    let total = total_loss(l_l, l_u, hp.lambda_u)?;
    let outcome = StepOutcome {
        labeled_loss: l_l.item()?,
        unlabeled_loss: l_u.item()?,
        total_loss: total.item()?,
        pseudo_boxes: pseudo.num_boxes(),
    };
    apply_student_update(pair, &tape, &vars, total, &hp.optim, hp.ema_rate)?;
    Ok(outcome)
}
