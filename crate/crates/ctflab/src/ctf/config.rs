//! Configuration for multi-pair collaborative training.

use crate::error::{Error, Result};
use crate::numerics::optim::OptimConfig;

/// What happens to accumulated losses after a winner is selected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResetPolicy {
    /// Zero every pair's accumulated loss after each selection (default):
    /// each window judges only its own iterations.
    Reset,
    /// Let accumulated losses carry across windows, so selection weighs
    /// the whole history.
    Continue,
}

/// Which model of a pair the accumulated labeled loss is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representative {
    /// The averaged teacher (default): smoother, less batch noise.
    Teacher,
    /// The raw student.
    Student,
}

/// Hyperparameters for a collaborative run of several teacher-student
/// pairs with windowed winner selection.
#[derive(Debug, Clone, PartialEq)]
pub struct CtfConfig {
    /// Number of teacher-student pairs (at least 2).
    pub num_pairs: usize,
    /// Initialization seed per pair; length must equal `num_pairs`.
    /// Distinct seeds give the pairs distinct starting points.
    pub pair_seeds: Vec<u64>,
    /// Iterations per stage window (the "S" in the alternation).
    pub stage_length: u64,
    /// Total semi-supervised iterations to run.
    pub max_iter: u64,
    /// Weight of the pseudo-label loss.
    pub lambda_u: f64,
    /// Weight of the winner-guidance loss in stage 2.
    pub beta: f64,
    /// Teacher-keep fraction of the per-iteration EMA update.
    pub ema_rate: f64,
    /// Minimum teacher score for a detection to become a pseudo-label.
    pub pseudo_threshold: f64,
    pub reset_policy: ResetPolicy,
    pub representative: Representative,
    pub optim: OptimConfig,
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    /// Seed for batch composition and augmentation draws, shared by all
    /// pairs so they see identical data.
    pub master_seed: u64,
    /// Evaluate validation AP every this many iterations (0 = only at the
    /// end). The final iteration is always evaluated when validation data
    /// exists.
    pub eval_every: u64,
    /// When set, the runner snapshots the representative's parameters
    /// around every ledger accumulation and fails loudly if any bit
    /// changed. Costs one parameter copy per accumulation.
    pub verify_no_backprop: bool,
}

impl Default for CtfConfig {
    fn default() -> Self {
        CtfConfig {
            num_pairs: 2,
            pair_seeds: vec![1, 5],
            stage_length: 100,
            max_iter: 400,
            lambda_u: 2.0,
            beta: 2.0,
            ema_rate: 0.996,
            pseudo_threshold: 0.7,
            reset_policy: ResetPolicy::Reset,
            representative: Representative::Teacher,
            optim: OptimConfig { learning_rate: 0.01, momentum: 0.9, weight_decay: 1e-4 },
            labeled_batch: 4,
            unlabeled_batch: 4,
            master_seed: 0,
            eval_every: 0,
            verify_no_backprop: false,
        }
    }
}

impl CtfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_pairs < 2 {
            return Err(Error::InvalidConfig(format!(
                "collaboration needs at least 2 pairs, got {}",
                self.num_pairs
            )));
        }
        if self.pair_seeds.len() != self.num_pairs {
            return Err(Error::InvalidConfig(format!(
                "{} pair seeds for {} pairs",
                self.pair_seeds.len(),
                self.num_pairs
            )));
        }
        if self.stage_length == 0 {
            return Err(Error::InvalidConfig("stage_length must be at least 1".to_string()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".to_string()));
        }
        if !self.lambda_u.is_finite() || self.lambda_u < 0.0 {
            return Err(Error::InvalidConfig(format!("bad lambda_u {}", self.lambda_u)));
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(Error::InvalidConfig(format!("bad beta {}", self.beta)));
        }
        if !self.ema_rate.is_finite() || !(0.0..=1.0).contains(&self.ema_rate) {
            return Err(Error::InvalidConfig(format!("bad ema_rate {}", self.ema_rate)));
        }
        if !self.pseudo_threshold.is_finite()
            || self.pseudo_threshold <= 0.0
            || self.pseudo_threshold > 1.0
        {
            return Err(Error::InvalidConfig(format!(
                "bad pseudo_threshold {}",
                self.pseudo_threshold
            )));
        }
        if self.labeled_batch == 0 || self.unlabeled_batch == 0 {
            return Err(Error::InvalidConfig("batch sizes must be positive".to_string()));
        }
        self.optim.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let cfg = CtfConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.num_pairs, 2);
        assert_eq!(cfg.pair_seeds, vec![1, 5]);
        assert_eq!(cfg.stage_length, 100);
        assert_eq!(cfg.lambda_u, 2.0);
        assert_eq!(cfg.beta, 2.0);
        assert_eq!(cfg.ema_rate, 0.996);
        assert_eq!(cfg.pseudo_threshold, 0.7);
        assert_eq!(cfg.reset_policy, ResetPolicy::Reset);
        assert_eq!(cfg.representative, Representative::Teacher);
    }

    #[test]
    fn validation_rejects_degenerate_values() {
        let ok = CtfConfig::default;
        assert!(CtfConfig { num_pairs: 1, pair_seeds: vec![1], ..ok() }.validate().is_err());
        assert!(CtfConfig { pair_seeds: vec![1], ..ok() }.validate().is_err());
        assert!(CtfConfig { stage_length: 0, ..ok() }.validate().is_err());
        assert!(CtfConfig { max_iter: 0, ..ok() }.validate().is_err());
        assert!(CtfConfig { lambda_u: -1.0, ..ok() }.validate().is_err());
        assert!(CtfConfig { beta: f64::NAN, ..ok() }.validate().is_err());
        assert!(CtfConfig { ema_rate: 1.5, ..ok() }.validate().is_err());
        assert!(CtfConfig { pseudo_threshold: 0.0, ..ok() }.validate().is_err());
        assert!(CtfConfig { labeled_batch: 0, ..ok() }.validate().is_err());
    }
}
