//! Accumulated labeled losses and winner selection.
//!
//! During stage 1 every pair's representative model is scored on the same
//! labeled batch each iteration, and the scores are summed per pair — a
//! pure bookkeeping sum with no gradient involvement. At the end of the
//! window the pair with the smallest sum becomes the winner that guides
//! the others through stage 2.

use crate::ctf::config::ResetPolicy;
use crate::ctf::schedule::Phase;
use crate::detector::config::DetectorConfig;
use crate::detector::loss::supervised_loss_value;
use crate::error::{Error, Result};
use crate::numerics::params::ParamSet;
use crate::synthdata::types::Sample;

/// Per-pair accumulated labeled loss over the current selection window.
#[derive(Debug, Clone, PartialEq)]
pub struct DpcoLedger {
    totals: Vec<f64>,
    reset_policy: ResetPolicy,
    /// First iteration of the accumulation window now in progress
    /// (bookkeeping only; selection uses the totals).
    pub window_start: u64,
}

impl DpcoLedger {
    pub fn new(num_pairs: usize, reset_policy: ResetPolicy) -> Result<Self> {
        if num_pairs == 0 {
            return Err(Error::InvalidConfig("ledger needs at least one pair".to_string()));
        }
        Ok(DpcoLedger { totals: vec![0.0; num_pairs], reset_policy, window_start: 1 })
    }

    pub fn num_pairs(&self) -> usize {
        self.totals.len()
    }

    pub fn totals(&self) -> &[f64] {
        &self.totals
    }

    pub fn reset_policy(&self) -> ResetPolicy {
        self.reset_policy
    }

    /// Restores a ledger from checkpointed parts.
    pub fn from_parts(totals: Vec<f64>, reset_policy: ResetPolicy, window_start: u64) -> Result<Self> {
        if totals.is_empty() {
            return Err(Error::InvalidConfig("ledger needs at least one pair".to_string()));
        }
        for &v in &totals {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Domain {
                    op: "DpcoLedger::from_parts",
                    detail: format!("bad accumulated loss {v}"),
                });
            }
        }
        Ok(DpcoLedger { totals, reset_policy, window_start })
    }

    /// Adds one pre-computed loss value to a pair's total. Only legal in
    /// stage 1; losses must be finite and non-negative.
    pub fn add_value(&mut self, pair: usize, value: f64, phase: Phase) -> Result<()> {
        if phase != Phase::Stage1 {
            return Err(Error::Domain {
                op: "DpcoLedger::accumulate",
                detail: "accumulation is only allowed during stage 1".to_string(),
            });
        }
        if pair >= self.totals.len() {
            return Err(Error::Domain {
                op: "DpcoLedger::accumulate",
                detail: format!("pair {pair} out of range 0..{}", self.totals.len()),
            });
        }
        if !value.is_finite() || value < 0.0 {
            return Err(Error::Domain {
                op: "DpcoLedger::accumulate",
                detail: format!("loss must be finite and non-negative, got {value}"),
            });
        }
        self.totals[pair] += value;
        Ok(())
    }

    /// Scores `representative` on the labeled batch — evaluation only, no
    /// gradients, so the parameters are untouched — and adds the loss to
    /// the pair's running total. Every pair must be scored on the same
    /// batch within an iteration for the totals to be comparable. Returns
    /// the loss value added.
    pub fn accumulate(
        &mut self,
        pair: usize,
        phase: Phase,
        cfg: &DetectorConfig,
        representative: &ParamSet,
        batch: &[&Sample],
    ) -> Result<f64> {
        let value = supervised_loss_value(cfg, representative, batch)?;
        self.add_value(pair, value, phase)?;
        Ok(value)
    }

    /// Picks the pair with the smallest accumulated loss (ties go to the
    /// lower index), then applies the reset policy to the totals.
    pub fn select_winner(&mut self) -> Result<usize> {
        if self.totals.is_empty() {
            return Err(Error::InvalidConfig("select_winner: empty ledger".to_string()));
        }
        let mut winner = 0;
        for (i, &v) in self.totals.iter().enumerate().skip(1) {
            if v < self.totals[winner] {
                winner = i;
            }
        }
        if self.reset_policy == ResetPolicy::Reset {
            self.totals.iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(winner)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::model::init_params;
    use crate::rng::{stream, StreamId};
    use crate::synthdata::generate::{generate_dataset, DatasetConfig};
    use rand::Rng;

    #[test]
    fn worked_selection_examples() {
        let mut ledger = DpcoLedger::new(2, ResetPolicy::Reset).unwrap();
        ledger.add_value(0, 2.0, Phase::Stage1).unwrap();
        ledger.add_value(1, 1.5, Phase::Stage1).unwrap();
        assert_eq!(ledger.select_winner().unwrap(), 1);

        // exact tie goes to the lower index
        ledger.add_value(0, 1.0, Phase::Stage1).unwrap();
        ledger.add_value(1, 1.0, Phase::Stage1).unwrap();
        assert_eq!(ledger.select_winner().unwrap(), 0);
    }

    #[test]
    fn accumulation_is_stage1_only() {
        let mut ledger = DpcoLedger::new(2, ResetPolicy::Reset).unwrap();
        let err = ledger.add_value(0, 1.0, Phase::Stage2).unwrap_err();
        assert!(err.to_string().contains("stage 1"));
        assert_eq!(ledger.totals(), &[0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_values_and_indices() {
        let mut ledger = DpcoLedger::new(2, ResetPolicy::Reset).unwrap();
        assert!(ledger.add_value(2, 1.0, Phase::Stage1).is_err());
        assert!(ledger.add_value(0, f64::NAN, Phase::Stage1).is_err());
        assert!(ledger.add_value(0, -0.5, Phase::Stage1).is_err());
        assert!(DpcoLedger::new(0, ResetPolicy::Reset).is_err());
    }

    #[test]
    fn reset_policy_zeroes_continue_keeps() {
        let mut reset = DpcoLedger::new(2, ResetPolicy::Reset).unwrap();
        reset.add_value(0, 3.0, Phase::Stage1).unwrap();
        reset.add_value(1, 4.0, Phase::Stage1).unwrap();
        assert_eq!(reset.select_winner().unwrap(), 0);
        assert_eq!(reset.totals(), &[0.0, 0.0]);

        let mut keep = DpcoLedger::new(2, ResetPolicy::Continue).unwrap();
        keep.add_value(0, 3.0, Phase::Stage1).unwrap();
        keep.add_value(1, 4.0, Phase::Stage1).unwrap();
        assert_eq!(keep.select_winner().unwrap(), 0);
        assert_eq!(keep.totals(), &[3.0, 4.0]);
    }

    #[test]
    fn selection_matches_brute_force_on_random_ledgers() {
        let mut rng = stream(0, StreamId::DatasetGen, &[414]);
        for trial in 0..1000 {
            let n = rng.gen_range(2..8);
            let totals: Vec<f64> = (0..n)
                .map(|_| {
                    // coarse grid so exact ties actually occur
                    (rng.gen_range(0..40) as f64) * 0.25
                })
                .collect();
            let mut ledger = DpcoLedger::new(n, ResetPolicy::Reset).unwrap();
            for (i, &v) in totals.iter().enumerate() {
                ledger.add_value(i, v, Phase::Stage1).unwrap();
            }
            let got = ledger.select_winner().unwrap();
            // brute force: scan all indices, keep the first strict minimum
            let mut want = 0;
            for i in 0..n {
                if totals[i] < totals[want] {
                    want = i;
                }
            }
            assert_eq!(got, want, "trial {trial}: totals {totals:?}");
        }
    }

    #[test]
    fn scoring_leaves_parameters_bit_identical() {
        let cfg = crate::detector::config::DetectorConfig::for_image_size(32, 3, vec![4, 8])
            .unwrap();
        let data = generate_dataset(&DatasetConfig {
            image_size: 32,
            num_classes: 3,
            n_labeled: 3,
            n_unlabeled: 1,
            n_val: 1,
            master_seed: 2,
            ..DatasetConfig::default()
        })
        .unwrap();
        let params = init_params(&cfg, 1).unwrap();
        let before = params.clone();
        let batch: Vec<&Sample> = data.labeled.iter().collect();
        let mut ledger = DpcoLedger::new(2, ResetPolicy::Reset).unwrap();
        let v = ledger.accumulate(0, Phase::Stage1, &cfg, &params, &batch).unwrap();
        assert!(v > 0.0);
        assert!(params.values_bit_equal(&before));
        assert_eq!(ledger.totals()[0], v);
        assert_eq!(ledger.totals()[1], 0.0);
    }

    #[test]
    fn from_parts_validates() {
        assert!(DpcoLedger::from_parts(vec![], ResetPolicy::Reset, 1).is_err());
        assert!(DpcoLedger::from_parts(vec![1.0, f64::INFINITY], ResetPolicy::Reset, 1).is_err());
        let l = DpcoLedger::from_parts(vec![1.0, 2.0], ResetPolicy::Continue, 7).unwrap();
        assert_eq!(l.totals(), &[1.0, 2.0]);
        assert_eq!(l.window_start, 7);
    }
}
