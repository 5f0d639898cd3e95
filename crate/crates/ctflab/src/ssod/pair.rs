//! Teacher–student pair state, burn-in pre-training, and EMA updates.

use crate::detector::config::DetectorConfig;
use crate::detector::loss::supervised_loss;
use crate::detector::model::init_params;
use crate::error::{Error, Result};
use crate::numerics::optim::{sgd_step, OptimConfig};
use crate::numerics::params::{collect_grads, ParamSet};
use crate::numerics::tape::Tape;
use crate::numerics::tensor::Tensor;
use crate::ssod::views::{build_labeled_views, BurnInSampler};
use crate::synthdata::augment::AugmentationSpec;
use crate::synthdata::types::Sample;

/// One teacher–student pair. The student learns by gradient descent; the
/// teacher trails it as an exponential moving average and supplies
/// pseudo-labels. Both hold identically named and shaped parameters.
#[derive(Debug, Clone)]
pub struct PairState {
    pub pair_id: usize,
    pub seed: u64,
    pub teacher: ParamSet,
    pub student: ParamSet,
    /// Semi-supervised iterations applied so far (burn-in not counted).
    pub iteration: u64,
}

impl PairState {
    /// Fresh pair: teacher initialized from `seed`, student an exact copy.
    pub fn init(pair_id: usize, seed: u64, cfg: &DetectorConfig) -> Result<Self> {
        let teacher = init_params(cfg, seed)?;
        let student = teacher.clone();
        Ok(PairState { pair_id, seed, teacher, student, iteration: 0 })
    }

    pub fn check_aligned(&self) -> Result<()> {
        self.teacher.check_aligned(&self.student)
    }
}

/// One supervised SGD step on `params`: forward, backward, update. Returns
/// the loss value before the update.
pub fn supervised_step(
    cfg: &DetectorConfig,
    params: &mut ParamSet,
    optim: &OptimConfig,
    batch: &[&Sample],
) -> Result<f64> {
    let tape = Tape::new();
    let vars = params.lease(&tape)?;
    let loss = supervised_loss(cfg, &tape, &vars, batch)?;
    let value = loss.item()?;
    let grads = collect_grads(&tape, loss, &vars)?;
    sgd_step(params, &grads, optim)?;
    Ok(value)
}

/// Supervised pre-training of the pair's teacher on labeled data, followed
/// by copying the teacher into the student. Batch order reshuffles every
/// epoch from the pair's own seed, so pairs with different seeds see the
/// data in different orders; augmentation draws are also keyed by the pair
/// seed. Returns the per-iteration loss values.
pub fn burn_in(
    pair: &mut PairState,
    cfg: &DetectorConfig,
    labeled: &[Sample],
    spec: &AugmentationSpec,
    optim: &OptimConfig,
    iterations: u64,
    batch_size: usize,
) -> Result<Vec<f64>> {
    if labeled.is_empty() {
        return Err(Error::InvalidConfig("burn_in: no labeled samples".to_string()));
    }
    if batch_size == 0 {
        return Err(Error::InvalidConfig("burn_in: batch_size must be positive".to_string()));
    }
    let mut sampler = BurnInSampler::new(pair.seed, labeled.len());
    let mut losses = Vec::with_capacity(iterations as usize);
    for it in 0..iterations {
        let idx = sampler.next_batch(batch_size);
        let views = build_labeled_views(labeled, &idx, spec, pair.seed, it)?;
        let refs: Vec<&Sample> = views.iter().collect();
        losses.push(supervised_step(cfg, &mut pair.teacher, optim, &refs)?);
    }
    pair.student = pair.teacher.clone();
    Ok(losses)
}

/// Moves the teacher toward the student by an exponential moving average:
/// `W_t ← rate·W_t + (1−rate)·W_s`, i.e. `rate` is the fraction of the old
/// teacher kept. Computed in the delta form `W_t + (1−rate)·(W_s − W_t)` so
/// a teacher already equal to the student stays bit-identical; the
/// boundary rates 1 (keep teacher) and 0 (copy student) are exact.
pub fn ema_update(pair: &mut PairState, rate: f64) -> Result<()> {
    if !rate.is_finite() || !(0.0..=1.0).contains(&rate) {
        return Err(Error::Domain {
            op: "ema_update",
            detail: format!("rate must be in [0,1], got {rate}"),
        });
    }
    pair.teacher.check_aligned(&pair.student)?;
    if rate == 1.0 {
        return Ok(());
    }
    let PairState { teacher, student, .. } = pair;
    for (name, tp) in teacher.iter_mut() {
        let sv = &student.get(name).expect("aligned sets share names").value;
        if rate == 0.0 {
            tp.value = sv.clone();
            continue;
        }
        let blend = 1.0 - rate;
        let data: Vec<f64> =
            tp.value.data().iter().zip(sv.data()).map(|(t, s)| t + blend * (s - t)).collect();
        let shape = tp.value.shape().to_vec();
        tp.value = Tensor::new(&shape, data)?;
    }
    Ok(())
}
