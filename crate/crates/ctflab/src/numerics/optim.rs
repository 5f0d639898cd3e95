//! SGD with momentum and decoupled-from-nothing classic L2 weight decay,
//! plus parameter-space distance helpers.

use crate::error::{Error, Result};
use crate::numerics::params::{GradMap, ParamSet};
use crate::numerics::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "weight_decay must be non-negative and finite, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// One SGD step: `v <- m*v + (g + wd*p); p <- p - lr*v`.
/// Momentum buffers are created as zeros the first time a parameter is
/// updated. Missing gradients are treated as zero (the parameter still
/// decays through the weight-decay term).
pub fn sgd_step(params: &mut ParamSet, grads: &GradMap, cfg: &OptimConfig) -> Result<()> {
    cfg.validate()?;
    for name in grads.keys() {
        if params.get(name).is_none() {
            return Err(Error::ParamMismatch(format!("gradient for unknown parameter {name}")));
        }
    }
    for (name, param) in params.iter_mut() {
        let zero;
        let grad = match grads.get(name) {
            Some(g) => {
                if g.shape() != param.value.shape() {
                    return Err(Error::ParamMismatch(format!(
                        "{name}: gradient shape {:?} vs parameter shape {:?}",
                        g.shape(),
                        param.value.shape()
                    )));
                }
                g
            }
            None => {
                zero = Tensor::zeros(param.value.shape());
                &zero
            }
        };
        if param.momentum.is_none() {
            param.momentum = Some(Tensor::zeros(param.value.shape()));
        }
        let buf = param.momentum.as_mut().expect("just initialized");
        let vs = buf.data_mut();
        let ps = param.value.data_mut();
        for ((v, p), g) in vs.iter_mut().zip(ps.iter_mut()).zip(grad.data()) {
            *v = cfg.momentum * *v + (*g + cfg.weight_decay * *p);
            *p -= cfg.learning_rate * *v;
        }
        param.value.check_finite("sgd_step")?;
    }
    Ok(())
}

/// Euclidean distance between two aligned parameter sets:
/// sqrt of the sum of squared element differences over all parameters.
pub fn l2_param_distance(a: &ParamSet, b: &ParamSet) -> Result<f64> {
    a.check_aligned(b)?;
    let mut acc = 0.0;
    for ((_, pa), (_, pb)) in a.iter().zip(b.iter()) {
        for (x, y) in pa.value.data().iter().zip(pb.value.data()) {
            let d = x - y;
            acc += d * d;
        }
    }
    Ok(acc.sqrt())
}
