//! Finite-difference gradient verification.
//!
//! `check_gradients` perturbs every stored value of every parameter with a
//! central difference and compares against the gradients the tape produced.
//! An element passes when `|ad - fd| <= max(abs_floor, rel_tol * max(|ad|, |fd|))`.

use crate::error::Result;
use crate::numerics::params::{GradMap, ParamSet};

/// Worst element found by a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckWorst {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub error: f64,
    pub allowed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub failures: usize,
    pub worst: Option<GradCheckWorst>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Central-difference check of `grads` against the scalar function `loss`.
///
/// `loss` is evaluated at perturbed copies of `params`; the originals are
/// restored before returning. Parameters without an entry in `grads` are
/// treated as having a zero gradient.
pub fn check_gradients<F>(
    mut loss: F,
    params: &ParamSet,
    grads: &GradMap,
    eps: f64,
    rel_tol: f64,
    abs_floor: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    let mut work = params.clone();
    let mut checked = 0usize;
    let mut failures = 0usize;
    let mut worst: Option<GradCheckWorst> = None;

    let names: Vec<String> = params.names().cloned().collect();
    for name in &names {
        let n = params.get(name).expect("name from params").value.len();
        for idx in 0..n {
            let base = params.get(name).expect("name from params").value.data()[idx];

            work.get_mut(name).expect("aligned").value.data_mut()[idx] = base + eps;
            let up = loss(&work)?;
            work.get_mut(name).expect("aligned").value.data_mut()[idx] = base - eps;
            let down = loss(&work)?;
            work.get_mut(name).expect("aligned").value.data_mut()[idx] = base;

            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads.get(name).map_or(0.0, |g| g.data()[idx]);
            let error = (analytic - numeric).abs();
            let allowed = abs_floor.max(rel_tol * analytic.abs().max(numeric.abs()));

            checked += 1;
            if error > allowed {
                failures += 1;
            }
            let margin = error - allowed;
            let replace = match &worst {
                None => true,
                Some(w) => margin > w.error - w.allowed,
            };
            if replace {
                worst = Some(GradCheckWorst {
                    name: name.clone(),
                    index: idx,
                    analytic,
                    numeric,
                    error,
                    allowed,
                });
            }
        }
    }
    Ok(GradCheckReport { checked, failures, worst })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tape::Tape;
    use crate::numerics::tensor::Tensor;

    /// loss = sum(w * w) + 3 * b, checked against its tape gradients.
    #[test]
    fn quadratic_passes() {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::new(&[3], vec![0.5, -1.25, 2.0]).unwrap()).unwrap();
        ps.insert("b", Tensor::scalar(0.7)).unwrap();

        let run = |ps: &ParamSet| -> Result<(f64, GradMap)> {
            let tape = Tape::new();
            let vars = ps.lease(&tape)?;
            let w = vars["w"];
            let b = vars["b"];
            let loss = w.mul(w)?.sum()?.add(b.mul_scalar(3.0)?)?;
            let grads = tape.backward(loss)?;
            let mut gm = GradMap::new();
            gm.insert("w".into(), grads.wrt(w));
            gm.insert("b".into(), grads.wrt(b));
            Ok((loss.value().item()?, gm))
        };

        let (_, gm) = run(&ps).unwrap();
        let report = check_gradients(
            |p| run(p).map(|(l, _)| l),
            &ps,
            &gm,
            1e-5,
            1e-6,
            1e-9,
        )
        .unwrap();
        assert!(report.passed(), "worst: {:?}", report.worst);
        assert_eq!(report.checked, 4);
    }

    /// A deliberately wrong gradient is caught.
    #[test]
    fn wrong_gradient_fails() {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::scalar(2.0)).unwrap();
        let mut gm = GradMap::new();
        gm.insert("w".into(), Tensor::scalar(5.0)); // true gradient of w*w at 2 is 4

        let report = check_gradients(
            |p| {
                let v = p.get("w").unwrap().value.item()?;
                Ok(v * v)
            },
            &ps,
            &gm,
            1e-5,
            1e-6,
            1e-9,
        )
        .unwrap();
        assert_eq!(report.failures, 1);
        assert!(!report.passed());
    }
}
