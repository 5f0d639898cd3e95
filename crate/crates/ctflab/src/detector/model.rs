//! Parameter initialization and the forward pass.

use std::collections::BTreeMap;

use crate::detector::config::DetectorConfig;
use crate::error::{Error, Result};
use crate::numerics::params::{xavier_uniform, ParamSet};
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::Tensor;
use crate::rng::{stream, StreamId};

/// Builds a freshly initialized parameter set: Xavier-uniform conv kernels
/// (per-layer derived streams) and zero biases.
pub fn init_params(cfg: &DetectorConfig, seed: u64) -> Result<ParamSet> {
    cfg.validate()?;
    let mut params = ParamSet::new();
    let mut cin = 3usize;
    for (layer, &cout) in cfg.trunk_channels.iter().enumerate() {
        let mut rng = stream(seed, StreamId::ParamInit, &[layer as u64]);
        let kernel = xavier_uniform(&[3, 3, cin, cout], 9 * cin, 9 * cout, &mut rng);
        params.insert(format!("trunk.{layer}.weight"), kernel)?;
        params.insert(format!("trunk.{layer}.bias"), Tensor::zeros(&[cout]))?;
        cin = cout;
    }
    let mut rng = stream(seed, StreamId::ParamInit, &[cfg.trunk_channels.len() as u64]);
    let cout = cfg.out_channels();
    let kernel = xavier_uniform(&[3, 3, cin, cout], 9 * cin, 9 * cout, &mut rng);
    params.insert("head.weight", kernel)?;
    params.insert("head.bias", Tensor::zeros(&[cout]))?;
    Ok(params)
}

/// Runs the detector on one image, returning the G×G×(C+4) raw prediction.
/// `vars` must be a lease of a parameter set produced by [`init_params`].
pub fn forward<'t>(
    cfg: &DetectorConfig,
    tape: &'t Tape,
    vars: &BTreeMap<String, Var<'t>>,
    image: &Tensor,
) -> Result<Var<'t>> {
    let shape = image.shape();
    if shape != [cfg.image_size, cfg.image_size, 3] {
        return Err(Error::ShapeMismatch {
            op: "forward",
            detail: format!(
                "image shape {shape:?} does not match configured {0}×{0}×3",
                cfg.image_size
            ),
        });
    }
    let var = |name: &str| -> Result<Var<'t>> {
        vars.get(name)
            .copied()
            .ok_or_else(|| Error::ParamMismatch(format!("missing parameter {name}")))
    };
    let mut x = tape.constant(image.clone())?;
    for layer in 0..cfg.trunk_channels.len() {
        let w = var(&format!("trunk.{layer}.weight"))?;
        let b = var(&format!("trunk.{layer}.bias"))?;
        x = x.conv2d(w, 2, 1)?.bias_add(b)?.relu()?;
    }
    let w = var("head.weight")?;
    let b = var("head.bias")?;
    x = x.conv2d(w, 1, 1)?.bias_add(b)?;

    debug_assert_eq!(x.value().shape(), [cfg.grid, cfg.grid, cfg.out_channels()]);
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::check_gradients;
    use crate::numerics::params::GradMap;
    use crate::numerics::tape::sigmoid;

    fn mini_cfg() -> DetectorConfig {
        DetectorConfig::for_image_size(16, 2, vec![2, 3, 4]).unwrap()
    }

    #[test]
    fn output_shape_contract() {
        let cfg = DetectorConfig::for_image_size(32, 3, vec![4, 8, 8]).unwrap();
        let params = init_params(&cfg, 1).unwrap();
        let tape = Tape::new();
        let vars = params.lease(&tape).unwrap();
        let image = Tensor::full(&[32, 32, 3], 0.25);
        let out = forward(&cfg, &tape, &vars, &image).unwrap();
        assert_eq!(out.value().shape(), [4, 4, 7]);
    }

    #[test]
    fn zero_params_give_half_scores() {
        let cfg = mini_cfg();
        let mut zeroed = ParamSet::new();
        for (name, p) in init_params(&cfg, 0).unwrap().iter() {
            zeroed.insert(name.clone(), Tensor::zeros(p.value.shape())).unwrap();
        }
        let tape = Tape::new();
        let vars = zeroed.lease(&tape).unwrap();
        let image = Tensor::zeros(&[16, 16, 3]);
        let out = forward(&cfg, &tape, &vars, &image).unwrap();
        assert!(out.value().data().iter().all(|&v| v == 0.0));
        assert!(out.value().data().iter().all(|&v| sigmoid(v) == 0.5));
    }

    #[test]
    fn wrong_image_size_rejected() {
        let cfg = mini_cfg();
        let params = init_params(&cfg, 0).unwrap();
        let tape = Tape::new();
        let vars = params.lease(&tape).unwrap();
        let image = Tensor::zeros(&[32, 32, 3]);
        assert!(forward(&cfg, &tape, &vars, &image).is_err());
    }

    #[test]
    fn init_is_seed_deterministic_and_seed_sensitive() {
        let cfg = mini_cfg();
        let a = init_params(&cfg, 1).unwrap();
        let b = init_params(&cfg, 1).unwrap();
        let c = init_params(&cfg, 5).unwrap();
        assert!(a.values_bit_equal(&b));
        assert!(!a.values_bit_equal(&c));
    }

    /// Finite-difference check of d(sum of outputs)/d(params) on a tiny
    /// detector with random params and image.
    #[test]
    fn forward_gradients_match_finite_differences() {
        let cfg = DetectorConfig::for_image_size(8, 2, vec![2, 2]).unwrap();
        let params = init_params(&cfg, 3).unwrap();
        let mut rng = stream(4, StreamId::DatasetGen, &[0]);
        use rand::Rng;
        let image = Tensor::from_fn(&[8, 8, 3], |_| rng.gen_range(0.0..1.0));

        let run = |ps: &ParamSet| -> Result<(f64, GradMap)> {
            let tape = Tape::new();
            let vars = ps.lease(&tape)?;
            let out = forward(&cfg, &tape, &vars, &image)?;
            let loss = out.sum()?;
            let grads = tape.backward(loss)?;
            let mut gm = GradMap::new();
            for (name, v) in &vars {
                gm.insert(name.clone(), grads.wrt(*v));
            }
            Ok((loss.value().item()?, gm))
        };
        let (_, gm) = run(&params).unwrap();
        let report = check_gradients(|p| run(p).map(|(l, _)| l), &params, &gm, 1e-5, 1e-4, 1e-7)
            .unwrap();
        assert!(report.passed(), "worst: {:?}", report.worst);
    }
}
