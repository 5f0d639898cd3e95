//! Named parameter collections.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::Tensor;

/// One named parameter plus its (lazily created) momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub momentum: Option<Tensor>,
}

/// Ordered map from parameter name to tensor. Iteration order is
/// lexicographic by name, which makes every traversal deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: BTreeMap<String, Param>,
}

/// Gradients keyed like a [`ParamSet`].
pub type GradMap = BTreeMap<String, Tensor>;

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::ParamMismatch(format!("duplicate parameter name {name}")));
        }
        self.entries.insert(name, Param { value, momentum: None });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.entries.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of stored values across parameters.
    pub fn num_values(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    /// Checks that `other` has exactly the same names and shapes.
    pub fn check_aligned(&self, other: &ParamSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::ParamMismatch(format!(
                "{} parameters vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for ((na, pa), (nb, pb)) in self.entries.iter().zip(other.entries.iter()) {
            if na != nb {
                return Err(Error::ParamMismatch(format!("name {na} vs {nb}")));
            }
            if pa.value.shape() != pb.value.shape() {
                return Err(Error::ParamMismatch(format!(
                    "{na}: shape {:?} vs {:?}",
                    pa.value.shape(),
                    pb.value.shape()
                )));
            }
        }
        Ok(())
    }

    /// Records every parameter as a leaf on `tape`, returning name -> Var.
    pub fn lease<'t>(&self, tape: &'t Tape) -> Result<BTreeMap<String, Var<'t>>> {
        let mut out = BTreeMap::new();
        for (name, p) in &self.entries {
            out.insert(name.clone(), tape.leaf(p.value.clone())?);
        }
        Ok(out)
    }

    /// Euclidean distance between two aligned parameter sets, taken over
    /// the concatenation of all parameter values (momentum ignored).
    pub fn l2_distance(&self, other: &ParamSet) -> Result<f64> {
        self.check_aligned(other)?;
        let mut sum = 0.0;
        for ((_, pa), (_, pb)) in self.entries.iter().zip(other.entries.iter()) {
            for (x, y) in pa.value.data().iter().zip(pb.value.data()) {
                let d = x - y;
                sum += d * d;
            }
        }
        Ok(sum.sqrt())
    }

    /// Bit-exact equality of parameter values (momentum buffers ignored).
    pub fn values_bit_equal(&self, other: &ParamSet) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(other.entries.iter()).all(|((na, pa), (nb, pb))| {
                na == nb
                    && pa.value.shape() == pb.value.shape()
                    && pa.value
                        .data()
                        .iter()
                        .zip(pb.value.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Runs backward from `root` and gathers the gradient for every leased
/// parameter, keyed by name. Parameters the root does not depend on get
/// zero gradients.
pub fn collect_grads<'t>(
    tape: &'t Tape,
    root: Var<'t>,
    vars: &BTreeMap<String, Var<'t>>,
) -> Result<GradMap> {
    let grads = tape.backward(root)?;
    Ok(vars.iter().map(|(name, var)| (name.clone(), grads.wrt(*var))).collect())
}

/// Xavier/Glorot uniform initialization: uniform in
/// `[-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))]`.
pub fn xavier_uniform(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut ChaCha8Rng,
) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamId};

    #[test]
    fn iteration_is_lexicographic() {
        let mut ps = ParamSet::new();
        ps.insert("b", Tensor::scalar(1.0)).unwrap();
        ps.insert("a", Tensor::scalar(2.0)).unwrap();
        ps.insert("c", Tensor::scalar(3.0)).unwrap();
        let names: Vec<&String> = ps.names().collect();
        assert_eq!(names, ["a", "b", "c"]);
    }

    #[test]
    fn l2_distance_is_a_metric() {
        let build = |vals: [f64; 3]| {
            let mut ps = ParamSet::new();
            ps.insert("w", Tensor::new(&[3], vals.to_vec()).unwrap()).unwrap();
            ps
        };
        let a = build([1.0, 2.0, 3.0]);
        let b = build([1.0, 2.0, 7.0]);
        let c = build([4.0, 2.0, 3.0]);
        assert_eq!(a.l2_distance(&a).unwrap(), 0.0);
        assert_eq!(a.l2_distance(&b).unwrap(), 4.0);
        assert_eq!(a.l2_distance(&b).unwrap(), b.l2_distance(&a).unwrap());
        // triangle inequality
        let ab = a.l2_distance(&b).unwrap();
        let bc = b.l2_distance(&c).unwrap();
        let ac = a.l2_distance(&c).unwrap();
        assert!(ac <= ab + bc + 1e-15);
        // misaligned sets are rejected
        let mut other = ParamSet::new();
        other.insert("w", Tensor::scalar(0.0)).unwrap();
        assert!(a.l2_distance(&other).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::scalar(1.0)).unwrap();
        assert!(ps.insert("w", Tensor::scalar(2.0)).is_err());
    }

    #[test]
    fn xavier_bound_respected() {
        let mut rng = stream(3, StreamId::ParamInit, &[0]);
        let t = xavier_uniform(&[3, 3, 4, 8], 36, 72, &mut rng);
        let bound = (6.0 / 108.0f64).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= bound));
        // seeded: same stream reproduces the same tensor
        let mut rng2 = stream(3, StreamId::ParamInit, &[0]);
        let t2 = xavier_uniform(&[3, 3, 4, 8], 36, 72, &mut rng2);
        assert_eq!(t, t2);
    }
}
