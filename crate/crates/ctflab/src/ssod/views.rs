//! Deterministic batch selection and augmented-view construction.
//!
//! Every random decision is replayed from a named stream keyed by seed,
//! iteration, and batch slot, so a training run can be reproduced — or
//! resumed mid-way — without carrying generator state around.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{stream, StreamId};
use crate::synthdata::augment::{
    augment, augment_with_draws, draw_geometric, draw_photometric, AugmentationSpec, GeomDraw,
};
use crate::synthdata::types::Sample;

/// Draws `batch` distinct indices out of `0..n` for one iteration's labeled
/// batch (capped at `n` when the pool is smaller).
pub fn labeled_batch_indices(n: usize, batch: usize, seed: u64, iter: u64) -> Vec<usize> {
    let mut rng = stream(seed, StreamId::BatchLabeled, &[iter]);
    rand::seq::index::sample(&mut rng, n, batch.min(n)).into_vec()
}

/// Draws `batch` distinct indices out of `0..n` for one iteration's
/// unlabeled batch.
pub fn unlabeled_batch_indices(n: usize, batch: usize, seed: u64, iter: u64) -> Vec<usize> {
    let mut rng = stream(seed, StreamId::BatchUnlabeled, &[iter]);
    rand::seq::index::sample(&mut rng, n, batch.min(n)).into_vec()
}

/// Epoch-based sampler for burn-in: a fresh permutation of `0..n` per
/// epoch, served in consecutive chunks; a batch that exhausts the epoch
/// continues into the next permutation, so every sample is visited once
/// per epoch.
#[derive(Debug, Clone)]
pub struct BurnInSampler {
    seed: u64,
    n: usize,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl BurnInSampler {
    pub fn new(seed: u64, n: usize) -> Self {
        assert!(n > 0, "sampler needs a non-empty pool");
        let order = permutation(seed, 0, n);
        BurnInSampler { seed, n, epoch: 0, order, pos: 0 }
    }

    pub fn next_batch(&mut self, batch: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(batch);
        while out.len() < batch {
            if self.pos == self.n {
                self.epoch += 1;
                self.order = permutation(self.seed, self.epoch, self.n);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn permutation(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, StreamId::BurnInShuffle, &[epoch]));
    order
}

/// Augments the selected labeled samples, one independent draw per batch
/// slot keyed by `(seed, iter, slot)`.
pub fn build_labeled_views(
    samples: &[Sample],
    indices: &[usize],
    spec: &AugmentationSpec,
    seed: u64,
    iter: u64,
) -> Result<Vec<Sample>> {
    indices
        .iter()
        .enumerate()
        .map(|(slot, &i)| {
            let s = samples.get(i).ok_or_else(|| {
                Error::InvalidConfig(format!("batch index {i} out of range ({})", samples.len()))
            })?;
            augment(s, spec, &mut stream(seed, StreamId::AugLabeled, &[iter, slot as u64]))
        })
        .collect()
}

/// The two views of an unlabeled batch used by a Mean Teacher step: the
/// weak views the teacher labels, the strong views the student trains on,
/// and the geometric draws that turned each weak view into its strong view
/// (needed to carry pseudo-boxes into strong-view coordinates).
#[derive(Debug, Clone)]
pub struct UnlabeledViews {
    pub weak: Vec<Sample>,
    pub strong: Vec<Sample>,
    pub strong_geoms: Vec<GeomDraw>,
}

impl UnlabeledViews {
    pub fn len(&self) -> usize {
        self.weak.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weak.is_empty()
    }
}

/// Builds weak and strong views for the selected unlabeled samples. The
/// strong view is produced from the weak view, not from the original, so
/// pseudo-labels predicted on the weak view map onto the strong view
/// through the recorded geometric draw alone.
pub fn build_unlabeled_views(
    samples: &[Sample],
    indices: &[usize],
    weak_spec: &AugmentationSpec,
    strong_spec: &AugmentationSpec,
    seed: u64,
    iter: u64,
) -> Result<UnlabeledViews> {
    weak_spec.validate()?;
    strong_spec.validate()?;
    let mut weak = Vec::with_capacity(indices.len());
    let mut strong = Vec::with_capacity(indices.len());
    let mut strong_geoms = Vec::with_capacity(indices.len());
    for (slot, &i) in indices.iter().enumerate() {
        let s = samples.get(i).ok_or_else(|| {
            Error::InvalidConfig(format!("batch index {i} out of range ({})", samples.len()))
        })?;
        let ctx = [iter, slot as u64];
        let mut wr = stream(seed, StreamId::AugWeak, &ctx);
        let wg = draw_geometric(weak_spec, &mut wr);
        let wp = draw_photometric(weak_spec, s.width(), &mut wr);
        let weak_view = augment_with_draws(s, &wg, &wp)?;

        let mut sr = stream(seed, StreamId::AugStrong, &ctx);
        let sg = draw_geometric(strong_spec, &mut sr);
        let sp = draw_photometric(strong_spec, weak_view.width(), &mut sr);
        let strong_view = augment_with_draws(&weak_view, &sg, &sp)?;

        weak.push(weak_view);
        strong.push(strong_view);
        strong_geoms.push(sg);
    }
    Ok(UnlabeledViews { weak, strong, strong_geoms })
}
