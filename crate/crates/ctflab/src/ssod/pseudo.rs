//! Teacher predictions on weak views, filtered by confidence.

use crate::detector::config::DetectorConfig;
use crate::detector::decode::{decode, Detection, NMS_IOU};
use crate::detector::model::forward;
use crate::error::{Error, Result};
use crate::numerics::params::ParamSet;
use crate::numerics::tape::Tape;
use crate::synthdata::types::Sample;

/// Detections a teacher produced on a batch of weak views, used as training
/// targets for students. Box coordinates live in weak-view space; callers
/// map them through the strong geometric draw before use.
#[derive(Debug, Clone)]
pub struct PseudoLabels {
    /// Which pair's teacher generated these labels.
    pub generator_pair: usize,
    /// Confidence cutoff that was applied; every score is ≥ this.
    pub threshold: f64,
    /// One detection list per batch image, aligned with the view batch.
    pub per_image: Vec<Vec<Detection>>,
}

impl PseudoLabels {
    pub fn num_boxes(&self) -> usize {
        self.per_image.iter().map(Vec::len).sum()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, dets) in self.per_image.iter().enumerate() {
            for d in dets {
                if d.score < self.threshold {
                    return Err(Error::Domain {
                        op: "PseudoLabels::validate",
                        detail: format!(
                            "image {i} holds score {} below threshold {}",
                            d.score, self.threshold
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Runs the teacher on each weak view and decodes detections at or above
/// `threshold`. Annotations of the views are never read — only the pixels —
/// so unlabeled ground truth stays sealed.
pub fn generate_pseudo_labels(
    cfg: &DetectorConfig,
    teacher: &ParamSet,
    weak_views: &[Sample],
    threshold: f64,
    generator_pair: usize,
) -> Result<PseudoLabels> {
    if !threshold.is_finite() || threshold <= 0.0 || threshold > 1.0 {
        return Err(Error::Domain {
            op: "generate_pseudo_labels",
            detail: format!("threshold must be in (0,1], got {threshold}"),
        });
    }
    let mut per_image = Vec::with_capacity(weak_views.len());
    for view in weak_views {
        let tape = Tape::new();
        let vars = teacher.lease(&tape)?;
        let raw = forward(cfg, &tape, &vars, view.image())?;
        per_image.push(decode(cfg, &raw.value(), threshold, NMS_IOU)?);
    }
    Ok(PseudoLabels { generator_pair, threshold, per_image })
}
