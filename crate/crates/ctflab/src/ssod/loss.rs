//! Pseudo-label-supervised loss terms and their combination.

use std::collections::BTreeMap;

use crate::detector::config::DetectorConfig;
use crate::detector::decode::Detection;
use crate::detector::loss::loss_on_annotations;
use crate::error::{Error, Result};
use crate::numerics::tape::{Tape, Var};
use crate::ssod::pseudo::PseudoLabels;
use crate::synthdata::augment::{transform_box, GeomDraw};
use crate::synthdata::types::{Annotation, Sample};

/// Maps weak-view detections into strong-view coordinates through the
/// geometric draw that produced the strong view. Boxes that the draw crops
/// away (or shrinks below visibility) drop out, exactly as ground-truth
/// boxes would under the same transform.
pub fn pseudo_annotations(
    dets: &[Detection],
    geom: &GeomDraw,
    image_size: usize,
) -> Vec<Annotation> {
    dets.iter()
        .filter_map(|d| {
            transform_box(&d.bbox, geom, image_size)
                .map(|bbox| Annotation { bbox, class_id: d.class_id })
        })
        .collect()
}

/// Mean per-image loss of the student on strongly augmented views against
/// pseudo-labels: the same focal + GIoU form as the labeled loss with
/// teacher detections standing in for ground truth. Images whose
/// pseudo-label list is empty still contribute the all-background
/// classification term. The three slices must align one-to-one; a length
/// mismatch means images and pseudo-boxes went through different
/// transforms and is rejected.
pub fn unlabeled_loss<'t>(
    cfg: &DetectorConfig,
    tape: &'t Tape,
    vars: &BTreeMap<String, Var<'t>>,
    strong: &[Sample],
    strong_geoms: &[GeomDraw],
    pseudo: &PseudoLabels,
) -> Result<Var<'t>> {
    if strong.is_empty() {
        return Err(Error::InvalidConfig("unlabeled_loss: empty batch".to_string()));
    }
    if strong.len() != pseudo.per_image.len() || strong.len() != strong_geoms.len() {
        return Err(Error::ShapeMismatch {
            op: "unlabeled_loss",
            detail: format!(
                "{} strong views vs {} pseudo-label lists vs {} geometric draws",
                strong.len(),
                pseudo.per_image.len(),
                strong_geoms.len()
            ),
        });
    }
    let mut acc: Option<Var<'t>> = None;
    for ((view, geom), dets) in strong.iter().zip(strong_geoms).zip(&pseudo.per_image) {
        let annos = pseudo_annotations(dets, geom, cfg.image_size);
        let l = loss_on_annotations(cfg, tape, vars, view.image(), &annos)?;
        acc = Some(match acc {
            None => l,
            Some(a) => a.add(l)?,
        });
    }
    acc.expect("non-empty batch").mul_scalar(1.0 / strong.len() as f64)
}

/// Weighted sum of the labeled and unlabeled objectives:
/// `L = L_l + lambda_u · L_u`. Both terms must be scalars on one tape.
pub fn total_loss<'t>(labeled: Var<'t>, unlabeled: Var<'t>, lambda_u: f64) -> Result<Var<'t>> {
    if !lambda_u.is_finite() || lambda_u < 0.0 {
        return Err(Error::Domain {
            op: "total_loss",
            detail: format!("lambda_u must be finite and non-negative, got {lambda_u}"),
        });
    }
    labeled.add(unlabeled.mul_scalar(lambda_u)?)
}
