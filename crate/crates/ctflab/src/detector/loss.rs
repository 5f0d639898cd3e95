//! Training losses on the tape: sigmoid focal classification and GIoU box
//! regression, combined per sample and averaged over a batch.

use std::collections::BTreeMap;

use crate::detector::config::DetectorConfig;
use crate::detector::model::forward;
use crate::detector::targets::{assign_targets, GridTargets};
use crate::error::{Error, Result};
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::Tensor;
use crate::synthdata::types::{Annotation, BBox, Role, Sample};

pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;

/// Minimum box extent enforced when decoding predicted deltas, so every
/// predicted box is valid before area/IoU math.
pub const MIN_BOX_EXTENT: f64 = 1e-3;

/// Sigmoid focal loss over G×G×C class logits, summed over cells and
/// classes, normalized by `max(1, num_pos)`. `alpha: None` disables the
/// alpha weighting; `gamma = 0` with alpha disabled reduces the loss to
/// plain binary cross-entropy.
pub fn focal_loss<'t>(
    class_logits: Var<'t>,
    targets: &GridTargets,
    alpha: Option<f64>,
    gamma: f64,
) -> Result<Var<'t>> {
    let shape = class_logits.value().shape().to_vec();
    if shape != targets.class.shape() {
        return Err(Error::ShapeMismatch {
            op: "focal_loss",
            detail: format!("logits {shape:?} vs targets {:?}", targets.class.shape()),
        });
    }
    let tape = class_logits.tape();
    let x = class_logits;
    let t = tape.constant(targets.class.clone())?;
    let ones = tape.constant(Tensor::full(&shape, 1.0))?;

    let p = x.sigmoid()?;
    let one_minus_p = ones.sub(p)?;
    let one_minus_t = ones.sub(t)?;
    // per-element cross-entropy pieces, in softplus form for stability
    let ce_pos = x.neg()?.softplus()?;
    let ce_neg = x.softplus()?;

    let (w_pos, w_neg) = match alpha {
        Some(a) => (a, 1.0 - a),
        None => (1.0, 1.0),
    };
    let pos = t.mul(one_minus_p.pow_scalar(gamma)?)?.mul(ce_pos)?.mul_scalar(w_pos)?;
    let neg = one_minus_t.mul(p.pow_scalar(gamma)?)?.mul(ce_neg)?.mul_scalar(w_neg)?;
    let norm = 1.0 / targets.num_pos.max(1) as f64;
    pos.add(neg)?.sum()?.mul_scalar(norm)
}

/// GIoU loss `1 - GIoU(pred, target)` for a single box. `pred` is a rank-1
/// variable holding (x1, y1, x2, y2); degenerate extents are clamped to
/// [`MIN_BOX_EXTENT`] on the tape before the area math. Because the clamp
/// alone would leave a collapsed extent with no gradient to reopen it, a
/// hinge penalty `max(0, x1 + ε - x2) + max(0, y1 + ε - y2)` is added; it
/// is exactly zero for any well-formed box.
pub fn giou_loss<'t>(pred: Var<'t>, target: &BBox) -> Result<Var<'t>> {
    if pred.value().shape() != [4] {
        return Err(Error::ShapeMismatch {
            op: "giou_loss",
            detail: format!("pred must have shape [4], got {:?}", pred.value().shape()),
        });
    }
    if !(target.x1 < target.x2 && target.y1 < target.y2) {
        return Err(Error::Domain {
            op: "giou_loss",
            detail: format!("invalid target box {target:?}"),
        });
    }
    let tape = pred.tape();
    let c = |v: f64| tape.constant(Tensor::new(&[1], vec![v]).expect("finite scalar"));
    let zero = c(0.0)?;
    let px1 = pred.slice_last(0, 1)?;
    let py1 = pred.slice_last(1, 2)?;
    let rx2 = pred.slice_last(2, 3)?;
    let ry2 = pred.slice_last(3, 4)?;
    let min_x2 = px1.add_scalar(MIN_BOX_EXTENT)?;
    let min_y2 = py1.add_scalar(MIN_BOX_EXTENT)?;
    let px2 = rx2.max(min_x2)?;
    let py2 = ry2.max(min_y2)?;
    let loss = giou_core(
        [px1, py1, px2, py2],
        [c(target.x1)?, c(target.y1)?, c(target.x2)?, c(target.y2)?],
        zero,
    )?;
    let reopen = min_x2.sub(rx2)?.max(zero)?.add(min_y2.sub(ry2)?.max(zero)?)?;
    loss.add(reopen)?.sum()
}

/// Elementwise `1 - GIoU` over aligned coordinate tensors. All eight inputs
/// share one shape; `zero` is a same-shape constant of zeros. Predicted
/// coordinates must already satisfy `x2 > x1`, `y2 > y1` elementwise.
fn giou_core<'t>(
    pred: [Var<'t>; 4],
    target: [Var<'t>; 4],
    zero: Var<'t>,
) -> Result<Var<'t>> {
    let [px1, py1, px2, py2] = pred;
    let [tx1, ty1, tx2, ty2] = target;

    let ap = px2.sub(px1)?.mul(py2.sub(py1)?)?;
    let at = tx2.sub(tx1)?.mul(ty2.sub(ty1)?)?;

    let iw = px2.min(tx2)?.sub(px1.max(tx1)?)?.max(zero)?;
    let ih = py2.min(ty2)?.sub(py1.max(ty1)?)?.max(zero)?;
    let inter = iw.mul(ih)?;
    let union = ap.add(at)?.sub(inter)?;

    let ew = px2.max(tx2)?.sub(px1.min(tx1)?)?;
    let eh = py2.max(ty2)?.sub(py1.min(ty1)?)?;
    let enclose = ew.mul(eh)?;

    let iou = inter.div(union)?;
    let hull_gap = enclose.sub(union)?.div(enclose)?;
    // 1 - GIoU = 1 - iou + (enclose - union)/enclose
    iou.neg()?.add_scalar(1.0)?.add(hull_gap)
}

/// Builds the absolute target-coordinate planes (G×G×1 each) implied by
/// grid targets; background cells hold their cell center (a zero-area box
/// that the mask zeroes out of the loss).
fn absolute_target_planes(cfg: &DetectorConfig, targets: &GridTargets) -> [Tensor; 4] {
    let g = cfg.grid;
    let mut planes = [
        Tensor::zeros(&[g, g, 1]),
        Tensor::zeros(&[g, g, 1]),
        Tensor::zeros(&[g, g, 1]),
        Tensor::zeros(&[g, g, 1]),
    ];
    for gy in 0..g {
        for gx in 0..g {
            let cell = gy * g + gx;
            let (ccx, ccy) = cfg.cell_center(gy, gx);
            let centers = [ccx, ccy, ccx, ccy];
            for (k, plane) in planes.iter_mut().enumerate() {
                plane.data_mut()[cell] = centers[k] + targets.boxes.data()[cell * 4 + k];
            }
        }
    }
    planes
}

/// Masked GIoU regression over the grid: per positive cell, `1 - GIoU`
/// between the box decoded from predicted deltas and the target box plus a
/// hinge penalty on collapsed extents (see [`giou_loss`]), summed and
/// normalized by `max(1, num_pos)`.
pub fn grid_giou_loss<'t>(
    cfg: &DetectorConfig,
    deltas: Var<'t>,
    targets: &GridTargets,
) -> Result<Var<'t>> {
    let g = cfg.grid;
    if deltas.value().shape() != [g, g, 4] {
        return Err(Error::ShapeMismatch {
            op: "grid_giou_loss",
            detail: format!("deltas shape {:?}, expected [{g}, {g}, 4]", deltas.value().shape()),
        });
    }
    let tape = deltas.tape();
    let mut cx = Tensor::zeros(&[g, g, 1]);
    let mut cy = Tensor::zeros(&[g, g, 1]);
    for gy in 0..g {
        for gx in 0..g {
            let (ccx, ccy) = cfg.cell_center(gy, gx);
            cx.data_mut()[gy * g + gx] = ccx;
            cy.data_mut()[gy * g + gx] = ccy;
        }
    }
    let cx = tape.constant(cx)?;
    let cy = tape.constant(cy)?;
    let zero = tape.constant(Tensor::zeros(&[g, g, 1]))?;

    let px1 = cx.add(deltas.slice_last(0, 1)?)?;
    let py1 = cy.add(deltas.slice_last(1, 2)?)?;
    let rx2 = cx.add(deltas.slice_last(2, 3)?)?;
    let ry2 = cy.add(deltas.slice_last(3, 4)?)?;
    let min_x2 = px1.add_scalar(MIN_BOX_EXTENT)?;
    let min_y2 = py1.add_scalar(MIN_BOX_EXTENT)?;
    let px2 = rx2.max(min_x2)?;
    let py2 = ry2.max(min_y2)?;

    let [tx1, ty1, tx2, ty2] = absolute_target_planes(cfg, targets);
    // background target planes hold zero-area boxes; nudge them to a valid
    // extent so the giou math stays well-defined, then mask them away
    let bump = |mut t: Tensor, by: f64| -> Tensor {
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            if targets.mask.data()[i] == 0.0 {
                *v += by;
            }
        }
        t
    };
    let tx2 = bump(tx2, MIN_BOX_EXTENT);
    let ty2 = bump(ty2, MIN_BOX_EXTENT);

    let target = [
        tape.constant(tx1)?,
        tape.constant(ty1)?,
        tape.constant(tx2)?,
        tape.constant(ty2)?,
    ];
    let per_cell = giou_core([px1, py1, px2, py2], target, zero)?;
    let reopen = min_x2.sub(rx2)?.max(zero)?.add(min_y2.sub(ry2)?.max(zero)?)?;
    let per_cell = per_cell.add(reopen)?;
    let mask = tape.constant(targets.mask.clone())?;
    let norm = 1.0 / targets.num_pos.max(1) as f64;
    mask.mul(per_cell)?.sum()?.mul_scalar(norm)
}

/// Classification plus regression loss for one raw G×G×(C+4) prediction.
pub fn loss_on_raw<'t>(
    cfg: &DetectorConfig,
    raw: Var<'t>,
    targets: &GridTargets,
) -> Result<Var<'t>> {
    let c = cfg.num_classes;
    let cls = focal_loss(raw.slice_last(0, c)?, targets, Some(FOCAL_ALPHA), FOCAL_GAMMA)?;
    let reg = grid_giou_loss(cfg, raw.slice_last(c, c + 4)?, targets)?;
    cls.add(reg)
}

/// Forward plus loss against an explicit annotation list (ground truth or
/// pseudo-labels).
pub fn loss_on_annotations<'t>(
    cfg: &DetectorConfig,
    tape: &'t Tape,
    vars: &BTreeMap<String, Var<'t>>,
    image: &Tensor,
    annotations: &[Annotation],
) -> Result<Var<'t>> {
    let targets = assign_targets(annotations, cfg)?;
    let raw = forward(cfg, tape, vars, image)?;
    loss_on_raw(cfg, raw, &targets)
}

/// Mean supervised loss over a batch of labeled samples (the per-batch
/// labeled objective). Refuses unlabeled samples before touching their
/// annotations.
pub fn supervised_loss<'t>(
    cfg: &DetectorConfig,
    tape: &'t Tape,
    vars: &BTreeMap<String, Var<'t>>,
    batch: &[&Sample],
) -> Result<Var<'t>> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("supervised_loss: empty batch".to_string()));
    }
    let mut acc: Option<Var<'t>> = None;
    for s in batch {
        if s.role() == Role::Unlabeled {
            return Err(Error::RoleViolation(format!(
                "sample {} is unlabeled; its annotations may not supervise training",
                s.id()
            )));
        }
        let l = loss_on_annotations(cfg, tape, vars, s.image(), s.annotations())?;
        acc = Some(match acc {
            None => l,
            Some(a) => a.add(l)?,
        });
    }
    acc.expect("non-empty batch").mul_scalar(1.0 / batch.len() as f64)
}

/// Loss value without gradient bookkeeping kept around: builds a private
/// tape, evaluates, returns the scalar.
pub fn supervised_loss_value(
    cfg: &DetectorConfig,
    params: &crate::numerics::params::ParamSet,
    batch: &[&Sample],
) -> Result<f64> {
    let tape = Tape::new();
    let vars = params.lease(&tape)?;
    supervised_loss(cfg, &tape, &vars, batch)?.value().item()
}
