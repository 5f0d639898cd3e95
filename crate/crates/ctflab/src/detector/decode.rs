//! Turning raw grid predictions into scored, non-overlapping detections.

use crate::detector::config::DetectorConfig;
use crate::detector::loss::MIN_BOX_EXTENT;
use crate::error::{Error, Result};
use crate::numerics::tape::sigmoid;
use crate::numerics::tensor::Tensor;
use crate::synthdata::types::BBox;

pub const NMS_IOU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: usize,
    pub score: f64,
}

struct Candidate {
    det: Detection,
    cell: usize,
}

/// Decodes one raw G×G×(C+4) prediction: per cell, the best class by
/// sigmoid score; candidates at or above `score_threshold` have their boxes
/// rebuilt from the deltas (degenerate extents clamped, then clipped to the
/// image; boxes that clip below one pixel are dropped). Survivors go through
/// greedy per-class NMS by descending score, ties broken by lower cell
/// index; a retained box suppresses later same-class boxes with IoU strictly
/// above `nms_iou`.
pub fn decode(
    cfg: &DetectorConfig,
    raw: &Tensor,
    score_threshold: f64,
    nms_iou: f64,
) -> Result<Vec<Detection>> {
    let g = cfg.grid;
    let c = cfg.num_classes;
    if raw.shape() != [g, g, cfg.out_channels()] {
        return Err(Error::ShapeMismatch {
            op: "decode",
            detail: format!(
                "raw shape {:?}, expected [{g}, {g}, {}]",
                raw.shape(),
                cfg.out_channels()
            ),
        });
    }
    let size = cfg.image_size as f64;
    let mut candidates: Vec<Candidate> = Vec::new();
    for gy in 0..g {
        for gx in 0..g {
            let cell = gy * g + gx;
            let base = cell * cfg.out_channels();
            let logits = &raw.data()[base..base + c];
            let mut best = 0usize;
            for k in 1..c {
                if logits[k] > logits[best] {
                    best = k;
                }
            }
            let score = sigmoid(logits[best]);
            if score < score_threshold {
                continue;
            }
            let d = &raw.data()[base + c..base + c + 4];
            let (ccx, ccy) = cfg.cell_center(gy, gx);
            let x1 = ccx + d[0];
            let y1 = ccy + d[1];
            let x2 = (ccx + d[2]).max(x1 + MIN_BOX_EXTENT);
            let y2 = (ccy + d[3]).max(y1 + MIN_BOX_EXTENT);
            let unclipped = BBox { x1, y1, x2, y2 };
            if let Some(bbox) = unclipped.clip(size, size) {
                candidates.push(Candidate { det: Detection { bbox, class_id: best, score }, cell });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.det
            .score
            .partial_cmp(&a.det.score)
            .expect("scores are finite")
            .then(a.cell.cmp(&b.cell))
    });
    let mut kept: Vec<Detection> = Vec::new();
    for cand in candidates {
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == cand.det.class_id && k.bbox.iou(&cand.det.bbox) > nms_iou);
        if !suppressed {
            kept.push(cand.det);
        }
    }
    Ok(kept)
}
