//! Ground-truth assignment onto the prediction grid.

use crate::detector::config::DetectorConfig;
use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::synthdata::types::Annotation;

/// Per-cell training targets. `class` is G×G×C one-hot (all zero for
/// background cells), `boxes` is G×G×4 edge offsets from the cell center
/// (x1, y1, x2, y2 order, zeros at background), `mask` is G×G×1 with 1.0 at
/// positive cells.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTargets {
    pub class: Tensor,
    pub boxes: Tensor,
    pub mask: Tensor,
    pub num_pos: usize,
}

/// Assigns each annotation to the cell containing its box center. When two
/// boxes land in one cell, the larger area wins; equal areas go to the lower
/// annotation index. Each cell ends up with at most one target.
pub fn assign_targets(annotations: &[Annotation], cfg: &DetectorConfig) -> Result<GridTargets> {
    cfg.validate()?;
    let g = cfg.grid;
    let c = cfg.num_classes;
    let size = cfg.image_size as f64;

    // winner per cell: (annotation index, area)
    let mut winner: Vec<Option<(usize, f64)>> = vec![None; g * g];
    for (idx, ann) in annotations.iter().enumerate() {
        let b = &ann.bbox;
        if ann.class_id >= c {
            return Err(Error::Domain {
                op: "assign_targets",
                detail: format!("class_id {} outside 0..{c}", ann.class_id),
            });
        }
        if b.x1 < 0.0 || b.y1 < 0.0 || b.x2 > size || b.y2 > size {
            return Err(Error::Domain {
                op: "assign_targets",
                detail: format!("box {b:?} outside the {size}×{size} image"),
            });
        }
        let (cx, cy) = b.center();
        let (gy, gx) = cfg.cell_of(cx, cy);
        let cell = gy * g + gx;
        let area = b.area();
        let replace = match winner[cell] {
            None => true,
            Some((_, best_area)) => area > best_area,
        };
        if replace {
            winner[cell] = Some((idx, area));
        }
    }

    let mut class = Tensor::zeros(&[g, g, c]);
    let mut boxes = Tensor::zeros(&[g, g, 4]);
    let mut mask = Tensor::zeros(&[g, g, 1]);
    let mut num_pos = 0usize;
    for gy in 0..g {
        for gx in 0..g {
            let cell = gy * g + gx;
            if let Some((idx, _)) = winner[cell] {
                let ann = &annotations[idx];
                let (ccx, ccy) = cfg.cell_center(gy, gx);
                class.data_mut()[(cell) * c + ann.class_id] = 1.0;
                let bd = boxes.data_mut();
                bd[cell * 4] = ann.bbox.x1 - ccx;
                bd[cell * 4 + 1] = ann.bbox.y1 - ccy;
                bd[cell * 4 + 2] = ann.bbox.x2 - ccx;
                bd[cell * 4 + 3] = ann.bbox.y2 - ccy;
                mask.data_mut()[cell] = 1.0;
                num_pos += 1;
            }
        }
    }
    Ok(GridTargets { class, boxes, mask, num_pos })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::types::BBox;

    fn ann(x1: f64, y1: f64, x2: f64, y2: f64, class_id: usize) -> Annotation {
        Annotation { bbox: BBox::new(x1, y1, x2, y2).unwrap(), class_id }
    }

    #[test]
    fn single_box_lands_in_its_center_cell() {
        let cfg = DetectorConfig::default(); // 8x8 grid, stride 8
        // center (28, 18) -> cell gx=3, gy=2
        let t = assign_targets(&[ann(24.0, 14.0, 32.0, 22.0, 1)], &cfg).unwrap();
        assert_eq!(t.num_pos, 1);
        let cell = 2 * 8 + 3;
        assert_eq!(t.mask.data()[cell], 1.0);
        assert_eq!(t.mask.data().iter().sum::<f64>(), 1.0);
        assert_eq!(t.class.data()[cell * 3 + 1], 1.0);
        // offsets from cell center (28, 20)
        assert_eq!(t.boxes.data()[cell * 4], 24.0 - 28.0);
        assert_eq!(t.boxes.data()[cell * 4 + 1], 14.0 - 20.0);
        assert_eq!(t.boxes.data()[cell * 4 + 2], 32.0 - 28.0);
        assert_eq!(t.boxes.data()[cell * 4 + 3], 22.0 - 20.0);
    }

    #[test]
    fn empty_annotations_all_background() {
        let cfg = DetectorConfig::default();
        let t = assign_targets(&[], &cfg).unwrap();
        assert_eq!(t.num_pos, 0);
        assert!(t.class.data().iter().all(|&v| v == 0.0));
        assert!(t.mask.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shared_cell_goes_to_larger_area_in_both_orders() {
        let cfg = DetectorConfig::default();
        let small = ann(26.0, 26.0, 30.0, 30.0, 0); // center (28,28), area 16
        let large = ann(20.0, 22.0, 36.0, 34.0, 2); // center (28,28), area 192
        for pair in [[small, large], [large, small]] {
            let t = assign_targets(&pair, &cfg).unwrap();
            assert_eq!(t.num_pos, 1);
            let cell = 3 * 8 + 3;
            assert_eq!(t.class.data()[cell * 3 + 2], 1.0, "large box's class wins");
        }
    }

    #[test]
    fn equal_area_tie_goes_to_lower_index() {
        let cfg = DetectorConfig::default();
        let first = ann(26.0, 26.0, 30.0, 30.0, 0);
        let second = ann(25.0, 27.0, 29.0, 31.0, 1); // same area 16, same center cell
        let t = assign_targets(&[first, second], &cfg).unwrap();
        let cell = 3 * 8 + 3;
        assert_eq!(t.class.data()[cell * 3], 1.0, "earlier annotation wins the tie");
    }

    #[test]
    fn boundary_centers_clamp_into_grid() {
        let cfg = DetectorConfig::default();
        // center exactly on the image edge
        let t = assign_targets(&[ann(60.0, 60.0, 64.0, 64.0, 0)], &cfg).unwrap();
        let cell = 7 * 8 + 7;
        assert_eq!(t.mask.data()[cell], 1.0);
    }

    #[test]
    fn rejects_bad_class_or_bounds() {
        let cfg = DetectorConfig::default();
        assert!(assign_targets(&[ann(0.0, 0.0, 4.0, 4.0, 3)], &cfg).is_err());
        assert!(assign_targets(&[ann(0.0, 0.0, 70.0, 4.0, 0)], &cfg).is_err());
    }
}
