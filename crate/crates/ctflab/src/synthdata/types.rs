//! Samples, boxes, roles, and the unlabeled-annotation access guard.

use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Axis-aligned box in pixel coordinates, `x1 < x2`, `y1 < y2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BBox { x1, y1, x2, y2 };
        if !(x1 < x2 && y1 < y2) || [x1, y1, x2, y2].iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain {
                op: "BBox::new",
                detail: format!("degenerate box {b:?}"),
            });
        }
        Ok(b)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Clips to `[0, w] x [0, h]`; `None` when less than one pixel survives
    /// in either dimension.
    pub fn clip(&self, w: f64, h: f64) -> Option<BBox> {
        let x1 = self.x1.clamp(0.0, w);
        let y1 = self.y1.clamp(0.0, h);
        let x2 = self.x2.clamp(0.0, w);
        let y2 = self.y2.clamp(0.0, h);
        if x2 - x1 >= 1.0 && y2 - y1 >= 1.0 {
            Some(BBox { x1, y1, x2, y2 })
        } else {
            None
        }
    }
}

/// A ground-truth or pseudo box with its class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Annotation {
    pub bbox: BBox,
    pub class_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Labeled,
    Unlabeled,
    Validation,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Labeled => "labeled",
            Role::Unlabeled => "unlabeled",
            Role::Validation => "validation",
        }
    }

    pub fn parse(s: &str) -> Result<Role> {
        match s {
            "labeled" => Ok(Role::Labeled),
            "unlabeled" => Ok(Role::Unlabeled),
            "validation" => Ok(Role::Validation),
            other => Err(Error::Domain {
                op: "Role::parse",
                detail: format!("unknown role {other:?}"),
            }),
        }
    }
}

/// Records every read of an unlabeled sample's annotations through the
/// training-facing accessor. A clean training run leaves the log empty.
#[derive(Debug, Default)]
pub struct AccessGuard {
    log: Mutex<Vec<u64>>,
}

impl AccessGuard {
    pub fn new() -> Arc<AccessGuard> {
        Arc::new(AccessGuard::default())
    }

    fn record(&self, sample_id: u64) {
        self.log.lock().expect("guard lock").push(sample_id);
    }

    /// Sample ids whose unlabeled annotations were read, in read order.
    pub fn violations(&self) -> Vec<u64> {
        self.log.lock().expect("guard lock").clone()
    }

    pub fn is_clean(&self) -> bool {
        self.log.lock().expect("guard lock").is_empty()
    }

    pub fn clear(&self) {
        self.log.lock().expect("guard lock").clear();
    }
}

/// Box coordinates are snapped to this grid (2^-20 of a pixel) when a sample
/// is built. On-grid coordinates make mirror transforms exactly reversible:
/// `W - x` is computed without rounding, so flipping twice restores the
/// original bits.
const COORD_GRID: f64 = 1048576.0;

fn snap(v: f64) -> f64 {
    (v * COORD_GRID).round() / COORD_GRID
}

/// One image with its annotations. Cloning shares the access guard, so
/// augmented copies of an unlabeled sample stay protected.
#[derive(Debug, Clone)]
pub struct Sample {
    id: u64,
    image: Tensor,
    annotations: Vec<Annotation>,
    role: Role,
    guard: Arc<AccessGuard>,
}

impl Sample {
    /// Builds a sample, clipping boxes to the image and validating that the
    /// image is H×W×3 with values in `[0, 1]`. Boxes that clip away entirely
    /// are dropped.
    pub fn new(id: u64, image: Tensor, annotations: Vec<Annotation>, role: Role) -> Result<Self> {
        Sample::with_guard(id, image, annotations, role, AccessGuard::new())
    }

    pub(crate) fn with_guard(
        id: u64,
        image: Tensor,
        annotations: Vec<Annotation>,
        role: Role,
        guard: Arc<AccessGuard>,
    ) -> Result<Self> {
        let shape = image.shape();
        if shape.len() != 3 || shape[2] != 3 {
            return Err(Error::ShapeMismatch {
                op: "Sample::new",
                detail: format!("image must be H×W×3, got {shape:?}"),
            });
        }
        if image.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Domain {
                op: "Sample::new",
                detail: "image values must lie in [0, 1]".to_string(),
            });
        }
        let (h, w) = (shape[0] as f64, shape[1] as f64);
        let mut clipped = Vec::with_capacity(annotations.len());
        for ann in annotations {
            if let Some(b) = ann.bbox.clip(w, h) {
                let bbox = BBox {
                    x1: snap(b.x1),
                    y1: snap(b.y1),
                    x2: snap(b.x2),
                    y2: snap(b.y2),
                };
                clipped.push(Annotation { bbox, class_id: ann.class_id });
            }
        }
        Ok(Sample { id, image, annotations: clipped, role, guard })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn image(&self) -> &Tensor {
        &self.image
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn width(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.image.shape()[0]
    }

    /// Training-facing accessor. Reading an unlabeled sample's annotations
    /// through here is recorded in the guard log.
    pub fn annotations(&self) -> &[Annotation] {
        if self.role == Role::Unlabeled {
            self.guard.record(self.id);
        }
        &self.annotations
    }

    /// Evaluation-harness accessor: bypasses the guard. Only measurement
    /// code (validation scoring, hidden-ground-truth oracles) may call this.
    pub fn annotations_for_harness(&self) -> &[Annotation] {
        &self.annotations
    }

    /// Module-internal view for geometric transforms; not a supervision read.
    pub(crate) fn annotations_raw(&self) -> &[Annotation] {
        &self.annotations
    }

    pub(crate) fn guard(&self) -> &Arc<AccessGuard> {
        &self.guard
    }
}
