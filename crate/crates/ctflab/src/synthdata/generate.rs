//! Deterministic scene generation: colored shapes on noisy gray canvases.
//!
//! Every sample is produced from its own random stream derived from
//! `(master_seed, split, index)`, so generation order never matters. Class
//! identity is carried by a dominant color channel: circles are red-heavy,
//! squares green-heavy, triangles blue-heavy, and the background stays gray,
//! which gives tests a pixel-level oracle for "the annotated shape is really
//! inside its box".

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::rng::{stream, StreamId};
use crate::synthdata::types::{AccessGuard, Annotation, BBox, Role, Sample};

pub const CLASS_NAMES: [&str; 3] = ["circle", "square", "triangle"];

/// Margin by which a shape's dominant channel must exceed the other two for
/// the pixel to count as that class's signature.
pub const SIGNATURE_MARGIN: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub image_size: usize,
    pub num_classes: usize,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_val: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub master_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            image_size: 64,
            num_classes: 3,
            n_labeled: 10,
            n_unlabeled: 90,
            n_val: 40,
            min_objects: 1,
            max_objects: 3,
            master_seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 32 {
            return Err(Error::InvalidConfig(format!(
                "image_size must be at least 32, got {}",
                self.image_size
            )));
        }
        if !(1..=CLASS_NAMES.len()).contains(&self.num_classes) {
            return Err(Error::InvalidConfig(format!(
                "num_classes must lie in 1..={} (available shapes), got {}",
                CLASS_NAMES.len(),
                self.num_classes
            )));
        }
        if self.n_labeled < 1 || self.n_unlabeled < 1 || self.n_val < 1 {
            return Err(Error::InvalidConfig("all split counts must be at least 1".to_string()));
        }
        if self.min_objects < 1 || self.min_objects > self.max_objects {
            return Err(Error::InvalidConfig(format!(
                "objects-per-image range {}..={} is invalid",
                self.min_objects, self.max_objects
            )));
        }
        Ok(())
    }
}

/// The three generated splits. All samples share one access guard so a
/// firewall violation anywhere in a run is visible in one place.
#[derive(Debug, Clone)]
pub struct SplitSet {
    pub labeled: Vec<Sample>,
    pub unlabeled: Vec<Sample>,
    pub validation: Vec<Sample>,
    guard: Arc<AccessGuard>,
}

impl SplitSet {
    pub(crate) fn from_parts(
        labeled: Vec<Sample>,
        unlabeled: Vec<Sample>,
        validation: Vec<Sample>,
        guard: Arc<AccessGuard>,
    ) -> Self {
        SplitSet { labeled, unlabeled, validation, guard }
    }

    pub fn guard(&self) -> &Arc<AccessGuard> {
        &self.guard
    }
}

/// True when the pixel's color reads as the given class: the class's
/// dominant channel exceeds both other channels by [`SIGNATURE_MARGIN`].
pub fn class_signature_matches(rgb: [f64; 3], class_id: usize) -> bool {
    let d = rgb[class_id % 3];
    (0..3).filter(|&k| k != class_id % 3).all(|k| d >= rgb[k] + SIGNATURE_MARGIN)
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    // center, radius
    Circle { cx: f64, cy: f64, r: f64 },
    // center, half side
    Square { cx: f64, cy: f64, a: f64 },
    // center, half extents; apex at top, base at bottom
    Triangle { cx: f64, cy: f64, hw: f64, hh: f64 },
}

impl Shape {
    fn bbox(&self) -> BBox {
        let (x1, y1, x2, y2) = match *self {
            Shape::Circle { cx, cy, r } => (cx - r, cy - r, cx + r, cy + r),
            Shape::Square { cx, cy, a } => (cx - a, cy - a, cx + a, cy + a),
            Shape::Triangle { cx, cy, hw, hh } => (cx - hw, cy - hh, cx + hw, cy + hh),
        };
        BBox { x1, y1, x2, y2 }
    }

    fn contains(&self, px: f64, py: f64) -> bool {
        match *self {
            Shape::Circle { cx, cy, r } => {
                (px - cx) * (px - cx) + (py - cy) * (py - cy) <= r * r
            }
            Shape::Square { cx, cy, a } => (px - cx).abs() <= a && (py - cy).abs() <= a,
            Shape::Triangle { cx, cy, hw, hh } => {
                let t = py - (cy - hh);
                t >= 0.0 && t <= 2.0 * hh && (px - cx).abs() <= hw * t / (2.0 * hh)
            }
        }
    }
}

/// A shape to draw plus its fill color.
#[derive(Debug, Clone, Copy)]
struct SceneObject {
    shape: Shape,
    class_id: usize,
    color: [f64; 3],
}

/// Paints objects over a noisy gray canvas. `noise` is the peak amplitude of
/// the background texture; zero gives a perfectly flat background, which the
/// geometric-consistency tests rely on.
fn render_scene(size: usize, objects: &[SceneObject], noise: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let base: f64 = rng.gen_range(0.35..=0.65);
    let mut img = vec![0.0f64; size * size * 3];
    for i in 0..size {
        for j in 0..size {
            let shared = if noise > 0.0 { rng.gen_range(-noise..=noise) } else { 0.0 };
            for k in 0..3 {
                let indep = if noise > 0.0 { rng.gen_range(-noise..=noise) } else { 0.0 };
                img[(i * size + j) * 3 + k] = (base + shared + indep).clamp(0.0, 1.0);
            }
        }
    }
    for obj in objects {
        let b = obj.shape.bbox();
        let j0 = b.x1.floor().max(0.0) as usize;
        let j1 = (b.x2.ceil() as usize).min(size);
        let i0 = b.y1.floor().max(0.0) as usize;
        let i1 = (b.y2.ceil() as usize).min(size);
        for i in i0..i1 {
            for j in j0..j1 {
                if obj.shape.contains(j as f64 + 0.5, i as f64 + 0.5) {
                    for k in 0..3 {
                        img[(i * size + j) * 3 + k] = obj.color[k];
                    }
                }
            }
        }
    }
    Tensor::new(&[size, size, 3], img).expect("rendered values are clamped and finite")
}

fn draw_objects(cfg: &DatasetConfig, rng: &mut ChaCha8Rng) -> Vec<SceneObject> {
    let size = cfg.image_size as f64;
    let count = rng.gen_range(cfg.min_objects..=cfg.max_objects);
    let mut objects: Vec<SceneObject> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut chosen: Option<SceneObject> = None;
        for attempt in 0..20 {
            let class_id = rng.gen_range(0..cfg.num_classes);
            let h1: f64 = rng.gen_range(0.09..=0.21) * size;
            let h2: f64 = rng.gen_range(0.09..=0.21) * size;
            let (hw, hh) = match class_id {
                0 | 1 => (h1, h1),
                _ => (h1, h2),
            };
            let cx = rng.gen_range(1.0 + hw..=size - 1.0 - hw);
            let cy = rng.gen_range(1.0 + hh..=size - 1.0 - hh);
            let shape = match class_id {
                0 => Shape::Circle { cx, cy, r: hw },
                1 => Shape::Square { cx, cy, a: hw },
                _ => Shape::Triangle { cx, cy, hw, hh },
            };
            let dominant = rng.gen_range(0.75..=0.95);
            let o1 = rng.gen_range(0.05..=0.30);
            let o2 = rng.gen_range(0.05..=0.30);
            let mut color = [0.0; 3];
            color[class_id] = dominant;
            let others: Vec<usize> = (0..3).filter(|&k| k != class_id).collect();
            color[others[0]] = o1;
            color[others[1]] = o2;
            let candidate = SceneObject { shape, class_id, color };
            // Keep occlusion mild: a new shape may cover at most 30% of any
            // already placed box, so every drawn shape keeps visible pixels.
            // After 20 rejections the last draw is accepted as-is.
            let b = candidate.shape.bbox();
            let ok = objects.iter().all(|o| {
                let ob = o.shape.bbox();
                let inter = b.intersection_area(&ob);
                inter < 0.3 * ob.area().min(b.area())
            });
            if ok || attempt == 19 {
                chosen = Some(candidate);
                break;
            }
        }
        objects.push(chosen.expect("placement loop always chooses"));
    }
    objects
}

fn generate_sample(
    cfg: &DatasetConfig,
    split: u64,
    index: u64,
    id: u64,
    role: Role,
    guard: Arc<AccessGuard>,
) -> Result<Sample> {
    let mut rng = stream(cfg.master_seed, StreamId::DatasetGen, &[split, index]);
    let objects = draw_objects(cfg, &mut rng);
    let image = render_scene(cfg.image_size, &objects, 0.05, &mut rng);
    let annotations = objects
        .iter()
        .map(|o| Annotation { bbox: o.shape.bbox(), class_id: o.class_id })
        .collect();
    Sample::with_guard(id, image, annotations, role, guard)
}

/// Generates the labeled/unlabeled/validation splits. Fully deterministic in
/// `cfg` (including the master seed); sample ids are globally unique across
/// splits, in the order labeled, unlabeled, validation.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<SplitSet> {
    cfg.validate()?;
    let guard = AccessGuard::new();
    let mut id = 0u64;
    let make = |split: u64, count: usize, role: Role, id: &mut u64| -> Result<Vec<Sample>> {
        let mut out = Vec::with_capacity(count);
        for index in 0..count {
            out.push(generate_sample(cfg, split, index as u64, *id, role, guard.clone())?);
            *id += 1;
        }
        Ok(out)
    };
    let labeled = make(0, cfg.n_labeled, Role::Labeled, &mut id)?;
    let unlabeled = make(1, cfg.n_unlabeled, Role::Unlabeled, &mut id)?;
    let validation = make(2, cfg.n_val, Role::Validation, &mut id)?;
    Ok(SplitSet::from_parts(labeled, unlabeled, validation, guard))
}

/// Test/experiment helper: a single sample with the given seed context and a
/// flat (noise-free) background, so shape pixels are exactly the fill colors.
pub fn generate_clean_sample(cfg: &DatasetConfig, seed_context: u64) -> Result<Sample> {
    cfg.validate()?;
    let mut rng = stream(cfg.master_seed, StreamId::DatasetGen, &[99, seed_context]);
    let objects = draw_objects(cfg, &mut rng);
    let image = render_scene(cfg.image_size, &objects, 0.0, &mut rng);
    let annotations = objects
        .iter()
        .map(|o| Annotation { bbox: o.shape.bbox(), class_id: o.class_id })
        .collect();
    Sample::new(0, image, annotations, Role::Labeled)
}

/// Pixel-scan oracle: true when at least one pixel inside `bbox` carries the
/// class's color signature.
pub fn box_contains_signature(image: &Tensor, bbox: &BBox, class_id: usize) -> bool {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let j0 = bbox.x1.floor().max(0.0) as usize;
    let j1 = (bbox.x2.ceil() as usize).min(w);
    let i0 = bbox.y1.floor().max(0.0) as usize;
    let i1 = (bbox.y2.ceil() as usize).min(h);
    for i in i0..i1 {
        for j in j0..j1 {
            let rgb = [
                image.data()[(i * w + j) * 3],
                image.data()[(i * w + j) * 3 + 1],
                image.data()[(i * w + j) * 3 + 2],
            ];
            if class_signature_matches(rgb, class_id) {
                return true;
            }
        }
    }
    false
}
