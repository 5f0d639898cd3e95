//! Weak and strong augmentation pipelines on fixed-size canvases.
//!
//! A pipeline applies, in order: horizontal flip, scale jitter, color
//! jitter, grayscale, gaussian blur, cutout. The first two are geometric and
//! move boxes with the image; the rest touch pixels only. Random decisions
//! are split from application (`draw_*` vs `apply_*`/`transform_*`) so a
//! caller can apply one geometric draw consistently to an image and to
//! externally held boxes (pseudo-labels riding on a strong view).
//!
//! Scale jitter resamples the content to `round(size*s)` pixels by nearest
//! neighbor, then center-crops (s > 1) or center-pastes over a mean-color
//! canvas (s < 1). Boxes use the effective scale `round(size*s)/size`, which
//! keeps them aligned with the resampled raster exactly. A box survives
//! cropping only if at least [`MIN_VISIBLE_FRACTION`] of it stays on canvas.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::synthdata::types::{Annotation, BBox, Sample};

/// Fraction of a scaled box's area that must survive the crop for the
/// annotation to be kept. A quarter is small enough to keep most objects and
/// large enough that a surviving box always overlaps its shape's pixels.
pub const MIN_VISIBLE_FRACTION: f64 = 0.25;

/// Gray value written into cutout holes.
pub const CUTOUT_FILL: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorJitterSpec {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlurSpec {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoutSpec {
    pub scale_min: f64,
    pub scale_max: f64,
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationSpec {
    pub flip_prob: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub color_jitter: Option<ColorJitterSpec>,
    pub grayscale_prob: f64,
    pub blur: Option<BlurSpec>,
    pub cutout: Vec<CutoutSpec>,
}

fn prob_ok(p: f64) -> bool {
    (0.0..=1.0).contains(&p)
}

impl AugmentationSpec {
    /// No-op pipeline: nothing gated on, scale fixed at 1.
    pub fn identity() -> Self {
        AugmentationSpec {
            flip_prob: 0.0,
            scale_min: 1.0,
            scale_max: 1.0,
            color_jitter: None,
            grayscale_prob: 0.0,
            blur: None,
            cutout: Vec::new(),
        }
    }

    /// Pipeline for labeled batches: flip, wide scale jitter, color jitter,
    /// grayscale, blur — no cutout.
    pub fn labeled(image_size: usize) -> Self {
        let (scale_min, scale_max) = clamp_scale(0.2, 1.8, image_size);
        AugmentationSpec {
            flip_prob: 0.5,
            scale_min,
            scale_max,
            color_jitter: Some(ColorJitterSpec {
                brightness: 0.4,
                contrast: 0.4,
                saturation: 0.4,
                probability: 0.8,
            }),
            grayscale_prob: 0.2,
            blur: Some(BlurSpec { sigma_min: 0.1, sigma_max: 2.0, probability: 0.5 }),
            cutout: Vec::new(),
        }
    }

    /// Weak pipeline for teacher inputs: flip plus mild shrink-only scale,
    /// so no annotation is ever cropped away.
    pub fn weak(image_size: usize) -> Self {
        let (scale_min, scale_max) = clamp_scale(0.625, 1.0, image_size);
        AugmentationSpec {
            flip_prob: 0.5,
            scale_min,
            scale_max,
            color_jitter: None,
            grayscale_prob: 0.0,
            blur: None,
            cutout: Vec::new(),
        }
    }

    /// Strong pipeline for student inputs: everything, including three
    /// independent cutout passes.
    pub fn strong(image_size: usize) -> Self {
        let (scale_min, scale_max) = clamp_scale(0.5, 1.5, image_size);
        AugmentationSpec {
            flip_prob: 0.5,
            scale_min,
            scale_max,
            color_jitter: Some(ColorJitterSpec {
                brightness: 0.4,
                contrast: 0.4,
                saturation: 0.4,
                probability: 0.8,
            }),
            grayscale_prob: 0.2,
            blur: Some(BlurSpec { sigma_min: 0.1, sigma_max: 2.0, probability: 0.5 }),
            cutout: vec![
                CutoutSpec {
                    scale_min: 0.05,
                    scale_max: 0.2,
                    ratio_min: 0.3,
                    ratio_max: 3.3,
                    probability: 0.7,
                },
                CutoutSpec {
                    scale_min: 0.02,
                    scale_max: 0.2,
                    ratio_min: 0.1,
                    ratio_max: 6.0,
                    probability: 0.5,
                },
                CutoutSpec {
                    scale_min: 0.02,
                    scale_max: 0.2,
                    ratio_min: 0.05,
                    ratio_max: 8.0,
                    probability: 0.3,
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !prob_ok(self.flip_prob) {
            problems.push(format!("flip_prob {} outside [0,1]", self.flip_prob));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max) {
            problems.push(format!("scale range ({}, {})", self.scale_min, self.scale_max));
        }
        if let Some(cj) = &self.color_jitter {
            if !prob_ok(cj.probability) {
                problems.push(format!("color jitter probability {}", cj.probability));
            }
            for (name, v) in
                [("brightness", cj.brightness), ("contrast", cj.contrast), ("saturation", cj.saturation)]
            {
                if !(0.0..=1.0).contains(&v) {
                    problems.push(format!("color jitter {name} {v} outside [0,1]"));
                }
            }
        }
        if !prob_ok(self.grayscale_prob) {
            problems.push(format!("grayscale_prob {}", self.grayscale_prob));
        }
        if let Some(b) = &self.blur {
            if !prob_ok(b.probability) {
                problems.push(format!("blur probability {}", b.probability));
            }
            if !(b.sigma_min > 0.0 && b.sigma_min <= b.sigma_max) {
                problems.push(format!("blur sigma range ({}, {})", b.sigma_min, b.sigma_max));
            }
        }
        for (i, c) in self.cutout.iter().enumerate() {
            if !prob_ok(c.probability) {
                problems.push(format!("cutout[{i}] probability {}", c.probability));
            }
            if !(c.scale_min > 0.0 && c.scale_min <= c.scale_max && c.scale_max <= 1.0) {
                problems.push(format!("cutout[{i}] scale range ({}, {})", c.scale_min, c.scale_max));
            }
            if !(c.ratio_min > 0.0 && c.ratio_min <= c.ratio_max) {
                problems.push(format!("cutout[{i}] ratio range ({}, {})", c.ratio_min, c.ratio_max));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("augmentation spec: {}", problems.join("; "))))
        }
    }
}

/// Clamps a scale range so the resampled content keeps a short side of at
/// least 32 pixels.
fn clamp_scale(lo: f64, hi: f64, image_size: usize) -> (f64, f64) {
    let floor = 32.0 / image_size as f64;
    let lo = lo.max(floor);
    (lo, hi.max(lo))
}

/// The geometric half of one augmentation draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeomDraw {
    pub flip: bool,
    pub scale: f64,
}

impl GeomDraw {
    pub fn identity() -> Self {
        GeomDraw { flip: false, scale: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorDraw {
    pub brightness: f64,
    pub contrast: f64,
    pub gains: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoutRect {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

/// The photometric half of one augmentation draw.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotoDraw {
    pub color: Option<ColorDraw>,
    pub grayscale: bool,
    pub blur_sigma: Option<f64>,
    pub cutouts: Vec<CutoutRect>,
}

impl PhotoDraw {
    pub fn identity() -> Self {
        PhotoDraw { color: None, grayscale: false, blur_sigma: None, cutouts: Vec::new() }
    }
}

pub fn draw_geometric(spec: &AugmentationSpec, rng: &mut ChaCha8Rng) -> GeomDraw {
    let flip = rng.gen::<f64>() < spec.flip_prob;
    let scale = rng.gen_range(spec.scale_min..=spec.scale_max);
    GeomDraw { flip, scale }
}

pub fn draw_photometric(
    spec: &AugmentationSpec,
    image_size: usize,
    rng: &mut ChaCha8Rng,
) -> PhotoDraw {
    let color = spec.color_jitter.as_ref().and_then(|cj| {
        if rng.gen::<f64>() < cj.probability {
            Some(ColorDraw {
                brightness: rng.gen_range(1.0 - cj.brightness..=1.0 + cj.brightness),
                contrast: rng.gen_range(1.0 - cj.contrast..=1.0 + cj.contrast),
                gains: [
                    rng.gen_range(1.0 - cj.saturation..=1.0 + cj.saturation),
                    rng.gen_range(1.0 - cj.saturation..=1.0 + cj.saturation),
                    rng.gen_range(1.0 - cj.saturation..=1.0 + cj.saturation),
                ],
            })
        } else {
            None
        }
    });
    let grayscale = rng.gen::<f64>() < spec.grayscale_prob;
    let blur_sigma = spec.blur.as_ref().and_then(|b| {
        if rng.gen::<f64>() < b.probability {
            Some(rng.gen_range(b.sigma_min..=b.sigma_max))
        } else {
            None
        }
    });
    let mut cutouts = Vec::new();
    for c in &spec.cutout {
        if rng.gen::<f64>() < c.probability {
            let area = rng.gen_range(c.scale_min..=c.scale_max) * (image_size * image_size) as f64;
            let ratio = rng.gen_range(c.ratio_min.ln()..=c.ratio_max.ln()).exp();
            let w = ((area * ratio).sqrt().round() as usize).clamp(1, image_size);
            let h = ((area / ratio).sqrt().round() as usize).clamp(1, image_size);
            let x0 = rng.gen_range(0..=image_size - w);
            let y0 = rng.gen_range(0..=image_size - h);
            cutouts.push(CutoutRect { x0, y0, w, h });
        }
    }
    PhotoDraw { color, grayscale, blur_sigma, cutouts }
}

/// How a scale draw lands on an integer raster: content side length and the
/// crop (positive) or pad (negative) offset along both axes.
fn scale_plan(size: usize, scale: f64) -> (usize, f64, i64) {
    let content = ((size as f64 * scale).round() as usize).max(1);
    let s_eff = content as f64 / size as f64;
    let offset = if content >= size {
        ((content - size) / 2) as i64
    } else {
        -(((size - content) / 2) as i64)
    };
    (content, s_eff, offset)
}

/// Applies flip and scale to a square image.
pub fn transform_image(image: &Tensor, draw: &GeomDraw) -> Result<Tensor> {
    let shape = image.shape();
    if shape.len() != 3 || shape[0] != shape[1] || shape[2] != 3 {
        return Err(Error::ShapeMismatch {
            op: "transform_image",
            detail: format!("expected square H×H×3 image, got {shape:?}"),
        });
    }
    let size = shape[0];
    let src = image.data();
    let mut work: Vec<f64> = if draw.flip {
        let mut v = vec![0.0; src.len()];
        for i in 0..size {
            for j in 0..size {
                for k in 0..3 {
                    v[(i * size + j) * 3 + k] = src[(i * size + (size - 1 - j)) * 3 + k];
                }
            }
        }
        v
    } else {
        src.to_vec()
    };

    let (content, _, offset) = scale_plan(size, draw.scale);
    if content != size {
        // nearest-neighbor resample to content×content
        let mut scaled = vec![0.0; content * content * 3];
        for i in 0..content {
            let si = i * size / content;
            for j in 0..content {
                let sj = j * size / content;
                for k in 0..3 {
                    scaled[(i * content + j) * 3 + k] = work[(si * size + sj) * 3 + k];
                }
            }
        }
        let mut canvas = vec![0.0; size * size * 3];
        if offset >= 0 {
            // crop: canvas pixel (i,j) = scaled (i+o, j+o)
            let o = offset as usize;
            for i in 0..size {
                for j in 0..size {
                    for k in 0..3 {
                        canvas[(i * size + j) * 3 + k] =
                            scaled[((i + o) * content + (j + o)) * 3 + k];
                    }
                }
            }
        } else {
            // pad: fill with the content's per-channel mean, paste centered
            let o = (-offset) as usize;
            let mut mean = [0.0f64; 3];
            for px in 0..content * content {
                for k in 0..3 {
                    mean[k] += scaled[px * 3 + k];
                }
            }
            for m in &mut mean {
                *m /= (content * content) as f64;
            }
            for i in 0..size {
                for j in 0..size {
                    for k in 0..3 {
                        canvas[(i * size + j) * 3 + k] = mean[k];
                    }
                }
            }
            for i in 0..content {
                for j in 0..content {
                    for k in 0..3 {
                        canvas[((i + o) * size + (j + o)) * 3 + k] =
                            scaled[(i * content + j) * 3 + k];
                    }
                }
            }
        }
        work = canvas;
    }
    Tensor::new(&[size, size, 3], work)
}

/// Maps one box through a geometric draw on a `size`-pixel square canvas.
/// `None` when the box is cropped below [`MIN_VISIBLE_FRACTION`] of its area
/// or below one pixel of extent.
pub fn transform_box(bbox: &BBox, draw: &GeomDraw, size: usize) -> Option<BBox> {
    let s = size as f64;
    let mut b = *bbox;
    if draw.flip {
        b = BBox { x1: s - bbox.x2, y1: bbox.y1, x2: s - bbox.x1, y2: bbox.y2 };
    }
    let (_, s_eff, offset) = scale_plan(size, draw.scale);
    let o = offset as f64;
    let scaled = BBox {
        x1: b.x1 * s_eff - o,
        y1: b.y1 * s_eff - o,
        x2: b.x2 * s_eff - o,
        y2: b.y2 * s_eff - o,
    };
    let clipped = scaled.clip(s, s)?;
    if clipped.area() < MIN_VISIBLE_FRACTION * scaled.area() {
        return None;
    }
    Some(clipped)
}

/// Applies color jitter, grayscale, blur, and cutout to a square image.
pub fn apply_photometric(image: &Tensor, draw: &PhotoDraw) -> Result<Tensor> {
    let shape = image.shape();
    if shape.len() != 3 || shape[0] != shape[1] || shape[2] != 3 {
        return Err(Error::ShapeMismatch {
            op: "apply_photometric",
            detail: format!("expected square H×H×3 image, got {shape:?}"),
        });
    }
    let size = shape[0];
    let mut v = image.data().to_vec();

    if let Some(c) = &draw.color {
        for x in v.iter_mut() {
            *x = (*x * c.brightness).clamp(0.0, 1.0);
        }
        let mean: f64 = v.iter().sum::<f64>() / v.len() as f64;
        for x in v.iter_mut() {
            *x = (mean + c.contrast * (*x - mean)).clamp(0.0, 1.0);
        }
        for (idx, x) in v.iter_mut().enumerate() {
            *x = (*x * c.gains[idx % 3]).clamp(0.0, 1.0);
        }
    }
    if draw.grayscale {
        for px in 0..size * size {
            let luma =
                0.299 * v[px * 3] + 0.587 * v[px * 3 + 1] + 0.114 * v[px * 3 + 2];
            for k in 0..3 {
                v[px * 3 + k] = luma;
            }
        }
    }
    if let Some(sigma) = draw.blur_sigma {
        v = gaussian_blur(&v, size, sigma);
    }
    for r in &draw.cutouts {
        for i in r.y0..(r.y0 + r.h).min(size) {
            for j in r.x0..(r.x0 + r.w).min(size) {
                for k in 0..3 {
                    v[(i * size + j) * 3 + k] = CUTOUT_FILL;
                }
            }
        }
    }
    Tensor::new(&[size, size, 3], v)
}

/// Separable gaussian blur with edge replication.
fn gaussian_blur(v: &[f64], size: usize, sigma: f64) -> Vec<f64> {
    let radius = ((3.0 * sigma).ceil() as usize).clamp(1, size - 1);
    let mut kernel = Vec::with_capacity(2 * radius + 1);
    for t in -(radius as i64)..=(radius as i64) {
        kernel.push((-(t * t) as f64 / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= norm;
    }
    let at = |buf: &[f64], i: i64, j: i64, k: usize| -> f64 {
        let i = i.clamp(0, size as i64 - 1) as usize;
        let j = j.clamp(0, size as i64 - 1) as usize;
        buf[(i * size + j) * 3 + k]
    };
    // horizontal pass
    let mut tmp = vec![0.0; v.len()];
    for i in 0..size {
        for j in 0..size {
            for k in 0..3 {
                let mut acc = 0.0;
                for (ti, w) in kernel.iter().enumerate() {
                    let t = ti as i64 - radius as i64;
                    acc += w * at(v, i as i64, j as i64 + t, k);
                }
                tmp[(i * size + j) * 3 + k] = acc;
            }
        }
    }
    // vertical pass
    let mut out = vec![0.0; v.len()];
    for i in 0..size {
        for j in 0..size {
            for k in 0..3 {
                let mut acc = 0.0;
                for (ti, w) in kernel.iter().enumerate() {
                    let t = ti as i64 - radius as i64;
                    acc += w * at(&tmp, i as i64 + t, j as i64, k);
                }
                out[(i * size + j) * 3 + k] = acc.clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// Applies pre-drawn geometric and photometric decisions to a sample. The
/// result keeps the sample's id, role, and guard.
pub fn augment_with_draws(sample: &Sample, geom: &GeomDraw, photo: &PhotoDraw) -> Result<Sample> {
    let size = sample.width();
    let image = transform_image(sample.image(), geom)?;
    let image = apply_photometric(&image, photo)?;
    let annotations: Vec<Annotation> = sample
        .annotations_raw()
        .iter()
        .filter_map(|a| {
            transform_box(&a.bbox, geom, size).map(|bbox| Annotation { bbox, class_id: a.class_id })
        })
        .collect();
    Sample::with_guard(sample.id(), image, annotations, sample.role(), sample.guard().clone())
}

/// Full augmentation: draws every decision from `rng`, then applies them.
pub fn augment(sample: &Sample, spec: &AugmentationSpec, rng: &mut ChaCha8Rng) -> Result<Sample> {
    spec.validate()?;
    let geom = draw_geometric(spec, rng);
    let photo = draw_photometric(spec, sample.width(), rng);
    augment_with_draws(sample, &geom, &photo)
}

/// Mirrors a sample about the vertical axis: box (x1,y1,x2,y2) becomes
/// (W−x2, y1, W−x1, y2).
pub fn flip_horizontal(sample: &Sample) -> Sample {
    let draw = GeomDraw { flip: true, scale: 1.0 };
    augment_with_draws(sample, &draw, &PhotoDraw::identity())
        .expect("flip of a valid sample cannot fail")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamId};
    use crate::synthdata::generate::{
        box_contains_signature, generate_clean_sample, generate_dataset, DatasetConfig,
    };
    use crate::synthdata::types::Role;

    fn sample64(seed: u64) -> Sample {
        let cfg = DatasetConfig { master_seed: seed, ..DatasetConfig::default() };
        generate_dataset(&cfg).unwrap().labeled.into_iter().next().unwrap()
    }

    #[test]
    fn identity_spec_is_identity() {
        let s = sample64(2);
        let mut rng = stream(0, StreamId::AugLabeled, &[0]);
        let out = augment(&s, &AugmentationSpec::identity(), &mut rng).unwrap();
        assert_eq!(out.image(), s.image());
        assert_eq!(out.annotations(), s.annotations());
    }

    #[test]
    fn flip_known_coordinates() {
        let img = Tensor::full(&[64, 64, 3], 0.5);
        let ann = Annotation { bbox: BBox::new(10.0, 5.0, 20.0, 15.0).unwrap(), class_id: 0 };
        let s = Sample::new(0, img, vec![ann], Role::Labeled).unwrap();
        let flipped = flip_horizontal(&s);
        assert_eq!(flipped.annotations()[0].bbox, BBox::new(44.0, 5.0, 54.0, 15.0).unwrap());
    }

    #[test]
    fn flip_is_involution() {
        let s = sample64(3);
        let twice = flip_horizontal(&flip_horizontal(&s));
        assert_eq!(twice.image(), s.image());
        assert_eq!(twice.annotations(), s.annotations());
    }

    #[test]
    fn flip_mirrors_pixels() {
        let s = sample64(4);
        let f = flip_horizontal(&s);
        let size = s.width();
        for i in 0..size {
            for j in 0..size {
                for k in 0..3 {
                    assert_eq!(
                        f.image().data()[(i * size + j) * 3 + k],
                        s.image().data()[(i * size + (size - 1 - j)) * 3 + k]
                    );
                }
            }
        }
    }

    #[test]
    fn weak_preserves_annotation_count() {
        for seed in 0..8 {
            let s = sample64(seed);
            let mut rng = stream(seed, StreamId::AugWeak, &[seed]);
            let out = augment(&s, &AugmentationSpec::weak(64), &mut rng).unwrap();
            assert_eq!(out.annotations().len(), s.annotations().len());
        }
    }

    #[test]
    fn cutout_changes_pixels_not_annotations() {
        let s = sample64(5);
        let spec = AugmentationSpec {
            cutout: vec![CutoutSpec {
                scale_min: 0.1,
                scale_max: 0.2,
                ratio_min: 0.5,
                ratio_max: 2.0,
                probability: 1.0,
            }],
            ..AugmentationSpec::identity()
        };
        let mut rng = stream(1, StreamId::AugStrong, &[5]);
        let out = augment(&s, &spec, &mut rng).unwrap();
        assert_eq!(out.annotations(), s.annotations());
        let sum_in: f64 = s.image().data().iter().sum();
        let sum_out: f64 = out.image().data().iter().sum();
        assert_ne!(sum_in, sum_out);
    }

    #[test]
    fn augmentation_is_deterministic() {
        let s = sample64(6);
        let spec = AugmentationSpec::strong(64);
        let a = augment(&s, &spec, &mut stream(9, StreamId::AugStrong, &[1, 2])).unwrap();
        let b = augment(&s, &spec, &mut stream(9, StreamId::AugStrong, &[1, 2])).unwrap();
        assert_eq!(a.image(), b.image());
        assert_eq!(a.annotations(), b.annotations());
        let c = augment(&s, &spec, &mut stream(9, StreamId::AugStrong, &[1, 3])).unwrap();
        assert!(c.image() != a.image() || c.annotations() != a.annotations());
    }

    #[test]
    fn geometric_consistency_under_flip_and_scale() {
        let cfg = DatasetConfig { master_seed: 40, ..DatasetConfig::default() };
        for ctx in 0..6 {
            let s = generate_clean_sample(&cfg, ctx).unwrap();
            for (flip, scale) in
                [(true, 1.0), (false, 0.7), (true, 1.4), (false, 1.8), (true, 0.55)]
            {
                let draw = GeomDraw { flip, scale };
                let out = augment_with_draws(&s, &draw, &PhotoDraw::identity()).unwrap();
                for ann in out.annotations() {
                    assert!(
                        box_contains_signature(out.image(), &ann.bbox, ann.class_id),
                        "ctx {ctx} flip {flip} scale {scale} box {:?}",
                        ann.bbox
                    );
                }
            }
        }
    }

    #[test]
    fn upscale_crop_drops_offcanvas_boxes() {
        let img = Tensor::full(&[64, 64, 3], 0.5);
        // a box hugging the left edge disappears after a 1.8x center crop
        let edge = Annotation { bbox: BBox::new(0.0, 28.0, 6.0, 36.0).unwrap(), class_id: 0 };
        let center = Annotation { bbox: BBox::new(28.0, 28.0, 36.0, 36.0).unwrap(), class_id: 1 };
        let s = Sample::new(0, img, vec![edge, center], Role::Labeled).unwrap();
        let out =
            augment_with_draws(&s, &GeomDraw { flip: false, scale: 1.8 }, &PhotoDraw::identity())
                .unwrap();
        assert_eq!(out.annotations().len(), 1);
        assert_eq!(out.annotations()[0].class_id, 1);
    }

    #[test]
    fn grayscale_kills_color_dominance() {
        let cfg = DatasetConfig { master_seed: 41, ..DatasetConfig::default() };
        let s = generate_clean_sample(&cfg, 0).unwrap();
        let draw = PhotoDraw { grayscale: true, ..PhotoDraw::identity() };
        let out = augment_with_draws(&s, &GeomDraw::identity(), &draw).unwrap();
        let d = out.image().data();
        for px in 0..out.width() * out.width() {
            assert_eq!(d[px * 3], d[px * 3 + 1]);
            assert_eq!(d[px * 3 + 1], d[px * 3 + 2]);
        }
    }

    #[test]
    fn blur_preserves_range_and_changes_image() {
        let s = sample64(7);
        let draw = PhotoDraw { blur_sigma: Some(1.5), ..PhotoDraw::identity() };
        let out = augment_with_draws(&s, &GeomDraw::identity(), &draw).unwrap();
        assert!(out.image().data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_ne!(out.image().data(), s.image().data());
    }

    #[test]
    fn spec_validation_rejects_bad_values() {
        let mut spec = AugmentationSpec::identity();
        spec.flip_prob = 1.5;
        assert!(spec.validate().is_err());
        let mut spec = AugmentationSpec::identity();
        spec.scale_min = 0.0;
        assert!(spec.validate().is_err());
        assert!(AugmentationSpec::strong(64).validate().is_ok());
        assert!(AugmentationSpec::weak(32).validate().is_ok());
        assert!(AugmentationSpec::labeled(32).validate().is_ok());
    }

    #[test]
    fn scale_clamp_keeps_content_at_least_32() {
        let spec = AugmentationSpec::labeled(32);
        assert_eq!(spec.scale_min, 1.0);
        let spec64 = AugmentationSpec::labeled(64);
        assert_eq!(spec64.scale_min, 0.5);
        let weak32 = AugmentationSpec::weak(32);
        assert_eq!((weak32.scale_min, weak32.scale_max), (1.0, 1.0));
    }
}
