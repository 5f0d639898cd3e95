//! Detector shape configuration.

use crate::error::{Error, Result};

/// A single-stage grid detector: `trunk_channels.len()` stride-2 3×3 convs
/// followed by a 3×3 head that emits, per cell, `num_classes` class logits
/// and 4 box-edge offsets (x1, y1, x2, y2 relative to the cell center, in
/// pixels).
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub image_size: usize,
    pub grid: usize,
    pub num_classes: usize,
    pub trunk_channels: Vec<usize>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig { image_size: 64, grid: 8, num_classes: 3, trunk_channels: vec![8, 16, 32] }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trunk_channels.is_empty() || self.trunk_channels.iter().any(|&c| c == 0) {
            return Err(Error::InvalidConfig(format!(
                "trunk_channels must be non-empty and positive, got {:?}",
                self.trunk_channels
            )));
        }
        if self.num_classes == 0 {
            return Err(Error::InvalidConfig("num_classes must be at least 1".to_string()));
        }
        let downsample = 1usize << self.trunk_channels.len();
        if self.image_size == 0 || self.image_size % downsample != 0 {
            return Err(Error::InvalidConfig(format!(
                "image_size {} must be divisible by {downsample} ({} stride-2 convs)",
                self.image_size,
                self.trunk_channels.len()
            )));
        }
        if self.grid != self.image_size / downsample {
            return Err(Error::InvalidConfig(format!(
                "grid {} does not match image_size {} / {downsample}",
                self.grid, self.image_size
            )));
        }
        Ok(())
    }

    /// Convenience constructor that derives the grid from the image size.
    pub fn for_image_size(image_size: usize, num_classes: usize, trunk_channels: Vec<usize>) -> Result<Self> {
        let downsample = 1usize << trunk_channels.len();
        if downsample == 1 || image_size % downsample != 0 {
            return Err(Error::InvalidConfig(format!(
                "image_size {image_size} not divisible by {downsample}"
            )));
        }
        let cfg = DetectorConfig { image_size, grid: image_size / downsample, num_classes, trunk_channels };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Pixels per grid cell along each axis.
    pub fn stride(&self) -> f64 {
        self.image_size as f64 / self.grid as f64
    }

    /// Channels in the raw prediction tensor: class logits plus 4 box deltas.
    pub fn out_channels(&self) -> usize {
        self.num_classes + 4
    }

    /// Center of cell `(gy, gx)` in image pixels.
    pub fn cell_center(&self, gy: usize, gx: usize) -> (f64, f64) {
        let s = self.stride();
        ((gx as f64 + 0.5) * s, (gy as f64 + 0.5) * s)
    }

    /// Cell containing an image point, clamped to the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> (usize, usize) {
        let s = self.stride();
        let gx = ((x / s).floor() as isize).clamp(0, self.grid as isize - 1) as usize;
        let gy = ((y / s).floor() as isize).clamp(0, self.grid as isize - 1) as usize;
        (gy, gx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        assert!(DetectorConfig::default().validate().is_ok());
    }

    #[test]
    fn grid_must_match_downsampling() {
        let bad = DetectorConfig { grid: 7, ..DetectorConfig::default() };
        assert!(bad.validate().is_err());
        let bad_size = DetectorConfig { image_size: 60, grid: 7, ..DetectorConfig::default() };
        assert!(bad_size.validate().is_err());
    }

    #[test]
    fn derived_constructor() {
        let cfg = DetectorConfig::for_image_size(32, 3, vec![8, 16, 32]).unwrap();
        assert_eq!(cfg.grid, 4);
        assert_eq!(cfg.stride(), 8.0);
        assert!(DetectorConfig::for_image_size(33, 3, vec![8, 16, 32]).is_err());
    }

    #[test]
    fn cell_lookups() {
        let cfg = DetectorConfig::default();
        assert_eq!(cfg.cell_center(0, 0), (4.0, 4.0));
        assert_eq!(cfg.cell_center(7, 7), (60.0, 60.0));
        assert_eq!(cfg.cell_of(4.0, 4.0), (0, 0));
        // points on the far edge clamp into the last cell
        assert_eq!(cfg.cell_of(64.0, 64.0), (7, 7));
        assert_eq!(cfg.cell_of(17.0, 9.0), (1, 2));
    }
}
