//! Occlusion masks from geometry.
//!
//! Masks either come from files produced by an external segmenter or are
//! generated here: an iris annulus, or a box centered in the frame.

use crate::error::{Error, Result};
use crate::image::Mask;

/// Pupil and limbus circles sharing one center, in pixel coordinates.
///
/// Pixel `(x, y)` has its center at coordinates `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnulusSpec {
    pub center_x: f64,
    pub center_y: f64,
    pub pupil_radius: f64,
    pub iris_radius: f64,
}

/// Pupil radius of the generated default mask, as a fraction of the short side.
pub const DEFAULT_PUPIL_FRACTION: f64 = 0.2;
/// Iris radius of the generated default mask, as a fraction of the short side.
pub const DEFAULT_IRIS_FRACTION: f64 = 0.45;

impl AnnulusSpec {
    /// Annulus centered in a `width x height` frame with the default radii.
    pub fn centered(width: usize, height: usize) -> Self {
        let short = width.min(height) as f64;
        Self {
            center_x: (width as f64 - 1.0) / 2.0,
            center_y: (height as f64 - 1.0) / 2.0,
            pupil_radius: DEFAULT_PUPIL_FRACTION * short,
            iris_radius: DEFAULT_IRIS_FRACTION * short,
        }
    }

    fn validate(&self, width: usize, height: usize) -> Result<()> {
        if !(self.pupil_radius > 0.0 && self.pupil_radius < self.iris_radius) {
            return Err(Error::InvalidInput(format!(
                "annulus radii must satisfy 0 < pupil ({}) < iris ({})",
                self.pupil_radius, self.iris_radius
            )));
        }
        let inside = |c: f64, n: usize| c >= 0.0 && c <= n as f64 - 1.0;
        if !inside(self.center_x, width) || !inside(self.center_y, height) {
            return Err(Error::InvalidInput(format!(
                "annulus center ({}, {}) lies outside the {width}x{height} image",
                self.center_x, self.center_y
            )));
        }
        Ok(())
    }
}

/// Marks pixels whose center lies within `[pupil_radius, iris_radius]` of the
/// annulus center. Radii larger than the frame are clipped.
pub fn annulus_mask(spec: &AnnulusSpec, width: usize, height: usize) -> Result<Mask> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidInput(format!(
            "mask dimensions must be positive, got {width}x{height}"
        )));
    }
    spec.validate(width, height)?;
    Mask::from_fn(width, height, |x, y| {
        let dx = x as f64 - spec.center_x;
        let dy = y as f64 - spec.center_y;
        let r = (dx * dx + dy * dy).sqrt();
        spec.pupil_radius <= r && r <= spec.iris_radius
    })
}

/// Axis-aligned box of `round(fraction * side)` pixels per side, centered
/// (left/top offset rounds down when the slack is odd).
pub fn centered_box_mask(width: usize, height: usize, fraction: f64) -> Result<Mask> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidInput(format!(
            "mask dimensions must be positive, got {width}x{height}"
        )));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "box fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let bw = (fraction * width as f64).round() as usize;
    let bh = (fraction * height as f64).round() as usize;
    let x0 = (width - bw) / 2;
    let y0 = (height - bh) / 2;
    Mask::from_fn(width, height, |x, y| {
        (x0..x0 + bw).contains(&x) && (y0..y0 + bh).contains(&y)
    })
}

/// Pixelwise AND of two masks of equal size.
pub fn intersect_masks(a: &Mask, b: &Mask) -> Result<Mask> {
    if a.dims() != b.dims() {
        return Err(Error::dims(a.dims(), b.dims()));
    }
    let bits = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&p, &q)| p && q)
        .collect();
    Mask::new(a.width(), a.height(), bits)
}

/// Mask used when a manifest row provides none.
pub fn default_iris_mask(width: usize, height: usize) -> Result<Mask> {
    annulus_mask(&AnnulusSpec::centered(width, height), width, height)
}
