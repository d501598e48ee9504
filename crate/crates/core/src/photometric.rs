//! Two-illuminant photometric stereo and the normal-variance PAD score.
//!
//! Each pixel's intensities under the `k` lights satisfy `I = L n̂` with `L`
//! the `k x 3` matrix of light directions and `n̂ = c n` the albedo-scaled
//! normal. `n̂` is recovered with the Moore-Penrose pseudoinverse of `L`:
//! `(LᵀL)⁻¹Lᵀ` when `L` has full column rank (`k >= 3`) and the minimum-norm
//! form `Lᵀ(LLᵀ)⁻¹` for two lights, where `LᵀL` is singular. Unit normals are
//! `n̂ / ‖n̂‖`, so a uniform albedo drops out.
//!
//! The PAD score is the population variance of `‖nᵢ − n̄‖` over the valid
//! pixels: a flat iris yields almost identical normals, while a textured lens
//! produces an irregular reconstructed surface.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{Mask, NirImage};
use crate::segmentation::intersect_masks;
use crate::threshold;
use crate::types::{CapturePair, Class, Decision, Label, LightingGeometry, Source, Vec3};

/// Pixels whose unnormalized normal is not longer than this are left invalid.
pub const NORM_EPSILON: f64 = 1e-8;

/// Fraction of the combined mask area that must hold valid normals before a
/// sample is scored.
pub const MIN_VALID_FRACTION: f64 = 0.01;

/// Tolerance on `det(L Lᵀ)` (or `det(LᵀL)`) below which lights are
/// considered degenerate.
pub const COLLINEAR_TOLERANCE: f64 = 1e-9;

/// Pseudoinverse of the light matrix, one column per light.
///
/// `n̂ = Σᵢ columns[i] · Iᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LightPseudoInverse {
    columns: Vec<Vec3>,
}

impl LightPseudoInverse {
    pub fn new(lights: &LightingGeometry) -> Result<Self> {
        let l = lights.directions();
        let columns = if l.len() == 2 {
            // Lᵀ (L Lᵀ)⁻¹, written symmetrically so swapping the lights swaps
            // the columns bit for bit.
            let (a, b, d) = (l[0].dot(l[0]), l[0].dot(l[1]), l[1].dot(l[1]));
            let det = a * d - b * b;
            if det.abs() < COLLINEAR_TOLERANCE {
                return Err(Error::CollinearLights { det });
            }
            vec![(l[0] * d - l[1] * b) / det, (l[1] * a - l[0] * b) / det]
        } else {
            // (LᵀL)⁻¹ Lᵀ via the adjugate of the 3x3 Gram matrix
            let mut g = [[0.0; 3]; 3];
            for d in l {
                let v = [d.x, d.y, d.z];
                for r in 0..3 {
                    for c in 0..3 {
                        g[r][c] += v[r] * v[c];
                    }
                }
            }
            let inv = invert3(&g).ok_or(Error::CollinearLights { det: det3(&g) })?;
            l.iter()
                .map(|d| {
                    let v = [d.x, d.y, d.z];
                    let row = |r: usize| inv[r][0] * v[0] + inv[r][1] * v[1] + inv[r][2] * v[2];
                    Vec3::new(row(0), row(1), row(2))
                })
                .collect()
        };
        Ok(Self { columns })
    }

    pub fn columns(&self) -> &[Vec3] {
        &self.columns
    }

    /// Unnormalized normal for one pixel's intensity vector.
    #[inline]
    pub fn apply(&self, intensities: &[f64]) -> Vec3 {
        debug_assert_eq!(intensities.len(), self.columns.len());
        self.columns
            .iter()
            .zip(intensities)
            .fold(Vec3::ZERO, |acc, (&p, &i)| acc + p * i)
    }
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn invert3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let det = det3(m);
    if det.abs() < COLLINEAR_TOLERANCE {
        return None;
    }
    let mut inv = [[0.0; 3]; 3];
    for (r, row) in inv.iter_mut().enumerate() {
        for (c, out) in row.iter_mut().enumerate() {
            // cofactor of (c, r) gives the adjugate entry (r, c)
            let (r0, r1) = match c {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let (c0, c1) = match r {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let minor = m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
            let sign = if (r + c) % 2 == 0 { 1.0 } else { -1.0 };
            *out = sign * minor / det;
        }
    }
    Some(inv)
}

/// Per-pixel unit normals; invalid pixels hold [`Vec3::ZERO`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    width: usize,
    height: usize,
    normals: Vec<Vec3>,
    valid: Vec<bool>,
}

impl NormalMap {
    pub fn new(width: usize, height: usize, normals: Vec<Vec3>, valid: Vec<bool>) -> Result<Self> {
        if normals.len() != width * height || valid.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "normal map {width}x{height} needs {} entries",
                width * height
            )));
        }
        let mut normals = normals;
        for (n, &ok) in normals.iter_mut().zip(&valid) {
            if !ok {
                *n = Vec3::ZERO;
            } else if (n.norm() - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidInput(format!(
                    "valid normal {n:?} is not unit length"
                )));
            }
        }
        Ok(Self {
            width,
            height,
            normals,
            valid,
        })
    }

    /// Builds a map from a list of valid normals laid out in one row.
    pub fn from_normals(normals: Vec<Vec3>) -> Result<Self> {
        let n = normals.len();
        Self::new(n, 1, normals, vec![true; n])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> Option<Vec3> {
        let i = y * self.width + x;
        self.valid[i].then_some(self.normals[i])
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn valid_normals(&self) -> impl Iterator<Item = Vec3> + '_ {
        self.normals
            .iter()
            .zip(&self.valid)
            .filter_map(|(&n, &v)| v.then_some(n))
    }

    /// Text export: `width height`, then `x y nx ny nz valid` per pixel.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.normals.len() * 48);
        let _ = writeln!(s, "{} {}", self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let i = y * self.width + x;
                let n = self.normals[i];
                let _ = writeln!(
                    s,
                    "{x} {y} {} {} {} {}",
                    n.x,
                    n.y,
                    n.z,
                    u8::from(self.valid[i])
                );
            }
        }
        s
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(origin, 1, "empty file"))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(origin, 1, "header must be `width height`"))?;
        let [width, height] = dims[..] else {
            return Err(Error::parse(origin, 1, "header must be `width height`"));
        };
        let mut normals = vec![Vec3::ZERO; width * height];
        let mut valid = vec![false; width * height];
        let mut seen = 0;
        for (i, line) in lines {
            let bad = |m: &str| Error::parse(origin, i + 1, m.to_string());
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 6 {
                return Err(bad("expected `x y nx ny nz valid`"));
            }
            let x: usize = f[0].parse().map_err(|_| bad("bad x"))?;
            let y: usize = f[1].parse().map_err(|_| bad("bad y"))?;
            if x >= width || y >= height {
                return Err(bad("pixel outside the declared size"));
            }
            let c = |s: &str| s.parse::<f64>().map_err(|_| bad("bad normal component"));
            normals[y * width + x] = Vec3::new(c(f[2])?, c(f[3])?, c(f[4])?);
            valid[y * width + x] = match f[5] {
                "1" => true,
                "0" => false,
                _ => return Err(bad("valid flag must be 0 or 1")),
            };
            seen += 1;
        }
        if seen != width * height {
            return Err(Error::parse(
                origin,
                seen + 1,
                format!("expected {} pixel lines, found {seen}", width * height),
            ));
        }
        Self::new(width, height, normals, valid)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

/// Recovers unit normals inside `mask` from `images[i]` lit by light `i`.
pub fn estimate_normals_from(
    images: &[&NirImage],
    mask: &Mask,
    lights: &LightingGeometry,
) -> Result<NormalMap> {
    if images.len() != lights.len() {
        return Err(Error::InvalidInput(format!(
            "{} images for {} lights",
            images.len(),
            lights.len()
        )));
    }
    let dims = mask.dims();
    for img in images {
        if img.dims() != dims {
            return Err(Error::dims(dims, img.dims()));
        }
    }
    let pinv = LightPseudoInverse::new(lights)?;
    let (w, h) = dims;
    let mut normals = vec![Vec3::ZERO; w * h];
    let mut valid = vec![false; w * h];
    let mut stack = vec![0.0; images.len()];
    for i in 0..w * h {
        if !mask.as_slice()[i] {
            continue;
        }
        for (slot, img) in stack.iter_mut().zip(images) {
            *slot = img.as_slice()[i];
        }
        let scaled = pinv.apply(&stack);
        let norm = scaled.norm();
        if norm > NORM_EPSILON {
            normals[i] = scaled / norm;
            valid[i] = true;
        }
    }
    NormalMap::new(w, h, normals, valid)
}

/// Normals of a capture pair over the intersection of its two masks.
pub fn estimate_normals(pair: &CapturePair) -> Result<NormalMap> {
    let mask = intersect_masks(&pair.mask_left, &pair.mask_right)?;
    estimate_normals_from(&[&pair.left, &pair.right], &mask, &pair.lights)
}

/// Arithmetic mean of the valid normals, not renormalized.
pub fn mean_normal(map: &NormalMap) -> Result<Vec3> {
    let n = map.valid_count();
    if n == 0 {
        return Err(Error::Degenerate("normal map has no valid pixels".into()));
    }
    let sum = map.valid_normals().fold(Vec3::ZERO, |a, b| a + b);
    Ok(sum / n as f64)
}

/// Population variance of the distances between each valid normal and the mean normal.
pub fn ospad3d_score(map: &NormalMap) -> Result<f64> {
    let n = map.valid_count();
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "score needs at least 2 valid normals, found {n}"
        )));
    }
    let mean = mean_normal(map)?;
    let distances: Vec<f64> = map.valid_normals().map(|v| (v - mean).norm()).collect();
    let mu = distances.iter().sum::<f64>() / n as f64;
    let var = distances.iter().map(|d| (d - mu) * (d - mu)).sum::<f64>() / n as f64;
    Ok(var)
}

/// Outcome of scoring one capture pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Score3D {
    Scored(f64),
    /// Too few valid normals relative to the combined mask area.
    Unscorable {
        valid: usize,
        mask_area: usize,
    },
}

impl Score3D {
    pub fn value(self) -> Option<f64> {
        match self {
            Score3D::Scored(q) => Some(q),
            Score3D::Unscorable { .. } => None,
        }
    }
}

/// Scores a pair, refusing samples whose valid normals cover less than
/// [`MIN_VALID_FRACTION`] of the combined mask.
pub fn score_pair(pair: &CapturePair) -> Result<Score3D> {
    let mask = intersect_masks(&pair.mask_left, &pair.mask_right)?;
    let map = estimate_normals_from(&[&pair.left, &pair.right], &mask, &pair.lights)?;
    let valid = map.valid_count();
    let mask_area = mask.count();
    if valid < 2 || (valid as f64) < MIN_VALID_FRACTION * mask_area as f64 {
        return Ok(Score3D::Unscorable { valid, mask_area });
    }
    ospad3d_score(&map).map(Score3D::Scored)
}

/// Threshold on the normal-variance score; above it is an attack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdModel3D {
    pub threshold: f64,
}

impl ThresholdModel3D {
    pub fn new(threshold: f64) -> Result<Self> {
        if !threshold.is_finite() {
            return Err(Error::InvalidInput(format!(
                "threshold {threshold} is not finite"
            )));
        }
        Ok(Self { threshold })
    }

    pub fn to_text(&self) -> String {
        format!("threshold {}\n", self.threshold)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let t = text
            .trim()
            .strip_prefix("threshold")
            .and_then(|v| v.trim().parse::<f64>().ok())
            .ok_or_else(|| Error::parse(path, 1, "expected `threshold <value>`"))?;
        Self::new(t)
    }
}

pub fn fit_threshold(scores: &[(f64, Label)]) -> Result<ThresholdModel3D> {
    let pairs: Vec<(f64, Class)> = scores.iter().map(|(q, l)| (*q, l.class)).collect();
    ThresholdModel3D::new(threshold::fit_threshold(&pairs)?)
}

pub fn classify_3d(q: f64, model: &ThresholdModel3D) -> Result<Decision> {
    Decision::threshold(q, model.threshold, Source::Pad3D)
}

/// CSV score export with header `sample_id,q,label`.
pub fn scores_to_csv(rows: &[(String, f64, Class)]) -> String {
    let mut s = String::from("sample_id,q,label\n");
    for (id, q, c) in rows {
        let _ = writeln!(s, "{id},{q},{c}");
    }
    s
}
