//! Shared domain vocabulary: vectors, lighting, labels and decisions.

use std::fmt;
use std::ops::{Add, Div, Mul, Sub};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Mask, NirImage};

/// 3-vector in camera coordinates: x right, y up, z toward the camera.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        self / self.norm()
    }

    /// Angle between two vectors, stable near zero.
    pub fn angle_to(self, o: Vec3) -> f64 {
        self.cross(o).norm().atan2(self.dot(o))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

/// Unit directions toward each illuminator, in capture order.
#[derive(Debug, Clone, PartialEq)]
pub struct LightingGeometry {
    directions: Vec<Vec3>,
}

/// Default illuminator angle from the optical axis, in degrees.
pub const DEFAULT_LIGHT_ANGLE_DEG: f64 = 30.0;

impl LightingGeometry {
    pub fn new(directions: Vec<Vec3>) -> Result<Self> {
        if directions.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 light directions, got {}",
                directions.len()
            )));
        }
        for (i, d) in directions.iter().enumerate() {
            if !d.is_finite() || (d.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "light {i} is not unit length (norm {})",
                    d.norm()
                )));
            }
            if d.z <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "light {i} points away from the camera (z = {})",
                    d.z
                )));
            }
        }
        Ok(Self { directions })
    }

    /// Two illuminators in the horizontal plane at `±angle_deg` from the
    /// optical axis; the first (left image) sits on +x.
    pub fn symmetric_pair(angle_deg: f64) -> Result<Self> {
        if !(angle_deg > 0.0 && angle_deg < 90.0) {
            return Err(Error::InvalidInput(format!(
                "light angle must lie in (0, 90) degrees, got {angle_deg}"
            )));
        }
        let (s, c) = angle_deg.to_radians().sin_cos();
        Self::new(vec![Vec3::new(s, 0.0, c), Vec3::new(-s, 0.0, c)])
    }

    pub fn directions(&self) -> &[Vec3] {
        &self.directions
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
}

impl Default for LightingGeometry {
    fn default() -> Self {
        Self::symmetric_pair(DEFAULT_LIGHT_ANGLE_DEG).expect("default angle is valid")
    }
}

/// Left- and right-illuminated captures of one eye with their occlusion masks.
#[derive(Debug, Clone)]
pub struct CapturePair {
    pub left: NirImage,
    pub right: NirImage,
    pub mask_left: Mask,
    pub mask_right: Mask,
    pub lights: LightingGeometry,
}

impl CapturePair {
    pub fn new(
        left: NirImage,
        right: NirImage,
        mask_left: Mask,
        mask_right: Mask,
        lights: LightingGeometry,
    ) -> Result<Self> {
        let dims = left.dims();
        for found in [right.dims(), mask_left.dims(), mask_right.dims()] {
            if found != dims {
                return Err(Error::dims(dims, found));
            }
        }
        if lights.len() != 2 {
            return Err(Error::InvalidInput(format!(
                "a capture pair needs exactly 2 lights, got {}",
                lights.len()
            )));
        }
        Ok(Self {
            left,
            right,
            mask_left,
            mask_right,
            lights,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.left.dims()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Class {
    BonaFide,
    Attack,
}

impl Class {
    pub fn as_str(self) -> &'static str {
        match self {
            Class::BonaFide => "bonafide",
            Class::Attack => "attack",
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Class {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "bonafide" => Ok(Class::BonaFide),
            "attack" => Ok(Class::Attack),
            other => Err(format!(
                "unknown class `{other}` (expected bonafide|attack)"
            )),
        }
    }
}

/// Print-pattern family of a textured lens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pattern {
    Regular,
    Irregular,
}

impl Pattern {
    pub fn as_str(self) -> &'static str {
        match self {
            Pattern::Regular => "regular",
            Pattern::Irregular => "irregular",
        }
    }
}

impl FromStr for Pattern {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "regular" => Ok(Pattern::Regular),
            "irregular" => Ok(Pattern::Irregular),
            other => Err(format!(
                "unknown pattern `{other}` (expected regular|irregular|-)"
            )),
        }
    }
}

/// Ground truth for one capture pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Label {
    pub class: Class,
    pub subject_id: String,
    pub brand: Option<String>,
    pub sensor: Option<String>,
    pub pattern: Option<Pattern>,
}

impl Label {
    pub fn new(class: Class, subject_id: impl Into<String>) -> Result<Self> {
        let subject_id = subject_id.into();
        if subject_id.is_empty() {
            return Err(Error::InvalidInput("subject id must be nonempty".into()));
        }
        Ok(Self {
            class,
            subject_id,
            brand: None,
            sensor: None,
            pattern: None,
        })
    }

    pub fn with_brand(mut self, brand: impl Into<String>) -> Self {
        self.brand = Some(brand.into());
        self
    }

    pub fn with_sensor(mut self, sensor: impl Into<String>) -> Self {
        self.sensor = Some(sensor.into());
        self
    }

    pub fn with_pattern(mut self, pattern: Pattern) -> Self {
        self.pattern = Some(pattern);
        self
    }
}

/// Which detector produced a decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    Pad2D,
    Pad3D,
    Fusion,
}

/// A classification with its score; higher scores are more attack-like.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub class: Class,
    pub score: f64,
    pub source: Source,
}

impl Decision {
    pub fn new(class: Class, score: f64, source: Source) -> Result<Self> {
        if !score.is_finite() {
            return Err(Error::InvalidInput(format!(
                "decision score {score} is not finite"
            )));
        }
        Ok(Self {
            class,
            score,
            source,
        })
    }

    /// Shared boundary convention of every thresholded detector: strictly
    /// above the threshold is an attack.
    pub fn threshold(score: f64, threshold: f64, source: Source) -> Result<Self> {
        let class = if score > threshold {
            Class::Attack
        } else {
            Class::BonaFide
        };
        Self::new(class, score, source)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_lights_are_symmetric_unit_vectors() {
        let l = LightingGeometry::default();
        let [a, b] = [l.directions()[0], l.directions()[1]];
        assert!((a.norm() - 1.0).abs() < 1e-15);
        assert_eq!(a.x, -b.x);
        assert_eq!(a.z, b.z);
        assert!((a.x - 0.5).abs() < 1e-15);
    }

    #[test]
    fn lighting_rejects_bad_directions() {
        assert!(LightingGeometry::new(vec![Vec3::Z]).is_err());
        assert!(LightingGeometry::new(vec![Vec3::Z, Vec3::new(0.0, 0.0, 2.0)]).is_err());
        assert!(LightingGeometry::new(vec![Vec3::Z, Vec3::new(0.0, 0.0, -1.0)]).is_err());
        assert!(LightingGeometry::symmetric_pair(90.0).is_err());
        assert!(LightingGeometry::symmetric_pair(0.0).is_err());
    }

    #[test]
    fn capture_pair_checks_dimensions() {
        let img = NirImage::filled(4, 4, 0.5).unwrap();
        let small = NirImage::filled(4, 3, 0.5).unwrap();
        let m = Mask::filled(4, 4, true).unwrap();
        let lights = LightingGeometry::default();
        assert!(
            CapturePair::new(img.clone(), small, m.clone(), m.clone(), lights.clone()).is_err()
        );
        let three = LightingGeometry::new(vec![Vec3::Z, Vec3::Z, Vec3::Z]).unwrap();
        assert!(CapturePair::new(img.clone(), img.clone(), m.clone(), m.clone(), three).is_err());
        assert!(CapturePair::new(img.clone(), img, m.clone(), m, lights).is_ok());
    }

    #[test]
    fn label_requires_subject() {
        assert!(Label::new(Class::Attack, "").is_err());
    }

    #[test]
    fn decision_rejects_nan() {
        assert!(Decision::new(Class::Attack, f64::NAN, Source::Pad3D).is_err());
        let d = Decision::threshold(0.5, 0.5, Source::Pad2D).unwrap();
        assert_eq!(d.class, Class::BonaFide);
    }
}
