//! Lambertian test scenes with known normals.
//!
//! Three surface families stand in for the captures the detector sees:
//!
//! * `Flat`: a planar iris, every normal `(0, 0, 1)`, uniform albedo.
//! * `Bumpy`: a textured lens modelled as a smooth random relief (a sum of
//!   seeded cosines) whose mean slope magnitude equals the requested amplitude.
//! * `OpaquePrint`: a flat base covered by bright, nearly flat printed dots.
//!   Shading barely differs between the two lights, so the normal-variance
//!   score stays low even though the image is strongly textured.
//!
//! Rendering is clamped Lambert with optional Gaussian pixel noise; there
//! are no cast shadows.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{Mask, NirImage};
use crate::manifest::{DatasetManifest, ManifestEntry};
use crate::photometric::NormalMap;
use crate::segmentation::{annulus_mask, AnnulusSpec};
use crate::types::{Class, Label, LightingGeometry, Pattern, Vec3};

/// Lowest relief amplitude (mean slope) of `Bumpy` scenes in a generated
/// corpus; amplitudes are spread over `[floor, 2·floor)`.
pub const AMPLITUDE_FLOOR: f64 = 0.2;

/// Albedo of printed dots.
pub const PRINT_ALBEDO: f64 = 0.95;

/// Peak slope of a printed dot relative to the scene amplitude.
pub const PRINT_RELIEF: f64 = 0.1;

/// Number of cosine components in a relief.
const RELIEF_COMPONENTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SceneKind {
    Flat,
    Bumpy,
    OpaquePrint,
}

/// Orientation content of a `Bumpy` relief.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReliefProfile {
    /// Cosines in random directions.
    Isotropic,
    /// Height varies along x only, so every normal lies in the x-z plane.
    Ridges,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    /// Mean slope magnitude of the relief.
    pub amplitude: f64,
    /// Highest relief frequency, in cycles across the image width.
    pub frequency: f64,
    /// Fraction of pixels covered by printed dots.
    pub coverage: f64,
    pub albedo: f64,
    pub profile: ReliefProfile,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            amplitude: 0.3,
            frequency: 4.0,
            coverage: 0.3,
            albedo: 0.6,
            profile: ReliefProfile::Isotropic,
        }
    }
}

impl SceneParams {
    fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "amplitude {} must be >= 0",
                self.amplitude
            )));
        }
        if !(self.frequency > 0.0 && self.frequency.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "frequency {} must be > 0",
                self.frequency
            )));
        }
        if !(0.0..=1.0).contains(&self.coverage) {
            return Err(Error::InvalidInput(format!(
                "coverage {} outside [0, 1]",
                self.coverage
            )));
        }
        if !(0.0..=1.0).contains(&self.albedo) {
            return Err(Error::InvalidInput(format!(
                "albedo {} outside [0, 1]",
                self.albedo
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub width: usize,
    pub height: usize,
    pub normals: Vec<Vec3>,
    pub albedo: Vec<f64>,
    /// Height field the normals were derived from, in pixel units.
    pub height_field: Vec<f64>,
    pub mask: Mask,
    pub kind: SceneKind,
    pub params: SceneParams,
    pub seed: u64,
}

impl Scene {
    pub fn normal_map(&self) -> NormalMap {
        NormalMap::new(
            self.width,
            self.height,
            self.normals.clone(),
            vec![true; self.normals.len()],
        )
        .expect("scene normals are unit length")
    }
}

/// Normal of a height field with image-space gradient `(hx, hy)`; image y
/// points down, camera y up.
fn normal_from_gradient(hx: f64, hy: f64) -> Vec3 {
    Vec3::new(-hx, hy, 1.0).normalized()
}

struct Cosine {
    kx: f64,
    ky: f64,
    phase: f64,
    weight: f64,
}

fn relief(
    width: usize,
    height: usize,
    params: &SceneParams,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<Vec3>) {
    let n = width * height;
    if params.amplitude == 0.0 {
        return (vec![0.0; n], vec![Vec3::Z; n]);
    }
    let components: Vec<Cosine> = (0..RELIEF_COMPONENTS)
        .map(|_| {
            let cycles = rng.gen_range(0.5 * params.frequency..=params.frequency);
            let theta = match params.profile {
                ReliefProfile::Isotropic => rng.gen_range(0.0..PI),
                ReliefProfile::Ridges => 0.0,
            };
            let k = 2.0 * PI * cycles / width as f64;
            Cosine {
                kx: k * theta.cos(),
                ky: k * theta.sin(),
                phase: rng.gen_range(0.0..2.0 * PI),
                weight: 1.0 / cycles,
            }
        })
        .collect();

    let mut h = Vec::with_capacity(n);
    let mut grad = Vec::with_capacity(n);
    for y in 0..height {
        for x in 0..width {
            let (mut v, mut gx, mut gy) = (0.0, 0.0, 0.0);
            for c in &components {
                let arg = c.kx * x as f64 + c.ky * y as f64 + c.phase;
                let (s, co) = arg.sin_cos();
                v += c.weight * co;
                gx -= c.weight * c.kx * s;
                gy -= c.weight * c.ky * s;
            }
            h.push(v);
            grad.push((gx, gy));
        }
    }
    let mean_slope = grad.iter().map(|(gx, gy)| gx.hypot(*gy)).sum::<f64>() / n as f64;
    let scale = params.amplitude / mean_slope;
    let heights = h.iter().map(|v| v * scale).collect();
    let normals = grad
        .iter()
        .map(|(gx, gy)| normal_from_gradient(gx * scale, gy * scale))
        .collect();
    (heights, normals)
}

fn print_dots(
    width: usize,
    height: usize,
    params: &SceneParams,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<f64>, Vec<Vec3>) {
    let n = width * height;
    let mut albedo = vec![params.albedo; n];
    let mut heights = vec![0.0; n];
    let mut normals = vec![Vec3::Z; n];
    let radius = (width.min(height) as f64 / 20.0).max(2.0);
    // dome h = A(1 - r²/R²) peaks in slope at the rim: 2A/R
    let peak = params.amplitude * PRINT_RELIEF * radius / 2.0;
    let target = (params.coverage * n as f64).round() as usize;
    let mut covered = 0;
    let mut attempts = 0;
    while covered < target && attempts < 10_000 {
        attempts += 1;
        let cx = rng.gen_range(0.0..width as f64);
        let cy = rng.gen_range(0.0..height as f64);
        let x0 = (cx - radius).floor().max(0.0) as usize;
        let y0 = (cy - radius).floor().max(0.0) as usize;
        let x1 = ((cx + radius).ceil() as usize).min(width - 1);
        let y1 = ((cy + radius).ceil() as usize).min(height - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let r2 = dx * dx + dy * dy;
                if r2 > radius * radius {
                    continue;
                }
                let i = y * width + x;
                let dome = peak * (1.0 - r2 / (radius * radius));
                if albedo[i] != PRINT_ALBEDO {
                    covered += 1;
                    albedo[i] = PRINT_ALBEDO;
                }
                if dome >= heights[i] {
                    heights[i] = dome;
                    let k = -2.0 * peak / (radius * radius);
                    normals[i] = normal_from_gradient(k * dx, k * dy);
                }
            }
        }
    }
    (albedo, heights, normals)
}

pub fn make_scene(
    kind: SceneKind,
    width: usize,
    height: usize,
    params: &SceneParams,
    seed: u64,
) -> Result<Scene> {
    if width < 3 || height < 3 {
        return Err(Error::InvalidInput(format!(
            "scene must be at least 3x3, got {width}x{height}"
        )));
    }
    params.validate()?;
    let n = width * height;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (albedo, height_field, normals) = match kind {
        SceneKind::Flat => (vec![params.albedo; n], vec![0.0; n], vec![Vec3::Z; n]),
        SceneKind::Bumpy => {
            let (h, normals) = relief(width, height, params, &mut rng);
            (vec![params.albedo; n], h, normals)
        }
        SceneKind::OpaquePrint => print_dots(width, height, params, &mut rng),
    };
    let mask = annulus_mask(&AnnulusSpec::centered(width, height), width, height)?;
    Ok(Scene {
        width,
        height,
        normals,
        albedo,
        height_field,
        mask,
        kind,
        params: params.clone(),
        seed,
    })
}

/// Clamped Lambertian image of `scene` lit from `light`, plus optional noise.
pub fn render(scene: &Scene, light: Vec3, noise_sd: f64, seed: u64) -> Result<NirImage> {
    if !light.is_finite() || (light.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "light {light:?} is not unit length"
        )));
    }
    if noise_sd.is_nan() || noise_sd < 0.0 {
        return Err(Error::InvalidInput(format!(
            "noise sd {noise_sd} must be >= 0"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sd).expect("sd is finite and non-negative");
    let data = scene
        .normals
        .iter()
        .zip(&scene.albedo)
        .map(|(n, a)| {
            let mut v = a * light.dot(*n).max(0.0);
            if noise_sd > 0.0 {
                v += noise.sample(&mut rng);
            }
            v.clamp(0.0, 1.0)
        })
        .collect();
    NirImage::new(scene.width, scene.height, data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub flat: usize,
    pub bumpy: usize,
    pub opaque: usize,
    pub size: usize,
    pub amplitude_floor: f64,
    pub frequency: f64,
    pub coverage: f64,
    pub noise_sd: f64,
    pub light_angle_deg: f64,
    pub seed: u64,
    /// Also write ground-truth normal maps under `truth/`.
    pub write_truth: bool,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            flat: 24,
            bumpy: 12,
            opaque: 12,
            size: 64,
            amplitude_floor: AMPLITUDE_FLOOR,
            frequency: 4.0,
            coverage: 0.3,
            noise_sd: 0.01,
            light_angle_deg: 30.0,
            seed: 7,
            write_truth: true,
        }
    }
}

/// One scene of a corpus, before anything is written.
#[derive(Debug, Clone)]
pub struct CorpusItem {
    pub id: String,
    pub kind: SceneKind,
    pub amplitude: f64,
    pub scene_seed: u64,
    pub label: Label,
}

fn derive_seed(base: u64, tag: u64, index: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (tag << 40) ^ index as u64
}

/// The scenes a config describes, in manifest order.
pub fn corpus_plan(config: &CorpusConfig) -> Result<Vec<CorpusItem>> {
    let sensor = "synthetic";
    let amplitude =
        |i: usize, n: usize| config.amplitude_floor * (1.0 + i as f64 / n.max(1) as f64);
    let mut items = Vec::with_capacity(config.flat + config.bumpy + config.opaque);
    for i in 0..config.flat {
        items.push(CorpusItem {
            id: format!("flat_{i:03}"),
            kind: SceneKind::Flat,
            amplitude: 0.0,
            scene_seed: derive_seed(config.seed, 1, i),
            label: Label::new(Class::BonaFide, format!("subj{i:03}"))?.with_sensor(sensor),
        });
    }
    for i in 0..config.bumpy {
        items.push(CorpusItem {
            id: format!("bumpy_{i:03}"),
            kind: SceneKind::Bumpy,
            amplitude: amplitude(i, config.bumpy),
            scene_seed: derive_seed(config.seed, 2, i),
            label: Label::new(Class::Attack, format!("subj{i:03}"))?
                .with_brand(["relief-a", "relief-b"][i % 2])
                .with_sensor(sensor)
                .with_pattern(Pattern::Regular),
        });
    }
    for i in 0..config.opaque {
        items.push(CorpusItem {
            id: format!("print_{i:03}"),
            kind: SceneKind::OpaquePrint,
            amplitude: amplitude(i, config.opaque),
            scene_seed: derive_seed(config.seed, 3, i),
            label: Label::new(Class::Attack, format!("subj{:03}", config.bumpy + i))?
                .with_brand(["print-a", "print-b"][i % 2])
                .with_sensor(sensor)
                .with_pattern(Pattern::Irregular),
        });
    }
    Ok(items)
}

/// Rendered captures of one corpus item.
pub struct RenderedItem {
    pub scene: Scene,
    pub left: NirImage,
    pub right: NirImage,
    pub mask_left: Mask,
    pub mask_right: Mask,
}

/// Scene, both renders and both eyelid-occluded masks for one item.
pub fn render_item(item: &CorpusItem, config: &CorpusConfig) -> Result<RenderedItem> {
    let params = SceneParams {
        amplitude: item.amplitude,
        frequency: config.frequency,
        coverage: config.coverage,
        ..SceneParams::default()
    };
    let scene = make_scene(
        item.kind,
        config.size,
        config.size,
        &params,
        item.scene_seed,
    )?;
    let lights = LightingGeometry::symmetric_pair(config.light_angle_deg)?;
    let [l1, l2] = [lights.directions()[0], lights.directions()[1]];
    let left = render(&scene, l1, config.noise_sd, item.scene_seed ^ 0x1EF7)?;
    let right = render(&scene, l2, config.noise_sd, item.scene_seed ^ 0x8167)?;

    // upper eyelid: rows above a seeded line are occluded, independently per capture
    let mut rng = ChaCha8Rng::seed_from_u64(item.scene_seed ^ 0xE7E1);
    let mut eyelid = || {
        let cut = (config.size as f64 * rng.gen_range(0.15..0.25)) as usize;
        Mask::from_fn(scene.width, scene.height, |x, y| {
            y >= cut && scene.mask.get(x, y)
        })
    };
    let mask_left = eyelid()?;
    let mask_right = eyelid()?;
    Ok(RenderedItem {
        scene,
        left,
        right,
        mask_left,
        mask_right,
    })
}

pub const MANIFEST_FILE: &str = "manifest.csv";

/// Renders a corpus into `out_dir` and returns its manifest (also written as
/// `manifest.csv`). Layout: `images/`, `masks/`, optional `truth/`.
pub fn make_corpus(config: &CorpusConfig, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let out = out_dir.as_ref();
    let mut dirs = vec!["images", "masks"];
    if config.write_truth {
        dirs.push("truth");
    }
    for d in dirs {
        let p = out.join(d);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let plan = corpus_plan(config)?;
    let entries = plan
        .par_iter()
        .map(|item| -> Result<ManifestEntry> {
            let r = render_item(item, config)?;
            let rel =
                |dir: &str, suffix: &str| PathBuf::from(dir).join(format!("{}{suffix}", item.id));
            let entry = ManifestEntry {
                left: rel("images", "_L.pgm"),
                right: rel("images", "_R.pgm"),
                mask_left: Some(rel("masks", "_mL.pgm")),
                mask_right: Some(rel("masks", "_mR.pgm")),
                label: item.label.clone(),
            };
            r.left.save_pgm(out.join(&entry.left))?;
            r.right.save_pgm(out.join(&entry.right))?;
            r.mask_left
                .save_pgm(out.join(entry.mask_left.as_ref().unwrap()))?;
            r.mask_right
                .save_pgm(out.join(entry.mask_right.as_ref().unwrap()))?;
            if config.write_truth {
                r.scene
                    .normal_map()
                    .save(out.join(rel("truth", ".normals")))?;
            }
            Ok(entry)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest::new(out, entries)?;
    manifest.save(out.join(MANIFEST_FILE))?;
    Ok(manifest)
}
