//! Cascaded 2D → 3D fusion.
//!
//! A texture-based attack verdict is final. Every other sample takes the
//! photometric-stereo verdict; if the 3D score cannot be computed the
//! texture verdict stands alone and the sample is flagged.

use std::fmt::Write as _;
use std::path::Path;

use crate::bsif::{extract_features, FeatureVector, FilterBank};
use crate::classifier::{classify_2d, pair_score_2d, Ensemble2D, ENSEMBLE_FILE};
use crate::error::{Error, Result};
use crate::photometric::{classify_3d, score_pair, Score3D, ThresholdModel3D};
use crate::segmentation::centered_box_mask;
use crate::types::{CapturePair, Class, Decision, Source};

/// Subdirectory of a model directory holding the texture ensemble.
pub const MODEL_2D_DIR: &str = "model2d";
/// File of a model directory holding the 3D threshold.
pub const MODEL_3D_FILE: &str = "model3d.txt";

/// Side of the centered box used as the 2D feature region, as a fraction of the frame.
pub const DEFAULT_REGION_FRACTION: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct FusionConfig {
    pub ensemble: Ensemble2D,
    pub model3d: ThresholdModel3D,
    pub region_fraction: f64,
}

impl FusionConfig {
    pub fn new(ensemble: Ensemble2D, model3d: ThresholdModel3D) -> Self {
        Self {
            ensemble,
            model3d,
            region_fraction: DEFAULT_REGION_FRACTION,
        }
    }

    /// Writes both models into `dir` (created if missing).
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.ensemble.save(dir.join(MODEL_2D_DIR))?;
        self.model3d.save(dir.join(MODEL_3D_FILE))
    }

    /// Reads a directory written by [`FusionConfig::save`].
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Ok(Self::new(
            Ensemble2D::load(dir.join(MODEL_2D_DIR).join(ENSEMBLE_FILE))?,
            ThresholdModel3D::load(dir.join(MODEL_3D_FILE))?,
        ))
    }
}

pub fn fuse_decide(d2: &Decision, d3: &Decision) -> Result<Decision> {
    if d2.source != Source::Pad2D || d3.source != Source::Pad3D {
        return Err(Error::InvalidInput(format!(
            "fusion expects (Pad2D, Pad3D) decisions, got ({:?}, {:?})",
            d2.source, d3.source
        )));
    }
    let chosen = if d2.class == Class::Attack { d2 } else { d3 };
    Decision::new(chosen.class, chosen.score, Source::Fusion)
}

/// Every intermediate of one pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub fused: Decision,
    pub d2: Decision,
    /// `None` when the sample was unscorable in 3D.
    pub d3: Option<Decision>,
    pub q: Option<f64>,
    pub s2: f64,
    pub unscorable_3d: bool,
}

/// Features of both images over the default centered-box region.
pub fn pair_features(
    pair: &CapturePair,
    banks: &[FilterBank],
    region_fraction: f64,
) -> Result<(FeatureVector, FeatureVector)> {
    let (w, h) = pair.dims();
    let region = centered_box_mask(w, h, region_fraction)?;
    Ok((
        extract_features(&pair.left, &region, banks)?,
        extract_features(&pair.right, &region, banks)?,
    ))
}

pub fn run_pipeline(pair: &CapturePair, config: &FusionConfig) -> Result<PipelineOutput> {
    let banks = config.ensemble.banks();
    let (fl, fr) = pair_features(pair, &banks, config.region_fraction)?;
    let s2 = pair_score_2d(&config.ensemble, &fl, &fr)?;
    let d2 = classify_2d(s2, &config.ensemble)?;

    match score_pair(pair)? {
        Score3D::Scored(q) => {
            let d3 = classify_3d(q, &config.model3d)?;
            Ok(PipelineOutput {
                fused: fuse_decide(&d2, &d3)?,
                d2,
                d3: Some(d3),
                q: Some(q),
                s2,
                unscorable_3d: false,
            })
        }
        Score3D::Unscorable { .. } => Ok(PipelineOutput {
            fused: Decision::new(d2.class, d2.score, Source::Fusion)?,
            d2,
            d3: None,
            q: None,
            s2,
            unscorable_3d: true,
        }),
    }
}

pub const AUDIT_HEADER: &str = "sample_id,q,s2,d3,d2,fused,label,flags";

/// One audit CSV row; an unscorable 3D branch leaves `q` empty and `d3` as `-`.
pub fn audit_row(sample_id: &str, out: &PipelineOutput, label: Class) -> String {
    let mut s = String::new();
    let q = out.q.map(|q| q.to_string()).unwrap_or_default();
    let d3 = out.d3.map_or("-", |d| d.class.as_str());
    let flags = if out.unscorable_3d {
        "unscorable3d"
    } else {
        ""
    };
    let _ = write!(
        s,
        "{sample_id},{q},{},{d3},{},{},{label},{flags}",
        out.s2, out.d2.class, out.fused.class
    );
    s
}
