//! ISO/IEC 30107-3 error rates and the train/test experiment harness.
//!
//! APCER is the fraction of attack presentations classified bona fide,
//! BPCER the fraction of bona fide presentations classified as attacks, and
//! accuracy the fraction of all samples classified correctly. A rate whose
//! denominator is zero is reported as `null`, never as 0.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::bsif::{FeatureVector, FilterBank};
use crate::classifier::{train_ensemble, Ensemble2D, TrainConfig};
use crate::error::{Error, Result};
use crate::fusion::{
    pair_features, run_pipeline, FusionConfig, PipelineOutput, DEFAULT_REGION_FRACTION,
};
use crate::manifest::{ensure_subject_disjoint, DatasetManifest};
use crate::photometric::{self, score_pair, Score3D, ThresholdModel3D};
use crate::types::{Class, Decision, Label, LightingGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupField {
    Brand,
    Sensor,
    Pattern,
}

impl GroupField {
    fn key(self, label: &Label) -> String {
        let v = match self {
            GroupField::Brand => label.brand.clone(),
            GroupField::Sensor => label.sensor.clone(),
            GroupField::Pattern => label.pattern.map(|p| p.as_str().to_string()),
        };
        v.unwrap_or_else(|| "-".to_string())
    }
}

impl std::str::FromStr for GroupField {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "brand" => Ok(GroupField::Brand),
            "sensor" => Ok(GroupField::Sensor),
            "pattern" => Ok(GroupField::Pattern),
            other => Err(format!(
                "unknown group field `{other}` (expected brand|sensor|pattern)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub attacks: usize,
    pub bonafides: usize,
    pub attack_errors: usize,
    pub bonafide_errors: usize,
}

impl Counts {
    fn add(&mut self, truth: Class, predicted: Class) {
        match truth {
            Class::Attack => {
                self.attacks += 1;
                if predicted != Class::Attack {
                    self.attack_errors += 1;
                }
            }
            Class::BonaFide => {
                self.bonafides += 1;
                if predicted != Class::BonaFide {
                    self.bonafide_errors += 1;
                }
            }
        }
    }

    pub fn total(&self) -> usize {
        self.attacks + self.bonafides
    }

    pub fn apcer(&self) -> Option<f64> {
        (self.attacks > 0).then(|| self.attack_errors as f64 / self.attacks as f64)
    }

    pub fn bpcer(&self) -> Option<f64> {
        (self.bonafides > 0).then(|| self.bonafide_errors as f64 / self.bonafides as f64)
    }

    pub fn accuracy(&self) -> f64 {
        1.0 - (self.attack_errors + self.bonafide_errors) as f64 / self.total() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupReport {
    pub accuracy: f64,
    pub apcer: Option<f64>,
    pub bpcer: Option<f64>,
    pub counts: Counts,
}

impl From<Counts> for GroupReport {
    fn from(counts: Counts) -> Self {
        Self {
            accuracy: counts.accuracy(),
            apcer: counts.apcer(),
            bpcer: counts.bpcer(),
            counts,
        }
    }
}

/// Field order here is the JSON key order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub apcer: Option<f64>,
    pub bpcer: Option<f64>,
    pub counts: Counts,
    pub groups: BTreeMap<String, GroupReport>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail") + "\n"
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

pub fn compute_report(
    decisions: &[Decision],
    labels: &[Label],
    group_by: Option<GroupField>,
) -> Result<EvalReport> {
    if decisions.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} decisions but {} labels",
            decisions.len(),
            labels.len()
        )));
    }
    if decisions.is_empty() {
        return Err(Error::InvalidInput("cannot report on zero samples".into()));
    }
    let mut counts = Counts::default();
    let mut groups: BTreeMap<String, Counts> = BTreeMap::new();
    for (d, l) in decisions.iter().zip(labels) {
        counts.add(l.class, d.class);
        if let Some(field) = group_by {
            groups
                .entry(field.key(l))
                .or_default()
                .add(l.class, d.class);
        }
    }
    Ok(EvalReport {
        accuracy: counts.accuracy(),
        apcer: counts.apcer(),
        bpcer: counts.bpcer(),
        counts,
        groups: groups.into_iter().map(|(k, c)| (k, c.into())).collect(),
    })
}

/// Mean and sample standard deviation of a metric over folds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldSummary {
    pub folds: usize,
    pub accuracy: MeanStd,
    pub apcer: Option<MeanStd>,
    pub bpcer: Option<MeanStd>,
}

/// Aggregates per-fold reports; folds with an undefined rate are skipped for that rate.
pub fn summarize_folds(reports: &[EvalReport]) -> Result<FoldSummary> {
    let accuracy: Vec<f64> = reports.iter().map(|r| r.accuracy).collect();
    let apcer: Vec<f64> = reports.iter().filter_map(|r| r.apcer).collect();
    let bpcer: Vec<f64> = reports.iter().filter_map(|r| r.bpcer).collect();
    Ok(FoldSummary {
        folds: reports.len(),
        accuracy: MeanStd::of(&accuracy)
            .ok_or_else(|| Error::InvalidInput("no folds to summarize".into()))?,
        apcer: MeanStd::of(&apcer),
        bpcer: MeanStd::of(&bpcer),
    })
}

/// Which train/test relation an experiment requires.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    /// Train and test must not share subjects.
    SubjectDisjoint,
    /// No constraint (e.g. the same collection split by time).
    Unconstrained,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    pub train: TrainConfig,
    pub banks: Vec<FilterBank>,
    pub lights: LightingGeometry,
    pub group_by: Option<GroupField>,
    pub region_fraction: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::SubjectDisjoint,
            train: TrainConfig::default(),
            banks: FilterBank::default_multiscale(),
            lights: LightingGeometry::default(),
            group_by: Some(GroupField::Brand),
            region_fraction: DEFAULT_REGION_FRACTION,
        }
    }
}

/// Texture features and 3D score of one manifest entry.
#[derive(Debug, Clone)]
pub struct SampleScores {
    pub sample_id: String,
    pub label: Label,
    pub score3d: Score3D,
    pub features: (FeatureVector, FeatureVector),
}

/// Loads and scores every entry of a manifest (in parallel, output in manifest order).
pub fn score_manifest(
    manifest: &DatasetManifest,
    lights: &LightingGeometry,
    banks: &[FilterBank],
    region_fraction: f64,
) -> Result<Vec<SampleScores>> {
    manifest
        .entries()
        .par_iter()
        .map(|e| {
            let pair = manifest.load_pair(e, lights)?;
            Ok(SampleScores {
                sample_id: e.sample_id(),
                label: e.label.clone(),
                score3d: score_pair(&pair)?,
                features: pair_features(&pair, banks, region_fraction)?,
            })
        })
        .collect()
}

/// Fits both detectors on scored training samples.
pub fn train_models(
    samples: &[SampleScores],
    banks: &[FilterBank],
    train: &TrainConfig,
) -> Result<(Ensemble2D, ThresholdModel3D)> {
    let scored: Vec<(f64, Label)> = samples
        .iter()
        .filter_map(|s| s.score3d.value().map(|q| (q, s.label.clone())))
        .collect();
    let model3d = photometric::fit_threshold(&scored)?;
    let pairs: Vec<(FeatureVector, FeatureVector)> =
        samples.iter().map(|s| s.features.clone()).collect();
    let labels: Vec<Label> = samples.iter().map(|s| s.label.clone()).collect();
    let ensemble = train_ensemble(&pairs, &labels, banks, train)?;
    Ok((ensemble, model3d))
}

#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub sample_id: String,
    pub label: Label,
    pub output: PipelineOutput,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub pad2d: EvalReport,
    /// Over the 3D-scorable test samples only; `None` if there are none.
    pub pad3d: Option<EvalReport>,
    pub fusion: EvalReport,
    pub ensemble: Ensemble2D,
    pub model3d: ThresholdModel3D,
    pub records: Vec<SampleRecord>,
    pub unscorable: usize,
    pub warnings: Vec<String>,
}

/// Fraction of unscorable test samples above which a warning is attached.
pub const UNSCORABLE_WARNING_FRACTION: f64 = 0.2;

pub fn run_experiment(
    train: &DatasetManifest,
    test: &DatasetManifest,
    config: &ExperimentConfig,
) -> Result<ExperimentOutcome> {
    if config.protocol == Protocol::SubjectDisjoint {
        ensure_subject_disjoint(train, test)?;
    }
    if test.is_empty() {
        return Err(Error::InvalidInput("test manifest is empty".into()));
    }
    let train_scores =
        score_manifest(train, &config.lights, &config.banks, config.region_fraction)?;
    let (ensemble, model3d) = train_models(&train_scores, &config.banks, &config.train)?;
    evaluate(test, ensemble, model3d, config)
}

/// Runs trained models over a test manifest and reports all three detectors.
pub fn evaluate(
    test: &DatasetManifest,
    ensemble: Ensemble2D,
    model3d: ThresholdModel3D,
    config: &ExperimentConfig,
) -> Result<ExperimentOutcome> {
    let fusion_config = FusionConfig {
        ensemble,
        model3d,
        region_fraction: config.region_fraction,
    };
    let records: Vec<SampleRecord> = test
        .entries()
        .par_iter()
        .map(|e| {
            let pair = test.load_pair(e, &config.lights)?;
            Ok(SampleRecord {
                sample_id: e.sample_id(),
                label: e.label.clone(),
                output: run_pipeline(&pair, &fusion_config)?,
            })
        })
        .collect::<Result<_>>()?;

    let labels: Vec<Label> = records.iter().map(|r| r.label.clone()).collect();
    let d2: Vec<Decision> = records.iter().map(|r| r.output.d2).collect();
    let fused: Vec<Decision> = records.iter().map(|r| r.output.fused).collect();
    let (d3, l3): (Vec<Decision>, Vec<Label>) = records
        .iter()
        .filter_map(|r| r.output.d3.map(|d| (d, r.label.clone())))
        .unzip();
    let unscorable = records.len() - d3.len();

    let mut warnings = Vec::new();
    if unscorable as f64 > UNSCORABLE_WARNING_FRACTION * records.len() as f64 {
        warnings.push(format!(
            "{unscorable} of {} test samples were unscorable in 3D",
            records.len()
        ));
    }

    Ok(ExperimentOutcome {
        pad2d: compute_report(&d2, &labels, config.group_by)?,
        pad3d: if d3.is_empty() {
            None
        } else {
            Some(compute_report(&d3, &l3, config.group_by)?)
        },
        fusion: compute_report(&fused, &labels, config.group_by)?,
        ensemble: fusion_config.ensemble,
        model3d: fusion_config.model3d,
        records,
        unscorable,
        warnings,
    })
}

impl ExperimentOutcome {
    /// Pipeline audit CSV over the test samples.
    pub fn audit_csv(&self) -> String {
        let mut s = String::from(crate::fusion::AUDIT_HEADER);
        s.push('\n');
        for r in &self.records {
            s.push_str(&crate::fusion::audit_row(
                &r.sample_id,
                &r.output,
                r.label.class,
            ));
            s.push('\n');
        }
        s
    }

    pub fn scatter_records(&self) -> Vec<(f64, f64, Label)> {
        self.records
            .iter()
            .filter_map(|r| r.output.q.map(|q| (q, r.output.s2, r.label.clone())))
            .collect()
    }

    /// Summary JSON: the three reports plus unscorable count and warnings.
    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct Summary<'a> {
            pad2d: &'a EvalReport,
            pad3d: Option<&'a EvalReport>,
            fusion: &'a EvalReport,
            threshold_2d: f64,
            threshold_3d: f64,
            unscorable_3d: usize,
            warnings: &'a [String],
        }
        let s = Summary {
            pad2d: &self.pad2d,
            pad3d: self.pad3d.as_ref(),
            fusion: &self.fusion,
            threshold_2d: self.ensemble.decision_threshold,
            threshold_3d: self.model3d.threshold,
            unscorable_3d: self.unscorable,
            warnings: &self.warnings,
        };
        serde_json::to_string_pretty(&s).expect("summary serialization cannot fail") + "\n"
    }
}

/// Per-group `1 - APCER` in percent for each detector; groups without attacks are skipped.
pub fn group_table_csv(field: &str, reports: &[(&str, Option<&EvalReport>)]) -> String {
    let mut keys: Vec<&String> = reports
        .iter()
        .filter_map(|(_, r)| *r)
        .flat_map(|r| {
            r.groups
                .iter()
                .filter(|(_, g)| g.counts.attacks > 0)
                .map(|(k, _)| k)
        })
        .collect();
    keys.sort();
    keys.dedup();

    let mut s = format!("{field},attacks");
    for (name, _) in reports {
        let _ = write!(s, ",{name}_1-apcer_pct");
    }
    s.push('\n');
    for key in keys {
        let attacks = reports
            .iter()
            .filter_map(|(_, r)| r.and_then(|r| r.groups.get(key)))
            .map(|g| g.counts.attacks)
            .max()
            .unwrap_or(0);
        let _ = write!(s, "{key},{attacks}");
        for (_, r) in reports {
            match r.and_then(|r| r.groups.get(key)).and_then(|g| g.apcer) {
                Some(apcer) => {
                    let _ = write!(s, ",{:.2}", 100.0 * (1.0 - apcer));
                }
                None => s.push_str(",-"),
            }
        }
        s.push('\n');
    }
    s
}

/// Writes `q,s2,class` rows; with `svg` also a two-series scatter plot next to it.
pub fn export_scatter(
    records: &[(f64, f64, Label)],
    path: impl AsRef<Path>,
    svg: bool,
) -> Result<()> {
    let path = path.as_ref();
    if records.is_empty() {
        return Err(Error::InvalidInput("no scatter records to export".into()));
    }
    let mut csv = String::from("q,s2,class\n");
    for (q, s2, l) in records {
        let _ = writeln!(csv, "{q},{s2},{}", l.class);
    }
    fs::write(path, csv).map_err(|e| Error::io(path, e))?;
    if svg {
        let svg_path = path.with_extension("svg");
        fs::write(&svg_path, scatter_svg(records)).map_err(|e| Error::io(&svg_path, e))?;
    }
    Ok(())
}

/// Parses a scatter CSV back into `(q, s2, class)` triples.
pub fn read_scatter(path: impl AsRef<Path>) -> Result<Vec<(f64, f64, Class)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let bad = || Error::parse(path, i + 1, "expected `q,s2,class`");
        let f: Vec<&str> = line.split(',').collect();
        let [q, s2, c] = f[..] else { return Err(bad()) };
        out.push((
            q.parse().map_err(|_| bad())?,
            s2.parse().map_err(|_| bad())?,
            c.parse().map_err(|_| bad())?,
        ));
    }
    Ok(out)
}

fn scatter_svg(records: &[(f64, f64, Label)]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const PAD: f64 = 40.0;
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (q, s2, _) in records {
        xmin = xmin.min(*s2);
        xmax = xmax.max(*s2);
        ymin = ymin.min(*q);
        ymax = ymax.max(*q);
    }
    let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
    let (sx, sy) = (span(xmin, xmax), span(ymin, ymax));
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">2D score</text>\n\
         <text x=\"12\" y=\"{}\" font-size=\"12\" transform=\"rotate(-90 12 {})\" text-anchor=\"middle\">3D score q</text>\n",
        W / 2.0,
        H - 8.0,
        H / 2.0,
        H / 2.0
    );
    for (q, s2, l) in records {
        let x = PAD + (s2 - xmin) / sx * (W - 2.0 * PAD);
        let y = H - PAD - (q - ymin) / sy * (H - 2.0 * PAD);
        let color = match l.class {
            Class::Attack => "#d62728",
            Class::BonaFide => "#1f77b4",
        };
        let _ = writeln!(
            s,
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3\" fill=\"{color}\"/>"
        );
    }
    s.push_str("</svg>\n");
    s
}
