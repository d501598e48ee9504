//! `irispad` command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bsif::{load_filter_bank, FilterBank};
use crate::classifier::{LossKind, TrainConfig};
use crate::error::{Error, Result};
use crate::evaluation::{
    export_scatter, group_table_csv, run_experiment, score_manifest, summarize_folds, train_models,
    ExperimentConfig, ExperimentOutcome, FoldSummary, GroupField, Protocol,
};
use crate::fusion::{run_pipeline, FusionConfig, AUDIT_HEADER, DEFAULT_REGION_FRACTION};
use crate::manifest::{load_manifest, split_by_pattern, split_subject_disjoint};
use crate::photometric::scores_to_csv;
use crate::synthetic::{make_corpus, CorpusConfig, AMPLITUDE_FLOOR};
use crate::types::LightingGeometry;

/// Names a directory whose `banks/` subdirectory supplies filter banks when `--banks` is absent.
pub const CONFIG_DIR_ENV: &str = "IRISPAD_CONFIG_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "irispad",
    version,
    about = "Iris presentation-attack detection from two-illuminant image pairs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic Lambertian corpus with a manifest.
    Synth(SynthArgs),
    /// Train the texture ensemble and the 3D threshold on a manifest.
    Train(TrainArgs),
    /// Run trained models over a manifest and write an audit CSV.
    Score(ScoreArgs),
    /// Train on one part of the data, evaluate on the rest, write reports.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Illuminant elevation from the optical axis, degrees, in (0, 90).
    #[arg(long, default_value_t = 30.0)]
    pub light_angle: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 24)]
    pub flat: usize,
    #[arg(long, default_value_t = 12)]
    pub bumpy: usize,
    #[arg(long, default_value_t = 12)]
    pub opaque: usize,
    /// Image side in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = AMPLITUDE_FLOOR)]
    pub amplitude_floor: f64,
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    /// Skip writing ground-truth normal maps.
    #[arg(long)]
    pub no_truth: bool,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Filter bank files; defaults to the built-in 7/9/11 px banks.
    #[arg(long, num_args = 1..)]
    pub banks: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = Loss::Logistic)]
    pub loss: Loss,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub l2: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Loss {
    Logistic,
    Hinge,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory written by `train`.
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitMode {
    /// Random subject-disjoint split of `--manifest`.
    Subject,
    /// Train on regular-pattern subjects, test on irregular ones.
    Pattern,
    /// Train on irregular-pattern subjects, test on regular ones.
    PatternSwapped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GroupBy {
    Brand,
    Sensor,
    Pattern,
    None,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Single manifest to split; alternative to `--train`/`--test`.
    #[arg(long, conflicts_with_all = ["train", "test"])]
    pub manifest: Option<PathBuf>,
    #[arg(long, requires = "test")]
    pub train: Option<PathBuf>,
    #[arg(long, requires = "train")]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t = SplitMode::Subject)]
    pub split: SplitMode,
    /// Fraction of subjects used for training with `--split subject`.
    #[arg(long, default_value_t = 0.6)]
    pub train_fraction: f64,
    /// Repeat the subject split with seeds `seed..seed+folds` and summarize.
    #[arg(long, default_value_t = 1)]
    pub folds: usize,
    /// Allow explicit train/test manifests to share subjects.
    #[arg(long)]
    pub allow_overlap: bool,
    #[arg(long, value_enum, default_value_t = GroupBy::Brand)]
    pub group_by: GroupBy,
    /// Also write an SVG scatter plot.
    #[arg(long)]
    pub plot: bool,
}

/// Error from a subcommand: either bad invocation or a failure inside the pipeline.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Run(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Run(_) => EXIT_DATA,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name), runs the subcommand, returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let (name, result) = match &cli.command {
        Command::Synth(a) => ("synth", cmd_synth(a)),
        Command::Train(a) => ("train", cmd_train(a)),
        Command::Score(a) => ("score", cmd_score(a)),
        Command::Eval(a) => ("eval", cmd_eval(a)),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("irispad {name}: {e}");
            e.exit_code()
        }
    }
}

fn lights(common: &Common) -> CliResult<LightingGeometry> {
    let a = common.light_angle;
    if !(a > 0.0 && a < 90.0) {
        return Err(CliError::Usage(format!(
            "--light-angle must lie in (0, 90), got {a}"
        )));
    }
    Ok(LightingGeometry::symmetric_pair(a)?)
}

fn banks(paths: &[PathBuf]) -> CliResult<Vec<FilterBank>> {
    if !paths.is_empty() {
        return Ok(paths.iter().map(load_filter_bank).collect::<Result<_>>()?);
    }
    if let Some(dir) = std::env::var_os(CONFIG_DIR_ENV) {
        let dir = Path::new(&dir).join("banks");
        if dir.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(&dir)
                .map_err(|e| Error::io(&dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            files.sort();
            if !files.is_empty() {
                return Ok(files.iter().map(load_filter_bank).collect::<Result<_>>()?);
            }
        }
    }
    Ok(FilterBank::default_multiscale())
}

fn train_config(m: &ModelArgs, seed: u64) -> TrainConfig {
    TrainConfig {
        loss: match m.loss {
            Loss::Logistic => LossKind::Logistic,
            Loss::Hinge => LossKind::Hinge,
        },
        l2_penalty: m.l2,
        epochs: m.epochs,
        learning_rate: m.lr,
        seed,
        ..TrainConfig::default()
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Run(Error::io(dir, e)))
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::Run(Error::io(path, e)))
}

pub fn cmd_synth(a: &SynthArgs) -> CliResult<()> {
    lights(&a.common)?;
    let config = CorpusConfig {
        flat: a.flat,
        bumpy: a.bumpy,
        opaque: a.opaque,
        size: a.size,
        amplitude_floor: a.amplitude_floor,
        noise_sd: a.noise,
        light_angle_deg: a.common.light_angle,
        seed: a.common.seed,
        write_truth: !a.no_truth,
        ..CorpusConfig::default()
    };
    let manifest = make_corpus(&config, &a.out)?;
    println!("wrote {} pairs to {}", manifest.len(), a.out.display());
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let lights = lights(&a.common)?;
    let banks = banks(&a.model.banks)?;
    let manifest = load_manifest(&a.manifest)?;
    let samples = score_manifest(&manifest, &lights, &banks, DEFAULT_REGION_FRACTION)?;
    let (ensemble, model3d) =
        train_models(&samples, &banks, &train_config(&a.model, a.common.seed))?;

    let models = FusionConfig::new(ensemble, model3d);
    models.save(&a.out)?;
    let rows: Vec<_> = samples
        .iter()
        .filter_map(|s| {
            s.score3d
                .value()
                .map(|q| (s.sample_id.clone(), q, s.label.class))
        })
        .collect();
    write(&a.out.join("train_scores.csv"), &scores_to_csv(&rows))?;
    println!(
        "trained on {} pairs: 2D threshold {}, 3D threshold {}",
        samples.len(),
        models.ensemble.decision_threshold,
        models.model3d.threshold
    );
    Ok(())
}

pub fn cmd_score(a: &ScoreArgs) -> CliResult<()> {
    let lights = lights(&a.common)?;
    let manifest = load_manifest(&a.manifest)?;
    let config = FusionConfig::load(&a.models)?;
    let mut csv = String::from(AUDIT_HEADER);
    csv.push('\n');
    for e in manifest.entries() {
        let pair = manifest.load_pair(e, &lights)?;
        let out = run_pipeline(&pair, &config)?;
        csv.push_str(&crate::fusion::audit_row(
            &e.sample_id(),
            &out,
            e.label.class,
        ));
        csv.push('\n');
    }
    create_dir(&a.out)?;
    write(&a.out.join("audit.csv"), &csv)?;
    println!("scored {} pairs", manifest.len());
    Ok(())
}

fn experiment_config(a: &EvalArgs, protocol: Protocol) -> CliResult<ExperimentConfig> {
    Ok(ExperimentConfig {
        protocol,
        train: train_config(&a.model, a.common.seed),
        banks: banks(&a.model.banks)?,
        lights: lights(&a.common)?,
        group_by: match a.group_by {
            GroupBy::Brand => Some(GroupField::Brand),
            GroupBy::Sensor => Some(GroupField::Sensor),
            GroupBy::Pattern => Some(GroupField::Pattern),
            GroupBy::None => None,
        },
        region_fraction: DEFAULT_REGION_FRACTION,
    })
}

fn write_outcome(
    dir: &Path,
    outcome: &ExperimentOutcome,
    group_by: GroupBy,
    plot: bool,
) -> CliResult<()> {
    create_dir(dir)?;
    outcome.pad2d.save(dir.join("report_2d.json"))?;
    if let Some(r) = &outcome.pad3d {
        r.save(dir.join("report_3d.json"))?;
    }
    outcome.fusion.save(dir.join("report_fusion.json"))?;
    write(&dir.join("summary.json"), &outcome.summary_json())?;
    write(&dir.join("audit.csv"), &outcome.audit_csv())?;
    let scatter = outcome.scatter_records();
    if !scatter.is_empty() {
        export_scatter(&scatter, dir.join("scatter.csv"), plot)?;
    }
    if group_by != GroupBy::None {
        let field = format!("{group_by:?}").to_lowercase();
        let table = group_table_csv(
            &field,
            &[
                ("pad2d", Some(&outcome.pad2d)),
                ("pad3d", outcome.pad3d.as_ref()),
                ("fusion", Some(&outcome.fusion)),
            ],
        );
        write(&dir.join(format!("{field}_table.csv")), &table)?;
    }
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn print_outcome(tag: &str, o: &ExperimentOutcome) {
    let fmt = |r: Option<f64>| r.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
    for (name, r) in [
        ("2D", Some(&o.pad2d)),
        ("3D", o.pad3d.as_ref()),
        ("fusion", Some(&o.fusion)),
    ] {
        if let Some(r) = r {
            println!(
                "{tag}{name:>6}: accuracy {:.4}  APCER {}  BPCER {}",
                r.accuracy,
                fmt(r.apcer),
                fmt(r.bpcer)
            );
        }
    }
}

pub fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    if a.folds == 0 {
        return Err(CliError::Usage("--folds must be at least 1".into()));
    }
    if let (Some(train), Some(test)) = (&a.train, &a.test) {
        if a.folds > 1 {
            return Err(CliError::Usage("--folds needs --manifest".into()));
        }
        let protocol = if a.allow_overlap {
            Protocol::Unconstrained
        } else {
            Protocol::SubjectDisjoint
        };
        let config = experiment_config(a, protocol)?;
        let outcome = run_experiment(&load_manifest(train)?, &load_manifest(test)?, &config)?;
        write_outcome(&a.out, &outcome, a.group_by, a.plot)?;
        print_outcome("", &outcome);
        return Ok(());
    }
    let Some(path) = &a.manifest else {
        return Err(CliError::Usage(
            "eval needs --manifest or both --train and --test".into(),
        ));
    };
    let manifest = load_manifest(path)?;
    let config = experiment_config(a, Protocol::SubjectDisjoint)?;

    if a.split != SplitMode::Subject {
        if a.folds > 1 {
            return Err(CliError::Usage(
                "--folds applies to --split subject only".into(),
            ));
        }
        let (regular, irregular) = split_by_pattern(&manifest)?;
        let (train, test) = match a.split {
            SplitMode::Pattern => (regular, irregular),
            _ => (irregular, regular),
        };
        let outcome = run_experiment(&train, &test, &config)?;
        write_outcome(&a.out, &outcome, a.group_by, a.plot)?;
        print_outcome("", &outcome);
        return Ok(());
    }

    if a.folds == 1 {
        let (train, test) = split_subject_disjoint(&manifest, a.train_fraction, a.common.seed)?;
        let outcome = run_experiment(&train, &test, &config)?;
        write_outcome(&a.out, &outcome, a.group_by, a.plot)?;
        print_outcome("", &outcome);
        return Ok(());
    }

    let mut reports = (Vec::new(), Vec::new(), Vec::new());
    for k in 0..a.folds {
        let seed = a.common.seed.wrapping_add(k as u64);
        let (train, test) = split_subject_disjoint(&manifest, a.train_fraction, seed)?;
        let outcome = run_experiment(&train, &test, &config)?;
        write_outcome(
            &a.out.join(format!("fold{k}")),
            &outcome,
            a.group_by,
            a.plot,
        )?;
        print_outcome(&format!("fold {k} "), &outcome);
        reports.0.push(outcome.pad2d);
        reports.1.extend(outcome.pad3d);
        reports.2.push(outcome.fusion);
    }
    #[derive(serde::Serialize)]
    struct Folds {
        pad2d: FoldSummary,
        pad3d: Option<FoldSummary>,
        fusion: FoldSummary,
    }
    let folds = Folds {
        pad2d: summarize_folds(&reports.0)?,
        pad3d: summarize_folds(&reports.1).ok(),
        fusion: summarize_folds(&reports.2)?,
    };
    let json = serde_json::to_string_pretty(&folds)
        .expect("fold summary serialization cannot fail")
        + "\n";
    write(&a.out.join("folds.json"), &json)?;
    Ok(())
}
