//! Texture-based decision stage: regularized linear classifiers over BSIF
//! histograms, one per filter bank, averaged into an ensemble score.
//!
//! Scores are affine `w·x + b` with attacks encoded as `+1`, so higher means
//! more attack-like. A capture pair's score is the mean over members of the
//! mean over its two images.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bsif::{load_filter_bank, FeatureVector, FilterBank};
use crate::error::{Error, Result};
use crate::threshold;
use crate::types::{Class, Decision, Label, Source};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Hinge,
    Logistic,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Hinge => "hinge",
            LossKind::Logistic => "logistic",
        }
    }

    /// Loss value and its derivative with respect to the score, for target `y = ±1`.
    fn eval(self, y: f64, score: f64) -> (f64, f64) {
        let margin = y * score;
        match self {
            LossKind::Hinge => {
                if margin < 1.0 {
                    (1.0 - margin, -y)
                } else {
                    (0.0, 0.0)
                }
            }
            LossKind::Logistic => {
                // ln(1 + e^{-m}) and its derivative -y·σ(-m), both overflow-safe
                let loss = if margin > 0.0 {
                    (-margin).exp().ln_1p()
                } else {
                    -margin + margin.exp().ln_1p()
                };
                let sigma = if margin > 0.0 {
                    let e = (-margin).exp();
                    e / (1.0 + e)
                } else {
                    1.0 / (1.0 + margin.exp())
                };
                (loss, -y * sigma)
            }
        }
    }
}

impl FromStr for LossKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "hinge" => Ok(LossKind::Hinge),
            "logistic" => Ok(LossKind::Logistic),
            other => Err(format!("unknown loss `{other}` (expected hinge|logistic)")),
        }
    }
}

/// Gradient-descent hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub l2_penalty: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Half-width of the uniform initial weights; `0` starts from the zero vector.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Logistic,
            l2_penalty: 1e-3,
            epochs: 500,
            learning_rate: 0.1,
            init_scale: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub loss: LossKind,
    pub l2_penalty: f64,
    pub trained_on: String,
}

impl LinearModel {
    pub fn new(weights: Vec<f64>, bias: f64, loss: LossKind, l2_penalty: f64) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) || !bias.is_finite() {
            return Err(Error::InvalidInput(
                "model parameters must be finite".into(),
            ));
        }
        Ok(Self {
            weights,
            bias,
            loss,
            l2_penalty,
            trained_on: String::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Model file: `dim loss l2`, then the bias, then the weights.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} {} {}",
            self.dim(),
            self.loss.as_str(),
            self.l2_penalty
        );
        let _ = writeln!(s, "{}", self.bias);
        let w: Vec<String> = self.weights.iter().map(f64::to_string).collect();
        let _ = writeln!(s, "{}", w.join(" "));
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let mut next = |n: usize| {
            lines
                .next()
                .ok_or_else(|| Error::parse(path, n, "truncated model file"))
        };

        let head: Vec<&str> = next(1)?.split_whitespace().collect();
        let [dim, loss, l2] = head[..] else {
            return Err(Error::parse(path, 1, "expected `dim loss l2`"));
        };
        let dim: usize = dim
            .parse()
            .map_err(|_| Error::parse(path, 1, "bad dimension"))?;
        let loss: LossKind = loss.parse().map_err(|e| Error::parse(path, 1, e))?;
        let l2: f64 = l2
            .parse()
            .map_err(|_| Error::parse(path, 1, "bad l2 penalty"))?;
        let bias: f64 = next(2)?
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, 2, "bad bias"))?;
        let weights: Vec<f64> = next(3)?
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(path, 3, "bad weight"))?;
        if weights.len() != dim {
            return Err(Error::parse(
                path,
                3,
                format!("header declares {dim} weights, found {}", weights.len()),
            ));
        }
        let mut model =
            Self::new(weights, bias, loss, l2).map_err(|e| Error::parse(path, 2, e.to_string()))?;
        model.trained_on = path.display().to_string();
        Ok(model)
    }
}

fn target(class: Class) -> f64 {
    match class {
        Class::Attack => 1.0,
        Class::BonaFide => -1.0,
    }
}

/// Trains on raw feature rows with full-batch gradient descent on
/// `mean(loss) + l2/2 · ‖w‖²`.
pub fn train_rows(rows: &[&[f64]], classes: &[Class], config: &TrainConfig) -> Result<LinearModel> {
    if rows.len() != classes.len() {
        return Err(Error::InvalidInput(format!(
            "{} feature rows but {} labels",
            rows.len(),
            classes.len()
        )));
    }
    if !classes.contains(&Class::Attack) {
        return Err(Error::SingleClass("no attack samples"));
    }
    if !classes.contains(&Class::BonaFide) {
        return Err(Error::SingleClass("no bona fide samples"));
    }
    let dim = rows[0].len();
    if let Some(r) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim.to_string(),
            found: r.len().to_string(),
        });
    }
    if config.learning_rate.is_nan()
        || config.learning_rate <= 0.0
        || config.l2_penalty.is_nan()
        || config.l2_penalty < 0.0
    {
        return Err(Error::InvalidInput(
            "learning rate must be positive and the l2 penalty non-negative".into(),
        ));
    }

    let mut weights = vec![0.0; dim];
    if config.init_scale > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for w in &mut weights {
            *w = rng.gen_range(-config.init_scale..=config.init_scale);
        }
    }
    let mut bias = 0.0;
    let n = rows.len() as f64;
    let ys: Vec<f64> = classes.iter().map(|&c| target(c)).collect();
    let mut grad = vec![0.0; dim];

    for epoch in 0..config.epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        let mut loss = 0.0;
        for (row, &y) in rows.iter().zip(&ys) {
            let score = dot(&weights, row) + bias;
            let (l, d) = config.loss.eval(y, score);
            loss += l;
            grad_b += d;
            for (g, x) in grad.iter_mut().zip(row.iter()) {
                *g += d * x;
            }
        }
        let reg = 0.5 * config.l2_penalty * dot(&weights, &weights);
        let objective = loss / n + reg;
        if !objective.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        for (w, g) in weights.iter_mut().zip(&grad) {
            *w -= config.learning_rate * (g / n + config.l2_penalty * *w);
        }
        bias -= config.learning_rate * grad_b / n;
        if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFiniteLoss { epoch });
        }
    }

    let mut model = LinearModel::new(weights, bias, config.loss, config.l2_penalty)?;
    model.trained_on = format!(
        "{} samples, {} epochs, lr {}",
        rows.len(),
        config.epochs,
        config.learning_rate
    );
    Ok(model)
}

pub fn train_linear(
    features: &[FeatureVector],
    labels: &[Label],
    config: &TrainConfig,
) -> Result<LinearModel> {
    let rows: Vec<&[f64]> = features.iter().map(|f| f.values.as_slice()).collect();
    let classes: Vec<Class> = labels.iter().map(|l| l.class).collect();
    train_rows(&rows, &classes, config)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn predict_score(model: &LinearModel, features: &[f64]) -> Result<f64> {
    if features.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim().to_string(),
            found: features.len().to_string(),
        });
    }
    Ok(dot(&model.weights, features) + model.bias)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMember {
    pub bank: FilterBank,
    pub model: LinearModel,
}

/// Per-bank linear models whose scores are averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble2D {
    pub members: Vec<EnsembleMember>,
    pub decision_threshold: f64,
}

pub const ENSEMBLE_FILE: &str = "ensemble.txt";

impl Ensemble2D {
    pub fn new(members: Vec<EnsembleMember>, decision_threshold: f64) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidInput(
                "an ensemble needs at least one member".into(),
            ));
        }
        for m in &members {
            if m.model.dim() != m.bank.histogram_len() {
                return Err(Error::DimensionMismatch {
                    expected: m.bank.histogram_len().to_string(),
                    found: m.model.dim().to_string(),
                });
            }
        }
        if !decision_threshold.is_finite() {
            return Err(Error::InvalidInput(
                "decision threshold must be finite".into(),
            ));
        }
        Ok(Self {
            members,
            decision_threshold,
        })
    }

    /// Distinct banks the members read, in member order.
    pub fn banks(&self) -> Vec<FilterBank> {
        let mut out: Vec<FilterBank> = Vec::new();
        for m in &self.members {
            if !out.iter().any(|b| b.name() == m.bank.name()) {
                out.push(m.bank.clone());
            }
        }
        out
    }

    /// Writes `ensemble.txt`, one `.model` and one `.bank` file per member into `dir`.
    ///
    /// `ensemble.txt` holds `threshold T` followed by one
    /// `member BANK_NAME MODEL_FILE BANK_FILE` line per member, with paths
    /// relative to the directory.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut index = format!("threshold {}\n", self.decision_threshold);
        for (i, m) in self.members.iter().enumerate() {
            let model_file = format!("member{i}_{}.model", m.bank.name());
            let bank_file = format!("{}.bank", m.bank.name());
            m.model.save(dir.join(&model_file))?;
            m.bank.save(dir.join(&bank_file))?;
            let _ = writeln!(index, "member {} {model_file} {bank_file}", m.bank.name());
        }
        let path = dir.join(ENSEMBLE_FILE);
        fs::write(&path, index).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let dir = path.parent().unwrap_or(Path::new("."));
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut threshold = None;
        let mut members = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let f: Vec<&str> = line.split_whitespace().collect();
            match f[..] {
                [] => {}
                ["threshold", t] => {
                    threshold = Some(
                        t.parse::<f64>()
                            .map_err(|_| Error::parse(path, i + 1, "bad threshold"))?,
                    )
                }
                ["member", name, model, bank] => {
                    let mut bank = load_filter_bank(dir.join(bank))?;
                    bank = FilterBank::new(name, bank.size(), bank.kernels().to_vec())?;
                    let model = LinearModel::load(dir.join(model))?;
                    members.push(EnsembleMember { bank, model });
                }
                _ => {
                    return Err(Error::parse(
                        path,
                        i + 1,
                        "expected `threshold T` or `member BANK MODEL_FILE BANK_FILE`",
                    ))
                }
            }
        }
        let threshold =
            threshold.ok_or_else(|| Error::parse(path, 1, "missing `threshold` line"))?;
        Self::new(members, threshold)
    }
}

fn member_score(member: &EnsembleMember, features: &FeatureVector) -> Result<f64> {
    let block = features.block(member.bank.name()).ok_or_else(|| {
        Error::InvalidInput(format!(
            "feature vector has no block for bank `{}`",
            member.bank.name()
        ))
    })?;
    predict_score(&member.model, block)
}

/// Ensemble score of a single image.
pub fn image_score_2d(ensemble: &Ensemble2D, features: &FeatureVector) -> Result<f64> {
    let mut sum = 0.0;
    for m in &ensemble.members {
        sum += member_score(m, features)?;
    }
    Ok(sum / ensemble.members.len() as f64)
}

/// Fused score of a capture pair; symmetric in its two images.
pub fn pair_score_2d(
    ensemble: &Ensemble2D,
    left: &FeatureVector,
    right: &FeatureVector,
) -> Result<f64> {
    let mut sum = 0.0;
    for m in &ensemble.members {
        sum += (member_score(m, left)? + member_score(m, right)?) / 2.0;
    }
    Ok(sum / ensemble.members.len() as f64)
}

pub fn classify_2d(score: f64, ensemble: &Ensemble2D) -> Result<Decision> {
    Decision::threshold(score, ensemble.decision_threshold, Source::Pad2D)
}

/// Trains one member per bank on both images of every pair, then fits the
/// decision threshold on the training pairs' fused scores.
pub fn train_ensemble(
    pairs: &[(FeatureVector, FeatureVector)],
    labels: &[Label],
    banks: &[FilterBank],
    config: &TrainConfig,
) -> Result<Ensemble2D> {
    if pairs.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} feature pairs but {} labels",
            pairs.len(),
            labels.len()
        )));
    }
    if banks.is_empty() {
        return Err(Error::InvalidInput(
            "at least one filter bank is required".into(),
        ));
    }
    let mut members = Vec::with_capacity(banks.len());
    for bank in banks {
        let mut rows = Vec::with_capacity(2 * pairs.len());
        let mut classes = Vec::with_capacity(2 * pairs.len());
        for ((l, r), label) in pairs.iter().zip(labels) {
            for fv in [l, r] {
                rows.push(fv.block(bank.name()).ok_or_else(|| {
                    Error::InvalidInput(format!("features lack a block for bank `{}`", bank.name()))
                })?);
                classes.push(label.class);
            }
        }
        let mut model = train_rows(&rows, &classes, config)?;
        model.trained_on = format!("bank {}; {}", bank.name(), model.trained_on);
        members.push(EnsembleMember {
            bank: bank.clone(),
            model,
        });
    }
    let mut ensemble = Ensemble2D::new(members, 0.0)?;
    let mut scored = Vec::with_capacity(pairs.len());
    for ((l, r), label) in pairs.iter().zip(labels) {
        scored.push((pair_score_2d(&ensemble, l, r)?, label.class));
    }
    ensemble.decision_threshold = threshold::fit_threshold(&scored)?;
    Ok(ensemble)
}
