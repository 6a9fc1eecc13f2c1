//! End-to-end experiment runners: Iris correlation, 1-D out-of-domain
//! detection, the shot-noise sweep and the Fashion-MNIST rotation trend.
//!
//! All randomness flows from `ExperimentConfig::seed` through [`split_seed`]:
//! data generation, training and scoring each draw from their own stream.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::{
    gen_synthetic, load_idx_dataset, load_iris_binary, prepare_fmnist, Dataset, FmnistOptions,
    SyntheticTask, IRIS_CSV, SYNTHETIC_NOISE_STD,
};
use crate::error::{check_len, Error, Result};
use crate::linalg::{mean, pearson, spearman};
use crate::qsim::{build_template, ShotConfig, TemplateKind};
use crate::rng::{rng_from_seed, split_seed};
use crate::training::mlp::{train_mlp_ensemble, MlpConfig, MlpModel};
use crate::training::{train, train_ensemble, DifferentiableModel, TrainConfig, TrainedModel};
use crate::underdet::{member_projectors, score_ensemble, score_points, ScoreReport};

pub const IRIS_LEARNING_RATE: f64 = 0.1;
pub const CIRCUIT_LEARNING_RATE: f64 = 0.05;
pub const DEFAULT_BATCH: usize = 32;
pub const DEFAULT_EPOCHS: usize = 30;
pub const DEFAULT_ANGLES: [f64; 7] = [0.0, 15.0, 30.0, 45.0, 60.0, 75.0, 90.0];

const DATA_STREAM: u64 = 0xDA7A;
const TRAIN_STREAM: u64 = 1;
const SCORE_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    IrisCorrelation,
    SineOod,
    LinearOod,
    NoiseSweep,
    FmnistRotation,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::IrisCorrelation => "iris-correlation",
            Experiment::SineOod => "sine-ood",
            Experiment::LinearOod => "linear-ood",
            Experiment::NoiseSweep => "noise-sweep",
            Experiment::FmnistRotation => "fmnist-rotation",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    #[default]
    Pqc,
    Mlp,
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pqc" => Ok(ModelFamily::Pqc),
            "mlp" => Ok(ModelFamily::Mlp),
            other => Err(Error::InvalidArgument(format!("unknown model family {other:?}"))),
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelFamily::Pqc => "pqc",
            ModelFamily::Mlp => "mlp",
        })
    }
}

/// Settings of one run. Unset options take per-experiment defaults, see
/// [`ExperimentConfig::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub n_members: Option<usize>,
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default)]
    pub shots: Option<Vec<ShotConfig>>,
    #[serde(default)]
    pub angles: Option<Vec<f64>>,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub family: Option<ModelFamily>,
    #[serde(default)]
    pub n_train: Option<usize>,
    #[serde(default)]
    pub n_test: Option<usize>,
    /// Fashion-MNIST subsample sizes per class.
    #[serde(default)]
    pub train_per_class: Option<usize>,
    #[serde(default)]
    pub test_per_class: Option<usize>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub images: Option<PathBuf>,
    #[serde(default)]
    pub labels: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment, seed: u64) -> Self {
        Self {
            experiment,
            seed,
            n_members: None,
            m: None,
            shots: None,
            angles: None,
            epochs: None,
            batch_size: None,
            learning_rate: None,
            family: None,
            n_train: None,
            n_test: None,
            train_per_class: None,
            test_per_class: None,
            output_dir: None,
            images: None,
            labels: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Fills every unset field with the experiment's default and checks the
    /// result.
    pub fn resolve(&self) -> Result<Self> {
        let mut c = self.clone();
        let e = c.experiment;
        let family = *c.family.get_or_insert(ModelFamily::Pqc);
        if family == ModelFamily::Mlp && !matches!(e, Experiment::SineOod | Experiment::LinearOod) {
            return Err(Error::InvalidArgument(format!(
                "the mlp family is only available for 1-D tasks, not {e}"
            )));
        }
        let mlp = family == ModelFamily::Mlp;
        c.n_members.get_or_insert(match e {
            Experiment::IrisCorrelation => 20,
            Experiment::FmnistRotation => 1,
            _ => 10,
        });
        c.m.get_or_insert(match e {
            Experiment::IrisCorrelation => 6,
            Experiment::FmnistRotation => 25,
            _ if mlp => 10,
            _ => 5,
        });
        c.shots.get_or_insert_with(|| match e {
            Experiment::NoiseSweep => vec![
                ShotConfig::Shots(32),
                ShotConfig::Shots(128),
                ShotConfig::Shots(512),
                ShotConfig::Shots(2048),
                ShotConfig::Analytic,
            ],
            _ => vec![ShotConfig::Analytic],
        });
        if e == Experiment::FmnistRotation {
            let defaults = FmnistOptions::default();
            c.angles.get_or_insert_with(|| DEFAULT_ANGLES.to_vec());
            c.train_per_class.get_or_insert(defaults.train_per_class);
            c.test_per_class.get_or_insert(defaults.test_per_class);
        }
        let mlp_defaults = MlpConfig::default();
        c.epochs.get_or_insert(if mlp { mlp_defaults.epochs } else { DEFAULT_EPOCHS });
        c.batch_size.get_or_insert(match e {
            Experiment::IrisCorrelation => 8,
            _ if mlp => 0,
            _ => DEFAULT_BATCH,
        });
        c.learning_rate.get_or_insert(match e {
            Experiment::IrisCorrelation => IRIS_LEARNING_RATE,
            _ if mlp => mlp_defaults.learning_rate,
            _ => CIRCUIT_LEARNING_RATE,
        });
        if matches!(e, Experiment::SineOod | Experiment::LinearOod | Experiment::NoiseSweep) {
            c.n_train.get_or_insert(200);
            c.n_test.get_or_insert(100);
        }
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        let n_members = self.n_members.unwrap_or(0);
        let m = self.m.unwrap_or(0);
        let shots = self.shots.as_deref().unwrap_or(&[]);
        if self.experiment == Experiment::FmnistRotation {
            if n_members == 0 {
                return Err(Error::InvalidArgument("n_members must be >= 1".into()));
            }
            if self.images.is_none() || self.labels.is_none() {
                return Err(Error::InvalidArgument(
                    "fmnist-rotation needs both image and label IDX paths".into(),
                ));
            }
            if self.angles.as_deref().is_some_and(|a| a.iter().any(|v| !v.is_finite())) {
                return Err(Error::InvalidArgument("rotation angles must be finite".into()));
            }
        } else if n_members < 2 {
            return Err(Error::DegenerateVariance(
                "ensemble standard deviation (n_members must be >= 2)",
            ));
        }
        if shots.is_empty() {
            return Err(Error::InvalidArgument("shots list is empty".into()));
        }
        if self.experiment != Experiment::NoiseSweep && shots.len() > 1 {
            return Err(Error::InvalidArgument(format!(
                "{} takes a single shot setting",
                self.experiment
            )));
        }
        if self.epochs == Some(0) {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.family != Some(ModelFamily::Mlp) && self.batch_size == Some(0) {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if !self.learning_rate.is_some_and(|lr| lr.is_finite() && lr > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if let Some(limit) = self.parameter_count() {
            if m > limit {
                return Err(Error::InvalidArgument(format!(
                    "m = {m} exceeds the {limit} parameters of the model"
                )));
            }
        }
        Ok(())
    }

    fn parameter_count(&self) -> Option<usize> {
        let kind = match (self.experiment, self.family) {
            (_, Some(ModelFamily::Mlp)) => {
                let w = MlpConfig::default().widths;
                return Some(w.windows(2).map(|p| p[0] * p[1] + p[1]).sum());
            }
            (Experiment::IrisCorrelation, _) => TemplateKind::Iris,
            (Experiment::FmnistRotation, _) => TemplateKind::Fmnist,
            _ => TemplateKind::Sine1d,
        };
        Some(build_template(kind).n_trainable)
    }

    fn field<T: Copy>(v: Option<T>) -> T {
        v.expect("resolved config")
    }

    fn train_config(&self, shots: ShotConfig) -> TrainConfig {
        TrainConfig {
            epochs: Self::field(self.epochs),
            batch_size: Self::field(self.batch_size),
            learning_rate: Self::field(self.learning_rate),
            seed: split_seed(self.seed, TRAIN_STREAM),
            shots,
        }
    }

    fn mlp_config(&self) -> MlpConfig {
        let batch = Self::field(self.batch_size);
        MlpConfig {
            epochs: Self::field(self.epochs),
            learning_rate: Self::field(self.learning_rate),
            batch_size: (batch > 0).then_some(batch),
            seed: split_seed(self.seed, TRAIN_STREAM),
            ..MlpConfig::default()
        }
    }
}

/// A CSV table; cells are already formatted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: impl Into<String>, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Parses one column back into numbers.
    pub fn column_f64(&self, name: &str) -> Result<Vec<f64>> {
        let j = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidArgument(format!("no column {name:?} in {}", self.name)))?;
        self.rows
            .iter()
            .map(|r| {
                r[j].parse::<f64>()
                    .map_err(|_| Error::Malformed(format!("{}: {:?} is not a number", self.name, r[j])))
            })
            .collect()
    }
}

/// Shortest representation that parses back to the same `f64`.
fn num(v: f64) -> String {
    format!("{v}")
}

/// Outcome of one run: the resolved config, plot-ready tables and summary
/// statistics recomputable from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub tables: Vec<Table>,
    pub summary: BTreeMap<String, Value>,
    pub wall_clock_seconds: f64,
    pub version: String,
}

impl RunReport {
    fn new(config: ExperimentConfig) -> Self {
        Self {
            config,
            tables: Vec::new(),
            summary: BTreeMap::new(),
            wall_clock_seconds: 0.0,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn summary_f64(&self, key: &str) -> Option<f64> {
        self.summary.get(key).and_then(Value::as_f64)
    }

    fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.summary.insert(key.to_string(), value.into());
    }

    pub fn run_dir_name(&self) -> String {
        format!("{}_{}", self.config.experiment, self.config.seed)
    }

    /// Writes `{experiment}_{seed}/{table}.csv` and `summary.json` under
    /// `root`, returning the run directory.
    pub fn write(&self, root: &Path) -> Result<PathBuf> {
        let dir = root.join(self.run_dir_name());
        fs::create_dir_all(&dir)?;
        for t in &self.tables {
            fs::write(dir.join(format!("{}.csv", t.name)), t.to_csv())?;
        }
        let summary = json!({
            "config": self.config,
            "summary": self.summary,
            "wall_clock_seconds": self.wall_clock_seconds,
            "version": self.version,
        });
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
        Ok(dir)
    }
}

/// Best single-feature threshold rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFit {
    pub accuracy: f64,
    pub threshold: f64,
    /// `+1`: predict `true` above the threshold; `-1`: below it.
    pub orientation: i8,
}

/// Exhaustive scan over midpoints of the sorted distinct scores (plus one
/// threshold below and one above all of them) in both orientations. Ties go
/// to the smaller threshold, then to orientation `+1`.
pub fn threshold_classifier_accuracy(scores: &[f64], labels: &[bool]) -> Result<ThresholdFit> {
    check_len("threshold classifier labels", scores.len(), labels.len())?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("threshold classifier scores"));
    }
    let positives = labels.iter().filter(|l| **l).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::InvalidArgument(
            "threshold classifier needs both classes".into(),
        ));
    }
    let mut distinct = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut candidates = Vec::with_capacity(distinct.len() + 1);
    candidates.push(distinct[0] - 1.0);
    candidates.extend(distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    candidates.push(distinct[distinct.len() - 1] + 1.0);

    let n = scores.len() as f64;
    let mut best: Option<ThresholdFit> = None;
    for &t in &candidates {
        let above = scores
            .iter()
            .zip(labels)
            .filter(|(s, l)| (**s > t) == **l)
            .count();
        for (orientation, hits) in [(1i8, above), (-1i8, scores.len() - above)] {
            let accuracy = hits as f64 / n;
            if best.is_none_or(|b| accuracy > b.accuracy) {
                best = Some(ThresholdFit {
                    accuracy,
                    threshold: t,
                    orientation,
                });
            }
        }
    }
    Ok(best.expect("at least two candidates"))
}

fn spectrum_table(report: &ScoreReport) -> Table {
    let mut t = Table::new("spectrum", &["member", "index", "magnitude"]);
    for (k, s) in report.spectra.iter().enumerate() {
        for (i, v) in s.magnitudes.iter().enumerate() {
            t.push(vec![k.to_string(), i.to_string(), num(*v)]);
        }
    }
    t
}

fn members_table<M: DifferentiableModel>(
    members: &[M],
    seeds: &[u64],
    losses: &[f64],
    accuracies: Option<&[f64]>,
) -> Table {
    let mut header = vec!["member", "seed", "n_params", "final_train_loss"];
    if accuracies.is_some() {
        header.push("test_accuracy");
    }
    let mut t = Table::new("members", &header);
    for (k, model) in members.iter().enumerate() {
        let mut row = vec![
            k.to_string(),
            seeds[k].to_string(),
            model.n_params().to_string(),
            num(losses[k]),
        ];
        if let Some(acc) = accuracies {
            row.push(num(acc[k]));
        }
        t.push(row);
    }
    t
}

/// Iris: ensemble of circuits, Hessian spectra, and correlation between the
/// mean extrapolation score and the ensemble standard deviation.
pub fn run_iris_correlation(cfg: &ExperimentConfig) -> Result<RunReport> {
    let start = Instant::now();
    let cfg = expect_experiment(cfg, &[Experiment::IrisCorrelation])?.resolve()?;
    let shots = cfg.shots.as_ref().expect("resolved")[0];
    let mut data_rng = rng_from_seed(split_seed(cfg.seed, DATA_STREAM));
    let (train_set, test_set) = load_iris_binary(IRIS_CSV, &mut data_rng, 0.1)?;
    let template = build_template(TemplateKind::Iris);
    let mut ens = train_ensemble(
        &template,
        &train_set,
        &cfg.train_config(shots),
        ExperimentConfig::field(cfg.n_members),
    )?;
    let mut accuracies = Vec::with_capacity(ens.len());
    for m in &mut ens.members {
        let acc = m.accuracy(&test_set)?;
        m.report.test_accuracy = Some(acc);
        accuracies.push(acc);
    }
    let scores = score_ensemble(
        &ens.members,
        &train_set,
        &test_set,
        ExperimentConfig::field(cfg.m),
        shots,
        split_seed(cfg.seed, SCORE_STREAM),
    )?;
    let r = pearson(&scores.mean_scores(), &scores.stds())?;

    let mut report = RunReport::new(cfg.clone());
    report.tables.push(spectrum_table(&scores));
    let mut t = Table::new(
        "scores",
        &["index", "x0", "x1", "x2", "x3", "label", "mean_prediction", "std", "mean_score"],
    );
    for (i, (row, p)) in scores.rows.iter().zip(&test_set.points).enumerate() {
        let mut cells = vec![i.to_string()];
        cells.extend(row.x.iter().map(|v| num(*v)));
        cells.extend([num(p.y), num(row.prediction.mean), num(row.prediction.std), num(row.mean_score)]);
        t.push(cells);
    }
    report.tables.push(t);
    let losses: Vec<f64> = ens.members.iter().map(|m| m.report.final_train_loss).collect();
    report.tables.push(members_table(&ens.members, &ens.seeds, &losses, Some(&accuracies)));
    report.set("pearson_r", r);
    report.set("min_member_accuracy", accuracies.iter().copied().fold(f64::INFINITY, f64::min));
    report.set("n_test", test_set.len() as u64);
    report.set("n_train", train_set.len() as u64);
    report.set("suggested_m_member0", json!(scores.spectra[0].suggested_m));
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Scores of one trained 1-D ensemble against the in/out-of-domain labels.
struct OodOutcome {
    test: Dataset,
    scores: ScoreReport,
    seeds: Vec<u64>,
    losses: Vec<f64>,
    n_params: Vec<usize>,
    score_fit: ThresholdFit,
    std_fit: ThresholdFit,
}

impl OodOutcome {
    fn domain_means(&self) -> (f64, f64) {
        let flags = self.test.domain_flags();
        let pick = |inside: bool| -> Vec<f64> {
            self.scores
                .rows
                .iter()
                .zip(&flags)
                .filter(|(_, f)| **f == inside)
                .map(|(r, _)| r.mean_score)
                .collect()
        };
        (mean(&pick(true)), mean(&pick(false)))
    }

    fn predictions_table(&self, name: &str) -> Table {
        let mut t = Table::new(
            name,
            &["x", "y", "in_train_domain", "mean_prediction", "std", "mean_score"],
        );
        for (row, p) in self.scores.rows.iter().zip(&self.test.points) {
            t.push(vec![
                num(p.x[0]),
                num(p.y),
                p.in_train_domain.to_string(),
                num(row.prediction.mean),
                num(row.prediction.std),
                num(row.mean_score),
            ]);
        }
        t
    }
}

fn score_family<M: DifferentiableModel>(
    members: &[M],
    train_set: &Dataset,
    test: &Dataset,
    m: usize,
    shots: ShotConfig,
    seed: u64,
) -> Result<ScoreReport> {
    score_ensemble(members, train_set, test, m, shots, split_seed(seed, SCORE_STREAM))
}

fn ood_pipeline(cfg: &ExperimentConfig, task: SyntheticTask, shots: ShotConfig) -> Result<OodOutcome> {
    let mut data_rng = rng_from_seed(split_seed(cfg.seed, DATA_STREAM));
    let (train_set, test) = gen_synthetic(
        task,
        ExperimentConfig::field(cfg.n_train),
        ExperimentConfig::field(cfg.n_test),
        SYNTHETIC_NOISE_STD,
        &mut data_rng,
    )?;
    let n_members = ExperimentConfig::field(cfg.n_members);
    let m = ExperimentConfig::field(cfg.m);
    let (scores, seeds, losses, n_params) = match ExperimentConfig::field(cfg.family) {
        ModelFamily::Pqc => {
            let template = build_template(TemplateKind::Sine1d);
            let ens = train_ensemble(&template, &train_set, &cfg.train_config(shots), n_members)?;
            let scores = score_family(&ens.members, &train_set, &test, m, shots, cfg.seed)?;
            (
                scores,
                ens.seeds,
                ens.members.iter().map(|t| t.report.final_train_loss).collect(),
                ens.members.iter().map(|t| t.n_params()).collect(),
            )
        }
        ModelFamily::Mlp => {
            let ens = train_mlp_ensemble(&train_set, &cfg.mlp_config(), n_members)?;
            let scores = score_family(&ens.members, &train_set, &test, m, shots, cfg.seed)?;
            (
                scores,
                ens.seeds,
                ens.members.iter().map(|t: &MlpModel| t.report.final_train_loss).collect(),
                ens.members.iter().map(|t| t.n_params()).collect(),
            )
        }
    };
    let out_of_domain: Vec<bool> = test.domain_flags().iter().map(|f| !f).collect();
    let score_fit = threshold_classifier_accuracy(&scores.mean_scores(), &out_of_domain)?;
    let std_fit = threshold_classifier_accuracy(&scores.stds(), &out_of_domain)?;
    Ok(OodOutcome {
        test,
        scores,
        seeds,
        losses,
        n_params,
        score_fit,
        std_fit,
    })
}

fn task_of(e: Experiment) -> SyntheticTask {
    match e {
        Experiment::LinearOod => SyntheticTask::Linear,
        _ => SyntheticTask::Sine,
    }
}

fn expect_experiment(cfg: &ExperimentConfig, allowed: &[Experiment]) -> Result<ExperimentConfig> {
    if allowed.contains(&cfg.experiment) {
        Ok(cfg.clone())
    } else {
        Err(Error::InvalidArgument(format!(
            "config is for {}, expected one of {:?}",
            cfg.experiment,
            allowed.iter().map(|e| e.name()).collect::<Vec<_>>()
        )))
    }
}

/// 1-D regression with training data on `[−1,0] ∪ [1,2]` and a test grid over
/// `[−3,4]`; the task (sine or linear) follows `cfg.experiment`.
pub fn run_ood_1d(cfg: &ExperimentConfig) -> Result<RunReport> {
    let start = Instant::now();
    let cfg = expect_experiment(cfg, &[Experiment::SineOod, Experiment::LinearOod])?.resolve()?;
    let shots = cfg.shots.as_ref().expect("resolved")[0];
    let out = ood_pipeline(&cfg, task_of(cfg.experiment), shots)?;
    let (in_mean, out_mean) = out.domain_means();

    let mut report = RunReport::new(cfg.clone());
    report.tables.push(out.predictions_table("predictions"));
    report.tables.push(spectrum_table(&out.scores));
    let mut members = Table::new("members", &["member", "seed", "n_params", "final_train_loss"]);
    for k in 0..out.seeds.len() {
        members.push(vec![
            k.to_string(),
            out.seeds[k].to_string(),
            out.n_params[k].to_string(),
            num(out.losses[k]),
        ]);
    }
    report.tables.push(members);
    report.set("score_accuracy", out.score_fit.accuracy);
    report.set("score_threshold", out.score_fit.threshold);
    report.set("score_orientation", out.score_fit.orientation as i64);
    report.set("std_accuracy", out.std_fit.accuracy);
    report.set("std_threshold", out.std_fit.threshold);
    report.set("std_orientation", out.std_fit.orientation as i64);
    report.set("in_domain_mean_score", in_mean);
    report.set("out_domain_mean_score", out_mean);
    report.set("mean_train_loss", mean(&out.losses));
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Retrains and rescores the sine ensemble at every shot setting, comparing
/// threshold classifiers on the mean score and on the ensemble std.
pub fn run_noise_sweep(cfg: &ExperimentConfig) -> Result<RunReport> {
    let start = Instant::now();
    let cfg = expect_experiment(cfg, &[Experiment::NoiseSweep])?.resolve()?;
    let mut report = RunReport::new(cfg.clone());
    let mut sweep = Table::new(
        "sweep",
        &[
            "shots",
            "score_accuracy",
            "std_accuracy",
            "in_domain_mean_score",
            "out_domain_mean_score",
            "mean_train_loss",
        ],
    );
    let mut wins = 0u64;
    let levels = cfg.shots.clone().expect("resolved");
    let mut in_means = BTreeMap::new();
    for shots in &levels {
        let out = ood_pipeline(&cfg, SyntheticTask::Sine, *shots)?;
        let (in_mean, out_mean) = out.domain_means();
        if out.score_fit.accuracy >= out.std_fit.accuracy {
            wins += 1;
        }
        in_means.insert(shots.to_string(), in_mean);
        sweep.push(vec![
            shots.to_string(),
            num(out.score_fit.accuracy),
            num(out.std_fit.accuracy),
            num(in_mean),
            num(out_mean),
            num(mean(&out.losses)),
        ]);
        report.tables.push(out.predictions_table(&format!("predictions_{shots}")));
    }
    report.tables.insert(0, sweep);
    report.set("n_settings", levels.len() as u64);
    report.set("score_wins", wins);
    report.set("score_wins_majority", 2 * wins > levels.len() as u64);
    report.set("in_domain_mean_score", json!(in_means));
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Fashion-MNIST: train on two classes in PCA space, then score test images
/// rotated by increasing angles.
pub fn run_fmnist_rotation(cfg: &ExperimentConfig) -> Result<RunReport> {
    let start = Instant::now();
    let cfg = expect_experiment(cfg, &[Experiment::FmnistRotation])?.resolve()?;
    let shots = cfg.shots.as_ref().expect("resolved")[0];
    let records = load_idx_dataset(
        cfg.images.as_ref().expect("validated"),
        cfg.labels.as_ref().expect("validated"),
    )?;
    let mut data_rng = rng_from_seed(split_seed(cfg.seed, DATA_STREAM));
    let options = FmnistOptions {
        train_per_class: ExperimentConfig::field(cfg.train_per_class),
        test_per_class: ExperimentConfig::field(cfg.test_per_class),
        ..FmnistOptions::default()
    };
    let data = prepare_fmnist(&records, options, &mut data_rng)?;
    let template = build_template(TemplateKind::Fmnist);
    let train_cfg = cfg.train_config(shots);
    let n_members = ExperimentConfig::field(cfg.n_members);
    let members: Vec<TrainedModel> = if n_members == 1 {
        vec![train(&template, &data.train, &train_cfg)?]
    } else {
        train_ensemble(&template, &data.train, &train_cfg, n_members)?.members
    };
    let score_seed = split_seed(cfg.seed, SCORE_STREAM);
    let (spectra, projectors) = member_projectors(
        &members,
        &data.train,
        ExperimentConfig::field(cfg.m),
        shots,
        split_seed(score_seed, 0),
    )?;

    let mut report = RunReport::new(cfg.clone());
    let mut per_angle = Table::new(
        "angles",
        &["angle", "mean_score", "mean_std", "accuracy"],
    );
    let angles = cfg.angles.clone().expect("resolved");
    let mut mean_scores = Vec::with_capacity(angles.len());
    for (a, &angle) in angles.iter().enumerate() {
        let test = data.rotated_test_set(angle)?;
        let rows = score_points(&members, &projectors, &test, shots, split_seed(score_seed, 1 + a as u64))?;
        let s = mean(&rows.iter().map(|r| r.mean_score).collect::<Vec<_>>());
        let sd = mean(&rows.iter().map(|r| r.prediction.std).collect::<Vec<_>>());
        let preds: Vec<f64> = rows.iter().map(|r| r.prediction.mean).collect();
        let acc = crate::training::sign_accuracy(&preds, &test.targets());
        mean_scores.push(s);
        per_angle.push(vec![num(angle), num(s), num(sd), num(acc)]);
    }
    report.tables.push(per_angle);
    let mut spec = Table::new("spectrum", &["member", "index", "magnitude"]);
    for (k, s) in spectra.iter().enumerate() {
        for (i, v) in s.eigenvalues.iter().enumerate() {
            spec.push(vec![k.to_string(), i.to_string(), num(v.abs())]);
        }
    }
    report.tables.push(spec);
    let losses: Vec<f64> = members.iter().map(|m| m.report.final_train_loss).collect();
    let seeds: Vec<u64> = if n_members == 1 {
        vec![train_cfg.seed]
    } else {
        (0..n_members).map(|k| crate::training::member_seed(train_cfg.seed, k)).collect()
    };
    report.tables.push(members_table(&members, &seeds, &losses, None));
    report.set("spearman", json!(spearman(&angles, &mean_scores).ok()));
    report.set("first_angle_score", mean_scores[0]);
    report.set("last_angle_score", mean_scores[mean_scores.len() - 1]);
    report.set("n_train", data.train.len() as u64);
    report.set("n_test", data.test_images.len() as u64);
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Dispatches on `cfg.experiment`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    match cfg.experiment {
        Experiment::IrisCorrelation => run_iris_correlation(cfg),
        Experiment::SineOod | Experiment::LinearOod => run_ood_1d(cfg),
        Experiment::NoiseSweep => run_noise_sweep(cfg),
        Experiment::FmnistRotation => run_fmnist_rotation(cfg),
    }
}
