//! Training runs and multi-seed comparisons.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{load_dataset, zscore_per_channel_train_stats, DataError, Format, Split, TimeSeriesDataset};
use crate::metrics::{evaluate, MetricSet};
use crate::model::{Architecture, Model, ModelConfig, ModelError};
use crate::optim::{fic_step, sam_step, FicConfig, ModelBatch, OptimError, OptimizerState, StepDiagnostics};
use crate::sharpness::{model_sharpness_pair, SharpnessError, SharpnessReport};
use crate::stats::{median, wilcoxon_signed_rank, Alternative, StatsError, WilcoxonResult};
use crate::synth::{generate_synthetic_shift, RecipeError, SyntheticShiftRecipe};

/// Steps excluded from the per-iteration timing mean.
pub const TIMING_WARMUP_STEPS: usize = 10;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Recipe(#[from] RecipeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Sharpness(#[from] SharpnessError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("training diverged at step {}", .step.step)]
    Diverged {
        step: StepDiagnostics,
        partial: Box<RunReport>,
    },
}

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticShiftRecipe),
    Files { train: PathBuf, test: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerChoice {
    Plain,
    Fic,
    Sam,
}

impl OptimizerChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerChoice::Plain => "plain",
            OptimizerChoice::Fic => "fic",
            OptimizerChoice::Sam => "sam",
        }
    }
}

impl FromStr for OptimizerChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "plain" => Ok(OptimizerChoice::Plain),
            "fic" => Ok(OptimizerChoice::Fic),
            "sam" => Ok(OptimizerChoice::Sam),
            _ => Err(format!("unknown optimizer {s:?} (plain|fic|sam)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub architecture: Architecture,
    pub width: usize,
    pub depth: usize,
    pub optimizer: OptimizerChoice,
    pub epsilon: f64,
    pub rho: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub zscore: bool,
    pub instance_norm: bool,
    /// Compute the sharpness pair on the training split after training.
    pub sharpness: bool,
    pub sharpness_alpha: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic(SyntheticShiftRecipe::canonical(0)),
            architecture: Architecture::InceptionLite,
            width: 32,
            depth: 1,
            optimizer: OptimizerChoice::Plain,
            epsilon: 2.0,
            rho: 0.05,
            lr: 5e-3,
            weight_decay: 1e-4,
            batch: 64,
            epochs: 30,
            seed: 0,
            zscore: true,
            instance_norm: false,
            sharpness: true,
            sharpness_alpha: 0.05,
        }
    }
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected a boolean, got {v:?}")),
    }
}

impl ExperimentConfig {
    pub const KEYS: &'static [&'static str] = &[
        "dataset",
        "train",
        "test",
        "recipe_seed",
        "architecture",
        "width",
        "depth",
        "optimizer",
        "epsilon",
        "rho",
        "lr",
        "weight_decay",
        "batch",
        "epochs",
        "seed",
        "zscore",
        "instance_norm",
        "sharpness",
        "sharpness_alpha",
    ];

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_pairs(parse_kv_text(text)?)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_kv_text(&text)
    }

    /// Applies overrides in a fixed order: data selection first, then the
    /// recipe seed, then everything else.
    pub fn apply_pairs(&mut self, pairs: BTreeMap<String, String>) -> Result<()> {
        let mut pairs = pairs;
        let bad = |k: &str, e: String| HarnessError::Config(format!("{k}: {e}"));
        let train = pairs.remove("train");
        let test = pairs.remove("test");
        if let Some(ds) = pairs.remove("dataset") {
            self.source = match ds.as_str() {
                "canonical" => DataSource::Synthetic(SyntheticShiftRecipe::canonical(0)),
                "offset-only" => DataSource::Synthetic(SyntheticShiftRecipe::offset_only_two_class(2.0, 0)),
                "file" => DataSource::Files {
                    train: PathBuf::new(),
                    test: PathBuf::new(),
                },
                other => {
                    return Err(bad(
                        "dataset",
                        format!("unknown dataset {other:?} (canonical|offset-only|file)"),
                    ))
                }
            };
        }
        match (train, test) {
            (Some(a), Some(b)) => {
                self.source = DataSource::Files {
                    train: a.into(),
                    test: b.into(),
                }
            }
            (None, None) => {}
            _ => {
                return Err(HarnessError::Config(
                    "train and test paths must be given together".into(),
                ))
            }
        }
        if let DataSource::Files { train, .. } = &self.source {
            if train.as_os_str().is_empty() {
                return Err(HarnessError::Config("dataset=file needs train and test paths".into()));
            }
        }
        if let Some(v) = pairs.remove("recipe_seed") {
            let s: u64 = v
                .parse()
                .map_err(|_| bad("recipe_seed", format!("bad integer {v:?}")))?;
            match &mut self.source {
                DataSource::Synthetic(r) => r.seed = s,
                DataSource::Files { .. } => {
                    return Err(HarnessError::Config("recipe_seed conflicts with file data".into()))
                }
            }
        }
        for (k, v) in pairs {
            let int = |v: &str| v.parse::<u64>().map_err(|_| bad(&k, format!("bad integer {v:?}")));
            let float = |v: &str| v.parse::<f64>().map_err(|_| bad(&k, format!("bad number {v:?}")));
            match k.as_str() {
                "architecture" => self.architecture = v.parse().map_err(|e| bad(&k, e))?,
                "width" => self.width = int(&v)? as usize,
                "depth" => self.depth = int(&v)? as usize,
                "optimizer" => self.optimizer = v.parse().map_err(|e| bad(&k, e))?,
                "epsilon" => self.epsilon = float(&v)?,
                "rho" => self.rho = float(&v)?,
                "lr" => self.lr = float(&v)?,
                "weight_decay" => self.weight_decay = float(&v)?,
                "batch" => self.batch = int(&v)? as usize,
                "epochs" => self.epochs = int(&v)? as usize,
                "seed" => self.seed = int(&v)?,
                "zscore" => self.zscore = parse_bool(&v).map_err(|e| bad(&k, e))?,
                "instance_norm" => self.instance_norm = parse_bool(&v).map_err(|e| bad(&k, e))?,
                "sharpness" => self.sharpness = parse_bool(&v).map_err(|e| bad(&k, e))?,
                "sharpness_alpha" => self.sharpness_alpha = float(&v)?,
                _ => return Err(HarnessError::Config(format!("unknown key {k:?}"))),
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.batch == 0 {
            return bad("batch must be at least 1".into());
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("lr must be positive and weight_decay non-negative".into());
        }
        if self.optimizer == OptimizerChoice::Fic && !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.optimizer == OptimizerChoice::Sam && !(self.rho > 0.0) {
            return bad(format!("rho must be positive, got {}", self.rho));
        }
        if self.sharpness && !(self.sharpness_alpha > 0.0) {
            return bad("sharpness_alpha must be positive".into());
        }
        if let DataSource::Synthetic(r) = &self.source {
            r.validate()?;
        }
        Ok(())
    }

    /// The key-value form read back by [`ExperimentConfig::from_kv_text`].
    /// Custom recipes are written by name only.
    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        match &self.source {
            DataSource::Synthetic(r) => {
                let name = if r.name == "offset-only" {
                    "offset-only"
                } else {
                    "canonical"
                };
                writeln!(s, "dataset = {name}\nrecipe_seed = {}", r.seed).unwrap();
            }
            DataSource::Files { train, test } => {
                writeln!(s, "train = {}\ntest = {}", train.display(), test.display()).unwrap();
            }
        }
        writeln!(s, "architecture = {}", self.architecture).unwrap();
        writeln!(s, "width = {}\ndepth = {}", self.width, self.depth).unwrap();
        writeln!(s, "optimizer = {}", self.optimizer.as_str()).unwrap();
        writeln!(s, "epsilon = {}\nrho = {}", self.epsilon, self.rho).unwrap();
        writeln!(s, "lr = {}\nweight_decay = {}", self.lr, self.weight_decay).unwrap();
        writeln!(
            s,
            "batch = {}\nepochs = {}\nseed = {}",
            self.batch, self.epochs, self.seed
        )
        .unwrap();
        writeln!(s, "zscore = {}\ninstance_norm = {}", self.zscore, self.instance_norm).unwrap();
        writeln!(
            s,
            "sharpness = {}\nsharpness_alpha = {}",
            self.sharpness, self.sharpness_alpha
        )
        .unwrap();
        s
    }

    pub fn fic_config(&self) -> FicConfig {
        match self.optimizer {
            OptimizerChoice::Fic => FicConfig {
                epsilon: self.epsilon,
                enabled: true,
            },
            _ => FicConfig::disabled(),
        }
    }
}

pub fn parse_kv_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("line {}: expected key = value", no + 1)))?;
        if out.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(HarnessError::Config(format!(
                "line {}: duplicate key {:?}",
                no + 1,
                k.trim()
            )));
        }
    }
    Ok(out)
}

/// Loads or generates both splits, pads to a common length and applies the
/// train-statistics z-score when requested.
pub fn prepare_data(config: &ExperimentConfig) -> Result<(TimeSeriesDataset, TimeSeriesDataset)> {
    let (train, test) = match &config.source {
        DataSource::Synthetic(r) => generate_synthetic_shift(r)?,
        DataSource::Files { train, test } => (
            load_dataset(train, Format::from_path(train), Split::Train)?,
            load_dataset(test, Format::from_path(test), Split::Test)?,
        ),
    };
    let len = train.max_length().max(test.max_length());
    let (train, test) = (train.pad_to_length(len)?, test.pad_to_length(len)?);
    if config.zscore {
        Ok(zscore_per_channel_train_stats(&train, &test)?)
    } else {
        Ok((train, test))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub metrics: MetricSet,
    pub train_metrics: MetricSet,
    /// Mini-batch loss of every step.
    pub loss_curve: Vec<f64>,
    /// Mean mini-batch loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// `‖F‖₁` of every step's mini-batch gradient, before renormalization.
    pub fim_norms: Vec<f64>,
    pub steps: usize,
    pub trigger_rate: f64,
    /// Mean renormalization factor over all steps (1 when never triggered).
    pub mean_scale: f64,
    /// Mean wall-clock seconds per step, skipping warm-up.
    pub step_seconds: f64,
    pub forward_passes: u64,
    pub backward_passes: u64,
    /// Batch-mean and per-sample-expectation estimates on the training split.
    pub sharpness: Option<(SharpnessReport, SharpnessReport)>,
}

impl RunReport {
    /// `per-sample-expectation` sharpness, if computed.
    pub fn sharpness_value(&self) -> Option<f64> {
        self.sharpness.map(|(_, ps)| ps.sharpness)
    }

    /// Same numbers with the wall-clock field zeroed.
    pub fn without_timing(&self) -> RunReport {
        RunReport {
            step_seconds: 0.0,
            ..self.clone()
        }
    }

    pub fn to_records(&self) -> String {
        let mut s = String::new();
        let mut run = format!(
            "record=run optimizer={} seed={} steps={} trigger_rate={:.6} mean_scale={:.9} step_seconds={:.6e} forward_passes={} backward_passes={}",
            self.config.optimizer.as_str(),
            self.config.seed,
            self.steps,
            self.trigger_rate,
            self.mean_scale,
            self.step_seconds,
            self.forward_passes,
            self.backward_passes
        );
        for (k, v) in self.metrics.as_pairs() {
            write!(run, " test_{k}={v:.6}").unwrap();
        }
        for (k, v) in self.train_metrics.as_pairs() {
            write!(run, " train_{k}={v:.6}").unwrap();
        }
        writeln!(s, "{run}").unwrap();
        if let Some((a, b)) = &self.sharpness {
            writeln!(s, "{}", a.record_line()).unwrap();
            writeln!(s, "{}", b.record_line()).unwrap();
        }
        for (e, l) in self.epoch_losses.iter().enumerate() {
            writeln!(s, "record=epoch epoch={} loss={l:.12e}", e + 1).unwrap();
        }
        s
    }

    pub fn summary_table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:<22} {:>12}", "quantity", "value").unwrap();
        writeln!(s, "{:<22} {:>12}", "optimizer", self.config.optimizer.as_str()).unwrap();
        for (k, v) in self.metrics.as_pairs() {
            writeln!(s, "{:<22} {:>12.4}", format!("test {k}"), v).unwrap();
        }
        writeln!(s, "{:<22} {:>12}", "steps", self.steps).unwrap();
        writeln!(s, "{:<22} {:>12.4}", "trigger rate", self.trigger_rate).unwrap();
        writeln!(s, "{:<22} {:>12.4}", "mean scale", self.mean_scale).unwrap();
        writeln!(s, "{:<22} {:>12.3e}", "seconds / step", self.step_seconds).unwrap();
        writeln!(s, "{:<22} {:>12}", "backward passes", self.backward_passes).unwrap();
        if let Some((a, b)) = &self.sharpness {
            writeln!(s, "{:<22} {:>12.4e}", "sharpness (batch)", a.sharpness).unwrap();
            writeln!(s, "{:<22} {:>12.4e}", "sharpness (per-sample)", b.sharpness).unwrap();
        }
        s
    }

    /// One `epoch loss` row per epoch.
    pub fn loss_curve_text(&self) -> String {
        let mut s = String::from("# epoch loss\n");
        for (e, l) in self.epoch_losses.iter().enumerate() {
            writeln!(s, "{} {l:.12e}", e + 1).unwrap();
        }
        s
    }
}

pub fn train(config: &ExperimentConfig) -> Result<RunReport> {
    Ok(train_model(config)?.0)
}

pub fn train_model(config: &ExperimentConfig) -> Result<(RunReport, Model)> {
    config.validate()?;
    let (train, test) = prepare_data(config)?;
    train_on(config, &train, &test)
}

/// Trains on already prepared splits.
pub fn train_on(
    config: &ExperimentConfig,
    train: &TimeSeriesDataset,
    test: &TimeSeriesDataset,
) -> Result<(RunReport, Model)> {
    config.validate()?;
    let length = train
        .length()
        .ok_or_else(|| HarnessError::Config("training data must have equal lengths".into()))?;
    let mut mc = ModelConfig::new(
        config.architecture,
        train.channels(),
        length,
        train.num_classes().max(test.num_classes()),
    );
    mc.width = config.width;
    mc.depth = config.depth;
    mc.use_instance_norm = config.instance_norm;
    mc.seed = config.seed;
    let mut model = Model::build(mc)?;
    let mut params = model.params.flatten();
    let mut state = OptimizerState::new(
        params.len(),
        config.lr,
        config.weight_decay,
        crate::optim::UpdateRule::adamw(),
    );
    let fic = config.fic_config();
    let batches = crate::dataset::BatchIterator::new(train.len(), config.batch, config.seed);

    let mut loss_curve = Vec::new();
    let mut fim_norms = Vec::new();
    let mut epoch_losses = Vec::new();
    let mut step_times = Vec::new();
    let (mut triggered, mut scale_sum) = (0usize, 0.0);
    let mut failure = None;
    'epochs: for epoch in 0..config.epochs {
        let mut sum = 0.0;
        let mut count = 0;
        for idx in batches.epoch(epoch as u64) {
            let x = train.batch_tensor(&idx)?;
            let labels = train.batch_labels(&idx);
            let start = Instant::now();
            let result = {
                let obj = ModelBatch {
                    model: &model,
                    inputs: &x,
                    labels: &labels,
                };
                match config.optimizer {
                    OptimizerChoice::Sam => sam_step(&obj, &mut params, config.rho, &mut state),
                    _ => fic_step(&obj, &mut params, &fic, &mut state),
                }
            };
            step_times.push(start.elapsed().as_secs_f64());
            match result {
                Ok(d) => {
                    loss_curve.push(d.loss);
                    fim_norms.push(d.fim_norm_before);
                    sum += d.loss;
                    count += 1;
                    triggered += d.triggered as usize;
                    scale_sum += d.scale_applied;
                }
                Err(OptimError::NonFiniteLoss(d)) => {
                    failure = Some(d);
                    break 'epochs;
                }
                Err(e) => return Err(e.into()),
            }
        }
        epoch_losses.push(sum / count.max(1) as f64);
    }
    let steps = loss_curve.len();
    let timed = if step_times.len() > TIMING_WARMUP_STEPS {
        &step_times[TIMING_WARMUP_STEPS..]
    } else {
        &step_times[..]
    };
    let step_seconds = if timed.is_empty() {
        0.0
    } else {
        (timed.iter().sum::<f64>() / timed.len() as f64).max(f64::MIN_POSITIVE)
    };
    let mut report = RunReport {
        config: config.clone(),
        metrics: chance_metrics(),
        train_metrics: chance_metrics(),
        loss_curve,
        epoch_losses,
        fim_norms,
        steps,
        trigger_rate: if steps == 0 {
            0.0
        } else {
            triggered as f64 / steps as f64
        },
        mean_scale: if steps == 0 { 1.0 } else { scale_sum / steps as f64 },
        step_seconds,
        forward_passes: state.forward_passes,
        backward_passes: state.backward_passes,
        sharpness: None,
    };
    if let Some(step) = failure {
        return Err(HarnessError::Diverged {
            step,
            partial: Box::new(report),
        });
    }
    model.params.unflatten(&params)?;
    report.metrics = evaluate(&model, test)?.0;
    report.train_metrics = evaluate(&model, train)?.0;
    if config.sharpness {
        report.sharpness = Some(model_sharpness_pair(&model, train, config.sharpness_alpha)?);
    }
    Ok((report, model))
}

fn chance_metrics() -> MetricSet {
    MetricSet {
        accuracy: 0.0,
        balanced_accuracy: 0.0,
        macro_f1: 0.0,
        macro_precision: 0.0,
        macro_recall: 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arm {
    Baseline,
    Fic,
    Sam,
    /// Baseline training with instance normalization on the input.
    InAblation,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::Baseline, Arm::Fic, Arm::Sam, Arm::InAblation];

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::Fic => "fic",
            Arm::Sam => "sam",
            Arm::InAblation => "in-ablation",
        }
    }

    /// The arm's variant of `base`, with data and model seeds set to `seed`.
    pub fn configure(self, base: &ExperimentConfig, seed: u64) -> ExperimentConfig {
        let mut c = base.clone();
        c.seed = seed;
        if let DataSource::Synthetic(r) = &mut c.source {
            r.seed = seed;
        }
        c.instance_norm = false;
        c.optimizer = match self {
            Arm::Baseline => OptimizerChoice::Plain,
            Arm::Fic => OptimizerChoice::Fic,
            Arm::Sam => OptimizerChoice::Sam,
            Arm::InAblation => {
                c.instance_norm = true;
                OptimizerChoice::Plain
            }
        };
        c
    }
}

impl FromStr for Arm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Arm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown arm {s:?} (baseline|fic|sam|in-ablation)"))
    }
}

#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub base: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub arms: Vec<Arm>,
    /// Run independent (seed, arm) pairs on the rayon pool.
    pub parallel: bool,
}

impl SuiteConfig {
    pub fn new(base: ExperimentConfig, seeds: Vec<u64>, arms: Vec<Arm>) -> Self {
        Self {
            base,
            seeds,
            arms,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ArmRun {
    pub arm: Arm,
    pub seed: u64,
    pub report: RunReport,
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub runs: Vec<ArmRun>,
    /// One-sided test that FIC test accuracy exceeds baseline.
    pub fic_vs_baseline: Option<std::result::Result<WilcoxonResult, StatsError>>,
    pub median_fic_improvement: Option<f64>,
    /// Two-sided test of IN against baseline accuracy.
    pub in_vs_baseline: Option<std::result::Result<WilcoxonResult, StatsError>>,
    pub median_in_improvement: Option<f64>,
    /// Per-seed FIC/baseline per-sample-expectation sharpness.
    pub sharpness_ratios: Vec<f64>,
    pub mean_step_seconds: BTreeMap<Arm, f64>,
}

impl ComparisonReport {
    pub fn accuracies(&self, arm: Arm) -> Vec<f64> {
        self.runs
            .iter()
            .filter(|r| r.arm == arm)
            .map(|r| r.report.metrics.accuracy)
            .collect()
    }

    pub fn median_sharpness_ratio(&self) -> Option<f64> {
        (!self.sharpness_ratios.is_empty()).then(|| median(&self.sharpness_ratios))
    }

    pub fn to_records(&self) -> String {
        let mut s = String::new();
        for r in &self.runs {
            for line in r.report.to_records().lines().filter(|l| !l.starts_with("record=epoch")) {
                writeln!(s, "arm={} {line}", r.arm.as_str()).unwrap();
            }
        }
        let test_line =
            |name: &str, t: &Option<std::result::Result<WilcoxonResult, StatsError>>, med: Option<f64>| match t {
                Some(Ok(w)) => format!(
                    "record=wilcoxon comparison={name} n={} w_plus={} p_value={:.6e} exact={} median_improvement={:.6}",
                    w.n,
                    w.w_plus,
                    w.p_value,
                    w.exact,
                    med.unwrap_or(0.0)
                ),
                Some(Err(e)) => format!("record=wilcoxon comparison={name} error=\"{e}\""),
                None => String::new(),
            };
        for line in [
            test_line("fic-vs-baseline", &self.fic_vs_baseline, self.median_fic_improvement),
            test_line("in-vs-baseline", &self.in_vs_baseline, self.median_in_improvement),
        ] {
            if !line.is_empty() {
                writeln!(s, "{line}").unwrap();
            }
        }
        if let Some(m) = self.median_sharpness_ratio() {
            writeln!(
                s,
                "record=sharpness_ratio median={m:.6} n={}",
                self.sharpness_ratios.len()
            )
            .unwrap();
        }
        for (arm, t) in &self.mean_step_seconds {
            writeln!(s, "record=runtime arm={} mean_step_seconds={t:.6e}", arm.as_str()).unwrap();
        }
        s
    }

    pub fn summary_table(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "{:<12} {:>6} {:>10} {:>10} {:>12} {:>12}",
            "arm", "runs", "mean acc", "median acc", "s / step", "sharpness"
        )
        .unwrap();
        let mut arms: Vec<Arm> = self.runs.iter().map(|r| r.arm).collect();
        arms.sort();
        arms.dedup();
        for arm in arms {
            let acc = self.accuracies(arm);
            let sh: Vec<f64> = self
                .runs
                .iter()
                .filter(|r| r.arm == arm)
                .filter_map(|r| r.report.sharpness_value())
                .collect();
            let sh = if sh.is_empty() { f64::NAN } else { median(&sh) };
            writeln!(
                s,
                "{:<12} {:>6} {:>10.4} {:>10.4} {:>12.3e} {:>12.4e}",
                arm.as_str(),
                acc.len(),
                crate::stats::mean(&acc),
                median(&acc),
                self.mean_step_seconds.get(&arm).copied().unwrap_or(f64::NAN),
                sh
            )
            .unwrap();
        }
        if let Some(Ok(w)) = &self.fic_vs_baseline {
            writeln!(s, "fic > baseline: p = {:.4} (one-sided)", w.p_value).unwrap();
        }
        if let Some(Ok(w)) = &self.in_vs_baseline {
            writeln!(s, "in vs baseline: p = {:.4} (two-sided)", w.p_value).unwrap();
        }
        if let Some(m) = self.median_sharpness_ratio() {
            writeln!(s, "median sharpness ratio fic/baseline: {m:.4}").unwrap();
        }
        s
    }
}

pub fn run_comparison_suite(suite: &SuiteConfig) -> Result<ComparisonReport> {
    if suite.seeds.len() < 10 {
        return Err(HarnessError::Config(format!(
            "the comparison suite needs at least 10 seeds, got {}",
            suite.seeds.len()
        )));
    }
    if suite.arms.is_empty() {
        return Err(HarnessError::Config("no arms selected".into()));
    }
    suite.base.validate()?;
    let jobs: Vec<(u64, Arm)> = suite
        .seeds
        .iter()
        .flat_map(|&s| suite.arms.iter().map(move |&a| (s, a)))
        .collect();
    let run = |&(seed, arm): &(u64, Arm)| -> Result<ArmRun> {
        let cfg = arm.configure(&suite.base, seed);
        Ok(ArmRun {
            arm,
            seed,
            report: train(&cfg)?,
        })
    };
    let runs: Vec<ArmRun> = if suite.parallel {
        jobs.par_iter().map(run).collect::<Result<_>>()?
    } else {
        jobs.iter().map(run).collect::<Result<_>>()?
    };
    Ok(summarize(runs, &suite.seeds))
}

fn paired(runs: &[ArmRun], seeds: &[u64], arm: Arm, f: impl Fn(&RunReport) -> Option<f64>) -> Option<Vec<f64>> {
    seeds
        .iter()
        .map(|s| {
            runs.iter()
                .find(|r| r.arm == arm && r.seed == *s)
                .and_then(|r| f(&r.report))
        })
        .collect()
}

fn summarize(runs: Vec<ArmRun>, seeds: &[u64]) -> ComparisonReport {
    let acc = |r: &RunReport| Some(r.metrics.accuracy);
    let base = paired(&runs, seeds, Arm::Baseline, acc);
    let compare = |arm: Arm, alt: Alternative| {
        let (b, x) = (base.as_ref()?, paired(&runs, seeds, arm, acc)?);
        let diffs: Vec<f64> = x.iter().zip(b).map(|(a, c)| a - c).collect();
        Some((wilcoxon_signed_rank(&x, b, alt), median(&diffs)))
    };
    let fic = compare(Arm::Fic, Alternative::Greater);
    let inn = compare(Arm::InAblation, Alternative::TwoSided);
    let sh = |r: &RunReport| r.sharpness_value();
    let sharpness_ratios = match (
        paired(&runs, seeds, Arm::Fic, sh),
        paired(&runs, seeds, Arm::Baseline, sh),
    ) {
        (Some(f), Some(b)) => f.iter().zip(&b).map(|(x, y)| x / y).collect(),
        _ => Vec::new(),
    };
    let mut mean_step_seconds = BTreeMap::new();
    for arm in Arm::ALL {
        let t: Vec<f64> = runs
            .iter()
            .filter(|r| r.arm == arm)
            .map(|r| r.report.step_seconds)
            .collect();
        if !t.is_empty() {
            mean_step_seconds.insert(arm, crate::stats::mean(&t));
        }
    }
    ComparisonReport {
        fic_vs_baseline: fic.as_ref().map(|(w, _)| w.clone()),
        median_fic_improvement: fic.map(|(_, m)| m),
        in_vs_baseline: inn.as_ref().map(|(w, _)| w.clone()),
        median_in_improvement: inn.map(|(_, m)| m),
        sharpness_ratios,
        mean_step_seconds,
        runs,
    }
}
