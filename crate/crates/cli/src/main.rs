use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use ficts::dataset::{load_dataset, zscore_per_channel_train_stats, Format, Split, TimeSeriesDataset};
use ficts::harness::{run_comparison_suite, train_model, Arm, ExperimentConfig, HarnessError, SuiteConfig};
use ficts::model::Model;
use ficts::sharpness::{landscape_slice, model_sharpness_pair, DatasetObjective};
use ficts::shift::shift_report;
use ficts::synth::{generate_synthetic_shift, SyntheticShiftRecipe};

#[derive(Parser)]
#[command(
    name = "ficts",
    version,
    about = "Fisher-information-constrained training for time series classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and print its run report.
    Train(TrainArgs),
    /// Class-wise Wasserstein dissimilarity matrices for a dataset.
    AnalyzeShift(ShiftArgs),
    /// Sharpness estimates (and optionally a landscape slice) for a checkpoint.
    Sharpness(SharpnessArgs),
    /// Multi-seed comparison of the baseline, fic, sam and in-ablation arms.
    Compare(CompareArgs),
    /// Write a synthetic recipe's train and test splits as CSV fixtures.
    BenchSynth(BenchArgs),
}

#[derive(Args, Default)]
struct Overrides {
    /// Built-in synthetic dataset.
    #[arg(long, value_parser = ["canonical", "offset-only"], conflicts_with_all = ["train", "test"])]
    dataset: Option<String>,
    /// Training split file (.csv or .ts); requires --test.
    #[arg(long, requires = "test")]
    train: Option<PathBuf>,
    /// Test split file (.csv or .ts); requires --train.
    #[arg(long, requires = "train")]
    test: Option<PathBuf>,
    #[arg(long, value_parser = ["linear", "mlp", "inception-lite"])]
    architecture: Option<String>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long, value_parser = ["plain", "fic", "sam"])]
    optimizer: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Apply instance normalization to the model input.
    #[arg(long)]
    instance_norm: bool,
    /// Skip the train-statistics z-score.
    #[arg(long)]
    no_zscore: bool,
    /// Skip the post-training sharpness estimates.
    #[arg(long)]
    no_sharpness: bool,
}

impl Overrides {
    fn pairs(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        put("dataset", self.dataset.clone());
        put("train", self.train.as_ref().map(|p| p.display().to_string()));
        put("test", self.test.as_ref().map(|p| p.display().to_string()));
        put("architecture", self.architecture.clone());
        put("width", self.width.map(|v| v.to_string()));
        put("depth", self.depth.map(|v| v.to_string()));
        put("optimizer", self.optimizer.clone());
        put("epsilon", self.epsilon.map(|v| v.to_string()));
        put("rho", self.rho.map(|v| v.to_string()));
        put("lr", self.lr.map(|v| v.to_string()));
        put("weight_decay", self.weight_decay.map(|v| v.to_string()));
        put("batch", self.batch.map(|v| v.to_string()));
        put("epochs", self.epochs.map(|v| v.to_string()));
        put("seed", self.seed.map(|v| v.to_string()));
        put("instance_norm", self.instance_norm.then(|| "true".into()));
        put("zscore", self.no_zscore.then(|| "false".into()));
        put("sharpness", self.no_sharpness.then(|| "false".into()));
        m
    }

    fn config(&self, file: Option<&Path>) -> Result<ExperimentConfig, Failure> {
        let mut cfg = match file {
            Some(p) => ExperimentConfig::from_file(p).map_err(harness_failure)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply_pairs(self.pairs()).map_err(harness_failure)?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Key-value config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    /// Directory for report.txt, loss_curve.txt, config.cfg and model.ckpt.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ShiftArgs {
    /// Single dataset file; its classes are compared with themselves.
    #[arg(long, conflicts_with_all = ["train", "test"], required_unless_present = "train")]
    data: Option<PathBuf>,
    #[arg(long, requires = "test")]
    train: Option<PathBuf>,
    #[arg(long, requires = "train")]
    test: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    channel: usize,
    /// Print key=value records instead of matrix blocks.
    #[arg(long)]
    records: bool,
}

#[derive(Args)]
struct SharpnessArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset the loss is evaluated on (usually the training split).
    #[arg(long)]
    data: PathBuf,
    /// Standardize each channel with the file's own statistics.
    #[arg(long)]
    zscore: bool,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Write an `a b loss` grid to this file.
    #[arg(long)]
    landscape: Option<PathBuf>,
    #[arg(long, default_value_t = 21)]
    resolution: usize,
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    /// Number of seeds, numbered from 0.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    /// Comma-separated subset of baseline,fic,sam,in-ablation.
    #[arg(long, value_delimiter = ',', default_value = "baseline,fic,sam,in-ablation")]
    arms: Vec<String>,
    /// Run the seeds one after another instead of on the thread pool.
    #[arg(long)]
    sequential: bool,
    /// Also write the records to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_parser = ["canonical", "offset-only"], default_value = "canonical")]
    recipe: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn usage(error: anyhow::Error) -> Failure {
    Failure { code: 1, error }
}

fn data(error: anyhow::Error) -> Failure {
    Failure { code: 2, error }
}

fn harness_failure(e: HarnessError) -> Failure {
    match e {
        HarnessError::Config(_) => usage(e.into()),
        _ => data(e.into()),
    }
}

fn load(path: &Path, split: Split) -> Result<TimeSeriesDataset, Failure> {
    load_dataset(path, Format::from_path(path), split).map_err(|e| data(e.into()))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(data)
}

fn cmd_train(a: &TrainArgs) -> Result<(), Failure> {
    let cfg = a.overrides.config(a.config.as_deref())?;
    let (report, model) = match train_model(&cfg) {
        Ok(r) => r,
        Err(HarnessError::Diverged { step, partial }) => {
            print!("{}", partial.to_records());
            return Err(data(anyhow!(
                "training diverged at step {}: {}",
                step.step,
                step.record_line()
            )));
        }
        Err(e) => return Err(harness_failure(e)),
    };
    print!("{}", report.summary_table());
    print!("{}", report.to_records());
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(data)?;
        write(&dir.join("report.txt"), &report.to_records())?;
        write(&dir.join("loss_curve.txt"), &report.loss_curve_text())?;
        write(&dir.join("config.cfg"), &cfg.to_kv_text())?;
        fs::write(dir.join("model.ckpt"), model.to_checkpoint())
            .context("writing checkpoint")
            .map_err(data)?;
    }
    Ok(())
}

fn cmd_shift(a: &ShiftArgs) -> Result<(), Failure> {
    let (train, test) = match (&a.data, &a.train, &a.test) {
        (Some(p), None, None) => {
            let d = load(p, Split::Train)?;
            (d.clone(), d)
        }
        (None, Some(tr), Some(te)) => (load(tr, Split::Train)?, load(te, Split::Test)?),
        _ => return Err(usage(anyhow!("give either --data or both --train and --test"))),
    };
    let report = shift_report(&train, &test, a.channel).map_err(|e| data(e.into()))?;
    if a.records {
        print!("{}", report.to_records());
    } else {
        print!("{}", report.to_text());
    }
    Ok(())
}

fn cmd_sharpness(a: &SharpnessArgs) -> Result<(), Failure> {
    let bytes = fs::read(&a.checkpoint)
        .with_context(|| format!("reading {}", a.checkpoint.display()))
        .map_err(data)?;
    let model = Model::from_checkpoint(&bytes).map_err(|e| data(e.into()))?;
    let mut ds = load(&a.data, Split::Train)?
        .pad_to_length(model.config.length)
        .map_err(|e| data(e.into()))?;
    if a.zscore {
        ds = zscore_per_channel_train_stats(&ds, &ds).map_err(|e| data(e.into()))?.0;
    }
    let (bm, ps) = model_sharpness_pair(&model, &ds, a.alpha).map_err(|e| data(e.into()))?;
    println!("{}", bm.record_line());
    println!("{}", ps.record_line());
    if let Some(path) = &a.landscape {
        let obj = DatasetObjective::new(&model, &ds);
        let slice = landscape_slice(&obj, model.params.as_slice(), a.seed, a.radius, a.resolution)
            .map_err(|e| usage(e.into()))?;
        write(path, &slice.to_grid_text())?;
    }
    Ok(())
}

fn cmd_compare(a: &CompareArgs) -> Result<(), Failure> {
    let base = a.overrides.config(a.config.as_deref())?;
    let arms = a
        .arms
        .iter()
        .map(|s| s.parse::<Arm>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| usage(anyhow!(e)))?;
    let mut suite = SuiteConfig::new(base, (0..a.seeds).collect(), arms);
    suite.parallel = !a.sequential;
    let report = run_comparison_suite(&suite).map_err(harness_failure)?;
    print!("{}", report.summary_table());
    print!("{}", report.to_records());
    if let Some(p) = &a.out {
        write(p, &report.to_records())?;
    }
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> Result<(), Failure> {
    let recipe = match a.recipe.as_str() {
        "offset-only" => SyntheticShiftRecipe::offset_only_two_class(2.0, a.seed),
        _ => SyntheticShiftRecipe::canonical(a.seed),
    };
    let (train, test) = generate_synthetic_shift(&recipe).map_err(|e| usage(e.into()))?;
    fs::create_dir_all(&a.out_dir)
        .with_context(|| format!("creating {}", a.out_dir.display()))
        .map_err(data)?;
    for ds in [&train, &test] {
        let path = a
            .out_dir
            .join(format!("{}_{}.csv", recipe.name, ds.split.as_str().to_uppercase()));
        ds.write_csv(&path).map_err(|e| data(e.into()))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::AnalyzeShift(a) => cmd_shift(a),
        Command::Sharpness(a) => cmd_sharpness(a),
        Command::Compare(a) => cmd_compare(a),
        Command::BenchSynth(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
