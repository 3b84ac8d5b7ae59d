//! Command-line front end. Settings resolve as flag, then environment variable
//! (out dir and threads only), then `--config` file, then built-in default.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Deserialize;
use serde_json::json;

use crate::baseline::{run_baseline, CiMode};
use crate::data::{generate_synthetic, load_csv, write_csv, CsvSchema, SymptomDataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::inference::{run_delta_mode, run_gibbs, DeltaOptions, DirichletUpdate, McmcConfig, Summary};
use crate::metrics::{cause_count_correlation, csmf_accuracy, CsmfVector};
use crate::output::{digest_file, timestamp, write_delta, write_prediction, write_sweep, OutputDir, RunManifest};
use crate::selection::{
    cross_validate_k, sensitivity_sweep_a, sensitivity_sweep_r, shortened_config, DEFAULT_A_GRID, DEFAULT_FOLDS,
    DEFAULT_R_GRID,
};

pub const DEFAULT_OUT_DIR: &str = "vafactor-out";

#[derive(Debug, Parser)]
#[command(name = "vafactor", version, about = "Cause-of-death distribution estimation with a probit latent factor model")]
pub struct Cli {
    /// Key = value settings file (TOML); flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true, env = "VAFACTOR_OUT_DIR")]
    pub out_dir: Option<PathBuf>,

    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, env = "VAFACTOR_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit on labeled data and estimate the target cause distribution.
    FitPredict {
        train: PathBuf,
        target: PathBuf,
        #[command(flatten)]
        chain: ChainArgs,
    },
    /// Posterior association between causes and each predictor.
    Delta {
        train: PathBuf,
        #[command(flatten)]
        chain: ChainArgs,
        /// Predictors missing more often than this are given δ = 0.
        #[arg(long)]
        missing_threshold: Option<f64>,
        /// Also compute cause-versus-rest δ.
        #[arg(long)]
        per_cause: bool,
        #[arg(long, value_enum)]
        dirichlet_update: Option<DirichletArg>,
    },
    /// Conditionally independent comparator.
    Baseline {
        train: PathBuf,
        target: PathBuf,
        #[command(flatten)]
        chain: ChainArgs,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Simulate training, target and truth files from the factor model.
    Simulate(SimulateArgs),
    /// Score CSMF draws against true causes.
    Evaluate {
        /// CSV with a `cause` column of 1-based labels.
        truth: PathBuf,
        /// `csmf_draws.csv` from a prediction run.
        draws: PathBuf,
    },
    /// Cross-validate the number of factors.
    Cv {
        train: PathBuf,
        /// Comma-separated candidate values of K.
        #[arg(long, value_delimiter = ',', required = true)]
        k_grid: Vec<usize>,
        #[arg(long)]
        folds: Option<usize>,
        #[command(flatten)]
        chain: ChainArgs,
    },
    /// Refit over a grid of the precision prior `a` or the Monte Carlo size R.
    Sweep {
        train: PathBuf,
        /// Labeled target used as truth.
        target: PathBuf,
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        #[command(flatten)]
        chain: ChainArgs,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct ChainArgs {
    /// Number of latent factors.
    #[arg(long)]
    pub k: Option<usize>,
    /// Monte Carlo draws per cause likelihood.
    #[arg(long)]
    pub r: Option<usize>,
    /// Sweeps after burn-in.
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burn: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    /// Shape and rate of the Gamma prior on the precisions.
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of causes, when the training labels do not reach the last one.
    #[arg(long)]
    pub n_causes: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// JSON parameter file; replaces the generating flags below.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 600)]
    pub n_train: usize,
    #[arg(long, default_value_t = 400)]
    pub n_target: usize,
    #[arg(long, default_value_t = 10)]
    pub p: usize,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    /// Comma-separated cause fractions.
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.3,0.2")]
    pub csmf: Vec<f64>,
    #[arg(long, default_value_t = 1.5)]
    pub mean_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    pub loading_scale: f64,
    #[arg(long, default_value_t = 0.0)]
    pub missing_prob: f64,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DirichletArg {
    Counts,
    Proportions,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Sampled,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    A,
    R,
}

/// Contents of a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    pub k: Option<usize>,
    pub r: Option<usize>,
    #[serde(alias = "iterations")]
    pub iters: Option<usize>,
    #[serde(alias = "burn_in")]
    pub burn: Option<usize>,
    pub thin: Option<usize>,
    pub a: Option<f64>,
    pub seed: Option<u64>,
    pub n_causes: Option<usize>,
    pub missing_threshold: Option<f64>,
    pub per_cause: Option<bool>,
    pub dirichlet_update: Option<DirichletUpdate>,
    pub mode: Option<CiMode>,
    pub folds: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn resolve_chain(args: &ChainArgs, file: &FileConfig, base: McmcConfig) -> McmcConfig {
    McmcConfig {
        k: args.k.or(file.k).unwrap_or(base.k),
        r: args.r.or(file.r).unwrap_or(base.r),
        iterations: args.iters.or(file.iters).unwrap_or(base.iterations),
        burn_in: args.burn.or(file.burn).unwrap_or(base.burn_in),
        thin: args.thin.or(file.thin).unwrap_or(base.thin),
        a: args.a.or(file.a).unwrap_or(base.a),
        seed: args.seed.or(file.seed).unwrap_or(base.seed),
        ..base
    }
}

fn train_schema(args: &ChainArgs, file: &FileConfig) -> CsvSchema {
    CsvSchema {
        n_causes: args.n_causes.or(file.n_causes),
        ..CsvSchema::default()
    }
}

fn load_train(path: &Path, schema: &CsvSchema) -> Result<SymptomDataset> {
    let ds = load_csv(path, schema)?;
    ds.require_labels(&format!("{}", path.display()))?;
    Ok(ds)
}

/// Target files may carry labels; they are dropped before prediction.
fn load_target(path: &Path) -> Result<SymptomDataset> {
    Ok(load_csv(path, &CsvSchema::default())?.without_labels())
}

struct Run {
    command: &'static str,
    model: Option<&'static str>,
    inputs: Vec<PathBuf>,
    seed: Option<u64>,
    config: serde_json::Value,
    started_at: u64,
}

impl Run {
    fn new(command: &'static str) -> Self {
        Self {
            command,
            model: None,
            inputs: Vec::new(),
            seed: None,
            config: serde_json::Value::Null,
            started_at: timestamp(),
        }
    }

    fn finish(self, out: &mut OutputDir) -> Result<()> {
        let inputs = self.inputs.iter().map(|p| digest_file(p)).collect::<Result<_>>()?;
        let manifest = RunManifest {
            command: self.command.to_string(),
            model: self.model.map(str::to_string),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            config: self.config,
            inputs,
            outputs: out.written().to_vec(),
            started_at: self.started_at,
            finished_at: timestamp(),
        };
        out.write_manifest(&manifest)?;
        info!("wrote {} files to {}", out.written().len() + 1, out.path().display());
        Ok(())
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from_args<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    run(cli)
}

pub fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let threads = cli.threads.or(file.threads);
    let out_dir = cli
        .out_dir
        .clone()
        .or_else(|| file.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let mut pool = rayon::ThreadPoolBuilder::new();
    match threads {
        Some(0) => return Err(Error::Config("--threads must be at least 1".into())),
        Some(n) => pool = pool.num_threads(n),
        None => {}
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker threads: {e}")))?;
    pool.install(|| dispatch(&cli.command, &file, &out_dir))
}

fn dispatch(command: &Command, file: &FileConfig, out_dir: &Path) -> Result<()> {
    match command {
        Command::FitPredict { train, target, chain } => {
            let mut run = Run::new("fit-predict");
            let config = resolve_chain(chain, file, McmcConfig::default());
            let train_ds = load_train(train, &train_schema(chain, file))?;
            let target_ds = load_target(target)?;
            let draws = run_gibbs(&train_ds, &target_ds, &config)?;
            let mut out = OutputDir::create(out_dir)?;
            write_prediction(&mut out, &draws)?;
            run.model = Some("factor");
            run.inputs = vec![train.clone(), target.clone()];
            run.seed = Some(config.seed);
            run.config = json!({ "mcmc": config, "n_causes": train_ds.n_causes() });
            run.finish(&mut out)
        }
        Command::Delta {
            train,
            chain,
            missing_threshold,
            per_cause,
            dirichlet_update,
        } => {
            let mut run = Run::new("delta");
            let mut config = resolve_chain(chain, file, McmcConfig::default());
            config.dirichlet_update = match dirichlet_update {
                Some(DirichletArg::Counts) => DirichletUpdate::Counts,
                Some(DirichletArg::Proportions) => DirichletUpdate::Proportions,
                None => file.dirichlet_update.unwrap_or_default(),
            };
            let options = DeltaOptions {
                missing_threshold: missing_threshold
                    .or(file.missing_threshold)
                    .unwrap_or(DeltaOptions::default().missing_threshold),
                per_cause: *per_cause || file.per_cause.unwrap_or(false),
            };
            if !(0.0..=1.0).contains(&options.missing_threshold) {
                return Err(Error::Config("missing threshold must lie in [0, 1]".into()));
            }
            let train_ds = load_train(train, &train_schema(chain, file))?;
            let draws = run_delta_mode(&train_ds, &config, &options)?;
            let mut out = OutputDir::create(out_dir)?;
            write_delta(&mut out, &draws)?;
            run.model = Some("factor");
            run.inputs = vec![train.clone()];
            run.seed = Some(config.seed);
            run.config = json!({
                "mcmc": config,
                "missing_threshold": options.missing_threshold,
                "per_cause": options.per_cause,
                "n_causes": train_ds.n_causes(),
            });
            run.finish(&mut out)
        }
        Command::Baseline { train, target, chain, mode } => {
            let mut run = Run::new("baseline");
            let config = resolve_chain(chain, file, McmcConfig::default());
            let mode = match mode {
                Some(ModeArg::Sampled) => CiMode::Sampled,
                Some(ModeArg::Mean) => CiMode::Mean,
                None => file.mode.unwrap_or_default(),
            };
            let train_ds = load_train(train, &train_schema(chain, file))?;
            let target_ds = load_target(target)?;
            let draws = run_baseline(&train_ds, &target_ds, mode, &config)?;
            let mut out = OutputDir::create(out_dir)?;
            write_prediction(&mut out, &draws)?;
            run.model = Some("ci");
            run.inputs = vec![train.clone(), target.clone()];
            run.seed = (mode == CiMode::Sampled).then_some(config.seed);
            run.config = json!({
                "mode": mode,
                "iterations": config.iterations,
                "burn_in": config.burn_in,
                "thin": config.thin,
                "n_causes": train_ds.n_causes(),
            });
            run.finish(&mut out)
        }
        Command::Simulate(args) => simulate(args, file, out_dir),
        Command::Evaluate { truth, draws } => evaluate(truth, draws, out_dir),
        Command::Cv {
            train,
            k_grid,
            folds,
            chain,
        } => {
            let mut run = Run::new("cv");
            let config = resolve_chain(chain, file, shortened_config(&McmcConfig::default()));
            let n_folds = folds.or(file.folds).unwrap_or(DEFAULT_FOLDS);
            let train_ds = load_train(train, &train_schema(chain, file))?;
            let result = cross_validate_k(&train_ds, k_grid, n_folds, &config)?;
            info!("selected K = {}", result.best);
            let mut out = OutputDir::create(out_dir)?;
            write_sweep(&mut out, "cv", &result, "fold")?;
            run.model = Some("factor");
            run.inputs = vec![train.clone()];
            run.seed = Some(config.seed);
            run.config = json!({ "mcmc": config, "k_grid": k_grid, "folds": n_folds, "best": result.best });
            run.finish(&mut out)
        }
        Command::Sweep {
            train,
            target,
            param,
            grid,
            chain,
        } => {
            let mut run = Run::new("sweep");
            let config = resolve_chain(chain, file, McmcConfig::default());
            let schema = train_schema(chain, file);
            let train_ds = load_train(train, &schema)?;
            let target_ds = load_train(target, &CsvSchema { n_causes: Some(train_ds.n_causes()), ..schema })?;
            let result = match param {
                SweepParam::A => {
                    let grid = grid.clone().unwrap_or_else(|| DEFAULT_A_GRID.to_vec());
                    sensitivity_sweep_a(&train_ds, &target_ds, &grid, &config)?
                }
                SweepParam::R => {
                    let grid: Vec<usize> = match grid {
                        Some(g) => g
                            .iter()
                            .map(|&r| {
                                if r >= 1.0 && r.fract() == 0.0 {
                                    Ok(r as usize)
                                } else {
                                    Err(Error::Config(format!("R grid value {r} is not a positive integer")))
                                }
                            })
                            .collect::<Result<_>>()?,
                        None => DEFAULT_R_GRID.to_vec(),
                    };
                    sensitivity_sweep_r(&train_ds, &target_ds, &grid, &config)?
                }
            };
            let mut out = OutputDir::create(out_dir)?;
            write_sweep(&mut out, "sweep", &result, "draw")?;
            run.model = Some("factor");
            run.inputs = vec![train.clone(), target.clone()];
            run.seed = Some(config.seed);
            run.config = json!({
                "mcmc": config,
                "parameter": result.parameter,
                "grid": result.grid.iter().map(|g| g.setting).collect::<Vec<_>>(),
                "best": result.best,
            });
            run.finish(&mut out)
        }
    }
}

/// A simulation parameter file: the generating parameters for the training
/// sample plus the size of the target sample drawn alongside it.
#[derive(Debug, Deserialize)]
struct SimulationFile {
    #[serde(flatten)]
    spec: SyntheticSpec,
    n_target: usize,
}

fn simulate(args: &SimulateArgs, file: &FileConfig, out_dir: &Path) -> Result<()> {
    let mut run = Run::new("simulate");
    let (mut spec, n_target) = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let parsed: SimulationFile =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            run.inputs.push(path.clone());
            (parsed.spec, parsed.n_target)
        }
        None => {
            let seed = args.seed.or(file.seed).unwrap_or(1);
            let spec = SyntheticSpec::with_random_parameters(
                args.n_train,
                args.p,
                args.csmf.clone(),
                args.k,
                args.mean_scale,
                args.loading_scale,
                args.missing_prob,
                seed,
            );
            (spec, args.n_target)
        }
    };
    if let Some(seed) = args.seed.filter(|_| args.spec.is_some()) {
        spec.seed = seed;
    }
    let n_train = spec.n;
    if n_train == 0 || n_target == 0 {
        return Err(Error::Config("n_train and n_target must be positive".into()));
    }
    let full_spec = SyntheticSpec {
        n: n_train + n_target,
        ..spec.clone()
    };
    full_spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    let all = generate_synthetic(&full_spec)?;
    let train = all.subset(&(0..n_train).collect::<Vec<_>>());
    let target = all.subset(&(n_train..n_train + n_target).collect::<Vec<_>>());

    let mut out = OutputDir::create(out_dir)?;
    for (name, ds) in [("train.csv", train.clone()), ("target.csv", target.without_labels())] {
        write_csv(&ds, out.path().join(name))?;
        out.record(name);
    }
    let labels = target.labels().expect("simulated data is labeled");
    out.write_csv("truth.csv", |w| {
        w.write_record(["id", "cause"])?;
        for (id, y) in target.ids().iter().zip(labels) {
            w.write_record([id.clone(), (y + 1).to_string()])?;
        }
        Ok(())
    })?;
    let csmf = target.empirical_csmf().expect("simulated data is labeled");
    out.write_csv("truth_csmf.csv", |w| {
        w.write_record(["cause", "fraction"])?;
        for (name, f) in target.cause_names().iter().zip(&csmf) {
            w.write_record([name.clone(), format!("{f}")])?;
        }
        Ok(())
    })?;
    run.seed = Some(spec.seed);
    run.config = json!({ "spec": spec, "n_target": n_target });
    run.finish(&mut out)
}

fn read_truth_labels(path: &Path) -> Result<Vec<usize>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr.headers()?.clone();
    let col = headers
        .iter()
        .position(|h| h.trim() == "cause")
        .ok_or_else(|| Error::input(format!("{}: no `cause` column", path.display())))?;
    let mut labels = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let raw = record.get(col).unwrap_or("").trim();
        let y: usize = raw.parse().ok().filter(|&y| y >= 1).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            row: r + 1,
            column: "cause".into(),
            message: format!("cause `{raw}` is not a positive integer"),
        })?;
        labels.push(y - 1);
    }
    if labels.is_empty() {
        return Err(Error::input(format!("{}: no rows", path.display())));
    }
    Ok(labels)
}

struct DrawTable {
    causes: Vec<String>,
    /// (draw, iteration, fractions)
    rows: Vec<(String, String, Vec<f64>)>,
}

fn read_draws(path: &Path) -> Result<DrawTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let (draw_col, iter_col) = (find("draw"), find("iteration"));
    let cause_cols: Vec<usize> = (0..headers.len())
        .filter(|&k| Some(k) != draw_col && Some(k) != iter_col)
        .collect();
    let mut rows = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let get = |k: Option<usize>| k.and_then(|k| record.get(k)).unwrap_or("").to_string();
        let fractions = cause_cols
            .iter()
            .map(|&k| {
                let raw = record.get(k).unwrap_or("").trim();
                raw.parse::<f64>().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    row: r + 1,
                    column: headers[k].clone(),
                    message: format!("`{raw}` is not a number"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let draw = draw_col.map_or((r + 1).to_string(), |_| get(draw_col));
        rows.push((draw, get(iter_col), fractions));
    }
    Ok(DrawTable {
        causes: cause_cols.iter().map(|&k| headers[k].clone()).collect(),
        rows,
    })
}

fn evaluate(truth_path: &Path, draws_path: &Path, out_dir: &Path) -> Result<()> {
    let mut run = Run::new("evaluate");
    let labels = read_truth_labels(truth_path)?;
    let table = read_draws(draws_path)?;
    let n_causes = table.causes.len();
    if n_causes < 2 {
        return Err(Error::input(format!("{}: fewer than two cause columns", draws_path.display())));
    }
    if let Some(&y) = labels.iter().max().filter(|&&y| y >= n_causes) {
        return Err(Error::input(format!(
            "truth has cause {} but the draws cover {n_causes} causes",
            y + 1
        )));
    }
    let mut counts = vec![0usize; n_causes];
    labels.iter().for_each(|&y| counts[y] += 1);
    let truth = CsmfVector::from_counts(&counts)?;
    let n = labels.len() as f64;
    let actual: Vec<f64> = counts.iter().map(|&k| k as f64).collect();

    let mut acc = Vec::new();
    let mut cor = Vec::new();
    let mut records = Vec::new();
    let mut degenerate = 0;
    for (draw, iteration, fractions) in &table.rows {
        let a = csmf_accuracy(&truth, &CsmfVector::new(fractions.clone())?)?;
        let predicted: Vec<f64> = fractions.iter().map(|f| f * n).collect();
        let r = match cause_count_correlation(&actual, &predicted) {
            Ok(r) => Some(r),
            Err(Error::Degenerate(_)) => {
                degenerate += 1;
                None
            }
            Err(e) => return Err(e),
        };
        acc.push(a);
        cor.extend(r);
        records.push([
            draw.clone(),
            iteration.clone(),
            format!("{a}"),
            r.map_or("NA".into(), |r| format!("{r}")),
        ]);
    }
    if degenerate > 0 {
        warn!("correlation undefined for {degenerate} draws with constant counts");
    }
    let mut out = OutputDir::create(out_dir)?;
    out.write_csv("accuracy.csv", |w| {
        w.write_record(["draw", "iteration", "accuracy", "correlation"])?;
        for rec in &records {
            w.write_record(rec)?;
        }
        Ok(())
    })?;
    let mut summaries = BTreeMap::new();
    summaries.insert("accuracy", acc);
    summaries.insert("correlation", cor);
    out.write_csv("accuracy_summary.csv", |w| {
        w.write_record(["metric", "mean", "q025", "q975", "n"])?;
        for (name, values) in &summaries {
            if values.is_empty() {
                w.write_record([name.to_string(), "NA".into(), "NA".into(), "NA".into(), "0".into()])?;
                continue;
            }
            let s = Summary::of(values);
            w.write_record([
                name.to_string(),
                format!("{}", s.mean),
                format!("{}", s.q025),
                format!("{}", s.q975),
                values.len().to_string(),
            ])?;
        }
        Ok(())
    })?;
    run.inputs = vec![truth_path.to_path_buf(), draws_path.to_path_buf()];
    run.config = json!({ "n_causes": n_causes, "n_truth": labels.len() });
    run.finish(&mut out)
}
