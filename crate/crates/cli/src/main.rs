mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use kronband::bench::{run_experiment, ExperimentSpec};
use kronband::config::ConfigFile;
use kronband::covariance::{sample_cov, tau_candidates};
use kronband::io::{matrix_to_csv, read_dataset, write_dataset};
use kronband::simulate::SimConfig;
use kronband::tuning::{self, CovOptions, Estimate, EstimatorKind, TauPool, TuningConfig, DEFAULT_PERCENTILES};
use kronband::Error;

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "kronband", version, about = "Banded and tapered Kronecker covariance estimation")]
struct Cli {
    /// Worker threads for tuning and benchmarks; never changes results.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a dataset from a simulation config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// `.csv` writes the text format, anything else the binary container.
        #[arg(long)]
        out: PathBuf,
        /// Overrides `[data] seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit one estimator at fixed tuning parameters.
    Estimate(EstimateArgs),
    /// Choose tuning parameters by random splitting.
    Select(SelectArgs),
    /// Run a Monte Carlo experiment.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for results.csv and results.json.
        #[arg(long)]
        out: PathBuf,
        /// Overrides `[experiment] seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Permit dense methods at large pq.
        #[arg(long)]
        large: bool,
        /// Also write bar plots of the mean errors.
        #[arg(long)]
        plots: bool,
    },
    /// Shape and entry statistics of a dataset.
    Inspect {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',')]
        percentiles: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Sample,
    Band,
    Taper,
    RobustBand,
    RobustTaper,
    BaselineBand,
    BaselineTaper,
}

impl MethodArg {
    fn estimator(self) -> Option<EstimatorKind> {
        match self {
            MethodArg::Sample => None,
            MethodArg::Band => Some(EstimatorKind::Band),
            MethodArg::Taper => Some(EstimatorKind::Taper),
            MethodArg::RobustBand => Some(EstimatorKind::RobustBand),
            MethodArg::RobustTaper => Some(EstimatorKind::RobustTaper),
            MethodArg::BaselineBand => Some(EstimatorKind::BaselineBand),
            MethodArg::BaselineTaper => Some(EstimatorKind::BaselineTaper),
        }
    }

    fn name(self) -> &'static str {
        self.estimator().map_or("sample", EstimatorKind::name)
    }
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Row bandwidth; the single bandwidth for baselines.
    #[arg(long, default_value_t = 0)]
    k1: usize,
    #[arg(long, default_value_t = 0)]
    k2: usize,
    #[arg(long)]
    tau: Option<f64>,
    /// Use the uncentered covariance for non-robust methods.
    #[arg(long)]
    uncentered: bool,
    /// Center and rescale samples before truncation (robust methods).
    #[arg(long)]
    center_transform: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Write PNG heatmaps of the scaled factors.
    #[arg(long)]
    heatmap: bool,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Required unless the config names an estimator.
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Config file with a `[tuning]` section.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    percentiles: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Validation(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Core(e) if e.is_numerical() => 3,
            Failure::Core(Error::Io(_) | Error::Format(_)) => 4,
            Failure::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Validation(m) => f.write_str(m),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = match cli.command {
        Command::Simulate { config, out, seed } => simulate(&config, &out, seed),
        Command::Estimate(args) => estimate(&args),
        Command::Select(args) => select(&args),
        Command::Bench { config, out, seed, large, plots } => bench(&config, &out, seed, large, plots),
        Command::Inspect { dataset, percentiles, out } => inspect(&dataset, percentiles, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn read_config(path: &Path) -> Result<ConfigFile, Failure> {
    let text = fs::read_to_string(path)?;
    Ok(ConfigFile::parse(&text)?)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Outcome {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Validation(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn save_png(img: &image::RgbImage, path: &Path) -> Outcome {
    img.save(path).map_err(|e| Failure::Core(Error::Io(std::io::Error::other(e.to_string()))))
}

fn simulate(config: &Path, out: &Path, seed: Option<u64>) -> Outcome {
    let mut sim = SimConfig::from_config(&read_config(config)?)?;
    if let Some(s) = seed {
        sim.seed = s;
    }
    let ds = sim.generate()?;
    write_dataset(&ds, out)?;
    eprintln!("wrote n={} p={} q={} to {}", ds.n(), ds.p(), ds.q(), out.display());
    Ok(())
}

fn estimate(args: &EstimateArgs) -> Outcome {
    let ds = read_dataset(&args.dataset)?;
    let opts = CovOptions { center: !args.uncentered, center_transform: args.center_transform };
    let kind = args.method.estimator();
    if kind.is_some_and(EstimatorKind::is_robust) && args.tau.is_none() {
        return Err(Failure::Validation("robust methods need --tau".into()));
    }
    if args.tau.is_some() && !kind.is_some_and(EstimatorKind::is_robust) {
        return Err(Failure::Validation("--tau applies to robust methods only".into()));
    }
    let estimate = match kind {
        None => Estimate::Dense(sample_cov(&ds, opts.center)?.matrix),
        Some(k) => tuning::fit(&ds, k, args.k1, args.k2, args.tau, opts)?,
    };
    fs::create_dir_all(&args.out)?;
    let mut summary = json!({
        "schema_version": SCHEMA_VERSION,
        "method": args.method.name(),
        "n": ds.n(),
        "p": ds.p(),
        "q": ds.q(),
        "k1": args.k1,
        "k2": args.k2,
        "tau": args.tau,
    });
    match &estimate {
        Estimate::Separable(fit) => {
            let (s1, s2) = (fit.cov.sigma1.matrix(), fit.cov.sigma2.matrix());
            fs::write(args.out.join("sigma1.csv"), matrix_to_csv(s1))?;
            fs::write(args.out.join("sigma2.csv"), matrix_to_csv(s2))?;
            summary["sigma"] = json!(fit.factor.sigma);
            summary["convention"] = json!(fit.cov.convention.tag());
            summary["residual_frobenius"] = json!(fit.residual_frobenius);
            summary["iterations"] = json!(fit.factor.iterations);
            if args.heatmap {
                save_png(&plot::heatmap(s1), &args.out.join("sigma1.png"))?;
                save_png(&plot::heatmap(s2), &args.out.join("sigma2.png"))?;
            }
        }
        Estimate::Dense(m) => {
            if kind.is_none() {
                summary["k1"] = json!(null);
                summary["k2"] = json!(null);
            } else {
                summary["k2"] = json!(null);
            }
            fs::write(args.out.join("covariance.csv"), matrix_to_csv(m.matrix()))?;
            summary["frobenius"] = json!(m.matrix().norm());
            if args.heatmap {
                save_png(&plot::heatmap(m.matrix()), &args.out.join("covariance.png"))?;
            }
        }
    }
    write_json(&args.out.join("summary.json"), &summary)
}

fn select(args: &SelectArgs) -> Outcome {
    let method = match args.method {
        Some(m) => Some(m.estimator().ok_or_else(|| Failure::Validation("select needs a regularized method, not sample".into()))?),
        None => None,
    };
    let mut cfg = match (&args.config, method) {
        (Some(path), _) => TuningConfig::from_config_or(&read_config(path)?, method)?,
        (None, Some(kind)) => TuningConfig::new(kind),
        (None, None) => return Err(Failure::Validation("give --method or a config naming an estimator".into())),
    };
    if let Some(kind) = method {
        cfg.estimator = kind;
    }
    if let Some(p) = &args.percentiles {
        cfg.tau_pool = TauPool::Percentiles(p.clone());
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let ds = read_dataset(&args.dataset)?;
    let result = tuning::select(&ds, &cfg)?;
    let value = json!({ "schema_version": SCHEMA_VERSION, "config": cfg, "result": result });
    match &args.out {
        Some(path) => write_json(path, &value),
        None => {
            println!("{}", serde_json::to_string_pretty(&value).expect("serializable"));
            Ok(())
        }
    }
}

fn bench(config: &Path, out: &Path, seed: Option<u64>, large: bool, plots: bool) -> Outcome {
    let mut spec = ExperimentSpec::from_config(&read_config(config)?)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.large |= large;
    spec.validate()?;
    let table = run_experiment(&spec)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("results.csv"), table.to_csv())?;
    let value = serde_json::to_value(&table).map_err(|e| Failure::Validation(e.to_string()))?;
    write_json(&out.join("results.json"), &value)?;
    if plots {
        for &metric in &spec.metrics {
            let bars: Vec<(f64, f64)> =
                spec.methods.iter().filter_map(|&m| table.row(m, metric)).map(|r| (r.mean, r.se)).collect();
            save_png(&plot::bar_chart(&bars), &out.join(format!("errors_{}.png", metric.name())))?;
        }
    }
    eprintln!("{} replications, {} failed", table.records.len(), table.failed.len());
    Ok(())
}

fn inspect(dataset: &Path, percentiles: Option<Vec<f64>>, out: Option<&Path>) -> Outcome {
    let ds = read_dataset(dataset)?;
    let pcts = percentiles.unwrap_or_else(|| DEFAULT_PERCENTILES.to_vec());
    let taus = tau_candidates(&ds, &pcts)?;
    let abs: Vec<f64> = ds.data().iter().map(|x| x.abs()).collect();
    let mean = ds.data().iter().sum::<f64>() / abs.len() as f64;
    let value = json!({
        "schema_version": SCHEMA_VERSION,
        "n": ds.n(),
        "p": ds.p(),
        "q": ds.q(),
        "mean": mean,
        "mean_abs": abs.iter().sum::<f64>() / abs.len() as f64,
        "max_abs": ds.max_abs(),
        "percentiles": pcts,
        "tau_candidates": taus,
    });
    match out {
        Some(path) => write_json(path, &value),
        None => {
            println!("{}", serde_json::to_string_pretty(&value).expect("serializable"));
            Ok(())
        }
    }
}
