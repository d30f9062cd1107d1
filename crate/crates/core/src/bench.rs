//! Monte Carlo experiments: simulate, tune, fit every method, and aggregate
//! error norms against the true separable covariance.
//!
//! Replication `r` draws its data from `derive_seed(seed, r)` and tunes with
//! a seed derived from that, so records depend only on `(spec, r)` and never
//! on scheduling.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::ConfigFile;
use crate::covariance::sample_cov;
use crate::error::{Error, Result};
use crate::matrix::{operator_norm, DenseSymMatrix, Difference, NormKind, SeparableCovariance};
use crate::rng;
use crate::simulate::{SimConfig, CONFIG_KEYS};
use crate::tuning::{self, CovOptions, EstimatorKind, GridCaps, TauPool, TuningConfig};

pub const SCHEMA_VERSION: u32 = 1;
/// `pq` above which dense methods require [`ExperimentSpec::large`].
pub const LARGE_DIM: usize = 4096;
/// Fraction of failed replications tolerated before the experiment fails.
pub const MAX_FAILED_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sample,
    BaselineBand,
    BaselineTaper,
    ProposedBand,
    ProposedTaper,
    RobustBand,
    RobustTaper,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Sample,
        Method::BaselineBand,
        Method::BaselineTaper,
        Method::ProposedBand,
        Method::ProposedTaper,
        Method::RobustBand,
        Method::RobustTaper,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sample => "sample",
            Method::BaselineBand => "baseline_band",
            Method::BaselineTaper => "baseline_taper",
            Method::ProposedBand => "proposed_band",
            Method::ProposedTaper => "proposed_taper",
            Method::RobustBand => "robust_band",
            Method::RobustTaper => "robust_taper",
        }
    }

    pub fn estimator(self) -> Option<EstimatorKind> {
        match self {
            Method::Sample => None,
            Method::BaselineBand => Some(EstimatorKind::BaselineBand),
            Method::BaselineTaper => Some(EstimatorKind::BaselineTaper),
            Method::ProposedBand => Some(EstimatorKind::Band),
            Method::ProposedTaper => Some(EstimatorKind::Taper),
            Method::RobustBand => Some(EstimatorKind::RobustBand),
            Method::RobustTaper => Some(EstimatorKind::RobustTaper),
        }
    }

    /// Whether the estimate is a dense `pq×pq` matrix.
    pub fn is_dense(self) -> bool {
        matches!(self, Method::Sample | Method::BaselineBand | Method::BaselineTaper)
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL.into_iter().find(|m| m.name() == norm).ok_or_else(|| format!("unknown method `{s}`"))
    }
}

/// Tuning settings shared by every method of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningTemplate {
    pub splits: usize,
    pub n1: Option<usize>,
    pub caps: GridCaps,
    pub tau_pool: TauPool,
    pub cov: CovOptions,
}

impl Default for TuningTemplate {
    fn default() -> Self {
        TuningTemplate { splits: 10, n1: None, caps: GridCaps::default(), tau_pool: TauPool::default(), cov: CovOptions::default() }
    }
}

impl TuningTemplate {
    pub fn config(&self, kind: EstimatorKind, p: usize, q: usize, seed: u64) -> TuningConfig {
        let (grid1, grid2) = self.caps.grids(kind, p, q);
        TuningConfig {
            estimator: kind,
            splits: self.splits,
            n1: self.n1,
            grid1,
            grid2,
            tau_pool: self.tau_pool.clone(),
            cov: self.cov,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub sim: SimConfig,
    pub reps: usize,
    pub methods: Vec<Method>,
    pub tuning: TuningTemplate,
    pub metrics: Vec<NormKind>,
    pub seed: u64,
    /// Allows dense methods above [`LARGE_DIM`] (about `8·(pq)²` bytes per matrix).
    pub large: bool,
}

impl ExperimentSpec {
    pub fn new(sim: SimConfig, methods: Vec<Method>) -> Self {
        ExperimentSpec {
            seed: sim.seed,
            sim,
            reps: 100,
            methods,
            tuning: TuningTemplate::default(),
            metrics: vec![NormKind::Frobenius, NormKind::L1, NormKind::Operator],
            large: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if self.reps == 0 {
            return Err(Error::param("reps", "must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(Error::param("methods", "list is empty"));
        }
        if self.metrics.is_empty() {
            return Err(Error::param("metrics", "list is empty"));
        }
        let d = self.sim.p * self.sim.q;
        if d > LARGE_DIM && !self.large && self.methods.iter().any(|m| m.is_dense()) {
            let gib = (d * d * 8) as f64 / (1u64 << 30) as f64;
            return Err(Error::param(
                "large",
                format!("dense methods at pq={d} need about {gib:.1} GiB per matrix; enable the large flag"),
            ));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_config(&ConfigFile::parse(text)?)
    }

    /// Simulation sections plus `[experiment]` and `[tuning]`.
    pub fn from_config(cfg: &ConfigFile) -> Result<Self> {
        let mut known: Vec<(&str, &[&str])> = CONFIG_KEYS.to_vec();
        known.push(("experiment", &["reps", "methods", "metrics", "seed", "large"]));
        known.push((
            "tuning",
            &["splits", "n1", "band_cap", "taper_cap", "baseline_cap", "percentiles", "taus", "center", "center_transform"],
        ));
        cfg.ensure_known(&known)?;
        let sim = SimConfig::from_sections(cfg)?;
        let mut spec = ExperimentSpec::new(sim, Vec::new());
        spec.reps = cfg.get("experiment", "reps")?.unwrap_or(100);
        spec.methods = match cfg.get_list::<Method>("experiment", "methods")? {
            Some(m) => m,
            None => vec![Method::Sample, Method::BaselineBand, Method::BaselineTaper, Method::ProposedBand, Method::ProposedTaper],
        };
        if let Some(names) = cfg.get_list::<String>("experiment", "metrics")? {
            spec.metrics = names
                .iter()
                .map(|s| NormKind::parse(s).ok_or_else(|| cfg.invalid("experiment", "metrics", format!("unknown norm `{s}`"))))
                .collect::<Result<_>>()?;
        }
        spec.seed = cfg.get("experiment", "seed")?.unwrap_or(spec.sim.seed);
        spec.large = cfg.get("experiment", "large")?.unwrap_or(false);
        let t = &mut spec.tuning;
        t.splits = cfg.get("tuning", "splits")?.unwrap_or(10);
        t.n1 = cfg.get("tuning", "n1")?;
        t.caps.band = cfg.get("tuning", "band_cap")?.unwrap_or(t.caps.band);
        t.caps.taper = cfg.get("tuning", "taper_cap")?.unwrap_or(t.caps.taper);
        t.caps.baseline = cfg.get("tuning", "baseline_cap")?.unwrap_or(t.caps.baseline);
        if let Some(taus) = cfg.get_list::<f64>("tuning", "taus")? {
            t.tau_pool = TauPool::Values(taus);
        } else if let Some(pcts) = cfg.get_list::<f64>("tuning", "percentiles")? {
            t.tau_pool = TauPool::Percentiles(pcts);
        }
        t.cov.center = cfg.get("tuning", "center")?.unwrap_or(true);
        t.cov.center_transform = cfg.get("tuning", "center_transform")?.unwrap_or(false);
        spec.validate().map_err(|e| match e {
            Error::Parameter { name, reason } => Error::Config { line: 0, reason: format!("{name}: {reason}") },
            other => other,
        })?;
        Ok(spec)
    }
}

/// One method's outcome in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRecord {
    pub method: Method,
    /// Aligned with the spec's metrics.
    pub errors: Vec<f64>,
    pub k1: Option<usize>,
    pub k2: Option<usize>,
    pub tau: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub methods: Vec<MethodRecord>,
}

impl RepRecord {
    pub fn get(&self, m: Method) -> Option<&MethodRecord> {
        self.methods.iter().find(|r| r.method == m)
    }
}

fn dense_error(est: &DenseSymMatrix, truth: &SeparableCovariance, which: NormKind) -> Result<f64> {
    operator_norm(&Difference { a: est, b: truth }, which)
}

/// Runs replication `rep` of `spec`.
pub fn run_replication(spec: &ExperimentSpec, rep: usize) -> Result<RepRecord> {
    let rep_seed = rng::derive_seed(spec.seed, rep as u64);
    let ds = spec.sim.generate_with(&mut rng::stream(rep_seed, 0))?;
    let truth = spec.sim.truth()?;
    let (p, q) = (spec.sim.p, spec.sim.q);
    let tune_seed = rng::derive_seed(rep_seed, 1);
    let mut methods = Vec::with_capacity(spec.methods.len());
    for &method in &spec.methods {
        let start = Instant::now();
        let (estimate, k1, k2, tau) = match method.estimator() {
            None => (tuning::Estimate::Dense(sample_cov(&ds, true)?.matrix), None, None, None),
            Some(kind) => {
                let cfg = spec.tuning.config(kind, p, q, tune_seed);
                let sel = tuning::select(&ds, &cfg)?;
                let est = tuning::fit(&ds, kind, sel.k1, sel.k2, sel.tau, spec.tuning.cov)?;
                let k2 = if kind.is_baseline() { None } else { Some(sel.k2) };
                (est, Some(sel.k1), k2, sel.tau)
            }
        };
        let errors = spec
            .metrics
            .iter()
            .map(|&which| match &estimate {
                tuning::Estimate::Dense(d) => dense_error(d, &truth, which),
                tuning::Estimate::Separable(f) => crate::matrix::norm_diff_separable(&f.cov, &truth, which),
            })
            .collect::<Result<Vec<_>>>()?;
        methods.push(MethodRecord { method, errors, k1, k2, tau, seconds: start.elapsed().as_secs_f64() });
    }
    Ok(RepRecord { rep, methods })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub method: Method,
    pub metric: NormKind,
    pub mean: f64,
    /// Sample standard deviation over replications divided by `sqrt(reps)`.
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub k1_mean: Option<f64>,
    pub k2_mean: Option<f64>,
    pub tau_mean: Option<f64>,
    pub seconds_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRep {
    pub rep: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub schema_version: u32,
    pub spec: ExperimentSpec,
    pub rows: Vec<MetricSummary>,
    pub methods: Vec<MethodSummary>,
    pub records: Vec<RepRecord>,
    pub failed: Vec<FailedRep>,
}

/// Runs every replication and aggregates. Failed replications are excluded
/// and listed; more than 10% failures is an error.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultTable> {
    spec.validate()?;
    let reps: Vec<usize> = (0..spec.reps).collect();
    let outcomes = tuning::map_ordered(&reps, |&r| Ok(run_replication(spec, r)))?;
    let mut records = Vec::new();
    let mut failed = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(rec) => records.push(rec),
            Err(e) => failed.push(FailedRep { rep: r, error: e.to_string() }),
        }
    }
    if failed.len() as f64 > MAX_FAILED_FRACTION * spec.reps as f64 || records.is_empty() {
        let first = failed.first().map_or("none", |f| f.error.as_str());
        return Err(Error::Experiment(format!("{} of {} replications failed; first: {first}", failed.len(), spec.reps)));
    }
    Ok(aggregate(spec, records, failed))
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

fn aggregate(spec: &ExperimentSpec, records: Vec<RepRecord>, failed: Vec<FailedRep>) -> ResultTable {
    let mut rows = Vec::new();
    let mut methods = Vec::new();
    for (mi, &method) in spec.methods.iter().enumerate() {
        let recs: Vec<&MethodRecord> = records.iter().map(|r| &r.methods[mi]).collect();
        for (ki, &metric) in spec.metrics.iter().enumerate() {
            let vals: Vec<f64> = recs.iter().map(|r| r.errors[ki]).collect();
            let (mean, se) = mean_se(&vals);
            rows.push(MetricSummary { method, metric, mean, se });
        }
        methods.push(MethodSummary {
            method,
            k1_mean: mean_of(recs.iter().map(|r| r.k1.map(|k| k as f64))),
            k2_mean: mean_of(recs.iter().map(|r| r.k2.map(|k| k as f64))),
            tau_mean: mean_of(recs.iter().map(|r| r.tau)),
            seconds_mean: recs.iter().map(|r| r.seconds).sum::<f64>() / recs.len() as f64,
        });
    }
    ResultTable { schema_version: SCHEMA_VERSION, spec: spec.clone(), rows, methods, records, failed }
}

impl ResultTable {
    pub fn row(&self, method: Method, metric: NormKind) -> Option<&MetricSummary> {
        self.rows.iter().find(|r| r.method == method && r.metric == metric)
    }

    pub fn method(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }

    /// Per-replication values of one method and metric.
    pub fn values(&self, method: Method, metric: NormKind) -> Vec<f64> {
        let mi = self.spec.methods.iter().position(|&m| m == method);
        let ki = self.spec.metrics.iter().position(|&k| k == metric);
        match (mi, ki) {
            (Some(mi), Some(ki)) => self.records.iter().map(|r| r.methods[mi].errors[ki]).collect(),
            _ => Vec::new(),
        }
    }

    /// One row per (method, metric), two decimals, no timings.
    pub fn to_csv(&self) -> String {
        let fmt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.2}"));
        let mut s = String::from("method,metric,mean,se,k1_mean,k2_mean,tau_mean,reps,failed\n");
        for r in &self.rows {
            let m = self.method(r.method).expect("summary per method");
            let _ = writeln!(
                s,
                "{},{},{:.2},{:.2},{},{},{},{},{}",
                r.method.name(),
                r.metric.name(),
                r.mean,
                r.se,
                fmt(m.k1_mean),
                fmt(m.k2_mean),
                fmt(m.tau_mean),
                self.records.len(),
                self.failed.len()
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::CovKind;

    fn small_spec(reps: usize) -> ExperimentSpec {
        let sim = SimConfig::new(20, 3, 4, CovKind::Ar1, 0.5, 0.5).with_seed(11);
        let mut spec = ExperimentSpec::new(sim, Method::ALL.to_vec());
        spec.reps = reps;
        spec.tuning.splits = 3;
        spec.tuning.caps = GridCaps { band: 2, taper: 4, baseline: 4 };
        spec
    }

    #[test]
    fn single_rep_has_zero_standard_error() {
        let t = run_experiment(&small_spec(1)).unwrap();
        assert_eq!(t.records.len(), 1);
        for r in &t.rows {
            assert_eq!(r.se, 0.0);
            assert_eq!(r.mean, t.values(r.method, r.metric)[0]);
        }
    }

    #[test]
    fn records_are_reproducible() {
        let spec = small_spec(2);
        assert_eq!(run_replication(&spec, 1).unwrap().methods.iter().map(|m| m.errors.clone()).collect::<Vec<_>>(),
            run_replication(&spec, 1).unwrap().methods.iter().map(|m| m.errors.clone()).collect::<Vec<_>>());
        let a = run_experiment(&spec).unwrap().to_csv();
        assert_eq!(a, run_experiment(&spec).unwrap().to_csv());
        assert_eq!(a.lines().count(), 1 + 7 * 3);
    }

    #[test]
    fn truth_as_estimate_has_zero_error() {
        let spec = small_spec(1);
        let truth = spec.sim.truth().unwrap();
        for which in [NormKind::Frobenius, NormKind::L1, NormKind::Operator] {
            assert!(dense_error(&truth.to_dense(), &truth, which).unwrap() < 1e-12);
        }
    }

    #[test]
    fn parses_experiment_config() {
        let text = "[data]\nn = 20\np = 3\nq = 4\nseed = 5\n[row]\nmodel = ma1\nrho = 0.5\n[column]\nmodel = ma1\nrho = 0.5\n\
                    [experiment]\nreps = 5\nmethods = sample, proposed_band\nmetrics = frob\n[tuning]\nband_cap = 3\n";
        let spec = ExperimentSpec::parse(text).unwrap();
        assert_eq!(spec.reps, 5);
        assert_eq!(spec.methods, vec![Method::Sample, Method::ProposedBand]);
        assert_eq!(spec.metrics, vec![NormKind::Frobenius]);
        assert_eq!(spec.tuning.caps.band, 3);
        assert_eq!(spec.seed, 5);
        assert!(ExperimentSpec::parse(&text.replace("reps = 5", "reps = 0")).is_err());
        assert!(ExperimentSpec::parse(&format!("{text}bogus = 1\n")).is_err());
    }

    #[test]
    fn large_dense_runs_need_the_flag() {
        let sim = SimConfig::new(5, 70, 70, CovKind::Ar1, 0.5, 0.5);
        let spec = ExperimentSpec::new(sim, vec![Method::Sample]);
        assert!(spec.validate().is_err());
        assert!(ExperimentSpec { large: true, ..spec }.validate().is_ok());
    }
}
