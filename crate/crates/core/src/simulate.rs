//! Ground-truth separable covariances and matrix-normal / matrix-t samplers.

use std::fmt::Write as _;

use nalgebra::Cholesky;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::ConfigFile;
use crate::error::{Error, Result};
use crate::matrix::{DenseSymMatrix, Mat, MatrixDataset, SeparableCovariance};
use crate::rng::{self, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovKind {
    /// `rho^|l-m|` for `|l-m| <= 1`, zero beyond.
    Ma1,
    /// `rho^|l-m|`.
    Ar1,
}

impl CovKind {
    pub fn name(self) -> &'static str {
        match self {
            CovKind::Ma1 => "ma1",
            CovKind::Ar1 => "ar1",
        }
    }
}

impl std::str::FromStr for CovKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ma1" | "ma(1)" => Ok(CovKind::Ma1),
            "ar1" | "ar(1)" => Ok(CovKind::Ar1),
            other => Err(format!("unknown covariance model `{other}` (expected ma1 or ar1)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovModel {
    pub kind: CovKind,
    pub dim: usize,
    pub rho: f64,
}

impl CovModel {
    pub fn new(kind: CovKind, dim: usize, rho: f64) -> Self {
        Self { kind, dim, rho }
    }
}

pub fn build_cov(model: CovModel) -> Result<DenseSymMatrix> {
    if !(model.rho.abs() < 1.0) {
        return Err(Error::param("rho", format!("|rho| must be < 1, got {}", model.rho)));
    }
    if model.dim == 0 {
        return Err(Error::param("dim", "must be at least 1"));
    }
    let rho = model.rho;
    DenseSymMatrix::from_fn(model.dim, |l, m| {
        let lag = l.abs_diff(m);
        match model.kind {
            CovKind::Ma1 if lag > 1 => 0.0,
            _ => rho.powi(lag as i32),
        }
    })
}

/// How `Σ` in `t_df(0, Σ)` is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TParameterization {
    /// `Σ` is the scale matrix; `cov(vec X) = df/(df-2) Σ`.
    Scale,
    /// `Σ` is the covariance; the scale matrix is `(df-2)/df Σ`.
    Covariance,
}

impl std::str::FromStr for TParameterization {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "scale" => Ok(Self::Scale),
            "covariance" | "cov" => Ok(Self::Covariance),
            other => Err(format!("unknown t parameterization `{other}` (expected scale or covariance)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum Tail {
    Gaussian,
    StudentT { df: f64, parameterization: TParameterization },
}

/// Sections and keys understood by [`SimConfig::from_config`].
pub const CONFIG_KEYS: &[(&str, &[&str])] = &[
    ("data", &["n", "p", "q", "seed"]),
    ("row", &["model", "rho"]),
    ("column", &["model", "rho"]),
    ("tail", &["family", "df", "parameterization"]),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    /// Row covariance `Σ1` (`p×p`).
    pub model1: CovModel,
    /// Column covariance `Σ2` (`q×q`).
    pub model2: CovModel,
    pub tail: Tail,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(n: usize, p: usize, q: usize, kind: CovKind, rho1: f64, rho2: f64) -> Self {
        Self {
            n,
            p,
            q,
            model1: CovModel::new(kind, p, rho1),
            model2: CovModel::new(kind, q, rho2),
            tail: Tail::Gaussian,
            seed: 0,
        }
    }

    pub fn with_tail(mut self, tail: Tail) -> Self {
        self.tail = tail;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::param("n", "must be at least 1"));
        }
        if self.p == 0 || self.q == 0 {
            return Err(Error::param("p/q", "dimensions must be at least 1"));
        }
        if self.model1.dim != self.p || self.model2.dim != self.q {
            return Err(Error::dim("covariance model dimensions disagree with (p, q)"));
        }
        for rho in [self.model1.rho, self.model2.rho] {
            if !(rho.abs() < 1.0) {
                return Err(Error::param("rho", format!("|rho| must be < 1, got {rho}")));
            }
        }
        if let Tail::StudentT { df, .. } = self.tail {
            if !(df >= 3.0) || !df.is_finite() {
                return Err(Error::param("df", format!("must be a finite value >= 3, got {df}")));
            }
        }
        Ok(())
    }

    /// `(Σ2, Σ1)` as a separable covariance; the reference every error is measured against.
    pub fn truth(&self) -> Result<SeparableCovariance> {
        Ok(SeparableCovariance::new(build_cov(self.model2)?, build_cov(self.model1)?))
    }

    /// Draws the dataset for this config's seed.
    pub fn generate(&self) -> Result<MatrixDataset> {
        self.generate_with(&mut rng::seeded(self.seed))
    }

    pub fn generate_with(&self, rng: &mut SimRng) -> Result<MatrixDataset> {
        self.validate()?;
        let s1 = build_cov(self.model1)?;
        let s2 = build_cov(self.model2)?;
        match self.tail {
            Tail::Gaussian => sample_matrix_normal(self.n, &s1, &s2, rng),
            Tail::StudentT { df, parameterization } => {
                sample_matrix_t(self.n, &s1, &s2, df, parameterization, rng)
            }
        }
    }

    pub fn from_config(cfg: &ConfigFile) -> Result<Self> {
        cfg.ensure_known(CONFIG_KEYS)?;
        Self::from_sections(cfg)
    }

    /// Reads the simulation sections, ignoring any others.
    pub fn from_sections(cfg: &ConfigFile) -> Result<Self> {
        let n: usize = cfg.require("data", "n")?;
        let p: usize = cfg.require("data", "p")?;
        let q: usize = cfg.require("data", "q")?;
        let seed: u64 = cfg.get("data", "seed")?.unwrap_or(0);
        let kind1: CovKind = cfg.require("row", "model")?;
        let rho1: f64 = cfg.require("row", "rho")?;
        let kind2: CovKind = cfg.require("column", "model")?;
        let rho2: f64 = cfg.require("column", "rho")?;
        for (section, rho) in [("row", rho1), ("column", rho2)] {
            if !(rho.abs() < 1.0) {
                return Err(cfg.invalid(section, "rho", format!("|rho| must be < 1, got {rho}")));
            }
        }
        for (key, v) in [("n", n), ("p", p), ("q", q)] {
            if v == 0 {
                return Err(cfg.invalid("data", key, "must be at least 1"));
            }
        }
        let family: String = cfg.get("tail", "family")?.unwrap_or_else(|| "gaussian".into());
        let tail = match family.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Tail::Gaussian,
            "t" | "student_t" | "student-t" => {
                let df: f64 = cfg.get("tail", "df")?.unwrap_or(3.0);
                if !(df >= 3.0) || !df.is_finite() {
                    return Err(cfg.invalid("tail", "df", format!("must be >= 3, got {df}")));
                }
                let parameterization =
                    cfg.get("tail", "parameterization")?.unwrap_or(TParameterization::Scale);
                Tail::StudentT { df, parameterization }
            }
            other => return Err(cfg.invalid("tail", "family", format!("unknown family `{other}`"))),
        };
        let cfg = SimConfig {
            n,
            p,
            q,
            model1: CovModel::new(kind1, p, rho1),
            model2: CovModel::new(kind2, q, rho2),
            tail,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_config(&ConfigFile::parse(text)?)
    }

    /// Renders the config in the grammar read by [`SimConfig::parse`].
    pub fn to_config_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[data]\nn = {}\np = {}\nq = {}\nseed = {}", self.n, self.p, self.q, self.seed);
        let _ = writeln!(s, "\n[row]\nmodel = {}\nrho = {}", self.model1.kind.name(), self.model1.rho);
        let _ = writeln!(s, "\n[column]\nmodel = {}\nrho = {}", self.model2.kind.name(), self.model2.rho);
        match self.tail {
            Tail::Gaussian => {
                let _ = writeln!(s, "\n[tail]\nfamily = gaussian");
            }
            Tail::StudentT { df, parameterization } => {
                let par = match parameterization {
                    TParameterization::Scale => "scale",
                    TParameterization::Covariance => "covariance",
                };
                let _ = writeln!(s, "\n[tail]\nfamily = t\ndf = {df}\nparameterization = {par}");
            }
        }
        s
    }
}

/// Lower Cholesky factor.
pub fn cholesky_lower(s: &DenseSymMatrix) -> Result<Mat> {
    Cholesky::new(s.matrix().clone())
        .map(|c| c.l())
        .ok_or(Error::NotPositiveDefinite("Cholesky factorization failed"))
}

/// `n` samples `X = L1 Z L2ᵀ` with i.i.d. standard normal `Z`, so that
/// `cov(vec X) = Σ2 ⊗ Σ1`. `Z` is drawn column-major, one sample at a time.
pub fn sample_matrix_normal(
    n: usize,
    sigma1: &DenseSymMatrix,
    sigma2: &DenseSymMatrix,
    rng: &mut SimRng,
) -> Result<MatrixDataset> {
    let mut sampler = Sampler::new(sigma1, sigma2)?;
    let mut data = Vec::with_capacity(n * sampler.dim());
    for _ in 0..n {
        data.extend_from_slice(sampler.draw(rng, 1.0).as_slice());
    }
    MatrixDataset::new(sigma1.dim(), sigma2.dim(), data)
}

/// `n` samples `G * sqrt(df / W)` with `G` matrix normal and `W ~ χ²_df`.
/// Under [`TParameterization::Covariance`] `G` is shrunk by `sqrt((df-2)/df)`
/// so that `cov(vec X) = Σ2 ⊗ Σ1`.
pub fn sample_matrix_t(
    n: usize,
    sigma1: &DenseSymMatrix,
    sigma2: &DenseSymMatrix,
    df: f64,
    parameterization: TParameterization,
    rng: &mut SimRng,
) -> Result<MatrixDataset> {
    if !(df >= 3.0) {
        return Err(Error::param("df", format!("must be >= 3, got {df}")));
    }
    let chi = ChiSquared::new(df).map_err(|e| Error::param("df", e.to_string()))?;
    let shrink = match parameterization {
        TParameterization::Scale => 1.0,
        TParameterization::Covariance => ((df - 2.0) / df).sqrt(),
    };
    let mut sampler = Sampler::new(sigma1, sigma2)?;
    let mut data = Vec::with_capacity(n * sampler.dim());
    for _ in 0..n {
        let g = sampler.draw(rng, shrink);
        let w: f64 = chi.sample(rng);
        let factor = (df / w).sqrt();
        data.extend(g.iter().map(|x| x * factor));
    }
    MatrixDataset::new(sigma1.dim(), sigma2.dim(), data)
}

struct Sampler {
    l1: Mat,
    l2t: Mat,
    z: Mat,
}

impl Sampler {
    fn new(sigma1: &DenseSymMatrix, sigma2: &DenseSymMatrix) -> Result<Self> {
        let l1 = cholesky_lower(sigma1)?;
        let l2t = cholesky_lower(sigma2)?.transpose();
        let z = Mat::zeros(sigma1.dim(), sigma2.dim());
        Ok(Self { l1, l2t, z })
    }

    fn dim(&self) -> usize {
        self.z.len()
    }

    fn draw(&mut self, rng: &mut SimRng, scale: f64) -> Mat {
        for v in self.z.iter_mut() {
            let x: f64 = rng.sample(StandardNormal);
            *v = x * scale;
        }
        &self.l1 * &self.z * &self.l2t
    }
}
