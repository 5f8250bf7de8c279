//! Run configuration: a TOML file with strict sections.
//!
//! ```toml
//! seed = 7
//!
//! [metric]
//! preset = "radial-warp"      # euclidean | product | radial-warp | custom
//! dim = 2
//! gamma = "1 + 3*r^2"
//! conformal = "1"             # radial-warp only: sigma = f^2 I
//! sigma = ["1", "0", "1"]     # product/custom: [s11, s12, s22], or [s11] when dim = 1
//!
//! [domain]
//! shape = "disk"              # disk | annulus | interval | mesh-file
//! radius = 1.0
//! h = 0.1
//!
//! [problem]
//! psi = "1 + s"
//! phi = "0.3"
//!
//! [solver]
//! tol = 1e-10
//! ```
//!
//! Unknown keys are rejected and the offending key is named in the error.

use std::path::{Path, PathBuf};

use capillary::problem::DeclaredConstants;
use capillary::solver::ContinuationConfig;
use capillary::{CapillaryProblem, Expression, Mesh, MetricField};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("config value out of range: {0}")]
    Range(String),
    #[error("config expression: {0}")]
    Expression(String),
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub metric: MetricSection,
    pub domain: DomainSection,
    pub problem: ProblemSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub refinement: RefinementSection,
    #[serde(default)]
    pub mms: Option<MmsSection>,
    #[serde(default)]
    pub certificates: CertificateSection,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Euclidean,
    Product,
    RadialWarp,
    Custom,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MetricSection {
    pub preset: Preset,
    pub dim: usize,
    pub gamma: Option<String>,
    pub conformal: Option<String>,
    pub sigma: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    Disk,
    Annulus,
    Interval,
    MeshFile,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub shape: Shape,
    pub radius: Option<f64>,
    pub inner: Option<f64>,
    pub outer: Option<f64>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    /// Mesh size for disks and annuli.
    pub h: Option<f64>,
    /// Cell count for intervals.
    pub cells: Option<usize>,
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub psi: String,
    pub phi: String,
    pub beta: Option<f64>,
    pub mu: Option<f64>,
    pub beta_prime: Option<f64>,
    pub c_psi: Option<f64>,
    pub c_phi: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub tol: f64,
    pub max_newton: usize,
    pub dtau: f64,
    pub dtau_min: f64,
    pub dtau_max: f64,
    pub unsafe_mode: bool,
    pub s_range: Option<[f64; 2]>,
}

impl Default for SolverSection {
    fn default() -> Self {
        let c = ContinuationConfig::default();
        SolverSection {
            tol: c.tol,
            max_newton: c.max_newton,
            dtau: c.dtau,
            dtau_min: c.dtau_min,
            dtau_max: c.dtau_max,
            unsafe_mode: c.unsafe_mode,
            s_range: c.s_range.map(|(a, b)| [a, b]),
        }
    }
}

/// Number of resolutions for `mms`, `convergence` and refinement-traced certificates.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RefinementSection {
    pub levels: usize,
}

impl Default for RefinementSection {
    fn default() -> Self {
        RefinementSection { levels: 3 }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MmsSection {
    pub u_exact: String,
    #[serde(default = "default_kappa0")]
    pub kappa0: f64,
}

fn default_kappa0() -> f64 {
    capillary::verify::KAPPA0
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CertificateSection {
    /// Ball center for the interior gradient quotient; the nearest vertex is used.
    pub center: [f64; 2],
    pub radius: f64,
    /// Bump `zeta` for the displacement check: center, radius and amplitude.
    pub zeta_center: [f64; 2],
    pub zeta_radius: f64,
    pub taus: Vec<f64>,
    pub uniqueness_trials: usize,
}

impl Default for CertificateSection {
    fn default() -> Self {
        CertificateSection {
            center: [0.0, 0.0],
            radius: 0.5,
            zeta_center: [0.0, 0.0],
            zeta_radius: 0.5,
            taus: vec![1e-2, 5e-3, 2.5e-3],
            uniqueness_trials: 5,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub m_dense: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection { m_dense: 4096 }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub solution: String,
    pub report: String,
    pub vtk: String,
    pub mesh: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
            solution: "solution.csv".into(),
            report: "report.jsonl".into(),
            vtk: "solution.vtk".into(),
            mesh: "mesh.txt".into(),
        }
    }
}

fn expr(text: &str, what: &str) -> Result<Expression, ConfigError> {
    Expression::parse(text).map_err(|e| ConfigError::Expression(format!("{what}: {e}")))
}

fn require<T: Copy>(v: Option<T>, key: &str) -> Result<T, ConfigError> {
    v.ok_or_else(|| ConfigError::Range(format!("missing key `{key}`")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative mesh path is resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        if let (Some(p), Some(dir)) = (cfg.domain.path.as_mut(), path.parent()) {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    fn check(&self) -> Result<(), ConfigError> {
        if !(1..=2).contains(&self.metric.dim) {
            return Err(ConfigError::Range(format!("metric.dim = {} (1 or 2)", self.metric.dim)));
        }
        self.continuation().check().map_err(ConfigError::Range)?;
        if self.refinement.levels < 1 || self.refinement.levels > 6 {
            return Err(ConfigError::Range(format!(
                "refinement.levels = {} (1..=6)",
                self.refinement.levels
            )));
        }
        let c = &self.certificates;
        if !(c.radius > 0.0) || !(c.zeta_radius > 0.0) {
            return Err(ConfigError::Range("certificate radii must be positive".into()));
        }
        if c.taus.is_empty() || c.taus.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(ConfigError::Range("certificates.taus must lie in (0, 1)".into()));
        }
        if self.oracle.m_dense < 2 {
            return Err(ConfigError::Range(format!("oracle.m_dense = {}", self.oracle.m_dense)));
        }
        if let Some(m) = &self.mms {
            if !(m.kappa0 > 0.0) {
                return Err(ConfigError::Range(format!("mms.kappa0 = {} must be positive", m.kappa0)));
            }
        }
        let d = &self.domain;
        let dim_of_shape = match d.shape {
            Shape::Disk | Shape::Annulus => Some(2),
            Shape::Interval => Some(1),
            Shape::MeshFile => None,
        };
        if let Some(dim) = dim_of_shape {
            if dim != self.metric.dim {
                return Err(ConfigError::Range(format!(
                    "domain shape {:?} needs metric.dim = {dim}",
                    d.shape
                )));
            }
        }
        Ok(())
    }

    pub fn continuation(&self) -> ContinuationConfig {
        ContinuationConfig {
            tol: self.solver.tol,
            max_newton: self.solver.max_newton,
            dtau: self.solver.dtau,
            dtau_min: self.solver.dtau_min,
            dtau_max: self.solver.dtau_max,
            unsafe_mode: self.solver.unsafe_mode,
            s_range: self.solver.s_range.map(|[a, b]| (a, b)),
            seed: self.seed,
            ..ContinuationConfig::default()
        }
    }

    pub fn metric(&self) -> Result<MetricField, ConfigError> {
        let m = &self.metric;
        let gamma = || -> Result<Expression, ConfigError> {
            expr(m.gamma.as_deref().unwrap_or("1"), "metric.gamma")
        };
        let sigma = || -> Result<Vec<Expression>, ConfigError> {
            let texts = m
                .sigma
                .as_ref()
                .ok_or_else(|| ConfigError::Range("missing key `metric.sigma`".into()))?;
            texts.iter().map(|t| expr(t, "metric.sigma")).collect()
        };
        let built = match m.preset {
            Preset::Euclidean => MetricField::euclidean(m.dim),
            Preset::Product => MetricField::product(m.dim, &sigma()?),
            Preset::RadialWarp => MetricField::radial_warp(
                m.dim,
                &expr(m.conformal.as_deref().unwrap_or("1"), "metric.conformal")?,
                &gamma()?,
            ),
            Preset::Custom => MetricField::custom(m.dim, &sigma()?, &gamma()?),
        };
        built.map_err(|e| ConfigError::Range(format!("metric: {e}")))
    }

    pub fn problem(&self) -> Result<CapillaryProblem, ConfigError> {
        let p = &self.problem;
        let problem = CapillaryProblem::parse(&p.psi, &p.phi)
            .map_err(|e| ConfigError::Expression(format!("problem: {e}")))?;
        Ok(problem.with_declared(DeclaredConstants {
            beta: p.beta,
            mu: p.mu,
            beta_prime: p.beta_prime,
            c_psi: p.c_psi,
            c_phi: p.c_phi,
        }))
    }

    /// Mesh at refinement `level` (0 is the configured resolution; each level halves h).
    pub fn mesh(&self, level: usize) -> Result<Mesh, ConfigError> {
        let d = &self.domain;
        let factor = (1usize << level) as f64;
        let built = match d.shape {
            Shape::Disk => Mesh::disk(require(d.radius, "domain.radius")?, require(d.h, "domain.h")? / factor),
            Shape::Annulus => Mesh::annulus(
                require(d.inner, "domain.inner")?,
                require(d.outer, "domain.outer")?,
                require(d.h, "domain.h")? / factor,
            ),
            Shape::Interval => Mesh::interval(
                d.a.unwrap_or(0.0),
                d.b.unwrap_or(1.0),
                require(d.cells, "domain.cells")? << level,
            ),
            Shape::MeshFile => {
                if level > 0 {
                    return Err(ConfigError::Range("mesh files cannot be refined".into()));
                }
                let path = d
                    .path
                    .as_ref()
                    .ok_or_else(|| ConfigError::Range("missing key `domain.path`".into()))?;
                let file = std::fs::File::open(path).map_err(|source| ConfigError::Io {
                    path: path.clone(),
                    source,
                })?;
                Mesh::read_text(std::io::BufReader::new(file))
            }
        };
        let mesh = built.map_err(|e| ConfigError::Range(format!("domain: {e}")))?;
        if mesh.dim() != self.metric.dim {
            return Err(ConfigError::Range(format!(
                "mesh dimension {} differs from metric.dim = {}",
                mesh.dim(),
                self.metric.dim
            )));
        }
        Ok(mesh)
    }
}
