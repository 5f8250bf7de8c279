//! Damped Newton corrector and adaptive continuation in the data scaling `tau`.

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{Assembler, AssemblyError};
use crate::geometry::MetricField;
use crate::mesh::{Mesh, ScalarField};
use crate::problem::{
    default_s_range, height_bound, validate_conditions, CapillaryProblem, HeightBound,
    ProblemError, ValidationReport,
};
use crate::sparse::{self, LinearError};

/// Backtracking halvings allowed per Newton step.
pub const MAX_HALVINGS: usize = 30;
/// Sufficient-decrease constant of the Armijo test on the residual 2-norm.
pub const ARMIJO_C: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NewtonReport {
    pub iterations: usize,
    /// Max-norm of the residual, starting with the initial state.
    pub residual_norms: Vec<f64>,
    /// Euclidean norm of the residual, starting with the initial state.
    pub residual_l2: Vec<f64>,
    /// Accepted step length per iteration.
    pub damping: Vec<f64>,
    pub converged: bool,
}

impl NewtonReport {
    pub fn final_residual(&self) -> f64 {
        self.residual_norms.last().copied().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("singular Jacobian at Newton iteration {iteration}: {source}")]
    SingularJacobian {
        iteration: usize,
        source: LinearError,
        last: ScalarField,
        report: Box<NewtonReport>,
    },
    #[error("line search failed at Newton iteration {iteration}")]
    LineSearchFailed {
        iteration: usize,
        last: ScalarField,
        report: Box<NewtonReport>,
    },
    #[error("Newton did not converge in {} iterations (residual {:e})", report.iterations, report.final_residual())]
    MaxIterationsExceeded {
        last: ScalarField,
        report: Box<NewtonReport>,
    },
    #[error("continuation stalled at tau = {}", state.tau)]
    ContinuationStalled { state: Box<ContinuationState> },
    #[error("problem fails the structural conditions: {}", describe_failures(.0))]
    ValidationFailed(Box<ValidationReport>),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

fn describe_failures(report: &ValidationReport) -> String {
    report
        .failures()
        .iter()
        .map(|c| format!("{} ({})", c.name, c.detail))
        .collect::<Vec<_>>()
        .join("; ")
}

impl SolverError {
    /// The last iterate carried by Newton failures.
    pub fn last_iterate(&self) -> Option<&ScalarField> {
        match self {
            SolverError::SingularJacobian { last, .. }
            | SolverError::LineSearchFailed { last, .. }
            | SolverError::MaxIterationsExceeded { last, .. } => Some(last),
            SolverError::ContinuationStalled { state } => Some(&state.u),
            _ => None,
        }
    }
}

fn inf_norm(r: &[f64]) -> f64 {
    r.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn l2_norm(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Newton on a prepared assembler; see [`newton_solve`].
pub fn newton_with(
    asm: &Assembler<'_>,
    u0: &ScalarField,
    tau: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(ScalarField, NewtonReport), SolverError> {
    if !(tol > 0.0) {
        return Err(SolverError::InvalidInput(format!("tolerance {tol}")));
    }
    let mesh = asm.mesh();
    let mut u = ScalarField::new(mesh, u0.values().to_vec())
        .map_err(|e| SolverError::InvalidInput(e.to_string()))?;
    let mut r = asm.residual(&u, tau)?;
    let mut report = NewtonReport {
        iterations: 0,
        residual_norms: vec![inf_norm(&r)],
        residual_l2: vec![l2_norm(&r)],
        damping: Vec::new(),
        converged: false,
    };
    if inf_norm(&r) <= tol {
        report.converged = true;
        return Ok((u, report));
    }
    for iteration in 1..=max_iter {
        let jac = asm.jacobian(&u, tau)?;
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let delta = match sparse::solve(&jac, &rhs) {
            Ok(d) => d,
            Err(source) => {
                return Err(SolverError::SingularJacobian {
                    iteration,
                    source,
                    last: u,
                    report: Box::new(report),
                })
            }
        };
        let norm0 = l2_norm(&r);
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = u
                .values()
                .iter()
                .zip(&delta)
                .map(|(a, d)| a + lambda * d)
                .collect();
            if trial.iter().all(|v| v.is_finite()) {
                let trial = ScalarField::new(mesh, trial).expect("finite trial state");
                // data may be undefined at the trial heights; treat as a rejected step
                if let Ok(rt) = asm.residual(&trial, tau) {
                    if l2_norm(&rt) <= (1.0 - ARMIJO_C * lambda) * norm0 {
                        accepted = Some((trial, rt));
                        break;
                    }
                }
            }
            lambda *= 0.5;
        }
        let Some((next, rt)) = accepted else {
            return Err(SolverError::LineSearchFailed {
                iteration,
                last: u,
                report: Box::new(report),
            });
        };
        u = next;
        r = rt;
        report.iterations = iteration;
        report.damping.push(lambda);
        report.residual_norms.push(inf_norm(&r));
        report.residual_l2.push(l2_norm(&r));
        if inf_norm(&r) <= tol {
            report.converged = true;
            return Ok((u, report));
        }
    }
    Err(SolverError::MaxIterationsExceeded {
        last: u,
        report: Box::new(report),
    })
}

/// Solves `R(u, tau) = 0` from `u0` to `||R||_inf <= tol`.
pub fn newton_solve(
    u0: &ScalarField,
    tau: f64,
    problem: &CapillaryProblem,
    metric: &MetricField,
    mesh: &Mesh,
    tol: f64,
    max_iter: usize,
) -> Result<(ScalarField, NewtonReport), SolverError> {
    let asm = Assembler::new(mesh, metric, problem)?;
    newton_with(&asm, u0, tau, tol, max_iter)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContinuationConfig {
    pub tol: f64,
    pub max_newton: usize,
    pub dtau: f64,
    pub dtau_min: f64,
    pub dtau_max: f64,
    /// A step is easy when Newton needs at most this many iterations.
    pub easy_iterations: usize,
    /// Consecutive easy steps before the step doubles.
    pub easy_streak: usize,
    /// Skip the structural-condition gate (a warning is still logged).
    pub unsafe_mode: bool,
    /// Validation range for `s`; derived from the height bound when absent.
    pub s_range: Option<(f64, f64)>,
    pub seed: u64,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        ContinuationConfig {
            tol: 1e-10,
            max_newton: 50,
            dtau: 0.1,
            dtau_min: 1e-4,
            dtau_max: 0.25,
            easy_iterations: 5,
            easy_streak: 3,
            unsafe_mode: false,
            s_range: None,
            seed: 0,
        }
    }
}

impl ContinuationConfig {
    pub fn check(&self) -> Result<(), String> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(format!("tol = {} must be positive", self.tol));
        }
        if self.max_newton == 0 {
            return Err("max_newton must be at least 1".into());
        }
        if !(self.dtau_min > 0.0 && self.dtau_min <= self.dtau_max && self.dtau_max <= 1.0) {
            return Err(format!(
                "need 0 < dtau_min <= dtau_max <= 1, got dtau_min = {}, dtau_max = {}",
                self.dtau_min, self.dtau_max
            ));
        }
        if !(self.dtau >= self.dtau_min && self.dtau <= self.dtau_max) {
            return Err(format!(
                "dtau = {} outside [dtau_min, dtau_max] = [{}, {}]",
                self.dtau, self.dtau_min, self.dtau_max
            ));
        }
        if let Some((lo, hi)) = self.s_range {
            if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                return Err(format!("s_range ({lo}, {hi}) is not an interval"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ContinuationStatus {
    Advancing,
    Converged,
    Stalled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistoryEntry {
    pub tau: f64,
    pub newton_iterations: usize,
    pub residual_norm: f64,
}

#[derive(Debug, Clone)]
pub struct ContinuationState {
    pub tau: f64,
    pub u: ScalarField,
    pub dtau: f64,
    pub history: Vec<HistoryEntry>,
    pub status: ContinuationStatus,
    pub rejected_steps: usize,
    pub validation: Option<ValidationReport>,
    pub height_bound: Option<HeightBound>,
}

/// Validation and the height bound, gated unless `cfg.unsafe_mode`.
pub fn precheck(
    problem: &CapillaryProblem,
    metric: &MetricField,
    mesh: &Mesh,
    cfg: &ContinuationConfig,
) -> Result<(Option<ValidationReport>, Option<HeightBound>), SolverError> {
    let bound = match height_bound(problem, metric, mesh) {
        Ok(b) => Some(b),
        Err(ProblemError::Precondition(msg)) if cfg.unsafe_mode => {
            warn!("unsafe mode: {msg}");
            None
        }
        Err(ProblemError::Precondition(msg)) => {
            let s_range = cfg.s_range.unwrap_or((-2.0, 2.0));
            let report = validate_conditions(problem, mesh, metric, s_range)?;
            if !report.passed() {
                return Err(SolverError::ValidationFailed(Box::new(report)));
            }
            return Err(SolverError::Problem(ProblemError::Precondition(msg)));
        }
        Err(e) => return Err(e.into()),
    };
    let s_range = cfg
        .s_range
        .unwrap_or_else(|| bound.as_ref().map_or((-2.0, 2.0), default_s_range));
    let report = validate_conditions(problem, mesh, metric, s_range)?;
    if !report.passed() {
        if cfg.unsafe_mode {
            warn!("unsafe mode: {}", describe_failures(&report));
        } else {
            return Err(SolverError::ValidationFailed(Box::new(report)));
        }
    }
    Ok((Some(report), bound))
}

/// Continuation from the trivial solution at `tau = 0` to `tau = 1`.
pub fn continuation_solve(
    problem: &CapillaryProblem,
    metric: &MetricField,
    mesh: &Mesh,
    cfg: &ContinuationConfig,
) -> Result<ContinuationState, SolverError> {
    cfg.check().map_err(SolverError::InvalidInput)?;
    let (validation, bound) = precheck(problem, metric, mesh, cfg)?;
    let asm = Assembler::new(mesh, metric, problem)?;
    continuation_with(&asm, cfg, validation, bound)
}

fn continuation_with(
    asm: &Assembler<'_>,
    cfg: &ContinuationConfig,
    validation: Option<ValidationReport>,
    bound: Option<HeightBound>,
) -> Result<ContinuationState, SolverError> {
    let mesh = asm.mesh();
    let (u0, rep0) = newton_with(asm, &ScalarField::zeros(mesh), 0.0, cfg.tol, cfg.max_newton)?;
    let mut state = ContinuationState {
        tau: 0.0,
        u: u0,
        dtau: cfg.dtau,
        history: vec![HistoryEntry {
            tau: 0.0,
            newton_iterations: rep0.iterations,
            residual_norm: rep0.final_residual(),
        }],
        status: ContinuationStatus::Advancing,
        rejected_steps: 0,
        validation,
        height_bound: bound,
    };
    info!("tau=0 iterations={} residual={:e}", rep0.iterations, rep0.final_residual());
    let mut previous: Option<(f64, ScalarField)> = None;
    let mut streak = 0;
    while state.tau < 1.0 {
        let target = (state.tau + state.dtau).min(1.0);
        let predictor = match &previous {
            Some((tp, up)) => {
                let factor = (target - state.tau) / (state.tau - tp);
                let values = state
                    .u
                    .values()
                    .iter()
                    .zip(up.values())
                    .map(|(a, b)| a + factor * (a - b))
                    .collect();
                ScalarField::new(mesh, values).unwrap_or_else(|_| state.u.clone())
            }
            None => state.u.clone(),
        };
        match newton_with(asm, &predictor, target, cfg.tol, cfg.max_newton) {
            Ok((u, rep)) => {
                info!(
                    "tau={target} iterations={} residual={:e} dtau={}",
                    rep.iterations,
                    rep.final_residual(),
                    state.dtau
                );
                state.history.push(HistoryEntry {
                    tau: target,
                    newton_iterations: rep.iterations,
                    residual_norm: rep.final_residual(),
                });
                previous = Some((state.tau, std::mem::replace(&mut state.u, u)));
                state.tau = target;
                if rep.iterations <= cfg.easy_iterations {
                    streak += 1;
                    if streak >= cfg.easy_streak {
                        state.dtau = (2.0 * state.dtau).min(cfg.dtau_max);
                        streak = 0;
                    }
                } else {
                    streak = 0;
                }
            }
            Err(err) => {
                state.rejected_steps += 1;
                streak = 0;
                state.dtau *= 0.5;
                info!("tau={target} rejected ({err}); dtau={}", state.dtau);
                if state.dtau < cfg.dtau_min {
                    state.status = ContinuationStatus::Stalled;
                    warn!("continuation stalled at tau={}", state.tau);
                    return Err(SolverError::ContinuationStalled {
                        state: Box::new(state),
                    });
                }
            }
        }
    }
    state.status = ContinuationStatus::Converged;
    Ok(state)
}

/// Newton iteration floor for uniqueness restarts. A white-noise start is far
/// from the solution and the residual-norm line search crawls there for a
/// few hundred damped steps before the quadratic phase.
pub const PROBE_MAX_NEWTON: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessReport {
    pub trials: usize,
    pub converged: usize,
    /// Largest pairwise max-norm distance between converged restarts.
    pub spread: f64,
    pub amplitude: f64,
    pub failures: Vec<String>,
}

/// Re-solves at `tau = 1` from `trials` random perturbations of the continuation solution.
///
/// Noise is uniform with amplitude equal to the height bound (1 when the bound is 0).
/// Each restart may take up to `max(cfg.max_newton, PROBE_MAX_NEWTON)` iterations.
pub fn uniqueness_probe(
    problem: &CapillaryProblem,
    metric: &MetricField,
    mesh: &Mesh,
    cfg: &ContinuationConfig,
    trials: usize,
) -> Result<UniquenessReport, SolverError> {
    cfg.check().map_err(SolverError::InvalidInput)?;
    let (validation, bound) = precheck(problem, metric, mesh, cfg)?;
    let asm = Assembler::new(mesh, metric, problem)?;
    let state = continuation_with(&asm, cfg, validation, bound)?;
    let amplitude = bound.map(|b| b.value).filter(|&b| b > 0.0).unwrap_or(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut solutions: Vec<ScalarField> = Vec::new();
    let mut failures = Vec::new();
    for t in 0..trials {
        let values = state
            .u
            .values()
            .iter()
            .map(|v| v + rng.gen_range(-amplitude..=amplitude))
            .collect();
        let start = ScalarField::new(mesh, values).expect("finite perturbation");
        match newton_with(&asm, &start, 1.0, cfg.tol, cfg.max_newton.max(PROBE_MAX_NEWTON)) {
            Ok((u, _)) => solutions.push(u),
            Err(e) => failures.push(format!("trial {t}: {e}")),
        }
    }
    let mut spread: f64 = 0.0;
    for i in 0..solutions.len() {
        for j in i + 1..solutions.len() {
            spread = spread.max(solutions[i].max_abs_diff(&solutions[j]));
        }
    }
    Ok(UniquenessReport {
        trials,
        converged: solutions.len(),
        spread,
        amplitude,
        failures,
    })
}
