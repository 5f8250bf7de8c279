//! Subcommands. Each returns the files it wrote so callers and tests can find them.

use std::path::{Path, PathBuf};

use capillary::solver::{continuation_solve, uniqueness_probe, ContinuationState, HistoryEntry};
use capillary::verify::{
    boundary_gradient_certificate, bump_zeta, check_height, contact_angle_residual, interior_gradient_certificate,
    lemma1i_check, mms_manufacture, oracle_1d_solve, strong_form_residual, Certificate, CertificateKind, TracePoint,
    VerifyError,
};
use capillary::{CapillaryProblem, Expression, Mesh, MetricField, ScalarField, SolverError};
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::output::{self, OutputError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("solver: {0}")]
    Solver(#[from] Box<SolverError>),
    #[error("verification: {0}")]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Output(#[from] OutputError),
}

impl RunError {
    /// 2 for configuration problems, 1 for everything that fails while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Solver(e) => match **e {
                SolverError::ValidationFailed(_) | SolverError::InvalidInput(_) => 2,
                _ => 1,
            },
            RunError::Verify(VerifyError::InvalidManufactured(_)) => 2,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            RunError::Config(_) => "config",
            RunError::Solver(_) => "solver",
            RunError::Verify(_) => "verify",
            RunError::Output(_) => "output",
        }
    }
}

/// Restarts that land farther apart than this count as distinct solutions.
pub const UNIQUENESS_SPREAD: f64 = 1e-7;

fn solver_err(e: SolverError) -> RunError {
    RunError::Solver(Box::new(e))
}

/// Shared inputs of every subcommand.
pub struct Context {
    pub config: RunConfig,
    pub output_dir: PathBuf,
}

impl Context {
    pub fn new(config: RunConfig, output_dir: Option<PathBuf>) -> Self {
        let output_dir = output_dir.unwrap_or_else(|| config.output.dir.clone());
        Context { config, output_dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }

    fn ensure_dir(&self) -> Result<(), RunError> {
        std::fs::create_dir_all(&self.output_dir).map_err(|source| {
            RunError::Output(OutputError::Io {
                path: self.output_dir.display().to_string(),
                source,
            })
        })
    }

    fn write_json(&self, name: &str, value: &impl Serialize) -> Result<PathBuf, RunError> {
        let path = self.path(name);
        let text = serde_json::to_string_pretty(value).expect("plain data serializes");
        std::fs::write(&path, text + "\n").map_err(|source| OutputError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(path)
    }
}

/// What a subcommand produced.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub certificates: Vec<Certificate>,
    pub lines: Vec<String>,
}

#[derive(Serialize)]
struct SolveSummary<'a> {
    seed: u64,
    vertices: usize,
    h: f64,
    tau: f64,
    rejected_steps: usize,
    max_abs_u: f64,
    height_bound: Option<f64>,
    history: &'a [HistoryEntry],
}

fn solve_level(cfg: &RunConfig, level: usize) -> Result<(Mesh, MetricField, CapillaryProblem, ContinuationState), RunError> {
    let mesh = cfg.mesh(level)?;
    let metric = cfg.metric()?;
    let problem = cfg.problem()?;
    let state = continuation_solve(&problem, &metric, &mesh, &cfg.continuation()).map_err(solver_err)?;
    Ok((mesh, metric, problem, state))
}

fn center_vertex(cfg: &RunConfig, mesh: &Mesh) -> usize {
    mesh.nearest_vertex(cfg.certificates.center)
}

/// Interior quotient, or a not-applicable record when the ball leaves the domain.
fn interior_or_note(cfg: &RunConfig, u: &ScalarField, metric: &MetricField, mesh: &Mesh) -> Result<Certificate, RunError> {
    match interior_gradient_certificate(u, metric, mesh, center_vertex(cfg, mesh), cfg.certificates.radius) {
        Ok(c) => Ok(c),
        Err(VerifyError::Precondition(msg)) => Ok(not_applicable("interior-gradient", CertificateKind::Stability, msg)),
        Err(e) => Err(e.into()),
    }
}

fn not_applicable(name: &str, kind: CertificateKind, note: String) -> Certificate {
    let mut c = Certificate::stability(name, Vec::new(), 0.0);
    c.kind = kind;
    c.bound = None;
    c.observed = None;
    c.margin = None;
    c.applicable = false;
    c.passed = true;
    c.notes = vec![note];
    c
}

fn single_level_certificates(
    cfg: &RunConfig,
    u: &ScalarField,
    tau: f64,
    problem: &CapillaryProblem,
    metric: &MetricField,
    mesh: &Mesh,
) -> Result<Vec<Certificate>, RunError> {
    Ok(vec![
        check_height(u, problem, metric, mesh)?,
        interior_or_note(cfg, u, metric, mesh)?,
        boundary_gradient_certificate(u, metric, mesh)?,
        contact_angle_residual(u, tau, problem, metric, mesh)?,
        strong_form_residual(u, tau, problem, metric, mesh)?,
    ])
}

fn finish(ctx: &Context, mut outcome: Outcome) -> Result<Outcome, RunError> {
    let report = ctx.path(&ctx.config.output.report);
    output::write_certificates(&report, &outcome.certificates)?;
    outcome.files.push(report);
    let mut text = Vec::new();
    output::summarize(&outcome.certificates, &mut text).expect("writing to memory");
    outcome
        .lines
        .extend(String::from_utf8_lossy(&text).lines().map(str::to_string));
    Ok(outcome)
}

pub fn solve(ctx: &Context) -> Result<Outcome, RunError> {
    ctx.ensure_dir()?;
    let cfg = &ctx.config;
    let (mesh, metric, problem, state) = solve_level(cfg, 0)?;
    let mut outcome = Outcome::default();
    let solution = ctx.path(&cfg.output.solution);
    output::write_solution(&solution, &metric, &mesh, &state.u)?;
    outcome.files.push(solution);
    let summary = SolveSummary {
        seed: cfg.seed,
        vertices: mesh.num_vertices(),
        h: mesh.h_max(),
        tau: state.tau,
        rejected_steps: state.rejected_steps,
        max_abs_u: state.u.max_abs(),
        height_bound: state.height_bound.as_ref().map(|b| b.value),
        history: &state.history,
    };
    outcome.files.push(ctx.write_json("continuation.json", &summary)?);
    outcome.lines.push(format!(
        "solved to tau = {} on {} vertices: max|u| = {:e}, {} continuation steps",
        state.tau,
        mesh.num_vertices(),
        state.u.max_abs(),
        state.history.len() - 1
    ));
    outcome.certificates = single_level_certificates(cfg, &state.u, 1.0, &problem, &metric, &mesh)?;
    finish(ctx, outcome)
}

fn stored_solution(ctx: &Context, mesh: &Mesh, path: Option<&Path>) -> Result<ScalarField, RunError> {
    let default = ctx.path(&ctx.config.output.solution);
    Ok(output::read_solution(path.unwrap_or(&default), mesh)?)
}

pub fn verify(ctx: &Context, solution: Option<&Path>) -> Result<Outcome, RunError> {
    ctx.ensure_dir()?;
    let cfg = &ctx.config;
    let mesh = cfg.mesh(0)?;
    let metric = cfg.metric()?;
    let problem = cfg.problem()?;
    let u = stored_solution(ctx, &mesh, solution)?;
    let mut outcome = Outcome {
        certificates: single_level_certificates(cfg, &u, 1.0, &problem, &metric, &mesh)?,
        ..Outcome::default()
    };
    let zeta = bump_zeta(&mesh, cfg.certificates.zeta_center, cfg.certificates.zeta_radius)?;
    match lemma1i_check(&u, &metric, &mesh, &zeta, &cfg.certificates.taus) {
        Ok(c) => outcome.certificates.push(c),
        Err(VerifyError::Precondition(msg)) => {
            outcome
                .certificates
                .push(not_applicable("lemma-1i", CertificateKind::OrderRange, msg))
        }
        Err(e) => return Err(e.into()),
    }
    if cfg.certificates.uniqueness_trials > 0 {
        outcome.certificates.push(uniqueness_certificate(cfg, &problem, &metric, &mesh)?);
    }
    finish(ctx, outcome)
}

/// Max-norm spread of Newton restarts from seeded random perturbations.
fn uniqueness_certificate(
    cfg: &RunConfig,
    problem: &CapillaryProblem,
    metric: &MetricField,
    mesh: &Mesh,
) -> Result<Certificate, RunError> {
    let trials = cfg.certificates.uniqueness_trials;
    let report = uniqueness_probe(problem, metric, mesh, &cfg.continuation(), trials).map_err(solver_err)?;
    let mut c = Certificate::bound_check("uniqueness", report.spread, UNIQUENESS_SPREAD, 0.0, mesh.h_max());
    c.details.insert("converged".into(), report.converged as f64);
    c.details.insert("amplitude".into(), report.amplitude);
    if report.converged < trials {
        c.passed = false;
        c.notes.extend(report.failures);
    }
    Ok(c)
}

/// Observed orders between consecutive trace points.
fn pairwise_orders(trace: &[TracePoint]) -> Vec<Option<f64>> {
    trace
        .windows(2)
        .map(|w| {
            (w[0].value > 0.0 && w[1].value > 0.0).then(|| (w[0].value / w[1].value).ln() / (w[0].h / w[1].h).ln())
        })
        .collect()
}

fn table_row(h: f64, values: &[(f64, Option<f64>)]) -> String {
    let mut s = format!("{h:<10.5}");
    for (v, order) in values {
        s += &format!(" {v:>12.4e} {:>6}", order.map_or("-".into(), |o| format!("{o:.2}")));
    }
    s
}

fn merge_all(per_level: Vec<Vec<Certificate>>) -> Result<Vec<Certificate>, RunError> {
    let count = per_level.first().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let column: Vec<Certificate> = per_level.iter().map(|l| l[k].clone()).collect();
        if column.iter().any(|c| !c.applicable) {
            out.push(column.into_iter().find(|c| !c.applicable).expect("present"));
        } else {
            out.push(Certificate::merge_refinements(&column)?);
        }
    }
    Ok(out)
}

pub fn mms(ctx: &Context) -> Result<Outcome, RunError> {
    ctx.ensure_dir()?;
    let cfg = &ctx.config;
    let section = cfg
        .mms
        .as_ref()
        .ok_or_else(|| ConfigError::Range("the mms command needs an [mms] section".into()))?;
    let exact = Expression::parse(&section.u_exact)
        .map_err(|e| ConfigError::Expression(format!("mms.u_exact: {e}")))?;
    let metric = cfg.metric()?;
    let mut linf = Vec::new();
    let mut per_level = Vec::new();
    let mut last = None;
    for level in 0..cfg.refinement.levels {
        let mesh = cfg.mesh(level)?;
        let problem = mms_manufacture(&metric, &mesh, &exact, section.kappa0)?;
        let state = continuation_solve(&problem, &metric, &mesh, &cfg.continuation()).map_err(solver_err)?;
        let interpolant = ScalarField::from_expression(&mesh, &exact).map_err(|e| ConfigError::Expression(e.to_string()))?;
        linf.push(TracePoint {
            h: mesh.h_max(),
            value: state.u.max_abs_diff(&interpolant),
        });
        per_level.push(vec![
            contact_angle_residual(&state.u, 1.0, &problem, &metric, &mesh)?,
            strong_form_residual(&state.u, 1.0, &problem, &metric, &mesh)?,
            boundary_gradient_certificate(&state.u, &metric, &mesh)?,
        ]);
        last = Some((mesh, state.u));
    }
    let mut outcome = Outcome::default();
    let contact: Vec<TracePoint> = per_level.iter().map(|l| l[0].trace[0]).collect();
    let o_linf = pairwise_orders(&linf);
    let o_contact = pairwise_orders(&contact);
    outcome.lines.push(format!("{:<10} {:>12} {:>6} {:>12} {:>6}", "h", "Linf", "order", "contact", "order"));
    for k in 0..linf.len() {
        let prev = |o: &[Option<f64>]| if k == 0 { None } else { o[k - 1] };
        outcome.lines.push(table_row(
            linf[k].h,
            &[(linf[k].value, prev(&o_linf)), (contact[k].value, prev(&o_contact))],
        ));
    }
    outcome.certificates.push(Certificate::decay("mms-linf", linf, 1.8));
    outcome.certificates.extend(merge_all(per_level)?);
    if let Some((mesh, u)) = last {
        let solution = ctx.path(&cfg.output.solution);
        output::write_solution(&solution, &metric, &mesh, &u)?;
        outcome.files.push(solution);
    }
    finish(ctx, outcome)
}

pub fn convergence(ctx: &Context) -> Result<Outcome, RunError> {
    ctx.ensure_dir()?;
    let cfg = &ctx.config;
    if cfg.refinement.levels < 3 {
        return Err(ConfigError::Range("convergence needs refinement.levels >= 3".into()).into());
    }
    let mut levels = Vec::new();
    let mut per_level = Vec::new();
    for level in 0..cfg.refinement.levels {
        let (mesh, metric, problem, state) = solve_level(cfg, level)?;
        per_level.push(single_level_certificates(cfg, &state.u, 1.0, &problem, &metric, &mesh)?);
        levels.push((mesh, metric, state.u));
    }
    // successive differences sampled at the coarser vertices
    let mut diffs = Vec::new();
    for w in levels.windows(2) {
        let (coarse, _, uc) = &w[0];
        let (fine, _, uf) = &w[1];
        let d = (0..coarse.num_vertices())
            .map(|v| (uc.values()[v] - uf.sample(fine, coarse.vertex(v))).abs())
            .fold(0.0, f64::max);
        diffs.push(TracePoint { h: coarse.h_max(), value: d });
    }
    let mut outcome = Outcome::default();
    let orders = pairwise_orders(&diffs);
    outcome.lines.push(format!("{:<10} {:>12} {:>6}", "h", "|u_h-u_h/2|", "order"));
    for (k, d) in diffs.iter().enumerate() {
        let o = if k == 0 { None } else { orders[k - 1] };
        outcome.lines.push(table_row(d.h, &[(d.value, o)]));
    }
    let mut cert = Certificate::decay("self-convergence", diffs, 1.0);
    cert.notes.push("differences between consecutive resolutions".into());
    outcome.certificates.push(cert);
    outcome.certificates.extend(merge_all(per_level)?);
    let (mesh, metric, u) = levels.last().expect("levels >= 3");
    let solution = ctx.path(&cfg.output.solution);
    output::write_solution(&solution, metric, mesh, u)?;
    outcome.files.push(solution);
    finish(ctx, outcome)
}

pub fn oracle1d(ctx: &Context) -> Result<Outcome, RunError> {
    ctx.ensure_dir()?;
    let cfg = &ctx.config;
    if cfg.metric.dim != 1 {
        return Err(ConfigError::Range("oracle1d needs an interval domain".into()).into());
    }
    let (mesh, metric, problem, state) = solve_level(cfg, 0)?;
    let (a, b) = (mesh.vertex(0)[0], mesh.vertex(mesh.num_vertices() - 1)[0]);
    let m = cfg.oracle.m_dense;
    let dense = oracle_1d_solve(&problem, &metric, a, b, m, 1.0)?;
    let err = mesh
        .vertices()
        .iter()
        .zip(state.u.values())
        .map(|(x, u)| (u - dense.eval(x[0])).abs())
        .fold(0.0, f64::max);
    let h = mesh.h_max();
    let bound = 5.0 * (h * h + 1.0 / (m as f64 * m as f64));
    let mut outcome = Outcome::default();
    outcome.lines.push(format!(
        "max |u_fem - u_oracle| = {err:e} (bound {bound:e}, oracle Newton iterations {})",
        dense.newton_iterations
    ));
    let mut cert = Certificate::bound_check("oracle-agreement", err, bound, 0.0, h);
    cert.details.insert("m_dense".into(), m as f64);
    cert.details.insert("constant".into(), err / (h * h + 1.0 / (m as f64 * m as f64)));
    outcome.certificates.push(cert);
    let solution = ctx.path(&cfg.output.solution);
    output::write_solution(&solution, &metric, &mesh, &state.u)?;
    outcome.files.push(solution);
    finish(ctx, outcome)
}

pub fn export(ctx: &Context, solution: Option<&Path>) -> Result<Outcome, RunError> {
    ctx.ensure_dir()?;
    let cfg = &ctx.config;
    let mesh = cfg.mesh(0)?;
    let metric = cfg.metric()?;
    let u = stored_solution(ctx, &mesh, solution)?;
    let w = output::vertex_slope_factors(&metric, &mesh, &u)?;
    let w = ScalarField::new(&mesh, w).map_err(|e| OutputError::Core(Box::new(e)))?;
    let d = mesh
        .boundary_distance_field(&metric)
        .map_err(|e| OutputError::Core(Box::new(e)))?;
    let io = |path: &Path| {
        let p = path.display().to_string();
        move |e: capillary::MeshError| OutputError::Core(format!("{p}: {e}").into())
    };
    let vtk = ctx.path(&cfg.output.vtk);
    let mut buf = Vec::new();
    mesh.write_vtk(&mut buf, &[("u", &u), ("W", &w), ("d_gamma_boundary", &d)])
        .map_err(io(&vtk))?;
    std::fs::write(&vtk, buf).map_err(|source| OutputError::Io {
        path: vtk.display().to_string(),
        source,
    })?;
    let mesh_path = ctx.path(&cfg.output.mesh);
    let mut buf = Vec::new();
    mesh.write_text(&mut buf).map_err(io(&mesh_path))?;
    std::fs::write(&mesh_path, buf).map_err(|source| OutputError::Io {
        path: mesh_path.display().to_string(),
        source,
    })?;
    let csv = ctx.path(&cfg.output.solution);
    let mut outcome = Outcome::default();
    if solution.is_some_and(|p| p != csv) {
        output::write_solution(&csv, &metric, &mesh, &u)?;
        outcome.files.push(csv);
    }
    outcome.files.push(vtk);
    outcome.files.push(mesh_path);
    outcome.lines.push(format!("exported {} vertices", mesh.num_vertices()));
    Ok(outcome)
}
