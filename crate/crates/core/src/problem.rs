//! Capillary data `(Psi, Phi)` and sampled checks of the structural conditions.
//!
//! The structural conditions, numbered as in the validation report:
//! (i) `|Psi| + |grad Psi| <= C_Psi`, (ii) `dPsi/ds >= beta > 0`,
//! (iii) `dPhi/ds <= 0`, (iv) `1 - Phi^2 >= beta'`, (v) `|Phi|_{C^2} <= C_Phi`.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{ExprError, Expression};
use crate::geometry::{GeometryError, MetricField, Point};
use crate::mesh::Mesh;

/// Number of `s` levels in the validation grid.
pub const S_GRID: usize = 17;
/// Relative tolerance for supplied `s`-derivatives against central differences.
pub const DERIVATIVE_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type NativeFn = Arc<dyn Fn(Point, f64) -> f64 + Send + Sync>;

/// A data function of `(x, s)`: a parsed expression or a native closure.
#[derive(Clone)]
pub enum DataFn {
    Expr(Expression),
    Native { label: String, f: NativeFn },
}

impl DataFn {
    pub fn native(label: impl Into<String>, f: impl Fn(Point, f64) -> f64 + Send + Sync + 'static) -> Self {
        DataFn::Native {
            label: label.into(),
            f: Arc::new(f),
        }
    }

    pub fn eval(&self, x: Point, s: f64) -> Result<f64, ProblemError> {
        match self {
            DataFn::Expr(e) => Ok(e.eval(x, s)?),
            DataFn::Native { label, f } => {
                let v = f(x, s);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(ProblemError::InvalidInput(format!(
                        "`{label}` is not finite at x = {x:?}, s = {s}"
                    )))
                }
            }
        }
    }
}

impl fmt::Debug for DataFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataFn::Expr(e) => write!(f, "{e}"),
            DataFn::Native { label, .. } => write!(f, "<{label}>"),
        }
    }
}

impl fmt::Display for DataFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Structural constants a user may declare; sampled values are cross-checked.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DeclaredConstants {
    pub beta: Option<f64>,
    pub mu: Option<f64>,
    pub beta_prime: Option<f64>,
    pub c_psi: Option<f64>,
    pub c_phi: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CapillaryProblem {
    pub psi: DataFn,
    pub dpsi_ds: DataFn,
    pub phi: DataFn,
    pub dphi_ds: DataFn,
    pub declared: DeclaredConstants,
}

impl CapillaryProblem {
    /// Problem from expressions; `s`-derivatives are derived symbolically.
    pub fn from_expressions(psi: Expression, phi: Expression) -> Result<Self, ProblemError> {
        let dpsi = psi.s_derivative()?;
        let dphi = phi.s_derivative()?;
        Ok(CapillaryProblem {
            psi: DataFn::Expr(psi),
            dpsi_ds: DataFn::Expr(dpsi),
            phi: DataFn::Expr(phi),
            dphi_ds: DataFn::Expr(dphi),
            declared: DeclaredConstants::default(),
        })
    }

    /// Convenience wrapper parsing both expressions.
    pub fn parse(psi: &str, phi: &str) -> Result<Self, ProblemError> {
        Self::from_expressions(Expression::parse(psi)?, Expression::parse(phi)?)
    }

    pub fn with_declared(mut self, declared: DeclaredConstants) -> Self {
        self.declared = declared;
        self
    }

    pub fn psi(&self, x: Point, s: f64) -> Result<f64, ProblemError> {
        self.psi.eval(x, s)
    }

    pub fn dpsi_ds(&self, x: Point, s: f64) -> Result<f64, ProblemError> {
        self.dpsi_ds.eval(x, s)
    }

    pub fn phi(&self, x: Point, s: f64) -> Result<f64, ProblemError> {
        self.phi.eval(x, s)
    }

    pub fn dphi_ds(&self, x: Point, s: f64) -> Result<f64, ProblemError> {
        self.dphi_ds.eval(x, s)
    }
}

/// Outcome of one sampled condition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionCheck {
    pub name: String,
    pub passed: bool,
    /// Worst-case slack; negative when violated.
    pub margin: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub conditions: Vec<ConditionCheck>,
    /// Effective `beta`: the smaller of the sampled infimum of `dPsi/ds` and the declared value.
    pub beta: f64,
    /// Effective `mu`: the larger of the sampled supremum of `Psi(x, 0)` and the declared value.
    pub mu: f64,
    /// Effective `beta'`: the smaller of the sampled infimum of `1 - Phi^2` and the declared value.
    pub beta_prime: f64,
    pub sampled_c_psi: f64,
    pub sampled_c_phi: f64,
    pub s_range: (f64, f64),
    pub samples: usize,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.conditions.iter().all(|c| c.passed)
    }

    pub fn condition(&self, prefix: &str) -> Option<&ConditionCheck> {
        self.conditions.iter().find(|c| c.name.starts_with(prefix))
    }

    pub fn failures(&self) -> Vec<&ConditionCheck> {
        self.conditions.iter().filter(|c| !c.passed).collect()
    }
}

#[derive(Default, Clone, Copy)]
struct InteriorStats {
    min_dpsi: f64,
    max_psi0: f64,
    max_c_psi: f64,
    worst_fd: f64,
    count: usize,
}

impl InteriorStats {
    fn empty() -> Self {
        InteriorStats {
            min_dpsi: f64::INFINITY,
            max_psi0: f64::NEG_INFINITY,
            ..Default::default()
        }
    }

    fn merge(self, o: Self) -> Self {
        InteriorStats {
            min_dpsi: self.min_dpsi.min(o.min_dpsi),
            max_psi0: self.max_psi0.max(o.max_psi0),
            max_c_psi: self.max_c_psi.max(o.max_c_psi),
            worst_fd: self.worst_fd.max(o.worst_fd),
            count: self.count + o.count,
        }
    }
}

#[derive(Default, Clone, Copy)]
struct BoundaryStats {
    max_dphi: f64,
    min_one_minus_phi2: f64,
    max_c_phi: f64,
    worst_fd: f64,
    count: usize,
}

impl BoundaryStats {
    fn empty() -> Self {
        BoundaryStats {
            max_dphi: f64::NEG_INFINITY,
            min_one_minus_phi2: f64::INFINITY,
            ..Default::default()
        }
    }

    fn merge(self, o: Self) -> Self {
        BoundaryStats {
            max_dphi: self.max_dphi.max(o.max_dphi),
            min_one_minus_phi2: self.min_one_minus_phi2.min(o.min_one_minus_phi2),
            max_c_phi: self.max_c_phi.max(o.max_c_phi),
            worst_fd: self.worst_fd.max(o.worst_fd),
            count: self.count + o.count,
        }
    }
}

fn s_grid(s_range: (f64, f64)) -> Vec<f64> {
    let (lo, hi) = s_range;
    let mut grid: Vec<f64> = (0..S_GRID)
        .map(|i| lo + (hi - lo) * i as f64 / (S_GRID - 1) as f64)
        .collect();
    if lo <= 0.0 && hi >= 0.0 {
        grid.push(0.0);
    }
    grid
}

fn fd_step(v: f64) -> f64 {
    1e-4 * v.abs().max(1.0)
}

fn derivative_error(f: &DataFn, df: &DataFn, x: Point, s: f64) -> Result<f64, ProblemError> {
    let h = fd_step(s);
    let fd = (f.eval(x, s + h)? - f.eval(x, s - h)?) / (2.0 * h);
    let d = df.eval(x, s)?;
    Ok((fd - d).abs() / d.abs().max(1.0))
}

/// Central-difference `x`-gradient of a data function.
fn x_gradient(f: &DataFn, dim: usize, x: Point, s: f64) -> Result<Point, ProblemError> {
    let mut g = [0.0; 2];
    for k in 0..dim {
        let h = fd_step(x[k]);
        let (mut xp, mut xm) = (x, x);
        xp[k] += h;
        xm[k] -= h;
        g[k] = (f.eval(xp, s)? - f.eval(xm, s)?) / (2.0 * h);
    }
    Ok(g)
}

/// `|grad F|` in the ambient metric: `sigma^{ij} F_i F_j + gamma (F_s)^2`.
fn ambient_gradient_norm(
    metric: &MetricField,
    f: &DataFn,
    df_ds: f64,
    x: Point,
    s: f64,
) -> Result<f64, ProblemError> {
    let mp = metric.at(x)?;
    let g = x_gradient(f, metric.dim(), x, s)?;
    Ok((mp.covector_norm2(g) + mp.gamma * df_ds * df_ds).sqrt())
}

/// Frobenius norm of the central-difference Hessian in `(x, s)`.
fn hessian_norm(f: &DataFn, dim: usize, x: Point, s: f64) -> Result<f64, ProblemError> {
    let at = |p: [f64; 3]| f.eval([p[0], p[1]], p[2]);
    let base = [x[0], x[1], s];
    let vars: Vec<usize> = (0..dim).chain(std::iter::once(2)).collect();
    let steps: Vec<f64> = base.iter().map(|v| 1e-3 * v.abs().max(1.0)).collect();
    let f0 = at(base)?;
    let mut sum = 0.0;
    for &i in &vars {
        for &j in &vars {
            let v = if i == j {
                let (mut p, mut m) = (base, base);
                p[i] += steps[i];
                m[i] -= steps[i];
                (at(p)? - 2.0 * f0 + at(m)?) / (steps[i] * steps[i])
            } else {
                let corner = |si: f64, sj: f64| {
                    let mut p = base;
                    p[i] += si * steps[i];
                    p[j] += sj * steps[j];
                    at(p)
                };
                (corner(1.0, 1.0)? - corner(1.0, -1.0)? - corner(-1.0, 1.0)? + corner(-1.0, -1.0)?)
                    / (4.0 * steps[i] * steps[j])
            };
            sum += v * v;
        }
    }
    Ok(sum.sqrt())
}

fn interior_points(mesh: &Mesh, c: usize) -> Vec<Point> {
    let mut pts: Vec<Point> = mesh.cell_quadrature(c).iter().map(|q| q.x).collect();
    pts.extend(mesh.cell(c).iter().map(|&v| mesh.vertex(v)));
    pts
}

fn sample_interior(
    problem: &CapillaryProblem,
    metric: &MetricField,
    mesh: &Mesh,
    grid: &[f64],
) -> Result<InteriorStats, ProblemError> {
    (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| {
            let mut st = InteriorStats::empty();
            for x in interior_points(mesh, c) {
                st.max_psi0 = st.max_psi0.max(problem.psi(x, 0.0)?);
                for &s in grid {
                    let psi = problem.psi(x, s)?;
                    let dpsi = problem.dpsi_ds(x, s)?;
                    st.min_dpsi = st.min_dpsi.min(dpsi);
                    let grad = ambient_gradient_norm(metric, &problem.psi, dpsi, x, s)?;
                    st.max_c_psi = st.max_c_psi.max(psi.abs() + grad);
                    st.worst_fd = st
                        .worst_fd
                        .max(derivative_error(&problem.psi, &problem.dpsi_ds, x, s)?);
                    st.count += 1;
                }
            }
            Ok(st)
        })
        .try_reduce(InteriorStats::empty, |a, b| Ok(a.merge(b)))
}

fn sample_boundary(
    problem: &CapillaryProblem,
    metric: &MetricField,
    mesh: &Mesh,
    grid: &[f64],
) -> Result<BoundaryStats, ProblemError> {
    (0..mesh.num_facets())
        .into_par_iter()
        .map(|f| {
            let mut st = BoundaryStats::empty();
            let mut pts: Vec<Point> = mesh.facet_quadrature(f).iter().map(|q| q.x).collect();
            pts.extend(mesh.facet(f).iter().map(|&v| mesh.vertex(v)));
            for x in pts {
                for &s in grid {
                    let phi = problem.phi(x, s)?;
                    let dphi = problem.dphi_ds(x, s)?;
                    st.max_dphi = st.max_dphi.max(dphi);
                    st.min_one_minus_phi2 = st.min_one_minus_phi2.min(1.0 - phi * phi);
                    let grad = ambient_gradient_norm(metric, &problem.phi, dphi, x, s)?;
                    let hess = hessian_norm(&problem.phi, metric.dim(), x, s)?;
                    st.max_c_phi = st.max_c_phi.max(phi.abs() + grad + hess);
                    st.worst_fd = st
                        .worst_fd
                        .max(derivative_error(&problem.phi, &problem.dphi_ds, x, s)?);
                    st.count += 1;
                }
            }
            Ok(st)
        })
        .try_reduce(BoundaryStats::empty, |a, b| Ok(a.merge(b)))
}

fn check(name: &str, margin: f64, detail: String) -> ConditionCheck {
    ConditionCheck {
        name: name.into(),
        passed: margin.is_finite() && margin >= 0.0,
        margin,
        detail,
    }
}

fn strict(name: &str, margin: f64, detail: String) -> ConditionCheck {
    ConditionCheck {
        name: name.into(),
        passed: margin.is_finite() && margin > 0.0,
        margin,
        detail,
    }
}

/// Samples conditions (i)-(v) on quadrature points, vertices and an `s`-grid.
///
/// Violations are reported, not raised; evaluation failures of the data are errors.
pub fn validate_conditions(
    problem: &CapillaryProblem,
    mesh: &Mesh,
    metric: &MetricField,
    s_range: (f64, f64),
) -> Result<ValidationReport, ProblemError> {
    let (lo, hi) = s_range;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(ProblemError::InvalidInput(format!("s range ({lo}, {hi})")));
    }
    let grid = s_grid(s_range);
    let inner = sample_interior(problem, metric, mesh, &grid)?;
    let bdry = sample_boundary(problem, metric, mesh, &grid)?;
    let d = problem.declared;

    let beta = d.beta.map_or(inner.min_dpsi, |b| b.min(inner.min_dpsi));
    let mu = d.mu.map_or(inner.max_psi0, |m| m.max(inner.max_psi0));
    let beta_prime = if bdry.count == 0 {
        d.beta_prime.unwrap_or(1.0)
    } else {
        d.beta_prime
            .map_or(bdry.min_one_minus_phi2, |b| b.min(bdry.min_one_minus_phi2))
    };

    let mut conditions = Vec::new();
    let c_psi = d.c_psi.unwrap_or(f64::INFINITY);
    conditions.push(check(
        "(i) |Psi| + |grad Psi| <= C_Psi",
        if c_psi.is_finite() { c_psi - inner.max_c_psi } else { f64::MAX },
        format!("sampled sup {:.6e}, declared {:?}", inner.max_c_psi, d.c_psi),
    ));
    conditions.push(strict(
        "(ii) dPsi/ds >= beta > 0",
        beta,
        format!("sampled inf {:.6e}, declared {:?}", inner.min_dpsi, d.beta),
    ));
    if bdry.count > 0 {
        conditions.push(check(
            "(iii) dPhi/ds <= 0",
            -bdry.max_dphi,
            format!("sampled sup {:.6e}", bdry.max_dphi),
        ));
    }
    conditions.push(strict(
        "(iv) 1 - Phi^2 >= beta' > 0",
        beta_prime,
        format!(
            "sampled inf {:.6e}, declared {:?}",
            bdry.min_one_minus_phi2, d.beta_prime
        ),
    ));
    let c_phi = d.c_phi.unwrap_or(f64::INFINITY);
    conditions.push(check(
        "(v) |Phi|_2 <= C_Phi",
        if c_phi.is_finite() { c_phi - bdry.max_c_phi } else { f64::MAX },
        format!("sampled sup {:.6e}, declared {:?}", bdry.max_c_phi, d.c_phi),
    ));
    let worst = inner.worst_fd.max(bdry.worst_fd);
    conditions.push(check(
        "derivatives match central differences",
        DERIVATIVE_TOL - worst,
        format!("worst relative deviation {worst:.3e}"),
    ));

    Ok(ValidationReport {
        conditions,
        beta,
        mu,
        beta_prime,
        sampled_c_psi: inner.max_c_psi,
        sampled_c_phi: bdry.max_c_phi,
        s_range,
        samples: inner.count + bdry.count,
    })
}

/// Height bound `B = (sup |Y| / inf |Y|) mu / beta` with `|Y| = gamma^{-1/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeightBound {
    pub value: f64,
    /// Set when `mu < 0`: the displayed bound is negative and `value` is clamped to 0.
    pub one_sided: bool,
    pub beta: f64,
    pub mu: f64,
    pub ratio: f64,
    pub s_range: (f64, f64),
}

/// Extremes of `gamma^{-1/2}` over quadrature points and vertices.
pub fn killing_norm_ratio(metric: &MetricField, mesh: &Mesh) -> Result<f64, ProblemError> {
    let (lo, hi) = (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| {
            let mut lo = f64::INFINITY;
            let mut hi: f64 = 0.0;
            for x in interior_points(mesh, c) {
                let y = metric.gamma(x)?.powf(-0.5);
                lo = lo.min(y);
                hi = hi.max(y);
            }
            Ok((lo, hi))
        })
        .try_reduce(
            || (f64::INFINITY, 0.0),
            |a, b| Ok::<_, ProblemError>((a.0.min(b.0), a.1.max(b.1))),
        )?;
    Ok(hi / lo)
}

fn beta_mu(
    problem: &CapillaryProblem,
    mesh: &Mesh,
    s_range: (f64, f64),
) -> Result<(f64, f64), ProblemError> {
    let st = sample_interior_light(problem, mesh, &s_grid(s_range))?;
    let d = problem.declared;
    let beta = d.beta.map_or(st.0, |b| b.min(st.0));
    let mu = d.mu.map_or(st.1, |m| m.max(st.1));
    Ok((beta, mu))
}

/// `(inf dPsi/ds, sup Psi(x, 0))` without the gradient and consistency sampling.
fn sample_interior_light(
    problem: &CapillaryProblem,
    mesh: &Mesh,
    grid: &[f64],
) -> Result<(f64, f64), ProblemError> {
    (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| {
            let (mut beta, mut mu) = (f64::INFINITY, f64::NEG_INFINITY);
            for x in interior_points(mesh, c) {
                mu = mu.max(problem.psi(x, 0.0)?);
                for &s in grid {
                    beta = beta.min(problem.dpsi_ds(x, s)?);
                }
            }
            Ok((beta, mu))
        })
        .try_reduce(
            || (f64::INFINITY, f64::NEG_INFINITY),
            |a, b| Ok((a.0.min(b.0), a.1.max(b.1))),
        )
}

/// Smallest half-width of the `s` interval on which `height_bound` samples `beta`.
pub const MIN_HEIGHT_SPAN: f64 = 2.0;

/// Height bound with `beta` sampled on `[-S, S]`, `S` grown until `S >= 2B`.
pub fn height_bound(
    problem: &CapillaryProblem,
    metric: &MetricField,
    mesh: &Mesh,
) -> Result<HeightBound, ProblemError> {
    let ratio = killing_norm_ratio(metric, mesh)?;
    let mut span: f64 = MIN_HEIGHT_SPAN;
    for _ in 0..8 {
        let (beta, mu) = beta_mu(problem, mesh, (-span, span))?;
        if !(beta > 0.0) {
            return Err(ProblemError::Precondition(format!(
                "height bound needs beta > 0, sampled beta = {beta} on s in [-{span}, {span}]"
            )));
        }
        let raw = ratio * mu / beta;
        if 2.0 * raw <= span || !raw.is_finite() {
            return Ok(HeightBound {
                value: raw.max(0.0),
                one_sided: mu < 0.0,
                beta,
                mu,
                ratio,
                s_range: (-span, span),
            });
        }
        span = 2.0 * raw;
    }
    Err(ProblemError::Precondition(
        "height bound did not stabilize under enlargement of the s range".into(),
    ))
}

/// Default validation range `[-S, S]` with `S = max(1, 2B)`.
pub fn default_s_range(bound: &HeightBound) -> (f64, f64) {
    let s = (2.0 * bound.value).max(1.0);
    (-s, s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk() -> (Mesh, MetricField) {
        (Mesh::disk(1.0, 0.25).unwrap(), MetricField::euclidean(2).unwrap())
    }

    #[test]
    fn linear_gravity_passes() {
        let (mesh, metric) = disk();
        let p = CapillaryProblem::parse("s", "0").unwrap();
        let r = validate_conditions(&p, &mesh, &metric, (-2.0, 2.0)).unwrap();
        assert!(r.passed(), "{:?}", r.failures());
        assert_eq!(r.beta, 1.0);
        assert_eq!(r.mu, 0.0);
    }

    #[test]
    fn shifted_gravity_with_angle() {
        let (mesh, metric) = disk();
        let p = CapillaryProblem::parse("-1 + s", "0.5").unwrap();
        let r = validate_conditions(&p, &mesh, &metric, (-2.0, 2.0)).unwrap();
        assert!(r.passed(), "{:?}", r.failures());
        assert_eq!(r.beta, 1.0);
        assert_eq!(r.mu, -1.0);
        assert!((r.beta_prime - 0.75).abs() < 1e-15);
    }

    #[test]
    fn oscillating_psi_fails_positive_gravity() {
        let (mesh, metric) = disk();
        let p = CapillaryProblem::parse("sin(s)", "0").unwrap();
        let r = validate_conditions(&p, &mesh, &metric, (-2.0, 2.0)).unwrap();
        assert!(!r.condition("(ii)").unwrap().passed);
        assert!(r.beta < 0.0);
    }

    #[test]
    fn declared_constants_are_cross_checked() {
        let (mesh, metric) = disk();
        let p = CapillaryProblem::parse("2*s", "0.1*x1").unwrap().with_declared(DeclaredConstants {
            beta: Some(5.0),
            mu: Some(-3.0),
            c_psi: Some(1.0),
            ..Default::default()
        });
        let r = validate_conditions(&p, &mesh, &metric, (-1.0, 1.0)).unwrap();
        assert_eq!(r.beta, 2.0);
        assert_eq!(r.mu, 0.0);
        assert!(!r.condition("(i)").unwrap().passed);
    }

    #[test]
    fn increasing_phi_fails_condition_iii() {
        let (mesh, metric) = disk();
        let p = CapillaryProblem::parse("s", "0.2*tanh(s)").unwrap();
        let r = validate_conditions(&p, &mesh, &metric, (-1.0, 1.0)).unwrap();
        assert!(!r.condition("(iii)").unwrap().passed);
        let p = CapillaryProblem::parse("s", "-0.2*tanh(s)").unwrap();
        let r = validate_conditions(&p, &mesh, &metric, (-1.0, 1.0)).unwrap();
        assert!(r.condition("(iii)").unwrap().passed);
    }

    #[test]
    fn wrong_supplied_derivative_is_flagged() {
        let (mesh, metric) = disk();
        let mut p = CapillaryProblem::parse("s^2 + s", "0").unwrap();
        p.dpsi_ds = DataFn::Expr(Expression::parse("1").unwrap());
        let r = validate_conditions(&p, &mesh, &metric, (0.0, 1.0)).unwrap();
        assert!(!r.condition("derivatives").unwrap().passed);
    }

    #[test]
    fn enlarging_the_range_is_monotone() {
        let (mesh, metric) = disk();
        let p = CapillaryProblem::parse("s + 0.1*s^3", "0").unwrap();
        let small = validate_conditions(&p, &mesh, &metric, (0.0, 1.0)).unwrap();
        let large = validate_conditions(&p, &mesh, &metric, (-1.0, 1.0)).unwrap();
        assert!(large.beta <= small.beta);
        assert!(large.sampled_c_psi >= small.sampled_c_psi);
    }

    #[test]
    fn height_bound_examples() {
        let (mesh, metric) = disk();
        let b = height_bound(&CapillaryProblem::parse("s", "0").unwrap(), &metric, &mesh).unwrap();
        assert_eq!(b.value, 0.0);
        let c = 0.7;
        let b = height_bound(&CapillaryProblem::parse(&format!("{c} + s"), "0").unwrap(), &metric, &mesh).unwrap();
        assert!((b.value - c).abs() < 1e-15);
        let warped = MetricField::radial_warp(
            2,
            &Expression::parse("1").unwrap(),
            &Expression::parse("1 + 3*r^2").unwrap(),
        )
        .unwrap();
        let b = height_bound(&CapillaryProblem::parse(&format!("{c} + s"), "0").unwrap(), &warped, &mesh).unwrap();
        assert!((b.ratio - 2.0).abs() < 1e-12);
        assert!((b.value - 2.0 * c).abs() < 1e-12);
        let b = height_bound(&CapillaryProblem::parse("-1 + s", "0").unwrap(), &metric, &mesh).unwrap();
        assert!(b.one_sided);
        assert_eq!(b.value, 0.0);
        let err = height_bound(&CapillaryProblem::parse("sin(s)", "0").unwrap(), &metric, &mesh);
        assert!(matches!(err, Err(ProblemError::Precondition(_))));
    }

    #[test]
    fn height_bound_scales_with_mu() {
        let (mesh, metric) = disk();
        let one = height_bound(&CapillaryProblem::parse("0.5 + 2*s", "0").unwrap(), &metric, &mesh).unwrap();
        let three = height_bound(&CapillaryProblem::parse("1.5 + 2*s", "0").unwrap(), &metric, &mesh).unwrap();
        assert!((three.value - 3.0 * one.value).abs() < 1e-14);
    }
}
