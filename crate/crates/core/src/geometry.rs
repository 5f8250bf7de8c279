//! Geometry of the warped product `P x R` with metric `sigma + (1/gamma) ds^2`,
//! where `Y = d/ds` is the Killing field and `gamma = 1/|Y|^2`.
//!
//! Points of the leaf are chart coordinates `[x1, x2]`; one-dimensional leaves
//! use `x2 = 0` and carry a padded 2x2 metric with `sigma_22 = 1`, so the same
//! formulas serve both dimensions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{ExprError, Expression, Var};
use crate::mesh::{Mesh, ScalarField};
use crate::recovery::{self, RecoveryError};

pub type Point = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];

/// Tolerance on `sigma(nu, nu) = 1` for conormals handed to [`contact_angle`].
pub const UNIT_CONORMAL_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("leaf metric is not positive definite at {x:?}")]
    NotPositiveDefinite { x: Point },
    #[error("warping gamma must be positive, found {value} at {x:?}")]
    NonPositiveWarping { x: Point, value: f64 },
    #[error("metric data must not depend on s: `{0}`")]
    DependsOnS(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Recovery(#[from] RecoveryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricPreset {
    Euclidean,
    Product,
    RadialWarp,
    CustomExpression,
}

/// Leaf metric `sigma` and warping `gamma`, with their coordinate derivatives.
#[derive(Debug, Clone)]
pub struct MetricField {
    dim: usize,
    preset: MetricPreset,
    /// `sigma_11`, `sigma_12`, `sigma_22`.
    sigma: [Expression; 3],
    gamma: Expression,
    /// `dsigma[k][c]` is the `x_k` derivative of component `c`.
    dsigma: [[Expression; 3]; 2],
    dgamma: [Expression; 2],
}

/// The metric evaluated at one chart point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricPoint {
    pub sigma: Mat2,
    pub sigma_inv: Mat2,
    pub sqrt_det_sigma: f64,
    pub gamma: f64,
    pub grad_gamma: Point,
    /// `dsigma[k]` is the `x_k` derivative of `sigma`.
    pub dsigma: [Mat2; 2],
}

fn zero() -> Expression {
    Expression::constant(0.0)
}

fn one() -> Expression {
    Expression::constant(1.0)
}

fn check_dim(dim: usize) -> Result<(), GeometryError> {
    if dim == 1 || dim == 2 {
        Ok(())
    } else {
        Err(GeometryError::InvalidInput(format!(
            "leaf dimension must be 1 or 2, got {dim}"
        )))
    }
}

impl MetricField {
    pub fn euclidean(dim: usize) -> Result<Self, GeometryError> {
        check_dim(dim)?;
        Self::build(dim, MetricPreset::Euclidean, [one(), zero(), one()], one())
    }

    /// Riemannian product `P x R`: `gamma = 1` with a user leaf metric.
    ///
    /// `sigma` holds `[s11]` for `dim = 1` or `[s11, s12, s22]` for `dim = 2`.
    pub fn product(dim: usize, sigma: &[Expression]) -> Result<Self, GeometryError> {
        check_dim(dim)?;
        Self::build(dim, MetricPreset::Product, sigma_components(dim, sigma)?, one())
    }

    /// Conformally flat radial leaf `sigma = f(r)^2 I` with radial warping `gamma(r)`.
    pub fn radial_warp(
        dim: usize,
        conformal: &Expression,
        gamma: &Expression,
    ) -> Result<Self, GeometryError> {
        check_dim(dim)?;
        let f2 = Expression::parse(&format!("({conformal})^2"))?;
        Self::build(dim, MetricPreset::RadialWarp, [f2.clone(), zero(), f2], gamma.clone())
    }

    pub fn custom(
        dim: usize,
        sigma: &[Expression],
        gamma: &Expression,
    ) -> Result<Self, GeometryError> {
        check_dim(dim)?;
        Self::build(
            dim,
            MetricPreset::CustomExpression,
            sigma_components(dim, sigma)?,
            gamma.clone(),
        )
    }

    fn build(
        dim: usize,
        preset: MetricPreset,
        sigma: [Expression; 3],
        gamma: Expression,
    ) -> Result<Self, GeometryError> {
        for e in sigma.iter().chain(std::iter::once(&gamma)) {
            if e.depends_on(Var::S) {
                return Err(GeometryError::DependsOnS(e.to_string()));
            }
        }
        let vars = [Var::X1, Var::X2];
        let mut dsigma: [[Expression; 3]; 2] = Default::default();
        let mut dgamma: [Expression; 2] = [zero(), zero()];
        for k in 0..dim {
            for c in 0..3 {
                dsigma[k][c] = sigma[c].derivative(vars[k])?;
            }
            dgamma[k] = gamma.derivative(vars[k])?;
        }
        Ok(MetricField {
            dim,
            preset,
            sigma,
            gamma,
            dsigma,
            dgamma,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn preset(&self) -> MetricPreset {
        self.preset
    }

    pub fn gamma_expression(&self) -> &Expression {
        &self.gamma
    }

    pub fn gamma(&self, x: Point) -> Result<f64, GeometryError> {
        let value = self.gamma.eval(x, 0.0)?;
        if value > 0.0 {
            Ok(value)
        } else {
            Err(GeometryError::NonPositiveWarping { x, value })
        }
    }

    pub fn at(&self, x: Point) -> Result<MetricPoint, GeometryError> {
        let x = if self.dim == 1 { [x[0], 0.0] } else { x };
        let gamma = self.gamma(x)?;
        let (s11, s12, s22) = if self.dim == 1 {
            (self.sigma[0].eval(x, 0.0)?, 0.0, 1.0)
        } else {
            (
                self.sigma[0].eval(x, 0.0)?,
                self.sigma[1].eval(x, 0.0)?,
                self.sigma[2].eval(x, 0.0)?,
            )
        };
        let det = s11 * s22 - s12 * s12;
        if !(s11 > 0.0 && det > 0.0) {
            return Err(GeometryError::NotPositiveDefinite { x });
        }
        let sigma = [[s11, s12], [s12, s22]];
        let sigma_inv = [[s22 / det, -s12 / det], [-s12 / det, s11 / det]];
        let mut grad_gamma = [0.0; 2];
        let mut dsigma = [[[0.0; 2]; 2]; 2];
        for k in 0..self.dim {
            grad_gamma[k] = self.dgamma[k].eval(x, 0.0)?;
            let d11 = self.dsigma[k][0].eval(x, 0.0)?;
            let (d12, d22) = if self.dim == 1 {
                (0.0, 0.0)
            } else {
                (
                    self.dsigma[k][1].eval(x, 0.0)?,
                    self.dsigma[k][2].eval(x, 0.0)?,
                )
            };
            dsigma[k] = [[d11, d12], [d12, d22]];
        }
        Ok(MetricPoint {
            sigma,
            sigma_inv,
            sqrt_det_sigma: det.sqrt(),
            gamma,
            grad_gamma,
            dsigma,
        })
    }

    /// Largest relative deviation between `grad_gamma` and central differences
    /// of `gamma` over `points`.
    pub fn gradient_consistency(&self, points: &[Point]) -> Result<f64, GeometryError> {
        let mut worst: f64 = 0.0;
        for &x in points {
            let mp = self.at(x)?;
            for k in 0..self.dim {
                let step = 1e-5 * x[k].abs().max(1.0);
                let (mut xp, mut xm) = (x, x);
                xp[k] += step;
                xm[k] -= step;
                let fd = (self.gamma(xp)? - self.gamma(xm)?) / (2.0 * step);
                let err = (fd - mp.grad_gamma[k]).abs() / mp.grad_gamma[k].abs().max(1.0);
                worst = worst.max(err);
            }
        }
        Ok(worst)
    }
}

fn sigma_components(dim: usize, sigma: &[Expression]) -> Result<[Expression; 3], GeometryError> {
    match (dim, sigma.len()) {
        (1, 1) => Ok([sigma[0].clone(), zero(), one()]),
        (2, 3) => Ok([sigma[0].clone(), sigma[1].clone(), sigma[2].clone()]),
        _ => Err(GeometryError::InvalidInput(format!(
            "dimension {dim} needs {} sigma component(s), got {}",
            if dim == 1 { 1 } else { 3 },
            sigma.len()
        ))),
    }
}

pub(crate) fn mat_vec(m: &Mat2, v: Point) -> Point {
    [
        m[0][0] * v[0] + m[0][1] * v[1],
        m[1][0] * v[0] + m[1][1] * v[1],
    ]
}

pub(crate) fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

impl MetricPoint {
    /// `sigma^{ij} g_j`, the vector dual to the covector `g`.
    pub fn raise(&self, covector: Point) -> Point {
        mat_vec(&self.sigma_inv, covector)
    }

    /// `sigma_ij a^i b^j` for vectors.
    pub fn inner(&self, a: Point, b: Point) -> f64 {
        dot(a, mat_vec(&self.sigma, b))
    }

    /// `|g|^2_sigma = sigma^{ij} g_i g_j` for a covector.
    pub fn covector_norm2(&self, covector: Point) -> f64 {
        dot(covector, self.raise(covector))
    }

    /// `W = sqrt(gamma + |grad u|^2_sigma)`.
    pub fn slope_factor(&self, grad_u: Point) -> f64 {
        (self.gamma + self.covector_norm2(grad_u)).sqrt()
    }
}

/// A point of the Killing graph with its unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphPointFrame {
    pub x: Point,
    pub grad_u: Point,
    pub w: f64,
    /// Ambient components `(N^s, N^1, N^2)` in the `(s, x)` chart.
    pub normal: [f64; 3],
    gamma: f64,
    sigma: Mat2,
}

impl GraphPointFrame {
    fn normal_x(&self) -> Point {
        [self.normal[1], self.normal[2]]
    }

    /// Norm of `N` in the ambient metric `sigma + (1/gamma) ds^2`.
    pub fn ambient_norm(&self) -> f64 {
        let nx = self.normal_x();
        (self.normal[0] * self.normal[0] / self.gamma + dot(nx, mat_vec(&self.sigma, nx))).sqrt()
    }

    /// `<N, Y>`, which equals `1/W`.
    pub fn killing_component(&self) -> f64 {
        self.normal[0] / self.gamma
    }

    /// `<N, nu>` for a horizontal vector `nu`.
    pub fn angle_with(&self, nu: Point) -> f64 {
        dot(self.normal_x(), mat_vec(&self.sigma, nu))
    }
}

pub fn slope_factor(metric: &MetricField, x: Point, grad_u: Point) -> Result<f64, GeometryError> {
    if !finite(&x) || !finite(&grad_u) {
        return Err(GeometryError::InvalidInput(
            "non-finite point or gradient".into(),
        ));
    }
    Ok(metric.at(x)?.slope_factor(grad_u))
}

/// `N = (1/W)(gamma Y - grad u)`, the unit normal with `<N, Y> > 0`.
pub fn graph_normal(
    metric: &MetricField,
    x: Point,
    grad_u: Point,
) -> Result<GraphPointFrame, GeometryError> {
    if !finite(&x) || !finite(&grad_u) {
        return Err(GeometryError::InvalidInput(
            "non-finite point or gradient".into(),
        ));
    }
    let mp = metric.at(x)?;
    Ok(frame_at(&mp, x, grad_u))
}

pub(crate) fn frame_at(mp: &MetricPoint, x: Point, grad_u: Point) -> GraphPointFrame {
    let w = mp.slope_factor(grad_u);
    let v = mp.raise(grad_u);
    GraphPointFrame {
        x,
        grad_u,
        w,
        normal: [mp.gamma / w, -v[0] / w, -v[1] / w],
        gamma: mp.gamma,
        sigma: mp.sigma,
    }
}

/// `<N, nu> = -<grad u, nu> / W` for an inward unit conormal `nu`.
pub fn contact_angle(
    metric: &MetricField,
    x: Point,
    grad_u: Point,
    nu: Point,
) -> Result<f64, GeometryError> {
    if !finite(&x) || !finite(&grad_u) || !finite(&nu) {
        return Err(GeometryError::InvalidInput(
            "non-finite point, gradient or conormal".into(),
        ));
    }
    let mp = metric.at(x)?;
    let len2 = mp.inner(nu, nu);
    if (len2 - 1.0).abs() > UNIT_CONORMAL_TOL {
        return Err(GeometryError::InvalidInput(format!(
            "conormal is not sigma-unit: |nu|^2 = {len2}"
        )));
    }
    Ok(contact_angle_at(&mp, grad_u, nu))
}

pub(crate) fn contact_angle_at(mp: &MetricPoint, grad_u: Point, nu: Point) -> f64 {
    -dot(grad_u, nu) / mp.slope_factor(grad_u)
}

/// Left-hand side of the capillary equation,
/// `div(grad u / W) - <grad gamma / 2 gamma, grad u / W>`,
/// from pointwise first and second coordinate derivatives of `u`.
pub fn capillary_operator(mp: &MetricPoint, grad: Point, hess: &Mat2) -> f64 {
    let v = mp.raise(grad);
    let w = mp.slope_factor(grad);
    let si = &mp.sigma_inv;
    let hv = mat_vec(hess, v);
    let mut div_v = si[0][0] * hess[0][0] + si[0][1] * hess[1][0] + si[1][0] * hess[0][1]
        + si[1][1] * hess[1][1];
    let mut v_dot_dw = 0.0;
    let mut log_volume = 0.0;
    for k in 0..2 {
        let ds = &mp.dsigma[k];
        // d_k sigma^{ij} g_j = -(sigma^{-1} d_k sigma v)^i
        let t = mat_vec(si, mat_vec(ds, v));
        div_v -= t[k];
        let d_norm2 = -dot(v, mat_vec(ds, v)) + 2.0 * hv[k];
        let dw = (mp.grad_gamma[k] + d_norm2) / (2.0 * w);
        v_dot_dw += v[k] * dw;
        let tr = si[0][0] * ds[0][0] + si[0][1] * ds[1][0] + si[1][0] * ds[0][1] + si[1][1] * ds[1][1];
        log_volume += 0.5 * tr * v[k];
    }
    let div = div_v / w - v_dot_dw / (w * w) + log_volume / w;
    div - dot(mp.grad_gamma, v) / (2.0 * mp.gamma * w)
}

/// Strong-form `nH` at a mesh vertex from a quadratic patch fit of `u`.
pub fn mean_curvature_strong(
    metric: &MetricField,
    mesh: &Mesh,
    u: &ScalarField,
    vertex: usize,
) -> Result<f64, GeometryError> {
    let jet = recovery::recover_jet(mesh, u.values(), vertex)?;
    let mp = metric.at(mesh.vertex(vertex))?;
    Ok(capillary_operator(&mp, jet.grad, &jet.hess))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(t: &str) -> Expression {
        Expression::parse(t).unwrap()
    }

    fn warped(gamma: &str) -> MetricField {
        MetricField::custom(2, &[parse("1"), parse("0"), parse("1")], &parse(gamma)).unwrap()
    }

    #[test]
    fn euclidean_preset_is_flat() {
        let m = MetricField::euclidean(2).unwrap();
        let mp = m.at([0.3, -0.2]).unwrap();
        assert_eq!(mp.sigma, [[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(mp.gamma, 1.0);
        assert_eq!(mp.grad_gamma, [0.0, 0.0]);
        assert_eq!(mp.sqrt_det_sigma, 1.0);
    }

    #[test]
    fn slope_factor_examples() {
        let m = MetricField::euclidean(2).unwrap();
        assert_eq!(slope_factor(&m, [0.1, 0.2], [0.0, 0.0]).unwrap(), 1.0);
        let m = warped("4");
        assert!((slope_factor(&m, [0.0; 2], [3.0, 0.0]).unwrap() - 13f64.sqrt()).abs() < 1e-15);
        assert!(slope_factor(&m, [0.0; 2], [f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn cap_slope_factor_is_r_over_u() {
        let m = MetricField::euclidean(2).unwrap();
        let r = 2.0;
        for &x in &[[0.3f64, 0.4], [-0.9, 0.1], [0.0, 0.0]] {
            let u = (r * r - x[0] * x[0] - x[1] * x[1]).sqrt();
            let grad = [-x[0] / u, -x[1] / u];
            let w = slope_factor(&m, x, grad).unwrap();
            assert!((w - r / u).abs() < 1e-14);
        }
    }

    #[test]
    fn vertical_normals() {
        let m = MetricField::euclidean(2).unwrap();
        let f = graph_normal(&m, [0.0; 2], [0.0; 2]).unwrap();
        assert_eq!(f.normal, [1.0, 0.0, 0.0]);
        let m = warped("4");
        let f = graph_normal(&m, [0.0; 2], [0.0; 2]).unwrap();
        assert_eq!(f.normal[0], 2.0);
        assert!((f.ambient_norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cap_normal_horizontal_part_is_x_over_r() {
        let m = MetricField::euclidean(2).unwrap();
        let r = 2.0;
        let x = [0.6, -0.3];
        let u = (r * r - 0.45f64).sqrt();
        let f = graph_normal(&m, x, [-x[0] / u, -x[1] / u]).unwrap();
        assert!((f.normal[1] - x[0] / r).abs() < 1e-15);
        assert!((f.normal[2] - x[1] / r).abs() < 1e-15);
        assert!((f.normal[0] - u / r).abs() < 1e-15);
    }

    #[test]
    fn contact_angle_examples() {
        let m = MetricField::euclidean(2).unwrap();
        assert_eq!(contact_angle(&m, [1.0, 0.0], [0.0; 2], [-1.0, 0.0]).unwrap(), 0.0);
        // cap of radius r over the disk of radius a
        let (r, a) = (2.0f64, 1.0f64);
        let theta = 0.7f64;
        let x = [a * theta.cos(), a * theta.sin()];
        let u = (r * r - a * a).sqrt();
        let nu = [-x[0] / a, -x[1] / a];
        let c = contact_angle(&m, x, [-x[0] / u, -x[1] / u], nu).unwrap();
        assert!((c + a / r).abs() < 1e-14);
        // n = 1 linear graph
        let m1 = MetricField::euclidean(1).unwrap();
        let slope = 1.7f64;
        let c = contact_angle(&m1, [0.0, 0.0], [slope, 0.0], [1.0, 0.0]).unwrap();
        assert!((c + slope / (1.0 + slope * slope).sqrt()).abs() < 1e-15);
        assert!(contact_angle(&m, x, [0.0; 2], [-2.0, 0.0]).is_err());
    }

    #[test]
    fn capillary_operator_of_constants_vanishes() {
        let m = MetricField::radial_warp(2, &parse("1/(1 - r^2/4)"), &parse("1 + 3*r^2")).unwrap();
        let mp = m.at([0.2, 0.5]).unwrap();
        assert_eq!(capillary_operator(&mp, [0.0; 2], &[[0.0; 2]; 2]), 0.0);
    }

    #[test]
    fn cap_mean_curvature_is_minus_two_over_r() {
        let m = MetricField::euclidean(2).unwrap();
        let r = 2.0;
        for &x in &[[0.3f64, 0.4], [-0.9, 0.1], [0.0, 0.0]] {
            let u = (r * r - x[0] * x[0] - x[1] * x[1]).sqrt();
            let grad = [-x[0] / u, -x[1] / u];
            // Hessian of sqrt(r^2 - |x|^2)
            let u3 = u * u * u;
            let hess = [
                [-1.0 / u - x[0] * x[0] / u3, -x[0] * x[1] / u3],
                [-x[0] * x[1] / u3, -1.0 / u - x[1] * x[1] / u3],
            ];
            let nh = capillary_operator(&m.at(x).unwrap(), grad, &hess);
            assert!((nh + 2.0 / r).abs() < 1e-13, "{nh}");
        }
    }

    /// Dense finite differences of `(u'/W)' - (gamma'/2 gamma)(u'/W)` in 1D.
    fn one_dim_oracle(gamma: impl Fn(f64) -> f64, du: impl Fn(f64) -> f64, x: f64) -> f64 {
        let flux = |t: f64| du(t) / (gamma(t) + du(t) * du(t)).sqrt();
        let h = 1e-4;
        let dflux = (flux(x + h) - flux(x - h)) / (2.0 * h);
        let dgamma = (gamma(x + h) - gamma(x - h)) / (2.0 * h);
        dflux - dgamma / (2.0 * gamma(x)) * flux(x)
    }

    #[test]
    fn one_dim_warped_operator_matches_dense_differences() {
        let m = MetricField::custom(1, &[parse("1")], &parse("exp(2*x1)")).unwrap();
        for &x in &[-0.5, 0.0, 0.3, 0.9] {
            let mp = m.at([x, 0.0]).unwrap();
            let value = capillary_operator(&mp, [1.0, 0.0], &[[0.0; 2]; 2]);
            let oracle = one_dim_oracle(|t| (2.0 * t).exp(), |_| 1.0, x);
            assert!((value - oracle).abs() < 1e-7, "{value} vs {oracle}");
        }
    }

    /// Central differences of `(1/sqrt det) d_i (sqrt det sigma^{ij} u_j / W)`.
    fn divergence_oracle(m: &MetricField, u: impl Fn(Point) -> f64, x: Point) -> f64 {
        let h = 1e-4;
        let grad = |p: Point| {
            [
                (u([p[0] + h, p[1]]) - u([p[0] - h, p[1]])) / (2.0 * h),
                (u([p[0], p[1] + h]) - u([p[0], p[1] - h])) / (2.0 * h),
            ]
        };
        let flux = |p: Point| {
            let mp = m.at(p).unwrap();
            let g = grad(p);
            let v = mp.raise(g);
            let w = mp.slope_factor(g);
            [mp.sqrt_det_sigma * v[0] / w, mp.sqrt_det_sigma * v[1] / w]
        };
        let hh = 1e-3;
        let d0 = (flux([x[0] + hh, x[1]])[0] - flux([x[0] - hh, x[1]])[0]) / (2.0 * hh);
        let d1 = (flux([x[0], x[1] + hh])[1] - flux([x[0], x[1] - hh])[1]) / (2.0 * hh);
        let mp = m.at(x).unwrap();
        let g = grad(x);
        let v = mp.raise(g);
        let w = mp.slope_factor(g);
        (d0 + d1) / mp.sqrt_det_sigma - dot(mp.grad_gamma, v) / (2.0 * mp.gamma * w)
    }

    #[test]
    fn general_metric_operator_matches_divergence_differences() {
        let m = MetricField::custom(
            2,
            &[parse("1 + x1^2"), parse("0.2*x1*x2"), parse("2 + sin(x2)")],
            &parse("exp(x1 - x2)"),
        )
        .unwrap();
        let u = |p: Point| 0.3 * p[0] * p[0] - p[0] * p[1] + 0.5 * p[1].sin();
        for &x in &[[0.2f64, 0.1], [-0.4, 0.6]] {
            let grad = [0.6 * x[0] - x[1], -x[0] + 0.5 * x[1].cos()];
            let hess = [[0.6, -1.0], [-1.0, -0.5 * x[1].sin()]];
            let value = capillary_operator(&m.at(x).unwrap(), grad, &hess);
            let oracle = divergence_oracle(&m, u, x);
            assert!((value - oracle).abs() < 1e-5, "{value} vs {oracle}");
        }
    }

    #[test]
    fn rejects_s_dependent_metric_and_bad_dims() {
        assert!(matches!(
            MetricField::custom(2, &[parse("1"), parse("0"), parse("1")], &parse("1 + s")),
            Err(GeometryError::DependsOnS(_))
        ));
        assert!(MetricField::euclidean(3).is_err());
        assert!(MetricField::product(2, &[parse("1")]).is_err());
        let m = MetricField::custom(2, &[parse("1"), parse("2"), parse("1")], &parse("1")).unwrap();
        assert!(matches!(m.at([0.0; 2]), Err(GeometryError::NotPositiveDefinite { .. })));
        let m = warped("x1");
        assert!(matches!(m.at([-1.0, 0.0]), Err(GeometryError::NonPositiveWarping { .. })));
    }

    #[test]
    fn warping_gradient_matches_differences() {
        let m = MetricField::radial_warp(2, &parse("2/(1 + r^2)"), &parse("1 + 3*r^2")).unwrap();
        let pts = [[0.1, 0.2], [0.5, -0.5], [-0.7, 0.3]];
        assert!(m.gradient_consistency(&pts).unwrap() < 1e-6);
    }

    fn flat_pmc(grad: Point, hess: &Mat2) -> f64 {
        let q = 1.0 + grad[0] * grad[0] + grad[1] * grad[1];
        let lap = hess[0][0] + hess[1][1];
        let ghg = grad[0] * grad[0] * hess[0][0]
            + 2.0 * grad[0] * grad[1] * hess[0][1]
            + grad[1] * grad[1] * hess[1][1];
        (lap * q - ghg) / q.powf(1.5)
    }

    proptest! {
        #[test]
        fn slope_factor_bounds_and_unit_normal(
            x1 in -0.9f64..0.9, x2 in -0.9f64..0.9, g1 in -5.0f64..5.0, g2 in -5.0f64..5.0,
        ) {
            let m = MetricField::radial_warp(2, &parse("1/(1 + r^2)"), &parse("1 + 3*r^2")).unwrap();
            let mp = m.at([x1, x2]).unwrap();
            let f = graph_normal(&m, [x1, x2], [g1, g2]).unwrap();
            prop_assert!(f.w >= mp.gamma.sqrt());
            prop_assert!((f.ambient_norm() - 1.0).abs() < 1e-12);
            prop_assert!((f.killing_component() - 1.0 / f.w).abs() < 1e-14);
            // contact_angle * W = -<grad u, nu>
            let raw = [0.3, -0.8];
            let len = mp.inner(raw, raw).sqrt();
            let nu = [raw[0] / len, raw[1] / len];
            let c = contact_angle(&m, [x1, x2], [g1, g2], nu).unwrap();
            prop_assert!((c * f.w + dot([g1, g2], nu)).abs() < 1e-12);
            prop_assert!((c - f.angle_with(nu)).abs() < 1e-12);
        }

        #[test]
        fn slope_factor_is_monotone(scale in 0.0f64..10.0, extra in 1e-3f64..1.0) {
            let m = warped("2 + x1");
            let a = slope_factor(&m, [0.1, 0.0], [scale, 0.5 * scale]).unwrap();
            let b = slope_factor(&m, [0.1, 0.0], [scale + extra, 0.5 * (scale + extra)]).unwrap();
            prop_assert!(b > a);
        }

        #[test]
        fn euclidean_operator_is_flat_prescribed_mean_curvature(
            g1 in -3.0f64..3.0, g2 in -3.0f64..3.0,
            h11 in -5.0f64..5.0, h12 in -5.0f64..5.0, h22 in -5.0f64..5.0,
        ) {
            let m = MetricField::euclidean(2).unwrap();
            let hess = [[h11, h12], [h12, h22]];
            let value = capillary_operator(&m.at([0.1, 0.2]).unwrap(), [g1, g2], &hess);
            prop_assert!((value - flat_pmc([g1, g2], &hess)).abs() < 1e-10);
        }
    }
}
