//! P1 finite-element discretization of the capillary functional.
//!
//! With `w_q` the chart weight times `sqrt(det sigma)` and `v = sigma^{-1} grad u`,
//!
//! ```text
//! R_a = sum_q w_q/sqrt(gamma) [ <v, grad phi_a>/W + tau Psi(x, u) phi_a ]
//!     - sum_boundary dl/sqrt(gamma) tau Phi(x, u) phi_a
//! ```
//!
//! and the energy is `int W/sqrt(gamma) + tau int_0^u Psi` minus the wetting term.

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{dot, mat_vec, GeometryError, Mat2, MetricField, Point};
use crate::mesh::{Mesh, ScalarField};
use crate::problem::{CapillaryProblem, ProblemError};
use crate::sparse::CsrMatrix;

/// Tolerance of the adaptive Simpson rule for the inner `s`-integrals.
pub const SIMPSON_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

#[derive(Debug, Clone, Copy)]
struct QuadCache {
    x: Point,
    /// chart weight * sqrt(det sigma) / sqrt(gamma)
    weight: f64,
    sigma_inv: Mat2,
    gamma: f64,
    basis: [f64; 3],
}

#[derive(Debug, Clone, Copy)]
struct FacetCache {
    x: Point,
    /// sigma-length element / sqrt(gamma)
    weight: f64,
    basis: [f64; 2],
}

/// Residual, Jacobian and energy at one state.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub residual: Vec<f64>,
    pub jacobian: CsrMatrix,
    pub energy: f64,
    pub tau: f64,
}

/// Precomputed geometry and sparsity for repeated assembly on one mesh.
pub struct Assembler<'a> {
    mesh: &'a Mesh,
    problem: &'a CapillaryProblem,
    nq: usize,
    quad: Vec<QuadCache>,
    nfq: usize,
    facet_quad: Vec<FacetCache>,
    pattern: CsrMatrix,
    cell_slots: Vec<usize>,
    facet_slots: Vec<usize>,
}

struct CellLocal {
    r: [f64; 3],
    j: [[f64; 3]; 3],
}

impl<'a> Assembler<'a> {
    pub fn new(
        mesh: &'a Mesh,
        metric: &'a MetricField,
        problem: &'a CapillaryProblem,
    ) -> Result<Self, AssemblyError> {
        if metric.dim() != mesh.dim() {
            return Err(AssemblyError::InvalidInput(format!(
                "metric dimension {} differs from mesh dimension {}",
                metric.dim(),
                mesh.dim()
            )));
        }
        let nq = mesh.cell_quadrature(0).len();
        let quad = (0..mesh.num_cells())
            .into_par_iter()
            .map(|c| {
                mesh.cell_quadrature(c)
                    .into_iter()
                    .map(|q| {
                        let mp = metric.at(q.x)?;
                        Ok(QuadCache {
                            x: q.x,
                            weight: q.weight * mp.sqrt_det_sigma / mp.gamma.sqrt(),
                            sigma_inv: mp.sigma_inv,
                            gamma: mp.gamma,
                            basis: q.basis,
                        })
                    })
                    .collect::<Result<Vec<_>, GeometryError>>()
            })
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .flatten()
            .collect();
        let nfq = if mesh.num_facets() > 0 {
            mesh.facet_quadrature(0).len()
        } else {
            0
        };
        let mut facet_quad = Vec::with_capacity(mesh.num_facets() * nfq);
        for f in 0..mesh.num_facets() {
            for q in mesh.facet_quadrature(f) {
                let mp = metric.at(q.x)?;
                let length = if mesh.dim() == 1 {
                    q.weight
                } else {
                    q.weight * mp.inner(q.tangent, q.tangent).sqrt()
                };
                facet_quad.push(FacetCache {
                    x: q.x,
                    weight: length / mp.gamma.sqrt(),
                    basis: q.basis,
                });
            }
        }

        let rows: Vec<Vec<usize>> = (0..mesh.num_vertices())
            .map(|v| {
                let mut r = mesh.neighbors(v).to_vec();
                r.push(v);
                r.sort_unstable();
                r
            })
            .collect();
        let pattern = CsrMatrix::from_rows(&rows);
        let mut cell_slots = Vec::new();
        for c in 0..mesh.num_cells() {
            for &a in mesh.cell(c) {
                for &b in mesh.cell(c) {
                    cell_slots.push(pattern.slot(a, b).expect("cell pair in pattern"));
                }
            }
        }
        let mut facet_slots = Vec::new();
        for f in 0..mesh.num_facets() {
            for &a in mesh.facet(f) {
                for &b in mesh.facet(f) {
                    facet_slots.push(pattern.slot(a, b).expect("facet pair in pattern"));
                }
            }
        }
        Ok(Assembler {
            mesh,
            problem,
            nq,
            quad,
            nfq,
            facet_quad,
            pattern,
            cell_slots,
            facet_slots,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        self.mesh
    }

    fn check(&self, u: &ScalarField, tau: f64) -> Result<(), AssemblyError> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(AssemblyError::InvalidInput(format!("tau = {tau} outside [0, 1]")));
        }
        if u.len() != self.mesh.num_vertices() {
            return Err(AssemblyError::InvalidInput(format!(
                "field has {} values, mesh has {} vertices",
                u.len(),
                self.mesh.num_vertices()
            )));
        }
        Ok(())
    }

    fn cell_local(
        &self,
        c: usize,
        u: &[f64],
        tau: f64,
        want_jacobian: bool,
    ) -> Result<CellLocal, AssemblyError> {
        let cell = self.mesh.cell(c);
        let k = cell.len();
        let grads = &self.mesh.cell_geometry(c).grads;
        let mut g = [0.0; 2];
        for i in 0..k {
            g[0] += u[cell[i]] * grads[i][0];
            g[1] += u[cell[i]] * grads[i][1];
        }
        let mut out = CellLocal {
            r: [0.0; 3],
            j: [[0.0; 3]; 3],
        };
        for q in &self.quad[c * self.nq..(c + 1) * self.nq] {
            let v = mat_vec(&q.sigma_inv, g);
            let w = (q.gamma + dot(g, v)).sqrt();
            let uq: f64 = (0..k).map(|i| q.basis[i] * u[cell[i]]).sum();
            let psi = if tau != 0.0 { self.problem.psi(q.x, uq)? } else { 0.0 };
            for a in 0..k {
                out.r[a] += q.weight * (dot(v, grads[a]) / w + tau * psi * q.basis[a]);
            }
            if want_jacobian {
                let dpsi = if tau != 0.0 { self.problem.dpsi_ds(q.x, uq)? } else { 0.0 };
                let w2 = w * w;
                let d = [
                    [(q.sigma_inv[0][0] - v[0] * v[0] / w2) / w, (q.sigma_inv[0][1] - v[0] * v[1] / w2) / w],
                    [(q.sigma_inv[1][0] - v[1] * v[0] / w2) / w, (q.sigma_inv[1][1] - v[1] * v[1] / w2) / w],
                ];
                for a in 0..k {
                    let dga = mat_vec(&d, grads[a]);
                    for b in 0..k {
                        out.j[a][b] += q.weight
                            * (dot(dga, grads[b]) + tau * dpsi * q.basis[a] * q.basis[b]);
                    }
                }
            }
        }
        Ok(out)
    }

    fn facet_local(
        &self,
        f: usize,
        u: &[f64],
        tau: f64,
        want_jacobian: bool,
    ) -> Result<([f64; 2], [[f64; 2]; 2]), AssemblyError> {
        let fv = self.mesh.facet(f);
        let mut r = [0.0; 2];
        let mut j = [[0.0; 2]; 2];
        if tau == 0.0 {
            return Ok((r, j));
        }
        for q in &self.facet_quad[f * self.nfq..(f + 1) * self.nfq] {
            let uq: f64 = fv.iter().zip(&q.basis).map(|(&v, b)| b * u[v]).sum();
            let phi = self.problem.phi(q.x, uq)?;
            for a in 0..fv.len() {
                r[a] -= q.weight * tau * phi * q.basis[a];
            }
            if want_jacobian {
                let dphi = self.problem.dphi_ds(q.x, uq)?;
                for a in 0..fv.len() {
                    for b in 0..fv.len() {
                        j[a][b] -= q.weight * tau * dphi * q.basis[a] * q.basis[b];
                    }
                }
            }
        }
        Ok((r, j))
    }

    fn assemble_parts(
        &self,
        u: &ScalarField,
        tau: f64,
        want_jacobian: bool,
    ) -> Result<(Vec<f64>, Option<CsrMatrix>), AssemblyError> {
        self.check(u, tau)?;
        let values = u.values();
        let locals: Vec<CellLocal> = (0..self.mesh.num_cells())
            .into_par_iter()
            .map(|c| self.cell_local(c, values, tau, want_jacobian))
            .collect::<Result<_, _>>()?;
        let facet_locals: Vec<_> = (0..self.mesh.num_facets())
            .into_par_iter()
            .map(|f| self.facet_local(f, values, tau, want_jacobian))
            .collect::<Result<_, _>>()?;

        // sequential scatter in cell order keeps the sums deterministic
        let mut residual = vec![0.0; self.mesh.num_vertices()];
        let mut jac = want_jacobian.then(|| self.pattern.clone());
        let k = self.mesh.dim() + 1;
        for (c, local) in locals.iter().enumerate() {
            let cell = self.mesh.cell(c);
            for a in 0..k {
                residual[cell[a]] += local.r[a];
            }
            if let Some(m) = jac.as_mut() {
                let slots = &self.cell_slots[c * k * k..(c + 1) * k * k];
                let vals = m.values_mut();
                for a in 0..k {
                    for b in 0..k {
                        vals[slots[a * k + b]] += local.j[a][b];
                    }
                }
            }
        }
        let d = self.mesh.dim();
        for (f, (r, j)) in facet_locals.iter().enumerate() {
            let fv = self.mesh.facet(f);
            for a in 0..d {
                residual[fv[a]] += r[a];
            }
            if let Some(m) = jac.as_mut() {
                let slots = &self.facet_slots[f * d * d..(f + 1) * d * d];
                let vals = m.values_mut();
                for a in 0..d {
                    for b in 0..d {
                        vals[slots[a * d + b]] += j[a][b];
                    }
                }
            }
        }
        Ok((residual, jac))
    }

    pub fn residual(&self, u: &ScalarField, tau: f64) -> Result<Vec<f64>, AssemblyError> {
        Ok(self.assemble_parts(u, tau, false)?.0)
    }

    pub fn jacobian(&self, u: &ScalarField, tau: f64) -> Result<CsrMatrix, AssemblyError> {
        Ok(self.assemble_parts(u, tau, true)?.1.expect("jacobian requested"))
    }

    pub fn residual_and_jacobian(
        &self,
        u: &ScalarField,
        tau: f64,
    ) -> Result<(Vec<f64>, CsrMatrix), AssemblyError> {
        let (r, j) = self.assemble_parts(u, tau, true)?;
        Ok((r, j.expect("jacobian requested")))
    }

    pub fn energy(&self, u: &ScalarField, tau: f64) -> Result<f64, AssemblyError> {
        self.check(u, tau)?;
        let values = u.values();
        let cells: Vec<f64> = (0..self.mesh.num_cells())
            .into_par_iter()
            .map(|c| {
                let cell = self.mesh.cell(c);
                let grads = &self.mesh.cell_geometry(c).grads;
                let mut g = [0.0; 2];
                for (i, &v) in cell.iter().enumerate() {
                    g[0] += values[v] * grads[i][0];
                    g[1] += values[v] * grads[i][1];
                }
                let mut e = 0.0;
                for q in &self.quad[c * self.nq..(c + 1) * self.nq] {
                    let w = (q.gamma + dot(g, mat_vec(&q.sigma_inv, g))).sqrt();
                    let uq: f64 = cell.iter().zip(&q.basis).map(|(&v, b)| b * values[v]).sum();
                    let potential = if tau != 0.0 {
                        tau * integrate_s(|s| self.problem.psi(q.x, s), uq)?
                    } else {
                        0.0
                    };
                    e += q.weight * (w + potential);
                }
                Ok(e)
            })
            .collect::<Result<_, AssemblyError>>()?;
        let mut energy: f64 = cells.iter().sum();
        if tau != 0.0 {
            for f in 0..self.mesh.num_facets() {
                let fv = self.mesh.facet(f);
                for q in &self.facet_quad[f * self.nfq..(f + 1) * self.nfq] {
                    let uq: f64 = fv.iter().zip(&q.basis).map(|(&v, b)| b * values[v]).sum();
                    energy -= q.weight * tau * integrate_s(|s| self.problem.phi(q.x, s), uq)?;
                }
            }
        }
        Ok(energy)
    }

    pub fn assemble(&self, u: &ScalarField, tau: f64) -> Result<AssembledSystem, AssemblyError> {
        let (residual, jacobian) = self.residual_and_jacobian(u, tau)?;
        let energy = self.energy(u, tau)?;
        Ok(AssembledSystem {
            residual,
            jacobian,
            energy,
            tau,
        })
    }

    /// `int phi_a / sqrt(gamma) dsigma` per vertex.
    pub fn lumped_areas(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.mesh.num_vertices()];
        for c in 0..self.mesh.num_cells() {
            let cell = self.mesh.cell(c);
            for q in &self.quad[c * self.nq..(c + 1) * self.nq] {
                for (i, &v) in cell.iter().enumerate() {
                    out[v] += q.weight * q.basis[i];
                }
            }
        }
        out
    }
}

/// `int_0^upper f(s) ds` by adaptive Simpson to [`SIMPSON_TOL`].
pub fn integrate_s(
    f: impl Fn(f64) -> Result<f64, ProblemError>,
    upper: f64,
) -> Result<f64, ProblemError> {
    if upper == 0.0 {
        return Ok(0.0);
    }
    let (a, b) = (0.0, upper);
    let fa = f(a)?;
    let fb = f(b)?;
    let m = 0.5 * (a + b);
    let fm = f(m)?;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(&f, a, b, fa, fm, fb, whole, SIMPSON_TOL, 40)
}

#[allow(clippy::too_many_arguments)]
fn simpson(
    f: &impl Fn(f64) -> Result<f64, ProblemError>,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64, ProblemError> {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm)?, f(rm)?);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    Ok(simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
        + simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
}

pub fn residual(
    u: &ScalarField,
    tau: f64,
    problem: &CapillaryProblem,
    metric: &MetricField,
    mesh: &Mesh,
) -> Result<Vec<f64>, AssemblyError> {
    Assembler::new(mesh, metric, problem)?.residual(u, tau)
}

pub fn jacobian(
    u: &ScalarField,
    tau: f64,
    problem: &CapillaryProblem,
    metric: &MetricField,
    mesh: &Mesh,
) -> Result<CsrMatrix, AssemblyError> {
    Assembler::new(mesh, metric, problem)?.jacobian(u, tau)
}

pub fn energy(
    u: &ScalarField,
    tau: f64,
    problem: &CapillaryProblem,
    metric: &MetricField,
    mesh: &Mesh,
) -> Result<f64, AssemblyError> {
    Assembler::new(mesh, metric, problem)?.energy(u, tau)
}
