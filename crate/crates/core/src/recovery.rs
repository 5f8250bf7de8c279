//! Local quadratic least-squares fits over vertex patches.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::{Mat2, Point};
use crate::mesh::Mesh;

/// Smallest accepted ratio of extreme singular values of the scaled fit matrix.
const RANK_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecoveryError {
    #[error("degenerate recovery stencil at vertex {vertex}: {reason}")]
    DegenerateStencil { vertex: usize, reason: String },
}

/// Value, gradient and Hessian of a local quadratic model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalJet {
    pub value: f64,
    pub grad: Point,
    pub hess: Mat2,
}

impl LocalJet {
    pub fn eval(&self, center: Point, x: Point) -> f64 {
        let d = [x[0] - center[0], x[1] - center[1]];
        self.value
            + self.grad[0] * d[0]
            + self.grad[1] * d[1]
            + 0.5 * (self.hess[0][0] * d[0] * d[0] + 2.0 * self.hess[0][1] * d[0] * d[1] + self.hess[1][1] * d[1] * d[1])
    }
}

fn unknowns(dim: usize) -> usize {
    if dim == 1 {
        2
    } else {
        5
    }
}

/// Quadratic through `(center, center_value)` fitted to `samples` in least squares.
pub fn fit_constrained(
    dim: usize,
    center: Point,
    center_value: f64,
    samples: &[(Point, f64)],
) -> Option<LocalJet> {
    let n = unknowns(dim);
    if samples.len() < n {
        return None;
    }
    let scale = samples
        .iter()
        .map(|(p, _)| (p[0] - center[0]).hypot(p[1] - center[1]))
        .fold(0.0, f64::max);
    if !(scale > 0.0) {
        return None;
    }
    let mut a = DMatrix::<f64>::zeros(samples.len(), n);
    let mut b = DVector::<f64>::zeros(samples.len());
    for (row, (p, value)) in samples.iter().enumerate() {
        let d0 = (p[0] - center[0]) / scale;
        let d1 = (p[1] - center[1]) / scale;
        if dim == 1 {
            a[(row, 0)] = d0;
            a[(row, 1)] = 0.5 * d0 * d0;
        } else {
            a[(row, 0)] = d0;
            a[(row, 1)] = d1;
            a[(row, 2)] = 0.5 * d0 * d0;
            a[(row, 3)] = d0 * d1;
            a[(row, 4)] = 0.5 * d1 * d1;
        }
        b[row] = value - center_value;
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > RANK_TOL * smax) {
        return None;
    }
    let c = svd.solve(&b, 0.0).ok()?;
    let s2 = scale * scale;
    let jet = if dim == 1 {
        LocalJet {
            value: center_value,
            grad: [c[0] / scale, 0.0],
            hess: [[c[1] / s2, 0.0], [0.0, 0.0]],
        }
    } else {
        LocalJet {
            value: center_value,
            grad: [c[0] / scale, c[1] / scale],
            hess: [[c[2] / s2, c[3] / s2], [c[3] / s2, c[4] / s2]],
        }
    };
    Some(jet)
}

/// Vertices within two edges of `vertex`, excluding `vertex` itself, sorted.
pub fn patch(mesh: &Mesh, vertex: usize) -> Vec<usize> {
    let mut out: Vec<usize> = mesh.neighbors(vertex).to_vec();
    for &n in mesh.neighbors(vertex) {
        out.extend_from_slice(mesh.neighbors(n));
    }
    out.sort_unstable();
    out.dedup();
    out.retain(|&v| v != vertex);
    out
}

/// Recovered jet of the nodal field `values` at `vertex` from its two-ring patch.
pub fn recover_jet(mesh: &Mesh, values: &[f64], vertex: usize) -> Result<LocalJet, RecoveryError> {
    let center = mesh.vertex(vertex);
    let samples: Vec<(Point, f64)> = patch(mesh, vertex)
        .into_iter()
        .map(|v| (mesh.vertex(v), values[v]))
        .collect();
    fit_constrained(mesh.dim(), center, values[vertex], &samples).ok_or_else(|| {
        RecoveryError::DegenerateStencil {
            vertex,
            reason: format!("{} patch samples do not determine a quadratic", samples.len()),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratics_are_reproduced_exactly() {
        let mesh = Mesh::disk(1.0, 0.25).unwrap();
        let q = |p: Point| 0.3 + 1.5 * p[0] - 0.7 * p[1] + 0.4 * p[0] * p[0] - 1.1 * p[0] * p[1] + 2.0 * p[1] * p[1];
        let values: Vec<f64> = (0..mesh.num_vertices()).map(|v| q(mesh.vertex(v))).collect();
        for v in [0, 5, 17, mesh.num_vertices() - 1] {
            let jet = recover_jet(&mesh, &values, v).unwrap();
            let x = mesh.vertex(v);
            assert!((jet.grad[0] - (1.5 + 0.8 * x[0] - 1.1 * x[1])).abs() < 1e-9);
            assert!((jet.grad[1] - (-0.7 - 1.1 * x[0] + 4.0 * x[1])).abs() < 1e-9);
            assert!((jet.hess[0][0] - 0.8).abs() < 1e-8);
            assert!((jet.hess[0][1] + 1.1).abs() < 1e-8);
            assert!((jet.hess[1][1] - 4.0).abs() < 1e-8);
        }
    }

    #[test]
    fn one_dimensional_fit() {
        let mesh = Mesh::interval(0.0, 1.0, 10).unwrap();
        let values: Vec<f64> = (0..11).map(|i| {
            let x = i as f64 / 10.0;
            2.0 * x - 3.0 * x * x
        }).collect();
        let jet = recover_jet(&mesh, &values, 0).unwrap();
        assert!((jet.grad[0] - 2.0).abs() < 1e-10);
        assert!((jet.hess[0][0] + 6.0).abs() < 1e-9);
    }

    #[test]
    fn collinear_samples_are_degenerate() {
        let samples = [([1.0, 0.0], 1.0), ([2.0, 0.0], 2.0), ([3.0, 0.0], 3.0), ([-1.0, 0.0], 0.0), ([-2.0, 0.0], 1.0)];
        assert!(fit_constrained(2, [0.0, 0.0], 0.0, &samples).is_none());
    }
}
