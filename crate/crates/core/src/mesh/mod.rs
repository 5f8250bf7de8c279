//! Simplicial meshes of a leaf domain: segments for `dim = 1`, triangles for `dim = 2`.

use std::collections::HashMap;

use thiserror::Error;

use crate::expr::{ExprError, Expression};
use crate::geometry::{GeometryError, MetricField, Point};

mod distance;
mod generate;
mod io;

pub use generate::{INNER_TAG, MAX_VERTICES, OUTER_TAG};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("mesh would need about {requested} vertices, budget is {budget}")]
    ResourceExhausted { requested: usize, budget: usize },
    #[error("non-conforming mesh: {0}")]
    NonConforming(String),
    #[error("cell {cell} has non-positive volume")]
    InvertedCell { cell: usize },
    #[error("vertex {vertex} is unreachable from the source")]
    Unreachable { vertex: usize },
    #[error("field has {found} values, mesh has {expected} vertices")]
    FieldSize { expected: usize, found: usize },
    #[error("non-finite field value at vertex {vertex}")]
    NonFinite { vertex: usize },
    #[error("mesh file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Chart measure and barycentric gradients of one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellGeometry {
    pub measure: f64,
    pub grads: [Point; 3],
}

/// Cell quadrature point: chart position, chart weight, basis values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadPoint {
    pub x: Point,
    pub weight: f64,
    pub basis: [f64; 3],
}

/// Facet quadrature point.
///
/// For triangles the boundary length element is `weight * |tangent|_sigma`;
/// for segments the facet is a point and the element is `weight` itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FacetQuadPoint {
    pub x: Point,
    pub weight: f64,
    pub tangent: Point,
    pub basis: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct Mesh {
    dim: usize,
    vertices: Vec<Point>,
    cells: Vec<usize>,
    facets: Vec<usize>,
    facet_tags: Vec<usize>,
    facet_cells: Vec<usize>,
    facet_normals: Vec<Point>,
    geometry: Vec<CellGeometry>,
    adj_offsets: Vec<usize>,
    adj: Vec<usize>,
    on_boundary: Vec<bool>,
    h_max: f64,
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

impl Mesh {
    /// Builds and validates a mesh from flat connectivity.
    ///
    /// `cells` has stride `dim + 1`, `facets` stride `dim`, one tag per facet.
    /// Every facet owned by a single cell must be listed exactly once.
    pub fn new(
        dim: usize,
        vertices: Vec<Point>,
        cells: Vec<usize>,
        facets: Vec<usize>,
        facet_tags: Vec<usize>,
    ) -> Result<Mesh, MeshError> {
        if dim != 1 && dim != 2 {
            return Err(MeshError::InvalidInput(format!("dimension {dim}")));
        }
        let nv = vertices.len();
        let k = dim + 1;
        if cells.is_empty() || !cells.len().is_multiple_of(k) {
            return Err(MeshError::InvalidInput("cell array length".into()));
        }
        if !facets.len().is_multiple_of(dim) || facets.len() / dim != facet_tags.len() {
            return Err(MeshError::InvalidInput("facet array length".into()));
        }
        if let Some((i, _)) = vertices
            .iter()
            .enumerate()
            .find(|(_, p)| !p[0].is_finite() || !p[1].is_finite() || (dim == 1 && p[1] != 0.0))
        {
            return Err(MeshError::InvalidInput(format!("vertex {i} coordinates")));
        }
        if let Some(&bad) = cells.iter().chain(facets.iter()).find(|&&v| v >= nv) {
            return Err(MeshError::InvalidInput(format!("vertex index {bad} out of range")));
        }

        let ncells = cells.len() / k;
        let mut geometry = Vec::with_capacity(ncells);
        for c in 0..ncells {
            let g = cell_geometry(dim, &vertices, &cells[c * k..(c + 1) * k]);
            if !(g.measure > 0.0) {
                return Err(MeshError::InvertedCell { cell: c });
            }
            geometry.push(g);
        }

        // facet key -> (count, owning cell, opposite vertex)
        let mut seen: HashMap<Vec<usize>, (usize, usize, usize)> = HashMap::new();
        for c in 0..ncells {
            let cell = &cells[c * k..(c + 1) * k];
            for skip in 0..k {
                let mut key: Vec<usize> = (0..k).filter(|&i| i != skip).map(|i| cell[i]).collect();
                key.sort_unstable();
                let entry = seen.entry(key).or_insert((0, c, cell[skip]));
                entry.0 += 1;
            }
        }
        if let Some((key, _)) = seen.iter().find(|(_, e)| e.0 > 2) {
            return Err(MeshError::NonConforming(format!(
                "facet {key:?} is shared by more than two cells"
            )));
        }
        let open = seen.values().filter(|e| e.0 == 1).count();
        if open != facet_tags.len() {
            return Err(MeshError::NonConforming(format!(
                "{open} boundary facets found, {} listed",
                facet_tags.len()
            )));
        }
        let nf = facet_tags.len();
        let mut facet_cells = Vec::with_capacity(nf);
        let mut facet_normals = Vec::with_capacity(nf);
        let mut listed = std::collections::HashSet::new();
        let mut on_boundary = vec![false; nv];
        for f in 0..nf {
            let fv = &facets[f * dim..(f + 1) * dim];
            let mut key = fv.to_vec();
            key.sort_unstable();
            let &(count, cell, opposite) = seen.get(&key).ok_or_else(|| {
                MeshError::NonConforming(format!("listed facet {fv:?} is not a cell facet"))
            })?;
            if count != 1 || !listed.insert(key) {
                return Err(MeshError::NonConforming(format!(
                    "listed facet {fv:?} is interior or duplicated"
                )));
            }
            let normal = if dim == 1 {
                [(vertices[opposite][0] - vertices[fv[0]][0]).signum(), 0.0]
            } else {
                let t = sub(vertices[fv[1]], vertices[fv[0]]);
                let len = t[0].hypot(t[1]);
                let mut n = [-t[1] / len, t[0] / len];
                let to_opp = sub(vertices[opposite], vertices[fv[0]]);
                if n[0] * to_opp[0] + n[1] * to_opp[1] < 0.0 {
                    n = [-n[0], -n[1]];
                }
                n
            };
            for &v in fv {
                on_boundary[v] = true;
            }
            facet_cells.push(cell);
            facet_normals.push(normal);
        }

        let mut neighbor_sets: Vec<Vec<usize>> = vec![Vec::new(); nv];
        let mut h_max: f64 = 0.0;
        for c in 0..ncells {
            let cell = &cells[c * k..(c + 1) * k];
            for &a in cell {
                for &b in cell {
                    if a != b {
                        neighbor_sets[a].push(b);
                        let d = sub(vertices[a], vertices[b]);
                        h_max = h_max.max(d[0].hypot(d[1]));
                    }
                }
            }
        }
        let mut adj_offsets = Vec::with_capacity(nv + 1);
        let mut adj = Vec::new();
        adj_offsets.push(0);
        for (v, mut set) in neighbor_sets.into_iter().enumerate() {
            if set.is_empty() {
                return Err(MeshError::InvalidInput(format!(
                    "vertex {v} belongs to no cell"
                )));
            }
            set.sort_unstable();
            set.dedup();
            adj.extend(set);
            adj_offsets.push(adj.len());
        }

        Ok(Mesh {
            dim,
            vertices,
            cells,
            facets,
            facet_tags,
            facet_cells,
            facet_normals,
            geometry,
            adj_offsets,
            adj,
            on_boundary,
            h_max,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_cells(&self) -> usize {
        self.geometry.len()
    }

    pub fn num_facets(&self) -> usize {
        self.facet_tags.len()
    }

    pub fn vertex(&self, v: usize) -> Point {
        self.vertices[v]
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn cell(&self, c: usize) -> &[usize] {
        let k = self.dim + 1;
        &self.cells[c * k..(c + 1) * k]
    }

    pub fn cell_geometry(&self, c: usize) -> &CellGeometry {
        &self.geometry[c]
    }

    pub fn facet(&self, f: usize) -> &[usize] {
        &self.facets[f * self.dim..(f + 1) * self.dim]
    }

    pub fn facet_tag(&self, f: usize) -> usize {
        self.facet_tags[f]
    }

    pub fn facet_cell(&self, f: usize) -> usize {
        self.facet_cells[f]
    }

    /// Distinct boundary tags in increasing order.
    pub fn boundary_tags(&self) -> Vec<usize> {
        let mut tags = self.facet_tags.clone();
        tags.sort_unstable();
        tags.dedup();
        tags
    }

    /// Euclidean unit chart normal of facet `f`, pointing into the domain.
    pub fn facet_normal(&self, f: usize) -> Point {
        self.facet_normals[f]
    }

    /// Inward sigma-unit conormal of facet `f` at `x`: `sigma^{-1} n / |n|_{sigma^{-1}}`.
    pub fn conormal(&self, metric: &MetricField, f: usize, x: Point) -> Result<Point, GeometryError> {
        let mp = metric.at(x)?;
        Ok(conormal_from(&mp.sigma_inv, self.facet_normals[f]))
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[self.adj_offsets[v]..self.adj_offsets[v + 1]]
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.on_boundary[v]
    }

    /// Longest edge in the chart.
    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    /// Order-2 rule: three interior points on triangles, two Gauss points on segments.
    pub fn cell_quadrature(&self, c: usize) -> Vec<QuadPoint> {
        let cell = self.cell(c);
        let m = self.geometry[c].measure;
        let rules: &[[f64; 3]] = if self.dim == 1 {
            let g = 0.5 / 3f64.sqrt();
            &[[0.5 + g, 0.5 - g, 0.0], [0.5 - g, 0.5 + g, 0.0]]
        } else {
            let (a, b) = (2.0 / 3.0, 1.0 / 6.0);
            &[[a, b, b], [b, a, b], [b, b, a]]
        };
        let weight = m / rules.len() as f64;
        rules
            .iter()
            .map(|lam| {
                let mut x = [0.0; 2];
                for (i, &v) in cell.iter().enumerate() {
                    x[0] += lam[i] * self.vertices[v][0];
                    x[1] += lam[i] * self.vertices[v][1];
                }
                QuadPoint {
                    x,
                    weight,
                    basis: *lam,
                }
            })
            .collect()
    }

    /// Two Gauss points on edges; the facet point itself in one dimension.
    pub fn facet_quadrature(&self, f: usize) -> Vec<FacetQuadPoint> {
        let fv = self.facet(f);
        if self.dim == 1 {
            return vec![FacetQuadPoint {
                x: self.vertices[fv[0]],
                weight: 1.0,
                tangent: [0.0; 2],
                basis: [1.0, 0.0],
            }];
        }
        let (p, q) = (self.vertices[fv[0]], self.vertices[fv[1]]);
        let t = sub(q, p);
        let g = 0.5 / 3f64.sqrt();
        [0.5 - g, 0.5 + g]
            .iter()
            .map(|&l| FacetQuadPoint {
                x: [p[0] + l * t[0], p[1] + l * t[1]],
                weight: 0.5,
                tangent: t,
                basis: [1.0 - l, l],
            })
            .collect()
    }

    /// sigma-weighted measure of the whole domain.
    pub fn sigma_area(&self, metric: &MetricField) -> Result<f64, GeometryError> {
        let mut total = 0.0;
        for c in 0..self.num_cells() {
            for q in self.cell_quadrature(c) {
                total += q.weight * metric.at(q.x)?.sqrt_det_sigma;
            }
        }
        Ok(total)
    }

    /// Index of the vertex closest to `x` in the chart.
    pub fn nearest_vertex(&self, x: Point) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, p) in self.vertices.iter().enumerate() {
            let d = sub(*p, x);
            let d2 = d[0] * d[0] + d[1] * d[1];
            if d2 < best.0 {
                best = (d2, i);
            }
        }
        best.1
    }

    /// Cell containing `x` with its barycentric coordinates; points outside
    /// the mesh get the cell whose smallest coordinate is least negative.
    pub fn locate(&self, x: Point) -> (usize, [f64; 3]) {
        let mut best = (f64::NEG_INFINITY, 0, [0.0; 3]);
        for c in 0..self.num_cells() {
            let cell = self.cell(c);
            let base = self.vertices[cell[0]];
            let d = sub(x, base);
            let g = &self.geometry[c].grads;
            let mut lam = [0.0; 3];
            for i in 1..cell.len() {
                lam[i] = g[i][0] * d[0] + g[i][1] * d[1];
            }
            lam[0] = 1.0 - lam[1..cell.len()].iter().sum::<f64>();
            let worst = lam[..cell.len()].iter().cloned().fold(f64::INFINITY, f64::min);
            if worst > best.0 {
                best = (worst, c, lam);
                if worst >= 0.0 {
                    break;
                }
            }
        }
        (best.1, best.2)
    }

    /// Boundary facet closest to `x` (distance to the facet's chart segment).
    pub fn nearest_facet(&self, x: Point) -> Option<usize> {
        let mut best = (f64::INFINITY, None);
        for f in 0..self.num_facets() {
            let fv = self.facet(f);
            let d2 = if self.dim == 1 {
                let d = self.vertices[fv[0]][0] - x[0];
                d * d
            } else {
                let (p, q) = (self.vertices[fv[0]], self.vertices[fv[1]]);
                let t = sub(q, p);
                let w = sub(x, p);
                let l = ((w[0] * t[0] + w[1] * t[1]) / (t[0] * t[0] + t[1] * t[1])).clamp(0.0, 1.0);
                let d = [w[0] - l * t[0], w[1] - l * t[1]];
                d[0] * d[0] + d[1] * d[1]
            };
            if d2 < best.0 {
                best = (d2, Some(f));
            }
        }
        best.1
    }
}

pub(crate) fn conormal_from(sigma_inv: &[[f64; 2]; 2], n: Point) -> Point {
    let v = [
        sigma_inv[0][0] * n[0] + sigma_inv[0][1] * n[1],
        sigma_inv[1][0] * n[0] + sigma_inv[1][1] * n[1],
    ];
    let len = (n[0] * v[0] + n[1] * v[1]).sqrt();
    [v[0] / len, v[1] / len]
}

fn cell_geometry(dim: usize, vertices: &[Point], cell: &[usize]) -> CellGeometry {
    if dim == 1 {
        let len = vertices[cell[1]][0] - vertices[cell[0]][0];
        return CellGeometry {
            measure: len,
            grads: [[-1.0 / len, 0.0], [1.0 / len, 0.0], [0.0; 2]],
        };
    }
    let p = [vertices[cell[0]], vertices[cell[1]], vertices[cell[2]]];
    let e1 = sub(p[1], p[0]);
    let e2 = sub(p[2], p[0]);
    let twice = e1[0] * e2[1] - e1[1] * e2[0];
    let mut grads = [[0.0; 2]; 3];
    for (i, g) in grads.iter_mut().enumerate() {
        let e = sub(p[(i + 2) % 3], p[(i + 1) % 3]);
        *g = [-e[1] / twice, e[0] / twice];
    }
    CellGeometry {
        measure: 0.5 * twice,
        grads,
    }
}

/// Nodal values of a piecewise-linear field, one per mesh vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(mesh: &Mesh, values: Vec<f64>) -> Result<Self, MeshError> {
        if values.len() != mesh.num_vertices() {
            return Err(MeshError::FieldSize {
                expected: mesh.num_vertices(),
                found: values.len(),
            });
        }
        if let Some(vertex) = values.iter().position(|v| !v.is_finite()) {
            return Err(MeshError::NonFinite { vertex });
        }
        Ok(ScalarField { values })
    }

    pub fn zeros(mesh: &Mesh) -> Self {
        ScalarField {
            values: vec![0.0; mesh.num_vertices()],
        }
    }

    pub fn constant(mesh: &Mesh, value: f64) -> Self {
        ScalarField {
            values: vec![value; mesh.num_vertices()],
        }
    }

    pub fn from_fn(mesh: &Mesh, f: impl Fn(Point) -> f64) -> Result<Self, MeshError> {
        Self::new(mesh, mesh.vertices().iter().map(|&p| f(p)).collect())
    }

    /// Nodal interpolant of an expression in `x1`, `x2`, `r`.
    pub fn from_expression(mesh: &Mesh, expr: &Expression) -> Result<Self, MeshError> {
        let values = mesh
            .vertices()
            .iter()
            .map(|&p| expr.eval(p, 0.0))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(mesh, values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Chart gradient of the interpolant on cell `c`.
    pub fn cell_gradient(&self, mesh: &Mesh, c: usize) -> Point {
        let g = mesh.cell_geometry(c);
        let mut out = [0.0; 2];
        for (i, &v) in mesh.cell(c).iter().enumerate() {
            out[0] += self.values[v] * g.grads[i][0];
            out[1] += self.values[v] * g.grads[i][1];
        }
        out
    }

    /// Interpolant at a point given by cell and barycentric coordinates.
    pub fn interpolate(&self, mesh: &Mesh, c: usize, basis: &[f64]) -> f64 {
        mesh.cell(c)
            .iter()
            .zip(basis)
            .map(|(&v, &b)| self.values[v] * b)
            .sum()
    }

    /// Piecewise-linear interpolant at an arbitrary chart point.
    pub fn sample(&self, mesh: &Mesh, x: Point) -> f64 {
        let (c, lam) = mesh.locate(x);
        self.interpolate(mesh, c, &lam[..mesh.dim() + 1])
    }

    /// Elementwise `self - other`.
    pub fn max_abs_diff(&self, other: &ScalarField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}
