use std::f64::consts::PI;

use super::{Mesh, MeshError};
use crate::geometry::Point;

/// Upper limit on generated vertex counts.
pub const MAX_VERTICES: usize = 2_000_000;

/// Boundary tag of the outer circle.
pub const OUTER_TAG: usize = 0;
/// Boundary tag of the inner circle of an annulus.
pub const INNER_TAG: usize = 1;

fn ring_count(span: f64, h: f64) -> usize {
    ((span / h) - 1e-9).ceil().max(1.0) as usize
}

fn ring(radius: f64, count: usize, start: usize) -> (Vec<Point>, Vec<usize>) {
    let points = (0..count)
        .map(|j| {
            let t = 2.0 * PI * j as f64 / count as f64;
            [radius * t.cos(), radius * t.sin()]
        })
        .collect();
    (points, (start..start + count).collect())
}

/// Triangulates the band between two concentric rings, walking both by angle.
fn stitch(inner: &[usize], outer: &[usize], cells: &mut Vec<usize>) {
    let (ni, no) = (inner.len(), outer.len());
    let (mut i, mut o) = (0, 0);
    while i < ni || o < no {
        let next_inner = (i + 1) as f64 / ni as f64;
        let next_outer = (o + 1) as f64 / no as f64;
        if o < no && (i == ni || next_outer <= next_inner) {
            cells.extend_from_slice(&[inner[i % ni], outer[o], outer[(o + 1) % no]]);
            o += 1;
        } else {
            cells.extend_from_slice(&[inner[i], outer[o % no], inner[(i + 1) % ni]]);
            i += 1;
        }
    }
}

fn ring_edges(ids: &[usize], tag: usize, facets: &mut Vec<usize>, tags: &mut Vec<usize>) {
    for j in 0..ids.len() {
        facets.extend_from_slice(&[ids[j], ids[(j + 1) % ids.len()]]);
        tags.push(tag);
    }
}

impl Mesh {
    /// Uniform mesh of `[a, b]` with `m` cells; facet tag 0 at `a`, 1 at `b`.
    pub fn interval(a: f64, b: f64, m: usize) -> Result<Mesh, MeshError> {
        if !(a.is_finite() && b.is_finite() && a < b) || m < 2 {
            return Err(MeshError::InvalidInput(format!(
                "interval needs a < b and m >= 2, got ({a}, {b}, {m})"
            )));
        }
        if m + 1 > MAX_VERTICES {
            return Err(MeshError::ResourceExhausted {
                requested: m + 1,
                budget: MAX_VERTICES,
            });
        }
        let vertices = (0..=m)
            .map(|i| {
                let x = if i == m { b } else { a + (b - a) * i as f64 / m as f64 };
                [x, 0.0]
            })
            .collect();
        let cells = (0..m).flat_map(|i| [i, i + 1]).collect();
        Mesh::new(1, vertices, cells, vec![0, m], vec![0, 1])
    }

    /// Concentric-ring triangulation of the disk of `radius` centered at the origin.
    ///
    /// Ring `k` has `6k` vertices; the center is vertex 0. Boundary tag 0.
    pub fn disk(radius: f64, h: f64) -> Result<Mesh, MeshError> {
        if !(radius > 0.0 && h > 0.0 && h < radius) || !radius.is_finite() {
            return Err(MeshError::InvalidInput(format!(
                "disk needs radius > 0 and 0 < h < radius, got ({radius}, {h})"
            )));
        }
        let rings = ring_count(radius, h);
        let requested = 1 + 3 * rings.saturating_mul(rings + 1);
        if rings > MAX_VERTICES || requested > MAX_VERTICES {
            return Err(MeshError::ResourceExhausted {
                requested,
                budget: MAX_VERTICES,
            });
        }
        let mut vertices = vec![[0.0, 0.0]];
        let mut cells = Vec::new();
        let mut previous = vec![0usize];
        for k in 1..=rings {
            let (pts, ids) = ring(radius * k as f64 / rings as f64, 6 * k, vertices.len());
            vertices.extend(pts);
            if k == 1 {
                for j in 0..ids.len() {
                    cells.extend_from_slice(&[0, ids[j], ids[(j + 1) % ids.len()]]);
                }
            } else {
                stitch(&previous, &ids, &mut cells);
            }
            previous = ids;
        }
        let (mut facets, mut tags) = (Vec::new(), Vec::new());
        ring_edges(&previous, OUTER_TAG, &mut facets, &mut tags);
        Mesh::new(2, vertices, cells, facets, tags)
    }

    /// Ring triangulation of `inner < |x| < outer`; tag 0 outside, 1 inside.
    pub fn annulus(inner: f64, outer: f64, h: f64) -> Result<Mesh, MeshError> {
        if !(inner > 0.0 && outer > inner && h > 0.0 && h < outer - inner) || !outer.is_finite() {
            return Err(MeshError::InvalidInput(format!(
                "annulus needs 0 < inner < outer and 0 < h < outer - inner, got ({inner}, {outer}, {h})"
            )));
        }
        let rings = ring_count(outer - inner, h);
        let h_eff = (outer - inner) / rings as f64;
        let per_ring = |k: usize| {
            let r = inner + k as f64 * h_eff;
            ((2.0 * PI * r / h_eff) - 1e-9).ceil().max(6.0) as usize
        };
        let requested = (0..=rings).try_fold(0usize, |acc, k| {
            let next = acc.saturating_add(per_ring(k));
            (next <= MAX_VERTICES).then_some(next)
        });
        let Some(_) = requested else {
            return Err(MeshError::ResourceExhausted {
                requested: MAX_VERTICES.saturating_add(1),
                budget: MAX_VERTICES,
            });
        };
        let mut vertices = Vec::new();
        let mut cells = Vec::new();
        let (mut facets, mut tags) = (Vec::new(), Vec::new());
        let mut previous: Vec<usize> = Vec::new();
        for k in 0..=rings {
            let (pts, ids) = ring(inner + k as f64 * h_eff, per_ring(k), vertices.len());
            vertices.extend(pts);
            if k == 0 {
                ring_edges(&ids, INNER_TAG, &mut facets, &mut tags);
            } else {
                stitch(&previous, &ids, &mut cells);
            }
            previous = ids;
        }
        ring_edges(&previous, OUTER_TAG, &mut facets, &mut tags);
        Mesh::new(2, vertices, cells, facets, tags)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::MetricField;

    #[test]
    fn interval_examples() {
        let m = Mesh::interval(0.0, 1.0, 4).unwrap();
        let xs: Vec<f64> = m.vertices().iter().map(|p| p[0]).collect();
        assert_eq!(xs, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let metric = MetricField::euclidean(1).unwrap();
        assert_eq!(m.conormal(&metric, 0, [0.0, 0.0]).unwrap(), [1.0, 0.0]);
        assert_eq!(m.conormal(&metric, 1, [1.0, 0.0]).unwrap(), [-1.0, 0.0]);
        let m = Mesh::interval(-2.0, 3.0, 10).unwrap();
        for c in 0..10 {
            assert!((m.cell_geometry(c).measure - 0.5).abs() < 1e-14);
        }
        assert!(Mesh::interval(1.0, 0.0, 4).is_err());
        assert!(Mesh::interval(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn disk_examples() {
        let m = Mesh::disk(1.0, 0.5).unwrap();
        assert!(m.vertices().iter().all(|p| p[0].hypot(p[1]) <= 1.0 + 1e-9));
        let m = Mesh::disk(1.0, 0.1).unwrap();
        let area: f64 = (0..m.num_cells()).map(|c| m.cell_geometry(c).measure).sum();
        assert!((area - PI).abs() / PI < 0.02);
        assert_eq!(m.boundary_tags(), vec![OUTER_TAG]);
        assert!(matches!(
            Mesh::disk(1.0, 1e-4),
            Err(MeshError::ResourceExhausted { .. })
        ));
        assert!(Mesh::disk(1.0, 1.5).is_err());
    }

    #[test]
    fn annulus_has_two_tagged_components() {
        let m = Mesh::annulus(0.5, 1.0, 0.1).unwrap();
        assert_eq!(m.boundary_tags(), vec![OUTER_TAG, INNER_TAG]);
        for f in 0..m.num_facets() {
            let p = m.vertex(m.facet(f)[0]);
            let r = p[0].hypot(p[1]);
            let expected = if m.facet_tag(f) == INNER_TAG { 0.5 } else { 1.0 };
            assert!((r - expected).abs() < 1e-12);
        }
        let area: f64 = (0..m.num_cells()).map(|c| m.cell_geometry(c).measure).sum();
        let exact = PI * 0.75;
        assert!((area - exact).abs() / exact < 0.02);
    }

    #[test]
    fn refinement_doubles_facets_and_area_converges_quadratically() {
        let metric = MetricField::euclidean(2).unwrap();
        let hs = [0.2, 0.1, 0.05];
        let meshes: Vec<Mesh> = hs.iter().map(|&h| Mesh::disk(1.0, h).unwrap()).collect();
        for w in meshes.windows(2) {
            assert!(w[1].num_facets() >= 2 * w[0].num_facets());
        }
        let errs: Vec<f64> = meshes
            .iter()
            .map(|m| (m.sigma_area(&metric).unwrap() - PI).abs())
            .collect();
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order > 1.8, "{errs:?}");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = Mesh::disk(1.0, 0.15).unwrap();
        let b = Mesh::disk(1.0, 0.15).unwrap();
        assert_eq!(a.vertices(), b.vertices());
        assert_eq!(a.num_cells(), b.num_cells());
        for c in 0..a.num_cells() {
            assert_eq!(a.cell(c), b.cell(c));
        }
    }
}
