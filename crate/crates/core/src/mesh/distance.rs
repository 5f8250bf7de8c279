use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{Mesh, MeshError, ScalarField};
use crate::geometry::MetricField;

#[derive(PartialEq)]
struct Entry {
    dist: f64,
    vertex: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Depth of the chord neighborhood used by the distance fields.
pub const CHORD_DEPTH: usize = 3;

impl Mesh {
    /// Length of edge `a-b` with sigma frozen at the edge midpoint.
    pub fn edge_length(&self, metric: &MetricField, a: usize, b: usize) -> Result<f64, MeshError> {
        let (p, q) = (self.vertex(a), self.vertex(b));
        let mid = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
        let e = [q[0] - p[0], q[1] - p[1]];
        Ok(metric.at(mid)?.inner(e, e).sqrt())
    }

    /// Vertices within `CHORD_DEPTH` edges of each vertex.
    fn distance_graph(&self) -> Vec<Vec<usize>> {
        (0..self.num_vertices())
            .map(|v| {
                let mut out = self.neighbors(v).to_vec();
                let mut frontier = out.clone();
                for _ in 1..CHORD_DEPTH {
                    let mut next = Vec::new();
                    for &n in &frontier {
                        next.extend_from_slice(self.neighbors(n));
                    }
                    next.sort_unstable();
                    next.dedup();
                    out.extend_from_slice(&next);
                    frontier = next;
                }
                out.sort_unstable();
                out.dedup();
                let direct = self.neighbors(v);
                out.retain(|&w| {
                    w != v
                        && (direct.binary_search(&w).is_ok()
                            || !(self.is_boundary_vertex(v) && self.is_boundary_vertex(w)))
                });
                out
            })
            .collect()
    }

    fn dijkstra(&self, metric: &MetricField, sources: &[usize]) -> Result<Vec<f64>, MeshError> {
        let n = self.num_vertices();
        let mut dist = vec![f64::INFINITY; n];
        let graph = self.distance_graph();
        let mut heap = BinaryHeap::new();
        for &s in sources {
            dist[s] = 0.0;
            heap.push(Entry { dist: 0.0, vertex: s });
        }
        while let Some(Entry { dist: d, vertex: v }) = heap.pop() {
            if d > dist[v] {
                continue;
            }
            for &w in &graph[v] {
                let nd = d + self.edge_length(metric, v, w)?;
                if nd < dist[w] {
                    dist[w] = nd;
                    heap.push(Entry { dist: nd, vertex: w });
                }
            }
        }
        if let Some(vertex) = dist.iter().position(|d| d.is_infinite()) {
            return Err(MeshError::Unreachable { vertex });
        }
        Ok(dist)
    }

    /// Shortest-path distance from vertex `source` along sigma-weighted edges.
    ///
    /// The graph holds mesh edges plus straight chords to vertices up to `CHORD_DEPTH` edges away
    /// (skipping boundary-to-boundary chords), which cuts the staircase bias of
    /// pure edge paths.
    pub fn geodesic_distance_field(
        &self,
        metric: &MetricField,
        source: usize,
    ) -> Result<ScalarField, MeshError> {
        if source >= self.num_vertices() {
            return Err(MeshError::InvalidInput(format!("source vertex {source}")));
        }
        ScalarField::new(self, self.dijkstra(metric, &[source])?)
    }

    /// Shortest-path distance to the nearest boundary vertex.
    pub fn boundary_distance_field(&self, metric: &MetricField) -> Result<ScalarField, MeshError> {
        let sources: Vec<usize> = (0..self.num_vertices())
            .filter(|&v| self.is_boundary_vertex(v))
            .collect();
        if sources.is_empty() {
            return Err(MeshError::InvalidInput("mesh has no boundary".into()));
        }
        ScalarField::new(self, self.dijkstra(metric, &sources)?)
    }
}
