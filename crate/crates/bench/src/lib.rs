//! Shared fixtures for the criterion benches.

use capillary::{CapillaryProblem, Mesh, MetricField, ScalarField};

/// A disk problem with a warped metric, sized by `h`.
pub struct Fixture {
    pub mesh: Mesh,
    pub metric: MetricField,
    pub problem: CapillaryProblem,
    /// A smooth non-trivial state to assemble at.
    pub state: ScalarField,
}

impl Fixture {
    pub fn warped_disk(h: f64) -> Self {
        let mesh = Mesh::disk(1.0, h).expect("valid disk");
        let metric = MetricField::radial_warp(
            2,
            &"1".parse().expect("literal"),
            &"1 + 3*r^2".parse().expect("literal"),
        )
        .expect("valid metric");
        let problem = CapillaryProblem::parse("1 + s", "0.3").expect("valid data");
        let state = ScalarField::from_fn(&mesh, |x| 0.2 * (x[0] * x[0] - x[1]) + 0.05).expect("finite");
        Fixture { mesh, metric, problem, state }
    }

    pub fn interval(cells: usize) -> Self {
        let mesh = Mesh::interval(0.0, 1.0, cells).expect("valid interval");
        let metric = MetricField::euclidean(1).expect("dimension");
        let problem = CapillaryProblem::parse("s - 0.5", "0.1").expect("valid data");
        let state = ScalarField::from_fn(&mesh, |x| 0.3 * x[0]).expect("finite");
        Fixture { mesh, metric, problem, state }
    }
}
