//! End-to-end runs through the public API.

use capillary::solver::{continuation_solve, newton_solve, uniqueness_probe};
use capillary::verify::{
    boundary_gradient_certificate, check_height, contact_angle_residual, fitted_order, mms_manufacture,
    oracle_1d_solve, strong_form_residual, write_report, Certificate, TracePoint,
};
use capillary::{CapillaryProblem, ContinuationConfig, Expression, Mesh, MetricField, ScalarField};

fn euclid2() -> MetricField {
    MetricField::euclidean(2).unwrap()
}

#[test]
fn positive_gravity_without_forcing_stays_flat() {
    let p = CapillaryProblem::parse("s", "0").unwrap();
    let cfg = ContinuationConfig::default();
    let mesh = Mesh::disk(1.0, 0.1).unwrap();
    let state = continuation_solve(&p, &euclid2(), &mesh, &cfg).unwrap();
    assert_eq!(state.tau, 1.0);
    assert!(state.u.max_abs() < 1e-9);
    let mesh = Mesh::interval(0.0, 1.0, 64).unwrap();
    let state = continuation_solve(&p, &MetricField::euclidean(1).unwrap(), &mesh, &cfg).unwrap();
    assert!(state.u.max_abs() < 1e-9);
}

#[test]
fn trivial_start_needs_no_iterations() {
    let p = CapillaryProblem::parse("1 + s", "0.3").unwrap();
    let mesh = Mesh::disk(1.0, 0.2).unwrap();
    let (u, report) = newton_solve(&ScalarField::zeros(&mesh), 0.0, &p, &euclid2(), &mesh, 1e-10, 50).unwrap();
    assert_eq!(report.iterations, 0);
    assert_eq!(u.max_abs(), 0.0);
}

#[test]
fn manufactured_cap_converges_at_second_order() {
    let metric = euclid2();
    let cap = Expression::parse("sqrt(4 - x1^2 - x2^2)").unwrap();
    let mut errors = Vec::new();
    let mut contact = Vec::new();
    for &h in &[0.2, 0.1, 0.05] {
        let mesh = Mesh::disk(1.0, h).unwrap();
        let p = mms_manufacture(&metric, &mesh, &cap, 1.0).unwrap();
        let state = continuation_solve(&p, &metric, &mesh, &ContinuationConfig::default()).unwrap();
        let exact = ScalarField::from_expression(&mesh, &cap).unwrap();
        errors.push(TracePoint { h, value: state.u.max_abs_diff(&exact) });
        contact.push(contact_angle_residual(&state.u, 1.0, &p, &metric, &mesh).unwrap());
    }
    assert!(fitted_order(&errors).unwrap() >= 1.8, "{errors:?}");
    let merged = Certificate::merge_refinements(&contact).unwrap();
    assert!(merged.passed && !merged.provisional, "{merged:?}");
}

#[test]
fn disk_capillary_run_certificates() {
    let metric = euclid2();
    let p = CapillaryProblem::parse("1 + s", "0.3").unwrap();
    let mesh = Mesh::disk(1.0, 0.1).unwrap();
    let state = continuation_solve(&p, &metric, &mesh, &ContinuationConfig::default()).unwrap();
    let height = check_height(&state.u, &p, &metric, &mesh).unwrap();
    assert!(height.passed && height.applicable);
    let boundary = boundary_gradient_certificate(&state.u, &metric, &mesh).unwrap();
    assert!(boundary.details["sup_w"] > 1.0 && boundary.details["sup_w"] < 1.2);
    let strong = strong_form_residual(&state.u, 1.0, &p, &metric, &mesh).unwrap();
    assert!(strong.details["rms_residual"] <= strong.details["residual"]);

    let mut buf = Vec::new();
    write_report(&[height, boundary, strong], &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 3);
    for line in text.lines() {
        let back: Certificate = serde_json::from_str(line).unwrap();
        assert!(!back.name.is_empty());
    }
}

#[test]
fn perturbed_restarts_agree() {
    let p = CapillaryProblem::parse("1 + s", "0.3").unwrap();
    let mesh = Mesh::disk(1.0, 0.2).unwrap();
    let report = uniqueness_probe(&p, &euclid2(), &mesh, &ContinuationConfig::default(), 3).unwrap();
    assert_eq!(report.converged, 3);
    assert!(report.spread < 1e-7);
}

#[test]
fn oracle_and_finite_elements_agree_on_warped_interval() {
    let metric = MetricField::custom(
        1,
        &[Expression::parse("1").unwrap()],
        &Expression::parse("exp(2*x1)").unwrap(),
    )
    .unwrap();
    let p = CapillaryProblem::parse("s - 0.5", "0.1").unwrap();
    let mesh = Mesh::interval(0.0, 1.0, 64).unwrap();
    let state = continuation_solve(&p, &metric, &mesh, &ContinuationConfig::default()).unwrap();
    let dense = oracle_1d_solve(&p, &metric, 0.0, 1.0, 4096, 1.0).unwrap();
    let err = mesh
        .vertices()
        .iter()
        .zip(state.u.values())
        .map(|(x, u)| (u - dense.eval(x[0])).abs())
        .fold(0.0, f64::max);
    let h = 1.0 / 64.0;
    assert!(err <= 5.0 * (h * h + 1.0 / 4096f64.powi(2)), "{err}");
}
