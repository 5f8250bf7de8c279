//! Solution CSV files and certificate reports.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a file
//! read back yields bit-identical nodal values.

use std::io::{Read, Write};
use std::path::Path;

use capillary::recovery::recover_jet;
use capillary::verify::{write_report, Certificate};
use capillary::{Mesh, MetricField, ScalarField};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("solution file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("solution does not match the mesh: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Core(#[from] Box<dyn std::error::Error + Send + Sync>),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Vertex slope factors from recovered gradients, falling back to the
/// area-weighted mean of cell gradients where the patch is degenerate.
pub fn vertex_slope_factors(metric: &MetricField, mesh: &Mesh, u: &ScalarField) -> Result<Vec<f64>, OutputError> {
    let mut out = Vec::with_capacity(mesh.num_vertices());
    let mut fallback: Option<Vec<([f64; 2], f64)>> = None;
    for v in 0..mesh.num_vertices() {
        let grad = match recover_jet(mesh, u.values(), v) {
            Ok(jet) => jet.grad,
            Err(_) => {
                let acc = fallback.get_or_insert_with(|| {
                    let mut acc = vec![([0.0; 2], 0.0); mesh.num_vertices()];
                    for c in 0..mesh.num_cells() {
                        let g = u.cell_gradient(mesh, c);
                        let m = mesh.cell_geometry(c).measure;
                        for &w in mesh.cell(c) {
                            acc[w].0[0] += m * g[0];
                            acc[w].0[1] += m * g[1];
                            acc[w].1 += m;
                        }
                    }
                    acc
                });
                let (g, m) = acc[v];
                [g[0] / m, g[1] / m]
            }
        };
        let mp = metric.at(mesh.vertex(v)).map_err(|e| OutputError::Core(Box::new(e)))?;
        out.push(mp.slope_factor(grad));
    }
    Ok(out)
}

fn header(dim: usize) -> &'static [&'static str] {
    if dim == 1 {
        &["vertex_id", "x1", "u", "W", "d_gamma_boundary"]
    } else {
        &["vertex_id", "x1", "x2", "u", "W", "d_gamma_boundary"]
    }
}

/// `vertex_id,x1[,x2],u,W,d_gamma_boundary`, one row per vertex.
pub fn solution_csv(metric: &MetricField, mesh: &Mesh, u: &ScalarField) -> Result<String, OutputError> {
    let w = vertex_slope_factors(metric, mesh, u)?;
    let d = mesh
        .boundary_distance_field(metric)
        .map_err(|e| OutputError::Core(Box::new(e)))?;
    let mut out = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| OutputError::Parse { line: 0, message: e.to_string() };
    out.write_record(header(mesh.dim())).map_err(csv_err)?;
    for v in 0..mesh.num_vertices() {
        let x = mesh.vertex(v);
        let mut row = vec![v.to_string(), x[0].to_string()];
        if mesh.dim() == 2 {
            row.push(x[1].to_string());
        }
        row.extend([u.values()[v], w[v], d.values()[v]].iter().map(f64::to_string));
        out.write_record(&row).map_err(csv_err)?;
    }
    let bytes = out.into_inner().map_err(|e| OutputError::Parse { line: 0, message: e.to_string() })?;
    Ok(String::from_utf8(bytes).expect("csv output is ascii"))
}

pub fn write_solution(path: &Path, metric: &MetricField, mesh: &Mesh, u: &ScalarField) -> Result<(), OutputError> {
    std::fs::write(path, solution_csv(metric, mesh, u)?).map_err(io_err(path))
}

/// Reads nodal values back; coordinates must match `mesh` exactly.
pub fn read_solution(path: &Path, mesh: &Mesh) -> Result<ScalarField, OutputError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    parse_solution(file, mesh)
}

pub fn parse_solution(reader: impl Read, mesh: &Mesh) -> Result<ScalarField, OutputError> {
    let dim = mesh.dim();
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let parse_err = |line: usize, message: String| OutputError::Parse { line, message };
    let expected = header(dim);
    let found = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if found.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(parse_err(1, format!("header `{}`, expected `{}`", found.iter().collect::<Vec<_>>().join(","), expected.join(","))));
    }
    let mut values = vec![f64::NAN; mesh.num_vertices()];
    let mut seen = 0;
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let num = |k: usize| -> Result<f64, OutputError> {
            record[k].trim().parse::<f64>().map_err(|e| parse_err(line, format!("column {}: {e}", k + 1)))
        };
        let v: usize = record[0]
            .trim()
            .parse()
            .map_err(|e| parse_err(line, format!("vertex id: {e}")))?;
        if v >= mesh.num_vertices() || !values[v].is_nan() {
            return Err(parse_err(line, format!("vertex id {v} out of range or repeated")));
        }
        let x = mesh.vertex(v);
        for k in 0..dim {
            if num(1 + k)? != x[k] {
                return Err(OutputError::Mismatch(format!("vertex {v} coordinates differ")));
            }
        }
        values[v] = num(dim + 1)?;
        seen += 1;
    }
    if seen != mesh.num_vertices() {
        return Err(OutputError::Mismatch(format!(
            "{seen} rows for {} vertices",
            mesh.num_vertices()
        )));
    }
    ScalarField::new(mesh, values).map_err(|e| OutputError::Core(Box::new(e)))
}

pub fn write_certificates(path: &Path, certificates: &[Certificate]) -> Result<(), OutputError> {
    let mut buf = Vec::new();
    write_report(certificates, &mut buf).map_err(io_err(path))?;
    std::fs::write(path, buf).map_err(io_err(path))
}

/// One human-readable line per certificate.
pub fn summarize(certificates: &[Certificate], mut w: impl Write) -> std::io::Result<()> {
    for c in certificates {
        let status = if !c.applicable {
            "N/A "
        } else if c.passed {
            "PASS"
        } else {
            "FAIL"
        };
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6e}"));
        writeln!(
            w,
            "{status} {:<18} value={} observed={} bound={} margin={}{}",
            c.name,
            fmt(c.trace.last().map(|t| t.value)),
            fmt(c.observed),
            fmt(c.bound),
            fmt(c.margin),
            if c.provisional { " (provisional)" } else { "" }
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_bit_identical() {
        let mesh = Mesh::disk(1.0, 0.25).unwrap();
        let metric = MetricField::euclidean(2).unwrap();
        let u = ScalarField::from_fn(&mesh, |x| (x[0] * 3.1).sin() / 7.0 + x[1] * 1e-17).unwrap();
        let text = solution_csv(&metric, &mesh, &u).unwrap();
        assert!(text.starts_with("vertex_id,x1,x2,u,W,d_gamma_boundary\n"));
        let back = parse_solution(text.as_bytes(), &mesh).unwrap();
        for (a, b) in u.values().iter().zip(back.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn interval_rows_and_errors() {
        let mesh = Mesh::interval(0.0, 1.0, 4).unwrap();
        let metric = MetricField::euclidean(1).unwrap();
        let u = ScalarField::from_fn(&mesh, |x| 0.5 * x[0]).unwrap();
        let text = solution_csv(&metric, &mesh, &u).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows.len(), 6);
        let w: f64 = rows[3].split(',').nth(3).unwrap().parse().unwrap();
        assert!((w - 1.25f64.sqrt()).abs() < 1e-12);
        let d: f64 = rows[3].split(',').nth(4).unwrap().parse().unwrap();
        assert!((d - 0.5).abs() < 1e-12);
        let truncated: String = text.lines().take(4).collect::<Vec<_>>().join("\n");
        assert!(matches!(parse_solution(truncated.as_bytes(), &mesh), Err(OutputError::Mismatch(_))));
        let bad = text.replacen("0.25", "0.2x", 1);
        assert!(matches!(parse_solution(bad.as_bytes(), &mesh), Err(OutputError::Parse { .. })));
    }
}
