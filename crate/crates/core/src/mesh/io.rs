//! Plain-text mesh format and legacy VTK export.
//!
//! ```text
//! VERTICES <n> <dim>
//! <x1> [<x2>]            # n lines
//! CELLS <m>
//! <i> <j> [<k>]          # m lines, 0-based, counter-clockwise
//! BOUNDARY <b>
//! <i> [<j>] <tag>        # b lines
//! ```
//!
//! Blank lines and text after `#` are ignored. Floats are written with
//! shortest round-trip formatting.

use std::io::{BufRead, Write};

use super::{Mesh, MeshError, ScalarField};

struct Lines<R> {
    inner: std::io::Lines<R>,
    number: usize,
}

impl<R: BufRead> Lines<R> {
    fn next_record(&mut self) -> Result<Option<(usize, Vec<String>)>, MeshError> {
        for line in self.inner.by_ref() {
            self.number += 1;
            let line = line?;
            let body = line.split('#').next().unwrap_or("");
            let fields: Vec<String> = body.split_whitespace().map(str::to_owned).collect();
            if !fields.is_empty() {
                return Ok(Some((self.number, fields)));
            }
        }
        Ok(None)
    }

    fn expect_record(&mut self, what: &str) -> Result<(usize, Vec<String>), MeshError> {
        self.next_record()?.ok_or_else(|| MeshError::Parse {
            line: self.number,
            message: format!("unexpected end of file, expected {what}"),
        })
    }
}

fn parse_num<T: std::str::FromStr>(text: &str, line: usize) -> Result<T, MeshError> {
    text.parse().map_err(|_| MeshError::Parse {
        line,
        message: format!("cannot parse `{text}`"),
    })
}

fn header(rec: (usize, Vec<String>), name: &str, args: usize) -> Result<Vec<usize>, MeshError> {
    let (line, fields) = rec;
    if fields[0] != name || fields.len() != args + 1 {
        return Err(MeshError::Parse {
            line,
            message: format!("expected `{name}` header with {args} count(s)"),
        });
    }
    fields[1..].iter().map(|f| parse_num(f, line)).collect()
}

fn record(rec: &(usize, Vec<String>), arity: usize) -> Result<(), MeshError> {
    if rec.1.len() != arity {
        return Err(MeshError::Parse {
            line: rec.0,
            message: format!("expected {arity} fields, found {}", rec.1.len()),
        });
    }
    Ok(())
}

impl Mesh {
    pub fn read_text(reader: impl BufRead) -> Result<Mesh, MeshError> {
        let mut lines = Lines {
            inner: reader.lines(),
            number: 0,
        };
        let h = header(lines.expect_record("VERTICES")?, "VERTICES", 2)?;
        let (nv, dim) = (h[0], h[1]);
        if dim != 1 && dim != 2 {
            return Err(MeshError::Parse {
                line: lines.number,
                message: format!("dimension must be 1 or 2, got {dim}"),
            });
        }
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let rec = lines.expect_record("vertex")?;
            record(&rec, dim)?;
            let x1 = parse_num(&rec.1[0], rec.0)?;
            let x2 = if dim == 2 { parse_num(&rec.1[1], rec.0)? } else { 0.0 };
            vertices.push([x1, x2]);
        }
        let m = header(lines.expect_record("CELLS")?, "CELLS", 1)?[0];
        let mut cells = Vec::with_capacity(m * (dim + 1));
        for _ in 0..m {
            let rec = lines.expect_record("cell")?;
            record(&rec, dim + 1)?;
            for f in &rec.1 {
                cells.push(parse_num(f, rec.0)?);
            }
        }
        let b = header(lines.expect_record("BOUNDARY")?, "BOUNDARY", 1)?[0];
        let (mut facets, mut tags) = (Vec::new(), Vec::new());
        for _ in 0..b {
            let rec = lines.expect_record("boundary facet")?;
            record(&rec, dim + 1)?;
            for f in &rec.1[..dim] {
                facets.push(parse_num(f, rec.0)?);
            }
            tags.push(parse_num(&rec.1[dim], rec.0)?);
        }
        if let Some((line, _)) = lines.next_record()? {
            return Err(MeshError::Parse {
                line,
                message: "trailing content".into(),
            });
        }
        Mesh::new(dim, vertices, cells, facets, tags)
    }

    pub fn write_text(&self, mut w: impl Write) -> Result<(), MeshError> {
        writeln!(w, "VERTICES {} {}", self.num_vertices(), self.dim())?;
        for p in self.vertices() {
            if self.dim() == 1 {
                writeln!(w, "{}", p[0])?;
            } else {
                writeln!(w, "{} {}", p[0], p[1])?;
            }
        }
        writeln!(w, "CELLS {}", self.num_cells())?;
        for c in 0..self.num_cells() {
            let ids: Vec<String> = self.cell(c).iter().map(usize::to_string).collect();
            writeln!(w, "{}", ids.join(" "))?;
        }
        writeln!(w, "BOUNDARY {}", self.num_facets())?;
        for f in 0..self.num_facets() {
            let ids: Vec<String> = self.facet(f).iter().map(usize::to_string).collect();
            writeln!(w, "{} {}", ids.join(" "), self.facet_tag(f))?;
        }
        Ok(())
    }

    /// Legacy ASCII VTK unstructured grid with point-data fields.
    pub fn write_vtk(&self, mut w: impl Write, fields: &[(&str, &ScalarField)]) -> Result<(), MeshError> {
        for (name, field) in fields {
            if field.len() != self.num_vertices() {
                return Err(MeshError::FieldSize {
                    expected: self.num_vertices(),
                    found: field.len(),
                });
            }
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(MeshError::InvalidInput(format!("field name `{name}`")));
            }
        }
        writeln!(w, "# vtk DataFile Version 3.0")?;
        writeln!(w, "capillary graph")?;
        writeln!(w, "ASCII")?;
        writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
        writeln!(w, "POINTS {} double", self.num_vertices())?;
        for p in self.vertices() {
            writeln!(w, "{} {} 0", p[0], p[1])?;
        }
        let k = self.dim() + 1;
        writeln!(w, "CELLS {} {}", self.num_cells(), self.num_cells() * (k + 1))?;
        for c in 0..self.num_cells() {
            let ids: Vec<String> = self.cell(c).iter().map(usize::to_string).collect();
            writeln!(w, "{k} {}", ids.join(" "))?;
        }
        writeln!(w, "CELL_TYPES {}", self.num_cells())?;
        let cell_type = if self.dim() == 1 { 3 } else { 5 };
        for _ in 0..self.num_cells() {
            writeln!(w, "{cell_type}")?;
        }
        if !fields.is_empty() {
            writeln!(w, "POINT_DATA {}", self.num_vertices())?;
            for (name, field) in fields {
                writeln!(w, "SCALARS {name} double 1")?;
                writeln!(w, "LOOKUP_TABLE default")?;
                for v in field.values() {
                    writeln!(w, "{v}")?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_is_exact() {
        for mesh in [Mesh::disk(1.0, 0.3).unwrap(), Mesh::interval(-1.0, 2.0, 7).unwrap()] {
            let mut buf = Vec::new();
            mesh.write_text(&mut buf).unwrap();
            let back = Mesh::read_text(buf.as_slice()).unwrap();
            assert_eq!(back.vertices(), mesh.vertices());
            assert_eq!(back.num_cells(), mesh.num_cells());
            assert_eq!(back.num_facets(), mesh.num_facets());
            for c in 0..mesh.num_cells() {
                assert_eq!(back.cell(c), mesh.cell(c));
            }
        }
    }

    #[test]
    fn parse_errors_name_the_line() {
        let text = "VERTICES 3 2\n0 0\n1 0\n0 x\nCELLS 1\n0 1 2\nBOUNDARY 3\n0 1 0\n1 2 0\n2 0 0\n";
        match Mesh::read_text(text.as_bytes()) {
            Err(MeshError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        let text = "# triangle\nVERTICES 3 2\n0 0\n1 0\n0 1\nCELLS 1\n0 1 2\nBOUNDARY 3\n0 1 0\n1 2 0\n2 0 7\n";
        let mesh = Mesh::read_text(text.as_bytes()).unwrap();
        assert_eq!(mesh.boundary_tags(), vec![0, 7]);
    }

    #[test]
    fn vtk_has_point_data() {
        let mesh = Mesh::interval(0.0, 1.0, 3).unwrap();
        let u = ScalarField::from_fn(&mesh, |p| p[0]).unwrap();
        let mut buf = Vec::new();
        mesh.write_vtk(&mut buf, &[("u", &u)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("POINT_DATA 4"));
        assert!(text.contains("SCALARS u double 1"));
        assert!(text.contains("CELL_TYPES 3"));
    }
}
