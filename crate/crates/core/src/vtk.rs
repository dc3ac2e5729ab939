//! Legacy ASCII VTK output of deformed surfaces.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fem::Deformation;
use crate::mesh::TriMesh;

/// VTK cell type id of a linear triangle.
const VTK_TRIANGLE: u8 = 5;

/// Renders the deformed surface. Output depends only on the inputs, so it is
/// byte-reproducible.
pub fn surface_to_string(y: &Deformation, mesh: &TriMesh) -> Result<String> {
    if y.num_vertices() != mesh.num_vertices() || y.dofs().len() % 3 != 0 {
        return Err(Error::InvalidArgument("deformation does not match mesh".into()));
    }
    let nv = mesh.num_vertices();
    let nt = mesh.num_triangles();
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\n");
    s.push_str("deformed membrane\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    writeln!(s, "POINTS {nv} double").unwrap();
    for v in 0..nv {
        let [x, y_, z] = y.point(v);
        writeln!(s, "{x} {y_} {z}").unwrap();
    }
    writeln!(s, "CELLS {nt} {}", 4 * nt).unwrap();
    for [a, b, c] in mesh.triangles() {
        writeln!(s, "3 {a} {b} {c}").unwrap();
    }
    writeln!(s, "CELL_TYPES {nt}").unwrap();
    for _ in 0..nt {
        writeln!(s, "{VTK_TRIANGLE}").unwrap();
    }
    writeln!(s, "POINT_DATA {nv}").unwrap();
    s.push_str("SCALARS vertical_displacement double 1\nLOOKUP_TABLE default\n");
    for v in 0..nv {
        writeln!(s, "{}", y.point(v)[2]).unwrap();
    }
    Ok(s)
}

/// Writes the deformed surface to `path`.
pub fn export_surface(y: &Deformation, mesh: &TriMesh, path: &Path) -> Result<()> {
    let text = surface_to_string(y, mesh)?;
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Points and triangles read back from a file written by [`export_surface`].
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceData {
    pub points: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

/// Reads the subset of legacy VTK produced by this module.
pub fn read_surface<R: BufRead>(input: R) -> Result<SurfaceData> {
    let err = |message: String| Error::Parse {
        what: "vtk surface".into(),
        message,
    };
    let mut tokens = Vec::new();
    for line in input.lines() {
        let line = line.map_err(|e| Error::io("<vtk>", e))?;
        tokens.extend(line.split_whitespace().map(str::to_owned));
    }
    let find = |key: &str| tokens.iter().position(|t| t == key).ok_or_else(|| err(format!("missing {key} section")));
    let count = |i: usize| -> Result<usize> {
        tokens
            .get(i + 1)
            .ok_or_else(|| err("truncated header".into()))?
            .parse()
            .map_err(|e| err(format!("{e}")))
    };
    let num = |i: usize| -> Result<f64> {
        tokens
            .get(i)
            .ok_or_else(|| err("truncated data".into()))?
            .parse()
            .map_err(|e| err(format!("{e}")))
    };

    let p = find("POINTS")?;
    let np = count(p)?;
    let mut points = Vec::with_capacity(np);
    for k in 0..np {
        let base = p + 3 + 3 * k;
        points.push([num(base)?, num(base + 1)?, num(base + 2)?]);
    }
    let c = find("CELLS")?;
    let nc = count(c)?;
    let mut triangles = Vec::with_capacity(nc);
    for k in 0..nc {
        let base = c + 3 + 4 * k;
        if num(base)? != 3.0 {
            return Err(err(format!("cell {k} is not a triangle")));
        }
        let idx = |o: usize| -> Result<usize> {
            let v = num(base + o)?;
            if v < 0.0 || v.fract() != 0.0 || v as usize >= np {
                return Err(err(format!("bad vertex index {v} in cell {k}")));
            }
            Ok(v as usize)
        };
        triangles.push([idx(1)?, idx(2)?, idx(3)?]);
    }
    Ok(SurfaceData { points, triangles })
}
