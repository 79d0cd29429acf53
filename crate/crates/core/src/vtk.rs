//! Legacy ASCII VTK output of tetrahedral meshes with nodal fields.

use std::io::Write;

use crate::error::{Error, Result};
use crate::mesh::Mesh;

const VTK_TETRA: u8 = 10;

pub enum PointField<'a> {
    Scalar(&'a str, &'a [f64]),
    /// Interleaved `x, y, z` components.
    Vector(&'a str, &'a [f64]),
}

pub fn write_vtk<W: Write>(mut w: W, mesh: &Mesh, title: &str, fields: &[PointField<'_>]) -> Result<()> {
    let nn = mesh.num_nodes();
    for f in fields {
        let (name, len, want) = match f {
            PointField::Scalar(n, v) => (n, v.len(), nn),
            PointField::Vector(n, v) => (n, v.len(), 3 * nn),
        };
        if len != want {
            return Err(Error::InvalidInput(format!("field `{name}` has {len} values, expected {want}")));
        }
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::InvalidInput(format!("invalid VTK field name `{name}`")));
        }
    }
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{}", title.lines().next().unwrap_or(""))?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {nn} double")?;
    for x in &mesh.nodes {
        writeln!(w, "{:.12e} {:.12e} {:.12e}", x[0], x[1], x[2])?;
    }
    let ne = mesh.num_elements();
    writeln!(w, "CELLS {ne} {}", 5 * ne)?;
    for t in &mesh.tets {
        writeln!(w, "4 {} {} {} {}", t[0], t[1], t[2], t[3])?;
    }
    writeln!(w, "CELL_TYPES {ne}")?;
    for _ in 0..ne {
        writeln!(w, "{VTK_TETRA}")?;
    }
    if !fields.is_empty() {
        writeln!(w, "POINT_DATA {nn}")?;
    }
    for f in fields {
        match f {
            PointField::Scalar(name, v) => {
                writeln!(w, "SCALARS {name} double 1")?;
                writeln!(w, "LOOKUP_TABLE default")?;
                for x in v.iter() {
                    writeln!(w, "{x:.12e}")?;
                }
            }
            PointField::Vector(name, v) => {
                writeln!(w, "VECTORS {name} double")?;
                for c in v.chunks(3) {
                    writeln!(w, "{:.12e} {:.12e} {:.12e}", c[0], c[1], c[2])?;
                }
            }
        }
    }
    Ok(())
}
