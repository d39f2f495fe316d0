//! CSV writers for fields, recovery curves and step diagnostics.
//!
//! Floats are written as `{:.16e}` (17 significant digits) so that values
//! read back are bitwise identical.

use std::io::Write;
use std::path::Path;

use hhoflow_core::basis::{cell_dim, CellBasis};
use hhoflow_core::hho::HybridField;
use hhoflow_core::mesh::Mesh;
use hhoflow_core::simulator::{RunReport, StepDiagnostics};

use crate::error::{io_error, Error, Result};

pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_error(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_error(path))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record(header).map_err(csv_error(path))?;
    for r in rows {
        w.write_record(&r).map_err(csv_error(path))?;
    }
    w.flush().map_err(io_error(path))
}

fn check_layout(field: &HybridField, mesh: &Mesh) -> Result<()> {
    if field.cells.len() != mesh.n_cells() * cell_dim(field.degree) {
        return Err(hhoflow_core::Error::LayoutMismatch(format!(
            "field of degree {} has {} cell coefficients for {} cells",
            field.degree,
            field.cells.len(),
            mesh.n_cells()
        ))
        .into());
    }
    Ok(())
}

/// Rows `x,y,cell,value`: the cell polynomial at the three vertices of each
/// sub-triangle (face endpoints, then centroid), cells and faces in mesh order.
pub fn field_rows(field: &HybridField, mesh: &Mesh) -> Result<Vec<Vec<String>>> {
    check_layout(field, mesh)?;
    let n = cell_dim(field.degree);
    let mut rows = Vec::new();
    for c in 0..mesh.n_cells() {
        let basis = CellBasis::for_cell(mesh, c, field.degree);
        let coeffs = &field.cells[c * n..(c + 1) * n];
        for st in mesh.subtriangles(c) {
            for p in st.vertices {
                rows.push(vec![fmt(p.x), fmt(p.y), c.to_string(), fmt(basis.eval_poly(coeffs, p))]);
            }
        }
    }
    Ok(rows)
}

pub fn write_field_csv(field: &HybridField, mesh: &Mesh, path: &Path) -> Result<()> {
    let rows = field_rows(field, mesh)?;
    write_csv(path, &["x", "y", "cell", "value"], rows.into_iter())
}

/// Rows `cell,index,px,py,centre_x,centre_y,scale,coefficient`. The cell
/// polynomial is `Σ coefficient ((x - centre_x)/scale)^px ((y - centre_y)/scale)^py`.
pub fn write_coefficients_csv(field: &HybridField, mesh: &Mesh, path: &Path) -> Result<()> {
    check_layout(field, mesh)?;
    let n = cell_dim(field.degree);
    let mut rows = Vec::with_capacity(field.cells.len());
    for (c, cell) in mesh.cells().iter().enumerate() {
        let basis = CellBasis::for_cell(mesh, c, field.degree);
        for (i, &(px, py)) in basis.exponents().iter().enumerate() {
            rows.push(vec![
                c.to_string(),
                i.to_string(),
                px.to_string(),
                py.to_string(),
                fmt(cell.centroid.x),
                fmt(cell.centroid.y),
                fmt(cell.diameter),
                fmt(field.cells[c * n + i]),
            ]);
        }
    }
    write_csv(
        path,
        &[
            "cell",
            "index",
            "px",
            "py",
            "centre_x",
            "centre_y",
            "scale",
            "coefficient",
        ],
        rows.into_iter(),
    )
}

pub fn write_recovery_series(report: &RunReport, path: &Path) -> Result<()> {
    write_csv(
        path,
        &["t_days", "recovery_fraction"],
        report.recovery.iter().map(|(t, r)| vec![fmt(*t), fmt(*r)]),
    )
}

pub const DIAGNOSTICS_HEADER: [&str; 12] = [
    "step",
    "time",
    "pressure_residual",
    "concentration_residual",
    "identity",
    "antisymmetry",
    "mass_balance",
    "energy_lhs",
    "energy_rhs",
    "energy_scale",
    "norm_sq",
    "wall_seconds",
];

fn diagnostics_row(d: &StepDiagnostics) -> Vec<String> {
    vec![
        d.step.to_string(),
        fmt(d.time),
        fmt(d.pressure_residual),
        fmt(d.concentration_residual),
        fmt(d.conservation.identity),
        fmt(d.conservation.antisymmetry),
        fmt(d.conservation.mass_balance),
        fmt(d.energy.lhs),
        fmt(d.energy.rhs),
        fmt(d.energy.scale),
        fmt(d.norm_sq),
        d.wall_seconds.map(fmt).unwrap_or_default(),
    ]
}

pub fn write_diagnostics(report: &RunReport, path: &Path) -> Result<()> {
    write_csv(path, &DIAGNOSTICS_HEADER, report.steps.iter().map(diagnostics_row))
}

/// Writes `summary.txt` style key/value lines.
pub fn write_summary(lines: &[(&str, String)], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(io_error(path))?;
    for (k, v) in lines {
        writeln!(f, "{k} = {v}").map_err(io_error(path))?;
    }
    Ok(())
}
