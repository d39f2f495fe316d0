//! Conversion of FVCA5 benchmark mesh files to the `polymesh2d 1` format.
//!
//! The reader accepts the two layouts used by the benchmark: typed blocks
//! (`triangles`, `quadrangles`, `pentagons`, `hexagons`, each a count
//! followed by that many rows of vertex indices) and a generic `cells` block
//! whose rows start with the number of vertices. Indices are one-based.
//! Edge blocks (`edges of the boundary`, `all edges`) are skipped; the
//! `all edges` count, when present, is checked against the derived faces.

use hhoflow_core::mesh::{BBox, Mesh};
use hhoflow_core::Point2;

use crate::error::{Error, Result};
use crate::mesh_io::{content_lines, format_polygons, parse_numbers, Cursor};

/// Vertices and counter-clockwise polygons of a converted mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygons {
    pub vertices: Vec<Point2<f64>>,
    pub cells: Vec<Vec<usize>>,
    /// Edge count announced by the file, if any.
    pub edges: Option<usize>,
}

fn block_size(name: &str) -> Option<Option<usize>> {
    match name {
        "triangles" => Some(Some(3)),
        "quadrangles" => Some(Some(4)),
        "pentagons" => Some(Some(5)),
        "hexagons" => Some(Some(6)),
        "cells" => Some(None),
        _ => None,
    }
}

fn count<'a, I: Iterator<Item = (usize, &'a str)>>(cur: &mut Cursor<'a, I>, what: &str) -> Result<usize> {
    let (line, t) = cur.next(what)?;
    t.parse::<usize>()
        .map_err(|_| cur.error(line, format!("expected the number of {what}, found `{t}`")))
}

pub fn parse_fvca5(text: &str, source: &str) -> Result<Polygons> {
    let mut cur = Cursor::new(content_lines(text), source);
    let mut vertices: Option<Vec<Point2<f64>>> = None;
    let mut cells = Vec::new();
    let mut edges = None;
    while let Some(&(line, text)) = cur.peek() {
        cur.next("a block")?;
        let name = text.to_ascii_lowercase();
        if name == "vertices" {
            let n = count(&mut cur, "vertices")?;
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                let (line, t) = cur.next("a vertex")?;
                match parse_numbers::<f64>(t).as_deref() {
                    Some(&[x, y]) if x.is_finite() && y.is_finite() => v.push(Point2::new(x, y)),
                    _ => return Err(cur.error(line, format!("expected two coordinates, found `{t}`"))),
                }
            }
            vertices = Some(v);
        } else if let Some(size) = block_size(&name) {
            let nv = vertices
                .as_ref()
                .ok_or_else(|| cur.error(line, "cells listed before vertices"))?
                .len();
            let n = count(&mut cur, &name)?;
            for _ in 0..n {
                let (line, t) = cur.next("a cell")?;
                let mut ids = parse_numbers::<usize>(t)
                    .ok_or_else(|| cur.error(line, format!("expected vertex indices, found `{t}`")))?;
                if size.is_none() {
                    if ids.first().map(|m| *m + 1) != Some(ids.len()) {
                        return Err(cur.error(line, "cell row must start with its vertex count"));
                    }
                    ids.remove(0);
                }
                if ids.len() < 3 || size.is_some_and(|s| s != ids.len()) {
                    return Err(cur.error(line, format!("wrong number of vertices in {name} row")));
                }
                if ids.iter().any(|i| *i == 0 || *i > nv) {
                    return Err(cur.error(line, format!("vertex index out of range 1..={nv}")));
                }
                cells.push(ids.into_iter().map(|i| i - 1).collect());
            }
        } else if name.starts_with("edges") || name.starts_with("all edges") {
            let n = count(&mut cur, "edges")?;
            for _ in 0..n {
                cur.next("an edge")?;
            }
            if name.starts_with("all edges") {
                edges = Some(n);
            }
        } else {
            return Err(cur.error(line, format!("unknown block `{text}`")));
        }
    }
    let vertices = vertices.ok_or_else(|| cur.error(1, "no vertices block"))?;
    if cells.is_empty() {
        return Err(cur.error(1, "no cells"));
    }
    Ok(Polygons { vertices, cells, edges })
}

impl Polygons {
    /// Affine map of the vertex bounding box onto `target`.
    pub fn fit_to(&mut self, target: BBox) {
        let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            x0 = x0.min(v.x);
            y0 = y0.min(v.y);
            x1 = x1.max(v.x);
            y1 = y1.max(v.y);
        }
        for v in &mut self.vertices {
            v.x = target.min.x + (v.x - x0) / (x1 - x0) * target.width();
            v.y = target.min.y + (v.y - y0) / (y1 - y0) * target.height();
        }
    }

    /// Builds and validates the mesh, checking the announced edge count.
    pub fn to_mesh(&self) -> Result<Mesh> {
        let mesh = Mesh::from_polygons(self.vertices.clone(), self.cells.clone())?;
        if let Some(e) = self.edges {
            if e != mesh.n_faces() {
                return Err(Error::Config {
                    errors: vec![format!(
                        "file announces {e} edges but the cells define {}",
                        mesh.n_faces()
                    )],
                });
            }
        }
        Ok(mesh)
    }
}

/// Converts FVCA5 text to `polymesh2d 1` text, optionally rescaled.
pub fn convert(text: &str, source: &str, target: Option<BBox>) -> Result<String> {
    let mut p = parse_fvca5(text, source)?;
    if let Some(b) = target {
        p.fit_to(b);
    }
    let mesh = p.to_mesh()?;
    Ok(format_polygons(
        mesh.vertices(),
        mesh.cells().iter().map(|c| c.vertices.as_slice()),
    ))
}
