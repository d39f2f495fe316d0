//! The `polymesh2d 1` text format.
//!
//! ```text
//! polymesh2d 1
//! vertices 4
//! 0 0
//! 1 0
//! 1 1
//! 0 1
//! cells 1
//! 0 1 2 3
//! ```
//!
//! Vertex indices are zero-based and cells are listed counter-clockwise.
//! Blank lines and text after `#` are ignored. Faces are derived on load.

use std::fmt::Write as _;
use std::path::Path;

use hhoflow_core::mesh::Mesh;
use hhoflow_core::Point2;

use crate::error::{io_error, Error, Result};

pub const HEADER: &str = "polymesh2d 1";

/// Non-empty lines with their 1-based line numbers, comments stripped.
pub(crate) fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
}

pub(crate) struct Cursor<'a, I: Iterator<Item = (usize, &'a str)>> {
    lines: std::iter::Peekable<I>,
    source: &'a str,
    last_line: usize,
}

impl<'a, I: Iterator<Item = (usize, &'a str)>> Cursor<'a, I> {
    pub(crate) fn new(lines: I, source: &'a str) -> Self {
        Cursor {
            lines: lines.peekable(),
            source,
            last_line: 0,
        }
    }

    pub(crate) fn error(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            source_name: self.source.to_string(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        match self.lines.next() {
            Some(l) => {
                self.last_line = l.0;
                Ok(l)
            }
            None => Err(self.error(self.last_line + 1, format!("unexpected end of file, expected {what}"))),
        }
    }

    pub(crate) fn peek(&mut self) -> Option<&(usize, &'a str)> {
        self.lines.peek()
    }

    /// A line of the form `<keyword> <count>`.
    pub(crate) fn keyword_count(&mut self, keyword: &str) -> Result<usize> {
        let (line, text) = self.next(keyword)?;
        let mut it = text.split_whitespace();
        if it.next() != Some(keyword) {
            return Err(self.error(line, format!("expected `{keyword} <count>`, found `{text}`")));
        }
        let n = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.error(line, format!("missing or invalid count after `{keyword}`")))?;
        if it.next().is_some() {
            return Err(self.error(line, "trailing tokens"));
        }
        Ok(n)
    }
}

pub(crate) fn parse_numbers<T: std::str::FromStr>(text: &str) -> Option<Vec<T>> {
    text.split_whitespace().map(|t| t.parse().ok()).collect()
}

/// Parses a mesh file body; `source` names it in error messages.
pub fn parse_mesh(text: &str, source: &str) -> Result<Mesh> {
    let mut cur = Cursor::new(content_lines(text), source);
    let (line, header) = cur.next("header")?;
    if header.split_whitespace().collect::<Vec<_>>() != ["polymesh2d", "1"] {
        return Err(cur.error(line, format!("expected `{HEADER}`, found `{header}`")));
    }
    let nv = cur.keyword_count("vertices")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (line, text) = cur.next("a vertex")?;
        match parse_numbers::<f64>(text).as_deref() {
            Some(&[x, y]) if x.is_finite() && y.is_finite() => vertices.push(Point2::new(x, y)),
            _ => return Err(cur.error(line, format!("expected two coordinates, found `{text}`"))),
        }
    }
    let nc = cur.keyword_count("cells")?;
    let mut cells = Vec::with_capacity(nc);
    for _ in 0..nc {
        let (line, text) = cur.next("a cell")?;
        let ids = parse_numbers::<usize>(text)
            .ok_or_else(|| cur.error(line, format!("expected vertex indices, found `{text}`")))?;
        if ids.len() < 3 {
            return Err(cur.error(line, "a cell needs at least three vertices"));
        }
        if let Some(i) = ids.iter().find(|i| **i >= nv) {
            return Err(cur.error(line, format!("vertex index {i} out of range (0..{nv})")));
        }
        cells.push(ids);
    }
    if let Some((line, text)) = cur.peek().copied() {
        return Err(cur.error(line, format!("unexpected content `{text}`")));
    }
    Ok(Mesh::from_polygons(vertices, cells)?)
}

pub fn read_mesh(path: &Path) -> Result<Mesh> {
    let text = std::fs::read_to_string(path).map_err(io_error(path))?;
    parse_mesh(&text, &path.display().to_string())
}

/// Serialises the vertices and cell polygons of a mesh.
pub fn format_mesh(mesh: &Mesh) -> String {
    format_polygons(mesh.vertices(), mesh.cells().iter().map(|c| c.vertices.as_slice()))
}

pub(crate) fn format_polygons<'a>(
    vertices: &[Point2<f64>],
    cells: impl ExactSizeIterator<Item = &'a [usize]>,
) -> String {
    let mut out = String::new();
    writeln!(out, "{HEADER}").unwrap();
    writeln!(out, "vertices {}", vertices.len()).unwrap();
    for v in vertices {
        writeln!(out, "{:?} {:?}", v.x, v.y).unwrap();
    }
    writeln!(out, "cells {}", cells.len()).unwrap();
    for c in cells {
        let ids: Vec<String> = c.iter().map(|i| i.to_string()).collect();
        writeln!(out, "{}", ids.join(" ")).unwrap();
    }
    out
}

pub fn write_mesh(mesh: &Mesh, path: &Path) -> Result<()> {
    std::fs::write(path, format_mesh(mesh)).map_err(io_error(path))
}
