//! Polygonal meshes of a rectangular domain.
//!
//! Faces are derived from the cell boundaries. A face stores the normal that
//! points out of the lowest-indexed adjacent cell; the other cell sees its
//! negation through [`CellFace::sign`].

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use crate::math;
use crate::{Error, Point2, Result, Vector2};

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub min: Point2<f64>,
    pub max: Point2<f64>,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BBox {
            min: Point2::new(x0, y0),
            max: Point2::new(x1, y1),
        }
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: &Point2<f64>, tol: f64) -> bool {
        p.x >= self.min.x - tol && p.x <= self.max.x + tol && p.y >= self.min.y - tol && p.y <= self.max.y + tol
    }

    fn on_boundary(&self, p: &Point2<f64>, tol: f64) -> bool {
        self.contains(p, tol)
            && (math::abs(p.x - self.min.x) <= tol
                || math::abs(p.x - self.max.x) <= tol
                || math::abs(p.y - self.min.y) <= tol
                || math::abs(p.y - self.max.y) <= tol)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    /// Polygon vertices, counter-clockwise.
    pub vertices: Vec<usize>,
    pub centroid: Point2<f64>,
    pub measure: f64,
    pub diameter: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Face {
    pub vertices: [usize; 2],
    pub endpoints: [Point2<f64>; 2],
    pub midpoint: Point2<f64>,
    pub measure: f64,
    /// Unit normal, outward from the lowest-indexed adjacent cell.
    pub normal: Vector2<f64>,
}

impl Face {
    /// In two dimensions the diameter of a face is its length.
    pub fn diameter(&self) -> f64 {
        self.measure
    }
}

/// A face seen from one of its cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellFace {
    pub face: usize,
    /// `+1.0` if the stored face normal points out of this cell, `-1.0` otherwise.
    pub sign: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaceCells {
    pub owner: usize,
    pub neighbour: Option<usize>,
}

impl FaceCells {
    pub fn is_boundary(&self) -> bool {
        self.neighbour.is_none()
    }
}

/// Triangle `K_TF` spanned by a face and the centroid of one of its cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubTriangle {
    pub cell: usize,
    pub face: usize,
    pub vertices: [Point2<f64>; 3],
}

impl SubTriangle {
    pub fn area(&self) -> f64 {
        signed_triangle_area(&self.vertices)
    }
}

pub(crate) fn signed_triangle_area(v: &[Point2<f64>; 3]) -> f64 {
    0.5 * ((v[1].x - v[0].x) * (v[2].y - v[0].y) - (v[2].x - v[0].x) * (v[1].y - v[0].y))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Point2<f64>>,
    cells: Vec<Cell>,
    faces: Vec<Face>,
    cell_faces: Vec<Vec<CellFace>>,
    face_cells: Vec<FaceCells>,
    bbox: BBox,
}

fn polygon_geometry(pts: &[Point2<f64>]) -> (f64, Point2<f64>) {
    // Shoelace formula, relative to the first vertex to limit cancellation.
    let o = pts[0];
    let mut area = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for i in 0..pts.len() {
        let a = pts[i] - o;
        let b = pts[(i + 1) % pts.len()] - o;
        let cross = a.x * b.y - b.x * a.y;
        area += cross;
        cx += (a.x + b.x) * cross;
        cy += (a.y + b.y) * cross;
    }
    area *= 0.5;
    if area == 0.0 {
        return (0.0, o);
    }
    (area, Point2::new(o.x + cx / (6.0 * area), o.y + cy / (6.0 * area)))
}

impl Mesh {
    /// Builds a mesh from vertex coordinates and polygonal cells.
    ///
    /// Clockwise polygons are reoriented. Faces are numbered in order of first
    /// appearance when walking the cells by index.
    pub fn from_polygons(vertices: Vec<Point2<f64>>, polygons: Vec<Vec<usize>>) -> Result<Self> {
        if polygons.is_empty() {
            return Err(Error::InvalidArgument("mesh has no cells".into()));
        }
        let mut bbox = BBox {
            min: Point2::new(f64::INFINITY, f64::INFINITY),
            max: Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        };
        for v in &vertices {
            if !(v.x.is_finite() && v.y.is_finite()) {
                return Err(Error::InvalidArgument("non-finite vertex coordinate".into()));
            }
            bbox.min.x = bbox.min.x.min(v.x);
            bbox.min.y = bbox.min.y.min(v.y);
            bbox.max.x = bbox.max.x.max(v.x);
            bbox.max.y = bbox.max.y.max(v.y);
        }
        if !(bbox.width() > 0.0 && bbox.height() > 0.0) {
            return Err(Error::InvalidArgument("degenerate domain".into()));
        }

        let mut cells = Vec::with_capacity(polygons.len());
        let mut faces: Vec<Face> = Vec::new();
        let mut cell_faces = Vec::with_capacity(polygons.len());
        let mut face_cells: Vec<FaceCells> = Vec::new();
        let mut face_count: Vec<usize> = Vec::new();
        let mut edge_index: BTreeMap<(usize, usize), usize> = BTreeMap::new();

        for (c, poly) in polygons.into_iter().enumerate() {
            if poly.len() < 3 {
                return Err(Error::InvalidArgument(format!("cell {c} has {} vertices", poly.len())));
            }
            if let Some(&bad) = poly.iter().find(|&&v| v >= vertices.len()) {
                return Err(Error::InvalidArgument(format!(
                    "cell {c} references unknown vertex {bad}"
                )));
            }
            let pts: Vec<_> = poly.iter().map(|&v| vertices[v]).collect();
            let (signed, centroid) = polygon_geometry(&pts);
            let mut poly = poly;
            if signed < 0.0 {
                poly.reverse();
            } else if signed == 0.0 {
                return Err(Error::InvalidArgument(format!("cell {c} has zero area")));
            }
            let mut diameter: f64 = 0.0;
            for i in 0..poly.len() {
                for j in i + 1..poly.len() {
                    diameter = diameter.max((vertices[poly[i]] - vertices[poly[j]]).norm());
                }
            }

            let mut local = Vec::with_capacity(poly.len());
            for i in 0..poly.len() {
                let a = poly[i];
                let b = poly[(i + 1) % poly.len()];
                if a == b {
                    return Err(Error::InvalidArgument(format!("cell {c} repeats vertex {a}")));
                }
                let key = (a.min(b), a.max(b));
                match edge_index.get(&key) {
                    Some(&f) => {
                        face_count[f] += 1;
                        if face_count[f] > 2 {
                            return Err(Error::Topology {
                                face: f,
                                detail: format!("borders {} cells", face_count[f]),
                            });
                        }
                        if face_cells[f].owner == c {
                            return Err(Error::Topology {
                                face: f,
                                detail: format!("appears twice in cell {c}"),
                            });
                        }
                        face_cells[f].neighbour = Some(c);
                        local.push(CellFace { face: f, sign: -1.0 });
                    }
                    None => {
                        let f = faces.len();
                        edge_index.insert(key, f);
                        let (pa, pb) = (vertices[a], vertices[b]);
                        let d = pb - pa;
                        let len = math::hypot(d.x, d.y);
                        if len == 0.0 {
                            return Err(Error::InvalidArgument(format!("cell {c} has a zero-length edge")));
                        }
                        faces.push(Face {
                            vertices: [a, b],
                            endpoints: [pa, pb],
                            midpoint: Point2::new(0.5 * (pa.x + pb.x), 0.5 * (pa.y + pb.y)),
                            measure: len,
                            normal: Vector2::new(d.y / len, -d.x / len),
                        });
                        face_cells.push(FaceCells {
                            owner: c,
                            neighbour: None,
                        });
                        face_count.push(1);
                        local.push(CellFace { face: f, sign: 1.0 });
                    }
                }
            }
            cells.push(Cell {
                vertices: poly,
                centroid,
                measure: math::abs(signed),
                diameter,
            });
            cell_faces.push(local);
        }

        let mesh = Mesh {
            vertices,
            cells,
            faces,
            cell_faces,
            face_cells,
            bbox,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    fn validate(&self) -> Result<()> {
        let scale = self.bbox.width().max(self.bbox.height());
        let tol = 1e-10 * scale;
        for (f, fc) in self.face_cells.iter().enumerate() {
            if fc.is_boundary() {
                let face = &self.faces[f];
                let on_side = |p: &Point2<f64>| self.bbox.on_boundary(p, tol);
                let same_side = (math::abs(face.endpoints[0].x - face.endpoints[1].x) <= tol
                    && (math::abs(face.endpoints[0].x - self.bbox.min.x) <= tol
                        || math::abs(face.endpoints[0].x - self.bbox.max.x) <= tol))
                    || (math::abs(face.endpoints[0].y - face.endpoints[1].y) <= tol
                        && (math::abs(face.endpoints[0].y - self.bbox.min.y) <= tol
                            || math::abs(face.endpoints[0].y - self.bbox.max.y) <= tol));
                if !(on_side(&face.endpoints[0]) && on_side(&face.endpoints[1]) && same_side) {
                    return Err(Error::Topology {
                        face: f,
                        detail: "borders a single cell but is not on the domain boundary".into(),
                    });
                }
            }
        }
        for c in 0..self.cells.len() {
            for (i, t) in self.subtriangles(c).enumerate() {
                let area = t.area();
                if !(area > 0.0) {
                    return Err(Error::DegenerateCell {
                        cell: c,
                        local_face: i,
                        area,
                    });
                }
            }
        }
        let total: f64 = self.cells.iter().map(|c| c.measure).sum();
        if math::abs(total - self.bbox.area()) > 1e-10 * self.bbox.area() {
            return Err(Error::InvalidArgument(format!(
                "cells cover {total} but the domain measures {}",
                self.bbox.area()
            )));
        }
        Ok(())
    }

    pub fn vertices(&self) -> &[Point2<f64>] {
        &self.vertices
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn cell(&self, c: usize) -> &Cell {
        &self.cells[c]
    }

    pub fn face(&self, f: usize) -> &Face {
        &self.faces[f]
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    /// Faces of a cell in polygon order.
    pub fn cell_faces(&self, c: usize) -> &[CellFace] {
        &self.cell_faces[c]
    }

    pub fn face_cells(&self, f: usize) -> FaceCells {
        self.face_cells[f]
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn measure(&self) -> f64 {
        self.cells.iter().map(|c| c.measure).sum()
    }

    /// Outward unit normal of face `local` of cell `c`.
    pub fn outward_normal(&self, c: usize, local: usize) -> Vector2<f64> {
        let cf = self.cell_faces[c][local];
        self.faces[cf.face].normal * cf.sign
    }

    pub fn perimeter(&self, c: usize) -> f64 {
        self.cell_faces[c].iter().map(|cf| self.faces[cf.face].measure).sum()
    }

    /// Mesh size: the largest ratio of cell area to cell perimeter.
    pub fn mesh_size(&self) -> f64 {
        (0..self.n_cells())
            .map(|c| self.cells[c].measure / self.perimeter(c))
            .fold(0.0, f64::max)
    }

    /// One sub-triangle per face of the cell, in the cell's face order.
    pub fn subtriangles(&self, c: usize) -> impl Iterator<Item = SubTriangle> + '_ {
        let centroid = self.cells[c].centroid;
        self.cell_faces[c].iter().map(move |cf| {
            let f = &self.faces[cf.face];
            let (a, b) = if cf.sign > 0.0 {
                (f.endpoints[0], f.endpoints[1])
            } else {
                (f.endpoints[1], f.endpoints[0])
            };
            SubTriangle {
                cell: c,
                face: cf.face,
                vertices: [a, b, centroid],
            }
        })
    }

    /// Checked variant of [`Mesh::subtriangles`].
    pub fn subtriangulate(&self, c: usize) -> Result<Vec<SubTriangle>> {
        if c >= self.n_cells() {
            return Err(Error::InvalidArgument(format!("no cell {c}")));
        }
        let tris: Vec<_> = self.subtriangles(c).collect();
        for (i, t) in tris.iter().enumerate() {
            let area = t.area();
            if !(area > 0.0) {
                return Err(Error::DegenerateCell {
                    cell: c,
                    local_face: i,
                    area,
                });
            }
        }
        Ok(tris)
    }

    /// Smallest-index cell whose closure contains `p`.
    pub fn locate_cell(&self, p: Point2<f64>) -> Result<usize> {
        let scale = self.bbox.width().max(self.bbox.height());
        if !self.bbox.contains(&p, 1e-12 * scale) {
            return Err(Error::OutOfDomain { x: p.x, y: p.y });
        }
        let tol = 1e-12;
        for c in 0..self.n_cells() {
            for t in self.subtriangles(c) {
                if point_in_triangle(&t.vertices, &p, tol) {
                    return Ok(c);
                }
            }
        }
        Err(Error::OutOfDomain { x: p.x, y: p.y })
    }
}

fn point_in_triangle(v: &[Point2<f64>; 3], p: &Point2<f64>, tol: f64) -> bool {
    let area = signed_triangle_area(v);
    let l0 = signed_triangle_area(&[*p, v[1], v[2]]) / area;
    let l1 = signed_triangle_area(&[v[0], *p, v[2]]) / area;
    let l2 = 1.0 - l0 - l1;
    l0 >= -tol && l1 >= -tol && l2 >= -tol
}

/// Uniform `nx` by `ny` grid of rectangles; cell `(i, j)` has index `j * nx + i`.
pub fn build_cartesian_mesh(nx: usize, ny: usize, bbox: BBox) -> Result<Mesh> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidArgument(format!(
            "cartesian mesh needs positive counts, got {nx}x{ny}"
        )));
    }
    if !(bbox.width() > 0.0 && bbox.height() > 0.0) {
        return Err(Error::InvalidArgument("degenerate bounding box".into()));
    }
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        // Pin the last row/column to the box edges exactly.
        let y = if j == ny {
            bbox.max.y
        } else {
            bbox.min.y + bbox.height() * j as f64 / ny as f64
        };
        for i in 0..=nx {
            let x = if i == nx {
                bbox.max.x
            } else {
                bbox.min.x + bbox.width() * i as f64 / nx as f64
            };
            vertices.push(Point2::new(x, y));
        }
    }
    let v = |i: usize, j: usize| j * (nx + 1) + i;
    let mut cells = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            cells.push(alloc::vec![v(i, j), v(i + 1, j), v(i + 1, j + 1), v(i, j + 1)]);
        }
    }
    Mesh::from_polygons(vertices, cells)
}
