//! Writes the coarse non-Cartesian test meshes to `meshes/` in FVCA5 layout,
//! plus their `polymesh2d` conversions.
//!
//! These are stand-ins with the edge counts of the coarsest members of the
//! benchmark families (triangular 92, Kershaw 612, hexagonal 62), built on
//! the unit square; the converter rescales them to the reservoir.
//!
//! Usage: `cargo run -p hhoflow --example generate_meshes [out_dir]`

use std::fmt::Write as _;
use std::path::PathBuf;

use hhoflow::fvca5;
use hhoflow_core::mesh::{BBox, Mesh};
use hhoflow_core::Point2;

type Polygons = (Vec<Point2<f64>>, Vec<Vec<usize>>);
type Builder = fn() -> Polygons;

/// 4x4 squares: corner squares cut along a diagonal, the others fanned
/// around their centre.
fn triangular() -> Polygons {
    let n = 4;
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let mut v: Vec<Point2<f64>> = (0..=n)
        .flat_map(|j| (0..=n).map(move |i| Point2::new(i as f64 / n as f64, j as f64 / n as f64)))
        .collect();
    let mut cells = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            let corner = (i == 0 || i == n - 1) && (j == 0 || j == n - 1);
            if corner {
                // Cut away from the domain corner so no triangle has two boundary edges.
                if (i == 0) == (j == 0) {
                    cells.push(vec![a, b, d]);
                    cells.push(vec![b, c, d]);
                } else {
                    cells.push(vec![a, b, c]);
                    cells.push(vec![a, c, d]);
                }
            } else {
                let m = v.len();
                v.push(Point2::new((i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64));
                for (p, q) in [(a, b), (b, c), (c, d), (d, a)] {
                    cells.push(vec![p, q, m]);
                }
            }
        }
    }
    (v, cells)
}

/// 17x17 quadrilaterals with vertical grid lines bent by a triangle wave.
fn kershaw() -> Polygons {
    let n = 17;
    let tri = |x: f64| 1.0 - (1.0 - 4.0 * (x % 0.5)).abs();
    let mut v = Vec::new();
    for j in 0..=n {
        for i in 0..=n {
            let (x, eta) = (i as f64 / n as f64, j as f64 / n as f64);
            v.push(Point2::new(x, eta + 0.2 * tri(x) * 4.0 * eta * (1.0 - eta)));
        }
    }
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let cells = (0..n)
        .flat_map(|j| (0..n).map(move |i| vec![id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]))
        .collect();
    (v, cells)
}

/// Brick pattern of six rows whose shared horizontal lines zig-zag, giving
/// hexagons in the interior and pentagons/quadrilaterals along the boundary.
fn hexagonal() -> Polygons {
    let n = 3;
    let w = 1.0 / n as f64;
    let rows = ["O", "E", "O", "E", "O", "L"];
    let xs = |kind: &str| -> Vec<f64> {
        match kind {
            "E" => (0..=n).map(|i| i as f64 * w).collect(),
            "O" => std::iter::once(0.0)
                .chain((0..n).map(|i| 0.5 * w + i as f64 * w))
                .chain(std::iter::once(1.0))
                .collect(),
            _ => std::iter::once(0.0)
                .chain((0..n - 1).map(|i| 0.5 * w + i as f64 * w))
                .chain(std::iter::once(1.0))
                .collect(),
        }
    };
    let h = 1.0 / rows.len() as f64;
    let delta = h / 6.0;
    let same = |a: f64, b: f64| (a - b).abs() < 1e-12;
    // Vertices on each horizontal line, as (x, index) sorted by x.
    let mut v = Vec::new();
    let mut lines: Vec<Vec<(f64, usize)>> = Vec::new();
    for l in 0..=rows.len() {
        let below = if l > 0 { xs(rows[l - 1]) } else { vec![] };
        let above = if l < rows.len() { xs(rows[l]) } else { vec![] };
        let mut all: Vec<f64> = below.iter().chain(&above).copied().collect();
        all.sort_by(f64::total_cmp);
        all.dedup_by(|a, b| same(*a, *b));
        let mut line = Vec::new();
        for x in all {
            let in_below = below.iter().any(|b| same(*b, x));
            let in_above = above.iter().any(|a| same(*a, x));
            let shift = if in_below && in_above {
                0.0
            } else if in_below {
                -delta
            } else {
                delta
            };
            line.push((x, v.len()));
            v.push(Point2::new(x, l as f64 * h + shift));
        }
        lines.push(line);
    }
    let mut cells = Vec::new();
    for (r, kind) in rows.iter().enumerate() {
        let cuts = xs(kind);
        for c in cuts.windows(2) {
            let inside = |&&(x, _): &&(f64, usize)| x > c[0] - 1e-12 && x < c[1] + 1e-12;
            let mut poly: Vec<usize> = lines[r].iter().filter(inside).map(|p| p.1).collect();
            poly.extend(lines[r + 1].iter().rev().filter(inside).map(|p| p.1));
            cells.push(poly);
        }
    }
    (v, cells)
}

/// FVCA5 text: typed cell blocks, then boundary and full edge lists.
fn fvca5_text((v, cells): &Polygons, mesh: &Mesh) -> String {
    let mut out = String::new();
    writeln!(out, "vertices\n{}", v.len()).unwrap();
    for p in v {
        writeln!(out, "{:?} {:?}", p.x, p.y).unwrap();
    }
    for (name, size) in [("triangles", 3), ("quadrangles", 4), ("pentagons", 5), ("hexagons", 6)] {
        let block: Vec<&Vec<usize>> = cells.iter().filter(|c| c.len() == size).collect();
        writeln!(out, "{name}\n{}", block.len()).unwrap();
        for c in block {
            let ids: Vec<String> = c.iter().map(|i| (i + 1).to_string()).collect();
            writeln!(out, "{}", ids.join(" ")).unwrap();
        }
    }
    let edge = |f: usize| {
        let face = mesh.face(f);
        let fc = mesh.face_cells(f);
        format!(
            "{} {} {} {}",
            face.vertices[0] + 1,
            face.vertices[1] + 1,
            fc.owner + 1,
            fc.neighbour.map_or(0, |n| n + 1)
        )
    };
    let boundary: Vec<usize> = (0..mesh.n_faces())
        .filter(|f| mesh.face_cells(*f).is_boundary())
        .collect();
    writeln!(out, "edges of the boundary\n{}", boundary.len()).unwrap();
    for f in boundary {
        writeln!(out, "{}", edge(f)).unwrap();
    }
    writeln!(out, "all edges\n{}", mesh.n_faces()).unwrap();
    for f in 0..mesh.n_faces() {
        writeln!(out, "{}", edge(f)).unwrap();
    }
    out
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "meshes".into()));
    std::fs::create_dir_all(&dir)?;
    let families: [(&str, Builder); 3] = [
        ("triangular_1", triangular),
        ("kershaw_1", kershaw),
        ("hexagonal_1", hexagonal),
    ];
    for (name, build) in families {
        // Cells are generated in the order the typed blocks will list them.
        let (v, mut cells) = build();
        cells.sort_by_key(|c| c.len());
        let polys = (v, cells);
        let mesh = Mesh::from_polygons(polys.0.clone(), polys.1.clone())?;
        let text = fvca5_text(&polys, &mesh);
        let fvca = dir.join(format!("{name}.typ1"));
        std::fs::write(&fvca, &text)?;
        let converted = fvca5::convert(
            &text,
            &fvca.display().to_string(),
            Some(BBox::new(0.0, 0.0, 1000.0, 1000.0)),
        )?;
        std::fs::write(dir.join(format!("{name}.polymesh")), converted)?;
        println!("{name}: {} cells, {} edges", mesh.n_cells(), mesh.n_faces());
    }
    Ok(())
}
