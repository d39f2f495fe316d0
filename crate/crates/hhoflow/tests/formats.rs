use std::path::{Path, PathBuf};

use proptest::prelude::*;

use hhoflow::config::{parse_config_file, read_config, ConfigFile, MeshSource};
use hhoflow::fvca5;
use hhoflow::mesh_io::{format_mesh, parse_mesh, read_mesh, write_mesh};
use hhoflow::output::{write_coefficients_csv, write_field_csv, write_recovery_series};
use hhoflow_core::basis::CellBasis;
use hhoflow_core::hho::HybridField;
use hhoflow_core::mesh::{build_cartesian_mesh, BBox, Mesh};
use hhoflow_core::simulator::{Simulation, Stepper, WellKind};
use hhoflow_core::Point2;

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

#[test]
fn shipped_meshes_have_benchmark_edge_counts() {
    for (name, edges) in [("triangular_1", 92), ("kershaw_1", 612), ("hexagonal_1", 62)] {
        let mesh = read_mesh(&repo(&format!("meshes/{name}.polymesh"))).unwrap();
        assert_eq!(mesh.n_faces(), edges, "{name}");
        assert_eq!(mesh.bbox(), BBox::new(0.0, 0.0, 1000.0, 1000.0));
        let text = std::fs::read_to_string(repo(&format!("meshes/{name}.typ1"))).unwrap();
        let converted = fvca5::convert(&text, name, Some(BBox::new(0.0, 0.0, 1000.0, 1000.0))).unwrap();
        assert_eq!(parse_mesh(&converted, name).unwrap(), mesh);
    }
}

#[test]
fn hexagonal_mesh_cell_shapes() {
    let mesh = read_mesh(&repo("meshes/hexagonal_1.polymesh")).unwrap();
    let count = |n: usize| mesh.cells().iter().filter(|c| c.vertices.len() == n).count();
    assert_eq!((count(4), count(5), count(6)), (8, 5, 8));
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.polymesh");
    let mesh = build_cartesian_mesh(4, 4, BBox::new(0.0, 0.0, 1000.0, 1000.0)).unwrap();
    write_mesh(&mesh, &path).unwrap();
    assert_eq!(read_mesh(&path).unwrap(), mesh);
}

#[test]
fn missing_file_reports_path() {
    let err = read_mesh(Path::new("/nonexistent/x.polymesh")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/x.polymesh"));
}

#[test]
fn non_manifold_file_is_rejected() {
    // Three triangles sharing the edge 0-1.
    let text = "polymesh2d 1\nvertices 5\n0 0\n1 0\n0.5 1\n0.5 -1\n0.5 0.5\ncells 3\n0 1 2\n1 0 3\n0 1 4\n";
    assert!(matches!(
        parse_mesh(text, "t"),
        Err(hhoflow::Error::Core(hhoflow_core::Error::Topology { .. }))
    ));
}

#[test]
fn test1_config_parses() {
    let c = read_config(&repo("configs/test1.toml")).unwrap();
    assert_eq!(
        (c.k, c.dt, c.t_final, c.stepper),
        (1, 18.0, 3600.0, Stepper::CrankNicolson)
    );
    assert_eq!(
        c.mesh,
        MeshSource::Cartesian {
            nx: 32,
            ny: 32,
            bbox: BBox::new(0.0, 0.0, 1000.0, 1000.0)
        }
    );
    assert_eq!((c.viscosity.mu0, c.viscosity.mobility_ratio), (1.0, 41.0));
    assert_eq!(
        (c.d_m, c.d_l, c.d_t, c.porosity, c.c0, c.injected),
        (0.0, 50.0, 5.0, 0.1, 0.0, 1.0)
    );
    assert_eq!(c.wells.len(), 2);
    assert_eq!(
        (c.wells[0].kind, c.wells[0].location, c.wells[0].rate),
        (WellKind::Injection, Point2::new(1000.0, 1000.0), 30.0)
    );
    assert_eq!(
        (c.wells[1].kind, c.wells[1].location, c.wells[1].rate),
        (WellKind::Production, Point2::new(0.0, 0.0), 30.0)
    );
}

#[test]
fn test1_config_round_trips() {
    let text = std::fs::read_to_string(repo("configs/test1.toml")).unwrap();
    let file = parse_config_file(&text, "test1").unwrap();
    let again = parse_config_file(&file.to_toml(), "again").unwrap();
    assert_eq!(again, file);
}

#[test]
fn config_errors_for_k_and_divisibility() {
    let text = std::fs::read_to_string(repo("configs/test1.toml")).unwrap();
    let errs = |t: &str| match hhoflow::config::config_from_str(t, "t", Path::new(".")) {
        Err(hhoflow::Error::Config { errors }) => errors,
        other => panic!("{other:?}"),
    };
    assert_eq!(errs(&text.replace("k = 1\n", "")), ["missing `k`"]);
    assert_eq!(
        errs(&text.replace("dt = 18.0", "dt = 17.0")),
        ["`dt` = 17 does not divide `t_final` = 3600"]
    );
}

fn smooth_field(mesh: &Mesh, k: usize) -> HybridField {
    let mut f = HybridField::zeros(mesh, k);
    for (i, c) in f.cells.iter_mut().enumerate() {
        *c = ((i * 7919) % 101) as f64 / 101.0 - 0.3;
    }
    f
}

#[test]
fn field_csv_matches_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = read_mesh(&repo("meshes/hexagonal_1.polymesh")).unwrap();
    let field = smooth_field(&mesh, 2);
    let (fp, cp) = (dir.path().join("f.csv"), dir.path().join("c.csv"));
    write_field_csv(&field, &mesh, &fp).unwrap();
    write_coefficients_csv(&field, &mesh, &cp).unwrap();

    // (px, py, centre_x, centre_y, scale, coefficient)
    type Term = (i32, i32, f64, f64, f64, f64);
    let mut coeffs: Vec<Vec<Term>> = vec![vec![]; mesh.n_cells()];
    let mut r = csv::Reader::from_path(&cp).unwrap();
    for rec in r.records() {
        let rec = rec.unwrap();
        let g = |i: usize| rec[i].parse::<f64>().unwrap();
        coeffs[rec[0].parse::<usize>().unwrap()].push((g(2) as i32, g(3) as i32, g(4), g(5), g(6), g(7)));
    }
    let mut r = csv::Reader::from_path(&fp).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["x", "y", "cell", "value"]);
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec.unwrap();
        let (x, y, c, v): (f64, f64, usize, f64) = (
            rec[0].parse().unwrap(),
            rec[1].parse().unwrap(),
            rec[2].parse().unwrap(),
            rec[3].parse().unwrap(),
        );
        let again: f64 = coeffs[c]
            .iter()
            .map(|&(px, py, cx, cy, h, a)| a * ((x - cx) / h).powi(px) * ((y - cy) / h).powi(py))
            .sum();
        assert!((again - v).abs() <= 1e-12 * (1.0 + v.abs()), "{again} vs {v}");
        rows += 1;
    }
    let expected: usize = mesh.cells().iter().map(|c| 3 * c.vertices.len()).sum();
    assert_eq!(rows, expected);
    // The basis used for writing agrees with the one documented in the header.
    let b = CellBasis::for_cell(&mesh, 0, 2);
    assert_eq!(b.exponents()[1], (1, 0));
}

#[test]
fn recovery_series_has_initial_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut file: ConfigFile =
        parse_config_file(&std::fs::read_to_string(repo("configs/test1.toml")).unwrap(), "t").unwrap();
    file.mesh.as_mut().unwrap().cartesian = Some([4, 4]);
    file.k = Some(0);
    file.t_final = Some(90.0);
    file.output = None;
    let cfg = file.validate(Path::new(".")).unwrap();
    let mesh = cfg.mesh.build().unwrap();
    let sim = Simulation::new(&mesh, cfg.simulation_config(&mesh), |_| 0.0).unwrap();
    let empty = sim.report().clone();
    let report = sim.run().unwrap();
    let path = dir.path().join("r.csv");
    write_recovery_series(&empty, &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 2);
    write_recovery_series(&report, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let times: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(times.len(), 6);
    assert!(times.windows(2).all(|w| w[0] < w[1]));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn perturbed_meshes_round_trip(nx in 1usize..6, ny in 1usize..6, seed in any::<u64>()) {
        let base = build_cartesian_mesh(nx, ny, BBox::new(-1.0, 2.0, 3.0, 2.5)).unwrap();
        let mut rng = seed;
        let vertices: Vec<Point2<f64>> = base.vertices().iter().map(|p| {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let on_boundary = p.x == -1.0 || p.x == 3.0 || p.y == 2.0 || p.y == 2.5;
            let d = if on_boundary { 0.0 } else { ((rng >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 0.05 };
            Point2::new(p.x + d * 4.0 / nx as f64, p.y + d * 0.5 / ny as f64)
        }).collect();
        let cells = base.cells().iter().map(|c| c.vertices.clone()).collect();
        let mesh = Mesh::from_polygons(vertices, cells).unwrap();
        prop_assert_eq!(parse_mesh(&format_mesh(&mesh), "p").unwrap(), mesh);
    }

    #[test]
    fn config_serialisation_round_trips(k in 0usize..4, n in 1u32..400, c0 in 0.0f64..1.0, perm in 1e-3f64..1e3) {
        let text = std::fs::read_to_string(repo("configs/test1.toml")).unwrap();
        let mut file = parse_config_file(&text, "t").unwrap();
        file.k = Some(k);
        file.dt = Some(3600.0 / n as f64);
        file.initial.as_mut().unwrap().c0 = Some(c0);
        file.permeability.as_mut().unwrap().default = Some(hhoflow::config::PermeabilityValue::Tensor([[perm, 0.0], [0.0, 2.0 * perm]]));
        let again = parse_config_file(&file.to_toml(), "t").unwrap();
        prop_assert_eq!(&again, &file);
        prop_assert_eq!(again.validate(Path::new(".")).unwrap(), file.validate(Path::new(".")).unwrap());
    }
}
