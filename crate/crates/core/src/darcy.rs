//! Darcy velocity and conservative face fluxes from a solved pressure.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::basis::{cell_dim, face_dim, spd_solve};
use crate::hho::{CellTable, Tables};
use crate::mesh::Mesh;
use crate::pressure::PressureState;
use crate::{math, Error, Result, Vector2};

/// Velocity and fluxes of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFlow {
    /// `U_T` at the cell quadrature nodes.
    pub velocity: Vec<Vector2<f64>>,
    /// `U_T` at the quadrature nodes of each local face.
    pub face_velocity: Vec<Vec<Vector2<f64>>>,
    /// Outward flux polynomial per local face, in that face's basis.
    pub fluxes: Vec<DVector<f64>>,
}

impl CellFlow {
    /// Flux of local face `i` at its quadrature node `q`.
    pub fn flux_at(&self, table: &CellTable, i: usize, q: usize) -> f64 {
        table.faces[i].eval_face(self.fluxes[i].as_slice(), q)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DarcyField {
    /// Degree of the pressure space and of the fluxes.
    pub degree: usize,
    pub cells: Vec<CellFlow>,
}

impl DarcyField {
    pub fn zeros(tables: &Tables, degree: usize) -> Self {
        let cells = tables
            .cells
            .iter()
            .map(|t| CellFlow {
                velocity: alloc::vec![Vector2::zeros(); t.n_points()],
                face_velocity: t
                    .faces
                    .iter()
                    .map(|f| alloc::vec![Vector2::zeros(); f.n_points()])
                    .collect(),
                fluxes: t.faces.iter().map(|_| DVector::zeros(face_dim(degree))).collect(),
            })
            .collect();
        DarcyField { degree, cells }
    }
}

/// Face fluxes of one cell: `λ_F = -(M_FF)^{-1} (A p)_F`.
pub fn compute_face_fluxes(
    table: &CellTable,
    a: &DMatrix<f64>,
    p: &DVector<f64>,
    m: usize,
) -> Result<Vec<DVector<f64>>> {
    let fd = face_dim(m);
    let ap = a * p;
    table
        .faces
        .iter()
        .enumerate()
        .map(|(i, ft)| {
            let off = table.face_offset(m, i);
            let alpha = -ap.rows(off, fd).into_owned();
            let lambda = spd_solve(
                ft.mass(fd),
                DMatrix::from_column_slice(fd, 1, alpha.as_slice()),
                "face Gram",
            )
            .map_err(|_| Error::Conditioning(format!("face Gram matrix of face {} is singular", ft.face)))?;
            Ok(lambda.column(0).into_owned())
        })
        .collect()
}

/// `U_T = -κ ∇r p` at the cell and face nodes of one cell.
pub fn compute_cell_velocity(
    table: &CellTable,
    g: &DMatrix<f64>,
    kappa: &crate::hho::NodalTensor,
    p: &DVector<f64>,
) -> (Vec<Vector2<f64>>, Vec<Vec<Vector2<f64>>>) {
    let r = g * p;
    let grad = |grads: &[Vector2<f64>]| -> Vector2<f64> { r.iter().enumerate().map(|(i, c)| grads[i + 1] * *c).sum() };
    let cell = (0..table.n_points())
        .map(|q| -(kappa.cell[q] * grad(table.grad_at(q))))
        .collect();
    let faces = table
        .faces
        .iter()
        .enumerate()
        .map(|(i, ft)| {
            (0..ft.n_points())
                .map(|q| -(kappa.faces[i][q] * grad(ft.grad_at(q))))
                .collect()
        })
        .collect();
    (cell, faces)
}

/// Velocity and fluxes for every cell of a solved pressure state.
pub fn reconstruct(mesh: &Mesh, tables: &Tables, pressure: &PressureState) -> Result<DarcyField> {
    let m = pressure.field.degree;
    let cells = tables
        .cells
        .iter()
        .map(|t| {
            let op = &pressure.ops[t.cell];
            let p = pressure.field.local(mesh, t.cell);
            let fluxes = compute_face_fluxes(t, &op.a, &p, m)?;
            let (velocity, face_velocity) = compute_cell_velocity(t, &op.g, &pressure.kappa[t.cell], &p);
            Ok(CellFlow {
                velocity,
                face_velocity,
                fluxes,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DarcyField { degree: m, cells })
}

/// Largest relative violations of the three conservation properties.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConservationReport {
    /// Local identity between the diffusion form and velocity/flux terms.
    pub identity: f64,
    /// Interior flux antisymmetry and vanishing boundary fluxes.
    pub antisymmetry: f64,
    /// Net outflow of each cell against its source.
    pub mass_balance: f64,
}

impl ConservationReport {
    pub fn max(&self) -> f64 {
        self.identity.max(self.antisymmetry).max(self.mass_balance)
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if den > 0.0 {
        num / den
    } else {
        f64::INFINITY
    }
}

/// Evaluates the conservation properties of a flow field, with its own
/// quadrature sums rather than the matrices used to build it.
pub fn conservation_residual(
    mesh: &Mesh,
    tables: &Tables,
    darcy: &DarcyField,
    pressure: &PressureState,
    q_plus: &[f64],
    q_minus: &[f64],
) -> ConservationReport {
    let m = darcy.degree;
    let cd = cell_dim(m);
    let fd = face_dim(m);

    // Identity: (A p)_j = -(U_T, ∇v_j) + Σ_F (F_TF, v_T - v_F)_F per basis test.
    let mut identity_err: f64 = 0.0;
    let mut identity_scale: f64 = 0.0;
    // Face moments ∫_F F_TF ψ_r seen from each side.
    let mut moments: Vec<Vec<(usize, DVector<f64>)>> = alloc::vec![Vec::new(); mesh.n_faces()];
    let mut balance_err: f64 = 0.0;
    let mut rate_scale: f64 = 0.0;
    for t in &tables.cells {
        let c = t.cell;
        let flow = &darcy.cells[c];
        let p = pressure.field.local(mesh, c);
        let ap = &pressure.ops[c].a * &p;
        let mut rhs = DVector::zeros(t.local_dim(m));
        for q in 0..t.n_points() {
            let grad = t.grad_at(q);
            for j in 0..cd {
                rhs[j] -= t.weights[q] * flow.velocity[q].dot(&grad[j]);
            }
        }
        let mut net = 0.0;
        for (i, ft) in t.faces.iter().enumerate() {
            let off = t.face_offset(m, i);
            let mut mom = DVector::zeros(fd);
            for q in 0..ft.n_points() {
                let f = flow.flux_at(t, i, q) * ft.weights[q];
                let phi = ft.phi_at(q);
                let psi = ft.psi_at(q);
                for j in 0..cd {
                    rhs[j] += f * phi[j];
                }
                for r in 0..fd {
                    rhs[off + r] -= f * psi[r];
                    mom[r] += f * psi[r];
                }
                net += f;
            }
            moments[ft.face].push((c, mom));
        }
        identity_err = identity_err.max((&ap - &rhs).amax());
        identity_scale = identity_scale.max(ap.amax()).max(rhs.amax());
        let source = (q_plus[c] - q_minus[c]) * mesh.cell(c).measure;
        balance_err = balance_err.max(math::abs(net - source));
        rate_scale = rate_scale
            .max(q_plus[c] * mesh.cell(c).measure)
            .max(q_minus[c] * mesh.cell(c).measure);
    }

    let mut anti_err: f64 = 0.0;
    let mut flux_scale: f64 = 0.0;
    for sides in &moments {
        for (_, mom) in sides {
            flux_scale = flux_scale.max(mom.amax());
        }
        let sum = sides
            .iter()
            .fold(DVector::zeros(fd), |acc: DVector<f64>, (_, m)| acc + m);
        anti_err = anti_err.max(sum.amax());
    }
    if rate_scale == 0.0 {
        rate_scale = flux_scale;
    }
    ConservationReport {
        identity: ratio(identity_err, identity_scale),
        antisymmetry: ratio(anti_err, flux_scale),
        mass_balance: ratio(balance_err, rate_scale),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hho::{interpolate, local_diffusion, NodalTensor};
    use crate::mesh::{build_cartesian_mesh, BBox};
    use crate::pressure::{solve_diffusion, ViscosityModel};
    use crate::{Matrix2, Point2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn affine_pressure_gives_exact_flux() {
        let mesh = build_cartesian_mesh(1, 1, BBox::new(0.0, 0.0, 1.0, 1.0)).unwrap();
        let m = 2;
        let tables = Tables::for_diffusion(&mesh, m).unwrap();
        let t = &tables.cells[0];
        let kappa = NodalTensor::constant(t, Matrix2::identity());
        let op = local_diffusion(t, m, &kappa).unwrap();
        let p = interpolate(&mesh, &tables, m, |x: Point2<f64>| x.x)
            .unwrap()
            .local(&mesh, 0);
        let fluxes = compute_face_fluxes(t, &op.a, &p, m).unwrap();
        for (i, ft) in t.faces.iter().enumerate() {
            for q in 0..ft.n_points() {
                let f = ft.eval_face(fluxes[i].as_slice(), q);
                assert!((f + ft.normal.x).abs() < 1e-12, "face {i}: {f}");
            }
        }
        let (u, _) = compute_cell_velocity(t, &op.g, &kappa, &p);
        for v in &u {
            assert!((v - Vector2::new(-1.0, 0.0)).norm() < 1e-12);
        }
        let zero = compute_face_fluxes(t, &op.a, &DVector::zeros(p.len()), m).unwrap();
        assert!(zero.iter().all(|f| f.amax() == 0.0));
    }

    #[test]
    fn velocity_is_invariant_under_joint_scaling() {
        let mesh = build_cartesian_mesh(1, 1, BBox::new(0.0, 0.0, 2.0, 1.0)).unwrap();
        let m = 1;
        let tables = Tables::for_diffusion(&mesh, m).unwrap();
        let t = &tables.cells[0];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = DVector::from_fn(t.local_dim(m), |_, _| rng.gen::<f64>());
        let k1 = NodalTensor::from_fn(t, |x| Matrix2::new(1.0 + x.x, 0.2, 0.2, 1.0));
        let k2 = NodalTensor::from_fn(t, |x| Matrix2::new(1.0 + x.x, 0.2, 0.2, 1.0) * 2.0);
        let op1 = local_diffusion(t, m, &k1).unwrap();
        let op2 = local_diffusion(t, m, &k2).unwrap();
        let (u1, _) = compute_cell_velocity(t, &op1.g, &k1, &p);
        let (u2, _) = compute_cell_velocity(t, &op2.g, &k2, &(&p * 0.5));
        for (a, b) in u1.iter().zip(&u2) {
            assert!((a - b).norm() < 1e-10 * (1.0 + a.norm()));
        }
    }

    #[test]
    fn identity_holds_for_arbitrary_pressure() {
        let mesh = build_cartesian_mesh(3, 2, BBox::new(0.0, 0.0, 3.0, 2.0)).unwrap();
        let m = 2;
        let tables = Tables::for_diffusion(&mesh, m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let visc = ViscosityModel::new(1.0, 41.0).unwrap();
        let kappa: Vec<_> = tables
            .cells
            .iter()
            .map(|t| NodalTensor::from_fn(t, |x| Matrix2::identity() / visc.viscosity(0.3 * x.x)))
            .collect();
        let n_cells = mesh.n_cells();
        let rhs = crate::pressure::cell_rhs(&tables, m, |_, _| 0.0);
        let mut state = solve_diffusion(&mesh, &tables, m, kappa, rhs).unwrap();
        for v in state.field.cells.iter_mut().chain(state.field.faces.iter_mut()) {
            *v = rng.gen::<f64>() - 0.5;
        }
        let darcy = reconstruct(&mesh, &tables, &state).unwrap();
        let zeros = alloc::vec![0.0; n_cells];
        let report = conservation_residual(&mesh, &tables, &darcy, &state, &zeros, &zeros);
        assert!(report.identity < 1e-12, "{report:?}");
        assert!(report.mass_balance > 1e-6);
    }

    #[test]
    fn zero_pressure_has_zero_residuals() {
        let mesh = build_cartesian_mesh(2, 2, BBox::new(0.0, 0.0, 1.0, 1.0)).unwrap();
        let tables = Tables::for_diffusion(&mesh, 0).unwrap();
        let kappa: Vec<_> = tables
            .cells
            .iter()
            .map(|t| NodalTensor::constant(t, Matrix2::identity()))
            .collect();
        let rhs = crate::pressure::cell_rhs(&tables, 0, |_, _| 0.0);
        let state = solve_diffusion(&mesh, &tables, 0, kappa, rhs).unwrap();
        let darcy = reconstruct(&mesh, &tables, &state).unwrap();
        let z = [0.0; 4];
        let r = conservation_residual(&mesh, &tables, &darcy, &state, &z, &z);
        assert_eq!(r, ConservationReport::default());
    }

    #[test]
    fn solved_pressure_is_conservative() {
        let mesh = build_cartesian_mesh(4, 4, BBox::new(0.0, 0.0, 1000.0, 1000.0)).unwrap();
        let m = 2;
        let tables = Tables::for_diffusion(&mesh, m).unwrap();
        let area = mesh.cell(0).measure;
        let mut qp = alloc::vec![0.0; 16];
        let mut qm = alloc::vec![0.0; 16];
        qp[15] = 30.0 / area;
        qm[0] = 30.0 / area;
        let kappa: Vec<_> = tables
            .cells
            .iter()
            .map(|t| NodalTensor::constant(t, Matrix2::identity() * 80.0))
            .collect();
        let rhs = crate::pressure::pressure_rhs(&mesh, &tables, m, &qp, &qm).unwrap();
        let state = solve_diffusion(&mesh, &tables, m, kappa, rhs).unwrap();
        let darcy = reconstruct(&mesh, &tables, &state).unwrap();
        let r = conservation_residual(&mesh, &tables, &darcy, &state, &qp, &qm);
        assert!(r.max() < 1e-9, "{r:?}");
        let t = &tables.cells[15];
        let out: f64 = (0..t.faces.len())
            .map(|i| {
                (0..t.faces[i].n_points())
                    .map(|q| t.faces[i].weights[q] * darcy.cells[15].flux_at(t, i, q))
                    .sum::<f64>()
            })
            .sum();
        assert!((out - 30.0).abs() < 1e-9);
    }
}
