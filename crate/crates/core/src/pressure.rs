//! Discrete pressure equation of degree `2k` with a zero-mean normalisation.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::DVector;

use crate::basis::{cell_dim, face_dim};
use crate::hho::{
    assemble_global, local_diffusion, static_condense, CellTable, HybridField, LocalDiffusion, LocalSystem,
    NodalTensor, Tables,
};
use crate::linsolve::{solve_with_mean_constraint, Solution};
use crate::mesh::Mesh;
use crate::{math, Error, Point2, Result, Tensor2};

/// Koval quarter-power mixing rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViscosityModel {
    /// Viscosity of the resident oil (cp).
    pub mu0: f64,
    /// Ratio of oil to solvent viscosity.
    pub mobility_ratio: f64,
}

impl ViscosityModel {
    pub fn new(mu0: f64, mobility_ratio: f64) -> Result<Self> {
        if !(mu0 > 0.0 && mu0.is_finite() && mobility_ratio > 0.0 && mobility_ratio.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "viscosity needs mu0 > 0 and M > 0, got {mu0} and {mobility_ratio}"
            )));
        }
        Ok(ViscosityModel { mu0, mobility_ratio })
    }

    /// `μ(c) = μ0 (1 + (M^{1/4} - 1) c)^{-4}`, with `c` clamped to `[0, 1]`.
    pub fn viscosity(&self, c: f64) -> f64 {
        let c = if c.is_nan() { 0.0 } else { c.clamp(0.0, 1.0) };
        let base = 1.0 + (math::powf(self.mobility_ratio, 0.25) - 1.0) * c;
        self.mu0 / math::powi(base, 4)
    }
}

/// `1.5 c^n - 0.5 c^{n-1}`.
pub fn extrapolate_concentration(c_n: &HybridField, c_prev: &HybridField) -> Result<HybridField> {
    c_n.combine(1.5, c_prev, -0.5)
}

/// Per-cell permeability and the concentration that sets the viscosity.
#[derive(Debug, Clone, Copy)]
pub struct KappaField<'a> {
    pub permeability: &'a [Tensor2],
    pub viscosity: ViscosityModel,
    /// Concentration whose cell polynomials enter `μ`.
    pub concentration: &'a HybridField,
}

impl KappaField<'_> {
    /// `κ = K / μ(c̃)` on the quadrature nodes of one cell.
    pub fn nodal(&self, table: &CellTable) -> NodalTensor {
        let c = table.cell;
        let coeffs = self.concentration.cell(c);
        let k = self.permeability[c];
        let cell = (0..table.n_points())
            .map(|q| k / self.viscosity.viscosity(table.eval_cell(coeffs, q)))
            .collect();
        let faces = table
            .faces
            .iter()
            .map(|ft| {
                (0..ft.n_points())
                    .map(|q| {
                        let v: f64 = coeffs.iter().zip(ft.phi_at(q)).map(|(a, b)| a * b).sum();
                        k / self.viscosity.viscosity(v)
                    })
                    .collect()
            })
            .collect();
        NodalTensor { cell, faces }
    }

    pub fn eval(&self, table: &CellTable, p: Point2<f64>) -> Tensor2 {
        let c = self.concentration.cell(table.cell);
        self.permeability[table.cell] / self.viscosity.viscosity(table.basis.eval_poly(c, p))
    }
}

/// Cell-block right-hand sides `∫_T φ f` in the degree-`m` local layout.
pub fn cell_rhs(tables: &Tables, m: usize, mut f: impl FnMut(usize, Point2<f64>) -> f64) -> Vec<DVector<f64>> {
    let cd = cell_dim(m);
    tables
        .cells
        .iter()
        .map(|t| {
            let mut b = DVector::zeros(t.local_dim(m));
            for q in 0..t.n_points() {
                let v = t.weights[q] * f(t.cell, t.points[q]);
                let phi = t.phi_at(q);
                for i in 0..cd {
                    b[i] += v * phi[i];
                }
            }
            b
        })
        .collect()
}

/// Checks `∫ q⁺ = ∫ q⁻` for piecewise constant sources.
pub fn check_source_compatibility(mesh: &Mesh, q_plus: &[f64], q_minus: &[f64]) -> Result<()> {
    let total = |q: &[f64]| -> f64 { q.iter().zip(mesh.cells()).map(|(v, c)| v * c.measure).sum() };
    let (ip, im) = (total(q_plus), total(q_minus));
    if math::abs(ip - im) > 1e-12 * ip.max(im) {
        return Err(Error::Incompatible {
            defect: math::abs(ip - im) / ip.max(im),
        });
    }
    Ok(())
}

/// Source vector of the pressure equation for piecewise constant wells.
pub fn pressure_rhs(
    mesh: &Mesh,
    tables: &Tables,
    m: usize,
    q_plus: &[f64],
    q_minus: &[f64],
) -> Result<Vec<DVector<f64>>> {
    check_source_compatibility(mesh, q_plus, q_minus)?;
    Ok(cell_rhs(tables, m, |c, _| q_plus[c] - q_minus[c]))
}

/// A solved pressure field with the operators that produced it.
#[derive(Debug, Clone)]
pub struct PressureState {
    pub field: HybridField,
    pub ops: Vec<LocalDiffusion>,
    pub kappa: Vec<NodalTensor>,
    pub rhs: Vec<DVector<f64>>,
    pub residual: f64,
}

/// Mean functional `∫_T φ_i` on the cell dofs of a degree-`m` field.
pub fn mean_functional(tables: &Tables, m: usize) -> Vec<f64> {
    let cd = cell_dim(m);
    let mut g = Vec::with_capacity(tables.cells.len() * cd);
    for t in &tables.cells {
        let mut row = alloc::vec![0.0; cd];
        for q in 0..t.n_points() {
            let phi = t.phi_at(q);
            for i in 0..cd {
                row[i] += t.weights[q] * phi[i];
            }
        }
        g.extend(row);
    }
    g
}

fn local_ops(tables: &Tables, m: usize, kappa: &[NodalTensor]) -> Result<Vec<LocalDiffusion>> {
    tables
        .cells
        .iter()
        .zip(kappa)
        .map(|(t, k)| local_diffusion(t, m, k))
        .collect()
}

/// Solves the degree-`m` diffusion problem with zero mean by static
/// condensation and a mean-constrained face solve.
pub fn solve_diffusion(
    mesh: &Mesh,
    tables: &Tables,
    m: usize,
    kappa: Vec<NodalTensor>,
    rhs: Vec<DVector<f64>>,
) -> Result<PressureState> {
    tables.check_degree(m)?;
    let ops = local_ops(tables, m, &kappa)?;
    let locals: Vec<LocalSystem> = ops
        .iter()
        .zip(&rhs)
        .map(|(op, b)| LocalSystem {
            matrix: op.a.clone(),
            rhs: b.clone(),
        })
        .collect();
    let cond = static_condense(mesh, m, &locals)?;
    let (g, constant) = cond.condense_functional(mesh, &mean_functional(tables, m));
    // The constant dof of face 0 carries the kernel direction.
    let Solution { x, residual } = solve_with_mean_constraint(&cond.matrix, &cond.rhs, &g, -constant, Some(0))
        .map_err(|e| match e {
            Error::Solver { context, residual } => Error::Solver {
                context: format!("{context} (pressure, degree {m}, {} cells)", mesh.n_cells()),
                residual,
            },
            other => other,
        })?;
    let field = cond.recover(mesh, &x)?;
    let state = PressureState {
        field,
        ops,
        kappa,
        rhs,
        residual,
    };
    check_mean(tables, &state.field)?;
    Ok(state)
}

fn check_mean(tables: &Tables, field: &HybridField) -> Result<()> {
    let mean = field.integral(tables);
    let scale = field
        .cells
        .iter()
        .chain(&field.faces)
        .fold(0.0f64, |a, v| a.max(math::abs(*v)));
    let measure: f64 = tables.cells.iter().map(|t| t.weights.iter().sum::<f64>()).sum();
    if math::abs(mean) > 1e-9 * scale * measure.max(1.0) {
        return Err(Error::Invariant {
            step: 0,
            what: format!("pressure mean {mean:e} is not zero"),
        });
    }
    Ok(())
}

/// Same problem as [`solve_diffusion`], without condensation (for checks).
pub fn solve_diffusion_uncondensed(
    mesh: &Mesh,
    tables: &Tables,
    m: usize,
    kappa: Vec<NodalTensor>,
    rhs: Vec<DVector<f64>>,
) -> Result<PressureState> {
    tables.check_degree(m)?;
    let ops = local_ops(tables, m, &kappa)?;
    let locals: Vec<LocalSystem> = ops
        .iter()
        .zip(&rhs)
        .map(|(op, b)| LocalSystem {
            matrix: op.a.clone(),
            rhs: b.clone(),
        })
        .collect();
    let (a, b) = assemble_global(mesh, m, &locals)?;
    let mut g = mean_functional(tables, m);
    g.resize(a.dim(), 0.0);
    let anchor = mesh.n_cells() * cell_dim(m);
    let Solution { x, residual } = solve_with_mean_constraint(&a, &b, &g, 0.0, Some(anchor))?;
    let field = HybridField::from_global(mesh, m, &x)?;
    debug_assert_eq!(field.faces.len(), mesh.n_faces() * face_dim(m));
    Ok(PressureState {
        field,
        ops,
        kappa,
        rhs,
        residual,
    })
}

/// Pressure solve of Algorithm-1 type: `κ = K/μ(c̃)`, well sources, order `2k`.
pub fn solve_pressure(
    mesh: &Mesh,
    tables: &Tables,
    k: usize,
    kappa: &KappaField<'_>,
    q_plus: &[f64],
    q_minus: &[f64],
) -> Result<PressureState> {
    let m = 2 * k;
    let rhs = pressure_rhs(mesh, tables, m, q_plus, q_minus)?;
    let nodal = tables.cells.iter().map(|t| kappa.nodal(t)).collect();
    solve_diffusion(mesh, tables, m, nodal, rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hho::interpolate;
    use crate::mesh::{build_cartesian_mesh, BBox};
    use crate::Matrix2;

    #[test]
    fn viscosity_values() {
        let v = ViscosityModel::new(1.0, 41.0).unwrap();
        assert_eq!(v.viscosity(0.0), 1.0);
        assert!((v.viscosity(1.0) - 1.0 / 41.0).abs() < 1e-15);
        assert_eq!(v.viscosity(1.7), v.viscosity(1.0));
        assert_eq!(v.viscosity(-0.3), 1.0);
        let mut last = f64::INFINITY;
        for i in 0..=100 {
            let mu = v.viscosity(i as f64 / 100.0);
            assert!(mu > 0.0 && mu < last);
            last = mu;
        }
        assert!(ViscosityModel::new(0.0, 41.0).is_err());
    }

    #[test]
    fn extrapolation_values() {
        let mesh = build_cartesian_mesh(2, 2, BBox::new(0.0, 0.0, 1.0, 1.0)).unwrap();
        let tables = Tables::for_diffusion(&mesh, 1).unwrap();
        let one = interpolate(&mesh, &tables, 1, |_| 1.0).unwrap();
        let zero = HybridField::zeros(&mesh, 1);
        let e = extrapolate_concentration(&one, &zero).unwrap();
        assert!((e.cell(0)[0] - 1.5).abs() < 1e-14);
        assert_eq!(extrapolate_concentration(&one, &one).unwrap(), one);
        assert!(extrapolate_concentration(&one, &HybridField::zeros(&mesh, 0)).is_err());
    }

    #[test]
    fn kappa_values() {
        let mesh = build_cartesian_mesh(2, 2, BBox::new(0.0, 0.0, 1.0, 1.0)).unwrap();
        let tables = Tables::for_diffusion(&mesh, 2).unwrap();
        let perm = alloc::vec![Matrix2::identity() * 80.0; 4];
        let visc = ViscosityModel::new(1.0, 41.0).unwrap();
        let zero = HybridField::zeros(&mesh, 1);
        let one = interpolate(&mesh, &tables, 1, |_| 1.0).unwrap();
        let kz = KappaField {
            permeability: &perm,
            viscosity: visc,
            concentration: &zero,
        };
        let ko = KappaField {
            permeability: &perm,
            viscosity: visc,
            concentration: &one,
        };
        for t in &tables.cells {
            for v in kz.nodal(t).cell {
                assert!((v - Matrix2::identity() * 80.0).amax() < 1e-12);
            }
            for v in ko.nodal(t).faces.iter().flatten() {
                assert!((v - Matrix2::identity() * 3280.0).amax() < 1e-9);
            }
        }
    }

    #[test]
    fn rhs_examples() {
        let mesh = build_cartesian_mesh(4, 4, BBox::new(0.0, 0.0, 1000.0, 1000.0)).unwrap();
        let tables = Tables::for_diffusion(&mesh, 2).unwrap();
        let area = mesh.cell(0).measure;
        let mut qp = alloc::vec![0.0; 16];
        let mut qm = alloc::vec![0.0; 16];
        qp[15] = 30.0 / area;
        qm[0] = 30.0 / area;
        let b = pressure_rhs(&mesh, &tables, 2, &qp, &qm).unwrap();
        let support: Vec<usize> = (0..16).filter(|c| b[*c].amax() > 0.0).collect();
        assert_eq!(support, alloc::vec![0, 15]);
        assert!((b[15][0] - 30.0).abs() < 1e-11);
        let zero = pressure_rhs(&mesh, &tables, 2, &[0.0; 16], &[0.0; 16]).unwrap();
        assert!(zero.iter().all(|v| v.amax() == 0.0));
        qm[0] *= 2.0;
        assert!(matches!(
            pressure_rhs(&mesh, &tables, 2, &qp, &qm),
            Err(Error::Incompatible { .. })
        ));
    }

    #[test]
    fn solve_examples() {
        let mesh = build_cartesian_mesh(4, 4, BBox::new(0.0, 0.0, 1.0, 1.0)).unwrap();
        let k = 1;
        let tables = Tables::for_diffusion(&mesh, 2 * k).unwrap();
        let perm = alloc::vec![Matrix2::identity(); 16];
        let visc = ViscosityModel::new(1.0, 41.0).unwrap();
        let c = HybridField::zeros(&mesh, k);
        let kappa = KappaField {
            permeability: &perm,
            viscosity: visc,
            concentration: &c,
        };
        let zero = solve_pressure(&mesh, &tables, k, &kappa, &[0.0; 16], &[0.0; 16]).unwrap();
        assert!(zero.field.cells.iter().chain(&zero.field.faces).all(|v| *v == 0.0));

        let mut qp = alloc::vec![0.0; 16];
        let mut qm = alloc::vec![0.0; 16];
        qp[15] = 16.0;
        qm[0] = 16.0;
        let p1 = solve_pressure(&mesh, &tables, k, &kappa, &qp, &qm).unwrap();
        let perm2 = alloc::vec![Matrix2::identity() * 2.0; 16];
        let kappa2 = KappaField {
            permeability: &perm2,
            viscosity: visc,
            concentration: &c,
        };
        let p2 = solve_pressure(&mesh, &tables, k, &kappa2, &qp, &qm).unwrap();
        let scale = p1.field.cells.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (a, b) in p1.field.to_global().iter().zip(p2.field.to_global()) {
            assert!((a - 2.0 * b).abs() <= 1e-9 * scale);
        }
        assert!(p1.residual <= 1e-10);
    }
}
