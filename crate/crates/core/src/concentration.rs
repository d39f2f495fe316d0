//! Concentration equation: dispersion, advective derivative with upwinding,
//! reaction terms from the time discretisation, and the global solve.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::basis::{cell_dim, face_dim, spd_solve};
use crate::darcy::{CellFlow, DarcyField};
use crate::hho::{local_diffusion, static_condense, CellTable, HybridField, LocalSystem, NodalTensor, Tables};
use crate::linsolve::{solve_direct, SparseMatrix};
use crate::mesh::Mesh;
use crate::{math, Error, Matrix2, Result, Tensor2, Vector2};

/// Molecular diffusion, dispersivities and porosity.
#[derive(Debug, Clone, PartialEq)]
pub struct DispersionModel {
    /// Molecular diffusion (ft²/day).
    pub d_m: f64,
    /// Longitudinal dispersivity (ft).
    pub d_l: f64,
    /// Transverse dispersivity (ft).
    pub d_t: f64,
    /// Porosity of each cell.
    pub porosity: Vec<f64>,
}

impl DispersionModel {
    pub fn new(d_m: f64, d_l: f64, d_t: f64, porosity: Vec<f64>) -> Result<Self> {
        if !(d_m >= 0.0 && d_m.is_finite()) {
            return Err(Error::InvalidArgument(format!("d_m must be >= 0, got {d_m}")));
        }
        if !(d_l > 0.0 && d_l.is_finite() && d_t > 0.0 && d_t.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "d_l and d_t must be > 0, got {d_l} and {d_t}"
            )));
        }
        if let Some((c, p)) = porosity.iter().enumerate().find(|(_, p)| !(**p > 0.0 && p.is_finite())) {
            return Err(Error::InvalidArgument(format!("porosity of cell {c} is {p}")));
        }
        Ok(DispersionModel {
            d_m,
            d_l,
            d_t,
            porosity,
        })
    }

    /// `Φ_* = min(min Φ, 1 / max Φ)`.
    pub fn porosity_bound(&self) -> f64 {
        let lo = self.porosity.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.porosity.iter().copied().fold(0.0, f64::max);
        lo.min(1.0 / hi)
    }

    pub fn tensor(&self, cell: usize, u: Vector2<f64>) -> Tensor2 {
        dispersion_tensor(self.porosity[cell], u, self.d_m, self.d_l, self.d_t)
    }
}

/// `Φ (d_m I + |U| (d_l E + d_t (I - E)))` with `E = U⊗U/|U|²`, and `E = 0`
/// when `U = 0`.
pub fn dispersion_tensor(porosity: f64, u: Vector2<f64>, d_m: f64, d_l: f64, d_t: f64) -> Tensor2 {
    let norm = math::hypot(u.x, u.y);
    if norm == 0.0 {
        return Matrix2::identity() * (porosity * d_m);
    }
    let e = u * u.transpose() / (norm * norm);
    let id = Matrix2::identity();
    (id * d_m + (e * d_l + (id - e) * d_t) * norm) * porosity
}

/// Dispersion tensor on the nodes of one cell, from the cell's velocity.
pub fn dispersion_nodal(table: &CellTable, model: &DispersionModel, flow: &CellFlow) -> NodalTensor {
    let c = table.cell;
    NodalTensor {
        cell: flow.velocity.iter().map(|u| model.tensor(c, *u)).collect(),
        faces: flow
            .face_velocity
            .iter()
            .map(|us| us.iter().map(|u| model.tensor(c, *u)).collect())
            .collect(),
    }
}

/// Right-hand side `B` of the advective derivative, `M G_adv = B`, with rows
/// indexed by degree-`k` cell basis functions and columns by local dofs.
pub fn advection_moments(table: &CellTable, k: usize, flow: &CellFlow) -> DMatrix<f64> {
    let cd = cell_dim(k);
    let fd = face_dim(k);
    let mut b = DMatrix::zeros(cd, table.local_dim(k));
    for q in 0..table.n_points() {
        let w = table.weights[q];
        let phi = table.phi_at(q);
        let grad = table.grad_at(q);
        let u = flow.velocity[q];
        for j in 0..cd {
            let ug = w * u.dot(&grad[j]);
            for i in 0..cd {
                b[(i, j)] += ug * phi[i];
            }
        }
    }
    for (fi, ft) in table.faces.iter().enumerate() {
        let off = table.face_offset(k, fi);
        for q in 0..ft.n_points() {
            let f = ft.weights[q] * flow.flux_at(table, fi, q);
            let phi = ft.phi_at(q);
            let psi = ft.psi_at(q);
            for i in 0..cd {
                let fi_ = f * phi[i];
                for j in 0..cd {
                    b[(i, j)] -= fi_ * phi[j];
                }
                for r in 0..fd {
                    b[(i, off + r)] += fi_ * psi[r];
                }
            }
        }
    }
    b
}

/// Discrete advective derivative as a map from local dofs to degree-`k` cell
/// coefficients.
pub fn advective_derivative_matrix(table: &CellTable, k: usize, flow: &CellFlow) -> Result<DMatrix<f64>> {
    let cd = cell_dim(k);
    spd_solve(table.mass(cd), advection_moments(table, k, flow), "cell mass")
        .map_err(|_| Error::Conditioning(format!("cell mass matrix of cell {} is singular", table.cell)))
}

/// Local advection-reaction matrix (rows: test dofs, columns: trial dofs)
/// for a reaction coefficient constant on the cell.
pub fn advection_reaction_matrix(table: &CellTable, k: usize, flow: &CellFlow, reaction: f64) -> DMatrix<f64> {
    let cd = cell_dim(k);
    let fd = face_dim(k);
    let n = table.local_dim(k);
    let b = advection_moments(table, k, flow);
    let mut x = DMatrix::zeros(n, n);
    x.columns_mut(0, cd).copy_from(&(-b.transpose()));
    let mass = table.mass(cd);
    let mut block = x.view_mut((0, 0), (cd, cd));
    block += mass * reaction;

    let mut delta = alloc::vec![0.0; n];
    for (fi, ft) in table.faces.iter().enumerate() {
        let off = table.face_offset(k, fi);
        for q in 0..ft.n_points() {
            let f = flow.flux_at(table, fi, q);
            let neg = (-f).max(0.0);
            if neg == 0.0 {
                continue;
            }
            let w = neg * ft.weights[q];
            let phi = ft.phi_at(q);
            let psi = ft.psi_at(q);
            let idx: Vec<usize> = (0..cd).chain(off..off + fd).collect();
            for j in 0..cd {
                delta[j] = -phi[j];
            }
            delta[off..off + fd].copy_from_slice(&psi[..fd]);
            for &a in &idx {
                for &c in &idx {
                    x[(a, c)] += w * delta[a] * delta[c];
                }
            }
        }
    }
    x
}

/// Time-discretisation data: the equation reads
/// `Φ (rate c - history) + ... = q⁺ ĉ`.
#[derive(Debug, Clone, Copy)]
pub struct TimeTerms<'a> {
    pub rate: f64,
    pub history: &'a HybridField,
}

/// Well data in the concentration equation.
#[derive(Debug, Clone, Copy)]
pub struct Sources<'a> {
    pub q_plus: &'a [f64],
    pub q_minus: &'a [f64],
    /// Injected concentration `ĉ`.
    pub injected: f64,
}

/// `b_i = ∫_T φ_i (q⁺ ĉ + Φ h)` on the cell block of the local layout.
pub fn concentration_rhs(table: &CellTable, k: usize, source: f64, porosity: f64, history: &[f64]) -> DVector<f64> {
    let cd = cell_dim(k);
    let mut b = DVector::zeros(table.local_dim(k));
    for q in 0..table.n_points() {
        let phi = table.phi_at(q);
        let h: f64 = history.iter().zip(phi).map(|(c, p)| c * p).sum();
        let v = table.weights[q] * (source + porosity * h);
        for i in 0..cd {
            b[i] += v * phi[i];
        }
    }
    b
}

fn check_inputs(
    mesh: &Mesh,
    tables: &Tables,
    k: usize,
    darcy: &DarcyField,
    model: &DispersionModel,
    time: &TimeTerms<'_>,
    sources: &Sources<'_>,
) -> Result<()> {
    tables.check_degree(2 * k)?;
    let n = mesh.n_cells();
    if darcy.degree != 2 * k || darcy.cells.len() != n {
        return Err(Error::LayoutMismatch(format!(
            "flow field of degree {} on {} cells for concentration degree {k} on {n} cells",
            darcy.degree,
            darcy.cells.len()
        )));
    }
    if model.porosity.len() != n || sources.q_plus.len() != n || sources.q_minus.len() != n {
        return Err(Error::LayoutMismatch(format!("per-cell data does not match {n} cells")));
    }
    if time.history.degree != k || time.history.cells.len() != n * cell_dim(k) {
        return Err(Error::LayoutMismatch(format!(
            "history field of degree {} for concentration degree {k}",
            time.history.degree
        )));
    }
    if !(time.rate > 0.0 && time.rate.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "time rate must be > 0, got {}",
            time.rate
        )));
    }
    Ok(())
}

/// Local systems of the concentration equation on every cell.
pub fn assemble_concentration(
    mesh: &Mesh,
    tables: &Tables,
    k: usize,
    darcy: &DarcyField,
    model: &DispersionModel,
    time: &TimeTerms<'_>,
    sources: &Sources<'_>,
) -> Result<Vec<LocalSystem>> {
    check_inputs(mesh, tables, k, darcy, model, time, sources)?;
    tables
        .cells
        .iter()
        .map(|t| {
            let c = t.cell;
            let flow = &darcy.cells[c];
            let phi = model.porosity[c];
            let d = dispersion_nodal(t, model, flow);
            let op = local_diffusion(t, k, &d)?;
            let reaction = time.rate * phi + sources.q_minus[c];
            let matrix = op.a + advection_reaction_matrix(t, k, flow, reaction);
            let rhs = concentration_rhs(t, k, sources.q_plus[c] * sources.injected, phi, time.history.cell(c));
            Ok(LocalSystem { matrix, rhs })
        })
        .collect()
}

/// Solution of one concentration solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationSolve {
    pub field: HybridField,
    pub residual: f64,
}

/// Puts a unit diagonal on rows of the condensed matrix that vanish, which
/// happens only for face dofs untouched by dispersion and flux (no flow and
/// `d_m = 0`). Their value is then zero and does not feed the cells.
fn fix_empty_rows(a: &SparseMatrix) -> Result<SparseMatrix> {
    let n = a.dim();
    let empty: Vec<usize> = (0..n).filter(|&i| a.row(i).1.iter().all(|v| *v == 0.0)).collect();
    if empty.is_empty() {
        return Ok(a.clone());
    }
    let mut triplets: Vec<(usize, usize, f64)> = (0..n)
        .flat_map(|i| {
            let (cols, vals) = a.row(i);
            cols.iter().zip(vals).map(move |(j, v)| (i, *j, *v))
        })
        .collect();
    triplets.extend(empty.into_iter().map(|i| (i, i, 1.0)));
    SparseMatrix::from_triplets(n, triplets)
}

/// Solves the concentration system with static condensation.
pub fn solve_concentration(
    mesh: &Mesh,
    tables: &Tables,
    k: usize,
    darcy: &DarcyField,
    model: &DispersionModel,
    time: &TimeTerms<'_>,
    sources: &Sources<'_>,
) -> Result<ConcentrationSolve> {
    let locals = assemble_concentration(mesh, tables, k, darcy, model, time, sources)?;
    let cond = static_condense(mesh, k, &locals)?;
    let matrix = fix_empty_rows(&cond.matrix)?;
    let sol = solve_direct(&matrix, &cond.rhs).map_err(|e| match e {
        Error::Solver { context, residual } => Error::Solver {
            context: format!("{context} (concentration, degree {k}, {} cells)", mesh.n_cells()),
            residual,
        },
        other => other,
    })?;
    Ok(ConcentrationSolve {
        field: cond.recover(mesh, &sol.x)?,
        residual: sol.residual,
    })
}

/// Crank–Nicolson half step: rate `2/Δt`, history `2 c^n / Δt`.
pub fn solve_half_step(
    mesh: &Mesh,
    tables: &Tables,
    k: usize,
    darcy: &DarcyField,
    model: &DispersionModel,
    c_n: &HybridField,
    dt: f64,
    sources: &Sources<'_>,
) -> Result<ConcentrationSolve> {
    let history = c_n.combine(2.0 / dt, c_n, 0.0)?;
    let time = TimeTerms {
        rate: 2.0 / dt,
        history: &history,
    };
    solve_concentration(mesh, tables, k, darcy, model, &time, sources)
}

/// `c^{n+1} = 2 c^{n+1/2} - c^n`.
pub fn crank_nicolson_extrapolate(c_half: &HybridField, c_n: &HybridField) -> Result<HybridField> {
    c_half.combine(2.0, c_n, -1.0)
}

/// The two sides of the per-step energy inequality
/// `∫ Φ (rate c - h) c <= ∫ q⁺ ĉ c`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyCheck {
    pub lhs: f64,
    pub rhs: f64,
    /// Magnitude of the largest term, for relative tolerances.
    pub scale: f64,
}

impl EnergyCheck {
    /// `rhs - lhs`, nonnegative when the inequality holds.
    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }

    pub fn holds(&self, tol: f64) -> bool {
        self.slack() >= -tol * self.scale
    }
}

/// Evaluates both sides of the energy inequality for a computed solution,
/// with the quadrature used in assembly.
pub fn energy_check(
    tables: &Tables,
    model: &DispersionModel,
    time: &TimeTerms<'_>,
    sources: &Sources<'_>,
    c: &HybridField,
) -> EnergyCheck {
    let mut out = EnergyCheck::default();
    for t in &tables.cells {
        let cell = t.cell;
        let phi = model.porosity[cell];
        let (mut mass, mut cross, mut src) = (0.0, 0.0, 0.0);
        for q in 0..t.n_points() {
            let w = t.weights[q];
            let v = t.eval_cell(c.cell(cell), q);
            let h = t.eval_cell(time.history.cell(cell), q);
            mass += w * v * v;
            cross += w * h * v;
            src += w * v;
        }
        let a = phi * time.rate * mass;
        let b = phi * cross;
        let s = sources.q_plus[cell] * sources.injected * src;
        out.lhs += a - b;
        out.rhs += s;
        out.scale = out.scale.max(math::abs(a)).max(math::abs(b)).max(math::abs(s));
    }
    out
}
