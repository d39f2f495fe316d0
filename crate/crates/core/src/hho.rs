//! Cell-local HHO operators, global assembly and static condensation.
//!
//! Local dof layout: the cell block first, then one block per face in the
//! cell's face order. Global layout: all cell blocks by cell index, then all
//! face blocks by face index.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::basis::{cell_dim, face_dim, spd_solve, CellBasis, FaceBasis};
use crate::linsolve::SparseMatrix;
use crate::mesh::Mesh;
use crate::quadrature::Quadrature;
use crate::{Error, Point2, Result, Tensor2, Vector2};

/// Quadrature degree used for a diffusion problem of face/cell degree `m`.
pub fn diffusion_quadrature_degree(m: usize) -> usize {
    (3 * m).max(2 * m + 2)
}

/// Basis values on the quadrature nodes of one face, seen from one cell.
#[derive(Debug, Clone)]
pub struct FaceTable {
    pub face: usize,
    /// Outward normal with respect to the cell.
    pub normal: Vector2<f64>,
    pub h: f64,
    pub basis: FaceBasis,
    pub points: Vec<Point2<f64>>,
    pub weights: Vec<f64>,
    /// Face basis values, `points.len() × face_dim` row-major.
    pub psi: Vec<f64>,
    /// Cell basis values, `points.len() × cell_dim` row-major.
    pub phi: Vec<f64>,
    pub grad: Vec<Vector2<f64>>,
}

/// Basis values on the quadrature nodes of one cell and its faces.
#[derive(Debug, Clone)]
pub struct CellTable {
    pub cell: usize,
    pub basis: CellBasis,
    pub points: Vec<Point2<f64>>,
    pub weights: Vec<f64>,
    pub phi: Vec<f64>,
    pub grad: Vec<Vector2<f64>>,
    pub faces: Vec<FaceTable>,
}

impl CellTable {
    pub fn new(mesh: &Mesh, quad: &Quadrature, c: usize, cell_degree: usize, face_degree: usize) -> Self {
        let basis = CellBasis::for_cell(mesh, c, cell_degree);
        let rule = quad.cell(mesh, c);
        let nd = basis.dim();
        let mut phi = vec![0.0; rule.len() * nd];
        let mut grad = vec![Vector2::zeros(); rule.len() * nd];
        for (q, p) in rule.points.iter().enumerate() {
            basis.eval_into(*p, &mut phi[q * nd..(q + 1) * nd]);
            basis.grad_into(*p, &mut grad[q * nd..(q + 1) * nd]);
        }
        let faces = mesh
            .cell_faces(c)
            .iter()
            .enumerate()
            .map(|(i, cf)| {
                let fb = FaceBasis::for_face(mesh, cf.face, face_degree);
                let fr = quad.face(mesh, cf.face);
                let fd = fb.dim();
                let mut psi = vec![0.0; fr.len() * fd];
                let mut fphi = vec![0.0; fr.len() * nd];
                let mut fgrad = vec![Vector2::zeros(); fr.len() * nd];
                for (q, p) in fr.points.iter().enumerate() {
                    fb.eval_into(*p, &mut psi[q * fd..(q + 1) * fd]);
                    basis.eval_into(*p, &mut fphi[q * nd..(q + 1) * nd]);
                    basis.grad_into(*p, &mut fgrad[q * nd..(q + 1) * nd]);
                }
                FaceTable {
                    face: cf.face,
                    normal: mesh.outward_normal(c, i),
                    h: mesh.face(cf.face).diameter(),
                    basis: fb,
                    points: fr.points,
                    weights: fr.weights,
                    psi,
                    phi: fphi,
                    grad: fgrad,
                }
            })
            .collect();
        CellTable {
            cell: c,
            basis,
            points: rule.points,
            weights: rule.weights,
            phi,
            grad,
            faces,
        }
    }

    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    /// Cell basis values at node `q` (full tabulated degree).
    pub fn phi_at(&self, q: usize) -> &[f64] {
        let nd = self.basis.dim();
        &self.phi[q * nd..(q + 1) * nd]
    }

    pub fn grad_at(&self, q: usize) -> &[Vector2<f64>] {
        let nd = self.basis.dim();
        &self.grad[q * nd..(q + 1) * nd]
    }

    /// Local dof count for degree `m`.
    pub fn local_dim(&self, m: usize) -> usize {
        cell_dim(m) + self.faces.len() * face_dim(m)
    }

    /// Offset of the block of local face `i` in the degree-`m` layout.
    pub fn face_offset(&self, m: usize, i: usize) -> usize {
        cell_dim(m) + i * face_dim(m)
    }

    /// Value of a degree-`m` cell polynomial at cell node `q`.
    pub fn eval_cell(&self, coeffs: &[f64], q: usize) -> f64 {
        coeffs.iter().zip(self.phi_at(q)).map(|(c, p)| c * p).sum()
    }

    /// Cell mass matrix of the first `n` basis functions.
    pub fn mass(&self, n: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, n);
        for q in 0..self.n_points() {
            let phi = self.phi_at(q);
            let w = self.weights[q];
            for j in 0..n {
                let wj = w * phi[j];
                for i in j..n {
                    m[(i, j)] += wj * phi[i];
                }
            }
        }
        crate::basis::symmetrise_lower(&mut m);
        m
    }
}

impl FaceTable {
    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    pub fn psi_at(&self, q: usize) -> &[f64] {
        let fd = self.basis.dim();
        &self.psi[q * fd..(q + 1) * fd]
    }

    pub fn phi_at(&self, q: usize) -> &[f64] {
        let nd = self.phi.len() / self.n_points();
        &self.phi[q * nd..(q + 1) * nd]
    }

    pub fn grad_at(&self, q: usize) -> &[Vector2<f64>] {
        let nd = self.grad.len() / self.n_points();
        &self.grad[q * nd..(q + 1) * nd]
    }

    /// Face mass matrix of the first `n` face basis functions.
    pub fn mass(&self, n: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, n);
        for q in 0..self.n_points() {
            let psi = self.psi_at(q);
            for j in 0..n {
                for i in 0..n {
                    m[(i, j)] += self.weights[q] * psi[i] * psi[j];
                }
            }
        }
        m
    }

    pub fn eval_face(&self, coeffs: &[f64], q: usize) -> f64 {
        coeffs.iter().zip(self.psi_at(q)).map(|(c, p)| c * p).sum()
    }
}

/// Tabulations for every cell of a mesh with one quadrature.
#[derive(Debug, Clone)]
pub struct Tables {
    pub quadrature_degree: usize,
    pub cell_degree: usize,
    pub face_degree: usize,
    pub cells: Vec<CellTable>,
}

impl Tables {
    pub fn new(mesh: &Mesh, quadrature_degree: usize, cell_degree: usize, face_degree: usize) -> Result<Self> {
        let quad = Quadrature::new(quadrature_degree)?;
        let cells = (0..mesh.n_cells())
            .map(|c| CellTable::new(mesh, &quad, c, cell_degree, face_degree))
            .collect();
        Ok(Tables {
            quadrature_degree,
            cell_degree,
            face_degree,
            cells,
        })
    }

    /// Tables sufficient for diffusion problems of degree `m`.
    pub fn for_diffusion(mesh: &Mesh, m: usize) -> Result<Self> {
        Self::new(mesh, diffusion_quadrature_degree(m), m + 1, m)
    }

    pub fn check_degree(&self, m: usize) -> Result<()> {
        if m + 1 > self.cell_degree || m > self.face_degree {
            return Err(Error::LayoutMismatch(format!(
                "tables of cell/face degree {}/{} cannot serve degree {m}",
                self.cell_degree, self.face_degree
            )));
        }
        Ok(())
    }
}

/// A tensor field sampled on the quadrature nodes of one cell and its faces.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalTensor {
    pub cell: Vec<Tensor2>,
    pub faces: Vec<Vec<Tensor2>>,
}

impl NodalTensor {
    pub fn from_fn(table: &CellTable, mut f: impl FnMut(Point2<f64>) -> Tensor2) -> Self {
        NodalTensor {
            cell: table.points.iter().map(|p| f(*p)).collect(),
            faces: table
                .faces
                .iter()
                .map(|ft| ft.points.iter().map(|p| f(*p)).collect())
                .collect(),
        }
    }

    pub fn constant(table: &CellTable, t: Tensor2) -> Self {
        Self::from_fn(table, |_| t)
    }

    fn is_zero(&self) -> bool {
        self.cell
            .iter()
            .chain(self.faces.iter().flatten())
            .all(|t| t.iter().all(|v| *v == 0.0))
    }
}

/// Local diffusion operator of degree `m` on one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDiffusion {
    pub degree: usize,
    /// Full bilinear form: consistency plus stabilisation.
    pub a: DMatrix<f64>,
    /// Stabilisation part of `a`.
    pub stab: DMatrix<f64>,
    /// Coefficients of the reconstruction on basis functions `1..cell_dim(m + 1)`.
    pub g: DMatrix<f64>,
    /// Constant coefficient of the reconstruction (mean condition), one row.
    pub mean_row: DMatrix<f64>,
    /// `Λ_TF / h_F` per local face.
    pub face_weights: Vec<f64>,
}

impl LocalDiffusion {
    /// All `cell_dim(m + 1)` reconstruction coefficients.
    pub fn reconstruction(&self) -> DMatrix<f64> {
        let n = self.a.ncols();
        let k = self.g.nrows() + 1;
        let mut r = DMatrix::zeros(k, n);
        r.row_mut(0).copy_from(&self.mean_row.row(0));
        r.rows_mut(1, k - 1).copy_from(&self.g);
        r
    }
}

/// Builds the reconstruction, stabilisation and diffusion matrix for the
/// degree-`m` hybrid space on one cell and a tensor `Λ` sampled on its nodes.
pub fn local_diffusion(table: &CellTable, m: usize, lambda: &NodalTensor) -> Result<LocalDiffusion> {
    let cd = cell_dim(m);
    let fd = face_dim(m);
    let kd = cell_dim(m + 1);
    let n = table.local_dim(m);
    if table.basis.dim() < kd || table.faces.iter().any(|f| f.basis.dim() < fd) {
        return Err(Error::LayoutMismatch(format!(
            "cell {} is tabulated below degree {m}",
            table.cell
        )));
    }
    if lambda.is_zero() {
        return Ok(LocalDiffusion {
            degree: m,
            a: DMatrix::zeros(n, n),
            stab: DMatrix::zeros(n, n),
            g: DMatrix::zeros(kd - 1, n),
            mean_row: mean_row(table, m, &DMatrix::zeros(kd - 1, n)),
            face_weights: vec![0.0; table.faces.len()],
        });
    }

    // Stiffness on non-constant functions of degree m + 1, and the right-hand
    // side of the reconstruction problem.
    let mut stiff = DMatrix::zeros(kd - 1, kd - 1);
    let mut b = DMatrix::zeros(kd - 1, n);
    let mut lg = vec![Vector2::zeros(); kd];
    for q in 0..table.n_points() {
        let w = table.weights[q];
        let grad = table.grad_at(q);
        let l = &lambda.cell[q];
        for i in 1..kd {
            lg[i] = l * grad[i] * w;
        }
        for i in 1..kd {
            for j in 1..kd {
                stiff[(i - 1, j - 1)] += lg[i].dot(&grad[j]);
            }
            for j in 1..cd {
                b[(i - 1, j)] += lg[i].dot(&grad[j]);
            }
        }
    }
    let mut face_weights = Vec::with_capacity(table.faces.len());
    for (fi, ft) in table.faces.iter().enumerate() {
        let off = table.face_offset(m, fi);
        let mut lambda_tf: f64 = 0.0;
        for q in 0..ft.n_points() {
            let l = &lambda.faces[fi][q];
            let ln = l * ft.normal;
            lambda_tf = lambda_tf.max(ft.normal.dot(&ln));
            let w = ft.weights[q];
            let grad = ft.grad_at(q);
            let phi = ft.phi_at(q);
            let psi = ft.psi_at(q);
            for i in 1..kd {
                let t = w * grad[i].dot(&ln);
                for r in 0..fd {
                    b[(i - 1, off + r)] += t * psi[r];
                }
                for j in 0..cd {
                    b[(i - 1, j)] -= t * phi[j];
                }
            }
        }
        face_weights.push(lambda_tf / ft.h);
    }
    let stiff = (&stiff + stiff.transpose()) * 0.5;
    let g = spd_solve(stiff, b.clone(), "reconstruction stiffness").map_err(|_| {
        Error::Conditioning(format!(
            "reconstruction stiffness of cell {} (degree {m}) is singular",
            table.cell
        ))
    })?;
    let consistency = b.transpose() * &g;
    let mut a = (&consistency + consistency.transpose()) * 0.5;

    // Cell projection of the reconstruction: P_T = (M_m)^{-1} M[0..cd, 1..kd].
    let mass_hi = table.mass(kd);
    let p_t = spd_solve(
        mass_hi.view((0, 0), (cd, cd)).into_owned(),
        mass_hi.view((0, 1), (cd, kd - 1)).into_owned(),
        "cell mass",
    )
    .map_err(|e| cell_error(table.cell, e))?;
    // Cell part of the correction, C_T = E_T - P_T G.
    let mut c_t = -(&p_t * &g);
    for j in 0..cd {
        c_t[(j, j)] += 1.0;
    }

    let mut stab = DMatrix::zeros(n, n);
    for (fi, ft) in table.faces.iter().enumerate() {
        let off = table.face_offset(m, fi);
        let mut m_ff = DMatrix::zeros(fd, fd);
        let mut m_tf = DMatrix::zeros(fd, kd);
        for q in 0..ft.n_points() {
            let w = ft.weights[q];
            let psi = ft.psi_at(q);
            let phi = ft.phi_at(q);
            for i in 0..fd {
                for j in 0..fd {
                    m_ff[(i, j)] += w * psi[i] * psi[j];
                }
                for j in 0..kd {
                    m_tf[(i, j)] += w * psi[i] * phi[j];
                }
            }
        }
        let proj_rhs = m_tf.view((0, 1), (fd, kd - 1)) * &g + m_tf.view((0, 0), (fd, cd)) * &c_t;
        let mut d = spd_solve(m_ff.clone(), proj_rhs, "face mass").map_err(|e| cell_error(table.cell, e))?;
        for r in 0..fd {
            d[(r, off + r)] -= 1.0;
        }
        let contrib = d.transpose() * &m_ff * &d * face_weights[fi];
        stab += contrib;
    }
    let stab = (&stab + stab.transpose()) * 0.5;
    a += &stab;
    let mean_row = mean_row(table, m, &g);
    Ok(LocalDiffusion {
        degree: m,
        a,
        stab,
        g,
        mean_row,
        face_weights,
    })
}

fn cell_error(cell: usize, e: Error) -> Error {
    match e {
        Error::Conditioning(s) => Error::Conditioning(format!("cell {cell}: {s}")),
        other => other,
    }
}

/// Constant coefficient of the reconstruction fixing `∫_T r = ∫_T u_T`.
fn mean_row(table: &CellTable, m: usize, g: &DMatrix<f64>) -> DMatrix<f64> {
    let cd = cell_dim(m);
    let kd = g.nrows() + 1;
    let n = g.ncols();
    let mut integrals = vec![0.0; kd];
    for q in 0..table.n_points() {
        let phi = table.phi_at(q);
        for i in 0..kd {
            integrals[i] += table.weights[q] * phi[i];
        }
    }
    let mut row = DMatrix::zeros(1, n);
    for j in 0..n {
        let mut v = if j < cd { integrals[j] } else { 0.0 };
        for i in 1..kd {
            v -= integrals[i] * g[(i - 1, j)];
        }
        row[(0, j)] = v / integrals[0];
    }
    row
}

/// Coefficients of the high-order correction `u_T + (r - π_T r)` on the
/// degree-`(m + 1)` cell basis.
pub fn correction_matrix(table: &CellTable, op: &LocalDiffusion) -> Result<DMatrix<f64>> {
    let m = op.degree;
    let cd = cell_dim(m);
    let kd = cell_dim(m + 1);
    let mass_hi = table.mass(kd);
    let p_t = spd_solve(
        mass_hi.view((0, 0), (cd, cd)).into_owned(),
        mass_hi.view((0, 1), (cd, kd - 1)).into_owned(),
        "cell mass",
    )?;
    let n = op.a.ncols();
    let mut r = DMatrix::zeros(kd, n);
    r.rows_mut(1, kd - 1).copy_from(&op.g);
    let pg = p_t * &op.g;
    for i in 0..cd {
        for j in 0..n {
            r[(i, j)] -= pg[(i, j)];
        }
        r[(i, i)] += 1.0;
    }
    Ok(r)
}

/// Per-cell and per-face polynomial coefficients of a hybrid unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridField {
    pub degree: usize,
    pub cells: Vec<f64>,
    pub faces: Vec<f64>,
}

impl HybridField {
    pub fn zeros(mesh: &Mesh, degree: usize) -> Self {
        HybridField {
            degree,
            cells: vec![0.0; mesh.n_cells() * cell_dim(degree)],
            faces: vec![0.0; mesh.n_faces() * face_dim(degree)],
        }
    }

    pub fn n_dofs(&self) -> usize {
        self.cells.len() + self.faces.len()
    }

    pub fn cell(&self, c: usize) -> &[f64] {
        let cd = cell_dim(self.degree);
        &self.cells[c * cd..(c + 1) * cd]
    }

    pub fn cell_mut(&mut self, c: usize) -> &mut [f64] {
        let cd = cell_dim(self.degree);
        &mut self.cells[c * cd..(c + 1) * cd]
    }

    pub fn face(&self, f: usize) -> &[f64] {
        let fd = face_dim(self.degree);
        &self.faces[f * fd..(f + 1) * fd]
    }

    pub fn face_mut(&mut self, f: usize) -> &mut [f64] {
        let fd = face_dim(self.degree);
        &mut self.faces[f * fd..(f + 1) * fd]
    }

    /// Local dof vector of a cell in the local layout.
    pub fn local(&self, mesh: &Mesh, c: usize) -> DVector<f64> {
        let mut v = Vec::with_capacity(cell_dim(self.degree) + mesh.cell_faces(c).len() * face_dim(self.degree));
        v.extend_from_slice(self.cell(c));
        for cf in mesh.cell_faces(c) {
            v.extend_from_slice(self.face(cf.face));
        }
        DVector::from_vec(v)
    }

    pub fn from_global(mesh: &Mesh, degree: usize, x: &[f64]) -> Result<Self> {
        let nc = mesh.n_cells() * cell_dim(degree);
        let nf = mesh.n_faces() * face_dim(degree);
        if x.len() != nc + nf {
            return Err(Error::LayoutMismatch(format!(
                "vector of length {} for {} dofs",
                x.len(),
                nc + nf
            )));
        }
        Ok(HybridField {
            degree,
            cells: x[..nc].to_vec(),
            faces: x[nc..].to_vec(),
        })
    }

    pub fn to_global(&self) -> Vec<f64> {
        let mut v = self.cells.clone();
        v.extend_from_slice(&self.faces);
        v
    }

    fn check_same(&self, other: &HybridField) -> Result<()> {
        if self.degree != other.degree || self.cells.len() != other.cells.len() || self.faces.len() != other.faces.len()
        {
            return Err(Error::LayoutMismatch(format!(
                "fields of degree {} and {} on different layouts",
                self.degree, other.degree
            )));
        }
        Ok(())
    }

    /// `a * self + b * other`, coefficientwise.
    pub fn combine(&self, a: f64, other: &HybridField, b: f64) -> Result<HybridField> {
        self.check_same(other)?;
        Ok(HybridField {
            degree: self.degree,
            cells: self
                .cells
                .iter()
                .zip(&other.cells)
                .map(|(x, y)| a * x + b * y)
                .collect(),
            faces: self
                .faces
                .iter()
                .zip(&other.faces)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        })
    }

    /// Linear combination `Σ w_i f_i` of fields on a common layout.
    pub fn linear_combination(terms: &[(f64, &HybridField)]) -> Result<HybridField> {
        let (w0, f0) = terms
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty linear combination".into()))?;
        let mut out = f0.combine(*w0, f0, 0.0)?;
        for (w, f) in &terms[1..] {
            out = out.combine(1.0, f, *w)?;
        }
        Ok(out)
    }

    /// `∫_Ω` of the cell polynomials.
    pub fn integral(&self, tables: &Tables) -> f64 {
        tables
            .cells
            .iter()
            .map(|t| {
                let coeffs = self.cell(t.cell);
                (0..t.n_points())
                    .map(|q| t.weights[q] * t.eval_cell(coeffs, q))
                    .sum::<f64>()
            })
            .sum()
    }
}

/// L² projection of a function onto the hybrid space (cell and face parts).
pub fn interpolate(mesh: &Mesh, tables: &Tables, m: usize, f: impl Fn(Point2<f64>) -> f64) -> Result<HybridField> {
    tables.check_degree(m)?;
    let cd = cell_dim(m);
    let fd = face_dim(m);
    let mut field = HybridField::zeros(mesh, m);
    let mut done = vec![false; mesh.n_faces()];
    for t in &tables.cells {
        let mass = t.mass(cd);
        let mut rhs = DMatrix::zeros(cd, 1);
        for q in 0..t.n_points() {
            let v = t.weights[q] * f(t.points[q]);
            let phi = t.phi_at(q);
            for i in 0..cd {
                rhs[(i, 0)] += v * phi[i];
            }
        }
        let x = spd_solve(mass, rhs, "cell mass").map_err(|e| cell_error(t.cell, e))?;
        field.cell_mut(t.cell).copy_from_slice(x.as_slice());
        for ft in &t.faces {
            if done[ft.face] {
                continue;
            }
            done[ft.face] = true;
            let mass = ft.mass(fd);
            let mut rhs = DMatrix::zeros(fd, 1);
            for q in 0..ft.n_points() {
                let v = ft.weights[q] * f(ft.points[q]);
                let psi = ft.psi_at(q);
                for i in 0..fd {
                    rhs[(i, 0)] += v * psi[i];
                }
            }
            let x = spd_solve(mass, rhs, "face mass")?;
            field.face_mut(ft.face).copy_from_slice(x.as_slice());
        }
    }
    Ok(field)
}

/// Global dof indices of the local layout of cell `c`.
pub fn local_to_global(mesh: &Mesh, c: usize, m: usize) -> Vec<usize> {
    let cd = cell_dim(m);
    let fd = face_dim(m);
    let base = mesh.n_cells() * cd;
    let mut idx: Vec<usize> = (c * cd..(c + 1) * cd).collect();
    for cf in mesh.cell_faces(c) {
        idx.extend(base + cf.face * fd..base + (cf.face + 1) * fd);
    }
    idx
}

/// A local matrix and right-hand side in the local layout of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSystem {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

fn check_locals(mesh: &Mesh, m: usize, locals: &[LocalSystem]) -> Result<()> {
    if locals.len() != mesh.n_cells() {
        return Err(Error::LayoutMismatch(format!(
            "{} local systems for {} cells",
            locals.len(),
            mesh.n_cells()
        )));
    }
    for (c, l) in locals.iter().enumerate() {
        let n = cell_dim(m) + mesh.cell_faces(c).len() * face_dim(m);
        if l.matrix.nrows() != n || l.matrix.ncols() != n || l.rhs.len() != n {
            return Err(Error::LayoutMismatch(format!(
                "cell {c}: local system is {}x{} with rhs {}, expected {n}",
                l.matrix.nrows(),
                l.matrix.ncols(),
                l.rhs.len()
            )));
        }
    }
    Ok(())
}

/// Sums local systems into the global system on all cell and face dofs.
pub fn assemble_global(mesh: &Mesh, m: usize, locals: &[LocalSystem]) -> Result<(SparseMatrix, Vec<f64>)> {
    check_locals(mesh, m, locals)?;
    let n = mesh.n_cells() * cell_dim(m) + mesh.n_faces() * face_dim(m);
    let mut triplets = Vec::new();
    let mut rhs = vec![0.0; n];
    for (c, l) in locals.iter().enumerate() {
        let idx = local_to_global(mesh, c, m);
        for (j, gj) in idx.iter().enumerate() {
            rhs[*gj] += l.rhs[j];
            for (i, gi) in idx.iter().enumerate() {
                let v = l.matrix[(i, j)];
                if v != 0.0 {
                    triplets.push((*gi, *gj, v));
                }
            }
        }
    }
    Ok((SparseMatrix::from_triplets(n, triplets)?, rhs))
}

/// Affine map from the local face dofs of a cell to its cell dofs,
/// `u_T = y - X u_F`.
#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

/// Face-only system left after eliminating the cell unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedSystem {
    pub degree: usize,
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
    pub recovery: Vec<Recovery>,
}

/// Schur complement of the cell block of one local system.
pub fn condense_local(local: &LocalSystem, cd: usize) -> Result<(DMatrix<f64>, DVector<f64>, Recovery)> {
    let n = local.matrix.nrows();
    let nf = n - cd;
    let a_tt = local.matrix.view((0, 0), (cd, cd)).into_owned();
    let a_tf = local.matrix.view((0, cd), (cd, nf));
    let a_ft = local.matrix.view((cd, 0), (nf, cd));
    let a_ff = local.matrix.view((cd, cd), (nf, nf));
    let scale = a_tt.amax();
    let lu = a_tt.lu();
    let u = lu.u();
    let min_pivot = (0..cd).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min);
    if !(min_pivot > 1e-14 * scale) {
        return Err(Error::Conditioning("singular cell block".into()));
    }
    let x = lu
        .solve(&a_tf.into_owned())
        .ok_or_else(|| Error::Conditioning("singular cell block".into()))?;
    let y = lu
        .solve(&local.rhs.rows(0, cd).into_owned())
        .ok_or_else(|| Error::Conditioning("singular cell block".into()))?;
    let schur = a_ff - a_ft * &x;
    let rhs = local.rhs.rows(cd, nf) - a_ft * &y;
    Ok((schur, rhs, Recovery { x, y }))
}

/// Eliminates the cell unknowns of every local system.
pub fn static_condense(mesh: &Mesh, m: usize, locals: &[LocalSystem]) -> Result<CondensedSystem> {
    check_locals(mesh, m, locals)?;
    let cd = cell_dim(m);
    let fd = face_dim(m);
    let n = mesh.n_faces() * fd;
    let mut triplets = Vec::new();
    let mut rhs = vec![0.0; n];
    let mut recovery = Vec::with_capacity(locals.len());
    for (c, l) in locals.iter().enumerate() {
        let (schur, r, rec) = condense_local(l, cd).map_err(|e| match e {
            Error::Conditioning(s) => Error::Conditioning(format!("cell {c}: {s}")),
            other => other,
        })?;
        let idx: Vec<usize> = mesh
            .cell_faces(c)
            .iter()
            .flat_map(|cf| cf.face * fd..(cf.face + 1) * fd)
            .collect();
        for (j, gj) in idx.iter().enumerate() {
            rhs[*gj] += r[j];
            for (i, gi) in idx.iter().enumerate() {
                let v = schur[(i, j)];
                if v != 0.0 {
                    triplets.push((*gi, *gj, v));
                }
            }
        }
        recovery.push(rec);
    }
    Ok(CondensedSystem {
        degree: m,
        matrix: SparseMatrix::from_triplets(n, triplets)?,
        rhs,
        recovery,
    })
}

impl CondensedSystem {
    /// Rebuilds the full hybrid field from face values.
    pub fn recover(&self, mesh: &Mesh, faces: &[f64]) -> Result<HybridField> {
        let fd = face_dim(self.degree);
        if faces.len() != mesh.n_faces() * fd {
            return Err(Error::LayoutMismatch(format!(
                "{} face values for {} face dofs",
                faces.len(),
                mesh.n_faces() * fd
            )));
        }
        let mut field = HybridField::zeros(mesh, self.degree);
        field.faces.copy_from_slice(faces);
        for (c, rec) in self.recovery.iter().enumerate() {
            let local: Vec<f64> = mesh
                .cell_faces(c)
                .iter()
                .flat_map(|cf| faces[cf.face * fd..(cf.face + 1) * fd].iter().copied())
                .collect();
            let u = &rec.y - &rec.x * DVector::from_vec(local);
            field.cell_mut(c).copy_from_slice(u.as_slice());
        }
        Ok(field)
    }

    /// Pushes a linear functional on cell dofs (`g · u_T` summed over cells)
    /// through the recovery maps. Returns the face functional and the constant.
    pub fn condense_functional(&self, mesh: &Mesh, cell_functional: &[f64]) -> (Vec<f64>, f64) {
        let cd = crate::basis::cell_dim(self.degree);
        let fd = face_dim(self.degree);
        let mut g = vec![0.0; mesh.n_faces() * fd];
        let mut constant = 0.0;
        for (c, rec) in self.recovery.iter().enumerate() {
            let gc = DVector::from_column_slice(&cell_functional[c * cd..(c + 1) * cd]);
            constant += gc.dot(&rec.y);
            let gf = rec.x.transpose() * gc;
            for (i, cf) in mesh.cell_faces(c).iter().enumerate() {
                for r in 0..fd {
                    g[cf.face * fd + r] -= gf[i * fd + r];
                }
            }
        }
        (g, constant)
    }
}
