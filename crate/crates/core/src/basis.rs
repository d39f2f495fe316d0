//! Scaled monomial bases on cells and faces, and L² projections onto them.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::mesh::Mesh;
use crate::quadrature::QuadratureRule;
use crate::{Error, Point2, Result, Vector2};

/// Dimension of the polynomials of total degree at most `m` in two variables.
pub const fn cell_dim(m: usize) -> usize {
    (m + 1) * (m + 2) / 2
}

pub const fn face_dim(m: usize) -> usize {
    m + 1
}

/// `((x - x_T)/h_T)^r ((y - y_T)/h_T)^s`, ordered by total degree and then by
/// descending `r`. A basis of degree `m` is therefore a prefix of the basis
/// of degree `m + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellBasis {
    pub centre: Point2<f64>,
    pub h: f64,
    pub degree: usize,
    exponents: Vec<(usize, usize)>,
}

impl CellBasis {
    pub fn new(centre: Point2<f64>, h: f64, degree: usize) -> Self {
        let mut exponents = Vec::with_capacity(cell_dim(degree));
        for d in 0..=degree {
            for r in (0..=d).rev() {
                exponents.push((r, d - r));
            }
        }
        CellBasis {
            centre,
            h,
            degree,
            exponents,
        }
    }

    pub fn for_cell(mesh: &Mesh, c: usize, degree: usize) -> Self {
        let cell = mesh.cell(c);
        Self::new(cell.centroid, cell.diameter, degree)
    }

    pub fn dim(&self) -> usize {
        self.exponents.len()
    }

    pub fn exponents(&self) -> &[(usize, usize)] {
        &self.exponents
    }

    fn powers(&self, p: Point2<f64>) -> (Vec<f64>, Vec<f64>) {
        let xi = (p.x - self.centre.x) / self.h;
        let eta = (p.y - self.centre.y) / self.h;
        let mut px = vec![1.0; self.degree + 1];
        let mut py = vec![1.0; self.degree + 1];
        for i in 1..=self.degree {
            px[i] = px[i - 1] * xi;
            py[i] = py[i - 1] * eta;
        }
        (px, py)
    }

    /// Writes the values of all basis functions at `p` into `out`.
    pub fn eval_into(&self, p: Point2<f64>, out: &mut [f64]) {
        let (px, py) = self.powers(p);
        for (o, &(r, s)) in out.iter_mut().zip(&self.exponents) {
            *o = px[r] * py[s];
        }
    }

    pub fn eval(&self, p: Point2<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(p, &mut out);
        out
    }

    pub fn grad_into(&self, p: Point2<f64>, out: &mut [Vector2<f64>]) {
        let (px, py) = self.powers(p);
        let inv_h = 1.0 / self.h;
        for (o, &(r, s)) in out.iter_mut().zip(&self.exponents) {
            let gx = if r > 0 { r as f64 * px[r - 1] * py[s] } else { 0.0 };
            let gy = if s > 0 { s as f64 * px[r] * py[s - 1] } else { 0.0 };
            *o = Vector2::new(gx * inv_h, gy * inv_h);
        }
    }

    pub fn grad(&self, p: Point2<f64>) -> Vec<Vector2<f64>> {
        let mut out = vec![Vector2::zeros(); self.dim()];
        self.grad_into(p, &mut out);
        out
    }

    /// Value of the polynomial with coefficients `coeffs` (a prefix of the basis).
    pub fn eval_poly(&self, coeffs: &[f64], p: Point2<f64>) -> f64 {
        let (px, py) = self.powers(p);
        coeffs
            .iter()
            .zip(&self.exponents)
            .map(|(c, &(r, s))| c * px[r] * py[s])
            .sum()
    }

    pub fn grad_poly(&self, coeffs: &[f64], p: Point2<f64>) -> Vector2<f64> {
        let g = self.grad(p);
        coeffs.iter().zip(&g).map(|(c, g)| g * *c).sum()
    }

    /// Mass matrix on a cell rule, restricted to the first `n` functions.
    pub fn mass(&self, rule: &QuadratureRule, n: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, n);
        let mut v = vec![0.0; self.dim()];
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            self.eval_into(*p, &mut v);
            for j in 0..n {
                let wj = w * v[j];
                for i in j..n {
                    m[(i, j)] += wj * v[i];
                }
            }
        }
        symmetrise_lower(&mut m);
        m
    }
}

/// Powers of `t = (x - x_F)·(x_0 - x_F) / h_F²`, where `x_0` is the
/// lexicographically smaller endpoint, so `t` ranges over `[-1/4, 1/4]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceBasis {
    pub midpoint: Point2<f64>,
    pub h: f64,
    pub degree: usize,
    direction: Vector2<f64>,
}

impl FaceBasis {
    pub fn new(a: Point2<f64>, b: Point2<f64>, degree: usize) -> Self {
        let x0 = if (a.x, a.y) <= (b.x, b.y) { a } else { b };
        let midpoint = Point2::new(0.5 * (a.x + b.x), 0.5 * (a.y + b.y));
        let h = (b - a).norm();
        FaceBasis {
            midpoint,
            h,
            degree,
            direction: (x0 - midpoint) / (h * h),
        }
    }

    pub fn for_face(mesh: &Mesh, f: usize, degree: usize) -> Self {
        let face = mesh.face(f);
        Self::new(face.endpoints[0], face.endpoints[1], degree)
    }

    pub fn dim(&self) -> usize {
        self.degree + 1
    }

    pub fn coordinate(&self, p: Point2<f64>) -> f64 {
        (p - self.midpoint).dot(&self.direction)
    }

    pub fn eval_into(&self, p: Point2<f64>, out: &mut [f64]) {
        let t = self.coordinate(p);
        let mut acc = 1.0;
        for o in out.iter_mut() {
            *o = acc;
            acc *= t;
        }
    }

    pub fn eval(&self, p: Point2<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(p, &mut out);
        out
    }

    pub fn eval_poly(&self, coeffs: &[f64], p: Point2<f64>) -> f64 {
        let t = self.coordinate(p);
        coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    pub fn mass(&self, rule: &QuadratureRule) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        let mut v = vec![0.0; n];
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            self.eval_into(*p, &mut v);
            for j in 0..n {
                for i in j..n {
                    m[(i, j)] += w * v[i] * v[j];
                }
            }
        }
        symmetrise_lower(&mut m);
        m
    }
}

pub(crate) fn symmetrise_lower(m: &mut DMatrix<f64>) {
    for j in 0..m.ncols() {
        for i in 0..j {
            m[(i, j)] = m[(j, i)];
        }
    }
}

/// Solves `m x = b` for a symmetric positive definite `m`.
pub(crate) fn spd_solve(m: DMatrix<f64>, b: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let chol = nalgebra::Cholesky::new(m)
        .ok_or_else(|| Error::Conditioning(format!("{what}: matrix is not positive definite")))?;
    Ok(chol.solve(&b))
}

/// L² projection of `f` onto the first `n` functions of a cell basis.
pub fn project_cell(
    basis: &CellBasis,
    rule: &QuadratureRule,
    n: usize,
    mut f: impl FnMut(Point2<f64>) -> f64,
) -> Result<DVector<f64>> {
    let mass = basis.mass(rule, n);
    let mut rhs = DMatrix::zeros(n, 1);
    let mut v = vec![0.0; basis.dim()];
    for (p, w) in rule.points.iter().zip(&rule.weights) {
        basis.eval_into(*p, &mut v);
        let fw = w * f(*p);
        for i in 0..n {
            rhs[(i, 0)] += fw * v[i];
        }
    }
    let x = spd_solve(mass, rhs, "cell mass")?;
    Ok(x.column(0).into_owned())
}

/// L² projection of `f` onto a face basis.
pub fn project_face(
    basis: &FaceBasis,
    rule: &QuadratureRule,
    mut f: impl FnMut(Point2<f64>) -> f64,
) -> Result<DVector<f64>> {
    let n = basis.dim();
    let mass = basis.mass(rule);
    let mut rhs = DMatrix::zeros(n, 1);
    let mut v = vec![0.0; n];
    for (p, w) in rule.points.iter().zip(&rule.weights) {
        basis.eval_into(*p, &mut v);
        let fw = w * f(*p);
        for i in 0..n {
            rhs[(i, 0)] += fw * v[i];
        }
    }
    let x = spd_solve(mass, rhs, "face mass")?;
    Ok(x.column(0).into_owned())
}
