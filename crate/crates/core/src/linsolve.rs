//! Sparse matrices and a direct envelope solver.
//!
//! The factorisation is an LU decomposition without pivoting on a reverse
//! Cuthill–McKee ordered envelope (skyline). It is only used on matrices whose
//! symmetric part is positive definite, possibly after bordering with a
//! single mean constraint, so no pivoting is required.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result};

/// Required relative residual of every direct solve.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;

/// Relative compatibility defect above which a mean-constrained right-hand
/// side is rejected.
pub const COMPATIBILITY_TOLERANCE: f64 = 1e-9;

const MAX_REFINEMENT_STEPS: usize = 5;

/// Square matrix in compressed sparse row form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// Builds an `n × n` matrix, summing duplicate entries.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(i, j, _)) = triplets.iter().find(|(i, j, _)| *i >= n || *j >= n) {
            return Err(Error::LayoutMismatch(format!(
                "entry ({i}, {j}) outside a {n}x{n} matrix"
            )));
        }
        triplets.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(j);
                vals.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(SparseMatrix { n, row_ptr, cols, vals })
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            n,
            row_ptr: (0..=n).collect(),
            cols: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map(|k| vals[k]).unwrap_or(0.0)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(j, v)| v * x[*j]).sum()
            })
            .collect()
    }

    /// `b - A x`, each entry accumulated with compensated products and sums.
    pub fn residual(&self, b: &[f64], x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let (cols, vals) = self.row(i);
                let (mut s, mut c) = (b[i], 0.0);
                for (j, v) in cols.iter().zip(vals) {
                    let (p, ep) = math::two_prod(-v, x[*j]);
                    let (t, es) = math::two_sum(s, p);
                    s = t;
                    c += ep + es;
                }
                s + c
            })
            .collect()
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (j, v) in cols.iter().zip(vals) {
                worst = worst.max(math::abs(v - self.get(*j, i)));
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(math::abs(*v)))
    }

    /// Neighbour lists of the symmetrised sparsity pattern, without the diagonal.
    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for i in 0..self.n {
            for &j in self.row(i).0 {
                if i != j {
                    adj[i].push(j);
                    adj[j].push(i);
                }
            }
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        adj
    }
}

fn norm(v: &[f64]) -> f64 {
    math::sqrt(v.iter().map(|x| x * x).sum())
}

fn bfs_levels(adj: &[Vec<usize>], start: usize, mark: &mut [usize], stamp: usize) -> Vec<Vec<usize>> {
    let mut levels = vec![vec![start]];
    mark[start] = stamp;
    loop {
        let mut next = Vec::new();
        for &u in levels.last().unwrap() {
            for &v in &adj[u] {
                if mark[v] != stamp {
                    mark[v] = stamp;
                    next.push(v);
                }
            }
        }
        if next.is_empty() {
            return levels;
        }
        levels.push(next);
    }
}

/// Reverse Cuthill–McKee ordering; `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &SparseMatrix) -> Vec<usize> {
    let n = a.dim();
    let adj = a.adjacency();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut mark = vec![usize::MAX; n];
    let mut stamp = 0;
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        // Lowest-degree unvisited node seeds the pseudo-peripheral search.
        let mut start = (0..n).filter(|&v| !visited[v]).min_by_key(|&v| (degree[v], v)).unwrap();
        let mut ecc = 0;
        loop {
            stamp += 1;
            let levels = bfs_levels(&adj, start, &mut mark, stamp);
            let candidate = *levels.last().unwrap().iter().min_by_key(|&&v| (degree[v], v)).unwrap();
            if levels.len() - 1 <= ecc {
                break;
            }
            ecc = levels.len() - 1;
            start = candidate;
        }
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut next: Vec<usize> = adj[u].iter().copied().filter(|&v| !visited[v]).collect();
            next.sort_unstable_by_key(|&v| (degree[v], v));
            for v in next {
                visited[v] = true;
                queue.push_back(v);
            }
        }
    }
    order.reverse();
    order
}

/// LU factors stored on the envelope of a symmetrically permuted matrix.
#[derive(Debug, Clone)]
pub struct EnvelopeLu {
    perm: Vec<usize>,
    first: Vec<usize>,
    lo_ptr: Vec<usize>,
    up_ptr: Vec<usize>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators keep the loop vectorisable and the order fixed.
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

impl EnvelopeLu {
    /// Factorises `a` in the order given by `perm` (`perm[new] = old`).
    pub fn factor(a: &SparseMatrix, perm: Vec<usize>) -> Result<Self> {
        let n = a.dim();
        if perm.len() != n {
            return Err(Error::LayoutMismatch(format!(
                "ordering of length {} for a {n}x{n} matrix",
                perm.len()
            )));
        }
        let mut inv = vec![usize::MAX; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        if inv.contains(&usize::MAX) {
            return Err(Error::LayoutMismatch("ordering is not a permutation".into()));
        }
        let mut first: Vec<usize> = (0..n).collect();
        let mut row_scale = vec![0.0f64; n];
        for old_i in 0..n {
            let i = inv[old_i];
            let (cols, vals) = a.row(old_i);
            for (&old_j, v) in cols.iter().zip(vals) {
                let j = inv[old_j];
                let k = i.max(j);
                first[k] = first[k].min(i.min(j));
                row_scale[i] = row_scale[i].max(math::abs(*v));
            }
        }
        let mut lo_ptr = vec![0usize; n + 1];
        let mut up_ptr = vec![0usize; n + 1];
        for i in 0..n {
            lo_ptr[i + 1] = lo_ptr[i] + (i - first[i]);
            up_ptr[i + 1] = up_ptr[i] + (i - first[i] + 1);
        }
        let mut lower = vec![0.0; lo_ptr[n]];
        let mut upper = vec![0.0; up_ptr[n]];
        for old_i in 0..n {
            let i = inv[old_i];
            let (cols, vals) = a.row(old_i);
            for (&old_j, v) in cols.iter().zip(vals) {
                let j = inv[old_j];
                if j < i {
                    lower[lo_ptr[i] + j - first[i]] += v;
                } else {
                    upper[up_ptr[j] + i - first[j]] += v;
                }
            }
        }

        for i in 0..n {
            let fi = first[i];
            let (lo_done, lo_rest) = lower.split_at_mut(lo_ptr[i]);
            let row_i = &mut lo_rest[..i - fi];
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let col_j = &upper[up_ptr[j]..up_ptr[j + 1]];
                let s = dot(&row_i[k0 - fi..j - fi], &col_j[k0 - fj..j - fj]);
                row_i[j - fi] = (row_i[j - fi] - s) / col_j[j - fj];
            }
            let (_, up_rest) = upper.split_at_mut(up_ptr[i]);
            let col_i = &mut up_rest[..i - fi + 1];
            for j in fi..=i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let row_j: &[f64] = if j == i {
                    &*row_i
                } else {
                    &lo_done[lo_ptr[j]..lo_ptr[j + 1]]
                };
                let s = dot(&row_j[k0 - fj..j - fj], &col_i[k0 - fi..j - fi]);
                col_i[j - fi] -= s;
            }
            let pivot = col_i[i - fi];
            let scale = row_scale[i].max(f64::MIN_POSITIVE);
            if !(math::abs(pivot) > 64.0 * f64::EPSILON * scale) {
                return Err(Error::Conditioning(format!(
                    "pivot {pivot:e} at position {i} of {n} (row scale {scale:e})"
                )));
            }
        }
        Ok(EnvelopeLu {
            perm,
            first,
            lo_ptr,
            up_ptr,
            lower,
            upper,
        })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Number of stored factor entries.
    pub fn envelope_size(&self) -> usize {
        self.lower.len() + self.upper.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.lower[self.lo_ptr[i]..self.lo_ptr[i + 1]];
            y[i] -= dot(row, &y[fi..i]);
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let col = &self.upper[self.up_ptr[i]..self.up_ptr[i + 1]];
            let xi = y[i] / col[i - fi];
            y[i] = xi;
            for (yk, u) in y[fi..i].iter_mut().zip(&col[..i - fi]) {
                *yk -= xi * u;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

/// Outcome of a checked solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    /// `‖A x - b‖ / ‖b‖` of the returned solution.
    pub residual: f64,
}

/// Iterative refinement with residuals accumulated in twice the working
/// precision, run until the correction stops shrinking.
fn refine(a: &SparseMatrix, lu: &EnvelopeLu, b: &[f64], context: &str) -> Result<Solution> {
    let bn = norm(b);
    if bn == 0.0 {
        return Ok(Solution {
            x: vec![0.0; b.len()],
            residual: 0.0,
        });
    }
    let mut x = lu.solve(b);
    let mut last = f64::INFINITY;
    for _ in 0..MAX_REFINEMENT_STEPS {
        let dx = lu.solve(&a.residual(b, &x));
        let dn = norm(&dx);
        if !(dn < last) {
            break;
        }
        for (x, d) in x.iter_mut().zip(&dx) {
            *x += d;
        }
        last = dn;
        if dn <= f64::EPSILON * norm(&x) {
            break;
        }
    }
    let residual = norm(&a.residual(b, &x)) / bn;
    if !(residual <= RESIDUAL_TOLERANCE) {
        return Err(Error::Solver {
            context: String::from(context),
            residual,
        });
    }
    Ok(Solution { x, residual })
}

/// Solves `a x = b` and checks the relative residual.
pub fn solve_direct(a: &SparseMatrix, b: &[f64]) -> Result<Solution> {
    if b.len() != a.dim() {
        return Err(Error::LayoutMismatch(format!(
            "right-hand side of length {} for a {}x{} matrix",
            b.len(),
            a.dim(),
            a.dim()
        )));
    }
    let lu = EnvelopeLu::factor(a, reverse_cuthill_mckee(a))?;
    refine(a, &lu, b, "direct solve")
}

/// Solves `a x = b` subject to `g · x = target`, where `a` is singular with a
/// one-dimensional kernel on which `g` does not vanish.
///
/// The constraint is imposed with a Lagrange multiplier. `anchor` must be a
/// dof on which the kernel vector is nonzero; it is eliminated last, after the
/// multiplier, which keeps every pivot of the unpivoted factorisation away
/// from zero. When `anchor` is `None` the dof maximising `|g_i|` is used.
pub fn solve_with_mean_constraint(
    a: &SparseMatrix,
    b: &[f64],
    g: &[f64],
    target: f64,
    anchor: Option<usize>,
) -> Result<Solution> {
    let n = a.dim();
    if b.len() != n || g.len() != n {
        return Err(Error::LayoutMismatch(format!(
            "constraint data of lengths {}/{} for a {n}x{n} matrix",
            b.len(),
            g.len()
        )));
    }
    let anchor = match anchor {
        Some(i) if i < n => i,
        Some(i) => return Err(Error::LayoutMismatch(format!("anchor {i} out of range"))),
        None => (0..n)
            .max_by(|&i, &j| math::abs(g[i]).total_cmp(&math::abs(g[j])).then(j.cmp(&i)))
            .ok_or_else(|| Error::InvalidArgument("empty system".into()))?,
    };
    if g.iter().all(|v| *v == 0.0) {
        return Err(Error::InvalidArgument("mean functional is zero".into()));
    }
    let mut triplets = Vec::with_capacity(a.nnz() + 2 * n);
    for i in 0..n {
        let (cols, vals) = a.row(i);
        triplets.extend(cols.iter().zip(vals).map(|(j, v)| (i, *j, *v)));
        if g[i] != 0.0 {
            triplets.push((i, n, g[i]));
            triplets.push((n, i, g[i]));
        }
    }
    let aug = SparseMatrix::from_triplets(n + 1, triplets)?;
    let mut perm: Vec<usize> = reverse_cuthill_mckee(a).into_iter().filter(|&i| i != anchor).collect();
    perm.push(n);
    perm.push(anchor);
    let lu = EnvelopeLu::factor(&aug, perm)?;
    let mut rhs = b.to_vec();
    rhs.push(target);
    let sol = refine(&aug, &lu, &rhs, "mean-constrained solve")?;
    let lambda = sol.x[n];
    let scale = norm(b).max(math::abs(target) * norm(g));
    let defect = if scale > 0.0 {
        math::abs(lambda) * norm(g) / scale
    } else {
        0.0
    };
    if defect > COMPATIBILITY_TOLERANCE {
        return Err(Error::Incompatible { defect });
    }
    let mut x = sol.x;
    x.truncate(n);
    Ok(Solution {
        x,
        residual: sol.residual,
    })
}
