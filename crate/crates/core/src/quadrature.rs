//! Quadrature on triangles and segments.
//!
//! Triangle rules up to degree 5 are the classical symmetric Dunavant rules
//! with positive weights (degree 3 is served by the degree-4 rule, since the
//! degree-3 Dunavant rule has a negative weight). Higher degrees use a
//! collapsed Gauss–Legendre product rule, also with positive weights.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::mesh::Mesh;
use crate::{Error, Point2, Result};

/// Largest supported triangle exactness degree.
pub const MAX_TRIANGLE_DEGREE: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<Point2<f64>>,
    /// Physical weights; they sum to the measure of the integration domain.
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate(&self, mut f: impl FnMut(Point2<f64>) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(p, w)| w * f(*p)).sum()
    }
}

/// Gauss–Legendre nodes and weights on `[0, 1]` (weights sum to one).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "Gauss rule needs at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = math::cos(core::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5));
        let mut dp = 0.0;
        for _ in 0..100 {
            // Three-term recurrence for P_n and its derivative.
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * z * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if math::abs(dz) < 1e-16 {
                break;
            }
        }
        if n == 1 {
            z = 0.0;
            dp = 1.0;
        }
        let weight = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = 0.5 * (1.0 - z);
        x[n - 1 - i] = 0.5 * (1.0 + z);
        w[i] = 0.5 * weight;
        w[n - 1 - i] = 0.5 * weight;
    }
    (x, w)
}

/// Reference triangle rule as barycentric pairs `(l1, l2)` with weights
/// summing to one (fractions of the triangle area).
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTriangleRule {
    pub bary: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

fn orbit3(bary: &mut Vec<[f64; 2]>, weights: &mut Vec<f64>, a: f64, w: f64) {
    let b = 1.0 - 2.0 * a;
    bary.push([a, a]);
    bary.push([b, a]);
    bary.push([a, b]);
    weights.extend([w, w, w]);
}

impl ReferenceTriangleRule {
    pub fn new(degree: usize) -> Result<Self> {
        let mut bary = Vec::new();
        let mut weights = Vec::new();
        match degree {
            0 | 1 => {
                bary.push([1.0 / 3.0, 1.0 / 3.0]);
                weights.push(1.0);
            }
            2 => orbit3(&mut bary, &mut weights, 1.0 / 6.0, 1.0 / 3.0),
            3 | 4 => {
                orbit3(&mut bary, &mut weights, 0.445948490915965, 0.223381589678011);
                orbit3(&mut bary, &mut weights, 0.091576213509771, 0.109951743655322);
            }
            5 => {
                let s = math::sqrt(15.0);
                bary.push([1.0 / 3.0, 1.0 / 3.0]);
                weights.push(9.0 / 40.0);
                orbit3(&mut bary, &mut weights, (6.0 + s) / 21.0, (155.0 + s) / 1200.0);
                orbit3(&mut bary, &mut weights, (6.0 - s) / 21.0, (155.0 - s) / 1200.0);
            }
            d if d <= MAX_TRIANGLE_DEGREE => {
                // Collapse the square onto the triangle: (u, v) -> (u, v(1 - u)).
                let (xu, wu) = gauss_legendre((d + 2).div_ceil(2));
                let (xv, wv) = gauss_legendre((d + 1).div_ceil(2));
                for (u, au) in xu.iter().zip(&wu) {
                    for (v, av) in xv.iter().zip(&wv) {
                        bary.push([*u, v * (1.0 - u)]);
                        weights.push(2.0 * au * av * (1.0 - u));
                    }
                }
            }
            d => return Err(Error::UnsupportedDegree(d)),
        }
        // Tabulated weights carry 15 digits; renormalise so they sum to one.
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        Ok(ReferenceTriangleRule { bary, weights, degree })
    }

    /// Maps the rule onto a triangle, appending to `out`.
    pub fn map_into(&self, tri: &[Point2<f64>; 3], out: &mut QuadratureRule) {
        let area = crate::mesh::signed_triangle_area(tri).abs();
        let e1 = tri[1] - tri[0];
        let e2 = tri[2] - tri[0];
        for (b, w) in self.bary.iter().zip(&self.weights) {
            out.points.push(tri[0] + e1 * b[0] + e2 * b[1]);
            out.weights.push(w * area);
        }
    }

    pub fn map(&self, tri: &[Point2<f64>; 3]) -> QuadratureRule {
        let mut out = QuadratureRule {
            points: Vec::with_capacity(self.weights.len()),
            weights: Vec::with_capacity(self.weights.len()),
            degree: self.degree,
        };
        self.map_into(tri, &mut out);
        out
    }
}

/// Gauss–Legendre rule on `[0, 1]` exact to the given degree.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSegmentRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl ReferenceSegmentRule {
    pub fn new(degree: usize) -> Self {
        let (nodes, weights) = gauss_legendre((degree + 1).div_ceil(2).max(1));
        ReferenceSegmentRule { nodes, weights, degree }
    }

    pub fn map(&self, a: Point2<f64>, b: Point2<f64>) -> QuadratureRule {
        let len = (b - a).norm();
        QuadratureRule {
            points: self.nodes.iter().map(|t| a + (b - a) * *t).collect(),
            weights: self.weights.iter().map(|w| w * len).collect(),
            degree: self.degree,
        }
    }
}

pub fn triangle_rule(degree: usize, tri: &[Point2<f64>; 3]) -> Result<QuadratureRule> {
    Ok(ReferenceTriangleRule::new(degree)?.map(tri))
}

pub fn segment_rule(degree: usize, a: Point2<f64>, b: Point2<f64>) -> QuadratureRule {
    ReferenceSegmentRule::new(degree).map(a, b)
}

/// Reference rules of one exactness degree, shared by all cells and faces.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature {
    pub triangle: ReferenceTriangleRule,
    pub segment: ReferenceSegmentRule,
}

impl Quadrature {
    pub fn new(degree: usize) -> Result<Self> {
        Ok(Quadrature {
            triangle: ReferenceTriangleRule::new(degree)?,
            segment: ReferenceSegmentRule::new(degree),
        })
    }

    pub fn degree(&self) -> usize {
        self.triangle.degree
    }

    /// Composite rule over the centroid sub-triangulation of a cell.
    pub fn cell(&self, mesh: &Mesh, c: usize) -> QuadratureRule {
        let mut out = QuadratureRule {
            points: Vec::new(),
            weights: Vec::new(),
            degree: self.degree(),
        };
        for t in mesh.subtriangles(c) {
            self.triangle.map_into(&t.vertices, &mut out);
        }
        out
    }

    pub fn face(&self, mesh: &Mesh, f: usize) -> QuadratureRule {
        let face = mesh.face(f);
        self.segment.map(face.endpoints[0], face.endpoints[1])
    }

    /// Cell rules for every cell, concatenated per cell.
    pub fn all_cells(&self, mesh: &Mesh) -> Vec<QuadratureRule> {
        (0..mesh.n_cells()).map(|c| self.cell(mesh, c)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Exact integral of x^a y^b over the reference triangle: a! b! / (a+b+2)!.
    fn monomial_exact(a: u32, b: u32) -> f64 {
        let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
        fact(a) * fact(b) / fact(a + b + 2)
    }

    fn reference() -> [Point2<f64>; 3] {
        [Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.0, 1.0)]
    }

    #[test]
    fn triangle_rules_are_exact() {
        for degree in 0..=MAX_TRIANGLE_DEGREE {
            let rule = triangle_rule(degree, &reference()).unwrap();
            assert!(rule.weights.iter().all(|w| *w > 0.0));
            for a in 0..=degree as u32 {
                for b in 0..=(degree as u32 - a) {
                    let got = rule.integrate(|p| math::powi(p.x, a as i32) * math::powi(p.y, b as i32));
                    let exact = monomial_exact(a, b);
                    assert!(
                        (got - exact).abs() <= 1e-12 * exact,
                        "degree {degree}, x^{a} y^{b}: {got} vs {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn triangle_examples() {
        let rule = triangle_rule(1, &reference()).unwrap();
        assert_eq!(rule.len(), 1);
        assert!((rule.points[0] - Point2::new(1.0 / 3.0, 1.0 / 3.0)).norm() < 1e-15);
        assert!((rule.weights[0] - 0.5).abs() < 1e-15);
        let tri = [Point2::new(2.0, 1.0), Point2::new(5.0, 2.0), Point2::new(3.0, 7.0)];
        let area = crate::mesh::signed_triangle_area(&tri);
        for degree in [1, 2, 5, 9, 20] {
            let r = triangle_rule(degree, &tri).unwrap();
            let sum: f64 = r.weights.iter().sum();
            assert!((sum - area).abs() < 1e-13 * area);
            let ref_rule = triangle_rule(degree, &reference()).unwrap();
            assert!((ref_rule.integrate(|p| p.x) - 1.0 / 6.0).abs() < 1e-15);
        }
        assert_eq!(triangle_rule(21, &reference()), Err(Error::UnsupportedDegree(21)));
    }

    #[test]
    fn segment_examples() {
        let a = Point2::new(0.0, 0.0);
        let b = Point2::new(1.0, 0.0);
        let r = segment_rule(3, a, b);
        assert_eq!(r.len(), 2);
        assert!((r.integrate(|p| p.x * p.x * p.x) - 0.25).abs() < 1e-15);
        let r = segment_rule(7, Point2::new(1.0, 1.0), Point2::new(4.0, 5.0));
        assert!((r.weights.iter().sum::<f64>() - 5.0).abs() < 1e-14);
        assert!(r.weights.iter().all(|w| *w > 0.0));
    }

    #[test]
    fn gauss_rules_are_exact() {
        for n in 1..=12 {
            let (x, w) = gauss_legendre(n);
            for p in 0..(2 * n) as i32 {
                let got: f64 = x.iter().zip(&w).map(|(x, w)| w * math::powi(*x, p)).sum();
                assert!((got - 1.0 / (p + 1) as f64).abs() < 1e-14, "n={n} p={p}");
            }
        }
    }

    #[test]
    fn cell_rule_sums_to_area() {
        let mesh = crate::mesh::build_cartesian_mesh(3, 2, crate::mesh::BBox::new(0.0, 0.0, 3.0, 1.0)).unwrap();
        let q = Quadrature::new(6).unwrap();
        for c in 0..mesh.n_cells() {
            let r = q.cell(&mesh, c);
            let sum: f64 = r.weights.iter().sum();
            assert!((sum - mesh.cell(c).measure).abs() < 1e-13);
        }
    }
}
