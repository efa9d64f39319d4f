//! Polytopes in halfspace and vertex form, configuration triples and
//! distances between polytopes.

mod hausdorff;
mod triple;
mod vertex_enum;

pub use hausdorff::{NESTING_TOL, distance_to_hpolytope, distance_to_hull, hausdorff_distance};
pub use triple::{ConfigurationTriple, TripleFile};
pub use vertex_enum::enumerate_vertices;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qp::{solve_lp, QuadraticProgram, SolveStatus};

/// Two points closer than this are treated as the same vertex.
pub const VERTEX_DEDUP_TOL: f64 = 1e-9;

/// `{x | lhs · x ≤ rhs}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HPolytope {
    pub lhs: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

impl HPolytope {
    pub fn new(lhs: DMatrix<f64>, rhs: DVector<f64>) -> Result<Self> {
        if lhs.nrows() != rhs.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} facet rows but {} offsets",
                lhs.nrows(),
                rhs.len()
            )));
        }
        if let Some(r) = (0..lhs.nrows()).find(|&r| lhs.row(r).amax() == 0.0) {
            return Err(Error::DegenerateFacets(format!("row {r} is identically zero")));
        }
        Ok(Self { lhs, rhs })
    }

    /// Axis-aligned box `lo ≤ x ≤ hi`, rows ordered `[I; -I]`.
    pub fn from_box(lo: &[f64], hi: &[f64]) -> Self {
        let n = lo.len();
        assert_eq!(n, hi.len());
        let mut lhs = DMatrix::zeros(2 * n, n);
        let mut rhs = DVector::zeros(2 * n);
        for i in 0..n {
            lhs[(i, i)] = 1.0;
            rhs[i] = hi[i];
            lhs[(n + i, i)] = -1.0;
            rhs[n + i] = -lo[i];
        }
        Self { lhs, rhs }
    }

    /// `{x | -x ≤ 0, 1ᵀx ≤ scale}`-style simplex facet matrix `[-I; 1ᵀ]`
    /// with the given offsets.
    pub fn simplex(n: usize, rhs: DVector<f64>) -> Result<Self> {
        let mut lhs = DMatrix::zeros(n + 1, n);
        for i in 0..n {
            lhs[(i, i)] = -1.0;
            lhs[(n, i)] = 1.0;
        }
        Self::new(lhs, rhs)
    }

    pub fn dim(&self) -> usize {
        self.lhs.ncols()
    }

    pub fn num_facets(&self) -> usize {
        self.lhs.nrows()
    }

    pub fn with_rhs(&self, rhs: DVector<f64>) -> Self {
        Self { lhs: self.lhs.clone(), rhs }
    }

    /// True iff `lhs x ≤ rhs + tol` row-wise.
    pub fn contains_point(&self, x: &DVector<f64>, tol: f64) -> bool {
        let fx = &self.lhs * x;
        fx.iter().zip(self.rhs.iter()).all(|(a, b)| *a <= b + tol)
    }

    /// Checks that `lhs · x ≤ 0` forces `x = 0` by maximizing each coordinate
    /// over that cone intersected with the unit box.
    pub fn is_bounded(&self) -> bool {
        let n = self.dim();
        let mut qp = QuadraticProgram::new(n);
        for r in 0..self.num_facets() {
            qp.add_inequality(row_of(&self.lhs, r, 0), 0.0);
        }
        for i in 0..n {
            qp.add_inequality(vec![(i, 1.0)], 1.0);
            qp.add_inequality(vec![(i, -1.0)], 1.0);
        }
        for i in 0..n {
            for sign in [1.0, -1.0] {
                let mut c = DVector::zeros(n);
                c[i] = -sign;
                let rep = solve_lp(&c, &qp);
                match rep.objective_value {
                    Some(v) if v > -1e-7 => {}
                    _ => return false,
                }
            }
        }
        true
    }

    /// Exact `max dᵀx` over the polytope.
    pub fn support_value(&self, direction: &DVector<f64>) -> Result<f64> {
        let qp = self.as_constraints();
        let rep = solve_lp(&(-direction), &qp);
        match rep.status {
            SolveStatus::Optimal => Ok(-rep.objective_value.unwrap_or_default()),
            SolveStatus::Infeasible => Err(Error::EmptyPolytope),
            SolveStatus::Unbounded => Err(Error::Unbounded),
            s => Err(Error::Solver(s)),
        }
    }

    pub fn vertices(&self) -> Result<VPolytope> {
        enumerate_vertices(self)
    }

    /// Feasibility program `{x | lhs x ≤ rhs}` over `dim()` variables.
    pub fn as_constraints(&self) -> QuadraticProgram {
        let mut qp = QuadraticProgram::new(self.dim());
        for r in 0..self.num_facets() {
            qp.add_inequality(row_of(&self.lhs, r, 0), self.rhs[r]);
        }
        qp
    }

    /// Image under `x ↦ scale · x` (offsets scaled, `scale ≥ 0`).
    pub fn scaled(&self, scale: f64) -> Self {
        self.with_rhs(&self.rhs * scale)
    }
}

/// Sparse row `r` of a dense matrix, columns shifted by `offset`.
pub fn row_of(m: &DMatrix<f64>, r: usize, offset: usize) -> Vec<(usize, f64)> {
    (0..m.ncols()).filter_map(|c| (m[(r, c)] != 0.0).then(|| (c + offset, m[(r, c)]))).collect()
}

/// Convex hull of a finite point set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VPolytope {
    pub vertices: Vec<DVector<f64>>,
}

impl VPolytope {
    /// Builds a point set, dropping later points within [`VERTEX_DEDUP_TOL`]
    /// of an earlier one.
    pub fn new(points: Vec<DVector<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyPolytope);
        }
        let n = points[0].len();
        if points.iter().any(|p| p.len() != n) {
            return Err(Error::DimensionMismatch("points of different dimension".into()));
        }
        Ok(Self { vertices: dedup_points(points, VERTEX_DEDUP_TOL) })
    }

    pub fn singleton(p: DVector<f64>) -> Self {
        Self { vertices: vec![p] }
    }

    pub fn dim(&self) -> usize {
        self.vertices[0].len()
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn support_value(&self, direction: &DVector<f64>) -> Result<f64> {
        self.vertices
            .iter()
            .map(|v| v.dot(direction))
            .reduce(f64::max)
            .ok_or(Error::EmptyPolytope)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { vertices: dedup_points(self.vertices.iter().map(|v| v * s).collect(), VERTEX_DEDUP_TOL) }
    }

    /// Image under the linear map `m`.
    pub fn mapped(&self, m: &DMatrix<f64>) -> Self {
        Self { vertices: dedup_points(self.vertices.iter().map(|v| m * v).collect(), VERTEX_DEDUP_TOL) }
    }
}

/// Keeps the lowest-index representative of every cluster of points closer than `tol`.
pub fn dedup_points(points: Vec<DVector<f64>>, tol: f64) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(points.len());
    for p in points {
        if !out.iter().any(|q| (q - &p).norm() <= tol) {
            out.push(p);
        }
    }
    out
}

/// Either representation of a compact convex set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ConvexSet {
    Vertices(VPolytope),
    Halfspaces(HPolytope),
}

impl ConvexSet {
    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Vertices(v) => v.dim(),
            ConvexSet::Halfspaces(h) => h.dim(),
        }
    }

    /// Vertex-max when vertices are known, LP otherwise.
    pub fn support_value(&self, direction: &DVector<f64>) -> Result<f64> {
        match self {
            ConvexSet::Vertices(v) => v.support_value(direction),
            ConvexSet::Halfspaces(h) => h.support_value(direction),
        }
    }

    pub fn vertices(&self) -> Result<VPolytope> {
        match self {
            ConvexSet::Vertices(v) => Ok(v.clone()),
            ConvexSet::Halfspaces(h) => h.vertices(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        match self {
            ConvexSet::Vertices(v) => ConvexSet::Vertices(v.scaled(s)),
            ConvexSet::Halfspaces(h) => ConvexSet::Halfspaces(h.scaled(s)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn box_support_and_membership() {
        let b = HPolytope::from_box(&[-1.0; 3], &[1.0; 3]);
        assert!((b.support_value(&dv(&[1.0, 1.0, 1.0])).unwrap() - 3.0).abs() < 1e-8);
        assert!(b.contains_point(&dv(&[0.0, 0.0, 0.0]), 0.0));
        let seg = HPolytope::from_box(&[-1.0], &[1.0]);
        assert!(!seg.contains_point(&dv(&[1.0 + 1e-6]), 1e-7));
        assert!(b.is_bounded());
    }

    #[test]
    fn singleton_support_is_zero() {
        let s = VPolytope::singleton(dv(&[0.0, 0.0]));
        assert_eq!(s.support_value(&dv(&[3.0, -1.0])).unwrap(), 0.0);
    }

    #[test]
    fn empty_polytope_support_errors() {
        let p = HPolytope::new(DMatrix::from_row_slice(2, 1, &[1.0, -1.0]), dv(&[-1.0, -1.0])).unwrap();
        assert!(matches!(p.support_value(&dv(&[1.0])), Err(Error::EmptyPolytope)));
    }

    #[test]
    fn halfplane_is_unbounded() {
        let p = HPolytope::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), dv(&[1.0])).unwrap();
        assert!(!p.is_bounded());
    }

    #[test]
    fn zero_row_rejected() {
        let r = HPolytope::new(DMatrix::from_row_slice(1, 2, &[0.0, 0.0]), dv(&[1.0]));
        assert!(matches!(r, Err(Error::DegenerateFacets(_))));
    }

    #[test]
    fn dedup_keeps_first() {
        let v = VPolytope::new(vec![dv(&[0.0]), dv(&[1e-12]), dv(&[1.0])]).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.vertices[0][0], 0.0);
    }
}
