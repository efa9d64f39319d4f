use nalgebra::DVector;

use super::{row_of, HPolytope, VPolytope};
use crate::error::{Error, Result};
use crate::qp::{solve_qp, QuadraticProgram, SolveStatus};

/// Containment slack allowed before `hausdorff_distance` reports `NotNested`.
pub const NESTING_TOL: f64 = 1e-7;

/// Euclidean distance from `x` to `convh(points)` via the projection QP over
/// convex weights.
pub fn distance_to_hull(x: &DVector<f64>, hull: &VPolytope) -> Result<f64> {
    let k = hull.len();
    let n = x.len();
    if hull.dim() != n {
        return Err(Error::DimensionMismatch("point and hull dimensions differ".into()));
    }
    // variables: weights λ (k), point p (n) with p = Σ λ_i v_i
    let mut qp = QuadraticProgram::new(k + n);
    qp.add_equality((0..k).map(|i| (i, 1.0)).collect(), 1.0);
    for i in 0..k {
        qp.add_inequality(vec![(i, -1.0)], 0.0);
    }
    for r in 0..n {
        let mut row: Vec<(usize, f64)> = hull.vertices.iter().enumerate().map(|(i, v)| (i, v[r])).collect();
        row.push((k + r, -1.0));
        qp.add_equality(row, 0.0);
        qp.add_square_penalty(k + r, 1.0, x[r]);
    }
    let rep = solve_qp(&qp);
    match rep.status {
        SolveStatus::Optimal => {
            let p = rep.primal.expect("optimal report carries a primal").rows(k, n).into_owned();
            Ok((x - p).norm())
        }
        s => Err(Error::Solver(s)),
    }
}

/// Euclidean distance from `x` to `{z | Fz ≤ y}`.
pub fn distance_to_hpolytope(x: &DVector<f64>, p: &HPolytope) -> Result<f64> {
    let n = x.len();
    if p.dim() != n {
        return Err(Error::DimensionMismatch("point and polytope dimensions differ".into()));
    }
    if p.contains_point(x, 0.0) {
        return Ok(0.0);
    }
    let mut qp = QuadraticProgram::new(n);
    for r in 0..p.num_facets() {
        qp.add_inequality(row_of(&p.lhs, r, 0), p.rhs[r]);
    }
    for i in 0..n {
        qp.add_square_penalty(i, 1.0, x[i]);
    }
    let rep = solve_qp(&qp);
    match rep.status {
        SolveStatus::Optimal => Ok((x - rep.primal.expect("optimal report carries a primal")).norm()),
        SolveStatus::Infeasible => Err(Error::EmptyPolytope),
        s => Err(Error::Solver(s)),
    }
}

/// Directed Hausdorff distance `max_{v ∈ vert(b)} dist(v, a)` for `a ⊆ b`.
pub fn hausdorff_distance(a: &VPolytope, b: &VPolytope) -> Result<f64> {
    let mut worst_excess = 0.0f64;
    for v in &a.vertices {
        worst_excess = worst_excess.max(distance_to_hull(v, b)?);
    }
    if worst_excess > NESTING_TOL {
        return Err(Error::NotNested(worst_excess));
    }
    let mut d = 0.0f64;
    for v in &b.vertices {
        d = d.max(distance_to_hull(v, a)?);
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn square(lo: f64, hi: f64) -> VPolytope {
        VPolytope::new(vec![dv(&[lo, lo]), dv(&[hi, lo]), dv(&[hi, hi]), dv(&[lo, hi])]).unwrap()
    }

    #[test]
    fn identical_sets() {
        let a = square(0.0, 1.0);
        assert!(hausdorff_distance(&a, &a).unwrap() < 1e-7);
    }

    #[test]
    fn nested_squares() {
        let d = hausdorff_distance(&square(0.0, 1.0), &square(0.0, 2.0)).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-7);
    }

    #[test]
    fn polygon_in_box_matches_boundary_sampling() {
        let gon: Vec<_> = (0..16)
            .map(|k| {
                let t = k as f64 * std::f64::consts::TAU / 16.0;
                dv(&[t.cos(), t.sin()])
            })
            .collect();
        let a = VPolytope::new(gon.clone()).unwrap();
        let b = square(-2.0, 2.0);
        let mut oracle = 0.0f64;
        for v in &b.vertices {
            let mut best = f64::INFINITY;
            for k in 0..16 {
                let (p, q) = (&gon[k], &gon[(k + 1) % 16]);
                for s in 0..=2000 {
                    let t = s as f64 / 2000.0;
                    best = best.min((v - (p * (1.0 - t) + q * t)).norm());
                }
            }
            oracle = oracle.max(best);
        }
        let d = hausdorff_distance(&a, &b).unwrap();
        assert!((d - oracle).abs() < 1e-5, "{d} vs {oracle}");
    }

    #[test]
    fn not_nested_is_reported() {
        assert!(matches!(hausdorff_distance(&square(0.0, 2.0), &square(0.0, 1.0)), Err(Error::NotNested(_))));
    }

    #[test]
    fn point_to_box() {
        let b = HPolytope::from_box(&[-1.0, -1.0], &[1.0, 1.0]);
        assert!((distance_to_hpolytope(&dv(&[2.0, 2.0]), &b).unwrap() - 2f64.sqrt()).abs() < 1e-7);
        assert_eq!(distance_to_hpolytope(&dv(&[0.5, 0.0]), &b).unwrap(), 0.0);
    }
}
