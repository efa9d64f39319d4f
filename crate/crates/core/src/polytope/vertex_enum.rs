//! Double-description vertex enumeration.
//!
//! The polytope `{x | Fx ≤ y}` is homogenized to the pointed cone
//! `{(x, t) | Fx - t·y ≤ 0, -t ≤ 0}`; its extreme rays with `t > 0` are the
//! vertices. Rows are inserted one at a time and new rays are generated only
//! from combinatorially adjacent pairs.

use nalgebra::{DMatrix, DVector};

use super::{dedup_points, HPolytope, VPolytope, VERTEX_DEDUP_TOL};
use crate::error::{Error, Result};

const ZERO_TOL: f64 = 1e-10;

#[derive(Clone)]
struct Bits(Vec<u64>);

impl Bits {
    fn new(n: usize) -> Self {
        Bits(vec![0; n.div_ceil(64)])
    }
    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }
    fn and(&self, other: &Bits) -> Bits {
        Bits(self.0.iter().zip(&other.0).map(|(a, b)| a & b).collect())
    }
    fn count(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }
    fn contains_all(&self, sub: &Bits) -> bool {
        self.0.iter().zip(&sub.0).all(|(a, b)| a & b == *b)
    }
}

struct Ray {
    v: DVector<f64>,
    zeros: Bits,
}

/// Vertices of a bounded polytope in dimension ≤ 10 (larger dimensions work
/// but may be slow).
pub fn enumerate_vertices(p: &HPolytope) -> Result<VPolytope> {
    let n = p.dim();
    let f = p.num_facets();
    let d = n + 1;
    // homogenized rows, normalized; the last row is -t ≤ 0
    let mut rows: Vec<DVector<f64>> = (0..f)
        .map(|r| {
            let mut a = DVector::zeros(d);
            a.rows_mut(0, n).copy_from(&p.lhs.row(r).transpose());
            a[n] = -p.rhs[r];
            let s = a.norm();
            a / s
        })
        .collect();
    let mut t_row = DVector::zeros(d);
    t_row[n] = -1.0;
    rows.push(t_row);
    let m = rows.len();

    // greedy choice of d independent rows, starting with t ≥ 0
    let mut order: Vec<usize> = Vec::with_capacity(m);
    order.push(m - 1);
    order.extend(0..m - 1);
    let mut basis: Vec<usize> = Vec::new();
    let mut q: Vec<DVector<f64>> = Vec::new();
    for &r in &order {
        let mut w = rows[r].clone();
        for b in &q {
            let c = w.dot(b);
            w -= b * c;
        }
        let nw = w.norm();
        if nw > 1e-9 {
            q.push(w / nw);
            basis.push(r);
            if basis.len() == d {
                break;
            }
        }
    }
    if basis.len() < d {
        return Err(Error::Unbounded);
    }

    let m0 = DMatrix::from_fn(d, d, |i, j| rows[basis[i]][j]);
    let inv = m0.try_inverse().ok_or_else(|| Error::DegenerateFacets("singular initial basis".into()))?;
    let mut rays: Vec<Ray> = (0..d)
        .map(|k| {
            let v = -inv.column(k).into_owned();
            let mut zeros = Bits::new(m);
            for (i, &b) in basis.iter().enumerate() {
                if i != k {
                    zeros.set(b);
                }
            }
            Ray { v: normalize(v), zeros }
        })
        .collect();

    for r in (0..m).filter(|r| !basis.contains(r)) {
        let a = &rows[r];
        let vals: Vec<f64> = rays.iter().map(|ray| a.dot(&ray.v)).collect();
        let pos: Vec<usize> = (0..rays.len()).filter(|&i| vals[i] > ZERO_TOL).collect();
        if pos.is_empty() {
            for (ray, &val) in rays.iter_mut().zip(&vals) {
                if val.abs() <= ZERO_TOL {
                    ray.zeros.set(r);
                }
            }
            continue;
        }
        let neg: Vec<usize> = (0..rays.len()).filter(|&i| vals[i] < -ZERO_TOL).collect();
        let mut new_rays: Vec<Ray> = Vec::new();
        for &i in &pos {
            for &j in &neg {
                let common = rays[i].zeros.and(&rays[j].zeros);
                if common.count() + 2 < d {
                    continue;
                }
                let adjacent = rays
                    .iter()
                    .enumerate()
                    .all(|(k, other)| k == i || k == j || !other.zeros.contains_all(&common));
                if !adjacent {
                    continue;
                }
                let v = &rays[j].v * vals[i] - &rays[i].v * vals[j];
                let mut zeros = common;
                zeros.set(r);
                new_rays.push(Ray { v: normalize(v), zeros });
            }
        }
        let mut kept: Vec<Ray> = Vec::with_capacity(rays.len() - pos.len() + new_rays.len());
        for (k, mut ray) in rays.into_iter().enumerate() {
            if vals[k] > ZERO_TOL {
                continue;
            }
            if vals[k].abs() <= ZERO_TOL {
                ray.zeros.set(r);
            }
            kept.push(ray);
        }
        kept.extend(new_rays);
        rays = kept;
    }

    let mut points: Vec<DVector<f64>> = Vec::new();
    for ray in &rays {
        let t = ray.v[n];
        if t > 1e-12 {
            points.push(ray.v.rows(0, n) / t);
        } else if ray.v.rows(0, n).amax() > 1e-9 {
            return Err(Error::Unbounded);
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyPolytope);
    }
    let mut points = dedup_points(points, VERTEX_DEDUP_TOL);
    // deterministic, representation-independent order
    points.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(VPolytope { vertices: points })
}

fn normalize(v: DVector<f64>) -> DVector<f64> {
    let s = v.amax();
    if s > 0.0 {
        v / s
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn contains(vs: &VPolytope, p: &[f64]) -> bool {
        vs.vertices.iter().any(|v| (v - dv(p)).amax() < 1e-9)
    }

    #[test]
    fn unit_square() {
        let sq = HPolytope::from_box(&[-1.0, -1.0], &[1.0, 1.0]);
        let v = enumerate_vertices(&sq).unwrap();
        assert_eq!(v.len(), 4);
        for p in [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]] {
            assert!(contains(&v, &p));
        }
    }

    #[test]
    fn three_simplex() {
        let s = HPolytope::simplex(3, dv(&[0.0, 0.0, 0.0, 1.0])).unwrap();
        let v = enumerate_vertices(&s).unwrap();
        assert_eq!(v.len(), 4);
        for p in [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] {
            assert!(contains(&v, &p));
        }
    }

    #[test]
    fn hypercube_in_ten_dimensions() {
        let c = HPolytope::from_box(&[-1.0; 10], &[1.0; 10]);
        assert_eq!(enumerate_vertices(&c).unwrap().len(), 1024);
    }

    #[test]
    fn empty_and_unbounded() {
        let e = HPolytope::from_box(&[1.0], &[-1.0]);
        assert!(matches!(enumerate_vertices(&e), Err(Error::EmptyPolytope)));
        let h = HPolytope::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]), dv(&[1.0, 1.0])).unwrap();
        assert!(matches!(enumerate_vertices(&h), Err(Error::Unbounded)));
    }

    #[test]
    fn redundant_rows_and_degenerate_apex() {
        // square pyramid apex has 4 active facets
        let lhs = DMatrix::from_row_slice(
            5,
            3,
            &[0.0, 0.0, -1.0, 1.0, 0.0, 1.0, -1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, -1.0, 1.0],
        );
        let p = HPolytope::new(lhs, dv(&[0.0, 1.0, 1.0, 1.0, 1.0])).unwrap();
        let v = enumerate_vertices(&p).unwrap();
        assert_eq!(v.len(), 5);
        assert!(contains(&v, &[0.0, 0.0, 1.0]));
    }
}
