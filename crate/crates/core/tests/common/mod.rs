//! Shared oracles and generators for the integration tests.

#![allow(dead_code)]

use cctmpc::benchmarks::{box_template, simplex_template};
use cctmpc::polytope::{enumerate_vertices, ConfigurationTriple, HPolytope};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Brute-force vertex oracle: every `n`-subset of facets whose solution is feasible.
pub fn brute_force_vertices(p: &HPolytope) -> Vec<DVector<f64>> {
    let n = p.dim();
    let f = p.num_facets();
    let mut out: Vec<DVector<f64>> = Vec::new();
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        let a = DMatrix::from_fn(n, n, |r, c| p.lhs[(idx[r], c)]);
        let b = DVector::from_fn(n, |r, _| p.rhs[idx[r]]);
        if let Some(x) = a.lu().solve(&b) {
            let scale = 1.0 + x.amax();
            if (&p.lhs * &x - &p.rhs).max() <= 1e-9 * scale && !out.iter().any(|v| (v - &x).norm() <= 1e-7 * scale) {
                out.push(x);
            }
        }
        // next combination
        let mut k = n;
        while k > 0 && idx[k - 1] == f - n + k - 1 {
            k -= 1;
        }
        if k == 0 {
            return out;
        }
        idx[k - 1] += 1;
        for m in k..n {
            idx[m] = idx[m - 1] + 1;
        }
    }
}

pub fn same_point_sets(a: &[DVector<f64>], b: &[DVector<f64>], tol: f64) -> bool {
    a.len() == b.len() && a.iter().all(|p| b.iter().any(|q| (p - q).amax() <= tol)) && b.iter().all(|q| a.iter().any(|p| (p - q).amax() <= tol))
}

pub fn random_invertible(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    loop {
        let m: DMatrix<f64> = DMatrix::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 } + rng.random_range(-0.4..0.4));
        if m.determinant().abs() > 0.2 {
            return m;
        }
    }
}

/// Cuts a random vertex with a random normal from the interior of its normal cone.
pub fn random_cut(t: &ConfigurationTriple, y: &DVector<f64>, rng: &mut ChaCha8Rng) -> Option<(ConfigurationTriple, DVector<f64>)> {
    let n = t.dim();
    for _ in 0..20 {
        let j = rng.random_range(0..t.num_vertices());
        let lambda: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
        let mut c = DVector::zeros(n);
        for (k, &i) in t.incidence[j].iter().enumerate() {
            c += t.facet_matrix.row(i).transpose() * lambda[k];
        }
        let verts = t.vertices(y);
        let zeta = c.dot(&verts[j]);
        let other = verts.iter().enumerate().filter(|&(k, _)| k != j).map(|(_, v)| c.dot(v)).fold(f64::NEG_INFINITY, f64::max);
        if zeta - other < 1e-3 {
            continue;
        }
        let offset = other + rng.random_range(0.3..0.7) * (zeta - other);
        if let Ok(next) = t.truncate_vertex(y, j, &c, offset) {
            let mut y_next = y.clone().insert_row(y.len(), 0.0);
            y_next[y.len()] = offset;
            return Some((next, y_next));
        }
    }
    None
}

/// Offsets of the unit simplex `{x ≥ 0, 1ᵀx ≤ 1}`.
pub fn simplex_offsets(n: usize) -> DVector<f64> {
    let mut y = DVector::zeros(n + 1);
    y[n] = 1.0;
    y
}

/// Simplex or box in dimension `n`, linearly transformed, with up to `cuts` random truncations.
pub fn random_triple(n: usize, seed: u64, cuts: usize) -> (ConfigurationTriple, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (base, mut y) = if rng.random_bool(0.5) {
        (simplex_template(n).unwrap(), simplex_offsets(n))
    } else {
        (box_template(n).unwrap(), DVector::from_element(2 * n, 1.0))
    };
    let mut t = base.transformed(&random_invertible(n, &mut rng)).unwrap();
    for _ in 0..cuts {
        match random_cut(&t, &y, &mut rng) {
            Some((nt, ny)) => {
                t = nt;
                y = ny;
            }
            None => break,
        }
    }
    (t, y)
}

/// Vertex maps agree with brute force and with enumeration at `count`
/// sampled cone points, and each vertex is active exactly on `i(j)`.
pub fn check_vertex_maps(t: &ConfigurationTriple, count: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = t.sample_cone_points(count, &mut rng);
    if samples.is_empty() {
        return Err("no cone samples".into());
    }
    for y in samples {
        let p = t.polytope(&y);
        let mapped = t.vertices(&y);
        let tol = 1e-8 * (1.0 + y.amax());
        if !same_point_sets(&mapped, &brute_force_vertices(&p), tol) {
            return Err("vertex maps disagree with brute force".into());
        }
        let dd = enumerate_vertices(&p).map_err(|e| e.to_string())?;
        if !same_point_sets(&mapped, &dd.vertices, tol) {
            return Err("vertex maps disagree with enumeration".into());
        }
        for (j, v) in mapped.iter().enumerate() {
            let slack = &y - &t.facet_matrix * v;
            for i in 0..t.num_facets() {
                if slack[i] < -tol || t.incidence[j].contains(&i) != (slack[i].abs() <= tol) {
                    return Err(format!("incidence of vertex {j} wrong at facet {i}"));
                }
            }
        }
    }
    Ok(())
}

/// `αy_m + Fz` stays in the cone and moves every vertex by `z`.
pub fn check_cone_closure(t: &ConfigurationTriple, seed: u64) -> Result<(), String> {
    let n = t.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y_m = t.sample_cone_points(1, &mut rng).pop().ok_or("no cone sample")?;
    for _ in 0..10 {
        let alpha: f64 = rng.random_range(0.0..10.0);
        let z = DVector::from_fn(n, |_, _| rng.random_range(-10.0..10.0));
        let y = &y_m * alpha + &t.facet_matrix * &z;
        if t.cone_violation(&y) > 1e-9 * (1.0 + y.amax()) {
            return Err(format!("homothet left the cone (α = {alpha})"));
        }
        if !t.vertex_translation_check(&(&y_m * alpha), &z) {
            return Err("vertex maps do not commute with translation".into());
        }
    }
    Ok(())
}

/// `k` successive cuts of the unit `n`-simplex give `n + 1 + k` facets and
/// `n + 1 + k(n - 1)` vertices, confirmed by brute force.
pub fn check_truncation_counts(n: usize, k: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = simplex_template(n).map_err(|e| e.to_string())?;
    let mut y = simplex_offsets(n);
    for done in 1..=k {
        let (nt, ny) = random_cut(&t, &y, &mut rng).ok_or("no separating cut found")?;
        t = nt;
        y = ny;
        if t.num_facets() != n + 1 + done || t.num_vertices() != n + 1 + done * (n - 1) {
            return Err(format!("after {done} cuts: f = {}, v = {}", t.num_facets(), t.num_vertices()));
        }
    }
    let oracle = brute_force_vertices(&t.polytope(&y)).len();
    if oracle != t.num_vertices() {
        return Err(format!("brute force finds {oracle} vertices, triple has {}", t.num_vertices()));
    }
    Ok(())
}
