//! Uncertain linear systems `x⁺ = A x + B u + w` with `(A, B)` in a convex
//! hull of vertex pairs and `w` in a polytope.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polytope::{row_of, ConfigurationTriple, ConvexSet, HPolytope, VPolytope};
use crate::qp::{solve_lp, QuadraticProgram, SolveStatus};
use crate::rci::RciSolution;

#[derive(Clone, Debug)]
pub struct UncertainSystem {
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub disturbance: ConvexSet,
    pub state_constraints: HPolytope,
    pub input_constraints: HPolytope,
    disturbance_vertices: VPolytope,
}

impl UncertainSystem {
    pub fn new(
        a: Vec<DMatrix<f64>>,
        b: Vec<DMatrix<f64>>,
        disturbance: ConvexSet,
        state_constraints: HPolytope,
        input_constraints: HPolytope,
    ) -> Result<Self> {
        if a.is_empty() || a.len() != b.len() {
            return Err(Error::DimensionMismatch("need m ≥ 1 matching (A_i, B_i) pairs".into()));
        }
        let n = a[0].nrows();
        let nu = b[0].ncols();
        for (ai, bi) in a.iter().zip(&b) {
            if ai.shape() != (n, n) || bi.shape() != (n, nu) {
                return Err(Error::DimensionMismatch("hull vertices have inconsistent shapes".into()));
            }
        }
        if disturbance.dim() != n || state_constraints.dim() != n || input_constraints.dim() != nu {
            return Err(Error::DimensionMismatch("constraint or disturbance set dimension".into()));
        }
        let disturbance_vertices = match disturbance.vertices() {
            Ok(v) if !v.is_empty() => v,
            Ok(_) | Err(Error::EmptyPolytope) => return Err(Error::EmptyDisturbanceSet),
            Err(e) => return Err(e),
        };
        for (name, set) in [("X", &state_constraints), ("U", &input_constraints)] {
            if !set.is_bounded() {
                return Err(Error::InvalidInput(format!("{name} is unbounded")));
            }
            if chebyshev_radius(set)? <= 1e-9 {
                return Err(Error::InvalidInput(format!("{name} has empty interior")));
            }
        }
        Ok(Self { a, b, disturbance, state_constraints, input_constraints, disturbance_vertices })
    }

    pub fn state_dim(&self) -> usize {
        self.a[0].nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b[0].ncols()
    }

    pub fn num_models(&self) -> usize {
        self.a.len()
    }

    pub fn disturbance_vertices(&self) -> &VPolytope {
        &self.disturbance_vertices
    }

    /// Copy with `W` scaled by `s ≥ 0`.
    pub fn with_scaled_disturbance(&self, s: f64) -> Result<Self> {
        Self::new(
            self.a.clone(),
            self.b.clone(),
            self.disturbance.scaled(s),
            self.state_constraints.clone(),
            self.input_constraints.clone(),
        )
    }

    pub fn from_file(file: &SystemFile) -> Result<Self> {
        let a = file.a.iter().map(|m| matrix(m)).collect::<Result<Vec<_>>>()?;
        let b = file.b.iter().map(|m| matrix(m)).collect::<Result<Vec<_>>>()?;
        let disturbance = match &file.w {
            SetFile::Vertices { vertices } => ConvexSet::Vertices(VPolytope::new(
                vertices.iter().map(|v| DVector::from_column_slice(v)).collect(),
            )?),
            SetFile::Halfspaces(h) => ConvexSet::Halfspaces(h.to_polytope()?),
        };
        Self::new(a, b, disturbance, file.x.to_polytope()?, file.u.to_polytope()?)
    }

    pub fn to_file(&self) -> SystemFile {
        let w = match &self.disturbance {
            ConvexSet::Vertices(v) => {
                SetFile::Vertices { vertices: v.vertices.iter().map(|p| p.iter().copied().collect()).collect() }
            }
            ConvexSet::Halfspaces(h) => SetFile::Halfspaces(HalfspaceFile::from_polytope(h)),
        };
        SystemFile {
            a: self.a.iter().map(rows).collect(),
            b: self.b.iter().map(rows).collect(),
            w,
            x: HalfspaceFile::from_polytope(&self.state_constraints),
            u: HalfspaceFile::from_polytope(&self.input_constraints),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(&serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("serializable system")
    }
}

/// Radius of the largest ball inside `p` (capped at 1).
fn chebyshev_radius(p: &HPolytope) -> Result<f64> {
    let n = p.dim();
    let mut qp = QuadraticProgram::new(n + 1);
    for r in 0..p.num_facets() {
        let mut row = row_of(&p.lhs, r, 0);
        row.push((n, p.lhs.row(r).norm()));
        qp.add_inequality(row, p.rhs[r]);
    }
    qp.add_inequality(vec![(n, 1.0)], 1.0);
    let mut c = DVector::zeros(n + 1);
    c[n] = -1.0;
    let rep = solve_lp(&c, &qp);
    match rep.status {
        SolveStatus::Optimal => Ok(rep.primal.expect("primal")[n]),
        SolveStatus::Infeasible => Ok(-1.0),
        s => Err(Error::Solver(s)),
    }
}

/// `d_k = max { F_k w | w ∈ W }` for every row of `F`.
pub fn disturbance_offsets(facets: &DMatrix<f64>, sys: &UncertainSystem) -> Result<DVector<f64>> {
    let w = sys.disturbance_vertices();
    if w.is_empty() {
        return Err(Error::EmptyDisturbanceSet);
    }
    let mut d = DVector::zeros(facets.nrows());
    for k in 0..facets.nrows() {
        let row = facets.row(k);
        d[k] = w.vertices.iter().map(|v| row.dot(&v.transpose())).fold(f64::NEG_INFINITY, f64::max);
    }
    Ok(d)
}

/// Row-wise maxima `hˣ_m = max_j Hˣ V_j y_m` and `hᵘ_m = max_j Hᵘ u_{m,j}`.
pub fn homothetic_support_vectors(
    t: &ConfigurationTriple,
    rci: &RciSolution,
    sys: &UncertainSystem,
) -> (DVector<f64>, DVector<f64>) {
    let hx = &sys.state_constraints.lhs;
    let hu = &sys.input_constraints.lhs;
    let mut hx_m = DVector::from_element(hx.nrows(), f64::NEG_INFINITY);
    for v in t.vertices(&rci.y_m) {
        hx_m = hx_m.sup(&(hx * v));
    }
    let mut hu_m = DVector::from_element(hu.nrows(), f64::NEG_INFINITY);
    for u in &rci.u_m {
        hu_m = hu_m.sup(&(hu * u));
    }
    (hx_m, hu_m)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingPolicy {
    /// One hull vertex and one `W` vertex per step.
    #[default]
    ExtremePoints,
    /// Flat-Dirichlet weights over hull vertices and over `W` vertices.
    UniformHull,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub w: DVector<f64>,
    pub model_weights: Vec<f64>,
    pub disturbance_weights: Vec<f64>,
}

pub fn sample_realization<R: Rng>(sys: &UncertainSystem, rng: &mut R, policy: SamplingPolicy) -> Realization {
    let m = sys.num_models();
    let wv = &sys.disturbance_vertices().vertices;
    let (model_weights, disturbance_weights) = match policy {
        SamplingPolicy::ExtremePoints => (one_hot(m, rng.random_range(0..m)), one_hot(wv.len(), rng.random_range(0..wv.len()))),
        SamplingPolicy::UniformHull => (dirichlet(m, rng), dirichlet(wv.len(), rng)),
    };
    let n = sys.state_dim();
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, sys.input_dim());
    for (i, &l) in model_weights.iter().enumerate() {
        if l != 0.0 {
            a += &sys.a[i] * l;
            b += &sys.b[i] * l;
        }
    }
    let mut w = DVector::zeros(n);
    for (k, &l) in disturbance_weights.iter().enumerate() {
        if l != 0.0 {
            w += &wv[k] * l;
        }
    }
    Realization { a, b, w, model_weights, disturbance_weights }
}

fn one_hot(len: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[k] = 1.0;
    v
}

fn dirichlet<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let e: Vec<f64> = (0..len).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// System file: `{"A": [..], "B": [..], "W": {"vertices": ..} | {"H": .., "h": ..}, "X": {"H", "h"}, "U": {"H", "h"}}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    #[serde(rename = "A")]
    pub a: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "W")]
    pub w: SetFile,
    #[serde(rename = "X")]
    pub x: HalfspaceFile,
    #[serde(rename = "U")]
    pub u: HalfspaceFile,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SetFile {
    Vertices { vertices: Vec<Vec<f64>> },
    Halfspaces(HalfspaceFile),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfspaceFile {
    #[serde(rename = "H")]
    pub lhs: Vec<Vec<f64>>,
    #[serde(rename = "h")]
    pub rhs: Vec<f64>,
}

impl HalfspaceFile {
    pub fn from_polytope(p: &HPolytope) -> Self {
        Self { lhs: rows(&p.lhs), rhs: p.rhs.iter().copied().collect() }
    }

    pub fn to_polytope(&self) -> Result<HPolytope> {
        HPolytope::new(matrix(&self.lhs)?, DVector::from_column_slice(&self.rhs))
    }
}

pub(crate) fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

pub(crate) fn matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nc = rows.first().map(Vec::len).unwrap_or(0);
    if nc == 0 || rows.iter().any(|r| r.len() != nc) {
        return Err(Error::DimensionMismatch("ragged or empty matrix".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), nc, |r, c| rows[r][c]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn box_set(n: usize, r: f64) -> HPolytope {
        HPolytope::from_box(&vec![-r; n], &vec![r; n])
    }

    fn two_model_system(eps: f64) -> UncertainSystem {
        let a1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        let a2 = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 0.9]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 0.1]);
        UncertainSystem::new(
            vec![a1, a2],
            vec![b.clone(), b * 1.2],
            ConvexSet::Halfspaces(box_set(2, eps)),
            box_set(2, 5.0),
            box_set(1, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn zero_disturbance_offsets() {
        let sys = UncertainSystem::new(
            vec![DMatrix::identity(2, 2)],
            vec![DMatrix::identity(2, 1)],
            ConvexSet::Vertices(VPolytope::singleton(dv(&[0.0, 0.0]))),
            box_set(2, 1.0),
            box_set(1, 1.0),
        )
        .unwrap();
        let f = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, -1.0]);
        assert_eq!(disturbance_offsets(&f, &sys).unwrap(), DVector::zeros(3));
    }

    #[test]
    fn box_disturbance_offsets_are_one_norms() {
        let sys = two_model_system(0.2);
        let f = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.6, -0.8, -1.0, 3.0]);
        let d = disturbance_offsets(&f, &sys).unwrap();
        for k in 0..3 {
            assert!((d[k] - 0.2 * f.row(k).abs().sum()).abs() < 1e-12);
        }
    }

    #[test]
    fn offsets_scale_with_disturbance() {
        let sys = two_model_system(0.2);
        let f = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -3.0, 0.5]);
        let d = disturbance_offsets(&f, &sys).unwrap();
        let d3 = disturbance_offsets(&f, &sys.with_scaled_disturbance(3.0).unwrap()).unwrap();
        assert!((d3 - d * 3.0).amax() < 1e-9);
    }

    #[test]
    fn invalid_systems_rejected() {
        let empty_w = HPolytope::from_box(&[1.0, 1.0], &[-1.0, -1.0]);
        let r = UncertainSystem::new(
            vec![DMatrix::identity(2, 2)],
            vec![DMatrix::identity(2, 1)],
            ConvexSet::Halfspaces(empty_w),
            box_set(2, 1.0),
            box_set(1, 1.0),
        );
        assert!(matches!(r, Err(Error::EmptyDisturbanceSet)));
        let flat = HPolytope::from_box(&[0.0, -1.0], &[0.0, 1.0]);
        let r = UncertainSystem::new(
            vec![DMatrix::identity(2, 2)],
            vec![DMatrix::identity(2, 1)],
            ConvexSet::Vertices(VPolytope::singleton(dv(&[0.0, 0.0]))),
            flat,
            box_set(1, 1.0),
        );
        assert!(r.is_err());
        let r = UncertainSystem::new(vec![], vec![], ConvexSet::Halfspaces(box_set(2, 1.0)), box_set(2, 1.0), box_set(1, 1.0));
        assert!(matches!(r, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn nominal_realization_is_fixed() {
        let sys = UncertainSystem::new(
            vec![DMatrix::identity(1, 1) * 0.5],
            vec![DMatrix::identity(1, 1)],
            ConvexSet::Vertices(VPolytope::singleton(dv(&[0.0]))),
            box_set(1, 1.0),
            box_set(1, 1.0),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for policy in [SamplingPolicy::ExtremePoints, SamplingPolicy::UniformHull] {
            let r = sample_realization(&sys, &mut rng, policy);
            assert_eq!(r.a[(0, 0)], 0.5);
            assert_eq!(r.w[0], 0.0);
        }
    }

    #[test]
    fn extreme_points_are_reproducible_and_members() {
        let sys = two_model_system(0.1);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| sample_realization(&sys, &mut rng, SamplingPolicy::ExtremePoints)).collect::<Vec<_>>()
        };
        let (a, b) = (draw(7), draw(7));
        assert_eq!(a, b);
        for r in &a {
            assert_eq!(r.model_weights.iter().filter(|&&x| x == 1.0).count(), 1);
            assert!(box_set(2, 0.1).contains_point(&r.w, 1e-9));
        }
    }

    #[test]
    fn uniform_hull_mean_is_centroid() {
        let sys = two_model_system(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut mean_a = DMatrix::zeros(2, 2);
        let count = 10_000;
        for _ in 0..count {
            let r = sample_realization(&sys, &mut rng, SamplingPolicy::UniformHull);
            assert!((r.model_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(r.model_weights.iter().all(|&l| l >= 0.0));
            assert!(box_set(2, 0.1).contains_point(&r.w, 1e-9));
            mean_a += r.a;
        }
        mean_a /= count as f64;
        let centroid = (&sys.a[0] + &sys.a[1]) * 0.5;
        for (x, c) in mean_a.iter().zip(centroid.iter()) {
            assert!((x - c).abs() <= 0.02 * c.abs().max(0.1));
        }
    }

    #[test]
    fn json_round_trip() {
        let sys = two_model_system(0.1);
        let back = UncertainSystem::from_json(&sys.to_json()).unwrap();
        assert_eq!(back.a, sys.a);
        assert_eq!(back.state_constraints, sys.state_constraints);
        let text = r#"{"A": [[[0.5]]], "B": [[[1.0]]], "W": {"vertices": [[-0.1], [0.1]]},
                      "X": {"H": [[1.0], [-1.0]], "h": [1.0, 1.0]}, "U": {"H": [[1.0], [-1.0]], "h": [1.0, 1.0]}}"#;
        let s = UncertainSystem::from_json(text).unwrap();
        assert_eq!(s.disturbance_vertices().len(), 2);
        assert!(UncertainSystem::from_json(&text.replace("\"U\"", "\"Z\"")).is_err());
    }
}
