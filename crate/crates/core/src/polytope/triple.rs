//! Configuration triples `(F, E, V)`.
//!
//! For every offset `y` in the cone `{y | Ey ≤ 0}` the polytope
//! `P(y) = {x | Fx ≤ y}` keeps a fixed face structure and its vertices are
//! `V_j y`. Triples here are always built from simple polytopes: vertex `j`
//! is the solution of its `n` active facets `i(j)`, so `V_j` is the inverse
//! of those rows embedded in an `n × f` matrix. The cone matrix is in product
//! form with one row `F_i V_j - e_iᵀ` for every vertex `j` and facet `i ∉ i(j)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{enumerate_vertices, row_of, HPolytope};
use crate::error::{Error, Result};
use crate::qp::{solve_lp, QuadraticProgram, SolveStatus};

/// Relative tolerance for classifying a facet as active at a vertex.
const ACTIVE_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigurationTriple {
    pub facet_matrix: DMatrix<f64>,
    pub cone_matrix: DMatrix<f64>,
    pub vertex_maps: Vec<DMatrix<f64>>,
    pub incidence: Vec<Vec<usize>>,
}

/// JSON layout `{"F": [[..]], "E": [[..]], "V": [[[..]]], "incidence": [[..]]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripleFile {
    #[serde(rename = "F")]
    pub f: Vec<Vec<f64>>,
    #[serde(rename = "E")]
    pub e: Vec<Vec<f64>>,
    #[serde(rename = "V")]
    pub v: Vec<Vec<Vec<f64>>>,
    pub incidence: Vec<Vec<usize>>,
}

impl ConfigurationTriple {
    /// Builds the triple of a bounded simple polytope (its offsets are used
    /// only to discover the face structure).
    pub fn from_hpolytope(p: &HPolytope) -> Result<Self> {
        let n = p.dim();
        let f = p.num_facets();
        let verts = enumerate_vertices(p)?;
        let mut incidence = Vec::with_capacity(verts.len());
        for (j, x) in verts.vertices.iter().enumerate() {
            let fx = &p.lhs * x;
            let active: Vec<usize> = (0..f)
                .filter(|&r| {
                    let scale = p.lhs.row(r).norm() * (1.0 + x.norm()) + p.rhs[r].abs();
                    (fx[r] - p.rhs[r]).abs() <= ACTIVE_TOL * scale.max(1.0)
                })
                .collect();
            if active.len() > n {
                return Err(Error::NotSimple { vertex: j, active: active.len(), expected: n });
            }
            if active.len() < n {
                return Err(Error::DegenerateFacets(format!("vertex {j} has only {} active facets", active.len())));
            }
            incidence.push(active);
        }
        Self::from_incidence(p.lhs.clone(), incidence)
    }

    /// Vertex maps and product-form cone from a facet matrix and per-vertex
    /// active sets.
    pub fn from_incidence(facet_matrix: DMatrix<f64>, incidence: Vec<Vec<usize>>) -> Result<Self> {
        let n = facet_matrix.ncols();
        let f = facet_matrix.nrows();
        let mut vertex_maps = Vec::with_capacity(incidence.len());
        for (j, active) in incidence.iter().enumerate() {
            if active.len() != n || active.iter().any(|&i| i >= f) {
                return Err(Error::NotSimple { vertex: j, active: active.len(), expected: n });
            }
            let sub = DMatrix::from_fn(n, n, |a, c| facet_matrix[(active[a], c)]);
            let inv = sub
                .try_inverse()
                .ok_or_else(|| Error::DegenerateFacets(format!("active rows of vertex {j} are singular")))?;
            let mut v = DMatrix::zeros(n, f);
            for (a, &i) in active.iter().enumerate() {
                v.set_column(i, &inv.column(a));
            }
            vertex_maps.push(v);
        }
        let cone_matrix = product_form_cone(&facet_matrix, &vertex_maps, &incidence);
        Ok(Self { facet_matrix, cone_matrix, vertex_maps, incidence })
    }

    pub fn from_file(file: &TripleFile) -> Result<Self> {
        let f = file.f.len();
        let n = file.f.first().map(Vec::len).unwrap_or(0);
        if f == 0 || n == 0 {
            return Err(Error::InvalidInput("empty facet matrix".into()));
        }
        let facet_matrix = matrix_from_rows(&file.f, n)?;
        let cone_matrix = if file.e.is_empty() { DMatrix::zeros(0, f) } else { matrix_from_rows(&file.e, f)? };
        let vertex_maps = file
            .v
            .iter()
            .map(|m| {
                let vm = matrix_from_rows(m, f)?;
                if vm.nrows() != n {
                    return Err(Error::DimensionMismatch("vertex map must be n_x × f".into()));
                }
                Ok(vm)
            })
            .collect::<Result<Vec<_>>>()?;
        if vertex_maps.len() != file.incidence.len() {
            return Err(Error::DimensionMismatch("one incidence set per vertex map required".into()));
        }
        let t = Self { facet_matrix, cone_matrix, vertex_maps, incidence: file.incidence.clone() };
        Ok(t)
    }

    /// Loads a triple and checks its invariants on 20 sampled cone points.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: TripleFile = serde_json::from_str(text)?;
        let t = Self::from_file(&file)?;
        t.validate(20, 0x7e3a)?;
        Ok(t)
    }

    pub fn to_file(&self) -> TripleFile {
        let rows = |m: &DMatrix<f64>| (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect();
        TripleFile {
            f: rows(&self.facet_matrix),
            e: rows(&self.cone_matrix),
            v: self.vertex_maps.iter().map(rows).collect(),
            incidence: self.incidence.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("serializable triple")
    }

    pub fn dim(&self) -> usize {
        self.facet_matrix.ncols()
    }

    pub fn num_facets(&self) -> usize {
        self.facet_matrix.nrows()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertex_maps.len()
    }

    pub fn num_cone_rows(&self) -> usize {
        self.cone_matrix.nrows()
    }

    pub fn vertex(&self, j: usize, y: &DVector<f64>) -> DVector<f64> {
        &self.vertex_maps[j] * y
    }

    pub fn vertices(&self, y: &DVector<f64>) -> Vec<DVector<f64>> {
        (0..self.num_vertices()).map(|j| self.vertex(j, y)).collect()
    }

    pub fn polytope(&self, y: &DVector<f64>) -> HPolytope {
        HPolytope { lhs: self.facet_matrix.clone(), rhs: y.clone() }
    }

    /// Largest entry of `Ey` (≤ 0 inside the configuration cone).
    pub fn cone_violation(&self, y: &DVector<f64>) -> f64 {
        if self.cone_matrix.nrows() == 0 {
            return 0.0;
        }
        (&self.cone_matrix * y).max()
    }

    pub fn in_cone(&self, y: &DVector<f64>, tol: f64) -> bool {
        self.cone_violation(y) <= tol
    }

    /// True iff `V_j (y + Fz) = V_j y + z` for every vertex, within 1e-9.
    pub fn vertex_translation_check(&self, y: &DVector<f64>, z: &DVector<f64>) -> bool {
        let shifted = y + &self.facet_matrix * z;
        self.vertex_maps
            .iter()
            .all(|v| (v * &shifted - (v * y + z)).amax() <= 1e-9 * (1.0 + y.amax() + z.amax()))
    }

    /// Coefficients `λ` with `F_{i(j)}ᵀ λ = c`; `c` lies in the interior of
    /// the normal cone of vertex `j` iff all are positive.
    pub fn normal_cone_coefficients(&self, j: usize, c: &DVector<f64>) -> Option<DVector<f64>> {
        let n = self.dim();
        let active = &self.incidence[j];
        let sub_t = DMatrix::from_fn(n, n, |a, b| self.facet_matrix[(active[b], a)]);
        sub_t.lu().solve(c)
    }

    /// Cuts vertex `j` of `P(y)` with the halfspace `cᵀx ≤ offset`.
    ///
    /// The cut must strictly separate `V_j y` from every other vertex. When
    /// another vertex lies within 1e-9 of the plane the offset is nudged by
    /// `1e-6·ζ` toward the target; if that does not clear it the cut is
    /// rejected.
    pub fn truncate_vertex(&self, y: &DVector<f64>, j: usize, c: &DVector<f64>, offset: f64) -> Result<Self> {
        if j >= self.num_vertices() || c.len() != self.dim() {
            return Err(Error::DimensionMismatch("vertex index or cut normal".into()));
        }
        let verts = self.vertices(y);
        let target = c.dot(&verts[j]);
        let zeta = target;
        let mut offset = offset;
        if target <= offset + 1e-9 {
            return Err(Error::CutNotSeparating);
        }
        let near = |off: f64| {
            verts
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != j)
                .find(|(_, v)| (c.dot(v) - off).abs() <= 1e-9)
                .map(|(k, _)| k)
        };
        if near(offset).is_some() {
            offset += 1e-6 * zeta.abs().max(1e-12);
            if let Some(k) = near(offset) {
                return Err(Error::CutThroughVertex(k));
            }
        }
        if verts.iter().enumerate().any(|(k, v)| k != j && c.dot(v) >= offset) {
            return Err(Error::CutNotSeparating);
        }
        if target <= offset {
            return Err(Error::CutNotSeparating);
        }
        self.truncate_combinatorial(j, c)
    }

    /// Combinatorial single-vertex truncation: vertex `j` is replaced by one
    /// new vertex on each of its `n` edges, each lying on the new facet.
    /// Requires `c` to be in the interior of the normal cone at `j`.
    pub fn truncate_combinatorial(&self, j: usize, c: &DVector<f64>) -> Result<Self> {
        let n = self.dim();
        let f = self.num_facets();
        let lambda = self.normal_cone_coefficients(j, c).ok_or(Error::CutNotSeparating)?;
        let scale = c.norm().max(1e-300);
        if lambda.iter().any(|&l| l <= 1e-10 * scale) {
            return Err(Error::CutNotSeparating);
        }
        let mut facet_matrix = self.facet_matrix.clone().insert_row(f, 0.0);
        facet_matrix.set_row(f, &c.transpose());
        let mut incidence: Vec<Vec<usize>> =
            self.incidence.iter().enumerate().filter(|&(k, _)| k != j).map(|(_, a)| a.clone()).collect();
        for &dropped in &self.incidence[j] {
            let mut active: Vec<usize> = self.incidence[j].iter().copied().filter(|&i| i != dropped).collect();
            active.push(f);
            incidence.push(active);
        }
        debug_assert!(incidence.iter().all(|a| a.len() == n));
        Self::from_incidence(facet_matrix, incidence)
    }

    /// Triple of `{x | F T⁻¹ x ≤ y}`: same cone, vertex maps `T V_j`.
    pub fn transformed(&self, t: &DMatrix<f64>) -> Result<Self> {
        let t_inv = t.clone().try_inverse().ok_or(Error::SingularT)?;
        Ok(Self {
            facet_matrix: &self.facet_matrix * t_inv,
            cone_matrix: self.cone_matrix.clone(),
            vertex_maps: self.vertex_maps.iter().map(|v| t * v).collect(),
            incidence: self.incidence.clone(),
        })
    }

    /// A point `y` with `Ey ≤ -margin·‖E_r‖` and `|y| ≤ 10`, maximizing the margin.
    pub fn interior_cone_point(&self) -> Option<(DVector<f64>, f64)> {
        let f = self.num_facets();
        let mut qp = QuadraticProgram::new(f + 1);
        for r in 0..self.cone_matrix.nrows() {
            let norm = self.cone_matrix.row(r).norm();
            if norm == 0.0 {
                continue;
            }
            let mut row: Vec<(usize, f64)> = row_of(&self.cone_matrix, r, 0).into_iter().map(|(c, v)| (c, v / norm)).collect();
            row.push((f, 1.0));
            qp.add_inequality(row, 0.0);
        }
        for i in 0..f {
            qp.add_inequality(vec![(i, 1.0)], 10.0);
            qp.add_inequality(vec![(i, -1.0)], 10.0);
        }
        qp.add_inequality(vec![(f, 1.0)], 1.0);
        let mut cost = DVector::zeros(f + 1);
        cost[f] = -1.0;
        let rep = solve_lp(&cost, &qp);
        if rep.status != SolveStatus::Optimal {
            return None;
        }
        let x = rep.primal?;
        let margin = x[f];
        (margin > 0.0).then(|| (x.rows(0, f).into_owned(), margin))
    }

    /// Random points of the configuration cone: perturbations of an interior
    /// point, positively scaled and translated by `Fz`.
    pub fn sample_cone_points<R: Rng>(&self, count: usize, rng: &mut R) -> Vec<DVector<f64>> {
        let Some((y0, margin)) = self.interior_cone_point() else { return Vec::new() };
        let f = self.num_facets();
        let n = self.dim();
        let e_norm = (0..self.cone_matrix.nrows())
            .map(|r| self.cone_matrix.row(r).norm())
            .fold(1.0f64, f64::max);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let delta = DVector::from_fn(f, |_, _| rng.random_range(-1.0..1.0)) * (0.9 * margin / (e_norm * (f as f64).sqrt()));
            let alpha: f64 = rng.random_range(0.2..3.0);
            let z = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let y = (&y0 + delta) * alpha + &self.facet_matrix * z;
            if self.in_cone(&y, 1e-12) {
                out.push(y);
            }
        }
        out
    }

    /// Checks `F V_j y ≤ y` with equality exactly on `i(j)` for sampled cone
    /// points, and (for dimension ≤ 4) that the vertex maps reproduce the
    /// enumerated vertex set of `P(y)`.
    pub fn validate(&self, samples: usize, seed: u64) -> Result<()> {
        use rand::SeedableRng;
        let n = self.dim();
        let f = self.num_facets();
        if self.cone_matrix.ncols() != f && self.cone_matrix.nrows() > 0 {
            return Err(Error::DimensionMismatch("cone matrix must have f columns".into()));
        }
        for (j, v) in self.vertex_maps.iter().enumerate() {
            if v.nrows() != n || v.ncols() != f {
                return Err(Error::DimensionMismatch(format!("vertex map {j} must be {n}×{f}")));
            }
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let points = self.sample_cone_points(samples, &mut rng);
        if points.len() < samples {
            return Err(Error::InvalidInput("configuration cone has empty interior".into()));
        }
        for y in &points {
            let scale = 1.0 + y.amax();
            for (j, v) in self.vertex_maps.iter().enumerate() {
                let x = v * y;
                let slack = y - &self.facet_matrix * &x;
                for i in 0..f {
                    let active = self.incidence[j].contains(&i);
                    if active && slack[i].abs() > 1e-8 * scale {
                        return Err(Error::InvalidInput(format!("vertex {j} leaves its facet {i}")));
                    }
                    if slack[i] < -1e-8 * scale {
                        return Err(Error::InvalidInput(format!("vertex {j} violates facet {i}")));
                    }
                }
            }
            if n <= 4 {
                let enumerated = enumerate_vertices(&self.polytope(y))?;
                let mapped = super::dedup_points(self.vertices(y), super::VERTEX_DEDUP_TOL);
                let same = enumerated.len() == mapped.len()
                    && enumerated.vertices.iter().all(|p| mapped.iter().any(|q| (p - q).amax() <= 1e-7 * scale));
                if !same {
                    return Err(Error::InvalidInput("vertex maps do not reproduce P(y)".into()));
                }
            }
        }
        Ok(())
    }
}

fn product_form_cone(facet_matrix: &DMatrix<f64>, vertex_maps: &[DMatrix<f64>], incidence: &[Vec<usize>]) -> DMatrix<f64> {
    let f = facet_matrix.nrows();
    let rows: usize = incidence.iter().map(|a| f - a.len()).sum();
    let mut e = DMatrix::zeros(rows, f);
    let mut r = 0;
    for (v, active) in vertex_maps.iter().zip(incidence) {
        let fv = facet_matrix * v;
        for i in (0..f).filter(|i| !active.contains(i)) {
            e.set_row(r, &fv.row(i));
            e[(r, i)] -= 1.0;
            r += 1;
        }
    }
    e
}

fn matrix_from_rows(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch(format!("expected rows of length {ncols}")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}
