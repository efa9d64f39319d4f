//! Admissible transitions between template polytopes, optimal robust
//! control invariant (RCI) sets and the template size program.
//!
//! For a triple `(F, E, V)` the set `S` collects `(y, u, y⁺)` with
//!
//! * `F(A_i V_j y + B_i u_j) + d ≤ y⁺` for every model `i` and vertex `j`,
//! * `E y ≤ 0`,
//! * `Hˣ V_j y ≤ hˣ` and `Hᵘ u_j ≤ hᵘ` for every vertex `j`.
//!
//! `P(y)` is RCI iff `(y, u, y) ∈ S` for some vertex inputs `u`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::affine::{AffineMap, RowSum};
use crate::error::{Error, Result};
use crate::polytope::ConfigurationTriple;
use crate::qp::{solve_lp, solve_qp, QuadraticProgram, SolveStatus};
use crate::system::{disturbance_offsets, UncertainSystem};

/// Residual allowed when certifying membership in `S`.
pub const RCI_TOL: f64 = 1e-7;

/// Precomputed blocks of `S` for one (triple, system) pair.
#[derive(Clone, Debug)]
pub struct TransitionConstraints {
    pub num_facets: usize,
    pub num_vertices: usize,
    pub num_models: usize,
    pub state_dim: usize,
    pub input_dim: usize,
    pub offsets: DVector<f64>,
    /// `F A_i V_j`, stored at `i * v + j`.
    pub transition: Vec<DMatrix<f64>>,
    /// `F B_i`.
    pub input_gain: Vec<DMatrix<f64>>,
    /// `Hˣ V_j`.
    pub state_maps: Vec<DMatrix<f64>>,
    pub cone: DMatrix<f64>,
    pub state_lhs: DMatrix<f64>,
    pub state_rhs: DVector<f64>,
    pub input_lhs: DMatrix<f64>,
    pub input_rhs: DVector<f64>,
}

/// Which row groups of `S` to emit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Blocks {
    pub transition: bool,
    pub cone: bool,
    pub state: bool,
    pub input: bool,
}

impl Blocks {
    pub const ALL: Blocks = Blocks { transition: true, cone: true, state: true, input: true };
}

impl TransitionConstraints {
    pub fn new(t: &ConfigurationTriple, sys: &UncertainSystem) -> Result<Self> {
        let n = sys.state_dim();
        if t.dim() != n {
            return Err(Error::DimensionMismatch(format!("template in R^{} but system in R^{n}", t.dim())));
        }
        let f = &t.facet_matrix;
        let mut transition = Vec::with_capacity(sys.num_models() * t.num_vertices());
        for a in &sys.a {
            let fa = f * a;
            for v in &t.vertex_maps {
                transition.push(&fa * v);
            }
        }
        let hx = &sys.state_constraints.lhs;
        Ok(Self {
            num_facets: t.num_facets(),
            num_vertices: t.num_vertices(),
            num_models: sys.num_models(),
            state_dim: n,
            input_dim: sys.input_dim(),
            offsets: disturbance_offsets(f, sys)?,
            transition,
            input_gain: sys.b.iter().map(|b| f * b).collect(),
            state_maps: t.vertex_maps.iter().map(|v| hx * v).collect(),
            cone: t.cone_matrix.clone(),
            state_lhs: hx.clone(),
            state_rhs: sys.state_constraints.rhs.clone(),
            input_lhs: sys.input_constraints.lhs.clone(),
            input_rhs: sys.input_constraints.rhs.clone(),
        })
    }

    pub fn num_transition_rows(&self) -> usize {
        self.num_facets * self.num_models * self.num_vertices
    }

    pub fn num_cone_rows(&self) -> usize {
        self.cone.nrows()
    }

    /// `f·m·v + m_E + v·(m_X + m_U)`.
    pub fn num_rows(&self) -> usize {
        self.num_transition_rows()
            + self.num_cone_rows()
            + self.num_vertices * (self.state_lhs.nrows() + self.input_lhs.nrows())
    }

    /// Appends the selected rows of `S` for affine `y`, vertex inputs `u[j]`
    /// and `y⁺`, in the order transition (model outer, vertex inner, facet
    /// innermost), cone, state, input.
    pub fn emit(&self, qp: &mut QuadraticProgram, y: &AffineMap, u: &[AffineMap], y_next: &AffineMap, blocks: Blocks) {
        let f = self.num_facets;
        let v = self.num_vertices;
        assert_eq!(y.dim(), f);
        assert_eq!(y_next.dim(), f);
        assert_eq!(u.len(), v);
        if blocks.transition {
            for i in 0..self.num_models {
                for j in 0..v {
                    let g = &self.transition[i * v + j];
                    let gb = &self.input_gain[i];
                    for r in 0..f {
                        let mut s = RowSum::new();
                        s.add_map(g.row(r).iter(), y);
                        s.add_map(gb.row(r).iter(), &u[j]);
                        s.add_component(y_next, r, -1.0);
                        s.add_constant(self.offsets[r]);
                        qp.add_inequality(s.row, -s.constant);
                    }
                }
            }
        }
        if blocks.cone {
            for r in 0..self.cone.nrows() {
                let mut s = RowSum::new();
                s.add_map(self.cone.row(r).iter(), y);
                qp.add_inequality(s.row, -s.constant);
            }
        }
        if blocks.state {
            for hv in &self.state_maps {
                for r in 0..hv.nrows() {
                    let mut s = RowSum::new();
                    s.add_map(hv.row(r).iter(), y);
                    qp.add_inequality(s.row, self.state_rhs[r] - s.constant);
                }
            }
        }
        if blocks.input {
            for uj in u {
                for r in 0..self.input_lhs.nrows() {
                    let mut s = RowSum::new();
                    s.add_map(self.input_lhs.row(r).iter(), uj);
                    qp.add_inequality(s.row, self.input_rhs[r] - s.constant);
                }
            }
        }
    }

    /// Largest violation of `(y, u, y⁺) ∈ S` (0 when satisfied).
    pub fn max_violation(&self, y: &DVector<f64>, u: &[DVector<f64>], y_next: &DVector<f64>) -> f64 {
        let v = self.num_vertices;
        let mut worst = 0.0f64;
        for i in 0..self.num_models {
            let bu: Vec<DVector<f64>> = u.iter().map(|uj| &self.input_gain[i] * uj).collect();
            for j in 0..v {
                let lhs = &self.transition[i * v + j] * y + &bu[j] + &self.offsets - y_next;
                worst = worst.max(lhs.max());
            }
        }
        if self.cone.nrows() > 0 {
            worst = worst.max((&self.cone * y).max());
        }
        for hv in &self.state_maps {
            worst = worst.max((hv * y - &self.state_rhs).max());
        }
        for uj in u {
            worst = worst.max((&self.input_lhs * uj - &self.input_rhs).max());
        }
        worst.max(0.0)
    }
}

/// Optimal RCI parameters: offset `y_m` and one input per template vertex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RciSolution {
    pub y_m: DVector<f64>,
    pub u_m: Vec<DVector<f64>>,
    pub objective: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RciFile {
    y_m: Vec<f64>,
    u_m: Vec<Vec<f64>>,
    objective: f64,
}

impl RciSolution {
    pub fn to_json(&self) -> String {
        let file = RciFile {
            y_m: self.y_m.iter().copied().collect(),
            u_m: self.u_m.iter().map(|u| u.iter().copied().collect()).collect(),
            objective: self.objective,
        };
        serde_json::to_string_pretty(&file).expect("serializable solution")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: RciFile = serde_json::from_str(text)?;
        Ok(Self {
            y_m: DVector::from_vec(file.y_m),
            u_m: file.u_m.into_iter().map(DVector::from_vec).collect(),
            objective: file.objective,
        })
    }

    /// Vertex inputs stacked into one vector.
    pub fn stacked_inputs(&self) -> DVector<f64> {
        DVector::from_iterator(self.u_m.iter().map(|u| u.len()).sum(), self.u_m.iter().flat_map(|u| u.iter().copied()))
    }
}

/// Cost `ℓ(y, u)` of the optimal RCI problem over `(y, u_1..u_v)`.
#[derive(Clone, Debug, PartialEq)]
pub enum RciCost {
    /// `‖y‖² + ‖u‖²`.
    Norm,
    /// `Σ_j ‖((V̄ - V_j) y, (Ū - U_j) u)‖²_{Q_v} + ‖(V̄ y, Ū u)‖²_{Q_c}` with
    /// `V̄ = Σ_j V_j` and `Ū u = Σ_j u_j`.
    VertexSpread { q_v: DMatrix<f64>, q_c: DMatrix<f64> },
    /// `xᵀ W x + gᵀ x` over the stacked `x = (y, u)`.
    Quadratic { weight: DMatrix<f64>, linear: DVector<f64> },
}

impl RciCost {
    /// Vertex-spread cost with `Q_v = 0.1·I` and `Q_c = I`.
    pub fn vertex_spread_default(n_x: usize, n_u: usize) -> Self {
        let k = n_x + n_u;
        RciCost::VertexSpread { q_v: DMatrix::identity(k, k) * 0.1, q_c: DMatrix::identity(k, k) }
    }

    fn add_to(&self, qp: &mut QuadraticProgram, t: &ConfigurationTriple, n_u: usize) -> Result<()> {
        let f = t.num_facets();
        let v = t.num_vertices();
        let n = t.dim();
        let dim = f + v * n_u;
        let cols: Vec<usize> = (0..dim).collect();
        match self {
            RciCost::Norm => {
                for c in cols {
                    qp.add_square_penalty(c, 1.0, 0.0);
                }
            }
            RciCost::VertexSpread { q_v, q_c } => {
                let k = n + n_u;
                if q_v.shape() != (k, k) || q_c.shape() != (k, k) {
                    return Err(Error::DimensionMismatch(format!("vertex-spread weights must be {k}×{k}")));
                }
                let v_bar = t.vertex_maps.iter().fold(DMatrix::zeros(n, f), |acc, m| acc + m);
                // map (y, u) -> (V̄ y, Ū u)
                let mut center = DMatrix::zeros(k, dim);
                center.view_mut((0, 0), (n, f)).copy_from(&v_bar);
                for j in 0..v {
                    center.view_mut((n, f + j * n_u), (n_u, n_u)).fill_with_identity();
                }
                let mut w = center.transpose() * q_c * &center;
                for j in 0..v {
                    let mut mj = center.clone();
                    let mut vj = mj.view_mut((0, 0), (n, f));
                    vj -= &t.vertex_maps[j];
                    let mut uj = mj.view_mut((n, f + j * n_u), (n_u, n_u));
                    for d in 0..n_u {
                        uj[(d, d)] -= 1.0;
                    }
                    w += mj.transpose() * q_v * &mj;
                }
                qp.add_weighted_square(&cols, &w, &DVector::zeros(dim));
            }
            RciCost::Quadratic { weight, linear } => {
                if weight.shape() != (dim, dim) || linear.len() != dim {
                    return Err(Error::DimensionMismatch(format!("custom RCI cost must act on {dim} variables")));
                }
                qp.add_weighted_square(&cols, weight, &DVector::zeros(dim));
                for c in 0..dim {
                    qp.objective_vector[c] += linear[c];
                }
            }
        }
        Ok(())
    }
}

fn vertex_input_maps(start: usize, v: usize, n_u: usize) -> Vec<AffineMap> {
    (0..v).map(|j| AffineMap::variables(start + j * n_u, n_u)).collect()
}

fn split_inputs(x: &DVector<f64>, start: usize, v: usize, n_u: usize) -> Vec<DVector<f64>> {
    (0..v).map(|j| x.rows(start + j * n_u, n_u).into_owned()).collect()
}

/// Minimizes `ℓ(y, u)` over RCI parameterizations `(y, u, y) ∈ S`.
pub fn optimal_rci(t: &ConfigurationTriple, sys: &UncertainSystem, cost: &RciCost) -> Result<RciSolution> {
    let s = TransitionConstraints::new(t, sys)?;
    optimal_rci_with(t, &s, cost)
}

pub fn optimal_rci_with(t: &ConfigurationTriple, s: &TransitionConstraints, cost: &RciCost) -> Result<RciSolution> {
    solve_rci(t, s, cost, Anchor::None)
}

/// Optimal RCI set subject to `0 ∈ P(y_m)` and `0 ∈ convh{u_{m,j}}`.
///
/// The origin constraint is `y ≥ 0`. If the unconstrained inputs do not
/// surround the origin, the program is re-solved with `Σ_j u_j = 0`.
pub fn optimal_rci_anchored(t: &ConfigurationTriple, sys: &UncertainSystem, cost: &RciCost) -> Result<RciSolution> {
    let s = TransitionConstraints::new(t, sys)?;
    let sol = solve_rci(t, &s, cost, Anchor::Origin)?;
    if origin_in_input_hull(&sol.u_m)? {
        return Ok(sol);
    }
    solve_rci(t, &s, cost, Anchor::OriginAndInputs)
}

/// True iff `0 ∈ convh{u_j}` (LP membership).
pub fn origin_in_input_hull(u: &[DVector<f64>]) -> Result<bool> {
    let v = u.len();
    let n_u = u.first().map_or(0, |x| x.len());
    if n_u == 0 {
        return Ok(true);
    }
    let mut lp = QuadraticProgram::new(v);
    for c in 0..n_u {
        lp.add_equality((0..v).map(|j| (j, u[j][c])).collect(), 0.0);
    }
    lp.add_equality((0..v).map(|j| (j, 1.0)).collect(), 1.0);
    for j in 0..v {
        lp.add_inequality(vec![(j, -1.0)], 0.0);
    }
    match solve_lp(&DVector::zeros(v), &lp).status {
        SolveStatus::Optimal => Ok(true),
        SolveStatus::Infeasible => Ok(false),
        st => Err(Error::Solver(st)),
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Anchor {
    None,
    Origin,
    OriginAndInputs,
}

fn solve_rci(t: &ConfigurationTriple, s: &TransitionConstraints, cost: &RciCost, anchor: Anchor) -> Result<RciSolution> {
    let f = s.num_facets;
    let v = s.num_vertices;
    let n_u = s.input_dim;
    let mut qp = QuadraticProgram::new(f + v * n_u);
    let y = AffineMap::variables(0, f);
    s.emit(&mut qp, &y, &vertex_input_maps(f, v, n_u), &y, Blocks::ALL);
    if anchor != Anchor::None {
        for i in 0..f {
            qp.add_inequality(vec![(i, -1.0)], 0.0);
        }
    }
    if anchor == Anchor::OriginAndInputs {
        for c in 0..n_u {
            qp.add_equality((0..v).map(|j| (f + j * n_u + c, 1.0)).collect(), 0.0);
        }
    }
    cost.add_to(&mut qp, t, n_u)?;
    let rep = solve_qp(&qp);
    match rep.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(Error::InfeasibleTemplate),
        st => return Err(Error::Solver(st)),
    }
    let x = rep.primal.expect("optimal report carries a primal");
    let y_m = x.rows(0, f).into_owned();
    let u_m = split_inputs(&x, f, v, n_u);
    if s.max_violation(&y_m, &u_m, &y_m) > RCI_TOL {
        return Err(Error::Solver(SolveStatus::NumericalFailure));
    }
    Ok(RciSolution { y_m, u_m, objective: rep.objective_value.unwrap_or_default() })
}

/// True iff `(y, u, y) ∈ S` within [`RCI_TOL`].
pub fn verify_rci(t: &ConfigurationTriple, sys: &UncertainSystem, y: &DVector<f64>, u: &[DVector<f64>]) -> bool {
    let Ok(s) = TransitionConstraints::new(t, sys) else { return false };
    y.len() == s.num_facets
        && u.len() == s.num_vertices
        && u.iter().all(|uj| uj.len() == s.input_dim)
        && s.max_violation(y, u, y) <= RCI_TOL
}

/// Solution of the size program.
#[derive(Clone, Debug, PartialEq)]
pub struct SizeSolution {
    /// `Σ_i ‖ξ_i - z_i‖²`.
    pub sigma: f64,
    pub y: DVector<f64>,
    pub u: Vec<DVector<f64>>,
    pub z: Vec<DVector<f64>>,
}

/// Weight of the `‖y‖²` tie-breaking term in the size program.
pub const SIZE_REGULARIZATION: f64 = 1e-9;

/// Finds the RCI polytope `P(y)` whose closest points `z_i` to the vertices
/// `ξ_i` of `X` have minimal aggregated squared distance.
pub fn size_program(t: &ConfigurationTriple, sys: &UncertainSystem, x_vertices: &[DVector<f64>]) -> Result<SizeSolution> {
    let s = TransitionConstraints::new(t, sys)?;
    size_program_with(t, &s, x_vertices)
}

pub fn size_program_with(
    t: &ConfigurationTriple,
    s: &TransitionConstraints,
    x_vertices: &[DVector<f64>],
) -> Result<SizeSolution> {
    let f = s.num_facets;
    let v = s.num_vertices;
    let n_u = s.input_dim;
    let n = s.state_dim;
    let z0 = f + v * n_u;
    let mut qp = QuadraticProgram::new(z0 + x_vertices.len() * n);
    let y = AffineMap::variables(0, f);
    s.emit(&mut qp, &y, &vertex_input_maps(f, v, n_u), &y, Blocks::ALL);
    for (k, xi) in x_vertices.iter().enumerate() {
        let base = z0 + k * n;
        for r in 0..f {
            let mut row: Vec<(usize, f64)> =
                (0..n).filter(|&c| t.facet_matrix[(r, c)] != 0.0).map(|c| (base + c, t.facet_matrix[(r, c)])).collect();
            row.push((r, -1.0));
            qp.add_inequality(row, 0.0);
        }
        for c in 0..n {
            qp.add_square_penalty(base + c, 1.0, xi[c]);
        }
    }
    for r in 0..f {
        qp.add_inequality(vec![(r, -1.0)], 0.0);
        qp.add_square_penalty(r, SIZE_REGULARIZATION, 0.0);
    }
    let rep = solve_qp(&qp);
    match rep.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(Error::InfeasibleTemplate),
        st => return Err(Error::Solver(st)),
    }
    let x = rep.primal.expect("optimal report carries a primal");
    let z: Vec<DVector<f64>> = (0..x_vertices.len()).map(|k| x.rows(z0 + k * n, n).into_owned()).collect();
    let sigma = x_vertices.iter().zip(&z).map(|(xi, zi)| (xi - zi).norm_squared()).sum();
    Ok(SizeSolution { sigma, y: x.rows(0, f).into_owned(), u: split_inputs(&x, f, v, n_u), z })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polytope::{ConvexSet, HPolytope, VPolytope};

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn scalar_system(w: f64) -> UncertainSystem {
        let dist = if w == 0.0 {
            ConvexSet::Vertices(VPolytope::singleton(dv(&[0.0])))
        } else {
            ConvexSet::Halfspaces(HPolytope::from_box(&[-w], &[w]))
        };
        UncertainSystem::new(
            vec![DMatrix::from_element(1, 1, 0.5)],
            vec![DMatrix::from_element(1, 1, 1.0)],
            dist,
            HPolytope::from_box(&[-1.0], &[1.0]),
            HPolytope::from_box(&[-1.0], &[1.0]),
        )
        .unwrap()
    }

    fn interval() -> ConfigurationTriple {
        ConfigurationTriple::from_hpolytope(&HPolytope::from_box(&[-1.0], &[1.0])).unwrap()
    }

    fn y_only_cost(t: &ConfigurationTriple) -> RciCost {
        let dim = t.num_facets() + t.num_vertices();
        let mut w = DMatrix::zeros(dim, dim);
        for r in 0..t.num_facets() {
            w[(r, r)] = 1.0;
        }
        RciCost::Quadratic { weight: w, linear: DVector::zeros(dim) }
    }

    #[test]
    fn scalar_row_counts() {
        let s = TransitionConstraints::new(&interval(), &scalar_system(0.1)).unwrap();
        assert_eq!(s.num_transition_rows(), 4);
        assert_eq!(s.num_rows(), 4 + 2 + 2 * (2 + 2));
        let mut qp = QuadraticProgram::new(4);
        s.emit(&mut qp, &AffineMap::variables(0, 2), &vertex_input_maps(2, 2, 1), &AffineMap::variables(0, 2), Blocks::ALL);
        assert_eq!(qp.num_inequalities(), s.num_rows());
    }

    #[test]
    fn scalar_minimal_rci() {
        let t = interval();
        let sys = scalar_system(0.1);
        let sol = optimal_rci(&t, &sys, &y_only_cost(&t)).unwrap();
        assert!((&sol.y_m - dv(&[0.1, 0.1])).amax() < 1e-7);
        // the vertex at +0.1 must be pushed to -0.05, the one at -0.1 to +0.05
        let verts = t.vertices(&sol.y_m);
        for (x, u) in verts.iter().zip(&sol.u_m) {
            assert!((u[0] + 0.5 * x[0]).abs() < 1e-6);
        }
        assert!(verify_rci(&t, &sys, &sol.y_m, &sol.u_m));
    }

    #[test]
    fn origin_is_invariant_without_disturbance() {
        let t = interval();
        let sol = optimal_rci(&t, &scalar_system(0.0), &RciCost::Norm).unwrap();
        assert!(sol.y_m.amax() < 1e-7);
        assert!(sol.stacked_inputs().amax() < 1e-7);
    }

    #[test]
    fn anchoring_keeps_origin_inside() {
        let t = interval();
        let sys = scalar_system(0.1);
        // linear term drags the interval to the left
        let cost = RciCost::Quadratic { weight: DMatrix::identity(4, 4), linear: dv(&[4.0, -4.0, 0.0, 0.0]) };
        let free = optimal_rci(&t, &sys, &cost).unwrap();
        assert!(free.y_m[0] < -0.1);
        let anchored = optimal_rci_anchored(&t, &sys, &cost).unwrap();
        assert!(anchored.y_m.min() >= -1e-9);
        assert!(origin_in_input_hull(&anchored.u_m).unwrap());
        assert!(verify_rci(&t, &sys, &anchored.y_m, &anchored.u_m));
    }

    #[test]
    fn input_hull_membership() {
        assert!(origin_in_input_hull(&[dv(&[-1.0]), dv(&[2.0])]).unwrap());
        assert!(!origin_in_input_hull(&[dv(&[0.5]), dv(&[2.0])]).unwrap());
    }

    #[test]
    fn shrunken_offsets_fail_verification() {
        let t = interval();
        let sys = scalar_system(0.1);
        let sol = optimal_rci(&t, &sys, &y_only_cost(&t)).unwrap();
        assert!(!verify_rci(&t, &sys, &(&sol.y_m * 0.5), &sol.u_m));
    }

    #[test]
    fn infeasible_template_reported() {
        // disturbance larger than the state constraints
        let t = interval();
        let sys = scalar_system(2.0);
        assert!(matches!(optimal_rci(&t, &sys, &RciCost::Norm), Err(Error::InfeasibleTemplate)));
    }

    #[test]
    fn size_program_matches_bisection() {
        // x⁺ = 1.5x + u + w, |u| ≤ 0.5, |w| ≤ 0.1, X = [-1, 1]
        let t = interval();
        let sys = UncertainSystem::new(
            vec![DMatrix::from_element(1, 1, 1.5)],
            vec![DMatrix::from_element(1, 1, 1.0)],
            ConvexSet::Halfspaces(HPolytope::from_box(&[-0.1], &[0.1])),
            HPolytope::from_box(&[-1.0], &[1.0]),
            HPolytope::from_box(&[-0.5], &[0.5]),
        )
        .unwrap();
        let xv = [dv(&[1.0]), dv(&[-1.0])];
        let sol = size_program(&t, &sys, &xv).unwrap();
        let feasible = |a: f64| {
            let y = dv(&[a, a]);
            let u: Vec<DVector<f64>> =
                t.vertices(&y).iter().map(|x| dv(&[-(0.5 * a + 0.1) * x[0].signum()])).collect();
            verify_rci(&t, &sys, &y, &u)
        };
        let (mut lo, mut hi) = (0.2, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if feasible(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let expected = 2.0 * (1.0 - lo).powi(2);
        assert!((sol.sigma - expected).abs() < 1e-6, "{} vs {}", sol.sigma, expected);
    }

    #[test]
    fn size_program_zero_when_x_is_invariant() {
        let t = ConfigurationTriple::from_hpolytope(&HPolytope::from_box(&[-1.0, -1.0], &[1.0, 1.0])).unwrap();
        let sys = UncertainSystem::new(
            vec![DMatrix::identity(2, 2) * 0.5],
            vec![DMatrix::identity(2, 1)],
            ConvexSet::Vertices(VPolytope::singleton(dv(&[0.0, 0.0]))),
            HPolytope::from_box(&[-1.0, -1.0], &[1.0, 1.0]),
            HPolytope::from_box(&[-10.0], &[10.0]),
        )
        .unwrap();
        let xv = sys.state_constraints.vertices().unwrap().vertices;
        let sol = size_program(&t, &sys, &xv).unwrap();
        assert!(sol.sigma < 1e-7);
        // invariant to vertex order
        let mut rev = xv.clone();
        rev.reverse();
        assert!((size_program(&t, &sys, &rev).unwrap().sigma - sol.sigma).abs() < 1e-9);
    }

    #[test]
    fn vertex_spread_cost_is_nonnegative_form() {
        let t = ConfigurationTriple::from_hpolytope(&HPolytope::from_box(&[-1.0, -1.0], &[1.0, 1.0])).unwrap();
        let sys = UncertainSystem::new(
            vec![DMatrix::from_row_slice(2, 2, &[0.8, 0.1, 0.0, 0.9])],
            vec![DMatrix::from_row_slice(2, 1, &[0.0, 0.1])],
            ConvexSet::Halfspaces(HPolytope::from_box(&[-0.01, -0.01], &[0.01, 0.01])),
            HPolytope::from_box(&[-5.0, -5.0], &[5.0, 5.0]),
            HPolytope::from_box(&[-1.0], &[1.0]),
        )
        .unwrap();
        let sol = optimal_rci(&t, &sys, &RciCost::vertex_spread_default(2, 1)).unwrap();
        assert!(sol.objective >= -1e-9);
        assert!(verify_rci(&t, &sys, &sol.y_m, &sol.u_m));
    }

    #[test]
    fn solution_json_round_trip() {
        let sol = RciSolution { y_m: dv(&[0.1, 0.2]), u_m: vec![dv(&[1.0]), dv(&[-1.0])], objective: 0.5 };
        assert_eq!(RciSolution::from_json(&sol.to_json()).unwrap(), sol);
    }
}
