//! Tube MPC schemes compiled into parametric QPs keyed on the state `x`.
//!
//! Every scheme is an affine parameterization of the tube `(y_k, u_k)` by a
//! per-stage decision vector `p_k`:
//!
//! | scheme | `p_k` | `y_k` | `u_{k,j}` |
//! |---|---|---|---|
//! | [`Scheme::Full`] | `(y, u_1..u_v)` | `y` | `u_j` |
//! | [`Scheme::Homothetic`] | `(z, v, α)` | `αy_m + Fz` | `αu_{m,j} + v` |
//! | [`Scheme::Partial`] | `(ŷ, z, v, α, u_free)` | `αS_p y_m + Fz + S_f ŷ` | `αu_{m,j} + v` on `J_p`, free otherwise |
//! | [`Scheme::HomotheticFree`] | `(z, α, u_1..u_v)` | `αy_m + Fz` | `u_j` |
//!
//! The stage target `p*` maps to the RCI fixed point `(y_m, u_m)` and the
//! cost is `Σ_{k<N} ‖p_k - p*‖²_Q + ‖p_N - p*‖²_R`. Only the right-hand side
//! of the initial constraint `Fx ≤ y_0` depends on `x`, so the program is
//! assembled once per controller.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::affine::{AffineMap, RowSum};
use crate::error::{Error, Result};
use crate::polytope::ConfigurationTriple;
use crate::qp::{solve_qp, solve_qp_with, QuadraticProgram, SolveStatus, SolverOptions};
use crate::rci::{origin_in_input_hull, verify_rci, Blocks, RciSolution, TransitionConstraints};
use crate::system::{homothetic_support_vectors, UncertainSystem};

/// Residual bound for stage constraints of an accepted solution.
pub const STAGE_TOL: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Full,
    Homothetic,
    /// Homothetic vertices `J_p` (0-based vertex indices of the template).
    Partial(Vec<usize>),
    HomotheticFree,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Full => "full",
            Scheme::Homothetic => "homothetic",
            Scheme::Partial(_) => "partial",
            Scheme::HomotheticFree => "homothetic_free",
        }
    }

    fn is_homothetic(&self) -> bool {
        matches!(self, Scheme::Homothetic | Scheme::HomotheticFree)
    }
}

/// True iff `R - Q - γ²R ⪰ -1e-9·I`.
pub fn check_stability_condition(q: &DMatrix<f64>, r: &DMatrix<f64>, gamma: f64) -> bool {
    stability_margin(q, r, gamma) >= -1e-9
}

fn stability_margin(q: &DMatrix<f64>, r: &DMatrix<f64>, gamma: f64) -> f64 {
    let m = r - q - r * (gamma * gamma);
    let sym = (&m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

/// Stage weight `Q`, terminal weight `R` and contraction factor `γ`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackingCost {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub gamma: f64,
}

impl TrackingCost {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidInput(format!("gamma must lie in (0, 1), got {gamma}")));
        }
        if !q.is_square() || q.shape() != r.shape() {
            return Err(Error::DimensionMismatch("Q and R must be square of equal size".into()));
        }
        for (name, m) in [("Q", &q), ("R", &r)] {
            if (m - m.transpose()).amax() > 1e-12 * (1.0 + m.amax()) || m.clone().cholesky().is_none() {
                return Err(Error::InvalidInput(format!("{name} must be symmetric positive definite")));
            }
        }
        let margin = stability_margin(&q, &r, gamma);
        if margin < -1e-9 {
            return Err(Error::StabilityConditionViolated(margin));
        }
        Ok(Self { q, r, gamma })
    }

    /// `Q = I`, `R = (1 - γ²)⁻¹ I`.
    pub fn identity(dim: usize, gamma: f64) -> Result<Self> {
        let q = DMatrix::identity(dim, dim);
        let r = &q / (1.0 - gamma * gamma);
        Self::new(q, r, gamma)
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }
}

/// Everything a controller is compiled from.
#[derive(Clone, Debug)]
pub struct ControllerSpec {
    pub scheme: Scheme,
    pub horizon: usize,
    pub triple: ConfigurationTriple,
    pub system: UncertainSystem,
    pub rci: RciSolution,
    pub cost: TrackingCost,
}

/// Weight given as a multiple of the identity or as a full matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Scale(f64),
    Matrix(Vec<Vec<f64>>),
}

impl WeightSpec {
    fn to_matrix(&self, dim: usize) -> Result<DMatrix<f64>> {
        match self {
            WeightSpec::Scale(s) => Ok(DMatrix::identity(dim, dim) * *s),
            WeightSpec::Matrix(rows) => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(Error::DimensionMismatch(format!("weight must be {dim}×{dim}")));
                }
                Ok(DMatrix::from_fn(dim, dim, |a, b| rows[a][b]))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Full,
    Homothetic,
    Partial,
    HomotheticFree,
}

/// JSON controller block:
/// `{"scheme": "full|homothetic|partial|homothetic_free", "N": 3, "gamma": 0.95, "Q": .., "R": .., "J_p": [..]}`.
///
/// `Q` defaults to the identity and `R` to `(1 - γ²)⁻¹ Q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub scheme: SchemeName,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub gamma: f64,
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    pub q: Option<WeightSpec>,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub r: Option<WeightSpec>,
    #[serde(rename = "J_p", default, skip_serializing_if = "Option::is_none")]
    pub j_p: Option<Vec<usize>>,
}

impl ControllerConfig {
    pub fn scheme(&self) -> Result<Scheme> {
        match (self.scheme, &self.j_p) {
            (SchemeName::Partial, Some(j)) => Ok(Scheme::Partial(j.clone())),
            (SchemeName::Partial, None) => Err(Error::InvalidIndexSet("partial scheme requires J_p".into())),
            (_, Some(_)) => Err(Error::InvalidInput("J_p is only valid for the partial scheme".into())),
            (SchemeName::Full, None) => Ok(Scheme::Full),
            (SchemeName::Homothetic, None) => Ok(Scheme::Homothetic),
            (SchemeName::HomotheticFree, None) => Ok(Scheme::HomotheticFree),
        }
    }

    pub fn spec(&self, triple: ConfigurationTriple, system: UncertainSystem, rci: RciSolution) -> Result<ControllerSpec> {
        if self.horizon == 0 {
            return Err(Error::InvalidInput("horizon N must be at least 1".into()));
        }
        let scheme = self.scheme()?;
        let dim = stage_dimension(&scheme, &triple, system.state_dim(), system.input_dim())?;
        let q = self.q.as_ref().map_or(Ok(DMatrix::identity(dim, dim)), |w| w.to_matrix(dim))?;
        let r = match &self.r {
            Some(w) => w.to_matrix(dim)?,
            None => &q / (1.0 - self.gamma * self.gamma),
        };
        let cost = TrackingCost::new(q, r, self.gamma)?;
        Ok(ControllerSpec { scheme, horizon: self.horizon, triple, system, rci, cost })
    }
}

/// Length of the per-stage decision vector.
pub fn stage_dimension(scheme: &Scheme, t: &ConfigurationTriple, n_x: usize, n_u: usize) -> Result<usize> {
    let f = t.num_facets();
    let v = t.num_vertices();
    Ok(match scheme {
        Scheme::Full => f + v * n_u,
        Scheme::Homothetic => n_x + n_u + 1,
        Scheme::HomotheticFree => n_x + 1 + v * n_u,
        Scheme::Partial(j_p) => {
            let (j_p, free_facets) = partial_sets(t, j_p)?;
            free_facets.len() + n_x + n_u + 1 + (v - j_p.len()) * n_u
        }
    })
}

/// Validated `J_p` and the complement `I_f` of `I_p = ∪_{j∈J_p} i(j)`.
fn partial_sets(t: &ConfigurationTriple, j_p: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let v = t.num_vertices();
    let mut j = j_p.to_vec();
    j.sort_unstable();
    j.dedup();
    if j.is_empty() {
        return Err(Error::InvalidIndexSet("J_p is empty; use the full scheme".into()));
    }
    if let Some(&bad) = j.iter().find(|&&k| k >= v) {
        return Err(Error::InvalidIndexSet(format!("vertex {bad} out of range (v = {v})")));
    }
    if j.len() == v {
        return Err(Error::InvalidIndexSet("J_p contains every vertex; use the homothetic scheme".into()));
    }
    let mut in_p = vec![false; t.num_facets()];
    for &k in &j {
        for &i in &t.incidence[k] {
            in_p[i] = true;
        }
    }
    let free = (0..t.num_facets()).filter(|&i| !in_p[i]).collect();
    Ok((j, free))
}

/// Variable and inequality counts of the stage constraints, `(N+1)` stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemSize {
    pub variables: usize,
    pub inequalities: usize,
}

/// Closed-form problem size of a scheme (initial constraint `Fx ≤ y_0` excluded).
pub fn problem_size(
    scheme: &Scheme,
    horizon: usize,
    t: &ConfigurationTriple,
    sys: &UncertainSystem,
) -> Result<ProblemSize> {
    let stages = horizon + 1;
    let (f, v, m) = (t.num_facets(), t.num_vertices(), sys.num_models());
    let (m_x, m_u) = (sys.state_constraints.num_facets(), sys.input_constraints.num_facets());
    let m_e = t.num_cone_rows();
    let per_stage = match scheme {
        Scheme::Full | Scheme::Partial(_) => f * m * v + m_e + v * (m_x + m_u),
        Scheme::Homothetic => 1 + m_x + m_u + f * m,
        Scheme::HomotheticFree => f * m * v + 1 + m_x + v * m_u,
    };
    let dim = stage_dimension(scheme, t, sys.state_dim(), sys.input_dim())?;
    Ok(ProblemSize { variables: stages * dim, inequalities: stages * per_stage })
}

/// Checks `0 ∈ P(y_m)` and `0 ∈ convh{u_{m,j}}`.
pub fn check_assumption_one(rci: &RciSolution) -> Result<()> {
    let worst = rci.y_m.min();
    if worst < -STAGE_TOL {
        return Err(Error::AssumptionViolated(format!("origin outside P(y_m) (min offset {worst:e})")));
    }
    if origin_in_input_hull(&rci.u_m)? {
        Ok(())
    } else {
        Err(Error::AssumptionViolated("origin outside the hull of the vertex inputs".into()))
    }
}

/// Outcome class of one tube problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TubeStatus {
    Optimal,
    /// The state admits no feasible tube.
    Infeasible,
    /// Solver failed; the shifted previous solution was used instead.
    WarmShift,
    /// Solver failed and no feasible fallback was available.
    Failed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TubeSolution {
    pub status: TubeStatus,
    /// Raw solver status of the tube QP (`None` when it was not solved).
    pub solver_status: Option<SolveStatus>,
    /// Stacked stage vectors `p_0..p_N`; empty unless a solution is available.
    pub params: DVector<f64>,
    /// Offsets `y_0..y_N`.
    pub y: Vec<DVector<f64>>,
    /// Vertex inputs `u_{k,1..v}` for each stage.
    pub u: Vec<Vec<DVector<f64>>>,
    /// Tracking cost `𝓛`.
    pub cost: f64,
}

impl TubeSolution {
    fn without_solution(status: TubeStatus, solver_status: Option<SolveStatus>) -> Self {
        Self { status, solver_status, params: DVector::zeros(0), y: Vec::new(), u: Vec::new(), cost: f64::INFINITY }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self.status, TubeStatus::Optimal | TubeStatus::WarmShift)
    }
}

/// Positions inside a stage vector.
#[derive(Clone, Debug)]
enum Layout {
    Full,
    Homothetic { z: usize, v: usize, alpha: usize },
    Partial { free_facets: Vec<usize>, homothetic: Vec<bool>, z: usize, v: usize, alpha: usize, free_u: usize },
    HomotheticFree { z: usize, alpha: usize, u: usize },
}

/// A compiled scheme: program template plus warm-start state.
#[derive(Clone, Debug)]
pub struct Controller {
    spec: ControllerSpec,
    layout: Layout,
    constraints: TransitionConstraints,
    stage_dim: usize,
    target: DVector<f64>,
    qp: QuadraticProgram,
    /// `qp` in deviations `p - p*`.
    centered: QuadraticProgram,
    initial_row: usize,
    initial_constant: DVector<f64>,
    solver: SolverOptions,
    previous: Option<DVector<f64>>,
}

impl Controller {
    pub fn new(spec: ControllerSpec) -> Result<Self> {
        if spec.horizon == 0 {
            return Err(Error::InvalidInput("horizon N must be at least 1".into()));
        }
        let (t, sys, rci) = (&spec.triple, &spec.system, &spec.rci);
        if !verify_rci(t, sys, &rci.y_m, &rci.u_m) {
            return Err(Error::InvalidInput("RCI parameters fail verify_rci for this template".into()));
        }
        if spec.scheme.is_homothetic() {
            check_assumption_one(rci)?;
        }
        let margin = stability_margin(&spec.cost.q, &spec.cost.r, spec.cost.gamma);
        if margin < -1e-9 {
            return Err(Error::StabilityConditionViolated(margin));
        }
        let (n_x, n_u) = (sys.state_dim(), sys.input_dim());
        let (f, v) = (t.num_facets(), t.num_vertices());
        let stage_dim = stage_dimension(&spec.scheme, t, n_x, n_u)?;
        if spec.cost.dim() != stage_dim {
            return Err(Error::DimensionMismatch(format!(
                "cost acts on {} variables, stage has {stage_dim}",
                spec.cost.dim()
            )));
        }
        let mut target = DVector::zeros(stage_dim);
        let layout = match &spec.scheme {
            Scheme::Full => {
                target.rows_mut(0, f).copy_from(&rci.y_m);
                target.rows_mut(f, v * n_u).copy_from(&rci.stacked_inputs());
                Layout::Full
            }
            Scheme::Homothetic => {
                target[n_x + n_u] = 1.0;
                Layout::Homothetic { z: 0, v: n_x, alpha: n_x + n_u }
            }
            Scheme::HomotheticFree => {
                target[n_x] = 1.0;
                target.rows_mut(n_x + 1, v * n_u).copy_from(&rci.stacked_inputs());
                Layout::HomotheticFree { z: 0, alpha: n_x, u: n_x + 1 }
            }
            Scheme::Partial(j_p) => {
                let (j_p, free_facets) = partial_sets(t, j_p)?;
                let fh = free_facets.len();
                let mut homothetic = vec![false; v];
                for &j in &j_p {
                    homothetic[j] = true;
                }
                let (z, vv, alpha, free_u) = (fh, fh + n_x, fh + n_x + n_u, fh + n_x + n_u + 1);
                for (k, &i) in free_facets.iter().enumerate() {
                    target[k] = rci.y_m[i];
                }
                target[alpha] = 1.0;
                let mut at = free_u;
                for j in (0..v).filter(|&j| !homothetic[j]) {
                    target.rows_mut(at, n_u).copy_from(&rci.u_m[j]);
                    at += n_u;
                }
                Layout::Partial { free_facets, homothetic, z, v: vv, alpha, free_u }
            }
        };
        let constraints = TransitionConstraints::new(t, sys)?;
        let mut ctrl = Self {
            spec,
            layout,
            constraints,
            stage_dim,
            target,
            qp: QuadraticProgram::new(0),
            centered: QuadraticProgram::new(0),
            initial_row: 0,
            initial_constant: DVector::zeros(f),
            solver: SolverOptions::default(),
            previous: None,
        };
        ctrl.assemble();
        Ok(ctrl)
    }

    pub fn spec(&self) -> &ControllerSpec {
        &self.spec
    }

    pub fn stage_dim(&self) -> usize {
        self.stage_dim
    }

    /// Stage target `p*`.
    pub fn target(&self) -> &DVector<f64> {
        &self.target
    }

    pub fn num_variables(&self) -> usize {
        self.qp.num_variables()
    }

    /// Stage inequality rows (the initial constraint excluded).
    pub fn num_stage_inequalities(&self) -> usize {
        self.initial_row
    }

    pub fn size(&self) -> ProblemSize {
        ProblemSize { variables: self.num_variables(), inequalities: self.num_stage_inequalities() }
    }

    /// Parametric program with the initial rows set for `x`.
    pub fn program(&self, x: &DVector<f64>) -> QuadraticProgram {
        let mut qp = self.qp.clone();
        let fx = &self.spec.triple.facet_matrix * x;
        for r in 0..fx.len() {
            qp.inequality_rhs[self.initial_row + r] = -fx[r] - self.initial_constant[r];
        }
        qp
    }

    fn stage_maps(&self, k: usize) -> (AffineMap, Vec<AffineMap>) {
        let base = k * self.stage_dim;
        let t = &self.spec.triple;
        let rci = &self.spec.rci;
        let (f, v) = (t.num_facets(), t.num_vertices());
        let (n_x, n_u) = (self.spec.system.state_dim(), self.spec.system.input_dim());
        let facet_z = |z: usize| AffineMap {
            terms: (0..f).map(|r| (0..n_x).map(|c| (base + z + c, t.facet_matrix[(r, c)])).collect()).collect(),
            offset: DVector::zeros(f),
        };
        match &self.layout {
            Layout::Full => {
                let u = (0..v).map(|j| AffineMap::variables(base + f + j * n_u, n_u)).collect();
                (AffineMap::variables(base, f), u)
            }
            Layout::Homothetic { z, v: vv, alpha } => {
                let mut y = facet_z(*z);
                for r in 0..f {
                    y.terms[r].push((base + alpha, rci.y_m[r]));
                }
                let u = (0..v)
                    .map(|j| {
                        let mut m = AffineMap::variables(base + vv, n_u);
                        for c in 0..n_u {
                            m.terms[c].push((base + alpha, rci.u_m[j][c]));
                        }
                        m
                    })
                    .collect();
                (y, u)
            }
            Layout::HomotheticFree { z, alpha, u } => {
                let mut y = facet_z(*z);
                for r in 0..f {
                    y.terms[r].push((base + alpha, rci.y_m[r]));
                }
                let us = (0..v).map(|j| AffineMap::variables(base + u + j * n_u, n_u)).collect();
                (y, us)
            }
            Layout::Partial { free_facets, homothetic, z, v: vv, alpha, free_u } => {
                let mut y = facet_z(*z);
                let mut free_at = vec![None; f];
                for (k, &i) in free_facets.iter().enumerate() {
                    free_at[i] = Some(k);
                }
                for r in 0..f {
                    match free_at[r] {
                        Some(k) => y.terms[r].push((base + k, 1.0)),
                        None => y.terms[r].push((base + alpha, rci.y_m[r])),
                    }
                }
                let mut at = base + free_u;
                let mut us = Vec::with_capacity(v);
                for j in 0..v {
                    if homothetic[j] {
                        let mut m = AffineMap::variables(base + vv, n_u);
                        for c in 0..n_u {
                            m.terms[c].push((base + alpha, rci.u_m[j][c]));
                        }
                        us.push(m);
                    } else {
                        us.push(AffineMap::variables(at, n_u));
                        at += n_u;
                    }
                }
                (y, us)
            }
        }
    }

    fn assemble(&mut self) {
        let n = self.spec.horizon;
        let gamma = self.spec.cost.gamma;
        let mut qp = QuadraticProgram::new((n + 1) * self.stage_dim);
        let s = &self.constraints;
        let y_m = AffineMap::constant(self.spec.rci.y_m.clone());
        for k in 0..=n {
            let (y, u) = self.stage_maps(k);
            match &self.layout {
                Layout::Full | Layout::Partial { .. } => {
                    let next = if k < n { self.stage_maps(k + 1).0 } else { y.clone().scaled(gamma).add_scaled(&y_m, 1.0 - gamma) };
                    s.emit(&mut qp, &y, &u, &next, Blocks::ALL);
                }
                Layout::HomotheticFree { z, alpha, .. } => {
                    let next = if k < n { self.stage_maps(k + 1).0 } else { y.clone().scaled(gamma).add_scaled(&y_m, 1.0 - gamma) };
                    s.emit(&mut qp, &y, &u, &next, Blocks { transition: true, cone: false, state: false, input: true });
                    let base = k * self.stage_dim;
                    self.emit_homothetic_bounds(&mut qp, base + z, base + alpha, None);
                }
                Layout::Homothetic { z, v, alpha } => {
                    let base = k * self.stage_dim;
                    let (zc, vc, ac) = (base + z, base + v, base + alpha);
                    let (z_next, a_next) = if k < n {
                        let nb = (k + 1) * self.stage_dim;
                        (AffineMap::variables(nb + z, s.state_dim), AffineMap::variables(nb + alpha, 1))
                    } else {
                        let mut a = AffineMap::variables(ac, 1).scaled(gamma);
                        a.offset[0] = 1.0 - gamma;
                        (AffineMap::variables(zc, s.state_dim).scaled(gamma), a)
                    };
                    self.emit_homothetic_bounds(&mut qp, zc, ac, Some(vc));
                    self.emit_compact_transitions(&mut qp, zc, vc, ac, &z_next, &a_next);
                }
            }
            let w = if k < n { &self.spec.cost.q } else { &self.spec.cost.r };
            let cols: Vec<usize> = (k * self.stage_dim..(k + 1) * self.stage_dim).collect();
            qp.add_weighted_square(&cols, w, &self.target);
        }
        // F x ≤ y_0, rhs filled per state
        self.initial_row = qp.num_inequalities();
        let (y0, _) = self.stage_maps(0);
        for r in 0..y0.dim() {
            let mut sum = RowSum::new();
            sum.add_component(&y0, r, -1.0);
            self.initial_constant[r] = sum.constant;
            qp.add_inequality(sum.row, 0.0);
        }
        self.centered = qp.translated(&self.stacked_target());
        self.qp = qp;
    }

    fn stacked_target(&self) -> DVector<f64> {
        DVector::from_iterator((self.spec.horizon + 1) * self.stage_dim, (0..=self.spec.horizon).flat_map(|_| self.target.iter().copied()))
    }

    /// `α ≥ 0`, `Hˣz + hˣ_m α ≤ hˣ` and, with `v`, `Hᵘv + hᵘ_m α ≤ hᵘ`.
    fn emit_homothetic_bounds(&self, qp: &mut QuadraticProgram, z: usize, alpha: usize, v: Option<usize>) {
        let sys = &self.spec.system;
        let (hx_m, hu_m) = homothetic_support_vectors(&self.spec.triple, &self.spec.rci, sys);
        qp.add_inequality(vec![(alpha, -1.0)], 0.0);
        let hx = &sys.state_constraints;
        for r in 0..hx.num_facets() {
            let mut row: Vec<(usize, f64)> = (0..sys.state_dim()).map(|c| (z + c, hx.lhs[(r, c)])).collect();
            row.push((alpha, hx_m[r]));
            qp.add_inequality(row, hx.rhs[r]);
        }
        if let Some(v) = v {
            let hu = &sys.input_constraints;
            for r in 0..hu.num_facets() {
                let mut row: Vec<(usize, f64)> = (0..sys.input_dim()).map(|c| (v + c, hu.lhs[(r, c)])).collect();
                row.push((alpha, hu_m[r]));
                qp.add_inequality(row, hu.rhs[r]);
            }
        }
    }

    /// `F(A_i z + B_i v) + (1 - α)d + αy_m ≤ α⁺y_m + Fz⁺` for every model.
    fn emit_compact_transitions(
        &self,
        qp: &mut QuadraticProgram,
        z: usize,
        v: usize,
        alpha: usize,
        z_next: &AffineMap,
        a_next: &AffineMap,
    ) {
        let s = &self.constraints;
        let t = &self.spec.triple;
        let y_m = &self.spec.rci.y_m;
        let d = &s.offsets;
        for i in 0..s.num_models {
            let fa = &t.facet_matrix * &self.spec.system.a[i];
            let fb = &s.input_gain[i];
            for r in 0..s.num_facets {
                let mut sum = RowSum::new();
                sum.row.extend((0..s.state_dim).map(|c| (z + c, fa[(r, c)])));
                sum.row.extend((0..s.input_dim).map(|c| (v + c, fb[(r, c)])));
                sum.row.push((alpha, y_m[r] - d[r]));
                sum.add_constant(d[r]);
                sum.add_component(a_next, 0, -y_m[r]);
                sum.add_map(t.facet_matrix.row(r).iter(), &z_next.clone().scaled(-1.0));
                qp.add_inequality(sum.row, -sum.constant);
            }
        }
    }

    /// Stage vector `p_k` of a stacked solution.
    pub fn stage(&self, params: &DVector<f64>, k: usize) -> DVector<f64> {
        params.rows(k * self.stage_dim, self.stage_dim).into_owned()
    }

    /// Exact `𝓛 = Σ_{k<N} ‖p_k - p*‖²_Q + ‖p_N - p*‖²_R`.
    pub fn tracking_cost_value(&self, params: &DVector<f64>) -> f64 {
        (0..=self.spec.horizon)
            .map(|k| {
                let e = self.stage(params, k) - &self.target;
                let w = if k < self.spec.horizon { &self.spec.cost.q } else { &self.spec.cost.r };
                e.dot(&(w * &e))
            })
            .sum()
    }

    /// The fixed point `p_k = p*` for every stage.
    pub fn fixed_point(&self) -> DVector<f64> {
        let n = self.spec.horizon + 1;
        DVector::from_fn(n * self.stage_dim, |r, _| self.target[r % self.stage_dim])
    }

    fn solution_from(&self, status: TubeStatus, solver_status: Option<SolveStatus>, params: DVector<f64>) -> TubeSolution {
        let mut y = Vec::with_capacity(self.spec.horizon + 1);
        let mut u = Vec::with_capacity(self.spec.horizon + 1);
        for k in 0..=self.spec.horizon {
            let (ym, um) = self.stage_maps(k);
            y.push(ym.eval(&params));
            u.push(um.iter().map(|m| m.eval(&params)).collect());
        }
        let cost = self.tracking_cost_value(&params);
        TubeSolution { status, solver_status, params, y, u, cost }
    }

    /// Solves the tube problem at `x` without touching the warm-start state.
    pub fn solve_tube(&self, x: &DVector<f64>) -> TubeSolution {
        let t = &self.spec.triple;
        if x.len() != t.dim() {
            return TubeSolution::without_solution(TubeStatus::Failed, None);
        }
        let fx = &t.facet_matrix * x;
        if fx.iter().zip(self.spec.rci.y_m.iter()).all(|(a, b)| a <= b) {
            return self.solution_from(TubeStatus::Optimal, None, self.fixed_point());
        }
        // solved in deviations from p*, then in p when that fails
        let mut centered = self.centered.clone();
        for r in 0..fx.len() {
            centered.inequality_rhs[self.initial_row + r] += -fx[r] - self.initial_constant[r];
        }
        let qp = self.program(x);
        let rep = solve_qp_with(&centered, &self.solver);
        let mut status = rep.status;
        if let (SolveStatus::Optimal, Some(d)) = (rep.status, rep.primal) {
            let p = d + self.stacked_target();
            if qp.max_inequality_violation(&p) <= STAGE_TOL {
                return self.solution_from(TubeStatus::Optimal, Some(status), p);
            }
        }
        if status != SolveStatus::Infeasible {
            let rep = solve_qp_with(&qp, &self.solver);
            status = rep.status;
            if let (SolveStatus::Optimal, Some(p)) = (rep.status, rep.primal) {
                if qp.max_inequality_violation(&p) <= STAGE_TOL {
                    return self.solution_from(TubeStatus::Optimal, Some(status), p);
                }
                status = SolveStatus::NumericalFailure;
            }
        }
        match status {
            SolveStatus::Infeasible => TubeSolution::without_solution(TubeStatus::Infeasible, Some(status)),
            st => TubeSolution::without_solution(TubeStatus::Failed, Some(st)),
        }
    }

    /// True iff the tube problem at `x` is feasible.
    pub fn is_feasible(&self, x: &DVector<f64>) -> bool {
        self.solve_tube(x).is_feasible()
    }

    /// Previous solution shifted one stage with the terminal contraction
    /// `p_N ← γ p_N + (1 - γ) p*` appended.
    pub fn shifted(&self, params: &DVector<f64>) -> DVector<f64> {
        let (d, n) = (self.stage_dim, self.spec.horizon);
        let gamma = self.spec.cost.gamma;
        let mut out = DVector::zeros(params.len());
        out.rows_mut(0, n * d).copy_from(&params.rows(d, n * d));
        let last = params.rows(n * d, d) * gamma + &self.target * (1.0 - gamma);
        out.rows_mut(n * d, d).copy_from(&last);
        out
    }

    /// Tube problem with the warm-shift fallback when the solver fails.
    pub fn solve(&mut self, x: &DVector<f64>) -> TubeSolution {
        let mut sol = self.solve_tube(x);
        if sol.status == TubeStatus::Failed {
            if let Some(prev) = &self.previous {
                let cand = self.shifted(prev);
                if self.program(x).max_inequality_violation(&cand) <= STAGE_TOL {
                    sol = self.solution_from(TubeStatus::WarmShift, sol.solver_status, cand);
                }
            }
        }
        self.previous = sol.is_feasible().then(|| sol.params.clone());
        sol
    }

    /// Drops the warm-start state.
    pub fn reset(&mut self) {
        self.previous = None;
    }

    /// `argmin uᵀu` s.t. `u ∈ U` and `F(A_i x + B_i u) + d ≤ y₁` for every model.
    pub fn control_law(&self, x: &DVector<f64>, y1: &DVector<f64>) -> Result<DVector<f64>> {
        let s = &self.constraints;
        let sys = &self.spec.system;
        let t = &self.spec.triple;
        let n_u = s.input_dim;
        let mut qp = QuadraticProgram::new(n_u);
        for c in 0..n_u {
            qp.add_square_penalty(c, 1.0, 0.0);
        }
        let hu = &sys.input_constraints;
        for r in 0..hu.num_facets() {
            qp.add_inequality((0..n_u).map(|c| (c, hu.lhs[(r, c)])).collect(), hu.rhs[r]);
        }
        for i in 0..s.num_models {
            let fax = &t.facet_matrix * (&sys.a[i] * x);
            for r in 0..s.num_facets {
                let row = (0..n_u).map(|c| (c, s.input_gain[i][(r, c)])).collect();
                qp.add_inequality(row, y1[r] - fax[r] - s.offsets[r]);
            }
        }
        let rep = solve_qp(&qp);
        match (rep.status, rep.primal) {
            (SolveStatus::Optimal, Some(u)) => Ok(u),
            (SolveStatus::Infeasible, _) => Err(Error::InfeasibleControlLaw),
            (st, _) => {
                // the successor constraint may pin u to a point; widen it slightly
                let mut relaxed = qp.clone();
                relaxed.inequality_rhs.iter_mut().for_each(|r| *r += 0.5 * STAGE_TOL);
                match solve_qp(&relaxed).primal {
                    Some(u) if qp.max_inequality_violation(&u) <= STAGE_TOL => Ok(u),
                    _ => Err(Error::Solver(st)),
                }
            }
        }
    }

    /// Solves the tube problem and applies the control law to its first successor.
    pub fn step(&mut self, x: &DVector<f64>) -> Result<(TubeSolution, Option<DVector<f64>>)> {
        let sol = self.solve(x);
        if !sol.is_feasible() {
            return Ok((sol, None));
        }
        let u = self.control_law(x, &sol.y[1])?;
        Ok((sol, Some(u)))
    }
}

/// Control law for a homothetic successor `α₁ y_m + F z₁`.
pub fn homothetic_control_law(ctrl: &Controller, x: &DVector<f64>, z1: &DVector<f64>, alpha1: f64) -> Result<DVector<f64>> {
    let spec = ctrl.spec();
    let y1 = &spec.rci.y_m * alpha1 + &spec.triple.facet_matrix * z1;
    ctrl.control_law(x, &y1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::simplex_template;
    use crate::polytope::{ConvexSet, HPolytope, VPolytope};
    use crate::rci::{optimal_rci, RciCost};

    fn scalar() -> (ConfigurationTriple, UncertainSystem) {
        let sys = UncertainSystem::new(
            vec![DMatrix::from_element(1, 1, 0.5)],
            vec![DMatrix::from_element(1, 1, 1.0)],
            ConvexSet::Vertices(VPolytope::new(vec![DVector::from_element(1, -0.1), DVector::from_element(1, 0.1)]).unwrap()),
            HPolytope::from_box(&[-1.0], &[1.0]),
            HPolytope::from_box(&[-1.0], &[1.0]),
        )
        .unwrap();
        (simplex_template(1).unwrap(), sys)
    }

    fn scalar_spec(scheme: Scheme) -> ControllerSpec {
        let (t, sys) = scalar();
        let rci = optimal_rci(&t, &sys, &RciCost::Norm).unwrap();
        let dim = stage_dimension(&scheme, &t, 1, 1).unwrap();
        ControllerSpec { scheme, horizon: 3, triple: t, system: sys, rci, cost: TrackingCost::identity(dim, 0.95).unwrap() }
    }

    #[test]
    fn stability_condition_examples() {
        let g: f64 = 0.95;
        let q = DMatrix::<f64>::identity(3, 3);
        assert!(check_stability_condition(&q, &(&q / (1.0 - g * g)), g));
        assert!(!check_stability_condition(&q, &q, g));
        assert!(check_stability_condition(&(&q * 0.01), &q, 0.5));
    }

    #[test]
    fn cost_validation() {
        let q = DMatrix::<f64>::identity(2, 2);
        assert!(matches!(TrackingCost::new(q.clone(), q.clone(), 0.95), Err(Error::StabilityConditionViolated(_))));
        assert!(TrackingCost::new(q.clone(), q.clone() * 20.0, 1.5).is_err());
        assert!(TrackingCost::new(-&q, q.clone() * 20.0, 0.5).is_err());
    }

    #[test]
    fn scalar_rci_is_minimal_tube() {
        let spec = scalar_spec(Scheme::Full);
        // F = [-1; 1], minimal tube [-0.1, 0.1]
        assert!((spec.rci.y_m - DVector::from_vec(vec![0.1, 0.1])).amax() < 1e-6);
    }

    #[test]
    fn scalar_control_law_cancels() {
        let ctrl = Controller::new(scalar_spec(Scheme::Full)).unwrap();
        let x = DVector::from_element(1, 0.1);
        let u = ctrl.control_law(&x, &ctrl.spec().rci.y_m).unwrap();
        assert!((u[0] + 0.05).abs() < 1e-7, "u = {}", u[0]);
        let u = homothetic_control_law(&ctrl, &x, &DVector::zeros(1), 2.0).unwrap();
        // band doubles to [-0.2, 0.2]: 0.05 + u ± 0.1 stays inside at u = 0
        assert!(u[0].abs() < 1e-7);
    }

    #[test]
    fn fixed_point_has_zero_cost() {
        for scheme in [Scheme::Full, Scheme::Homothetic, Scheme::HomotheticFree] {
            let ctrl = Controller::new(scalar_spec(scheme)).unwrap();
            let sol = ctrl.solve_tube(&DVector::from_element(1, 0.05));
            assert_eq!(sol.status, TubeStatus::Optimal);
            assert_eq!(sol.cost, 0.0);
            let qp = ctrl.program(&DVector::from_element(1, 0.05));
            assert!(qp.max_inequality_violation(&sol.params) <= STAGE_TOL);
        }
    }

    #[test]
    fn solver_objective_matches_recomputed_cost() {
        for scheme in [Scheme::Full, Scheme::Homothetic, Scheme::HomotheticFree] {
            let ctrl = Controller::new(scalar_spec(scheme)).unwrap();
            let x = DVector::from_element(1, 0.9);
            let sol = ctrl.solve_tube(&x);
            assert_eq!(sol.status, TubeStatus::Optimal);
            assert!(sol.cost > 0.0);
            let qp = ctrl.program(&x);
            let constant: f64 = (0..=ctrl.spec().horizon)
                .map(|k| {
                    let w = if k < ctrl.spec().horizon { &ctrl.spec().cost.q } else { &ctrl.spec().cost.r };
                    ctrl.target().dot(&(w * ctrl.target()))
                })
                .sum();
            assert!((qp.objective(&sol.params) + constant - sol.cost).abs() < 1e-8);
        }
    }

    #[test]
    fn one_stage_deviation_costs_one() {
        let ctrl = Controller::new(scalar_spec(Scheme::Full)).unwrap();
        let mut p = ctrl.fixed_point();
        p[0] += 1.0;
        assert!((ctrl.tracking_cost_value(&p) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn far_state_is_infeasible() {
        let ctrl = Controller::new(scalar_spec(Scheme::Full)).unwrap();
        assert_eq!(ctrl.solve_tube(&DVector::from_element(1, 3.0)).status, TubeStatus::Infeasible);
    }

    #[test]
    fn shift_of_feasible_solution_is_feasible() {
        let mut ctrl = Controller::new(scalar_spec(Scheme::Full)).unwrap();
        let x = DVector::from_element(1, 0.9);
        let (sol, u) = ctrl.step(&x).unwrap();
        let u = u.unwrap();
        // worst-case successor stays in P(y₁)
        for w in [-0.1, 0.1] {
            let xn = DVector::from_element(1, 0.5 * x[0] + u[0] + w);
            assert!(ctrl.spec().triple.polytope(&sol.y[1]).contains_point(&xn, 1e-7));
            let cand = ctrl.shifted(&sol.params);
            assert!(ctrl.program(&xn).max_inequality_violation(&cand) <= STAGE_TOL);
            assert!(ctrl.tracking_cost_value(&cand) <= sol.cost + 1e-9);
        }
    }

    #[test]
    fn partial_index_guards() {
        let (t, _) = scalar();
        assert!(matches!(partial_sets(&t, &[]), Err(Error::InvalidIndexSet(_))));
        assert!(matches!(partial_sets(&t, &[0, 1]), Err(Error::InvalidIndexSet(_))));
        assert!(matches!(partial_sets(&t, &[5]), Err(Error::InvalidIndexSet(_))));
        let (j, free) = partial_sets(&t, &[1, 1]).unwrap();
        assert_eq!(j, vec![1]);
        assert_eq!(free.len(), 1);
    }

    #[test]
    fn compiled_sizes_match_formulas() {
        for scheme in [Scheme::Full, Scheme::Homothetic, Scheme::HomotheticFree, Scheme::Partial(vec![0])] {
            let spec = scalar_spec(scheme.clone());
            let expected = problem_size(&scheme, spec.horizon, &spec.triple, &spec.system).unwrap();
            let ctrl = Controller::new(spec).unwrap();
            assert_eq!(ctrl.size(), expected, "{scheme:?}");
        }
    }

    #[test]
    fn assumption_one_detects_offset_origin() {
        let mut rci = scalar_spec(Scheme::Full).rci;
        assert!(check_assumption_one(&rci).is_ok());
        rci.u_m = vec![DVector::from_element(1, 0.2), DVector::from_element(1, 0.4)];
        assert!(matches!(check_assumption_one(&rci), Err(Error::AssumptionViolated(_))));
    }

    #[test]
    fn config_json_round_trip() {
        let text = r#"{"scheme": "partial", "N": 3, "gamma": 0.95, "Q": 1.0, "J_p": [0]}"#;
        let cfg: ControllerConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.scheme().unwrap(), Scheme::Partial(vec![0]));
        let (t, sys) = scalar();
        let rci = optimal_rci(&t, &sys, &RciCost::Norm).unwrap();
        let spec = cfg.spec(t, sys, rci).unwrap();
        assert!((spec.cost.r[(0, 0)] - 1.0 / (1.0 - 0.95 * 0.95)).abs() < 1e-12);
        assert!(serde_json::from_str::<ControllerConfig>(r#"{"scheme": "full", "N": 3, "gamma": 0.9, "x": 1}"#).is_err());
    }
}
