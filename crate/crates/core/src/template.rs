//! Template synthesis: iterative vertex cutting driven by the size program,
//! and the transformation program that turns a fixed polytope shape into an
//! RCI template.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::ExecutionMode;
use crate::polytope::{dedup_points, ConfigurationTriple, HPolytope, VERTEX_DEDUP_TOL};
use crate::qp::{solve_lp, solve_qp_with, QuadraticProgram, SolveStatus, SolverOptions};
use crate::rci::{size_program_with, verify_rci, SizeSolution, TransitionConstraints};
use crate::system::{disturbance_offsets, UncertainSystem};

/// Two size-program values closer than this count as equal (stall detection).
pub const STALL_TOL: f64 = 1e-9;

/// Cut offset factor: midpoint between the best competing vertex and the target.
pub fn choose_kappa(c_j: &DVector<f64>, zeta: f64, others: &[DVector<f64>]) -> Result<f64> {
    let best_other = others.iter().map(|c| c_j.dot(c)).fold(f64::NEG_INFINITY, f64::max);
    if !(zeta > best_other + 1e-12) || zeta <= 0.0 {
        return Err(Error::CannotSeparate { zeta, best_other });
    }
    let kappa = if best_other.is_finite() { (best_other / zeta + 1.0) / 2.0 } else { 0.5 };
    Ok(kappa.clamp(f64::EPSILON, 1.0 - f64::EPSILON))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Number of cuts applied so far.
    pub i: usize,
    /// Size-program value after the cut.
    pub sigma: f64,
    /// Index of the cut vertex in the previous template.
    pub vertex: usize,
    pub kappa: f64,
    pub zeta: f64,
    pub facets: usize,
    pub vertices: usize,
    pub y: Vec<f64>,
    pub stalled: bool,
    /// Candidates skipped because they could not be cut or had no RCI set.
    pub rejected: usize,
    #[serde(skip)]
    pub triple: Option<ConfigurationTriple>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Completed,
    /// No candidate of the last iteration admitted an RCI set.
    AllCutsInfeasible,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RefinementTrace {
    pub initial_sigma: f64,
    pub initial_y: Vec<f64>,
    pub records: Vec<TraceRecord>,
    pub termination: Termination,
}

impl RefinementTrace {
    /// `σ¹, σ², …` including the initial value.
    pub fn sigmas(&self) -> Vec<f64> {
        std::iter::once(self.initial_sigma).chain(self.records.iter().map(|r| r.sigma)).collect()
    }

    /// Template after `i` cuts (`i = 0` is not stored).
    pub fn triple_after(&self, i: usize) -> Option<&ConfigurationTriple> {
        self.records.iter().find(|r| r.i == i).and_then(|r| r.triple.as_ref())
    }
}

#[derive(Clone, Debug)]
pub struct RefineOptions {
    pub mode: ExecutionMode,
    /// Keep every intermediate triple in the trace.
    pub keep_triples: bool,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self { mode: ExecutionMode::default(), keep_triples: true }
    }
}

struct Candidate {
    vertex: usize,
    kappa: f64,
    zeta: f64,
    triple: ConfigurationTriple,
    size: SizeSolution,
}

/// Cuts one vertex per iteration, keeping the cut whose template admits the
/// RCI set closest to the vertices of `X`.
pub fn refine_template(
    t0: &ConfigurationTriple,
    sys: &UncertainSystem,
    i_max: usize,
    opts: &RefineOptions,
) -> Result<(ConfigurationTriple, RefinementTrace)> {
    let x_vertices = sys.state_constraints.vertices()?.vertices;
    let s0 = TransitionConstraints::new(t0, sys)?;
    let size0 = match size_program_with(t0, &s0, &x_vertices) {
        Ok(s) => s,
        Err(Error::InfeasibleTemplate) => return Err(Error::InitialTemplateInfeasible),
        Err(e) => return Err(e),
    };
    let mut trace = RefinementTrace {
        initial_sigma: size0.sigma,
        initial_y: size0.y.iter().copied().collect(),
        records: Vec::with_capacity(i_max),
        termination: Termination::Completed,
    };
    let mut current = t0.clone();
    let mut size = size0;
    for i in 1..=i_max {
        let verts = current.vertices(&size.y);
        let unique = unique_vertex_indices(&verts);
        let results = opts.mode.map(&unique, |&j| evaluate_cut(&current, sys, &size.y, &verts, j, &x_vertices));
        let rejected = results.iter().filter(|r| r.is_none()).count();
        // lowest index wins ties
        let mut best: Option<Candidate> = None;
        for cand in results.into_iter().flatten() {
            let better = match &best {
                None => true,
                Some(b) => cand.size.sigma < b.size.sigma,
            };
            if better {
                best = Some(cand);
            }
        }
        let Some(best) = best else {
            trace.termination = Termination::AllCutsInfeasible;
            break;
        };
        let prev = size.sigma;
        trace.records.push(TraceRecord {
            i,
            sigma: best.size.sigma,
            vertex: best.vertex,
            kappa: best.kappa,
            zeta: best.zeta,
            facets: best.triple.num_facets(),
            vertices: best.triple.num_vertices(),
            y: best.size.y.iter().copied().collect(),
            stalled: (best.size.sigma - prev).abs() <= STALL_TOL,
            rejected,
            triple: opts.keep_triples.then(|| best.triple.clone()),
        });
        current = best.triple;
        size = best.size;
    }
    Ok((current, trace))
}

/// Cuts every vertex of `P(y)` once, with normal `V_j y` and offset `κζ`
/// from [`choose_kappa`] against the vertices present at that cut. Returns
/// the new triple and its offsets.
pub fn truncate_all_vertices(t: &ConfigurationTriple, y: &DVector<f64>) -> Result<(ConfigurationTriple, DVector<f64>)> {
    let original = t.vertices(y);
    let mut current = t.clone();
    let mut offsets = y.clone();
    for (k, c) in original.iter().enumerate() {
        let verts = current.vertices(&offsets);
        let j = verts
            .iter()
            .position(|v| (v - c).norm() <= VERTEX_DEDUP_TOL)
            .ok_or_else(|| Error::InvalidInput(format!("vertex {k} was removed by an earlier cut")))?;
        let others: Vec<DVector<f64>> = verts.iter().enumerate().filter(|&(o, _)| o != j).map(|(_, v)| v.clone()).collect();
        let zeta = c.norm_squared();
        let kappa = choose_kappa(c, zeta, &others)?;
        current = current.truncate_vertex(&offsets, j, c, kappa * zeta)?;
        let len = offsets.len();
        offsets = offsets.insert_row(len, kappa * zeta);
    }
    Ok((current, offsets))
}

/// Lowest index of every cluster of coinciding vertices.
fn unique_vertex_indices(verts: &[DVector<f64>]) -> Vec<usize> {
    let mut keep: Vec<usize> = Vec::new();
    for (j, v) in verts.iter().enumerate() {
        if !keep.iter().any(|&k| (&verts[k] - v).norm() <= VERTEX_DEDUP_TOL) {
            keep.push(j);
        }
    }
    debug_assert_eq!(keep.len(), dedup_points(verts.to_vec(), VERTEX_DEDUP_TOL).len());
    keep
}

fn evaluate_cut(
    t: &ConfigurationTriple,
    sys: &UncertainSystem,
    y: &DVector<f64>,
    verts: &[DVector<f64>],
    j: usize,
    x_vertices: &[DVector<f64>],
) -> Option<Candidate> {
    let c = &verts[j];
    if c.norm() <= VERTEX_DEDUP_TOL {
        return None;
    }
    let zeta = t.polytope(y).support_value(c).ok()?;
    let others: Vec<DVector<f64>> = verts
        .iter()
        .enumerate()
        .filter(|&(k, v)| k != j && (v - c).norm() > VERTEX_DEDUP_TOL)
        .map(|(_, v)| v.clone())
        .collect();
    let kappa = choose_kappa(c, zeta, &others).ok()?;
    let triple = t.truncate_combinatorial(j, c).ok()?;
    let s = TransitionConstraints::new(&triple, sys).ok()?;
    let size = size_program_with(&triple, &s, x_vertices).ok()?;
    Some(Candidate { vertex: j, kappa, zeta, triple, size })
}

/// Rows `Λ hˣ ≤ 1 + ε`, `Λ Hˣ = G`, `Λ ≥ 0` over `(Λ, ε)` for a fixed `G`,
/// with `Λ` stored row-major at `lambda_start` and `ε` at `eps_start`.
pub fn inclusion_dual_constraints(
    qp: &mut QuadraticProgram,
    g: &DMatrix<f64>,
    x: &HPolytope,
    lambda_start: usize,
    eps_start: usize,
) {
    let f = g.nrows();
    let mx = x.num_facets();
    for r in 0..f {
        let mut row: Vec<(usize, f64)> = (0..mx).map(|l| (lambda_start + r * mx + l, x.rhs[l])).collect();
        row.push((eps_start + r, -1.0));
        qp.add_inequality(row, 1.0);
        for c in 0..x.dim() {
            let row: Vec<(usize, f64)> = (0..mx)
                .filter(|&l| x.lhs[(l, c)] != 0.0)
                .map(|l| (lambda_start + r * mx + l, x.lhs[(l, c)]))
                .collect();
            qp.add_equality(row, g[(r, c)]);
        }
        for l in 0..mx {
            qp.add_inequality(vec![(lambda_start + r * mx + l, -1.0)], 0.0);
        }
    }
}

#[derive(Clone, Debug)]
pub struct NlpOptions {
    pub max_iter: usize,
    /// Stop once the accepted step satisfies `‖ΔT‖_F ≤ step_tol`.
    pub step_tol: f64,
    /// Elastic penalty on vertex violations while optimizing `ε`.
    pub penalty: f64,
    /// Margin required from the final input LP.
    pub margin: f64,
    /// Violation margin targeted by the linearized models.
    pub restore_margin: f64,
    /// Number of starting transformations tried in order.
    pub restarts: usize,
    pub seed: u64,
    pub mode: ExecutionMode,
}

impl Default for NlpOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            step_tol: 1e-8,
            penalty: 1e4,
            margin: 1e-9,
            restore_margin: 1e-4,
            restarts: 8,
            seed: 0,
            mode: ExecutionMode::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct NlpResult {
    pub t: DMatrix<f64>,
    pub u: Vec<DVector<f64>>,
    pub epsilon: DVector<f64>,
    pub lambda: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Largest invariance violation at the returned `(T, u)`.
    pub max_violation: f64,
    /// Template `(F T⁻¹, E, T V_j)`.
    pub triple: ConfigurationTriple,
}

/// Exact quantities of the transformation program at a given `T`.
struct Evaluation {
    p: DMatrix<f64>,
    eps: DVector<f64>,
    /// Per-vertex invariance violation for the inputs used.
    viol: Vec<f64>,
    /// Per-vertex violation of `T z_j ∈ X`.
    state_viol: Vec<f64>,
}

impl Evaluation {
    fn merit(&self, w: ModelWeights) -> f64 {
        let trans: f64 = self.viol.iter().map(|v| (v + w.shift).max(0.0)).sum();
        let state: f64 = self.state_viol.iter().map(|v| v.max(0.0)).sum();
        w.eps * self.eps.norm_squared() + w.penalty * (trans + state)
    }

    fn max_violation(&self) -> f64 {
        self.viol.iter().chain(&self.state_viol).copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Objective weights of one SCP phase: `eps·εᵀε + penalty·Σ_j max(viol_j + shift, 0)`.
#[derive(Clone, Copy, Debug)]
struct ModelWeights {
    eps: f64,
    penalty: f64,
    shift: f64,
}

struct NlpProblem<'a> {
    t0: &'a ConfigurationTriple,
    sys: &'a UncertainSystem,
    /// Vertices `V_j 1` of the reference shape.
    z: Vec<DVector<f64>>,
}

impl<'a> NlpProblem<'a> {
    fn n(&self) -> usize {
        self.sys.state_dim()
    }

    fn evaluate(&self, t: &DMatrix<f64>, u: &[DVector<f64>]) -> Option<Evaluation> {
        let p = t.clone().try_inverse()?;
        let g = &self.t0.facet_matrix * &p;
        let x = &self.sys.state_constraints;
        let mut eps = DVector::zeros(g.nrows());
        for r in 0..g.nrows() {
            let sup = x.support_value(&g.row(r).transpose()).ok()?;
            eps[r] = (sup - 1.0).max(0.0);
        }
        let d = disturbance_offsets(&g, self.sys).ok()?;
        let mut viol = Vec::with_capacity(self.z.len());
        let mut state_viol = Vec::with_capacity(self.z.len());
        for (z, uj) in self.z.iter().zip(u) {
            let xj = t * z;
            state_viol.push((&x.lhs * &xj - &x.rhs).max());
            let mut worst = f64::NEG_INFINITY;
            for (a, b) in self.sys.a.iter().zip(&self.sys.b) {
                let succ = &g * (a * &xj + b * uj) + &d;
                worst = worst.max(succ.max() - 1.0);
            }
            viol.push(worst);
        }
        Some(Evaluation { p, eps, viol, state_viol })
    }

    /// Best vertex inputs for a fixed `T`: per vertex, minimize the largest
    /// transition row minus one over `U`.
    fn best_inputs(&self, t: &DMatrix<f64>, mode: ExecutionMode) -> Option<(Vec<DVector<f64>>, f64)> {
        let p = t.clone().try_inverse()?;
        let g = &self.t0.facet_matrix * &p;
        let d = disturbance_offsets(&g, self.sys).ok()?;
        let nu = self.sys.input_dim();
        let ucon = &self.sys.input_constraints;
        let results = mode.map(&self.z, |z| {
            let xj = t * z;
            let mut qp = QuadraticProgram::new(nu + 1);
            for (a, b) in self.sys.a.iter().zip(&self.sys.b) {
                let gax = &g * (a * &xj) + &d;
                let gb = &g * b;
                for r in 0..g.nrows() {
                    let mut row: Vec<(usize, f64)> = (0..nu).map(|c| (c, gb[(r, c)])).collect();
                    row.push((nu, -1.0));
                    qp.add_inequality(row, 1.0 - gax[r]);
                }
            }
            for r in 0..ucon.num_facets() {
                qp.add_inequality((0..nu).map(|c| (c, ucon.lhs[(r, c)])).collect(), ucon.rhs[r]);
            }
            qp.add_inequality(vec![(nu, -1.0)], 1.0);
            let mut cost = DVector::zeros(nu + 1);
            cost[nu] = 1.0;
            let rep = solve_lp(&cost, &qp);
            let x = rep.primal.filter(|_| rep.status == SolveStatus::Optimal)?;
            Some((x.rows(0, nu).into_owned(), x[nu]))
        });
        let mut u = Vec::with_capacity(results.len());
        let mut worst = f64::NEG_INFINITY;
        for r in results {
            let (uj, tj) = r?;
            u.push(uj);
            worst = worst.max(tj);
        }
        Some((u, worst))
    }

    /// Linearized subproblem at `(T, u)`; returns `(ΔT, u, ε, Λ, model value)`.
    #[allow(clippy::type_complexity)]
    fn subproblem(
        &self,
        t: &DMatrix<f64>,
        p: &DMatrix<f64>,
        u0: &[DVector<f64>],
        radius: f64,
        weights: ModelWeights,
    ) -> Option<(DMatrix<f64>, Vec<DVector<f64>>, DVector<f64>, DMatrix<f64>, f64)> {
        let ModelWeights { eps: eps_weight, penalty: mu, shift } = weights;
        let n = self.n();
        let nu = self.sys.input_dim();
        let f = self.t0.num_facets();
        let v = self.z.len();
        let m = self.sys.num_models();
        let x = &self.sys.state_constraints;
        let ucon = &self.sys.input_constraints;
        let mx = x.num_facets();
        let wv = &self.sys.disturbance_vertices().vertices;
        let fp = &self.t0.facet_matrix * p;

        // variable layout
        let delta = 0;
        let u_start = n * n;
        let eps_start = u_start + v * nu;
        let lam_start = eps_start + f;
        let d_start = lam_start + f * mx;
        let s_start = d_start + f;
        let q_start = s_start + v;
        let p_start = q_start + v * n;
        let e_start = p_start + m * v * n;
        let nvar = e_start + wv.len() * n;
        let mut qp = QuadraticProgram::new(nvar);

        // aux = Δ·vec
        let delta_product = |qp: &mut QuadraticProgram, aux: usize, vec: &DVector<f64>| {
            for a in 0..n {
                let mut row: Vec<(usize, f64)> =
                    (0..n).filter(|&b| vec[b] != 0.0).map(|b| (delta + a * n + b, -vec[b])).collect();
                row.push((aux + a, 1.0));
                qp.add_equality(row, 0.0);
            }
        };
        for (j, z) in self.z.iter().enumerate() {
            delta_product(&mut qp, q_start + j * n, z);
        }
        for i in 0..m {
            for (j, z) in self.z.iter().enumerate() {
                let s = p * (&self.sys.a[i] * (t * z) + &self.sys.b[i] * &u0[j]);
                delta_product(&mut qp, p_start + (i * v + j) * n, &s);
            }
        }
        for (k, w) in wv.iter().enumerate() {
            delta_product(&mut qp, e_start + k * n, &(p * w));
        }

        // d_r ≥ F_r P0 w_k - F_r P0 e_k
        for (k, w) in wv.iter().enumerate() {
            let c = &fp * w;
            for r in 0..f {
                let mut row: Vec<(usize, f64)> = (0..n).map(|a| (e_start + k * n + a, -fp[(r, a)])).collect();
                row.push((d_start + r, -1.0));
                qp.add_inequality(row, -c[r]);
            }
        }
        // transitions with elastic slack per vertex
        for i in 0..m {
            let fpa = &fp * &self.sys.a[i];
            let fpb = &fp * &self.sys.b[i];
            for (j, z) in self.z.iter().enumerate() {
                let base = &fpa * (t * z);
                for r in 0..f {
                    let mut row: Vec<(usize, f64)> = Vec::with_capacity(2 * n + nu + 2);
                    row.extend((0..n).map(|a| (q_start + j * n + a, fpa[(r, a)])));
                    row.extend((0..n).map(|a| (p_start + (i * v + j) * n + a, -fp[(r, a)])));
                    row.extend((0..nu).map(|c| (u_start + j * nu + c, fpb[(r, c)])));
                    row.push((d_start + r, 1.0));
                    row.push((s_start + j, -1.0));
                    qp.add_inequality(row, 1.0 - shift - base[r]);
                }
            }
        }
        // vertices in X, inputs in U
        for (j, z) in self.z.iter().enumerate() {
            let hz = &x.lhs * (t * z);
            for l in 0..mx {
                let row: Vec<(usize, f64)> = (0..n).map(|a| (q_start + j * n + a, x.lhs[(l, a)])).collect();
                qp.add_inequality(row, x.rhs[l] - hz[l]);
            }
            for l in 0..ucon.num_facets() {
                let row: Vec<(usize, f64)> = (0..nu).map(|c| (u_start + j * nu + c, ucon.lhs[(l, c)])).collect();
                qp.add_inequality(row, ucon.rhs[l]);
            }
            qp.add_inequality(vec![(s_start + j, -1.0)], 0.0);
        }
        // inclusion X ⊆ {F T⁻¹ x ≤ 1 + ε} with F T⁻¹ ≈ F P0 - F P0 Δ P0
        for r in 0..f {
            let mut row: Vec<(usize, f64)> = (0..mx).map(|l| (lam_start + r * mx + l, x.rhs[l])).collect();
            row.push((eps_start + r, -1.0));
            qp.add_inequality(row, 1.0);
            for c in 0..n {
                let mut row: Vec<(usize, f64)> = (0..mx)
                    .filter(|&l| x.lhs[(l, c)] != 0.0)
                    .map(|l| (lam_start + r * mx + l, x.lhs[(l, c)]))
                    .collect();
                for a in 0..n {
                    for b in 0..n {
                        let coef = fp[(r, a)] * p[(b, c)];
                        if coef != 0.0 {
                            row.push((delta + a * n + b, coef));
                        }
                    }
                }
                qp.add_equality(row, fp[(r, c)]);
            }
            for l in 0..mx {
                qp.add_inequality(vec![(lam_start + r * mx + l, -1.0)], 0.0);
            }
        }
        // trust region
        let box_r = radius / n as f64;
        for k in 0..n * n {
            qp.add_inequality(vec![(delta + k, 1.0)], box_r);
            qp.add_inequality(vec![(delta + k, -1.0)], box_r);
        }
        for r in 0..f {
            qp.add_square_penalty(eps_start + r, eps_weight, 0.0);
        }
        for j in 0..v {
            qp.objective_vector[s_start + j] += mu;
        }
        let started = std::time::Instant::now();
        let rep = solve_qp_with(&qp, &SolverOptions { gap_tol: 1e-12, ..SolverOptions::default() });
        log::debug!("subproblem {}×{}: {:?} after {} iterations in {:?}", qp.num_inequalities() + qp.num_equalities(), nvar, rep.status, rep.iterations, started.elapsed());
        if rep.status != SolveStatus::Optimal {
            return None;
        }
        let sol = rep.primal?;
        let dt = DMatrix::from_fn(n, n, |a, b| sol[delta + a * n + b]);
        let u = (0..v).map(|j| sol.rows(u_start + j * nu, nu).into_owned()).collect();
        let eps = sol.rows(eps_start, f).into_owned();
        let lam = DMatrix::from_fn(f, mx, |r, l| sol[lam_start + r * mx + l]);
        let model = eps_weight * eps.norm_squared() + mu * (0..v).map(|j| sol[s_start + j].max(0.0)).sum::<f64>();
        Some((dt, u, eps, lam, model))
    }
}

/// Largest `β` with every vertex of `β·{F x ≤ 1}` inside `X`.
fn initial_scale(z: &[DVector<f64>], x: &HPolytope) -> f64 {
    let mut beta = f64::INFINITY;
    for zj in z {
        let hz = &x.lhs * zj;
        for l in 0..x.num_facets() {
            if hz[l] > 1e-12 {
                beta = beta.min(x.rhs[l] / hz[l]);
            }
        }
    }
    if beta.is_finite() {
        beta
    } else {
        1.0
    }
}

/// Iterate of the transformation program.
struct Iterate {
    t: DMatrix<f64>,
    u: Vec<DVector<f64>>,
    eval: Evaluation,
    lam: DMatrix<f64>,
}

enum Phase {
    /// Drive every vertex violation below `-margin`.
    Restore,
    /// Minimize `εᵀε` while keeping the true violation nonpositive.
    Optimize,
}

/// Trust-region SCP loop; returns whether the phase goal was reached.
fn scp(prob: &NlpProblem, it: &mut Iterate, phase: Phase, opts: &NlpOptions, iterations: &mut usize) -> bool {
    let n = prob.n();
    let w = match phase {
        Phase::Restore => ModelWeights { eps: 1e-6, penalty: 1.0, shift: opts.restore_margin },
        Phase::Optimize => ModelWeights { eps: 1.0, penalty: opts.penalty, shift: opts.restore_margin },
    };
    let radius0 = 0.5 * it.t.norm();
    let mut radius = radius0;
    for _ in 0..opts.max_iter {
        *iterations += 1;
        let merit = it.eval.merit(w);
        let restored = it.eval.viol.iter().all(|&v| v <= -w.shift) && it.eval.state_viol.iter().all(|&v| v <= 0.0);
        if matches!(phase, Phase::Restore) && restored {
            return true;
        }
        let Some((dt, u_new, _, lam_new, model)) = prob.subproblem(&it.t, &it.eval.p, &it.u, radius, w) else {
            radius *= 0.5;
            if radius < 1e-6 * radius0 {
                return false;
            }
            continue;
        };
        let step = dt.norm();
        let predicted = merit - model;
        let candidate = &it.t + &dt;
        let mut accepted = false;
        if well_conditioned(&candidate) {
            if let Some(e) = prob.evaluate(&candidate, &u_new) {
                let keeps_feasible = matches!(phase, Phase::Restore) || e.max_violation() <= 0.0;
                let actual = merit - e.merit(w);
                log::trace!("candidate actual {actual:.4e} predicted {predicted:.4e} eps2 {:.4e} viol {:.4e} sv {:.4e}", e.eps.norm_squared(), e.max_violation(), e.state_viol.iter().copied().fold(f64::NEG_INFINITY, f64::max));
                if keeps_feasible && predicted > 0.0 && actual >= 0.1 * predicted {
                    if actual >= 0.75 * predicted && step >= 0.9 * radius / n as f64 {
                        radius = (2.0 * radius).min(10.0 * radius0);
                    }
                    *it = Iterate { t: candidate, u: u_new, eval: e, lam: lam_new };
                    accepted = true;
                }
            }
        }
        if !accepted {
            radius *= 0.5;
        }
        log::debug!(
            "nlp it {iterations}: merit {merit:.3e} model {model:.3e} step {step:.2e} radius {radius:.2e} accepted {accepted} viol {:.2e} eps {:.3e}",
            it.eval.max_violation(),
            it.eval.eps.norm_squared()
        );
        let stationary = predicted <= 1e-9 * (1.0 + merit) || step <= opts.step_tol || radius < 1e-6 * radius0;
        if stationary {
            match phase {
                Phase::Optimize => return true,
                Phase::Restore => return it.eval.max_violation() <= 0.0,
            }
        }
    }
    matches!(phase, Phase::Optimize)
}

/// Singular-value ratio of `T` above `1e-10`.
fn well_conditioned(t: &DMatrix<f64>) -> bool {
    let sv = t.singular_values();
    sv.min() > 1e-10 * sv.max()
}

/// Deterministic starting transformations: `β·I`, then `β·Q_k` for random
/// orthogonal `Q_k`, each at full and half scale.
fn starting_points(n: usize, beta: f64, count: usize, seed: u64) -> Vec<DMatrix<f64>> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![DMatrix::identity(n, n) * beta];
    while out.len() < count {
        let g = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
        let q = g.qr().q();
        out.push(&q * beta);
        if out.len() < count {
            out.push(&q * (0.5 * beta));
        }
    }
    out
}

/// Sequential convex programming for `min εᵀε` over transformations `T`
/// making `{F T⁻¹ x ≤ 1}` an RCI polytope inside `X` with
/// `X ⊆ {F T⁻¹ x ≤ 1 + ε}`.
///
/// Each start first restores feasibility, then optimizes `ε` over feasible
/// iterates. `t0` must describe `{F x ≤ 1}`: its vertices are taken as `V_j 1`.
pub fn initial_template_nlp(t0: &ConfigurationTriple, sys: &UncertainSystem, opts: &NlpOptions) -> Result<NlpResult> {
    let n = sys.state_dim();
    if t0.dim() != n {
        return Err(Error::DimensionMismatch("template and system dimensions differ".into()));
    }
    let ones = DVector::from_element(t0.num_facets(), 1.0);
    if !t0.in_cone(&ones, 1e-9) {
        return Err(Error::InvalidInput("{F x ≤ 1} is not in the configuration cone".into()));
    }
    let prob = NlpProblem { t0, sys, z: t0.vertices(&ones) };
    let x = &sys.state_constraints;
    let beta = initial_scale(&prob.z, x);
    let mut iterations = 0;
    let mut best: Option<(Iterate, bool)> = None;
    for t in starting_points(n, beta, opts.restarts.max(1), opts.seed) {
        let Some((u, _)) = prob.best_inputs(&t, opts.mode) else { continue };
        let Some(eval) = prob.evaluate(&t, &u) else { continue };
        let lam = DMatrix::zeros(t0.num_facets(), x.num_facets());
        let mut it = Iterate { t, u, eval, lam };
        let restored = scp(&prob, &mut it, Phase::Restore, opts, &mut iterations);
        let done = restored && scp(&prob, &mut it, Phase::Optimize, opts, &mut iterations);
        let better = match &best {
            None => true,
            Some((b, _)) => it.eval.max_violation() < b.eval.max_violation(),
        };
        if done {
            best = Some((it, true));
            break;
        }
        if better {
            best = Some((it, false));
        }
    }
    let (mut it, converged) = best.ok_or(Error::Solver(SolveStatus::NumericalFailure))?;
    // re-optimize inputs with a margin so the template certifies as RCI
    if let Some((u_best, worst)) = prob.best_inputs(&it.t, opts.mode) {
        if worst <= -opts.margin || worst < it.eval.max_violation() {
            it.u = u_best;
        }
    }
    let eval = prob.evaluate(&it.t, &it.u).ok_or(Error::SingularT)?;
    if !well_conditioned(&it.t) {
        return Err(Error::SingularT);
    }
    let triple = t0.transformed(&it.t)?;
    let certified = verify_rci(&triple, sys, &ones, &it.u);
    Ok(NlpResult {
        t: it.t,
        u: it.u,
        epsilon: eval.eps.clone(),
        lambda: it.lam,
        converged: converged && certified,
        iterations,
        max_violation: eval.max_violation(),
        triple,
    })
}
