//! Convex quadratic and linear programs with linear constraints.
//!
//! Every optimization in the crate is expressed as a [`QuadraticProgram`] and
//! solved through [`solve_qp`] / [`solve_lp`]. The backend is the Clarabel
//! interior-point solver; results are post-checked against the residual
//! tolerances in [`SolverOptions`] and, for small problems, polished on the
//! detected active set so that returned points satisfy constraints tightly.
//! Infeasibility verdicts are only returned together with a verified Farkas
//! certificate.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus, SupportedConeT,
    ZeroConeT,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::sparse::SparseMatrix;

/// `min ½xᵀPx + qᵀx  s.t.  A x ≤ b,  C x = d`.
#[derive(Clone, Debug)]
pub struct QuadraticProgram {
    pub objective_matrix: SparseMatrix,
    pub objective_vector: DVector<f64>,
    pub inequality_lhs: SparseMatrix,
    pub inequality_rhs: Vec<f64>,
    pub equality_lhs: SparseMatrix,
    pub equality_rhs: Vec<f64>,
}

impl QuadraticProgram {
    /// Program with `n` variables, zero objective and no constraints.
    pub fn new(n: usize) -> Self {
        Self {
            objective_matrix: SparseMatrix::zeros(n, n),
            objective_vector: DVector::zeros(n),
            inequality_lhs: SparseMatrix::new(n),
            inequality_rhs: Vec::new(),
            equality_lhs: SparseMatrix::new(n),
            equality_rhs: Vec::new(),
        }
    }

    pub fn num_variables(&self) -> usize {
        self.objective_vector.len()
    }

    pub fn num_inequalities(&self) -> usize {
        self.inequality_rhs.len()
    }

    pub fn num_equalities(&self) -> usize {
        self.equality_rhs.len()
    }

    /// Adds `row · x ≤ rhs`.
    pub fn add_inequality(&mut self, row: Vec<(usize, f64)>, rhs: f64) {
        self.inequality_lhs.push_row(row);
        self.inequality_rhs.push(rhs);
    }

    /// Adds `row · x = rhs`.
    pub fn add_equality(&mut self, row: Vec<(usize, f64)>, rhs: f64) {
        self.equality_lhs.push_row(row);
        self.equality_rhs.push(rhs);
    }

    /// Adds `w · (x_col - target)²` to the objective.
    pub fn add_square_penalty(&mut self, col: usize, weight: f64, target: f64) {
        self.add_hessian_entry(col, col, 2.0 * weight);
        self.objective_vector[col] -= 2.0 * weight * target;
    }

    /// Adds `(x_c - t)ᵀ W (x_c - t)` for the distinct columns `c`, using the
    /// symmetric part of `W`.
    pub fn add_weighted_square(&mut self, cols: &[usize], w: &DMatrix<f64>, target: &DVector<f64>) {
        let k = cols.len();
        assert_eq!(w.shape(), (k, k));
        assert_eq!(target.len(), k);
        for a in 0..k {
            for b in a..k {
                let h = w[(a, b)] + w[(b, a)];
                if h != 0.0 {
                    self.add_hessian_entry(cols[a], cols[b], h);
                }
            }
        }
        let g = (w + w.transpose()) * target;
        for a in 0..k {
            self.objective_vector[cols[a]] -= g[a];
        }
    }

    /// Adds `h` to both `P[r,c]` and `P[c,r]` (once when `r == c`).
    pub fn add_hessian_entry(&mut self, r: usize, c: usize, h: f64) {
        self.objective_matrix.add_entry(r, c, h);
        if r != c {
            self.objective_matrix.add_entry(c, r, h);
        }
    }

    /// Replaces the objective with `½xᵀPx + qᵀx`.
    pub fn set_objective(&mut self, p: SparseMatrix, q: DVector<f64>) {
        assert_eq!(p.nrows(), q.len());
        assert_eq!(p.ncols(), q.len());
        self.objective_matrix = p;
        self.objective_vector = q;
    }

    /// The same program in `δ = x - x0`; objective values differ by a constant.
    pub fn translated(&self, x0: &DVector<f64>) -> QuadraticProgram {
        let mut out = self.clone();
        out.objective_vector += self.objective_matrix.mul_vec(x0);
        let ax = self.inequality_lhs.mul_vec(x0);
        for (b, a) in out.inequality_rhs.iter_mut().zip(ax.iter()) {
            *b -= a;
        }
        let cx = self.equality_lhs.mul_vec(x0);
        for (d, c) in out.equality_rhs.iter_mut().zip(cx.iter()) {
            *d -= c;
        }
        out
    }

    /// Objective value `½xᵀPx + qᵀx`.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&self.objective_matrix.mul_vec(x)) + self.objective_vector.dot(x)
    }

    /// Largest positive violation of `A x ≤ b` (0 when feasible).
    pub fn max_inequality_violation(&self, x: &DVector<f64>) -> f64 {
        let ax = self.inequality_lhs.mul_vec(x);
        ax.iter()
            .zip(self.inequality_rhs.iter())
            .map(|(a, b)| a - b)
            .fold(0.0, f64::max)
    }

    pub fn max_equality_residual(&self, x: &DVector<f64>) -> f64 {
        let cx = self.equality_lhs.mul_vec(x);
        cx.iter().zip(self.equality_rhs.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// `‖Px + q + Aᵀλ + Cᵀν‖∞`.
    pub fn stationarity_residual(&self, x: &DVector<f64>, duals: &Duals) -> f64 {
        let g = self.objective_matrix.mul_vec(x)
            + &self.objective_vector
            + self.inequality_lhs.tr_mul_vec(&duals.inequality)
            + self.equality_lhs.tr_mul_vec(&duals.equality);
        g.amax()
    }

    fn validate(&self) -> Result<(), String> {
        let n = self.num_variables();
        let p = &self.objective_matrix;
        if p.nrows() != n || p.ncols() != n {
            return Err(format!("objective matrix is {}x{}, expected {n}x{n}", p.nrows(), p.ncols()));
        }
        if self.inequality_lhs.ncols() != n || self.inequality_lhs.nrows() != self.inequality_rhs.len() {
            return Err("inequality block dimensions are inconsistent".into());
        }
        if self.equality_lhs.ncols() != n || self.equality_lhs.nrows() != self.equality_rhs.len() {
            return Err("equality block dimensions are inconsistent".into());
        }
        let dense_ok = n <= 400;
        if dense_ok {
            let d = p.to_dense();
            if (&d - d.transpose()).amax() > 1e-12 {
                return Err("objective matrix is not symmetric".into());
            }
        }
        Ok(())
    }
}

/// Outcome class of a solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

/// Lagrange multipliers, `inequality ≥ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Duals {
    pub inequality: DVector<f64>,
    pub equality: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub primal: Option<DVector<f64>>,
    pub dual: Option<Duals>,
    pub objective_value: Option<f64>,
    pub iterations: u32,
}

impl SolveReport {
    fn failed(status: SolveStatus, iterations: u32) -> Self {
        Self { status, primal: None, dual: None, objective_value: None, iterations }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    /// Absolute primal/dual feasibility tolerance of the backend.
    pub feasibility_tol: f64,
    /// Absolute and relative duality-gap tolerance of the backend.
    pub gap_tol: f64,
    /// Interior-point iteration cap.
    pub max_iter: u32,
    /// Residual bounds an `Optimal` answer must meet after polishing.
    pub accept_violation: f64,
    pub accept_stationarity: f64,
    /// Polish on the active set when `n + |active|` is at most this size.
    pub polish_max_dim: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-9,
            gap_tol: 1e-9,
            max_iter: 200,
            accept_violation: 1e-7,
            accept_stationarity: 1e-7,
            polish_max_dim: 700,
        }
    }
}

/// Solves a convex QP with default options.
pub fn solve_qp(p: &QuadraticProgram) -> SolveReport {
    solve_qp_with(p, &SolverOptions::default())
}

/// Solves `min costᵀx` subject to the constraints of `p` (its objective is ignored).
pub fn solve_lp(cost: &DVector<f64>, p: &QuadraticProgram) -> SolveReport {
    let mut lp = p.clone();
    lp.objective_matrix = SparseMatrix::zeros(cost.len(), cost.len());
    lp.objective_vector = cost.clone();
    solve_qp_with(&lp, &SolverOptions::default())
}

pub fn solve_qp_with(p: &QuadraticProgram, opts: &SolverOptions) -> SolveReport {
    if let Err(msg) = p.validate() {
        panic!("malformed quadratic program: {msg}");
    }
    let n = p.num_variables();
    let n_eq = p.num_equalities();
    let n_in = p.num_inequalities();

    let (colptr, rowval, nzval) = p.objective_matrix.to_csc_parts(true);
    let pm = CscMatrix::new(n, n, colptr, rowval, nzval);

    let mut stacked = SparseMatrix::new(n);
    stacked.append(&p.equality_lhs, 0);
    stacked.append(&p.inequality_lhs, 0);
    let (colptr, rowval, nzval) = stacked.to_csc_parts(false);
    let am = CscMatrix::new(n_eq + n_in, n, colptr, rowval, nzval);
    let b: Vec<f64> = p.equality_rhs.iter().chain(p.inequality_rhs.iter()).copied().collect();

    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    if n_eq > 0 {
        cones.push(ZeroConeT(n_eq));
    }
    if n_in > 0 {
        cones.push(NonnegativeConeT(n_in));
    }

    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(opts.max_iter)
        .tol_feas(opts.feasibility_tol)
        .tol_gap_abs(opts.gap_tol)
        .tol_gap_rel(opts.gap_tol)
        .tol_infeas_abs(1e-9)
        .tol_infeas_rel(1e-9)
        .presolve_enable(false)
        .build()
        .expect("valid solver settings");

    let mut solver = match DefaultSolver::new(&pm, p.objective_vector.as_slice(), &am, &b, &cones, settings) {
        Ok(s) => s,
        Err(_) => return SolveReport::failed(SolveStatus::NumericalFailure, 0),
    };
    solver.solve();
    let sol = &solver.solution;
    let iterations = sol.iterations;

    match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved | SolverStatus::MaxIterations
        | SolverStatus::InsufficientProgress => {
            let x = DVector::from_column_slice(&sol.x);
            let z = &sol.z;
            let duals = Duals {
                equality: DVector::from_column_slice(&z[..n_eq]),
                inequality: DVector::from_iterator(n_in, z[n_eq..].iter().map(|v| v.max(0.0))),
            };
            let slack_hint: Vec<f64> = sol.s[n_eq..].to_vec();
            finish_optimal(p, opts, x, duals, &slack_hint, iterations)
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            if farkas_certificate_holds(p, &sol.z, n_eq) {
                SolveReport::failed(SolveStatus::Infeasible, iterations)
            } else {
                SolveReport::failed(SolveStatus::NumericalFailure, iterations)
            }
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            SolveReport::failed(SolveStatus::Unbounded, iterations)
        }
        _ => SolveReport::failed(SolveStatus::NumericalFailure, iterations),
    }
}

fn finish_optimal(
    p: &QuadraticProgram,
    opts: &SolverOptions,
    x: DVector<f64>,
    duals: Duals,
    slack: &[f64],
    iterations: u32,
) -> SolveReport {
    let mut best_x = x;
    let mut best_duals = duals;
    let quality = |x: &DVector<f64>, d: &Duals| {
        (p.max_inequality_violation(x), p.max_equality_residual(x), p.stationarity_residual(x, d))
    };
    let (mut viol, mut eq_res, mut stat) = quality(&best_x, &best_duals);

    {
        let (x0, d0) = (best_x.clone(), best_duals.clone());
        // near-degenerate optima leave slacks and multipliers of similar size,
        // so several activity thresholds are tried
        for tau in [1e-9, 1e-7, 1e-5, 1e-3] {
            let Some((px, pd)) = polish(p, &x0, &d0, slack, tau, opts.polish_max_dim) else { continue };
            let (v2, e2, s2) = quality(&px, &pd);
            let obj_ok = p.objective(&px) <= p.objective(&best_x) + 1e-9 * (1.0 + p.objective(&best_x).abs());
            if v2.max(e2) <= viol.max(eq_res).max(1e-10) && s2 <= stat.max(1e-9) && obj_ok {
                best_x = px;
                best_duals = pd;
                viol = v2;
                eq_res = e2;
                stat = s2;
            }
        }
    }

    let scale = 1.0 + best_x.amax();
    let accepted = viol <= opts.accept_violation * scale
        && eq_res <= opts.accept_violation * 0.1 * scale
        && stat <= opts.accept_stationarity * (1.0 + p.objective_vector.amax()) * scale;
    if !accepted {
        return SolveReport::failed(SolveStatus::NumericalFailure, iterations);
    }
    let obj = p.objective(&best_x);
    SolveReport {
        status: SolveStatus::Optimal,
        primal: Some(best_x),
        dual: Some(best_duals),
        objective_value: Some(obj),
        iterations,
    }
}

/// Checks `y ≥ 0` on inequality rows, `‖Aᵀy‖` small and `bᵀy < 0` for the
/// stacked certificate `y = (y_eq, y_in)`.
fn farkas_certificate_holds(p: &QuadraticProgram, z: &[f64], n_eq: usize) -> bool {
    let y_eq = DVector::from_column_slice(&z[..n_eq]);
    let y_in = DVector::from_iterator(z.len() - n_eq, z[n_eq..].iter().map(|v| v.max(0.0)));
    let norm = y_eq.amax().max(y_in.amax());
    if norm <= 0.0 {
        return false;
    }
    let y_eq = y_eq / norm;
    let y_in = y_in / norm;
    let aty = p.equality_lhs.tr_mul_vec(&y_eq) + p.inequality_lhs.tr_mul_vec(&y_in);
    let bty = DVector::from_column_slice(&p.equality_rhs).dot(&y_eq)
        + DVector::from_column_slice(&p.inequality_rhs).dot(&y_in);
    let row_scale = 1.0 + p.inequality_rhs.iter().chain(&p.equality_rhs).fold(0.0f64, |m, v| m.max(v.abs()));
    bty < -1e-9 && aty.amax() <= 1e-6 * row_scale.max(bty.abs())
}

/// Solves the equality-constrained QP on the active set guessed from the
/// interior-point iterate, then recovers duals. Returns `None` when the
/// problem is too large for the dense KKT or the guess is inconsistent.
fn polish(
    p: &QuadraticProgram,
    x: &DVector<f64>,
    duals: &Duals,
    slack: &[f64],
    tau: f64,
    max_dim: usize,
) -> Option<(DVector<f64>, Duals)> {
    let n = p.num_variables();
    let active: Vec<usize> = (0..p.num_inequalities())
        .filter(|&i| duals.inequality[i] > slack[i].max(0.0) || slack[i] < tau)
        .collect();
    let n_eq = p.num_equalities();
    let k = n_eq + active.len();
    if n + k > max_dim {
        return None;
    }
    let pd = p.objective_matrix.to_dense();
    let mut c = DMatrix::zeros(k, n);
    let mut rhs_c = DVector::zeros(k);
    for r in 0..n_eq {
        for &(col, v) in p.equality_lhs.row(r) {
            c[(r, col)] = v;
        }
        rhs_c[r] = p.equality_rhs[r];
    }
    for (t, &i) in active.iter().enumerate() {
        for &(col, v) in p.inequality_lhs.row(i) {
            c[(n_eq + t, col)] = v;
        }
        rhs_c[n_eq + t] = p.inequality_rhs[i];
    }

    // Regularized KKT with iterative refinement (handles redundant active rows).
    let delta = 1e-9;
    let dim = n + k;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&pd);
    for i in 0..n {
        kkt[(i, i)] += delta;
    }
    kkt.view_mut((0, n), (n, k)).copy_from(&c.transpose());
    kkt.view_mut((n, 0), (k, n)).copy_from(&c);
    for i in 0..k {
        kkt[(n + i, n + i)] = -delta;
    }
    let mut exact = DMatrix::zeros(dim, dim);
    exact.view_mut((0, 0), (n, n)).copy_from(&pd);
    exact.view_mut((0, n), (n, k)).copy_from(&c.transpose());
    exact.view_mut((n, 0), (k, n)).copy_from(&c);

    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, n).copy_from(&(-&p.objective_vector));
    rhs.rows_mut(n, k).copy_from(&rhs_c);

    let lu = kkt.lu();
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..8 {
        let r = &rhs - &exact * &sol;
        if r.amax() < 1e-13 {
            break;
        }
        sol += lu.solve(&r)?;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let px = sol.rows(0, n).into_owned();
    let mut ineq = DVector::zeros(p.num_inequalities());
    for (t, &i) in active.iter().enumerate() {
        let lam = sol[n + n_eq + t];
        if lam < -1e-7 {
            return None;
        }
        ineq[i] = lam.max(0.0);
    }
    let eqd = sol.rows(n, n_eq).into_owned();
    // stay close to the interior-point answer; a far jump means a bad active set
    if (&px - x).amax() > 1e-3 * (1.0 + x.amax()) {
        return None;
    }
    Some((px, Duals { inequality: ineq, equality: eqd }))
}
