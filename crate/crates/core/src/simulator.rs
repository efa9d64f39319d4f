//! Closed-loop simulation and stabilizable-region probing.

use std::fmt::Write as _;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controllers::{Controller, TubeStatus};
use crate::error::Result;
use crate::exec::ExecutionMode;
use crate::polytope::{distance_to_hpolytope, ConfigurationTriple};
use crate::qp::SolveStatus;
use crate::rci::RciSolution;
use crate::system::{sample_realization, SamplingPolicy};

/// Default distance below which a state counts as inside `P(y_m)`.
pub const CONVERGENCE_TOL: f64 = 1e-4;

/// Euclidean distance from `x` to `P(y_m)`.
pub fn distance_to_rci(x: &DVector<f64>, rci: &RciSolution, triple: &ConfigurationTriple) -> Result<f64> {
    distance_to_hpolytope(x, &triple.polytope(&rci.y_m))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub x: Vec<f64>,
    /// Applied input; absent when the tube problem had no solution.
    pub u: Option<Vec<f64>>,
    pub model_weights: Vec<f64>,
    pub disturbance_weights: Vec<f64>,
    /// Stacked stage vectors of the tube problem.
    pub params: Vec<f64>,
    /// Successor offset `y₁*` the input keeps the state inside.
    pub y1: Vec<f64>,
    pub cost: f64,
    pub dist: f64,
    pub status: TubeStatus,
    pub solver_status: Option<SolveStatus>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub scheme: String,
    pub seed: u64,
    pub policy: SamplingPolicy,
    pub steps_requested: usize,
    /// False when `x_0` admits no tube; the log is then empty.
    pub feasible_start: bool,
    pub records: Vec<StepRecord>,
    pub final_state: Vec<f64>,
    pub final_dist: f64,
}

impl TrajectoryLog {
    /// True iff every requested step was solved.
    pub fn completed(&self) -> bool {
        self.feasible_start && self.records.len() == self.steps_requested && self.records.iter().all(|r| r.u.is_some())
    }

    /// Largest increase `𝓛_{k+1} - 𝓛_k` (0 when nonincreasing).
    pub fn max_cost_increase(&self) -> f64 {
        self.records.windows(2).map(|w| w[1].cost - w[0].cost).fold(0.0, f64::max)
    }

    /// First step whose state lies within `tol` of `P(y_m)`.
    pub fn converged_step(&self, tol: f64) -> Option<usize> {
        self.records.iter().find(|r| r.dist <= tol).map(|r| r.k)
    }

    /// CSV with header `k, x[0..n_x), u[0..n_u), L, dist, status`.
    pub fn to_csv(&self) -> String {
        let n_x = self.final_state.len();
        let n_u = self.records.iter().find_map(|r| r.u.as_ref().map(|u| u.len())).unwrap_or(0);
        let mut out = String::from("k");
        for i in 0..n_x {
            write!(out, ",x{i}").unwrap();
        }
        for i in 0..n_u {
            write!(out, ",u{i}").unwrap();
        }
        out.push_str(",L,dist,status\n");
        for r in &self.records {
            write!(out, "{}", r.k).unwrap();
            for v in &r.x {
                write!(out, ",{v}").unwrap();
            }
            match &r.u {
                Some(u) => u.iter().for_each(|v| write!(out, ",{v}").unwrap()),
                None => (0..n_u).for_each(|_| out.push(',')),
            }
            let status = serde_json::to_value(r.status).expect("status serializes");
            writeln!(out, ",{},{},{}", r.cost, r.dist, status.as_str().unwrap_or("unknown")).unwrap();
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("log serializes")
    }
}

/// Runs `x_{k+1} = A_k x_k + B_k u_k + w_k` for `steps` steps with the
/// realization drawn from a ChaCha8 stream seeded by `seed`.
///
/// The controller's warm-start state is reset first. The run stops at the
/// first step without a tube solution.
pub fn run_closed_loop(
    ctrl: &mut Controller,
    x0: &DVector<f64>,
    steps: usize,
    seed: u64,
    policy: SamplingPolicy,
) -> Result<TrajectoryLog> {
    ctrl.reset();
    let spec = ctrl.spec().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = TrajectoryLog {
        scheme: spec.scheme.name().to_string(),
        seed,
        policy,
        steps_requested: steps,
        feasible_start: true,
        records: Vec::with_capacity(steps),
        final_state: x0.iter().copied().collect(),
        final_dist: distance_to_rci(x0, &spec.rci, &spec.triple)?,
    };
    let mut x = x0.clone();
    for k in 0..steps {
        let dist = distance_to_rci(&x, &spec.rci, &spec.triple)?;
        let (sol, u) = ctrl.step(&x)?;
        if k == 0 && !sol.is_feasible() {
            log.feasible_start = false;
            return Ok(log);
        }
        let mut record = StepRecord {
            k,
            x: x.iter().copied().collect(),
            u: u.as_ref().map(|u| u.iter().copied().collect()),
            model_weights: Vec::new(),
            disturbance_weights: Vec::new(),
            params: sol.params.iter().copied().collect(),
            y1: sol.y.get(1).map(|y| y.iter().copied().collect()).unwrap_or_default(),
            cost: sol.cost,
            dist,
            status: sol.status,
            solver_status: sol.solver_status,
        };
        let Some(u) = u else {
            log.records.push(record);
            break;
        };
        let real = sample_realization(&spec.system, &mut rng, policy);
        x = &real.a * &x + &real.b * &u + &real.w;
        record.model_weights = real.model_weights;
        record.disturbance_weights = real.disturbance_weights;
        log.records.push(record);
    }
    log.final_dist = distance_to_rci(&x, &spec.rci, &spec.triple)?;
    log.final_state = x.iter().copied().collect();
    Ok(log)
}

/// Sampling region for [`probe_region`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub count: usize,
}

impl SampleSpec {
    /// Uniform samples of the box, reproducible from `seed`.
    pub fn draw(&self, seed: u64) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..self.count)
            .map(|_| {
                DVector::from_iterator(
                    self.lower.len(),
                    self.lower.iter().zip(&self.upper).map(|(&lo, &hi)| lo + (hi - lo) * rng.random::<f64>()),
                )
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionProbe {
    pub schemes: Vec<String>,
    pub samples: Vec<Vec<f64>>,
    /// `feasible[s][i]`: scheme `s` admits a tube at sample `i`.
    pub feasible: Vec<Vec<bool>>,
}

impl RegionProbe {
    /// Fraction of samples each scheme accepts.
    pub fn fractions(&self) -> Vec<f64> {
        let n = self.samples.len().max(1) as f64;
        self.feasible.iter().map(|f| f.iter().filter(|&&b| b).count() as f64 / n).collect()
    }

    /// Samples feasible for scheme `a` but not for scheme `b`.
    pub fn containment_violations(&self, a: usize, b: usize) -> usize {
        self.feasible[a].iter().zip(&self.feasible[b]).filter(|&(&fa, &fb)| fa && !fb).count()
    }
}

/// Stage-0 feasibility verdicts of every controller at every sample.
pub fn probe_region(controllers: &[Controller], samples: &[DVector<f64>], mode: ExecutionMode) -> RegionProbe {
    let verdicts: Vec<Vec<bool>> = mode.map(samples, |x| controllers.iter().map(|c| c.is_feasible(x)).collect());
    RegionProbe {
        schemes: controllers.iter().map(|c| c.spec().scheme.name().to_string()).collect(),
        samples: samples.iter().map(|x| x.iter().copied().collect()).collect(),
        feasible: (0..controllers.len()).map(|s| verdicts.iter().map(|v| v[s]).collect()).collect(),
    }
}
