//! Experiment orchestration for each subcommand.

use std::path::{Path, PathBuf};

use cctmpc::benchmarks::{box_template, simplex_template};
use cctmpc::controllers::{problem_size, Controller, ControllerConfig, ProblemSize, SchemeName};
use cctmpc::exec::ExecutionMode;
use cctmpc::polytope::{hausdorff_distance, ConfigurationTriple, VPolytope};
use cctmpc::rci::{optimal_rci, optimal_rci_anchored, RciCost, RciSolution};
use cctmpc::simulator::{probe_region, run_closed_loop, SampleSpec, TrajectoryLog};
use cctmpc::system::UncertainSystem;
use cctmpc::template::{initial_template_nlp, refine_template, NlpOptions, RefineOptions, RefinementTrace};
use cctmpc::Error;
use nalgebra::DVector;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{LoadedConfig, RciCostName, TemplateSource};
use crate::error::CliError;

/// Lyapunov increase tolerated per step.
const LYAPUNOV_TOL: f64 = 1e-6;
/// Containment tolerance for the realized successor.
const CONTAINMENT_TOL: f64 = 1e-7;

/// Options shared by every subcommand.
pub struct Context {
    pub cfg: LoadedConfig,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Context {
    fn envelope<T: Serialize>(&self, kind: &str, data: &T) -> Value {
        json!({ "kind": kind, "config_hash": self.cfg.hash, "seed": self.seed, "data": data })
    }

    pub fn write_json<T: Serialize>(&self, path: &Path, kind: &str, data: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(&self.envelope(kind, data)).expect("serializable output");
        write_file(path, text + "\n")
    }

    pub fn write_csv(&self, path: &Path, body: &str) -> Result<(), CliError> {
        write_file(path, format!("# config_hash={} seed={}\n{body}", self.cfg.hash, self.seed))
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

fn write_file(path: &Path, text: String) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads a JSON file, unwrapping the output envelope when present.
pub fn read_payload(path: &Path) -> Result<String, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid JSON in {}: {e}", path.display())))?;
    match value {
        Value::Object(mut m) if m.contains_key("config_hash") && m.contains_key("data") => {
            Ok(m.remove("data").expect("checked key").to_string())
        }
        _ => Ok(text),
    }
}

fn usage(e: Error, what: &str) -> CliError {
    match e {
        Error::Json(j) => CliError::Usage(format!("invalid {what}: {j}")),
        e => CliError::Core(e),
    }
}

pub fn load_system(ctx: &Context) -> Result<UncertainSystem, CliError> {
    let path = ctx.cfg.resolve(&ctx.cfg.config.system);
    UncertainSystem::from_json(&read_payload(&path)?).map_err(|e| usage(e, "system file"))
}

fn starting_template(ctx: &Context, sys: &UncertainSystem) -> Result<ConfigurationTriple, CliError> {
    let t = &ctx.cfg.config.template;
    let n = sys.state_dim();
    Ok(match t.source {
        TemplateSource::Simplex => simplex_template(n)?,
        TemplateSource::Box => box_template(n)?,
        TemplateSource::File => {
            let path = ctx.cfg.resolve(t.path.as_ref().expect("validated path"));
            let triple = ConfigurationTriple::from_json(&read_payload(&path)?).map_err(|e| usage(e, "template file"))?;
            if triple.dim() != n {
                return Err(CliError::Usage(format!("template has dimension {}, system {n}", triple.dim())));
            }
            triple
        }
    })
}

#[derive(Serialize)]
struct NlpSummary {
    converged: bool,
    iterations: usize,
    epsilon_sq: f64,
    max_violation: f64,
}

#[derive(Serialize)]
struct SynthesisTrace {
    nlp: Option<NlpSummary>,
    refinement: Option<RefinementTrace>,
}

fn synthesize(
    ctx: &Context,
    sys: &UncertainSystem,
    i_max: usize,
) -> Result<(ConfigurationTriple, SynthesisTrace), CliError> {
    let mut t = starting_template(ctx, sys)?;
    let mut trace = SynthesisTrace { nlp: None, refinement: None };
    if ctx.cfg.config.template.nlp {
        let opts = NlpOptions { seed: ctx.seed, ..NlpOptions::default() };
        let res = initial_template_nlp(&t, sys, &opts)?;
        log::info!("nlp: converged {} after {} iterations, ‖ε‖² = {:.4}", res.converged, res.iterations, res.epsilon.norm_squared());
        let converged = res.converged;
        trace.nlp = Some(NlpSummary {
            converged,
            iterations: res.iterations,
            epsilon_sq: res.epsilon.norm_squared(),
            max_violation: res.max_violation,
        });
        if !converged {
            eprintln!(
                "error: no robust control invariant template found (largest invariance violation {:.3e})",
                res.max_violation
            );
            return Err(Error::InitialTemplateInfeasible.into());
        }
        t = res.triple;
    }
    if i_max > 0 {
        let opts = RefineOptions { keep_triples: false, ..RefineOptions::default() };
        let (refined, rt) = refine_template(&t, sys, i_max, &opts)?;
        log::info!("refinement: {} cuts, σ {:.6} → {:.6}", rt.records.len(), rt.initial_sigma, rt.sigmas().last().copied().unwrap_or(f64::NAN));
        t = refined;
        trace.refinement = Some(rt);
    }
    Ok((t, trace))
}

/// Template used by the controller commands: the file as is, or a fresh synthesis.
fn obtain_template(ctx: &Context, sys: &UncertainSystem) -> Result<ConfigurationTriple, CliError> {
    let c = &ctx.cfg.config;
    if c.template.source == TemplateSource::File && !c.template.nlp && c.refinement.i_max == 0 {
        starting_template(ctx, sys)
    } else {
        Ok(synthesize(ctx, sys, c.refinement.i_max)?.0)
    }
}

fn obtain_rci(ctx: &Context, t: &ConfigurationTriple, sys: &UncertainSystem) -> Result<RciSolution, CliError> {
    let c = &ctx.cfg.config.rci;
    if let Some(file) = &c.file {
        let rci = RciSolution::from_json(&read_payload(&ctx.cfg.resolve(file))?).map_err(|e| usage(e, "RCI file"))?;
        if !cctmpc::rci::verify_rci(t, sys, &rci.y_m, &rci.u_m) {
            return Err(CliError::Usage("RCI file does not describe an invariant set of this template".into()));
        }
        return Ok(rci);
    }
    let cost = match c.cost {
        RciCostName::VertexSpread => RciCost::vertex_spread_default(sys.state_dim(), sys.input_dim()),
        RciCostName::Norm => RciCost::Norm,
    };
    let homothetic = ctx.cfg.config.controllers.iter().any(|c| c.scheme != SchemeName::Full);
    if homothetic {
        Ok(optimal_rci_anchored(t, sys, &cost)?)
    } else {
        Ok(optimal_rci(t, sys, &cost)?)
    }
}

fn build_controllers(
    configs: &[ControllerConfig],
    t: &ConfigurationTriple,
    sys: &UncertainSystem,
    rci: &RciSolution,
) -> Result<Vec<Controller>, CliError> {
    configs
        .iter()
        .map(|c| Ok(Controller::new(c.spec(t.clone(), sys.clone(), rci.clone())?)?))
        .collect()
}

pub fn synth_template(ctx: &Context, i_max: Option<usize>, trace_out: Option<PathBuf>) -> Result<(), CliError> {
    let sys = load_system(ctx)?;
    let i_max = i_max.unwrap_or(ctx.cfg.config.refinement.i_max);
    let (t, trace) = synthesize(ctx, &sys, i_max)?;
    ctx.write_json(&ctx.out("template.json"), "template", &t.to_file())?;
    ctx.write_json(&trace_out.unwrap_or_else(|| ctx.out("trace.json")), "trace", &trace)?;
    println!("template: {} facets, {} vertices", t.num_facets(), t.num_vertices());
    Ok(())
}

pub fn compute_rci(ctx: &Context) -> Result<(), CliError> {
    let sys = load_system(ctx)?;
    let t = obtain_template(ctx, &sys)?;
    let rci = obtain_rci(ctx, &t, &sys)?;
    let data: Value = serde_json::from_str(&rci.to_json()).expect("valid RCI JSON");
    ctx.write_json(&ctx.out("rci.json"), "rci", &data)?;
    ctx.write_json(&ctx.out("template.json"), "template", &t.to_file())?;
    println!("rci: objective {:.6}", rci.objective);
    Ok(())
}

#[derive(Serialize)]
struct TrajectorySummary {
    controller: usize,
    scheme: String,
    start: usize,
    seed: u64,
    x0: Vec<f64>,
    feasible_start: bool,
    completed: bool,
    steps: usize,
    converged_step: Option<usize>,
    max_cost_increase: f64,
    max_containment_violation: f64,
    final_dist: f64,
    mean_dist: f64,
    max_dist: f64,
    csv: String,
    json: String,
}

/// Largest distance of a realized successor outside `P(y₁)`.
fn containment_violation(log: &TrajectoryLog, t: &ConfigurationTriple) -> f64 {
    let mut worst = 0.0f64;
    for (k, r) in log.records.iter().enumerate() {
        if r.u.is_none() {
            continue;
        }
        let next = log.records.get(k + 1).map_or(&log.final_state, |n| &n.x);
        let fx = &t.facet_matrix * DVector::from_column_slice(next);
        let y1 = DVector::from_column_slice(&r.y1);
        worst = worst.max((fx - y1).max());
    }
    worst.max(0.0)
}

fn simulation_starts(ctx: &Context, ctrl: &Controller) -> Vec<DVector<f64>> {
    let Some(sim) = &ctx.cfg.config.simulation else { return Vec::new() };
    let mut starts: Vec<DVector<f64>> = sim.x0.iter().map(|x| DVector::from_column_slice(x)).collect();
    if let Some(rs) = &sim.random_starts {
        let samples = rs.sampler.draw(ctx.seed);
        let feasible = ExecutionMode::default().map(&samples, |x| ctrl.is_feasible(x));
        starts.extend(samples.into_iter().zip(feasible).filter(|(_, f)| *f).map(|(x, _)| x).take(rs.count));
    }
    starts
}

pub fn run_mpc(ctx: &Context) -> Result<(), CliError> {
    let c = &ctx.cfg.config;
    let Some(sim) = &c.simulation else {
        return Err(CliError::Usage("run-mpc needs a \"simulation\" block".into()));
    };
    if c.controllers.is_empty() {
        return Err(CliError::Usage("run-mpc needs at least one controller".into()));
    }
    let sys = load_system(ctx)?;
    let t = obtain_template(ctx, &sys)?;
    let rci = obtain_rci(ctx, &t, &sys)?;
    let controllers = build_controllers(&c.controllers, &t, &sys, &rci)?;
    let n_x = sys.state_dim();

    let mut tasks = Vec::new();
    for (ci, ctrl) in controllers.iter().enumerate() {
        let starts = simulation_starts(ctx, ctrl);
        if starts.iter().any(|x| x.len() != n_x) {
            return Err(CliError::Usage(format!("initial states must have {n_x} entries")));
        }
        for (si, x0) in starts.into_iter().enumerate() {
            for s in 0..sim.seeds_per_start {
                let seed = ctx.seed.wrapping_add((si * sim.seeds_per_start + s) as u64);
                tasks.push((ci, si, seed, x0.clone()));
            }
        }
    }
    let logs = ExecutionMode::default().map(&tasks, |(ci, _, seed, x0)| {
        let mut ctrl = controllers[*ci].clone();
        run_closed_loop(&mut ctrl, x0, sim.steps, *seed, sim.policy)
    });

    let mut summaries = Vec::with_capacity(tasks.len());
    let mut violations = Vec::new();
    for ((ci, si, seed, x0), log) in tasks.iter().zip(logs) {
        let log = log?;
        let scheme = log.scheme.clone();
        let stem = format!("traj_c{ci}_{scheme}_s{si}_seed{seed}");
        ctx.write_csv(&ctx.out(&format!("{stem}.csv")), &log.to_csv())?;
        ctx.write_json(&ctx.out(&format!("{stem}.json")), "trajectory", &log)?;
        let dists: Vec<f64> = log.records.iter().map(|r| r.dist).collect();
        let summary = TrajectorySummary {
            controller: *ci,
            scheme,
            start: *si,
            seed: *seed,
            x0: x0.iter().copied().collect(),
            feasible_start: log.feasible_start,
            completed: log.completed(),
            steps: log.records.len(),
            converged_step: log.converged_step(sim.convergence_tol),
            max_cost_increase: log.max_cost_increase(),
            max_containment_violation: containment_violation(&log, &t),
            final_dist: log.final_dist,
            mean_dist: if dists.is_empty() { 0.0 } else { dists.iter().sum::<f64>() / dists.len() as f64 },
            max_dist: dists.iter().copied().fold(0.0, f64::max),
            csv: format!("{stem}.csv"),
            json: format!("{stem}.json"),
        };
        if summary.feasible_start {
            if !summary.completed {
                violations.push(format!("{stem}: recursive feasibility lost at step {}", summary.steps));
            }
            if summary.max_cost_increase > LYAPUNOV_TOL {
                violations.push(format!("{stem}: tracking cost increased by {:e}", summary.max_cost_increase));
            }
            if summary.max_containment_violation > CONTAINMENT_TOL {
                violations.push(format!("{stem}: successor left the tube by {:e}", summary.max_containment_violation));
            }
        }
        summaries.push(summary);
    }
    let converged = summaries.iter().filter(|s| s.converged_step.is_some()).count();
    let feasible = summaries.iter().filter(|s| s.feasible_start).count();
    let report = json!({
        "trajectories": summaries,
        "feasible_starts": feasible,
        "infeasible_starts": summaries.len() - feasible,
        "converged": converged,
        "max_cost_increase": summaries.iter().map(|s| s.max_cost_increase).fold(0.0, f64::max),
        "invariant_violations": violations,
    });
    ctx.write_json(&ctx.out("summary.json"), "run_summary", &report)?;
    println!("trajectories: {} ({feasible} feasible starts, {converged} converged)", summaries.len());
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invariant(violations.join("; ")))
    }
}

/// Bounding box of `X`, sampled uniformly.
fn default_probe(sys: &UncertainSystem) -> Result<SampleSpec, CliError> {
    let n = sys.state_dim();
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    for i in 0..n {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        upper.push(sys.state_constraints.support_value(&e)?);
        lower.push(-sys.state_constraints.support_value(&-e)?);
    }
    Ok(SampleSpec { lower, upper, count: 1000 })
}

#[derive(Serialize)]
struct SchemeReport {
    scheme: String,
    horizon: usize,
    size: ProblemSize,
    feasible_fraction: f64,
    hausdorff_to_x: Option<f64>,
}

pub fn compare_schemes(ctx: &Context) -> Result<(), CliError> {
    let c = &ctx.cfg.config;
    if c.controllers.len() < 2 {
        return Err(CliError::Usage("compare-schemes needs at least two controllers".into()));
    }
    let sys = load_system(ctx)?;
    let t = obtain_template(ctx, &sys)?;
    let rci = obtain_rci(ctx, &t, &sys)?;
    let controllers = build_controllers(&c.controllers, &t, &sys, &rci)?;
    let spec = match &c.metrics.region_probe {
        Some(s) => s.clone(),
        None => default_probe(&sys)?,
    };
    if spec.lower.len() != sys.state_dim() || spec.upper.len() != sys.state_dim() {
        return Err(CliError::Usage("region probe bounds must match the state dimension".into()));
    }
    let samples = spec.draw(ctx.seed);
    let probe = probe_region(&controllers, &samples, ExecutionMode::default());
    let x_vertices = if c.metrics.hausdorff { Some(sys.state_constraints.vertices()?) } else { None };
    let fractions = probe.fractions();
    let mut reports = Vec::with_capacity(controllers.len());
    for (k, ctrl) in controllers.iter().enumerate() {
        let s = ctrl.spec();
        let hausdorff_to_x = match &x_vertices {
            Some(xv) => {
                let pts: Vec<DVector<f64>> = samples.iter().zip(&probe.feasible[k]).filter(|(_, f)| **f).map(|(x, _)| x.clone()).collect();
                if pts.len() > sys.state_dim() {
                    Some(hausdorff_distance(&VPolytope::new(pts)?, xv)?)
                } else {
                    None
                }
            }
            None => None,
        };
        reports.push(SchemeReport {
            scheme: s.scheme.name().to_string(),
            horizon: s.horizon,
            size: problem_size(&s.scheme, s.horizon, &t, &sys)?,
            feasible_fraction: fractions[k],
            hausdorff_to_x,
        });
    }
    let n = controllers.len();
    let containment: Vec<Vec<usize>> = (0..n).map(|a| (0..n).map(|b| probe.containment_violations(a, b)).collect()).collect();
    let report = json!({
        "schemes": reports,
        "samples": samples.len(),
        "probe": spec,
        "containment_violations": containment,
        "template": { "facets": t.num_facets(), "vertices": t.num_vertices() },
    });
    ctx.write_json(&ctx.out("comparison.json"), "comparison", &report)?;
    for r in &reports {
        println!(
            "{} N={}: {} variables, {} rows, feasible fraction {:.3}",
            r.scheme, r.horizon, r.size.variables, r.size.inequalities, r.feasible_fraction
        );
    }
    Ok(())
}
