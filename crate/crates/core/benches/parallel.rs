use std::time::Duration;

use cctmpc::benchmarks::box_template;
use cctmpc::controllers::{stage_dimension, Controller, ControllerSpec, Scheme, TrackingCost};
use cctmpc::exec::ExecutionMode;
use cctmpc::polytope::{ConfigurationTriple, ConvexSet, HPolytope};
use cctmpc::rci::{optimal_rci, RciCost};
use cctmpc::simulator::{probe_region, SampleSpec};
use cctmpc::system::UncertainSystem;
use cctmpc::template::{initial_template_nlp, refine_template, NlpOptions, RefineOptions};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;

const MODES: [ExecutionMode; 2] = [ExecutionMode::Sequential, ExecutionMode::Parallel];

fn double_integrator() -> UncertainSystem {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
    let b = DMatrix::from_row_slice(2, 1, &[0.125, 0.5]);
    UncertainSystem::new(
        vec![&a * 0.95, &a * 1.05],
        vec![&b * 0.9, &b * 1.1],
        ConvexSet::Halfspaces(HPolytope::from_box(&[-0.05, -0.05], &[0.05, 0.05])),
        HPolytope::from_box(&[-5.0, -5.0], &[5.0, 5.0]),
        HPolytope::from_box(&[-2.0], &[2.0]),
    )
    .unwrap()
}

fn rci_box(sys: &UncertainSystem) -> ConfigurationTriple {
    let nlp = initial_template_nlp(&box_template(2).unwrap(), sys, &NlpOptions::default()).unwrap();
    assert!(nlp.converged);
    nlp.triple
}

fn refinement(c: &mut Criterion) {
    let sys = double_integrator();
    let t0 = rci_box(&sys);
    let mut group = c.benchmark_group("refine_template");
    group.sample_size(10).measurement_time(Duration::from_secs(10));
    for mode in MODES {
        let opts = RefineOptions { mode, keep_triples: false };
        group.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &opts, |bch, opts| {
            bch.iter(|| refine_template(&t0, &sys, 6, opts).unwrap())
        });
    }
    group.finish();
}

fn region_probe(c: &mut Criterion) {
    let sys = double_integrator();
    let t = rci_box(&sys);
    let rci = optimal_rci(&t, &sys, &RciCost::Norm).unwrap();
    let ctrls: Vec<Controller> = [Scheme::Full, Scheme::Homothetic]
        .into_iter()
        .map(|scheme| {
            let d = stage_dimension(&scheme, &t, 2, 1).unwrap();
            let cost = TrackingCost::identity(d, 0.95).unwrap();
            Controller::new(ControllerSpec { scheme, horizon: 5, triple: t.clone(), system: sys.clone(), rci: rci.clone(), cost }).unwrap()
        })
        .collect();
    let samples = SampleSpec { lower: vec![-5.0; 2], upper: vec![5.0; 2], count: 200 }.draw(1);
    let mut group = c.benchmark_group("probe_region");
    group.sample_size(10);
    for mode in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |bch, &mode| {
            bch.iter(|| probe_region(&ctrls, &samples, mode))
        });
    }
    group.finish();
}

criterion_group!(benches, refinement, region_probe);
criterion_main!(benches);
