//! Checks on the nominal triple-integrator data. The data admit no RCI
//! simplex, so these fail; run with `--ignored` to reproduce.

use cctmpc::benchmarks::{simplex_template, triple_integrator};
use cctmpc::rci::verify_rci;
use cctmpc::template::{initial_template_nlp, refine_template, NlpOptions, RefineOptions};
use nalgebra::DVector;

#[test]
#[ignore = "nominal data admit no RCI simplex"]
fn literal_simplex_nlp_certifies() {
    let sys = triple_integrator();
    let nlp = initial_template_nlp(&simplex_template(3).unwrap(), &sys, &NlpOptions::default()).unwrap();
    assert!(nlp.converged, "max violation {:.3e}", nlp.max_violation);
    assert!(verify_rci(&nlp.triple, &sys, &DVector::from_element(4, 1.0), &nlp.u));
}

#[test]
#[ignore = "nominal data admit no RCI simplex"]
fn literal_refinement_count_law() {
    let sys = triple_integrator();
    let nlp = initial_template_nlp(&simplex_template(3).unwrap(), &sys, &NlpOptions::default()).unwrap();
    let (_, trace) = refine_template(&nlp.triple, &sys, 20, &RefineOptions::default()).unwrap();
    assert_eq!(trace.records.len(), 20);
    for r in &trace.records {
        assert_eq!((r.facets, r.vertices), (4 + r.i, 4 + 2 * r.i));
    }
    assert!(trace.sigmas().windows(2).all(|w| w[1] <= w[0] + 1e-6));
}
