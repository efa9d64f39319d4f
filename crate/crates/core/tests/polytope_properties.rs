//! Randomized invariants of polytopes and configuration triples (n ≤ 4).

mod common;

use cctmpc::benchmarks::simplex_template;
use cctmpc::polytope::VPolytope;
use common::*;
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn vertex_maps_match_enumeration(n in 2usize..=4, seed in any::<u64>(), cuts in 0usize..=3) {
        let (t, _) = random_triple(n, seed, cuts);
        prop_assert_eq!(check_vertex_maps(&t, 10, seed ^ 0x5eed), Ok(()));
    }

    #[test]
    fn cone_closed_under_homothets(n in 2usize..=4, seed in any::<u64>(), cuts in 0usize..=3) {
        let (t, _) = random_triple(n, seed, cuts);
        prop_assert_eq!(check_cone_closure(&t, seed.wrapping_add(1)), Ok(()));
    }

    #[test]
    fn truncation_count_law(n in 2usize..=4, seed in any::<u64>(), k in 1usize..=6) {
        prop_assert_eq!(check_truncation_counts(n, k, seed), Ok(()));
    }

    #[test]
    fn support_is_sublinear(n in 2usize..=4, seed in any::<u64>()) {
        let (t, y) = random_triple(n, seed, 2);
        let p = t.polytope(&y);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(3));
        let d1 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let d2 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let s = |d: &DVector<f64>| p.support_value(d).unwrap();
        prop_assert!(s(&(&d1 + &d2)) <= s(&d1) + s(&d2) + 1e-9);
        let v = VPolytope::new(t.vertices(&y)).unwrap();
        prop_assert!((v.support_value(&d1).unwrap() - s(&d1)).abs() <= 1e-7 * (1.0 + s(&d1).abs()));
    }
}

#[test]
fn ten_simplex_cuts_give_fourteen_facets_and_twenty_four_vertices() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut t = simplex_template(3).unwrap();
    let mut y = simplex_offsets(3);
    for _ in 0..10 {
        let (nt, ny) = random_cut(&t, &y, &mut rng).expect("cut exists");
        t = nt;
        y = ny;
    }
    assert_eq!((t.num_facets(), t.num_vertices()), (14, 24));
}
