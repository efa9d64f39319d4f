//! Reference systems and starting templates.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::polytope::{ConfigurationTriple, ConvexSet, HPolytope, VPolytope};
use crate::system::UncertainSystem;

/// Gravitational acceleration used by the quadrotor model.
pub const GRAVITY: f64 = 9.81;
/// Thrust gain of the quadrotor model.
pub const THRUST_GAIN: f64 = 0.91;

/// Triple integrator with step `h = 1/4`, hull `(1 ± 0.1)(Ā, B̄)` (four vertex
/// pairs), disturbance `M·(1/20)[-1, 1]³`, `X = [-5, 5]³`, `U = [-3, 3]`.
pub fn triple_integrator() -> UncertainSystem {
    triple_integrator_with(0.1, 1.0)
}

/// Triple integrator with hull `(1 ± spread)(Ā, B̄)` and the disturbance set
/// scaled by `disturbance_scale`.
pub fn triple_integrator_with(spread: f64, disturbance_scale: f64) -> UncertainSystem {
    let h = 0.25;
    let a_bar = DMatrix::from_row_slice(3, 3, &[1.0, h, h * h / 2.0, 0.0, 1.0, h, 0.0, 0.0, 1.0]);
    let b_bar = DMatrix::from_row_slice(3, 1, &[h * h * h / 6.0, h * h / 2.0, h]);
    let mut a = Vec::new();
    let mut b = Vec::new();
    for sa in [1.0 - spread, 1.0 + spread] {
        for sb in [1.0 - spread, 1.0 + spread] {
            a.push(&a_bar * sa);
            b.push(&b_bar * sb);
        }
    }
    let map = triple_integrator_disturbance_map();
    let mut corners = Vec::with_capacity(8);
    for k in 0..8 {
        let half = 0.05 * disturbance_scale;
        let w = DVector::from_fn(3, |i, _| if k >> i & 1 == 1 { half } else { -half });
        corners.push(&map * w);
    }
    UncertainSystem::new(
        a,
        b,
        ConvexSet::Vertices(VPolytope::new(corners).expect("eight corners")),
        HPolytope::from_box(&[-5.0; 3], &[5.0; 3]),
        HPolytope::from_box(&[-3.0], &[3.0]),
    )
    .expect("triple integrator is well posed")
}

/// Matrix mapping the `1/20`-box onto the triple-integrator disturbance set.
pub fn triple_integrator_disturbance_map() -> DMatrix<f64> {
    let h = 0.25;
    DMatrix::from_row_slice(3, 3, &[h, h * h / 2.0, h * h * h / 6.0, 1.0, h, h * h / 2.0, 0.0, 1.0, h])
}

/// Continuous-time 10-state quadrotor linearized at hover.
///
/// States `(p_x, p_y, p_z, v_x, v_y, v_z, φ, θ, φ̇, θ̇)`, inputs
/// `(φ_ref, θ_ref, thrust deviation)`. Attitude follows the second-order
/// loop `φ̈ = -10φ - 8φ̇ + 10φ_ref` (same for θ).
pub fn quadrotor_continuous() -> (DMatrix<f64>, DMatrix<f64>) {
    let g = GRAVITY;
    let (d0, d1, n0) = (10.0, 8.0, 10.0);
    let mut a = DMatrix::zeros(10, 10);
    let mut b = DMatrix::zeros(10, 3);
    for i in 0..3 {
        a[(i, 3 + i)] = 1.0;
    }
    a[(3, 7)] = g;
    a[(4, 6)] = -g;
    b[(5, 2)] = THRUST_GAIN;
    a[(6, 8)] = 1.0;
    a[(7, 9)] = 1.0;
    a[(8, 6)] = -d0;
    a[(8, 8)] = -d1;
    a[(9, 7)] = -d0;
    a[(9, 9)] = -d1;
    b[(8, 0)] = n0;
    b[(9, 1)] = n0;
    (a, b)
}

/// Zero-order-hold discretization through the augmented matrix exponential.
pub fn zero_order_hold(a: &DMatrix<f64>, b: &DMatrix<f64>, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let m = b.ncols();
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * dt));
    aug.view_mut((0, n), (n, m)).copy_from(&(b * dt));
    let e = aug.exp();
    (e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, m)).into_owned())
}

/// Quadrotor discretized at 0.1 s with
/// `X = ±[4, 4, 2, 10, 10, 5, π/3, π/3, π, π]`,
/// `U = ±π/4 × ±π/4 × ([0, 2g] - g/k_T)` and `W = B_w·±[0.05, 0.05, 0.1]`.
pub fn quadrotor() -> UncertainSystem {
    use std::f64::consts::PI;
    let (ac, bc) = quadrotor_continuous();
    let (a, b) = zero_order_hold(&ac, &bc, 0.1);
    let x_hi = [4.0, 4.0, 2.0, 10.0, 10.0, 5.0, PI / 3.0, PI / 3.0, PI, PI];
    let x_lo: Vec<f64> = x_hi.iter().map(|v| -v).collect();
    let hover = GRAVITY / THRUST_GAIN;
    let u_lo = [-PI / 4.0, -PI / 4.0, -hover];
    let u_hi = [PI / 4.0, PI / 4.0, 2.0 * GRAVITY - hover];
    let w_hi = [0.05, 0.05, 0.1];
    let mut corners = Vec::with_capacity(8);
    for k in 0..8 {
        let mut w = DVector::zeros(10);
        for i in 0..3 {
            w[i] = if k >> i & 1 == 1 { w_hi[i] } else { -w_hi[i] };
        }
        corners.push(w);
    }
    UncertainSystem::new(
        vec![a],
        vec![b],
        ConvexSet::Vertices(VPolytope::new(corners).expect("eight corners")),
        HPolytope::from_box(&x_lo, &x_hi),
        HPolytope::from_box(&u_lo, &u_hi),
    )
    .expect("quadrotor is well posed")
}

/// Simplex template `F = [-I; 1ᵀ]`.
pub fn simplex_template(n: usize) -> Result<ConfigurationTriple> {
    let mut rhs = DVector::zeros(n + 1);
    rhs[n] = 1.0;
    ConfigurationTriple::from_hpolytope(&HPolytope::simplex(n, rhs)?)
}

/// Box template `F = [I; -I]`.
pub fn box_template(n: usize) -> Result<ConfigurationTriple> {
    ConfigurationTriple::from_hpolytope(&HPolytope::from_box(&vec![-1.0; n], &vec![1.0; n]))
}
