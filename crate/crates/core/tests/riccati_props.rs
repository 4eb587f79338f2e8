mod common;

use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{example, example_scaled, rand_vec};
use gcmpc::linalg::{max_abs, min_eigenvalue, quad};
use gcmpc::parallel::ExecMode;
use gcmpc::riccati::{
    correction_direct, correction_woodbury, gcc_epsilon_interval, gcc_riccati_map, gcc_solve_infinite,
    lqr_backward, synthesis_weights, FixedPointOptions,
};
use gcmpc::sim::{sample_disturbance, DisturbanceMode};
use gcmpc::Error;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn woodbury_and_loewner(h_scale in 0.3..1.5f64, frac in 0.05..0.95f64) {
        let ex = example_scaled(h_scale);
        let iv = gcc_epsilon_interval(&ex.sys, &ex.w, 1e-6).unwrap();
        let eps = iv.hi * frac;
        let sol = gcc_solve_infinite(&ex.sys, &ex.w, eps, FixedPointOptions::default()).unwrap();
        let h = ex.sys.unc.h();
        let x = correction_direct(&sol.s, h, eps).unwrap();
        let xw = correction_woodbury(&sol.s, h, eps).unwrap();
        prop_assert!(max_abs(&(&x - &xw)) <= 1e-8 * max_abs(&x));
        prop_assert!(min_eigenvalue(&(&x - &sol.s)) >= -1e-12 * max_abs(&sol.s));
        prop_assert!(min_eigenvalue(&x) - min_eigenvalue(&sol.s) > 0.0);
        prop_assert!(min_eigenvalue(&sol.s) > 0.0);
        prop_assert!(min_eigenvalue(&sol.rbar) > 0.0);
    }

    #[test]
    fn fixed_point_is_stationary(h_scale in 0.3..1.5f64, frac in 0.05..0.95f64) {
        let ex = example_scaled(h_scale);
        let iv = gcc_epsilon_interval(&ex.sys, &ex.w, 1e-6).unwrap();
        let opts = FixedPointOptions::default();
        let sol = gcc_solve_infinite(&ex.sys, &ex.w, iv.hi * frac, opts).unwrap();
        let w = synthesis_weights(&ex.w, opts.strict_margin).unwrap();
        let step = gcc_riccati_map(&ex.sys, &w, &sol.s, sol.eps).unwrap();
        prop_assert!(max_abs(&(&step.s_next - &sol.s)) <= 10.0 * opts.tol * (1.0 + max_abs(&sol.s)));
        prop_assert!(max_abs(&(&step.k - &sol.k)) <= 1e-6 * (1.0 + max_abs(&sol.k)));
    }

    #[test]
    fn one_step_minimizer_is_gain(x in prop::collection::vec(-2.0..2.0f64, 3)) {
        let ex = example();
        let sol = gcc_solve_infinite(&ex.sys, &ex.w, 0.018, FixedPointOptions::default()).unwrap();
        let (f, g) = (ex.sys.nominal.f(), ex.sys.nominal.g());
        let x = DVector::from_vec(x);
        // c(x,u) + (Fx+Gu)ᵀX(Fx+Gu) with the ε weights, as a quadratic in u
        let value = |u: &DVector<f64>| {
            let next = f * &x + g * u;
            quad(&sol.q_eps, &x) + quad(&sol.r_eps, u) + 2.0 * (x.transpose() * &sol.n_eps * u)[0] + quad(&sol.x, &next)
        };
        let hess = &sol.r_eps + g.transpose() * &sol.x * g;
        let lin = (g.transpose() * &sol.x * f + sol.n_eps.transpose()) * &x;
        let ustar = -hess.lu().solve(&lin).unwrap();
        let ugain = -&sol.k * &x;
        prop_assert!((&ustar - &ugain).amax() <= 1e-8 * (1.0 + ustar.amax()));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let d = rand_vec(&mut rng, 2, 1e-3);
            prop_assert!(value(&(&ugain + d)) >= value(&ugain) - 1e-12);
        }
    }
}

#[test]
fn closed_loop_cost_below_bound() {
    let ex = example();
    let sol = gcc_solve_infinite(&ex.sys, &ex.w, 0.018, FixedPointOptions::default()).unwrap();
    let worst_ratio = gcmpc::parallel::map_indexed(200, ExecMode::default(), |i| {
        let mut rng = gcmpc::parallel::run_rng(21, i);
        let x0 = rand_vec(&mut rng, 3, 2.0);
        let bound = sol.cost_bound(&x0);
        let mut worst = 0.0f64;
        for s in 0..200 {
            let mode = if s % 2 == 0 { DisturbanceMode::UniformInterval } else { DisturbanceMode::UnitSphere };
            let mut x = x0.clone();
            let mut cost = 0.0;
            for _ in 0..50 {
                let u = -&sol.k * &x;
                cost += ex.w.stage_cost(&x, &u);
                let d = sample_disturbance(mode, 1, 1, &mut rng);
                x = ex.sys.step_uncertain(&d, &x, &u).unwrap();
            }
            worst = worst.max(cost / bound);
        }
        worst
    })
    .into_iter()
    .fold(0.0, f64::max);
    assert!(worst_ratio < 1.0, "realized/bound reached {worst_ratio}");
}

#[test]
fn interval_brackets_feasibility() {
    let ex = example();
    let iv = gcc_epsilon_interval(&ex.sys, &ex.w, 1e-6).unwrap();
    assert!(iv.hi > 0.0 && iv.lo >= 0.0 && iv.lo < iv.hi);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let eps = iv.lo + (iv.hi - iv.lo) * rng.gen_range(0.02..0.98);
        assert!(gcc_solve_infinite(&ex.sys, &ex.w, eps, FixedPointOptions::default()).is_ok(), "ε = {eps}");
    }
    for f in [1.01, 1.1, 2.0] {
        let r = gcc_solve_infinite(&ex.sys, &ex.w, iv.hi * f, FixedPointOptions::default());
        assert!(matches!(r, Err(Error::InfeasibleEpsilon { .. })), "ε = {} gave {r:?}", iv.hi * f);
    }
    assert!(gcc_solve_infinite(&ex.sys, &ex.w, -1.0, FixedPointOptions::default()).is_err());
}

#[test]
fn lqr_recursion_residual() {
    let ex = example();
    let sol = lqr_backward(&ex.sys.nominal, &ex.w, 15).unwrap();
    let (f, g) = (ex.sys.nominal.f(), ex.sys.nominal.g());
    for k in 0..15 {
        let p1 = &sol.costs[k + 1];
        let kk = &sol.gains[k];
        let acl = f - g * kk;
        let rhs = ex.w.q() + kk.transpose() * ex.w.r() * kk + acl.transpose() * p1 * &acl;
        assert!(max_abs(&(&sol.costs[k] - rhs)) <= 1e-9 * (1.0 + max_abs(&sol.costs[k])));
        assert!(min_eigenvalue(&sol.costs[k]) >= -1e-10);
    }
}

#[test]
fn margin_zero_reproduces_unshifted_map() {
    let ex = example();
    let opts = FixedPointOptions { strict_margin: 0.0, ..Default::default() };
    let sol = gcc_solve_infinite(&ex.sys, &ex.w, 0.018, opts).unwrap();
    let step = gcc_riccati_map(&ex.sys, &ex.w, &sol.s, 0.018).unwrap();
    assert!(max_abs(&(&step.s_next - &sol.s)) <= 10.0 * opts.tol * (1.0 + max_abs(&sol.s)));
    let shifted = gcc_solve_infinite(&ex.sys, &ex.w, 0.018, FixedPointOptions::default()).unwrap();
    // the strictness shift only moves S by O(margin)
    assert!(max_abs(&(&shifted.s - &sol.s)) <= 1e-3 * max_abs(&sol.s));
    assert!(min_eigenvalue(&(&shifted.s - &sol.s)) >= -1e-9);
}
