mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{example, reference_controller};
use gcmpc::linalg::{op_norm2, quad};
use gcmpc::parallel::ExecMode;
use gcmpc::sim::{
    benchmark, check_cost_bound, plan_monte_carlo, run_closed_loop, sample_disturbance, uniform_box_states,
    BoxStats, DisturbanceMode, LinearFeedback, Policy, SimConfig,
};
use gcmpc::Error;

fn csv_of(seed: u64, mode: DisturbanceMode) -> String {
    let ex = example();
    let ctrl = reference_controller(&ex);
    let cfg = SimConfig { steps: 15, mode, seed, ..Default::default() };
    let tr = run_closed_loop(&ctrl, &ex.sys, &ex.w, &DVector::from_element(3, 0.5), &cfg).unwrap();
    let mut buf = Vec::new();
    tr.write_csv(&mut buf, false).unwrap();
    String::from_utf8(buf).unwrap()
}

#[test]
fn trace_reproducible_per_seed() {
    for mode in [DisturbanceMode::UniformInterval, DisturbanceMode::UnitSphere, DisturbanceMode::BoundaryWorst] {
        assert_eq!(csv_of(3, mode), csv_of(3, mode));
    }
    assert_ne!(csv_of(3, DisturbanceMode::UniformInterval), csv_of(4, DisturbanceMode::UniformInterval));
}

#[test]
fn costs_recomputed_from_csv() {
    let ex = example();
    let text = csv_of(9, DisturbanceMode::UnitSphere);
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let head = rd.headers().unwrap().clone();
    let col = |name: &str| head.iter().position(|h| h == name).unwrap();
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    let num = |r: &csv::StringRecord, c: usize| r[c].parse::<f64>().unwrap();
    let mut total = 0.0;
    for r in &rows[..rows.len() - 1] {
        let x = DVector::from_fn(3, |i, _| num(r, col(&format!("x{i}"))));
        let u = DVector::from_fn(2, |i, _| num(r, col(&format!("u{i}"))));
        let stage = x.norm_squared() + u.norm_squared();
        assert!((stage - num(r, col("stage_cost"))).abs() <= 1e-9 * (1.0 + stage));
        total += stage;
    }
    let last = rows.last().unwrap();
    let xt = DVector::from_fn(3, |i, _| num(last, col(&format!("x{i}"))));
    total += quad(ex.w.terminal(), &xt);

    let ctrl = reference_controller(&ex);
    let cfg = SimConfig { steps: 15, mode: DisturbanceMode::UnitSphere, seed: 9, ..Default::default() };
    let tr = run_closed_loop(&ctrl, &ex.sys, &ex.w, &DVector::from_element(3, 0.5), &cfg).unwrap();
    assert!((total - tr.total_cost).abs() <= 1e-9 * (1.0 + tr.total_cost));
}

#[test]
fn monte_carlo_mode_independent() {
    let ex = example();
    let ctrl = reference_controller(&ex);
    let plan = ctrl.plan(&DVector::from_element(3, 0.5)).unwrap();
    let a = plan_monte_carlo(&ctrl, &plan, 64, 5, DisturbanceMode::UnitSphere, ExecMode::Sequential).unwrap();
    let b = plan_monte_carlo(&ctrl, &plan, 64, 5, DisturbanceMode::UnitSphere, ExecMode::Parallel).unwrap();
    assert_eq!(a, b);
}

#[test]
fn origin_stays_at_origin() {
    let ex = example();
    let ctrl = reference_controller(&ex);
    let tr = run_closed_loop(&ctrl, &ex.sys, &ex.w, &DVector::zeros(3), &SimConfig::default()).unwrap();
    assert!(tr.halted.is_none());
    assert!(tr.states.iter().chain(&tr.inputs).all(|v| v.amax() == 0.0));
    assert_eq!(tr.total_cost, 0.0);
}

#[test]
fn closed_loop_stays_feasible() {
    let ex = example();
    let ctrl = reference_controller(&ex);
    let x0 = DVector::from_element(3, 1.0);
    for mode in [DisturbanceMode::UniformInterval, DisturbanceMode::BoundaryWorst] {
        let cfg = SimConfig { steps: 20, mode, seed: 2, ..Default::default() };
        let tr = run_closed_loop(&ctrl, &ex.sys, &ex.w, &x0, &cfg).unwrap();
        assert!(tr.halted.is_none(), "{:?}", tr.halted);
        assert_eq!(tr.steps(), 20);
        assert!(tr.states.iter().all(|x| x.amax() <= 1.0 + 1e-8));

        let plan = ctrl.plan(&x0).unwrap();
        let margin = check_cost_bound(&tr, &ex.w, &ctrl.gcc.s, &plan).unwrap();
        assert!(margin.is_finite());
    }
}

#[test]
fn short_trace_and_bad_config() {
    let ex = example();
    let ctrl = reference_controller(&ex);
    let x0 = DVector::from_element(3, 0.5);
    let plan = ctrl.plan(&x0).unwrap();
    let cfg = SimConfig { steps: 3, ..Default::default() };
    let tr = run_closed_loop(&ctrl, &ex.sys, &ex.w, &x0, &cfg).unwrap();
    assert!(matches!(
        check_cost_bound(&tr, &ex.w, &ctrl.gcc.s, &plan),
        Err(Error::TraceTooShort { got: 3, need: 10 })
    ));
    let zero = SimConfig { steps: 0, ..Default::default() };
    assert!(run_closed_loop(&ctrl, &ex.sys, &ex.w, &x0, &zero).is_err());
}

#[test]
fn benchmark_summary_ordered() {
    let ex = example();
    let ctrl = reference_controller(&ex);
    let lin = LinearFeedback { k: ctrl.gcc.k.clone() };
    let states = uniform_box_states(3, 0.5, 12, 1);
    assert!(states.iter().all(|x| x.amax() <= 0.5));
    let rep = benchmark(&[&ctrl, &lin], 12, |i| states[i].clone()).unwrap();
    let e = rep.entry(ctrl.name()).unwrap();
    assert_eq!(e.samples.len() + e.skipped, 12);
    let s = e.stats.unwrap();
    assert!(s.min <= s.q1 && s.q1 <= s.median && s.median <= s.q3 && s.q3 <= s.max);
    assert!(benchmark(&[&lin], 9, |i| states[i].clone()).is_err());
    assert!(BoxStats::from_samples(&[]).is_none());
    let b = BoxStats::from_samples(&[4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
    assert_eq!((b.min, b.q1, b.median, b.q3, b.max), (1.0, 2.0, 3.0, 4.0, 5.0));
}

proptest! {
    #[test]
    fn disturbances_in_unit_ball(seed in any::<u64>(), p in 1usize..4, l in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s: DMatrix<f64> = sample_disturbance(DisturbanceMode::UnitSphere, p, l, &mut rng);
        prop_assert!((op_norm2(&s) - 1.0).abs() <= 1e-12);
        for mode in [DisturbanceMode::UniformInterval, DisturbanceMode::BoundaryWorst] {
            let d = sample_disturbance(mode, p, l, &mut rng);
            prop_assert_eq!(d.shape(), (p, l));
            prop_assert!(op_norm2(&d) <= 1.0 + 1e-12);
        }
    }
}
