//! Reference numbers for the bundled three-state example and the checks
//! that compare this implementation against them.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::controller::{ControllerOptions, EpsilonMode, GcmpcController, TubeChoice};
use crate::ermpc::{ErmpcController, DEFAULT_NODE_CAP};
use crate::error::Result;
use crate::linalg::{max_abs, min_eigenvalue, op_norm2};
use crate::parallel::{run_rng, ExecMode};
use crate::problem::{bundled_example, Problem};
use crate::riccati::{
    correction_direct, correction_woodbury, gcc_epsilon_interval, gcc_solve_infinite,
    verify_gcc, FixedPointOptions,
};
use crate::sim::{benchmark, plan_monte_carlo, uniform_box_states, DisturbanceMode, Policy};

pub const REF_EPS: f64 = 0.018;
pub const REF_EPS_HI: f64 = 0.0220;

pub fn ref_s() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        3,
        3,
        &[
            31.4751, -0.9359, -20.6124, //
            -0.9359, 5.7340, -1.3900, //
            -20.6124, -1.3900, 16.5017,
        ],
    )
}

pub fn ref_k() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 3, &[1.1801, 0.2151, -0.5076, 0.7401, -0.8385, 0.5162])
}

pub fn ref_rbar() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[123.22, 133.78, 133.78, 197.26])
}

pub fn ref_ktilde() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 3, &[11.5, -6.0, -6.0, 1.1, 0.0, 0.0])
}

/// Largest entrywise relative error, `|a − b| / |b|` (absolute when
/// `b = 0`).
pub fn max_rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| if *y == 0.0 { (x - y).abs() } else { ((x - y) / y).abs() })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug)]
pub struct ReproCheck {
    pub name: String,
    pub value: f64,
    pub target: String,
    pub pass: bool,
}

impl ReproCheck {
    fn new(name: &str, value: f64, target: impl Into<String>, pass: bool) -> Self {
        Self {
            name: name.into(),
            value,
            target: target.into(),
            pass,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReproOptions {
    pub mc_runs: usize,
    pub seed: u64,
    /// States for the GCMPC/ERMPC timing comparison; `None` skips it.
    pub timing_states: Option<usize>,
    pub mode: ExecMode,
}

impl Default for ReproOptions {
    fn default() -> Self {
        Self {
            mc_runs: 500,
            seed: 1,
            timing_states: None,
            mode: ExecMode::Parallel,
        }
    }
}

/// `(X − S ⪰ 0 residual, λ_min(X) − λ_min(S), Woodbury relative gap)` at `eps`.
pub fn correction_gaps(s: &DMatrix<f64>, h: &DMatrix<f64>, eps: f64) -> Result<(f64, f64, f64)> {
    let x = correction_direct(s, h, eps)?;
    let xw = correction_woodbury(s, h, eps)?;
    let loewner = min_eigenvalue(&(&x - s));
    let gap = min_eigenvalue(&x) - min_eigenvalue(s);
    let rel = max_abs(&(&x - &xw)) / max_abs(&x);
    Ok((loewner, gap, rel))
}

fn reference_controller(p: &Problem) -> Result<GcmpcController> {
    let opts = ControllerOptions {
        epsilon: EpsilonMode::Pinned(REF_EPS),
        tube: TubeChoice::Given(ref_ktilde()),
        ..Default::default()
    };
    GcmpcController::build(p.sys.clone(), p.weights.clone(), p.constraints.clone(), p.horizon, &opts)
}

/// Largest `t·dir` (halving from `t = 1`) at which no tightened constraint
/// is active along the unforced plan `v ≡ 0`.
pub fn inactive_state(ctrl: &GcmpcController, dir: &DVector<f64>) -> DVector<f64> {
    let zeros = vec![DVector::zeros(ctrl.sys.m()); ctrl.horizon];
    let mut x = dir.clone();
    for _ in 0..60 {
        let xs = ctrl.nominal_rollout(&x, &zeros);
        if ctrl.robust.worst(&ctrl.tables, &xs, &zeros) < 0.0 {
            break;
        }
        x *= 0.5;
    }
    x
}

pub fn run_checks(opts: &ReproOptions) -> Result<Vec<ReproCheck>> {
    let p = bundled_example()?;
    let mut out = Vec::new();
    let h = p.sys.unc.h();

    let interval = gcc_epsilon_interval(&p.sys, &p.weights, 1e-6)?;
    out.push(ReproCheck::new(
        "epsilon interval upper endpoint",
        interval.hi,
        format!("{REF_EPS_HI} ± 5e-4"),
        (interval.hi - REF_EPS_HI).abs() <= 5e-4,
    ));
    let inv = 1.0 / op_norm2(&(h.transpose() * ref_s() * h));
    out.push(ReproCheck::new(
        "1/‖HᵀSH‖ from reference S",
        inv,
        "0.02200 (3 s.f.)",
        format!("{inv:.3e}") == format!("{:.3e}", 0.022),
    ));

    let gcc = gcc_solve_infinite(&p.sys, &p.weights, REF_EPS, FixedPointOptions::default())?;
    for (name, got, want) in [
        ("S relative error", &gcc.s, ref_s()),
        ("K relative error", &gcc.k, ref_k()),
        ("R̄ relative error", &gcc.rbar, ref_rbar()),
    ] {
        let e = max_rel_err(got, &want);
        out.push(ReproCheck::new(name, e, "≤ 1e-2", e <= 1e-2));
    }

    let (mut worst_loewner, mut worst_gap, mut worst_wood) = (f64::INFINITY, f64::INFINITY, 0.0f64);
    for i in 1..=20 {
        let eps = interval.hi * i as f64 / 21.0;
        let sol = gcc_solve_infinite(&p.sys, &p.weights, eps, FixedPointOptions::default())?;
        let (l, g, w) = correction_gaps(&sol.s, h, eps)?;
        worst_loewner = worst_loewner.min(l / max_abs(&sol.s));
        worst_gap = worst_gap.min(g);
        worst_wood = worst_wood.max(w);
    }
    out.push(ReproCheck::new(
        "min λ(X − S)/‖S‖ over 20 ε",
        worst_loewner,
        "≥ -1e-12",
        worst_loewner >= -1e-12,
    ));
    out.push(ReproCheck::new(
        "min λ_min(X) − λ_min(S) over 20 ε",
        worst_gap,
        "> 0",
        worst_gap > 0.0,
    ));
    out.push(ReproCheck::new("Woodbury relative gap", worst_wood, "≤ 1e-8", worst_wood <= 1e-8));

    let mut rng = run_rng(opts.seed, 0);
    let ver = verify_gcc(&p.sys, &p.weights, &gcc, 1000, &mut rng);
    out.push(ReproCheck::new(
        "Lyapunov inequality worst eigenvalue",
        ver.worst,
        "< 0",
        ver.passed,
    ));

    let ctrl = reference_controller(&p)?;
    let nil = ctrl.tube.nilpotency_index(1e-9).map_or(f64::NAN, |k| k as f64);
    out.push(ReproCheck::new("K̃ nilpotency index", nil, "2", nil == 2.0));
    out.push(ReproCheck::new("ρ_0", ctrl.tables.rho[0], "0.95", (ctrl.tables.rho[0] - 0.95).abs() < 1e-12));

    let x0 = p.x0.clone().unwrap_or_else(|| DVector::from_element(p.sys.n(), 1.0));
    let plan = ctrl.plan(&x0)?;
    let runs = plan_monte_carlo(&ctrl, &plan, opts.mc_runs, opts.seed, DisturbanceMode::UniformInterval, opts.mode)?;
    let margin = runs.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
    let violation = runs.iter().map(|r| r.violation).fold(f64::NEG_INFINITY, f64::max);
    let excess = runs.iter().map(|r| r.phi_excess).fold(f64::NEG_INFINITY, f64::max);
    out.push(ReproCheck::new("plan bound", plan.bound, "finite", plan.bound.is_finite()));
    out.push(ReproCheck::new("min cost margin", margin, "> 0", margin > 0.0));
    out.push(ReproCheck::new("max constraint value", violation, "≤ 1e-8", violation <= 1e-8));
    out.push(ReproCheck::new("max ‖w‖ − φ̄", excess, "≤ 1e-8", excess <= 1e-8));

    let xs = inactive_state(&ctrl, &DVector::from_element(p.sys.n(), 1.0));
    let small = ctrl.plan(&xs)?;
    let vmax = small.v.iter().map(|v| v.amax()).fold(0.0, f64::max);
    let du = (&small.u0 + &gcc.k * &xs).amax();
    out.push(ReproCheck::new("‖v‖∞ near origin", vmax, "≤ 1e-7", vmax <= 1e-7));
    out.push(ReproCheck::new("‖u0 + Kx‖∞ near origin", du, "≤ 1e-7", du <= 1e-7));

    if let Some(count) = opts.timing_states {
        let er = ErmpcController::new(
            p.sys.clone(),
            gcc_terminal_weights(&p, &gcc.s)?,
            &p.constraints,
            p.horizon,
            DEFAULT_NODE_CAP,
            opts.mode,
        )?;
        let states = uniform_box_states(p.sys.n(), 0.5, count, opts.seed);
        let policies: [&dyn Policy; 2] = [&ctrl, &er];
        let report = benchmark(&policies, count, |i| states[i].clone())?;
        let med = |name: &str| report.entry(name).and_then(|e| e.stats).map_or(f64::NAN, |s| s.median);
        let ratio = med(ctrl.name()) / med(er.name());
        out.push(ReproCheck::new("median time GCMPC / ERMPC", ratio, "≤ 0.1", ratio <= 0.1));
    }
    Ok(out)
}

/// Weights with `S` as terminal cost, used to put ERMPC on the same
/// footing as the guaranteed-cost plan.
pub fn gcc_terminal_weights(p: &Problem, s: &DMatrix<f64>) -> Result<crate::model::CostWeights> {
    p.weights.with_terminal(s.clone())
}

pub fn write_report<W: Write>(checks: &[ReproCheck], mut out: W) -> std::io::Result<()> {
    for c in checks {
        writeln!(
            out,
            "{} {:<38} {:>14.6e}  target {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.target
        )?;
    }
    Ok(())
}
