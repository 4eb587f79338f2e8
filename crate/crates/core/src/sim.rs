//! Closed-loop simulation, disturbance sampling, Monte-Carlo checks of a
//! plan, and solve-time benchmarking.
//!
//! Trace CSV columns (one row per step, plus a final row holding only the
//! terminal state):
//!
//! ```text
//! step, x0..x{n-1}, u0..u{m-1}, d0..d{pl-1} (Δ row-major), delta_norm, stage_cost[, solve_time_us]
//! ```
//!
//! Bench CSV columns: `controller, run, seconds`.

use std::io::Write;
use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::controller::{GcmpcController, PlanResult};
use crate::ermpc::ErmpcController;
use crate::error::{Error, Result};
use crate::linalg::{op_norm2, quad};
use crate::model::{CostWeights, UncertainSystem};
use crate::parallel::{map_indexed, run_rng, ExecMode};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DisturbanceMode {
    /// Entries uniform on `[−1, 1]`, rescaled into the unit ball if needed.
    #[default]
    UniformInterval,
    /// `‖Δ‖₂ = 1`, direction from a Gaussian matrix.
    UnitSphere,
    /// In closed loop: the rank-one `Δ` of unit norm that pushes the next
    /// state furthest along its nominal direction. Without state context a
    /// random sign matrix normalized to unit norm.
    BoundaryWorst,
}

impl std::str::FromStr for DisturbanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform-interval" => Ok(Self::UniformInterval),
            "unit-sphere" => Ok(Self::UnitSphere),
            "boundary-worst" => Ok(Self::BoundaryWorst),
            _ => Err(Error::InvalidArgument(format!("unknown disturbance mode '{s}'"))),
        }
    }
}

impl std::fmt::Display for DisturbanceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::UniformInterval => "uniform-interval",
            Self::UnitSphere => "unit-sphere",
            Self::BoundaryWorst => "boundary-worst",
        })
    }
}

fn normalize(d: DMatrix<f64>) -> DMatrix<f64> {
    let n = op_norm2(&d);
    if n > 0.0 {
        d / n
    } else {
        d
    }
}

pub fn sample_disturbance<R: Rng + ?Sized>(mode: DisturbanceMode, p: usize, l: usize, rng: &mut R) -> DMatrix<f64> {
    match mode {
        DisturbanceMode::UniformInterval => {
            let d = DMatrix::from_fn(p, l, |_, _| rng.gen_range(-1.0..=1.0));
            if op_norm2(&d) > 1.0 {
                normalize(d)
            } else {
                d
            }
        }
        DisturbanceMode::UnitSphere => loop {
            let d = DMatrix::from_fn(p, l, |_, _| rng.sample::<f64, _>(StandardNormal));
            if op_norm2(&d) > 1e-12 {
                break normalize(d);
            }
        },
        DisturbanceMode::BoundaryWorst => {
            normalize(DMatrix::from_fn(p, l, |_, _| if rng.gen::<bool>() { 1.0 } else { -1.0 }))
        }
    }
}

/// State-aware boundary disturbance `Δ = a bᵀ / (‖a‖‖b‖)` with
/// `a = Hᵀ(Fx + Gu)` and `b = E1 x + E2 u`.
pub fn boundary_worst<R: Rng + ?Sized>(
    sys: &UncertainSystem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    rng: &mut R,
) -> DMatrix<f64> {
    let nominal = sys.nominal.f() * x + sys.nominal.g() * u;
    let a = sys.unc.h().transpose() * nominal;
    let b = sys.unc.e1() * x + sys.unc.e2() * u;
    let (na, nb) = (a.norm(), b.norm());
    if na > 1e-14 && nb > 1e-14 {
        (a / na) * (b / nb).transpose()
    } else {
        sample_disturbance(DisturbanceMode::UnitSphere, sys.unc.p(), sys.unc.l(), rng)
    }
}

/// Anything that maps a measured state to an input.
pub trait Policy: Sync {
    fn name(&self) -> &str;

    /// Input and the time spent in the optimization solve.
    fn act(&self, x: &DVector<f64>) -> Result<(DVector<f64>, Duration)>;
}

impl Policy for GcmpcController {
    fn name(&self) -> &str {
        "gcmpc"
    }

    fn act(&self, x: &DVector<f64>) -> Result<(DVector<f64>, Duration)> {
        let plan = self.plan(x)?;
        Ok((plan.u0, plan.diagnostics.solve_time))
    }
}

impl Policy for ErmpcController {
    fn name(&self) -> &str {
        "ermpc"
    }

    fn act(&self, x: &DVector<f64>) -> Result<(DVector<f64>, Duration)> {
        let sol = self.solve(x)?;
        Ok((sol.u0().clone(), sol.solve_time))
    }
}

/// `u = −K x`.
#[derive(Clone, Debug)]
pub struct LinearFeedback {
    pub k: DMatrix<f64>,
}

impl Policy for LinearFeedback {
    fn name(&self) -> &str {
        "linear"
    }

    fn act(&self, x: &DVector<f64>) -> Result<(DVector<f64>, Duration)> {
        Ok((-&self.k * x, Duration::ZERO))
    }
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub steps: usize,
    pub mode: DisturbanceMode,
    pub seed: u64,
    pub controller: String,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            steps: 20,
            mode: DisturbanceMode::UniformInterval,
            seed: 0,
            controller: "gcmpc".into(),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct SimTrace {
    pub controller: String,
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub deltas: Vec<DMatrix<f64>>,
    pub stage_costs: Vec<f64>,
    pub solve_times: Vec<Duration>,
    /// `x_Tᵀ P_N x_T`.
    pub terminal_cost: f64,
    pub total_cost: f64,
    /// Reason the run stopped early, if it did.
    pub halted: Option<String>,
}

impl SimTrace {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn write_csv<W: Write>(&self, out: W, with_timing: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.states.first().map_or(0, |x| x.len());
        let m = self.inputs.first().map_or(0, |u| u.len());
        let pl = self.deltas.first().map_or(0, |d| d.len());
        let mut header = vec!["step".to_string()];
        header.extend((0..n).map(|i| format!("x{i}")));
        header.extend((0..m).map(|i| format!("u{i}")));
        header.extend((0..pl).map(|i| format!("d{i}")));
        header.push("delta_norm".into());
        header.push("stage_cost".into());
        if with_timing {
            header.push("solve_time_us".into());
        }
        w.write_record(&header)?;
        for (k, x) in self.states.iter().enumerate() {
            let mut rec = vec![k.to_string()];
            rec.extend(x.iter().map(|v| v.to_string()));
            if k < self.inputs.len() {
                rec.extend(self.inputs[k].iter().map(|v| v.to_string()));
                let d = &self.deltas[k];
                rec.extend(d.transpose().iter().map(|v| v.to_string()));
                rec.push(op_norm2(d).to_string());
                rec.push(self.stage_costs[k].to_string());
                if with_timing {
                    rec.push(self.solve_times[k].as_micros().to_string());
                }
            } else {
                rec.extend(std::iter::repeat(String::new()).take(m + pl + 2 + with_timing as usize));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Queries `policy` at each measured state, applies a sampled `Δ`, and
/// records everything. A policy error stops the run and is kept in
/// `halted`.
pub fn run_closed_loop(
    policy: &dyn Policy,
    sys: &UncertainSystem,
    weights: &CostWeights,
    x0: &DVector<f64>,
    cfg: &SimConfig,
) -> Result<SimTrace> {
    if cfg.steps == 0 {
        return Err(Error::InvalidArgument("steps must be at least 1".into()));
    }
    let mut rng = run_rng(cfg.seed, 0);
    let (p, l) = (sys.unc.p(), sys.unc.l());
    let mut tr = SimTrace {
        controller: cfg.controller.clone(),
        states: vec![x0.clone()],
        ..Default::default()
    };
    for _ in 0..cfg.steps {
        let x = tr.states.last().unwrap().clone();
        let (u, t) = match policy.act(&x) {
            Ok(r) => r,
            Err(e) => {
                tr.halted = Some(e.to_string());
                break;
            }
        };
        let delta = match cfg.mode {
            DisturbanceMode::BoundaryWorst => boundary_worst(sys, &x, &u, &mut rng),
            mode => sample_disturbance(mode, p, l, &mut rng),
        };
        let next = sys.step_uncertain(&delta, &x, &u)?;
        tr.stage_costs.push(weights.stage_cost(&x, &u));
        tr.inputs.push(u);
        tr.deltas.push(delta);
        tr.solve_times.push(t);
        tr.states.push(next);
    }
    tr.terminal_cost = quad(weights.terminal(), tr.states.last().unwrap());
    tr.total_cost = tr.stage_costs.iter().sum::<f64>() + tr.terminal_cost;
    Ok(tr)
}

/// `plan.bound − J`, where `J` is the realized cost over the plan horizon
/// with `S` as terminal weight. Positive means the bound held.
pub fn check_cost_bound(trace: &SimTrace, weights: &CostWeights, s: &DMatrix<f64>, plan: &PlanResult) -> Result<f64> {
    let n = plan.v.len();
    if trace.steps() < n {
        return Err(Error::TraceTooShort {
            got: trace.steps(),
            need: n,
        });
    }
    let stages: f64 = (0..n).map(|k| weights.stage_cost(&trace.states[k], &trace.inputs[k])).sum();
    Ok(plan.bound - stages - quad(s, &trace.states[n]))
}

/// Outcome of one disturbed rollout of a fixed plan.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanCheck {
    /// `plan.bound − realized cost`.
    pub margin: f64,
    /// Largest original-constraint row value over the horizon (the
    /// terminal state is checked with `u = −K x_N`).
    pub violation: f64,
    /// `max_k (‖w_k‖ − φ̄_k)`.
    pub phi_excess: f64,
}

/// Rolls `plan` out `n_runs` times under `u_k = −K x̄_k + v_k` with sampled
/// `Δ`; run `i` uses stream `i` of `seed`.
pub fn plan_monte_carlo(
    ctrl: &GcmpcController,
    plan: &PlanResult,
    n_runs: usize,
    seed: u64,
    dist: DisturbanceMode,
    mode: ExecMode,
) -> Result<Vec<PlanCheck>> {
    let (p, l) = (ctrl.sys.unc.p(), ctrl.sys.unc.l());
    let phibar = ctrl.tables.phi_bar(&plan.xnom, &plan.v);
    let horizon = plan.v.len();
    map_indexed(n_runs, mode, |run| {
        let mut rng = run_rng(seed, run);
        let deltas: Vec<DMatrix<f64>> = (0..horizon)
            .map(|_| sample_disturbance(dist, p, l, &mut rng))
            .collect();
        let r = ctrl.rollout(plan, &deltas)?;
        let margin = plan.bound - ctrl.realized_cost(&r);
        let mut violation = f64::NEG_INFINITY;
        for k in 0..=horizon {
            let con = ctrl.constraints.at(k.min(horizon - 1));
            let u = if k < horizon { r.inputs[k].clone() } else { -&ctrl.gcc.k * &r.states[k] };
            violation = violation.max(con.check_membership(&r.states[k], &u)?.worst);
        }
        let phi_excess = r
            .w
            .iter()
            .zip(&phibar)
            .map(|(w, pb)| w.norm() - pb)
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(PlanCheck {
            margin,
            violation,
            phi_excess,
        })
    })
    .into_iter()
    .collect()
}

/// Five-number summary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl BoxStats {
    /// Quartiles by linear interpolation; `None` for an empty sample.
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut s = samples.to_vec();
        s.sort_by(|a, b| a.total_cmp(b));
        let q = |p: f64| {
            let pos = p * (s.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
        };
        Some(Self {
            min: s[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: s[s.len() - 1],
        })
    }
}

#[derive(Clone, Debug)]
pub struct BenchEntry {
    pub controller: String,
    /// Solve times in seconds, one per solved state.
    pub samples: Vec<f64>,
    /// States the controller could not solve.
    pub skipped: usize,
    pub stats: Option<BoxStats>,
}

#[derive(Clone, Debug, Default)]
pub struct BenchReport {
    pub entries: Vec<BenchEntry>,
}

impl BenchReport {
    pub fn entry(&self, name: &str) -> Option<&BenchEntry> {
        self.entries.iter().find(|e| e.controller == name)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["controller", "run", "seconds"])?;
        for e in &self.entries {
            for (i, s) in e.samples.iter().enumerate() {
                w.write_record([e.controller.clone(), i.to_string(), s.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in &self.entries {
            writeln!(out, "[{}]", e.controller)?;
            writeln!(out, "samples = {}", e.samples.len())?;
            writeln!(out, "skipped = {}", e.skipped)?;
            if let Some(s) = e.stats {
                writeln!(
                    out,
                    "seconds = {{ min = {:.6e}, q1 = {:.6e}, median = {:.6e}, q3 = {:.6e}, max = {:.6e} }}",
                    s.min, s.q1, s.median, s.q3, s.max
                )?;
            }
        }
        Ok(())
    }
}

/// Times each policy on the same `n_runs` states drawn from `sampler`.
/// Runs sequentially so timings do not compete for cores.
pub fn benchmark(
    policies: &[&dyn Policy],
    n_runs: usize,
    mut sampler: impl FnMut(usize) -> DVector<f64>,
) -> Result<BenchReport> {
    if n_runs < 10 {
        return Err(Error::InvalidArgument("benchmark needs at least 10 runs".into()));
    }
    let states: Vec<DVector<f64>> = (0..n_runs).map(&mut sampler).collect();
    let mut report = BenchReport::default();
    for p in policies {
        let mut samples = Vec::with_capacity(n_runs);
        let mut skipped = 0;
        for x in &states {
            match p.act(x) {
                Ok((_, t)) => samples.push(t.as_secs_f64()),
                Err(_) => skipped += 1,
            }
        }
        report.entries.push(BenchEntry {
            controller: p.name().to_string(),
            stats: BoxStats::from_samples(&samples),
            samples,
            skipped,
        });
    }
    Ok(report)
}

/// `count` states uniform in `‖x‖∞ ≤ radius`.
pub fn uniform_box_states(n: usize, radius: f64, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = run_rng(seed, 0);
    (0..count)
        .map(|_| DVector::from_fn(n, |_, _| rng.gen_range(-radius..=radius)))
        .collect()
}
