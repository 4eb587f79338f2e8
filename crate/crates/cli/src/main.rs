//! `gcmpc` command-line front end.
//!
//! Exit codes: 0 success, 1 infeasible problem or failed synthesis (also a
//! failed `reproduce-paper` check), 2 bad input file or arguments, 3
//! internal solver or output failure.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};

use gcmpc::controller::{ControllerOptions, EpsilonMode, GcmpcController, TubeChoice};
use gcmpc::ermpc::{ErmpcController, DEFAULT_NODE_CAP};
use gcmpc::parallel::ExecMode;
use gcmpc::problem::{bundled_example, Problem};
use gcmpc::reproduce::{run_checks, write_report, ReproOptions};
use gcmpc::riccati::{gcc_epsilon_interval, gcc_select_epsilon, gcc_solve_infinite, EpsilonCriterion, FixedPointOptions};
use gcmpc::sim::{
    benchmark, run_closed_loop, uniform_box_states, DisturbanceMode, LinearFeedback, Policy, SimConfig, SimTrace,
};
use gcmpc::tightening::RhoVariant;
use gcmpc::Error;

#[derive(Parser)]
#[command(name = "gcmpc", version, about = "Guaranteed-cost MPC for linear systems with norm-bounded uncertainty")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the feasible ε interval, the selected ε and S, K, R̄.
    Synth(Common),
    /// Solve the GCMPC problem at one state.
    Plan {
        #[command(flatten)]
        common: Common,
        /// Comma-separated state; defaults to `x0` from the problem file.
        #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
        state: Option<DVector<f64>>,
        /// Also write the tightening tables to this file.
        #[arg(long)]
        tables_out: Option<PathBuf>,
        /// Include the solve time in the output.
        #[arg(long)]
        timing: bool,
    },
    /// Closed-loop simulation; writes a trace CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, value_enum, default_value_t = ControllerKind::Gcmpc)]
        controller: ControllerKind,
    },
    /// GCMPC and ERMPC side by side from the same state and disturbances.
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Solve-time comparison over random states in a box.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        /// States are drawn uniformly from ‖x‖∞ ≤ radius.
        #[arg(long, default_value_t = 0.5)]
        radius: f64,
        /// Skip the enumeration controller.
        #[arg(long)]
        no_ermpc: bool,
        /// Per-run timings as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the bundled example and compare against the reference values.
    ReproducePaper {
        #[arg(long, default_value_t = 500)]
        mc_runs: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also run the solve-time comparison on this many states.
        #[arg(long)]
        timing_states: Option<usize>,
        /// Run Monte-Carlo batches on one thread.
        #[arg(long)]
        sequential: bool,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// Problem file (TOML); the bundled three-state example when omitted.
    #[arg(long, short)]
    problem: Option<PathBuf>,
    /// Pin ε instead of using the problem file value or selecting one.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Tube gain source; `file` when the problem file has `Ktilde`,
    /// `deadbeat` otherwise.
    #[arg(long, value_enum)]
    tube: Option<TubeKind>,
    #[arg(long, value_enum, default_value_t = RhoKind::E1)]
    rho_variant: RhoKind,
}

#[derive(Args, Clone)]
struct SimArgs {
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<DisturbanceMode>,
    #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
    state: Option<DVector<f64>>,
    /// Trace CSV path (stdout when omitted). `compare` writes
    /// `<stem>.gcmpc.csv` and `<stem>.ermpc.csv`.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Add a solve-time column to traces.
    #[arg(long)]
    timing: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum TubeKind {
    Deadbeat,
    Gcc,
    File,
}

#[derive(Clone, Copy, ValueEnum)]
enum RhoKind {
    E1,
    E1tilde,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ControllerKind {
    Gcmpc,
    Ermpc,
    /// Unconstrained guaranteed-cost feedback `u = −Kx`.
    Gcc,
}

fn parse_vector(s: &str) -> Result<DVector<f64>, String> {
    let vals: Result<Vec<f64>, _> = s.split(',').map(|t| t.trim().parse::<f64>()).collect();
    match vals {
        Ok(v) if !v.is_empty() && v.iter().all(|x| x.is_finite()) => Ok(DVector::from_vec(v)),
        _ => Err(format!("expected comma-separated finite numbers, got `{s}`")),
    }
}

fn parse_mode(s: &str) -> Result<DisturbanceMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Error class to exit code.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InfeasibleEpsilon { .. }
        | Error::NoConvergence(_)
        | Error::NoFeasibleEpsilon(_)
        | Error::Uncontrollable { .. }
        | Error::UnstableTube(_)
        | Error::EmptyConstraintSet
        | Error::RobustInfeasible
        | Error::TreeTooLarge { .. } => 1,
        Error::ProblemFile { .. }
        | Error::Dimension(_)
        | Error::InvalidArgument(_)
        | Error::OutsideUncertaintySet(_)
        | Error::TraceTooShort { .. } => 2,
        Error::Solver(_) | Error::Io(_) | Error::Csv(_) => 3,
    }
}

struct Loaded {
    prob: Problem,
    horizon: usize,
    seed: u64,
}

fn load(c: &Common) -> Result<Loaded, Error> {
    let prob = match &c.problem {
        Some(p) => Problem::load(p)?,
        None => bundled_example()?,
    };
    if let Some(e) = c.epsilon {
        if !(e > 0.0 && e.is_finite()) {
            return Err(Error::InvalidArgument(format!("--epsilon must be positive, got {e}")));
        }
    }
    let horizon = c.horizon.unwrap_or(prob.horizon);
    if horizon == 0 {
        return Err(Error::InvalidArgument("--horizon must be at least 1".into()));
    }
    let seed = c.seed.unwrap_or(prob.sim.seed);
    Ok(Loaded { prob, horizon, seed })
}

fn controller_options(c: &Common, prob: &Problem) -> Result<ControllerOptions, Error> {
    let epsilon = match c.epsilon.or(prob.epsilon) {
        Some(e) => EpsilonMode::Pinned(e),
        None => EpsilonMode::Select(EpsilonCriterion::Trace),
    };
    let kind = c.tube.unwrap_or(if prob.ktilde.is_some() { TubeKind::File } else { TubeKind::Deadbeat });
    let tube = match kind {
        TubeKind::Deadbeat => TubeChoice::Deadbeat,
        TubeKind::Gcc => TubeChoice::Gcc,
        TubeKind::File => TubeChoice::Given(
            prob.ktilde
                .clone()
                .ok_or_else(|| Error::ProblemFile { line: None, msg: "--tube file needs `Ktilde` in the problem file".into() })?,
        ),
    };
    let rho_variant = match c.rho_variant {
        RhoKind::E1 => RhoVariant::E1,
        RhoKind::E1tilde => RhoVariant::E1Tilde,
    };
    Ok(ControllerOptions {
        epsilon,
        tube,
        rho_variant,
        ..Default::default()
    })
}

fn build_gcmpc(c: &Common, l: &Loaded) -> Result<GcmpcController, Error> {
    let opts = controller_options(c, &l.prob)?;
    GcmpcController::build(
        l.prob.sys.clone(),
        l.prob.weights.clone(),
        l.prob.constraints.clone(),
        l.horizon,
        &opts,
    )
}

fn build_ermpc(l: &Loaded, terminal: &DMatrix<f64>) -> Result<ErmpcController, Error> {
    ErmpcController::new(
        l.prob.sys.clone(),
        l.prob.weights.with_terminal(terminal.clone())?,
        &l.prob.constraints,
        l.horizon,
        DEFAULT_NODE_CAP,
        ExecMode::Parallel,
    )
}

fn initial_state(state: &Option<DVector<f64>>, prob: &Problem) -> Result<DVector<f64>, Error> {
    let x = state
        .clone()
        .or_else(|| prob.x0.clone())
        .ok_or_else(|| Error::InvalidArgument("no --state given and the problem file has no x0".into()))?;
    if x.len() != prob.sys.n() {
        return Err(Error::Dimension(format!("state has length {}, expected {}", x.len(), prob.sys.n())));
    }
    Ok(x)
}

fn fmt_matrix(m: &DMatrix<f64>) -> String {
    let rows: Vec<String> = m
        .row_iter()
        .map(|r| format!("[{}]", r.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(", ")))
        .collect();
    format!("[{}]", rows.join(",\n     "))
}

fn synth(c: &Common, out: &mut dyn Write) -> Result<(), Error> {
    let l = load(c)?;
    let (sys, w) = (&l.prob.sys, &l.prob.weights);
    let interval = gcc_epsilon_interval(sys, w, 1e-6)?;
    let (selected, _) = gcc_select_epsilon(sys, w, &EpsilonCriterion::Trace, Some(interval))?;
    let used = c.epsilon.or(l.prob.epsilon).unwrap_or(selected);
    let sol = gcc_solve_infinite(sys, w, used, FixedPointOptions::default())?;
    writeln!(out, "epsilon_interval = [0.0, {:.6e}]", interval.hi)?;
    writeln!(out, "epsilon_selected = {selected:.6e}  # argmin trace(S)")?;
    writeln!(out, "epsilon = {used:.6e}")?;
    writeln!(out, "iterations = {}", sol.iterations)?;
    writeln!(out, "S = {}", fmt_matrix(&sol.s))?;
    writeln!(out, "K = {}", fmt_matrix(&sol.k))?;
    writeln!(out, "Rbar = {}", fmt_matrix(&sol.rbar))?;
    Ok(())
}

fn open_out(path: &Option<PathBuf>) -> Result<Box<dyn Write>, Error> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn sim_config(l: &Loaded, s: &SimArgs, name: &str) -> SimConfig {
    SimConfig {
        steps: s.steps.unwrap_or(l.prob.sim.steps),
        mode: s.mode.unwrap_or(l.prob.sim.mode),
        seed: l.seed,
        controller: name.into(),
    }
}

fn write_trace_summary(tr: &SimTrace, out: &mut dyn Write) -> io::Result<()> {
    writeln!(out, "[{}]", tr.controller)?;
    writeln!(out, "steps = {}", tr.steps())?;
    writeln!(out, "total_cost = {:.6e}", tr.total_cost)?;
    let xmax = tr.states.iter().map(|x| x.amax()).fold(0.0, f64::max);
    writeln!(out, "max_abs_state = {xmax:.6e}")?;
    writeln!(out, "final_state_norm = {:.6e}", tr.states.last().map_or(0.0, |x| x.norm()))?;
    if let Some(h) = &tr.halted {
        writeln!(out, "halted = \"{h}\"")?;
    }
    Ok(())
}

fn suffixed(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{tag}.csv"))
}

fn run(cli: Cli) -> Result<u8, Error> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.cmd {
        Command::Synth(c) => synth(&c, &mut out)?,
        Command::Plan {
            common,
            state,
            tables_out,
            timing,
        } => {
            let l = load(&common)?;
            let x = initial_state(&state, &l.prob)?;
            let ctrl = build_gcmpc(&common, &l)?;
            if let Some(p) = tables_out {
                let mut f = BufWriter::new(File::create(p)?);
                ctrl.tables.write_text(&mut f)?;
                f.flush()?;
            }
            let plan = ctrl.plan(&x)?;
            writeln!(out, "epsilon = {:.6e}", ctrl.gcc.eps)?;
            plan.write_text(&mut out, timing)?;
        }
        Command::Simulate { common, sim, controller } => {
            let l = load(&common)?;
            let x0 = initial_state(&sim.state, &l.prob)?;
            let ctrl = build_gcmpc(&common, &l)?;
            let lin;
            let er;
            let policy: &dyn Policy = match controller {
                ControllerKind::Gcmpc => &ctrl,
                ControllerKind::Gcc => {
                    lin = LinearFeedback { k: ctrl.gcc.k.clone() };
                    &lin
                }
                ControllerKind::Ermpc => {
                    er = build_ermpc(&l, &ctrl.gcc.s)?;
                    &er
                }
            };
            let cfg = sim_config(&l, &sim, policy.name());
            let tr = run_closed_loop(policy, &l.prob.sys, &l.prob.weights, &x0, &cfg)?;
            match &sim.trace_out {
                Some(_) => {
                    tr.write_csv(open_out(&sim.trace_out)?, sim.timing)?;
                    write_trace_summary(&tr, &mut out)?;
                }
                None => tr.write_csv(&mut out, sim.timing)?,
            }
            if tr.halted.is_some() {
                return Ok(1);
            }
        }
        Command::Compare { common, sim } => {
            let l = load(&common)?;
            let x0 = initial_state(&sim.state, &l.prob)?;
            let ctrl = build_gcmpc(&common, &l)?;
            let er = build_ermpc(&l, &ctrl.gcc.s)?;
            let mut halted = false;
            for policy in [&ctrl as &dyn Policy, &er] {
                let cfg = sim_config(&l, &sim, policy.name());
                let tr = run_closed_loop(policy, &l.prob.sys, &l.prob.weights, &x0, &cfg)?;
                if let Some(p) = &sim.trace_out {
                    tr.write_csv(BufWriter::new(File::create(suffixed(p, policy.name()))?), sim.timing)?;
                }
                write_trace_summary(&tr, &mut out)?;
                halted |= tr.halted.is_some();
            }
            if halted {
                return Ok(1);
            }
        }
        Command::Bench {
            common,
            runs,
            radius,
            no_ermpc,
            out: csv_out,
        } => {
            if !(radius > 0.0 && radius.is_finite()) {
                return Err(Error::InvalidArgument(format!("--radius must be positive, got {radius}")));
            }
            let l = load(&common)?;
            let ctrl = build_gcmpc(&common, &l)?;
            let er = if no_ermpc { None } else { Some(build_ermpc(&l, &ctrl.gcc.s)?) };
            let mut policies: Vec<&dyn Policy> = vec![&ctrl];
            if let Some(e) = &er {
                policies.push(e);
            }
            let states = uniform_box_states(l.prob.sys.n(), radius, runs, l.seed);
            let report = benchmark(&policies, runs, |i| states[i].clone())?;
            if let Some(p) = csv_out {
                report.write_csv(BufWriter::new(File::create(p)?))?;
            }
            report.write_summary(&mut out)?;
            if let (Some(g), Some(e)) = (
                report.entry(ctrl.name()).and_then(|e| e.stats),
                er.as_ref().and_then(|er| report.entry(er.name())).and_then(|e| e.stats),
            ) {
                writeln!(out, "median_speedup = {:.1}", e.median / g.median)?;
            }
        }
        Command::ReproducePaper {
            mc_runs,
            seed,
            timing_states,
            sequential,
        } => {
            let opts = ReproOptions {
                mc_runs,
                seed,
                timing_states,
                mode: if sequential { ExecMode::Sequential } else { ExecMode::Parallel },
            };
            let checks = run_checks(&opts)?;
            write_report(&checks, &mut out)?;
            let failed = checks.iter().filter(|c| !c.pass).count();
            writeln!(out, "{} of {} checks passed", checks.len() - failed, checks.len())?;
            if failed > 0 {
                return Ok(1);
            }
        }
    }
    out.flush()?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
