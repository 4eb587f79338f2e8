//! Guaranteed-cost MPC: GCC pre-stabilization `u = −K x + v` plus an
//! optimized correction sequence `v` under the robust constraint rows.
//!
//! ```text
//! minimize    Σ v_kᵀ R̄ v_k + x_0ᵀ S x_0
//! subject to  x_{k+1} = (F − GK) x_k + G v_k
//!             robust rows at k = 0..N-1
//! ```
//!
//! States are eliminated, so the decision vector is `v_0..v_{N-1}` stacked.

use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::conic::{solve_cone, ConeProgram, ConeRow, KktResiduals, NormAtom, SolverSettings, SparseVec, Status};
use crate::error::{Error, Result};
use crate::linalg::quad;
use crate::model::{ConstraintSchedule, CostWeights, UncertainSystem};
use crate::riccati::{
    gcc_select_epsilon, gcc_solve_infinite, EpsilonCriterion, FixedPointOptions, GccSolution,
};
use crate::tightening::{
    assemble_robust_constraints, deadbeat_gain, RhoVariant, RobustConstraintSystem, TighteningTables,
    TubeGain,
};

#[derive(Clone, Debug)]
pub enum EpsilonMode {
    Select(EpsilonCriterion),
    Pinned(f64),
}

impl Default for EpsilonMode {
    fn default() -> Self {
        Self::Select(EpsilonCriterion::Trace)
    }
}

/// Source of the tube gain `K̃`.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum TubeChoice {
    #[default]
    Deadbeat,
    /// `K̃ = K`, the GCC gain.
    Gcc,
    Given(DMatrix<f64>),
}

#[derive(Clone, Debug, Default)]
pub struct ControllerOptions {
    pub epsilon: EpsilonMode,
    pub tube: TubeChoice,
    pub rho_variant: RhoVariant,
    pub solver: SolverSettings,
}

#[derive(Clone, Debug)]
pub struct GcmpcController {
    pub sys: UncertainSystem,
    pub weights: CostWeights,
    pub constraints: ConstraintSchedule,
    pub gcc: GccSolution,
    pub tube: TubeGain,
    pub tables: TighteningTables,
    pub robust: RobustConstraintSystem,
    pub horizon: usize,
    pub solver: SolverSettings,
    /// `(F − GK)^k` for `k = 0..N`.
    acl_pow: Vec<DMatrix<f64>>,
    /// `x_k = acl_pow[k]·x_0 + phi[k]·v`.
    phi: Vec<DMatrix<f64>>,
}

#[derive(Clone, Debug)]
pub struct PlanDiagnostics {
    pub status: Status,
    pub iterations: usize,
    pub residuals: KktResiduals,
    /// Conic solve only, excluding program assembly.
    pub solve_time: Duration,
    pub n_vars: usize,
    pub n_rows: usize,
    pub n_atoms: usize,
}

#[derive(Clone, Debug)]
pub struct PlanResult {
    pub v: Vec<DVector<f64>>,
    /// Nominal closed-loop states `x_0..x_N`.
    pub xnom: Vec<DVector<f64>>,
    pub u0: DVector<f64>,
    /// `x_0ᵀ S x_0 + Σ v_kᵀ R̄ v_k`.
    pub bound: f64,
    pub diagnostics: PlanDiagnostics,
}

impl PlanResult {
    /// Structured-text record of the plan. Wall-clock time is only written
    /// when `with_timing` is set, so the record is otherwise reproducible.
    pub fn write_text<W: Write>(&self, mut out: W, with_timing: bool) -> std::io::Result<()> {
        let fmt = |v: &DVector<f64>| v.iter().map(|x| format!("{x:.12e}")).collect::<Vec<_>>().join(", ");
        writeln!(out, "bound = {:.12e}", self.bound)?;
        writeln!(out, "u0 = [{}]", fmt(&self.u0))?;
        writeln!(out, "v = [")?;
        for v in &self.v {
            writeln!(out, "  [{}],", fmt(v))?;
        }
        writeln!(out, "]")?;
        writeln!(out, "xnom = [")?;
        for x in &self.xnom {
            writeln!(out, "  [{}],", fmt(x))?;
        }
        writeln!(out, "]")?;
        let d = &self.diagnostics;
        writeln!(out, "[diagnostics]")?;
        writeln!(out, "status = \"{}\"", d.status)?;
        writeln!(out, "iterations = {}", d.iterations)?;
        if with_timing {
            writeln!(out, "solve_time_us = {}", d.solve_time.as_micros())?;
        }
        writeln!(out, "n_vars = {}", d.n_vars)?;
        writeln!(out, "n_rows = {}", d.n_rows)?;
        writeln!(out, "n_atoms = {}", d.n_atoms)?;
        writeln!(
            out,
            "residuals = {{ primal = {:.3e}, dual = {:.3e}, gap = {:.3e} }}",
            d.residuals.primal, d.residuals.dual, d.residuals.gap
        )
    }
}

/// A realized closed-loop rollout of a plan.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    /// `w_k = Δ_k (Ẽ1 x̄_k + E2 v_k)`.
    pub w: Vec<DVector<f64>>,
}

impl GcmpcController {
    pub fn build(
        sys: UncertainSystem,
        weights: CostWeights,
        constraints: ConstraintSchedule,
        horizon: usize,
        opts: &ControllerOptions,
    ) -> Result<Self> {
        let gcc = match &opts.epsilon {
            EpsilonMode::Pinned(eps) => gcc_solve_infinite(&sys, &weights, *eps, FixedPointOptions::default())?,
            EpsilonMode::Select(c) => gcc_select_epsilon(&sys, &weights, c, None)?.1,
        };
        Self::from_gcc(sys, weights, constraints, horizon, gcc, opts)
    }

    /// Assembles a controller around an already synthesized GCC solution.
    pub fn from_gcc(
        sys: UncertainSystem,
        weights: CostWeights,
        constraints: ConstraintSchedule,
        horizon: usize,
        gcc: GccSolution,
        opts: &ControllerOptions,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        let tube = match &opts.tube {
            TubeChoice::Deadbeat => deadbeat_gain(&sys.nominal)?,
            TubeChoice::Gcc => TubeGain::from_gain(&sys.nominal, gcc.k.clone())?,
            TubeChoice::Given(k) => TubeGain::from_gain(&sys.nominal, k.clone())?,
        };
        let tables = TighteningTables::build(&sys, &gcc.k, &tube, &constraints, horizon, opts.rho_variant)?;
        let robust = assemble_robust_constraints(&constraints, &tables);

        let (n, m) = (sys.n(), sys.m());
        let acl = sys.nominal.f() - sys.nominal.g() * &gcc.k;
        let mut acl_pow = vec![DMatrix::identity(n, n)];
        let mut phi = vec![DMatrix::zeros(n, horizon * m)];
        for k in 0..horizon {
            acl_pow.push(&acl * &acl_pow[k]);
            let mut next = &acl * &phi[k];
            next.view_mut((0, k * m), (n, m)).copy_from(sys.nominal.g());
            phi.push(next);
        }
        Ok(Self {
            sys,
            weights,
            constraints,
            gcc,
            tube,
            tables,
            robust,
            horizon,
            solver: opts.solver.clone(),
            acl_pow,
            phi,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.horizon * self.sys.m()
    }

    /// Builds the conic program for initial state `x`.
    pub fn program(&self, x: &DVector<f64>) -> Result<ConeProgram> {
        if x.len() != self.sys.n() {
            return Err(Error::Dimension(format!("state has length {}, expected {}", x.len(), self.sys.n())));
        }
        let m = self.sys.m();
        let d = self.n_vars();
        let mut p = ConeProgram::new(d);
        let rbar2 = &self.gcc.rbar * 2.0;
        for k in 0..self.horizon {
            p.add_quadratic_block(k * m, &rbar2);
        }
        p.set_constant(quad(&self.gcc.s, x));

        let free: Vec<DVector<f64>> = self.acl_pow.iter().map(|a| a * x).collect();
        let (e1t, e2) = (&self.tables.e1tilde, &self.tables.e2);
        // atom maps Ẽ1 x_t + E2 v_t over the columns v_0..v_t
        let atom_maps: Vec<(DMatrix<f64>, DVector<f64>)> = (0..self.horizon)
            .map(|t| {
                let cols = (t + 1) * m;
                let mut mat = e1t * self.phi[t].columns(0, cols);
                let mut e2blk = mat.columns_mut(t * m, m);
                e2blk += e2;
                (mat, e1t * &free[t])
            })
            .collect();

        for row in &self.robust.rows {
            let k = row.step;
            let mut lin = (row.a.transpose() * &self.phi[k]).transpose();
            for j in 0..m {
                lin[k * m + j] += row.b[j];
            }
            let constant = row.a.dot(&free[k]) + row.c;
            let mut cr = ConeRow::linear(SparseVec::from_dense(lin.as_slice(), 0), constant);
            for atom in &row.atoms {
                let (mat, off) = &atom_maps[atom.t];
                cr = cr.with_atom(NormAtom::new(
                    atom.coef,
                    (0..mat.ncols()).collect(),
                    mat.clone(),
                    off.clone(),
                ));
            }
            p.add_row(cr);
        }
        Ok(p)
    }

    pub fn plan(&self, x: &DVector<f64>) -> Result<PlanResult> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("state must be finite".into()));
        }
        let prog = self.program(x)?;
        let start = Instant::now();
        let sol = solve_cone(&prog, &self.solver)?;
        let solve_time = start.elapsed();
        match sol.status {
            Status::Optimal => {}
            Status::Infeasible => return Err(Error::RobustInfeasible),
            s => return Err(Error::Solver(format!("plan solve ended with status {s}"))),
        }
        let m = self.sys.m();
        let v: Vec<DVector<f64>> = (0..self.horizon)
            .map(|k| sol.z.rows(k * m, m).into_owned())
            .collect();
        let xnom = self.nominal_rollout(x, &v);
        let bound = quad(&self.gcc.s, x) + v.iter().map(|vk| quad(&self.gcc.rbar, vk)).sum::<f64>();
        let u0 = -&self.gcc.k * x + &v[0];
        Ok(PlanResult {
            v,
            xnom,
            u0,
            bound,
            diagnostics: PlanDiagnostics {
                status: sol.status,
                iterations: sol.iterations,
                residuals: sol.residuals,
                solve_time,
                n_vars: prog.dim(),
                n_rows: prog.rows().len(),
                n_atoms: prog.n_atoms(),
            },
        })
    }

    /// `x_{k+1} = (F − GK) x_k + G v_k` step by step.
    pub fn nominal_rollout(&self, x: &DVector<f64>, v: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let acl = &self.acl_pow[1];
        let g = self.sys.nominal.g();
        let mut xs = Vec::with_capacity(v.len() + 1);
        xs.push(x.clone());
        for vk in v {
            let next = acl * xs.last().unwrap() + g * vk;
            xs.push(next);
        }
        xs
    }

    /// Receding-horizon action `u = −K x̄ + v_0` from a fresh solve.
    pub fn control_step(&self, xbar: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.plan(xbar)?.u0)
    }

    /// Applies `u_k = −K x̄_k + v_k` from `plan` under the realized `Δ_k`,
    /// for as many steps as `deltas` (at most the horizon).
    pub fn rollout(&self, plan: &PlanResult, deltas: &[DMatrix<f64>]) -> Result<Rollout> {
        let steps = deltas.len().min(plan.v.len());
        let (e1, e2) = (self.sys.unc.e1(), self.sys.unc.e2());
        let mut states = vec![plan.xnom[0].clone()];
        let mut inputs = Vec::with_capacity(steps);
        let mut w = Vec::with_capacity(steps);
        for (k, delta) in deltas.iter().take(steps).enumerate() {
            let x = &states[k];
            let u = -&self.gcc.k * x + &plan.v[k];
            w.push(delta * (e1 * x + e2 * &u));
            let next = self.sys.step_uncertain(delta, x, &u)?;
            inputs.push(u);
            states.push(next);
        }
        Ok(Rollout { states, inputs, w })
    }

    /// Realized `Σ_{k<N} (x̄_kᵀQx̄_k + u_kᵀRu_k) + x̄_Nᵀ S x̄_N`.
    pub fn realized_cost(&self, r: &Rollout) -> f64 {
        let stages: f64 = r
            .inputs
            .iter()
            .zip(&r.states)
            .map(|(u, x)| self.weights.stage_cost(x, u))
            .sum();
        stages + quad(&self.gcc.s, r.states.last().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::bundled_example;

    fn controller(horizon: usize) -> GcmpcController {
        let prob = bundled_example().unwrap();
        let opts = ControllerOptions {
            epsilon: EpsilonMode::Pinned(0.018),
            tube: TubeChoice::Given(prob.ktilde.clone().unwrap()),
            ..Default::default()
        };
        GcmpcController::build(prob.sys, prob.weights, prob.constraints, horizon, &opts).unwrap()
    }

    #[test]
    fn origin_plan_is_zero() {
        let c = controller(10);
        let r = c.plan(&DVector::zeros(3)).unwrap();
        assert!(r.bound.abs() < 1e-9);
        assert!(r.v.iter().all(|v| v.amax() < 1e-7));
        assert!(r.u0.amax() < 1e-7);
    }

    #[test]
    fn horizon_one_is_linear() {
        let c = controller(1);
        assert_eq!(c.robust.n_atoms(), 0);
        assert!(c.robust.rows.iter().all(|r| r.step == 0));
    }

    #[test]
    fn nominal_states_follow_closed_loop() {
        let c = controller(10);
        let x0 = DVector::from_element(3, 1.0);
        let r = c.plan(&x0).unwrap();
        assert!(r.bound >= quad(&c.gcc.s, &x0));
        for k in 0..10 {
            let u = -&c.gcc.k * &r.xnom[k] + &r.v[k];
            let next = c.sys.step_nominal(&r.xnom[k], &u).unwrap();
            assert!((next - &r.xnom[k + 1]).amax() < 1e-8);
        }
    }
}
