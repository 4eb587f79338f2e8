//! System, cost and constraint data together with the elementary
//! dynamics, cost and membership operations.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::conic::{solve_cone, ConeProgram, ConeRow, SparseVec, SolverSettings, Status};
use crate::error::{dim_err, Error, Result};
use crate::linalg::{all_finite, is_symmetric, max_abs, min_eigenvalue, op_norm2, quad, PSD_TOL};

/// Slack on `‖Δ‖₂ ≤ 1` accepted by [`UncertainSystem::step_uncertain`].
pub const DELTA_NORM_SLACK: f64 = 1e-12;

/// Default tolerance of [`StageConstraints::check_membership`].
pub const MEMBERSHIP_TOL: f64 = 1e-9;

fn check_vec(name: &str, v: &DVector<f64>, len: usize) -> Result<()> {
    if v.len() != len {
        return dim_err(format!("{name} has length {}, expected {len}", v.len()));
    }
    Ok(())
}

/// `x⁺ = F x + G u`.
#[derive(Clone, Debug, PartialEq)]
pub struct NominalSystem {
    f: DMatrix<f64>,
    g: DMatrix<f64>,
}

impl NominalSystem {
    pub fn new(f: DMatrix<f64>, g: DMatrix<f64>) -> Result<Self> {
        let n = f.nrows();
        if n == 0 || f.ncols() != n {
            return dim_err(format!("F must be square and nonempty, got {}x{}", n, f.ncols()));
        }
        if g.nrows() != n || g.ncols() == 0 {
            return dim_err(format!("G must be {n}xm with m >= 1, got {}x{}", g.nrows(), g.ncols()));
        }
        if !all_finite(&f) || !all_finite(&g) {
            return Err(Error::InvalidArgument("F and G must be finite".into()));
        }
        Ok(Self { f, g })
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn n(&self) -> usize {
        self.f.nrows()
    }

    pub fn m(&self) -> usize {
        self.g.ncols()
    }

    pub fn step_nominal(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_vec("x", x, self.n())?;
        check_vec("u", u, self.m())?;
        Ok(&self.f * x + &self.g * u)
    }
}

/// `[δF δG] = H Δ [E1 E2]` with `‖Δ‖₂ ≤ 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyStructure {
    h: DMatrix<f64>,
    e1: DMatrix<f64>,
    e2: DMatrix<f64>,
}

impl UncertaintyStructure {
    pub fn new(h: DMatrix<f64>, e1: DMatrix<f64>, e2: DMatrix<f64>) -> Result<Self> {
        if h.ncols() == 0 || e1.nrows() == 0 {
            return dim_err("H and E1 need at least one column/row");
        }
        if e1.nrows() != e2.nrows() {
            return dim_err(format!(
                "E1 and E2 must have the same row count, got {} and {}",
                e1.nrows(),
                e2.nrows()
            ));
        }
        if !all_finite(&h) || !all_finite(&e1) || !all_finite(&e2) {
            return Err(Error::InvalidArgument("H, E1, E2 must be finite".into()));
        }
        if h.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidArgument("H must have at least one nonzero entry".into()));
        }
        Ok(Self { h, e1, e2 })
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn e1(&self) -> &DMatrix<f64> {
        &self.e1
    }

    pub fn e2(&self) -> &DMatrix<f64> {
        &self.e2
    }

    /// Columns of `H` (the row count of `Δ`).
    pub fn p(&self) -> usize {
        self.h.ncols()
    }

    /// Rows of `E1`/`E2` (the column count of `Δ`).
    pub fn l(&self) -> usize {
        self.e1.nrows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UncertainSystem {
    pub nominal: NominalSystem,
    pub unc: UncertaintyStructure,
}

impl UncertainSystem {
    pub fn new(nominal: NominalSystem, unc: UncertaintyStructure) -> Result<Self> {
        let (n, m) = (nominal.n(), nominal.m());
        if unc.h.nrows() != n {
            return dim_err(format!("H has {} rows, expected {n}", unc.h.nrows()));
        }
        if unc.e1.ncols() != n {
            return dim_err(format!("E1 has {} columns, expected {n}", unc.e1.ncols()));
        }
        if unc.e2.ncols() != m {
            return dim_err(format!("E2 has {} columns, expected {m}", unc.e2.ncols()));
        }
        Ok(Self { nominal, unc })
    }

    pub fn n(&self) -> usize {
        self.nominal.n()
    }

    pub fn m(&self) -> usize {
        self.nominal.m()
    }

    pub fn check_delta(&self, delta: &DMatrix<f64>) -> Result<()> {
        if delta.shape() != (self.unc.p(), self.unc.l()) {
            return dim_err(format!(
                "Δ is {}x{}, expected {}x{}",
                delta.nrows(),
                delta.ncols(),
                self.unc.p(),
                self.unc.l()
            ));
        }
        let norm = op_norm2(delta);
        if !(norm <= 1.0 + DELTA_NORM_SLACK) {
            return Err(Error::OutsideUncertaintySet(norm));
        }
        Ok(())
    }

    /// `(F + HΔE1, G + HΔE2)`.
    pub fn perturbed(&self, delta: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_delta(delta)?;
        let hd = &self.unc.h * delta;
        Ok((
            self.nominal.f() + &hd * &self.unc.e1,
            self.nominal.g() + &hd * &self.unc.e2,
        ))
    }

    pub fn step_nominal(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.nominal.step_nominal(x, u)
    }

    pub fn step_uncertain(
        &self,
        delta: &DMatrix<f64>,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.check_delta(delta)?;
        let nominal = self.nominal.step_nominal(x, u)?;
        let w = delta * (&self.unc.e1 * x + &self.unc.e2 * u);
        Ok(nominal + &self.unc.h * w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostWeights {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    pn: DMatrix<f64>,
}

impl CostWeights {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, pn: DMatrix<f64>) -> Result<Self> {
        let n = q.nrows();
        if q.ncols() != n || pn.shape() != (n, n) {
            return dim_err("Q and P_N must be square with matching size");
        }
        if r.nrows() == 0 || r.ncols() != r.nrows() {
            return dim_err("R must be square and nonempty");
        }
        for (name, m) in [("Q", &q), ("R", &r), ("P_N", &pn)] {
            if !all_finite(m) {
                return Err(Error::InvalidArgument(format!("{name} must be finite")));
            }
            if !is_symmetric(m, PSD_TOL) {
                return Err(Error::InvalidArgument(format!("{name} must be symmetric")));
            }
        }
        for (name, m) in [("Q", &q), ("P_N", &pn)] {
            if min_eigenvalue(m) < -PSD_TOL * max_abs(m).max(1.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive semidefinite")));
            }
        }
        if !(min_eigenvalue(&r) > PSD_TOL * max_abs(&r)) {
            return Err(Error::InvalidArgument("R must be positive definite".into()));
        }
        Ok(Self { q, r, pn })
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn terminal(&self) -> &DMatrix<f64> {
        &self.pn
    }

    /// Same stage weights with a different terminal weight.
    pub fn with_terminal(&self, pn: DMatrix<f64>) -> Result<Self> {
        Self::new(self.q.clone(), self.r.clone(), pn)
    }

    pub fn stage_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        quad(&self.q, x) + quad(&self.r, u)
    }

    /// `x_Nᵀ P_N x_N + Σ_k (x_kᵀ Q x_k + u_kᵀ R u_k)`.
    pub fn eval_cost(&self, traj: &Trajectory) -> Result<f64> {
        let n = self.q.nrows();
        let m = self.r.nrows();
        for x in &traj.states {
            check_vec("state", x, n)?;
        }
        for u in &traj.inputs {
            check_vec("input", u, m)?;
        }
        let stages: f64 = traj
            .inputs
            .iter()
            .zip(&traj.states)
            .map(|(u, x)| self.stage_cost(x, u))
            .sum();
        Ok(stages + quad(&self.pn, traj.states.last().expect("nonempty")))
    }
}

/// Outcome of a membership test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Membership {
    pub inside: bool,
    /// Largest entry of `Ax + Bu + c`.
    pub worst: f64,
}

/// Polytope `{(x, u) : A x + B u + c ≤ 0}`.
#[derive(Clone, Debug, PartialEq)]
pub struct StageConstraints {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DVector<f64>,
}

impl StageConstraints {
    /// Validates shapes and certifies nonemptiness with a feasibility solve.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DVector<f64>) -> Result<Self> {
        let q = a.nrows();
        if b.nrows() != q || c.len() != q {
            return dim_err(format!(
                "A, B, c must share the row count, got {}, {}, {}",
                q,
                b.nrows(),
                c.len()
            ));
        }
        if a.ncols() == 0 || b.ncols() == 0 {
            return dim_err("A and B need at least one column");
        }
        if !all_finite(&a) || !all_finite(&b) || c.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("A, B, c must be finite".into()));
        }
        let con = Self { a, b, c };
        if !con.is_nonempty()? {
            return Err(Error::EmptyConstraintSet);
        }
        Ok(con)
    }

    /// Minimum-norm point of the polytope; infeasibility is reported by the
    /// solver's certificate.
    fn is_nonempty(&self) -> Result<bool> {
        let (n, m) = (self.n(), self.m());
        let d = n + m;
        let mut p = ConeProgram::new(d);
        for i in 0..d {
            p.add_quadratic(i, i, 1.0);
        }
        for i in 0..self.q() {
            let mut row: Vec<f64> = self.a.row(i).iter().copied().collect();
            row.extend(self.b.row(i).iter());
            p.add_row(ConeRow::linear(SparseVec::from_dense(&row, 0), self.c[i]));
        }
        let sol = solve_cone(&p, &SolverSettings::default())?;
        match sol.status {
            Status::Optimal => Ok(true),
            Status::Infeasible => Ok(false),
            s => Err(Error::Solver(format!("feasibility check ended with status {s}"))),
        }
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    /// Number of rows.
    pub fn q(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn row_values(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_vec("x", x, self.n())?;
        check_vec("u", u, self.m())?;
        Ok(&self.a * x + &self.b * u + &self.c)
    }

    pub fn check_membership(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<Membership> {
        self.check_membership_tol(x, u, MEMBERSHIP_TOL)
    }

    pub fn check_membership_tol(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        tol: f64,
    ) -> Result<Membership> {
        let vals = self.row_values(x, u)?;
        let worst = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Membership {
            inside: worst <= tol,
            worst,
        })
    }
}

/// Stage constraints indexed by prediction step: a base set plus optional
/// per-step replacements.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintSchedule {
    base: StageConstraints,
    overrides: BTreeMap<usize, StageConstraints>,
}

impl ConstraintSchedule {
    pub fn constant(base: StageConstraints) -> Self {
        Self {
            base,
            overrides: BTreeMap::new(),
        }
    }

    pub fn with_override(mut self, k: usize, con: StageConstraints) -> Result<Self> {
        if con.n() != self.base.n() || con.m() != self.base.m() {
            return dim_err(format!("override at step {k} has mismatched dimensions"));
        }
        self.overrides.insert(k, con);
        Ok(self)
    }

    pub fn at(&self, k: usize) -> &StageConstraints {
        self.overrides.get(&k).unwrap_or(&self.base)
    }

    pub fn base(&self) -> &StageConstraints {
        &self.base
    }

    pub fn n(&self) -> usize {
        self.base.n()
    }

    pub fn m(&self) -> usize {
        self.base.m()
    }
}

impl From<StageConstraints> for ConstraintSchedule {
    fn from(base: StageConstraints) -> Self {
        Self::constant(base)
    }
}

/// States `x_0..x_N` and inputs `u_0..u_{N-1}`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn new(states: Vec<DVector<f64>>, inputs: Vec<DVector<f64>>) -> Result<Self> {
        if states.len() != inputs.len() + 1 {
            return dim_err(format!(
                "{} states for {} inputs; expected one more state than inputs",
                states.len(),
                inputs.len()
            ));
        }
        Ok(Self { states, inputs })
    }

    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn section_iv() -> UncertainSystem {
        let f = DMatrix::from_row_slice(3, 3, &[1.1, 0.0, 0.0, 0.0, 0.0, 1.2, -1.0, 1.0, 0.0]);
        let g = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 1.0, 1.0, -1.0, 0.0]);
        let h = DMatrix::from_column_slice(3, 1, &[0.7, 0.5, -0.7]);
        let e1 = DMatrix::from_row_slice(1, 3, &[0.4, 0.5, -0.6]);
        let e2 = DMatrix::from_row_slice(1, 2, &[0.4, -0.4]);
        UncertainSystem::new(
            NominalSystem::new(f, g).unwrap(),
            UncertaintyStructure::new(h, e1, e2).unwrap(),
        )
        .unwrap()
    }

    fn unit_box() -> StageConstraints {
        let mut a = DMatrix::zeros(6, 3);
        for i in 0..3 {
            a[(2 * i, i)] = 1.0;
            a[(2 * i + 1, i)] = -1.0;
        }
        StageConstraints::new(a, DMatrix::zeros(6, 2), DVector::from_element(6, -1.0)).unwrap()
    }

    #[test]
    fn nominal_step_examples() {
        let sys = section_iv();
        let x = DVector::from_element(3, 1.0);
        let u = DVector::zeros(2);
        let y = sys.step_nominal(&x, &u).unwrap();
        assert_eq!(y.as_slice(), &[1.1, 1.2, 0.0]);
        let id = NominalSystem::new(DMatrix::identity(3, 3), DMatrix::zeros(3, 1)).unwrap();
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(id.step_nominal(&x, &DVector::from_element(1, 7.0)).unwrap(), x);
    }

    #[test]
    fn uncertain_step_expands_definition() {
        let sys = section_iv();
        let x = DVector::from_element(3, 1.0);
        let u = DVector::zeros(2);
        let delta = DMatrix::from_element(1, 1, 1.0);
        let y = sys.step_uncertain(&delta, &x, &u).unwrap();
        // E1·x = 0.3, so the shift is 0.3·H
        let expect = DVector::from_vec(vec![1.1 + 0.21, 1.2 + 0.15, -0.21]);
        assert!((y - expect).amax() < 1e-14);
        let too_big = DMatrix::from_element(1, 1, 1.5);
        assert!(matches!(
            sys.step_uncertain(&too_big, &x, &u),
            Err(Error::OutsideUncertaintySet(_))
        ));
    }

    #[test]
    fn zero_h_rejected() {
        let r = UncertaintyStructure::new(DMatrix::zeros(3, 1), DMatrix::zeros(1, 3), DMatrix::zeros(1, 2));
        assert!(r.is_err());
    }

    #[test]
    fn cost_examples() {
        let w = CostWeights::new(DMatrix::identity(3, 3), DMatrix::identity(2, 2), DMatrix::identity(3, 3))
            .unwrap();
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let u1 = DVector::from_vec(vec![1.0, 0.0]);
        let traj = Trajectory::new(vec![e1.clone(); 3], vec![u1; 2]).unwrap();
        assert_eq!(w.eval_cost(&traj).unwrap(), 5.0);
        let only_terminal = Trajectory::new(vec![e1], vec![]).unwrap();
        assert_eq!(w.eval_cost(&only_terminal).unwrap(), 1.0);
    }

    #[test]
    fn weights_validated() {
        let bad_r = CostWeights::new(DMatrix::identity(2, 2), DMatrix::zeros(1, 1), DMatrix::zeros(2, 2));
        assert!(bad_r.is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(CostWeights::new(asym, DMatrix::identity(1, 1), DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn membership_examples() {
        let con = unit_box();
        let u = DVector::zeros(2);
        let m = con.check_membership(&DVector::from_element(3, 1.0), &u).unwrap();
        assert!(m.inside);
        assert_eq!(m.worst, 0.0);
        let m = con.check_membership(&DVector::from_vec(vec![1.5, 0.0, 0.0]), &u).unwrap();
        assert!(!m.inside);
        assert!((m.worst - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_polytope_rejected() {
        // x ≤ -1 and -x ≤ -1
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let r = StageConstraints::new(a, DMatrix::zeros(2, 1), DVector::from_element(2, 1.0));
        assert!(matches!(r, Err(Error::EmptyConstraintSet)));
    }

    #[test]
    fn schedule_overrides() {
        let base = unit_box();
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        let tight = StageConstraints::new(a, DMatrix::zeros(1, 2), DVector::from_element(1, -0.5)).unwrap();
        let sched = ConstraintSchedule::constant(base).with_override(2, tight).unwrap();
        assert_eq!(sched.at(0).q(), 6);
        assert_eq!(sched.at(2).q(), 1);
    }
}
