//! Embedded solver for convex programs with a quadratic objective, linear
//! equalities and rows that are linear plus a nonnegative combination of
//! Euclidean norms of affine maps.
//!
//! ```text
//! minimize    ½ zᵀPz + qᵀz + c
//! subject to  A_eq z = b_eq
//!             gᵢᵀz + hᵢ + Σ coef·‖M z + m‖₂ ≤ 0     for every row i
//! ```

mod canon;
mod cones;
mod dump;
mod ipm;
mod profile;
mod program;

use nalgebra::DVector;

pub use canon::{canonicalize, CanonStats, Canonical};
pub use cones::ConeKind;
pub use dump::write_canonical;
pub use profile::{ProfileLdl, ProfileMatrix};
pub use program::{ConeProgram, ConeRow, NormAtom, SparseVec};

use crate::error::Result;

#[derive(Clone, Debug)]
pub struct SolverSettings {
    /// Relative tolerance on primal/dual residuals; also the acceptance
    /// test for a stalled run's best iterate.
    pub tol: f64,
    /// Relative duality gap to iterate towards. Inputs of min-max programs
    /// converge roughly like the square root of the gap.
    pub tol_gap: f64,
    pub max_iter: usize,
    /// Fraction of the step to the cone boundary.
    pub step_fraction: f64,
    pub static_reg: f64,
    pub refine_steps: usize,
    /// Tolerance for accepting infeasibility certificates.
    pub tol_infeasible: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            tol_gap: 1e-12,
            max_iter: 200,
            step_fraction: 0.99,
            static_reg: 1e-10,
            refine_steps: 4,
            tol_infeasible: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIterations,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Status::Optimal => "optimal",
            Status::Infeasible => "infeasible",
            Status::Unbounded => "unbounded",
            Status::MaxIterations => "max-iterations",
        })
    }
}

/// Multipliers in terms of the original program: one per equality, one
/// per row (`λ ≥ 0`) and one vector per norm atom (`‖μ‖ ≤ coef·λ`).
#[derive(Clone, Debug, Default)]
pub struct Duals {
    pub eq: DVector<f64>,
    pub rows: Vec<f64>,
    pub atoms: Vec<Vec<DVector<f64>>>,
}

impl Duals {
    pub fn zeros(p: &ConeProgram) -> Self {
        Self {
            eq: DVector::zeros(p.n_equalities()),
            rows: vec![0.0; p.rows().len()],
            atoms: p
                .rows()
                .iter()
                .map(|r| r.atoms.iter().map(|a| DVector::zeros(a.rows())).collect())
                .collect(),
        }
    }

    fn atom(&self, r: usize, a: usize, rows: usize) -> DVector<f64> {
        self.atoms
            .get(r)
            .and_then(|v| v.get(a))
            .filter(|v| v.len() == rows)
            .cloned()
            .unwrap_or_else(|| DVector::zeros(rows))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KktResiduals {
    /// Largest equality or row violation.
    pub primal: f64,
    /// Largest stationarity or dual-feasibility violation.
    pub dual: f64,
    /// Complementarity: `Σ |λᵢ·rowᵢ(z)| + Σ (coef·λ·‖v‖ − μᵀv)`.
    pub gap: f64,
}

impl KktResiduals {
    /// Relative acceptance test used for the "optimal" verdict.
    pub fn within(&self, p: &ConeProgram, z: &DVector<f64>, tol: f64) -> bool {
        let b_scale = p
            .equalities()
            .map(|(_, b)| b.abs())
            .chain(p.rows().iter().map(|r| r.constant.abs()))
            .fold(0.0_f64, f64::max);
        let q_scale = p.linear_objective().iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        self.primal <= tol * (1.0 + b_scale)
            && self.dual <= tol * (1.0 + q_scale)
            && self.gap <= tol * (1.0 + p.objective(z).abs())
    }
}

#[derive(Clone, Debug)]
pub struct ConeSolution {
    pub z: DVector<f64>,
    pub status: Status,
    pub objective: f64,
    pub iterations: usize,
    pub residuals: KktResiduals,
    pub duals: Duals,
}

impl ConeSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }
}

/// Validates, canonicalizes and solves `p`.
pub fn solve_cone(p: &ConeProgram, settings: &SolverSettings) -> Result<ConeSolution> {
    p.validate()?;
    let canon = canonicalize(p);
    Ok(ipm::solve(p, &canon, settings))
}

/// Recomputes KKT residuals of `(z, duals)` directly on the original
/// program, without going through the canonical form.
pub fn kkt_residuals(p: &ConeProgram, z: &DVector<f64>, duals: &Duals) -> KktResiduals {
    let mut primal = 0.0_f64;
    let mut dual_feas = 0.0_f64;
    let mut gap = 0.0_f64;

    let mut grad = p.p_apply(z) + p.linear_objective();
    for (e, (row, rhs)) in p.equalities().enumerate() {
        primal = primal.max((row.dot(z) - rhs).abs());
        let y = duals.eq.get(e).copied().unwrap_or(0.0);
        row.axpy_into(y, &mut grad);
    }
    for (r, row) in p.rows().iter().enumerate() {
        let lam = duals.rows.get(r).copied().unwrap_or(0.0);
        let value = row.value(z);
        primal = primal.max(value.max(0.0));
        dual_feas = dual_feas.max((-lam).max(0.0));
        gap += (lam * value).abs();
        row.linear.axpy_into(lam, &mut grad);
        for (a, atom) in row.atoms.iter().enumerate() {
            let mu = duals.atom(r, a, atom.rows());
            let v = atom.image(z);
            atom.transpose_apply_into(&mu, &mut grad);
            let bound = atom.coef * lam.max(0.0);
            dual_feas = dual_feas.max(mu.norm() - bound);
            gap += (bound * v.norm() - mu.dot(&v)).abs();
        }
    }
    let stationarity = grad.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    KktResiduals {
        primal,
        dual: stationarity.max(dual_feas),
        gap,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn active_lower_bound() {
        // min z² s.t. z ≥ 1  (½·2·z²)
        let mut p = ConeProgram::new(1);
        p.add_quadratic(0, 0, 2.0);
        p.add_row(ConeRow::linear(SparseVec::from_pairs([(0, -1.0)]), 1.0));
        let sol = solve_cone(&p, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert!((sol.z[0] - 1.0).abs() < 1e-7);
        assert!((sol.objective - 1.0).abs() < 1e-7);
        let r = kkt_residuals(&p, &sol.z, &sol.duals);
        assert!(r.primal <= 1e-8 && r.dual <= 1e-8 && r.gap <= 1e-8, "{r:?}");
        // moving off the optimum shows up in the primal residual
        let shifted = &sol.z - DVector::from_element(1, 1e-3);
        assert!(kkt_residuals(&p, &shifted, &sol.duals).primal > 9e-4);
    }

    #[test]
    fn norm_epigraph() {
        // min t s.t. t ≥ ‖(1, 1)‖
        let mut p = ConeProgram::new(1);
        p.set_linear_objective(DVector::from_element(1, 1.0));
        let atom = NormAtom::new(1.0, vec![], DMatrix::zeros(2, 0), DVector::from_vec(vec![1.0, 1.0]));
        p.add_row(ConeRow::linear(SparseVec::from_pairs([(0, -1.0)]), 0.0).with_atom(atom));
        let sol = solve_cone(&p, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert!((sol.z[0] - 2f64.sqrt()).abs() < 1e-7);
    }

    #[test]
    fn detects_infeasible() {
        // z ≥ 1 and z ≤ 0
        let mut p = ConeProgram::new(1);
        p.add_quadratic(0, 0, 1.0);
        p.add_row(ConeRow::linear(SparseVec::from_pairs([(0, -1.0)]), 1.0));
        p.add_row(ConeRow::linear(SparseVec::from_pairs([(0, 1.0)]), 0.0));
        let sol = solve_cone(&p, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, Status::Infeasible);
    }

    #[test]
    fn detects_unbounded() {
        // min z s.t. z ≤ 1
        let mut p = ConeProgram::new(1);
        p.set_linear_objective(DVector::from_element(1, 1.0));
        p.add_row(ConeRow::linear(SparseVec::from_pairs([(0, 1.0)]), -1.0));
        let sol = solve_cone(&p, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, Status::Unbounded);
    }

    #[test]
    fn residuals_match_hand_kkt() {
        // min ½(z0² + z1²) + z0 s.t. z0 + z1 = 1, z0 - 2 ≤ 0, ‖(z1)‖·0.5 - 3 ≤ 0
        let mut p = ConeProgram::new(2);
        p.add_quadratic(0, 0, 1.0);
        p.add_quadratic(1, 1, 1.0);
        p.set_linear_objective(DVector::from_vec(vec![1.0, 0.0]));
        p.add_equality(SparseVec::from_pairs([(0, 1.0), (1, 1.0)]), 1.0);
        p.add_row(ConeRow::linear(SparseVec::from_pairs([(0, 1.0)]), -2.0));
        let atom = NormAtom::new(0.5, vec![1], DMatrix::from_element(1, 1, 1.0), DVector::zeros(1));
        p.add_row(ConeRow::linear(SparseVec::new(), -3.0).with_atom(atom));
        let z = DVector::from_vec(vec![0.25, 0.5]);
        let duals = Duals {
            eq: DVector::from_vec(vec![-0.75]),
            rows: vec![0.1, 0.2],
            atoms: vec![vec![], vec![DVector::from_vec(vec![0.05])]],
        };
        let r = kkt_residuals(&p, &z, &duals);
        // eq: 0.25 + 0.5 - 1 = -0.25
        assert!((r.primal - 0.25).abs() < 1e-15);
        // ∇ = (0.25 + 1 - 0.75 + 0.1, 0.5 - 0.75 + 0.05) = (0.6, -0.2)
        assert!((r.dual - 0.6).abs() < 1e-15);
        // |0.1·(-1.75)| + |0.2·(0.25 - 3)| + |0.5·0.2·0.5 − 0.05·0.5|
        let gap = 0.175 + 0.55 + (0.05 - 0.025);
        assert!((r.gap - gap).abs() < 1e-15);
    }
}
