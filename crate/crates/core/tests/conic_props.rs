use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gcmpc::conic::{
    canonicalize, kkt_residuals, solve_cone, write_canonical, ConeProgram, ConeRow, NormAtom, SolverSettings,
    SparseVec, Status,
};

/// Strictly convex QP `½zᵀPz + qᵀz` with rows `Az + b ≤ 0` feasible at a
/// random point.
fn random_qp(seed: u64, scale: f64) -> ConeProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=20);
    let rows = rng.gen_range(1..=10);
    let mm = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let p = (&mm * mm.transpose() + DMatrix::identity(n, n) * 0.1) * scale;
    let q = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0)) * scale;
    let z0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let mut prog = ConeProgram::new(n);
    prog.add_quadratic_block(0, &p);
    prog.set_linear_objective(q);
    for _ in 0..rows {
        let a = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let b = -a.dot(&z0) - rng.gen_range(0.1..1.0);
        prog.add_row(ConeRow::linear(SparseVec::from_dense(a.as_slice(), 0), b));
    }
    prog
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn objective_scaling(seed in 0u64..1_000_000) {
        let s = SolverSettings::default();
        let a = solve_cone(&random_qp(seed, 1.0), &s).unwrap();
        let b = solve_cone(&random_qp(seed, 1e3), &s).unwrap();
        prop_assert!(a.is_optimal() && b.is_optimal());
        prop_assert!((&a.z - &b.z).amax() <= 1e-6 * (1.0 + a.z.amax()));
    }

    #[test]
    fn deterministic(seed in 0u64..1_000_000) {
        let p = random_qp(seed, 1.0);
        let a = solve_cone(&p, &SolverSettings::default()).unwrap();
        let b = solve_cone(&p, &SolverSettings::default()).unwrap();
        prop_assert_eq!(a.iterations, b.iterations);
        prop_assert!(a.z.iter().zip(b.z.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn optimal_reverifies(seed in 0u64..1_000_000) {
        let p = random_qp(seed, 1.0);
        let s = SolverSettings::default();
        let sol = solve_cone(&p, &s).unwrap();
        prop_assert_eq!(sol.status, Status::Optimal);
        let r = kkt_residuals(&p, &sol.z, &sol.duals);
        prop_assert!(r.within(&p, &sol.z, s.tol));
        prop_assert_eq!(r, sol.residuals);
    }

    #[test]
    fn ball_projection(a in prop::collection::vec(-3.0..3.0f64, 1..6), r in 0.1..2.0f64) {
        // min ½‖z − a‖² s.t. ‖z‖ ≤ r  →  z = a·min(1, r/‖a‖)
        let n = a.len();
        let a = DVector::from_vec(a);
        let mut p = ConeProgram::new(n);
        p.add_quadratic_block(0, &DMatrix::identity(n, n));
        p.set_linear_objective(-&a);
        p.add_row(ConeRow::linear(SparseVec::new(), -r).with_atom(NormAtom::from_dense(1.0, &DMatrix::identity(n, n), DVector::zeros(n))));
        let sol = solve_cone(&p, &SolverSettings::default()).unwrap();
        prop_assert!(sol.is_optimal());
        let expect = &a * (r / a.norm()).min(1.0);
        prop_assert!((&sol.z - expect).amax() <= 1e-6);
        let res = kkt_residuals(&p, &sol.z, &sol.duals);
        prop_assert!(res.primal <= 1e-8 && res.dual <= 1e-8);
    }
}

#[test]
fn equality_constrained() {
    // min ½‖z‖² s.t. Σz = 1
    let n = 7;
    let mut p = ConeProgram::new(n);
    p.add_quadratic_block(0, &DMatrix::identity(n, n));
    p.add_equality(SparseVec::from_dense(&[1.0; 7], 0), 1.0);
    let sol = solve_cone(&p, &SolverSettings::default()).unwrap();
    assert!(sol.is_optimal());
    assert!(sol.z.iter().all(|v| (v - 1.0 / 7.0).abs() < 1e-8));
    assert!((sol.objective - 0.5 / 7.0).abs() < 1e-9);
}

#[test]
fn infeasible_and_unbounded() {
    let mut p = ConeProgram::new(1);
    p.add_quadratic(0, 0, 1.0);
    p.add_row(ConeRow::linear(SparseVec::from_pairs([(0, 1.0)]), 1.0));
    p.add_row(ConeRow::linear(SparseVec::from_pairs([(0, -1.0)]), 1.0));
    assert_eq!(solve_cone(&p, &SolverSettings::default()).unwrap().status, Status::Infeasible);

    let mut lp = ConeProgram::new(2);
    lp.set_linear_objective(DVector::from_vec(vec![-1.0, 0.0]));
    lp.add_row(ConeRow::linear(SparseVec::from_pairs([(1, 1.0)]), -1.0));
    assert_eq!(solve_cone(&lp, &SolverSettings::default()).unwrap().status, Status::Unbounded);
}

#[test]
fn sum_of_norms_row() {
    // min ½‖z − c‖² s.t. ‖z‖ + ‖z − e‖ ≤ 1.5 with c far outside; the
    // ellipse has foci 0 and e, so the solution satisfies the row tightly
    let mut p = ConeProgram::new(2);
    p.add_quadratic_block(0, &DMatrix::identity(2, 2));
    p.set_linear_objective(DVector::from_vec(vec![-3.0, -3.0]));
    let id = DMatrix::identity(2, 2);
    p.add_row(
        ConeRow::linear(SparseVec::new(), -1.5)
            .with_atom(NormAtom::from_dense(1.0, &id, DVector::zeros(2)))
            .with_atom(NormAtom::from_dense(1.0, &id, DVector::from_vec(vec![-1.0, 0.0]))),
    );
    let sol = solve_cone(&p, &SolverSettings::default()).unwrap();
    assert!(sol.is_optimal());
    let z = &sol.z;
    let e = DVector::from_vec(vec![1.0, 0.0]);
    assert!((z.norm() + (z - e).norm() - 1.5).abs() < 1e-7);
    let r = kkt_residuals(&p, z, &sol.duals);
    assert!(r.within(&p, z, 1e-8));
    // duplicate atoms share one epigraph variable
    let c = canonicalize(&p);
    let mut dump = Vec::new();
    write_canonical(&c, &mut dump).unwrap();
    assert!(!dump.is_empty());
}

#[test]
fn validate_rejects_bad_programs() {
    let mut p = ConeProgram::new(2);
    p.add_quadratic(0, 0, -1.0);
    assert!(solve_cone(&p, &SolverSettings::default()).is_err());
    let mut p = ConeProgram::new(2);
    p.add_row(ConeRow::linear(SparseVec::from_pairs([(5, 1.0)]), 0.0));
    assert!(solve_cone(&p, &SolverSettings::default()).is_err());
    let mut p = ConeProgram::new(2);
    p.add_row(ConeRow::linear(SparseVec::new(), 0.0).with_atom(NormAtom::from_dense(
        -1.0,
        &DMatrix::identity(2, 2),
        DVector::zeros(2),
    )));
    assert!(solve_cone(&p, &SolverSettings::default()).is_err());
}
