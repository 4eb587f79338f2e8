mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use common::{example, m, unit_box};
use gcmpc::model::{CostWeights, StageConstraints, Trajectory, UncertaintyStructure};
use gcmpc::Error;

fn vec_strategy(n: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-5.0..5.0f64, n).prop_map(DVector::from_vec)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn zero_delta_is_nominal(x in vec_strategy(3), u in vec_strategy(2)) {
        let ex = example();
        let a = ex.sys.step_uncertain(&DMatrix::zeros(1, 1), &x, &u).unwrap();
        let b = ex.sys.step_nominal(&x, &u).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn cost_is_even(xs in prop::collection::vec(vec_strategy(3), 4), us in prop::collection::vec(vec_strategy(2), 3)) {
        let ex = example();
        let t = Trajectory::new(xs.clone(), us.clone()).unwrap();
        let neg = Trajectory::new(xs.iter().map(|x| -x).collect(), us.iter().map(|u| -u).collect()).unwrap();
        let (a, b) = (ex.w.eval_cost(&t).unwrap(), ex.w.eval_cost(&neg).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn membership_matches_rows(x in vec_strategy(3), u in vec_strategy(2), seed in 0u64..1000) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        // random polytope that contains the origin strictly
        let a = DMatrix::from_fn(5, 3, |_, _| rng.gen_range(-1.0..1.0));
        let b = DMatrix::from_fn(5, 2, |_, _| rng.gen_range(-1.0..1.0));
        let c = DVector::from_fn(5, |_, _| -rng.gen_range(0.5..3.0));
        let con = StageConstraints::new(a.clone(), b.clone(), c.clone()).unwrap();
        let got = con.check_membership(&x, &u).unwrap();
        let mut worst = f64::NEG_INFINITY;
        for i in 0..5 {
            let mut v = c[i];
            for j in 0..3 { v += a[(i, j)] * x[j]; }
            for j in 0..2 { v += b[(i, j)] * u[j]; }
            worst = worst.max(v);
        }
        prop_assert!((got.worst - worst).abs() <= 1e-12 * (1.0 + worst.abs()));
        prop_assert_eq!(got.inside, worst <= 1e-9);
    }
}

#[test]
fn nominal_step_by_hand() {
    let ex = example();
    let x = DVector::from_vec(vec![1.0, 1.0, 1.0]);
    let u = DVector::from_vec(vec![1.0, 0.0]);
    let next = ex.sys.step_nominal(&x, &u).unwrap();
    assert_eq!(next.as_slice(), &[1.1, 2.2, -1.0]);
    // Δ = 1: F + H E1 and G + H E2
    let d = ex.sys.step_uncertain(&m(1, 1, &[1.0]), &x, &u).unwrap();
    let w = 0.4 * 1.0 + 0.5 - 0.6 + 0.4;
    let expect = [1.1 + 0.7 * w, 2.2 + 0.5 * w, -1.0 - 0.7 * w];
    for i in 0..3 {
        assert!((d[i] - expect[i]).abs() < 1e-14);
    }
}

#[test]
fn rejects_bad_inputs() {
    let ex = example();
    assert!(matches!(
        UncertaintyStructure::new(DMatrix::zeros(3, 1), m(1, 3, &[1.0, 0.0, 0.0]), m(1, 2, &[0.0, 0.0])),
        Err(Error::InvalidArgument(_))
    ));
    assert!(matches!(ex.sys.check_delta(&m(1, 1, &[1.5])), Err(Error::OutsideUncertaintySet(_))));
    assert!(ex.sys.step_uncertain(&m(1, 1, &[-1.0]), &DVector::zeros(3), &DVector::zeros(2)).is_ok());
    assert!(ex.sys.step_nominal(&DVector::zeros(2), &DVector::zeros(2)).is_err());
    let id = DMatrix::identity(2, 2);
    assert!(CostWeights::new(id.clone(), DMatrix::zeros(2, 2), id.clone()).is_err());
    assert!(CostWeights::new(m(2, 2, &[1.0, 2.0, 0.0, 1.0]), id.clone(), id.clone()).is_err());
    assert!(CostWeights::new(-&id, id.clone(), id.clone()).is_err());
    // x ≤ -1 and -x ≤ -1 is empty
    let empty = StageConstraints::new(m(2, 1, &[1.0, -1.0]), DMatrix::zeros(2, 1), DVector::from_element(2, 1.0));
    assert!(matches!(empty, Err(Error::EmptyConstraintSet)));
    assert!(unit_box(3, 2).check_membership(&DVector::from_element(3, 1.0), &DVector::zeros(2)).unwrap().inside);
}
