#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use gcmpc::controller::{ControllerOptions, EpsilonMode, GcmpcController, TubeChoice};
use gcmpc::model::{
    ConstraintSchedule, CostWeights, NominalSystem, StageConstraints, UncertainSystem, UncertaintyStructure,
};

pub fn m(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(r, c, v)
}

pub struct Example {
    pub sys: UncertainSystem,
    pub w: CostWeights,
    pub con: ConstraintSchedule,
}

/// Three-state benchmark with `H` scaled by `h_scale`.
pub fn example_scaled(h_scale: f64) -> Example {
    let f = m(3, 3, &[1.1, 0.0, 0.0, 0.0, 0.0, 1.2, -1.0, 1.0, 0.0]);
    let g = m(3, 2, &[0.0, 1.0, 1.0, 1.0, -1.0, 0.0]);
    let h = m(3, 1, &[0.7, 0.5, -0.7]) * h_scale;
    let e1 = m(1, 3, &[0.4, 0.5, -0.6]);
    let e2 = m(1, 2, &[0.4, -0.4]);
    let sys = UncertainSystem::new(
        NominalSystem::new(f, g).unwrap(),
        UncertaintyStructure::new(h, e1, e2).unwrap(),
    )
    .unwrap();
    let w = CostWeights::new(DMatrix::identity(3, 3), DMatrix::identity(2, 2), DMatrix::identity(3, 3)).unwrap();
    Example {
        sys,
        w,
        con: unit_box(3, 2).into(),
    }
}

pub fn example() -> Example {
    example_scaled(1.0)
}

/// `|x_i| ≤ 1`.
pub fn unit_box(n: usize, m: usize) -> StageConstraints {
    let mut a = DMatrix::zeros(2 * n, n);
    for i in 0..n {
        a[(2 * i, i)] = 1.0;
        a[(2 * i + 1, i)] = -1.0;
    }
    StageConstraints::new(a, DMatrix::zeros(2 * n, m), DVector::from_element(2 * n, -1.0)).unwrap()
}

pub fn ktilde() -> DMatrix<f64> {
    m(2, 3, &[11.5, -6.0, -6.0, 1.1, 0.0, 0.0])
}

pub fn options(tube: TubeChoice) -> ControllerOptions {
    ControllerOptions {
        epsilon: EpsilonMode::Pinned(0.018),
        tube,
        ..Default::default()
    }
}

pub fn controller(ex: &Example, horizon: usize, tube: TubeChoice) -> GcmpcController {
    GcmpcController::build(ex.sys.clone(), ex.w.clone(), ex.con.clone(), horizon, &options(tube)).unwrap()
}

pub fn reference_controller(ex: &Example) -> GcmpcController {
    controller(ex, 10, TubeChoice::Given(ktilde()))
}

pub fn rand_vec<R: Rng>(rng: &mut R, n: usize, r: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-r..=r))
}

pub fn rand_mat<R: Rng>(rng: &mut R, rows: usize, cols: usize, r: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-r..=r))
}
