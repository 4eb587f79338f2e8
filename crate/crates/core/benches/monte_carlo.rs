use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DVector;

use gcmpc::controller::{ControllerOptions, EpsilonMode, GcmpcController, TubeChoice};
use gcmpc::parallel::ExecMode;
use gcmpc::problem::bundled_example;
use gcmpc::sim::{plan_monte_carlo, DisturbanceMode};

fn rollouts(c: &mut Criterion) {
    let p = bundled_example().unwrap();
    let opts = ControllerOptions {
        epsilon: EpsilonMode::Pinned(0.018),
        tube: TubeChoice::Given(p.ktilde.clone().unwrap()),
        ..Default::default()
    };
    let ctrl = GcmpcController::build(p.sys, p.weights, p.constraints, p.horizon, &opts).unwrap();
    let plan = ctrl.plan(&DVector::from_element(3, 1.0)).unwrap();

    let mut g = c.benchmark_group("plan_monte_carlo");
    for mode in [ExecMode::Sequential, ExecMode::Parallel] {
        g.bench_with_input(BenchmarkId::new(format!("{mode:?}"), 2000), &mode, |b, &mode| {
            b.iter(|| plan_monte_carlo(&ctrl, &plan, 2000, 1, DisturbanceMode::UniformInterval, mode).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, rollouts);
criterion_main!(benches);
