//! End-to-end use of the public API on small problems.

use gradflow_core::loss::batched::{self, DualContext};
use gradflow_core::loss::{dual_argument_values, ProblemSpec, StepData};
use gradflow_core::metrics_oracle::{compute_metrics, exact_solution};
use gradflow_core::network::batch::{evaluate, BatchConfig};
use gradflow_core::network::{init_params, load_params, save_params};
use gradflow_core::sampling::SampleSet;
use gradflow_core::trainer::output::{u_checkpoint, RunWriter, METRICS};
use gradflow_core::trainer::{fit_initial, solve, training_samples, TrainerConfig};

fn small(steps: usize, k_max: usize) -> TrainerConfig {
    let spec = ProblemSpec::heat(&[2, 2], 100.0, 1e-4, steps).unwrap();
    let mut c = TrainerConfig::new(spec, 128, 32);
    c.m_u = 8;
    c.m_v = 6;
    c.epochs_init = 200;
    c.epochs_dual = 5;
    c.epochs_primal = 5;
    c.k_max = k_max;
    c
}

#[test]
fn initial_fit_approaches_the_initial_condition() {
    let c = small(1, 1);
    let samples = training_samples(&c).unwrap();
    let untrained = init_params(2, c.m_u, c.mu, 1).unwrap();
    let before = compute_metrics(&untrained, 0.0, &samples, &[2, 2], c.batch()).unwrap();
    let fit = fit_initial(&c, &samples).unwrap();
    let after = compute_metrics(&fit.params, 0.0, &samples, &[2, 2], c.batch()).unwrap();
    assert_eq!(fit.epochs, 200);
    assert!(after.mse < before.mse, "{} vs {}", after.mse, before.mse);
}

#[test]
fn solve_writes_every_step_and_reloads() {
    let c = small(3, 2);
    let dir = tempfile::tempdir().unwrap();
    let mut writer = RunWriter::create(dir.path(), false).unwrap();
    let sol = solve(&c, &mut writer).unwrap();
    assert_eq!(sol.u.len(), 4);
    assert_eq!(sol.log.iterations.len(), 6);
    let text = std::fs::read_to_string(dir.path().join(METRICS)).unwrap();
    assert_eq!(text.lines().count(), 5);
    for (n, u) in sol.u.iter().enumerate() {
        assert_eq!(&load_params(u_checkpoint(dir.path(), n)).unwrap(), u);
    }
}

#[test]
fn checkpoints_reproduce_outputs_bitwise() {
    let p = init_params(3, 7, 0.03, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.params");
    save_params(&p, &path).unwrap();
    let q = load_params(&path).unwrap();
    let samples = SampleSet::generate(3, 50, 10, 2).unwrap();
    let batch = BatchConfig::default();
    assert_eq!(evaluate(&p, samples.interior(), true, batch), evaluate(&q, samples.interior(), true, batch));
}

#[test]
fn primal_gradient_is_a_descent_direction() {
    let spec = ProblemSpec::heat(&[2, 2], 100.0, 1e-4, 1).unwrap();
    let samples = SampleSet::generate(2, 300, 60, 4).unwrap();
    let batch = BatchConfig::default();
    let u_prev: Vec<f64> = (0..samples.n_interior()).map(|i| exact_solution(0.0, samples.interior_point(i), &[2, 2])).collect();
    let step = StepData::new(&spec, &samples, spec.t_n(1), u_prev).unwrap();
    let w = init_params(2, 10, 0.03, 3).unwrap();
    let v = init_params(2, 10, 0.03, 4).unwrap();
    let arg = dual_argument_values(&evaluate(&w, samples.interior(), false, batch).values, &step, &spec).unwrap();
    let p_h = batched::dual_value(&v, &arg, &samples, &spec, batch).unwrap().ratio;
    let ctx = DualContext::frozen(&v, p_h, &samples, &spec, batch).unwrap();
    let (loss, g) = batched::primal(&w, &step, &ctx, &samples, &spec, batch).unwrap();
    let norm2: f64 = g.values.iter().map(|x| x * x).sum();
    let h = 1e-4 / norm2.sqrt();
    let mut moved = w.clone();
    for (t, gi) in moved.as_mut_slice().iter_mut().zip(&g.values) {
        *t -= h * gi;
    }
    let after = batched::primal_value(&moved, &step, &ctx, &samples, &spec, batch).unwrap();
    assert!(after.total < loss.total);
}
