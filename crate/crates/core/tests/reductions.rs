mod common;

use bregman_kaczmarz::solver::{initial_dual, run, RunStatus, SolverConfig};
use bregman_kaczmarz::systems::NonlinearSystem;
use bregman_kaczmarz::{
    GeneratorKind, GeneratorSpec, ProblemInstance, QuadraticSystem, SelectionRule, SparsePrior, StepsizePolicy,
};
use bregman_kaczmarz::selection::{BlockNorm, WeightScheme};
use common::*;

const ITERS: usize = 50;

fn instance(kind: GeneratorKind, seed: u64) -> ProblemInstance {
    ProblemInstance::generate(&GeneratorSpec::new(kind, 30, 12, 0.25, seed)).unwrap()
}

fn traced(mut cfg: SolverConfig) -> SolverConfig {
    cfg.max_iters = ITERS;
    cfg.tol = 1e-300;
    cfg.record_trajectory = true;
    cfg
}

fn primal_trace(sys: &QuadraticSystem, prior: &SparsePrior, cfg: &SolverConfig, x0_star: Vec<f64>) -> Vec<Vec<f64>> {
    let rec = run(sys, prior, cfg, x0_star, None).unwrap();
    assert_eq!(rec.status, RunStatus::MaxIters, "{:?}", rec.message);
    rec.trajectory.unwrap().into_iter().map(|p| p.primal).collect()
}

#[test]
fn euclidean_singleton_is_nonlinear_kaczmarz() {
    for kind in [GeneratorKind::Gaussian, GeneratorKind::Dct] {
        for seed in 0..3 {
            let inst = instance(kind, seed);
            let x0 = initial_dual(12, seed);
            let cfg = traced(SolverConfig::mrnbk(seed));
            let ours = primal_trace(&inst.system, &SparsePrior::euclidean(), &cfg, x0.clone());
            let oracle = nonlinear_kaczmarz(&DenseModel::from_system(&inst.system), &x0, ITERS);
            let diff = max_abs_diff(&ours, &oracle);
            assert!(diff <= 1e-12, "{kind} seed {seed}: {diff:e}");
        }
    }
}

#[test]
fn euclidean_block_is_averaging_block_kaczmarz() {
    let cases = [
        (StepsizePolicy::Constant { alpha: 1.0 }, BlockNorm::Frobenius, BlockStep::Frobenius(1.0)),
        (StepsizePolicy::Constant { alpha: 1.5 }, BlockNorm::Frobenius, BlockStep::Frobenius(1.5)),
        (StepsizePolicy::Constant { alpha: 1.0 }, BlockNorm::Spectral, BlockStep::Spectral(1.0)),
        (StepsizePolicy::Adaptive { delta: 1.3 }, BlockNorm::Frobenius, BlockStep::Adaptive(1.3)),
    ];
    for kind in [GeneratorKind::Gaussian, GeneratorKind::Dct] {
        for seed in 0..2 {
            let inst = instance(kind, seed);
            let model = DenseModel::from_system(&inst.system);
            let x0 = initial_dual(12, seed);
            for (stepsize, block_norm, step) in cases {
                let cfg = traced(SolverConfig {
                    selection: SelectionRule::GreedyBlock { theta: 0.3 },
                    weights: WeightScheme::GradNorm,
                    stepsize,
                    block_norm,
                    ..SolverConfig::mrnbk(seed)
                });
                let ours = primal_trace(&inst.system, &SparsePrior::euclidean(), &cfg, x0.clone());
                let oracle = block_kaczmarz(&model, &x0, ITERS, 0.3, step);
                let diff = max_abs_diff(&ours, &oracle);
                assert!(diff <= 1e-12, "{kind} seed {seed} {step:?}: {diff:e}");
            }
        }
    }
}

#[test]
fn sparse_prior_block_trace_matches_dual_space_oracle() {
    for seed in 0..3 {
        let inst = instance(GeneratorKind::Gaussian, seed);
        let model = DenseModel::from_system(&inst.system);
        let x0_star = initial_dual(12, seed);
        for (cfg, step) in [
            (SolverConfig::abnbk_adaptive(1.3, 0.1, seed), BlockStep::Adaptive(1.3)),
            (SolverConfig::abnbk_constant(1.9, 0.1, seed), BlockStep::Spectral(1.9)),
        ] {
            let ours = primal_trace(&inst.system, &SparsePrior::new(0.5), &traced(cfg), x0_star.clone());
            let oracle = sparse_block_kaczmarz(&model, 0.5, &x0_star, ITERS, 0.1, step);
            let diff = max_abs_diff(&ours, &oracle);
            assert!(diff <= 1e-12, "seed {seed} {step:?}: {diff:e}");
        }
    }
}

#[test]
fn greedy_theta_one_with_unit_step_is_mrnbk() {
    for seed in 0..4 {
        let inst = instance(GeneratorKind::Gaussian, seed);
        let prior = SparsePrior::new(2.0);
        let x0 = initial_dual(12, seed);
        let mr = primal_trace(&inst.system, &prior, &traced(SolverConfig::mrnbk(seed)), x0.clone());
        let greedy = traced(SolverConfig {
            block_norm: BlockNorm::Frobenius,
            ..SolverConfig::abnbk_constant(1.0, 1.0, seed)
        });
        let rec = run(&inst.system, &prior, &greedy, x0, None).unwrap();
        let traj = rec.trajectory.unwrap();
        assert!(traj.iter().all(|p| p.block.len() <= 1));
        let ours: Vec<Vec<f64>> = traj.into_iter().map(|p| p.primal).collect();
        assert!(max_abs_diff(&ours, &mr) <= 1e-12);
    }
}

#[test]
fn affine_max_residual_is_motzkin_projection() {
    let (m, n) = (8, 5);
    let a: Vec<Vec<f64>> = (0..m)
        .map(|i| (0..n).map(|j| ((i * n + j) as f64 * 0.7).sin() + if i % n == j { 2.0 } else { 0.0 }).collect())
        .collect();
    let truth: Vec<f64> = (0..n).map(|j| j as f64 - 1.5).collect();
    let y: Vec<f64> = a.iter().map(|row| row.iter().zip(&truth).map(|(p, q)| p * q).sum()).collect();
    let b: Vec<f64> = a.iter().flatten().copied().collect();
    let c: Vec<f64> = y.iter().map(|v| -v).collect();
    let sys = QuadraticSystem::affine(m, n, b, c).unwrap();
    assert_eq!(sys.num_equations(), m);
    let x0 = vec![0.3; n];
    let cfg = traced(SolverConfig {
        block_norm: BlockNorm::Frobenius,
        ..SolverConfig::abnbk_constant(1.0, 1.0, 0)
    });
    let ours = primal_trace(&sys, &SparsePrior::euclidean(), &cfg, x0.clone());
    let oracle = motzkin(&a, &y, &x0, ITERS);
    assert!(max_abs_diff(&ours, &oracle) <= 1e-12);
}
