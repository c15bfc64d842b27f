//! The averaging block nonlinear Bregman-Kaczmarz iteration.
//!
//! Each step picks a block of rows from the current residual, averages their
//! Kaczmarz directions in the dual space, scales by a constant or adaptive
//! stepsize and maps back through `∇φ*`:
//!
//! ```text
//! x*_{k+1} = x*_k − α_k Σ_{i∈I_k} ω_i σ F_i(x_k)/‖∇F_i(x_k)‖² ∇F_i(x_k)
//! x_{k+1}  = ∇φ*(x*_{k+1})
//! r_{k+1}  = −F(x_{k+1})
//! ```
//!
//! The NBK and MRNBK baselines are single-row configurations of the same
//! engine with unit stepsize.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{axpy, check_len, dist, norm, norm_sq};
use crate::priors::PriorFunction;
use crate::selection::{
    adaptive_stepsize, effective_direction, weights_for, BlockNorm, BlockRows, SelectionRule,
    StepsizePolicy, WeightScheme,
};
use crate::systems::{EvalPoint, NonlinearSystem};
use crate::{Error, Result};

// Streams for a run's own randomness, distinct from instance streams.
const RUN_STREAM: u64 = u64::MAX;
const START_STREAM: u64 = u64::MAX - 1;

/// The four methods compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Nbk,
    Mrnbk,
    AbnbkConstant,
    AbnbkAdaptive,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Nbk,
        Method::Mrnbk,
        Method::AbnbkConstant,
        Method::AbnbkAdaptive,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Method::Nbk => "nbk",
            Method::Mrnbk => "mrnbk",
            Method::AbnbkConstant => "abnbk-c",
            Method::AbnbkAdaptive => "abnbk-a",
        }
    }

    /// The method with the default experiment parameters:
    /// `α = 1.9, θ = 0.1` for ABNBK-c and `δ = 1.3, θ = 0.1` for ABNBK-a.
    pub fn preset(&self, seed: u64) -> SolverConfig {
        match self {
            Method::Nbk => SolverConfig::nbk(seed),
            Method::Mrnbk => SolverConfig::mrnbk(seed),
            Method::AbnbkConstant => SolverConfig::abnbk_constant(1.9, 0.1, seed),
            Method::AbnbkAdaptive => SolverConfig::abnbk_adaptive(1.3, 0.1, seed),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown solver `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub selection: SelectionRule,
    pub weights: WeightScheme,
    pub stepsize: StepsizePolicy,
    /// Normalization of a constant-stepsize block update.
    pub block_norm: BlockNorm,
    pub max_iters: usize,
    /// Threshold on `‖F(x_k)‖²/‖F(x_0)‖²`.
    pub tol: f64,
    pub seed: u64,
    pub record_history: bool,
    /// Keep every iterate and block; needed by the contraction audit.
    pub record_trajectory: bool,
}

impl SolverConfig {
    fn base(selection: SelectionRule, stepsize: StepsizePolicy, seed: u64) -> Self {
        Self {
            selection,
            weights: WeightScheme::GradNorm,
            stepsize,
            block_norm: BlockNorm::Frobenius,
            max_iters: 1000,
            tol: 1e-6,
            seed,
            record_history: true,
            record_trajectory: false,
        }
    }

    pub fn nbk(seed: u64) -> Self {
        Self::base(
            SelectionRule::ResidualProbability,
            StepsizePolicy::Constant { alpha: 1.0 },
            seed,
        )
    }

    pub fn mrnbk(seed: u64) -> Self {
        Self::base(
            SelectionRule::MaxResidual,
            StepsizePolicy::Constant { alpha: 1.0 },
            seed,
        )
    }

    /// Constant stepsize with the spectral block normalization.
    pub fn abnbk_constant(alpha: f64, theta: f64, seed: u64) -> Self {
        Self {
            block_norm: BlockNorm::Spectral,
            ..Self::base(
                SelectionRule::GreedyBlock { theta },
                StepsizePolicy::Constant { alpha },
                seed,
            )
        }
    }

    pub fn abnbk_adaptive(delta: f64, theta: f64, seed: u64) -> Self {
        Self::base(
            SelectionRule::GreedyBlock { theta },
            StepsizePolicy::Adaptive { delta },
            seed,
        )
    }

    /// Checks hard limits and returns warnings for values that are legal but
    /// outside the range covered by the convergence theory.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        if self.max_iters < 1 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::InvalidConfig(format!("tol must be positive, got {}", self.tol)));
        }
        if let SelectionRule::GreedyBlock { theta } = self.selection {
            if !(theta > 0.0 && theta <= 1.0) {
                return Err(Error::InvalidConfig(format!("theta must lie in (0, 1], got {theta}")));
            }
        }
        if self.block_norm == BlockNorm::Spectral && self.weights != WeightScheme::GradNorm {
            return Err(Error::InvalidConfig(
                "spectral block normalization needs gradient-norm weights".into(),
            ));
        }
        match self.stepsize {
            StepsizePolicy::Constant { alpha } => {
                if !(alpha > 0.0 && alpha < 2.0) {
                    return Err(Error::InvalidConfig(format!("alpha must lie in (0, 2), got {alpha}")));
                }
                if alpha < 1.0 {
                    warnings.push(format!(
                        "alpha = {alpha} is below 1; convergence theory covers [1, 2(1 - eta))"
                    ));
                }
            }
            StepsizePolicy::Adaptive { delta } => {
                if !(delta > 0.0 && delta < 2.0) {
                    return Err(Error::InvalidConfig(format!("delta must lie in (0, 2), got {delta}")));
                }
                if delta < 1.0 {
                    warnings.push(format!("delta = {delta} lies outside the recommended [1, 2)"));
                }
            }
        }
        Ok(warnings)
    }
}

/// Dual iterate, its mirror image and the current residual.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationState {
    pub k: usize,
    pub dual: Vec<f64>,
    pub primal: Vec<f64>,
    /// `r_k = −F(x_k)`.
    pub residual: Vec<f64>,
    /// `‖F(x_0)‖²`.
    pub res0_sq: f64,
}

impl IterationState {
    pub fn new<S, P>(sys: &S, prior: &P, dual: Vec<f64>) -> Result<Self>
    where
        S: NonlinearSystem + ?Sized,
        P: PriorFunction + ?Sized,
    {
        check_len(sys.num_unknowns(), dual.len())?;
        let primal = prior.conj_grad(&dual);
        let residual = negated_values(sys, &primal);
        let res0_sq = norm_sq(&residual);
        Ok(Self {
            k: 0,
            dual,
            primal,
            residual,
            res0_sq,
        })
    }

    pub fn residual_norm_sq(&self) -> f64 {
        norm_sq(&self.residual)
    }

    pub fn relative_residual_sq(&self) -> f64 {
        if self.res0_sq == 0.0 {
            if self.k == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            self.residual_norm_sq() / self.res0_sq
        }
    }
}

fn negated_values<S: NonlinearSystem + ?Sized>(sys: &S, x: &[f64]) -> Vec<f64> {
    let p = EvalPoint::new(x);
    (0..sys.num_equations()).map(|i| -sys.value_at(i, &p)).collect()
}

/// What one step did.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    /// Rows that entered the update, after dropping flat gradients.
    pub block: Vec<usize>,
    /// Effective `α_k` multiplying the averaged direction.
    pub alpha: f64,
    /// The adaptive stepsize degenerated and `α = 1` was used instead.
    pub fallback: bool,
}

/// Advances `state` by one iteration.
///
/// Requires a nonzero residual; [`run`] stops before that can happen.
pub fn abnbk_step<S, P, R>(
    state: &mut IterationState,
    sys: &S,
    prior: &P,
    config: &SolverConfig,
    rng: &mut R,
) -> Result<StepInfo>
where
    S: NonlinearSystem + ?Sized,
    P: PriorFunction + ?Sized,
    R: Rng + ?Sized,
{
    let selected = config.selection.select(&state.residual, rng)?;
    let n = sys.num_unknowns();
    let point = EvalPoint::new(&state.primal);
    let grads = selected
        .iter()
        .map(|&i| {
            let mut g = vec![0.0; n];
            sys.gradient_at(i, &point, &mut g);
            g
        })
        .collect();
    let values = selected.iter().map(|&i| -state.residual[i]).collect();
    let block = BlockRows::new(selected, values, grads).without_flat_rows();
    if block.is_empty() {
        return Err(Error::DegenerateBlock);
    }

    let weights = weights_for(&block, config.weights)?;
    let (alpha, fallback) = match config.stepsize {
        StepsizePolicy::Constant { alpha } => match config.block_norm {
            BlockNorm::Frobenius => (alpha, false),
            BlockNorm::Spectral if block.len() == 1 => (alpha, false),
            BlockNorm::Spectral => (alpha * block.frobenius_sq() / block.spectral_norm_sq(), false),
        },
        StepsizePolicy::Adaptive { delta } => match adaptive_stepsize(&block, &weights, delta) {
            Ok(a) => (a, false),
            Err(Error::DegenerateDirection { denominator }) => {
                log::warn!(
                    "iteration {}: adaptive stepsize denominator {denominator:e}, falling back to 1",
                    state.k
                );
                (1.0, true)
            }
            Err(e) => return Err(e),
        },
    };
    let direction = effective_direction(&block, &weights, prior.sigma())?;

    axpy(-alpha, &direction, &mut state.dual);
    prior.conj_grad_into(&state.dual, &mut state.primal);
    state.residual = negated_values(sys, &state.primal);
    state.k += 1;

    Ok(StepInfo {
        block: block.indices,
        alpha,
        fallback,
    })
}

/// Relative Euclidean error `‖x − truth‖/‖truth‖`.
pub fn solution_error(x: &[f64], truth: &[f64]) -> Result<f64> {
    check_len(truth.len(), x.len())?;
    let t = norm(truth);
    if t == 0.0 {
        return Err(Error::ZeroTruth);
    }
    Ok(dist(x, truth) / t)
}

/// Standard normal `x*_0` drawn from the run seed.
pub fn initial_dual(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(START_STREAM);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Converged,
    MaxIters,
    Degenerate,
    /// A residual or iterate stopped being finite.
    NonFinite,
}

impl RunStatus {
    pub fn label(&self) -> &'static str {
        match self {
            RunStatus::Converged => "converged",
            RunStatus::MaxIters => "max_iters",
            RunStatus::Degenerate => "degenerate",
            RunStatus::NonFinite => "non_finite",
        }
    }
}

/// One row of the convergence history. Row `k` describes iterate `x_k` and
/// the step that produced it (block size and stepsize are 0 at `k = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub k: usize,
    pub rel_res_sq: f64,
    pub sol_err: Option<f64>,
    pub bregman: Option<f64>,
    pub block_size: usize,
    pub alpha: f64,
    pub elapsed_ns: u128,
}

/// An iterate with the block used to leave it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub dual: Vec<f64>,
    pub primal: Vec<f64>,
    /// Rows used in the step from this iterate; empty for the final one.
    pub block: Vec<usize>,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub rows: Vec<HistoryRow>,
    pub status: RunStatus,
    pub iterations: usize,
    pub final_dual: Vec<f64>,
    pub final_primal: Vec<f64>,
    pub fallback_steps: usize,
    pub trajectory: Option<Vec<TrajectoryPoint>>,
    /// Set when the run stopped on an error.
    pub message: Option<String>,
}

impl RunRecord {
    pub fn terminal(&self) -> &HistoryRow {
        self.rows.last().expect("a run record always has a row")
    }

    pub fn has_truth_columns(&self) -> bool {
        self.terminal().sol_err.is_some()
    }
}

fn history_row<P: PriorFunction + ?Sized>(
    state: &IterationState,
    prior: &P,
    truth: Option<&[f64]>,
    block_size: usize,
    alpha: f64,
    elapsed_ns: u128,
) -> HistoryRow {
    let (sol_err, bregman) = match truth {
        Some(t) => (
            solution_error(&state.primal, t).ok(),
            Some(prior.bregman_distance(&state.dual, t)),
        ),
        None => (None, None),
    };
    HistoryRow {
        k: state.k,
        rel_res_sq: state.relative_residual_sq(),
        sol_err,
        bregman,
        block_size,
        alpha,
        elapsed_ns,
    }
}

/// Iterates from `x0_star` until `‖F(x_k)‖²/‖F(x_0)‖² ≤ tol` or
/// `max_iters` steps. `truth`, when given, adds the error and Bregman columns.
pub fn run<S, P>(
    sys: &S,
    prior: &P,
    config: &SolverConfig,
    x0_star: Vec<f64>,
    truth: Option<&[f64]>,
) -> Result<RunRecord>
where
    S: NonlinearSystem + ?Sized,
    P: PriorFunction + ?Sized,
{
    for w in config.validate()? {
        log::warn!("{w}");
    }
    if let Some(t) = truth {
        check_len(sys.num_unknowns(), t.len())?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(RUN_STREAM);

    let start = Instant::now();
    let mut state = IterationState::new(sys, prior, x0_star)?;
    let mut rows = Vec::new();
    let mut trajectory = config.record_trajectory.then(Vec::new);
    let first = history_row(&state, prior, truth, 0, 0.0, 0);
    if config.record_history {
        rows.push(first.clone());
    }

    let mut fallback_steps = 0;
    let mut message = None;
    let mut last = first;
    let status = loop {
        if !state.residual.iter().all(|v| v.is_finite()) {
            break RunStatus::NonFinite;
        }
        if state.res0_sq == 0.0 || state.residual_norm_sq() <= config.tol * state.res0_sq {
            break RunStatus::Converged;
        }
        if state.k >= config.max_iters {
            break RunStatus::MaxIters;
        }
        let snapshot = trajectory
            .as_ref()
            .map(|_| (state.dual.clone(), state.primal.clone()));
        let info = match abnbk_step(&mut state, sys, prior, config, &mut rng) {
            Ok(info) => info,
            Err(e @ (Error::DegenerateBlock | Error::ZeroGradientRow { .. })) => {
                message = Some(e.to_string());
                break RunStatus::Degenerate;
            }
            Err(e) => return Err(e),
        };
        if info.fallback {
            fallback_steps += 1;
        }
        if let (Some(traj), Some((dual, primal))) = (trajectory.as_mut(), snapshot) {
            traj.push(TrajectoryPoint {
                dual,
                primal,
                block: info.block.clone(),
                alpha: info.alpha,
            });
        }
        let elapsed = start.elapsed().as_nanos();
        last = history_row(&state, prior, truth, info.block.len(), info.alpha, elapsed);
        if config.record_history {
            rows.push(last.clone());
        }
    };

    if let Some(traj) = trajectory.as_mut() {
        traj.push(TrajectoryPoint {
            dual: state.dual.clone(),
            primal: state.primal.clone(),
            block: Vec::new(),
            alpha: 0.0,
        });
    }
    if !config.record_history {
        rows.push(last);
    }
    Ok(RunRecord {
        rows,
        status,
        iterations: state.k,
        final_dual: state.dual,
        final_primal: state.primal,
        fallback_steps,
        trajectory,
        message,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::SparsePrior;
    use crate::systems::QuadraticSystem;

    #[test]
    fn solution_error_examples() {
        let t = [3.0, -4.0];
        assert_eq!(solution_error(&t, &t).unwrap(), 0.0);
        assert_eq!(solution_error(&[0.0, 0.0], &t).unwrap(), 1.0);
        assert_eq!(solution_error(&[6.0, -8.0], &t).unwrap(), 1.0);
        assert!(matches!(solution_error(&[1.0, 1.0], &[0.0, 0.0]), Err(Error::ZeroTruth)));
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::abnbk_constant(2.0, 0.1, 0).validate().is_err());
        assert!(SolverConfig::abnbk_constant(1.9, 0.0, 0).validate().is_err());
        assert!(SolverConfig::abnbk_adaptive(0.0, 0.5, 0).validate().is_err());
        assert_eq!(SolverConfig::abnbk_adaptive(0.5, 0.5, 0).validate().unwrap().len(), 1);
        assert!(SolverConfig::abnbk_adaptive(1.3, 0.1, 0).validate().unwrap().is_empty());
        let mut c = SolverConfig::nbk(0);
        c.max_iters = 0;
        assert!(c.validate().is_err());
        c.max_iters = 5;
        c.tol = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn method_labels_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.label().parse::<Method>().unwrap(), m);
        }
        assert!("gmres".parse::<Method>().is_err());
    }

    #[test]
    fn already_solved_start_returns_immediately() {
        // F(x) = x − 1 componentwise at x0 = 1 (λ = 0)
        let sys = QuadraticSystem::affine(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![-1.0, -1.0]).unwrap();
        let rec = run(&sys, &SparsePrior::euclidean(), &SolverConfig::mrnbk(1), vec![1.0, 1.0], None).unwrap();
        assert_eq!(rec.status, RunStatus::Converged);
        assert_eq!(rec.iterations, 0);
        assert_eq!(rec.rows.len(), 1);
        assert_eq!(rec.rows[0].rel_res_sq, 1.0);
    }

    #[test]
    fn linear_system_converges_and_history_is_consistent() {
        let b = vec![2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0, 1.0, 1.0, 1.0];
        let truth = [1.0, -2.0, 0.5];
        let c: Vec<f64> = b
            .chunks(3)
            .map(|row: &[f64]| -row.iter().zip(&truth).map(|(a, x)| a * x).sum::<f64>())
            .collect();
        let sys = QuadraticSystem::affine(4, 3, b, c).unwrap();
        let prior = SparsePrior::euclidean();
        let mut cfg = SolverConfig::abnbk_adaptive(1.0, 0.3, 3);
        cfg.tol = 1e-20;
        let rec = run(&sys, &prior, &cfg, vec![0.0; 3], Some(&truth)).unwrap();
        assert_eq!(rec.status, RunStatus::Converged);
        assert_eq!(rec.rows[0].k, 0);
        assert_eq!(rec.rows.len(), rec.iterations + 1);
        assert!(rec.terminal().sol_err.unwrap() < 1e-8);
        assert!(rec.rows.windows(2).all(|w| w[1].k == w[0].k + 1));

        let mut quiet = cfg.clone();
        quiet.record_history = false;
        let short = run(&sys, &prior, &quiet, vec![0.0; 3], Some(&truth)).unwrap();
        assert_eq!(short.rows.len(), 1);
        assert_eq!(short.terminal().k, rec.iterations);
        assert_eq!(short.final_primal, rec.final_primal);
    }

    #[test]
    fn max_iters_cap_and_trajectory() {
        // inconsistent: x₁ = 1, x₂ = 1, x₁ + x₂ = 1
        let sys = QuadraticSystem::affine(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0], vec![-1.0; 3]).unwrap();
        let mut cfg = SolverConfig::mrnbk(0);
        cfg.max_iters = 3;
        cfg.tol = 1e-300;
        cfg.record_trajectory = true;
        let prior = SparsePrior::new(0.1);
        let rec = run(&sys, &prior, &cfg, vec![0.0, 0.0], None).unwrap();
        assert_eq!(rec.status, RunStatus::MaxIters);
        assert_eq!(rec.iterations, 3);
        let traj = rec.trajectory.as_ref().unwrap();
        assert_eq!(traj.len(), 4);
        for p in traj {
            assert_eq!(p.primal, prior.conj_grad(&p.dual));
        }
        assert!(traj[3].block.is_empty());
        assert!(rec.terminal().sol_err.is_none());
    }

    #[test]
    fn flat_rows_end_in_degenerate_status() {
        // F(x) = ½‖x‖² − 1 at x = 0: the only row has a zero gradient
        let sys = QuadraticSystem::new(
            1,
            2,
            crate::systems::QuadraticForms::Dense(vec![1.0, 0.0, 0.0, 1.0]),
            vec![0.0, 0.0],
            vec![-1.0],
        )
        .unwrap();
        let rec = run(&sys, &SparsePrior::euclidean(), &SolverConfig::mrnbk(0), vec![0.0, 0.0], None).unwrap();
        assert_eq!(rec.status, RunStatus::Degenerate);
        assert!(rec.message.is_some());
    }

    #[test]
    fn initial_dual_is_seeded() {
        assert_eq!(initial_dual(7, 42), initial_dual(7, 42));
        assert_ne!(initial_dual(7, 42), initial_dual(7, 43));
    }
}
