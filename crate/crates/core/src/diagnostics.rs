//! Empirical checks of the convergence hypotheses.
//!
//! The tangential cone constant `η` is estimated from sampled point pairs,
//! and recorded runs can be audited against the per-step contraction factors
//! of the constant- and adaptive-stepsize convergence theorems.

use nalgebra::DMatrix;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::linalg::{dist, dot, norm};
use crate::priors::PriorFunction;
use crate::selection::{BlockNorm, StepsizePolicy};
use crate::solver::{RunRecord, SolverConfig, TrajectoryPoint};
use crate::systems::{EvalPoint, NonlinearSystem};
use crate::{Error, Result};

/// Slack allowed on the monotone-decrease check `D_{k+1} ≤ D_k`.
pub const MONOTONE_SLACK: f64 = 1e-10;

/// Slack allowed on the contraction check `D_{k+1} ≤ q·D_k`.
pub const CONTRACTION_SLACK: f64 = 1e-12;

/// A pair `(x₁, x₂)` and the rows it probes (`None` for all rows).
#[derive(Debug, Clone, PartialEq)]
pub struct EtaSample {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub rows: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtaMaximizer {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    /// The row for per-row estimates; `None` when the ratio is over a block.
    pub row: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtaEstimate {
    pub eta: f64,
    /// Ratios that entered the maximum (zero denominators skipped).
    pub sample_count: usize,
    pub max_pair: EtaMaximizer,
    /// `η_i` per row when estimated row by row (rows never sampled stay 0).
    pub per_row: Option<Vec<f64>>,
}

/// Estimates the tangential cone constant
/// `‖F(x₁) − F(x₂) − F'(x₁)(x₁ − x₂)‖ / ‖F(x₁) − F(x₂)‖` as a maximum over
/// samples.
///
/// With `per_row` every row of a sample is a separate ratio and
/// `η = max_i η_i`; otherwise the ratio uses the stacked rows of the sample.
pub fn estimate_eta<S: NonlinearSystem + ?Sized>(
    sys: &S,
    samples: &[EtaSample],
    per_row: bool,
) -> Result<EtaEstimate> {
    let m = sys.num_equations();
    let n = sys.num_unknowns();
    let mut best: Option<(f64, usize, Option<usize>)> = None;
    let mut count = 0;
    let mut per_row_eta = per_row.then(|| vec![0.0f64; m]);
    let mut grad = vec![0.0; n];

    for (s, sample) in samples.iter().enumerate() {
        crate::linalg::check_len(n, sample.x1.len())?;
        crate::linalg::check_len(n, sample.x2.len())?;
        let p1 = EvalPoint::new(&sample.x1);
        let p2 = EvalPoint::new(&sample.x2);
        let diff: Vec<f64> = sample.x1.iter().zip(&sample.x2).map(|(a, b)| a - b).collect();
        let all_rows: Vec<usize>;
        let rows = match &sample.rows {
            Some(r) => r.as_slice(),
            None => {
                all_rows = (0..m).collect();
                &all_rows
            }
        };
        let mut num_sq = 0.0;
        let mut den_sq = 0.0;
        for &i in rows {
            sys.check_row(i)?;
            let df = sys.value_at(i, &p1) - sys.value_at(i, &p2);
            sys.gradient_at(i, &p1, &mut grad);
            let rem = df - dot(&grad, &diff);
            if per_row {
                if df != 0.0 {
                    let ratio = rem.abs() / df.abs();
                    count += 1;
                    if let Some(v) = per_row_eta.as_mut() {
                        v[i] = v[i].max(ratio);
                    }
                    if best.is_none_or(|(b, _, _)| ratio > b) {
                        best = Some((ratio, s, Some(i)));
                    }
                }
            } else {
                num_sq += rem * rem;
                den_sq += df * df;
            }
        }
        if !per_row && den_sq > 0.0 {
            let ratio = (num_sq / den_sq).sqrt();
            count += 1;
            if best.is_none_or(|(b, _, _)| ratio > b) {
                best = Some((ratio, s, None));
            }
        }
    }

    let (eta, s, row) = best.ok_or(Error::NoValidPairs)?;
    Ok(EtaEstimate {
        eta,
        sample_count: count,
        max_pair: EtaMaximizer {
            x1: samples[s].x1.clone(),
            x2: samples[s].x2.clone(),
            row,
        },
        per_row: per_row_eta,
    })
}

/// Samples along a recorded trajectory: `(x_k, x̂)` and `(x_k, x_{k+1})`,
/// each restricted to the block used at step `k`.
pub fn trajectory_samples(trajectory: &[TrajectoryPoint], truth: &[f64]) -> Vec<EtaSample> {
    let mut out = Vec::with_capacity(2 * trajectory.len());
    for (k, point) in trajectory.iter().enumerate() {
        if point.block.is_empty() {
            continue;
        }
        out.push(EtaSample {
            x1: point.primal.clone(),
            x2: truth.to_vec(),
            rows: Some(point.block.clone()),
        });
        if let Some(next) = trajectory.get(k + 1) {
            out.push(EtaSample {
                x1: point.primal.clone(),
                x2: next.primal.clone(),
                rows: Some(point.block.clone()),
            });
        }
    }
    out
}

/// Block Jacobian `F'_I(x)` as a dense `|I|×n` matrix.
pub fn block_jacobian<S: NonlinearSystem + ?Sized>(sys: &S, rows: &[usize], x: &[f64]) -> DMatrix<f64> {
    let n = sys.num_unknowns();
    let p = EvalPoint::new(x);
    let mut j = DMatrix::zeros(rows.len(), n);
    let mut g = vec![0.0; n];
    for (a, &i) in rows.iter().enumerate() {
        sys.gradient_at(i, &p, &mut g);
        for (c, v) in g.iter().enumerate() {
            j[(a, c)] = *v;
        }
    }
    j
}

/// Largest and smallest nonzero singular values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularRange {
    pub max: f64,
    pub min_nonzero: f64,
}

pub fn singular_range(j: &DMatrix<f64>) -> Option<SingularRange> {
    if j.is_empty() {
        return None;
    }
    let sv = j.singular_values();
    let max = sv.max();
    if max == 0.0 {
        return None;
    }
    let cutoff = max * f64::EPSILON * j.nrows().max(j.ncols()) as f64;
    let min_nonzero = sv.iter().copied().filter(|s| *s > cutoff).fold(f64::INFINITY, f64::min);
    Some(SingularRange { max, min_nonzero })
}

/// Which `η` term divides the contraction factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EtaFactor {
    /// `(1 + η)²`.
    #[default]
    OnePlusEtaSquared,
    /// `1 + η²`, the alternative form.
    OnePlusEtaSq,
}

impl EtaFactor {
    fn eval(self, eta: f64) -> f64 {
        match self {
            EtaFactor::OnePlusEtaSquared => (1.0 + eta) * (1.0 + eta),
            EtaFactor::OnePlusEtaSq => 1.0 + eta * eta,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditRow {
    pub k: usize,
    pub d_k: f64,
    pub d_next: f64,
    pub bound_factor: f64,
    /// Condition ratio entering the factor (`‖J‖_F/σ_min` or `σ_max/σ_min`).
    pub kappa: f64,
    /// `D_{k+1} ≤ bound_factor·D_k + 1e-12`.
    pub satisfied: bool,
    /// `D_{k+1} ≤ D_k + 1e-10`.
    pub monotone: bool,
}

/// The assumptions an audit was run under.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditHypotheses {
    pub eta: f64,
    pub stepsize: StepsizePolicy,
    pub block_norm: BlockNorm,
    pub sigma: f64,
    pub smooth_modulus: f64,
    pub eta_factor: EtaFactor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionAudit {
    pub rows: Vec<AuditRow>,
    pub hypotheses: AuditHypotheses,
}

impl ContractionAudit {
    pub fn satisfied_fraction(&self) -> f64 {
        fraction(self.rows.iter().filter(|r| r.satisfied).count(), self.rows.len())
    }

    pub fn monotone_fraction(&self) -> f64 {
        fraction(self.rows.iter().filter(|r| r.monotone).count(), self.rows.len())
    }

    /// One-line summary.
    pub fn verdict(&self) -> String {
        format!(
            "eta={:.6} steps={} contraction_satisfied={:.4} monotone={:.4}",
            self.hypotheses.eta,
            self.rows.len(),
            self.satisfied_fraction(),
            self.monotone_fraction()
        )
    }
}

fn fraction(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Checks the convergence hypotheses on `η` and the stepsize.
pub fn check_hypotheses(eta: f64, config: &SolverConfig) -> Result<()> {
    if eta.is_nan() || eta >= 0.5 {
        return Err(Error::HypothesisViolated(format!("eta = {eta} is not below 1/2")));
    }
    let upper = 2.0 * (1.0 - eta);
    match config.stepsize {
        StepsizePolicy::Constant { alpha } => {
            if !(alpha >= 1.0 && alpha < upper) {
                return Err(Error::HypothesisViolated(format!(
                    "alpha = {alpha} outside [1, {upper})"
                )));
            }
        }
        StepsizePolicy::Adaptive { delta } => {
            if !(delta > 0.0 && delta < upper) {
                return Err(Error::HypothesisViolated(format!(
                    "delta = {delta} outside (0, {upper})"
                )));
            }
        }
    }
    Ok(())
}

/// Audits a recorded run against the per-step contraction
/// `D_{k+1} ≤ (1 − c·σ/(M·e(η)·κ²))·D_k`, where `c = 2(1−η)α − α²`
/// (δ in place of α for the adaptive stepsize) and `e(η)` per `eta_factor`.
///
/// `κ` is `‖F'_I‖_F/σ_min` for a Frobenius-normalized constant stepsize and
/// `σ_max/σ_min` otherwise, both of the block Jacobian at `x_k`. `M` is the
/// prior's smoothness modulus (1 for the sparse prior). `D_k` is the Bregman
/// distance of the iterate to `truth`.
pub fn contraction_audit<S, P>(
    sys: &S,
    prior: &P,
    record: &RunRecord,
    truth: &[f64],
    eta: f64,
    config: &SolverConfig,
    eta_factor: EtaFactor,
) -> Result<ContractionAudit>
where
    S: NonlinearSystem + ?Sized,
    P: PriorFunction + ?Sized,
{
    check_hypotheses(eta, config)?;
    let trajectory = record.trajectory.as_ref().ok_or_else(|| {
        Error::InvalidConfig("contraction audit needs a run recorded with its trajectory".into())
    })?;
    let smooth = prior.smooth_modulus().ok_or_else(|| {
        Error::HypothesisViolated("prior has no smoothness modulus".into())
    })?;
    let sigma = prior.sigma();
    let (step, use_frobenius) = match config.stepsize {
        StepsizePolicy::Constant { alpha } => (alpha, config.block_norm == BlockNorm::Frobenius),
        StepsizePolicy::Adaptive { delta } => (delta, false),
    };
    let gain = 2.0 * (1.0 - eta) * step - step * step;
    let denom_eta = eta_factor.eval(eta);

    let mut rows = Vec::new();
    for (k, pair) in trajectory.windows(2).enumerate() {
        let (cur, next) = (&pair[0], &pair[1]);
        let d_k = prior.bregman_distance(&cur.dual, truth);
        let d_next = prior.bregman_distance(&next.dual, truth);
        let j = block_jacobian(sys, &cur.block, &cur.primal);
        let kappa = match singular_range(&j) {
            Some(range) if use_frobenius => j.norm() / range.min_nonzero,
            Some(range) => range.max / range.min_nonzero,
            None => f64::INFINITY,
        };
        let bound_factor = 1.0 - gain * sigma / (smooth * denom_eta * kappa * kappa);
        rows.push(AuditRow {
            k,
            d_k,
            d_next,
            bound_factor,
            kappa,
            satisfied: d_next <= bound_factor * d_k + CONTRACTION_SLACK,
            monotone: d_next <= d_k + MONOTONE_SLACK,
        });
    }
    Ok(ContractionAudit {
        rows,
        hypotheses: AuditHypotheses {
            eta,
            stepsize: config.stepsize,
            block_norm: config.block_norm,
            sigma,
            smooth_modulus: smooth,
            eta_factor,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientReport {
    pub trials: usize,
    /// Max over trials of `‖∇F_i − FD‖ / (1 + ‖FD‖)`.
    pub max_rel_deviation: f64,
}

/// Compares analytic gradient rows with central finite differences at random
/// standard normal points, step `1e-6·(1 + ‖x‖)`.
pub fn check_gradients<S, R>(sys: &S, trials: usize, rng: &mut R) -> GradientReport
where
    S: NonlinearSystem + ?Sized,
    R: RngCore + ?Sized,
{
    let m = sys.num_equations();
    let n = sys.num_unknowns();
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let i = rng.random_range(0..m);
        let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let h = 1e-6 * (1.0 + norm(&x));
        let mut g = vec![0.0; n];
        sys.gradient_at(i, &EvalPoint::new(&x), &mut g);
        let mut probe = x.clone();
        let fd: Vec<f64> = (0..n)
            .map(|j| {
                probe[j] = x[j] + h;
                let plus = sys.value_at(i, &EvalPoint::new(&probe));
                probe[j] = x[j] - h;
                let minus = sys.value_at(i, &EvalPoint::new(&probe));
                probe[j] = x[j];
                (plus - minus) / (2.0 * h)
            })
            .collect();
        worst = worst.max(dist(&g, &fd) / (1.0 + norm(&fd)));
    }
    GradientReport {
        trials,
        max_rel_deviation: worst,
    }
}
