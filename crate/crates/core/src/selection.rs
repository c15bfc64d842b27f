//! Row selection, block weights and stepsize policies.

use nalgebra::DMatrix;
use rand::Rng;

use crate::linalg::{axpy, dot, norm_sq};
use crate::{Error, Result};

/// Rows whose gradient norm is at or below this are dropped from a block.
pub const MIN_GRADIENT_NORM: f64 = 1e-14;

/// Adaptive-stepsize denominators below this are treated as degenerate.
pub const MIN_DIRECTION_NORM_SQ: f64 = 1e-30;

/// How the working rows `I_k` are chosen from the residual `r_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectionRule {
    /// One row, uniformly over `0..m`.
    UniformRandom,
    /// One row with probability `|r_i|²/‖r‖²`.
    ResidualProbability,
    /// One row with maximal `|r_i|`, lowest index on ties.
    MaxResidual,
    /// All rows with `r_i² ≥ θ·max_j r_j²`.
    GreedyBlock { theta: f64 },
}

impl SelectionRule {
    pub fn select<R: Rng + ?Sized>(&self, r: &[f64], rng: &mut R) -> Result<Vec<usize>> {
        match *self {
            SelectionRule::UniformRandom => {
                if r.is_empty() {
                    return Err(Error::AllResidualsZero);
                }
                Ok(vec![rng.random_range(0..r.len())])
            }
            SelectionRule::ResidualProbability => Ok(vec![residual_probability(r, rng)?]),
            SelectionRule::MaxResidual => Ok(vec![max_residual(r)?]),
            SelectionRule::GreedyBlock { theta } => greedy_block(r, theta),
        }
    }
}

/// The greedy block `{i : r_i² ≥ θ·max_j r_j²}` in ascending index order.
pub fn greedy_block(r: &[f64], theta: f64) -> Result<Vec<usize>> {
    let max_sq = r.iter().map(|v| v * v).fold(0.0, f64::max);
    if max_sq == 0.0 {
        return Err(Error::AllResidualsZero);
    }
    let threshold = theta * max_sq;
    Ok(r.iter()
        .enumerate()
        .filter(|(_, v)| *v * *v >= threshold)
        .map(|(i, _)| i)
        .collect())
}

/// Index of the largest `|r_i|`, lowest index on ties.
pub fn max_residual(r: &[f64]) -> Result<usize> {
    let mut best = None;
    let mut best_sq = 0.0;
    for (i, v) in r.iter().enumerate() {
        let sq = v * v;
        if sq > best_sq {
            best_sq = sq;
            best = Some(i);
        }
    }
    best.ok_or(Error::AllResidualsZero)
}

/// Samples `i` with probability `|r_i|²/‖r‖²` by inverting the cumulative sum.
pub fn residual_probability<R: Rng + ?Sized>(r: &[f64], rng: &mut R) -> Result<usize> {
    let total = norm_sq(r);
    if total == 0.0 {
        return Err(Error::AllResidualsZero);
    }
    let target = rng.random::<f64>() * total;
    let mut cumulative = 0.0;
    let mut last_nonzero = 0;
    for (i, v) in r.iter().enumerate() {
        let sq = v * v;
        if sq == 0.0 {
            continue;
        }
        cumulative += sq;
        last_nonzero = i;
        if target < cumulative {
            return Ok(i);
        }
    }
    // rounding can leave the cumulative sum a hair below `total`
    Ok(last_nonzero)
}

/// How block rows are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightScheme {
    /// `ω_i = ‖∇F_i‖² / Σ_j ‖∇F_j‖²`.
    GradNorm,
    /// `ω_i = 1/|I|`.
    Uniform,
}

/// Matrix norm `‖F'_I‖²` normalizing the collapsed gradient-norm-weighted
/// update `x* ← x* − α σ (F'_I)ᵀF_I / ‖F'_I‖²`.
///
/// `Frobenius` is the averaged update with weights summing to one. `Spectral`
/// divides by the largest squared singular value instead, which amounts to
/// scaling a constant `α` by `‖F'_I‖_F² / ‖F'_I‖₂² ≥ 1`. Both coincide on
/// single rows and leave the adaptive stepsize unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockNorm {
    Frobenius,
    Spectral,
}

/// Stepsize `α_k` applied to the averaged direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepsizePolicy {
    Constant { alpha: f64 },
    /// Extrapolated stepsize scaled by `delta`.
    Adaptive { delta: f64 },
}

/// The selected rows at the current iterate: values `F_i(x_k)`, gradients
/// `∇F_i(x_k)` and their squared norms, in block order.
#[derive(Debug, Clone, Default)]
pub struct BlockRows {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    pub grads: Vec<Vec<f64>>,
    pub norms_sq: Vec<f64>,
}

impl BlockRows {
    pub fn new(indices: Vec<usize>, values: Vec<f64>, grads: Vec<Vec<f64>>) -> Self {
        let norms_sq = grads.iter().map(|g| norm_sq(g)).collect();
        Self {
            indices,
            values,
            grads,
            norms_sq,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Drops rows whose gradient norm is at most [`MIN_GRADIENT_NORM`].
    pub fn without_flat_rows(self) -> Self {
        let min_sq = MIN_GRADIENT_NORM * MIN_GRADIENT_NORM;
        if self.norms_sq.iter().all(|&s| s > min_sq) {
            return self;
        }
        let mut out = BlockRows::default();
        for (((i, v), g), s) in self
            .indices
            .into_iter()
            .zip(self.values)
            .zip(self.grads)
            .zip(self.norms_sq)
        {
            if s > min_sq {
                out.indices.push(i);
                out.values.push(v);
                out.grads.push(g);
                out.norms_sq.push(s);
            }
        }
        out
    }

    /// `Σ_i ‖∇F_i‖²`, the squared Frobenius norm of the block Jacobian.
    pub fn frobenius_sq(&self) -> f64 {
        self.norms_sq.iter().sum()
    }

    /// `‖F'_I‖₂²`, the largest eigenvalue of the Gram matrix `F'_I (F'_I)ᵀ`.
    pub fn spectral_norm_sq(&self) -> f64 {
        match self.len() {
            0 => 0.0,
            1 => self.norms_sq[0],
            k => {
                let gram = DMatrix::from_fn(k, k, |a, b| {
                    if a == b {
                        self.norms_sq[a]
                    } else {
                        dot(&self.grads[a], &self.grads[b])
                    }
                });
                gram.symmetric_eigenvalues().max()
            }
        }
    }

    /// `(F'_I)ᵀ F_I`.
    pub fn jacobian_transpose_times_values(&self) -> Vec<f64> {
        let n = self.grads.first().map_or(0, Vec::len);
        let mut out = vec![0.0; n];
        for (g, v) in self.grads.iter().zip(&self.values) {
            axpy(*v, g, &mut out);
        }
        out
    }
}

/// Block weights; nonnegative and summing to one.
pub fn weights_for(block: &BlockRows, scheme: WeightScheme) -> Result<Vec<f64>> {
    if block.is_empty() {
        return Err(Error::DegenerateBlock);
    }
    match scheme {
        WeightScheme::Uniform => {
            let w = 1.0 / block.len() as f64;
            Ok(vec![w; block.len()])
        }
        WeightScheme::GradNorm => {
            let total = block.frobenius_sq();
            if total == 0.0 {
                return Err(Error::DegenerateBlock);
            }
            Ok(block.norms_sq.iter().map(|s| s / total).collect())
        }
    }
}

/// Extrapolated stepsize
/// `α = δ·Σ ŵ_i F_i² / ‖Σ ŵ_i F_i ∇F_i‖²` with `ŵ_i = ω_i/‖∇F_i‖²`.
///
/// Returns 0 when every block value vanishes.
pub fn adaptive_stepsize(block: &BlockRows, weights: &[f64], delta: f64) -> Result<f64> {
    if block.is_empty() {
        return Err(Error::DegenerateBlock);
    }
    let n = block.grads[0].len();
    let mut numerator = 0.0;
    let mut combined = vec![0.0; n];
    for (((g, &f), &s), &w) in block
        .grads
        .iter()
        .zip(&block.values)
        .zip(&block.norms_sq)
        .zip(weights)
    {
        let w_hat = w / s;
        numerator += w_hat * f * f;
        axpy(w_hat * f, g, &mut combined);
    }
    if numerator == 0.0 {
        return Ok(0.0);
    }
    let denominator = norm_sq(&combined);
    if denominator < MIN_DIRECTION_NORM_SQ {
        return Err(Error::DegenerateDirection { denominator });
    }
    Ok(delta * numerator / denominator)
}

/// The averaged dual direction `Σ_i ω_i·σF_i/‖∇F_i‖²·∇F_i`, before scaling by `α_k`.
pub fn effective_direction(block: &BlockRows, weights: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if block.is_empty() {
        return Err(Error::DegenerateBlock);
    }
    let n = block.grads[0].len();
    let mut out = vec![0.0; n];
    for (k, ((g, &f), &s)) in block
        .grads
        .iter()
        .zip(&block.values)
        .zip(&block.norms_sq)
        .enumerate()
    {
        if s.sqrt() <= MIN_GRADIENT_NORM {
            return Err(Error::ZeroGradientRow {
                index: block.indices[k],
                norm: s.sqrt(),
            });
        }
        axpy(weights[k] * sigma * f / s, g, &mut out);
    }
    Ok(out)
}

/// `‖F_I‖² / ‖(F'_I)ᵀF_I‖²`, the scalar in the collapsed adaptive update.
pub fn collapsed_adaptive_scale(block: &BlockRows) -> f64 {
    let jtf = block.jacobian_transpose_times_values();
    dot(&block.values, &block.values) / norm_sq(&jtf)
}
