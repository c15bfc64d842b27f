//! Seeded construction of the sparse-recovery test problems.
//!
//! Every instance has a sparse ground truth `x̂` and offsets chosen so that
//! `F(x̂) = 0`. Randomness comes from ChaCha8 streams keyed by the instance
//! seed: stream 0 draws the ground truth and stream `i + 1` draws row `i`, so
//! rows can be generated in parallel without changing the result.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::systems::{EvalPoint, QuadraticForms, QuadraticSystem};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GeneratorKind {
    /// Standard normal `A^(i)`.
    Gaussian,
    /// Random partial DCT `A^(i)`.
    Dct,
}

impl GeneratorKind {
    pub fn label(&self) -> &'static str {
        match self {
            GeneratorKind::Gaussian => "gaussian",
            GeneratorKind::Dct => "dct",
        }
    }
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(GeneratorKind::Gaussian),
            "dct" => Ok(GeneratorKind::Dct),
            _ => Err(Error::InvalidConfig(format!("unknown generator kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub m: usize,
    pub n: usize,
    /// Fraction of nonzero entries in the ground truth.
    pub sp: f64,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn new(kind: GeneratorKind, m: usize, n: usize, sp: f64, seed: u64) -> Self {
        Self { kind, m, n, sp, seed }
    }

    /// Number of nonzeros in the ground truth, `round(sp·n)`.
    pub fn nonzeros(&self) -> usize {
        (self.sp * self.n as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::InvalidConfig("m and n must be positive".into()));
        }
        if !(self.sp > 0.0 && self.sp <= 1.0) {
            return Err(Error::InvalidConfig(format!("sp must lie in (0, 1], got {}", self.sp)));
        }
        if self.nonzeros() < 1 {
            return Err(Error::InvalidConfig(format!(
                "sp = {} leaves no nonzero entries for n = {}",
                self.sp, self.n
            )));
        }
        Ok(())
    }

    /// Reals stored for the quadratic forms: `m·n²` dense, `m·n` for DCT seeds.
    pub fn storage_len(&self) -> u128 {
        let (m, n) = (self.m as u128, self.n as u128);
        match self.kind {
            GeneratorKind::Gaussian => m * n * n,
            GeneratorKind::Dct => m * n,
        }
    }
}

/// A generated system together with its root.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub system: QuadraticSystem,
    pub truth: Option<Vec<f64>>,
    pub spec: Option<GeneratorSpec>,
}

impl ProblemInstance {
    pub fn generate(spec: &GeneratorSpec) -> Result<Self> {
        match spec.kind {
            GeneratorKind::Gaussian => generate_gaussian(spec),
            GeneratorKind::Dct => generate_dct(spec),
        }
    }

    /// Wraps a hand-built system.
    pub fn custom(system: QuadraticSystem, truth: Option<Vec<f64>>) -> Self {
        Self {
            system,
            truth,
            spec: None,
        }
    }
}

/// `round(sp·n)` standard normal entries at uniformly drawn positions.
pub fn generate_sparse_signal<R: Rng + ?Sized>(n: usize, sp: f64, rng: &mut R) -> Vec<f64> {
    let k = ((sp * n as f64).round() as usize).min(n);
    let mut positions = index::sample(rng, n, k).into_vec();
    positions.sort_unstable();
    let mut x = vec![0.0; n];
    for j in positions {
        // a standard normal draw of exactly zero would shrink the support
        let mut v: f64 = rng.sample(StandardNormal);
        while v == 0.0 {
            v = rng.sample(StandardNormal);
        }
        x[j] = v;
    }
    x
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn truth_for(spec: &GeneratorSpec) -> Vec<f64> {
    generate_sparse_signal(spec.n, spec.sp, &mut stream(spec.seed, 0))
}

/// Fills `c^(i) = −(½⟨x̂, A^(i)x̂⟩ + ⟨b^(i), x̂⟩)` using the same evaluation
/// path as the solver, so `F(x̂)` is zero to the last bit.
fn with_consistent_offsets(
    m: usize,
    n: usize,
    forms: QuadraticForms,
    b: Vec<f64>,
    truth: &[f64],
) -> Result<QuadraticSystem> {
    let partial = QuadraticSystem::new(m, n, forms, b, vec![0.0; m])?;
    let p = EvalPoint::new(truth);
    let c = (0..m)
        .into_par_iter()
        .map(|i| -partial.value_without_offset(i, &p))
        .collect();
    partial.with_offsets(c)
}

/// Gaussian quadratics: i.i.d. standard normal `A^(i)` and `b^(i)`.
pub fn generate_gaussian(spec: &GeneratorSpec) -> Result<ProblemInstance> {
    if spec.kind != GeneratorKind::Gaussian {
        return Err(Error::InvalidConfig("generate_gaussian needs a gaussian spec".into()));
    }
    spec.validate()?;
    let (m, n) = (spec.m, spec.n);
    let truth = truth_for(spec);
    let mut a = vec![0.0; m * n * n];
    let mut b = vec![0.0; m * n];
    a.par_chunks_mut(n * n)
        .zip(b.par_chunks_mut(n))
        .enumerate()
        .for_each(|(i, (a_i, b_i))| {
            let mut rng = stream(spec.seed, i as u64 + 1);
            a_i.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            b_i.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        });
    let system = with_consistent_offsets(m, n, QuadraticForms::Dense(a), b, &truth)?;
    Ok(ProblemInstance {
        system,
        truth: Some(truth),
        spec: Some(*spec),
    })
}

/// Partial-DCT quadratics: `A^(i)[r][c] = cos(2π·c·ξ^(i)_r)` with
/// `ξ^(i)` uniform on `[0, 1]ⁿ`; `b^(i)` standard normal.
pub fn generate_dct(spec: &GeneratorSpec) -> Result<ProblemInstance> {
    if spec.kind != GeneratorKind::Dct {
        return Err(Error::InvalidConfig("generate_dct needs a dct spec".into()));
    }
    spec.validate()?;
    let (m, n) = (spec.m, spec.n);
    let truth = truth_for(spec);
    let mut xi = vec![0.0; m * n];
    let mut b = vec![0.0; m * n];
    xi.par_chunks_mut(n)
        .zip(b.par_chunks_mut(n))
        .enumerate()
        .for_each(|(i, (xi_i, b_i))| {
            let mut rng = stream(spec.seed, i as u64 + 1);
            xi_i.iter_mut().for_each(|v| *v = rng.random::<f64>());
            b_i.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        });
    let system = with_consistent_offsets(m, n, QuadraticForms::Dct(xi), b, &truth)?;
    Ok(ProblemInstance {
        system,
        truth: Some(truth),
        spec: Some(*spec),
    })
}
