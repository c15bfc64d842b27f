//! Nonlinear systems `F(x) = 0` with row-wise access to values and gradients.

use std::f64::consts::PI;

use crate::linalg::{check_len, dot};
use crate::{Error, Result};

/// A point together with the indices of its nonzero entries.
///
/// Iterates produced by soft shrinkage are mostly zero; quadratic rows only
/// touch the support when evaluated here. Skipped terms are exact zeros, so
/// the result is bit-identical to the dense sum.
#[derive(Debug, Clone)]
pub struct EvalPoint<'a> {
    x: &'a [f64],
    support: Vec<usize>,
}

impl<'a> EvalPoint<'a> {
    pub fn new(x: &'a [f64]) -> Self {
        let support = x
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, _)| j)
            .collect();
        Self { x, support }
    }

    pub fn x(&self) -> &[f64] {
        self.x
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }
}

/// Row-wise access to `F: ℝⁿ → ℝᵐ` and its Jacobian rows `∇F_i`.
pub trait NonlinearSystem: Send + Sync {
    /// Number of equations `m`.
    fn num_equations(&self) -> usize;

    /// Number of unknowns `n`.
    fn num_unknowns(&self) -> usize;

    /// `F_i(x)` without bounds checks.
    fn value_at(&self, i: usize, p: &EvalPoint<'_>) -> f64;

    /// Writes `∇F_i(x)` into `out` without bounds checks.
    fn gradient_at(&self, i: usize, p: &EvalPoint<'_>, out: &mut [f64]);

    fn eval_component(&self, i: usize, x: &[f64]) -> Result<f64> {
        self.check_row(i)?;
        check_len(self.num_unknowns(), x.len())?;
        Ok(self.value_at(i, &EvalPoint::new(x)))
    }

    fn grad_component(&self, i: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check_row(i)?;
        check_len(self.num_unknowns(), x.len())?;
        let mut g = vec![0.0; x.len()];
        self.gradient_at(i, &EvalPoint::new(x), &mut g);
        Ok(g)
    }

    fn eval_all(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.num_unknowns(), x.len())?;
        let p = EvalPoint::new(x);
        Ok((0..self.num_equations())
            .map(|i| self.value_at(i, &p))
            .collect())
    }

    /// Local linearization of row `i` at `x`: the hyperplane
    /// `{y : ⟨∇F_i(x), y⟩ = ⟨∇F_i(x), x⟩ − F_i(x)}`.
    fn linearize_row(&self, i: usize, x: &[f64]) -> Result<Linearization> {
        let gradient = self.grad_component(i, x)?;
        let value = self.eval_component(i, x)?;
        let offset = dot(&gradient, x) - value;
        Ok(Linearization { gradient, offset })
    }

    fn check_row(&self, i: usize) -> Result<()> {
        let m = self.num_equations();
        if i < m {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange { index: i, m })
        }
    }
}

/// Gradient and offset of one row's local linearization.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    pub gradient: Vec<f64>,
    pub offset: f64,
}

impl Linearization {
    /// `offset − ⟨gradient, y⟩`; zero on the hyperplane and `−F_i(x)` at the
    /// linearization point `x`.
    pub fn residual(&self, y: &[f64]) -> f64 {
        self.offset - dot(&self.gradient, y)
    }
}

/// Storage for the `m` quadratic forms `A^(i)`.
#[derive(Debug, Clone, PartialEq)]
pub enum QuadraticForms {
    /// Every `A^(i)` is zero; the system is affine.
    Zero,
    /// Row-major `n×n` blocks, one per equation (`m·n²` entries).
    Dense(Vec<f64>),
    /// Partial-DCT forms `A^(i)[r][c] = cos(2π·c·ξ^(i)_r)`; holds `ξ` as `m·n`
    /// entries and never materializes the matrices.
    Dct(Vec<f64>),
}

#[inline]
pub(crate) fn dct_entry(xi: f64, col: usize) -> f64 {
    (2.0 * PI * col as f64 * xi).cos()
}

/// `F_i(x) = ½⟨x, A^(i)x⟩ + ⟨b^(i), x⟩ + c^(i)` for `i = 0..m`.
///
/// `A^(i)` need not be symmetric; the gradient is `½(A^(i) + A^(i)ᵀ)x + b^(i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSystem {
    m: usize,
    n: usize,
    forms: QuadraticForms,
    b: Vec<f64>,
    c: Vec<f64>,
}

impl QuadraticSystem {
    /// `b` is `m·n` row-major, `c` has length `m`.
    pub fn new(m: usize, n: usize, forms: QuadraticForms, b: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        match &forms {
            QuadraticForms::Zero => {}
            QuadraticForms::Dense(a) => check_len(m * n * n, a.len())?,
            QuadraticForms::Dct(xi) => check_len(m * n, xi.len())?,
        }
        check_len(m * n, b.len())?;
        check_len(m, c.len())?;
        Ok(Self { m, n, forms, b, c })
    }

    /// `F(x) = Bx + c` with `B` given row-major.
    pub fn affine(m: usize, n: usize, b: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        Self::new(m, n, QuadraticForms::Zero, b, c)
    }

    /// Replaces the offsets `c`.
    pub fn with_offsets(self, c: Vec<f64>) -> Result<Self> {
        check_len(self.m, c.len())?;
        Ok(Self { c, ..self })
    }

    pub fn forms(&self) -> &QuadraticForms {
        &self.forms
    }

    pub fn linear_terms(&self) -> &[f64] {
        &self.b
    }

    pub fn offsets(&self) -> &[f64] {
        &self.c
    }

    pub fn b_row(&self, i: usize) -> &[f64] {
        &self.b[i * self.n..(i + 1) * self.n]
    }

    /// Entry `A^(i)[r][col]`.
    pub fn form_entry(&self, i: usize, r: usize, col: usize) -> f64 {
        let n = self.n;
        match &self.forms {
            QuadraticForms::Zero => 0.0,
            QuadraticForms::Dense(a) => a[i * n * n + r * n + col],
            QuadraticForms::Dct(xi) => dct_entry(xi[i * n + r], col),
        }
    }

    /// `½⟨x, A^(i)x⟩ + ⟨b^(i), x⟩`, the row value without its offset.
    pub(crate) fn value_without_offset(&self, i: usize, p: &EvalPoint<'_>) -> f64 {
        let n = self.n;
        let x = p.x();
        let s = p.support();
        let quad = match &self.forms {
            QuadraticForms::Zero => 0.0,
            QuadraticForms::Dense(a) => {
                let block = &a[i * n * n..(i + 1) * n * n];
                s.iter()
                    .map(|&r| {
                        let row = &block[r * n..(r + 1) * n];
                        x[r] * s.iter().map(|&c| row[c] * x[c]).sum::<f64>()
                    })
                    .sum::<f64>()
            }
            QuadraticForms::Dct(xi) => {
                let xi = &xi[i * n..(i + 1) * n];
                s.iter()
                    .map(|&r| x[r] * s.iter().map(|&c| dct_entry(xi[r], c) * x[c]).sum::<f64>())
                    .sum::<f64>()
            }
        };
        let b = self.b_row(i);
        let lin: f64 = s.iter().map(|&j| b[j] * x[j]).sum();
        0.5 * quad + lin
    }
}

impl NonlinearSystem for QuadraticSystem {
    fn num_equations(&self) -> usize {
        self.m
    }

    fn num_unknowns(&self) -> usize {
        self.n
    }

    fn value_at(&self, i: usize, p: &EvalPoint<'_>) -> f64 {
        self.value_without_offset(i, p) + self.c[i]
    }

    fn gradient_at(&self, i: usize, p: &EvalPoint<'_>, out: &mut [f64]) {
        let n = self.n;
        let x = p.x();
        let s = p.support();
        out.copy_from_slice(self.b_row(i));
        match &self.forms {
            QuadraticForms::Zero => {}
            QuadraticForms::Dense(a) => {
                let block = &a[i * n * n..(i + 1) * n * n];
                for (r, o) in out.iter_mut().enumerate() {
                    let row = &block[r * n..(r + 1) * n];
                    // (A x)_r
                    *o += 0.5 * s.iter().map(|&c| row[c] * x[c]).sum::<f64>();
                }
                for &r in s {
                    // (Aᵀx) accumulates row r scaled by x_r
                    let row = &block[r * n..(r + 1) * n];
                    let w = 0.5 * x[r];
                    for (o, a) in out.iter_mut().zip(row) {
                        *o += w * a;
                    }
                }
            }
            QuadraticForms::Dct(xi) => {
                let xi = &xi[i * n..(i + 1) * n];
                for (r, o) in out.iter_mut().enumerate() {
                    *o += 0.5 * s.iter().map(|&c| dct_entry(xi[r], c) * x[c]).sum::<f64>();
                }
                for &r in s {
                    let w = 0.5 * x[r];
                    for (col, o) in out.iter_mut().enumerate() {
                        *o += w * dct_entry(xi[r], col);
                    }
                }
            }
        }
    }
}
