//! Independent reference implementations used as test oracles. They work on
//! explicit dense copies of a quadratic system and share no code with the
//! solver beyond reading the coefficients.

#![allow(dead_code)]

use bregman_kaczmarz::systems::{NonlinearSystem, QuadraticSystem};

pub struct DenseModel {
    pub a: Vec<Vec<Vec<f64>>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<f64>,
}

impl DenseModel {
    pub fn from_system(sys: &QuadraticSystem) -> Self {
        let (m, n) = (sys.num_equations(), sys.num_unknowns());
        let a = (0..m)
            .map(|i| (0..n).map(|r| (0..n).map(|col| sys.form_entry(i, r, col)).collect()).collect())
            .collect();
        let b = (0..m).map(|i| sys.b_row(i).to_vec()).collect();
        Self { a, b, c: sys.offsets().to_vec() }
    }

    pub fn m(&self) -> usize {
        self.c.len()
    }

    pub fn value(&self, i: usize, x: &[f64]) -> f64 {
        let n = x.len();
        let mut quad = 0.0;
        for r in 0..n {
            for s in 0..n {
                quad += x[r] * self.a[i][r][s] * x[s];
            }
        }
        let lin: f64 = self.b[i].iter().zip(x).map(|(b, x)| b * x).sum();
        0.5 * quad + lin + self.c[i]
    }

    pub fn gradient(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..n)
            .map(|r| {
                let sym: f64 = (0..n).map(|s| (self.a[i][r][s] + self.a[i][s][r]) * x[s]).sum();
                0.5 * sym + self.b[i][r]
            })
            .collect()
    }

    pub fn values(&self, x: &[f64]) -> Vec<f64> {
        (0..self.m()).map(|i| self.value(i, x)).collect()
    }
}

fn sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Lowest index of the largest `|F_i|`.
pub fn argmax_abs(f: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..f.len() {
        if f[i].abs() > f[best].abs() {
            best = i;
        }
    }
    best
}

/// Classic nonlinear Kaczmarz with maximal-residual row choice:
/// `x ← x − F_i(x)/‖∇F_i(x)‖² · ∇F_i(x)`.
pub fn nonlinear_kaczmarz(model: &DenseModel, x0: &[f64], iters: usize) -> Vec<Vec<f64>> {
    let mut x = x0.to_vec();
    let mut trace = vec![x.clone()];
    for _ in 0..iters {
        let f = model.values(&x);
        let i = argmax_abs(&f);
        let g = model.gradient(i, &x);
        let t = f[i] / sq(&g);
        for (xj, gj) in x.iter_mut().zip(&g) {
            *xj -= t * gj;
        }
        trace.push(x.clone());
    }
    trace
}

#[derive(Debug, Clone, Copy)]
pub enum BlockStep {
    /// `x ← x − α J_Iᵀ F_I / ‖J_I‖_F²`
    Frobenius(f64),
    /// `x ← x − α J_Iᵀ F_I / ‖J_I‖₂²`
    Spectral(f64),
    /// `x ← x − δ ‖F_I‖² / ‖J_Iᵀ F_I‖² · J_Iᵀ F_I`
    Adaptive(f64),
}

/// Largest eigenvalue of `J Jᵀ` by power iteration.
pub fn spectral_norm_sq(rows: &[Vec<f64>]) -> f64 {
    let k = rows.len();
    let gram: Vec<Vec<f64>> = (0..k)
        .map(|a| (0..k).map(|b| rows[a].iter().zip(&rows[b]).map(|(x, y)| x * y).sum()).collect())
        .collect();
    let mut v: Vec<f64> = (0..k).map(|j| 1.0 + 0.01 * j as f64).collect();
    let mut lambda = 0.0;
    for _ in 0..100_000 {
        let w: Vec<f64> = (0..k).map(|a| (0..k).map(|b| gram[a][b] * v[b]).sum()).collect();
        let nw = sq(&w).sqrt();
        let next = v.iter().zip(&w).map(|(p, q)| p * q).sum::<f64>() / sq(&v);
        v = w.iter().map(|x| x / nw).collect();
        if (next - lambda).abs() <= 1e-15 * next {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Averaging block nonlinear Kaczmarz on the primal iterate, with the greedy
/// block `{i : F_i² ≥ θ max F_j²}`.
pub fn block_kaczmarz(model: &DenseModel, x0: &[f64], iters: usize, theta: f64, step: BlockStep) -> Vec<Vec<f64>> {
    let mut x = x0.to_vec();
    let mut trace = vec![x.clone()];
    for _ in 0..iters {
        let d = block_direction(model, &x, theta, step);
        for (xj, dj) in x.iter_mut().zip(&d) {
            *xj -= dj;
        }
        trace.push(x.clone());
    }
    trace
}

fn block_direction(model: &DenseModel, x: &[f64], theta: f64, step: BlockStep) -> Vec<f64> {
    let f = model.values(x);
    let top = f.iter().map(|v| v * v).fold(0.0, f64::max);
    let block: Vec<usize> = (0..f.len()).filter(|&i| f[i] * f[i] >= theta * top).collect();
    let grads: Vec<Vec<f64>> = block.iter().map(|&i| model.gradient(i, x)).collect();
    let mut jtf = vec![0.0; x.len()];
    for (g, &i) in grads.iter().zip(&block) {
        for (t, gj) in jtf.iter_mut().zip(g) {
            *t += f[i] * gj;
        }
    }
    let scale = match step {
        BlockStep::Frobenius(alpha) => alpha / grads.iter().map(|g| sq(g)).sum::<f64>(),
        BlockStep::Spectral(alpha) => alpha / spectral_norm_sq(&grads),
        BlockStep::Adaptive(delta) => {
            let fsq: f64 = block.iter().map(|&i| f[i] * f[i]).sum();
            delta * fsq / sq(&jtf)
        }
    };
    jtf.iter().map(|t| scale * t).collect()
}

/// Soft shrinkage `sign(v)·max(|v| − λ, 0)`.
pub fn shrink(v: &[f64], lambda: f64) -> Vec<f64> {
    v.iter()
        .map(|&z| {
            if z > lambda {
                z - lambda
            } else if z < -lambda {
                z + lambda
            } else {
                0.0
            }
        })
        .collect()
}

/// Block Bregman-Kaczmarz for the sparse prior: the block step is taken on
/// the dual iterate and the primal is its soft shrinkage. Returns primals.
pub fn sparse_block_kaczmarz(
    model: &DenseModel,
    lambda: f64,
    x0_star: &[f64],
    iters: usize,
    theta: f64,
    step: BlockStep,
) -> Vec<Vec<f64>> {
    let mut dual = x0_star.to_vec();
    let mut x = shrink(&dual, lambda);
    let mut trace = vec![x.clone()];
    for _ in 0..iters {
        let d = block_direction(model, &x, theta, step);
        for (zj, dj) in dual.iter_mut().zip(&d) {
            *zj -= dj;
        }
        x = shrink(&dual, lambda);
        trace.push(x.clone());
    }
    trace
}

/// Maximal-residual projection for `Ax = y`:
/// `x ← x − (a_iᵀx − y_i)/‖a_i‖² · a_i`.
pub fn motzkin(a: &[Vec<f64>], y: &[f64], x0: &[f64], iters: usize) -> Vec<Vec<f64>> {
    let mut x = x0.to_vec();
    let mut trace = vec![x.clone()];
    for _ in 0..iters {
        let r: Vec<f64> = a
            .iter()
            .zip(y)
            .map(|(row, yi)| row.iter().zip(&x).map(|(p, q)| p * q).sum::<f64>() - yi)
            .collect();
        let i = argmax_abs(&r);
        let t = r[i] / sq(&a[i]);
        for (xj, aj) in x.iter_mut().zip(&a[i]) {
            *xj -= t * aj;
        }
        trace.push(x.clone());
    }
    trace
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len(), "trace lengths differ");
    a.iter()
        .zip(b)
        .flat_map(|(u, v)| u.iter().zip(v).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}
