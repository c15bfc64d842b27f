//! Strongly convex generating functions, their conjugates and the mirror map.
//!
//! The iteration works in the dual space: it updates `x*` additively and maps
//! back to the primal iterate with `x = ∇φ*(x*)`. A prior therefore needs its
//! value, its conjugate value and the conjugate gradient, and it carries the
//! strong-convexity modulus `σ` that scales the dual step.

use crate::linalg::dot;

/// A proper, strongly convex function `φ` with a closed-form conjugate.
pub trait PriorFunction: Send + Sync {
    /// Strong-convexity modulus with respect to the Euclidean norm.
    fn sigma(&self) -> f64;

    /// Smoothness modulus `M` of `φ`, where one is defined.
    fn smooth_modulus(&self) -> Option<f64>;

    /// `φ(x)`.
    fn value(&self, x: &[f64]) -> f64;

    /// `φ*(x*)`.
    fn conj_value(&self, xstar: &[f64]) -> f64;

    /// Writes the mirror point `∇φ*(x*)` into `out`.
    fn conj_grad_into(&self, xstar: &[f64], out: &mut [f64]);

    fn conj_grad(&self, xstar: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; xstar.len()];
        self.conj_grad_into(xstar, &mut out);
        out
    }

    /// Bregman distance `D_φ^{x*}(∇φ*(x*), y) = φ*(x*) − ⟨x*, y⟩ + φ(y)`.
    fn bregman_distance(&self, xstar: &[f64], y: &[f64]) -> f64 {
        self.conj_value(xstar) - dot(xstar, y) + self.value(y)
    }
}

/// Componentwise soft shrinkage `max(|v| − λ, 0)·sign(v)`, with `sign(0) = 0`.
pub fn soft_shrink(v: &[f64], lambda: f64) -> Vec<f64> {
    v.iter().map(|&x| shrink(x, lambda)).collect()
}

#[inline]
fn shrink(x: f64, lambda: f64) -> f64 {
    let mag = x.abs() - lambda;
    if mag > 0.0 {
        mag.copysign(x)
    } else {
        0.0
    }
}

/// The sparsity-inducing prior `φ(x) = λ‖x‖₁ + ½‖x‖₂²`.
///
/// Its conjugate is `½‖S_λ(x*)‖²` and the mirror map is soft shrinkage.
/// With `λ = 0` it is the Euclidean prior `½‖x‖²` and the method reduces to
/// the plain (non-Bregman) nonlinear Kaczmarz iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsePrior {
    lambda: f64,
}

impl SparsePrior {
    /// # Panics
    ///
    /// If `lambda` is negative or not finite.
    pub fn new(lambda: f64) -> Self {
        assert!(
            lambda.is_finite() && lambda >= 0.0,
            "shrinkage threshold must be finite and nonnegative, got {lambda}"
        );
        Self { lambda }
    }

    pub fn euclidean() -> Self {
        Self { lambda: 0.0 }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl PriorFunction for SparsePrior {
    fn sigma(&self) -> f64 {
        1.0
    }

    // φ is 1-smooth apart from its ℓ₁ term; diagnostics take M = 1.
    fn smooth_modulus(&self) -> Option<f64> {
        Some(1.0)
    }

    fn value(&self, x: &[f64]) -> f64 {
        x.iter()
            .map(|&v| self.lambda * v.abs() + 0.5 * v * v)
            .sum()
    }

    fn conj_value(&self, xstar: &[f64]) -> f64 {
        xstar
            .iter()
            .map(|&v| {
                let s = shrink(v, self.lambda);
                0.5 * s * s
            })
            .sum()
    }

    fn conj_grad_into(&self, xstar: &[f64], out: &mut [f64]) {
        debug_assert_eq!(xstar.len(), out.len());
        for (o, &v) in out.iter_mut().zip(xstar) {
            *o = shrink(v, self.lambda);
        }
    }

    // Same quantity as the default, regrouped per component as
    // ½(s − y)² + λ|y| − (x* − s)·y so that both terms are nonnegative.
    fn bregman_distance(&self, xstar: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(xstar.len(), y.len());
        xstar
            .iter()
            .zip(y)
            .map(|(&v, &yi)| {
                let s = shrink(v, self.lambda);
                let d = s - yi;
                0.5 * d * d + (self.lambda * yi.abs() - (v - s) * yi)
            })
            .sum()
    }
}

/// A dual point together with its mirror image under a fixed prior.
///
/// The primal point is only ever produced from the dual point.
#[derive(Debug, Clone, PartialEq)]
pub struct BregmanPair {
    dual: Vec<f64>,
    primal: Vec<f64>,
}

impl BregmanPair {
    pub fn new<P: PriorFunction + ?Sized>(prior: &P, dual: Vec<f64>) -> Self {
        let primal = prior.conj_grad(&dual);
        Self { dual, primal }
    }

    pub fn dual(&self) -> &[f64] {
        &self.dual
    }

    pub fn primal(&self) -> &[f64] {
        &self.primal
    }

    /// Applies `x* ← x* + step` and refreshes the primal point.
    pub fn shift<P: PriorFunction + ?Sized>(&mut self, prior: &P, step: &[f64]) {
        for (d, s) in self.dual.iter_mut().zip(step) {
            *d += s;
        }
        prior.conj_grad_into(&self.dual, &mut self.primal);
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>) {
        (self.dual, self.primal)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dist, norm_sq};
    use proptest::prelude::*;

    #[test]
    fn soft_shrink_examples() {
        assert_eq!(soft_shrink(&[3.0], 2.0), vec![1.0]);
        assert_eq!(soft_shrink(&[-0.5], 2.0), vec![0.0]);
        assert_eq!(soft_shrink(&[-5.0, 2.0, 0.0], 2.0), vec![-3.0, 0.0, 0.0]);
        // sign(0) = 0, never -0 propagating a sign
        assert_eq!(soft_shrink(&[0.0, -0.0], 0.0), vec![0.0, 0.0]);
    }

    #[test]
    fn phi_values() {
        let p = SparsePrior::new(2.0);
        assert_eq!(p.value(&[0.0, 0.0]), 0.0);
        assert_eq!(p.value(&[1.0, -1.0]), 5.0);
        assert_eq!(SparsePrior::new(0.0).value(&[3.0, 4.0]), 12.5);
    }

    #[test]
    fn conjugate_values() {
        let p = SparsePrior::new(2.0);
        assert_eq!(p.conj_value(&[0.0; 4]), 0.0);
        assert_eq!(p.conj_value(&[3.0]), 0.5);
        assert_eq!(SparsePrior::euclidean().conj_value(&[3.0, 4.0]), 12.5);
    }

    #[test]
    fn conjugate_value_matches_brute_force_supremum() {
        // sup_t 3t − 2|t| − ½t² on a fine grid
        let best = (0..=400_000)
            .map(|k| -20.0 + k as f64 * 1e-4)
            .map(|t: f64| 3.0 * t - 2.0 * t.abs() - 0.5 * t * t)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((best - 0.5).abs() < 1e-7);
    }

    #[test]
    fn mirror_map() {
        let p = SparsePrior::new(2.0);
        assert_eq!(p.conj_grad(&[3.0, -5.0]), vec![1.0, -3.0]);
        let v = vec![0.3, -1.7, 2.5];
        assert_eq!(SparsePrior::euclidean().conj_grad(&v), v);
    }

    #[test]
    fn bregman_examples() {
        let e = SparsePrior::euclidean();
        let x = [1.0, -2.0, 0.5];
        let y = [0.0, 1.0, 2.0];
        let expect = 0.5 * (1.0 + 9.0 + 2.25);
        assert!((e.bregman_distance(&x, &y) - expect).abs() < 1e-14);

        let p = SparsePrior::new(2.0);
        assert_eq!(p.bregman_distance(&[3.0], &[0.0]), 0.5);
        let xs = [3.0, -0.4, -7.25, 2.0];
        assert_eq!(p.bregman_distance(&xs, &p.conj_grad(&xs)), 0.0);
    }

    #[test]
    fn bregman_override_matches_definition() {
        let p = SparsePrior::new(1.5);
        let xs = [2.7, -0.3, -4.1, 1.5, 0.0];
        let y = [0.2, -1.0, 3.0, 0.0, -0.7];
        let direct = p.conj_value(&xs) - dot(&xs, &y) + p.value(&y);
        assert!((p.bregman_distance(&xs, &y) - direct).abs() < 1e-12);
    }

    #[test]
    fn bregman_pair_tracks_dual() {
        let p = SparsePrior::new(2.0);
        let mut pair = BregmanPair::new(&p, vec![3.0, -1.0]);
        assert_eq!(pair.primal(), &[1.0, 0.0]);
        pair.shift(&p, &[0.5, -2.5]);
        assert_eq!(pair.dual(), &[3.5, -3.5]);
        assert_eq!(pair.primal(), &[1.5, -1.5]);
    }

    fn central_fd(p: &SparsePrior, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|j| {
                let mut plus = x.to_vec();
                let mut minus = x.to_vec();
                plus[j] += h;
                minus[j] -= h;
                (p.conj_value(&plus) - p.conj_value(&minus)) / (2.0 * h)
            })
            .collect()
    }

    fn dual_vec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, 1..24)
    }

    proptest! {
        #[test]
        fn conj_grad_matches_finite_differences(
            lambda in 0.0f64..3.0,
            x in dual_vec(),
        ) {
            let p = SparsePrior::new(lambda);
            // keep clear of the kinks at |x*| = λ
            prop_assume!(x.iter().all(|v| (v.abs() - lambda).abs() > 1e-3));
            let fd = central_fd(&p, &x, 1e-6);
            let g = p.conj_grad(&x);
            for (a, b) in g.iter().zip(&fd) {
                prop_assert!((a - b).abs() <= 1e-5 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }

        #[test]
        fn fenchel_young_equality_at_mirror_point(
            lambda in 0.0f64..3.0,
            x in dual_vec(),
        ) {
            let p = SparsePrior::new(lambda);
            let s = p.conj_grad(&x);
            let gap = p.value(&s) + p.conj_value(&x) - dot(&x, &s);
            prop_assert!(gap.abs() <= 1e-10);
        }

        #[test]
        fn bregman_dominates_strong_convexity(
            lambda in 0.0f64..3.0,
            pair in (1usize..16).prop_flat_map(|n| (
                prop::collection::vec(-6.0f64..6.0, n),
                prop::collection::vec(-6.0f64..6.0, n),
            )),
        ) {
            let p = SparsePrior::new(lambda);
            let (xs, y) = pair;
            let d = p.bregman_distance(&xs, &y);
            let s = p.conj_grad(&xs);
            let lower = 0.5 * p.sigma() * dist(&s, &y).powi(2);
            prop_assert!(d >= -1e-12);
            prop_assert!(d + 1e-10 >= lower, "{d} < {lower}");
        }

        #[test]
        fn mirror_map_is_lipschitz_and_monotone(
            lambda in 0.0f64..3.0,
            pair in (1usize..16).prop_flat_map(|n| (
                prop::collection::vec(-6.0f64..6.0, n),
                prop::collection::vec(-6.0f64..6.0, n),
            )),
        ) {
            let p = SparsePrior::new(lambda);
            let (u, v) = pair;
            let gu = p.conj_grad(&u);
            let gv = p.conj_grad(&v);
            prop_assert!(dist(&gu, &gv) <= dist(&u, &v) / p.sigma() + 1e-12);
            let du: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
            let dg: Vec<f64> = gu.iter().zip(&gv).map(|(a, b)| a - b).collect();
            prop_assert!(dot(&du, &dg) + 1e-12 >= p.sigma() * norm_sq(&dg));
        }

        #[test]
        fn dual_recursion_inequality(
            lambda in 0.0f64..3.0,
            triple in (1usize..16).prop_flat_map(|n| (
                prop::collection::vec(-6.0f64..6.0, n),
                prop::collection::vec(-6.0f64..6.0, n),
                prop::collection::vec(-3.0f64..3.0, n),
            )),
        ) {
            let p = SparsePrior::new(lambda);
            let (xk, xk1, truth) = triple;
            let step: Vec<f64> = xk1.iter().zip(&xk).map(|(a, b)| a - b).collect();
            let pk = p.conj_grad(&xk);
            let diff: Vec<f64> = pk.iter().zip(&truth).map(|(a, b)| a - b).collect();
            let lhs = p.bregman_distance(&xk1, &truth);
            let rhs = p.bregman_distance(&xk, &truth)
                + dot(&step, &diff)
                + norm_sq(&step) / (2.0 * p.sigma());
            prop_assert!(lhs <= rhs + 1e-10, "{lhs} > {rhs}");
        }
    }
}
