//! Radial rescaling of `[-1,1]^n` along the level sets of a smooth gauge.
//!
//! `G(z) = z·ξ(s)` with `s = ‖z‖_p`, where `ξ` is the constant `factor` for
//! `s ≤ inner`, equal to 1 for `s ≥ outer`, and a smooth step in between.
//! Because `‖z‖_∞ ≤ ‖z‖_p ≤ n^{1/p}‖z‖_∞`, the identity zone contains a
//! sup-norm collar of the cube and the homothety zone contains a sup-norm cube.

use crate::map::MAX_DIM;
use crate::smooth::{smoothstep, smoothstep_deriv};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialScaler {
    pub n: usize,
    /// Inner plateau value of ξ.
    pub factor: f64,
    /// Gauge level below which the map is the homothety.
    pub inner: f64,
    /// Gauge level above which the map is the identity.
    pub outer: f64,
    /// Even exponent of the gauge.
    pub p: f64,
    /// Shrink parameter when built by [`RadialScaler::cube`], else 0.
    pub gamma: f64,
    pub eps: f64,
}

/// Smallest even `p` with `n^{1/p} ≤ 1 + slack`.
pub fn gauge_exponent(n: usize, slack: f64) -> f64 {
    let p = ((n as f64).ln() / slack.ln_1p()).ceil().max(2.0);
    2.0 * (p / 2.0).ceil()
}

/// `‖z‖_p`, scaled by the largest component so huge exponents stay finite.
#[inline]
pub fn gauge(z: &[f64], p: f64) -> f64 {
    let m = z.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if m == 0.0 {
        return 0.0;
    }
    let s: f64 = z.iter().map(|&v| (v.abs() / m).powf(p)).sum();
    m * s.powf(1.0 / p)
}

impl RadialScaler {
    pub fn new(n: usize, factor: f64, inner: f64, outer: f64, p: f64) -> Self {
        assert!(factor > 0.0 && factor <= 1.0 && 0.0 < inner && inner < outer && outer <= 1.0);
        Self { n, factor, inner, outer, p, gamma: 0.0, eps: 0.0 }
    }

    /// The map sending `[-(1-γ), 1-γ]^n` onto `[-1/2, 1/2]^n` by a homothety
    /// on `‖z‖_∞ ≤ 1 − 0.9γ`, identity on `‖z‖_∞ ≥ 1 − ε/2`, with `ε = γ/100`.
    pub fn cube(n: usize, gamma: f64) -> Self {
        assert!(gamma > 0.0 && gamma <= 0.5);
        let eps = gamma / 100.0;
        let slack = eps / 4.0;
        let p = gauge_exponent(n, slack);
        let inner = (1.0 - 0.9 * gamma) * (n as f64).powf(1.0 / p);
        Self {
            n,
            factor: 1.0 / (2.0 * (1.0 - gamma)),
            inner,
            outer: 1.0 - eps / 2.0,
            p,
            gamma,
            eps,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.factor == 1.0
    }

    /// Largest sup-norm radius on which the map is the homothety.
    pub fn homothety_radius(&self) -> f64 {
        self.inner
            / (self.n as f64).powf(1.0 / self.p)
    }

    #[inline]
    fn xi(&self, s: f64) -> f64 {
        let t = (s - self.inner) / (self.outer - self.inner);
        self.factor + (1.0 - self.factor) * smoothstep(t)
    }

    /// Radial profile `σ ↦ σ ξ(σ)`.
    #[inline]
    pub fn profile(&self, s: f64) -> f64 {
        if s <= self.inner {
            self.factor * s
        } else if s >= self.outer {
            s
        } else {
            s * self.xi(s)
        }
    }

    /// `d/dσ (σ ξ(σ))`.
    pub fn profile_deriv(&self, s: f64) -> f64 {
        if s <= self.inner {
            return self.factor;
        }
        if s >= self.outer {
            return 1.0;
        }
        let w = self.outer - self.inner;
        let t = (s - self.inner) / w;
        self.xi(s) + s * (1.0 - self.factor) * smoothstep_deriv(t) / w
    }

    /// Extremes of the radial derivative over a fine grid of the transition.
    pub fn radial_derivative_range(&self, samples: usize) -> (f64, f64) {
        let (mut lo, mut hi) = (self.factor.min(1.0), self.factor.max(1.0));
        for i in 0..=samples {
            let s = self.inner + (self.outer - self.inner) * i as f64 / samples as f64;
            let d = self.profile_deriv(s);
            lo = lo.min(d);
            hi = hi.max(d);
        }
        (lo, hi)
    }

    /// Applies the map in place; returns false (leaving `z` untouched) in the identity zone.
    #[inline]
    pub fn forward(&self, z: &mut [f64]) -> bool {
        if self.is_identity() {
            return false;
        }
        let s = gauge(z, self.p);
        if s >= self.outer {
            return false;
        }
        let f = if s <= self.inner { self.factor } else { self.xi(s) };
        z.iter_mut().for_each(|v| *v *= f);
        true
    }

    /// Inverse of [`forward`](Self::forward); the transition is solved by bisection.
    pub fn inverse(&self, y: &mut [f64]) -> bool {
        if self.is_identity() {
            return false;
        }
        let s = gauge(y, self.p);
        if s >= self.outer {
            return false;
        }
        if s <= self.factor * self.inner {
            y.iter_mut().for_each(|v| *v /= self.factor);
            return true;
        }
        let (mut lo, mut hi) = (self.inner, self.outer);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.profile(mid) < s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let sigma = 0.5 * (lo + hi);
        let r = sigma / s;
        y.iter_mut().for_each(|v| *v *= r);
        true
    }

    pub fn apply(&self, z: &mut [f64], forward: bool) -> bool {
        debug_assert!(z.len() <= MAX_DIM);
        if forward {
            self.forward(z)
        } else {
            self.inverse(z)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauge_bounds() {
        let z = [0.3, -0.8, 0.5];
        let p = 40.0;
        let g = gauge(&z, p);
        assert!(g >= 0.8 && g <= 0.8 * 3f64.powf(1.0 / p));
        assert_eq!(gauge(&[0.0, 0.0], p), 0.0);
        let big = gauge(&[0.5, 0.5], 1e5);
        assert!((big - 0.5 * 2f64.powf(1e-5)).abs() < 1e-15);
    }

    #[test]
    fn near_face_is_identity() {
        let g = RadialScaler::cube(2, 0.3);
        let mut z = [1.0 - g.eps / 4.0, 0.2];
        let before = z;
        assert!(!g.forward(&mut z));
        assert_eq!(z, before);
    }

    #[test]
    fn half_gamma_is_identity() {
        let g = RadialScaler::cube(3, 0.5);
        let mut z = [0.1, 0.2, 0.3];
        assert!(!g.forward(&mut z));
        assert_eq!(z, [0.1, 0.2, 0.3]);
    }

    #[test]
    fn inner_cube_maps_to_half_cube() {
        let g = RadialScaler::cube(2, 0.3);
        for &z0 in &[[0.7, 0.1], [-0.7, 0.7], [0.3, -0.7]] {
            let mut z = z0;
            g.forward(&mut z);
            let sup = z.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            assert!((sup - 0.5).abs() < 1e-9, "{z:?}");
        }
    }

    #[test]
    fn roundtrip_in_transition() {
        let g = RadialScaler::cube(2, 0.2);
        for i in 0..200 {
            let a = i as f64 * 0.0314;
            let r = 0.8 + 0.2 * (i as f64 / 200.0);
            let z0 = [r * a.cos(), r * a.sin()];
            let mut z = z0;
            g.forward(&mut z);
            g.inverse(&mut z);
            assert!((z[0] - z0[0]).abs() < 1e-13 && (z[1] - z0[1]).abs() < 1e-13);
        }
    }

    #[test]
    fn radial_derivative_bounds() {
        for &gamma in &[0.05, 0.1, 0.3, 0.45] {
            let g = RadialScaler::cube(2, gamma);
            let (lo, hi) = g.radial_derivative_range(10_000);
            assert!(lo >= 0.5);
            assert!(hi * gamma < 2.0, "gamma {gamma}: {hi}");
        }
    }
}
