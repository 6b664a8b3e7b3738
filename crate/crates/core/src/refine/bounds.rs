//! Derivative bounds of a map over sampled points, and the admissible radius.

use crate::boxswap::{jacobian, spectral_norms};
use crate::map::{Direction, Homeo, MapError, MAX_DIM};
use crate::modulus::Modulus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sampled suprema of `‖DF‖`, `‖(DF)^{-1}‖` and `‖D²F‖`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeBounds {
    pub first: f64,
    pub inverse: f64,
    pub second: f64,
    pub samples: usize,
}

/// Sample-based estimate of `1 + ‖DF‖ + ‖DF^{-1}‖ + ‖D²F‖` with the
/// safety factor applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub derivatives: DerivativeBounds,
    /// `1 + first + inverse + second`.
    pub raw: f64,
    /// `SAFETY · raw`.
    pub m: f64,
}

/// Sampling sees only a lower bound of a supremum.
pub const SAFETY: f64 = 2.0;

impl Bounds {
    pub fn from_derivatives(derivatives: DerivativeBounds) -> Self {
        let raw = 1.0 + derivatives.first + derivatives.inverse + derivatives.second;
        Self { derivatives, raw, m: SAFETY * raw }
    }

    /// Bi-Lipschitz constant `2M` of a patch built under these bounds.
    pub fn lambda(&self) -> f64 {
        2.0 * self.m
    }
}

/// `√(Σ_k ‖D²F_k‖_F²)` by second differences with step `h`; bounds the
/// operator norm of the second derivative.
pub fn second_derivative_norm<M: Homeo + ?Sized>(map: &M, x: &[f64], h: f64) -> Result<f64, MapError> {
    let n = x.len();
    let mut total = 0.0;
    let mut p = [0.0; MAX_DIM];
    let mut vals = [[0.0; MAX_DIM]; 4];
    for i in 0..n {
        for j in i..n {
            for (s, (a, b)) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)].iter().enumerate() {
                p[..n].copy_from_slice(x);
                p[i] += a * h;
                p[j] += b * h;
                map.apply(&mut p[..n], Direction::Forward)?;
                vals[s][..n].copy_from_slice(&p[..n]);
            }
            let weight = if i == j { 1.0 } else { 2.0 };
            for k in 0..n {
                let d = (vals[0][k] - vals[1][k] - vals[2][k] + vals[3][k]) / (4.0 * h * h);
                total += weight * d * d;
            }
        }
    }
    Ok(total.sqrt())
}

/// Derivative suprema over `points`; first differences use step `h`, second
/// differences step `100·h`.
pub fn derivative_bounds<M: Homeo + ?Sized>(map: &M, points: &[Vec<f64>], h: f64) -> Result<DerivativeBounds, MapError> {
    let rows: Vec<(f64, f64, f64)> = points
        .par_iter()
        .map(|x| {
            let j = jacobian(map, x, h, Direction::Forward)?;
            let (a, b) = spectral_norms(&j).ok_or_else(|| MapError::Domain { at: x.clone() })?;
            Ok((a, b, second_derivative_norm(map, x, 100.0 * h)?))
        })
        .collect::<Result<_, MapError>>()?;
    let fold = |f: fn(&(f64, f64, f64)) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    Ok(DerivativeBounds { first: fold(|r| r.0), inverse: fold(|r| r.1), second: fold(|r| r.2), samples: points.len() })
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RhoError {
    #[error("no admissible {which} radius above {floor:e}")]
    Degenerate { which: &'static str, floor: f64 },
}

/// The three radius constraints of a refinement step and the resulting `ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoChoice {
    /// `1/(10(M+1)²2^{k+1})`.
    pub patch_bound: f64,
    /// Largest `t` with `t/φ(t) < Λ^{-1}2^{-k-1}`.
    pub lipschitz_t: f64,
    /// Largest `t` with `ψ(t)/φ(t) < 1/(C Λ 2^k)`.
    pub implant_t: f64,
    pub rho: f64,
}

const T_FLOOR: f64 = 1e-300;

/// Largest `t ∈ [T_FLOOR, 1]` at which the predicate still holds, assuming it
/// holds on an initial segment; bisection in `log t`.
fn largest_t<P: Fn(f64) -> bool>(pred: P, which: &'static str) -> Result<f64, RhoError> {
    if pred(1.0) {
        return Ok(1.0);
    }
    if !pred(T_FLOOR) {
        return Err(RhoError::Degenerate { which, floor: T_FLOOR });
    }
    let (mut lo, mut hi) = (T_FLOOR.ln(), 0.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if pred(mid.exp()) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    Ok(lo.exp())
}

/// Radius bound for step `k` given `M`, `Λ`, the modulus, the implant
/// modulus and the implant's modulus constant.
pub fn choose_rho(k: usize, m: f64, lambda: f64, phi: &Modulus, psi: &Modulus, psi_constant: f64) -> Result<RhoChoice, RhoError> {
    let scale = 2f64.powi(k as i32);
    let patch_bound = 1.0 / (10.0 * (m + 1.0) * (m + 1.0) * 2.0 * scale);
    let lipschitz_t = largest_t(|t| t / phi.value(t) < 1.0 / (lambda * 2.0 * scale), "Lipschitz")?;
    let implant_t = largest_t(|t| psi.value(t) / phi.value(t) < 1.0 / (psi_constant * lambda * scale), "implant")?;
    let rho = patch_bound.min(lipschitz_t / (2.0 * lambda)).min(implant_t / (2.0 * lambda));
    Ok(RhoChoice { patch_bound, lipschitz_t, implant_t, rho })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{Affine, Identity};

    #[test]
    fn identity_gives_six() {
        let pts = vec![vec![0.3, 0.4], vec![0.7, 0.1]];
        let d = derivative_bounds(&Identity(2), &pts, 1e-5).unwrap();
        let b = Bounds::from_derivatives(d);
        assert!((b.raw - 3.0).abs() < 1e-6 && (b.m - 6.0).abs() < 1e-5);
    }

    #[test]
    fn quadratic_second_derivative() {
        struct Sq;
        impl Homeo for Sq {
            fn dim(&self) -> usize {
                2
            }
            fn apply(&self, x: &mut [f64], _d: Direction) -> Result<(), MapError> {
                x[0] += x[1] * x[1];
                Ok(())
            }
        }
        let v = second_derivative_norm(&Sq, &[0.2, 0.3], 1e-3).unwrap();
        assert!((v - 2.0).abs() < 1e-6);
        let a = Affine::new(vec![2.0, 1.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap();
        assert!(second_derivative_norm(&a, &[0.2, 0.3], 1e-3).unwrap() < 1e-6);
    }

    #[test]
    fn rho_examples() {
        let phi = Modulus::power(0.5).unwrap();
        let psi = Modulus::power(0.75).unwrap();
        let r = choose_rho(1, 2.0, 4.0, &phi, &psi, 0.5).unwrap();
        assert!((r.patch_bound - 1.0 / 360.0).abs() < 1e-15);
        // √t < 1/16 gives t < 2^{-8}, so ρ ≤ 2^{-8}/8.
        assert!((r.lipschitz_t / 2f64.powi(-8) - 1.0).abs() < 1e-9);
        assert!(r.rho <= 2f64.powi(-11) * (1.0 + 1e-9));
        let r2 = choose_rho(2, 2.0, 4.0, &phi, &psi, 0.5).unwrap();
        assert!(r2.rho < r.rho);
        assert!(matches!(choose_rho(1, 2.0, 4.0, &phi, &phi, 0.5), Err(RhoError::Degenerate { .. })));
    }
}
