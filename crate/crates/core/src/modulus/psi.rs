//! A concave modulus ψ with `ψ/φ → 0` that still has a finite Dini integral.

use super::{dini_relative, Modulus, ModulusError, Sampled};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiPiecewise {
    /// `φ⁻¹(2^{-k})`, `k = 0..=K`.
    pub shells: Vec<f64>,
    /// Breakpoints `b_0 > b_1 > … > b_K` with `ψ(b_k) = 2^{-k}`.
    pub breakpoints: Vec<f64>,
    /// `2^{k+1}(a_k − a_{k+1})`, `k < K`.
    pub series: Vec<f64>,
    /// Square-root differences of the tail sums.
    pub root_steps: Vec<f64>,
    /// Running minima of `root_steps`; segment `[b_{k+1}, b_k]` has slope `1/min_steps[k]`.
    pub min_steps: Vec<f64>,
    /// Enclosure of `Σ_{ℓ≥K} series_ℓ`.
    pub tail: (f64, f64),
    /// ψ as a modulus: piecewise linear between breakpoints, a power law
    /// below `b_K`, and linear above `b_0`.
    pub modulus: Modulus,
}

impl PsiPiecewise {
    pub fn terms(&self) -> usize {
        self.series.len()
    }

    pub fn value(&self, t: f64) -> f64 {
        self.modulus.value(t)
    }

    /// Slope of ψ on `[b_{k+1}, b_k]`.
    pub fn slope(&self, k: usize) -> f64 {
        1.0 / self.min_steps[k]
    }
}

/// Builds ψ from `K ≥ 8` terms of the series for `m`.
pub fn build_psi(m: &Modulus, k_terms: usize) -> Result<PsiPiecewise, ModulusError> {
    if k_terms < 8 {
        return Err(ModulusError::SeriesBudget { tail: f64::NAN, head: f64::NAN, terms: k_terms });
    }
    let kk = k_terms;
    let shells: Vec<f64> = (0..=kk)
        .map(|k| m.inverse(0.5f64.powi(k as i32)))
        .collect::<Result<_, _>>()?;
    let series: Vec<f64> = (0..kk)
        .map(|k| 2f64.powi(k as i32 + 1) * (shells[k] - shells[k + 1]))
        .collect();
    let head: f64 = series.iter().sum();

    // On [a_{ℓ+1}, a_ℓ] the integrand lies between 2^ℓ and 2^{ℓ+1}, so the
    // tail of the series sits between ∫₀^{a_K} and twice that.
    let enc = dini_relative(m, shells[kk], 1e-10)?;
    let tail = (enc.lower, 2.0 * enc.upper);
    if !(tail.1 <= 1e-12 * head) {
        return Err(ModulusError::SeriesBudget { tail: tail.1, head, terms: kk });
    }

    let mut sums = vec![0.0; kk + 1];
    sums[kk] = 0.5 * (tail.0 + tail.1);
    for k in (0..kk).rev() {
        sums[k] = sums[k + 1] + series[k];
    }
    let root_steps: Vec<f64> = (0..kk)
        .map(|k| series[k] / (sums[k].sqrt() + sums[k + 1].sqrt()))
        .collect();
    let mut min_steps = root_steps.clone();
    for k in 1..kk {
        min_steps[k] = min_steps[k].min(min_steps[k - 1]);
    }

    // Past the last term the steps are continued geometrically with ratio
    // 2^{-1/2}, which makes b_{K-1}/b_K = 1 + 2√2(1 − 2^{-3/2}) > 2.
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let last = min_steps[kk - 1];
    let mut b = vec![0.0; kk + 1];
    b[kk] = last / 2f64.powi(kk as i32 + 1) * r / (1.0 - r * r * r);
    for k in (0..kk).rev() {
        b[k] = b[k + 1] + min_steps[k] / 2f64.powi(k as i32 + 1);
    }

    let t: Vec<f64> = b.iter().rev().copied().collect();
    let v: Vec<f64> = (0..=kk).rev().map(|k| 0.5f64.powi(k as i32)).collect();
    let modulus = Modulus::Sampled(Sampled::new(t, v, Some(1.0 / min_steps[0]))?);
    Ok(PsiPiecewise { shells, breakpoints: b, series, root_steps, min_steps, tail, modulus })
}

/// `(t, ψ(t)/φ(t))` at every breakpoint and segment midpoint up to index `K`,
/// ordered by decreasing `t`.
pub fn psi_ratio_profile(psi: &PsiPiecewise, m: &Modulus, k_max: usize) -> Vec<(f64, f64)> {
    let b = &psi.breakpoints;
    let top = k_max.min(b.len() - 1);
    let mut out = Vec::with_capacity(2 * top + 1);
    for k in 0..=top {
        out.push((b[k], psi.value(b[k]) / m.value(b[k])));
        if k < top {
            let mid = 0.5 * (b[k] + b[k + 1]);
            out.push((mid, psi.value(mid) / m.value(mid)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sqrt_psi() -> PsiPiecewise {
        build_psi(&Modulus::power(0.5).unwrap(), 60).unwrap()
    }

    #[test]
    fn sqrt_series_closed_forms() {
        let p = sqrt_psi();
        let c = 3f64.sqrt() * (1.0 - 0.5f64.sqrt());
        for k in 0..50 {
            let a = 3.0 * 0.5f64.powi(k as i32 + 1);
            assert!((p.series[k] / a - 1.0).abs() < 1e-12, "A_{k}");
            let a1 = c * 0.5f64.powf(k as f64 / 2.0);
            assert!((p.root_steps[k] / a1 - 1.0).abs() < 1e-9, "A'_{k}");
            assert_eq!(p.min_steps[k], p.root_steps[k]);
        }
    }

    #[test]
    fn sqrt_breakpoints_closed_form() {
        let p = sqrt_psi();
        let c = 3f64.sqrt() * (1.0 - 0.5f64.sqrt()) / 2.0 / (1.0 - 0.5f64.powf(1.5));
        for k in 0..=50 {
            let exact = c * 0.5f64.powf(1.5 * k as f64);
            assert!((p.breakpoints[k] / exact - 1.0).abs() < 1e-9, "b_{k}");
        }
        assert!((p.breakpoints[1] - 0.13873).abs() < 1e-4);
    }

    #[test]
    fn psi_hits_dyadic_values() {
        let p = sqrt_psi();
        for (k, &b) in p.breakpoints.iter().enumerate() {
            assert_eq!(p.value(b), 0.5f64.powi(k as i32));
        }
        assert_eq!(p.value(0.0), 0.0);
        assert!(p.modulus.validate(0.1).concave_increasing.pass);
    }

    #[test]
    fn ratio_profile_decreases_at_breakpoints() {
        let m = Modulus::power(0.5).unwrap();
        let p = sqrt_psi();
        let prof = psi_ratio_profile(&p, &m, 60);
        let at_b: Vec<f64> = prof.iter().step_by(2).map(|x| x.1).collect();
        for k in 2..at_b.len() {
            assert!(at_b[k] < at_b[k - 1]);
        }
        assert!(prof.iter().all(|&(_, r)| r > 0.0));
    }

    #[test]
    fn too_few_terms_is_a_budget_error() {
        let m = Modulus::power(0.5).unwrap();
        assert!(matches!(build_psi(&m, 8), Err(ModulusError::SeriesBudget { .. })));
        assert!(matches!(build_psi(&Modulus::Tlog2, 200), Err(ModulusError::SeriesBudget { .. })));
    }
}
