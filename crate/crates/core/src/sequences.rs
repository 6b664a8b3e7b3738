//! Capacity exponent `N` and the Cantor scales `α_k`, `β_k`, `λ_k`.
//!
//! With `u_k = 2^{-(N+k)}` and `I_k = ∫₀^{φ⁻¹(u_k)} ds/φ`, the edge lengths are
//! `α_k = u_k(1 + I_k)` and the gaps `β_k = (α_{k-1} − 2α_k)/4 = u_k (I_{k-1} − I_k)/2`.
//! The gap form is computed directly from the shell integral between
//! consecutive `φ⁻¹(u_k)`, so it never suffers cancellation.

use crate::modulus::{dini_enclosure, dini_relative, shell_integral, Enclosure, Modulus, ModulusError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SequenceError {
    #[error(transparent)]
    Modulus(#[from] ModulusError),
    #[error("h(1) = {0} < 1: inconsistent modulus data")]
    Inconsistent(f64),
    #[error("could not certify the root bracket [{lo}, {hi}] for N")]
    Uncertified { lo: f64, hi: f64 },
    #[error("enclosures too wide to decide `{name}` at k = {k}")]
    Certificate { name: String, k: usize },
    #[error("need K >= 2, got {0}")]
    Depth(usize),
}

/// Relative width of every integral enclosure used for the scales.
pub const DEFAULT_ENCLOSURE_TOL: f64 = 1e-9;
pub const DEFAULT_DEPTH: usize = 40;

/// `h(u) = u(1 + ∫₀^{φ⁻¹(u)} ds/φ)` from the high-order point value.
pub fn capacity_function(m: &Modulus, u: f64) -> Result<f64, ModulusError> {
    let x = m.inverse(u)?;
    Ok(u * (1.0 + dini_enclosure(m, x, f64::INFINITY)?.estimate))
}

fn capacity_bounds(m: &Modulus, u: f64, rel: f64) -> Result<(f64, f64), ModulusError> {
    let e = dini_relative(m, m.inverse(u)?, rel)?;
    Ok((u * (1.0 + e.lower) * (1.0 - f64::EPSILON), u * (1.0 + e.upper) * (1.0 + f64::EPSILON)))
}

const CERTIFY_WIDTH: f64 = 1e-8;

/// Solves `h(2^{-N}) = 1` for `N`, to within `tol`.
///
/// Bisection runs on the high-order point values of `h`; the bracket
/// `[N − w, N + w]` with `w = max(tol, 1e-8)` is then certified with
/// two-sided enclosures.
pub fn solve_capacity(m: &Modulus, tol: f64) -> Result<f64, SequenceError> {
    let tol = tol.max(1e-12);
    let h1 = capacity_function(m, 1.0)?;
    if h1 < 1.0 {
        return Err(SequenceError::Inconsistent(h1));
    }
    if h1 == 1.0 {
        return Ok(0.0);
    }
    // Bisect on N = -log2 u; h is increasing in u, so decreasing in N.
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while capacity_function(m, 2f64.powf(-hi))? >= 1.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1000.0 {
            return Err(SequenceError::Inconsistent(h1));
        }
    }
    while hi - lo > 0.25 * tol {
        let mid = 0.5 * (lo + hi);
        if capacity_function(m, 2f64.powf(-mid))? >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let n = 0.5 * (lo + hi);
    // The sandwich bounds converge only quadratically, so the certified
    // bracket is never asked to be narrower than CERTIFY_WIDTH.
    let w = tol.max(CERTIFY_WIDTH);
    let (n_lo, n_hi) = ((n - w).max(0.0), n + w);
    let rel = 0.05 * w;
    let above = capacity_bounds(m, 2f64.powf(-n_lo), rel)?;
    let below = capacity_bounds(m, 2f64.powf(-n_hi), rel)?;
    if !(above.0 > 1.0 && below.1 < 1.0) && n_lo > 0.0 {
        return Err(SequenceError::Uncertified { lo: n_lo, hi: n_hi });
    }
    Ok(n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSequence {
    /// Capacity exponent.
    pub capacity: f64,
    /// `α_0..=α_K`.
    pub alphas: Vec<f64>,
    pub alpha_bounds: Vec<(f64, f64)>,
    /// `β_1..=β_K` stored at index `k - 1`.
    pub betas: Vec<f64>,
    pub beta_bounds: Vec<(f64, f64)>,
    /// `λ_1..=λ_K` stored at index `k - 1`.
    pub lambdas: Vec<f64>,
    /// Enclosures of `I_k`, `k = 0..=K`.
    pub integrals: Vec<(f64, f64)>,
    /// First index from which `2^{-(N+k)} < α_k < 2^{-(N+k-1)}` holds up to `K`.
    pub two_sided_from: Option<usize>,
    pub enclosure_tol: f64,
}

impl ScaleSequence {
    pub fn depth(&self) -> usize {
        self.alphas.len() - 1
    }
    pub fn alpha(&self, k: usize) -> f64 {
        self.alphas[k]
    }
    /// `β_k` for `k ≥ 1`.
    pub fn beta(&self, k: usize) -> f64 {
        self.betas[k - 1]
    }
    /// `λ_k` for `k ≥ 1`.
    pub fn lambda(&self, k: usize) -> f64 {
        self.lambdas[k - 1]
    }
    /// `2^{-(N+k)}`.
    pub fn level(&self, k: usize) -> f64 {
        2f64.powf(-(self.capacity + k as f64))
    }
    /// Edge ratio of generation `k+1` cubes inside generation `k`.
    pub fn ratio(&self, k: usize) -> f64 {
        self.alphas[k + 1] / self.alphas[k]
    }
}

/// Scales for `k = 0..=K` with per-integral relative enclosure width `rel_tol`.
pub fn build_scales_with(m: &Modulus, capacity: f64, depth: usize, rel_tol: f64) -> Result<ScaleSequence, SequenceError> {
    if depth < 2 {
        return Err(SequenceError::Depth(depth));
    }
    let levels: Vec<f64> = (0..=depth).map(|k| 2f64.powf(-(capacity + k as f64))).collect();
    let a: Vec<f64> = levels.iter().map(|&u| m.inverse(u)).collect::<Result<_, _>>()?;

    // shells[k-1] = ∫_{a_k}^{a_{k-1}} ds/φ
    let mut shells = Vec::with_capacity(depth);
    for k in 1..=depth {
        let rough = shell_integral(m, a[k], a[k - 1], f64::INFINITY).unwrap_or_else(|e| e);
        let e = shell_integral(m, a[k], a[k - 1], rel_tol * rough.lower)
            .map_err(|best| ModulusError::Budget {
                best: crate::modulus::DiniEnclosure {
                    lower: best.lower,
                    upper: best.upper,
                    estimate: best.estimate,
                    terms_used: 1,
                },
            })?;
        shells.push(e);
    }
    let bottom = dini_relative(m, a[depth], rel_tol)?;
    let mut integrals = vec![Enclosure::default(); depth + 1];
    integrals[depth] = Enclosure { lower: bottom.lower, upper: bottom.upper, estimate: bottom.estimate };
    for k in (0..depth).rev() {
        integrals[k] = integrals[k + 1].add(shells[k]);
    }

    let down = 1.0 - 2.0 * f64::EPSILON;
    let up = 1.0 + 2.0 * f64::EPSILON;
    let alphas: Vec<f64> = (0..=depth).map(|k| levels[k] * (1.0 + integrals[k].estimate)).collect();
    let alpha_bounds: Vec<(f64, f64)> = (0..=depth)
        .map(|k| (levels[k] * (1.0 + integrals[k].lower) * down, levels[k] * (1.0 + integrals[k].upper) * up))
        .collect();
    let betas: Vec<f64> = (1..=depth).map(|k| 0.5 * levels[k] * shells[k - 1].estimate).collect();
    let beta_bounds: Vec<(f64, f64)> = (1..=depth)
        .map(|k| (0.5 * levels[k] * shells[k - 1].lower * down, 0.5 * levels[k] * shells[k - 1].upper * up))
        .collect();
    let lambdas: Vec<f64> = (1..=depth).map(|k| alphas[k - 1] / betas[k - 1]).collect();

    let two_sided = |k: usize| integrals[k].lower > 0.0 && integrals[k].upper < 1.0;
    let mut two_sided_from = None;
    for k in (1..=depth).rev() {
        if two_sided(k) {
            two_sided_from = Some(k);
        } else {
            break;
        }
    }

    let seq = ScaleSequence {
        capacity,
        alphas,
        alpha_bounds,
        betas,
        beta_bounds,
        lambdas,
        integrals: integrals.iter().map(|e| (e.lower, e.upper)).collect(),
        two_sided_from,
        enclosure_tol: rel_tol,
    };
    // The halving law and positive gaps are structural; refuse to hand out a
    // sequence whose enclosures cannot decide them.
    for k in 1..=depth {
        if !(seq.beta_bounds[k - 1].0 > 0.0) {
            return Err(SequenceError::Certificate { name: "halving".into(), k });
        }
    }
    Ok(seq)
}

pub fn build_scales(m: &Modulus, capacity: f64, depth: usize) -> Result<ScaleSequence, SequenceError> {
    build_scales_with(m, capacity, depth, DEFAULT_ENCLOSURE_TOL)
}

/// Solves for `N` and builds the scales in one go.
pub fn scales_for(m: &Modulus, depth: usize) -> Result<ScaleSequence, SequenceError> {
    let n = solve_capacity(m, 1e-11)?;
    build_scales(m, n, depth)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub k: usize,
    /// Positive iff the inequality holds with room to spare under outward rounding.
    pub margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub modulus: String,
    pub capacity: f64,
    pub depth: usize,
    pub two_sided_from: Option<usize>,
    /// Smallest `C` with `max_{ℓ≤k} λ_ℓ ≤ C λ_k` for all `k`.
    pub ratio_constant: f64,
    pub checks: Vec<Check>,
}

impl Certificate {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }

    /// Smallest margin among checks with the given name.
    pub fn min_margin(&self, name: &str) -> Option<f64> {
        self.checks.iter().filter(|c| c.name == name).map(|c| c.margin).reduce(f64::min)
    }
}

/// Checks every scale-lemma inequality using the outward bounds.
pub fn verify_scales(seq: &ScaleSequence, m: &Modulus) -> Certificate {
    let kk = seq.depth();
    let mut checks = Vec::new();
    let mut push = |name: &str, k: usize, margin: f64, strict: bool| {
        let pass = if strict { margin > 0.0 } else { margin >= 0.0 };
        checks.push(Check { name: name.into(), k, margin, pass });
    };

    push("alpha0", 0, 1e-10 - (seq.alphas[0] - 1.0).abs(), false);
    for k in 0..kk {
        // α_k − 2α_{k+1} = 4β_{k+1}
        push("halving", k, 4.0 * seq.beta_bounds[k].0 / seq.alpha_bounds[k].1, true);
    }
    for k in 1..=kk {
        push("alpha_le_dyadic", k, 1.0 - seq.alpha_bounds[k].1 * 2f64.powi(k as i32), false);
    }
    match seq.two_sided_from {
        Some(start) => {
            for k in start..=kk {
                let (lo, hi) = seq.integrals[k];
                push("two_sided", k, lo.min(1.0 - hi), true);
            }
        }
        None => push("two_sided", kk, -1.0, true),
    }
    for k in 1..=kk {
        push("beta_positive", k, seq.beta_bounds[k - 1].0, true);
    }
    for k in 1..kk {
        let (next_hi, this_lo) = (seq.beta_bounds[k].1, seq.beta_bounds[k - 1].0);
        push("beta_decreasing", k, 1.0 - next_hi / this_lo, true);
    }
    for k in 1..=kk {
        let level = seq.level(k);
        let up = m.value(2.0 * seq.beta_bounds[k - 1].1) * (1.0 + 4.0 * f64::EPSILON);
        push("gap_upper", k, 1.0 - up / (2.0 * level), true);
        let low = m.value(4.0 * seq.beta_bounds[k - 1].0) * (1.0 - 4.0 * f64::EPSILON);
        push("gap_lower", k, low / level - 1.0, false);
    }

    let mut running = 0.0f64;
    let mut ratio_constant = 1.0f64;
    for k in 1..=kk {
        running = running.max(seq.lambda(k));
        ratio_constant = ratio_constant.max(running / seq.lambda(k));
    }
    push("ratio", 0, if ratio_constant.is_finite() { 1.0 } else { -1.0 }, true);

    let lhs: f64 = (1..=kk).map(|k| 2f64.powi(k as i32) * seq.beta(k)).sum();
    let rhs = 0.5 * (seq.alphas[0] - 2f64.powi(kk as i32) * seq.alphas[kk]);
    push("telescoping", kk, 1e-9 - (lhs - rhs).abs(), false);

    Certificate {
        modulus: m.label(),
        capacity: seq.capacity,
        depth: kk,
        two_sided_from: seq.two_sided_from,
        ratio_constant,
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capacity_for_sqrt_is_one() {
        let m = Modulus::power(0.5).unwrap();
        let n = solve_capacity(&m, 1e-11).unwrap();
        assert!((n - 1.0).abs() < 1e-10, "{n}");
    }

    #[test]
    fn capacity_for_three_quarters() {
        let m = Modulus::power(0.75).unwrap();
        let n = solve_capacity(&m, 1e-10).unwrap();
        let u = 2f64.powf(-n);
        // Independent oracle: h(u) = u(1 + 4u^{1/3}).
        assert!((u * (1.0 + 4.0 * u.cbrt()) - 1.0).abs() < 1e-9);
        assert!((u - 0.2772).abs() < 1e-4);
    }

    #[test]
    fn sqrt_scales_closed_forms() {
        let m = Modulus::power(0.5).unwrap();
        let s = build_scales(&m, 1.0, 20).unwrap();
        for k in 0..=20 {
            let exact = 0.5f64.powi(k as i32 + 1) * (1.0 + 0.5f64.powi(k as i32));
            assert!((s.alpha(k) / exact - 1.0).abs() < 1e-12, "alpha_{k}");
        }
        for k in 1..=20 {
            assert!((s.beta(k) / 0.5f64.powi(2 * k as i32 + 2) - 1.0).abs() < 1e-12);
            let lam = 2f64.powi(k as i32 + 2) + 8.0;
            assert!((s.lambda(k) / lam - 1.0).abs() < 1e-12);
        }
        assert_eq!(s.two_sided_from, Some(1));
    }

    #[test]
    fn sqrt_certificate() {
        let m = Modulus::power(0.5).unwrap();
        let s = build_scales(&m, 1.0, 40).unwrap();
        let c = verify_scales(&s, &m);
        assert!(c.all_pass(), "{:?}", c.failures().collect::<Vec<_>>());
        assert_eq!(c.ratio_constant, 1.0);
    }

    #[test]
    fn depth_below_two_rejected() {
        let m = Modulus::power(0.5).unwrap();
        assert!(matches!(build_scales(&m, 1.0, 1), Err(SequenceError::Depth(1))));
    }
}
