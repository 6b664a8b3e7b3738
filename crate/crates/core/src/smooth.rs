//! C^∞ transition profiles.

use crate::quad::gl16;
use std::sync::OnceLock;

/// `exp(-1/t)` for `t > 0`, else 0.
#[inline]
fn flat(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

/// Smooth step: 0 on `t ≤ 0`, 1 on `t ≥ 1`, all derivatives vanish at both ends.
#[inline]
pub fn smoothstep(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let a = flat(t);
        a / (a + flat(1.0 - t))
    }
}

/// Derivative of [`smoothstep`].
pub fn smoothstep_deriv(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        return 0.0;
    }
    let (a, b) = (flat(t), flat(1.0 - t));
    let (da, db) = (a / (t * t), b / ((1.0 - t) * (1.0 - t)));
    (da * b + a * db) / ((a + b) * (a + b))
}

/// 1 on `[lo, hi]`, 0 outside `[lo − margin, hi + margin]`, smooth between.
#[inline]
pub fn plateau(x: f64, lo: f64, hi: f64, margin: f64) -> f64 {
    if x >= lo && x <= hi {
        1.0
    } else if x < lo {
        smoothstep((x - (lo - margin)) / margin)
    } else {
        smoothstep(((hi + margin) - x) / margin)
    }
}

/// Radial cutoff equal to 1 for `s ≤ inner` and 0 for `s ≥ outer`.
#[inline]
pub fn cutoff(s: f64, inner: f64, outer: f64) -> f64 {
    1.0 - smoothstep((s - inner) / (outer - inner))
}

/// Logit-like coordinate `1/t − 1/(1−t)` of the step; decreasing on `(0, 1)`.
fn step_logit(t: f64) -> f64 {
    1.0 / t - 1.0 / (1.0 - t)
}

/// Inverse of [`step_logit`], written without cancellation on either side.
fn step_from_logit(u: f64) -> f64 {
    if u >= 0.0 {
        2.0 / ((u + 2.0) + (u * u + 4.0).sqrt())
    } else {
        1.0 - step_from_logit(-u)
    }
}

const LOGIT_LO: f64 = -745.0;
const LOGIT_HI: f64 = 705.0;
const LOGIT_STEP: f64 = 0.5;

/// `∫_{t}^1 (1/smoothstep − 1)` at the logit grid, accumulated from `t = 1`.
fn transit_table() -> &'static Vec<f64> {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let cells = ((LOGIT_HI - LOGIT_LO) / LOGIT_STEP) as usize;
        let mut cum = Vec::with_capacity(cells + 1);
        cum.push(0.0);
        let mut acc = 0.0;
        for i in 0..cells {
            let hi = step_from_logit(LOGIT_LO + i as f64 * LOGIT_STEP);
            let lo = step_from_logit(LOGIT_LO + (i + 1) as f64 * LOGIT_STEP);
            acc += gl16(|t| step_logit(t).exp(), lo, hi);
            cum.push(acc);
        }
        cum
    })
}

/// Smallest argument accepted by [`transit`]; below it the transit time overflows.
pub fn transit_floor() -> f64 {
    step_from_logit(LOGIT_HI)
}

/// Transit time `∫_t^1 dτ / smoothstep(τ)` for `t ∈ (0, 1]`: the time a unit-speed
/// plateau flow needs to carry a point from step level `t` onto the plateau.
/// Returns `+∞` below [`transit_floor`].
pub fn transit(t: f64) -> f64 {
    if t >= 1.0 {
        return 0.0;
    }
    if t < transit_floor() {
        return f64::INFINITY;
    }
    let u = step_logit(t);
    if u < LOGIT_LO {
        return 1.0 - t;
    }
    let table = transit_table();
    let i = (((u - LOGIT_LO) / LOGIT_STEP) as usize).min(table.len() - 1);
    let node = step_from_logit(LOGIT_LO + i as f64 * LOGIT_STEP);
    (1.0 - t) + table[i] + gl16(|s| step_logit(s).exp(), t, node.max(t))
}

/// Inverse of [`transit`] on `[0, ∞)`; values past the floor map to the floor.
pub fn transit_inverse(g: f64) -> f64 {
    if g <= 0.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (transit_floor(), 1.0);
    if g >= transit(lo) {
        return lo;
    }
    let table = transit_table();
    // Bracket by the table, then Newton safeguarded by bisection.
    let k = table.partition_point(|&c| c < g);
    if k + 1 < table.len() {
        lo = lo.max(step_from_logit(LOGIT_LO + (k + 1) as f64 * LOGIT_STEP));
    }
    if k > 0 {
        let cand = step_from_logit(LOGIT_LO + (k - 1) as f64 * LOGIT_STEP);
        if transit(cand) <= g {
            hi = cand;
        }
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..200 {
        let r = transit(t) - g;
        if r == 0.0 {
            return t;
        }
        if r > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let next = t + r * smoothstep(t);
        if next == t {
            return t;
        }
        t = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        if hi - lo <= 4.0 * f64::EPSILON * t {
            break;
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_is_symmetric_and_monotone() {
        let mut prev = 0.0;
        for i in 0..=1000 {
            let t = i as f64 / 1000.0;
            let s = smoothstep(t);
            assert!(s >= prev);
            assert!((s + smoothstep(1.0 - t) - 1.0).abs() < 1e-15);
            prev = s;
        }
        assert_eq!(smoothstep(0.5), 0.5);
    }

    #[test]
    fn derivative_matches_differences() {
        for &t in &[0.1, 0.3, 0.5, 0.77, 0.95] {
            let h = 1e-6;
            let fd = (smoothstep(t + h) - smoothstep(t - h)) / (2.0 * h);
            assert!((fd - smoothstep_deriv(t)).abs() < 1e-8);
        }
        assert!((smoothstep_deriv(0.5) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn plateau_levels() {
        assert_eq!(plateau(0.5, 0.4, 0.6, 0.1), 1.0);
        assert_eq!(plateau(0.25, 0.4, 0.6, 0.1), 0.0);
        assert_eq!(plateau(0.75, 0.4, 0.6, 0.1), 0.0);
        assert!((plateau(0.35, 0.4, 0.6, 0.1) - 0.5).abs() < 1e-12);
    }
    #[test]
    fn logit_round_trip() {
        for &t in &[1e-3, 0.1, 0.5, 0.9, 0.999] {
            assert!((step_from_logit(step_logit(t)) - t).abs() < 1e-15);
        }
    }

    #[test]
    fn transit_matches_quadrature() {
        // Composite Simpson rule on 1/smoothstep.
        for &t in &[0.05, 0.2, 0.5, 0.8, 0.97] {
            let m = 200_000;
            let h = (1.0 - t) / m as f64;
            let f = |i: usize| 1.0 / smoothstep(t + i as f64 * h).max(1e-300);
            let inner: f64 = (1..m).map(|i| if i % 2 == 1 { 4.0 * f(i) } else { 2.0 * f(i) }).sum();
            let reference = (f(0) + inner + f(m)) * h / 3.0;
            assert!((transit(t) / reference - 1.0).abs() < 1e-8, "t = {t}");
        }
        assert_eq!(transit(1.0), 0.0);
        assert!(transit(1e-4).is_infinite());
    }

    #[test]
    fn transit_inverts() {
        for &t in &[0.003, 0.01, 0.07, 0.3, 0.5, 0.75, 0.99, 0.99999] {
            let g = transit(t);
            assert!((transit_inverse(g) - t).abs() <= 1e-14 * t.max(1e-3), "t = {t}");
        }
        for i in 1..2000 {
            let g = i as f64 * 7.1e-4;
            assert!((transit(transit_inverse(g)) - g).abs() <= 1e-14 * g.max(1.0), "g = {g}");
        }
    }
}
