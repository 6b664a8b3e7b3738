//! Two-sided enclosures of `∫ ds/φ(s)` over value-dyadic shells.
//!
//! The shell endpoints are `t_j = φ⁻¹(φ(x)·2^{-j})`. On each shell `1/φ` is
//! convex (φ is concave), so on every sub-piece the midpoint rule is a lower
//! bound and the trapezoid rule an upper bound. Sub-pieces are geometric and
//! are refined by doubling, which makes the bounds nest as tolerances shrink.
//! Below the last shell the closed-form tail of the family is used.

use super::{Modulus, ModulusError};
use serde::{Deserialize, Serialize};
use crate::quad::gauss_legendre;

/// Relative widening applied to every rounded bound.
const ROUND: f64 = 16.0 * f64::EPSILON;
/// Shells kept below the closed-form threshold before the tail takes over.
const SHELLS_BELOW_THRESHOLD: usize = 24;
const MAX_SHELLS: usize = 4096;
const MAX_PIECES: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiniEnclosure {
    pub lower: f64,
    pub upper: f64,
    /// High-order point value; always inside `[lower, upper]`.
    pub estimate: f64,
    pub terms_used: usize,
}

impl DiniEnclosure {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Enclosure of an integral over a bounded interval.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Enclosure {
    pub lower: f64,
    pub upper: f64,
    pub estimate: f64,
}

impl Enclosure {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn add(self, o: Enclosure) -> Enclosure {
        Enclosure {
            lower: (self.lower + o.lower) * (1.0 - f64::EPSILON),
            upper: (self.upper + o.upper) * (1.0 + f64::EPSILON),
            estimate: self.estimate + o.estimate,
        }
    }

    pub fn scale(self, c: f64) -> Enclosure {
        Enclosure {
            lower: self.lower * c * (1.0 - f64::EPSILON),
            upper: self.upper * c * (1.0 + f64::EPSILON),
            estimate: self.estimate * c,
        }
    }
}

/// Neumaier-compensated sum of positive terms.
#[derive(Default, Clone, Copy)]
struct Sum {
    s: f64,
    c: f64,
}

impl Sum {
    fn add(&mut self, x: f64) {
        let t = self.s + x;
        if self.s.abs() >= x.abs() {
            self.c += (self.s - t) + x;
        } else {
            self.c += (x - t) + self.s;
        }
        self.s = t;
    }
    fn get(&self) -> f64 {
        self.s + self.c
    }
}

fn split_points(m: &Modulus, a: f64, b: f64) -> Vec<f64> {
    let mut pts = vec![a];
    m.kinks(a, b, &mut pts);
    pts.push(b);
    pts
}

/// Gauss–Legendre on geometric sub-pieces between kinks.
fn estimate(m: &Modulus, pts: &[f64]) -> f64 {
    let (x, w) = gauss_legendre();
    let mut sum = Sum::default();
    for seg in pts.windows(2) {
        let (c, d) = (seg[0], seg[1]);
        let pieces = 2 * ((d / c).log2().ceil().max(1.0) as usize);
        let q = (d / c).powf(1.0 / pieces as f64);
        let mut lo = c;
        for i in 0..pieces {
            let hi = if i + 1 == pieces { d } else { lo * q };
            let (mid, half) = ((lo + hi) / 2.0, (hi - lo) / 2.0);
            let mut s = 0.0;
            for j in 0..16 {
                s += w[j] / m.value(mid + half * x[j]);
            }
            sum.add(s * half);
            lo = hi;
        }
    }
    sum.get()
}

/// Sandwich over `2^level` geometric pieces of `[a,b]` plus the kinks.
fn sandwich(m: &Modulus, a: f64, b: f64, kinks: &[f64], level: u32) -> (f64, f64) {
    let pieces = 1usize << level;
    let q = (b / a).powf(1.0 / pieces as f64);
    let (mut lo_sum, mut hi_sum) = (Sum::default(), Sum::default());
    let mut ki = 0;
    let mut left = a;
    let mut f_left = 1.0 / m.value(a);
    let mut piece = |l: f64, r: f64, fl: f64, fr: f64| {
        let h = r - l;
        let fm = 1.0 / m.value(0.5 * (l + r));
        lo_sum.add(h * fm.max(fr));
        hi_sum.add(h * (0.5 * (fl + fr)).min(fl));
    };
    for i in 1..=pieces {
        let right = if i == pieces { b } else { a * q.powi(i as i32) };
        while ki < kinks.len() && kinks[ki] < right {
            let k = kinks[ki];
            if k > left {
                let fk = 1.0 / m.value(k);
                piece(left, k, f_left, fk);
                left = k;
                f_left = fk;
            }
            ki += 1;
        }
        let f_right = 1.0 / m.value(right);
        piece(left, right, f_left, f_right);
        left = right;
        f_left = f_right;
    }
    (lo_sum.get() * (1.0 - ROUND), hi_sum.get() * (1.0 + ROUND))
}

/// Enclosure of `∫_a^b ds/φ(s)` for `0 < a < b`, refined until the width is
/// at most `abs_tol`.
pub fn shell_integral(m: &Modulus, a: f64, b: f64, abs_tol: f64) -> Result<Enclosure, Enclosure> {
    debug_assert!(0.0 < a && a < b);
    let pts = split_points(m, a, b);
    let kinks = &pts[1..pts.len() - 1];
    let est = estimate(m, &pts);
    let mut level = 3u32;
    loop {
        let (lo, hi) = sandwich(m, a, b, kinks, level);
        let enc = Enclosure { lower: lo, upper: hi, estimate: est.clamp(lo, hi) };
        let w = hi - lo;
        if w <= abs_tol {
            return Ok(enc);
        }
        // Width falls like pieces⁻²; jump straight to the predicted level.
        let need = (w / abs_tol).sqrt().log2().ceil().max(1.0) as u32;
        level += need;
        if level > MAX_PIECES.trailing_zeros() {
            return Err(enc);
        }
    }
}

fn tail_enclosure(m: &Modulus, t: f64) -> Enclosure {
    let v = m.tail_integral(t);
    Enclosure { lower: v * (1.0 - ROUND), upper: v * (1.0 + ROUND), estimate: v }
}

/// Shell endpoints `x = t_0 > t_1 > … > t_J` where `t_J` is the first point
/// that is `SHELLS_BELOW_THRESHOLD` shells past the closed-form threshold.
fn shell_points(m: &Modulus, x: f64) -> Result<Vec<f64>, ModulusError> {
    let v = m.value(x);
    let thr = m.tail_threshold();
    let mut pts = vec![x];
    let mut below = if x <= thr { 1 } else { 0 };
    let mut j = 0;
    while below < SHELLS_BELOW_THRESHOLD {
        j += 1;
        if j > MAX_SHELLS {
            return Err(ModulusError::Divergent);
        }
        let t = m.inverse(v * 0.5f64.powi(j as i32))?;
        if !(t > 0.0) {
            break;
        }
        pts.push(t);
        if t <= thr {
            below += 1;
        }
    }
    Ok(pts)
}

/// Enclosure of `∫₀ˣ ds/φ(s)` of width at most `tol`.
pub fn dini_enclosure(m: &Modulus, x: f64, tol: f64) -> Result<DiniEnclosure, ModulusError> {
    if !(x > 0.0 && x <= m.domain_cap()) {
        return Err(ModulusError::Domain { t: x, cap: m.domain_cap() });
    }
    let pts = shell_points(m, x)?;
    let last = *pts.last().unwrap();
    let tail = tail_enclosure(m, last);
    if !tail.upper.is_finite() {
        return Err(ModulusError::Divergent);
    }
    let shells = pts.len() - 1;
    let per_shell = 0.5 * tol / shells.max(1) as f64;
    let mut total = tail;
    let mut failed = false;
    for w in pts.windows(2) {
        let e = match shell_integral(m, w[1], w[0], per_shell) {
            Ok(e) => e,
            Err(e) => {
                failed = true;
                e
            }
        };
        total = total.add(e);
    }
    let out = DiniEnclosure {
        lower: total.lower,
        upper: total.upper,
        estimate: total.estimate.clamp(total.lower, total.upper),
        terms_used: shells,
    };
    if failed || out.width() > tol {
        return Err(ModulusError::Budget { best: out });
    }
    Ok(out)
}

/// Enclosure of relative width at most `rel`.
pub fn dini_relative(m: &Modulus, x: f64, rel: f64) -> Result<DiniEnclosure, ModulusError> {
    let rough = dini_enclosure(m, x, f64::INFINITY)?;
    dini_enclosure(m, x, rel * rough.lower)
}

/// The coarse sandwich `Σ 2^j (t_j − t_{j+1})/v ≤ ∫₀ˣ ≤ Σ 2^{j+1}(t_j − t_{j+1})/v`
/// over `shells` value-dyadic shells with `v = φ(x)`; the upper bound adds the
/// closed-form integral below the last shell when one is available, and is
/// infinite otherwise.
pub fn dyadic_shell_bounds(m: &Modulus, x: f64, shells: usize) -> Result<(f64, f64), ModulusError> {
    let v = m.value(x);
    let mut t = vec![x];
    for j in 1..=shells {
        t.push(m.inverse(v * 0.5f64.powi(j as i32))?);
    }
    let (mut lo, mut hi) = (Sum::default(), Sum::default());
    for j in 0..shells {
        let d = t[j] - t[j + 1];
        let s = 2f64.powi(j as i32) / v;
        lo.add(d * s);
        hi.add(2.0 * d * s);
    }
    let last = t[shells];
    let tail = if last <= m.tail_threshold() { m.tail_integral(last) } else { f64::INFINITY };
    Ok((lo.get() * (1.0 - ROUND), (hi.get() + tail) * (1.0 + ROUND)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre();
        let s: f64 = w.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
        let m30: f64 = x.iter().zip(w).map(|(x, w)| w * x.powi(30)).sum();
        assert!((m30 - 2.0 / 31.0).abs() < 1e-14);
    }

    #[test]
    fn sqrt_quarter_is_one() {
        let m = Modulus::power(0.5).unwrap();
        let e = dini_enclosure(&m, 0.25, 1e-6).unwrap();
        assert!(e.lower <= 1.0 && 1.0 <= e.upper, "{e:?}");
        assert!(e.width() <= 1e-6);
        assert!((e.estimate - 1.0).abs() < 1e-14);
    }

    #[test]
    fn coarse_shells_for_sqrt() {
        let m = Modulus::power(0.5).unwrap();
        let (lo, hi) = dyadic_shell_bounds(&m, 0.25, 60).unwrap();
        assert!(lo >= 0.75 * (1.0 - 1e-12) && hi <= 1.5 * (1.0 + 1e-12), "{lo} {hi}");
        assert!(lo <= 1.0 && hi >= 1.0);
    }

    #[test]
    fn linear_modulus_diverges() {
        let m = Modulus::power(1.0).unwrap();
        assert!(matches!(dini_enclosure(&m, 1.0, 1e-6), Err(ModulusError::Divergent)));
    }

    #[test]
    fn tlog2_matches_closed_form_below_glue() {
        let m = Modulus::Tlog2;
        let x = 1e-3;
        let e = dini_enclosure(&m, x, 1e-9).unwrap();
        let exact = 1.0 / x.ln().abs();
        assert!(e.lower <= exact && exact <= e.upper);
        assert!((e.estimate - exact).abs() < 1e-13);
    }

    #[test]
    fn tlog2_across_the_glue() {
        // Above the glue 1/φ = 1/(8t + 8g); integrate that part by hand.
        let m = Modulus::Tlog2;
        let g = super::super::TLOG2_GLUE;
        let x = 0.5;
        let exact = 0.25 + ((x + g) / (2.0 * g)).ln() / 8.0;
        let e = dini_enclosure(&m, x, 1e-8).unwrap();
        assert!(e.lower <= exact && exact <= e.upper, "{e:?} vs {exact}");
        assert!((e.estimate - exact).abs() < 1e-13);
    }

    #[test]
    fn tiny_tolerance_reports_budget() {
        let m = Modulus::power(0.5).unwrap();
        match dini_enclosure(&m, 0.25, 1e-17) {
            Err(ModulusError::Budget { best }) => assert!(best.lower <= 1.0 && best.upper >= 1.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sampled_sqrt_agrees_with_closed_form() {
        let grid = super::super::geometric_grid(1e-8, 1.0, 8 * 80);
        let mut rows: Vec<(f64, f64)> = grid.iter().map(|&t| (t, t.sqrt())).collect();
        rows.push((1.0, 1.0));
        let m = Modulus::Sampled(super::super::Sampled::from_rows(rows).unwrap());
        let e = dini_enclosure(&m, 1.0, 1e-7).unwrap();
        // Chords sit below √t, so the integral slightly exceeds 2.
        assert!(e.lower > 2.0 - 1e-7 && e.upper < 2.0 + 1e-4, "{e:?}");
    }
}
