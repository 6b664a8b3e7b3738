//! Concave moduli of continuity, the singular integral `∫₀ˣ ds/φ(s)`, and
//! the strictly smaller modulus built from a given one.

mod dini;
mod psi;

pub use dini::{dini_enclosure, dini_relative, dyadic_shell_bounds, shell_integral, DiniEnclosure, Enclosure};
pub use psi::{build_psi, psi_ratio_profile, PsiPiecewise};

use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Junction of `t·ln²t` with its tangent line.
pub const TLOG2_GLUE: f64 = 0.018_315_638_888_734_18; // e^{-4}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModulusError {
    #[error("t = {t} lies outside the domain [0, {cap}]")]
    Domain { t: f64, cap: f64 },
    #[error("value {v} lies outside the range of the modulus")]
    Range { v: f64 },
    #[error("shell budget exhausted: best enclosure [{}, {}]", best.lower, best.upper)]
    Budget { best: DiniEnclosure },
    #[error("the integral of 1/phi diverges at 0")]
    Divergent,
    #[error("series tail {tail:e} is not below 1e-12 of the head {head:e} within {terms} terms")]
    SeriesBudget { tail: f64, head: f64, terms: usize },
    #[error("bad modulus spec `{0}`")]
    Spec(String),
    #[error("sampled modulus: {0}")]
    Samples(String),
}

/// Piecewise-linear modulus through increasing knots, continued below the
/// first knot by the power law through the first two knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sampled {
    t: Vec<f64>,
    v: Vec<f64>,
    tail_exp: f64,
    /// Slope of the linear continuation past the last knot, if any.
    extend: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Modulus {
    /// `t^beta`, `0 < beta ≤ 1`.
    Power { beta: f64 },
    /// `t·ln²t` up to [`TLOG2_GLUE`], tangent line beyond.
    Tlog2,
    Sampled(Sampled),
}

impl Sampled {
    /// Knots strictly increasing and positive; values strictly increasing,
    /// positive and concave.
    pub fn new(t: Vec<f64>, v: Vec<f64>, extend: Option<f64>) -> Result<Self, ModulusError> {
        if t.len() != v.len() || t.len() < 2 {
            return Err(ModulusError::Samples("need at least two (t, phi) rows".into()));
        }
        if !(t[0] > 0.0 && v[0] > 0.0) {
            return Err(ModulusError::Samples("first knot must be positive".into()));
        }
        for i in 1..t.len() {
            if !(t[i] > t[i - 1] && v[i] > v[i - 1]) || !t[i].is_finite() || !v[i].is_finite() {
                return Err(ModulusError::Samples(format!("rows not strictly increasing at {i}")));
            }
        }
        let slope = |i: usize| (v[i + 1] - v[i]) / (t[i + 1] - t[i]);
        for i in 1..t.len() - 1 {
            if slope(i) > slope(i - 1) * (1.0 + 1e-9) {
                return Err(ModulusError::Samples(format!("not concave at knot {i}")));
            }
        }
        if let Some(s) = extend {
            if !(s > 0.0) || s > slope(t.len() - 2) * (1.0 + 1e-9) {
                return Err(ModulusError::Samples("continuation slope breaks concavity".into()));
            }
        }
        let tail_exp = (v[1] / v[0]).ln() / (t[1] / t[0]).ln();
        if !(tail_exp > 0.0 && tail_exp <= 1.0 + 1e-12) {
            return Err(ModulusError::Samples(format!("tail exponent {tail_exp} outside (0, 1]")));
        }
        Ok(Self { t, v, tail_exp: tail_exp.min(1.0), extend })
    }

    /// Rows as read from a user file: every decade must hold at least 64 knots.
    pub fn from_rows(rows: Vec<(f64, f64)>) -> Result<Self, ModulusError> {
        let rows: Vec<_> = rows.into_iter().filter(|&(t, _)| t != 0.0).collect();
        let (t, v): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
        let s = Self::new(t, v, None)?;
        let last = *s.t.last().unwrap();
        for (i, &ti) in s.t.iter().enumerate() {
            if ti * 10.0 > last {
                break;
            }
            let end = s.t.partition_point(|&x| x <= ti * 10.0);
            if end - i < 64 {
                return Err(ModulusError::Samples(format!(
                    "only {} samples in the decade starting at {ti:e}",
                    end - i
                )));
            }
        }
        Ok(s)
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.t, &self.v)
    }

    fn cap(&self) -> f64 {
        if self.extend.is_some() {
            f64::INFINITY
        } else {
            *self.t.last().unwrap()
        }
    }

    fn value(&self, t: f64) -> f64 {
        let (t0, v0) = (self.t[0], self.v[0]);
        if t <= t0 {
            return if t <= 0.0 { 0.0 } else { v0 * (t / t0).powf(self.tail_exp) };
        }
        let n = self.t.len();
        if t >= self.t[n - 1] {
            return self.v[n - 1] + self.extend.unwrap_or(0.0) * (t - self.t[n - 1]);
        }
        let i = self.t.partition_point(|&x| x <= t) - 1;
        let w = (t - self.t[i]) / (self.t[i + 1] - self.t[i]);
        self.v[i] + w * (self.v[i + 1] - self.v[i])
    }

    fn inverse(&self, v: f64) -> Option<f64> {
        let (t0, v0) = (self.t[0], self.v[0]);
        if v <= v0 {
            return Some(if v <= 0.0 { 0.0 } else { t0 * (v / v0).powf(1.0 / self.tail_exp) });
        }
        let n = self.t.len();
        if v >= self.v[n - 1] {
            return match self.extend {
                Some(s) => Some(self.t[n - 1] + (v - self.v[n - 1]) / s),
                None if v == self.v[n - 1] => Some(self.t[n - 1]),
                None => None,
            };
        }
        let i = self.v.partition_point(|&x| x <= v) - 1;
        let w = (v - self.v[i]) / (self.v[i + 1] - self.v[i]);
        Some(self.t[i] + w * (self.t[i + 1] - self.t[i]))
    }
}

impl Modulus {
    pub fn power(beta: f64) -> Result<Self, ModulusError> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(ModulusError::Spec(format!("power:{beta}")));
        }
        Ok(Self::Power { beta })
    }

    /// Parses `power:<beta>`, `tlog2` or `file:<path>`.
    pub fn parse(spec: &str) -> Result<Self, ModulusError> {
        let spec = spec.trim();
        if spec == "tlog2" {
            return Ok(Self::Tlog2);
        }
        if let Some(b) = spec.strip_prefix("power:") {
            let beta: f64 = b.trim().parse().map_err(|_| ModulusError::Spec(spec.into()))?;
            return Self::power(beta);
        }
        if let Some(p) = spec.strip_prefix("file:") {
            return Self::from_csv(Path::new(p));
        }
        Err(ModulusError::Spec(spec.into()))
    }

    /// CSV with rows `t,phi`; a header line and comment lines starting with `#` are skipped.
    pub fn from_csv(path: &Path) -> Result<Self, ModulusError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModulusError::Samples(format!("{}: {e}", path.display())))?;
        let mut rows = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split(',').map(str::trim);
            let (a, b) = (it.next(), it.next());
            let parsed = a.zip(b).and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)));
            match parsed {
                Some(r) => rows.push(r),
                None if rows.is_empty() && ln == 0 => continue,
                None => return Err(ModulusError::Samples(format!("line {}: `{line}`", ln + 1))),
            }
        }
        Ok(Self::Sampled(Sampled::from_rows(rows)?))
    }

    pub fn domain_cap(&self) -> f64 {
        match self {
            Self::Sampled(s) => s.cap(),
            _ => f64::INFINITY,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Power { beta } => format!("power:{beta}"),
            Self::Tlog2 => "tlog2".into(),
            Self::Sampled(s) => format!("sampled[{}]", s.t.len()),
        }
    }

    pub fn eval(&self, t: f64) -> Result<f64, ModulusError> {
        if !(t >= 0.0 && t <= self.domain_cap()) {
            return Err(ModulusError::Domain { t, cap: self.domain_cap() });
        }
        Ok(self.value(t))
    }

    /// Unchecked evaluation for `t ≥ 0` inside the domain.
    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        match self {
            Self::Power { beta } => {
                if *beta == 0.5 {
                    t.sqrt()
                } else {
                    t.powf(*beta)
                }
            }
            Self::Tlog2 => {
                if t <= 0.0 {
                    0.0
                } else if t <= TLOG2_GLUE {
                    let l = t.ln();
                    t * l * l
                } else {
                    8.0 * t + 8.0 * TLOG2_GLUE
                }
            }
            Self::Sampled(s) => s.value(t),
        }
    }

    pub fn range_cap(&self) -> f64 {
        match self {
            Self::Sampled(s) if s.extend.is_none() => *s.v.last().unwrap(),
            _ => f64::INFINITY,
        }
    }

    pub fn inverse(&self, v: f64) -> Result<f64, ModulusError> {
        if !(v >= 0.0 && v <= self.range_cap()) {
            return Err(ModulusError::Range { v });
        }
        let t = match self {
            Self::Power { beta } => {
                if *beta == 0.5 {
                    v * v
                } else {
                    v.powf(1.0 / beta)
                }
            }
            Self::Tlog2 => tlog2_inverse(v),
            Self::Sampled(s) => s.inverse(v).ok_or(ModulusError::Range { v })?,
        };
        Ok(t)
    }

    /// Largest `t` below which `∫₀ᵗ ds/φ` has a closed form.
    pub(crate) fn tail_threshold(&self) -> f64 {
        match self {
            Self::Power { .. } => f64::INFINITY,
            Self::Tlog2 => TLOG2_GLUE,
            Self::Sampled(s) => s.t[0],
        }
    }

    /// `∫₀ᵗ ds/φ(s)` for `t ≤ tail_threshold()`; infinite when divergent.
    pub(crate) fn tail_integral(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self {
            Self::Power { beta } => {
                if *beta >= 1.0 {
                    f64::INFINITY
                } else {
                    t.powf(1.0 - beta) / (1.0 - beta)
                }
            }
            Self::Tlog2 => 1.0 / t.ln().abs(),
            Self::Sampled(s) => {
                let g = s.tail_exp;
                if g >= 1.0 {
                    f64::INFINITY
                } else {
                    s.t[0].powf(g) * t.powf(1.0 - g) / (s.v[0] * (1.0 - g))
                }
            }
        }
    }

    /// Points in `(a, b)` where the modulus is not smooth.
    pub(crate) fn kinks(&self, a: f64, b: f64, out: &mut Vec<f64>) {
        match self {
            Self::Power { .. } => {}
            Self::Tlog2 => {
                if a < TLOG2_GLUE && TLOG2_GLUE < b {
                    out.push(TLOG2_GLUE);
                }
            }
            Self::Sampled(s) => {
                let lo = s.t.partition_point(|&x| x <= a);
                let hi = s.t.partition_point(|&x| x < b);
                out.extend_from_slice(&s.t[lo..hi]);
            }
        }
    }

    /// Checks the three standing conditions on a modulus: concave increasing
    /// with `φ(0)=0`, finite `∫₀¹ ds/φ`, and `t^{-alpha}φ(t)` increasing.
    pub fn validate(&self, alpha: f64) -> ConditionReport {
        let grid = geometric_grid(1e-10, 1.0_f64.min(self.domain_cap()), 200);
        let phi: Vec<f64> = grid.iter().map(|&t| self.value(t)).collect();

        let mut c1 = Vec::new();
        if self.value(0.0) != 0.0 {
            c1.push("phi(0) != 0".to_string());
        }
        if let Some(i) = (1..grid.len()).find(|&i| phi[i] <= phi[i - 1]) {
            c1.push(format!("not strictly increasing at t = {:e}", grid[i]));
        }
        let slope = |i: usize| (phi[i + 1] - phi[i]) / (grid[i + 1] - grid[i]);
        if let Some(i) = (1..grid.len() - 1).find(|&i| slope(i) > slope(i - 1) * (1.0 + 1e-9)) {
            c1.push(format!("secant slopes increase at t = {:e}", grid[i]));
        }
        let ratio = |i: usize| grid[i] / phi[i];
        if let Some(i) = (1..grid.len()).find(|&i| ratio(i) < ratio(i - 1) * (1.0 - 1e-12)) {
            c1.push(format!("t/phi(t) decreases at t = {:e}", grid[i]));
        }

        let mut c2 = Vec::new();
        let (small, mid) = (1e-12, 1e-6);
        if small / self.value(small) >= mid / self.value(mid) {
            c2.push("t/phi(t) does not decrease towards 0".into());
        }
        let x = 1.0_f64.min(self.domain_cap());
        match dini_enclosure(self, x, 1e-8) {
            Ok(e) if e.upper.is_finite() => {}
            Ok(_) => c2.push("enclosure of the integral is unbounded".into()),
            Err(e) => c2.push(e.to_string()),
        }

        let mut c3 = Vec::new();
        if !(alpha > 0.0 && alpha < 1.0) {
            c3.push(format!("alpha = {alpha} outside (0, 1)"));
        } else {
            // Compare logarithms; plain products lose strictness near t = 1.
            let g: Vec<f64> = grid.iter().zip(&phi).map(|(&t, &p)| p.ln() - alpha * t.ln()).collect();
            if let Some(i) = (1..g.len()).find(|&i| g[i] <= g[i - 1]) {
                c3.push(format!("t^-alpha phi(t) not increasing at t = {:e}", grid[i]));
            }
        }
        ConditionReport {
            concave_increasing: Condition::from_failures(c1),
            dini: Condition::from_failures(c2),
            holder_floor: Condition::from_failures(c3),
        }
    }
}

/// Inverse of `t·ln²t` extended linearly past the glue point.
fn tlog2_inverse(v: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    let glue_v = 16.0 * TLOG2_GLUE;
    if v >= glue_v {
        return (v - 8.0 * TLOG2_GLUE) / 8.0;
    }
    // u = ln t solves u + 2 ln(-u) = ln v on u ≤ -4, where the left side increases.
    let lv = v.ln();
    let g = |u: f64| u + 2.0 * (-u).ln() - lv;
    let (mut lo, mut hi) = (lv - 2.0 * (1.0 + lv.abs()).ln() - 8.0, -4.0);
    while g(lo) > 0.0 {
        lo = 2.0 * lo;
    }
    let mut u = (lo + hi) / 2.0;
    for _ in 0..200 {
        let gu = g(u);
        if gu == 0.0 {
            break;
        }
        if gu > 0.0 {
            hi = u;
        } else {
            lo = u;
        }
        let step = u - gu / (1.0 + 2.0 / u);
        let next = if step > lo && step < hi { step } else { (lo + hi) / 2.0 };
        if (next - u).abs() <= 1e-16 * u.abs() {
            u = next;
            break;
        }
        u = next;
    }
    u.exp()
}

pub(crate) fn geometric_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    let (la, lb) = (a.ln(), b.ln());
    (0..n)
        .map(|i| (la + (lb - la) * i as f64 / n as f64).exp())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub pass: bool,
    pub failures: Vec<String>,
}

impl Condition {
    fn from_failures(failures: Vec<String>) -> Self {
        Self { pass: failures.is_empty(), failures }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub concave_increasing: Condition,
    pub dini: Condition,
    pub holder_floor: Condition,
}

impl ConditionReport {
    pub fn all_pass(&self) -> bool {
        self.concave_increasing.pass && self.dini.pass && self.holder_floor.pass
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_values() {
        let sq = Modulus::power(0.5).unwrap();
        assert_eq!(sq.eval(0.25).unwrap(), 0.5);
        assert_eq!(sq.eval(0.0).unwrap(), 0.0);
        let p = Modulus::power(0.75).unwrap();
        assert!((p.eval(1.0 / 16.0).unwrap() - 0.125).abs() < 1e-15);
        assert_eq!(Modulus::Tlog2.eval(0.0).unwrap(), 0.0);
        assert!(sq.eval(-1.0).is_err());
    }

    #[test]
    fn inverse_examples() {
        let sq = Modulus::power(0.5).unwrap();
        assert_eq!(sq.inverse(0.5).unwrap(), 0.25);
        for k in 0..30 {
            let v = 2f64.powi(-k);
            assert_eq!(sq.inverse(v).unwrap(), 2f64.powi(-2 * k));
        }
        assert!(sq.inverse(-0.1).is_err());
    }

    #[test]
    fn tlog2_glue_is_c1() {
        let m = Modulus::Tlog2;
        let g = TLOG2_GLUE;
        assert!((g - (-4f64).exp()).abs() < 1e-18);
        let h = 1e-7;
        let left = (m.value(g) - m.value(g - h)) / h;
        let right = (m.value(g + h) - m.value(g)) / h;
        assert!((left - 8.0).abs() < 1e-4 && (right - 8.0).abs() < 1e-9);
        assert!((m.value(g) - 16.0 * g).abs() < 1e-15);
    }

    #[test]
    fn tlog2_inverse_roundtrip() {
        let m = Modulus::Tlog2;
        for &t in &[1e-300, 1e-100, 1e-20, 1e-5, 0.01, TLOG2_GLUE, 0.5, 3.0] {
            let v = m.value(t);
            let back = m.inverse(v).unwrap();
            assert!(((back - t) / t).abs() < 1e-13, "{t} -> {back}");
        }
    }

    #[test]
    fn parse_specs() {
        assert_eq!(Modulus::parse("power:0.5").unwrap(), Modulus::Power { beta: 0.5 });
        assert_eq!(Modulus::parse("tlog2").unwrap(), Modulus::Tlog2);
        assert!(Modulus::parse("power:1.5").is_err());
        assert!(Modulus::parse("cubic").is_err());
    }

    #[test]
    fn validate_examples() {
        assert!(Modulus::power(0.5).unwrap().validate(0.25).all_pass());
        let lin = Modulus::power(1.0).unwrap().validate(0.25);
        assert!(!lin.dini.pass);
        let r = Modulus::power(0.5).unwrap().validate(0.75);
        assert!(!r.holder_floor.pass && r.concave_increasing.pass);
        assert!(Modulus::Tlog2.validate(0.25).all_pass());
        assert!(Modulus::power(0.75).unwrap().validate(0.5).all_pass());
    }

    #[test]
    fn sampled_density_rule() {
        let sparse: Vec<(f64, f64)> = (1..40).map(|i| (i as f64 * 0.1, (i as f64 * 0.1).sqrt())).collect();
        assert!(Sampled::from_rows(sparse).is_err());
        let grid = geometric_grid(1e-6, 1.0, 6 * 70);
        let dense: Vec<(f64, f64)> = grid.iter().map(|&t| (t, t.sqrt())).collect();
        let s = Sampled::from_rows(dense).unwrap();
        assert!((s.tail_exp - 0.5).abs() < 1e-9);
    }

    #[test]
    fn sampled_rejects_convex_data() {
        let t = vec![0.1, 0.2, 0.3];
        let v = vec![0.01, 0.04, 0.09];
        assert!(Sampled::new(t, v, None).is_err());
    }
}
