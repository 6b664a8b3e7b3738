//! Verification suites. Every check is reported; a failing or erroring
//! check never stops its siblings.

use crate::output::num;
use crate::RunConfig;
use clap::ValueEnum;
use flipforge::boxswap::{cube_center, BoxExchange, FlowSolver};
use flipforge::flipmap::{cantor_stats, membership, modulus_ratio_scan, CubeAddress, FlipHomeo};
use flipforge::map::{dist, Direction, Homeo};
use flipforge::modulus::Modulus;
use flipforge::qmc::{task_rng, Sobol};
use flipforge::sequences::{scales_for, verify_scales, ScaleSequence};
use rand::Rng;
use serde::Serialize;
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    /// Gap and ratio inequalities of the scale sequence.
    Scales,
    /// Box exchanges on the α grid.
    Boxswap,
    /// Convergence, reflection and invertibility of Φ_K.
    Flip,
    /// Monte-Carlo volume of the depth-K cubes.
    Measure,
    /// Spread of the modulus ratio maxima across depths.
    Uniform,
    All,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    /// Room left before the check fails; negative on failure.
    pub margin: f64,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    /// Passes when `measured ≤ tolerance`.
    fn at_most(name: impl Into<String>, measured: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        let margin = tolerance - measured;
        Self { name: name.into(), pass: margin >= 0.0, margin, measured, tolerance, detail: detail.into() }
    }

    fn error(name: impl Into<String>, e: impl std::fmt::Display) -> Self {
        Self { name: name.into(), pass: false, margin: f64::NAN, measured: f64::NAN, tolerance: f64::NAN, detail: e.to_string() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub suite: Suite,
    pub config: RunConfig,
    pub pass: bool,
    pub checks: Vec<CheckResult>,
}

impl Report {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,pass,margin,measured,tolerance\n");
        for c in &self.checks {
            writeln!(s, "{},{},{},{},{}", c.name, c.pass, num(c.margin), num(c.measured), num(c.tolerance)).unwrap();
        }
        s
    }
}

pub(crate) fn run_suite(suite: Suite, m: &Modulus, n: usize, depth: usize, seed: u64, samples: usize, config: RunConfig) -> Report {
    let mut checks = Vec::new();
    let seq = scales_for(m, depth.max(1));
    let all = suite == Suite::All;
    if all || suite == Suite::Boxswap {
        boxswap(n, seed, samples, &mut checks);
    }
    match &seq {
        Err(e) => checks.push(CheckResult::error("sequence", e)),
        Ok(seq) => {
            if all || suite == Suite::Scales {
                scales(seq, m, &mut checks);
            }
            let f = FlipHomeo::new(seq.clone(), n, depth, FlowSolver::Transit);
            if all || suite == Suite::Flip {
                flip(&f, seed, samples, &mut checks);
            }
            if all || suite == Suite::Measure {
                measure(seq, n, depth, seed, samples, &mut checks);
            }
            if all || suite == Suite::Uniform {
                uniform(&f, m, seed, samples, &mut checks);
            }
        }
    }
    Report { suite, config, pass: checks.iter().all(|c| c.pass), checks }
}

/// One line per inequality family, at its smallest margin over `k`.
fn scales(seq: &ScaleSequence, m: &Modulus, out: &mut Vec<CheckResult>) {
    let cert = verify_scales(seq, m);
    let mut names: Vec<&str> = Vec::new();
    for c in &cert.checks {
        if !names.contains(&c.name.as_str()) {
            names.push(&c.name);
        }
    }
    for name in names {
        let family: Vec<_> = cert.checks.iter().filter(|c| c.name == name).collect();
        let worst = family.iter().min_by(|a, b| a.margin.total_cmp(&b.margin)).unwrap();
        out.push(CheckResult {
            name: format!("scales.{name}"),
            pass: family.iter().all(|c| c.pass),
            margin: worst.margin,
            measured: worst.margin,
            tolerance: 0.0,
            detail: format!("{} inequalities, tightest at k = {}", family.len(), worst.k),
        });
    }
}

const ALPHA_GRID: [f64; 4] = [0.26, 0.3, 0.375, 0.45];

fn boxswap(n: usize, seed: u64, samples: usize, out: &mut Vec<CheckResult>) {
    let points = Sobol::shifted(n, seed).take_points(samples);
    for alpha in ALPHA_GRID {
        let f = BoxExchange::new(n, alpha, FlowSolver::Transit);
        let name = |what: &str| format!("boxswap.{alpha}.{what}");
        let trip = points.iter().try_fold(0.0f64, |acc, p| {
            let y = f.eval(p, Direction::Forward)?;
            Ok::<_, flipforge::map::MapError>(acc.max(dist(&f.eval(&y, Direction::Inverse)?, p)))
        });
        out.push(match trip {
            Ok(t) => CheckResult::at_most(name("round_trip"), t, 1e-8, format!("{samples} points")),
            Err(e) => CheckResult::error(name("round_trip"), e),
        });
        // Points within the collar of one face, cycled over all faces.
        let w = f.collar_width() * 0.999;
        let mut moved = 0usize;
        for (i, p) in points.iter().enumerate() {
            let mut q = p.clone();
            let axis = i % n;
            q[axis] = if (i / n) % 2 == 0 { p[axis] * w } else { 1.0 - p[axis] * w };
            if f.eval(&q, Direction::Forward).map_or(true, |y| y != q) {
                moved += 1;
            }
        }
        out.push(CheckResult::at_most(name("collar"), moved as f64, 0.0, "collar points moved"));
        let half = 1usize << (n - 1);
        let mut worst = 0.0f64;
        for j in 1..=half {
            let (mut top, mut bottom) = (vec![0.0; n], vec![0.0; n]);
            cube_center(n, j, &mut top);
            cube_center(n, j + half, &mut bottom);
            worst = f.eval(&top, Direction::Forward).map_or(f64::INFINITY, |y| worst.max(dist(&y, &bottom)));
        }
        out.push(CheckResult::at_most(name("centres"), worst, 1e-9, "top centre to bottom centre"));
    }
}

fn flip(f: &FlipHomeo, seed: u64, samples: usize, out: &mut Vec<CheckResult>) {
    let n = f.n;
    let depth = f.depth();
    let mut rng = task_rng(seed, 1);
    let points: Vec<Vec<f64>> = (0..samples).map(|_| (0..n).map(|_| rng.gen()).collect()).collect();
    for k in 0..depth {
        let name = format!("flip.step.{k}");
        let sup = points.iter().try_fold(0.0f64, |acc, x| {
            let a = f.eval_depth(x, k, Direction::Forward)?;
            let b = f.eval_depth(x, k + 1, Direction::Forward)?;
            Ok::<_, flipforge::map::MapError>(acc.max(dist(&a, &b)))
        });
        out.push(match sup {
            Ok(s) => CheckResult::at_most(name, s, f.error_bound(k), "sup |Φ_(K+1) − Φ_K| against √n·α_K"),
            Err(e) => CheckResult::error(name, e),
        });
    }
    let cubes = 1u64 << (n * depth).min(63);
    let mut worst = 0.0f64;
    let mut failure = None;
    for _ in 0..samples.min(100) {
        let c = CubeAddress::from_index(n, depth, rng.gen_range(0..cubes)).center(&f.seq);
        match f.reflection_defect(&c, depth) {
            Ok(d) => worst = worst.max(d),
            Err(e) => failure = Some(e),
        }
    }
    out.push(match failure {
        None => CheckResult::at_most("flip.reflection", worst, f.error_bound(depth), "defect at depth-K Cantor centres"),
        Some(e) => CheckResult::error("flip.reflection", e),
    });
    let trip = points.iter().try_fold(0.0f64, |acc, x| {
        let y = f.eval(x, Direction::Forward)?;
        Ok::<_, flipforge::map::MapError>(acc.max(dist(&f.eval(&y, Direction::Inverse)?, x)))
    });
    out.push(match trip {
        Ok(t) => CheckResult::at_most("flip.round_trip", t, 1e-8, format!("{samples} points")),
        Err(e) => CheckResult::error("flip.round_trip", e),
    });
}

fn measure(seq: &ScaleSequence, n: usize, depth: usize, seed: u64, samples: usize, out: &mut Vec<CheckResult>) {
    let (exact, limit) = cantor_stats(seq, n, depth);
    let m = membership(seq, n, depth, samples, seed);
    let off = (m.fraction - exact).abs();
    out.push(CheckResult::at_most(
        "measure.membership",
        off,
        3.0 * m.stderr,
        format!("{} ± {} against {} (limit {})", num(m.fraction), num(m.stderr), num(exact), num(limit)),
    ));
}

fn uniform(f: &FlipHomeo, m: &Modulus, seed: u64, samples: usize, out: &mut Vec<CheckResult>) {
    let depth = f.depth();
    if depth < 3 {
        out.push(CheckResult::error("uniform.spread", "needs --depth of at least 3"));
        return;
    }
    let mut maxima = Vec::new();
    for k in 2..=depth {
        match modulus_ratio_scan(&f.at_depth(k), m, samples, seed) {
            Ok(s) => maxima.push(s.max),
            Err(e) => {
                out.push(CheckResult::error("uniform.spread", e));
                return;
            }
        }
    }
    let spread = maxima.iter().cloned().fold(0.0, f64::max) / maxima.iter().cloned().fold(f64::INFINITY, f64::min);
    let listed: Vec<String> = maxima.iter().map(|v| format!("{v:.3}")).collect();
    out.push(CheckResult::at_most("uniform.spread", spread, 2.0, format!("maxima for K = 2..={depth}: {}", listed.join(" "))));
}
