//! Refinement states, their evaluator, and one refinement step.
//!
//! A state after a step is stored implicitly: `Ω` is tiled by lattice cells
//! of edge `2^{-j}` and every cell inside `Ω` carries the same template of
//! balls, each with a tangent patch and an implanted ψ-flip in the cube
//! inscribed in its half-radius ball. Points are addressed either absolutely
//! or in a chart `(anchor, u)` meaning `anchor + 2^{-j}·u`; charts keep the
//! local structure visible when cells are far below `f64` resolution.

use super::bounds::{choose_rho, derivative_bounds, Bounds, RhoChoice};
use super::domain::{choose_domain, Domain};
use super::packing::{cell_of, pack_balls, Packing};
use super::patch::{radius_limit, tangent_at, TangentPatch, DIFF_STEP};
use super::RefineError;
use crate::boxswap::{spectral_norms, FlowSolver};
use crate::flipmap::{locate, modulus_ratio_scan, FlipHomeo, Status};
use crate::map::{dist, Affine, Direction, Homeo, MapError, MAX_DIM};
use crate::modulus::{build_psi, Modulus};
use crate::qmc::{task_rng, Sobol};
use crate::sequences::scales_for;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const STATE_VERSION: u32 = 1;
/// Series terms used to build ψ.
pub const PSI_TERMS: usize = 48;

/// Knobs of a refinement step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub cover_depth: usize,
    pub collar: f64,
    pub implant_depth: usize,
    pub domain_samples: usize,
    pub bound_samples: usize,
    pub coverage_samples: usize,
    pub scan_pairs: usize,
    /// Balls whose patch is rebuilt and checked during the step.
    pub patch_checks: usize,
    pub target: f64,
    pub seed: u64,
    /// Replaces the computed radius bound; for exercising the construction at
    /// visible scales. The patch radius condition is then not enforced.
    pub rho_override: Option<f64>,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            cover_depth: 3,
            collar: 1.0 / 1024.0,
            implant_depth: 12,
            domain_samples: 100_000,
            bound_samples: 512,
            coverage_samples: 100_000,
            scan_pairs: 20_000,
            patch_checks: 8,
            target: 2.0 / 3.0,
            seed: 0,
            rho_override: None,
        }
    }
}

/// A piece of the orientation-reversing set with exactly known measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CantorPart {
    /// The Cantor set of the base flip.
    Base { capacity: f64, measure: f64 },
    /// One rescaled ψ-Cantor set in each implant cube of every cell inside `Ω`.
    Implants { capacity: f64, unit_measure: f64, cubes_measure: f64, measure: f64 },
}

impl CantorPart {
    pub fn measure(&self) -> f64 {
        match self {
            Self::Base { measure, .. } | Self::Implants { measure, .. } => *measure,
        }
    }
}

/// Modulus constants: measured scan maxima and the telescoping budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    /// Scan constant of the base flip for `φ`.
    pub base: f64,
    /// Scan constant of the ψ-flip for `ψ`, once measured.
    pub implant: Option<f64>,
    /// Latest scan constant of the current map for `φ`.
    pub measured: f64,
    /// `(1 + 1/2 + ⋯ + 2^{-k})·base`.
    pub budget: f64,
}

/// Budget factor `1 + 1/2 + ⋯ + 2^{-k}` for the map after step `k − 1`.
pub fn budget_factor(k: usize) -> f64 {
    2.0 - 0.5f64.powi(k as i32)
}

/// Everything a step added.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub domain: Domain,
    pub bounds: Bounds,
    pub rho: RhoChoice,
    pub packing: Packing,
    pub implant: FlipHomeo,
    /// `|A|` of the ψ-Cantor set.
    pub implant_measure: f64,
    /// Worst local ratio found by the chart scan.
    pub local_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementState {
    pub version: u32,
    pub k: usize,
    pub n: usize,
    pub modulus: Modulus,
    pub psi: Modulus,
    /// `F_1`, the flip for `modulus`, evaluated at its stored depth.
    pub base: FlipHomeo,
    pub cantor: Vec<CantorPart>,
    pub constants: Constants,
    pub step: Option<Step>,
}

/// `base + scale·offset`, kept apart so that offsets below the resolution of
/// `base` survive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartPoint {
    pub base: Vec<f64>,
    pub scale: f64,
    pub offset: Vec<f64>,
}

impl ChartPoint {
    pub fn absolute(&self) -> Vec<f64> {
        self.base.iter().zip(&self.offset).map(|(b, o)| b + self.scale * o).collect()
    }

    /// Distance, exact in the offsets when both points share a base.
    pub fn distance(&self, other: &ChartPoint) -> f64 {
        if self.base == other.base && self.scale == other.scale {
            self.scale * dist(&self.offset, &other.offset)
        } else {
            dist(&self.absolute(), &other.absolute())
        }
    }
}

/// Exact lower bound and Monte-Carlo estimate of the orientation-reversing set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NegativeMeasure {
    pub exact: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl RefinementState {
    /// `F_1`: the depth-`depth` flip for `modulus` in dimension `n`.
    pub fn base(modulus: Modulus, n: usize, depth: usize, cfg: &RefineConfig) -> Result<Self, RefineError> {
        let seq = scales_for(&modulus, depth)?;
        let base = FlipHomeo::new(seq, n, depth, FlowSolver::Transit);
        let psi = build_psi(&modulus, PSI_TERMS).map_err(|e| RefineError::Domain(format!("ψ: {e}")))?.modulus;
        let scan = modulus_ratio_scan(&base, &modulus, cfg.scan_pairs, cfg.seed)?;
        let capacity = base.seq.capacity;
        Ok(Self {
            version: STATE_VERSION,
            k: 1,
            n,
            modulus,
            psi,
            cantor: vec![CantorPart::Base { capacity, measure: 2f64.powf(-capacity * n as f64) }],
            base,
            constants: Constants { base: scan.max, implant: None, measured: scan.max, budget: budget_factor(1) * scan.max },
            step: None,
        })
    }

    /// Exact measure of the stored orientation-reversing set.
    pub fn exact_measure(&self) -> f64 {
        self.cantor.iter().map(CantorPart::measure).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("state serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, RefineError> {
        let s: Self = serde_json::from_str(text).map_err(|e| RefineError::Document(e.to_string()))?;
        if s.version != STATE_VERSION {
            return Err(RefineError::Document(format!("version {} is not {STATE_VERSION}", s.version)));
        }
        Ok(s)
    }

    fn step_ref(&self) -> Result<&Step, RefineError> {
        self.step.as_ref().ok_or_else(|| RefineError::Unsupported { k: self.k, reason: "the state has no refinement cells".into() })
    }

    /// Tangent of `F_1` at `x`.
    pub fn tangent(&self, x: &[f64]) -> Result<Affine, MapError> {
        tangent_at(&self.base, x, DIFF_STEP)
    }

    /// Ball of the cell at `anchor` holding `u`, if the cell lies in `Ω`.
    fn ball(&self, s: &Step, anchor: &[f64], u: &[f64]) -> Option<usize> {
        if !s.domain.contains_box(anchor, s.packing.cell_edge()) {
            return None;
        }
        s.packing.template.ball_at(u)
    }

    /// The implant in cell coordinates: the ψ-flip conjugated into the cube
    /// of ball `b`, the identity elsewhere.
    pub fn implant_local(&self, b: usize, u: &[f64], dir: Direction) -> Result<Vec<f64>, RefineError> {
        let s = self.step_ref()?;
        let ball = &s.packing.template.balls[b];
        let (o, e) = (ball.cube_origin(), ball.cube_edge());
        let mut w: Vec<f64> = u.iter().zip(&o).map(|(v, o)| (v - o) / e).collect();
        if w.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Ok(u.to_vec());
        }
        s.implant.apply(&mut w, dir)?;
        Ok(w.iter().zip(&o).map(|(v, o)| o + e * v).collect())
    }

    /// Patch of ball `b` in the cell at `anchor`, for resolved cells.
    pub fn patch(&self, anchor: &[f64], b: usize) -> Result<TangentPatch, RefineError> {
        let s = self.step_ref()?;
        let eps = s.packing.cell_edge();
        let ball = &s.packing.template.balls[b];
        let center: Vec<f64> = anchor.iter().zip(&ball.center).map(|(a, c)| a + eps * c).collect();
        let radius = eps * ball.radius;
        let tangent = tangent_at(&self.base, &center, DIFF_STEP.min(radius))?;
        Ok(TangentPatch { center, radius, level: self.k + 1, tangent, bounds: s.bounds, lambda: s.bounds.lambda() })
    }

    /// `F_2(anchor + 2^{-j}u)` for a lattice anchor and `u ∈ [0,1)^n`.
    pub fn chart_forward(&self, anchor: &[f64], u: &[f64]) -> Result<ChartPoint, RefineError> {
        let s = self.step_ref()?;
        let eps = s.packing.cell_edge();
        let n = self.n;
        let ball = self.ball(s, anchor, u);
        if s.packing.resolved() {
            let x: Vec<f64> = anchor.iter().zip(u).map(|(a, v)| a + eps * v).collect();
            let y = match ball {
                None => self.base.eval(&x, Direction::Forward)?,
                Some(b) => {
                    let p = self.patch(anchor, b)?;
                    let w = self.implant_local(b, u, Direction::Forward)?;
                    if w.as_slice() != u {
                        let xw: Vec<f64> = anchor.iter().zip(&w).map(|(a, v)| a + eps * v).collect();
                        p.tangent.eval(&xw, Direction::Forward)?
                    } else {
                        p.eval(&self.base, &x)?
                    }
                }
            };
            return Ok(ChartPoint { base: y, scale: eps, offset: vec![0.0; n] });
        }
        // Below resolution F_1 and its tangent agree on the whole cell.
        let w = match ball {
            Some(b) => self.implant_local(b, u, Direction::Forward)?,
            None => u.to_vec(),
        };
        let t = self.tangent(anchor)?;
        let mut offset = vec![0.0; n];
        t.linear(&w, &mut offset);
        Ok(ChartPoint { base: self.base.eval(anchor, Direction::Forward)?, scale: eps, offset })
    }

    /// Cell coordinate `u` with `F_2(anchor + 2^{-j}u) = y`.
    pub fn chart_inverse(&self, anchor: &[f64], y: &ChartPoint) -> Result<Vec<f64>, RefineError> {
        let s = self.step_ref()?;
        let eps = s.packing.cell_edge();
        let n = self.n;
        if s.packing.resolved() {
            let x = self.eval(&y.absolute(), Direction::Inverse)?;
            return Ok(x.iter().zip(anchor).map(|(v, a)| (v - a) / eps).collect());
        }
        let t = self.tangent(anchor)?;
        let fa = self.base.eval(anchor, Direction::Forward)?;
        // Re-express the offset against F_1(anchor).
        let off: Vec<f64> = (0..n).map(|i| (y.base[i] - fa[i]) / eps + y.scale / eps * y.offset[i]).collect();
        let mut w = vec![0.0; n];
        t.linear_inverse(&off, &mut w);
        match self.ball(s, anchor, &w) {
            Some(b) => self.implant_local(b, &w, Direction::Inverse),
            None => Ok(w),
        }
    }

    fn absolute_forward(&self, x: &mut [f64]) -> Result<(), RefineError> {
        let Some(s) = self.step.as_ref().filter(|s| s.packing.resolved()) else {
            // Absolute points are lattice corners, outside every ball.
            self.base.apply(x, Direction::Forward)?;
            return Ok(());
        };
        let n = self.n;
        let (mut a, mut u) = ([0.0; MAX_DIM], [0.0; MAX_DIM]);
        cell_of(x, s.packing.level, &mut a[..n], &mut u[..n]);
        if self.ball(s, &a[..n], &u[..n]).is_none() {
            self.base.apply(x, Direction::Forward)?;
            return Ok(());
        }
        let y = self.chart_forward(&a[..n], &u[..n])?.absolute();
        x.copy_from_slice(&y);
        Ok(())
    }

    fn absolute_inverse(&self, y: &mut [f64]) -> Result<(), RefineError> {
        let mut x0 = y.to_vec();
        self.base.apply(&mut x0, Direction::Inverse)?;
        let Some(s) = self.step.as_ref().filter(|s| s.packing.resolved()) else {
            y.copy_from_slice(&x0);
            return Ok(());
        };
        let n = self.n;
        let eps = s.packing.cell_edge();
        let (mut a, mut u) = ([0.0; MAX_DIM], [0.0; MAX_DIM]);
        cell_of(&x0, s.packing.level, &mut a[..n], &mut u[..n]);
        // Patches and implants map each ball onto its F_1-image.
        let Some(b) = self.ball(s, &a[..n], &u[..n]) else {
            y.copy_from_slice(&x0);
            return Ok(());
        };
        let p = self.patch(&a[..n], b)?;
        let x1 = p.inverse(&self.base, y)?;
        let w: Vec<f64> = x1.iter().zip(&a[..n]).map(|(v, a)| (v - a) / eps).collect();
        let v = self.implant_local(b, &w, Direction::Inverse)?;
        if v != w {
            for i in 0..n {
                y[i] = a[i] + eps * v[i];
            }
        } else {
            y.copy_from_slice(&x1);
        }
        Ok(())
    }

    /// `−sign det DF_1(anchor)`: the Jacobian sign of `F_2` on the implanted
    /// Cantor sets of this cell, where the ψ-flip acts as a reflection.
    pub fn implant_orientation(&self, anchor: &[f64]) -> Result<f64, RefineError> {
        Ok(-self.tangent(anchor)?.det().signum())
    }
}

impl Homeo for RefinementState {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &mut [f64], dir: Direction) -> Result<(), MapError> {
        let r = match dir {
            Direction::Forward => self.absolute_forward(x),
            Direction::Inverse => self.absolute_inverse(x),
        };
        r.map_err(|e| match e {
            RefineError::Map(m) => m,
            _ => MapError::Domain { at: x.to_vec() },
        })
    }
}

/// `M` for `F` over up to `samples` quasi-random points of `Ω`.
pub fn estimate_bounds(state: &RefinementState, domain: &Domain, samples: usize, h: f64) -> Result<Bounds, RefineError> {
    let mut sob = Sobol::new(state.n);
    let mut pts = Vec::with_capacity(samples);
    let mut u = vec![0.0; state.n];
    for _ in 0..samples * 64 {
        if pts.len() == samples {
            break;
        }
        sob.next_into(&mut u);
        if domain.contains(&u) {
            pts.push(u.clone());
        }
    }
    if pts.is_empty() {
        return Err(RefineError::Domain("no sample points in Ω".into()));
    }
    Ok(Bounds::from_derivatives(derivative_bounds(&state.base, &pts, h)?))
}

const CHUNK: usize = 4096;

/// Random anchors of cells inside `Ω` with a ball.
fn sample_cell<R: Rng>(state: &RefinementState, s: &Step, rng: &mut R) -> (Vec<f64>, usize) {
    let n = state.n;
    let eps = s.packing.cell_edge();
    let (mut a, mut u) = (vec![0.0; n], vec![0.0; n]);
    loop {
        let x: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        cell_of(&x, s.packing.level, &mut a, &mut u);
        if s.domain.contains_box(&a, eps) {
            let b = rng.gen_range(0..s.packing.template.balls.len());
            return (a, b);
        }
    }
}

/// A uniform point of ball `b` in cell units.
fn point_in_ball<R: Rng>(s: &Step, b: usize, rng: &mut R) -> Vec<f64> {
    let ball = &s.packing.template.balls[b];
    loop {
        let v: Vec<f64> = ball.center.iter().map(|_| 2.0 * rng.gen::<f64>() - 1.0).collect();
        if v.iter().map(|a| a * a).sum::<f64>() < 1.0 {
            return ball.center.iter().zip(&v).map(|(c, d)| c + ball.radius * d).collect();
        }
    }
}

/// Largest `|F_2(x) − F_2(y)| / φ(|x − y|)` over pairs inside one ball,
/// both directions, computed in charts.
pub fn local_ratio_scan(state: &RefinementState, pairs: usize, seed: u64) -> Result<f64, RefineError> {
    let s = state.step_ref()?;
    let eps = s.packing.cell_edge();
    let ratios: Vec<f64> = (0..pairs)
        .into_par_iter()
        .map(|i| {
            let mut rng = task_rng(seed, i as u64);
            let (a, b) = sample_cell(state, s, &mut rng);
            let u = point_in_ball(s, b, &mut rng);
            let v = point_in_ball(s, b, &mut rng);
            let (fu, fv) = (state.chart_forward(&a, &u)?, state.chart_forward(&a, &v)?);
            let forward = fu.distance(&fv) / state.modulus.value(eps * dist(&u, &v));
            let back = eps * dist(&u, &v) / state.modulus.value(fu.distance(&fv));
            Ok(forward.max(back))
        })
        .collect::<Result<_, RefineError>>()?;
    Ok(ratios.into_iter().fold(0.0, f64::max))
}

/// Checks the patch properties on random balls. Resolved cells rebuild the
/// patch and sample it; unresolved cells see an exactly affine patch, whose
/// properties reduce to the norms of `DF_1` at the anchor.
fn check_patches(state: &RefinementState, s: &Step, cfg: &RefineConfig) -> Result<(), RefineError> {
    let mut rng = task_rng(cfg.seed ^ 0x9a7c, 0);
    let level = state.k + 1;
    for _ in 0..cfg.patch_checks {
        let (a, b) = sample_cell(state, s, &mut rng);
        if s.packing.resolved() {
            let p = state.patch(&a, b)?;
            if cfg.rho_override.is_none() && p.radius >= radius_limit(s.bounds.m, level) {
                return Err(super::PatchError::Radius { r: p.radius, max: radius_limit(s.bounds.m, level), m: s.bounds.m }.into());
            }
            p.validate(&state.base, 64)?;
            for _ in 0..16 {
                let u = point_in_ball(s, b, &mut rng);
                let y = state.chart_forward(&a, &u)?;
                let back = state.chart_inverse(&a, &y)?;
                if dist(&back, &u) > 1e-3 {
                    return Err(super::PatchError::Validation { check: "round trip", detail: format!("{u:?} came back as {back:?}") }.into());
                }
            }
        } else {
            let t = state.tangent(&a)?;
            let m = nalgebra::DMatrix::from_row_slice(state.n, state.n, &t.matrix);
            let (fwd, inv) = spectral_norms(&m).ok_or_else(|| MapError::Domain { at: a.clone() })?;
            let lambda = s.bounds.lambda();
            let diam = 2.0 * s.packing.cell_edge() * s.packing.template.balls[b].radius * fwd;
            if fwd > lambda || inv > lambda || diam >= 2f64.powi(-(level as i32)) {
                return Err(super::PatchError::Validation {
                    check: "affine cell",
                    detail: format!("‖DF‖ = {fwd}, ‖DF⁻¹‖ = {inv}, Λ = {lambda}, diameter {diam:e}"),
                }
                .into());
            }
        }
    }
    Ok(())
}

/// `F_1 → F_2`. Fails without touching `state` if any stage fails.
pub fn refinement_step(state: &RefinementState, cfg: &RefineConfig) -> Result<RefinementState, RefineError> {
    if state.k != 1 || state.step.is_some() {
        return Err(RefineError::Unsupported {
            k: state.k,
            reason: "only the first step is executable; later domains would sit inside cells of edge ~2^{-240}".into(),
        });
    }
    let n = state.n;
    let domain = choose_domain(&state.base, cfg.cover_depth, cfg.collar, cfg.domain_samples, cfg.seed)?;
    let bounds = estimate_bounds(state, &domain, cfg.bound_samples, DIFF_STEP)?;
    let psi_seq = scales_for(&state.psi, cfg.implant_depth)?;
    let implant = FlipHomeo::new(psi_seq, n, cfg.implant_depth, FlowSolver::Transit);
    let implant_constant = modulus_ratio_scan(&implant, &state.psi, cfg.scan_pairs, cfg.seed ^ 1)?.max;
    let rho = choose_rho(state.k, bounds.m, bounds.lambda(), &state.modulus, &state.psi, 2.0 * implant_constant)?;
    let radius = cfg.rho_override.unwrap_or(rho.rho);
    let packing = pack_balls(&domain, radius, cfg.target, &state.base, cfg.coverage_samples, cfg.seed ^ 2)?;
    let implant_measure = 2f64.powf(-implant.seq.capacity * n as f64);
    let gain = implant_measure * packing.cubes_measure;
    let mut next = state.clone();
    next.k = state.k + 1;
    next.cantor.push(CantorPart::Implants {
        capacity: implant.seq.capacity,
        unit_measure: implant_measure,
        cubes_measure: packing.cubes_measure,
        measure: gain,
    });
    next.step = Some(Step { domain, bounds, rho, packing, implant, implant_measure, local_ratio: 0.0 });
    let s = next.step.as_ref().expect("just set");
    check_patches(&next, s, cfg)?;
    let local = local_ratio_scan(&next, cfg.scan_pairs / 4, cfg.seed ^ 3)?;
    let global = modulus_ratio_scan(&next, &next.modulus, cfg.scan_pairs, cfg.seed)?.max;
    next.step.as_mut().expect("just set").local_ratio = local;
    next.constants = Constants {
        base: state.constants.base,
        implant: Some(implant_constant),
        measured: global.max(local),
        budget: budget_factor(next.k) * state.constants.base,
    };
    Ok(next)
}

/// Exact measure of the stored orientation-reversing set and a Monte-Carlo
/// estimate from depth-limited membership: base Cantor cubes at the base
/// depth, then implant Cantor cubes at the implant depth inside the cells.
pub fn negative_measure(state: &RefinementState, samples: usize, seed: u64) -> NegativeMeasure {
    let n = state.n;
    let depth = state.base.depth();
    let chunks = samples.div_ceil(CHUNK);
    let hits: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = task_rng(seed, c as u64);
            let (mut a, mut u) = (vec![0.0; n], vec![0.0; n]);
            let mut count = 0;
            for _ in 0..CHUNK.min(samples - c * CHUNK) {
                let x: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
                if locate(&state.base.seq, n, &x, depth).status == Status::Inside {
                    count += 1;
                    continue;
                }
                let Some(s) = &state.step else { continue };
                cell_of(&x, s.packing.level, &mut a, &mut u);
                if !s.packing.resolved() {
                    u.iter_mut().for_each(|v| *v = rng.gen());
                }
                let Some(b) = state.ball(s, &a, &u) else { continue };
                let ball = &s.packing.template.balls[b];
                let (o, e) = (ball.cube_origin(), ball.cube_edge());
                let w: Vec<f64> = u.iter().zip(&o).map(|(v, o)| (v - o) / e).collect();
                if w.iter().all(|v| (0.0..=1.0).contains(v))
                    && locate(&s.implant.seq, n, &w, s.implant.depth()).status == Status::Inside
                {
                    count += 1;
                }
            }
            count
        })
        .sum();
    let p = hits as f64 / samples as f64;
    NegativeMeasure { exact: state.exact_measure(), estimate: p, stderr: (p * (1.0 - p) / samples as f64).sqrt(), samples }
}
