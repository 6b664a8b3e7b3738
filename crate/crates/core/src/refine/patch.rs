//! Tangent patches: a map blended into its own affine tangent on a small ball.

use super::bounds::{derivative_bounds, Bounds};
use crate::boxswap::jacobian;
use crate::map::{dist, Affine, Direction, Homeo, MapError, MAX_DIM};
use crate::qmc::{task_rng, Sobol};
use crate::smooth::smoothstep;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Radii, relative to the patch radius, between which the blend runs.
pub const BLEND_INNER: f64 = 0.6;
pub const BLEND_OUTER: f64 = 0.8;
pub const INVERSE_TOL: f64 = 1e-11;
/// Difference step for derivative probes; second differences use `100×`.
pub const DIFF_STEP: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PatchError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("radius {r:e} exceeds {max:e}, the admissible radius for M = {m}")]
    Radius { r: f64, max: f64, m: f64 },
    #[error("patch check `{check}` failed: {detail}")]
    Validation { check: &'static str, detail: String },
}

/// `x ↦ T(x) + b(|x − x_o|/r)(G(x) − T(x))` with `T` the tangent of `G` at
/// `x_o` and `b` rising from 0 at `3/5` to 1 at `4/5`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentPatch {
    pub center: Vec<f64>,
    pub radius: f64,
    pub level: usize,
    pub tangent: Affine,
    pub bounds: Bounds,
    pub lambda: f64,
}

/// Largest admissible patch radius `1/(10(M+1)²2^ℓ)` (exclusive).
pub fn radius_limit(m: f64, level: usize) -> f64 {
    1.0 / (10.0 * (m + 1.0) * (m + 1.0) * 2f64.powi(level as i32))
}

fn blend(s: f64) -> f64 {
    smoothstep((s - BLEND_INNER) / (BLEND_OUTER - BLEND_INNER))
}

/// Affine tangent of `map` at `x` by central differences.
pub fn tangent_at<M: Homeo + ?Sized>(map: &M, x: &[f64], h: f64) -> Result<Affine, MapError> {
    let n = x.len();
    let j = jacobian(map, x, h, Direction::Forward)?;
    let a: Vec<f64> = (0..n).flat_map(|r| (0..n).map(move |c| (r, c))).map(|(r, c)| j[(r, c)]).collect();
    let gx = map.eval(x, Direction::Forward)?;
    let mut ax = [0.0; MAX_DIM];
    let tmp = Affine::new(a.clone(), vec![0.0; n]).ok_or_else(|| MapError::Domain { at: x.to_vec() })?;
    tmp.linear(x, &mut ax[..n]);
    let offset = (0..n).map(|i| gx[i] - ax[i]).collect();
    Ok(Affine::new(a, offset).expect("invertible tangent"))
}

/// Uniform samples of the ball `B(c, r)`.
fn ball_samples(c: &[f64], r: f64, count: usize) -> Vec<Vec<f64>> {
    let n = c.len();
    let mut sob = Sobol::new(n);
    let mut out = Vec::with_capacity(count);
    let mut u = vec![0.0; n];
    while out.len() < count {
        sob.next_into(&mut u);
        let v: Vec<f64> = u.iter().map(|t| 2.0 * t - 1.0).collect();
        if v.iter().map(|a| a * a).sum::<f64>() <= 1.0 {
            out.push((0..n).map(|i| c[i] + r * v[i]).collect());
        }
    }
    out
}

fn sphere_point<R: Rng>(rng: &mut R, c: &[f64], r: f64) -> Vec<f64> {
    let n = c.len();
    let mut v: Vec<f64> = (0..n)
        .map(|_| {
            let (a, b): (f64, f64) = (rng.gen(), rng.gen());
            (-2.0 * (1.0 - a).ln()).sqrt() * (std::f64::consts::TAU * b).cos()
        })
        .collect();
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.iter_mut().for_each(|a| *a /= norm);
    (0..n).map(|i| c[i] + r * v[i]).collect()
}

impl TangentPatch {
    /// Largest admissible radius at `center`, with `M` sampled on a ball of
    /// radius `reach` and a margin factor of 1/2.
    pub fn admissible_radius<M: Homeo + ?Sized>(map: &M, center: &[f64], reach: f64, level: usize, probes: usize) -> Result<(f64, Bounds), MapError> {
        let pts = ball_samples(center, reach, probes.max(1));
        let bounds = Bounds::from_derivatives(derivative_bounds(map, &pts, DIFF_STEP)?);
        Ok((0.5 * radius_limit(bounds.m, level), bounds))
    }

    /// Builds the patch of `map` at `center` with radius `r` for level `ℓ`.
    /// `M` is measured on `probes` points of the doubled ball, then the
    /// patch's defining properties are checked on samples.
    pub fn build<M: Homeo + ?Sized>(map: &M, center: &[f64], r: f64, level: usize, probes: usize) -> Result<Self, PatchError> {
        let pts = ball_samples(center, 2.0 * r, probes.max(1));
        let bounds = Bounds::from_derivatives(derivative_bounds(map, &pts, DIFF_STEP)?);
        Self::with_bounds(map, center, r, level, bounds, probes)
    }

    /// As [`build`](Self::build) with `M` supplied.
    pub fn with_bounds<M: Homeo + ?Sized>(
        map: &M,
        center: &[f64],
        r: f64,
        level: usize,
        bounds: Bounds,
        probes: usize,
    ) -> Result<Self, PatchError> {
        let max = radius_limit(bounds.m, level);
        if r >= max {
            return Err(PatchError::Radius { r, max, m: bounds.m });
        }
        let tangent = tangent_at(map, center, DIFF_STEP.min(r))?;
        let p = Self { center: center.to_vec(), radius: r, level, tangent, bounds, lambda: bounds.lambda() };
        p.validate(map, probes)?;
        Ok(p)
    }

    fn scaled_distance(&self, x: &[f64]) -> f64 {
        dist(x, &self.center) / self.radius
    }

    /// Forward value of the patched map.
    pub fn eval<M: Homeo + ?Sized>(&self, map: &M, x: &[f64]) -> Result<Vec<f64>, MapError> {
        let s = self.scaled_distance(x);
        let t = self.tangent.eval(x, Direction::Forward)?;
        if s <= BLEND_INNER {
            return Ok(t);
        }
        let g = map.eval(x, Direction::Forward)?;
        if s >= BLEND_OUTER {
            return Ok(g);
        }
        let b = blend(s);
        Ok((0..x.len()).map(|i| t[i] + b * (g[i] - t[i])).collect())
    }

    /// Preimage under the patched map.
    pub fn inverse<M: Homeo + ?Sized>(&self, map: &M, y: &[f64]) -> Result<Vec<f64>, MapError> {
        let seed = self.tangent.eval(y, Direction::Inverse)?;
        if self.scaled_distance(&seed) <= BLEND_INNER {
            return Ok(seed);
        }
        let g = map.eval(y, Direction::Inverse)?;
        if self.scaled_distance(&g) >= BLEND_OUTER {
            return Ok(g);
        }
        let scale = 1.0 + y.iter().map(|v| v.abs()).fold(0.0, f64::max);
        // Converged well inside the ball, or at the evaluation noise floor.
        let tol = (INVERSE_TOL * self.radius.min(1.0)).max(1e-14 * scale);
        let floor = INVERSE_TOL * scale;
        // Chord iteration with the tangent matrix, then full Newton with
        // difference Jacobians if the chord stalls.
        let start = seed;
        for newton in [false, true] {
            if let Some(x) = self.solve(map, y, start.clone(), tol, floor, newton)? {
                return Ok(x);
            }
        }
        Err(MapError::Inverse { at: y.to_vec() })
    }

    fn solve<M: Homeo + ?Sized>(
        &self,
        map: &M,
        y: &[f64],
        mut x: Vec<f64>,
        tol: f64,
        floor: f64,
        newton: bool,
    ) -> Result<Option<Vec<f64>>, MapError> {
        let n = y.len();
        let mut res = self.residual(map, &x, y)?;
        let mut step = vec![0.0; n];
        for _ in 0..200 {
            let rn = res.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rn <= tol {
                return Ok(Some(x));
            }
            if newton {
                let j = self.jacobian(map, &x)?;
                let Some(inv) = j.try_inverse() else { return Ok(None) };
                for i in 0..n {
                    step[i] = (0..n).map(|k| inv[(i, k)] * res[k]).sum();
                }
            } else {
                self.tangent.linear_inverse(&res, &mut step);
            }
            let mut damp = 1.0;
            loop {
                let trial: Vec<f64> = (0..n).map(|i| x[i] - damp * step[i]).collect();
                let tr = self.residual(map, &trial, y)?;
                if tr.iter().map(|v| v * v).sum::<f64>().sqrt() < rn {
                    x = trial;
                    res = tr;
                    break;
                }
                damp *= 0.5;
                if damp < 1e-6 {
                    return Ok((rn <= floor).then_some(x));
                }
            }
        }
        Ok(None)
    }

    fn jacobian<M: Homeo + ?Sized>(&self, map: &M, x: &[f64]) -> Result<nalgebra::DMatrix<f64>, MapError> {
        let n = x.len();
        let h = self.radius * 1e-5;
        let mut j = nalgebra::DMatrix::zeros(n, n);
        let mut p = x.to_vec();
        for c in 0..n {
            p[c] = x[c] + h;
            let a = self.eval(map, &p)?;
            p[c] = x[c] - h;
            let b = self.eval(map, &p)?;
            p[c] = x[c];
            for r in 0..n {
                j[(r, c)] = (a[r] - b[r]) / (2.0 * h);
            }
        }
        Ok(j)
    }

    fn residual<M: Homeo + ?Sized>(&self, map: &M, x: &[f64], y: &[f64]) -> Result<Vec<f64>, MapError> {
        let px = self.eval(map, x)?;
        Ok(px.iter().zip(y).map(|(a, b)| a - b).collect())
    }

    /// Samples the defining properties: tangent inside `3r/5`, the map beyond
    /// `4r/5`, bi-Lipschitz with `Λ` on the ball, `T(D) ⊂ G(B) ⊂ T(E)`, and
    /// `diam G(B) < 2^{-ℓ}`.
    pub fn validate<M: Homeo + ?Sized>(&self, map: &M, probes: usize) -> Result<(), PatchError> {
        let fail = |check: &'static str, detail: String| Err(PatchError::Validation { check, detail });
        let (c, r) = (&self.center, self.radius);
        let pts = ball_samples(c, r, probes.max(2));
        for x in &pts {
            let s = self.scaled_distance(x);
            let px = self.eval(map, x)?;
            if s <= BLEND_INNER && px != self.tangent.eval(x, Direction::Forward)? {
                return fail("tangent core", format!("{x:?}"));
            }
            if s >= BLEND_OUTER && px != map.eval(x, Direction::Forward)? {
                return fail("outer ring", format!("{x:?}"));
            }
        }
        let images: Vec<Vec<f64>> = pts.iter().map(|x| self.eval(map, x)).collect::<Result<_, _>>()?;
        for i in 0..pts.len() - 1 {
            let j = (i * 7 + 1) % pts.len();
            let d = dist(&pts[i], &pts[j]);
            if d == 0.0 {
                continue;
            }
            let q = dist(&images[i], &images[j]) / d;
            if !(q >= 1.0 / self.lambda && q <= self.lambda) {
                return fail("bi-Lipschitz", format!("ratio {q} against {}", self.lambda));
            }
        }
        let mut rng = task_rng(0x7a9, 0);
        let gc = map.eval(c, Direction::Forward)?;
        let mut diam = 0.0f64;
        for _ in 0..probes.max(2) {
            let x = sphere_point(&mut rng, c, r);
            let g = map.eval(&x, Direction::Forward)?;
            let back = self.tangent.eval(&g, Direction::Inverse)?;
            let s = dist(&back, c);
            if !(s > 0.5 * r && s < 2.0 * r) {
                return fail("sandwich", format!("|T^-1 G(x) - x_o| = {s:e} for r = {r:e}"));
            }
            diam = diam.max(2.0 * dist(&g, &gc));
        }
        if diam >= 2f64.powi(-(self.level as i32)) {
            return fail("diameter", format!("{diam:e}"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxswap::{BoxExchange, FlowSolver};

    #[test]
    fn affine_map_is_unchanged() {
        let a = Affine::new(vec![1.5, 0.2, -0.1, 0.8], vec![0.1, -0.3]).unwrap();
        let p = TangentPatch::build(&a, &[0.4, 0.6], 1e-4, 1, 64).unwrap();
        for x in [[0.40005, 0.60002], [0.4, 0.6], [0.40007, 0.59995]] {
            let y = p.eval(&a, &x).unwrap();
            assert!(dist(&y, &a.eval(&x, Direction::Forward).unwrap()) < 1e-12);
        }
    }

    #[test]
    fn radius_limit_example() {
        assert!((radius_limit(2.0, 3) - 1.0 / 720.0).abs() < 1e-15);
        let a = Affine::identity(2);
        assert!(matches!(TangentPatch::build(&a, &[0.5, 0.5], 0.1, 0, 16), Err(PatchError::Radius { .. })));
    }

    #[test]
    fn patch_on_a_box_exchange() {
        let f = BoxExchange::new(2, 0.3, FlowSolver::Transit);
        // A point moved by the flows, away from the exact translation tubes.
        let c = [0.62, 0.47];
        let (r, bounds) = TangentPatch::admissible_radius(&f, &c, 1e-3, 0, 64).unwrap();
        assert!(r > 1e-7, "{r:e}");
        let p = TangentPatch::with_bounds(&f, &c, r, 0, bounds, 64).unwrap();
        let r = p.radius;
        for x in [[c[0] + 0.7 * r, c[1]], [c[0], c[1] - 0.65 * r], [c[0] + 0.3 * r, c[1] + 0.3 * r]] {
            let y = p.eval(&f, &x).unwrap();
            let back = p.inverse(&f, &y).unwrap();
            assert!(dist(&back, &x) < 1e-9 * r, "{x:?}");
        }
    }
}
