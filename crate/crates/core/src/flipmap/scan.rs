//! Measure and modulus statistics of the flip construction.

use super::address::{locate, Status};
use crate::map::{Direction, Homeo, MapError};
use crate::modulus::Modulus;
use crate::qmc::task_rng;
use crate::sequences::ScaleSequence;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// `((2^K α_K)^n, (2^{-N})^n)`: volume of the depth-`K` union and of the Cantor set.
pub fn cantor_stats(seq: &ScaleSequence, n: usize, depth: usize) -> (f64, f64) {
    let v = (2f64.powi(depth as i32) * seq.alpha(depth)).powi(n as i32);
    (v, 2f64.powf(-seq.capacity * n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub fraction: f64,
    /// Binomial standard error of `fraction`.
    pub stderr: f64,
    pub samples: usize,
}

const CHUNK: usize = 4096;

/// Monte-Carlo fraction of uniform points lying in a depth-`K` cube.
pub fn membership(seq: &ScaleSequence, n: usize, depth: usize, samples: usize, seed: u64) -> Membership {
    let chunks = samples.div_ceil(CHUNK);
    let hits: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = task_rng(seed, c as u64);
            let count = CHUNK.min(samples - c * CHUNK);
            let mut x = vec![0.0; n];
            (0..count)
                .filter(|_| {
                    x.iter_mut().for_each(|v| *v = rng.gen());
                    locate(seq, n, &x, depth).status == Status::Inside
                })
                .count()
        })
        .sum();
    let p = hits as f64 / samples as f64;
    Membership { fraction: p, stderr: (p * (1.0 - p) / samples as f64).sqrt(), samples }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecadeMax {
    /// Separations in `[10^decade, 10^{decade+1})`.
    pub decade: i32,
    pub pairs: usize,
    pub forward: f64,
    pub inverse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioScan {
    /// Largest ratio over both directions.
    pub max: f64,
    pub forward_max: f64,
    pub inverse_max: f64,
    pub profile: Vec<DecadeMax>,
}

const MIN_SEPARATION: f64 = 1e-9;

/// A pair of points of the unit cube at a log-uniform separation in
/// `[1e-9, √n]`. Separations that fit no direction are shortened by 10%.
fn sample_pair<R: Rng>(rng: &mut R, n: usize, x: &mut [f64], y: &mut [f64]) -> f64 {
    let (lo, hi) = (MIN_SEPARATION.ln(), (n as f64).sqrt().ln());
    let mut d = (lo + (hi - lo) * rng.gen::<f64>()).exp();
    let mut v = vec![0.0; n];
    loop {
        for _ in 0..32 {
            // Gaussian direction by Box–Muller.
            for vi in v.iter_mut() {
                let (a, b): (f64, f64) = (rng.gen(), rng.gen());
                *vi = (-2.0 * (1.0 - a).ln()).sqrt() * (std::f64::consts::TAU * b).cos();
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.iter_mut().for_each(|a| *a /= norm);
            if v.iter().all(|a| d * a.abs() < 1.0) {
                for i in 0..n {
                    let step = d * v[i];
                    let (a, b) = (0f64.max(-step), 1f64.min(1.0 - step));
                    x[i] = a + (b - a) * rng.gen::<f64>();
                    y[i] = x[i] + step;
                }
                return crate::map::dist(x, y);
            }
        }
        d *= 0.9;
    }
}

/// Largest `|Φ(x) − Φ(y)| / m(|x − y|)` over `pairs` random pairs, for the
/// map and its inverse, with per-decade maxima.
pub fn modulus_ratio_scan<M: Homeo>(map: &M, m: &Modulus, pairs: usize, seed: u64) -> Result<RatioScan, MapError> {
    let n = map.dim();
    let rows: Vec<(f64, f64, f64)> = (0..pairs)
        .into_par_iter()
        .map(|i| {
            let mut rng = task_rng(seed, i as u64);
            let mut x = vec![0.0; n];
            let mut y = vec![0.0; n];
            let d = sample_pair(&mut rng, n, &mut x, &mut y);
            let w = m.value(d);
            let mut ratios = [0.0; 2];
            for (r, dir) in ratios.iter_mut().zip([Direction::Forward, Direction::Inverse]) {
                let fx = map.eval(&x, dir)?;
                let fy = map.eval(&y, dir)?;
                *r = crate::map::dist(&fx, &fy) / w;
            }
            Ok((d, ratios[0], ratios[1]))
        })
        .collect::<Result<_, MapError>>()?;
    let mut profile: Vec<DecadeMax> = Vec::new();
    for &(d, f, b) in &rows {
        let decade = d.log10().floor() as i32;
        match profile.iter_mut().find(|p| p.decade == decade) {
            Some(p) => {
                p.pairs += 1;
                p.forward = p.forward.max(f);
                p.inverse = p.inverse.max(b);
            }
            None => profile.push(DecadeMax { decade, pairs: 1, forward: f, inverse: b }),
        }
    }
    profile.sort_by_key(|p| p.decade);
    let forward_max = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let inverse_max = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    Ok(RatioScan { max: forward_max.max(inverse_max), forward_max, inverse_max, profile })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::Identity;
    use crate::sequences::build_scales;

    #[test]
    fn sqrt_volumes() {
        let seq = build_scales(&Modulus::power(0.5).unwrap(), 1.0, 10).unwrap();
        let (v1, lim) = cantor_stats(&seq, 2, 1);
        assert!((v1 - 9.0 / 16.0).abs() < 1e-12);
        assert!((lim - 0.25).abs() < 1e-12);
        let mut prev = 1.0;
        for k in 0..=10 {
            let (v, _) = cantor_stats(&seq, 2, k);
            assert!(v < prev || k == 0);
            prev = v;
        }
    }

    #[test]
    fn pairs_stay_in_the_cube() {
        let mut rng = task_rng(7, 0);
        let mut x = [0.0; 3];
        let mut y = [0.0; 3];
        for _ in 0..2000 {
            let d = sample_pair(&mut rng, 3, &mut x, &mut y);
            assert!(d >= MIN_SEPARATION * 0.999 && d <= 3f64.sqrt());
            assert!(x.iter().chain(&y).all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn identity_ratio_is_bounded_by_the_modulus() {
        let m = Modulus::power(0.5).unwrap();
        let s = modulus_ratio_scan(&Identity(2), &m, 2000, 3).unwrap();
        // t/√t = √t ≤ 2^{1/4} on [0, √2].
        assert!(s.max <= 2f64.powf(0.25) + 1e-12);
        assert!(s.profile.len() >= 9);
    }

    #[test]
    fn first_generation_membership() {
        let seq = build_scales(&Modulus::power(0.5).unwrap(), 1.0, 4).unwrap();
        let est = membership(&seq, 2, 1, 20_000, 11);
        assert!((est.fraction - 9.0 / 16.0).abs() < 4.0 * est.stderr);
    }
}
