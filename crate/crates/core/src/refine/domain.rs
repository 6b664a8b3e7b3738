//! The open set `Ω` a refinement step works in: the cube minus a boundary
//! collar and minus a finite-depth cube cover of the Cantor set.

use super::RefineError;
use crate::flipmap::{locate, CubeFrame, FlipHomeo, Status};
use crate::map::{Direction, Homeo, MAX_DIM};
use crate::qmc::task_rng;
use crate::sequences::ScaleSequence;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Monte-Carlo check of `|F(Ω)| > ¾|Q∖F(C)|` through preimages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageCheck {
    /// Estimate of `|F(Ω)|`.
    pub domain: f64,
    /// Estimate of `|Q∖F(C)|`.
    pub complement: f64,
    /// Mean of `1[x ∈ Ω] − ¾·1[x ∉ C]`; must exceed `2·stderr`.
    pub excess: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl ImageCheck {
    pub fn passes(&self) -> bool {
        self.excess > 2.0 * self.stderr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub n: usize,
    pub collar: f64,
    pub cover_depth: usize,
    pub seq: ScaleSequence,
    /// `|Ω|`, from the closed form.
    pub measure: f64,
    /// `|Q∖C|`.
    pub complement: f64,
    /// `|cover| − |C|`.
    pub cover_excess: f64,
    /// `(n−1)`-volume of `∂Ω`.
    pub surface: f64,
    pub image: ImageCheck,
}

fn boxes_meet(frame: &CubeFrame, lo: &[f64], edge: f64) -> bool {
    (0..lo.len()).all(|i| lo[i] <= frame.origin[i] + frame.edge && lo[i] + edge >= frame.origin[i])
}

impl Domain {
    /// Whether `x` lies in the open set `Ω`.
    pub fn contains(&self, x: &[f64]) -> bool {
        if x.iter().any(|&v| !(v > self.collar && v < 1.0 - self.collar)) {
            return false;
        }
        let mut frame = CubeFrame::unit(self.n);
        for l in 1..=self.cover_depth {
            let child = frame.child(frame.quadrant(x), self.seq.alpha(l));
            if !child.contains(x) {
                return true;
            }
            frame = child;
        }
        false
    }

    /// Whether the closed box `lo + [0, edge]^n` lies in `Ω`.
    pub fn contains_box(&self, lo: &[f64], edge: f64) -> bool {
        if lo.iter().any(|&v| !(v > self.collar && v + edge < 1.0 - self.collar)) {
            return false;
        }
        !self.meets_cover(&CubeFrame::unit(self.n), 0, lo, edge)
    }

    fn meets_cover(&self, frame: &CubeFrame, generation: usize, lo: &[f64], edge: f64) -> bool {
        if generation == self.cover_depth {
            return true;
        }
        (1..=1usize << self.n).any(|d| {
            let child = frame.child(d, self.seq.alpha(generation + 1));
            boxes_meet(&child, lo, edge) && self.meets_cover(&child, generation + 1, lo, edge)
        })
    }

    /// Lower bound on the measure of the lattice cells of edge `edge` that lie
    /// inside `Ω`: such cells miss only a `√n·edge` neighbourhood of `∂Ω`.
    pub fn cells_measure(&self, edge: f64) -> f64 {
        let lost = 2.0 * self.surface * (self.n as f64).sqrt() * edge;
        let m = self.measure - lost;
        if lost > 0.0 && m == self.measure {
            m.next_down()
        } else {
            m
        }
    }
}

/// Exact bookkeeping of `Ω` for cover depth `m` and collar width `collar`,
/// with the Monte-Carlo image check for `F` and its Cantor set.
pub fn choose_domain(f: &FlipHomeo, cover_depth: usize, collar: f64, samples: usize, seed: u64) -> Result<Domain, RefineError> {
    let (n, seq) = (f.n, &f.seq);
    if cover_depth == 0 || cover_depth > f.depth() {
        return Err(RefineError::Domain(format!("cover depth {cover_depth} outside 1..={}", f.depth())));
    }
    let cantor = 2f64.powf(-seq.capacity * n as f64);
    let cubes = 2f64.powi((n * cover_depth) as i32);
    let edge = seq.alpha(cover_depth);
    let cover = cubes * edge.powi(n as i32);
    let complement = 1.0 - cantor;
    let cover_excess = cover - cantor;
    if cover_excess >= complement / 8.0 {
        return Err(RefineError::Domain(format!(
            "cover of depth {cover_depth} exceeds the Cantor set by {cover_excess:.5}, more than |Q∖C|/8 = {:.5}; go deeper",
            complement / 8.0
        )));
    }
    let inner = 1.0 - 2.0 * collar;
    let measure = inner.powi(n as i32) - cover;
    if measure <= 0.75 * complement {
        return Err(RefineError::Domain(format!("|Ω| = {measure:.5} is not above ¾|Q∖C| = {:.5}", 0.75 * complement)));
    }
    let surface = 2.0 * n as f64 * (inner.powi(n as i32 - 1) + cubes * edge.powi(n as i32 - 1));
    let pending = ImageCheck { domain: 0.0, complement: 0.0, excess: 0.0, stderr: 0.0, samples: 0 };
    let mut domain = Domain {
        n,
        collar,
        cover_depth,
        seq: seq.clone(),
        measure,
        complement,
        cover_excess,
        surface,
        image: pending,
    };
    domain.image = image_check(&domain, f, samples, seed)?;
    if !domain.image.passes() {
        return Err(RefineError::Domain(format!("image check failed: {:?}", domain.image)));
    }
    Ok(domain)
}

const CHUNK: usize = 4096;

fn image_check(domain: &Domain, f: &FlipHomeo, samples: usize, seed: u64) -> Result<ImageCheck, RefineError> {
    let n = domain.n;
    let depth = f.depth();
    let chunks = samples.div_ceil(CHUNK);
    let sums: Vec<(usize, usize, f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = task_rng(seed, c as u64);
            let mut acc = (0, 0, 0.0, 0.0);
            let mut x = [0.0; MAX_DIM];
            for _ in 0..CHUNK.min(samples - c * CHUNK) {
                x[..n].iter_mut().for_each(|v| *v = rng.gen());
                f.apply(&mut x[..n], Direction::Inverse)?;
                let inside = domain.contains(&x[..n]);
                let outside_c = locate(&f.seq, n, &x[..n], depth).status != Status::Inside;
                let z = inside as u8 as f64 - 0.75 * outside_c as u8 as f64;
                acc.0 += inside as usize;
                acc.1 += outside_c as usize;
                acc.2 += z;
                acc.3 += z * z;
            }
            Ok(acc)
        })
        .collect::<Result<_, RefineError>>()?;
    let s = sums.iter().fold((0, 0, 0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2, a.3 + b.3));
    let count = samples as f64;
    let mean = s.2 / count;
    let var = (s.3 / count - mean * mean).max(0.0);
    Ok(ImageCheck {
        domain: s.0 as f64 / count,
        complement: s.1 as f64 / count,
        excess: mean,
        stderr: (var / count).sqrt(),
        samples,
    })
}
