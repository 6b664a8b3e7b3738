//! The flip homeomorphism: a limit of nested box exchanges that swaps the
//! top and bottom halves of every cube of a fat Cantor set, so that it acts as
//! the reflection `x_n ↦ 1 − x_n` on the Cantor set itself.
//!
//! `Φ_K = R_{K-1} ∘ ⋯ ∘ R_0`, where `R_ℓ` runs the box exchange of ratio
//! `α_{ℓ+1}/α_ℓ` inside whichever generation-`ℓ` cube holds the running point.

mod address;
mod scan;

pub use address::{locate, CubeAddress, CubeFrame, Location, Status};
pub use scan::{cantor_stats, membership, modulus_ratio_scan, DecadeMax, Membership, RatioScan};

use crate::boxswap::{jacobian, BoxExchange, FlowSolver};
use crate::map::{Direction, Homeo, MapError, MAX_DIM};
use crate::sequences::ScaleSequence;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlipError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("depth {available} is insufficient, about {required} generations are needed")]
    Depth { required: usize, available: usize },
    #[error("{at:?} is not a depth-{depth} Cantor approximant")]
    NotInside { at: Vec<f64>, depth: usize },
    #[error("difference stencil at {at:?} with step {h} crosses a cube boundary")]
    Stencil { at: Vec<f64>, h: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipHomeo {
    pub n: usize,
    pub seq: ScaleSequence,
    /// `exchanges[ℓ]` is the box exchange of ratio `α_{ℓ+1}/α_ℓ`.
    pub exchanges: Vec<BoxExchange>,
}

impl FlipHomeo {
    pub fn new(seq: ScaleSequence, n: usize, depth: usize, solver: FlowSolver) -> Self {
        assert!(depth <= seq.depth(), "depth {depth} beyond the sequence ({})", seq.depth());
        let exchanges = (0..depth).map(|l| BoxExchange::new(n, seq.ratio(l), solver)).collect();
        Self { n, seq, exchanges }
    }

    pub fn depth(&self) -> usize {
        self.exchanges.len()
    }

    /// The same map cut down to `depth` layers.
    pub fn truncate(&self, depth: usize) -> Self {
        assert!(depth <= self.depth());
        Self { n: self.n, seq: self.seq.clone(), exchanges: self.exchanges[..depth].to_vec() }
    }

    /// Uniform distance bound `√n·α_K` between `Φ_K` and the limit.
    pub fn error_bound(&self, depth: usize) -> f64 {
        (self.n as f64).sqrt() * self.seq.alpha(depth)
    }

    fn layer(&self, l: usize, frame: &CubeFrame, x: &mut [f64], dir: Direction) -> Result<(), MapError> {
        let n = self.n;
        let mut u = [0.0; MAX_DIM];
        frame.to_local(x, &mut u[..n]);
        let before = u;
        self.exchanges[l].apply(&mut u[..n], dir)?;
        if u != before {
            frame.to_global(&u[..n], x);
        }
        Ok(())
    }

    /// `Φ_K(x)` or `Φ_K^{-1}(x)` in place.
    pub fn apply_depth(&self, x: &mut [f64], depth: usize, dir: Direction) -> Result<(), MapError> {
        assert!(depth <= self.depth());
        match dir {
            Direction::Forward => {
                let mut frame = CubeFrame::unit(self.n);
                for l in 0..depth {
                    if l > 0 {
                        let child = frame.child(frame.quadrant(x), self.seq.alpha(l));
                        if !child.contains(x) {
                            break;
                        }
                        frame = child;
                    }
                    self.layer(l, &frame, x, dir)?;
                }
            }
            Direction::Inverse => {
                // Each layer keeps every cube of its own generation in place,
                // so the frames can be read off before undoing the layers.
                let mut frames = vec![CubeFrame::unit(self.n)];
                while frames.len() < depth {
                    let last = &frames[frames.len() - 1];
                    let child = last.child(last.quadrant(x), self.seq.alpha(frames.len()));
                    if !child.contains(x) {
                        break;
                    }
                    frames.push(child);
                }
                if depth > 0 {
                    for (l, frame) in frames.iter().enumerate().rev() {
                        self.layer(l, frame, x, dir)?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn eval_depth(&self, x: &[f64], depth: usize, dir: Direction) -> Result<Vec<f64>, MapError> {
        let mut y = x.to_vec();
        self.apply_depth(&mut y, depth, dir)?;
        Ok(y)
    }

    /// `Φ_K(x)` for the least `K` with `√n·α_K ≤ tol`, with that bound.
    pub fn eval_limit(&self, x: &[f64], tol: f64, dir: Direction) -> Result<(Vec<f64>, f64), FlipError> {
        let Some(k) = (0..=self.depth()).find(|&k| self.error_bound(k) <= tol) else {
            // α_k is close to 2^{-(N+k)}.
            let need = ((self.n as f64).sqrt() / tol).log2() - self.seq.capacity;
            return Err(FlipError::Depth { required: need.ceil().max(0.0) as usize + 1, available: self.depth() });
        };
        Ok((self.eval_depth(x, k, dir)?, self.error_bound(k)))
    }

    /// `|Φ_K(x) − (x_1, …, x_{n−1}, 1 − x_n)|` for a depth-`K` Cantor approximant.
    pub fn reflection_defect(&self, x: &[f64], depth: usize) -> Result<f64, FlipError> {
        if locate(&self.seq, self.n, x, depth).status != Status::Inside {
            return Err(FlipError::NotInside { at: x.to_vec(), depth });
        }
        let y = self.eval_depth(x, depth, Direction::Forward)?;
        let mut r = x.to_vec();
        r[self.n - 1] = 1.0 - r[self.n - 1];
        Ok(crate::map::dist(&y, &r))
    }

    /// Central-difference Jacobian determinant of `Φ_K` at `x`. Every stencil
    /// point must share the location of `x` at depth `K`.
    pub fn approx_jacobian(&self, x: &[f64], depth: usize, h: f64) -> Result<f64, FlipError> {
        let here = locate(&self.seq, self.n, x, depth);
        let mut p = x.to_vec();
        for i in 0..self.n {
            for s in [-h, h] {
                p[i] = x[i] + s;
                if p[i] < 0.0 || p[i] > 1.0 || locate(&self.seq, self.n, &p, depth) != here {
                    return Err(FlipError::Stencil { at: x.to_vec(), h });
                }
            }
            p[i] = x[i];
        }
        let j = jacobian(&self.at_depth(depth), x, h, Direction::Forward)?;
        Ok(j.determinant())
    }

    /// `Φ_K` as a [`Homeo`].
    pub fn at_depth(&self, depth: usize) -> AtDepth<'_> {
        assert!(depth <= self.depth());
        AtDepth { map: self, depth }
    }
}

impl Homeo for FlipHomeo {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &mut [f64], dir: Direction) -> Result<(), MapError> {
        self.apply_depth(x, self.depth(), dir)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AtDepth<'a> {
    map: &'a FlipHomeo,
    depth: usize,
}

impl Homeo for AtDepth<'_> {
    fn dim(&self) -> usize {
        self.map.n
    }

    fn apply(&self, x: &mut [f64], dir: Direction) -> Result<(), MapError> {
        self.map.apply_depth(x, self.depth, dir)
    }
}
