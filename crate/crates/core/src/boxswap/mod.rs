//! Box exchanges: diffeomorphisms of `[0,1]^n` that swap each top-layer
//! dyadic cube of edge `α` with the cube right below it, by exact
//! translations on thin tubes, and are the identity near the boundary.

mod probe;
mod scaler;
mod swap;

pub use probe::{jacobian, operator_norm_probe, spectral_norms, ProbeError, Region};
pub use scaler::{gauge, gauge_exponent, RadialScaler};
pub use swap::{Flow, FlowSolver, QuarterSwap};

use crate::map::{Direction, Homeo, MapError, MAX_DIM};
use serde::{Deserialize, Serialize};

/// Tolerance of the Runge–Kutta flow solver when it is selected.
pub const DEFAULT_ODE_TOL: f64 = 1e-10;

/// `F_α = H_α⁻¹ ∘ F ∘ H_α`, where `H_α` rescales each half-cell so that the
/// `α`-cubes become quarter cubes and `F` is the [`QuarterSwap`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxExchange {
    pub n: usize,
    /// Requested edge ratio.
    pub alpha: f64,
    /// Ratio actually used: ratios below 1/4 are served by 1/4.
    pub effective_alpha: f64,
    pub cell: RadialScaler,
    pub swap: QuarterSwap,
}

impl BoxExchange {
    pub fn new(n: usize, alpha: f64, solver: FlowSolver) -> Self {
        assert!(alpha > 0.0 && alpha < 0.5, "alpha = {alpha}");
        let eff = alpha.max(0.25);
        Self {
            n,
            alpha,
            effective_alpha: eff,
            cell: RadialScaler::cube(n, 1.0 - 2.0 * eff),
            swap: QuarterSwap::new(n, solver),
        }
    }

    /// Gap width `(1 − 2α)/4` between an `α`-cube and its half-cell boundary.
    pub fn beta(&self) -> f64 {
        (1.0 - 2.0 * self.effective_alpha) / 4.0
    }

    /// Half-width of the tube around each `α`-cube that translates exactly.
    pub fn tube_radius(&self) -> f64 {
        self.effective_alpha / 2.0 + self.beta() / 10.0
    }

    pub fn collar_width(&self) -> f64 {
        let cell = if self.cell.is_identity() { f64::INFINITY } else { (1.0 - self.cell.outer) / 4.0 };
        cell.min(self.swap.collar_width())
    }

    fn cells(&self, x: &mut [f64], forward: bool) {
        if self.cell.is_identity() {
            return;
        }
        let n = self.n;
        let mut q = [0.0; MAX_DIM];
        let mut z = [0.0; MAX_DIM];
        for i in 0..n {
            q[i] = if x[i] < 0.5 { 0.25 } else { 0.75 };
            z[i] = 4.0 * (x[i] - q[i]);
        }
        if self.cell.apply(&mut z[..n], forward) {
            for i in 0..n {
                x[i] = q[i] + 0.25 * z[i];
            }
        }
    }
}

impl Homeo for BoxExchange {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &mut [f64], dir: Direction) -> Result<(), MapError> {
        self.cells(x, true);
        self.swap.apply(x, dir)?;
        self.cells(x, false);
        Ok(())
    }
}

/// Centre of the `j`-th `α`-cube, `j = 1..=2^n`; `j ≤ 2^{n-1}` is the top layer
/// and `j + 2^{n-1}` lies right below `j`.
pub fn cube_center(n: usize, j: usize, out: &mut [f64]) {
    let half = 1usize << (n - 1);
    assert!((1..=2 * half).contains(&j), "cube index {j} outside 1..={}", 2 * half);
    let (bits, top) = if j <= half { (j - 1, true) } else { (j - 1 - half, false) };
    for i in 0..n - 1 {
        out[i] = if (bits >> i) & 1 == 1 { 0.75 } else { 0.25 };
    }
    out[n - 1] = if top { 0.75 } else { 0.25 };
}

/// One-shot evaluation of `F_α`.
pub fn box_exchange(n: usize, alpha: f64, x: &[f64], dir: Direction) -> Result<Vec<f64>, MapError> {
    BoxExchange::new(n, alpha, FlowSolver::Transit).eval(x, dir)
}
