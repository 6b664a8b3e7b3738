//! The fixed exchange of vertically paired quarter cubes of `[0,1]^n`.
//!
//! In every vertical column of half-cells the map is `Shrink⁻¹ ∘ Slide ∘ Shrink`:
//! each half-cell is contracted by 1/4 about its centre (identity near the
//! half-cell faces), then four plateau-translation flows move the two small
//! blobs past each other (top sideways, top down, bottom up, top back), then
//! the contraction is undone. Points of the 1/40-tube of a quarter cube move
//! by exactly `∓ e_n / 2`.

use super::scaler::{gauge_exponent, RadialScaler};
use crate::map::{Direction, MapError, MAX_DIM};
use crate::ode;
use crate::smooth::{plateau, smoothstep, transit, transit_inverse};
use serde::{Deserialize, Serialize};

/// Plateau half-width around blob paths.
const PLATEAU: f64 = 0.04;
/// Width of the transverse transition shell around each plateau box.
const MARGIN: f64 = 0.04;
/// Axis transitions of the vertical flows.
const VERTICAL_MARGIN: f64 = 0.16;
/// Axis transitions of the sideways flows, on the far and near side of the column centre.
const SIDE_MARGIN: (f64, f64) = (0.17, 0.05);
/// Distance every flow support keeps from its column walls.
const WALL: f64 = 0.03;
const SIDESTEP: f64 = 0.125;
/// Tube half-width of a quarter cube in half-cell coordinates: 4·(1/8 + 1/40).
const TUBE_CELL: f64 = 0.6;

/// How the time-1 map of a one-dimensional plateau flow is computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FlowSolver {
    /// Separation of variables: the transit time `∫ dy / χ(y)` is tabulated,
    /// so forward and inverse agree to rounding.
    Transit,
    /// Adaptive Dormand–Prince with the given tolerance.
    RungeKutta { tol: f64 },
}

/// Time-1 flow of `shift · κ(x) · χ(x_axis) · e_axis`, where `χ` is 1 on
/// `[lo, hi]` along the axis and `κ` is the product of the transverse plateaus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    axis: usize,
    shift: f64,
    lo: [f64; MAX_DIM],
    hi: [f64; MAX_DIM],
    /// Transition widths below and above the plateau along the axis.
    axis_margin: (f64, f64),
}

impl Flow {
    /// Plateau box enlarged by the margins: outside it the field vanishes.
    pub fn support(&self, n: usize) -> (Vec<f64>, Vec<f64>) {
        let lo = (0..n).map(|i| self.lo[i] - if i == self.axis { self.axis_margin.0 } else { MARGIN }).collect();
        let hi = (0..n).map(|i| self.hi[i] + if i == self.axis { self.axis_margin.1 } else { MARGIN }).collect();
        (lo, hi)
    }

    fn profile(&self, y: f64) -> f64 {
        let (lo, hi) = (self.lo[self.axis], self.hi[self.axis]);
        let (ml, mh) = self.axis_margin;
        if y < lo {
            smoothstep((y - (lo - ml)) / ml)
        } else if y > hi {
            smoothstep(((hi + mh) - y) / mh)
        } else {
            1.0
        }
    }

    /// Transit coordinate along the axis: `dT/dy = 1/χ(y)`, `T(lo) = 0`.
    fn transit_coord(&self, y: f64) -> f64 {
        let (lo, hi) = (self.lo[self.axis], self.hi[self.axis]);
        let (ml, mh) = self.axis_margin;
        if y < lo {
            -ml * transit((y - (lo - ml)) / ml)
        } else if y > hi {
            (hi - lo) + mh * transit(((hi + mh) - y) / mh)
        } else {
            y - lo
        }
    }

    fn from_transit(&self, tc: f64) -> f64 {
        let (lo, hi) = (self.lo[self.axis], self.hi[self.axis]);
        let (ml, mh) = self.axis_margin;
        if tc < 0.0 {
            lo - ml + ml * transit_inverse(-tc / ml)
        } else if tc > hi - lo {
            hi + mh - mh * transit_inverse((tc - (hi - lo)) / mh)
        } else {
            lo + tc
        }
    }

    fn apply(&self, x: &mut [f64], sign: f64, solver: FlowSolver) -> Result<(), MapError> {
        let n = x.len();
        let a = self.axis;
        let mut kappa = 1.0;
        for i in 0..n {
            if i != a {
                kappa *= plateau(x[i], self.lo[i], self.hi[i], MARGIN);
                if kappa == 0.0 {
                    return Ok(());
                }
            }
        }
        let d = sign * self.shift * kappa;
        let start = x[a];
        if self.profile(start) == 0.0 {
            return Ok(());
        }
        let (lo, hi) = (self.lo[a], self.hi[a]);
        let end = start + d;
        if start >= lo && start <= hi && end >= lo && end <= hi {
            x[a] = end;
            return Ok(());
        }
        match solver {
            FlowSolver::Transit => {
                let tc = self.transit_coord(start);
                // Points too close to the support edge to move at all.
                if tc.is_finite() {
                    x[a] = self.from_transit(tc + d);
                }
            }
            FlowSolver::RungeKutta { tol } => {
                let mut y = [start];
                ode::integrate(|y, dy| dy[0] = d * self.profile(y[0]), &mut y, 1.0, tol)
                    .map_err(|source| MapError::Integration { at: x.to_vec(), source })?;
                x[a] = y[0];
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarterSwap {
    pub n: usize,
    pub shrink: RadialScaler,
    /// Four flows per column; columns indexed by the bits of the horizontal half-cell.
    columns: Vec<[Flow; 4]>,
    pub solver: FlowSolver,
}

fn half_cell_center(x: &[f64], out: &mut [f64]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = if v < 0.5 { 0.25 } else { 0.75 };
    }
}

fn column_index(x: &[f64]) -> usize {
    let n = x.len();
    (0..n - 1).fold(0, |acc, i| acc | (((x[i] >= 0.5) as usize) << i))
}

fn boxes_overlap(a: &(Vec<f64>, Vec<f64>), b: &(Vec<f64>, Vec<f64>)) -> bool {
    a.0.iter().zip(&a.1).zip(b.0.iter().zip(&b.1)).all(|((alo, ahi), (blo, bhi))| alo < bhi && blo < ahi)
}

impl QuarterSwap {
    pub fn new(n: usize, solver: FlowSolver) -> Self {
        assert!((2..=MAX_DIM).contains(&n));
        let p = gauge_exponent(n, 0.025);
        let inner = TUBE_CELL * (n as f64).powf(1.0 / p);
        let shrink = RadialScaler::new(n, 0.25, inner, 0.9, p);
        let mut columns = Vec::new();
        for col in 0..1usize << (n - 1) {
            let mut c = [0.0; MAX_DIM];
            for i in 0..n - 1 {
                c[i] = if (col >> i) & 1 == 1 { 0.75 } else { 0.25 };
            }
            let top = n - 1;
            let mk = |axis: usize, shift: f64, a0: (f64, f64), vn: (f64, f64), axis_margin: (f64, f64)| {
                let mut lo = [0.0; MAX_DIM];
                let mut hi = [0.0; MAX_DIM];
                for i in 0..n - 1 {
                    lo[i] = c[i] - PLATEAU;
                    hi[i] = c[i] + PLATEAU;
                }
                lo[0] = c[0] + a0.0 - PLATEAU;
                hi[0] = c[0] + a0.1 + PLATEAU;
                lo[top] = vn.0 - PLATEAU;
                hi[top] = vn.1 + PLATEAU;
                Flow { axis, shift, lo, hi, axis_margin }
            };
            columns.push([
                mk(0, SIDESTEP, (0.0, SIDESTEP), (0.75, 0.75), SIDE_MARGIN),
                mk(top, -0.5, (SIDESTEP, SIDESTEP), (0.25, 0.75), (VERTICAL_MARGIN, VERTICAL_MARGIN)),
                mk(top, 0.5, (0.0, 0.0), (0.25, 0.75), (VERTICAL_MARGIN, VERTICAL_MARGIN)),
                mk(0, -SIDESTEP, (0.0, SIDESTEP), (0.25, 0.25), SIDE_MARGIN),
            ]);
        }
        let s = Self { n, shrink, columns, solver };
        s.check_margins().expect("quarter swap margins");
        s
    }

    /// Half-extent of a shrunken tube, in cube coordinates.
    pub fn blob_radius(&self) -> f64 {
        TUBE_CELL * self.shrink.factor / 4.0
    }

    /// Confirms that each flow's support misses the blob it must not move,
    /// stays inside its column, and keeps off the cube boundary.
    pub fn check_margins(&self) -> Result<(), String> {
        let n = self.n;
        let r = self.blob_radius();
        if r > PLATEAU {
            return Err(format!("blob radius {r} exceeds the plateau {PLATEAU}"));
        }
        for (ci, flows) in self.columns.iter().enumerate() {
            let mut c = vec![0.0; n];
            for i in 0..n - 1 {
                c[i] = if (ci >> i) & 1 == 1 { 0.75 } else { 0.25 };
            }
            let blob = |dx: f64, z: f64| {
                let mut lo = c.clone();
                let mut hi = c.clone();
                lo[0] += dx;
                hi[0] += dx;
                lo[n - 1] = z;
                hi[n - 1] = z;
                (lo.iter().map(|v| v - r).collect::<Vec<_>>(), hi.iter().map(|v| v + r).collect::<Vec<_>>())
            };
            // The blob that stays put while each flow runs.
            let idle = [blob(0.0, 0.25), blob(0.0, 0.25), blob(SIDESTEP, 0.25), blob(0.0, 0.75)];
            for (k, f) in flows.iter().enumerate() {
                let sup = f.support(n);
                if boxes_overlap(&sup, &idle[k]) {
                    return Err(format!("flow {k} of column {ci} touches the idle blob"));
                }
                for i in 0..n {
                    let (cell_lo, cell_hi) = if i == n - 1 { (0.0, 1.0) } else { (c[i] - 0.25, c[i] + 0.25) };
                    if sup.0[i] < cell_lo + WALL || sup.1[i] > cell_hi - WALL {
                        return Err(format!("flow {k} of column {ci} leaves its column on axis {i}"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Width of the boundary collar on which the map is exactly the identity.
    pub fn collar_width(&self) -> f64 {
        (1.0 - self.shrink.outer) / 4.0
    }

    fn shrink_step(&self, x: &mut [f64], forward: bool) {
        let n = self.n;
        let mut q = [0.0; MAX_DIM];
        half_cell_center(x, &mut q[..n]);
        let mut z = [0.0; MAX_DIM];
        for i in 0..n {
            z[i] = 4.0 * (x[i] - q[i]);
        }
        if self.shrink.apply(&mut z[..n], forward) {
            for i in 0..n {
                x[i] = q[i] + 0.25 * z[i];
            }
        }
    }

    pub fn apply(&self, x: &mut [f64], dir: Direction) -> Result<(), MapError> {
        debug_assert_eq!(x.len(), self.n);
        self.shrink_step(x, true);
        let flows = &self.columns[column_index(x)];
        match dir {
            Direction::Forward => {
                for f in flows.iter() {
                    f.apply(x, 1.0, self.solver)?;
                }
            }
            Direction::Inverse => {
                for f in flows.iter().rev() {
                    f.apply(x, -1.0, self.solver)?;
                }
            }
        }
        self.shrink_step(x, false);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn margins_hold_in_all_dimensions() {
        for n in 2..=4 {
            let s = QuarterSwap::new(n, FlowSolver::Transit);
            assert!(s.check_margins().is_ok());
            assert!(s.blob_radius() <= 0.0375 + 1e-15);
        }
    }

    #[test]
    fn centres_swap() {
        let s = QuarterSwap::new(2, FlowSolver::Transit);
        let mut x = [0.25, 0.75];
        s.apply(&mut x, Direction::Forward).unwrap();
        assert_eq!(x, [0.25, 0.25]);
        let mut x = [0.75, 0.25];
        s.apply(&mut x, Direction::Forward).unwrap();
        assert_eq!(x, [0.75, 0.75]);
        let mut x = [0.25, 0.25];
        s.apply(&mut x, Direction::Inverse).unwrap();
        assert_eq!(x, [0.25, 0.75]);
    }

    #[test]
    fn tube_translates_exactly() {
        let s = QuarterSwap::new(3, FlowSolver::Transit);
        let x0 = [0.25 + 0.149, 0.75 - 0.1, 0.75 - 0.149];
        let mut x = x0;
        s.apply(&mut x, Direction::Forward).unwrap();
        assert!((x[0] - x0[0]).abs() < 1e-15 && (x[1] - x0[1]).abs() < 1e-15);
        assert!((x[2] - (x0[2] - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn collar_points_fixed() {
        let s = QuarterSwap::new(2, FlowSolver::Transit);
        let w = s.collar_width();
        for &x0 in &[[w * 0.5, 0.3], [0.9, 1.0 - w * 0.9], [0.5, 0.5]] {
            let mut x = x0;
            s.apply(&mut x, Direction::Forward).unwrap();
            assert_eq!(x, x0);
        }
    }
}
