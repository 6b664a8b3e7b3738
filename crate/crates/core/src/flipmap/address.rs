//! Addresses of the nested cubes and point location.

use crate::boxswap::cube_center;
use crate::map::MAX_DIM;
use crate::sequences::ScaleSequence;
use serde::{Deserialize, Serialize};

/// Path of digits `1..=2^n` from the unit cube down to one cube of the construction.
/// Digit `j ≤ 2^{n-1}` is a top-layer child; `j + 2^{n-1}` sits right below `j`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CubeAddress {
    pub n: usize,
    pub digits: Vec<usize>,
}

/// Axis-aligned cube `origin + [0, edge]^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeFrame {
    pub origin: Vec<f64>,
    pub edge: f64,
}

impl CubeFrame {
    pub fn unit(n: usize) -> Self {
        Self { origin: vec![0.0; n], edge: 1.0 }
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    pub fn to_local(&self, x: &[f64], u: &mut [f64]) {
        for i in 0..x.len() {
            u[i] = (x[i] - self.origin[i]) / self.edge;
        }
    }

    pub fn to_global(&self, u: &[f64], x: &mut [f64]) {
        for i in 0..u.len() {
            x[i] = self.origin[i] + self.edge * u[i];
        }
    }

    pub fn center(&self) -> Vec<f64> {
        self.origin.iter().map(|o| o + 0.5 * self.edge).collect()
    }

    /// Closed containment.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.origin).all(|(&v, &o)| v >= o && v <= o + self.edge)
    }

    /// Euclidean distance from `x` to the cube.
    pub fn distance(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.origin)
            .map(|(&v, &o)| {
                let d = (o - v).max(v - (o + self.edge)).max(0.0);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Frame of child `digit` with edge `child_edge`.
    pub fn child(&self, digit: usize, child_edge: f64) -> Self {
        let n = self.dim();
        let mut c = [0.0; MAX_DIM];
        cube_center(n, digit, &mut c[..n]);
        let origin = (0..n).map(|i| self.origin[i] + self.edge * c[i] - 0.5 * child_edge).collect();
        Self { origin, edge: child_edge }
    }

    /// Digit of the child whose quadrant holds `x`.
    pub fn quadrant(&self, x: &[f64]) -> usize {
        let n = self.dim();
        let mid = |i: usize| self.origin[i] + 0.5 * self.edge;
        let bits = (0..n - 1).fold(0, |acc, i| acc | (((x[i] >= mid(i)) as usize) << i));
        if x[n - 1] >= mid(n - 1) {
            bits + 1
        } else {
            bits + 1 + (1 << (n - 1))
        }
    }
}

impl CubeAddress {
    pub fn root(n: usize) -> Self {
        Self { n, digits: Vec::new() }
    }

    pub fn generation(&self) -> usize {
        self.digits.len()
    }

    /// Frame of the addressed cube; needs `seq` at least as deep as the address.
    pub fn frame(&self, seq: &ScaleSequence) -> CubeFrame {
        let mut f = CubeFrame::unit(self.n);
        for (k, &d) in self.digits.iter().enumerate() {
            f = f.child(d, seq.alpha(k + 1));
        }
        f
    }

    pub fn center(&self, seq: &ScaleSequence) -> Vec<f64> {
        self.frame(seq).center()
    }

    /// Address of the `index`-th cube of its generation, digits read base `2^n`
    /// with the first digit most significant.
    pub fn from_index(n: usize, generation: usize, mut index: u64) -> Self {
        let base = 1u64 << n;
        let mut digits = vec![0; generation];
        for d in digits.iter_mut().rev() {
            *d = (index % base) as usize + 1;
            index /= base;
        }
        Self { n, digits }
    }
}

/// Where a point sits relative to the cubes down to a given depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    /// Inside a cube of the requested depth.
    Inside,
    /// Outside every child of the deepest containing cube, within the
    /// closed tube of width `β/10` around child `digit`.
    Tube { digit: usize },
    Gap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub address: CubeAddress,
    pub status: Status,
}

/// Deepest cube of generation `≤ depth` containing `x`.
pub fn locate(seq: &ScaleSequence, n: usize, x: &[f64], depth: usize) -> Location {
    assert!(depth <= seq.depth(), "depth {depth} beyond the sequence");
    let mut address = CubeAddress::root(n);
    let mut frame = CubeFrame::unit(n);
    for k in 0..depth {
        let digit = frame.quadrant(x);
        let child = frame.child(digit, seq.alpha(k + 1));
        if child.contains(x) {
            address.digits.push(digit);
            frame = child;
            continue;
        }
        let d = child.distance(x);
        let status = if d > 0.0 && d <= seq.beta(k + 1) / 10.0 { Status::Tube { digit } } else { Status::Gap };
        return Location { address, status };
    }
    Location { address, status: Status::Inside }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modulus::Modulus;
    use crate::sequences::build_scales;

    fn sqrt_seq(k: usize) -> ScaleSequence {
        build_scales(&Modulus::power(0.5).unwrap(), 1.0, k).unwrap()
    }

    #[test]
    fn first_generation_spans() {
        let seq = sqrt_seq(4);
        let f = CubeAddress { n: 2, digits: vec![3] }.frame(&seq);
        assert!((f.origin[0] - 1.0 / 16.0).abs() < 1e-12 && (f.origin[0] + f.edge - 7.0 / 16.0).abs() < 1e-12);
    }

    #[test]
    fn centre_of_cube_is_gap() {
        let seq = sqrt_seq(4);
        let loc = locate(&seq, 2, &[0.5, 0.5], 3);
        assert_eq!(loc.address.generation(), 0);
        assert_eq!(loc.status, Status::Gap);
        let loc = locate(&seq, 3, &[0.25, 0.25, 0.25], 2);
        assert_eq!(loc.address.generation(), 1);
        assert_eq!(loc.status, Status::Gap);
        let loc = locate(&seq, 2, &[0.0, 0.3], 3);
        assert_eq!((loc.address.generation(), loc.status), (0, Status::Gap));
    }

    #[test]
    fn quadrant_digits() {
        let f = CubeFrame::unit(2);
        assert_eq!(f.quadrant(&[0.1, 0.9]), 1);
        assert_eq!(f.quadrant(&[0.9, 0.9]), 2);
        assert_eq!(f.quadrant(&[0.1, 0.1]), 3);
        assert_eq!(f.quadrant(&[0.9, 0.1]), 4);
    }

    #[test]
    fn centres_locate_to_their_address() {
        let seq = sqrt_seq(6);
        for idx in [0u64, 5, 17, 255, 4095] {
            let a = CubeAddress::from_index(2, 6, idx);
            let loc = locate(&seq, 2, &a.center(&seq), 6);
            assert_eq!(loc.address, a);
            assert_eq!(loc.status, Status::Inside);
        }
    }

    #[test]
    fn tube_detection() {
        let seq = sqrt_seq(3);
        let f = CubeAddress { n: 2, digits: vec![1] }.frame(&seq);
        let b = seq.beta(1);
        let x = [f.origin[0] - 0.05 * b, f.center()[1]];
        assert_eq!(locate(&seq, 2, &x, 2).status, Status::Tube { digit: 1 });
        let x = [f.origin[0] - 0.5 * b, f.center()[1]];
        assert_eq!(locate(&seq, 2, &x, 2).status, Status::Gap);
    }
}
