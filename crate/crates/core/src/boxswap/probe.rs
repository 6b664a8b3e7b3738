//! Finite-difference derivative probes.

use crate::map::{Direction, Homeo, MapError, MAX_DIM};
use crate::qmc::Sobol;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbeError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("difference matrix at {at:?} is singular")]
    Singular { at: Vec<f64> },
}

/// Axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Region {
    pub fn cube(n: usize) -> Self {
        Self { lo: vec![0.0; n], hi: vec![1.0; n] }
    }

    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        Self { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Maps a point of the unit cube into the box.
    pub fn place(&self, u: &[f64], out: &mut [f64]) {
        for i in 0..self.dim() {
            out[i] = self.lo[i] + u[i] * (self.hi[i] - self.lo[i]);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.lo).zip(&self.hi).all(|((v, l), h)| v >= l && v <= h)
    }
}

/// Central-difference Jacobian, row-major.
pub fn jacobian<M: Homeo + ?Sized>(map: &M, x: &[f64], h: f64, dir: Direction) -> Result<DMatrix<f64>, MapError> {
    let n = x.len();
    let mut j = DMatrix::zeros(n, n);
    let mut a = [0.0; MAX_DIM];
    let mut b = [0.0; MAX_DIM];
    for c in 0..n {
        a[..n].copy_from_slice(x);
        b[..n].copy_from_slice(x);
        a[c] += h;
        b[c] -= h;
        map.apply(&mut a[..n], dir)?;
        map.apply(&mut b[..n], dir)?;
        for r in 0..n {
            j[(r, c)] = (a[r] - b[r]) / (2.0 * h);
        }
    }
    Ok(j)
}

fn power_norm(a: &DMatrix<f64>) -> f64 {
    let ata = a.transpose() * a;
    let n = a.ncols();
    let mut v = nalgebra::DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..50 {
        let w = &ata * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        v = w / norm;
    }
    lambda.sqrt()
}

/// `(‖J‖, ‖J⁻¹‖)` in the spectral norm, by power iteration.
pub fn spectral_norms(j: &DMatrix<f64>) -> Option<(f64, f64)> {
    let inv = j.clone().try_inverse()?;
    Some((power_norm(j), power_norm(&inv)))
}

/// Suprema of `‖Dmap‖` and `‖(Dmap)⁻¹‖` over `samples` Sobol points of `region`.
pub fn operator_norm_probe<M: Homeo + ?Sized>(
    map: &M,
    region: &Region,
    samples: usize,
    h: f64,
) -> Result<(f64, f64), ProbeError> {
    let n = region.dim();
    let mut sob = Sobol::new(n);
    let pts: Vec<Vec<f64>> = sob
        .take_points(samples)
        .into_iter()
        .map(|u| {
            let mut x = vec![0.0; n];
            region.place(&u, &mut x);
            x
        })
        .collect();
    let norms: Vec<(f64, f64)> = pts
        .par_iter()
        .map(|x| {
            let j = jacobian(map, x, h, Direction::Forward)?;
            spectral_norms(&j).ok_or_else(|| ProbeError::Singular { at: x.clone() })
        })
        .collect::<Result<_, _>>()?;
    Ok(norms.iter().fold((0.0f64, 0.0f64), |(a, b), &(x, y)| (a.max(x), b.max(y))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{Affine, Identity};

    #[test]
    fn identity_norms() {
        let (a, b) = operator_norm_probe(&Identity(2), &Region::cube(2), 64, 1e-4).unwrap();
        assert!((a - 1.0).abs() < 1e-9 && (b - 1.0).abs() < 1e-9);
    }

    #[test]
    fn diagonal_norms() {
        let m = Affine::new(vec![2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], vec![0.0; 3]).unwrap();
        let (a, b) = operator_norm_probe(&m, &Region::cube(3), 64, 1e-4).unwrap();
        assert!((a - 2.0).abs() < 1e-9 && (b - 1.0).abs() < 1e-9);
    }

    #[test]
    fn singular_is_reported() {
        struct Flat;
        impl Homeo for Flat {
            fn dim(&self) -> usize {
                2
            }
            fn apply(&self, x: &mut [f64], _d: Direction) -> Result<(), MapError> {
                x[1] = x[0];
                Ok(())
            }
        }
        assert!(matches!(operator_norm_probe(&Flat, &Region::cube(2), 4, 1e-4), Err(ProbeError::Singular { .. })));
    }
}
