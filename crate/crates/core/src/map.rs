//! Invertible maps of the cube evaluated in place.

use crate::ode::OdeError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Inverse,
}

impl Direction {
    pub fn flip(self) -> Self {
        match self {
            Self::Forward => Self::Inverse,
            Self::Inverse => Self::Forward,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("flow integration failed at {at:?}: {source}")]
    Integration { at: Vec<f64>, source: OdeError },
    #[error("point {at:?} lies outside the map's domain")]
    Domain { at: Vec<f64> },
    #[error("inverse solve did not converge at {at:?}")]
    Inverse { at: Vec<f64> },
}

/// A homeomorphism of a region of `R^n` with both directions available.
pub trait Homeo: Sync {
    fn dim(&self) -> usize;

    /// Maps `x` in place.
    fn apply(&self, x: &mut [f64], dir: Direction) -> Result<(), MapError>;

    fn eval(&self, x: &[f64], dir: Direction) -> Result<Vec<f64>, MapError> {
        let mut y = x.to_vec();
        self.apply(&mut y, dir)?;
        Ok(y)
    }
}

impl<T: Homeo + ?Sized> Homeo for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply(&self, x: &mut [f64], dir: Direction) -> Result<(), MapError> {
        (**self).apply(x, dir)
    }
}

/// `x ↦ A x + b` with a cached inverse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub n: usize,
    /// Row-major `n × n`.
    pub matrix: Vec<f64>,
    pub offset: Vec<f64>,
    inverse: Vec<f64>,
}

impl Affine {
    pub fn new(matrix: Vec<f64>, offset: Vec<f64>) -> Option<Self> {
        let n = offset.len();
        assert_eq!(matrix.len(), n * n);
        let m = nalgebra::DMatrix::from_row_slice(n, n, &matrix);
        let inv = m.try_inverse()?;
        let inverse = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| inv[(i, j)]).collect();
        Some(Self { n, matrix, offset, inverse })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            m[i * n + i] = 1.0;
        }
        Self::new(m, vec![0.0; n]).unwrap()
    }

    pub fn det(&self) -> f64 {
        nalgebra::DMatrix::from_row_slice(self.n, self.n, &self.matrix).determinant()
    }

    /// `A v` without the offset.
    pub fn linear(&self, v: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            out[i] = (0..self.n).map(|j| self.matrix[i * self.n + j] * v[j]).sum();
        }
    }

    pub fn linear_inverse(&self, v: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            out[i] = (0..self.n).map(|j| self.inverse[i * self.n + j] * v[j]).sum();
        }
    }
}

impl Homeo for Affine {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &mut [f64], dir: Direction) -> Result<(), MapError> {
        let n = self.n;
        let mut out = [0.0; MAX_DIM];
        match dir {
            Direction::Forward => {
                self.linear(x, &mut out[..n]);
                for i in 0..n {
                    x[i] = out[i] + self.offset[i];
                }
            }
            Direction::Inverse => {
                let mut d = [0.0; MAX_DIM];
                for i in 0..n {
                    d[i] = x[i] - self.offset[i];
                }
                self.linear_inverse(&d[..n], &mut out[..n]);
                x.copy_from_slice(&out[..n]);
            }
        }
        Ok(())
    }
}

/// The identity of `R^n`.
#[derive(Debug, Clone, Copy)]
pub struct Identity(pub usize);

impl Homeo for Identity {
    fn dim(&self) -> usize {
        self.0
    }
    fn apply(&self, _x: &mut [f64], _dir: Direction) -> Result<(), MapError> {
        Ok(())
    }
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
