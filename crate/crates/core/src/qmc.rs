//! Sobol points and seed splitting.
//!
//! Direction numbers are the first eight dimensions of the Joe–Kuo
//! (2008) table. An optional digital shift derived from a seed decorrelates
//! independent point sets while keeping the net structure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BITS: usize = 32;
/// `(s, a, m_1..m_s)` for dimensions 2..=8.
const JOE_KUO: [(u32, u32, &[u32]); 7] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
];
pub const MAX_SOBOL_DIM: usize = 8;

#[derive(Debug, Clone)]
pub struct Sobol {
    dim: usize,
    v: Vec<[u32; BITS]>,
    state: Vec<u32>,
    shift: Vec<u32>,
    index: u64,
}

impl Sobol {
    /// Unshifted sequence; the all-zero first point is skipped.
    pub fn new(dim: usize) -> Self {
        assert!((1..=MAX_SOBOL_DIM).contains(&dim));
        let mut v = vec![[0u32; BITS]; dim];
        for k in 0..BITS {
            v[0][k] = 1 << (BITS - 1 - k);
        }
        for d in 1..dim {
            let (s, a, m) = JOE_KUO[d - 1];
            let s = s as usize;
            for k in 0..s.min(BITS) {
                v[d][k] = m[k] << (BITS - 1 - k);
            }
            for k in s..BITS {
                let mut x = v[d][k - s] ^ (v[d][k - s] >> s);
                for j in 1..s {
                    if (a >> (s - 1 - j)) & 1 == 1 {
                        x ^= v[d][k - j];
                    }
                }
                v[d][k] = x;
            }
        }
        let mut s = Self { dim, v, state: vec![0; dim], shift: vec![0; dim], index: 0 };
        s.advance();
        s
    }

    /// Sequence with a random digital shift drawn from `seed`; starts at index 0.
    pub fn shifted(dim: usize, seed: u64) -> Self {
        let mut s = Self::new(dim);
        s.state.fill(0);
        s.index = 0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        s.shift = (0..dim).map(|_| rng.gen()).collect();
        s
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn advance(&mut self) {
        let c = (!self.index).trailing_zeros() as usize;
        for d in 0..self.dim {
            self.state[d] ^= self.v[d][c.min(BITS - 1)];
        }
        self.index += 1;
    }

    /// Writes the next point of `[0,1)^dim` into `out`.
    pub fn next_into(&mut self, out: &mut [f64]) {
        for d in 0..self.dim {
            // Centre of the 2^-32 cell keeps points off the cube faces.
            out[d] = ((self.state[d] ^ self.shift[d]) as f64 + 0.5) / 4294967296.0;
        }
        self.advance();
    }

    pub fn take_points(&mut self, count: usize) -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| {
                let mut p = vec![0.0; self.dim];
                self.next_into(&mut p);
                p
            })
            .collect()
    }
}

/// Independent generator for task `stream` under a master seed.
pub fn task_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_points_match_reference() {
        let mut s = Sobol::new(2);
        let pts = s.take_points(4);
        let r = |x: f64| (x * 8.0).floor() / 8.0;
        let got: Vec<(f64, f64)> = pts.iter().map(|p| (r(p[0]), r(p[1]))).collect();
        assert_eq!(got, vec![(0.5, 0.5), (0.75, 0.25), (0.25, 0.75), (0.375, 0.375)]);
    }

    #[test]
    fn stratified_in_every_dimension() {
        let mut s = Sobol::shifted(MAX_SOBOL_DIM, 7);
        let pts = s.take_points(256);
        for d in 0..MAX_SOBOL_DIM {
            let mut bins = [0; 16];
            for p in &pts {
                bins[(p[d] * 16.0) as usize] += 1;
            }
            assert!(bins.iter().all(|&b| b == 16), "dim {d}: {bins:?}");
        }
    }

    #[test]
    fn two_dimensional_nets() {
        let mut s = Sobol::shifted(3, 0);
        let pts = s.take_points(64);
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            let mut bins = [0; 64];
            for p in &pts {
                bins[(p[a] * 8.0) as usize * 8 + (p[b] * 8.0) as usize] += 1;
            }
            assert!(bins.iter().all(|&c| c == 1), "pair ({a},{b})");
        }
    }

    #[test]
    fn streams_differ_but_repeat() {
        let a: u64 = task_rng(1, 0).gen();
        let b: u64 = task_rng(1, 1).gen();
        assert_ne!(a, b);
        assert_eq!(a, task_rng(1, 0).gen::<u64>());
    }
}
