//! Gauss–Legendre nodes.

use std::sync::OnceLock;

/// 16-point Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre() -> &'static ([f64; 16], [f64; 16]) {
    static GL: OnceLock<([f64; 16], [f64; 16])> = OnceLock::new();
    GL.get_or_init(|| {
        const N: usize = 16;
        // Legendre P_N and its derivative at z.
        let legendre = |z: f64| {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=N {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            (p1, N as f64 * (z * p1 - p0) / (z * z - 1.0))
        };
        let mut x = [0.0; N];
        let mut w = [0.0; N];
        for i in 0..N {
            let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (N as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre(z);
                let dz = p / dp;
                z -= dz;
                if dz.abs() < 1e-15 {
                    break;
                }
            }
            let (_, dp) = legendre(z);
            x[i] = z;
            w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        }
        (x, w)
    })
}

/// `∫_a^b f` by one 16-point rule.
pub fn gl16<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let (x, w) = gauss_legendre();
    let (m, h) = (0.5 * (a + b), 0.5 * (b - a));
    let mut s = 0.0;
    for i in 0..16 {
        s += w[i] * f(m + h * x[i]);
    }
    s * h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre();
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        assert!(x.iter().zip(w).map(|(x, w)| w * x.powi(30)).sum::<f64>() - 2.0 / 31.0 < 1e-14);
        assert!((gl16(|t| t.powi(5), 0.0, 2.0) - 64.0 / 6.0).abs() < 1e-12);
    }
}
