//! Dormand–Prince 5(4) with adaptive steps for small autonomous systems.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("step budget exhausted at t = {t}")]
    Budget { t: f64 },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
}

const MAX_DIM: usize = 4;
const MAX_STEPS: usize = 200_000;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Fifth minus fourth order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrates `x' = f(x)` from 0 to `t_end` in place with mixed
/// absolute/relative error tolerance `tol` per step. Returns the step count.
pub fn integrate<F>(f: F, x: &mut [f64], t_end: f64, tol: f64) -> Result<usize, OdeError>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = x.len();
    assert!(n <= MAX_DIM);
    let mut k = [[0.0; MAX_DIM]; 7];
    let mut y = [0.0; MAX_DIM];
    let mut tmp = [0.0; MAX_DIM];
    let mut t = 0.0;
    let mut h = (t_end * 0.05).max(1e-6).min(t_end);
    f(x, &mut k[0][..n]);
    let mut steps = 0;
    while t < t_end {
        steps += 1;
        if steps > MAX_STEPS {
            return Err(OdeError::Budget { t });
        }
        if t + h > t_end {
            h = t_end - t;
        }
        macro_rules! stage {
            ($dst:expr, $($a:expr => $j:expr),+) => {{
                for i in 0..n {
                    tmp[i] = x[i] + h * (0.0 $(+ $a * k[$j][i])+);
                }
                let mut out = [0.0; MAX_DIM];
                f(&tmp[..n], &mut out[..n]);
                k[$dst] = out;
            }};
        }
        stage!(1, A21 => 0);
        stage!(2, A31 => 0, A32 => 1);
        stage!(3, A41 => 0, A42 => 1, A43 => 2);
        stage!(4, A51 => 0, A52 => 1, A53 => 2, A54 => 3);
        stage!(5, A61 => 0, A62 => 1, A63 => 2, A64 => 3, A65 => 4);
        for i in 0..n {
            y[i] = x[i] + h * (B1 * k[0][i] + B3 * k[2][i] + B4 * k[3][i] + B5 * k[4][i] + B6 * k[5][i]);
        }
        let mut last = [0.0; MAX_DIM];
        f(&y[..n], &mut last[..n]);
        k[6] = last;
        let mut err = 0.0f64;
        for i in 0..n {
            let e = h
                * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
            let sc = tol * (1.0 + x[i].abs().max(y[i].abs()));
            err = err.max((e / sc).abs());
        }
        if !err.is_finite() || y[..n].iter().any(|v| !v.is_finite()) {
            return Err(OdeError::NonFinite { t });
        }
        if err <= 1.0 {
            t += h;
            x.copy_from_slice(&y[..n]);
            k[0] = k[6];
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
        if h < 1e-14 * t_end.max(1.0) && t < t_end {
            return Err(OdeError::StepUnderflow { t });
        }
    }
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_growth() {
        let mut x = [1.0];
        integrate(|x, d| d[0] = x[0], &mut x, 1.0, 1e-12).unwrap();
        assert!((x[0] - std::f64::consts::E).abs() < 1e-10);
    }

    #[test]
    fn rotation_preserves_radius() {
        let mut x = [1.0, 0.0];
        integrate(|x, d| {
            d[0] = -x[1];
            d[1] = x[0];
        }, &mut x, std::f64::consts::PI, 1e-12)
        .unwrap();
        assert!((x[0] + 1.0).abs() < 1e-9 && x[1].abs() < 1e-9);
    }

    #[test]
    fn zero_field_is_fixed() {
        let mut x = [0.3, 0.7];
        integrate(|_, d| d.fill(0.0), &mut x, 1.0, 1e-10).unwrap();
        assert_eq!(x, [0.3, 0.7]);
    }
}
