use flipforge::boxswap::{
    cube_center, operator_norm_probe, BoxExchange, FlowSolver, QuarterSwap, Region, DEFAULT_ODE_TOL,
};
use flipforge::map::{dist, Direction, Homeo};
use flipforge::qmc::Sobol;
use proptest::prelude::*;

const ALPHAS: [f64; 4] = [0.26, 0.3, 0.375, 0.45];

fn sobol(n: usize, count: usize) -> Vec<Vec<f64>> {
    Sobol::new(n).take_points(count)
}

#[test]
fn round_trip_on_sobol_points() {
    for &alpha in &ALPHAS {
        let f = BoxExchange::new(2, alpha, FlowSolver::Transit);
        let mut worst = 0.0f64;
        for p in sobol(2, 10_000) {
            let y = f.eval(&p, Direction::Forward).unwrap();
            worst = worst.max(dist(&f.eval(&y, Direction::Inverse).unwrap(), &p));
            let z = f.eval(&p, Direction::Inverse).unwrap();
            worst = worst.max(dist(&f.eval(&z, Direction::Forward).unwrap(), &p));
        }
        assert!(worst <= 1e-8, "alpha {alpha}: {worst:e}");
    }
}

#[test]
fn round_trip_in_three_and_four_dimensions() {
    for n in 3..=4 {
        let f = BoxExchange::new(n, 0.3, FlowSolver::Transit);
        for p in sobol(n, 2000) {
            let y = f.eval(&p, Direction::Forward).unwrap();
            let back = f.eval(&y, Direction::Inverse).unwrap();
            assert!(dist(&back, &p) <= 1e-8, "n {n} at {p:?}");
        }
    }
}

#[test]
fn collar_is_fixed_exactly() {
    for &alpha in &ALPHAS {
        let f = BoxExchange::new(2, alpha, FlowSolver::Transit);
        let w = f.collar_width();
        assert!(w > 0.0);
        for p in sobol(2, 4000) {
            // Push the sample into the collar along one face.
            let face = (p[0] * 4.0) as usize % 4;
            let depth = p[1] * w * 0.999;
            let x = match face {
                0 => [depth, p[1]],
                1 => [1.0 - depth, p[1]],
                2 => [p[0], depth],
                _ => [p[0], 1.0 - depth],
            };
            for dir in [Direction::Forward, Direction::Inverse] {
                assert_eq!(f.eval(&x, dir).unwrap(), x.to_vec(), "alpha {alpha} at {x:?}");
            }
        }
    }
}

#[test]
fn centres_are_exchanged() {
    for n in 2..=4 {
        for &alpha in &ALPHAS {
            let f = BoxExchange::new(n, alpha, FlowSolver::Transit);
            let half = 1 << (n - 1);
            for j in 1..=half {
                let mut top = vec![0.0; n];
                let mut bottom = vec![0.0; n];
                cube_center(n, j, &mut top);
                cube_center(n, j + half, &mut bottom);
                assert!(dist(&f.eval(&top, Direction::Forward).unwrap(), &bottom) <= 1e-9);
                assert!(dist(&f.eval(&bottom, Direction::Forward).unwrap(), &top) <= 1e-9);
            }
        }
    }
}

#[test]
fn tubes_translate_rigidly() {
    for &alpha in &ALPHAS {
        let f = BoxExchange::new(2, alpha, FlowSolver::Transit);
        let r = f.tube_radius();
        for p in sobol(2, 500) {
            for (cx, cy, shift) in [(0.25, 0.75, -0.5), (0.75, 0.25, 0.5)] {
                let x = [cx + r * (2.0 * p[0] - 1.0), cy + r * (2.0 * p[1] - 1.0)];
                let y = f.eval(&x, Direction::Forward).unwrap();
                assert!((y[0] - x[0]).abs() < 1e-12 && (y[1] - x[1] - shift).abs() < 1e-12, "alpha {alpha} at {x:?}");
            }
        }
    }
}

#[test]
fn transit_solver_agrees_with_runge_kutta() {
    let exact = QuarterSwap::new(2, FlowSolver::Transit);
    let rk = QuarterSwap::new(2, FlowSolver::RungeKutta { tol: 1e-12 });
    let mut worst = 0.0f64;
    for p in sobol(2, 3000) {
        let mut a = p.clone();
        let mut b = p.clone();
        exact.apply(&mut a, Direction::Forward).unwrap();
        rk.apply(&mut b, Direction::Forward).unwrap();
        worst = worst.max(dist(&a, &b));
    }
    assert!(worst < 1e-7, "{worst:e}");
    let coarse = BoxExchange::new(2, 0.3, FlowSolver::RungeKutta { tol: DEFAULT_ODE_TOL });
    let y = coarse.eval(&[0.25, 0.75], Direction::Forward).unwrap();
    assert!(dist(&y, &[0.25, 0.25]) < 1e-12);
}

#[test]
fn derivative_scale_tracks_gap() {
    let mut scaled = Vec::new();
    for &alpha in &ALPHAS {
        let f = BoxExchange::new(2, alpha, FlowSolver::Transit);
        let (a, b) = operator_norm_probe(&f, &Region::cube(2), 2048, 1e-6).unwrap();
        assert!(a >= 1.0 && b >= 1.0);
        scaled.push((a + b) * f.beta());
    }
    let hi = scaled.iter().cloned().fold(0.0, f64::max);
    let lo = scaled.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(hi / lo < 4.0, "{scaled:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn round_trip_anywhere(n in 2usize..=4, alpha in 0.2f64..0.49, seed in prop::collection::vec(0.0f64..1.0, 4)) {
        let f = BoxExchange::new(n, alpha, FlowSolver::Transit);
        let x = &seed[..n];
        let y = f.eval(x, Direction::Forward).unwrap();
        prop_assert!(y.iter().all(|v| (0.0..=1.0).contains(v)));
        let back = f.eval(&y, Direction::Inverse).unwrap();
        prop_assert!(dist(&back, x) <= 1e-8);
    }

    #[test]
    fn small_ratios_share_the_quarter_map(alpha in 0.01f64..0.25, x in 0.0f64..1.0, y in 0.0f64..1.0) {
        let a = BoxExchange::new(2, alpha, FlowSolver::Transit);
        let b = BoxExchange::new(2, 0.25, FlowSolver::Transit);
        prop_assert_eq!(a.eval(&[x, y], Direction::Forward).unwrap(), b.eval(&[x, y], Direction::Forward).unwrap());
    }
}
