use flipforge::boxswap::FlowSolver;
use flipforge::flipmap::{cantor_stats, locate, membership, CubeAddress, FlipHomeo, Status};
use flipforge::map::{dist, Direction, Homeo};
use flipforge::modulus::{build_psi, Modulus};
use flipforge::sequences::{build_scales, scales_for};
use proptest::prelude::*;
use std::sync::OnceLock;

fn sqrt_flip(n: usize) -> &'static FlipHomeo {
    static F: [OnceLock<FlipHomeo>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    F[n - 2].get_or_init(|| {
        let seq = build_scales(&Modulus::power(0.5).unwrap(), 1.0, 10).unwrap();
        FlipHomeo::new(seq, n, 8, FlowSolver::Transit)
    })
}

#[test]
fn centres_reflect_exactly() {
    for n in 2..=4 {
        let f = sqrt_flip(n);
        for idx in [0u64, 1, 7, 100, 999] {
            let c = CubeAddress::from_index(n, 3, idx % (1 << (3 * n))).center(&f.seq);
            let y = f.eval_depth(&c, 3, Direction::Forward).unwrap();
            let mut r = c.clone();
            r[n - 1] = 1.0 - r[n - 1];
            assert!(dist(&y, &r) < 1e-12, "n = {n}: {c:?} → {y:?}");
        }
    }
}

#[test]
fn depth_k_cubes_map_onto_their_mirrors() {
    let f = sqrt_flip(2);
    let seq = &f.seq;
    for idx in 0..16u64 {
        let a = CubeAddress::from_index(2, 2, idx);
        let frame = a.frame(seq);
        // Translation inside the cube: every point moves by the centre's displacement.
        let c = frame.center();
        let shift: Vec<f64> = f.eval_depth(&c, 2, Direction::Forward).unwrap().iter().zip(&c).map(|(y, x)| y - x).collect();
        for u in [[0.1, 0.2], [0.9, 0.5], [0.0, 1.0]] {
            let mut x = vec![0.0; 2];
            frame.to_global(&u, &mut x);
            let y = f.eval_depth(&x, 2, Direction::Forward).unwrap();
            for i in 0..2 {
                assert!((y[i] - x[i] - shift[i]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn limit_evaluation_meets_its_tolerance() {
    let f = sqrt_flip(2);
    let x = [0.31, 0.77];
    let (y, bound) = f.eval_limit(&x, 0.01, Direction::Forward).unwrap();
    assert!(bound <= 0.01);
    let deep = f.eval(&x, Direction::Forward).unwrap();
    assert!(dist(&y, &deep) <= bound);
    assert!(f.eval_limit(&x, 1e-9, Direction::Forward).is_err());
}

#[test]
fn truncation_agrees_with_depth_evaluation() {
    let f = sqrt_flip(3);
    let g = f.truncate(4);
    for x in [[0.2, 0.3, 0.9], [0.7, 0.1, 0.4], [0.5, 0.5, 0.5]] {
        assert_eq!(g.eval(&x, Direction::Forward).unwrap(), f.eval_depth(&x, 4, Direction::Forward).unwrap());
        assert_eq!(f.at_depth(4).eval(&x, Direction::Inverse).unwrap(), f.eval_depth(&x, 4, Direction::Inverse).unwrap());
    }
}

#[test]
fn membership_matches_cube_volume() {
    let f = sqrt_flip(3);
    for depth in [2, 5] {
        let (v, limit) = cantor_stats(&f.seq, 3, depth);
        let m = membership(&f.seq, 3, depth, 60_000, 9);
        assert!((m.fraction - v).abs() <= 4.0 * m.stderr, "depth {depth}: {m:?} against {v}");
        assert!(v > limit);
    }
}

#[test]
fn locate_finds_gaps_and_tubes() {
    let f = sqrt_flip(2);
    let seq = &f.seq;
    // Centre of the cube is a gap between the four children.
    assert_eq!(locate(seq, 2, &[0.5, 0.5], 3).status, Status::Gap);
    // Digits count from 1; child 1 is the upper-left cube.
    let child = CubeAddress { n: 2, digits: vec![1] }.frame(seq);
    let just_outside = [child.origin[0] + child.edge + seq.beta(1) / 20.0, child.origin[1] + 0.5 * child.edge];
    assert!(matches!(locate(seq, 2, &just_outside, 3).status, Status::Tube { digit: 1 }));
    let deep = CubeAddress::from_index(2, 6, 1234).center(seq);
    let loc = locate(seq, 2, &deep, 6);
    assert_eq!(loc.status, Status::Inside);
    assert_eq!(loc.address, CubeAddress::from_index(2, 6, 1234));
}

#[test]
fn psi_flip_is_a_homeomorphism() {
    let psi = build_psi(&Modulus::power(0.5).unwrap(), 48).unwrap().modulus;
    let f = FlipHomeo::new(scales_for(&psi, 6).unwrap(), 2, 6, FlowSolver::Transit);
    for x in [[0.13, 0.82], [0.5, 0.01], [0.66, 0.66]] {
        let y = f.eval(&x, Direction::Forward).unwrap();
        assert!(dist(&f.eval(&y, Direction::Inverse).unwrap(), &x) < 1e-9);
    }
}

#[test]
fn flip_serializes() {
    let f = sqrt_flip(2).truncate(3);
    let back: FlipHomeo = serde_json::from_str(&serde_json::to_string(&f).unwrap()).unwrap();
    assert_eq!(back, f);
    let x = [0.4, 0.35];
    assert_eq!(back.eval(&x, Direction::Forward).unwrap(), f.eval(&x, Direction::Forward).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn round_trip(n in 2usize..=4, depth in 0usize..=8, seed in prop::collection::vec(0.0f64..=1.0, 4)) {
        let f = sqrt_flip(n);
        let x = &seed[..n];
        let y = f.eval_depth(x, depth, Direction::Forward).unwrap();
        prop_assert!(y.iter().all(|v| (0.0..=1.0).contains(v)));
        let back = f.eval_depth(&y, depth, Direction::Inverse).unwrap();
        prop_assert!(dist(&back, x) < 1e-9, "{:?} → {:?} → {:?}", x, y, back);
    }

    #[test]
    fn boundary_is_fixed(n in 2usize..=4, face in 0usize..8, seed in prop::collection::vec(0.0f64..=1.0, 4)) {
        let f = sqrt_flip(n);
        let mut x = seed[..n].to_vec();
        x[face % n] = if face < 4 { 0.0 } else { 1.0 };
        prop_assert_eq!(f.eval(&x, Direction::Forward).unwrap(), x);
    }

    #[test]
    fn successive_depths_stay_within_the_bound(depth in 0usize..8, x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
        let f = sqrt_flip(2);
        let p = [x, y];
        let a = f.eval_depth(&p, depth, Direction::Forward).unwrap();
        let b = f.eval_depth(&p, depth + 1, Direction::Forward).unwrap();
        prop_assert!(dist(&a, &b) <= f.error_bound(depth));
    }

    #[test]
    fn points_outside_deeper_cubes_settle(depth in 1usize..7, x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
        let f = sqrt_flip(2);
        let p = [x, y];
        // Layers deeper than the first cube that misses p leave it alone.
        let loc = locate(&f.seq, 2, &p, depth);
        prop_assume!(loc.status == Status::Gap);
        let k = loc.address.generation() + 1;
        prop_assert_eq!(f.eval_depth(&p, k, Direction::Forward).unwrap(), f.eval_depth(&p, 8, Direction::Forward).unwrap());
    }
}
