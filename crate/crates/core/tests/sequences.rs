use flipforge::modulus::Modulus;
use flipforge::sequences::{build_scales, capacity_function, scales_for, solve_capacity, verify_scales, SequenceError};
use proptest::prelude::*;

/// For `t^β`: `h(u) = u + u^{1/β}/(1 − β)`.
fn power_capacity(beta: f64, u: f64) -> f64 {
    u + u.powf(1.0 / beta) / (1.0 - beta)
}

/// For `t^β`: `I_k = ∫₀^{φ⁻¹(2^{-(N+k)})} ds/φ = 2^{-(N+k)(1−β)/β}/(1 − β)`.
fn power_tail(beta: f64, capacity: f64, k: usize) -> f64 {
    2f64.powf(-(capacity + k as f64) * (1.0 - beta) / beta) / (1.0 - beta)
}

#[test]
fn square_root_closed_forms() {
    let seq = scales_for(&Modulus::power(0.5).unwrap(), 30).unwrap();
    for k in 1..=30 {
        let a = 0.5f64.powi(k as i32 + 1) * (1.0 + 0.5f64.powi(k as i32));
        assert!((seq.alpha(k) / a - 1.0).abs() < 1e-10, "α_{k}");
        assert!((seq.lambda(k) / (2f64.powi(k as i32 + 2) * (1.0 + 2f64.powi(1 - k as i32))) - 1.0).abs() < 1e-10);
    }
    assert_eq!(seq.two_sided_from, Some(1));
}

#[test]
fn standard_moduli_certify_to_depth_40() {
    for spec in ["power:0.5", "power:0.75", "tlog2"] {
        let m = Modulus::parse(spec).unwrap();
        let seq = scales_for(&m, 40).unwrap();
        let cert = verify_scales(&seq, &m);
        assert!(cert.all_pass(), "{spec}: {:?}", cert.failures().collect::<Vec<_>>());
        assert_eq!(cert.depth, 40);
        assert!(cert.ratio_constant >= 1.0);
    }
}

#[test]
fn wrong_capacity_fails_the_certificate() {
    let m = Modulus::power(0.5).unwrap();
    // Too small a capacity leaves α_k above the dyadic level.
    match build_scales(&m, 0.9, 12) {
        Ok(seq) => assert!(!verify_scales(&seq, &m).all_pass()),
        Err(e) => assert!(matches!(e, SequenceError::Inconsistent(_) | SequenceError::Uncertified { .. }), "{e}"),
    }
}

#[test]
fn tlog2_capacity_solves_its_equation() {
    let m = Modulus::Tlog2;
    let n = solve_capacity(&m, 1e-11).unwrap();
    let h = capacity_function(&m, 2f64.powf(-n)).unwrap();
    assert!((h - 1.0).abs() < 1e-9, "h = {h}");
}

#[test]
fn sequence_serializes() {
    let seq = scales_for(&Modulus::Tlog2, 10).unwrap();
    let back = serde_json::from_str(&serde_json::to_string(&seq).unwrap()).unwrap();
    assert_eq!(seq, back);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn power_capacity_matches_closed_form(beta in 0.2f64..0.9) {
        let m = Modulus::power(beta).unwrap();
        let n = solve_capacity(&m, 1e-11).unwrap();
        prop_assert!((power_capacity(beta, 2f64.powf(-n)) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn power_sequences_satisfy_the_lemmas(beta in 0.3f64..0.8) {
        let m = Modulus::power(beta).unwrap();
        let seq = scales_for(&m, 16).unwrap();
        let cert = verify_scales(&seq, &m);
        prop_assert!(cert.all_pass(), "{:?}", cert.failures().collect::<Vec<_>>());
        for k in 1..=16 {
            prop_assert!(seq.alpha(k) < 0.5 * seq.alpha(k - 1));
            // The gap around a child; the subtraction cancels, so compare on the parent scale.
            let gap = seq.alpha(k - 1) - 2.0 * seq.alpha(k);
            prop_assert!((4.0 * seq.beta(k) - gap).abs() < 1e-12 * seq.alpha(k - 1));
            prop_assert!((seq.lambda(k) * seq.beta(k) / seq.alpha(k - 1) - 1.0).abs() < 1e-12);
            let (lo, hi) = seq.alpha_bounds[k];
            prop_assert!(lo <= seq.alpha(k) && seq.alpha(k) <= hi);
        }
        if let Some(start) = seq.two_sided_from {
            for k in start..=16 {
                prop_assert!(seq.level(k) < seq.alpha(k) && seq.alpha(k) < 2.0 * seq.level(k));
            }
        }
    }

    // Near β = 1 the two-sided bounds start late; two_sided_from tracks the closed form.
    #[test]
    fn start_index_matches_closed_form(beta in 0.3f64..0.95) {
        let m = Modulus::power(beta).unwrap();
        let seq = scales_for(&m, 16).unwrap();
        let tails: Vec<f64> = (0..=16).map(|k| power_tail(beta, seq.capacity, k)).collect();
        prop_assume!(tails.iter().all(|t| (t - 1.0).abs() > 1e-6));
        let expected = (1..=16).find(|&k| tails[k] < 1.0);
        prop_assert_eq!(seq.two_sided_from, expected);
        for k in 0..=16 {
            let (lo, hi) = seq.integrals[k];
            prop_assert!(lo <= tails[k] * (1.0 + 1e-9) && tails[k] <= hi * (1.0 + 1e-9));
        }
        let cert = verify_scales(&seq, &m);
        prop_assert_eq!(cert.min_margin("two_sided").unwrap() > 0.0, expected.is_some());
    }
}
