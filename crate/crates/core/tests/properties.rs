use corbin::oracle::{
    exact_joint, exact_marginal, mse_bound_aug, mse_bound_corbin, mse_bound_ldpfl,
    optimal_covariance, optimal_joint, pair_covariance, pair_mse,
};
use corbin::protocol::{generate_pairing, generate_partial_pairing};
use corbin::quant::{corbinq, ldpq, marginal_q, ClipSpec, PrivacyBudget, Role};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn budget() -> impl Strategy<Value = PrivacyBudget> {
    prop_oneof![
        9 => (0.05f64..10.0).prop_map(|e| PrivacyBudget::new(e).unwrap()),
        1 => Just(PrivacyBudget::non_private()),
    ]
}

fn clip() -> impl Strategy<Value = ClipSpec> {
    (-5.0f64..5.0, 0.01f64..4.0).prop_map(|(c, r)| ClipSpec::new(c, r).unwrap())
}

/// A clip interval together with two points inside it.
fn clip_pair() -> impl Strategy<Value = (ClipSpec, f64, f64)> {
    (clip(), 0.0f64..=1.0, 0.0f64..=1.0).prop_map(|(s, u, v)| {
        let at = |t: f64| s.clip(s.lower() + 2.0 * s.radius() * t);
        (s, at(u), at(v))
    })
}

fn close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-12 * scale.max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn outputs_live_on_two_levels(b in budget(), (s, w, _) in clip_pair(), d in 0u32..12, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = seed % (1u64 << d);
        let lo = s.low_level(&b);
        let hi = s.high_level(&b);
        for v in [
            ldpq(&b, &s, w, &mut rng).unwrap().decode(),
            corbinq(Role::Lead, &b, &s, w, d, z, &mut rng).unwrap().decode(),
            corbinq(Role::Follow, &b, &s, w, d, z, &mut rng).unwrap().decode(),
        ] {
            prop_assert!(v == lo || v == hi);
        }
        prop_assert!(close(hi - s.center(), s.radius() * b.alpha(), s.radius() * b.alpha()));
        prop_assert!(close(s.center() - lo, s.radius() * b.alpha(), s.radius() * b.alpha()));
    }

    #[test]
    fn marginals_are_exact_and_unbiased(b in budget(), (s, w, _) in clip_pair(), d in 0u32..11) {
        let q = marginal_q(&b, &s, w).unwrap();
        for role in [Role::Lead, Role::Follow] {
            let m = exact_marginal(role, &b, &s, w, d).unwrap();
            prop_assert!((m - q).abs() < 1e-12, "role {:?}: {} vs {}", role, m, q);
            let mean = m * s.high_level(&b) + (1.0 - m) * s.low_level(&b);
            prop_assert!(close(mean, w, s.radius() * b.alpha() + s.center().abs()));
        }
    }

    #[test]
    fn joint_is_within_grid_of_optimal(b in budget(), (s, w, wp) in clip_pair(), d in 0u32..11) {
        let exact = exact_joint(&b, &s, w, wp, d).unwrap();
        let opt = optimal_joint(&b, &s, w, wp).unwrap();
        prop_assert!((exact.total() - 1.0).abs() < 1e-12);
        prop_assert!(exact.max_gap(&opt) <= 1.0 / (1u64 << d) as f64 + 1e-12);
        prop_assert!(opt.entries().iter().all(|&p| p >= -1e-15));
    }

    #[test]
    fn optimal_joint_is_negatively_correlated(b in budget(), (s, w, wp) in clip_pair()) {
        let opt = optimal_joint(&b, &s, w, wp).unwrap();
        let cov = pair_covariance(&opt, &b, &s, w, wp);
        let scale = (s.radius() * b.alpha()).powi(2);
        prop_assert!(cov <= 1e-12 * scale.max(1.0));
        prop_assert!(close(cov, optimal_covariance(&b, &s, w, wp), scale));
        // Sum variance never exceeds the single-client worst case.
        let mse = pair_mse(&opt, &b, &s, w, wp);
        prop_assert!(mse <= scale + 1e-12 * scale.max(1.0));
    }

    #[test]
    fn optimal_is_exact_at_the_center(b in budget(), s in clip()) {
        let c = s.center();
        let opt = optimal_joint(&b, &s, c, c).unwrap();
        prop_assert!(pair_mse(&opt, &b, &s, c, c) <= 1e-12 * (s.radius() * b.alpha()).powi(2));
    }

    #[test]
    fn hybrid_bound_is_monotone(b in budget(), r in 0.01f64..4.0, n in 2usize..500, g1 in 0.0f64..=1.0, g2 in 0.0f64..=1.0) {
        let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
        let a = mse_bound_aug(&b, r, n, lo).unwrap();
        let z = mse_bound_aug(&b, r, n, hi).unwrap();
        prop_assert!(a <= z * (1.0 + 1e-12));
        prop_assert!(close(mse_bound_aug(&b, r, n, 0.0).unwrap(), mse_bound_corbin(&b, r, n).unwrap(), r * r));
        prop_assert!(close(mse_bound_aug(&b, r, n, 1.0).unwrap(), mse_bound_ldpfl(&b, r, n).unwrap(), r * r));
    }

    #[test]
    fn clip_is_idempotent_and_inside(s in clip(), w in -1e6f64..1e6) {
        let once = s.clip(w);
        prop_assert_eq!(s.clip(once), once);
        prop_assert!(s.contains(once));
        if s.contains(w) {
            prop_assert_eq!(once, w);
        }
    }

    #[test]
    fn quantizers_are_deterministic_given_seed(b in budget(), (s, w, _) in clip_pair(), d in 0u32..16, seed: u64) {
        let z = seed.rotate_left(7) % (1u64 << d);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (
                ldpq(&b, &s, w, &mut rng).unwrap().decode(),
                corbinq(Role::Lead, &b, &s, w, d, z, &mut rng).unwrap().decode(),
                corbinq(Role::Follow, &b, &s, w, d, z, &mut rng).unwrap().decode(),
            )
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn pairing_is_an_involution(n in 2usize..200, solo_frac in 0.0f64..=1.0, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let solo = (solo_frac * n as f64) as usize;
        for plan in [generate_pairing(n, &mut rng).unwrap(), generate_partial_pairing(n, solo, &mut rng).unwrap()] {
            for i in 0..n {
                if let Some(j) = plan.partner(i) {
                    prop_assert_ne!(i, j);
                    prop_assert_eq!(plan.partner(j), Some(i));
                }
            }
            prop_assert_eq!(2 * plan.pairs.len() + plan.unpaired.len(), n);
        }
        let full = generate_pairing(n, &mut rng).unwrap();
        prop_assert_eq!(full.unpaired.len(), n % 2);
    }
}

#[test]
fn out_of_range_inputs_are_rejected() {
    let b = PrivacyBudget::new(1.0).unwrap();
    let s = ClipSpec::new(0.0, 1.0).unwrap();
    assert!(marginal_q(&b, &s, 1.5).is_err());
    assert!(marginal_q(&b, &s, f64::NAN).is_err());
    assert!(PrivacyBudget::new(0.0).is_err());
    assert!(PrivacyBudget::new(-1.0).is_err());
    assert!(ClipSpec::new(0.0, 0.0).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(corbinq(Role::Lead, &b, &s, 0.0, 3, 8, &mut rng).is_err());
    assert!(mse_bound_aug(&b, 1.0, 10, 1.5).is_err());
    assert!(mse_bound_corbin(&b, 1.0, 1).is_err());
}
