//! A second, deliberately naive implementation of the paired quantizer that
//! works on explicit bit vectors ordered lexicographically, checked against
//! the library's integer-threshold implementation and its enumeration oracle.

use corbin::oracle::{exact_joint, exact_marginal};
use corbin::quant::{
    decide, follow_threshold, lead_threshold, marginal_q, ClipSpec, CommonRandomness, Decision,
    PrivacyBudget, Role,
};

/// `B_d(k)`: the `d`-bit binary expansion of `k`, most significant first.
/// `None` when `k = 2^d` does not fit, meaning "above every word".
fn to_bits(k: u64, d: u32) -> Option<Vec<bool>> {
    if k >= 1u64 << d {
        return None;
    }
    Some((0..d).rev().map(|i| (k >> i) & 1 == 1).collect())
}

/// All `d`-bit vectors, built recursively so that no integer ordering is
/// involved.
fn all_words(d: u32) -> Vec<Vec<bool>> {
    if d == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for tail in all_words(d - 1) {
        for head in [false, true] {
            let mut v = vec![head];
            v.extend(&tail);
            out.push(v);
        }
    }
    out
}

/// Probability that the quantizer outputs high for word `z`.
fn naive_p_high(lead: bool, q: f64, d: u32, z: &[bool]) -> f64 {
    let scale = (1u64 << d) as f64;
    let x = if lead { scale * q } else { scale * (1.0 - q) };
    let k = x.floor();
    let frac = x - k;
    let t = to_bits(k as u64, d);
    // `Z ≺ T` holds for every word when T does not fit in d bits.
    let below = t.as_ref().is_none_or(|t| z < t.as_slice());
    let above = t.as_ref().is_some_and(|t| z > t.as_slice());
    match (lead, below, above) {
        (true, true, _) => 1.0,
        (true, _, true) => 0.0,
        (true, _, _) => frac,
        (false, true, _) => 0.0,
        (false, _, true) => 1.0,
        (false, _, _) => 1.0 - frac,
    }
}

fn pack(z: &[bool]) -> Vec<u64> {
    let mut out = vec![0u64; z.len().div_ceil(64).max(1)];
    for (k, &b) in z.iter().enumerate() {
        out[k / 64] |= (b as u64) << (63 - k % 64);
    }
    out
}

fn grid(clip: &ClipSpec) -> Vec<f64> {
    (0..=16)
        .map(|k| clip.lower() + 2.0 * clip.radius() * k as f64 / 16.0)
        .map(|w| clip.clip(w))
        .collect()
}

#[test]
fn decisions_match_per_word() {
    for (c, r) in [(0.0, 0.5), (2.0, 3.0)] {
        let clip = ClipSpec::new(c, r).unwrap();
        for eps in [0.1, 0.5, 1.0, 5.0, f64::INFINITY] {
            let b = PrivacyBudget::new(eps).unwrap();
            for w in grid(&clip) {
                let q = marginal_q(&b, &clip, w).unwrap();
                for d in 0..=9 {
                    let tl = lead_threshold(q, d).unwrap();
                    let tf = follow_threshold(q, d).unwrap();
                    for zb in all_words(d) {
                        // The word travels as a packed MSB-first stream.
                        let z = CommonRandomness::from_bitstream(d, 1, &pack(&zb))
                            .unwrap()
                            .words()[0];
                        for (lead, t, role) in [(true, &tl, Role::Lead), (false, &tf, Role::Follow)]
                        {
                            let got = decide(role, t, z).p_high();
                            let want = naive_p_high(lead, q, d, &zb);
                            assert_eq!(got, want, "eps={eps} w={w} d={d} z={zb:?} lead={lead}");
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn joint_and_marginals_match() {
    let clip = ClipSpec::new(0.0, 0.5).unwrap();
    for eps in [0.5, 1.0, 3.0, 5.0] {
        let b = PrivacyBudget::new(eps).unwrap();
        for w in grid(&clip) {
            for wp in grid(&clip) {
                let (q1, q2) = (
                    marginal_q(&b, &clip, w).unwrap(),
                    marginal_q(&b, &clip, wp).unwrap(),
                );
                for d in [1, 3, 6, 10] {
                    let words = all_words(d);
                    let k = words.len() as f64;
                    let mut joint = [0.0; 4];
                    let (mut m1, mut m2) = (0.0, 0.0);
                    for z in &words {
                        let a = naive_p_high(true, q1, d, z);
                        let bb = naive_p_high(false, q2, d, z);
                        m1 += a;
                        m2 += bb;
                        joint[0] += (1.0 - a) * (1.0 - bb);
                        joint[1] += (1.0 - a) * bb;
                        joint[2] += a * (1.0 - bb);
                        joint[3] += a * bb;
                    }
                    let ex = exact_joint(&b, &clip, w, wp, d).unwrap();
                    for (x, y) in ex.entries().iter().zip(joint.iter().map(|v| v / k)) {
                        assert!((x - y).abs() < 1e-14, "eps={eps} w={w} w'={wp} d={d}");
                    }
                    assert!(
                        (exact_marginal(Role::Lead, &b, &clip, w, d).unwrap() - m1 / k).abs()
                            < 1e-14
                    );
                    assert!(
                        (exact_marginal(Role::Follow, &b, &clip, wp, d).unwrap() - m2 / k).abs()
                            < 1e-14
                    );
                    assert!((m1 / k - q1).abs() < 1e-12 && (m2 / k - q2).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn ties_only_at_the_threshold_word() {
    let b = PrivacyBudget::new(1.0).unwrap();
    let clip = ClipSpec::new(0.0, 0.5).unwrap();
    for w in grid(&clip) {
        let q = marginal_q(&b, &clip, w).unwrap();
        let t = lead_threshold(q, 6).unwrap();
        let ties = (0..64u64)
            .filter(|&z| matches!(decide(Role::Lead, &t, z), Decision::Tie { .. }))
            .count();
        assert!(ties <= 1);
    }
}
