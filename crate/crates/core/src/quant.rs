//! One-bit private quantizers.
//!
//! A weight `w` in `[c - r, c + r]` is mapped to one of the two levels
//! `c - r·α` and `c + r·α`, where `α = (e^ε + 1) / (e^ε - 1)`. The high level
//! is chosen with probability `q = 1/2 + (w - c) / (2 r α)`, which makes the
//! decoded value unbiased and bounds the likelihood ratio of either output by
//! `e^ε`.
//!
//! The correlated pair (`corbinq_lead`, `corbinq_follow`) draws its
//! randomness from a `d`-bit word `z` shared by both clients. The lead
//! outputs high when `z` is below its threshold `⌊2^d q₁⌋`, the follow
//! outputs low when `z` is below `⌊2^d (1 - q₂)⌋`; opposite orderings make the
//! two outputs as anti-correlated as their marginals permit. A `z` landing
//! exactly on a threshold is resolved by a local coin carrying the
//! fractional part, which keeps each marginal equal to `q` exactly.
//!
//! Bit vectors are read MSB-first, so lexicographic order on `d`-bit vectors
//! is integer order on words and both thresholds and `z` are plain integers.
//!
//! Note on the follow quantizer: its "else-if" branch compares against the
//! follow threshold `T₂`. A reading that compares against the lead threshold
//! `T₁` there does not preserve the follow marginal.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, CorbinError, Result};

/// Largest supported number of shared bits per parameter.
pub const MAX_BITS_PER_PARAM: u32 = 30;

/// Relative slack admitted by the `|w - c| ≤ r` precondition. Clipping with
/// `min`/`max` lands on `c ± r` but `(c + r) - c` may round one ulp above `r`.
const CLIP_SLACK: f64 = 1e-12;

/// `α(ε) = (e^ε + 1) / (e^ε - 1)`; `ε = +∞` is the non-private sentinel with
/// `α = 1`.
pub fn alpha(epsilon_p: f64) -> Result<f64> {
    if epsilon_p.is_nan() || epsilon_p <= 0.0 {
        return domain(format!("privacy budget must be positive, got {epsilon_p}"));
    }
    if epsilon_p == f64::INFINITY {
        return Ok(1.0);
    }
    // expm1 keeps the small-ε regime accurate.
    let em1 = epsilon_p.exp_m1();
    Ok((em1 + 2.0) / em1)
}

/// A per-parameter privacy budget `ε_p` with its cached amplitude `α(ε_p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    epsilon_p: f64,
    alpha: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon_p: f64) -> Result<Self> {
        Ok(Self {
            epsilon_p,
            alpha: alpha(epsilon_p)?,
        })
    }

    /// Quantization-only mode (`ε = ∞`, `α = 1`).
    pub fn non_private() -> Self {
        Self {
            epsilon_p: f64::INFINITY,
            alpha: 1.0,
        }
    }

    pub fn epsilon_p(&self) -> f64 {
        self.epsilon_p
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn is_non_private(&self) -> bool {
        self.epsilon_p.is_infinite()
    }
}

/// Center and radius of the clipping interval `[c - r, c + r]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    center: f64,
    radius: f64,
}

impl ClipSpec {
    pub fn new(center: f64, radius: f64) -> Result<Self> {
        if !center.is_finite() {
            return domain(format!("clip center must be finite, got {center}"));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return domain(format!("clip radius must be positive, got {radius}"));
        }
        Ok(Self { center, radius })
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn lower(&self) -> f64 {
        self.center - self.radius
    }

    pub fn upper(&self) -> f64 {
        self.center + self.radius
    }

    /// Clamps `w` into `[c - r, c + r]`.
    pub fn clip(&self, w: f64) -> f64 {
        self.upper().min(self.lower().max(w))
    }

    pub fn contains(&self, w: f64) -> bool {
        (w - self.center).abs() <= self.radius * (1.0 + CLIP_SLACK)
    }

    /// The decoded value of a low output, `c - r α`.
    pub fn low_level(&self, budget: &PrivacyBudget) -> f64 {
        self.center - self.radius * budget.alpha()
    }

    /// The decoded value of a high output, `c + r α`.
    pub fn high_level(&self, budget: &PrivacyBudget) -> f64 {
        self.center + self.radius * budget.alpha()
    }
}

/// Clamps `w` into the clip interval.
pub fn clip(w: f64, spec: &ClipSpec) -> f64 {
    spec.clip(w)
}

/// The transmitted bit: `U ∈ {-1, +1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Low,
    High,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Low => -1.0,
            Sign::High => 1.0,
        }
    }

    pub fn flip(self) -> Sign {
        match self {
            Sign::Low => Sign::High,
            Sign::High => Sign::Low,
        }
    }

    pub fn is_high(self) -> bool {
        self == Sign::High
    }

    fn from_bool(high: bool) -> Sign {
        if high {
            Sign::High
        } else {
            Sign::Low
        }
    }
}

/// One quantized parameter. Decodes to `c + U r α`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizedValue {
    pub sign: Sign,
    pub clip: ClipSpec,
    pub budget: PrivacyBudget,
}

impl QuantizedValue {
    pub fn decode(&self) -> f64 {
        self.clip.center() + self.sign.value() * self.clip.radius() * self.budget.alpha()
    }
}

/// Probability that the quantizer outputs the high level `c + r α`.
pub fn marginal_q(budget: &PrivacyBudget, clip: &ClipSpec, w: f64) -> Result<f64> {
    if !w.is_finite() || !clip.contains(w) {
        return domain(format!(
            "weight {w} lies outside the clip interval [{}, {}]",
            clip.lower(),
            clip.upper()
        ));
    }
    let q = 0.5 + (w - clip.center()) / (2.0 * clip.radius() * budget.alpha());
    Ok(q.clamp(0.0, 1.0))
}

/// Independent private quantization of one weight.
pub fn ldpq<R: Rng + ?Sized>(
    budget: &PrivacyBudget,
    clip: &ClipSpec,
    w: f64,
    rng: &mut R,
) -> Result<QuantizedValue> {
    let q = marginal_q(budget, clip, w)?;
    Ok(QuantizedValue {
        sign: Sign::from_bool(rng.random_bool(q)),
        clip: *clip,
        budget: *budget,
    })
}

/// A cut point on the `d`-bit word scale.
///
/// `level ∈ [0, 2^d]`; `level = 2^d` only when the effective probability is
/// exactly one, in which case no word reaches it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub level: u64,
    pub tie_prob: f64,
}

fn threshold_for(p: f64, d: u32) -> Result<Threshold> {
    if d > MAX_BITS_PER_PARAM {
        return domain(format!(
            "bits per parameter must be at most {MAX_BITS_PER_PARAM}, got {d}"
        ));
    }
    if !(0.0..=1.0).contains(&p) {
        return domain(format!("probability must lie in [0, 1], got {p}"));
    }
    // Multiplying by a power of two is exact.
    let scaled = p * (1u64 << d) as f64;
    let level = scaled.floor();
    Ok(Threshold {
        level: level as u64,
        tie_prob: scaled - level,
    })
}

/// `T₁ = ⌊2^d q⌋` with its fractional part as the tie probability.
pub fn lead_threshold(q: f64, d: u32) -> Result<Threshold> {
    threshold_for(q, d)
}

/// `T₂ = ⌊2^d (1 - q)⌋` with its fractional part as the tie probability.
pub fn follow_threshold(q: f64, d: u32) -> Result<Threshold> {
    if !(0.0..=1.0).contains(&q) {
        return domain(format!("probability must lie in [0, 1], got {q}"));
    }
    threshold_for(1.0 - q, d)
}

/// Which side of a correlated pair a client plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Lead,
    Follow,
}

/// Outcome of comparing a shared word with a role's threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decision {
    Fixed(Sign),
    /// `z` equals the threshold; output high with this probability.
    Tie {
        p_high: f64,
    },
}

impl Decision {
    /// Conditional probability of a high output given the word.
    pub fn p_high(&self) -> f64 {
        match *self {
            Decision::Fixed(s) => {
                if s.is_high() {
                    1.0
                } else {
                    0.0
                }
            }
            Decision::Tie { p_high } => p_high,
        }
    }

    fn resolve<R: Rng + ?Sized>(self, rng: &mut R) -> Sign {
        match self {
            Decision::Fixed(s) => s,
            Decision::Tie { p_high } => Sign::from_bool(rng.random_bool(p_high)),
        }
    }
}

/// The threshold a role uses for a marginal `q`.
pub fn role_threshold(role: Role, q: f64, d: u32) -> Result<Threshold> {
    match role {
        Role::Lead => lead_threshold(q, d),
        Role::Follow => follow_threshold(q, d),
    }
}

/// The deterministic part of the correlated quantizer for one word.
///
/// Lead: high below the threshold, low above it, high with `tie_prob` on it.
/// Follow: low below, high above; on a tie it draws `U'` with `tie_prob` and
/// outputs `-U'`, i.e. high with `1 - tie_prob`.
pub fn decide(role: Role, threshold: &Threshold, z: u64) -> Decision {
    use std::cmp::Ordering::*;
    match (role, z.cmp(&threshold.level)) {
        (Role::Lead, Less) => Decision::Fixed(Sign::High),
        (Role::Lead, Greater) => Decision::Fixed(Sign::Low),
        (Role::Lead, Equal) => Decision::Tie {
            p_high: threshold.tie_prob,
        },
        (Role::Follow, Less) => Decision::Fixed(Sign::Low),
        (Role::Follow, Greater) => Decision::Fixed(Sign::High),
        (Role::Follow, Equal) => Decision::Tie {
            p_high: 1.0 - threshold.tie_prob,
        },
    }
}

fn check_word(d: u32, z: u64) -> Result<()> {
    if d > MAX_BITS_PER_PARAM {
        return domain(format!(
            "bits per parameter must be at most {MAX_BITS_PER_PARAM}, got {d}"
        ));
    }
    if z >= 1u64 << d {
        return domain(format!("shared word {z} does not fit in {d} bits"));
    }
    Ok(())
}

/// Correlated quantization of `w` in the given role against shared word `z`.
#[allow(clippy::too_many_arguments)]
pub fn corbinq<R: Rng + ?Sized>(
    role: Role,
    budget: &PrivacyBudget,
    clip: &ClipSpec,
    w: f64,
    d: u32,
    z: u64,
    rng: &mut R,
) -> Result<QuantizedValue> {
    check_word(d, z)?;
    let q = marginal_q(budget, clip, w)?;
    let threshold = role_threshold(role, q, d)?;
    Ok(QuantizedValue {
        sign: decide(role, &threshold, z).resolve(rng),
        clip: *clip,
        budget: *budget,
    })
}

pub fn corbinq_lead<R: Rng + ?Sized>(
    budget: &PrivacyBudget,
    clip: &ClipSpec,
    w: f64,
    d: u32,
    z: u64,
    rng: &mut R,
) -> Result<QuantizedValue> {
    corbinq(Role::Lead, budget, clip, w, d, z, rng)
}

pub fn corbinq_follow<R: Rng + ?Sized>(
    budget: &PrivacyBudget,
    clip: &ClipSpec,
    w_prime: f64,
    d: u32,
    z: u64,
    rng: &mut R,
) -> Result<QuantizedValue> {
    corbinq(Role::Follow, budget, clip, w_prime, d, z, rng)
}

/// `d` shared bits per parameter for `m` parameters, stored as MSB-first
/// words in `[0, 2^d)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommonRandomness {
    bits_per_param: u32,
    words: Vec<u64>,
}

impl CommonRandomness {
    pub fn new(bits_per_param: u32, words: Vec<u64>) -> Result<Self> {
        if bits_per_param > MAX_BITS_PER_PARAM {
            return domain(format!(
                "bits per parameter must be at most {MAX_BITS_PER_PARAM}, got {bits_per_param}"
            ));
        }
        if let Some(bad) = words.iter().find(|&&z| z >> bits_per_param != 0) {
            return domain(format!("word {bad} does not fit in {bits_per_param} bits"));
        }
        Ok(Self {
            bits_per_param,
            words,
        })
    }

    /// Fresh fair bits for `m` parameters.
    pub fn sample<R: Rng + ?Sized>(bits_per_param: u32, m: usize, rng: &mut R) -> Result<Self> {
        let mut bits = vec![0u64; (bits_per_param as usize * m).div_ceil(64)];
        rng.fill(bits.as_mut_slice());
        Self::from_bitstream(bits_per_param, m, &bits)
    }

    /// Reads `m` consecutive `d`-bit groups from a packed MSB-first stream.
    pub fn from_bitstream(bits_per_param: u32, m: usize, stream: &[u64]) -> Result<Self> {
        if bits_per_param > MAX_BITS_PER_PARAM {
            return domain(format!(
                "bits per parameter must be at most {MAX_BITS_PER_PARAM}, got {bits_per_param}"
            ));
        }
        let d = bits_per_param as usize;
        if stream.len() * 64 < d * m {
            return Err(CorbinError::Protocol(format!(
                "bit stream holds {} bits, need {}",
                stream.len() * 64,
                d * m
            )));
        }
        let words = (0..m)
            .map(|j| {
                (0..d).fold(0u64, |acc, b| {
                    let k = j * d + b;
                    (acc << 1) | ((stream[k / 64] >> (63 - k % 64)) & 1)
                })
            })
            .collect();
        Ok(Self {
            bits_per_param,
            words,
        })
    }

    /// Packs the words back into an MSB-first stream; unused tail bits are 0.
    pub fn to_bitstream(&self) -> Vec<u64> {
        let d = self.bits_per_param as usize;
        let mut out = vec![0u64; (d * self.words.len()).div_ceil(64)];
        for (j, &z) in self.words.iter().enumerate() {
            for b in 0..d {
                let bit = (z >> (d - 1 - b)) & 1;
                let k = j * d + b;
                out[k / 64] |= bit << (63 - k % 64);
            }
        }
        out
    }

    pub fn bits_per_param(&self) -> u32 {
        self.bits_per_param
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn total_bits(&self) -> u64 {
        self.bits_per_param as u64 * self.words.len() as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit() -> ClipSpec {
        ClipSpec::new(0.0, 0.5).unwrap()
    }

    #[test]
    fn alpha_values() {
        assert!((alpha(3f64.ln()).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(alpha(f64::INFINITY).unwrap(), 1.0);
        // 40-digit reference: 2.163953413738652848770004010218023117094
        assert!((alpha(1.0).unwrap() - 2.163_953_413_738_653).abs() < 1e-15);
        assert!(alpha(0.0).is_err());
        assert!(alpha(-1.0).is_err());
        assert!(alpha(f64::NAN).is_err());
    }

    #[test]
    fn marginal_examples() {
        let b1 = PrivacyBudget::new(1.0).unwrap();
        assert_eq!(marginal_q(&b1, &unit(), 0.0).unwrap(), 0.5);
        // 1/2 + 1/(2α(1)) = 0.7310585786300048792...
        let q = marginal_q(&b1, &unit(), 0.5).unwrap();
        assert!((q - 0.731_058_578_630_004_9).abs() < 1e-15);
        let inf = PrivacyBudget::non_private();
        assert_eq!(marginal_q(&inf, &unit(), -0.5).unwrap(), 0.0);
        assert!(matches!(
            marginal_q(&b1, &unit(), 0.6),
            Err(CorbinError::Domain(_))
        ));
    }

    #[test]
    fn marginal_accepts_clipped_boundary() {
        let spec = ClipSpec::new(0.1, 0.3).unwrap();
        let b = PrivacyBudget::new(2.0).unwrap();
        assert!(marginal_q(&b, &spec, spec.clip(10.0)).is_ok());
        assert!(marginal_q(&b, &spec, spec.clip(-10.0)).is_ok());
    }

    #[test]
    fn clip_examples() {
        let spec = ClipSpec::new(1.0, 2.0).unwrap();
        assert_eq!(clip(1.0, &spec), 1.0);
        assert_eq!(clip(1.0 + 4.0, &spec), 3.0);
        assert_eq!(clip(1.0 - 3.0, &spec), -1.0);
        assert!(ClipSpec::new(0.0, 0.0).is_err());
        assert!(ClipSpec::new(0.0, -1.0).is_err());
    }

    #[test]
    fn threshold_examples() {
        let q = 0.731_058_578_630_004_9;
        let t = lead_threshold(q, 3).unwrap();
        assert_eq!(t.level, 5);
        assert!((t.tie_prob - 0.848_468_629_040_039).abs() < 1e-12);
        let t = lead_threshold(0.5, 4).unwrap();
        assert_eq!((t.level, t.tie_prob), (8, 0.0));
        let t = lead_threshold(1.0, 3).unwrap();
        assert_eq!((t.level, t.tie_prob), (8, 0.0));

        let t = follow_threshold(q, 3).unwrap();
        assert_eq!(t.level, 2);
        assert!((t.tie_prob - 0.151_531_370_959_961).abs() < 1e-12);
        let t = follow_threshold(0.5, 4).unwrap();
        assert_eq!((t.level, t.tie_prob), (8, 0.0));
        let t = follow_threshold(0.0, 3).unwrap();
        assert_eq!((t.level, t.tie_prob), (8, 0.0));

        assert!(lead_threshold(1.5, 3).is_err());
        assert!(lead_threshold(-0.1, 3).is_err());
        assert!(lead_threshold(0.5, 31).is_err());
    }

    #[test]
    fn zero_bit_threshold_carries_all_mass_in_tie() {
        let t = lead_threshold(0.3, 0).unwrap();
        assert_eq!(t.level, 0);
        assert!((t.tie_prob - 0.3).abs() < 1e-15);
        assert_eq!(
            decide(Role::Lead, &t, 0),
            Decision::Tie { p_high: t.tie_prob }
        );
        let t = lead_threshold(1.0, 0).unwrap();
        assert_eq!(t.level, 1);
        assert_eq!(decide(Role::Lead, &t, 0), Decision::Fixed(Sign::High));
    }

    #[test]
    fn lead_strict_branches() {
        // ε = 1, w = 0.5 gives level 5 at d = 3.
        let b = PrivacyBudget::new(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let hi = corbinq_lead(&b, &unit(), 0.5, 3, 2, &mut rng).unwrap();
        assert_eq!(hi.sign, Sign::High);
        let lo = corbinq_lead(&b, &unit(), 0.5, 3, 7, &mut rng).unwrap();
        assert_eq!(lo.sign, Sign::Low);
        assert!(corbinq_lead(&b, &unit(), 0.5, 3, 8, &mut rng).is_err());
    }

    #[test]
    fn follow_boundary_always_high() {
        let b = PrivacyBudget::non_private();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for z in 0..8 {
            let v = corbinq_follow(&b, &unit(), 0.5, 3, z, &mut rng).unwrap();
            assert_eq!(v.sign, Sign::High);
        }
    }

    #[test]
    fn ldpq_boundary_and_fair_coin() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inf = PrivacyBudget::non_private();
        for _ in 0..1000 {
            assert_eq!(ldpq(&inf, &unit(), 0.5, &mut rng).unwrap().sign, Sign::High);
        }
        let b = PrivacyBudget::new(0.7).unwrap();
        let n = 100_000;
        let highs = (0..n)
            .filter(|_| ldpq(&b, &unit(), 0.0, &mut rng).unwrap().sign.is_high())
            .count() as f64;
        let sd = (n as f64 * 0.25).sqrt();
        assert!((highs - n as f64 / 2.0).abs() < 5.0 * sd);
    }

    #[test]
    fn ldpq_monte_carlo_unbiased() {
        let b = PrivacyBudget::new(1.0).unwrap();
        let clip = unit();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let v = ldpq(&b, &clip, 0.25, &mut rng).unwrap().decode();
            sum += v;
            sq += v * v;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        assert!((mean - 0.25).abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn decoded_levels() {
        let b = PrivacyBudget::new(1.0).unwrap();
        let clip = ClipSpec::new(2.0, 0.5).unwrap();
        let v = QuantizedValue {
            sign: Sign::High,
            clip,
            budget: b,
        };
        assert_eq!(v.decode(), clip.high_level(&b));
        let v = QuantizedValue {
            sign: Sign::Low,
            ..v
        };
        assert_eq!(v.decode(), clip.low_level(&b));
    }

    #[test]
    fn common_randomness_word_range() {
        assert!(CommonRandomness::new(2, vec![0, 3, 1]).is_ok());
        assert!(CommonRandomness::new(2, vec![4]).is_err());
        let cr = CommonRandomness::new(0, vec![0, 0]).unwrap();
        assert_eq!(cr.total_bits(), 0);
    }

    #[test]
    fn bitstream_is_msb_first() {
        // 0b101 then 0b011 packed at the top of the first word.
        let stream = [0b1010_1100u64 << 56];
        let cr = CommonRandomness::from_bitstream(3, 2, &stream).unwrap();
        assert_eq!(cr.words(), &[0b101, 0b011]);
    }

    #[test]
    fn deterministic_given_seed() {
        let b = PrivacyBudget::new(0.5).unwrap();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..64)
                .map(|z| {
                    corbinq_follow(&b, &unit(), 0.1, 6, z, &mut rng)
                        .unwrap()
                        .sign
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(5), run(5));
    }

    proptest! {
        #[test]
        fn bitstream_round_trip(d in 0u32..=30, words in proptest::collection::vec(any::<u64>(), 0..40)) {
            let words: Vec<u64> = words.into_iter().map(|z| if d == 0 { 0 } else { z >> (64 - d) }).collect();
            let cr = CommonRandomness::new(d, words).unwrap();
            let back = CommonRandomness::from_bitstream(d, cr.len(), &cr.to_bitstream()).unwrap();
            prop_assert_eq!(back, cr);
        }

        #[test]
        fn clipped_value_within_radius(c in -100.0f64..100.0, r in 1e-6f64..50.0, w in -1e4f64..1e4) {
            let spec = ClipSpec::new(c, r).unwrap();
            prop_assert!(spec.contains(spec.clip(w)));
        }

        #[test]
        fn alpha_decreasing(e1 in 1e-3f64..20.0, e2 in 1e-3f64..20.0) {
            prop_assume!(e1 < e2);
            let (a1, a2) = (alpha(e1).unwrap(), alpha(e2).unwrap());
            prop_assert!(a1 > 1.0 && a2 >= 1.0);
            prop_assert!(a1 >= a2);
        }

        #[test]
        fn marginal_within_privacy_band(eps in 0.05f64..8.0, w in -0.5f64..=0.5) {
            let b = PrivacyBudget::new(eps).unwrap();
            let q = marginal_q(&b, &unit(), w).unwrap();
            let half = 0.5 / b.alpha();
            prop_assert!(q >= 0.5 - half - 1e-15 && q <= 0.5 + half + 1e-15);
        }
    }
}
