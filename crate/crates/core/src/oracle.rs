//! Exact analytics for the quantizers.
//!
//! [`exact_joint`] enumerates every shared word `z ∈ [0, 2^d)` through the
//! quantizers' own decision rule ([`quant::decide`]) and integrates the tie
//! coins out, so it describes exactly what the sampling code does.
//! [`optimal_joint`] is the closed-form limit: the maximally anti-correlated
//! coupling of two Bernoulli marginals. Tests compare the two routes.
//!
//! The remaining functions are closed-form bounds: aggregate MSE for the
//! independent, correlated and hybrid mechanisms, the user-level central DP
//! epsilon of the hybrid, the dropout variant, the per-parameter likelihood
//! ratio and per-round communication.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{domain, CorbinError, Result};
use crate::quant::{self, marginal_q, ClipSpec, PrivacyBudget, Role};

/// Largest `d` that [`exact_joint`] will enumerate.
pub const MAX_ENUMERATION_BITS: u32 = 20;

/// Joint output distribution of a (lead, follow) pair; `l` = low, `h` = high,
/// lead first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointDist {
    pub p_ll: f64,
    pub p_lh: f64,
    pub p_hl: f64,
    pub p_hh: f64,
}

impl JointDist {
    /// Two independent outputs with high-probabilities `q1`, `q2`.
    pub fn independent(q1: f64, q2: f64) -> Self {
        Self {
            p_ll: (1.0 - q1) * (1.0 - q2),
            p_lh: (1.0 - q1) * q2,
            p_hl: q1 * (1.0 - q2),
            p_hh: q1 * q2,
        }
    }

    pub fn total(&self) -> f64 {
        self.p_ll + self.p_lh + self.p_hl + self.p_hh
    }

    /// P(lead outputs high).
    pub fn lead_high(&self) -> f64 {
        self.p_hl + self.p_hh
    }

    /// P(follow outputs high).
    pub fn follow_high(&self) -> f64 {
        self.p_lh + self.p_hh
    }

    pub fn entries(&self) -> [f64; 4] {
        [self.p_ll, self.p_lh, self.p_hl, self.p_hh]
    }

    /// Largest entrywise absolute difference.
    pub fn max_gap(&self, other: &JointDist) -> f64 {
        self.entries()
            .iter()
            .zip(other.entries())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn check_enumeration(d: u32) -> Result<()> {
    if d > MAX_ENUMERATION_BITS {
        return Err(CorbinError::Resource(format!(
            "exact enumeration is capped at d = {MAX_ENUMERATION_BITS}, got {d}"
        )));
    }
    Ok(())
}

/// Exact marginal P(high) of one role, by enumerating the shared word.
pub fn exact_marginal(
    role: Role,
    budget: &PrivacyBudget,
    clip: &ClipSpec,
    w: f64,
    d: u32,
) -> Result<f64> {
    check_enumeration(d)?;
    let t = quant::role_threshold(role, marginal_q(budget, clip, w)?, d)?;
    let sum: f64 = (0..1u64 << d)
        .map(|z| quant::decide(role, &t, z).p_high())
        .sum();
    Ok(sum / (1u64 << d) as f64)
}

/// Exact joint of `corbinq_lead(w)` and `corbinq_follow(w')` over a uniform
/// `d`-bit shared word. Tie coins are independent given `z`.
pub fn exact_joint(
    budget: &PrivacyBudget,
    clip: &ClipSpec,
    w: f64,
    w_prime: f64,
    d: u32,
) -> Result<JointDist> {
    check_enumeration(d)?;
    let t_lead = quant::lead_threshold(marginal_q(budget, clip, w)?, d)?;
    let t_follow = quant::follow_threshold(marginal_q(budget, clip, w_prime)?, d)?;
    let mut acc = JointDist {
        p_ll: 0.0,
        p_lh: 0.0,
        p_hl: 0.0,
        p_hh: 0.0,
    };
    for z in 0..1u64 << d {
        let a = quant::decide(Role::Lead, &t_lead, z).p_high();
        let b = quant::decide(Role::Follow, &t_follow, z).p_high();
        acc.p_ll += (1.0 - a) * (1.0 - b);
        acc.p_lh += (1.0 - a) * b;
        acc.p_hl += a * (1.0 - b);
        acc.p_hh += a * b;
    }
    let scale = 1.0 / (1u64 << d) as f64;
    Ok(JointDist {
        p_ll: acc.p_ll * scale,
        p_lh: acc.p_lh * scale,
        p_hl: acc.p_hl * scale,
        p_hh: acc.p_hh * scale,
    })
}

/// The `d → ∞` joint: the lower Fréchet coupling of the two marginals.
///
/// When `w + w' ≤ 2c` both-high never happens and
/// `P_ll = (2c - w - w') / (2 r α)`; otherwise both-low never happens.
pub fn optimal_joint(
    budget: &PrivacyBudget,
    clip: &ClipSpec,
    w: f64,
    w_prime: f64,
) -> Result<JointDist> {
    let q1 = marginal_q(budget, clip, w)?;
    let q2 = marginal_q(budget, clip, w_prime)?;
    let p_hh = (q1 + q2 - 1.0).max(0.0);
    let p_ll = (1.0 - q1 - q2).max(0.0);
    Ok(JointDist {
        p_ll,
        p_lh: q2 - p_hh,
        p_hl: q1 - p_hh,
        p_hh,
    })
}

/// Joint of two independent `ldpq` outputs.
pub fn independent_joint(
    budget: &PrivacyBudget,
    clip: &ClipSpec,
    w: f64,
    w_prime: f64,
) -> Result<JointDist> {
    Ok(JointDist::independent(
        marginal_q(budget, clip, w)?,
        marginal_q(budget, clip, w_prime)?,
    ))
}

/// `E[(X + Y - w - w')²]` for decoded outputs `X`, `Y` distributed as `joint`.
pub fn pair_mse(
    joint: &JointDist,
    budget: &PrivacyBudget,
    clip: &ClipSpec,
    w: f64,
    w_prime: f64,
) -> f64 {
    let lo = clip.low_level(budget);
    let hi = clip.high_level(budget);
    let t = w + w_prime;
    joint.p_ll * (lo + lo - t).powi(2)
        + joint.p_lh * (lo + hi - t).powi(2)
        + joint.p_hl * (hi + lo - t).powi(2)
        + joint.p_hh * (hi + hi - t).powi(2)
}

/// `Cov(X, Y) = E[XY] - w w'` for decoded outputs distributed as `joint`.
///
/// The subtraction of `w w'` relies on both marginals being unbiased.
pub fn pair_covariance(
    joint: &JointDist,
    budget: &PrivacyBudget,
    clip: &ClipSpec,
    w: f64,
    w_prime: f64,
) -> f64 {
    // Centered levels avoid cancellation when c is large.
    let a = clip.radius() * budget.alpha();
    let c = clip.center();
    let exy = a * a * (joint.p_ll + joint.p_hh - joint.p_lh - joint.p_hl);
    exy - (w - c) * (w_prime - c)
}

/// Closed-form covariance of the optimal joint:
/// `-(w - w̲)(w' - w̲)` when `(w + w')/2 ≤ c`, else `-(w - w̄)(w' - w̄)`,
/// with `w̲ = c - α r` and `w̄ = c + α r`.
pub fn optimal_covariance(budget: &PrivacyBudget, clip: &ClipSpec, w: f64, w_prime: f64) -> f64 {
    if (w + w_prime) / 2.0 <= clip.center() {
        let lo = clip.low_level(budget);
        -(w - lo) * (w_prime - lo)
    } else {
        let hi = clip.high_level(budget);
        -(w - hi) * (w_prime - hi)
    }
}

/// `(r² / 2n)((√2 - 1)α + 1)((√2 + 1)α - 1)`: aggregate per-parameter MSE
/// bound for fully paired correlated quantization.
pub fn mse_bound_corbin(budget: &PrivacyBudget, r: f64, n: usize) -> Result<f64> {
    if n < 2 {
        return domain(format!("pairing needs at least two clients, got {n}"));
    }
    check_radius(r)?;
    Ok(corbin_term(budget.alpha(), r, n))
}

fn corbin_term(alpha: f64, r: f64, n: usize) -> f64 {
    let s2 = std::f64::consts::SQRT_2;
    r * r / (2.0 * n as f64) * ((s2 - 1.0) * alpha + 1.0) * ((s2 + 1.0) * alpha - 1.0)
}

fn check_radius(r: f64) -> Result<()> {
    if !(r.is_finite() && r > 0.0) {
        return domain(format!("radius must be positive, got {r}"));
    }
    Ok(())
}

/// `r² α² / n`: aggregate MSE of independent quantization.
pub fn mse_bound_ldpfl(budget: &PrivacyBudget, r: f64, n: usize) -> Result<f64> {
    if n < 1 {
        return domain("need at least one client");
    }
    check_radius(r)?;
    Ok(r * r * budget.alpha().powi(2) / n as f64)
}

/// Hybrid bound: a `γ` fraction quantizes independently, the rest in pairs.
pub fn mse_bound_aug(budget: &PrivacyBudget, r: f64, n: usize, gamma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&gamma) {
        return domain(format!("gamma must lie in [0, 1], got {gamma}"));
    }
    if n < 2 {
        return domain(format!("pairing needs at least two clients, got {n}"));
    }
    check_radius(r)?;
    let a = budget.alpha();
    Ok(gamma * r * r * a * a / n as f64 + (1.0 - gamma) * corbin_term(a, r, n))
}

/// A named closed-form quantity with the inputs it was evaluated at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    pub inputs: BTreeMap<String, f64>,
    /// `None` when the preconditions do not hold.
    pub value: Option<f64>,
    pub preconditions_met: bool,
}

impl BoundReport {
    pub fn new(name: &str, inputs: &[(&str, f64)], value: Option<f64>, ok: bool) -> Self {
        Self {
            name: name.to_string(),
            inputs: inputs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            value: if ok { value } else { None },
            preconditions_met: ok,
        }
    }
}

/// Left side of the sample-size precondition: `(nγ - 1)(1/4 - 1/(4α²))`.
pub fn ucdp_lhs(alpha: f64, n: usize, gamma: f64) -> f64 {
    (n as f64 * gamma - 1.0) * (0.25 - 1.0 / (4.0 * alpha * alpha))
}

/// Right side: `max(23 log(m/δ), 2 r α)`.
pub fn ucdp_rhs(alpha: f64, m: usize, delta: f64, r: f64) -> f64 {
    (23.0 * (m as f64 / delta).ln()).max(2.0 * r * alpha)
}

/// The user-level epsilon formula, without precondition checks.
///
/// `ε_u / (r α) = √(8 m L₁ / (k e_p)) + 8 (L₁ + log(20m/δ) L₂) / (3k)
///               + 4 b_p √(2m) (1.75 + 3.75/α²) √L₂ / (k (1 - δ/10) e_p)`
///
/// with `k = nγ - 1`, `L₁ = log(1.25/δ)`, `L₂ = log(10/δ)`,
/// `e_p = 1 + 1/α²` and `b_p = e_p/3 + 1/α`.
pub fn ucdp_formula(alpha: f64, delta: f64, gamma: f64, n: usize, m: usize, r: f64) -> f64 {
    let k = n as f64 * gamma - 1.0;
    let m = m as f64;
    let l1 = (1.25 / delta).ln();
    let l2 = (10.0 / delta).ln();
    let e_p = 1.0 + 1.0 / (alpha * alpha);
    let b_p = e_p / 3.0 + 1.0 / alpha;
    let t1 = (8.0 * m * l1 / (k * e_p)).sqrt();
    let t2 = 8.0 * (l1 + (20.0 * m / delta).ln() * l2) / (3.0 * k);
    let t3 = 4.0 * b_p * (2.0 * m).sqrt() * (1.75 + 3.75 / (alpha * alpha)) * l2.sqrt()
        / (k * (1.0 - delta / 10.0) * e_p);
    r * alpha * (t1 + t2 + t3)
}

/// User-level central DP epsilon of the hybrid mechanism.
///
/// Reports `preconditions_met = false` (and no value) unless
/// `δ ∈ (0,1)`, `γ ∈ (0,1]`, `nγ > 1` and the sample-size inequality
/// `ucdp_lhs ≥ ucdp_rhs` hold.
pub fn ucdp_epsilon(
    budget: &PrivacyBudget,
    delta: f64,
    gamma: f64,
    n: usize,
    m: usize,
    r: f64,
) -> BoundReport {
    let a = budget.alpha();
    let domain_ok = delta > 0.0
        && delta < 1.0
        && gamma > 0.0
        && gamma <= 1.0
        && m >= 1
        && r > 0.0
        && n as f64 * gamma > 1.0;
    let ok = domain_ok && ucdp_lhs(a, n, gamma) >= ucdp_rhs(a, m, delta, r);
    BoundReport::new(
        "ucdp_epsilon",
        &[
            ("epsilon_p", budget.epsilon_p()),
            ("delta", delta),
            ("gamma", gamma),
            ("n", n as f64),
            ("m", m as f64),
            ("r", r),
        ],
        Some(ucdp_formula(a, delta, gamma, n, m, r)),
        ok,
    )
}

/// Quantities of the client-dropout guarantee.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutBounds {
    /// Lower concentration bound on the widowed fraction.
    pub gamma: f64,
    /// Upper concentration bound on the widowed fraction.
    pub gamma_prime: f64,
    /// Lower bound used for the survivor normalisation.
    pub theta: f64,
    pub mse_bound: f64,
    /// User-level epsilon evaluated at the effective `gamma`, with the
    /// sample-size inequality checked at `δ₁`.
    pub ucdp: BoundReport,
    pub preconditions_met: bool,
}

impl DropoutBounds {
    pub fn reports(&self, inputs: &[(&str, f64)]) -> Vec<BoundReport> {
        let ok = self.preconditions_met;
        vec![
            BoundReport::new("dropout_gamma", inputs, Some(self.gamma), true),
            BoundReport::new("dropout_gamma_prime", inputs, Some(self.gamma_prime), true),
            BoundReport::new("dropout_theta", inputs, Some(self.theta), true),
            BoundReport::new("dropout_mse_bound", inputs, Some(self.mse_bound), ok),
            BoundReport {
                name: "dropout_ucdp_epsilon".into(),
                ..self.ucdp.clone()
            },
        ]
    }
}

/// Dropout guarantee for independent per-round dropout with probability `p`.
pub fn dropout_bounds(
    p: f64,
    n: usize,
    delta: f64,
    delta1: f64,
    budget: &PrivacyBudget,
    r: f64,
    m: usize,
) -> Result<DropoutBounds> {
    if !(delta1 > 0.0 && delta1 < delta && delta < 1.0) {
        return domain(format!(
            "need 0 < delta1 < delta < 1, got delta1 = {delta1}, delta = {delta}"
        ));
    }
    if !(p > 0.0 && p < 1.0) {
        return domain(format!("dropout probability must lie in (0, 1), got {p}"));
    }
    if n == 0 || m == 0 {
        return domain("n and m must be positive");
    }
    check_radius(r)?;
    let a = budget.alpha();
    let nf = n as f64;
    let pq = p * (1.0 - p);
    let spread = (pq * (1.0 - 2.0 * pq) / (4.0 * (delta - delta1) * nf)).sqrt();
    let gamma = pq - spread;
    let gamma_prime = pq + spread;
    let theta = pq - (pq / ((delta - delta1) * nf)).sqrt();

    let s2 = std::f64::consts::SQRT_2;
    let mse_bound = gamma_prime * r * r * a * a / (nf * theta)
        + 8.0 * r * r * a * a * delta1
        + (1.0 - gamma) / (2.0 * nf * theta)
            * r
            * r
            * ((s2 - 1.0) * a + 1.0)
            * ((s2 + 1.0) * a - 1.0);

    let gamma_ok = gamma > 0.0 && gamma <= 1.0 && nf * gamma > 1.0;
    let size_ok = gamma_ok && ucdp_lhs(a, n, gamma) >= ucdp_rhs(a, m, delta1, r);
    let preconditions_met = size_ok && theta > 0.0;
    let ucdp = BoundReport::new(
        "ucdp_epsilon",
        &[
            ("epsilon_p", budget.epsilon_p()),
            ("delta", delta),
            ("delta1", delta1),
            ("gamma", gamma),
            ("n", nf),
            ("m", m as f64),
            ("r", r),
            ("p", p),
        ],
        Some(ucdp_formula(a, delta, gamma, n, m, r)),
        size_ok,
    );
    Ok(DropoutBounds {
        gamma,
        gamma_prime,
        theta,
        mse_bound,
        ucdp,
        preconditions_met,
    })
}

/// Worst-case likelihood ratio of a single output over inputs at the ends
/// of the clip interval.
pub fn pldp_ratio(budget: &PrivacyBudget, clip: &ClipSpec) -> f64 {
    let hi = marginal_q(budget, clip, clip.upper()).expect("upper end is clipped");
    let lo = marginal_q(budget, clip, clip.lower()).expect("lower end is clipped");
    (hi / lo).max((1.0 - lo) / (1.0 - hi))
}

/// Bits of the checksum appended to each common-randomness exchange.
pub const CR_CHECKSUM_BITS: u64 = 64;
/// Width of a dense (unquantized) parameter on the wire.
pub const DENSE_VALUE_BITS: u64 = 32;

/// Per-round communication for a fully participating, fully paired round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommCost {
    pub pairs: u64,
    /// Global model broadcast, 32 bits per parameter per client.
    pub downlink_model_bits: u64,
    /// One public key per client to the server.
    pub key_exchange_uplink_bits: u64,
    /// One server broadcast carrying all `n` public keys.
    pub key_exchange_downlink_bits: u64,
    /// One encrypted election coin per client.
    pub role_coin_bits: u64,
    /// `d·m` encrypted common-randomness bits per pair.
    pub cr_bits_per_pair: u64,
    /// Integrity checksum per non-empty exchange.
    pub cr_checksum_bits_per_pair: u64,
    /// `m` one-bit outputs per client.
    pub uplink_bits_per_client: u64,
    pub uplink_bits_total: u64,
    pub cr_bits_total: u64,
}

impl CommCost {
    /// Everything that crosses the simulated public channel.
    pub fn channel_total(&self) -> u64 {
        self.key_exchange_uplink_bits
            + self.key_exchange_downlink_bits
            + self.role_coin_bits
            + self.cr_bits_total
            + self.uplink_bits_total
    }
}

pub fn comm_cost(d: u32, m: usize, n: usize, key_bits: u64) -> CommCost {
    let (d, m, n) = (d as u64, m as u64, n as u64);
    let pairs = n / 2;
    let cr_bits_per_pair = d * m;
    let cr_checksum_bits_per_pair = if cr_bits_per_pair > 0 {
        CR_CHECKSUM_BITS
    } else {
        0
    };
    CommCost {
        pairs,
        downlink_model_bits: DENSE_VALUE_BITS * m * n,
        key_exchange_uplink_bits: n * key_bits,
        key_exchange_downlink_bits: n * key_bits,
        role_coin_bits: 2 * pairs,
        cr_bits_per_pair,
        cr_checksum_bits_per_pair,
        uplink_bits_per_client: m,
        uplink_bits_total: m * n,
        cr_bits_total: pairs * (cr_bits_per_pair + cr_checksum_bits_per_pair),
    }
}
