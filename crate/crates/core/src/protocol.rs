//! Per-round client protocol over a simulated, server-mediated public channel.
//!
//! A round runs in this order:
//!
//! 1. the server draws a uniform pairing of the clients;
//! 2. each client independently drops out with probability `p`;
//! 3. surviving clients publish a fresh Diffie-Hellman public key, which the
//!    server broadcasts;
//! 4. in every pair whose members both survived, the clients swap encrypted
//!    election coins and pick a lead and a follow;
//! 5. the lead samples `d` fair bits per parameter and sends them, encrypted
//!    and checksummed, to the follow.
//!
//! A survivor whose partner dropped is *widowed* and quantizes independently,
//! as does the singleton of an odd population. Every message is appended to
//! an audit log of `{round, from, to, kind, payload_bits}` records.
//!
//! The keystream cipher is a splitmix64 counter-mode construction. It is a
//! deterministic stand-in for a real cipher and is **not** cryptographically
//! secure.

use num_bigint::BigUint;
use num_traits::{One, Zero};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{domain, CorbinError, Result};
use crate::oracle::CR_CHECKSUM_BITS;
use crate::quant::CommonRandomness;
use crate::seed::{self, mix64, purpose, GOLDEN_GAMMA};

const MODP_2048_HEX: &str = "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74\
020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F14374FE1356D6D51C245\
E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7EDEE386BFB5A899FA5AE9F24117C4B1FE6\
49286651ECE45B3DC2007CB8A163BF0598DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD96\
1C62F356208552BB9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B\
E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF6955817183995497CEA956AE5\
15D2261898FA051015728E5A8AACAA68FFFFFFFFFFFFFFFF";

/// 64-bit safe prime `p = 2q + 1` for fast tests.
const TEST64_PRIME: u64 = 0xA4E4_E25A_2BF9_133F;

/// A multiplicative group modulo a prime, with a generator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DhGroup {
    name: String,
    p: BigUint,
    g: BigUint,
}

impl DhGroup {
    /// A custom group. `p` must pass a Miller-Rabin check and `g` must lie in
    /// `[2, p - 2]`.
    pub fn new(p: BigUint, g: BigUint) -> Result<Self> {
        let two = BigUint::from(2u32);
        if p < BigUint::from(5u32) || !is_probable_prime(&p) {
            return domain("group modulus is not a prime");
        }
        if g < two || g > &p - &two {
            return domain("generator must lie in [2, p - 2]");
        }
        Ok(Self {
            name: "custom".into(),
            p,
            g,
        })
    }

    /// The 2048-bit MODP group of RFC 3526 (group 14), generator 2.
    pub fn modp2048() -> Self {
        Self {
            name: "modp2048".into(),
            p: BigUint::parse_bytes(MODP_2048_HEX.as_bytes(), 16).expect("valid hex"),
            g: BigUint::from(2u32),
        }
    }

    /// A 64-bit safe-prime group; generator 4 spans the prime-order subgroup.
    pub fn test64() -> Self {
        Self {
            name: "test64".into(),
            p: BigUint::from(TEST64_PRIME),
            g: BigUint::from(4u32),
        }
    }

    /// The textbook group `p = 23`, `g = 5`.
    pub fn toy23() -> Self {
        Self {
            name: "toy23".into(),
            p: BigUint::from(23u32),
            g: BigUint::from(5u32),
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "modp2048" => Ok(Self::modp2048()),
            "test64" => Ok(Self::test64()),
            "toy23" => Ok(Self::toy23()),
            other => Err(CorbinError::Config(format!("unknown DH group '{other}'"))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn prime(&self) -> &BigUint {
        &self.p
    }

    pub fn generator(&self) -> &BigUint {
        &self.g
    }

    /// Size of a public key on the wire.
    pub fn key_bits(&self) -> u64 {
        self.p.bits()
    }

    fn is_degenerate(&self, x: &BigUint) -> bool {
        x.is_zero() || x.is_one() || *x >= &self.p - 1u32
    }

    /// Uniform exponent in `[2, p - 2]`.
    fn random_exponent<R: Rng + ?Sized>(&self, rng: &mut R) -> BigUint {
        let mut bytes = vec![0u8; self.p.bits().div_ceil(8) as usize + 8];
        rng.fill(bytes.as_mut_slice());
        let span = &self.p - 3u32;
        BigUint::from_bytes_be(&bytes) % span + 2u32
    }
}

const MR_BASES: [u32; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Miller-Rabin with the first twelve prime bases (deterministic below
/// 3.3·10²⁴).
pub fn is_probable_prime(n: &BigUint) -> bool {
    if *n < BigUint::from(2u32) {
        return false;
    }
    for &b in &MR_BASES {
        if *n == BigUint::from(b) {
            return true;
        }
        if (n % b).is_zero() {
            return false;
        }
    }
    let n_minus_1 = n - 1u32;
    let s = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> s;
    'bases: for &b in &MR_BASES {
        let mut x = BigUint::from(b).modpow(&d, n);
        if x.is_one() || x == n_minus_1 {
            continue;
        }
        for _ in 1..s {
            x = x.modpow(&BigUint::from(2u32), n);
            if x == n_minus_1 {
                continue 'bases;
            }
        }
        return false;
    }
    true
}

/// One party's ephemeral key pair.
#[derive(Debug, Clone)]
pub struct DhKeyPair {
    exponent: BigUint,
    public: BigUint,
}

impl DhKeyPair {
    /// Samples exponents until the public value is not 0, 1 or `p - 1`.
    pub fn generate<R: Rng + ?Sized>(group: &DhGroup, rng: &mut R) -> Self {
        loop {
            let exponent = group.random_exponent(rng);
            if let Ok(kp) = Self::from_exponent(group, exponent) {
                return kp;
            }
        }
    }

    pub fn from_exponent(group: &DhGroup, exponent: BigUint) -> Result<Self> {
        let public = group.g.modpow(&exponent, &group.p);
        if group.is_degenerate(&public) {
            return Err(CorbinError::Protocol("degenerate DH public value".into()));
        }
        Ok(Self { exponent, public })
    }

    pub fn public(&self) -> &BigUint {
        &self.public
    }

    /// `peer^a mod p`, rejecting degenerate peer values.
    pub fn agree(&self, group: &DhGroup, peer_public: &BigUint) -> Result<SharedSecret> {
        if group.is_degenerate(peer_public) {
            return Err(CorbinError::Protocol("degenerate peer public value".into()));
        }
        let s = peer_public.modpow(&self.exponent, &group.p);
        let width = group.p.bits().div_ceil(8) as usize;
        let raw = s.to_bytes_be();
        let mut bytes = vec![0u8; width - raw.len()];
        bytes.extend_from_slice(&raw);
        Ok(SharedSecret(bytes))
    }
}

/// `g^{ab} mod p`, big-endian, padded to the modulus width.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SharedSecret(Vec<u8>);

impl SharedSecret {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn to_biguint(&self) -> BigUint {
        BigUint::from_bytes_be(&self.0)
    }
}

/// Runs a full two-party exchange and returns each side's secret.
pub fn dh_exchange<Ra: Rng + ?Sized, Rb: Rng + ?Sized>(
    group: &DhGroup,
    rng_a: &mut Ra,
    rng_b: &mut Rb,
) -> Result<(SharedSecret, SharedSecret)> {
    let a = DhKeyPair::generate(group, rng_a);
    let b = DhKeyPair::generate(group, rng_b);
    Ok((a.agree(group, b.public())?, b.agree(group, a.public())?))
}

/// Counter-mode keystream over splitmix64.
///
/// `key = fold(secret bytes)`; block `i` is `mix64(key ⊕ mix64(nonce) +
/// (i + 1)·GOLDEN_GAMMA)`. NOT production cryptography.
pub fn keystream(secret: &SharedSecret, nonce: u64, length_bits: usize) -> Vec<u64> {
    let key = secret
        .as_bytes()
        .chunks(8)
        .fold(0x6A09_E667_F3BC_C908u64, |acc, chunk| {
            let mut word = [0u8; 8];
            word[..chunk.len()].copy_from_slice(chunk);
            mix64(acc ^ u64::from_be_bytes(word))
        });
    let base = key ^ mix64(nonce);
    let blocks = length_bits.div_ceil(64);
    let mut out: Vec<u64> = (0..blocks as u64)
        .map(|i| mix64(base.wrapping_add((i + 1).wrapping_mul(GOLDEN_GAMMA))))
        .collect();
    mask_tail(&mut out, length_bits);
    out
}

fn mask_tail(bits: &mut [u64], length_bits: usize) {
    let rem = length_bits % 64;
    if rem != 0 {
        if let Some(last) = bits.last_mut() {
            *last &= !0u64 << (64 - rem);
        }
    }
}

pub fn xor_in_place(data: &mut [u64], stream: &[u64]) {
    for (d, s) in data.iter_mut().zip(stream) {
        *d ^= s;
    }
}

/// 64-bit integrity tag of a packed bit string.
pub fn checksum64(bits: &[u64], length_bits: usize) -> u64 {
    bits.iter().fold(mix64(length_bits as u64), |acc, &w| {
        mix64(acc.rotate_left(17) ^ w)
    })
}

/// A uniform pairing of `[0, n)`; clients not in any pair quantize alone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingPlan {
    pub pairs: Vec<(usize, usize)>,
    pub unpaired: Vec<usize>,
    partner: Vec<Option<usize>>,
}

impl PairingPlan {
    /// Builds a plan from explicit pairs, checking it partitions `[0, n)`.
    pub fn new(n: usize, pairs: Vec<(usize, usize)>, unpaired: Vec<usize>) -> Result<Self> {
        let mut partner = vec![None; n];
        let mut seen = vec![false; n];
        let mut mark = |i: usize| -> Result<()> {
            if i >= n || seen[i] {
                return domain(format!("index {i} is out of range or repeated"));
            }
            seen[i] = true;
            Ok(())
        };
        for &(a, b) in &pairs {
            mark(a)?;
            mark(b)?;
            partner[a] = Some(b);
            partner[b] = Some(a);
        }
        for &u in &unpaired {
            mark(u)?;
        }
        if seen.iter().any(|s| !s) {
            return domain("pairing does not cover every client");
        }
        Ok(Self {
            pairs,
            unpaired,
            partner,
        })
    }

    pub fn n(&self) -> usize {
        self.partner.len()
    }

    pub fn partner(&self, i: usize) -> Option<usize> {
        self.partner.get(i).copied().flatten()
    }

    /// The lone client of an odd, fully paired population.
    pub fn singleton(&self) -> Option<usize> {
        match self.unpaired.as_slice() {
            [one] => Some(*one),
            _ => None,
        }
    }
}

/// Uniform perfect matching (one uniform singleton when `n` is odd), by
/// shuffling and pairing neighbours.
pub fn generate_pairing<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<PairingPlan> {
    if n < 2 {
        return domain(format!("pairing needs at least two clients, got {n}"));
    }
    generate_partial_pairing(n, 0, rng)
}

/// A uniform random set of `solo` clients stays unpaired; the rest are
/// matched uniformly, with any odd leftover also unpaired.
pub fn generate_partial_pairing<R: Rng + ?Sized>(
    n: usize,
    solo: usize,
    rng: &mut R,
) -> Result<PairingPlan> {
    if solo > n {
        return domain(format!("cannot leave {solo} of {n} clients unpaired"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let (solos, rest) = order.split_at(solo);
    let mut unpaired = solos.to_vec();
    let pairs = rest
        .chunks_exact(2)
        .map(|c| (c[0], c[1]))
        .collect::<Vec<_>>();
    if rest.len() % 2 == 1 {
        unpaired.push(rest[rest.len() - 1]);
    }
    PairingPlan::new(n, pairs, unpaired)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleAssignment {
    pub lead: usize,
    pub follow: usize,
}

/// Equal coins make the smaller index lead, unequal coins the larger.
/// `coin_i` belongs to `pair.0`.
pub fn elect_roles(pair: (usize, usize), coin_i: bool, coin_j: bool) -> RoleAssignment {
    let (lo, hi) = (pair.0.min(pair.1), pair.0.max(pair.1));
    if coin_i == coin_j {
        RoleAssignment {
            lead: lo,
            follow: hi,
        }
    } else {
        RoleAssignment {
            lead: hi,
            follow: lo,
        }
    }
}

/// Per-round participation flags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipationMask {
    pub participating: Vec<bool>,
}

impl ParticipationMask {
    pub fn all(n: usize) -> Self {
        Self {
            participating: vec![true; n],
        }
    }

    pub fn participants(&self) -> usize {
        self.participating.iter().filter(|&&p| p).count()
    }

    pub fn dropouts(&self) -> usize {
        self.participating.len() - self.participants()
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.participating[i]
    }

    /// Survivors whose partner in `plan` dropped out.
    pub fn widowed(&self, plan: &PairingPlan) -> Vec<usize> {
        let mut out: Vec<usize> = plan
            .pairs
            .iter()
            .filter_map(
                |&(a, b)| match (self.participating[a], self.participating[b]) {
                    (true, false) => Some(a),
                    (false, true) => Some(b),
                    _ => None,
                },
            )
            .collect();
        out.sort_unstable();
        out
    }
}

/// Each client participates independently with probability `1 - p`.
pub fn simulate_dropout<R: Rng + ?Sized>(
    n: usize,
    p_dropout: f64,
    rng: &mut R,
) -> Result<ParticipationMask> {
    if !(0.0..=1.0).contains(&p_dropout) {
        return domain(format!(
            "dropout probability must lie in [0, 1], got {p_dropout}"
        ));
    }
    Ok(ParticipationMask {
        participating: (0..n).map(|_| !rng.random_bool(p_dropout)).collect(),
    })
}

/// A party on the public channel. Serialized as the client index or
/// `"server"`; a message from the server to the server is a broadcast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Endpoint {
    Client(usize),
    Server,
}

impl Endpoint {
    pub fn server() -> Self {
        Endpoint::Server
    }
}

impl Serialize for Endpoint {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Endpoint::Client(i) => s.serialize_u64(*i as u64),
            Endpoint::Server => s.serialize_str("server"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    DhPublic,
    RoleCoin,
    CrCiphertext,
    Update,
}

/// One line of the audit log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditRecord {
    pub round: u64,
    pub from: Endpoint,
    pub to: Endpoint,
    pub kind: MessageKind,
    pub payload_bits: u64,
}

/// In-process public channel. Everything sent is visible to the server and
/// logged; ciphertexts are optionally retained for leakage audits.
#[derive(Debug, Default)]
pub struct Channel {
    records: Vec<AuditRecord>,
    retain_ciphertexts: bool,
    ciphertexts: Vec<(Vec<u64>, usize)>,
}

impl Channel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn retaining_ciphertexts() -> Self {
        Self {
            retain_ciphertexts: true,
            ..Self::default()
        }
    }

    pub fn post(&mut self, round: u64, from: Endpoint, to: Endpoint, kind: MessageKind, bits: u64) {
        self.records.push(AuditRecord {
            round,
            from,
            to,
            kind,
            payload_bits: bits,
        });
    }

    fn post_ciphertext(&mut self, round: u64, from: usize, to: usize, body: &[u64], bits: usize) {
        self.post(
            round,
            Endpoint::Client(from),
            Endpoint::Client(to),
            MessageKind::CrCiphertext,
            bits as u64,
        );
        if self.retain_ciphertexts {
            self.ciphertexts.push((body.to_vec(), bits));
        }
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    /// Removes and returns the records logged so far.
    pub fn drain(&mut self) -> Vec<AuditRecord> {
        std::mem::take(&mut self.records)
    }

    /// Retained `(ciphertext, length_bits)` pairs, payload then checksum.
    pub fn ciphertexts(&self) -> &[(Vec<u64>, usize)] {
        &self.ciphertexts
    }

    pub fn total_bits(&self) -> u64 {
        self.records.iter().map(|r| r.payload_bits).sum()
    }
}

/// Writes records as newline-delimited JSON.
pub fn write_ndjson<W: std::io::Write>(records: &[AuditRecord], out: &mut W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

const NONCE_COIN: u64 = 0x436f_696e;
const NONCE_CR: u64 = 0x4352;

fn nonce(kind: u64, round: u64, sender: usize) -> u64 {
    seed::derive_seed(kind, &[round, sender as u64])
}

/// Lead samples `d·m` fair bits, appends a checksum, encrypts under its key
/// and sends them to the follow, which decrypts under its own key. The two
/// keys are equal unless the exchange is faulted, in which case the checksum
/// fails and a protocol error is returned.
#[allow(clippy::too_many_arguments)]
pub fn share_common_randomness<R: Rng + ?Sized>(
    roles: RoleAssignment,
    d: u32,
    m: usize,
    rng_lead: &mut R,
    lead_key: &SharedSecret,
    follow_key: &SharedSecret,
    round: u64,
    channel: &mut Channel,
) -> Result<(CommonRandomness, CommonRandomness)> {
    let plain = CommonRandomness::sample(d, m, rng_lead)?;
    let len = plain.total_bits() as usize;
    if len == 0 {
        return Ok((plain.clone(), plain));
    }
    let mut body = plain.to_bitstream();
    body.push(checksum64(&body, len));
    let total = len.div_ceil(64) * 64 + CR_CHECKSUM_BITS as usize;
    let n = nonce(NONCE_CR, round, roles.lead);

    let mut wire = body;
    xor_in_place(&mut wire, &keystream(lead_key, n, total));
    channel.post_ciphertext(
        round,
        roles.lead,
        roles.follow,
        &wire,
        len + CR_CHECKSUM_BITS as usize,
    );

    let mut recv = wire;
    xor_in_place(&mut recv, &keystream(follow_key, n, total));
    let tag = recv.pop().expect("checksum word present");
    if checksum64(&recv, len) != tag {
        return Err(CorbinError::Protocol(format!(
            "common randomness checksum mismatch between clients {} and {}",
            roles.lead, roles.follow
        )));
    }
    let received = CommonRandomness::from_bitstream(d, m, &recv)?;
    Ok((plain, received))
}

/// Which quantizer a client runs this round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientRole {
    Dropped,
    /// Independent quantization: unpaired, widowed, or assigned by the hybrid.
    Solo,
    Lead {
        partner: usize,
    },
    Follow {
        partner: usize,
    },
}

/// Protocol settings for one round.
#[derive(Debug, Clone)]
pub struct ProtocolConfig {
    pub n: usize,
    /// Parameters per client.
    pub m: usize,
    /// Shared bits per parameter.
    pub d: u32,
    /// Clients assigned to independent quantization before pairing.
    pub solo: usize,
    pub p_dropout: f64,
    pub group: DhGroup,
}

/// What every client knows after the protocol phase of a round.
#[derive(Debug, Clone)]
pub struct RoundSetup {
    pub round: u64,
    pub plan: PairingPlan,
    pub mask: ParticipationMask,
    pub roles: Vec<ClientRole>,
    pub elections: Vec<RoleAssignment>,
    /// Common randomness held by each paired, participating client.
    pub common: Vec<Option<CommonRandomness>>,
    pub widowed: Vec<usize>,
}

impl RoundSetup {
    /// A round without pairing: every active client quantizes alone.
    pub fn solo_round(round: u64, mask: ParticipationMask) -> Self {
        let n = mask.participating.len();
        let roles = (0..n)
            .map(|i| {
                if mask.is_active(i) {
                    ClientRole::Solo
                } else {
                    ClientRole::Dropped
                }
            })
            .collect();
        Self {
            round,
            plan: PairingPlan::new(n, vec![], (0..n).collect()).expect("trivial plan"),
            mask,
            roles,
            elections: vec![],
            common: vec![None; n],
            widowed: vec![],
        }
    }
}

/// Runs the protocol phase of one round. All randomness is derived from
/// `(master_seed, purpose, round, client)` paths.
pub fn run_round(
    cfg: &ProtocolConfig,
    master_seed: u64,
    round: u64,
    channel: &mut Channel,
) -> Result<RoundSetup> {
    let n = cfg.n;
    let mut pair_rng = seed::stream_rng(master_seed, &[purpose::PAIRING, round]);
    let plan = generate_partial_pairing(n, cfg.solo.min(n), &mut pair_rng)?;
    let mut drop_rng = seed::stream_rng(master_seed, &[purpose::DROPOUT, round]);
    let mask = simulate_dropout(n, cfg.p_dropout, &mut drop_rng)?;

    let keys: Vec<Option<DhKeyPair>> = (0..n)
        .map(|i| {
            let needs_key = mask.is_active(i) && plan.partner(i).is_some_and(|j| mask.is_active(j));
            needs_key.then(|| {
                let mut rng = seed::stream_rng(master_seed, &[purpose::DH, round, i as u64]);
                DhKeyPair::generate(&cfg.group, &mut rng)
            })
        })
        .collect();
    let key_bits = cfg.group.key_bits();
    let publishers = keys.iter().filter(|k| k.is_some()).count() as u64;
    for (i, _) in keys.iter().enumerate().filter(|(_, k)| k.is_some()) {
        channel.post(
            round,
            Endpoint::Client(i),
            Endpoint::server(),
            MessageKind::DhPublic,
            key_bits,
        );
    }
    if publishers > 0 {
        channel.post(
            round,
            Endpoint::server(),
            Endpoint::server(),
            MessageKind::DhPublic,
            publishers * key_bits,
        );
    }

    let mut roles: Vec<ClientRole> = (0..n)
        .map(|i| {
            if mask.is_active(i) {
                ClientRole::Solo
            } else {
                ClientRole::Dropped
            }
        })
        .collect();
    let mut common = vec![None; n];
    let mut elections = Vec::new();
    for &(i, j) in &plan.pairs {
        let (Some(ki), Some(kj)) = (&keys[i], &keys[j]) else {
            continue;
        };
        let secret_i = ki.agree(&cfg.group, kj.public())?;
        let secret_j = kj.agree(&cfg.group, ki.public())?;

        let coin = |c: usize| {
            seed::stream_rng(master_seed, &[purpose::ROLE_COIN, round, c as u64]).random_bool(0.5)
        };
        let (yi, yj) = (coin(i), coin(j));
        // Each coin travels encrypted under the pair key.
        let wire_i = (yi as u64) ^ (keystream(&secret_i, nonce(NONCE_COIN, round, i), 1)[0] >> 63);
        let wire_j = (yj as u64) ^ (keystream(&secret_j, nonce(NONCE_COIN, round, j), 1)[0] >> 63);
        channel.post(
            round,
            Endpoint::Client(i),
            Endpoint::Client(j),
            MessageKind::RoleCoin,
            1,
        );
        channel.post(
            round,
            Endpoint::Client(j),
            Endpoint::Client(i),
            MessageKind::RoleCoin,
            1,
        );
        let got_i = wire_i ^ (keystream(&secret_j, nonce(NONCE_COIN, round, i), 1)[0] >> 63) == 1;
        let got_j = wire_j ^ (keystream(&secret_i, nonce(NONCE_COIN, round, j), 1)[0] >> 63) == 1;
        // Each side elects from its own coin and the one it received.
        let at_i = elect_roles((i, j), yi, got_j);
        let at_j = elect_roles((i, j), got_i, yj);
        if at_i != at_j {
            return Err(CorbinError::Protocol(format!(
                "clients {i} and {j} disagree on roles"
            )));
        }
        let roles_ij = at_i;
        let (lead_key, follow_key) = if roles_ij.lead == i {
            (&secret_i, &secret_j)
        } else {
            (&secret_j, &secret_i)
        };
        let mut cr_rng = seed::stream_rng(
            master_seed,
            &[purpose::COMMON_RANDOMNESS, round, roles_ij.lead as u64],
        );
        let (at_lead, at_follow) = share_common_randomness(
            roles_ij,
            cfg.d,
            cfg.m,
            &mut cr_rng,
            lead_key,
            follow_key,
            round,
            channel,
        )?;
        roles[roles_ij.lead] = ClientRole::Lead {
            partner: roles_ij.follow,
        };
        roles[roles_ij.follow] = ClientRole::Follow {
            partner: roles_ij.lead,
        };
        common[roles_ij.lead] = Some(at_lead);
        common[roles_ij.follow] = Some(at_follow);
        elections.push(roles_ij);
    }
    let widowed = mask.widowed(&plan);
    Ok(RoundSetup {
        round,
        plan,
        mask,
        roles,
        elections,
        common,
        widowed,
    })
}
