//! Federated rounds on a toy logistic-regression task.
//!
//! Each round the server derives per-layer clip specs from the global model,
//! runs the protocol phase (pairing, dropout, keys, common randomness),
//! clients train locally and obfuscate, and the server averages the decoded
//! uploads of the survivors and blends them into the global model.

use std::io::Read;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{gaussian_mechanism, laplace_mechanism, NoiseConfig};
use crate::dme::aug_solo_count;
use crate::error::{domain, CorbinError, Result};
use crate::oracle::DENSE_VALUE_BITS;
use crate::protocol::{
    run_round, AuditRecord, Channel, ClientRole, DhGroup, Endpoint, MessageKind, ProtocolConfig,
    RoundSetup,
};
use crate::quant::{
    corbinq_follow, corbinq_lead, ldpq, ClipSpec, PrivacyBudget, Sign, MAX_BITS_PER_PARAM,
};
use crate::seed::{self, purpose};

// ---------------------------------------------------------------------------
// Model

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub id: String,
    pub values: Vec<f64>,
}

/// Model parameters grouped into named layers. The layout is fixed for the
/// life of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVector {
    layers: Vec<Layer>,
}

impl ModelVector {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.iter().any(|l| l.values.is_empty()) {
            return domain("model layers must be non-empty");
        }
        if layers.is_empty() {
            return domain("a model needs at least one parameter");
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Total parameter count `m`.
    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.values.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.values.iter().copied())
            .collect()
    }

    /// A model with this layout and the given flat values.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.len() {
            return domain(format!(
                "expected {} values, got {}",
                self.len(),
                flat.len()
            ));
        }
        let mut rest = flat;
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let (head, tail) = rest.split_at(l.values.len());
                rest = tail;
                Layer {
                    id: l.id.clone(),
                    values: head.to_vec(),
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn same_layout(&self, other: &ModelVector) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.id == b.id && a.values.len() == b.values.len())
    }

    /// Expands one value per layer to one value per parameter.
    pub fn per_param<T: Copy>(&self, per_layer: &[T]) -> Vec<T> {
        self.layers
            .iter()
            .zip(per_layer)
            .flat_map(|(l, &v)| std::iter::repeat_n(v, l.values.len()))
            .collect()
    }
}

/// Logistic regression with a single layer `linear = [w_1..w_dim, bias]`.
pub fn logistic_model<R: Rng + ?Sized>(
    dim: usize,
    init_scale: f64,
    rng: &mut R,
) -> Result<ModelVector> {
    if dim == 0 {
        return domain("feature dimension must be positive");
    }
    let normal = Normal::new(0.0, init_scale).map_err(|e| CorbinError::Domain(e.to_string()))?;
    ModelVector::new(vec![Layer {
        id: "linear".into(),
        values: (0..=dim).map(|_| normal.sample(rng)).collect(),
    }])
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn logit(params: &[f64], x: &[f64]) -> f64 {
    let (w, b) = params.split_at(x.len());
    w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b[0]
}

// ---------------------------------------------------------------------------
// Data

/// Row-major features with binary labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if dim == 0 {
            return Err(CorbinError::Data(
                "feature dimension must be positive".into(),
            ));
        }
        if features.len() != dim * labels.len() {
            return Err(CorbinError::Data(format!(
                "{} feature values do not fill {} rows of width {dim}",
                features.len(),
                labels.len()
            )));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(CorbinError::Data("labels must be 0 or 1".into()));
        }
        Ok(Self {
            dim,
            features,
            labels,
        })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            features: vec![],
            labels: vec![],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> (&[f64], u8) {
        (
            &self.features[i * self.dim..(i + 1) * self.dim],
            self.labels[i],
        )
    }

    /// Two isotropic unit-variance Gaussian blobs centred at `±(sep/2)·u`,
    /// `u = (1, …, 1)/√dim`, with balanced random labels.
    pub fn synthetic_blobs<R: Rng + ?Sized>(
        samples: usize,
        dim: usize,
        separation: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(CorbinError::Data(
                "feature dimension must be positive".into(),
            ));
        }
        let shift = separation / 2.0 / (dim as f64).sqrt();
        let mut features = Vec::with_capacity(samples * dim);
        let mut labels = Vec::with_capacity(samples);
        for _ in 0..samples {
            let y = rng.random_bool(0.5);
            let sign = if y { 1.0 } else { -1.0 };
            for _ in 0..dim {
                let e: f64 = StandardNormal.sample(rng);
                features.push(sign * shift + e);
            }
            labels.push(y as u8);
        }
        Self::new(dim, features, labels)
    }

    /// Reads a headerless CSV whose last column is a 0/1 label.
    pub fn from_csv<Rd: Read>(reader: Rd) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut dim = None;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| CorbinError::Data(e.to_string()))?;
            if rec.len() < 2 {
                return Err(CorbinError::Data(format!(
                    "row {}: need features and a label",
                    line + 1
                )));
            }
            let width = rec.len() - 1;
            if *dim.get_or_insert(width) != width {
                return Err(CorbinError::Data(format!("row {}: ragged row", line + 1)));
            }
            for field in rec.iter().take(width) {
                let v: f64 = field.parse().map_err(|_| {
                    CorbinError::Data(format!("row {}: bad number {field:?}", line + 1))
                })?;
                features.push(v);
            }
            let label = &rec[width];
            let y: u8 = label
                .parse()
                .map_err(|_| CorbinError::Data(format!("row {}: bad label {label:?}", line + 1)))?;
            labels.push(y);
        }
        let Some(dim) = dim else {
            return Err(CorbinError::Data("no rows".into()));
        };
        Self::new(dim, features, labels)
    }

    fn subset(&self, idx: &[usize]) -> Self {
        let mut features = Vec::with_capacity(idx.len() * self.dim);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            let (x, y) = self.row(i);
            features.extend_from_slice(x);
            labels.push(y);
        }
        Self {
            dim: self.dim,
            features,
            labels,
        }
    }

    pub fn accuracy(&self, model: &ModelVector) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let params = model.flat();
        let correct = (0..self.len())
            .filter(|&i| {
                let (x, y) = self.row(i);
                (logit(&params, x) > 0.0) == (y == 1)
            })
            .count();
        correct as f64 / self.len() as f64
    }

    /// Mean logistic loss.
    pub fn loss(&self, model: &ModelVector) -> f64 {
        let params = model.flat();
        let total: f64 = (0..self.len())
            .map(|i| {
                let (x, y) = self.row(i);
                let t = logit(&params, x);
                // log(1 + e^t) - y·t, written to avoid overflow.
                t.max(0.0) + (-t.abs()).exp().ln_1p() - y as f64 * t
            })
            .sum();
        total / self.len() as f64
    }
}

/// Client shards plus held-out validation and test sets.
#[derive(Debug, Clone)]
pub struct FederatedData {
    pub shards: Vec<Dataset>,
    pub validation: Dataset,
    pub test: Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub samples_per_client: usize,
    pub dim: usize,
    pub separation: f64,
    pub validation_size: usize,
    pub test_size: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            samples_per_client: 40,
            dim: 10,
            separation: 5.0,
            validation_size: 500,
            test_size: 2000,
        }
    }
}

impl FederatedData {
    pub fn synthetic(cfg: &DataConfig, n: usize, seed: u64) -> Result<Self> {
        let gen = |tag: u64, size: usize| {
            let mut rng = seed::stream_rng(seed, &[purpose::DATA, tag]);
            Dataset::synthetic_blobs(size, cfg.dim, cfg.separation, &mut rng)
        };
        let shards = (0..n)
            .map(|i| gen(i as u64, cfg.samples_per_client))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            shards,
            validation: gen(u64::MAX - 1, cfg.validation_size)?,
            test: gen(u64::MAX, cfg.test_size)?,
        })
    }

    /// Uniform random split of a pooled dataset.
    pub fn split(
        pool: &Dataset,
        n: usize,
        validation_size: usize,
        test_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if n == 0 {
            return domain("need at least one client");
        }
        if validation_size + test_size > pool.len() {
            return Err(CorbinError::Data(format!(
                "{} rows cannot cover {validation_size} validation and {test_size} test rows",
                pool.len()
            )));
        }
        let mut idx: Vec<usize> = (0..pool.len()).collect();
        idx.shuffle(&mut seed::stream_rng(seed, &[purpose::DATA]));
        let (val, rest) = idx.split_at(validation_size);
        let (test, train) = rest.split_at(test_size);
        let shards = (0..n)
            .map(|i| {
                let mine: Vec<usize> = train.iter().skip(i).step_by(n).copied().collect();
                pool.subset(&mine)
            })
            .collect();
        Ok(Self {
            shards,
            validation: pool.subset(val),
            test: pool.subset(test),
        })
    }
}

// ---------------------------------------------------------------------------
// Local training

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            lr: 0.3,
            batch_size: 16,
        }
    }
}

/// Mini-batch SGD on the logistic loss, starting from `model`.
pub fn local_update<R: Rng + ?Sized>(
    model: &ModelVector,
    shard: &Dataset,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<ModelVector> {
    if shard.is_empty() {
        return Err(CorbinError::Data("empty shard".into()));
    }
    if model.len() != shard.dim() + 1 {
        return domain(format!(
            "model has {} parameters, data needs {}",
            model.len(),
            shard.dim() + 1
        ));
    }
    if cfg.batch_size == 0 || !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
        return domain("batch size must be positive and the learning rate finite and non-negative");
    }
    let dim = shard.dim();
    let mut params = model.flat();
    let mut grad = vec![0.0; dim + 1];
    let mut order: Vec<usize> = (0..shard.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let (x, y) = shard.row(i);
                let err = sigmoid(logit(&params, x)) - y as f64;
                for (g, xi) in grad.iter_mut().zip(x) {
                    *g += err * xi;
                }
                grad[dim] += err;
            }
            let step = cfg.lr / batch.len() as f64;
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= step * g;
            }
        }
    }
    model.with_flat(&params)
}

// ---------------------------------------------------------------------------
// Clipping

/// Lower bound on a derived clip radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ClipFloor {
    Absolute(f64),
    /// Fraction of the layer scale `max(max |v|, 1)`.
    Relative(f64),
}

impl Default for ClipFloor {
    fn default() -> Self {
        ClipFloor::Relative(1e-3)
    }
}

/// Per layer, `c = (max + min)/2` and `r = max(floor, (max − min)/2)` over
/// every reference model.
pub fn derive_clipspecs(references: &[&ModelVector], floor: ClipFloor) -> Result<Vec<ClipSpec>> {
    let Some(first) = references.first() else {
        return domain("clip derivation needs at least one reference model");
    };
    if references.iter().any(|m| !m.same_layout(first)) {
        return domain("reference models disagree on layout");
    }
    (0..first.layers.len())
        .map(|k| {
            let values = references
                .iter()
                .flat_map(|m| m.layers[k].values.iter().copied());
            let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
            if !(lo.is_finite() && hi.is_finite()) {
                return domain(format!(
                    "layer {} has non-finite values",
                    first.layers[k].id
                ));
            }
            let floor_r = match floor {
                ClipFloor::Absolute(r) => r,
                ClipFloor::Relative(f) => f * lo.abs().max(hi.abs()).max(1.0),
            };
            if !(floor_r > 0.0 && floor_r.is_finite()) {
                return domain(format!("clip floor must be positive, got {floor_r}"));
            }
            ClipSpec::new((hi + lo) / 2.0, ((hi - lo) / 2.0).max(floor_r))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Mechanisms

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MechanismKind {
    None,
    Ldpfl,
    Corbin,
    AugCorbin,
    Gaussian,
    Laplace,
}

impl MechanismKind {
    pub const ALL: [MechanismKind; 6] = [
        MechanismKind::None,
        MechanismKind::Ldpfl,
        MechanismKind::Corbin,
        MechanismKind::AugCorbin,
        MechanismKind::Gaussian,
        MechanismKind::Laplace,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MechanismKind::None => "none",
            MechanismKind::Ldpfl => "ldpfl",
            MechanismKind::Corbin => "corbin",
            MechanismKind::AugCorbin => "augcorbin",
            MechanismKind::Gaussian => "gaussian",
            MechanismKind::Laplace => "laplace",
        }
    }

    pub fn is_quantized(&self) -> bool {
        matches!(
            self,
            MechanismKind::Ldpfl | MechanismKind::Corbin | MechanismKind::AugCorbin
        )
    }

    pub fn uses_pairs(&self) -> bool {
        matches!(self, MechanismKind::Corbin | MechanismKind::AugCorbin)
    }
}

impl FromStr for MechanismKind {
    type Err = CorbinError;

    fn from_str(s: &str) -> Result<Self> {
        MechanismKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| CorbinError::Config(format!("unknown mechanism {s:?}")))
    }
}

impl std::fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismConfig {
    pub kind: MechanismKind,
    /// `f64::INFINITY` selects quantization without privacy.
    pub epsilon_p: f64,
    /// Shared bits per parameter; read only by the paired mechanisms.
    pub d: u32,
    /// Share of independent clients; read only by the hybrid.
    pub gamma: f64,
    /// Read only by the Gaussian mechanism.
    pub delta: f64,
}

impl MechanismConfig {
    pub fn new(kind: MechanismKind, epsilon_p: f64) -> Self {
        Self {
            kind,
            epsilon_p,
            d: 0,
            gamma: 0.0,
            delta: 1e-5,
        }
    }

    pub fn with_d(mut self, d: u32) -> Self {
        self.d = d;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == MechanismKind::None {
            return Ok(());
        }
        let budget = self.budget()?;
        if self.kind.uses_pairs() && self.d > MAX_BITS_PER_PARAM {
            return domain(format!(
                "d must be at most {MAX_BITS_PER_PARAM}, got {}",
                self.d
            ));
        }
        if self.kind == MechanismKind::AugCorbin && !(0.0..=1.0).contains(&self.gamma) {
            return domain(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if matches!(self.kind, MechanismKind::Gaussian | MechanismKind::Laplace)
            && budget.is_non_private()
        {
            return domain(format!("{} needs a finite epsilon", self.kind));
        }
        if self.kind == MechanismKind::Gaussian && !(self.delta > 0.0 && self.delta < 1.0) {
            return domain(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        Ok(())
    }

    pub fn budget(&self) -> Result<PrivacyBudget> {
        PrivacyBudget::new(self.epsilon_p)
    }

    /// Shared bits per parameter the protocol must move.
    pub fn protocol_bits(&self) -> u32 {
        if self.kind.uses_pairs() {
            self.d
        } else {
            0
        }
    }

    /// Clients kept out of pairing before the round starts.
    pub fn solo_count(&self, n: usize) -> Result<usize> {
        match self.kind {
            MechanismKind::Corbin => Ok(0),
            MechanismKind::AugCorbin => aug_solo_count(n, self.gamma),
            _ => Ok(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    Signs(Vec<Sign>),
    Dense(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientUpload {
    pub client: usize,
    pub payload: Payload,
}

impl ClientUpload {
    /// Real values seen by the server; `specs` holds one clip spec per
    /// parameter.
    pub fn decode(&self, specs: &[ClipSpec], budget: &PrivacyBudget) -> Vec<f64> {
        match &self.payload {
            Payload::Dense(v) => v.clone(),
            Payload::Signs(s) => s
                .iter()
                .zip(specs)
                .map(|(sign, c)| c.center() + sign.value() * c.radius() * budget.alpha())
                .collect(),
        }
    }

    pub fn bits(&self) -> u64 {
        match &self.payload {
            Payload::Signs(s) => s.len() as u64,
            Payload::Dense(v) => DENSE_VALUE_BITS * v.len() as u64,
        }
    }
}

/// Obfuscates each client's local model. `updates[i]` is `None` for clients
/// that did not train this round; a paired client whose partner has no
/// update quantizes alone. `specs` holds one clip spec per layer.
pub fn apply_mechanism(
    config: &MechanismConfig,
    updates: &[Option<ModelVector>],
    specs: &[ClipSpec],
    setup: &RoundSetup,
    master_seed: u64,
) -> Result<Vec<Option<ClientUpload>>> {
    config.validate()?;
    let template = updates.iter().flatten().next();
    let Some(template) = template else {
        return Ok(vec![None; updates.len()]);
    };
    if specs.len() != template.layers.len() {
        return domain(format!(
            "expected {} clip specs, got {}",
            template.layers.len(),
            specs.len()
        ));
    }
    let param_specs = template.per_param(specs);
    let budget = if config.kind == MechanismKind::None {
        PrivacyBudget::non_private()
    } else {
        config.budget()?
    };
    let d = config.protocol_bits();

    (0..updates.len())
        .into_par_iter()
        .map(|i| {
            let Some(update) = &updates[i] else {
                return Ok(None);
            };
            if !update.same_layout(template) {
                return domain(format!("client {i} sent a model with a different layout"));
            }
            let raw = update.flat();
            if config.kind == MechanismKind::None {
                return Ok(Some(ClientUpload {
                    client: i,
                    payload: Payload::Dense(raw),
                }));
            }
            let w: Vec<f64> = raw
                .iter()
                .zip(&param_specs)
                .map(|(&x, c)| c.clip(x))
                .collect();
            let mut rng =
                seed::stream_rng(master_seed, &[purpose::QUANTIZE, setup.round, i as u64]);
            let payload = match config.kind {
                MechanismKind::Gaussian | MechanismKind::Laplace => {
                    let noisy = w
                        .iter()
                        .zip(&param_specs)
                        .map(|(&x, c)| {
                            let sens = 2.0 * c.radius();
                            if config.kind == MechanismKind::Gaussian {
                                let cfg =
                                    NoiseConfig::gaussian(sens, config.epsilon_p, config.delta)?;
                                gaussian_mechanism(x, &cfg, &mut rng)
                            } else {
                                let cfg = NoiseConfig::laplace(sens, config.epsilon_p)?;
                                laplace_mechanism(x, &cfg, &mut rng)
                            }
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Payload::Dense(noisy)
                }
                _ => {
                    let paired = match setup.roles.get(i) {
                        Some(ClientRole::Lead { partner })
                        | Some(ClientRole::Follow { partner })
                            if updates.get(*partner).is_some_and(|u| u.is_some()) =>
                        {
                            Some(setup.roles[i].clone())
                        }
                        _ => None,
                    };
                    let signs =
                        match paired {
                            Some(role) => {
                                let cr = setup.common.get(i).and_then(|c| c.as_ref()).ok_or_else(
                                    || {
                                        CorbinError::Protocol(format!(
                                            "client {i} is paired but holds no common randomness"
                                        ))
                                    },
                                )?;
                                if cr.len() != w.len() || cr.bits_per_param() != d {
                                    return Err(CorbinError::Protocol(format!(
                                        "client {i} holds common randomness of the wrong shape"
                                    )));
                                }
                                let lead = matches!(role, ClientRole::Lead { .. });
                                w.iter()
                                    .zip(&param_specs)
                                    .zip(cr.words())
                                    .map(|((&x, c), &z)| {
                                        let q = if lead {
                                            corbinq_lead(&budget, c, x, d, z, &mut rng)
                                        } else {
                                            corbinq_follow(&budget, c, x, d, z, &mut rng)
                                        };
                                        q.map(|v| v.sign)
                                    })
                                    .collect::<Result<Vec<_>>>()?
                            }
                            None => w
                                .iter()
                                .zip(&param_specs)
                                .map(|(&x, c)| ldpq(&budget, c, x, &mut rng).map(|v| v.sign))
                                .collect::<Result<Vec<_>>>()?,
                        };
                    Payload::Signs(signs)
                }
            };
            Ok(Some(ClientUpload { client: i, payload }))
        })
        .collect()
}

/// Elementwise mean of the models present.
pub fn aggregate(updates: &[Option<ModelVector>]) -> Result<ModelVector> {
    let present: Vec<&ModelVector> = updates.iter().flatten().collect();
    let Some(first) = present.first() else {
        return Err(CorbinError::Protocol("no participants to aggregate".into()));
    };
    if present.iter().any(|m| !m.same_layout(first)) {
        return domain("updates disagree on layout");
    }
    let mut sum = vec![0.0; first.len()];
    for m in &present {
        for (s, v) in sum.iter_mut().zip(m.flat()) {
            *s += v;
        }
    }
    let k = present.len() as f64;
    first.with_flat(&sum.iter().map(|s| s / k).collect::<Vec<_>>())
}

/// `(1 − λ)·w_init + λ·w_final`.
pub fn smoothed_update(
    w_init: &ModelVector,
    w_final: &ModelVector,
    lambda: f64,
) -> Result<ModelVector> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return domain(format!("lambda must lie in (0, 1], got {lambda}"));
    }
    if !w_init.same_layout(w_final) {
        return domain("models disagree on layout");
    }
    let blended: Vec<f64> = w_init
        .flat()
        .iter()
        .zip(w_final.flat())
        .map(|(a, b)| {
            if lambda == 1.0 {
                b
            } else {
                (1.0 - lambda) * a + lambda * b
            }
        })
        .collect();
    w_init.with_flat(&blended)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointAction {
    Keep,
    RestoreBest,
}

/// Restore once the best validation accuracy is `patience` or more rounds
/// old. Ties do not count as improvements.
pub fn checkpoint_step(history: &[f64], patience: usize) -> CheckpointAction {
    let mut best = 0;
    for (i, &a) in history.iter().enumerate() {
        if a > history[best] {
            best = i;
        }
    }
    if !history.is_empty() && history.len() - 1 - best >= patience {
        CheckpointAction::RestoreBest
    } else {
        CheckpointAction::Keep
    }
}

/// Tracks the best model by validation accuracy. After a restore the
/// patience counter starts over.
#[derive(Debug, Clone)]
pub struct Checkpointer {
    patience: usize,
    best: Option<(f64, ModelVector)>,
    stale: usize,
}

impl Checkpointer {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn best(&self) -> Option<&(f64, ModelVector)> {
        self.best.as_ref()
    }

    /// Records this round's model; returns the model to continue from.
    pub fn observe(
        &mut self,
        accuracy: f64,
        model: ModelVector,
    ) -> (CheckpointAction, ModelVector) {
        match &self.best {
            Some((b, _)) if accuracy <= *b => {
                self.stale += 1;
                if self.patience > 0 && self.stale >= self.patience {
                    self.stale = 0;
                    let restored = self.best.as_ref().expect("best present").1.clone();
                    (CheckpointAction::RestoreBest, restored)
                } else {
                    (CheckpointAction::Keep, model)
                }
            }
            _ => {
                self.best = Some((accuracy, model.clone()));
                self.stale = 0;
                (CheckpointAction::Keep, model)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Federated runs

#[derive(Debug, Clone, PartialEq)]
pub struct FlConfig {
    pub n: usize,
    pub rounds: usize,
    pub mechanism: MechanismConfig,
    pub lambda: f64,
    pub train: TrainConfig,
    pub p_dropout: f64,
    pub group: DhGroup,
    pub clip_floor: ClipFloor,
    pub init_scale: f64,
    pub patience: usize,
    pub seed: u64,
}

impl FlConfig {
    pub fn new(n: usize, rounds: usize, mechanism: MechanismConfig, seed: u64) -> Self {
        Self {
            n,
            rounds,
            mechanism,
            lambda: 1.0,
            train: TrainConfig::default(),
            p_dropout: 0.0,
            group: DhGroup::test64(),
            clip_floor: ClipFloor::default(),
            init_scale: 1.0,
            patience: 5,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u64,
    pub mechanism: MechanismKind,
    pub lambda: f64,
    pub participants: usize,
    pub dropouts: usize,
    pub widowed: usize,
    /// Per-parameter squared error of the aggregate against the mean of the
    /// participants' clipped local models.
    pub mse: f64,
    pub validation_accuracy: f64,
    pub test_accuracy: f64,
    pub comm_bits: u64,
    pub skipped: bool,
    pub restored: bool,
}

#[derive(Debug, Clone)]
pub struct FlRun {
    pub reports: Vec<RoundReport>,
    /// Best model by validation accuracy.
    pub final_model: ModelVector,
    pub final_validation_accuracy: f64,
    pub final_test_accuracy: f64,
    pub audit: Vec<AuditRecord>,
}

pub fn run_federated(cfg: &FlConfig, data: &FederatedData) -> Result<FlRun> {
    let n = cfg.n;
    if n < 2 {
        return domain(format!("need at least two clients, got {n}"));
    }
    if data.shards.len() != n {
        return Err(CorbinError::Data(format!(
            "{} shards for {n} clients",
            data.shards.len()
        )));
    }
    if !(cfg.lambda > 0.0 && cfg.lambda <= 1.0) {
        return domain(format!("lambda must lie in (0, 1], got {}", cfg.lambda));
    }
    cfg.mechanism.validate()?;
    let dim = data.validation.dim();
    if data
        .shards
        .iter()
        .chain([&data.test])
        .any(|s| s.dim() != dim)
    {
        return Err(CorbinError::Data(
            "datasets disagree on feature dimension".into(),
        ));
    }
    let budget = match cfg.mechanism.kind {
        MechanismKind::None => PrivacyBudget::non_private(),
        _ => cfg.mechanism.budget()?,
    };

    let mut global = logistic_model(
        dim,
        cfg.init_scale,
        &mut seed::stream_rng(cfg.seed, &[purpose::INIT]),
    )?;
    let m = global.len();
    let pcfg = ProtocolConfig {
        n,
        m,
        d: cfg.mechanism.protocol_bits(),
        solo: cfg.mechanism.solo_count(n)?,
        p_dropout: cfg.p_dropout,
        group: cfg.group.clone(),
    };
    let mut channel = Channel::new();
    let mut checkpointer = Checkpointer::new(cfg.patience);
    checkpointer.observe(data.validation.accuracy(&global), global.clone());
    let mut reports = Vec::with_capacity(cfg.rounds);

    for t in 0..cfg.rounds as u64 {
        let before = channel.records().len();
        let specs = derive_clipspecs(&[&global], cfg.clip_floor)?;
        let param_specs = global.per_param(&specs);
        let setup = run_round(&pcfg, cfg.seed, t, &mut channel)?;

        let updates: Vec<Option<ModelVector>> = (0..n)
            .into_par_iter()
            .map(|i| {
                if !setup.mask.is_active(i) || data.shards[i].is_empty() {
                    return Ok(None);
                }
                let mut rng = seed::stream_rng(cfg.seed, &[purpose::LOCAL_TRAIN, t, i as u64]);
                local_update(&global, &data.shards[i], &cfg.train, &mut rng).map(Some)
            })
            .collect::<Result<_>>()?;
        let uploads = apply_mechanism(&cfg.mechanism, &updates, &specs, &setup, cfg.seed)?;
        for u in uploads.iter().flatten() {
            channel.post(
                t,
                Endpoint::Client(u.client),
                Endpoint::Server,
                MessageKind::Update,
                u.bits(),
            );
        }
        let decoded: Vec<Option<ModelVector>> = uploads
            .iter()
            .map(|u| {
                u.as_ref()
                    .map(|u| global.with_flat(&u.decode(&param_specs, &budget)))
                    .transpose()
            })
            .collect::<Result<_>>()?;
        let participants = decoded.iter().flatten().count();
        let widowed = (0..n)
            .filter(|&i| {
                updates[i].is_some()
                    && match setup.roles[i] {
                        ClientRole::Lead { partner } | ClientRole::Follow { partner } => {
                            updates[partner].is_none()
                        }
                        _ => setup.widowed.contains(&i),
                    }
            })
            .count();

        let (mse, skipped) = if participants == 0 {
            (0.0, true)
        } else {
            let estimate = aggregate(&decoded)?;
            let truth = if cfg.mechanism.kind == MechanismKind::None {
                aggregate(&updates)?
            } else {
                let clipped: Vec<Option<ModelVector>> = updates
                    .iter()
                    .map(|u| {
                        u.as_ref()
                            .map(|u| {
                                let v: Vec<f64> = u
                                    .flat()
                                    .iter()
                                    .zip(&param_specs)
                                    .map(|(&x, c)| c.clip(x))
                                    .collect();
                                global.with_flat(&v)
                            })
                            .transpose()
                    })
                    .collect::<Result<_>>()?;
                aggregate(&clipped)?
            };
            let mse = estimate
                .flat()
                .iter()
                .zip(truth.flat())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / m as f64;
            global = smoothed_update(&global, &estimate, cfg.lambda)?;
            (mse, false)
        };

        let (action, next) = checkpointer.observe(data.validation.accuracy(&global), global);
        global = next;
        let comm_bits = channel.records()[before..]
            .iter()
            .map(|r| r.payload_bits)
            .sum();
        reports.push(RoundReport {
            round: t,
            mechanism: cfg.mechanism.kind,
            lambda: cfg.lambda,
            participants,
            dropouts: setup.mask.dropouts(),
            widowed,
            mse,
            validation_accuracy: data.validation.accuracy(&global),
            test_accuracy: data.test.accuracy(&global),
            comm_bits,
            skipped,
            restored: action == CheckpointAction::RestoreBest,
        });
        log::debug!(
            "round {t}: {participants} participants, val {:.4}",
            reports.last().map_or(0.0, |r| r.validation_accuracy)
        );
    }

    let (val, best) = checkpointer
        .best()
        .cloned()
        .expect("initial model observed");
    Ok(FlRun {
        final_test_accuracy: data.test.accuracy(&best),
        final_validation_accuracy: val,
        final_model: best,
        reports,
        audit: channel.drain(),
    })
}

/// The λ grid `{0.1, 0.2, …, 1.0}`.
pub fn default_lambda_grid() -> Vec<f64> {
    (1..=10).map(|k| k as f64 / 10.0).collect()
}

#[derive(Debug, Clone)]
pub struct LambdaSweep {
    pub runs: Vec<(f64, FlRun)>,
    /// Index into `runs` of the best final validation accuracy; ties go to
    /// the earlier grid point.
    pub best: usize,
}

impl LambdaSweep {
    pub fn best_run(&self) -> &(f64, FlRun) {
        &self.runs[self.best]
    }
}

/// Runs one federated training per λ with identical seeds.
pub fn lambda_sweep(cfg: &FlConfig, data: &FederatedData, grid: &[f64]) -> Result<LambdaSweep> {
    if grid.is_empty() {
        return domain("lambda grid is empty");
    }
    let runs = grid
        .iter()
        .map(|&lambda| {
            let mut c = cfg.clone();
            c.lambda = lambda;
            run_federated(&c, data).map(|r| (lambda, r))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, (_, r)) in runs.iter().enumerate() {
        if r.final_validation_accuracy > runs[best].1.final_validation_accuracy {
            best = i;
        }
    }
    Ok(LambdaSweep { runs, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mv(values: &[f64]) -> ModelVector {
        ModelVector::new(vec![Layer {
            id: "a".into(),
            values: values.to_vec(),
        }])
        .unwrap()
    }

    fn rng(s: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(s)
    }

    #[test]
    fn model_layout() {
        assert!(ModelVector::new(vec![]).is_err());
        assert!(ModelVector::new(vec![Layer {
            id: "x".into(),
            values: vec![]
        }])
        .is_err());
        let m = ModelVector::new(vec![
            Layer {
                id: "a".into(),
                values: vec![1.0, 2.0],
            },
            Layer {
                id: "b".into(),
                values: vec![3.0],
            },
        ])
        .unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.flat(), vec![1.0, 2.0, 3.0]);
        let m2 = m.with_flat(&[4.0, 5.0, 6.0]).unwrap();
        assert!(m.same_layout(&m2));
        assert_eq!(m2.layers()[1].values, vec![6.0]);
        assert!(m.with_flat(&[1.0]).is_err());
        assert_eq!(m.per_param(&['x', 'y']), vec!['x', 'x', 'y']);
    }

    #[test]
    fn clipspecs() {
        let s = derive_clipspecs(&[&mv(&[-1.0, 3.0])], ClipFloor::default()).unwrap();
        assert_eq!((s[0].center(), s[0].radius()), (1.0, 2.0));
        let s = derive_clipspecs(&[&mv(&[0.7, 0.7])], ClipFloor::Absolute(0.01)).unwrap();
        assert_eq!((s[0].center(), s[0].radius()), (0.7, 0.01));
        let s = derive_clipspecs(&[&mv(&[5.0, 5.0])], ClipFloor::default()).unwrap();
        assert_eq!((s[0].center(), s[0].radius()), (5.0, 5e-3));
        let s = derive_clipspecs(&[&mv(&[0.0, 0.0])], ClipFloor::default()).unwrap();
        assert_eq!(s[0].radius(), 1e-3);
        let s =
            derive_clipspecs(&[&mv(&[0.0, 1.0]), &mv(&[-3.0, 0.5])], ClipFloor::default()).unwrap();
        assert_eq!((s[0].center(), s[0].radius()), (-1.0, 2.0));
        assert!(derive_clipspecs(&[], ClipFloor::default()).is_err());
        assert!(derive_clipspecs(&[&mv(&[0.0])], ClipFloor::Absolute(0.0)).is_err());
    }

    #[test]
    fn smoothing() {
        let a = mv(&[0.0, 1.0]);
        let b = mv(&[2.0, 3.0]);
        assert_eq!(smoothed_update(&a, &b, 1.0).unwrap(), b);
        assert_eq!(smoothed_update(&a, &b, 0.5).unwrap().flat(), vec![1.0, 2.0]);
        assert_eq!(smoothed_update(&a, &a, 0.3).unwrap(), a);
        assert!(smoothed_update(&a, &b, 0.0).is_err());
        assert!(smoothed_update(&a, &b, 1.5).is_err());
        assert!(smoothed_update(&a, &b, f64::NAN).is_err());
    }

    #[test]
    fn checkpointing() {
        let inc: Vec<f64> = (0..20).map(|i| i as f64).collect();
        for k in 1..=inc.len() {
            assert_eq!(checkpoint_step(&inc[..k], 5), CheckpointAction::Keep);
        }
        let flat = [0.5, 0.9, 0.9, 0.9, 0.9, 0.9];
        assert_eq!(checkpoint_step(&flat, 5), CheckpointAction::Keep);
        let flat = [0.5, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9];
        assert_eq!(checkpoint_step(&flat, 5), CheckpointAction::RestoreBest);
        let reset = [0.5, 0.9, 0.8, 0.8, 0.8, 0.8, 0.95, 0.9];
        assert_eq!(checkpoint_step(&reset, 5), CheckpointAction::Keep);

        let mut cp = Checkpointer::new(5);
        let best = mv(&[1.0]);
        assert_eq!(cp.observe(0.9, best.clone()).0, CheckpointAction::Keep);
        for k in 0..4 {
            let (a, m) = cp.observe(0.8, mv(&[k as f64]));
            assert_eq!(a, CheckpointAction::Keep);
            assert_eq!(m, mv(&[k as f64]));
        }
        let (a, m) = cp.observe(0.9, mv(&[9.0]));
        assert_eq!(a, CheckpointAction::RestoreBest);
        assert_eq!(m, best);
        // The counter restarts after a restore and on any improvement.
        assert_eq!(cp.observe(0.5, mv(&[0.0])).0, CheckpointAction::Keep);
        assert_eq!(cp.observe(0.95, mv(&[2.0])).0, CheckpointAction::Keep);
        assert_eq!(cp.best().unwrap().0, 0.95);
    }

    #[test]
    fn aggregation() {
        let a = mv(&[1.0, 2.0]);
        assert_eq!(
            aggregate(&[Some(a.clone()), Some(a.clone()), None]).unwrap(),
            a
        );
        let spec = ClipSpec::new(0.5, 1.0).unwrap();
        let budget = PrivacyBudget::new(1.0).unwrap();
        let lo = mv(&[spec.low_level(&budget)]);
        let hi = mv(&[spec.high_level(&budget)]);
        let mean = aggregate(&[Some(lo), Some(hi)]).unwrap();
        assert!((mean.flat()[0] - 0.5).abs() < 1e-15);
        assert!(aggregate(&[None, None]).is_err());
    }

    #[test]
    fn local_training() {
        let data = Dataset::synthetic_blobs(200, 4, 4.0, &mut rng(1)).unwrap();
        let model = logistic_model(4, 0.1, &mut rng(2)).unwrap();
        let frozen = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        assert_eq!(
            local_update(&model, &data, &frozen, &mut rng(3)).unwrap(),
            model
        );
        let cfg = TrainConfig::default();
        let a = local_update(&model, &data, &cfg, &mut rng(3)).unwrap();
        assert_eq!(a, local_update(&model, &data, &cfg, &mut rng(3)).unwrap());
        assert!(data.loss(&a) < data.loss(&model));
        assert!(local_update(&model, &Dataset::empty(4), &cfg, &mut rng(3)).is_err());
    }

    #[test]
    fn csv_loader() {
        let text = "# x1, x2, y\n1.0, 2.0, 1\n-1.5, 0.25, 0\n";
        let d = Dataset::from_csv(text.as_bytes()).unwrap();
        assert_eq!(d.dim(), 2);
        assert_eq!(d.row(1), (&[-1.5, 0.25][..], 0));
        assert!(Dataset::from_csv("1.0,2.0,3\n".as_bytes()).is_err());
        assert!(Dataset::from_csv("1.0,2.0,1\n1.0,1\n".as_bytes()).is_err());
        assert!(Dataset::from_csv("1.0,x,1\n".as_bytes()).is_err());
        assert!(Dataset::from_csv("".as_bytes()).is_err());
    }

    #[test]
    fn split_partitions_rows() {
        let pool = Dataset::synthetic_blobs(103, 3, 2.0, &mut rng(5)).unwrap();
        let fd = FederatedData::split(&pool, 4, 10, 20, 9).unwrap();
        let total: usize = fd.shards.iter().map(|s| s.len()).sum();
        assert_eq!(total + fd.validation.len() + fd.test.len(), 103);
        assert!(FederatedData::split(&pool, 4, 100, 20, 9).is_err());
    }

    #[test]
    fn mechanism_config_validation() {
        let ok = MechanismConfig::new(MechanismKind::AugCorbin, 1.0)
            .with_d(5)
            .with_gamma(0.5);
        assert!(ok.validate().is_ok());
        assert!(ok.with_gamma(1.5).validate().is_err());
        assert!(ok.with_d(31).validate().is_err());
        assert!(MechanismConfig::new(MechanismKind::Ldpfl, 0.0)
            .validate()
            .is_err());
        assert!(MechanismConfig::new(MechanismKind::Gaussian, f64::INFINITY)
            .validate()
            .is_err());
        assert!(MechanismConfig::new(MechanismKind::Gaussian, 1.0)
            .with_delta(1.0)
            .validate()
            .is_err());
        assert!(MechanismConfig::new(MechanismKind::None, -1.0)
            .validate()
            .is_ok());
        assert_eq!(
            "augcorbin".parse::<MechanismKind>().unwrap(),
            MechanismKind::AugCorbin
        );
        assert!("corbinfl".parse::<MechanismKind>().is_err());
        assert_eq!(ok.solo_count(50).unwrap(), 25);
        assert_eq!(
            MechanismConfig::new(MechanismKind::Ldpfl, 1.0)
                .solo_count(7)
                .unwrap(),
            7
        );
    }

    fn small_run(kind: MechanismKind, p_dropout: f64, seed: u64) -> FlRun {
        let data = FederatedData::synthetic(&DataConfig::default(), 10, seed).unwrap();
        let mut cfg = FlConfig::new(
            10,
            6,
            MechanismConfig::new(kind, 1.0).with_d(4).with_gamma(0.3),
            seed,
        );
        cfg.p_dropout = p_dropout;
        run_federated(&cfg, &data).unwrap()
    }

    #[test]
    fn runs_are_deterministic() {
        for kind in MechanismKind::ALL {
            let a = small_run(kind, 0.3, 4);
            let b = small_run(kind, 0.3, 4);
            assert_eq!(a.reports, b.reports, "{kind}");
            assert_eq!(a.audit, b.audit);
            assert_eq!(a.final_model, b.final_model);
        }
    }

    #[test]
    fn reports_are_well_formed() {
        for kind in MechanismKind::ALL {
            let run = small_run(kind, 0.5, 8);
            assert_eq!(run.reports.len(), 6);
            for r in &run.reports {
                assert!(r.mse >= 0.0);
                assert!((0.0..=1.0).contains(&r.validation_accuracy));
                assert!((0.0..=1.0).contains(&r.test_accuracy));
                assert_eq!(r.participants + r.dropouts, 10);
            }
        }
        let all_drop = small_run(MechanismKind::Corbin, 1.0, 3);
        assert!(all_drop
            .reports
            .iter()
            .all(|r| r.skipped && r.participants == 0));
    }
}
