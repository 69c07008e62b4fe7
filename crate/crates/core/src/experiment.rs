//! Experiment configs and the emitters behind the command-line tool.
//!
//! # Config grammar
//!
//! A config is plain text, one `key = value` pair per line. Blank lines and
//! lines starting with `#` are ignored, as is anything after a ` #` on a
//! value line. Keys are lower-case identifiers; list values are
//! comma-separated. A key may appear once. `seed` is mandatory. Keys not
//! listed for the experiment kind are rejected.
//!
//! ```text
//! # d-sweep at n = 50
//! seed = 7
//! epsilons = 0.5, 1
//! d = 3, 5, 7
//! mechanisms = corbin, ldpfl
//! ```
//!
//! CSV outputs start with a `# schema_version=…` comment line followed by a
//! header row; JSON outputs carry a `schema_version` field.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use serde::Serialize;

use crate::dme::{dme_bound, frozen_weights, run_dme, DmeMechanism, DmeSetup};
use crate::error::{CorbinError, Result};
use crate::flsim::{
    default_lambda_grid, lambda_sweep, ClipFloor, DataConfig, Dataset, FederatedData, FlConfig,
    MechanismConfig, MechanismKind, TrainConfig,
};
use crate::oracle::{
    dropout_bounds, exact_joint, independent_joint, mse_bound_aug, mse_bound_corbin,
    mse_bound_ldpfl, optimal_joint, pair_mse, ucdp_epsilon, BoundReport, MAX_ENUMERATION_BITS,
};
use crate::protocol::{write_ndjson, DhGroup};
use crate::quant::{ClipSpec, PrivacyBudget};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Bounds,
    MseSurface,
    Dme,
    Flsim,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Bounds => "bounds",
            ExperimentKind::MseSurface => "mse-surface",
            ExperimentKind::Dme => "dme",
            ExperimentKind::Flsim => "flsim",
        }
    }

    /// Keys accepted besides `seed` and `experiment`.
    pub fn allowed_keys(&self) -> &'static [&'static str] {
        match self {
            ExperimentKind::Bounds => &[
                "epsilons",
                "n",
                "m",
                "r",
                "gamma",
                "delta",
                "p_dropout",
                "delta1",
            ],
            ExperimentKind::MseSurface => &["epsilons", "d", "c", "r", "grid", "assert_dominance"],
            ExperimentKind::Dme => &[
                "epsilons",
                "d",
                "n",
                "m",
                "c",
                "r",
                "replicas",
                "mechanisms",
                "gamma",
                "delta",
                "assert_within_bound",
            ],
            ExperimentKind::Flsim => &[
                "n",
                "rounds",
                "mechanism",
                "epsilon",
                "d",
                "gamma",
                "delta",
                "lambda",
                "p_dropout",
                "group",
                "lr",
                "epochs",
                "batch_size",
                "samples_per_client",
                "dim",
                "separation",
                "validation_size",
                "test_size",
                "init_scale",
                "patience",
                "clip_floor",
                "data_csv",
                "audit_log",
                "assert_min_accuracy",
            ],
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = CorbinError;

    fn from_str(s: &str) -> Result<Self> {
        [
            ExperimentKind::Bounds,
            ExperimentKind::MseSurface,
            ExperimentKind::Dme,
            ExperimentKind::Flsim,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| CorbinError::Config(format!("unknown experiment {s:?}")))
    }
}

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(CorbinError::Config(msg.into()))
}

/// A validated flat key/value config for one experiment kind.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    kind: ExperimentKind,
    values: BTreeMap<String, String>,
}

impl ExperimentConfig {
    pub fn empty(kind: ExperimentKind) -> Self {
        Self {
            kind,
            values: BTreeMap::new(),
        }
    }

    /// Parses config text. Does not check for `seed`; call [`validate`]
    /// after applying overrides.
    ///
    /// [`validate`]: ExperimentConfig::validate
    pub fn parse(kind: ExperimentKind, text: &str) -> Result<Self> {
        let mut cfg = Self::empty(kind);
        for (no, raw) in text.lines().enumerate() {
            let line = match raw.find(" #") {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return config_err(format!("line {}: expected key = value", no + 1));
            };
            let k = k.trim();
            if cfg.values.contains_key(k) {
                return config_err(format!("line {}: duplicate key {k:?}", no + 1));
            }
            cfg.insert(k, v.trim())
                .map_err(|e| CorbinError::Config(format!("line {}: {e}", no + 1)))?;
        }
        Ok(cfg)
    }

    fn insert(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        if key.is_empty()
            || !key
                .chars()
                .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
        {
            return Err(format!("bad key {key:?}"));
        }
        if key == "experiment" {
            if value != self.kind.as_str() {
                return Err(format!(
                    "config is for experiment {value:?}, not {:?}",
                    self.kind.as_str()
                ));
            }
            return Ok(());
        }
        if key != "seed" && !self.kind.allowed_keys().contains(&key) {
            return Err(format!("unknown key {key:?} for {}", self.kind.as_str()));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Sets or replaces a key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.insert(key, value).map_err(CorbinError::Config)
    }

    /// Applies a `KEY=VAL` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let Some((k, v)) = spec.split_once('=') else {
            return config_err(format!("override {spec:?} is not KEY=VAL"));
        };
        self.set(k.trim(), v.trim())
    }

    pub fn kind(&self) -> ExperimentKind {
        self.kind
    }

    pub fn seed(&self) -> Result<u64> {
        match self.values.get("seed") {
            Some(s) => s.parse().map_err(|_| {
                CorbinError::Config(format!(
                    "seed must be an unsigned 64-bit integer, got {s:?}"
                ))
            }),
            None => config_err("seed is mandatory"),
        }
    }

    /// Checks the mandatory seed and parses every key by running the
    /// command's typed reads.
    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        match self.kind {
            ExperimentKind::Bounds => BoundsParams::read(self).map(|_| ()),
            ExperimentKind::MseSurface => SurfaceParams::read(self).map(|_| ()),
            ExperimentKind::Dme => DmeParams::read(self).map(|_| ()),
            ExperimentKind::Flsim => FlParams::read(self).map(|_| ()),
        }
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parse_one<T: FromStr>(&self, key: &str, s: &str) -> Result<T> {
        s.parse()
            .map_err(|_| CorbinError::Config(format!("{key}: cannot parse {s:?}")))
    }

    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            Some(s) => self.parse_one(key, s),
            None => Ok(default),
        }
    }

    fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key).map(|s| self.parse_one(key, s)).transpose()
    }

    fn get_list<T: FromStr + Clone>(&self, key: &str, default: &[T]) -> Result<Vec<T>> {
        match self.raw(key) {
            Some(s) => {
                let items = s
                    .split(',')
                    .map(|p| self.parse_one(key, p.trim()))
                    .collect::<Result<Vec<T>>>()?;
                if items.is_empty() {
                    return config_err(format!("{key}: empty list"));
                }
                Ok(items)
            }
            None => Ok(default.to_vec()),
        }
    }

    fn get_bool(&self, key: &str) -> Result<bool> {
        match self.raw(key) {
            None | Some("false") => Ok(false),
            Some("true") => Ok(true),
            Some(s) => config_err(format!("{key}: expected true or false, got {s:?}")),
        }
    }
}

/// Epsilon parser that accepts `inf`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Eps(f64);

impl FromStr for Eps {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        let v: f64 = s.parse().map_err(|_| ())?;
        if v > 0.0 {
            Ok(Eps(v))
        } else {
            Err(())
        }
    }
}

fn budgets(cfg: &ExperimentConfig, default: &[f64]) -> Result<Vec<PrivacyBudget>> {
    let defaults: Vec<Eps> = default.iter().map(|&e| Eps(e)).collect();
    cfg.get_list::<Eps>("epsilons", &defaults)?
        .into_iter()
        .map(|e| PrivacyBudget::new(e.0))
        .collect()
}

fn check(cond: bool, msg: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        config_err(msg)
    }
}

/// Output of a command plus any failed assertions.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub body: String,
    pub failures: Vec<String>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    match cfg.kind {
        ExperimentKind::Bounds => cmd_bounds(cfg),
        ExperimentKind::MseSurface => cmd_mse_surface(cfg),
        ExperimentKind::Dme => cmd_dme(cfg),
        ExperimentKind::Flsim => cmd_flsim(cfg),
    }
}

fn csv_preamble(kind: ExperimentKind, columns: &[&str]) -> String {
    format!(
        "# schema_version={SCHEMA_VERSION} experiment={}\n{}\n",
        kind.as_str(),
        columns.join(",")
    )
}

// ---------------------------------------------------------------------------
// bounds

struct BoundsParams {
    budgets: Vec<PrivacyBudget>,
    ns: Vec<usize>,
    m: usize,
    r: f64,
    gamma: f64,
    delta: f64,
    p_dropout: Option<f64>,
    delta1: Option<f64>,
}

impl BoundsParams {
    fn read(cfg: &ExperimentConfig) -> Result<Self> {
        let p = Self {
            budgets: budgets(cfg, &[0.5, 1.0, 3.0, 5.0])?,
            ns: cfg.get_list("n", &[50])?,
            m: cfg.get("m", 1)?,
            r: cfg.get("r", 0.5)?,
            gamma: cfg.get("gamma", 0.0)?,
            delta: cfg.get("delta", 1e-5)?,
            p_dropout: cfg.get_opt("p_dropout")?,
            delta1: cfg.get_opt("delta1")?,
        };
        check(p.ns.iter().all(|&n| n >= 2), "n must be at least 2")?;
        check(p.m >= 1, "m must be positive")?;
        check(p.r > 0.0 && p.r.is_finite(), "r must be positive")?;
        check((0.0..=1.0).contains(&p.gamma), "gamma must lie in [0, 1]")?;
        check(p.delta > 0.0 && p.delta < 1.0, "delta must lie in (0, 1)")?;
        if let Some(pd) = p.p_dropout {
            check(pd > 0.0 && pd < 1.0, "p_dropout must lie in (0, 1)")?;
            let d1 = p.delta1.unwrap_or(p.delta / 2.0);
            check(d1 > 0.0 && d1 < p.delta, "delta1 must lie in (0, delta)")?;
        }
        Ok(p)
    }
}

#[derive(Serialize)]
struct BoundsDocument<'a> {
    schema_version: u32,
    reports: &'a [BoundReport],
}

/// Every closed-form bound over the ε × n grid. With `gamma = 0` only the
/// CorBin-FL MSE bound applies; the hybrid rows need `gamma > 0`. Dropout
/// rows appear when `p_dropout` is set.
pub fn cmd_bounds(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p = BoundsParams::read(cfg)?;
    let mut reports = Vec::new();
    for &n in &p.ns {
        for b in &p.budgets {
            let inputs = [("epsilon_p", b.epsilon_p()), ("n", n as f64), ("r", p.r)];
            reports.push(BoundReport::new(
                "mse_bound_corbin",
                &inputs,
                Some(mse_bound_corbin(b, p.r, n)?),
                true,
            ));
            if p.gamma > 0.0 {
                reports.push(BoundReport::new(
                    "mse_bound_ldpfl",
                    &inputs,
                    Some(mse_bound_ldpfl(b, p.r, n)?),
                    true,
                ));
                let aug_inputs = [inputs[0], inputs[1], inputs[2], ("gamma", p.gamma)];
                reports.push(BoundReport::new(
                    "mse_bound_aug",
                    &aug_inputs,
                    Some(mse_bound_aug(b, p.r, n, p.gamma)?),
                    true,
                ));
                reports.push(ucdp_epsilon(b, p.delta, p.gamma, n, p.m, p.r));
            }
            if let Some(pd) = p.p_dropout {
                let d1 = p.delta1.unwrap_or(p.delta / 2.0);
                let db = dropout_bounds(pd, n, p.delta, d1, b, p.r, p.m)?;
                let inputs = [
                    ("epsilon_p", b.epsilon_p()),
                    ("n", n as f64),
                    ("r", p.r),
                    ("m", p.m as f64),
                    ("p", pd),
                    ("delta", p.delta),
                    ("delta1", d1),
                ];
                reports.extend(db.reports(&inputs));
            }
        }
    }
    let mut body = serde_json::to_string_pretty(&BoundsDocument {
        schema_version: SCHEMA_VERSION,
        reports: &reports,
    })?;
    body.push('\n');
    Ok(Outcome {
        body,
        failures: vec![],
    })
}

// ---------------------------------------------------------------------------
// mse-surface

struct SurfaceParams {
    budgets: Vec<PrivacyBudget>,
    ds: Vec<u32>,
    clip: ClipSpec,
    grid: usize,
    assert_dominance: bool,
}

impl SurfaceParams {
    fn read(cfg: &ExperimentConfig) -> Result<Self> {
        let p = Self {
            budgets: budgets(cfg, &[0.5, 1.0, 3.0, 5.0])?,
            ds: cfg.get_list("d", &[8])?,
            clip: ClipSpec::new(cfg.get("c", 0.0)?, cfg.get("r", 0.5)?)?,
            grid: cfg.get("grid", 11)?,
            assert_dominance: cfg.get_bool("assert_dominance")?,
        };
        check(p.grid >= 2, "grid needs at least 2 points")?;
        if let Some(&d) = p.ds.iter().find(|&&d| d > MAX_ENUMERATION_BITS) {
            return Err(CorbinError::Resource(format!(
                "d = {d} exceeds the enumeration limit of {MAX_ENUMERATION_BITS} bits"
            )));
        }
        Ok(p)
    }
}

/// Grid point `k` of `grid` evenly spaced points over the clip interval.
pub fn grid_point(clip: &ClipSpec, k: usize, grid: usize) -> f64 {
    if k + 1 == grid {
        return clip.upper();
    }
    clip.lower() + 2.0 * clip.radius() * k as f64 / (grid - 1) as f64
}

/// Exact pair MSE over the clipped square for the CorBinQ pair, the
/// independent pair and the optimal coupling.
pub fn cmd_mse_surface(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p = SurfaceParams::read(cfg)?;
    let mut body = csv_preamble(
        ExperimentKind::MseSurface,
        &[
            "epsilon",
            "d",
            "w",
            "w_prime",
            "mse_corbinq",
            "mse_ldpq_pair",
            "mse_optimal",
        ],
    );
    let mut failures = Vec::new();
    for b in &p.budgets {
        for &d in &p.ds {
            for i in 0..p.grid {
                let w = grid_point(&p.clip, i, p.grid);
                for j in 0..p.grid {
                    let wp = grid_point(&p.clip, j, p.grid);
                    let corbin = pair_mse(&exact_joint(b, &p.clip, w, wp, d)?, b, &p.clip, w, wp);
                    let indep = pair_mse(&independent_joint(b, &p.clip, w, wp)?, b, &p.clip, w, wp);
                    let opt = pair_mse(&optimal_joint(b, &p.clip, w, wp)?, b, &p.clip, w, wp);
                    if p.assert_dominance && corbin > indep + 1e-12 {
                        failures.push(format!(
                            "eps={} d={d} w={w} w'={wp}: corbinq {corbin} > independent {indep}",
                            b.epsilon_p()
                        ));
                    }
                    writeln!(
                        body,
                        "{},{d},{w},{wp},{corbin},{indep},{opt}",
                        b.epsilon_p()
                    )
                    .expect("string write");
                }
            }
        }
    }
    Ok(Outcome { body, failures })
}

// ---------------------------------------------------------------------------
// dme

struct DmeParams {
    budgets: Vec<PrivacyBudget>,
    ds: Vec<u32>,
    n: usize,
    m: usize,
    clip: ClipSpec,
    replicas: usize,
    mechanisms: Vec<MechanismKind>,
    gamma: f64,
    delta: f64,
    assert_within_bound: bool,
}

impl DmeParams {
    fn read(cfg: &ExperimentConfig) -> Result<Self> {
        let p = Self {
            budgets: budgets(cfg, &[1.0])?,
            ds: cfg.get_list("d", &[5])?,
            n: cfg.get("n", 50)?,
            m: cfg.get("m", 8)?,
            clip: ClipSpec::new(cfg.get("c", 0.0)?, cfg.get("r", 0.5)?)?,
            replicas: cfg.get("replicas", 10_000)?,
            mechanisms: cfg
                .get_list("mechanisms", &[MechanismKind::Corbin, MechanismKind::Ldpfl])?,
            gamma: cfg.get("gamma", 0.5)?,
            delta: cfg.get("delta", 1e-5)?,
            assert_within_bound: cfg.get_bool("assert_within_bound")?,
        };
        check(p.n >= 2, "n must be at least 2")?;
        check(p.m >= 1, "m must be positive")?;
        check(p.replicas >= 2, "replicas must be at least 2")?;
        check(
            !p.mechanisms.contains(&MechanismKind::None),
            "mechanism none has nothing to estimate",
        )?;
        check((0.0..=1.0).contains(&p.gamma), "gamma must lie in [0, 1]")?;
        check(p.delta > 0.0 && p.delta < 1.0, "delta must lie in (0, 1)")?;
        check(
            p.ds.iter().all(|&d| d <= crate::quant::MAX_BITS_PER_PARAM),
            "d must be at most 30",
        )?;
        Ok(p)
    }
}

/// Monte-Carlo mean estimation. Mechanisms without shared bits get one row
/// per ε with `d = 0`.
pub fn cmd_dme(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p = DmeParams::read(cfg)?;
    let seed = cfg.seed()?;
    let weights = frozen_weights(p.n, p.m, &p.clip, seed);
    let mut body = csv_preamble(
        ExperimentKind::Dme,
        &[
            "epsilon",
            "d",
            "n",
            "mechanism",
            "empirical_mse",
            "bound",
            "stderr",
        ],
    );
    let mut failures = Vec::new();
    for b in &p.budgets {
        for kind in &p.mechanisms {
            let mechs: Vec<DmeMechanism> = match kind {
                MechanismKind::Corbin => p.ds.iter().map(|&d| DmeMechanism::Corbin { d }).collect(),
                MechanismKind::AugCorbin => {
                    p.ds.iter()
                        .map(|&d| DmeMechanism::AugCorbin { d, gamma: p.gamma })
                        .collect()
                }
                MechanismKind::Ldpfl => vec![DmeMechanism::Ldpfl],
                MechanismKind::Gaussian => vec![DmeMechanism::Gaussian { delta: p.delta }],
                MechanismKind::Laplace => vec![DmeMechanism::Laplace],
                MechanismKind::None => unreachable!("rejected by validation"),
            };
            for mech in mechs {
                let setup = DmeSetup {
                    budget: *b,
                    clip: p.clip,
                    weights: weights.clone(),
                    replicas: p.replicas,
                    seed,
                };
                let est = run_dme(&setup, &mech)?;
                let bound = dme_bound(&mech, b, &p.clip, p.n)?;
                if p.assert_within_bound && est.mse > bound + 3.0 * est.stderr {
                    failures.push(format!(
                        "eps={} {} d={}: mse {} exceeds bound {} + 3 stderr",
                        b.epsilon_p(),
                        mech.name(),
                        mech.bits_per_param(),
                        est.mse,
                        bound
                    ));
                }
                writeln!(
                    body,
                    "{},{},{},{},{},{},{}",
                    b.epsilon_p(),
                    mech.bits_per_param(),
                    p.n,
                    mech.name(),
                    est.mse,
                    bound,
                    est.stderr
                )
                .expect("string write");
            }
        }
    }
    Ok(Outcome { body, failures })
}

// ---------------------------------------------------------------------------
// flsim

struct FlParams {
    fl: FlConfig,
    data: DataConfig,
    lambdas: Vec<f64>,
    data_csv: Option<PathBuf>,
    audit_log: Option<PathBuf>,
    min_accuracy: Option<f64>,
}

impl FlParams {
    fn read(cfg: &ExperimentConfig) -> Result<Self> {
        let seed = cfg.seed()?;
        let kind: MechanismKind = cfg.get("mechanism", MechanismKind::Corbin)?;
        let epsilon = match cfg.raw("epsilon") {
            Some(s) => cfg.parse_one::<Eps>("epsilon", s)?.0,
            None => 1.0,
        };
        let mechanism = MechanismConfig::new(kind, epsilon)
            .with_d(cfg.get("d", 5)?)
            .with_gamma(cfg.get("gamma", 0.0)?)
            .with_delta(cfg.get("delta", 1e-5)?);
        mechanism.validate()?;
        let n: usize = cfg.get("n", 50)?;
        let mut fl = FlConfig::new(n, cfg.get("rounds", 30)?, mechanism, seed);
        fl.train = TrainConfig {
            epochs: cfg.get("epochs", TrainConfig::default().epochs)?,
            lr: cfg.get("lr", TrainConfig::default().lr)?,
            batch_size: cfg.get("batch_size", TrainConfig::default().batch_size)?,
        };
        fl.p_dropout = cfg.get("p_dropout", 0.0)?;
        fl.group = DhGroup::by_name(&cfg.get("group", "test64".to_string())?)?;
        fl.init_scale = cfg.get("init_scale", 1.0)?;
        fl.patience = cfg.get("patience", 5)?;
        fl.clip_floor = ClipFloor::Relative(cfg.get("clip_floor", 1e-3)?);
        let dd = DataConfig::default();
        let data = DataConfig {
            samples_per_client: cfg.get("samples_per_client", dd.samples_per_client)?,
            dim: cfg.get("dim", dd.dim)?,
            separation: cfg.get("separation", dd.separation)?,
            validation_size: cfg.get("validation_size", dd.validation_size)?,
            test_size: cfg.get("test_size", dd.test_size)?,
        };
        let lambdas = match cfg.raw("lambda") {
            Some("sweep") => default_lambda_grid(),
            _ => cfg.get_list("lambda", &[1.0])?,
        };
        check(n >= 2, "n must be at least 2")?;
        check(fl.rounds >= 1, "rounds must be positive")?;
        check(
            (0.0..=1.0).contains(&fl.p_dropout),
            "p_dropout must lie in [0, 1]",
        )?;
        check(
            lambdas.iter().all(|&l| l > 0.0 && l <= 1.0),
            "lambda must lie in (0, 1]",
        )?;
        check(fl.train.batch_size >= 1, "batch_size must be positive")?;
        check(
            fl.train.lr >= 0.0 && fl.train.lr.is_finite(),
            "lr must be non-negative",
        )?;
        check(
            fl.init_scale > 0.0 && fl.init_scale.is_finite(),
            "init_scale must be positive",
        )?;
        check(data.dim >= 1, "dim must be positive")?;
        let min_accuracy: Option<f64> = cfg.get_opt("assert_min_accuracy")?;
        Ok(Self {
            fl,
            data,
            lambdas,
            data_csv: cfg.get_opt("data_csv")?,
            audit_log: cfg.get_opt("audit_log")?,
            min_accuracy,
        })
    }
}

pub const FLSIM_COLUMNS: [&str; 14] = [
    "lambda",
    "selected",
    "round",
    "mechanism",
    "participants",
    "dropouts",
    "widowed",
    "mse",
    "validation_accuracy",
    "test_accuracy",
    "comm_bits",
    "skipped",
    "restored",
    "final_test_accuracy",
];

/// Federated training, one block of rows per λ. `lambda = sweep` runs the
/// grid `0.1, …, 1.0`; the run with the best final validation accuracy is
/// marked `selected`. With `audit_log` set, the selected run's channel log
/// is written there as NDJSON.
pub fn cmd_flsim(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p = FlParams::read(cfg)?;
    let seed = cfg.seed()?;
    let data = match &p.data_csv {
        Some(path) => {
            let pool = Dataset::from_csv(std::fs::File::open(path)?)?;
            FederatedData::split(
                &pool,
                p.fl.n,
                p.data.validation_size,
                p.data.test_size,
                seed,
            )?
        }
        None => FederatedData::synthetic(&p.data, p.fl.n, seed)?,
    };
    let sweep = lambda_sweep(&p.fl, &data, &p.lambdas)?;
    let mut body = csv_preamble(ExperimentKind::Flsim, &FLSIM_COLUMNS);
    for (k, (lambda, run)) in sweep.runs.iter().enumerate() {
        for r in &run.reports {
            writeln!(
                body,
                "{lambda},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                k == sweep.best,
                r.round,
                r.mechanism,
                r.participants,
                r.dropouts,
                r.widowed,
                r.mse,
                r.validation_accuracy,
                r.test_accuracy,
                r.comm_bits,
                r.skipped,
                r.restored,
                run.final_test_accuracy
            )
            .expect("string write");
        }
    }
    let (best_lambda, best) = sweep.best_run();
    if let Some(path) = &p.audit_log {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_ndjson(&best.audit, &mut f)?;
    }
    let mut failures = Vec::new();
    if let Some(min) = p.min_accuracy {
        if best.final_test_accuracy < min {
            failures.push(format!(
                "final test accuracy {} at lambda {best_lambda} is below {min}",
                best.final_test_accuracy
            ));
        }
    }
    Ok(Outcome { body, failures })
}
