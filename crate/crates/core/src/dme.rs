//! Monte-Carlo distributed mean estimation.
//!
//! `n` clients hold frozen vectors of `m` weights. Each replica pairs the
//! clients uniformly, quantizes (or perturbs) every weight once and measures
//! the per-parameter squared error of the server's mean estimate. Pairs draw
//! their shared words straight from the replica RNG: the key exchange only
//! moves those bits, so it is left out here to keep 10⁵ replicas cheap.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{gaussian_mechanism, laplace_mechanism, NoiseConfig};
use crate::error::{domain, Result};
use crate::oracle::{mse_bound_aug, mse_bound_corbin, mse_bound_ldpfl};
use crate::protocol::generate_partial_pairing;
use crate::quant::{
    corbinq_follow, corbinq_lead, ldpq, ClipSpec, PrivacyBudget, MAX_BITS_PER_PARAM,
};
use crate::seed::{self, purpose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DmeMechanism {
    Ldpfl,
    Corbin { d: u32 },
    AugCorbin { d: u32, gamma: f64 },
    Gaussian { delta: f64 },
    Laplace,
}

impl DmeMechanism {
    pub fn name(&self) -> &'static str {
        match self {
            DmeMechanism::Ldpfl => "ldpfl",
            DmeMechanism::Corbin { .. } => "corbin",
            DmeMechanism::AugCorbin { .. } => "augcorbin",
            DmeMechanism::Gaussian { .. } => "gaussian",
            DmeMechanism::Laplace => "laplace",
        }
    }

    pub fn bits_per_param(&self) -> u32 {
        match *self {
            DmeMechanism::Corbin { d } | DmeMechanism::AugCorbin { d, .. } => d,
            _ => 0,
        }
    }
}

/// Number of clients an AugCorBin round sends to independent quantization.
pub fn aug_solo_count(n: usize, gamma: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&gamma) {
        return domain(format!("gamma must lie in [0, 1], got {gamma}"));
    }
    Ok(((gamma * n as f64).round() as usize).min(n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DmeSetup {
    pub budget: PrivacyBudget,
    pub clip: ClipSpec,
    /// One row of `m` weights per client.
    pub weights: Vec<Vec<f64>>,
    pub replicas: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmeEstimate {
    pub mse: f64,
    pub stderr: f64,
    pub replicas: usize,
}

/// `n × m` weights drawn uniformly from the clip interval.
pub fn frozen_weights(n: usize, m: usize, clip: &ClipSpec, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seed::stream_rng(seed, &[purpose::WEIGHTS]);
    (0..n)
        .map(|_| {
            (0..m)
                .map(|_| clip.lower() + 2.0 * clip.radius() * rng.random::<f64>())
                .collect()
        })
        .collect()
}

/// Closed-form per-parameter MSE bound for the mechanism.
pub fn dme_bound(
    mech: &DmeMechanism,
    budget: &PrivacyBudget,
    clip: &ClipSpec,
    n: usize,
) -> Result<f64> {
    let r = clip.radius();
    match *mech {
        DmeMechanism::Ldpfl => mse_bound_ldpfl(budget, r, n),
        DmeMechanism::Corbin { .. } => mse_bound_corbin(budget, r, n),
        DmeMechanism::AugCorbin { gamma, .. } => mse_bound_aug(budget, r, n, gamma),
        DmeMechanism::Gaussian { delta } => {
            let sigma = noise_config(mech, budget, clip, Some(delta))?.gaussian_sigma()?;
            Ok(sigma * sigma / n as f64)
        }
        DmeMechanism::Laplace => {
            let b = noise_config(mech, budget, clip, None)?.laplace_scale()?;
            Ok(2.0 * b * b / n as f64)
        }
    }
}

fn noise_config(
    mech: &DmeMechanism,
    budget: &PrivacyBudget,
    clip: &ClipSpec,
    delta: Option<f64>,
) -> Result<NoiseConfig> {
    if budget.is_non_private() {
        return domain(format!("{} needs a finite privacy budget", mech.name()));
    }
    let sensitivity = 2.0 * clip.radius();
    match delta {
        Some(delta) => NoiseConfig::gaussian(sensitivity, budget.epsilon_p(), delta),
        None => NoiseConfig::laplace(sensitivity, budget.epsilon_p()),
    }
}

fn check_setup(setup: &DmeSetup, mech: &DmeMechanism) -> Result<usize> {
    let n = setup.weights.len();
    if n < 2 {
        return domain(format!(
            "mean estimation needs at least two clients, got {n}"
        ));
    }
    let m = setup.weights[0].len();
    if m == 0 || setup.weights.iter().any(|row| row.len() != m) {
        return domain("every client needs the same non-zero number of weights");
    }
    if setup.replicas < 2 {
        return domain("at least two replicas are needed for a standard error");
    }
    if mech.bits_per_param() > MAX_BITS_PER_PARAM {
        return domain(format!(
            "bits per parameter must be at most {MAX_BITS_PER_PARAM}, got {}",
            mech.bits_per_param()
        ));
    }
    if let DmeMechanism::AugCorbin { gamma, .. } = *mech {
        aug_solo_count(n, gamma)?;
    }
    Ok(m)
}

/// Runs the replicas in parallel; results are reduced in replica order so the
/// estimate does not depend on the thread count.
pub fn run_dme(setup: &DmeSetup, mech: &DmeMechanism) -> Result<DmeEstimate> {
    let m = check_setup(setup, mech)?;
    let n = setup.weights.len();
    let clipped: Vec<Vec<f64>> = setup
        .weights
        .iter()
        .map(|row| row.iter().map(|&w| setup.clip.clip(w)).collect())
        .collect();
    let truth: Vec<f64> = (0..m)
        .map(|j| clipped.iter().map(|row| row[j]).sum::<f64>() / n as f64)
        .collect();
    let noise = match *mech {
        DmeMechanism::Gaussian { delta } => {
            Some(noise_config(mech, &setup.budget, &setup.clip, Some(delta))?)
        }
        DmeMechanism::Laplace => Some(noise_config(mech, &setup.budget, &setup.clip, None)?),
        _ => None,
    };

    let errors = (0..setup.replicas)
        .into_par_iter()
        .map(|rep| replica_error(setup, mech, &clipped, &truth, noise.as_ref(), rep as u64))
        .collect::<Result<Vec<f64>>>()?;

    let k = errors.len() as f64;
    let mse = errors.iter().sum::<f64>() / k;
    let var = errors.iter().map(|e| (e - mse).powi(2)).sum::<f64>() / (k - 1.0);
    Ok(DmeEstimate {
        mse,
        stderr: (var / k).sqrt(),
        replicas: setup.replicas,
    })
}

fn replica_error(
    setup: &DmeSetup,
    mech: &DmeMechanism,
    w: &[Vec<f64>],
    truth: &[f64],
    noise: Option<&NoiseConfig>,
    rep: u64,
) -> Result<f64> {
    let n = w.len();
    let m = truth.len();
    let (budget, clip) = (&setup.budget, &setup.clip);
    let mut rng = seed::stream_rng(setup.seed, &[purpose::REPLICA, rep]);
    let mut sum = vec![0.0; m];

    match *mech {
        DmeMechanism::Gaussian { .. } | DmeMechanism::Laplace => {
            let cfg = noise.expect("noise config prepared");
            let gaussian = matches!(mech, DmeMechanism::Gaussian { .. });
            for row in w {
                for (s, &x) in sum.iter_mut().zip(row) {
                    *s += if gaussian {
                        gaussian_mechanism(x, cfg, &mut rng)?
                    } else {
                        laplace_mechanism(x, cfg, &mut rng)?
                    };
                }
            }
        }
        DmeMechanism::Ldpfl => {
            for row in w {
                for (s, &x) in sum.iter_mut().zip(row) {
                    *s += ldpq(budget, clip, x, &mut rng)?.decode();
                }
            }
        }
        DmeMechanism::Corbin { d } | DmeMechanism::AugCorbin { d, .. } => {
            let solo = match *mech {
                DmeMechanism::AugCorbin { gamma, .. } => aug_solo_count(n, gamma)?,
                _ => 0,
            };
            let plan = generate_partial_pairing(n, solo, &mut rng)?;
            // The shuffle already makes the first element of a pair uniform.
            for &(a, b) in &plan.pairs {
                for j in 0..m {
                    let z = if d == 0 {
                        0
                    } else {
                        rng.random::<u64>() >> (64 - d)
                    };
                    sum[j] += corbinq_lead(budget, clip, w[a][j], d, z, &mut rng)?.decode();
                    sum[j] += corbinq_follow(budget, clip, w[b][j], d, z, &mut rng)?.decode();
                }
            }
            for &i in &plan.unpaired {
                for (s, &x) in sum.iter_mut().zip(&w[i]) {
                    *s += ldpq(budget, clip, x, &mut rng)?.decode();
                }
            }
        }
    }
    Ok(sum
        .iter()
        .zip(truth)
        .map(|(s, t)| (s / n as f64 - t).powi(2))
        .sum::<f64>()
        / m as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(eps: f64, replicas: usize) -> DmeSetup {
        let clip = ClipSpec::new(0.0, 0.5).unwrap();
        DmeSetup {
            budget: PrivacyBudget::new(eps).unwrap(),
            clip,
            weights: frozen_weights(20, 4, &clip, 7),
            replicas,
            seed: 11,
        }
    }

    #[test]
    fn frozen_weights_in_range_and_deterministic() {
        let clip = ClipSpec::new(1.0, 2.0).unwrap();
        let a = frozen_weights(5, 3, &clip, 1);
        assert_eq!(a, frozen_weights(5, 3, &clip, 1));
        assert!(a.iter().flatten().all(|&w| clip.contains(w)));
        assert_ne!(a, frozen_weights(5, 3, &clip, 2));
    }

    #[test]
    fn deterministic_given_seed() {
        let s = setup(1.0, 200);
        let mech = DmeMechanism::Corbin { d: 5 };
        assert_eq!(run_dme(&s, &mech).unwrap(), run_dme(&s, &mech).unwrap());
    }

    #[test]
    fn ldpfl_matches_exact_variance() {
        // Var of the mean is (1/n²) Σ (r²α² − w²) exactly.
        let s = setup(1.0, 20_000);
        let n = s.weights.len() as f64;
        let a2 = (s.clip.radius() * s.budget.alpha()).powi(2);
        let m = s.weights[0].len() as f64;
        let exact = s.weights.iter().flatten().map(|w| a2 - w * w).sum::<f64>() / (n * n * m);
        let est = run_dme(&s, &DmeMechanism::Ldpfl).unwrap();
        assert!(
            (est.mse - exact).abs() < 5.0 * est.stderr,
            "{est:?} vs {exact}"
        );
    }

    #[test]
    fn corbin_beats_ldpfl_and_respects_bound() {
        let s = setup(1.0, 5_000);
        let c = run_dme(&s, &DmeMechanism::Corbin { d: 10 }).unwrap();
        let l = run_dme(&s, &DmeMechanism::Ldpfl).unwrap();
        assert!(c.mse < l.mse);
        let n = s.weights.len();
        assert!(
            c.mse
                <= dme_bound(&DmeMechanism::Corbin { d: 10 }, &s.budget, &s.clip, n).unwrap()
                    + 3.0 * c.stderr
        );
    }

    #[test]
    fn aug_endpoints() {
        assert_eq!(aug_solo_count(50, 0.0).unwrap(), 0);
        assert_eq!(aug_solo_count(50, 1.0).unwrap(), 50);
        assert_eq!(aug_solo_count(50, 0.25).unwrap(), 13);
        assert!(aug_solo_count(50, 1.5).is_err());
    }

    #[test]
    fn noise_baselines_match_variance() {
        let s = setup(2.0, 20_000);
        let n = s.weights.len();
        for mech in [
            DmeMechanism::Laplace,
            DmeMechanism::Gaussian { delta: 1e-3 },
        ] {
            let est = run_dme(&s, &mech).unwrap();
            let exact = dme_bound(&mech, &s.budget, &s.clip, n).unwrap();
            assert!(
                (est.mse - exact).abs() < 5.0 * est.stderr,
                "{mech:?}: {est:?} vs {exact}"
            );
        }
        let mut np = s.clone();
        np.budget = PrivacyBudget::non_private();
        assert!(run_dme(&np, &DmeMechanism::Laplace).is_err());
    }

    #[test]
    fn rejects_bad_setups() {
        let mut s = setup(1.0, 10);
        s.weights.truncate(1);
        assert!(run_dme(&s, &DmeMechanism::Ldpfl).is_err());
        let mut s = setup(1.0, 10);
        s.weights[1].pop();
        assert!(run_dme(&s, &DmeMechanism::Ldpfl).is_err());
        let s = setup(1.0, 10);
        assert!(run_dme(&s, &DmeMechanism::Corbin { d: 31 }).is_err());
    }
}
