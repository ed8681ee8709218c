//! Turning a score vector into an allocation of `k` resources.

use std::fmt;

use log::warn;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::domain::{Allocation, PredictionVector};
use crate::error::{Error, Result};
use crate::seed::{self, Rng};

/// Scores are kept inside `(SIGMOID_LOGIT_CLAMP, 1 - SIGMOID_LOGIT_CLAMP)` before the transform.
pub const SIGMOID_LOGIT_CLAMP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MappingKind {
    TopK,
    Boundary,
    SigmoidLogit,
}

/// Fully resolved parameters of one mapping application.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LotteryConfig {
    pub kind: MappingKind,
    pub k_tilde: usize,
    pub n_tilde: usize,
    pub mu: f64,
    pub v: f64,
    pub seed: u64,
}

impl LotteryConfig {
    pub fn top_k() -> Self {
        LotteryConfig {
            kind: MappingKind::TopK,
            k_tilde: 0,
            n_tilde: 0,
            mu: 0.5,
            v: 1.0,
            seed: 0,
        }
    }

    pub fn boundary(k_tilde: usize, n_tilde: usize, seed: u64) -> Self {
        LotteryConfig {
            kind: MappingKind::Boundary,
            k_tilde,
            n_tilde,
            seed,
            ..LotteryConfig::top_k()
        }
    }

    pub fn sigmoid_logit(mu: f64, v: f64, seed: u64) -> Self {
        LotteryConfig {
            kind: MappingKind::SigmoidLogit,
            mu,
            v,
            seed,
            ..LotteryConfig::top_k()
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        match self.kind {
            MappingKind::TopK => Ok(()),
            MappingKind::Boundary if self.k_tilde > k || self.k_tilde > self.n_tilde => {
                Err(Error::InvalidArgument(format!(
                    "lottery needs k~ <= k and k~ <= n~, got k~ = {}, n~ = {}, k = {k}",
                    self.k_tilde, self.n_tilde
                )))
            }
            MappingKind::Boundary => Ok(()),
            MappingKind::SigmoidLogit if !(self.mu > 0.0 && self.mu < 1.0) || !(self.v > 0.0) => {
                Err(Error::InvalidArgument(format!(
                    "sigmoid-logit needs mu in (0,1) and v > 0, got {} and {}",
                    self.mu, self.v
                )))
            }
            MappingKind::SigmoidLogit => Ok(()),
        }
    }
}

/// Mapping family with parameters expressed relative to `k` and `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MappingSpec {
    TopK,
    /// `k~ = k_tilde_frac * k` and `n~ = n_tilde_frac * k`, rounded, at least 1.
    Boundary {
        k_tilde_frac: f64,
        n_tilde_frac: f64,
    },
    /// `mu = 1 - k/n`.
    SigmoidLogit {
        v: f64,
    },
}

impl MappingSpec {
    pub fn defaults() -> Vec<MappingSpec> {
        vec![
            MappingSpec::TopK,
            MappingSpec::Boundary {
                k_tilde_frac: 0.25,
                n_tilde_frac: 0.50,
            },
            MappingSpec::Boundary {
                k_tilde_frac: 0.50,
                n_tilde_frac: 1.0,
            },
            MappingSpec::SigmoidLogit { v: 2.0 },
            MappingSpec::SigmoidLogit { v: 5.0 },
        ]
    }

    pub fn is_stochastic(&self) -> bool {
        !matches!(self, MappingSpec::TopK)
    }

    pub fn resolve(&self, n: usize, k: usize, seed: u64) -> LotteryConfig {
        let scaled = |f: f64| ((f * k as f64).round() as usize).max(1);
        match *self {
            MappingSpec::TopK => LotteryConfig::top_k(),
            MappingSpec::Boundary {
                k_tilde_frac,
                n_tilde_frac,
            } => LotteryConfig::boundary(scaled(k_tilde_frac), scaled(n_tilde_frac), seed),
            MappingSpec::SigmoidLogit { v } => {
                LotteryConfig::sigmoid_logit(1.0 - k as f64 / n as f64, v, seed)
            }
        }
    }
}

impl fmt::Display for MappingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MappingSpec::TopK => f.write_str("top_k"),
            MappingSpec::Boundary {
                k_tilde_frac,
                n_tilde_frac,
            } => write!(f, "boundary_{k_tilde_frac:.2}k_{n_tilde_frac:.2}k"),
            MappingSpec::SigmoidLogit { v } => write!(f, "sigmoid_logit_v{v}"),
        }
    }
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::InfeasibleSpace(format!(
            "cannot select k = {k} of n = {n}"
        )));
    }
    Ok(())
}

/// Ids ordered by descending score, then ascending id.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..scores.len()).collect();
    ids.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    ids
}

pub fn top_k_scores(scores: &[f64], k: usize) -> Result<Allocation> {
    check_k(scores.len(), k)?;
    Allocation::from_selected(scores.len(), ranking(scores).into_iter().take(k))
}

pub fn top_k(pred: &PredictionVector, k: usize) -> Result<Allocation> {
    top_k_scores(pred.scores(), k)
}

/// Sequential weighted draws without replacement, renormalizing after each draw.
fn weighted_draws(candidates: &[usize], weights: &[f64], take: usize, rng: &mut Rng) -> Vec<usize> {
    let mut pool: Vec<(usize, f64)> = candidates
        .iter()
        .copied()
        .zip(weights.iter().copied())
        .collect();
    if pool.iter().map(|(_, w)| w).sum::<f64>() <= 0.0 {
        warn!("lottery weights sum to zero; drawing uniformly");
        for p in &mut pool {
            p.1 = 1.0;
        }
    }
    let mut out = Vec::with_capacity(take);
    for _ in 0..take {
        let mut total: f64 = pool.iter().map(|(_, w)| w).sum();
        if total <= 0.0 {
            for p in &mut pool {
                p.1 = 1.0;
            }
            total = pool.len() as f64;
        }
        let mut u = rng.random::<f64>() * total;
        let mut pick = pool.len() - 1;
        for (i, (_, w)) in pool.iter().enumerate() {
            if u < *w {
                pick = i;
                break;
            }
            u -= w;
        }
        out.push(pool.swap_remove(pick).0);
    }
    out
}

/// Top `k - k~` by rank, then `k~` weighted draws over the next `n~` ranks.
pub fn boundary_lottery(
    pred: &PredictionVector,
    k: usize,
    config: &LotteryConfig,
) -> Result<Allocation> {
    let n = pred.n();
    check_k(n, k)?;
    config.validate(k)?;
    let fixed = k - config.k_tilde;
    if fixed + config.n_tilde > n {
        return Err(Error::InfeasibleSpace(format!(
            "k - k~ + n~ = {} exceeds n = {n}",
            fixed + config.n_tilde
        )));
    }
    let ranked = ranking(pred.scores());
    let lottery = &ranked[fixed..fixed + config.n_tilde];
    let weights: Vec<f64> = lottery.iter().map(|&i| pred.scores()[i]).collect();
    let mut rng = seed::rng(config.seed);
    let drawn = weighted_draws(lottery, &weights, config.k_tilde, &mut rng);
    Allocation::from_selected(n, ranked[..fixed].iter().copied().chain(drawn))
}

pub fn sigmoid_logit_weight(x: f64, mu: f64, v: f64) -> f64 {
    let x = x.clamp(SIGMOID_LOGIT_CLAMP, 1.0 - SIGMOID_LOGIT_CLAMP);
    // [1 + r^-v]^-1 with r = x(1-mu) / (mu(1-x)), evaluated in log space
    let log_r = (x / (1.0 - x)).ln() - (mu / (1.0 - mu)).ln();
    crate::learners::sigmoid(v * log_r)
}

pub fn sigmoid_logit_lottery(
    pred: &PredictionVector,
    k: usize,
    config: &LotteryConfig,
) -> Result<Allocation> {
    let n = pred.n();
    check_k(n, k)?;
    config.validate(k)?;
    let weights: Vec<f64> = pred
        .scores()
        .iter()
        .map(|&x| sigmoid_logit_weight(x, config.mu, config.v))
        .collect();
    let ids: Vec<usize> = (0..n).collect();
    let mut rng = seed::rng(config.seed);
    Allocation::from_selected(n, weighted_draws(&ids, &weights, k, &mut rng))
}

pub fn apply(pred: &PredictionVector, k: usize, config: &LotteryConfig) -> Result<Allocation> {
    match config.kind {
        MappingKind::TopK => top_k(pred, k),
        MappingKind::Boundary => boundary_lottery(pred, k, config),
        MappingKind::SigmoidLogit => sigmoid_logit_lottery(pred, k, config),
    }
}
