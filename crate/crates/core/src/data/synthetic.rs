//! Synthetic populations with the same schema as the real data.
//!
//! A latent severity drives next-year illness counts, prior-year counts, hypertension
//! and every cost line. Race is drawn independently of severity, so any race gap in
//! model scores comes from the optional cost deflation alone.

use rand::Rng as _;
use rand_distr::{weighted::WeightedIndex, Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::schema::{self, N_FEATURES};
use crate::domain::{AgeBracket, CandidatePool, Individual, Race};
use crate::error::{Error, Result};
use crate::learners::sigmoid;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasMode {
    Unbiased,
    /// Costs of Black patients are scaled by `black_cost_factor` at fixed severity.
    CostProxyBias,
}

/// One cost line: present with probability `sigmoid(presence_offset + s)`, amount
/// `exp(log_mean + severity_slope * s + log_sd * N(0,1))`, rounded to `rounding`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub presence_offset: f64,
    pub log_mean: f64,
    pub severity_slope: f64,
    pub log_sd: f64,
    pub rounding: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub population: usize,
    pub seed: u64,
    pub bias_mode: BiasMode,
    pub black_cost_factor: f64,
    /// Black, White, Other.
    pub race_mix: [f64; 3],
    pub age_mix: [f64; AgeBracket::COUNT],
    pub female_rate: f64,
    /// Severity `s = intercept + age_slope * (b - 3) / 3 + noise * N(0,1)` for bracket index `b`.
    pub severity_intercept: f64,
    pub severity_age_slope: f64,
    pub severity_noise: f64,
    /// Prior-year illnesses ~ Poisson(min(exp(s + prior_noise * N(0,1)), illness_rate_cap)).
    pub prior_noise: f64,
    /// Upper bound on both Poisson illness rates; keeps counts in a realistic range.
    pub illness_rate_cap: f64,
    pub hypertension_offset: f64,
    /// Cost lines in schema order.
    pub costs: Vec<CostParams>,
}

fn cost(presence_offset: f64, log_mean: f64) -> CostParams {
    CostParams {
        presence_offset,
        log_mean,
        severity_slope: 0.7,
        log_sd: 0.8,
        rounding: 10.0,
    }
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let mut costs = vec![
            cost(-4.0, 8.0), // dialysis
            cost(-0.5, 6.5), // emergency
            cost(-2.0, 7.0), // home health
            cost(-1.5, 8.5), // inpatient medical
            cost(-2.5, 9.0), // inpatient surgical
            cost(0.5, 5.5),  // laboratory
            cost(1.0, 6.0),  // primary care
            cost(0.5, 6.5),  // specialists
            cost(-1.0, 7.0), // outpatient surgery
            cost(0.0, 7.0),  // other
            cost(1.0, 7.0),  // pharmacy
            cost(-2.0, 6.0), // physical therapy
            cost(0.0, 6.0),  // radiology
        ];
        costs[9].rounding = 100.0;
        GeneratorConfig {
            population: 10_000,
            seed: 0,
            bias_mode: BiasMode::CostProxyBias,
            black_cost_factor: 0.4,
            race_mix: [0.22, 0.68, 0.10],
            age_mix: [0.12, 0.14, 0.15, 0.17, 0.17, 0.14, 0.11],
            female_rate: 0.6,
            severity_intercept: -0.25,
            severity_age_slope: 0.8,
            severity_noise: 1.10,
            prior_noise: 0.5,
            illness_rate_cap: 10.0,
            hypertension_offset: -0.5,
            costs,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.population == 0 {
            return bad("population must be positive");
        }
        if self.costs.len() != schema::N_COSTS {
            return Err(Error::Dimension {
                expected: schema::N_COSTS,
                got: self.costs.len(),
            });
        }
        let probs = self.race_mix.iter().chain(&self.age_mix);
        if probs.clone().any(|p| !(0.0..=1.0).contains(p))
            || !(0.0..=1.0).contains(&self.female_rate)
        {
            return bad("mixing weights and rates must lie in [0, 1]");
        }
        if self.race_mix.iter().sum::<f64>() <= 0.0 || self.age_mix.iter().sum::<f64>() <= 0.0 {
            return bad("race and age mixes need positive mass");
        }
        if !(self.black_cost_factor > 0.0)
            || self
                .costs
                .iter()
                .any(|c| !(c.rounding > 0.0) || c.log_sd < 0.0)
        {
            return bad("cost factor and rounding must be positive");
        }
        if !(self.illness_rate_cap > 0.0) {
            return bad("illness rate cap must be positive");
        }
        if self.severity_noise < 0.0 || self.prior_noise < 0.0 {
            return bad("noise scales must be nonnegative");
        }
        Ok(())
    }
}

fn poisson(rate: f64, rng: &mut seed::Rng) -> u32 {
    // rates stay far below u32 range for any sane configuration
    Poisson::new(rate.clamp(1e-12, 1e6))
        .expect("positive rate")
        .sample(rng) as u32
}

/// Generate a population; qualification is computed against `q`.
pub fn generate_synthetic(config: &GeneratorConfig, q: u32) -> Result<CandidatePool> {
    config.validate()?;
    let mut rng = seed::rng(seed::derive(config.seed, "synthetic", 0));
    let races =
        WeightedIndex::new(config.race_mix).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let ages =
        WeightedIndex::new(config.age_mix).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut out = Vec::with_capacity(config.population);
    for _ in 0..config.population {
        let race = Race::ALL[races.sample(&mut rng)];
        let b = ages.sample(&mut rng);
        let age = AgeBracket::from_index(b).expect("index within bracket count");
        let z: f64 = rng.sample(StandardNormal);
        let s = config.severity_intercept
            + config.severity_age_slope * (b as f64 - 3.0) / 3.0
            + config.severity_noise * z;

        let mut x = vec![0.0; N_FEATURES];
        x[schema::FEMALE] = f64::from(u8::from(rng.random_bool(config.female_rate)));
        x[schema::age_band_column(age)] = 1.0;
        x[schema::HYPERTENSION] = f64::from(u8::from(
            rng.random_bool(sigmoid(config.hypertension_offset + s)),
        ));
        let factor = match (config.bias_mode, race) {
            (BiasMode::CostProxyBias, Race::Black) => config.black_cost_factor,
            _ => 1.0,
        };
        for (c, p) in config.costs.iter().enumerate() {
            let present = rng.random_bool(sigmoid(p.presence_offset + s));
            let noise: f64 = rng.sample(StandardNormal);
            if present {
                let amount = (p.log_mean + p.severity_slope * s + p.log_sd * noise).exp() * factor;
                x[schema::COST_START + c] = (amount / p.rounding).round() * p.rounding;
            }
        }
        let prior_noise: f64 = rng.sample(StandardNormal);
        x[schema::PRIOR_ILLNESSES] = f64::from(poisson(
            (s + config.prior_noise * prior_noise)
                .exp()
                .min(config.illness_rate_cap),
            &mut rng,
        ));
        let illnesses = poisson(s.exp().min(config.illness_rate_cap), &mut rng);
        out.push(Individual::new(x, race, age, illnesses));
    }
    Ok(CandidatePool::new(out, q))
}
