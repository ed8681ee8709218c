//! Core value types: candidates, pools, allocations, predictions and the
//! equal-utility space parameters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Race {
    Black,
    White,
    Other,
}

impl Race {
    pub const ALL: [Race; 3] = [Race::Black, Race::White, Race::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Race::Black => "black",
            Race::White => "white",
            Race::Other => "other",
        }
    }
}

impl fmt::Display for Race {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Race {
    type Err = std::convert::Infallible;

    /// Anything other than black/white is carried as `Other`.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "black" => Race::Black,
            "white" => Race::White,
            _ => Race::Other,
        })
    }
}

/// The seven age brackets of the healthcare schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgeBracket {
    #[serde(rename = "18-24")]
    A18To24,
    #[serde(rename = "25-34")]
    A25To34,
    #[serde(rename = "35-44")]
    A35To44,
    #[serde(rename = "45-54")]
    A45To54,
    #[serde(rename = "55-64")]
    A55To64,
    #[serde(rename = "65-74")]
    A65To74,
    #[serde(rename = "75+")]
    A75Plus,
}

impl AgeBracket {
    pub const COUNT: usize = 7;
    pub const ALL: [AgeBracket; 7] = [
        AgeBracket::A18To24,
        AgeBracket::A25To34,
        AgeBracket::A35To44,
        AgeBracket::A45To54,
        AgeBracket::A55To64,
        AgeBracket::A65To74,
        AgeBracket::A75Plus,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            AgeBracket::A18To24 => "18-24",
            AgeBracket::A25To34 => "25-34",
            AgeBracket::A35To44 => "35-44",
            AgeBracket::A45To54 => "45-54",
            AgeBracket::A55To64 => "55-64",
            AgeBracket::A65To74 => "65-74",
            AgeBracket::A75Plus => "75+",
        }
    }
}

/// One candidate. `qualified` is derived from `chronic_illnesses` by the owning pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub id: usize,
    pub features: Vec<f64>,
    pub qualified: bool,
    pub race: Race,
    pub age_bracket: AgeBracket,
    /// Active chronic illnesses in the outcome year.
    pub chronic_illnesses: u32,
}

impl Individual {
    pub fn new(
        features: Vec<f64>,
        race: Race,
        age_bracket: AgeBracket,
        chronic_illnesses: u32,
    ) -> Self {
        Individual {
            id: 0,
            features,
            qualified: false,
            race,
            age_bracket,
            chronic_illnesses,
        }
    }
}

/// `n` candidates labelled against qualification threshold `q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    individuals: Vec<Individual>,
    n_prime: usize,
    q: u32,
}

impl CandidatePool {
    /// Re-indexes ids to positions and recomputes qualification as `illnesses >= q`.
    pub fn new(mut individuals: Vec<Individual>, q: u32) -> Self {
        let mut n_prime = 0;
        for (i, ind) in individuals.iter_mut().enumerate() {
            ind.id = i;
            ind.qualified = ind.chronic_illnesses >= q;
            n_prime += usize::from(ind.qualified);
        }
        CandidatePool {
            individuals,
            n_prime,
            q,
        }
    }

    pub fn individuals(&self) -> &[Individual] {
        &self.individuals
    }

    pub fn into_individuals(self) -> Vec<Individual> {
        self.individuals
    }

    pub fn n(&self) -> usize {
        self.individuals.len()
    }

    pub fn n_prime(&self) -> usize {
        self.n_prime
    }

    pub fn q(&self) -> u32 {
        self.q
    }

    pub fn is_empty(&self) -> bool {
        self.individuals.is_empty()
    }

    pub fn qualification_rate(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.n_prime as f64 / self.n() as f64
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.individuals.first().map_or(0, |i| i.features.len())
    }

    pub fn with_threshold(&self, q: u32) -> Self {
        CandidatePool::new(self.individuals.clone(), q)
    }

    /// A new pool made of the given positions, in that order, re-indexed from 0.
    pub fn subset(&self, ids: &[usize]) -> Self {
        let picked = ids.iter().map(|&i| self.individuals[i].clone()).collect();
        CandidatePool::new(picked, self.q)
    }

    pub fn map_features(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let individuals = self
            .individuals
            .iter()
            .map(|ind| Individual {
                features: f(&ind.features),
                ..ind.clone()
            })
            .collect();
        CandidatePool {
            individuals,
            n_prime: self.n_prime,
            q: self.q,
        }
    }

    pub fn labels(&self) -> Vec<f64> {
        self.individuals
            .iter()
            .map(|i| if i.qualified { 1.0 } else { 0.0 })
            .collect()
    }
}

/// A binary selection vector with exactly `k` positives.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Allocation {
    outcomes: Vec<bool>,
    k: usize,
    k_prime: Option<usize>,
}

impl Allocation {
    pub fn new(outcomes: Vec<bool>) -> Self {
        let k = outcomes.iter().filter(|&&o| o).count();
        Allocation {
            outcomes,
            k,
            k_prime: None,
        }
    }

    pub fn from_selected(n: usize, selected: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut outcomes = vec![false; n];
        for id in selected {
            let slot = outcomes.get_mut(id).ok_or(Error::Dimension {
                expected: n,
                got: id + 1,
            })?;
            if *slot {
                return Err(Error::InvalidArgument(format!("id {id} selected twice")));
            }
            *slot = true;
        }
        Ok(Allocation::new(outcomes))
    }

    pub fn outcomes(&self) -> &[bool] {
        &self.outcomes
    }

    pub fn n(&self) -> usize {
        self.outcomes.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn k_prime(&self) -> Option<usize> {
        self.k_prime
    }

    pub fn is_selected(&self, id: usize) -> bool {
        self.outcomes[id]
    }

    pub fn selected(&self) -> impl Iterator<Item = usize> + '_ {
        self.outcomes
            .iter()
            .enumerate()
            .filter_map(|(i, &o)| o.then_some(i))
    }
}

/// Utility `k'/k` of an allocation; records `k'` on it.
pub fn allocation_utility(alloc: &mut Allocation, pool: &CandidatePool) -> Result<f64> {
    if alloc.n() != pool.n() {
        return Err(Error::Dimension {
            expected: pool.n(),
            got: alloc.n(),
        });
    }
    if alloc.k == 0 {
        return Err(Error::Degenerate(
            "allocation selects nobody (k = 0)".into(),
        ));
    }
    let k_prime = alloc
        .selected()
        .filter(|&i| pool.individuals[i].qualified)
        .count();
    alloc.k_prime = Some(k_prime);
    Ok(k_prime as f64 / alloc.k as f64)
}

/// Sampling-method label carried by every prediction vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodTag {
    FeatureSubsets,
    Bootstrap,
    Shuffle,
    Perturbation,
    Baseline,
}

impl MethodTag {
    pub const SAMPLING: [MethodTag; 4] = [
        MethodTag::FeatureSubsets,
        MethodTag::Bootstrap,
        MethodTag::Shuffle,
        MethodTag::Perturbation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodTag::FeatureSubsets => "feature_subsets",
            MethodTag::Bootstrap => "bootstrap",
            MethodTag::Shuffle => "shuffle",
            MethodTag::Perturbation => "perturbation",
            MethodTag::Baseline => "baseline",
        }
    }
}

impl fmt::Display for MethodTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One model's scores over a pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionVector {
    scores: Vec<f64>,
    validation_loss: f64,
    method: MethodTag,
    model_id: String,
}

impl PredictionVector {
    pub fn new(
        scores: Vec<f64>,
        validation_loss: f64,
        method: MethodTag,
        model_id: impl Into<String>,
    ) -> Result<Self> {
        if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::InvalidArgument(format!(
                "score {bad} outside [0, 1]"
            )));
        }
        if !validation_loss.is_finite() || validation_loss < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "validation loss {validation_loss} is not a finite nonnegative number"
            )));
        }
        Ok(PredictionVector {
            scores,
            validation_loss,
            method,
            model_id: model_id.into(),
        })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn n(&self) -> usize {
        self.scores.len()
    }

    pub fn validation_loss(&self) -> f64 {
        self.validation_loss
    }

    pub fn method(&self) -> MethodTag {
        self.method
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }
}

/// Prediction vectors retained by the loss-tolerance filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RashomonSample {
    pub method: MethodTag,
    pub members: Vec<PredictionVector>,
    pub epsilon: f64,
    pub best_loss: f64,
}

impl RashomonSample {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Every member within `best_loss + epsilon`.
    pub fn satisfies_bound(&self) -> bool {
        self.members
            .iter()
            .all(|m| m.validation_loss() <= self.best_loss + self.epsilon)
    }
}

/// Parameters `(n, k, n', k', delta)` of a delta-equal-utility allocation space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EqualUtilitySpace {
    pub n: usize,
    pub k: usize,
    pub n_prime: usize,
    pub k_prime: usize,
    pub delta: usize,
}

impl EqualUtilitySpace {
    pub fn new(n: usize, k: usize, n_prime: usize, k_prime: usize, delta: usize) -> Result<Self> {
        if k > n {
            return Err(Error::InvalidArgument(format!("k = {k} exceeds n = {n}")));
        }
        if n_prime > n {
            return Err(Error::InvalidArgument(format!(
                "n' = {n_prime} exceeds n = {n}"
            )));
        }
        if k_prime > k.min(n_prime) {
            return Err(Error::InvalidArgument(format!(
                "k' = {k_prime} exceeds min(k, n') = {}",
                k.min(n_prime)
            )));
        }
        Ok(EqualUtilitySpace {
            n,
            k,
            n_prime,
            k_prime,
            delta,
        })
    }

    pub fn n_unqualified(&self) -> usize {
        self.n - self.n_prime
    }

    /// Qualified-selected counts `k'_delta` in the summation window, feasible ones only.
    pub fn feasible_levels(&self) -> impl Iterator<Item = usize> + '_ {
        let lo = self.k_prime.saturating_sub(self.delta);
        (lo..=self.k_prime)
            .filter(move |&j| j <= self.n_prime && self.k - j <= self.n_unqualified())
    }

    pub fn is_empty(&self) -> bool {
        self.feasible_levels().next().is_none()
    }
}
