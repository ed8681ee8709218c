use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{GeneratorConfig, SplitPlan};
use crate::domain::MethodTag;
use crate::error::{Error, Result};
use crate::learners::TrainConfig;
use crate::mappings::MappingSpec;
use crate::rashomon::{PerturbationConfig, DEFAULT_SHUFFLE_BURN_IN};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "ALLOCMULT_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "allocmult-output";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Csv { path: PathBuf },
    Synthetic(GeneratorConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Budgets {
    pub feature_subsets: usize,
    pub bootstrap: usize,
    /// Number of post-burn-in epoch snapshots.
    pub shuffle: usize,
    /// Validation points perturbed.
    pub perturbation: usize,
    /// Allocations drawn per stochastic mapping and method.
    pub mapping_draws: usize,
    /// Uniform draws from the equal-utility space per pool and rate.
    pub equal_utility_samples: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            feature_subsets: 100,
            bootstrap: 100,
            shuffle: 100,
            perturbation: 100,
            mapping_draws: 100,
            equal_utility_samples: 100,
        }
    }
}

impl Budgets {
    pub fn for_method(&self, method: MethodTag) -> usize {
        match method {
            MethodTag::FeatureSubsets => self.feature_subsets,
            MethodTag::Bootstrap => self.bootstrap,
            MethodTag::Shuffle => self.shuffle,
            MethodTag::Perturbation => self.perturbation,
            MethodTag::Baseline => 1,
        }
    }

    /// Multiply the four model budgets, keeping each at least 1.
    pub fn scaled(&self, factor: f64) -> Budgets {
        let s = |b: usize| ((b as f64 * factor).round() as usize).max(1);
        Budgets {
            feature_subsets: s(self.feature_subsets),
            bootstrap: s(self.bootstrap),
            shuffle: s(self.shuffle),
            perturbation: s(self.perturbation),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub selection_rates: Vec<f64>,
    pub q_values: Vec<u32>,
    pub methods: Vec<MethodTag>,
    pub mappings: Vec<MappingSpec>,
    pub epsilon: f64,
    pub delta: usize,
    pub budgets: Budgets,
    /// Scoring-system settings for the feature-subset method.
    pub scoring: TrainConfig,
    /// Network settings for bootstrap, shuffle and perturbation.
    pub network: TrainConfig,
    pub perturbation: PerturbationConfig,
    pub shuffle_burn_in: usize,
    pub split: SplitPlan,
    pub master_seed: u64,
    pub output_dir: Option<PathBuf>,
    /// Simulations (in partition-major order) whose samples, models and allocations are
    /// written under `samples/`.
    pub persist_simulations: usize,
    /// Illness counts at which score distributions are summarized by race.
    pub risk_illness_levels: Vec<u32>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::Synthetic(GeneratorConfig::default()),
            selection_rates: vec![0.10, 0.25, 0.50],
            q_values: vec![1, 2, 3],
            methods: MethodTag::SAMPLING.to_vec(),
            mappings: MappingSpec::defaults(),
            epsilon: 0.01,
            delta: 0,
            budgets: Budgets::default(),
            scoring: TrainConfig {
                max_features: 12,
                ..TrainConfig::scoring_system()
            },
            network: TrainConfig {
                epochs: 20,
                ..TrainConfig::mlp()
            },
            perturbation: PerturbationConfig::default(),
            shuffle_burn_in: DEFAULT_SHUFFLE_BURN_IN,
            split: SplitPlan {
                pool_size: 1000,
                ..SplitPlan::default()
            },
            master_seed: 0,
            output_dir: None,
            persist_simulations: 1,
            risk_illness_levels: (0..=6).collect(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.selection_rates.is_empty() || self.methods.is_empty() || self.q_values.is_empty() {
            return bad("selection rates, q values and methods must be nonempty".into());
        }
        if let Some(r) = self
            .selection_rates
            .iter()
            .find(|r| !(**r > 0.0 && **r <= 1.0))
        {
            return bad(format!("selection rate {r} outside (0, 1]"));
        }
        if self.methods.contains(&MethodTag::Baseline) {
            return bad("`baseline` is not a sampling method".into());
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.budgets.mapping_draws < 1 || self.budgets.equal_utility_samples < 2 {
            return bad("mapping draws must be >= 1 and equal-utility samples >= 2".into());
        }
        for m in &self.methods {
            if self.budgets.for_method(*m) == 0 {
                return bad(format!("budget for {m} must be positive"));
            }
        }
        self.scoring
            .validate(self.scoring.feature_mask.as_ref().map_or(0, Vec::len))?;
        self.network
            .validate(self.network.feature_mask.as_ref().map_or(0, Vec::len))?;
        if let DataSource::Synthetic(g) = &self.data {
            g.validate()?;
        }
        Ok(())
    }

    /// Explicit `output_dir`, else `$ALLOCMULT_OUTPUT_ROOT`, else `./allocmult-output`.
    pub fn resolved_output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
    }

    pub fn with_budget_scale(mut self, factor: f64) -> Self {
        self.budgets = self.budgets.scaled(factor);
        self
    }
}
