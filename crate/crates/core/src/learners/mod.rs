//! Trainable model families: logistic regression, a small feed-forward network and a
//! sparse integer scoring system, all fit by minimizing cross-entropy with mini-batch SGD.

mod network;
mod scoring;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::domain::{CandidatePool, MethodTag, PredictionVector};
use crate::error::{Error, Result};
use crate::seed::{self, Rng};

pub use network::{logit, logit_gradient, loss_and_gradient, mean_loss, sigmoid, Architecture};

/// Probabilities are clamped to `[SCORE_CLAMP, 1 - SCORE_CLAMP]` before taking logs.
pub const SCORE_CLAMP: f64 = 1e-12;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Row-major design matrix with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Vec<f64>,
    y: Vec<f64>,
    dim: usize,
}

impl Dataset {
    pub fn new(x: Vec<f64>, y: Vec<f64>, dim: usize) -> Result<Self> {
        if x.len() != y.len() * dim {
            return Err(Error::Dimension {
                expected: y.len() * dim,
                got: x.len(),
            });
        }
        if let Some(bad) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidArgument(format!("label {bad} is not binary")));
        }
        Ok(Dataset { x, y, dim })
    }

    pub fn from_pool(pool: &CandidatePool) -> Self {
        let dim = pool.feature_dim();
        let x = pool
            .individuals()
            .iter()
            .flat_map(|i| i.features.iter().copied())
            .collect();
        Dataset {
            x,
            y: pool.labels(),
            dim,
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[f64] {
        &self.y
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        let x = rows
            .iter()
            .flat_map(|&r| self.row(r).iter().copied())
            .collect();
        let y = rows.iter().map(|&r| self.y[r]).collect();
        Dataset {
            x,
            y,
            dim: self.dim,
        }
    }

    /// Same-size resample with replacement.
    pub fn bootstrap(&self, rng: &mut Rng) -> Dataset {
        let rows: Vec<usize> = (0..self.len())
            .map(|_| rng.random_range(0..self.len()))
            .collect();
        self.select(&rows)
    }

    fn check_finite(&self, name: &str) -> Result<()> {
        match self.x.iter().position(|v| !v.is_finite()) {
            Some(pos) => Err(Error::Data {
                row: pos / self.dim.max(1),
                column: format!("feature {}", pos % self.dim.max(1)),
                message: format!("non-finite value in {name} split"),
            }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Logistic,
    Mlp,
    ScoringSystem,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub family: Family,
    #[serde(default)]
    pub hidden_sizes: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub l2: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub feature_mask: Option<Vec<bool>>,
    #[serde(default = "default_coefficient_bound")]
    pub coefficient_bound: i64,
    #[serde(default = "default_max_features")]
    pub max_features: usize,
}

fn default_coefficient_bound() -> i64 {
    5
}

fn default_max_features() -> usize {
    10
}

impl TrainConfig {
    pub fn logistic() -> Self {
        TrainConfig {
            family: Family::Logistic,
            hidden_sizes: Vec::new(),
            learning_rate: 0.1,
            epochs: 30,
            batch_size: 64,
            l2: 1e-4,
            seed: 0,
            feature_mask: None,
            coefficient_bound: default_coefficient_bound(),
            max_features: default_max_features(),
        }
    }

    /// One hidden layer of 32 tanh units.
    pub fn mlp() -> Self {
        TrainConfig {
            family: Family::Mlp,
            hidden_sizes: vec![32],
            learning_rate: 0.05,
            epochs: 30,
            batch_size: 64,
            l2: 1e-4,
            ..TrainConfig::logistic()
        }
    }

    pub fn scoring_system() -> Self {
        TrainConfig {
            family: Family::ScoringSystem,
            ..TrainConfig::logistic()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be positive".into());
        }
        if !(self.l2 >= 0.0) {
            return bad(format!("l2 must be nonnegative, got {}", self.l2));
        }
        if self.family == Family::ScoringSystem
            && (self.coefficient_bound <= 0 || self.max_features == 0)
        {
            return bad(
                "scoring systems need a positive coefficient bound and feature budget".into(),
            );
        }
        if self.family == Family::Mlp
            && (self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0))
        {
            return bad("an mlp needs at least one nonempty hidden layer".into());
        }
        if let Some(mask) = &self.feature_mask {
            if mask.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: mask.len(),
                });
            }
        }
        Ok(())
    }

    fn hidden(&self) -> &[usize] {
        match self.family {
            Family::Mlp => &self.hidden_sizes,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Parameters {
    Network {
        architecture: Architecture,
        values: Vec<f64>,
    },
    /// `p = sigmoid((intercept + sum_j w_j x_j) / multiplier)` with integer `w`.
    Scoring {
        weights: Vec<i64>,
        intercept: f64,
        multiplier: f64,
    },
}

impl Parameters {
    pub fn input_dim(&self) -> usize {
        match self {
            Parameters::Network { architecture, .. } => architecture.input_dim(),
            Parameters::Scoring { weights, .. } => weights.len(),
        }
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        match self {
            Parameters::Network {
                architecture,
                values,
            } => network::logit(architecture, values, x),
            Parameters::Scoring {
                weights,
                intercept,
                multiplier,
            } => {
                let s: f64 = weights.iter().zip(x).map(|(&w, v)| w as f64 * v).sum();
                (intercept + s) / multiplier
            }
        }
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub model_id: String,
    pub family: Family,
    pub method: MethodTag,
    pub parameters: Parameters,
    pub train_loss: f64,
    pub validation_loss: f64,
    /// Training loss after each epoch.
    pub loss_history: Vec<f64>,
    pub config: TrainConfig,
}

impl TrainedModel {
    pub fn probabilities(&self, data: &Dataset) -> Vec<f64> {
        (0..data.len())
            .map(|i| self.parameters.probability(data.row(i)))
            .collect()
    }

    pub fn loss_on(&self, data: &Dataset) -> f64 {
        cross_entropy(&self.probabilities(data), data.labels()).expect("lengths agree")
    }
}

/// Mean binary cross-entropy in nats, probabilities clamped away from 0 and 1.
pub fn cross_entropy(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::EmptyInput("cross-entropy of zero examples"));
    }
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / scores.len() as f64)
}

fn check_splits(config: &TrainConfig, train: &Dataset, validation: &Dataset) -> Result<()> {
    if train.is_empty() {
        return Err(Error::EmptyInput("training split"));
    }
    if validation.is_empty() {
        return Err(Error::EmptyInput("validation split"));
    }
    if train.dim() != validation.dim() {
        return Err(Error::Dimension {
            expected: train.dim(),
            got: validation.dim(),
        });
    }
    train.check_finite("training")?;
    validation.check_finite("validation")?;
    config.validate(train.dim())
}

/// Epoch-at-a-time SGD over a network; used directly when per-epoch snapshots matter.
pub struct NetworkTrainer<'a> {
    config: TrainConfig,
    architecture: Architecture,
    params: Vec<f64>,
    frozen: Vec<usize>,
    train: &'a Dataset,
    order: Vec<usize>,
    rng: Rng,
    pub(super) history: Vec<f64>,
}

impl<'a> NetworkTrainer<'a> {
    pub fn new(config: &TrainConfig, train: &'a Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyInput("training split"));
        }
        train.check_finite("training")?;
        config.validate(train.dim())?;
        let architecture = Architecture::new(train.dim(), config.hidden());
        let mut rng = seed::rng(config.seed);
        let mut params = vec![0.0; architecture.n_params()];
        if architecture.depth() > 1 {
            // Glorot-uniform weights, zero biases
            let mut off = 0;
            for w in architecture.layers.windows(2) {
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                for p in &mut params[off..off + w[0] * w[1]] {
                    *p = rng.random_range(-limit..limit);
                }
                off += w[0] * w[1] + w[1];
            }
        }
        let mut frozen = Vec::new();
        if let Some(mask) = &config.feature_mask {
            for (j, _) in mask.iter().enumerate().filter(|(_, &keep)| !keep) {
                frozen.extend(architecture.input_weight_indices(j));
            }
            for &i in &frozen {
                params[i] = 0.0;
            }
        }
        Ok(NetworkTrainer {
            config: config.clone(),
            architecture,
            params,
            frozen,
            train,
            order: (0..train.len()).collect(),
            rng,
            history: Vec::new(),
        })
    }

    pub fn epochs_run(&self) -> usize {
        self.history.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// One shuffled pass of mini-batch SGD; returns the full training loss afterwards.
    pub fn run_epoch(&mut self) -> Result<f64> {
        self.order.shuffle(&mut self.rng);
        let lr = self.config.learning_rate;
        for batch in self.order.chunks(self.config.batch_size) {
            let (_, mut grad) = network::loss_and_gradient(
                &self.architecture,
                &self.params,
                self.train,
                batch,
                self.config.l2,
            );
            for &i in &self.frozen {
                grad[i] = 0.0;
            }
            for (p, g) in self.params.iter_mut().zip(&grad) {
                *p -= lr * g;
            }
        }
        let loss = network::mean_loss(&self.architecture, &self.params, self.train);
        if !loss.is_finite() || self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::TrainingFailure(format!(
                "loss became {loss} at epoch {} (learning rate {}, batch size {})",
                self.history.len() + 1,
                lr,
                self.config.batch_size
            )));
        }
        self.history.push(loss);
        Ok(loss)
    }

    pub fn snapshot(
        &self,
        validation: &Dataset,
        method: MethodTag,
        model_id: impl Into<String>,
    ) -> TrainedModel {
        let parameters = Parameters::Network {
            architecture: self.architecture.clone(),
            values: self.params.clone(),
        };
        let mut model = TrainedModel {
            model_id: model_id.into(),
            family: self.config.family,
            method,
            parameters,
            train_loss: self.history.last().copied().unwrap_or(f64::NAN),
            validation_loss: 0.0,
            loss_history: self.history.clone(),
            config: self.config.clone(),
        };
        model.validation_loss = model.loss_on(validation);
        model
    }
}

/// Fit one model and record its training and validation cross-entropy.
pub fn train(config: &TrainConfig, train: &Dataset, validation: &Dataset) -> Result<TrainedModel> {
    check_splits(config, train, validation)?;
    let id = format!("{:?}-{:016x}", config.family, config.seed).to_lowercase();
    match config.family {
        Family::Logistic | Family::Mlp => {
            let mut trainer = NetworkTrainer::new(config, train)?;
            for _ in 0..config.epochs {
                trainer.run_epoch()?;
            }
            Ok(trainer.snapshot(validation, MethodTag::Baseline, id))
        }
        Family::ScoringSystem => scoring::fit(config, train, validation, id),
    }
}

/// Scores of a model over a pool whose features are already in model space.
pub fn predict(model: &TrainedModel, pool: &CandidatePool) -> Result<PredictionVector> {
    let dim = model.parameters.input_dim();
    if pool.feature_dim() != dim && !pool.is_empty() {
        return Err(Error::Dimension {
            expected: dim,
            got: pool.feature_dim(),
        });
    }
    let scores = pool
        .individuals()
        .iter()
        .map(|i| model.parameters.probability(&i.features))
        .collect();
    PredictionVector::new(
        scores,
        model.validation_loss,
        model.method,
        model.model_id.clone(),
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelDocument {
    format_version: u32,
    model: TrainedModel,
}

pub fn model_to_json(model: &TrainedModel) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ModelDocument {
        format_version: MODEL_FORMAT_VERSION,
        model: model.clone(),
    })?)
}

pub fn model_from_json(s: &str) -> Result<TrainedModel> {
    let doc: ModelDocument = serde_json::from_str(s)?;
    if doc.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::Schema(format!(
            "unsupported model format version {} (expected {MODEL_FORMAT_VERSION})",
            doc.format_version
        )));
    }
    Ok(doc.model)
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_json(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{AgeBracket, Individual, Race};

    fn separable(n: usize, seed: u64) -> Dataset {
        let mut rng = seed::rng(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            let label = a + b > 0.0;
            // push points away from the boundary
            let shift = if label { 0.3 } else { -0.3 };
            x.extend([a + shift, b + shift]);
            y.push(f64::from(u8::from(label)));
        }
        Dataset::new(x, y, 2).unwrap()
    }

    #[test]
    fn cross_entropy_examples() {
        assert!(cross_entropy(&[1.0, 0.0], &[1.0, 0.0]).unwrap() < 1e-11);
        let half = cross_entropy(&[0.5; 4], &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((half - std::f64::consts::LN_2).abs() < 1e-15);
        let v = cross_entropy(&[0.9, 0.2], &[1.0, 0.0]).unwrap();
        let expected = -(0.9f64.ln() + 0.8f64.ln()) / 2.0;
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.1643).abs() < 1e-4);
        assert!(matches!(
            cross_entropy(&[0.5], &[1.0, 0.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn separable_data_is_classified_perfectly() {
        let train_set = separable(200, 1);
        let val = separable(100, 2);
        for cfg in [TrainConfig::logistic(), TrainConfig::mlp()] {
            let cfg = TrainConfig {
                epochs: 60,
                l2: 0.0,
                ..cfg
            };
            let m = train(&cfg, &train_set, &val).unwrap();
            let p = m.probabilities(&val);
            let correct = p
                .iter()
                .zip(val.labels())
                .filter(|(p, y)| (**p > 0.5) == (**y == 1.0))
                .count();
            assert_eq!(correct, val.len(), "{:?}", cfg.family);
        }
    }

    #[test]
    fn uninformative_features_recover_base_rate() {
        let n = 200;
        let y: Vec<f64> = (0..n).map(|i| f64::from(u8::from(i % 10 < 7))).collect();
        let data = Dataset::new(vec![0.0; n * 3], y, 3).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 20,
            learning_rate: 0.2,
            l2: 0.0,
            ..TrainConfig::logistic()
        };
        let m = train(&cfg, &data, &data).unwrap();
        for p in m.probabilities(&data) {
            assert!((p - 0.7).abs() < 0.01, "{p}");
        }
    }

    #[test]
    fn constant_labels_recover_prior() {
        let n = 100;
        let data = Dataset::new(vec![0.0; n * 2], vec![1.0; n], 2).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 10,
            learning_rate: 0.5,
            l2: 0.0,
            ..TrainConfig::logistic()
        };
        let m = train(&cfg, &data, &data).unwrap();
        assert!(m
            .probabilities(&data)
            .iter()
            .all(|p| (p - 1.0).abs() < 0.01));
    }

    #[test]
    fn identical_seed_gives_identical_parameters() {
        let d = separable(120, 3);
        let cfg = TrainConfig::mlp().with_seed(99);
        let a = train(&cfg, &d, &d).unwrap();
        let b = train(&cfg, &d, &d).unwrap();
        assert_eq!(a.parameters, b.parameters);
        let c = train(&cfg.clone().with_seed(100), &d, &d).unwrap();
        assert_ne!(a.parameters, c.parameters);
    }

    #[test]
    fn full_batch_loss_is_non_increasing() {
        let d = separable(150, 4);
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 150,
            learning_rate: 0.05,
            ..TrainConfig::logistic()
        };
        let m = train(&cfg, &d, &d).unwrap();
        for w in m.loss_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
    }

    #[test]
    fn non_finite_features_are_rejected() {
        let good = separable(10, 5);
        let bad = Dataset::new(vec![0.0, f64::NAN], vec![1.0], 2).unwrap();
        assert!(matches!(
            train(&TrainConfig::logistic(), &bad, &good),
            Err(Error::Data { .. })
        ));
    }

    #[test]
    fn divergence_is_reported() {
        let d = separable(50, 6);
        let cfg = TrainConfig {
            learning_rate: 1e308,
            l2: 1.0,
            ..TrainConfig::logistic()
        };
        assert!(matches!(
            train(&cfg, &d, &d),
            Err(Error::TrainingFailure(_))
        ));
    }

    fn pool_of(features: Vec<Vec<f64>>) -> CandidatePool {
        let inds = features
            .into_iter()
            .map(|f| Individual::new(f, Race::White, AgeBracket::A18To24, 0))
            .collect();
        CandidatePool::new(inds, 1)
    }

    fn model_with(parameters: Parameters) -> TrainedModel {
        TrainedModel {
            model_id: "m".into(),
            family: Family::Logistic,
            method: MethodTag::Baseline,
            parameters,
            train_loss: 0.0,
            validation_loss: 0.0,
            loss_history: vec![],
            config: TrainConfig::logistic(),
        }
    }

    #[test]
    fn zero_weight_logistic_scores_one_half() {
        let m = model_with(Parameters::Network {
            architecture: Architecture::new(2, &[]),
            values: vec![0.0; 3],
        });
        let pv = predict(&m, &pool_of(vec![vec![1.0, -3.0], vec![5.0, 2.0]])).unwrap();
        assert!(pv.scores().iter().all(|&s| s == 0.5));
    }

    #[test]
    fn large_weights_saturate() {
        let m = model_with(Parameters::Network {
            architecture: Architecture::new(1, &[]),
            values: vec![1e6, 0.0],
        });
        let pv = predict(&m, &pool_of(vec![vec![0.5]])).unwrap();
        assert!((pv.scores()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn integer_scoring_system_evaluation() {
        let m = model_with(Parameters::Scoring {
            weights: vec![2, -1],
            intercept: 0.0,
            multiplier: 1.0,
        });
        let pv = predict(&m, &pool_of(vec![vec![1.0, 1.0]])).unwrap();
        let expected = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((pv.scores()[0] - expected).abs() < 1e-15);
        assert!((pv.scores()[0] - 0.731).abs() < 1e-3);
    }

    #[test]
    fn predict_dimension_mismatch() {
        let m = model_with(Parameters::Network {
            architecture: Architecture::new(3, &[]),
            values: vec![0.0; 4],
        });
        assert!(matches!(
            predict(&m, &pool_of(vec![vec![1.0]])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn model_json_round_trip() {
        let d = separable(40, 7);
        let m = train(&TrainConfig::scoring_system(), &d, &d).unwrap();
        let back = model_from_json(&model_to_json(&m).unwrap()).unwrap();
        assert_eq!(m, back);
        let bad = model_to_json(&m)
            .unwrap()
            .replace("\"format_version\": 1", "\"format_version\": 9");
        assert!(matches!(model_from_json(&bad), Err(Error::Schema(_))));
    }
}
