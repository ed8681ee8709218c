//! Empirical Rashomon-set exploration: four ways of producing many near-optimal models,
//! and the loss-tolerance filter that turns them into a [`RashomonSample`].

use std::collections::HashSet;
use std::path::Path;

use log::warn;
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combinatorics::binomial;
use crate::domain::{CandidatePool, MethodTag, PredictionVector, RashomonSample};
use crate::error::{Error, Result};
use crate::learners::{
    logit_gradient, mean_loss, predict, train, Dataset, Family, NetworkTrainer, Parameters,
    TrainConfig, TrainedModel,
};
use crate::seed::{self, derive};

pub const SAMPLE_FORMAT_VERSION: u32 = 1;

/// Training and validation splits in model space.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    /// Euclidean length of each ascent step in parameter space.
    pub step: f64,
    pub max_steps: usize,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig {
            step: 1e-2,
            max_steps: 200,
        }
    }
}

pub const DEFAULT_SHUFFLE_BURN_IN: usize = 5;

fn check_budget(budget: usize) -> Result<()> {
    if budget == 0 {
        return Err(Error::InvalidArgument("budget must be at least 1".into()));
    }
    Ok(())
}

fn tag(mut m: TrainedModel, method: MethodTag, i: usize) -> TrainedModel {
    m.method = method;
    m.model_id = format!("{}-{i:05}", method.as_str());
    m
}

/// Scoring systems over `budget` distinct random feature subsets of exactly
/// `base.max_features` features. Models with identical parameters are dropped.
pub fn sample_feature_subsets(
    base: &TrainConfig,
    data: &Splits,
    budget: usize,
    seed: u64,
) -> Result<Vec<TrainedModel>> {
    check_budget(budget)?;
    let d = data.train.dim();
    let m = base.max_features.min(d);
    if m == 0 {
        return Err(Error::InvalidArgument(
            "feature subsets need at least one feature".into(),
        ));
    }
    let total = binomial(d, m);
    let budget = if total < budget.into() {
        warn!(
            "only {total} distinct subsets of {m} out of {d} features; truncating budget {budget}"
        );
        usize::try_from(&total).expect("fits because it is below a usize budget")
    } else {
        budget
    };

    let mut rng = seed::rng(derive(seed, "feature_subsets", 0));
    let mut seen = HashSet::new();
    let mut subsets = Vec::with_capacity(budget);
    if budget.saturating_mul(2) >= usize::try_from(&total).unwrap_or(usize::MAX) {
        // dense regime: enumerate every subset, then take a random selection of them
        let mut all = Vec::new();
        combinations(d, m, &mut Vec::new(), 0, &mut all);
        for i in index::sample(&mut rng, all.len(), budget) {
            subsets.push(all[i].clone());
        }
    } else {
        while subsets.len() < budget {
            let mut s = index::sample(&mut rng, d, m).into_vec();
            s.sort_unstable();
            if seen.insert(s.clone()) {
                subsets.push(s);
            }
        }
    }

    let models: Vec<TrainedModel> = subsets
        .par_iter()
        .enumerate()
        .map(|(i, subset)| {
            let mut mask = vec![false; d];
            for &j in subset {
                mask[j] = true;
            }
            let cfg = TrainConfig {
                family: Family::ScoringSystem,
                feature_mask: Some(mask),
                seed: derive(seed, "subset_model", i as u64),
                ..base.clone()
            };
            train(&cfg, &data.train, &data.validation).map(|m| tag(m, MethodTag::FeatureSubsets, i))
        })
        .collect::<Result<_>>()?;

    let mut unique = HashSet::new();
    Ok(models
        .into_iter()
        .filter(|m| {
            unique.insert(serde_json::to_string(&m.parameters).expect("parameters serialize"))
        })
        .collect())
}

fn combinations(d: usize, m: usize, cur: &mut Vec<usize>, start: usize, out: &mut Vec<Vec<usize>>) {
    if cur.len() == m {
        out.push(cur.clone());
        return;
    }
    for j in start..d {
        if d - j < m - cur.len() {
            break;
        }
        cur.push(j);
        combinations(d, m, cur, j + 1, out);
        cur.pop();
    }
}

/// Networks trained on same-size with-replacement resamples of the training split.
pub fn sample_bootstrap(
    base: &TrainConfig,
    data: &Splits,
    budget: usize,
    seed: u64,
) -> Result<Vec<TrainedModel>> {
    check_budget(budget)?;
    (0..budget)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng(derive(seed, "bootstrap_resample", i as u64));
            let resampled = data.train.bootstrap(&mut rng);
            let cfg = base
                .clone()
                .with_seed(derive(seed, "bootstrap_init", i as u64));
            train(&cfg, &resampled, &data.validation).map(|m| tag(m, MethodTag::Bootstrap, i))
        })
        .collect()
}

/// One training run; after `burn_in` epochs, every epoch's parameters become a model.
pub fn sample_shuffle(
    base: &TrainConfig,
    data: &Splits,
    epochs: usize,
    burn_in: usize,
    seed: u64,
) -> Result<Vec<TrainedModel>> {
    if epochs == 0 {
        return Err(Error::InvalidArgument("epochs must be at least 1".into()));
    }
    let cfg = base.clone().with_seed(derive(seed, "shuffle", 0));
    let mut trainer = NetworkTrainer::new(&cfg, &data.train)?;
    for _ in 0..burn_in {
        trainer.run_epoch()?;
    }
    let mut out = Vec::with_capacity(epochs);
    for e in 0..epochs {
        trainer.run_epoch()?;
        let id = format!("shuffle-epoch{:04}", trainer.epochs_run());
        let mut m = trainer.snapshot(&data.validation, MethodTag::Shuffle, id);
        m.model_id = format!("{}-{e:05}", MethodTag::Shuffle.as_str());
        out.push(m);
    }
    Ok(out)
}

/// Push a trained network toward higher scores for randomly chosen validation points.
///
/// Each step moves the parameters `config.step` along the normalized gradient of the
/// chosen point's logit (the same direction as its score). The last snapshot whose
/// validation loss stays within `base.validation_loss + epsilon` is kept.
pub fn sample_weight_perturbation(
    base: &TrainedModel,
    data: &Splits,
    budget: usize,
    config: &PerturbationConfig,
    epsilon: f64,
    seed: u64,
) -> Result<Vec<TrainedModel>> {
    check_budget(budget)?;
    let Parameters::Network {
        architecture,
        values,
    } = &base.parameters
    else {
        return Err(Error::InvalidArgument(
            "weight perturbation needs a network model".into(),
        ));
    };
    if !(config.step > 0.0) || config.max_steps == 0 {
        return Err(Error::InvalidArgument(
            "perturbation needs a positive step and step budget".into(),
        ));
    }
    let val = &data.validation;
    if val.is_empty() {
        return Err(Error::EmptyInput("validation split"));
    }
    let bound = base.validation_loss + epsilon;
    let n_points = budget.min(val.len());
    if n_points < budget {
        warn!(
            "perturbation budget {budget} exceeds {} validation points",
            val.len()
        );
    }
    let mut rng = seed::rng(derive(seed, "perturbation_points", 0));
    let points = index::sample(&mut rng, val.len(), n_points).into_vec();

    let results: Vec<Option<TrainedModel>> = points
        .par_iter()
        .enumerate()
        .map(|(i, &point)| {
            let mut theta = values.clone();
            let mut kept: Option<(Vec<f64>, f64)> = None;
            for step in 0..config.max_steps {
                let g = logit_gradient(architecture, &theta, val.row(point));
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 || !norm.is_finite() {
                    if step == 0 {
                        warn!("zero score gradient at validation point {point}; skipping");
                    }
                    break;
                }
                for (t, gi) in theta.iter_mut().zip(&g) {
                    *t += config.step * gi / norm;
                }
                let loss = mean_loss(architecture, &theta, val);
                if !(loss <= bound) {
                    break;
                }
                kept = Some((theta.clone(), loss));
            }
            kept.map(|(params, loss)| {
                let mut m = base.clone();
                m.train_loss = mean_loss(architecture, &params, &data.train);
                m.parameters = Parameters::Network {
                    architecture: architecture.clone(),
                    values: params,
                };
                m.validation_loss = loss;
                m.loss_history = vec![base.validation_loss, loss];
                tag(m, MethodTag::Perturbation, i)
            })
        })
        .collect();
    Ok(results.into_iter().flatten().collect())
}

/// Keep models within `epsilon` of the best validation loss and score them on `pool`.
pub fn filter_epsilon(
    models: &[TrainedModel],
    epsilon: f64,
    pool: &CandidatePool,
) -> Result<RashomonSample> {
    let first = models
        .first()
        .ok_or(Error::EmptyInput("no models to filter"))?;
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be nonnegative, got {epsilon}"
        )));
    }
    if let Some(m) = models.iter().find(|m| m.method != first.method) {
        return Err(Error::InvalidArgument(format!(
            "filter mixes methods {} and {}",
            first.method, m.method
        )));
    }
    let best_loss = models
        .iter()
        .map(|m| m.validation_loss)
        .fold(f64::INFINITY, f64::min);
    let members = models
        .par_iter()
        .filter(|m| m.validation_loss <= best_loss + epsilon)
        .map(|m| predict(m, pool))
        .collect::<Result<Vec<_>>>()?;
    Ok(RashomonSample {
        method: first.method,
        members,
        epsilon,
        best_loss,
    })
}

/// Re-apply the tolerance filter to an existing sample.
pub fn refilter(sample: &RashomonSample, epsilon: f64) -> Result<RashomonSample> {
    if sample.is_empty() {
        return Err(Error::EmptyInput("no models to filter"));
    }
    let best_loss = sample
        .members
        .iter()
        .map(|m| m.validation_loss())
        .fold(f64::INFINITY, f64::min);
    Ok(RashomonSample {
        method: sample.method,
        members: sample
            .members
            .iter()
            .filter(|m| m.validation_loss() <= best_loss + epsilon)
            .cloned()
            .collect(),
        epsilon,
        best_loss,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleManifest {
    format_version: u32,
    method: MethodTag,
    epsilon: f64,
    best_loss: f64,
    seed: u64,
    n_models: usize,
    n_individuals: usize,
    model_ids: Vec<String>,
    validation_losses: Vec<f64>,
}

/// Write `manifest.json` and `scores.csv` (one row per model) into `dir`.
pub fn save_sample(sample: &RashomonSample, seed: u64, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n = sample.members.first().map_or(0, |m| m.n());
    let manifest = SampleManifest {
        format_version: SAMPLE_FORMAT_VERSION,
        method: sample.method,
        epsilon: sample.epsilon,
        best_loss: sample.best_loss,
        seed,
        n_models: sample.len(),
        n_individuals: n,
        model_ids: sample
            .members
            .iter()
            .map(|m| m.model_id().to_string())
            .collect(),
        validation_losses: sample.members.iter().map(|m| m.validation_loss()).collect(),
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)
        .map_err(|e| Error::io(&path, e))?;

    let path = dir.join("scores.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["model_id".to_string()];
    header.extend((0..n).map(|i| i.to_string()));
    w.write_record(&header)?;
    for m in &sample.members {
        let mut row = vec![m.model_id().to_string()];
        row.extend(m.scores().iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}

pub fn load_sample(dir: &Path) -> Result<(RashomonSample, u64)> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: SampleManifest = serde_json::from_str(&text)?;
    if manifest.format_version != SAMPLE_FORMAT_VERSION {
        return Err(Error::Schema(format!(
            "unsupported sample format version {}",
            manifest.format_version
        )));
    }
    let path = dir.join("scores.csv");
    let mut r = csv::Reader::from_path(&path)?;
    let mut members = Vec::with_capacity(manifest.n_models);
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let id = rec.get(0).unwrap_or_default().to_string();
        let scores = rec
            .iter()
            .skip(1)
            .enumerate()
            .map(|(c, v)| {
                v.parse::<f64>().map_err(|e| Error::Data {
                    row,
                    column: c.to_string(),
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if scores.len() != manifest.n_individuals {
            return Err(Error::Dimension {
                expected: manifest.n_individuals,
                got: scores.len(),
            });
        }
        let loss = *manifest.validation_losses.get(row).ok_or_else(|| {
            Error::Schema(format!(
                "scores.csv has more rows than the {} listed models",
                manifest.n_models
            ))
        })?;
        members.push(PredictionVector::new(scores, loss, manifest.method, id)?);
    }
    if members.len() != manifest.n_models {
        return Err(Error::Schema(format!(
            "manifest lists {} models but scores.csv has {}",
            manifest.n_models,
            members.len()
        )));
    }
    Ok((
        RashomonSample {
            method: manifest.method,
            members,
            epsilon: manifest.epsilon,
            best_loss: manifest.best_loss,
        },
        manifest.seed,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{AgeBracket, Individual, Race};
    use rand::Rng;

    fn splits(n: usize, d: usize, seed: u64) -> Splits {
        let mut rng = seed::rng(seed);
        let mut make = |n: usize| {
            let mut x = Vec::new();
            let mut y = Vec::new();
            for _ in 0..n {
                let row: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let z: f64 = row
                    .iter()
                    .enumerate()
                    .map(|(j, v)| v * (1.0 + j as f64) / d as f64)
                    .sum();
                y.push(f64::from(u8::from(
                    rng.random_bool(crate::learners::sigmoid(2.0 * z)),
                )));
                x.extend(row);
            }
            Dataset::new(x, y, d).unwrap()
        };
        Splits {
            train: make(n),
            validation: make(n / 2),
        }
    }

    fn pool(d: usize) -> CandidatePool {
        let inds = (0..20)
            .map(|i| {
                Individual::new(
                    vec![(i as f64) / 10.0 - 1.0; d],
                    Race::White,
                    AgeBracket::A18To24,
                    0,
                )
            })
            .collect();
        CandidatePool::new(inds, 1)
    }

    fn dummy(loss: f64) -> TrainedModel {
        TrainedModel {
            model_id: format!("m{loss}"),
            family: Family::Logistic,
            method: MethodTag::Bootstrap,
            parameters: Parameters::Network {
                architecture: crate::learners::Architecture::new(1, &[]),
                values: vec![0.0, 0.0],
            },
            train_loss: loss,
            validation_loss: loss,
            loss_history: vec![],
            config: TrainConfig::logistic(),
        }
    }

    #[test]
    fn filter_keeps_models_within_tolerance() {
        let models: Vec<_> = [0.30, 0.305, 0.32].into_iter().map(dummy).collect();
        let s = filter_epsilon(&models, 0.01, &pool(1)).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.best_loss, 0.30);
        assert!(s.satisfies_bound());
        let s0 = filter_epsilon(&models, 0.0, &pool(1)).unwrap();
        assert_eq!(s0.len(), 1);
        assert!(matches!(
            filter_epsilon(&[], 0.01, &pool(1)),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn refilter_is_idempotent() {
        let models: Vec<_> = [0.30, 0.305, 0.31, 0.32].into_iter().map(dummy).collect();
        let s = filter_epsilon(&models, 0.01, &pool(1)).unwrap();
        assert_eq!(refilter(&s, 0.01).unwrap(), s);
    }

    #[test]
    fn all_pairs_of_four_features() {
        let data = splits(80, 4, 1);
        let cfg = TrainConfig {
            max_features: 2,
            epochs: 5,
            ..TrainConfig::scoring_system()
        };
        let models = sample_feature_subsets(&cfg, &data, 6, 3).unwrap();
        assert_eq!(models.len(), 6);
        let mut supports: Vec<Vec<usize>> = models
            .iter()
            .map(|m| {
                m.config
                    .feature_mask
                    .as_ref()
                    .unwrap()
                    .iter()
                    .enumerate()
                    .filter(|(_, &b)| b)
                    .map(|(j, _)| j)
                    .collect()
            })
            .collect();
        supports.sort();
        supports.dedup();
        assert_eq!(supports.len(), 6);
        // over-budget requests are truncated
        assert_eq!(sample_feature_subsets(&cfg, &data, 50, 3).unwrap().len(), 6);
        assert_eq!(sample_feature_subsets(&cfg, &data, 1, 3).unwrap().len(), 1);
    }

    #[test]
    fn bootstrap_is_reproducible_and_varied() {
        let data = splits(60, 3, 2);
        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::mlp()
        };
        let a = sample_bootstrap(&cfg, &data, 3, 11).unwrap();
        let b = sample_bootstrap(&cfg, &data, 3, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].parameters, a[1].parameters);
        let c = sample_bootstrap(&cfg, &data, 1, 12).unwrap();
        assert_ne!(a[0].parameters, c[0].parameters);
    }

    #[test]
    fn shuffle_snapshots_every_epoch() {
        let data = splits(60, 3, 3);
        let cfg = TrainConfig::logistic();
        assert_eq!(sample_shuffle(&cfg, &data, 1, 0, 1).unwrap().len(), 1);
        let snaps = sample_shuffle(&cfg, &data, 7, 2, 1).unwrap();
        assert_eq!(snaps.len(), 7);
        assert_eq!(snaps.last().unwrap().loss_history.len(), 9);
        assert!(sample_shuffle(&cfg, &data, 0, 0, 1).is_err());
    }

    #[test]
    fn perturbations_respect_the_bound() {
        let data = splits(100, 3, 4);
        let base = train(&TrainConfig::mlp(), &data.train, &data.validation).unwrap();
        let eps = 0.01;
        let out =
            sample_weight_perturbation(&base, &data, 10, &PerturbationConfig::default(), eps, 5)
                .unwrap();
        assert!(!out.is_empty());
        for m in &out {
            assert!(m.validation_loss <= base.validation_loss + eps);
            assert_ne!(m.parameters, base.parameters);
        }
        let unbounded = PerturbationConfig {
            step: 1e-2,
            max_steps: 1,
        };
        let all =
            sample_weight_perturbation(&base, &data, 10, &unbounded, f64::INFINITY, 5).unwrap();
        assert_eq!(all.len(), 10);
    }

    #[test]
    fn sample_round_trips_through_disk() {
        let models: Vec<_> = [0.30, 0.305].into_iter().map(dummy).collect();
        let s = filter_epsilon(&models, 0.01, &pool(1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_sample(&s, 77, dir.path()).unwrap();
        let (back, seed) = load_sample(dir.path()).unwrap();
        assert_eq!(back, s);
        assert_eq!(seed, 77);
    }
}
