//! Sparse integer scoring systems obtained by rounding a fitted logistic model.

use super::{sigmoid, Dataset, Family, NetworkTrainer, Parameters, TrainConfig, TrainedModel};
use crate::domain::MethodTag;
use crate::error::{Error, Result};

const NEWTON_ITERS: usize = 50;

pub(super) fn fit(
    config: &TrainConfig,
    train: &Dataset,
    validation: &Dataset,
    id: String,
) -> Result<TrainedModel> {
    let dim = train.dim();
    let base = TrainConfig {
        family: Family::Logistic,
        hidden_sizes: Vec::new(),
        ..config.clone()
    };
    let mut trainer = NetworkTrainer::new(&base, train)?;
    for _ in 0..config.epochs {
        trainer.run_epoch()?;
    }
    let beta = &trainer.params()[..dim];

    let mut order: Vec<usize> = (0..dim).filter(|&j| beta[j] != 0.0).collect();
    order.sort_by(|&a, &b| beta[b].abs().total_cmp(&beta[a].abs()).then(a.cmp(&b)));
    order.truncate(config.max_features);
    let largest = order.first().map_or(0.0, |&j| beta[j].abs());

    let bound = config.coefficient_bound;
    let (weights, multiplier) = if largest > 0.0 {
        let scale = bound as f64 / largest;
        let mut w = vec![0i64; dim];
        for &j in &order {
            w[j] = ((beta[j] * scale).round() as i64).clamp(-bound, bound);
        }
        (w, scale)
    } else {
        (vec![0i64; dim], 1.0)
    };

    let offsets: Vec<f64> = (0..train.len())
        .map(|i| {
            weights
                .iter()
                .zip(train.row(i))
                .map(|(&w, x)| w as f64 * x)
                .sum::<f64>()
                / multiplier
        })
        .collect();
    let c = refit_intercept(&offsets, train.labels())?;

    let parameters = Parameters::Scoring {
        weights,
        intercept: c * multiplier,
        multiplier,
    };
    let mut model = TrainedModel {
        model_id: id,
        family: Family::ScoringSystem,
        method: MethodTag::Baseline,
        parameters,
        train_loss: 0.0,
        validation_loss: 0.0,
        loss_history: trainer_history(&trainer),
        config: config.clone(),
    };
    model.train_loss = model.loss_on(train);
    model.validation_loss = model.loss_on(validation);
    Ok(model)
}

fn trainer_history(t: &NetworkTrainer<'_>) -> Vec<f64> {
    t.history.clone()
}

/// One-dimensional Newton on the shared intercept with fixed per-row offsets.
fn refit_intercept(offsets: &[f64], labels: &[f64]) -> Result<f64> {
    let mean_y = labels.iter().sum::<f64>() / labels.len() as f64;
    if mean_y == 0.0 || mean_y == 1.0 {
        // optimum at infinity; settle for a clamped prior
        let p = mean_y.clamp(1e-6, 1.0 - 1e-6);
        return Ok((p / (1.0 - p)).ln());
    }
    let mut c = (mean_y / (1.0 - mean_y)).ln();
    for _ in 0..NEWTON_ITERS {
        let (mut g, mut h) = (0.0, 0.0);
        for (&o, &y) in offsets.iter().zip(labels) {
            let p = sigmoid(c + o);
            g += p - y;
            h += p * (1.0 - p);
        }
        if h <= 1e-300 {
            break;
        }
        let step = (g / h).clamp(-5.0, 5.0);
        c -= step;
        if step.abs() < 1e-12 {
            break;
        }
    }
    if !c.is_finite() {
        return Err(Error::TrainingFailure(
            "scoring-system intercept diverged".into(),
        ));
    }
    Ok(c)
}
