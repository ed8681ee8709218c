use serde::{Deserialize, Serialize};

use super::schema;
use crate::domain::CandidatePool;
use crate::error::{Error, Result};

/// Cost columns go through `ln(1 + x)` and are then standardized with training-split
/// statistics; all other columns pass through unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub columns: Vec<usize>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Scaler {
    pub fn fit(train: &CandidatePool) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyInput("scaler fit on empty split"));
        }
        if train.feature_dim() != schema::N_FEATURES {
            return Err(Error::Dimension {
                expected: schema::N_FEATURES,
                got: train.feature_dim(),
            });
        }
        let columns: Vec<usize> = schema::cost_columns().collect();
        let n = train.n() as f64;
        let mut mean = vec![0.0; columns.len()];
        let mut sd = vec![0.0; columns.len()];
        for (c, &j) in columns.iter().enumerate() {
            let vals: Vec<f64> = train
                .individuals()
                .iter()
                .map(|i| i.features[j].ln_1p())
                .collect();
            let m = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            mean[c] = m;
            sd[c] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        Ok(Scaler { columns, mean, sd })
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        for (c, &j) in self.columns.iter().enumerate() {
            out[j] = (x[j].ln_1p() - self.mean[c]) / self.sd[c];
        }
        out
    }

    pub fn transform_pool(&self, pool: &CandidatePool) -> CandidatePool {
        pool.map_features(|x| self.transform(x))
    }
}
