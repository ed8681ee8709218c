use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, derive};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitPlan {
    pub train_frac: f64,
    pub validation_frac: f64,
    pub test_frac: f64,
    pub num_partitions: usize,
    pub draws_per_partition: usize,
    pub pool_size: usize,
    pub seed: u64,
}

impl Default for SplitPlan {
    fn default() -> Self {
        SplitPlan {
            train_frac: 0.6,
            validation_frac: 0.2,
            test_frac: 0.2,
            num_partitions: 10,
            draws_per_partition: 25,
            pool_size: 1000,
            seed: 0,
        }
    }
}

/// One train/validation/test split of the population plus its pool draws
/// (positions into `test`'s source population).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub index: usize,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub draws: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitTriple<'a> {
    pub partition: usize,
    pub draw: usize,
    pub train: &'a [usize],
    pub validation: &'a [usize],
    pub pool: &'a [usize],
}

impl Partition {
    pub fn triples(&self) -> impl Iterator<Item = SplitTriple<'_>> {
        self.draws
            .iter()
            .enumerate()
            .map(move |(d, pool)| SplitTriple {
                partition: self.index,
                draw: d,
                train: &self.train,
                validation: &self.validation,
                pool,
            })
    }
}

impl SplitPlan {
    pub fn validate(&self, population: usize) -> Result<()> {
        let fracs = [self.train_frac, self.validation_frac, self.test_frac];
        if fracs.iter().any(|f| !(0.0..=1.0).contains(f))
            || (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidArgument(format!(
                "split fractions {fracs:?} must be in [0,1] and sum to 1"
            )));
        }
        if self.num_partitions == 0 || self.draws_per_partition == 0 || self.pool_size == 0 {
            return Err(Error::InvalidArgument(
                "partitions, draws and pool size must be positive".into(),
            ));
        }
        let (tr, va, te) = self.sizes(population);
        if tr == 0 || va == 0 {
            return Err(Error::InfeasibleSpace(format!(
                "population of {population} leaves an empty training or validation split"
            )));
        }
        if self.pool_size > te {
            return Err(Error::InfeasibleSpace(format!(
                "pool size {} exceeds test split of {te}",
                self.pool_size
            )));
        }
        Ok(())
    }

    /// Train and validation sizes are rounded; the test split takes the remainder.
    pub fn sizes(&self, population: usize) -> (usize, usize, usize) {
        let tr = ((self.train_frac * population as f64).round() as usize).min(population);
        let va = ((self.validation_frac * population as f64).round() as usize).min(population - tr);
        (tr, va, population - tr - va)
    }
}

pub fn make_splits(population: usize, plan: &SplitPlan) -> Result<Vec<Partition>> {
    plan.validate(population)?;
    let (tr, va, _) = plan.sizes(population);
    Ok((0..plan.num_partitions)
        .map(|p| {
            let mut rng = seed::rng(derive(plan.seed, "partition", p as u64));
            let mut order: Vec<usize> = (0..population).collect();
            order.shuffle(&mut rng);
            let test = order.split_off(tr + va);
            let validation = order.split_off(tr);
            let draws = (0..plan.draws_per_partition)
                .map(|d| {
                    let mut rng =
                        seed::rng(derive(plan.seed, &format!("partition{p}_draw"), d as u64));
                    let mut ids: Vec<usize> = index::sample(&mut rng, test.len(), plan.pool_size)
                        .into_iter()
                        .map(|i| test[i])
                        .collect();
                    ids.sort_unstable();
                    ids
                })
                .collect();
            Partition {
                index: p,
                train: order,
                validation,
                test,
                draws,
            }
        })
        .collect())
}
