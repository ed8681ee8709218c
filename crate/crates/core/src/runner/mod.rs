//! Experiment orchestration: training per partition and threshold, per-draw
//! simulation of every method and mapping, aggregation, and the results archive.

mod archive;
mod config;
mod figures;

use std::collections::BTreeMap;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use archive::{
    load_archive, write_archive, AgeHistogramRecord, Archive, ArchiveManifest, FailureRecord,
    MetricRecord, PopulationSummary, RiskRecord, ARCHIVE_FORMAT_VERSION,
};
pub use config::{Budgets, DataSource, ExperimentConfig, DEFAULT_OUTPUT_ROOT, OUTPUT_ROOT_ENV};
pub use figures::{emit_plot_data, figure_csv, FIGURE_IDS};

use crate::combinatorics::{
    analytic_space_stats, count_equal_utility, k_prime_from_utility,
    reference_least_discriminatory, sample_pool_equal_utility,
};
use crate::data::{generate_synthetic, load_csv, make_splits, Partition, Scaler};
use crate::domain::{
    allocation_utility, AgeBracket, Allocation, CandidatePool, EqualUtilitySpace, MethodTag,
    RashomonSample,
};
use crate::error::{Error, Result};
use crate::learners::{train, Dataset, TrainConfig, TrainedModel};
use crate::mappings::{apply, top_k, LotteryConfig, MappingSpec};
use crate::metrics::{
    age_entropy, age_histogram, ensemble_allocation, mean_sd, outcome_profile,
    pairwise_consistency, risk_by_group, threshold_test_ratio, unique_allocations,
};
use crate::rashomon::{
    filter_epsilon, sample_bootstrap, sample_feature_subsets, sample_shuffle,
    sample_weight_perturbation, Splits,
};
use crate::seed::SeedChain;

/// Method label used for baselines built from the equal-utility space.
pub const EQUAL_UTILITY: &str = "equal_utility";
/// Method label of the least-discriminatory reference allocation.
pub const REFERENCE: &str = "reference";
/// Method label for statistics pooled across all sampling methods.
pub const ALL_METHODS: &str = "all_methods";

/// Format of rate labels in records and file names.
pub fn rate_label(rate: f64) -> String {
    format!("{rate:.2}")
}

pub fn selection_size(rate: f64, n: usize) -> usize {
    ((rate * n as f64).round() as usize).clamp(1, n.max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationRecord {
    pub rate: f64,
    pub k: usize,
    pub mapping: String,
    pub lottery: LotteryConfig,
    pub model_id: String,
    pub seed_chain: SeedChain,
    pub selected: Vec<usize>,
    pub qualified_selected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistedModel {
    /// Chain of the method run that produced the model; the model's own training seed
    /// is in its config.
    pub seed_chain: SeedChain,
    pub model: TrainedModel,
}

/// Everything written under `samples/<method>/q<q>/sim<idx>/`.
#[derive(Debug, Clone, PartialEq)]
pub struct PersistedSample {
    pub simulation: usize,
    pub partition: usize,
    pub draw: usize,
    pub q: u32,
    pub sample: RashomonSample,
    pub seed_chain: SeedChain,
    pub models: Vec<PersistedModel>,
    pub allocations: Vec<AllocationRecord>,
}

/// A filtered sample kept in memory for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct RetainedSample {
    pub partition: usize,
    pub draw: usize,
    pub q: u32,
    pub sample: RashomonSample,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Keep every filtered sample in [`RunOutput::retained`].
    pub retain_samples: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub population: PopulationSummary,
    pub repetitions: usize,
    pub metrics: Vec<MetricRecord>,
    pub failures: Vec<FailureRecord>,
    pub risk: Vec<RiskRecord>,
    pub age_histograms: Vec<AgeHistogramRecord>,
    pub persisted: Vec<PersistedSample>,
    pub retained: Vec<RetainedSample>,
}

impl RunOutput {
    pub fn metric(
        &self,
        rate: f64,
        q: u32,
        method: &str,
        mapping: &str,
        metric: &str,
    ) -> Option<&MetricRecord> {
        let rate = rate_label(rate);
        self.metrics.iter().find(|m| {
            m.rate == rate
                && m.q == q
                && m.method == method
                && m.mapping == mapping
                && m.metric == metric
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct CellKey {
    rate: String,
    q: u32,
    method: String,
    mapping: String,
    metric: String,
}

/// Results of one (partition, draw) simulation across all thresholds and rates.
#[derive(Default)]
struct SimOutput {
    cells: Vec<(CellKey, Option<f64>)>,
    failures: Vec<FailureRecord>,
    risk: Vec<RiskRecord>,
    histograms: Vec<(String, u32, String, [f64; AgeBracket::COUNT])>,
    persisted: Vec<PersistedSample>,
    retained: Vec<RetainedSample>,
}

struct Recorder<'a> {
    out: &'a mut SimOutput,
    rate: String,
    q: u32,
}

impl Recorder<'_> {
    fn put(&mut self, method: &str, mapping: &str, metric: &str, value: Option<f64>) {
        self.out.cells.push((
            CellKey {
                rate: self.rate.clone(),
                q: self.q,
                method: method.to_string(),
                mapping: mapping.to_string(),
                metric: metric.to_string(),
            },
            value.filter(|v| v.is_finite()),
        ));
    }
}

fn load_population(config: &ExperimentConfig) -> Result<(CandidatePool, String)> {
    let q0 = config.q_values[0];
    match &config.data {
        DataSource::Csv { path } => Ok((load_csv(path, q0)?, format!("csv:{}", path.display()))),
        DataSource::Synthetic(g) => Ok((
            generate_synthetic(g, q0)?,
            format!("synthetic:{:?}:seed={}", g.bias_mode, g.seed).to_lowercase(),
        )),
    }
}

fn train_method(
    method: MethodTag,
    config: &ExperimentConfig,
    splits: &Splits,
    chain: &SeedChain,
) -> Result<Vec<TrainedModel>> {
    let budget = config.budgets.for_method(method);
    let seed = chain.seed;
    let models = match method {
        MethodTag::FeatureSubsets => sample_feature_subsets(&config.scoring, splits, budget, seed)?,
        MethodTag::Bootstrap => sample_bootstrap(&config.network, splits, budget, seed)?,
        MethodTag::Shuffle => sample_shuffle(
            &config.network,
            splits,
            budget,
            config.shuffle_burn_in,
            seed,
        )?,
        MethodTag::Perturbation => {
            let base_cfg = TrainConfig {
                seed: crate::seed::derive(seed, "base", 0),
                ..config.network.clone()
            };
            let base = train(&base_cfg, &splits.train, &splits.validation)?;
            sample_weight_perturbation(
                &base,
                splits,
                budget,
                &config.perturbation,
                config.epsilon,
                seed,
            )?
        }
        MethodTag::Baseline => {
            return Err(Error::InvalidArgument(
                "baseline is not a sampling method".into(),
            ))
        }
    };
    if models.is_empty() {
        return Err(Error::TrainingFailure(format!(
            "{method} produced no models"
        )));
    }
    Ok(models)
}

/// Metrics of a set of allocations over one pool.
fn record_set(
    rec: &mut Recorder<'_>,
    method: &str,
    mapping: &str,
    allocs: &mut [Allocation],
    pool: &CandidatePool,
) {
    let utilities: Vec<f64> = allocs
        .iter_mut()
        .filter_map(|a| allocation_utility(a, pool).ok())
        .collect();
    let (u_mean, _) = mean_sd(&utilities);
    rec.put(
        method,
        mapping,
        "utility",
        (!utilities.is_empty()).then_some(u_mean),
    );
    rec.put(method, mapping, "n_allocations", Some(allocs.len() as f64));
    rec.put(
        method,
        mapping,
        "unique_allocations",
        unique_allocations(allocs).ok().map(|u| u as f64),
    );
    rec.put(
        method,
        mapping,
        "pairwise_consistency",
        pairwise_consistency(allocs).ok(),
    );
    match outcome_profile(allocs, pool) {
        Ok(p) => {
            rec.put(
                method,
                mapping,
                "systemic_rejection",
                Some(p.systemic_rejection),
            );
            rec.put(
                method,
                mapping,
                "multiple_outcomes",
                Some(p.multiple_outcomes),
            );
            rec.put(method, mapping, "always_accepted", Some(p.always_accepted));
        }
        Err(_) => {
            for m in ["systemic_rejection", "multiple_outcomes", "always_accepted"] {
                rec.put(method, mapping, m, None);
            }
        }
    }
    let ratios: Vec<f64> = allocs
        .iter()
        .filter_map(|a| threshold_test_ratio(a, pool).ok())
        .collect();
    let has = !ratios.is_empty();
    rec.put(
        method,
        mapping,
        "threshold_ratio_mean",
        has.then(|| mean_sd(&ratios).0),
    );
    rec.put(
        method,
        mapping,
        "threshold_ratio_min",
        has.then(|| ratios.iter().copied().fold(f64::INFINITY, f64::min)),
    );
    let entropies: Vec<f64> = allocs
        .iter()
        .filter_map(|a| age_entropy(a, pool).ok())
        .collect();
    rec.put(
        method,
        mapping,
        "age_entropy",
        (!entropies.is_empty()).then(|| mean_sd(&entropies).0),
    );
}

fn record_single(
    rec: &mut Recorder<'_>,
    method: &str,
    mapping: &str,
    alloc: &mut Allocation,
    pool: &CandidatePool,
) {
    rec.put(
        method,
        mapping,
        "utility",
        allocation_utility(alloc, pool).ok(),
    );
    rec.put(
        method,
        mapping,
        "threshold_ratio",
        threshold_test_ratio(alloc, pool).ok(),
    );
    rec.put(
        method,
        mapping,
        "age_entropy",
        age_entropy(alloc, pool).ok(),
    );
}

fn mean_histogram(allocs: &[Allocation], pool: &CandidatePool) -> [f64; AgeBracket::COUNT] {
    let mut acc = [0.0; AgeBracket::COUNT];
    for a in allocs {
        if let Ok(h) = age_histogram(a, pool) {
            for (x, c) in acc.iter_mut().zip(h) {
                *x += c as f64;
            }
        }
    }
    acc.map(|x| x / allocs.len().max(1) as f64)
}

struct DrawContext<'a> {
    config: &'a ExperimentConfig,
    partition: usize,
    draw: usize,
    simulation: usize,
    q: u32,
    pool: &'a CandidatePool,
    trained: &'a [(MethodTag, SeedChain, Result<Vec<TrainedModel>>)],
    chain: SeedChain,
    persist: bool,
    retain: bool,
    first_draw: bool,
}

fn simulate_draw(ctx: &DrawContext<'_>, out: &mut SimOutput) {
    let config = ctx.config;
    let pool = ctx.pool;
    let n = pool.n();
    let fail =
        |out: &mut SimOutput, rate: Option<f64>, method: Option<&str>, stage: &str, e: &Error| {
            out.failures.push(FailureRecord {
                partition: ctx.partition,
                draw: Some(ctx.draw),
                q: ctx.q,
                rate,
                method: method.map(str::to_string),
                stage: stage.to_string(),
                message: e.to_string(),
            })
        };

    let mut samples: Vec<(MethodTag, &SeedChain, &[TrainedModel], RashomonSample)> = Vec::new();
    for (method, chain, models) in ctx.trained {
        let Ok(models) = models else { continue };
        match filter_epsilon(models, config.epsilon, pool) {
            Ok(s) => samples.push((*method, chain, models.as_slice(), s)),
            Err(e) => fail(out, None, Some(method.as_str()), "filter", &e),
        }
    }

    if ctx.first_draw {
        for (method, _, _, sample) in &samples {
            for &level in &config.risk_illness_levels {
                match risk_by_group(sample, pool, level) {
                    Ok(groups) => out.risk.push(RiskRecord {
                        partition: ctx.partition,
                        q: ctx.q,
                        method: method.as_str().to_string(),
                        illness_level: level,
                        groups,
                    }),
                    Err(e) => fail(out, None, Some(method.as_str()), "risk_by_group", &e),
                }
            }
        }
    }

    let mut persisted: Vec<PersistedSample> = if ctx.persist {
        samples
            .iter()
            .map(|(_, chain, models, sample)| {
                let kept: std::collections::HashSet<&str> =
                    sample.members.iter().map(|m| m.model_id()).collect();
                PersistedSample {
                    simulation: ctx.simulation,
                    partition: ctx.partition,
                    draw: ctx.draw,
                    q: ctx.q,
                    sample: sample.clone(),
                    seed_chain: (*chain).clone(),
                    models: models
                        .iter()
                        .filter(|m| kept.contains(m.model_id.as_str()))
                        .map(|m| PersistedModel {
                            seed_chain: (*chain).clone(),
                            model: m.clone(),
                        })
                        .collect(),
                    allocations: Vec::new(),
                }
            })
            .collect()
    } else {
        Vec::new()
    };

    for (ri, &rate) in config.selection_rates.iter().enumerate() {
        let k = selection_size(rate, n);
        let rate_chain = ctx.chain.child("rate", ri as u64);
        let mut rec = Recorder {
            out: &mut *out,
            rate: rate_label(rate),
            q: ctx.q,
        };
        let mut method_topk_utilities = Vec::new();
        let mut all_min_ratio: Option<f64> = None;
        let mut new_histograms = Vec::new();
        let mut failures = Vec::new();
        let mut allocation_records: Vec<Vec<AllocationRecord>> = vec![Vec::new(); samples.len()];

        for (si, (method, _, _, sample)) in samples.iter().enumerate() {
            let mname = method.as_str();
            rec.put(mname, "top_k", "n_models", Some(sample.len() as f64));
            let mut allocs: Vec<Allocation> = match sample
                .members
                .iter()
                .map(|m| top_k(m, k))
                .collect::<Result<_>>()
            {
                Ok(a) => a,
                Err(e) => {
                    failures.push((Some(mname), "top_k", e));
                    continue;
                }
            };
            record_set(&mut rec, mname, "top_k", &mut allocs, pool);
            let utils: Vec<f64> = allocs
                .iter()
                .filter_map(|a| a.k_prime().map(|kp| kp as f64 / k as f64))
                .collect();
            if !utils.is_empty() {
                method_topk_utilities.push(mean_sd(&utils).0);
            }
            for a in &allocs {
                if let Ok(r) = threshold_test_ratio(a, pool) {
                    all_min_ratio = Some(all_min_ratio.map_or(r, |m: f64| m.min(r)));
                }
            }
            if ctx.persist {
                for (a, m) in allocs.iter().zip(&sample.members) {
                    allocation_records[si].push(AllocationRecord {
                        rate,
                        k,
                        mapping: MappingSpec::TopK.to_string(),
                        lottery: LotteryConfig::top_k(),
                        model_id: m.model_id().to_string(),
                        seed_chain: rate_chain.clone(),
                        selected: a.selected().collect(),
                        qualified_selected: a.k_prime().unwrap_or(0),
                    });
                }
            }

            // stochastic mappings over the method's best model
            let best = sample
                .members
                .iter()
                .min_by(|a, b| {
                    a.validation_loss()
                        .total_cmp(&b.validation_loss())
                        .then(a.model_id().cmp(b.model_id()))
                })
                .expect("filtered samples are nonempty");
            for (mi, spec) in config.mappings.iter().enumerate() {
                if !spec.is_stochastic() {
                    continue;
                }
                let label = spec.to_string();
                let map_chain = rate_chain.child(&format!("{mname}/{label}"), mi as u64);
                let drawn: Result<Vec<(Allocation, LotteryConfig, SeedChain)>> =
                    (0..config.budgets.mapping_draws)
                        .map(|j| {
                            let c = map_chain.child("draw", j as u64);
                            let cfg = spec.resolve(n, k, c.seed);
                            apply(best, k, &cfg).map(|a| (a, cfg, c))
                        })
                        .collect();
                match drawn {
                    Ok(drawn) => {
                        if ctx.persist {
                            for (a, cfg, c) in &drawn {
                                allocation_records[si].push(AllocationRecord {
                                    rate,
                                    k,
                                    mapping: label.clone(),
                                    lottery: *cfg,
                                    model_id: best.model_id().to_string(),
                                    seed_chain: c.clone(),
                                    selected: a.selected().collect(),
                                    qualified_selected: a
                                        .selected()
                                        .filter(|&i| pool.individuals()[i].qualified)
                                        .count(),
                                });
                            }
                        }
                        let mut allocs: Vec<Allocation> =
                            drawn.into_iter().map(|(a, _, _)| a).collect();
                        record_set(&mut rec, mname, &label, &mut allocs, pool);
                    }
                    Err(e) => failures.push((Some(mname), "mapping", e)),
                }
            }

            match ensemble_allocation(sample, k) {
                Ok(mut a) => {
                    record_single(&mut rec, mname, "ensemble", &mut a, pool);
                    new_histograms.push((
                        format!("ensemble:{mname}"),
                        mean_histogram(std::slice::from_ref(&a), pool),
                    ));
                }
                Err(e) => failures.push((Some(mname), "ensemble", e)),
            }
        }
        rec.put(ALL_METHODS, "top_k", "threshold_ratio_min", all_min_ratio);

        // reference utility from the methods' mean top-k utilities
        if method_topk_utilities.is_empty() {
            failures.push((
                None,
                "equal_utility",
                Error::Degenerate("no method produced top-k allocations".into()),
            ));
        } else {
            let u = mean_sd(&method_topk_utilities).0;
            let lo = k.saturating_sub(n - pool.n_prime());
            let hi = k.min(pool.n_prime());
            let k_prime = k_prime_from_utility(u, k).clamp(lo, hi);
            rec.put(EQUAL_UTILITY, "analytic", "k_prime", Some(k_prime as f64));
            rec.put(
                EQUAL_UTILITY,
                "analytic",
                "utility",
                Some(k_prime as f64 / k as f64),
            );
            match EqualUtilitySpace::new(n, k, pool.n_prime(), k_prime, config.delta) {
                Ok(space) => {
                    rec.put(
                        EQUAL_UTILITY,
                        "analytic",
                        "log10_count",
                        Some(count_equal_utility(&space).log10()),
                    );
                    if config.delta == 0 {
                        match analytic_space_stats(&space) {
                            Ok(st) => {
                                rec.put(
                                    EQUAL_UTILITY,
                                    "analytic",
                                    "pairwise_consistency",
                                    Some(st.pairwise_consistency),
                                );
                                rec.put(
                                    EQUAL_UTILITY,
                                    "analytic",
                                    "p_qualified",
                                    Some(st.p_qualified),
                                );
                                rec.put(
                                    EQUAL_UTILITY,
                                    "analytic",
                                    "p_unqualified",
                                    Some(st.p_unqualified),
                                );
                            }
                            Err(e) => failures.push((Some(EQUAL_UTILITY), "analytic", e)),
                        }
                    }
                }
                Err(e) => failures.push((Some(EQUAL_UTILITY), "analytic", e)),
            }

            let mut rng = rate_chain.child(EQUAL_UTILITY, 0).rng();
            let drawn: Result<Vec<Allocation>> = (0..config.budgets.equal_utility_samples)
                .map(|_| sample_pool_equal_utility(pool, k, k_prime, config.delta, &mut rng))
                .collect();
            match drawn {
                Ok(mut allocs) => {
                    record_set(&mut rec, EQUAL_UTILITY, "sampled", &mut allocs, pool);
                    new_histograms.push((
                        format!("{EQUAL_UTILITY}:sampled"),
                        mean_histogram(&allocs, pool),
                    ));
                }
                Err(e) => failures.push((Some(EQUAL_UTILITY), "sampled", e)),
            }

            match reference_least_discriminatory(pool, k, k_prime) {
                Ok(mut a) => {
                    record_single(&mut rec, REFERENCE, "least_discriminatory", &mut a, pool);
                    new_histograms.push((
                        REFERENCE.to_string(),
                        mean_histogram(std::slice::from_ref(&a), pool),
                    ));
                }
                Err(e) => failures.push((Some(REFERENCE), "reference", e)),
            }
        }

        for (method, stage, e) in failures {
            fail(out, Some(rate), method, stage, &e);
        }
        for (source, h) in new_histograms {
            out.histograms.push((rate_label(rate), ctx.q, source, h));
        }
        for (p, recs) in persisted.iter_mut().zip(allocation_records) {
            p.allocations.extend(recs);
        }
    }

    if ctx.retain {
        for (_, _, _, sample) in &samples {
            out.retained.push(RetainedSample {
                partition: ctx.partition,
                draw: ctx.draw,
                q: ctx.q,
                sample: sample.clone(),
            });
        }
    }
    out.persisted.extend(persisted);
}

fn run_partition(
    config: &ExperimentConfig,
    options: &RunOptions,
    population: &CandidatePool,
    part: &Partition,
    root: &SeedChain,
) -> Vec<SimOutput> {
    let draws = part.draws.len();
    let mut outputs: Vec<SimOutput> = (0..draws).map(|_| SimOutput::default()).collect();
    let chain_p = root.child("partition", part.index as u64);

    let train_raw = population.subset(&part.train);
    let val_raw = population.subset(&part.validation);
    let scaler = match Scaler::fit(&train_raw) {
        Ok(s) => s,
        Err(e) => {
            outputs[0].failures.push(FailureRecord {
                partition: part.index,
                draw: None,
                q: config.q_values[0],
                rate: None,
                method: None,
                stage: "scaling".into(),
                message: e.to_string(),
            });
            return outputs;
        }
    };

    for &q in &config.q_values {
        let chain_q = chain_p.child("q", u64::from(q));
        let splits = Splits {
            train: Dataset::from_pool(&scaler.transform_pool(&train_raw.with_threshold(q))),
            validation: Dataset::from_pool(&scaler.transform_pool(&val_raw.with_threshold(q))),
        };
        let trained: Vec<(MethodTag, SeedChain, Result<Vec<TrainedModel>>)> = config
            .methods
            .iter()
            .map(|&m| {
                let chain = chain_q.child(m.as_str(), 0);
                info!("partition {} q={q}: training {m}", part.index);
                let res = train_method(m, config, &splits, &chain);
                (m, chain, res)
            })
            .collect();
        for (m, _, res) in &trained {
            if let Err(e) = res {
                warn!("partition {} q={q}: {m} failed: {e}", part.index);
                outputs[0].failures.push(FailureRecord {
                    partition: part.index,
                    draw: None,
                    q,
                    rate: None,
                    method: Some(m.as_str().to_string()),
                    stage: "training".into(),
                    message: e.to_string(),
                });
            }
        }

        outputs.par_iter_mut().enumerate().for_each(|(d, out)| {
            let pool = scaler.transform_pool(&population.subset(&part.draws[d]).with_threshold(q));
            let simulation = part.index * draws + d;
            let ctx = DrawContext {
                config,
                partition: part.index,
                draw: d,
                simulation,
                q,
                pool: &pool,
                trained: &trained,
                chain: chain_q.child("draw", d as u64),
                persist: simulation < config.persist_simulations,
                retain: options.retain_samples,
                first_draw: d == 0,
            };
            simulate_draw(&ctx, out);
        });
    }
    outputs
}

/// Run the protocol in memory.
pub fn execute(config: &ExperimentConfig, options: &RunOptions) -> Result<RunOutput> {
    config.validate()?;
    let (population, provenance) = load_population(config)?;
    let partitions = make_splits(population.n(), &config.split)?;
    let root = SeedChain::root(config.master_seed);
    info!(
        "{} individuals, {} partitions x {} draws",
        population.n(),
        partitions.len(),
        config.split.draws_per_partition
    );

    let per_partition: Vec<Vec<SimOutput>> = partitions
        .par_iter()
        .map(|part| run_partition(config, options, &population, part, &root))
        .collect();

    let mut acc: BTreeMap<CellKey, (Vec<f64>, usize)> = BTreeMap::new();
    let mut hist: BTreeMap<(String, u32, String), (Vec<f64>, usize)> = BTreeMap::new();
    let mut out = RunOutput {
        config: config.clone(),
        population: PopulationSummary {
            n: population.n(),
            provenance,
            qualification_rates: config
                .q_values
                .iter()
                .map(|&q| (q, population.with_threshold(q).qualification_rate()))
                .collect(),
        },
        repetitions: partitions.iter().map(|p| p.draws.len()).sum(),
        metrics: Vec::new(),
        failures: Vec::new(),
        risk: Vec::new(),
        age_histograms: Vec::new(),
        persisted: Vec::new(),
        retained: Vec::new(),
    };
    for sim in per_partition.into_iter().flatten() {
        for (key, value) in sim.cells {
            let slot = acc.entry(key).or_default();
            match value {
                Some(v) => slot.0.push(v),
                None => slot.1 += 1,
            }
        }
        for (rate, q, source, h) in sim.histograms {
            let slot = hist
                .entry((rate, q, source))
                .or_insert_with(|| (vec![0.0; AgeBracket::COUNT], 0));
            for (a, b) in slot.0.iter_mut().zip(h) {
                *a += b;
            }
            slot.1 += 1;
        }
        out.failures.extend(sim.failures);
        out.risk.extend(sim.risk);
        out.persisted.extend(sim.persisted);
        out.retained.extend(sim.retained);
    }
    out.metrics = acc
        .into_iter()
        .map(|(k, (values, missing))| {
            let (mean, sd) = if values.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_sd(&values);
                (Some(m), Some(s))
            };
            MetricRecord {
                rate: k.rate,
                q: k.q,
                method: k.method,
                mapping: k.mapping,
                metric: k.metric,
                count: values.len(),
                mean,
                sd,
                missing,
            }
        })
        .collect();
    out.age_histograms = hist
        .into_iter()
        .map(|((rate, q, source), (sum, reps))| AgeHistogramRecord {
            rate,
            q,
            source,
            repetitions: reps,
            mean_counts: sum.iter().map(|s| s / reps as f64).collect(),
        })
        .collect();
    if !out.failures.is_empty() {
        warn!(
            "{} failed cells recorded in the manifest",
            out.failures.len()
        );
    }
    Ok(out)
}

/// Run the protocol and write the archive to the resolved output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(RunOutput, std::path::PathBuf)> {
    let out = execute(config, &RunOptions::default())?;
    let dir = config.resolved_output_dir();
    write_archive(&out, &dir)?;
    Ok((out, dir))
}
