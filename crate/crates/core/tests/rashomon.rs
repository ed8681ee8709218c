use allocmult::data::{generate_synthetic, GeneratorConfig, Scaler};
use allocmult::domain::{CandidatePool, MethodTag};
use allocmult::learners::{train, Dataset, TrainConfig};
use allocmult::rashomon::{
    filter_epsilon, load_sample, refilter, sample_bootstrap, sample_feature_subsets,
    sample_shuffle, sample_weight_perturbation, save_sample, PerturbationConfig, Splits,
};
use proptest::prelude::*;

struct Fixture {
    splits: Splits,
    test: CandidatePool,
}

fn fixture() -> Fixture {
    let pool = generate_synthetic(
        &GeneratorConfig {
            population: 1200,
            seed: 17,
            ..GeneratorConfig::default()
        },
        2,
    )
    .unwrap();
    let ids: Vec<usize> = (0..pool.n()).collect();
    let (train, rest) = ids.split_at(700);
    let (val, test) = rest.split_at(250);
    let train = pool.subset(train);
    let scaler = Scaler::fit(&train).unwrap();
    Fixture {
        splits: Splits {
            train: Dataset::from_pool(&scaler.transform_pool(&train)),
            validation: Dataset::from_pool(&scaler.transform_pool(&pool.subset(val))),
        },
        test: scaler.transform_pool(&pool.subset(test)),
    }
}

fn quick() -> TrainConfig {
    TrainConfig {
        epochs: 8,
        ..TrainConfig::logistic()
    }
}

#[test]
fn every_sampler_feeds_a_bounded_sample() {
    let f = fixture();
    let base = quick();
    let base_model = train(&base, &f.splits.train, &f.splits.validation).unwrap();
    let runs = [
        (
            MethodTag::FeatureSubsets,
            sample_feature_subsets(
                &TrainConfig {
                    max_features: 18,
                    ..base.clone()
                },
                &f.splits,
                10,
                1,
            )
            .unwrap(),
        ),
        (
            MethodTag::Bootstrap,
            sample_bootstrap(&base, &f.splits, 10, 2).unwrap(),
        ),
        (
            MethodTag::Shuffle,
            sample_shuffle(&base, &f.splits, 10, 3, 3).unwrap(),
        ),
        (
            MethodTag::Perturbation,
            sample_weight_perturbation(
                &base_model,
                &f.splits,
                10,
                &PerturbationConfig::default(),
                0.01,
                4,
            )
            .unwrap(),
        ),
    ];
    for (method, models) in runs {
        assert!(!models.is_empty(), "{method}");
        assert!(models.iter().all(|m| m.method == method));
        let sample = filter_epsilon(&models, 0.01, &f.test).unwrap();
        assert!(sample.satisfies_bound());
        let best = models
            .iter()
            .map(|m| m.validation_loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(sample.best_loss, best);
        let expected = models
            .iter()
            .filter(|m| m.validation_loss <= best + 0.01)
            .count();
        assert_eq!(sample.len(), expected, "{method}");
        assert!(sample.members.iter().all(|p| p.n() == f.test.n()));
    }
}

#[test]
fn perturbed_models_respect_the_base_bound() {
    let f = fixture();
    let base_model = train(&quick(), &f.splits.train, &f.splits.validation).unwrap();
    let models = sample_weight_perturbation(
        &base_model,
        &f.splits,
        12,
        &PerturbationConfig::default(),
        0.005,
        8,
    )
    .unwrap();
    assert!(models
        .iter()
        .all(|m| m.validation_loss <= base_model.validation_loss + 0.005 + 1e-12));
    assert!(models
        .iter()
        .any(|m| m.validation_loss > base_model.validation_loss));
}

#[test]
fn mixed_methods_are_rejected() {
    let f = fixture();
    let mut models = sample_bootstrap(&quick(), &f.splits, 2, 5).unwrap();
    models.extend(sample_shuffle(&quick(), &f.splits, 2, 1, 5).unwrap());
    assert!(filter_epsilon(&models, 0.01, &f.test).is_err());
    assert!(filter_epsilon(&[], 0.01, &f.test).is_err());
}

#[test]
fn samples_survive_a_disk_round_trip() {
    let f = fixture();
    let models = sample_bootstrap(&quick(), &f.splits, 6, 6).unwrap();
    let sample = filter_epsilon(&models, 0.02, &f.test).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_sample(&sample, 99, dir.path()).unwrap();
    let (back, seed) = load_sample(dir.path()).unwrap();
    assert_eq!(seed, 99);
    assert_eq!(back, sample);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn refilter_is_monotone_and_idempotent(losses in proptest::collection::vec(0.2f64..0.4, 1..30), eps in 0.0f64..0.1, shrink in 0.0f64..1.0) {
        use allocmult::domain::{PredictionVector, RashomonSample};
        let members: Vec<PredictionVector> = losses
            .iter()
            .enumerate()
            .map(|(i, &l)| PredictionVector::new(vec![0.5; 3], l, MethodTag::Bootstrap, format!("m{i}")).unwrap())
            .collect();
        let best = losses.iter().cloned().fold(f64::INFINITY, f64::min);
        let full = RashomonSample { method: MethodTag::Bootstrap, members, epsilon: f64::INFINITY, best_loss: best };
        let wide = refilter(&full, eps).unwrap();
        prop_assert!(wide.satisfies_bound());
        prop_assert_eq!(&refilter(&wide, eps).unwrap(), &wide);
        let narrow = refilter(&wide, eps * shrink).unwrap();
        prop_assert!(narrow.len() <= wide.len());
        prop_assert!(narrow.members.iter().all(|m| wide.members.iter().any(|w| w.model_id() == m.model_id())));
    }
}
