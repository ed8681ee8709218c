use allocmult::data::{GeneratorConfig, SplitPlan};
use allocmult::runner::{
    emit_plot_data, execute, load_archive, write_archive, Budgets, DataSource, ExperimentConfig,
    RunOptions, FIGURE_IDS,
};
use allocmult::Error;

fn smoke() -> ExperimentConfig {
    ExperimentConfig {
        data: DataSource::Synthetic(GeneratorConfig {
            population: 2000,
            seed: 3,
            ..GeneratorConfig::default()
        }),
        q_values: vec![2],
        split: SplitPlan {
            num_partitions: 1,
            draws_per_partition: 2,
            pool_size: 300,
            seed: 1,
            ..SplitPlan::default()
        },
        budgets: Budgets {
            feature_subsets: 20,
            bootstrap: 20,
            shuffle: 20,
            perturbation: 20,
            mapping_draws: 10,
            equal_utility_samples: 20,
        },
        ..ExperimentConfig::default()
    }
}

#[test]
fn smoke_run_emits_every_metric_family() {
    let out = execute(&smoke(), &RunOptions::default()).unwrap();
    assert!(out.failures.is_empty(), "{:?}", out.failures);
    assert_eq!(out.repetitions, 2);
    for method in ["feature_subsets", "bootstrap", "shuffle", "perturbation"] {
        for metric in [
            "utility",
            "n_models",
            "unique_allocations",
            "pairwise_consistency",
            "systemic_rejection",
            "threshold_ratio_min",
            "age_entropy",
        ] {
            let m = out
                .metric(0.25, 2, method, "top_k", metric)
                .unwrap_or_else(|| panic!("{method} {metric}"));
            assert_eq!(m.count + m.missing, 2);
        }
        assert!(out
            .metric(0.25, 2, method, "boundary_0.25k_0.50k", "utility")
            .is_some());
        assert!(out
            .metric(0.25, 2, method, "ensemble", "age_entropy")
            .is_some());
    }
    assert!(out
        .metric(0.25, 2, "equal_utility", "analytic", "pairwise_consistency")
        .is_some());
    assert!(out
        .metric(0.25, 2, "equal_utility", "sampled", "pairwise_consistency")
        .is_some());
    assert!(out
        .metric(
            0.25,
            2,
            "reference",
            "least_discriminatory",
            "threshold_ratio"
        )
        .is_some());
}

#[test]
fn reruns_write_identical_archives() {
    let cfg = smoke();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_archive(&execute(&cfg, &RunOptions::default()).unwrap(), a.path()).unwrap();
    write_archive(&execute(&cfg, &RunOptions::default()).unwrap(), b.path()).unwrap();
    let archive = load_archive(a.path()).unwrap();
    assert!(!archive.manifest.files.is_empty());
    for f in &archive.manifest.files {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
    for id in FIGURE_IDS {
        assert!(emit_plot_data(a.path(), id).is_ok(), "{id}");
    }
    let count = std::fs::read_to_string(a.path().join("figures/1-count.csv")).unwrap();
    assert_eq!(count.lines().nth(1), Some("10,5,6,4,0,60"));
    match emit_plot_data(a.path(), "fig99") {
        Err(Error::UnknownFigure { valid, .. }) => assert!(valid.contains("table1")),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn partial_json_config_fills_defaults() {
    let cfg = ExperimentConfig::from_json(
        r#"{ "data": { "source": "synthetic", "population": 500, "bias_mode": "unbiased" },
             "split": { "num_partitions": 1, "pool_size": 100 }, "q_values": [2] }"#,
    )
    .unwrap();
    let DataSource::Synthetic(g) = &cfg.data else {
        panic!("synthetic source")
    };
    assert_eq!(g.population, 500);
    assert_eq!(g.black_cost_factor, GeneratorConfig::default().black_cost_factor);
    assert_eq!(cfg.split.draws_per_partition, SplitPlan::default().draws_per_partition);
    assert_eq!(cfg.selection_rates, vec![0.10, 0.25, 0.50]);
    assert!(ExperimentConfig::from_json(r#"{ "epsilon": -1 }"#).is_err());
}
