use std::path::PathBuf;
use std::process::ExitCode;

use allocmult::combinatorics::{
    analytic_space_stats, count_equal_utility, k_prime_from_utility, sample_equal_utility,
};
use allocmult::data::{generate_synthetic, save_population, BiasMode, GeneratorConfig};
use allocmult::domain::EqualUtilitySpace;
use allocmult::runner::{emit_plot_data, run_experiment, ExperimentConfig};
use allocmult::seed;
use clap::{Args, Parser, Subcommand};
use log::info;

#[derive(Parser)]
#[command(
    name = "allocmult",
    version,
    about = "Allocation multiplicity simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count the allocations of k from n reaching k' qualified selections (within delta).
    Count(SpaceArgs),
    /// Draw uniform allocations from an equal-utility space, one JSON line per draw.
    SampleSpace {
        #[command(flatten)]
        space: SpaceArgs,
        #[arg(long, default_value_t = 10)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the full simulation protocol from a JSON config and write the archive.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Worker threads; defaults to all cores.
        #[arg(long)]
        threads: Option<usize>,
        /// Multiply every sampling budget by this factor.
        #[arg(long)]
        budget_scale: Option<f64>,
        /// Overrides the config's output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write plot data for one figure into `<archive>/figures/<id>.csv`.
    /// Ids: 1-count, table1, fig2, fig3b, fig4c, fig6.
    Emit {
        #[arg(long)]
        figure: String,
        #[arg(long, default_value = ".")]
        archive: PathBuf,
    },
    /// Write a synthetic population (population.csv and manifest.json).
    Generate {
        #[arg(long, default_value_t = 10_000)]
        population: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        q: u32,
        #[arg(long)]
        unbiased: bool,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct SpaceArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    n_prime: usize,
    /// Qualified selections; exclusive with --utility.
    #[arg(long, conflicts_with = "utility", required_unless_present = "utility")]
    k_prime: Option<usize>,
    /// Target utility k'/k, mapped to k' = floor(u k).
    #[arg(long)]
    utility: Option<f64>,
    #[arg(long, default_value_t = 0)]
    delta: usize,
}

impl SpaceArgs {
    fn space(&self) -> allocmult::Result<EqualUtilitySpace> {
        let k_prime = match (self.k_prime, self.utility) {
            (Some(kp), _) => kp,
            (None, Some(u)) => k_prime_from_utility(u, self.k),
            (None, None) => unreachable!("clap requires one of --k-prime and --utility"),
        };
        EqualUtilitySpace::new(self.n, self.k, self.n_prime, k_prime, self.delta)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> allocmult::Result<()> {
    match command {
        Command::Count(args) => {
            let space = args.space()?;
            let count = count_equal_utility(&space);
            let mut report = serde_json::json!({
                "n": space.n,
                "k": space.k,
                "n_prime": space.n_prime,
                "k_prime": space.k_prime,
                "delta": space.delta,
                "count": count.to_string(),
                "scientific": count.to_scientific(1),
            });
            if space.delta == 0 && !space.is_empty() {
                let stats = analytic_space_stats(&space)?;
                report["pairwise_consistency"] = stats.pairwise_consistency.into();
            }
            println!("{report}");
        }
        Command::SampleSpace {
            space,
            draws,
            seed: master,
        } => {
            let space = space.space()?;
            for d in 0..draws {
                let alloc =
                    sample_equal_utility(&space, seed::derive(master, "sample-space", d as u64))?;
                let selected: Vec<usize> = alloc.selected().collect();
                let qualified = selected.iter().filter(|&&i| i < space.n_prime).count();
                println!(
                    "{}",
                    serde_json::json!({ "draw": d, "selected": selected, "qualified_selected": qualified })
                );
            }
        }
        Command::Run {
            config,
            threads,
            budget_scale,
            output,
        } => {
            let mut cfg = match config {
                Some(path) => ExperimentConfig::load(&path)?,
                None => ExperimentConfig::default(),
            };
            if let Some(f) = budget_scale {
                cfg = cfg.with_budget_scale(f);
            }
            if output.is_some() {
                cfg.output_dir = output;
            }
            let mut pool = rayon::ThreadPoolBuilder::new();
            if let Some(t) = threads {
                pool = pool.num_threads(t);
            }
            let pool = pool
                .build()
                .map_err(|e| allocmult::Error::InvalidArgument(format!("thread pool: {e}")))?;
            let (out, dir) = pool.install(|| run_experiment(&cfg))?;
            info!(
                "{} repetitions, {} metric cells, {} failures",
                out.repetitions,
                out.metrics.len(),
                out.failures.len()
            );
            println!("{}", dir.display());
        }
        Command::Emit { figure, archive } => {
            println!("{}", emit_plot_data(&archive, &figure)?.display());
        }
        Command::Generate {
            population,
            seed,
            q,
            unbiased,
            output,
        } => {
            let config = GeneratorConfig {
                population,
                seed,
                bias_mode: if unbiased {
                    BiasMode::Unbiased
                } else {
                    BiasMode::CostProxyBias
                },
                ..GeneratorConfig::default()
            };
            let pool = generate_synthetic(&config, q)?;
            save_population(&pool, &output, Some(seed), "synthetic")?;
            info!(
                "{} individuals, qualification rate {:.3}",
                pool.n(),
                pool.qualification_rate()
            );
            println!("{}", output.display());
        }
    }
    Ok(())
}
