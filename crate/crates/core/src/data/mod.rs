//! Populations: the tabular schema, CSV ingestion and persistence, a synthetic
//! generator with the same schema, the partition/draw protocol and feature scaling.

mod io;
mod scaler;
pub mod schema;
mod split;
mod synthetic;

pub use io::{load_csv, load_population, read_csv, save_population, write_csv, PopulationManifest};
pub use scaler::Scaler;
pub use split::{make_splits, Partition, SplitPlan, SplitTriple};
pub use synthetic::{generate_synthetic, BiasMode, CostParams, GeneratorConfig};
