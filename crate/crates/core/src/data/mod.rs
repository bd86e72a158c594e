//! Series batches, synthetic generators, CSV ingestion, missing-step
//! injection, normalisation and splitting.

mod batch;
mod csv_io;
mod missing;
mod normalize;
mod split;
pub mod synthetic;

pub use batch::SeriesBatch;
pub use csv_io::{load_csv, write_csv, CsvSchema, MAX_SERIES_STEPS};
pub use missing::{inject_missing, MissingPattern};
pub use normalize::NormStats;
pub(crate) use normalize::mean_std;
pub use split::{carve_validation, holdout, kfold, FoldPlan, Holdout};
pub use synthetic::{generate, GeneratorKind, SyntheticDataset, SyntheticSpec};
