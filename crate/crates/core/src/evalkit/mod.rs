//! Synthetic datasets, distribution distances and point-set persistence.

mod datasets;
mod io;
mod metrics;

pub use crate::batch::SampleBatch;
pub use datasets::{make_dataset, DatasetKind, DatasetSpec};
pub use io::{batch_from_csv, batch_to_csv, load_batch, save_batch, save_trajectory};
pub use metrics::{
    mmd_rbf, moment_report, random_directions, sliced_wasserstein, sliced_wasserstein_mode,
    sliced_wasserstein_with, MetricReport, DEFAULT_PROJECTIONS,
};
