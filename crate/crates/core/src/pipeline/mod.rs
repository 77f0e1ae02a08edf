//! Data ingestion, training, evaluation, ablation sweeps and the scan benchmark.

pub mod ablation;
pub mod bench;
pub mod data;
pub mod eval;
pub mod optim;
pub mod settings;
pub mod toy;
pub mod train;

pub use ablation::{ablation_sweep, all_rows, table_rows, AblationRow, AblationTable};
pub use bench::{bench_scan, BenchRow, Kernel};
pub use data::{ingest, DatasetSpec, Sample, Split};
pub use eval::{evaluate, infer_file};
pub use optim::{Adam, StepLr};
pub use settings::RunSettings;
pub use train::{train, TrainConfig, TrainReport};
