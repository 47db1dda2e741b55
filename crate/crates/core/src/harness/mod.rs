//! Datasets, synthetic generation, parameter sweeps, benchmarking and
//! report emission.

pub mod bench;
pub mod dataset;
pub mod grid;
pub mod report;
pub mod synth;
pub mod tokenizer;

use thiserror::Error;

pub use bench::{benchmark, decode_sample, sample_config, BenchReport};
pub use dataset::{load_dataset, save_dataset, DatasetError, DatasetSample, Scenario};
pub use grid::{cell_seed, grid_search, simulate_samples, GridCell, GridResult};
pub use synth::{gen_synthetic, SynthError, SynthParams};

use crate::decoder::DecodeError;
use crate::simulator::SimError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("schema error: {0}")]
    MissingTarget(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("stepwise and reference-accelerated outputs differ on sample {sample_id:?}")]
    Mismatch { sample_id: String },
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}
