//! Experiment orchestration: configuration, dataset generation, training,
//! Monte Carlo sweeps and exports.

mod config;
mod dataset;
mod pipeline;
mod sweep;

pub use config::{
    db_to_linear, EstimatorSection, ExperimentConfig, OutputSection, SeedSection, SnrMode, SweepSection, SystemSection,
    TrainingSection, DESK_PROFILE, FULL_PROFILE, OUTPUT_ENV,
};
pub use dataset::{channel_correlations, generate_dataset, Dataset, TrainingSnr};
pub use pipeline::{block_error_energies, dump_activations, evaluate_heldout, train_networks, TrainedNetwork};
pub use sweep::{checkpoint_name, run_sweep, sig10, NetworkBank, SweepResult, SweepRow};
