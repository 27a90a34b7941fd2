//! Monte-Carlo benchmark: trial generation, metrics and the sweep runner.

pub mod experiment;
pub mod generate;
pub mod metrics;

pub use experiment::{run_experiment, Algorithm, ExperimentConfig, ExperimentResult, SummaryRow, TrialOutcome};
pub use generate::{
    build_trial, gen_circular_gaussian, gen_circular_laplace, gen_dependent_sois, gen_mixing_matrix, perturb_init,
    Background, MixtureTruth, Trial, TrialConfig,
};
pub use metrics::{sir_db, Histogram, SIR_CAP_DB};
