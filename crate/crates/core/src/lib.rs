//! Simulation of multi-arm trials with normally distributed endpoints under
//! Gittins-index and other adaptive allocation rules, with Monte Carlo
//! calibration of critical values and aggregation of operating
//! characteristics.

pub mod arm;
pub mod engine;
pub mod error;
pub mod gittins;
pub mod inference;
pub mod normal;
pub mod oc;
pub mod policy;
pub mod rng;

pub use arm::ArmState;
pub use engine::{
    run_replicates, run_replicates_sequential, run_replicates_sequential_with, run_replicates_with, run_trial,
    run_trial_with, RecordOptions, TrialRecord, TrialScenario,
};
pub use error::{Error, Result};
pub use gittins::{
    compute_index_table, compute_index_table_sequential, gittins_index, load_index_table, parse_index_table, DpConfig,
    GittinsTable,
};
pub use inference::{
    apply_test, calibrate_critical_value, fwer_critical_value, sample_size, z_statistic, Calibration, CriticalMethod,
    CriticalValue, Histogram, ZVector,
};
pub use oc::{aggregate, bias_trajectories, z_histogram, BiasTrajectory, OperatingCharacteristics};
pub use policy::{PolicyKind, PolicySpec};
pub use rng::ReplicateSeed;
