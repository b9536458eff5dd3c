//! Shot-level simulator of the three-path optical experiments: state
//! preparation, the three measurement-device classes, the cascade for
//! sequential pairs, the three-crystal pair source, and the two-party
//! coincidence setup, with detector efficiency and element jitter.

pub mod device;
pub mod elements;
pub mod estimate;
pub mod sim;

pub use device::{
    build_device, build_device_generic, cascade, prepare_state_circuit, CascadeApparatus,
    MeasurementDevice, MINUS_PATH,
};
pub use elements::{apply_circuit, circuit_unitary, inverse_circuit, OpticalElement};
pub use estimate::{
    estimate_counts, estimate_expression, report_to_csv, run_experiment, Estimate,
    ExperimentDescriptor, ExperimentKind, ExperimentReport, OutcomeStat, StateSpec, TermReport,
    TermSpec,
};
pub use sim::{two_photon_source, Apparatus, CountTable, NoiseModel, Preparation, ShotRun};
