//! Simulation designs, data generation and artifact output.

pub mod experiment;
pub mod gp;
pub mod kernels;
pub mod report;

pub use experiment::{
    build_region, build_regions, one_sample_region, poly_mean, run_experiment, two_sample_regions, BuiltRegion,
    CovMode, ExperimentConfig, ExperimentKind, JRule, Population, RegionInputs, RegionKind, Scenario, ALL_REGIONS,
    BAND_COLUMNS, DEFAULT_REGIONS, TWOSAMPLE_ROWS,
};
pub use gp::{dti_like, read_cov_csv, sample_gp, write_cov_csv, GpSampler};
pub use kernels::{bessel_k, matern, matern_bessel, matern_cov, DEFAULT_SIGMA};
pub use report::{emit_outputs, Artifact, Format, ReportRow, ReportTable};
