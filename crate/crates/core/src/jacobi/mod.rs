//! Conformal metrics, the Jacobi operator of a harmonic map, its spectrum and
//! the index/nullity counts along a bubbling family.

pub mod fields;
pub mod metric;
pub mod ni;
pub mod operator;
pub mod spectrum;

pub use fields::{holomorphic_jacobi_fields, rational_degree, variation_field};
pub use metric::{annulus_volume, catenoid_annulus_volume, metric_factor, ConformalMetric, MetricKind};
pub use ni::{gram_blocks, jacobi_run, kernel_sup, ni_experiment, JacobiConfig, JacobiRun, NiReport, NiRow};
pub use operator::{assemble_jacobi, assemble_jacobi_with, jacobi_strong, JacobiOperator};
pub use spectrum::{calibrate_zero_tol, spectrum, spectrum_with, EigenConfig, Spectrum, SpectrumReport};
