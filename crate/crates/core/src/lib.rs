//! Multiscale scan statistics for detecting smooth patterns of unknown location and
//! scale in collections of noisy tensors.
//!
//! The engine is generic over the floating-point type used for fields, kernels and
//! correlations; statistics are always accumulated in `f64`. The aliases below fix
//! the common choices.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod conv;
pub mod detect;
pub mod error;
pub mod field;
pub mod geometry;
pub mod io;
pub mod metric;
pub mod net;
pub mod parallel;
pub mod pattern;
pub mod quadrature;
pub mod rng;
pub mod scalar;
pub mod scan;
pub mod simulate;
pub mod stats;

pub use config::{EngineConfig, MetricConstants, NetConstants};
pub use detect::{
    calibrate_k, decide, mc_threshold, power_gap, theoretical_threshold, type2_bound,
    DetectionReport, PowerInputs, ThresholdMethod, ThresholdSpec,
};
pub use error::{MssError, Result};
pub use field::{Provenance, TensorField};
pub use geometry::{Geometry, LocationVec, ScaleVec};
pub use metric::{nu, ParamPair, ParamPoint};
pub use net::{build_net, Net, NetSpec};
pub use pattern::{make_pattern, rasterize, Kernel, Pattern, PatternKind, PatternSpec};
pub use scalar::Scalar;
pub use scan::{pamss, scan_single, v_h, PamssResult, ScanPlan, ScanResult};
pub use simulate::{GroundTruth, SimConfig};

/// Double-precision field.
pub type Field = TensorField<f64>;
/// Single-precision field.
pub type Field32 = TensorField<f32>;
pub type Kernel64 = Kernel<f64>;
pub type Kernel32 = Kernel<f32>;
pub type Plan = ScanPlan<f64>;
pub type Plan32 = ScanPlan<f32>;
