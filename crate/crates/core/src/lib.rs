//! Calibration losses for segmentation networks, viewed through logit-distance
//! constraints, together with the metrics and tooling needed to study them.
//!
//! The crate is organized around a handful of pixel-grid field types
//! ([`field`]), the family of training objectives that constrain logit
//! distances ([`losses`]), calibration and overlap metrics plus ranking
//! schemes ([`metrics`]), scalar temperature scaling ([`posthoc`]), and a
//! small deterministic trainer on synthetic segmentation tasks ([`trainer`]).
//! Fields round-trip through the `CALT` binary tensor format ([`calt`]).

pub mod calt;
pub mod field;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod posthoc;
pub mod trainer;

pub use field::{
    logit_distances, softmax, BoolField, DistanceField, FieldError, LabelField, LogitField,
    ProbField, SoftLabelField,
};
pub use losses::{compound_loss, LossConfig, LossError, LossEval, LossKind, PenaltyKind};
pub use metrics::{MaskRule, MetricError, MetricReport, MetricSettings, ReliabilityTable};
pub use posthoc::{apply_temperature, fit_temperature, FitError, TemperatureFit};
