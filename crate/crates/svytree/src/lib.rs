//! Design-based survey estimation with a regression-tree assisted estimator.
//!
//! The toolkit covers the full path from a finite-population frame to an
//! estimated total: frame ingestion and synthetic population generation
//! ([`frame`], [`synth`]), sampling designs with exact first-order inclusion
//! probabilities ([`design`]), survey-weighted recursive partitioning
//! ([`tree`]), the estimator suite ([`estimate`]), and a seeded Monte Carlo
//! harness ([`mc`]).

pub mod config;
pub mod design;
pub mod estimate;
pub mod frame;
pub mod linalg;
pub mod mc;
pub mod sums;
pub mod svg;
pub mod synth;
pub mod tree;

pub use design::{DesignSpec, SampleDraw};
pub use estimate::EstimateResult;
pub use frame::{Frame, VariableSpec};
pub use mc::{SimConfig, SimReport};
pub use synth::SynthConfig;
pub use tree::{GrowControls, Partition};
