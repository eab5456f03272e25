//! Seeded simulation designs and size, power and bias experiments.

mod design;
mod generate;
mod rng;
mod run;

pub use design::{DesignKind, FirstStage, Heteroskedasticity, SimDesign, StatSpec};
pub use generate::{gen_controls_design, gen_group_design, ControlsDesign, GroupDesign};
pub use rng::{mix64, GaussianStream};
pub use run::{
    ks_uniform_distance, run_bias, run_design, run_power_curve, run_size, simulate, BiasRow,
    KsResult, RejectionRow, SimReport,
};
