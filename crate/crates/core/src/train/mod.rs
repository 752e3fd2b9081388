//! Losses, schedules, metrics and gradient checking for small-scale
//! training experiments.

pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod schedule;

pub use gradcheck::{finite_diff_check, sad_gradcheck, GradCheckConfig, GradCheckReport, TensorCheck};
pub use loss::{boundary_loss, boundary_targets, cross_entropy, ohem_cross_entropy, LossConfig};
pub use metrics::{miou, Confusion, MiouReport};
pub use schedule::{poly_lr, POLY_POWER};
