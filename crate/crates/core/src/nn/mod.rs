//! Dense multilayer perceptrons with exact reverse- and forward-mode
//! derivatives, Adam, and a central-difference gradient checker.

mod adam;
pub mod gradcheck;
mod mat;
mod mlp;

pub use adam::{adam_update, AdamState};
pub use mat::Mat;
pub use mlp::{ForwardCache, GradBundle, MlpParams, OutputActivation};
