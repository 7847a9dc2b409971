//! Deterministic muscle-driven walking surrogate.
//!
//! A point-mass pelvis hangs on a leg spring whose engagement is set by the
//! first ten muscle excitations; the remaining nine drive it horizontally
//! through a fixed, seed-derived mixing vector. The per-step reward is
//! `9 - (v* - v_x)^2` on the post-step horizontal velocity.

mod config;
mod oracle;
mod stander;

pub use config::EnvConfig;
pub use oracle::{OracleController, ORACLE_GAIN};
pub use stander::{reward_fn, EnvSnapshot, EnvState, Environment, MuscleMix, StepResult};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of muscle excitations in an action.
pub const ACTION_DIM: usize = 19;
/// Excitations 1..=10 engage the leg spring.
pub const SUPPORT_MUSCLES: usize = 10;
/// Excitations 11..=19 produce horizontal drive.
pub const DRIVE_MUSCLES: usize = ACTION_DIM - SUPPORT_MUSCLES;
/// Length of an [`Observation`].
pub const OBS_DIM: usize = 4;

/// Muscle excitations, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuscleAction(pub [f64; ACTION_DIM]);

impl MuscleAction {
    /// Builds an action from a slice, clamping every component into `[0, 1]`.
    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() != ACTION_DIM {
            return Err(Error::shape("muscle action", ACTION_DIM, values.len()));
        }
        let mut out = [0.0; ACTION_DIM];
        for (o, &v) in out.iter_mut().zip(values) {
            if !v.is_finite() {
                return Err(Error::Numerical(format!("non-finite excitation {v}")));
            }
            *o = v.clamp(0.0, 1.0);
        }
        Ok(Self(out))
    }

    pub fn uniform(value: f64) -> Self {
        Self([value.clamp(0.0, 1.0); ACTION_DIM])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn support(&self) -> &[f64] {
        &self.0[..SUPPORT_MUSCLES]
    }

    pub fn drive(&self) -> &[f64] {
        &self.0[SUPPORT_MUSCLES..]
    }
}

/// `(pelvis_y / y0, vel_y, vel_x, v* - vel_x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn normalized_height(&self) -> f64 {
        self.0[0]
    }

    pub fn vel_y(&self) -> f64 {
        self.0[1]
    }

    pub fn vel_x(&self) -> f64 {
        self.0[2]
    }

    pub fn velocity_error(&self) -> f64 {
        self.0[3]
    }
}
