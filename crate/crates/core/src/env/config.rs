use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Physical constants and episode limits of the surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Desired horizontal pelvis velocity v* (m/s).
    pub target_velocity: f64,
    /// Integration step (s).
    pub dt: f64,
    /// Pelvis mass (kg).
    pub mass: f64,
    /// Gravitational acceleration (m/s²).
    pub gravity: f64,
    /// Pelvis height at rest, y0 (m).
    pub rest_height: f64,
    /// Leg spring stiffness (N/m).
    pub spring_k: f64,
    /// Leg spring damping (N·s/m).
    pub spring_c: f64,
    /// Peak horizontal drive force F_max (N).
    pub drive_scale: f64,
    /// Horizontal viscous drag (N·s/m).
    pub drag_c: f64,
    /// The pelvis has fallen below `fall_fraction * rest_height`.
    pub fall_fraction: f64,
    pub max_steps: usize,
    /// Seed of the drive-muscle mixing vector.
    pub mix_seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            target_velocity: 3.0,
            dt: 0.01,
            mass: 75.0,
            gravity: 9.81,
            rest_height: 0.91,
            spring_k: 2.0e4,
            spring_c: 500.0,
            drive_scale: 2000.0,
            drag_c: 200.0,
            fall_fraction: 0.6,
            max_steps: 1000,
            mix_seed: 0,
        }
    }
}

impl EnvConfig {
    /// The standing task: same body, zero desired velocity.
    pub fn standing() -> Self {
        Self {
            target_velocity: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("target_velocity", self.target_velocity),
            ("dt", self.dt),
            ("mass", self.mass),
            ("gravity", self.gravity),
            ("rest_height", self.rest_height),
            ("spring_k", self.spring_k),
            ("spring_c", self.spring_c),
            ("drive_scale", self.drive_scale),
            ("drag_c", self.drag_c),
            ("fall_fraction", self.fall_fraction),
        ];
        if let Some((name, v)) = finite.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Config(format!("{name} must be finite, got {v}")));
        }
        if self.dt <= 0.0 {
            return Err(Error::Config(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.mass <= 0.0 {
            return Err(Error::Config(format!("mass must be > 0, got {}", self.mass)));
        }
        if self.rest_height <= 0.0 {
            return Err(Error::Config(format!(
                "rest_height must be > 0, got {}",
                self.rest_height
            )));
        }
        if self.spring_k < 0.0 || self.spring_c < 0.0 || self.drag_c < 0.0 {
            return Err(Error::Config(
                "spring_k, spring_c and drag_c must be non-negative".into(),
            ));
        }
        let stiffness = self.spring_k * self.dt * self.dt / self.mass;
        if stiffness >= 1.0 {
            return Err(Error::Config(format!(
                "spring_k*dt^2/mass must be < 1 for stable integration, got {stiffness}"
            )));
        }
        if !(self.fall_fraction > 0.0 && self.fall_fraction < 1.0) {
            return Err(Error::Config(format!(
                "fall_fraction must lie in (0, 1), got {}",
                self.fall_fraction
            )));
        }
        if self.max_steps < 1 {
            return Err(Error::Config("max_steps must be >= 1".into()));
        }
        Ok(())
    }

    /// Stable hexadecimal digest of the configuration, used to tie
    /// checkpoints to the environment they were trained on.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("EnvConfig serializes");
        let digest = Sha256::digest(&canonical);
        hex::encode(&digest[..8])
    }

    pub(crate) fn fall_height(&self) -> f64 {
        self.fall_fraction * self.rest_height
    }
}
