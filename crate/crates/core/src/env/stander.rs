use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EnvConfig, MuscleAction, Observation, ACTION_DIM, DRIVE_MUSCLES, SUPPORT_MUSCLES};
use crate::error::{Error, Result};
use crate::seeding;

/// Per-step reward: `9 - (v_star - v)^2`.
pub fn reward_fn(v: f64, v_star: f64) -> f64 {
    let dev = v_star - v;
    9.0 - dev * dev
}

/// Fixed weights mapping the nine drive excitations to horizontal force.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuscleMix {
    pub drive_weights: [f64; DRIVE_MUSCLES],
}

impl MuscleMix {
    /// Weights drawn uniformly from `[-1, 1]`; a pure function of `seed`.
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = seeding::stream(seed, 0x6d6978);
        let mut drive_weights = [0.0; DRIVE_MUSCLES];
        for w in &mut drive_weights {
            *w = rng.random_range(-1.0..=1.0);
        }
        Self { drive_weights }
    }

    /// Dot product of the weights with the drive excitations.
    pub fn drive(&self, excitations: &[f64]) -> f64 {
        self.drive_weights
            .iter()
            .zip(excitations)
            .map(|(w, e)| w * e)
            .sum()
    }
}

/// Complete mutable state of an [`Environment`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub pelvis_y: f64,
    pub vel_x: f64,
    pub vel_y: f64,
    pub step_index: usize,
    pub done: bool,
    pub fell: bool,
    /// Episode noise stream. The dynamics are noise-free; the stream is
    /// reseeded on reset and advanced once per step so that snapshots stay
    /// complete if stochastic perturbations are layered on top.
    pub rng_state: u64,
}

/// Saved state plus the configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSnapshot {
    state: EnvState,
    config: EnvConfig,
}

impl EnvSnapshot {
    pub fn state(&self) -> &EnvState {
        &self.state
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub fall: bool,
}

/// The walking surrogate. Single-threaded; clone it for parallel use.
#[derive(Debug, Clone)]
pub struct Environment {
    config: EnvConfig,
    mix: MuscleMix,
    state: EnvState,
}

impl Environment {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let mix = MuscleMix::from_seed(config.mix_seed);
        let state = rest_state(&config, 0);
        Ok(Self { config, mix, state })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn mix(&self) -> &MuscleMix {
        &self.mix
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.done
    }

    pub fn reset(&mut self, episode_seed: u64) -> Observation {
        self.state = rest_state(&self.config, episode_seed);
        self.observation()
    }

    pub fn observation(&self) -> Observation {
        let s = &self.state;
        Observation([
            s.pelvis_y / self.config.rest_height,
            s.vel_y,
            s.vel_x,
            self.config.target_velocity - s.vel_x,
        ])
    }

    /// Advances one semi-implicit Euler step. Excitations are clamped to `[0, 1]`.
    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.state.done {
            return Err(Error::Usage(
                "step called on a finished episode; call reset first".into(),
            ));
        }
        if action.len() != ACTION_DIM {
            return Err(Error::shape("muscle action", ACTION_DIM, action.len()));
        }
        if let Some(bad) = action.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite excitation {bad}")));
        }
        let cfg = &self.config;
        let clamped = |v: &f64| v.clamp(0.0, 1.0);

        let support = action[..SUPPORT_MUSCLES].iter().map(clamped).sum::<f64>()
            / SUPPORT_MUSCLES as f64;
        let drive: f64 = self
            .mix
            .drive_weights
            .iter()
            .zip(&action[SUPPORT_MUSCLES..])
            .map(|(w, e)| w * clamped(e))
            .sum();

        let s = &mut self.state;
        let force_y = support * (cfg.spring_k * (cfg.rest_height - s.pelvis_y) - cfg.spring_c * s.vel_y)
            - cfg.mass * cfg.gravity;
        let force_x = cfg.drive_scale * drive / DRIVE_MUSCLES as f64 - cfg.drag_c * s.vel_x;

        s.vel_y += cfg.dt * force_y / cfg.mass;
        s.vel_x += cfg.dt * force_x / cfg.mass;
        s.pelvis_y += cfg.dt * s.vel_y;
        s.step_index += 1;
        s.rng_state = seeding::mix64(s.rng_state);

        s.fell = s.pelvis_y < cfg.fall_height();
        s.done = s.fell || s.step_index >= cfg.max_steps;
        let reward = reward_fn(s.vel_x, cfg.target_velocity);
        let (done, fall) = (s.done, s.fell);

        Ok(StepResult {
            observation: self.observation(),
            reward,
            done,
            fall,
        })
    }

    pub fn step_action(&mut self, action: &MuscleAction) -> Result<StepResult> {
        self.step(action.as_slice())
    }

    pub fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot {
            state: self.state.clone(),
            config: self.config.clone(),
        }
    }

    pub fn restore(&mut self, snap: &EnvSnapshot) -> Result<()> {
        if snap.config != self.config {
            return Err(Error::Compatibility(format!(
                "snapshot taken under config {} cannot restore into config {}",
                snap.config.fingerprint(),
                self.config.fingerprint()
            )));
        }
        self.state = snap.state.clone();
        Ok(())
    }
}

fn rest_state(cfg: &EnvConfig, episode_seed: u64) -> EnvState {
    EnvState {
        pelvis_y: cfg.rest_height,
        vel_x: 0.0,
        vel_y: 0.0,
        step_index: 0,
        done: false,
        fell: false,
        rng_state: seeding::mix64(episode_seed ^ 0x005e_ed0f_e915_0de5),
    }
}
