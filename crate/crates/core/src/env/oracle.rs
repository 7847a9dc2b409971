use super::{MuscleAction, MuscleMix, Observation, ACTION_DIM, SUPPORT_MUSCLES};

/// Proportional gain of the reference controller.
pub const ORACLE_GAIN: f64 = 0.5;

/// Hand-written proportional controller: full leg support, drive muscles
/// pushed in the direction their weight acts, proportional to the velocity
/// error. Serves as the solvability baseline for trained agents.
#[derive(Debug, Clone)]
pub struct OracleController {
    mix: MuscleMix,
}

impl OracleController {
    pub fn new(mix: MuscleMix) -> Self {
        Self { mix }
    }

    pub fn action(&self, obs: &Observation) -> MuscleAction {
        let err = obs.velocity_error();
        let mut out = [1.0; ACTION_DIM];
        for (e, w) in out[SUPPORT_MUSCLES..].iter_mut().zip(&self.mix.drive_weights) {
            let sign = if *w > 0.0 {
                1.0
            } else if *w < 0.0 {
                -1.0
            } else {
                0.0
            };
            *e = (0.5 + ORACLE_GAIN * err * sign).clamp(0.0, 1.0);
        }
        MuscleAction(out)
    }
}
