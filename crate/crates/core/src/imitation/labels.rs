//! Expert labeling rules: plain, one-step reward gated, return gated, and
//! epsilon-greedy execution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Controller;
use crate::env::{EnvSnapshot, Environment, MuscleAction, Observation};
use crate::error::{Error, Result};

/// Outcome of a gated comparison between expert and target actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub label: MuscleAction,
    pub expert_won: bool,
    pub expert_value: f64,
    pub target_value: f64,
    /// Counterfactual environment steps spent reaching the decision.
    pub env_steps: usize,
}

impl GateDecision {
    fn choose(a_expert: &MuscleAction, a_target: &MuscleAction, g_e: f64, g_t: f64, env_steps: usize) -> Self {
        let expert_won = g_e.partial_cmp(&g_t) != Some(std::cmp::Ordering::Less);
        Self {
            label: if expert_won { *a_expert } else { *a_target },
            expert_won,
            expert_value: g_e,
            target_value: g_t,
            env_steps,
        }
    }
}

pub fn label_vanilla(expert: &dyn Controller, obs: &Observation) -> Result<MuscleAction> {
    expert.act(obs)
}

/// Compares the immediate rewards of both actions from `snap`. Ties go to
/// the expert. The environment is left restored to `snap`.
pub fn label_reward_gated(
    env: &mut Environment,
    snap: &EnvSnapshot,
    a_expert: &MuscleAction,
    a_target: &MuscleAction,
) -> Result<GateDecision> {
    env.restore(snap)?;
    let r_e = env.step_action(a_expert)?.reward;
    env.restore(snap)?;
    let r_t = env.step_action(a_target)?.reward;
    env.restore(snap)?;
    Ok(GateDecision::choose(a_expert, a_target, r_e, r_t, 2))
}

/// Compares undiscounted returns: each branch takes its candidate action and
/// then follows its own policy until the episode ends or `horizon` steps have
/// been taken in total. `None` runs to the end of the episode.
#[allow(clippy::too_many_arguments)]
pub fn label_return_gated(
    env: &mut Environment,
    snap: &EnvSnapshot,
    a_expert: &MuscleAction,
    a_target: &MuscleAction,
    expert: &dyn Controller,
    target: &dyn Controller,
    horizon: Option<usize>,
) -> Result<GateDecision> {
    if horizon == Some(0) {
        return Err(Error::Usage("return gate horizon must be at least 1".into()));
    }
    let (g_e, n_e) = branch_return(env, snap, a_expert, expert, horizon)?;
    let (g_t, n_t) = branch_return(env, snap, a_target, target, horizon)?;
    env.restore(snap)?;
    Ok(GateDecision::choose(a_expert, a_target, g_e, g_t, n_e + n_t))
}

fn branch_return(
    env: &mut Environment,
    snap: &EnvSnapshot,
    first: &MuscleAction,
    policy: &dyn Controller,
    horizon: Option<usize>,
) -> Result<(f64, usize)> {
    env.restore(snap)?;
    let limit = horizon.unwrap_or(usize::MAX);
    let mut step = env.step_action(first)?;
    let mut total = step.reward;
    let mut n = 1;
    while !step.done && n < limit {
        let a = policy.act(&step.observation)?;
        step = env.step_action(&a)?;
        total += step.reward;
        n += 1;
    }
    Ok((total, n))
}

/// Executes the expert action with probability `epsilon`, else the target's.
/// Consumes exactly one uniform draw.
pub fn select_action_epsilon<R: Rng + ?Sized>(
    a_expert: &MuscleAction,
    a_target: &MuscleAction,
    epsilon: f64,
    rng: &mut R,
) -> (MuscleAction, bool) {
    let u: f64 = rng.random();
    if u < epsilon {
        (*a_expert, true)
    } else {
        (*a_target, false)
    }
}
