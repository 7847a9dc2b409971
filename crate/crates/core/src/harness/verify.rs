//! Self-checks against independent oracles: determinism, gradients, GAE,
//! conjugate gradient, Gaussian KL, target soft updates and gate equivalence.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::ExperimentConfig;
use super::run::{checkpoint_file_name, curve_file_name, run_benchmark, run_dagger_suite, BENCHMARK_FILE, DAGGER_FILE};
use crate::env::{EnvConfig, Environment, MuscleAction, Observation, ACTION_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::imitation::{label_return_gated, label_reward_gated, Controller, DaggerConfig, Policy};
use crate::nn::gradcheck::max_relative_error;
use crate::nn::{MlpParams, OutputActivation};
use crate::rl::{
    conjugate_gradient, gae_advantages, gaussian_kl, train, AlgorithmConfigs, AlgorithmId, Budget, DdpgAgent,
    DdpgConfig, ReplayBuffer, Transition,
};
use crate::seeding;

/// Result of one verification check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn timed(name: &'static str, check: impl FnOnce() -> Result<(bool, String)>) -> CheckOutcome {
    let start = Instant::now();
    let (passed, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckOutcome { name, passed, detail, seconds: start.elapsed().as_secs_f64() }
}

/// Runs every check in order.
pub fn run_verify() -> Vec<CheckOutcome> {
    vec![
        verify_determinism(),
        verify_gradients(),
        verify_numerical_oracles(),
        verify_soft_update(),
        verify_gate_equivalence(),
    ]
}

fn random_action<R: Rng>(rng: &mut R) -> MuscleAction {
    let mut a = [0.0; ACTION_DIM];
    a.iter_mut().for_each(|v| *v = rng.random());
    MuscleAction(a)
}

fn bits(xs: &[f64]) -> Vec<u64> {
    xs.iter().map(|x| x.to_bits()).collect()
}

struct ScratchDir(PathBuf);

impl ScratchDir {
    fn new(tag: &str) -> Result<Self> {
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0);
        let dir = std::env::temp_dir().join(format!("gaitlab-verify-{tag}-{}-{nanos}", std::process::id()));
        fs::create_dir_all(&dir)?;
        Ok(Self(dir))
    }
}

impl Drop for ScratchDir {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.0);
    }
}

/// A configuration small enough to run the full pipeline in seconds.
pub fn tiny_experiment(output_dir: &Path) -> ExperimentConfig {
    let mut algorithms = AlgorithmConfigs::default();
    algorithms.ddpg.hidden = vec![16];
    algorithms.ddpg.warmup_steps = 50;
    algorithms.ddpg.batch_size = 32;
    algorithms.ppo.hidden = vec![16];
    algorithms.ppo.episodes_per_batch = 2;
    algorithms.ppo.epochs_per_batch = 2;
    algorithms.trpo.hidden = vec![16];
    algorithms.trpo.episodes_per_batch = 2;
    algorithms.trpo.value_epochs = 2;
    ExperimentConfig {
        env: EnvConfig { max_steps: 200, ..Default::default() },
        budget: Budget { episodes: 6, steps_per_episode: 200 },
        algorithms,
        dagger: DaggerConfig {
            iterations: 2,
            trajectories_per_iteration: 1,
            regression_epochs: 5,
            eval_episodes: 2,
            learner_hidden: vec![16],
            rollout_horizon: Some(5),
            ..Default::default()
        },
        seeds: vec![0, 1],
        output_dir: output_dir.to_path_buf(),
        ..Default::default()
    }
}

fn env_trace(cfg: &EnvConfig, seed: u64) -> Result<Vec<u64>> {
    let mut env = Environment::new(cfg.clone())?;
    let mut rng = seeding::stream(seed, 9);
    let mut trace = Vec::new();
    for episode in 0..3 {
        trace.extend(bits(env.reset(seed + episode).as_slice()));
        trace.push(env.state().rng_state);
        while !env.is_done() {
            let s = env.step_action(&random_action(&mut rng))?;
            trace.extend(bits(s.observation.as_slice()));
            trace.push(s.reward.to_bits());
            trace.push(u64::from(s.fall));
        }
    }
    Ok(trace)
}

fn strip_last_column(text: &str) -> String {
    text.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}

fn pipeline_outputs(dir: &Path) -> Result<Vec<(String, String)>> {
    let cfg = tiny_experiment(dir);
    run_benchmark(&cfg)?;
    let expert = dir.join(checkpoint_file_name(AlgorithmId::Ddpg, cfg.seeds[0]));
    run_dagger_suite(&cfg, &expert)?;
    let mut files = vec![
        (BENCHMARK_FILE.to_string(), strip_last_column(&fs::read_to_string(dir.join(BENCHMARK_FILE))?)),
        (DAGGER_FILE.to_string(), fs::read_to_string(dir.join(DAGGER_FILE))?),
    ];
    for alg in AlgorithmId::ALL {
        for &seed in &cfg.seeds {
            for name in [curve_file_name(alg, seed), checkpoint_file_name(alg, seed)] {
                let text = fs::read_to_string(dir.join(&name))?;
                files.push((name, text));
            }
        }
    }
    Ok(files)
}

/// Environment traces, training runs and every CSV/checkpoint output are
/// bitwise repeatable (wall-clock columns excluded).
pub fn verify_determinism() -> CheckOutcome {
    timed("determinism", || {
        let cfg = EnvConfig::default();
        for seed in [0, 1, 77] {
            if env_trace(&cfg, seed)? != env_trace(&cfg, seed)? {
                return Ok((false, format!("environment trace differs for seed {seed}")));
            }
        }
        let tiny = tiny_experiment(Path::new("."));
        for alg in AlgorithmId::ALL {
            let run = || -> Result<_> {
                let mut env = Environment::new(tiny.env.clone())?;
                train(alg, &mut env, tiny.budget, 5, &tiny.algorithms)
            };
            let ((a1, r1), (a2, r2)) = (run()?, run()?);
            if a1 != a2 || r1.without_timing() != r2.without_timing() {
                return Ok((false, format!("{alg} training differs between identical runs")));
            }
        }
        let (d1, d2) = (ScratchDir::new("a")?, ScratchDir::new("b")?);
        let (f1, f2) = (pipeline_outputs(&d1.0)?, pipeline_outputs(&d2.0)?);
        for ((name, a), (_, b)) in f1.iter().zip(&f2) {
            if a != b {
                return Ok((false, format!("{name} differs between identical runs")));
            }
        }
        Ok((true, format!("3 env traces, 3 training runs and {} output files identical", f1.len())))
    })
}

/// Backpropagation against central finite differences on random networks.
pub fn verify_gradients() -> CheckOutcome {
    timed("gradients", || {
        let mut rng = seeding::stream(2024, 3);
        let mut worst: f64 = 0.0;
        for k in 0..10 {
            let depth = rng.random_range(1..=3);
            let mut dims = vec![rng.random_range(1..=6)];
            dims.extend((0..depth).map(|_| rng.random_range(2..=12)));
            dims.push(rng.random_range(1..=5));
            let act = if k % 2 == 0 { OutputActivation::Identity } else { OutputActivation::UnitInterval };
            let mut params = MlpParams::init(&dims, act, rng.random())?;
            for b in params.biases_mut().iter_mut().flatten() {
                *b = rng.random_range(-0.5..0.5);
            }
            let input: Vec<f64> = (0..dims[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
            let upstream: Vec<f64> = (0..*dims.last().unwrap()).map(|_| rng.random_range(-1.0..1.0)).collect();
            worst = worst.max(max_relative_error(&params, &input, &upstream, 1e-5)?);
        }
        Ok((worst < 1e-4, format!("max relative error {worst:.3e} over 10 networks (limit 1e-4)")))
    })
}

/// Direct double-sum advantage estimate: discounted TD residuals summed
/// forward until the first terminal.
pub fn gae_double_sum(rewards: &[f64], values: &[f64], last_value: f64, dones: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let value_at = |t: usize| if t < n { values[t] } else { last_value };
    let delta = |t: usize| {
        let next = if dones[t] { 0.0 } else { gamma * value_at(t + 1) };
        rewards[t] + next - values[t]
    };
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            for (l, &done) in dones.iter().enumerate().take(n).skip(t) {
                total += (gamma * lambda).powi((l - t) as i32) * delta(l);
                if done {
                    break;
                }
            }
            total
        })
        .collect()
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    m.transpose() * &m + DMatrix::identity(n, n)
}

/// Closed-form KL cases: `(mean_old, log_std_old, mean_new, log_std_new, expected)`.
pub type KlCase = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, f64);

pub fn kl_cases() -> Vec<KlCase> {
    let ln2 = std::f64::consts::LN_2;
    vec![
        (vec![0.3, -1.0], vec![0.1, -0.4], vec![0.3, -1.0], vec![0.1, -0.4], 0.0),
        (vec![0.0], vec![0.0], vec![2.0], vec![0.0], 2.0),
        (vec![1.0], vec![ln2], vec![0.0], vec![ln2], 1.0 / 8.0),
        (vec![0.0], vec![0.0], vec![0.0], vec![ln2], ln2 + 1.0 / 8.0 - 0.5),
        (vec![0.0], vec![ln2], vec![0.0], vec![0.0], -ln2 + 2.0 - 0.5),
        (vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, -1.0], vec![0.0, 0.0], 1.0),
    ]
}

/// GAE against the double sum, CG against a dense Cholesky solve and
/// Gaussian KL against closed forms.
pub fn verify_numerical_oracles() -> CheckOutcome {
    timed("numerical oracles", || {
        let mut rng = seeding::stream(31, 4);
        let mut gae_worst: f64 = 0.0;
        for _ in 0..100 {
            let n = rng.random_range(1..=20);
            let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
            let values: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
            let dones: Vec<bool> = (0..n).map(|_| rng.random_bool(0.15)).collect();
            let last = rng.random_range(-10.0..10.0);
            let gamma = rng.random_range(0.8..1.0);
            let lambda = rng.random_range(0.0..=1.0);
            let (adv, _) = gae_advantages(&rewards, &values, last, &dones, gamma, lambda)?;
            let oracle = gae_double_sum(&rewards, &values, last, &dones, gamma, lambda);
            for (a, o) in adv.iter().zip(&oracle) {
                gae_worst = gae_worst.max((a - o).abs());
            }
        }

        let mut cg_worst: f64 = 0.0;
        for _ in 0..20 {
            let a = random_spd(&mut rng, 8);
            let b = DVector::from_fn(8, |_, _| rng.sample::<f64, _>(StandardNormal));
            let direct = a
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Numerical("oracle matrix is not positive definite".into()))?
                .solve(&b);
            let x = conjugate_gradient(|v| Ok((&a * DVector::from_column_slice(v)).as_slice().to_vec()), b.as_slice(), 50, 1e-12)?;
            cg_worst = cg_worst.max((DVector::from_vec(x) - direct).norm());
        }

        let kl_worst = kl_cases()
            .iter()
            .map(|(mo, lo, mn, ln, want)| (gaussian_kl(mo, lo, mn, ln) - want).abs())
            .fold(0.0, f64::max);

        let passed = gae_worst < 1e-10 && cg_worst < 1e-6 && kl_worst <= 1e-12;
        Ok((
            passed,
            format!("GAE max |diff| {gae_worst:.2e} (<1e-10), CG max error {cg_worst:.2e} (<1e-6), KL max error {kl_worst:.2e} (<=1e-12)"),
        ))
    })
}

fn random_transition(rng: &mut ChaCha8Rng) -> Transition {
    let mut obs = [0.0; OBS_DIM];
    let mut next = [0.0; OBS_DIM];
    obs.iter_mut().chain(next.iter_mut()).for_each(|v| *v = rng.random_range(-2.0..2.0));
    Transition {
        obs: Observation(obs),
        action: random_action(rng),
        reward: rng.random_range(-9.0..9.0),
        next_obs: Observation(next),
        done: rng.random_bool(0.05),
    }
}

/// Largest deviation of a DDPG agent's targets from the exact tau-blend,
/// checked after every one of `updates` updates.
pub fn soft_update_deviation(updates: usize, config: DdpgConfig, seed: u64) -> Result<f64> {
    let mut agent = DdpgAgent::new(config, seed)?;
    let mut rng = seeding::stream(seed, 5);
    let mut buffer = ReplayBuffer::new(4096)?;
    for _ in 0..4096 {
        buffer.push(random_transition(&mut rng));
    }
    let tau = agent.config.tau;
    let mut worst: f64 = 0.0;
    for _ in 0..updates {
        let prev_actor = agent.target_actor.to_flat();
        let prev_critic = agent.target_critic.to_flat();
        let batch = buffer.sample(agent.config.batch_size, &mut rng)?;
        agent.update(&batch)?;
        for (prev, online, target) in [
            (&prev_actor, &agent.actor, &agent.target_actor),
            (&prev_critic, &agent.critic, &agent.target_critic),
        ] {
            for ((p, o), t) in prev.iter().zip(online.to_flat()).zip(target.to_flat()) {
                worst = worst.max((tau * o + (1.0 - tau) * p - t).abs());
            }
        }
    }
    Ok(worst)
}

pub fn verify_soft_update() -> CheckOutcome {
    timed("soft update", || {
        let worst = soft_update_deviation(1000, DdpgConfig::default(), 3)?;
        Ok((worst < 1e-12, format!("max target deviation {worst:.2e} over 1000 updates (limit 1e-12)")))
    })
}

/// Drives `env` to a random reachable state with random actions.
pub fn random_reachable_state<R: Rng>(env: &mut Environment, rng: &mut R, max_steps: usize) -> Result<()> {
    env.reset(rng.random());
    let steps = rng.random_range(0..max_steps);
    for _ in 0..steps {
        let snap = env.snapshot();
        if env.step_action(&random_action(rng))?.done {
            env.restore(&snap)?;
            break;
        }
    }
    Ok(())
}

/// Count of disagreements between the one-step return gate and the reward
/// gate over `states` random states.
pub fn gate_disagreements(states: usize, seed: u64) -> Result<usize> {
    let mut env = Environment::new(EnvConfig::default())?;
    let mut rng = seeding::stream(seed, 6);
    let expert = Policy::init(&[16], rng.random())?;
    let target = Policy::init(&[16], rng.random())?;
    let mut mismatches = 0;
    for _ in 0..states {
        random_reachable_state(&mut env, &mut rng, 300)?;
        let obs = env.observation();
        let (a_e, a_t) = if rng.random_bool(0.5) {
            (expert.act(&obs)?, target.act(&obs)?)
        } else {
            (random_action(&mut rng), random_action(&mut rng))
        };
        let snap = env.snapshot();
        let one = label_reward_gated(&mut env, &snap, &a_e, &a_t)?;
        let ret = label_return_gated(&mut env, &snap, &a_e, &a_t, &expert, &target, Some(1))?;
        if one.expert_won != ret.expert_won || one.label != ret.label {
            mismatches += 1;
        }
    }
    Ok(mismatches)
}

/// Return of `first` followed by `policy`, recomputed in a fresh environment
/// by replaying `history` from `reset(episode_seed)`.
pub fn replayed_return(
    cfg: &EnvConfig,
    episode_seed: u64,
    history: &[MuscleAction],
    first: &MuscleAction,
    policy: &dyn Controller,
    horizon: Option<usize>,
) -> Result<f64> {
    let mut env = Environment::new(cfg.clone())?;
    env.reset(episode_seed);
    for a in history {
        env.step_action(a)?;
    }
    let mut step = env.step_action(first)?;
    let mut total = step.reward;
    let mut taken = 1;
    while !step.done && horizon.is_none_or(|h| taken < h) {
        step = env.step_action(&policy.act(&step.observation)?)?;
        total += step.reward;
        taken += 1;
    }
    Ok(total)
}

/// Gate decisions that differ from brute-force re-simulation, as
/// `(reward gate, return gate)` mismatch counts over `states` random states.
pub fn gate_oracle_mismatches(states: usize, horizon: Option<usize>, seed: u64) -> Result<(usize, usize)> {
    let cfg = EnvConfig::default();
    let mut env = Environment::new(cfg.clone())?;
    let mut rng = seeding::stream(seed, 7);
    let expert = Policy::init(&[16], rng.random())?;
    let target = Policy::init(&[16], rng.random())?;
    let (mut reward_bad, mut return_bad) = (0, 0);
    for _ in 0..states {
        let episode_seed: u64 = rng.random();
        env.reset(episode_seed);
        let mut history = Vec::new();
        for _ in 0..rng.random_range(0..300) {
            let a = random_action(&mut rng);
            let snap = env.snapshot();
            if env.step_action(&a)?.done {
                env.restore(&snap)?;
                break;
            }
            history.push(a);
        }
        let obs = env.observation();
        let (a_e, a_t) = if rng.random_bool(0.5) {
            (expert.act(&obs)?, target.act(&obs)?)
        } else {
            (random_action(&mut rng), random_action(&mut rng))
        };
        let snap = env.snapshot();

        let r_e = replayed_return(&cfg, episode_seed, &history, &a_e, &expert, Some(1))?;
        let r_t = replayed_return(&cfg, episode_seed, &history, &a_t, &target, Some(1))?;
        let d = label_reward_gated(&mut env, &snap, &a_e, &a_t)?;
        let want = if r_e < r_t { a_t } else { a_e };
        if d.label != want || d.expert_won != (r_e >= r_t) || env.state() != snap.state() {
            reward_bad += 1;
        }

        let g_e = replayed_return(&cfg, episode_seed, &history, &a_e, &expert, horizon)?;
        let g_t = replayed_return(&cfg, episode_seed, &history, &a_t, &target, horizon)?;
        let d = label_return_gated(&mut env, &snap, &a_e, &a_t, &expert, &target, horizon)?;
        let want = if g_e < g_t { a_t } else { a_e };
        if d.label != want
            || d.expert_won != (g_e >= g_t)
            || d.expert_value.to_bits() != g_e.to_bits()
            || d.target_value.to_bits() != g_t.to_bits()
            || env.state() != snap.state()
        {
            return_bad += 1;
        }
    }
    Ok((reward_bad, return_bad))
}

pub fn verify_gate_equivalence() -> CheckOutcome {
    timed("gate equivalence", || {
        let mismatches = gate_disagreements(1000, 12)?;
        Ok((mismatches == 0, format!("{mismatches} disagreements over 1000 states")))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn double_sum_matches_hand_values() {
        // Two steps, terminal at the end: A1 = r1 - V1, A0 = r0 + γV1 - V0 + γλ A1.
        let adv = gae_double_sum(&[1.0, 2.0], &[0.5, 1.5], 100.0, &[false, true], 0.9, 0.5);
        let a1 = 2.0 - 1.5;
        let a0 = 1.0 + 0.9 * 1.5 - 0.5 + 0.45 * a1;
        assert!((adv[1] - a1).abs() < 1e-15);
        assert!((adv[0] - a0).abs() < 1e-15);
    }

    #[test]
    fn strip_last_column_drops_wall_time() {
        assert_eq!(strip_last_column("a,b,c\n1,2,3.5"), "a,b\n1,2");
    }

    #[test]
    fn gradients_and_oracles_pass() {
        for outcome in [verify_gradients(), verify_numerical_oracles()] {
            assert!(outcome.passed, "{}: {}", outcome.name, outcome.detail);
        }
    }

    #[test]
    fn short_soft_update_run_is_exact() {
        let cfg = DdpgConfig { hidden: vec![8], batch_size: 16, ..Default::default() };
        assert!(soft_update_deviation(20, cfg, 1).unwrap() < 1e-12);
    }

    #[test]
    fn gates_agree_on_a_few_states() {
        assert_eq!(gate_disagreements(50, 3).unwrap(), 0);
    }
}
