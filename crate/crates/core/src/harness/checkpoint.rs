//! JSON checkpoints. Floats are written in their shortest round-trip decimal
//! form, maps are ordered, so save -> load -> save is byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::nn::{AdamState, MlpParams, OutputActivation};
use crate::rl::{Agent, AlgorithmId, DdpgAgent, DdpgConfig, GaussianPolicy, PpoAgent, PpoConfig, TrpoAgent, TrpoConfig};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkRecord {
    pub layer_dims: Vec<usize>,
    pub output_activation: OutputActivation,
    pub parameters: Vec<f64>,
}

impl NetworkRecord {
    fn from_params(p: &MlpParams) -> Self {
        Self {
            layer_dims: p.layer_dims().to_vec(),
            output_activation: p.output_activation(),
            parameters: p.to_flat(),
        }
    }

    fn to_params(&self) -> Result<MlpParams> {
        MlpParams::from_flat(&self.layer_dims, self.output_activation, &self.parameters)
    }
}

/// On-disk layout of a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointFile {
    pub format_version: u64,
    pub algorithm: AlgorithmId,
    pub env_fingerprint: String,
    pub env: EnvConfig,
    pub config: Value,
    pub networks: BTreeMap<String, NetworkRecord>,
    pub vectors: BTreeMap<String, Vec<f64>>,
    pub optimizer: Option<BTreeMap<String, AdamState>>,
}

/// A loaded agent together with the environment it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub agent: Agent,
    pub env: EnvConfig,
}

/// How a checkpoint's environment fingerprint is checked on load.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnvCheck<'a> {
    /// The checkpoint must have been trained on exactly this configuration.
    Require(&'a EnvConfig),
    /// Accept any environment.
    Override,
}

fn encode(agent: &Agent, env: &EnvConfig) -> Result<CheckpointFile> {
    let mut networks = BTreeMap::new();
    let mut vectors = BTreeMap::new();
    let mut optimizer = BTreeMap::new();
    let mut net = |name: &str, p: &MlpParams| networks.insert(name.to_string(), NetworkRecord::from_params(p));
    let config = match agent {
        Agent::Ddpg(a) => {
            net("actor", &a.actor);
            net("critic", &a.critic);
            net("target_actor", &a.target_actor);
            net("target_critic", &a.target_critic);
            optimizer.insert("actor".into(), a.actor_opt.clone());
            optimizer.insert("critic".into(), a.critic_opt.clone());
            serde_json::to_value(&a.config)
        }
        Agent::Ppo(a) => {
            net("policy_mean", &a.policy.mean);
            net("value", &a.value_net);
            vectors.insert("log_std".into(), a.policy.log_std.clone());
            optimizer.insert("policy".into(), a.policy_opt.clone());
            optimizer.insert("log_std".into(), a.log_std_opt.clone());
            optimizer.insert("value".into(), a.value_opt.clone());
            serde_json::to_value(&a.config)
        }
        Agent::Trpo(a) => {
            net("policy_mean", &a.policy.mean);
            net("value", &a.value_net);
            vectors.insert("log_std".into(), a.policy.log_std.clone());
            optimizer.insert("value".into(), a.value_opt.clone());
            serde_json::to_value(&a.config)
        }
    }
    .map_err(|e| Error::Numerical(format!("serializing agent config: {e}")))?;
    Ok(CheckpointFile {
        format_version: FORMAT_VERSION,
        algorithm: agent.algorithm(),
        env_fingerprint: env.fingerprint(),
        env: env.clone(),
        config,
        networks,
        vectors,
        optimizer: Some(optimizer),
    })
}

/// Serialized form of a checkpoint.
pub fn checkpoint_to_string(agent: &Agent, env: &EnvConfig) -> Result<String> {
    let file = encode(agent, env)?;
    let finite = file.networks.values().all(|n| n.parameters.iter().all(|v| v.is_finite()))
        && file.vectors.values().all(|v| v.iter().all(|x| x.is_finite()));
    if !finite {
        return Err(Error::Numerical("refusing to checkpoint non-finite parameters".into()));
    }
    let mut text = serde_json::to_string_pretty(&file).map_err(|e| Error::Numerical(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

pub fn save_checkpoint(path: &Path, agent: &Agent, env: &EnvConfig) -> Result<()> {
    let text = checkpoint_to_string(agent, env)?;
    fs::write(path, text).map_err(|e| Error::from(e).context(format!("writing {}", path.display())))
}

pub fn load_checkpoint(path: &Path, check: EnvCheck<'_>) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::from(e).context(format!("reading {}", path.display())))?;
    checkpoint_from_str(&text, check).map_err(|e| e.context(format!("checkpoint {}", path.display())))
}

pub fn checkpoint_from_str(text: &str, check: EnvCheck<'_>) -> Result<Checkpoint> {
    let malformed = |msg: String| Error::MalformedCheckpoint(msg);
    let value: Value = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| malformed("missing or non-integer format_version".into()))?;
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointVersion { found: version, expected: FORMAT_VERSION });
    }
    let file: CheckpointFile = serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
    if file.env.fingerprint() != file.env_fingerprint {
        return Err(malformed("env_fingerprint does not match the stored environment".into()));
    }
    if let EnvCheck::Require(expected) = check {
        if expected.fingerprint() != file.env_fingerprint {
            return Err(Error::Compatibility(format!(
                "checkpoint was trained on environment {} but {} was requested",
                file.env_fingerprint,
                expected.fingerprint()
            )));
        }
    }
    let agent = decode(&file).map_err(|e| match e {
        Error::MalformedCheckpoint(_) => e,
        other => malformed(other.to_string()),
    })?;
    Ok(Checkpoint { agent, env: file.env })
}

fn decode(file: &CheckpointFile) -> Result<Agent> {
    let net = |name: &str| -> Result<MlpParams> {
        file.networks
            .get(name)
            .ok_or_else(|| Error::MalformedCheckpoint(format!("missing network {name:?}")))?
            .to_params()
    };
    let vector = |name: &str| -> Result<Vec<f64>> {
        file.vectors
            .get(name)
            .cloned()
            .ok_or_else(|| Error::MalformedCheckpoint(format!("missing vector {name:?}")))
    };
    let opt = |name: &str, params: usize| -> Result<AdamState> {
        let state = file
            .optimizer
            .as_ref()
            .and_then(|o| o.get(name))
            .cloned()
            .unwrap_or_else(|| AdamState::new(params));
        if state.len() != params {
            return Err(Error::MalformedCheckpoint(format!(
                "optimizer {name:?} has {} entries for {params} parameters",
                state.len()
            )));
        }
        Ok(state)
    };
    let config = |what: &str| Error::MalformedCheckpoint(format!("{what} config does not parse"));
    let gaussian = || -> Result<GaussianPolicy> {
        let policy = GaussianPolicy { mean: net("policy_mean")?, log_std: vector("log_std")? };
        if policy.log_std.len() != policy.mean.output_dim() {
            return Err(Error::MalformedCheckpoint("log_std length does not match the policy output".into()));
        }
        Ok(policy)
    };

    Ok(match file.algorithm {
        AlgorithmId::Ddpg => {
            let (actor, critic) = (net("actor")?, net("critic")?);
            let (target_actor, target_critic) = (net("target_actor")?, net("target_critic")?);
            if !actor.same_shape(&target_actor) || !critic.same_shape(&target_critic) {
                return Err(Error::MalformedCheckpoint("target networks differ in shape from online networks".into()));
            }
            Agent::Ddpg(DdpgAgent {
                config: serde_json::from_value::<DdpgConfig>(file.config.clone()).map_err(|_| config("ddpg"))?,
                actor_opt: opt("actor", actor.num_params())?,
                critic_opt: opt("critic", critic.num_params())?,
                actor,
                critic,
                target_actor,
                target_critic,
            })
        }
        AlgorithmId::Ppo => {
            let policy = gaussian()?;
            let value_net = net("value")?;
            Agent::Ppo(PpoAgent {
                config: serde_json::from_value::<PpoConfig>(file.config.clone()).map_err(|_| config("ppo"))?,
                policy_opt: opt("policy", policy.mean.num_params())?,
                log_std_opt: opt("log_std", policy.log_std.len())?,
                value_opt: opt("value", value_net.num_params())?,
                policy,
                value_net,
            })
        }
        AlgorithmId::Trpo => {
            let policy = gaussian()?;
            let value_net = net("value")?;
            Agent::Trpo(TrpoAgent {
                config: serde_json::from_value::<TrpoConfig>(file.config.clone()).map_err(|_| config("trpo"))?,
                value_opt: opt("value", value_net.num_params())?,
                policy,
                value_net,
            })
        }
    })
}
