use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Agent, ExperimentConfig, ReplayBuffer};
use crate::error::{Error, Result};
use crate::qaoa::QaoaPolicy;
use crate::rng::StreamId;
use crate::snn::{NetShape, SpikingQNet, Weights};

pub const CHECKPOINT_FORMAT: &str = "qnmarl-checkpoint/1";

/// Trained state of a whole run. Replay buffers and optimizer moments are not
/// kept; a restored run replays and evaluates but starts training afresh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub config: ExperimentConfig,
    /// Last completed training episode.
    pub episode: usize,
    pub agents: Vec<AgentCheckpoint>,
    /// Streams that drove the last completed episode.
    pub rng_streams: Vec<StreamId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentCheckpoint {
    pub agent: usize,
    pub qaoa: Vec<NamedParam>,
    pub qaoa_prev: Vec<NamedParam>,
    pub snn: SnnCheckpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedParam {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnnCheckpoint {
    pub shape: NetShape,
    pub online: Vec<NamedMatrix>,
    pub target: Vec<NamedMatrix>,
}

/// Row-major `f64` matrix, little-endian bytes in base64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedMatrix {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: String,
}

impl NamedMatrix {
    pub fn encode(name: &str, rows: usize, cols: usize, values: &[f64]) -> Self {
        debug_assert_eq!(values.len(), rows * cols);
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self { name: name.to_string(), rows, cols, data: STANDARD.encode(bytes) }
    }

    pub fn decode(&self) -> Result<Vec<f64>> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| Error::Input(format!("matrix {}: {e}", self.name)))?;
        if bytes.len() != self.rows * self.cols * 8 {
            return Err(Error::Input(format!(
                "matrix {}: {} bytes for a {}x{} matrix",
                self.name,
                bytes.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect())
    }
}

fn named(policy: &QaoaPolicy, values: &[f64]) -> Vec<NamedParam> {
    policy.param_names().into_iter().zip(values).map(|(name, &value)| NamedParam { name, value }).collect()
}

fn unnamed(policy: &QaoaPolicy, params: &[NamedParam]) -> Result<Vec<f64>> {
    let names = policy.param_names();
    if params.len() != names.len() || params.iter().zip(&names).any(|(p, n)| &p.name != n) {
        return Err(Error::Input(format!("planner parameters do not match the expected names {names:?}")));
    }
    Ok(params.iter().map(|p| p.value).collect())
}

fn matrices(shape: NetShape, w: &Weights) -> Vec<NamedMatrix> {
    vec![
        NamedMatrix::encode("w_in", shape.input, shape.hidden, &w.w_in),
        NamedMatrix::encode("w_out", shape.hidden, shape.output, &w.w_out),
    ]
}

fn weights(shape: NetShape, mats: &[NamedMatrix]) -> Result<Weights> {
    let find = |name: &str, rows: usize, cols: usize| -> Result<Vec<f64>> {
        let m = mats
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::Input(format!("missing matrix {name}")))?;
        if (m.rows, m.cols) != (rows, cols) {
            return Err(Error::Input(format!("matrix {name} is {}x{}, expected {rows}x{cols}", m.rows, m.cols)));
        }
        m.decode()
    };
    Ok(Weights { w_in: find("w_in", shape.input, shape.hidden)?, w_out: find("w_out", shape.hidden, shape.output)? })
}

impl AgentCheckpoint {
    pub fn capture(id: usize, agent: &Agent) -> Self {
        let shape = agent.net.shape();
        Self {
            agent: id,
            qaoa: named(&agent.policy, agent.policy.params()),
            qaoa_prev: named(&agent.policy, agent.policy.prev_params()),
            snn: SnnCheckpoint {
                shape,
                online: matrices(shape, agent.net.online()),
                target: matrices(shape, agent.net.target()),
            },
        }
    }

    /// Rebuilds the agent with hyperparameters from `config`.
    pub fn restore(&self, config: &ExperimentConfig) -> Result<Agent> {
        let q = &config.qaoa;
        let mut policy = QaoaPolicy::new(q.n_qubits, q.depth, q.ansatz, vec![0.0; QaoaPolicy::param_count(q.n_qubits, q.depth, q.ansatz)])?;
        policy.shots = q.shots;
        policy.lambda_temp = q.lambda_temp;
        policy.input_scale = q.input_scale;
        policy.set_params(unnamed(&policy, &self.qaoa)?)?;
        policy.set_prev_params(unnamed(&policy, &self.qaoa_prev)?)?;

        let shape = self.snn.shape;
        let mut net = SpikingQNet::from_weights(shape, config.lif, weights(shape, &self.snn.online)?, weights(shape, &self.snn.target)?)?;
        config.snn.configure(&mut net);
        Ok(Agent { policy, net, replay: ReplayBuffer::new(config.train.replay_capacity) })
    }
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::Input(format!("unsupported checkpoint format {:?}", c.format)));
        }
        c.config.validate()?;
        Ok(c)
    }
}
