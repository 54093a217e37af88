//! Centralized training with decentralized execution.
//!
//! Each agent acts on its own observation history: its QAOA planner samples a
//! latent plan, the spiking Q-network picks a motor action under that plan,
//! and a shield swaps unsafe proposals for hover. Parameter updates happen at
//! the end of every episode, one agent at a time in a fixed order.

mod checkpoint;
mod episode;
mod trainer;

pub use checkpoint::{AgentCheckpoint, Checkpoint, NamedMatrix, NamedParam, SnnCheckpoint};
pub use episode::{run_episode, EpisodeMode, EpisodeOutput, Trajectory};
pub use trainer::{EvalSnapshot, Trainer};

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, ActionMask, Observation, ViolationReason, WorldConfig, WorldState, N_ACTIONS, SNN_FRAME_LEN};
use crate::error::{Error, Result};
use crate::qaoa::{plan_marginal, Ansatz, CostWeights, LatentPlan, PlanContext, QaoaPolicy, PLAN_CLASSES};
use crate::snn::{select_action, ActionChoice, Experience, LifConfig, SpikeRecord, SpikingQNet};

/// Observations kept in a history digest.
pub const HISTORY_LEN: usize = 4;
pub const DIGEST_LEN: usize = HISTORY_LEN * SNN_FRAME_LEN;

/// Learning-loop hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub batch: usize,
    pub gamma: f64,
    pub lambda_kl: f64,
    pub beta_spike: f64,
    pub delta_safety: f64,
    /// Weight of the hinge penalty on the violation rate above `delta_safety`.
    pub penalty_rho: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Episode at which the linear exploration decay reaches `epsilon_end`.
    pub epsilon_decay_episodes: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub seed: u64,
    /// Spiking network step size.
    pub lr: f64,
    pub target_sync_every: usize,
    pub replay_capacity: usize,
    /// Mini-batch TD updates per agent per episode.
    pub td_updates_per_episode: usize,
    /// Multiplier on environment rewards before they enter TD targets.
    pub reward_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 200,
            batch: 32,
            gamma: 0.95,
            lambda_kl: 0.1,
            beta_spike: 0.05,
            delta_safety: 0.02,
            penalty_rho: 10.0,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_episodes: 150,
            eval_every: 10,
            eval_episodes: 5,
            seed: 7,
            lr: 0.001,
            target_sync_every: 10,
            replay_capacity: 10_000,
            td_updates_per_episode: 32,
            reward_scale: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("episodes", self.episodes),
            ("batch", self.batch),
            ("epsilon_decay_episodes", self.epsilon_decay_episodes),
            ("eval_every", self.eval_every),
            ("eval_episodes", self.eval_episodes),
            ("target_sync_every", self.target_sync_every),
            ("replay_capacity", self.replay_capacity),
            ("td_updates_per_episode", self.td_updates_per_episode),
        ];
        for (name, v) in pos {
            if v == 0 {
                return Err(Error::config(format!("train.{name} must be >= 1")));
            }
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config(format!("train.gamma must be in (0, 1], got {}", self.gamma)));
        }
        if !(self.delta_safety > 0.0 && self.delta_safety < 1.0) {
            return Err(Error::config(format!("train.delta_safety must be in (0, 1), got {}", self.delta_safety)));
        }
        for (name, v) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("train.{name} must be in [0, 1], got {v}")));
            }
        }
        for (name, v) in [
            ("lambda_kl", self.lambda_kl),
            ("beta_spike", self.beta_spike),
            ("penalty_rho", self.penalty_rho),
            ("lr", self.lr),
            ("reward_scale", self.reward_scale),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("train.{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Exploration rate for 1-based `episode`: linear from `epsilon_start`
    /// at episode 1 to `epsilon_end` at `epsilon_decay_episodes`, then flat.
    pub fn epsilon(&self, episode: usize) -> f64 {
        let last = self.epsilon_decay_episodes;
        if episode >= last {
            self.epsilon_end
        } else if episode <= 1 {
            self.epsilon_start
        } else {
            let frac = (episode - 1) as f64 / (last - 1) as f64;
            self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
        }
    }

    /// Hinge penalty `ρ · max(0, rate − δ)`.
    pub fn penalty(&self, violation_rate: f64) -> f64 {
        self.penalty_rho * (violation_rate - self.delta_safety).max(0.0)
    }
}

/// Planner settings shared by every agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QaoaSettings {
    pub n_qubits: usize,
    pub depth: usize,
    pub ansatz: Ansatz,
    pub shots: usize,
    pub lr: f64,
    pub lambda_temp: f64,
    pub input_scale: f64,
    pub cost: CostWeights,
    /// Decision contexts sampled per agent for each gradient step.
    pub contexts_per_update: usize,
}

impl Default for QaoaSettings {
    fn default() -> Self {
        Self {
            n_qubits: 6,
            depth: 2,
            ansatz: Ansatz::Qaoa,
            shots: 500,
            lr: 0.01,
            lambda_temp: 0.1,
            input_scale: std::f64::consts::PI,
            cost: CostWeights::default(),
            contexts_per_update: 8,
        }
    }
}

impl QaoaSettings {
    pub fn validate(&self) -> Result<()> {
        if !(3..=crate::quantum::MAX_QUBITS).contains(&self.n_qubits) {
            return Err(Error::config(format!("qaoa.n_qubits must be in 3..={}, got {}", crate::quantum::MAX_QUBITS, self.n_qubits)));
        }
        if self.shots == 0 {
            return Err(Error::config("qaoa.shots must be >= 1"));
        }
        if self.contexts_per_update == 0 {
            return Err(Error::config("qaoa.contexts_per_update must be >= 1"));
        }
        for (name, v) in [("lr", self.lr), ("lambda_temp", self.lambda_temp), ("input_scale", self.input_scale)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("qaoa.{name} must be finite and >= 0, got {v}")));
            }
        }
        let c = &self.cost;
        if ![c.safety, c.utility, c.prior].iter().all(|w| w.is_finite()) {
            return Err(Error::config("qaoa.cost weights must be finite"));
        }
        Ok(())
    }

    pub fn new_policy<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<QaoaPolicy> {
        let mut p = QaoaPolicy::random(self.n_qubits, self.depth, self.ansatz, rng)?;
        p.shots = self.shots;
        p.lambda_temp = self.lambda_temp;
        p.input_scale = self.input_scale;
        Ok(p)
    }
}

/// Spiking controller settings; LIF constants live in [`LifConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnnSettings {
    pub hidden: usize,
    pub alpha: f64,
    pub window_ms: f64,
    pub plan_bias: f64,
    pub potential_weight: f64,
    pub input_gain: f64,
    pub output_gain: f64,
}

impl Default for SnnSettings {
    fn default() -> Self {
        Self {
            hidden: crate::snn::DEFAULT_HIDDEN,
            alpha: 1.0,
            window_ms: 20.0,
            plan_bias: 0.3,
            potential_weight: 0.1,
            input_gain: crate::snn::DEFAULT_INPUT_GAIN,
            output_gain: crate::snn::DEFAULT_OUTPUT_GAIN,
        }
    }
}

impl SnnSettings {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.hidden % crate::snn::PLAN_GROUPS != 0 {
            return Err(Error::config(format!("snn.hidden must be a positive multiple of {}", crate::snn::PLAN_GROUPS)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("snn.alpha must be > 0"));
        }
        if !(self.window_ms > 0.0 && self.window_ms.is_finite()) {
            return Err(Error::config("snn.window_ms must be > 0"));
        }
        if !(self.plan_bias.is_finite() && self.potential_weight.is_finite()) {
            return Err(Error::config("snn.plan_bias and snn.potential_weight must be finite"));
        }
        if !(self.input_gain > 0.0 && self.input_gain.is_finite() && self.output_gain > 0.0 && self.output_gain.is_finite()) {
            return Err(Error::config("snn.input_gain and snn.output_gain must be > 0"));
        }
        Ok(())
    }

    pub fn new_net<R: Rng + ?Sized>(&self, lif: LifConfig, rng: &mut R) -> Result<SpikingQNet> {
        let shape = crate::snn::NetShape::new(DIGEST_LEN, self.hidden, N_ACTIONS)?;
        let mut net = SpikingQNet::new(shape, lif, rng)?;
        self.configure(&mut net);
        Ok(net)
    }

    pub(crate) fn configure(&self, net: &mut SpikingQNet) {
        net.alpha = self.alpha;
        net.window_ms = self.window_ms;
        net.plan_bias = self.plan_bias;
        net.potential_weight = self.potential_weight;
        net.input_gain = self.input_gain;
        net.output_gain = self.output_gain;
    }
}

/// Synthetic hardware noise for the mitigation side channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MitigationSettings {
    pub enabled: bool,
    pub depolarizing: f64,
    pub readout_flip: f64,
    pub shots: usize,
}

impl Default for MitigationSettings {
    fn default() -> Self {
        Self { enabled: true, depolarizing: 0.01, readout_flip: 0.03, shots: 4000 }
    }
}

impl MitigationSettings {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.depolarizing) || !(0.0..0.5).contains(&self.readout_flip) {
            return Err(Error::config("mitigation.depolarizing must be in [0, 1) and mitigation.readout_flip in [0, 0.5)"));
        }
        if self.shots == 0 {
            return Err(Error::config("mitigation.shots must be >= 1"));
        }
        Ok(())
    }
}

/// Everything a training run needs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub train: TrainConfig,
    pub qaoa: QaoaSettings,
    pub snn: SnnSettings,
    pub lif: LifConfig,
    pub mitigation: MitigationSettings,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.train.validate()?;
        self.qaoa.validate()?;
        self.snn.validate()?;
        self.lif.validate()?;
        self.mitigation.validate()
    }
}

/// Rolling window of the last [`HISTORY_LEN`] observation frames, quantized
/// to bytes. Missing history reads as zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    frames: VecDeque<[u8; SNN_FRAME_LEN]>,
}

impl Default for History {
    fn default() -> Self {
        Self { frames: std::iter::repeat_n([0u8; SNN_FRAME_LEN], HISTORY_LEN).collect() }
    }
}

impl History {
    pub fn push(&mut self, obs: &Observation) {
        let f = obs.snn_frame();
        self.frames.pop_front();
        self.frames.push_back(f.map(quantize));
    }

    /// Oldest frame first.
    pub fn digest(&self) -> Vec<u8> {
        self.frames.iter().flatten().copied().collect()
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn dequantize(digest: &[u8]) -> Vec<f64> {
    digest.iter().map(|&b| f64::from(b) / 255.0).collect()
}

/// One stored decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub digest: Vec<u8>,
    pub plan: u8,
    /// The action the controller proposed, before the shield.
    pub action: u8,
    pub reward: f64,
    pub next_digest: Vec<u8>,
    pub next_mask: [bool; N_ACTIONS],
    pub violation: bool,
    /// The agent landed; no bootstrap.
    pub terminal: bool,
}

impl Transition {
    pub fn to_experience(&self, reward_scale: f64) -> Experience {
        let plan = Some(self.plan as usize);
        Experience {
            state: dequantize(&self.digest),
            plan,
            action: self.action as usize,
            reward: self.reward * reward_scale,
            next_state: dequantize(&self.next_digest),
            next_plan: plan,
            next_mask: Some(self.next_mask.to_vec()),
            terminal: self.terminal,
        }
    }
}

/// Fixed-capacity ring buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), items: Vec::new(), cursor: 0 }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Uniform draw with replacement of `min(batch, len)` stored transitions.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<&Transition> {
        let n = batch.min(self.items.len());
        (0..n).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect()
    }
}

/// One learner: planner, controller and its replay memory.
#[derive(Debug, Clone)]
pub struct Agent {
    pub policy: QaoaPolicy,
    pub net: SpikingQNet,
    pub replay: ReplayBuffer,
}

/// Everything decided for one agent at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub plan: LatentPlan,
    /// Plan distribution estimated from the shots.
    pub sampled_plan_dist: [f64; PLAN_CLASSES],
    /// Exact plan marginal of the circuit.
    pub plan_dist: [f64; PLAN_CLASSES],
    pub q_values: Vec<f64>,
    pub choice: ActionChoice,
    pub spikes: SpikeRecord,
    pub context: PlanContext,
}

impl Decision {
    pub fn action(&self) -> Action {
        Action::from_index(self.choice.action).unwrap_or(Action::Hover)
    }
}

/// `π(a | h) = Σ_z π_neuro(a | h, z) π_quantum(z | o)`, realized by sampling
/// `z` from the circuit and then acting under that plan.
#[allow(clippy::too_many_arguments)]
pub fn hybrid_act<R: Rng + ?Sized>(
    obs: &Observation,
    digest: &[u8],
    policy: &QaoaPolicy,
    cost_weights: &CostWeights,
    velocity_limit: i32,
    net: &SpikingQNet,
    epsilon: f64,
    mask: &ActionMask,
    rng: &mut R,
) -> Result<Decision> {
    let n = policy.n_qubits;
    let context = PlanContext::from_observation(obs, n, policy.input_scale, cost_weights, velocity_limit)?;
    let state = policy.build_state(&context.angles, &context.cost_table(n))?;
    let plan_dist = plan_marginal(&state.probabilities(), n);
    let (plan, sampled_plan_dist) = policy.sample_latent(&state, rng)?;
    let input = net.encode(&dequantize(digest), rng);
    let (q_values, spikes) = net.forward_q(&input, Some(plan.plan_id as usize))?;
    let choice = select_action(&q_values, epsilon, &mask.0, rng)?;
    Ok(Decision { plan, sampled_plan_dist, plan_dist, q_values, choice, spikes, context })
}

/// Result of passing a proposal through the shield.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Filtered {
    pub action: Action,
    pub flagged: bool,
    pub reason: Option<ViolationReason>,
}

/// Replaces a proposal predicted to violate a safety predicate with hover.
/// The attempt is still flagged. An unsafe hover is kept and flagged.
pub fn safety_filter(proposed: Action, world: &WorldState, agent: usize) -> Filtered {
    let verdict = world.check_safety(agent, proposed);
    if verdict.violated() {
        Filtered { action: Action::Hover, flagged: true, reason: verdict.reason }
    } else {
        Filtered { action: proposed, flagged: false, reason: None }
    }
}

/// Per-episode summary.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainRecord {
    /// 1-based.
    pub episode: usize,
    pub epsilon: f64,
    /// Mean over agents of the episode return.
    pub mean_reward: f64,
    pub violations: usize,
    pub agent_steps: usize,
    pub violation_rate: f64,
    /// Mean KL of the plan distribution to the prior, nats.
    pub kl_nats: f64,
    /// Decisions whose KL needed the prior floor.
    pub kl_floored: usize,
    pub spike_entropy: f64,
    /// Mean output spikes per decision window.
    pub mean_spikes: f64,
    pub coverage: f64,
    pub hybrid_loss: f64,
    /// `ρ · max(0, violation_rate − δ)`.
    pub penalty: f64,
    pub td_loss: f64,
    pub qaoa_objective: f64,
    pub mutual_information_bits: f64,
    pub refractory_breaches: u64,
    pub mitigation: Option<MitigationSample>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MitigationSample {
    pub exact: f64,
    pub raw: f64,
    pub mitigated: f64,
    pub clipped: bool,
    pub fallback: bool,
}

/// `R − λ_KL · KL − β · E(a)` with `E(a)` the mean output spike count per
/// decision window.
pub fn hybrid_loss(mean_reward: f64, kl_nats: f64, mean_spikes: f64, lambda_kl: f64, beta_spike: f64) -> f64 {
    mean_reward - lambda_kl * kl_nats - beta_spike * mean_spikes
}
