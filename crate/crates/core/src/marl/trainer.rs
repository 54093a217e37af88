use std::sync::Arc;
use std::time::Instant;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::CHECKPOINT_FORMAT;
use super::{
    run_episode, Agent, AgentCheckpoint, Checkpoint, EpisodeMode, EpisodeOutput, ExperimentConfig, MitigationSample, ReplayBuffer,
    TrainRecord, Trajectory, Transition,
};
use crate::env::{Layout, WorldState};
use crate::error::{Error, Result};
use crate::qaoa::{mitigated_expectation, GradientMode, NoiseModel, PlanContext, PlanObjective};
use crate::rng::{stream, Purpose, StreamId, StreamRng, WORLD_SLOT};

/// Episode indices at and above this value are reserved for evaluation
/// streams, so they never collide with training episodes.
pub const EVAL_EPISODE_BASE: u64 = 1_000_000;

/// Greedy performance on held-out layouts.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalSnapshot {
    /// Training episodes completed when the snapshot was taken.
    pub episode: usize,
    pub mean_reward: f64,
    pub violation_rate: f64,
    pub coverage: f64,
    pub kl_nats: f64,
    pub spike_entropy: f64,
}

/// Drives training: one shared layout, a fresh spawn every episode, and
/// end-of-episode updates for every agent.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: ExperimentConfig,
    layout: Arc<Layout>,
    agents: Vec<Agent>,
    records: Vec<TrainRecord>,
    evals: Vec<EvalSnapshot>,
    episode: usize,
    last_world: Option<WorldState>,
    /// Fill [`TrainRecord::wall_ms`]; off by default so records are reproducible.
    pub measure_wall_clock: bool,
}

fn spawn_rng(seed: u64, episode: u64) -> StreamRng {
    stream(seed, WORLD_SLOT, episode, Purpose::Spawn)
}

fn layout_seed(seed: u64) -> u64 {
    StreamId::new(seed, WORLD_SLOT, 0, Purpose::Layout).seed()
}

impl Trainer {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.train.seed;
        let layout = Arc::new(Layout::generate(&config.world, layout_seed(seed))?);
        let agents = (0..config.world.n_agents)
            .map(|i| {
                let mut rng = stream(seed, i as u32, 0, Purpose::Init);
                Ok(Agent {
                    policy: config.qaoa.new_policy(&mut rng)?,
                    net: config.snn.new_net(config.lif, &mut rng)?,
                    replay: ReplayBuffer::new(config.train.replay_capacity),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self::assemble(config, layout, agents, 0))
    }

    fn assemble(config: ExperimentConfig, layout: Arc<Layout>, agents: Vec<Agent>, episode: usize) -> Self {
        Self { config, layout, agents, records: Vec::new(), evals: Vec::new(), episode, last_world: None, measure_wall_clock: false }
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn agents_mut(&mut self) -> &mut [Agent] {
        &mut self.agents
    }

    pub fn records(&self) -> &[TrainRecord] {
        &self.records
    }

    pub fn evals(&self) -> &[EvalSnapshot] {
        &self.evals
    }

    /// Training episodes completed so far.
    pub fn episode(&self) -> usize {
        self.episode
    }

    /// World state at the end of the latest training episode.
    pub fn last_world(&self) -> Option<&WorldState> {
        self.last_world.as_ref()
    }

    fn act_rngs(&self, episode: u64, purpose: Purpose) -> Vec<StreamRng> {
        let seed = self.config.train.seed;
        (0..self.agents.len()).map(|i| stream(seed, i as u32, episode, purpose)).collect()
    }

    fn play(&self, episode: usize, mode: EpisodeMode) -> Result<EpisodeOutput> {
        let world = WorldState::spawn(self.layout.clone(), &mut spawn_rng(self.config.train.seed, episode as u64))?;
        let mut rngs = self.act_rngs(episode as u64, Purpose::Act);
        run_episode(&self.agents, world, &self.config, episode, mode, &mut rngs)
    }

    /// Plays and learns from the next episode.
    pub fn run_training_episode(&mut self) -> Result<(TrainRecord, Vec<Trajectory>)> {
        let started = Instant::now();
        let e = self.episode + 1;
        let epsilon = self.config.train.epsilon(e);
        let out = self.play(e, EpisodeMode::Train { epsilon })?;
        let EpisodeOutput { mut record, transitions, contexts, trajectories, world } = out;

        let tc = self.config.train.clone();
        let qc = self.config.qaoa.clone();
        let seed = tc.seed;
        let penalty = record.penalty;
        let objective = PlanObjective { lambda_kl: tc.lambda_kl, penalty };
        let updates: Vec<(f64, f64)> = self
            .agents
            .par_iter_mut()
            .zip(transitions)
            .zip(&contexts)
            .enumerate()
            .map(|(i, ((agent, trans), ctxs))| {
                let mut rng = stream(seed, i as u32, e as u64, Purpose::Train);
                update_agent(agent, trans, ctxs, &tc, qc.lr, qc.contexts_per_update, objective, &mut rng)
            })
            .collect::<Result<_>>()?;

        if e % tc.target_sync_every == 0 {
            self.agents.iter_mut().for_each(|a| a.net.sync_target());
        }
        let n = updates.len().max(1) as f64;
        record.td_loss = updates.iter().map(|u| u.0).sum::<f64>() / n;
        record.qaoa_objective = updates.iter().map(|u| u.1).sum::<f64>() / n;
        if self.config.mitigation.enabled {
            if let Some(ctx) = contexts.first().and_then(|c| c.first()) {
                record.mitigation = Some(self.mitigation_sample(ctx, e)?);
            }
        }
        if self.measure_wall_clock {
            record.wall_ms = started.elapsed().as_secs_f64() * 1e3;
        }
        self.episode = e;
        self.last_world = Some(world);
        self.records.push(record.clone());
        Ok((record, trajectories))
    }

    fn mitigation_sample(&self, ctx: &PlanContext, episode: usize) -> Result<MitigationSample> {
        let m = &self.config.mitigation;
        let policy = &self.agents[0].policy;
        let n = policy.n_qubits;
        let cost = ctx.cost_table(n);
        let circuit = policy.circuit(&ctx.angles, &cost);
        let noise = NoiseModel::new(n, m.depolarizing, m.readout_flip)?;
        let mut rng = stream(self.config.train.seed, 0, episode as u64, Purpose::Mitigation);
        let r = mitigated_expectation(n, &circuit, &cost, &noise, m.shots, &mut rng)?;
        Ok(MitigationSample { exact: r.exact, raw: r.raw, mitigated: r.mitigated, clipped: r.clipped, fallback: r.fallback })
    }

    /// Greedy episodes on held-out layouts, averaged.
    pub fn evaluate(&self) -> Result<EvalSnapshot> {
        let k = self.config.train.eval_episodes;
        let seed = self.config.train.seed;
        let mut snap = EvalSnapshot { episode: self.episode, ..EvalSnapshot::default() };
        for j in 0..k {
            let idx = EVAL_EPISODE_BASE + j as u64;
            let layout = Arc::new(Layout::generate(&self.config.world, StreamId::new(seed, WORLD_SLOT, idx, Purpose::Eval).seed())?);
            let world = WorldState::spawn(layout, &mut spawn_rng(seed, idx))?;
            let mut rngs = self.act_rngs(idx, Purpose::Eval);
            let r = run_episode(&self.agents, world, &self.config, self.episode, EpisodeMode::Eval, &mut rngs)?.record;
            snap.mean_reward += r.mean_reward;
            snap.violation_rate += r.violation_rate;
            snap.coverage += r.coverage;
            snap.kl_nats += r.kl_nats;
            snap.spike_entropy += r.spike_entropy;
        }
        let inv = 1.0 / k.max(1) as f64;
        snap.mean_reward *= inv;
        snap.violation_rate *= inv;
        snap.coverage *= inv;
        snap.kl_nats *= inv;
        snap.spike_entropy *= inv;
        Ok(snap)
    }

    /// Runs the configured number of episodes, evaluating every
    /// `eval_every`. `observer` sees each record, its trajectories, and the
    /// evaluation taken after it, if any.
    pub fn train<F>(&mut self, mut observer: F) -> Result<()>
    where
        F: FnMut(&TrainRecord, &[Trajectory], Option<&EvalSnapshot>),
    {
        while self.episode < self.config.train.episodes {
            let (record, trajectories) = self.run_training_episode()?;
            let eval = if self.episode % self.config.train.eval_every == 0 {
                let s = self.evaluate()?;
                self.evals.push(s);
                self.evals.last()
            } else {
                None
            };
            observer(&record, &trajectories, eval);
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let seed = self.config.train.seed;
        let e = self.episode as u64;
        let mut rng_streams = vec![StreamId::new(seed, WORLD_SLOT, 0, Purpose::Layout), StreamId::new(seed, WORLD_SLOT, e, Purpose::Spawn)];
        for i in 0..self.agents.len() as u32 {
            rng_streams.push(StreamId::new(seed, i, e, Purpose::Act));
            rng_streams.push(StreamId::new(seed, i, e, Purpose::Train));
        }
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            config: self.config.clone(),
            episode: self.episode,
            agents: self.agents.iter().enumerate().map(|(i, a)| AgentCheckpoint::capture(i, a)).collect(),
            rng_streams,
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.config.validate()?;
        if c.agents.len() != c.config.world.n_agents {
            return Err(Error::Input(format!("checkpoint has {} agents, config expects {}", c.agents.len(), c.config.world.n_agents)));
        }
        let layout = Arc::new(Layout::generate(&c.config.world, layout_seed(c.config.train.seed))?);
        let agents = c.agents.iter().map(|a| a.restore(&c.config)).collect::<Result<_>>()?;
        Ok(Self::assemble(c.config.clone(), layout, agents, c.episode))
    }

    /// Re-plays training episode `episode` (1-based) with its original
    /// spawn, exploration rate and action streams, under the current
    /// parameters. Nothing is learned.
    pub fn replay_episode(&self, episode: usize) -> Result<EpisodeOutput> {
        if episode == 0 {
            return Err(Error::usage("episodes are numbered from 1"));
        }
        let epsilon = self.config.train.epsilon(episode);
        self.play(episode, EpisodeMode::Train { epsilon })
    }
}

/// Stores the episode's transitions, then takes the TD and planner steps.
/// Returns the mean TD loss and the planner objective before its step.
#[allow(clippy::too_many_arguments)]
fn update_agent(
    agent: &mut Agent,
    transitions: Vec<Transition>,
    contexts: &[PlanContext],
    tc: &super::TrainConfig,
    qaoa_lr: f64,
    contexts_per_update: usize,
    objective: PlanObjective,
    rng: &mut StreamRng,
) -> Result<(f64, f64)> {
    for mut t in transitions {
        if t.violation {
            t.reward -= objective.penalty;
        }
        agent.replay.push(t);
    }
    let mut td = 0.0;
    if !agent.replay.is_empty() {
        for _ in 0..tc.td_updates_per_episode {
            let batch: Vec<_> = agent.replay.sample(tc.batch, rng).into_iter().map(|t| t.to_experience(tc.reward_scale)).collect();
            td += agent.net.td_update(&batch, tc.gamma, tc.lr, rng)?;
        }
        td /= tc.td_updates_per_episode as f64;
    }
    if contexts.is_empty() {
        return Ok((td, 0.0));
    }
    let picked: Vec<PlanContext> = sample(rng, contexts.len(), contexts_per_update.min(contexts.len()))
        .into_iter()
        .map(|i| contexts[i].clone())
        .collect();
    let value = objective.value(&agent.policy, &picked)?;
    let grad = objective.gradient(&agent.policy, &picked, GradientMode::Exact, rng)?;
    agent.policy.update_params(&grad, qaoa_lr)?;
    Ok((td, value))
}
