use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{hybrid_act, hybrid_loss, safety_filter, Agent, Decision, ExperimentConfig, History, TrainRecord, Transition};
use crate::env::REWARD_VIOLATION;
use crate::env::{Observation, Pos, WorldState, N_ACTIONS};
use crate::error::{Error, Result};
use crate::qaoa::{kl_to_prior, PlanContext};
use crate::report::{mutual_information, obs_bucket};
use crate::rng::StreamRng;
use crate::snn::spike_entropy;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpisodeMode {
    /// Explore with this epsilon and keep transitions.
    Train { epsilon: f64 },
    /// Greedy, nothing stored.
    Eval,
}

/// What one agent did during one episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub episode: usize,
    pub agent: usize,
    /// Start position, then the position after every step the agent was active.
    pub path: Vec<Pos>,
    pub plans: Vec<u8>,
    /// Steps (0-based) at which a violation was flagged.
    pub violations: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct EpisodeOutput {
    pub record: TrainRecord,
    /// Per agent, in time order.
    pub transitions: Vec<Vec<Transition>>,
    /// Per agent, the planner context of every decision.
    pub contexts: Vec<Vec<PlanContext>>,
    pub trajectories: Vec<Trajectory>,
    pub world: WorldState,
}

#[derive(Default, Clone)]
struct AgentTally {
    ret: f64,
    kl_sum: f64,
    decisions: usize,
    counts: [u32; N_ACTIONS],
}

/// Plays one episode from a freshly spawned `world`. `act_rngs[i]` drives
/// every random choice of agent `i`.
pub fn run_episode(
    agents: &[Agent],
    mut world: WorldState,
    config: &ExperimentConfig,
    episode: usize,
    mode: EpisodeMode,
    act_rngs: &mut [StreamRng],
) -> Result<EpisodeOutput> {
    let n = world.agents().len();
    if agents.len() != n || act_rngs.len() != n {
        return Err(Error::usage(format!("{} agents and {} streams for a world with {n} agents", agents.len(), act_rngs.len())));
    }
    let (epsilon, collect) = match mode {
        EpisodeMode::Train { epsilon } => (epsilon, true),
        EpisodeMode::Eval => (0.0, false),
    };
    let vlimit = config.world.velocity_limit as i32;
    let radius = config.world.sensor_radius;
    let dims = config.world.dims;

    let mut histories = vec![History::default(); n];
    let mut obs: Vec<Observation> = (0..n).map(|i| world.observe(i)).collect();
    for (h, o) in histories.iter_mut().zip(&obs) {
        h.push(o);
    }
    let mut trajectories: Vec<Trajectory> = world
        .agents()
        .iter()
        .enumerate()
        .map(|(i, a)| Trajectory { episode, agent: i, path: vec![a.pos], plans: Vec::new(), violations: Vec::new() })
        .collect();
    let mut transitions = vec![Vec::new(); n];
    let mut contexts = vec![Vec::new(); n];
    let mut tally = vec![AgentTally::default(); n];
    let mut violations = 0usize;
    let mut agent_steps = 0usize;
    let mut breaches = 0u64;
    let mut kl_floored = 0usize;
    let mut mi_log = Vec::new();

    for t in 0..config.world.max_steps {
        if world.is_done() {
            break;
        }
        let active: Vec<bool> = world.agents().iter().map(|a| a.active).collect();
        let digests: Vec<Vec<u8>> = histories.iter().map(History::digest).collect();
        let mut decisions: Vec<Option<Decision>> = act_rngs
            .par_iter_mut()
            .enumerate()
            .map(|(i, rng)| {
                if !active[i] {
                    return Ok(None);
                }
                let mask = obs[i].admissible();
                let a = &agents[i];
                hybrid_act(&obs[i], &digests[i], &a.policy, &config.qaoa.cost, vlimit, &a.net, epsilon, &mask, rng).map(Some)
            })
            .collect::<Result<_>>()?;

        let mut proposed = vec![None; n];
        let mut executed = vec![None; n];
        let mut flagged = vec![false; n];
        for i in 0..n {
            if let Some(d) = &decisions[i] {
                let f = safety_filter(d.action(), &world, i);
                proposed[i] = Some(d.action());
                executed[i] = Some(f.action);
                flagged[i] = f.flagged;
            }
        }
        let outcome = world.step(&executed)?;

        for i in 0..n {
            let Some(d) = decisions[i].take() else { continue };
            agent_steps += 1;
            let post = outcome.verdicts[i].violated();
            let violated = flagged[i] || post;
            let mut reward = outcome.rewards[i];
            if flagged[i] && !post {
                reward += REWARD_VIOLATION;
            }
            if violated {
                violations += 1;
                trajectories[i].violations.push(t);
            }
            let kl = kl_to_prior(&d.plan_dist, &d.context.prior);
            kl_floored += usize::from(kl.floored);
            let tl = &mut tally[i];
            tl.ret += reward;
            tl.kl_sum += kl.nats;
            tl.decisions += 1;
            for (c, s) in tl.counts.iter_mut().zip(&d.spikes.counts) {
                *c += s;
            }
            breaches += d.spikes.refractory_breaches;
            mi_log.push((obs_bucket(&obs[i].snn_frame()), d.choice.action));

            let agent = &world.agents()[i];
            trajectories[i].plans.push(d.plan.plan_id);
            trajectories[i].path.push(agent.pos);
            let terminal = !agent.active;
            obs[i] = if terminal { Observation::terminal(radius, dims) } else { world.observe(i) };
            histories[i].push(&obs[i]);
            if collect {
                let action = proposed[i].expect("decided agent has a proposal");
                transitions[i].push(Transition {
                    digest: digests[i].clone(),
                    plan: d.plan.plan_id,
                    action: action.index() as u8,
                    reward,
                    next_digest: histories[i].digest(),
                    next_mask: obs[i].admissible().0,
                    violation: violated,
                    terminal,
                });
                contexts[i].push(d.context);
            }
        }
    }

    let decided: Vec<&AgentTally> = tally.iter().filter(|t| t.decisions > 0).collect();
    let mean_over = |f: &dyn Fn(&AgentTally) -> f64| {
        if decided.is_empty() {
            0.0
        } else {
            decided.iter().map(|t| f(t)).sum::<f64>() / decided.len() as f64
        }
    };
    let mean_reward = if n == 0 { 0.0 } else { tally.iter().map(|t| t.ret).sum::<f64>() / n as f64 };
    let kl_nats = mean_over(&|t| t.kl_sum / t.decisions as f64);
    let entropy = mean_over(&|t| spike_entropy(&t.counts));
    let total_spikes: u64 = tally.iter().flat_map(|t| t.counts.iter()).map(|&c| u64::from(c)).sum();
    let mean_spikes = if agent_steps == 0 { 0.0 } else { total_spikes as f64 / agent_steps as f64 };
    let violation_rate = if agent_steps == 0 { 0.0 } else { violations as f64 / agent_steps as f64 };
    let tc = &config.train;
    let record = TrainRecord {
        episode,
        epsilon,
        mean_reward,
        violations,
        agent_steps,
        violation_rate,
        kl_nats,
        kl_floored,
        spike_entropy: entropy,
        mean_spikes,
        coverage: world.coverage_stats().fraction,
        hybrid_loss: hybrid_loss(mean_reward, kl_nats, mean_spikes, tc.lambda_kl, tc.beta_spike),
        penalty: tc.penalty(violation_rate),
        mutual_information_bits: if mi_log.is_empty() { 0.0 } else { mutual_information(&mi_log) },
        refractory_breaches: breaches,
        ..TrainRecord::default()
    };
    Ok(EpisodeOutput { record, transitions, contexts, trajectories, world })
}
