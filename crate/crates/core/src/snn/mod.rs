//! Leaky integrate-and-fire dynamics and the spiking Q-network built on them.

mod net;

pub use net::{td_loss, Experience, GradMode, NetShape, SpikingQNet, Weights, DEFAULT_HIDDEN, DEFAULT_INPUT_GAIN, DEFAULT_OUTPUT_GAIN, PLAN_GROUPS};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Membrane and integration constants. Times are in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifConfig {
    pub tau_m: f64,
    pub u_th: f64,
    pub refractory: f64,
    pub dt: f64,
    pub u_reset: f64,
}

impl Default for LifConfig {
    fn default() -> Self {
        Self { tau_m: 10.0, u_th: 1.0, refractory: 2.0, dt: 1.0, u_reset: 0.0 }
    }
}

impl LifConfig {
    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.tau_m, self.u_th, self.refractory, self.dt, self.u_reset].iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::config("lif constants must be finite"));
        }
        if self.tau_m <= 0.0 {
            return Err(Error::config(format!("lif.tau_m must be > 0, got {}", self.tau_m)));
        }
        if !(self.dt > 0.0 && self.dt <= self.tau_m) {
            return Err(Error::config(format!("lif.dt must be in (0, tau_m], got {}", self.dt)));
        }
        if self.refractory < 0.0 {
            return Err(Error::config(format!("lif.refractory must be >= 0, got {}", self.refractory)));
        }
        Ok(())
    }

    /// Number of integration steps in a window of `window_ms`.
    pub fn steps(&self, window_ms: f64) -> usize {
        (window_ms / self.dt).round() as usize
    }

    fn leak(&self) -> f64 {
        self.dt / self.tau_m
    }
}

/// Membrane potentials and refractory timers of a population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifState {
    pub u: Vec<f64>,
    pub refractory_remaining: Vec<f64>,
}

impl LifState {
    pub fn new(n: usize, config: &LifConfig) -> Self {
        Self { u: vec![config.u_reset; n], refractory_remaining: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

/// Advances every neuron by one Euler step of `τ du/dt = −u + I`.
pub fn lif_step(state: &LifState, config: &LifConfig, input_current: &[f64]) -> Result<(LifState, Vec<bool>)> {
    if input_current.len() != state.len() {
        return Err(Error::usage(format!("{} currents for {} neurons", input_current.len(), state.len())));
    }
    if input_current.iter().any(|i| !i.is_finite()) {
        return Err(Error::Input("non-finite input current".into()));
    }
    let mut next = state.clone();
    let mut spikes = vec![false; state.len()];
    for j in 0..state.len() {
        spikes[j] = integrate(config, &mut next.u[j], &mut next.refractory_remaining[j], input_current[j]).spiked;
    }
    Ok((next, spikes))
}

/// Result of one neuron update, with the pre-reset potential kept for BPTT.
#[derive(Debug, Clone, Copy)]
pub(crate) struct NeuronStep {
    pub pre: f64,
    pub spiked: bool,
    pub held: bool,
}

#[inline]
pub(crate) fn integrate(config: &LifConfig, u: &mut f64, refractory: &mut f64, current: f64) -> NeuronStep {
    if *refractory > 0.0 {
        *u = config.u_reset;
        *refractory = (*refractory - config.dt).max(0.0);
        return NeuronStep { pre: config.u_reset, spiked: false, held: true };
    }
    let pre = *u + config.leak() * (current - *u);
    if pre >= config.u_th {
        *u = config.u_reset;
        *refractory = config.refractory;
        NeuronStep { pre, spiked: true, held: false }
    } else {
        *u = pre;
        NeuronStep { pre, spiked: false, held: false }
    }
}

/// Fast-sigmoid surrogate derivative `1 / (1 + α|x|)²`.
#[inline]
pub fn surrogate_sigma_prime(x: f64, alpha: f64) -> f64 {
    let d = 1.0 + alpha * x.abs();
    1.0 / (d * d)
}

/// Fast sigmoid `x / (1 + α|x|)`, whose derivative is [`surrogate_sigma_prime`].
#[inline]
pub fn fast_sigmoid(x: f64, alpha: f64) -> f64 {
    x / (1.0 + alpha * x.abs())
}

/// Peak input firing probability per millisecond.
pub const MAX_RATE: f64 = 0.5;

/// Sparse input spike raster: for every step, the indices that fired.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpikeTrain {
    pub n_inputs: usize,
    pub steps: Vec<Vec<u32>>,
    /// Some feature was outside `[0, 1]` and had to be clipped.
    pub clipped: bool,
}

impl SpikeTrain {
    pub fn total(&self) -> usize {
        self.steps.iter().map(Vec::len).sum()
    }

    pub fn count(&self, input: usize) -> usize {
        self.steps.iter().filter(|s| s.contains(&(input as u32))).count()
    }
}

/// Poisson-like rate code: feature `f` fires with probability `f · 0.5 · dt`
/// per step, independently.
pub fn encode_rate<R: Rng + ?Sized>(features: &[f64], window_ms: f64, dt: f64, rng: &mut R) -> SpikeTrain {
    let n_steps = (window_ms / dt).round() as usize;
    let mut clipped = false;
    let probs: Vec<f64> = features
        .iter()
        .map(|&f| {
            let c = if f.is_nan() { 0.0 } else { f.clamp(0.0, 1.0) };
            clipped |= c != f;
            (c * MAX_RATE * dt).min(1.0)
        })
        .collect();
    let steps = (0..n_steps)
        .map(|_| {
            let mut fired = Vec::new();
            for (i, &p) in probs.iter().enumerate() {
                // Always draw, so the stream position does not depend on values.
                let x: f64 = rng.random();
                if x < p {
                    fired.push(i as u32);
                }
            }
            fired
        })
        .collect();
    SpikeTrain { n_inputs: features.len(), steps, clipped }
}

/// Spike activity of one forward pass.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SpikeRecord {
    /// Output-neuron spike counts over the window.
    pub counts: Vec<u32>,
    pub hidden_spikes: u64,
    /// Step-by-step output raster, when requested.
    pub raster: Option<Vec<Vec<bool>>>,
    /// Spikes observed inside a refractory window; must stay zero.
    pub refractory_breaches: u64,
}

impl SpikeRecord {
    pub fn total_output(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }
}

/// Shannon entropy (nats) of the output spike-count distribution.
pub fn spike_entropy(counts: &[u32]) -> f64 {
    let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / t;
            -p * p.ln()
        })
        .sum::<f64>()
        .max(0.0)
}

/// Outcome of epsilon-greedy selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionChoice {
    pub action: usize,
    pub explored: bool,
    /// The mask allowed nothing; the hover action (index 0) was forced.
    pub forced_hover: bool,
}

/// Epsilon-greedy over the admissible actions; ties go to the lowest index.
pub fn select_action<R: Rng + ?Sized>(q_values: &[f64], epsilon: f64, safe_mask: &[bool], rng: &mut R) -> Result<ActionChoice> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::usage(format!("epsilon {epsilon} outside [0, 1]")));
    }
    if safe_mask.len() != q_values.len() {
        return Err(Error::usage(format!("mask has {} entries for {} actions", safe_mask.len(), q_values.len())));
    }
    let allowed: Vec<usize> = (0..q_values.len()).filter(|&a| safe_mask[a]).collect();
    if allowed.is_empty() {
        return Ok(ActionChoice { action: 0, explored: false, forced_hover: true });
    }
    let explore = rng.random::<f64>() < epsilon;
    let action = if explore {
        allowed[rng.random_range(0..allowed.len())]
    } else {
        greedy(q_values, &allowed)
    };
    Ok(ActionChoice { action, explored: explore, forced_hover: false })
}

pub(crate) fn greedy(q: &[f64], allowed: &[usize]) -> usize {
    let mut best = allowed[0];
    for &a in &allowed[1..] {
        if q[a] > q[best] {
            best = a;
        }
    }
    best
}
