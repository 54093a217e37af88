//! Per-agent quantum latent planner.
//!
//! An observation is turned into input angles (one `RY` per qubit on top of
//! `|+⟩^⊗n`) and a diagonal cost over the eight latent plan classes. A depth-`p`
//! QAOA circuit (or the hardware-efficient `RY`/`CZ` alternative) is then
//! sampled, and the top three bits of each outcome name the plan.

mod gradient;
mod mitigation;

pub use gradient::{parameter_shift_grad, shift_gradient, BoundGate, GradientMode, PlanObjective};
pub use mitigation::{
    fold_noise, fold_noise_partial, mitigate_readout, mitigated_expectation, scale_noise, zne_extrapolate, ConfusionMatrix, MitigatedDistribution,
    NoiseModel, ZneReport,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, Observation, Pos};
use crate::error::{Error, Result};
use crate::quantum::{CostTable, Gate, StateVector, MAX_QUBITS};

/// Number of abstract plan classes (three measured bits).
pub const PLAN_CLASSES: usize = 8;
const PLAN_BITS: usize = 3;

/// Abstract plan classes, indexed by the top three bits of an outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum PlanKind {
    Hover = 0,
    AdvancePosX = 1,
    AdvanceNegX = 2,
    AdvancePosY = 3,
    AdvanceNegY = 4,
    Climb = 5,
    Descend = 6,
    Sweep = 7,
}

impl PlanKind {
    pub const ALL: [PlanKind; PLAN_CLASSES] = [
        PlanKind::Hover,
        PlanKind::AdvancePosX,
        PlanKind::AdvanceNegX,
        PlanKind::AdvancePosY,
        PlanKind::AdvanceNegY,
        PlanKind::Climb,
        PlanKind::Descend,
        PlanKind::Sweep,
    ];

    pub fn from_id(id: u8) -> PlanKind {
        PlanKind::ALL[id as usize % PLAN_CLASSES]
    }

    /// The grid step this plan commits to first, given what the agent sees.
    pub fn first_step(self, obs: &Observation) -> Action {
        match self {
            PlanKind::Hover => Action::Hover,
            PlanKind::AdvancePosX => Action::MovePosX,
            PlanKind::AdvanceNegX => Action::MoveNegX,
            PlanKind::AdvancePosY => Action::MovePosY,
            PlanKind::AdvanceNegY => Action::MoveNegY,
            PlanKind::Climb => Action::Climb,
            PlanKind::Descend => Action::Descend,
            PlanKind::Sweep => {
                let (dir, _) = LATERAL
                    .iter()
                    .map(|&(a, d)| (a, obs.lateral_depth(d)))
                    .fold((Action::MovePosX, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
                dir
            }
        }
    }

    /// Expected coverage gain of the plan's direction, in `[0, 1]`.
    pub fn utility(self, obs: &Observation) -> f64 {
        if obs.landed {
            return 0.0;
        }
        let r = obs.sensor_radius() as f64;
        let lateral = |d: Pos| 0.6 * obs.lateral_depth(d) / r + if obs.target_toward(d) { 0.4 } else { 0.0 };
        match self {
            PlanKind::Hover => 0.0,
            PlanKind::AdvancePosX => lateral([1, 0, 0]),
            PlanKind::AdvanceNegX => lateral([-1, 0, 0]),
            PlanKind::AdvancePosY => lateral([0, 1, 0]),
            PlanKind::AdvanceNegY => lateral([0, -1, 0]),
            PlanKind::Climb => 0.3 * obs.depth[4] / r,
            PlanKind::Descend => 0.3 * obs.depth[5] / r,
            PlanKind::Sweep => 0.8 * LATERAL.iter().map(|&(_, d)| obs.lateral_depth(d)).fold(0.0, f64::max) / r,
        }
    }
}

const LATERAL: [(Action, Pos); 4] = [
    (Action::MovePosX, [1, 0, 0]),
    (Action::MoveNegX, [-1, 0, 0]),
    (Action::MovePosY, [0, 1, 0]),
    (Action::MoveNegY, [0, -1, 0]),
];

/// A sampled latent decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentPlan {
    pub plan_id: u8,
    pub raw_bitstring: u32,
}

impl LatentPlan {
    pub fn from_bitstring(raw: u32, n_qubits: usize) -> Self {
        Self { plan_id: plan_of(raw as usize, n_qubits) as u8, raw_bitstring: raw }
    }

    pub fn kind(&self) -> PlanKind {
        PlanKind::from_id(self.plan_id)
    }
}

/// Plan class of a measured bitstring: its top three bits.
pub fn plan_of(z: usize, n_qubits: usize) -> usize {
    z >> (n_qubits - PLAN_BITS)
}

/// Marginalizes a basis-state distribution onto the plan classes.
pub fn plan_marginal(probs: &[f64], n_qubits: usize) -> [f64; PLAN_CLASSES] {
    let mut out = [0.0; PLAN_CLASSES];
    for (z, p) in probs.iter().enumerate() {
        out[plan_of(z, n_qubits)] += p;
    }
    out
}

/// Rule-based reference policy over plan classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorPolicy {
    distribution: [f64; PLAN_CLASSES],
}

impl PriorPolicy {
    pub fn new(distribution: [f64; PLAN_CLASSES]) -> Result<Self> {
        if distribution.iter().any(|&p| !p.is_finite() || p < 0.0) {
            return Err(Error::usage("prior entries must be finite and non-negative"));
        }
        let s: f64 = distribution.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::usage(format!("prior sums to {s}, not 1")));
        }
        Ok(Self { distribution })
    }

    pub fn uniform() -> Self {
        Self { distribution: [1.0 / PLAN_CLASSES as f64; PLAN_CLASSES] }
    }

    /// Uniform over the plans whose first step is safe; uniform over all
    /// plans if none is.
    pub fn safe_uniform(unsafe_plans: &[bool; PLAN_CLASSES]) -> Self {
        let k = unsafe_plans.iter().filter(|&&u| !u).count();
        if k == 0 {
            return Self::uniform();
        }
        let mut distribution = [0.0; PLAN_CLASSES];
        for (d, &u) in distribution.iter_mut().zip(unsafe_plans) {
            if !u {
                *d = 1.0 / k as f64;
            }
        }
        Self { distribution }
    }

    pub fn probabilities(&self) -> &[f64; PLAN_CLASSES] {
        &self.distribution
    }
}

/// KL divergence with its support diagnostic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlDivergence {
    pub nats: f64,
    /// The policy put mass on a plan the prior rules out; the floor was used.
    pub floored: bool,
}

pub const KL_FLOOR: f64 = 1e-9;

/// `Σ p ln(p / max(q, 1e-9))` with `0 ln 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> KlDivergence {
    let mut nats = 0.0;
    let mut floored = false;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                floored = true;
            }
            nats += pi * (pi / qi.max(KL_FLOOR)).ln();
        }
    }
    KlDivergence { nats: nats.max(0.0), floored }
}

pub fn kl_to_prior(plan_distribution: &[f64; PLAN_CLASSES], prior: &PriorPolicy) -> KlDivergence {
    kl_divergence(plan_distribution, prior.probabilities())
}

/// Weights of the three cost ingredients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostWeights {
    pub safety: f64,
    pub utility: f64,
    pub prior: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { safety: 5.0, utility: 1.0, prior: 0.5 }
    }
}

/// Everything the planner needs from one observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanContext {
    pub angles: Vec<f64>,
    pub plan_cost: [f64; PLAN_CLASSES],
    pub unsafe_plans: [bool; PLAN_CLASSES],
    pub prior: PriorPolicy,
}

impl PlanContext {
    pub fn from_observation(obs: &Observation, n_qubits: usize, input_scale: f64, weights: &CostWeights, velocity_limit: i32) -> Result<Self> {
        obs.check_finite()?;
        let mut unsafe_plans = [false; PLAN_CLASSES];
        for kind in PlanKind::ALL {
            let (_, verdict) = obs.predict(kind.first_step(obs), velocity_limit);
            unsafe_plans[kind as usize] = !obs.landed && verdict.violated();
        }
        let prior = PriorPolicy::safe_uniform(&unsafe_plans);
        let mut plan_cost = [0.0; PLAN_CLASSES];
        for kind in PlanKind::ALL {
            let i = kind as usize;
            let unsafe_term = if unsafe_plans[i] { 1.0 } else { 0.0 };
            plan_cost[i] = weights.safety * unsafe_term
                + weights.utility * (1.0 - kind.utility(obs))
                + weights.prior * (1.0 - prior.probabilities()[i]);
        }
        Ok(Self { angles: input_angles(obs, n_qubits, input_scale), plan_cost, unsafe_plans, prior })
    }

    pub fn cost_table(&self, n_qubits: usize) -> CostTable {
        let values = (0..1usize << n_qubits).map(|z| self.plan_cost[plan_of(z, n_qubits)]).collect();
        CostTable::new(values).expect("finite plan costs")
    }
}

/// Angle encoding: the six depth readings, min-max scaled into `[0, scale]`.
fn input_angles(obs: &Observation, n_qubits: usize, scale: f64) -> Vec<f64> {
    let r = obs.sensor_radius() as f64;
    (0..n_qubits)
        .map(|q| obs.depth.get(q).map_or(0.0, |d| scale * (d / r).clamp(0.0, 1.0)))
        .collect()
}

/// Input angles and cost table for one observation, with default weights.
pub fn encode_observation(obs: &Observation, n_qubits: usize) -> Result<(Vec<f64>, CostTable)> {
    let ctx = PlanContext::from_observation(obs, n_qubits, std::f64::consts::PI, &CostWeights::default(), 1)?;
    let cost = ctx.cost_table(n_qubits);
    Ok((ctx.angles, cost))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ansatz {
    /// Alternating cost phases and transverse-field mixers.
    Qaoa,
    /// Layers of `RY(θ)` followed by a linear open-chain `CZ` ladder.
    Pqc,
}

/// Variational parameters and settings of one agent's planner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaoaPolicy {
    pub n_qubits: usize,
    pub depth: usize,
    pub ansatz: Ansatz,
    /// QAOA: `[γ_1..γ_p, β_1..β_p]`; PQC: `θ` layer-major, `p · n` entries.
    params: Vec<f64>,
    prev_params: Vec<f64>,
    pub input_scale: f64,
    pub shots: usize,
    pub lambda_temp: f64,
}

impl QaoaPolicy {
    pub fn new(n_qubits: usize, depth: usize, ansatz: Ansatz, params: Vec<f64>) -> Result<Self> {
        if !(PLAN_BITS..=MAX_QUBITS).contains(&n_qubits) {
            return Err(Error::config(format!("qaoa.n_qubits {n_qubits} outside {PLAN_BITS}..={MAX_QUBITS}")));
        }
        let want = Self::param_count(n_qubits, depth, ansatz);
        if params.len() != want {
            return Err(Error::config(format!("expected {want} parameters, got {}", params.len())));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::config("policy parameters must be finite"));
        }
        Ok(Self {
            n_qubits,
            depth,
            ansatz,
            prev_params: params.clone(),
            params,
            input_scale: std::f64::consts::PI,
            shots: 500,
            lambda_temp: 0.1,
        })
    }

    /// Small random initial parameters in `[0, 0.2)`.
    pub fn random<R: Rng + ?Sized>(n_qubits: usize, depth: usize, ansatz: Ansatz, rng: &mut R) -> Result<Self> {
        let n = Self::param_count(n_qubits, depth, ansatz);
        Self::new(n_qubits, depth, ansatz, (0..n).map(|_| 0.2 * rng.random::<f64>()).collect())
    }

    pub fn param_count(n_qubits: usize, depth: usize, ansatz: Ansatz) -> usize {
        match ansatz {
            Ansatz::Qaoa => 2 * depth,
            Ansatz::Pqc => depth * n_qubits,
        }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn prev_params(&self) -> &[f64] {
        &self.prev_params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() || params.iter().any(|p| !p.is_finite()) {
            return Err(Error::usage("parameter vector has wrong length or non-finite entries"));
        }
        self.params = params;
        Ok(())
    }

    pub fn set_prev_params(&mut self, prev: Vec<f64>) -> Result<()> {
        if prev.len() != self.params.len() || prev.iter().any(|p| !p.is_finite()) {
            return Err(Error::usage("previous-parameter vector has wrong length or non-finite entries"));
        }
        self.prev_params = prev;
        Ok(())
    }

    pub fn gammas(&self) -> &[f64] {
        match self.ansatz {
            Ansatz::Qaoa => &self.params[..self.depth],
            Ansatz::Pqc => &[],
        }
    }

    pub fn betas(&self) -> &[f64] {
        match self.ansatz {
            Ansatz::Qaoa => &self.params[self.depth..],
            Ansatz::Pqc => &[],
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        match self.ansatz {
            Ansatz::Qaoa => (0..self.depth)
                .map(|l| format!("gamma_{l}"))
                .chain((0..self.depth).map(|l| format!("beta_{l}")))
                .collect(),
            Ansatz::Pqc => (0..self.depth).flat_map(|l| (0..self.n_qubits).map(move |q| format!("theta_{l}_{q}"))).collect(),
        }
    }

    /// Gate list with parameter bindings; the cost phase is expanded into
    /// Pauli-Z rotations so every parametrized gate has a two-level generator.
    pub fn bound_circuit(&self, angles: &[f64], cost: &CostTable) -> Vec<BoundGate> {
        let n = self.n_qubits;
        let mut gates: Vec<BoundGate> = (0..n).map(|q| BoundGate::fixed(Gate::H(q))).collect();
        gates.extend((0..n).map(|q| BoundGate::fixed(Gate::Ry(q, angles.get(q).copied().unwrap_or(0.0)))));
        match self.ansatz {
            Ansatz::Qaoa => {
                let coeffs = cost.pauli_z_coefficients();
                for l in 0..self.depth {
                    let (gamma, beta) = (self.params[l], self.params[self.depth + l]);
                    for (mask, &c) in coeffs.iter().enumerate().skip(1) {
                        if c.abs() > 1e-14 {
                            gates.push(BoundGate::bound(Gate::ZRotation { mask, angle: 2.0 * gamma * c }, l, 2.0 * c));
                        }
                    }
                    for q in 0..n {
                        gates.push(BoundGate::bound(Gate::Rx(q, 2.0 * beta), self.depth + l, 2.0));
                    }
                }
            }
            Ansatz::Pqc => {
                for l in 0..self.depth {
                    for q in 0..n {
                        let k = l * n + q;
                        gates.push(BoundGate::bound(Gate::Ry(q, self.params[k]), k, 1.0));
                    }
                    for q in 0..n.saturating_sub(1) {
                        gates.push(BoundGate::fixed(Gate::Cz { control: q, target: q + 1 }));
                    }
                }
            }
        }
        gates
    }

    /// Plain gate list of the circuit (cost phases kept whole).
    pub fn circuit(&self, angles: &[f64], cost: &CostTable) -> Vec<Gate> {
        let n = self.n_qubits;
        let mut gates: Vec<Gate> = (0..n).map(Gate::H).collect();
        gates.extend((0..n).map(|q| Gate::Ry(q, angles.get(q).copied().unwrap_or(0.0))));
        match self.ansatz {
            Ansatz::Qaoa => {
                for l in 0..self.depth {
                    gates.push(Gate::CostPhase { cost: cost.clone(), gamma: self.params[l] });
                    gates.extend((0..n).map(|q| Gate::Rx(q, 2.0 * self.params[self.depth + l])));
                }
            }
            Ansatz::Pqc => {
                for l in 0..self.depth {
                    gates.extend((0..n).map(|q| Gate::Ry(q, self.params[l * n + q])));
                    gates.extend((0..n.saturating_sub(1)).map(|q| Gate::Cz { control: q, target: q + 1 }));
                }
            }
        }
        gates
    }

    /// Input-encoding layer on `|+⟩^⊗n` followed by the variational layers.
    pub fn build_state(&self, angles: &[f64], cost: &CostTable) -> Result<StateVector> {
        let n = self.n_qubits;
        let mut s = StateVector::new(n)?;
        for q in 0..n {
            s.apply_gate(&Gate::H(q))?;
            s.apply_gate(&Gate::Ry(q, angles.get(q).copied().unwrap_or(0.0)))?;
        }
        match self.ansatz {
            Ansatz::Qaoa => {
                for l in 0..self.depth {
                    s.apply_cost_phase(cost, self.params[l])?;
                    s.apply_mixer(self.params[self.depth + l]);
                }
            }
            Ansatz::Pqc => {
                for l in 0..self.depth {
                    for q in 0..n {
                        s.apply_gate(&Gate::Ry(q, self.params[l * n + q]))?;
                    }
                    for q in 0..n.saturating_sub(1) {
                        s.apply_gate(&Gate::Cz { control: q, target: q + 1 })?;
                    }
                }
            }
        }
        Ok(s)
    }

    /// Samples `shots` outcomes, aggregates them into plan classes and draws
    /// one plan from the empirical distribution.
    pub fn sample_latent<R: Rng + ?Sized>(&self, state: &StateVector, rng: &mut R) -> Result<(LatentPlan, [f64; PLAN_CLASSES])> {
        let outcomes = state.sample_outcomes(self.shots, rng)?;
        let mut counts = [0usize; PLAN_CLASSES];
        for &z in &outcomes {
            counts[plan_of(z, state.n_qubits())] += 1;
        }
        let dist = counts.map(|c| c as f64 / outcomes.len() as f64);
        let pick = outcomes[rng.random_range(0..outcomes.len())];
        Ok((LatentPlan::from_bitstring(pick as u32, state.n_qubits()), dist))
    }

    /// `θ ← θ − lr·(grad + 2 λ_temp (θ − θ_prev))`, then `θ_prev ← θ_old`.
    pub fn update_params(&mut self, grad: &[f64], lr: f64) -> Result<()> {
        if grad.len() != self.params.len() {
            return Err(Error::usage(format!("gradient has {} entries, policy has {}", grad.len(), self.params.len())));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Training(format!("non-finite QAOA gradient at {} ({})", self.param_names()[i], grad[i])));
        }
        let old = self.params.clone();
        for ((p, g), prev) in self.params.iter_mut().zip(grad).zip(&self.prev_params) {
            *p -= lr * (g + 2.0 * self.lambda_temp * (*p - prev));
        }
        self.prev_params = old;
        Ok(())
    }
}
