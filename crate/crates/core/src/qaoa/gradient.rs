//! Parameter-shift gradients.
//!
//! Every parametrized gate is a rotation `exp(-i θ G / 2)` with `G² = I`, so
//! `∂p/∂θ = [p(θ + π/2) − p(θ − π/2)] / 2` holds exactly for each outcome
//! probability. A circuit parameter may drive several gates (a shared `β`
//! drives one `RX` per qubit, a `γ` drives one Z-string rotation per cost
//! term); the chain rule sums their contributions with the recorded
//! `dθ/dparam` factors. Objectives are arbitrary smooth functions of the
//! outcome probabilities, supplied with their gradient.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;

use super::{plan_marginal, KlDivergence, PlanContext, QaoaPolicy, PLAN_CLASSES};
use crate::error::{Error, Result};
use crate::quantum::{Gate, StateVector};

/// A gate together with the circuit parameter that sets its angle.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundGate {
    pub gate: Gate,
    /// `(parameter index, d angle / d parameter)`.
    pub binding: Option<(usize, f64)>,
}

impl BoundGate {
    pub fn fixed(gate: Gate) -> Self {
        Self { gate, binding: None }
    }

    pub fn bound(gate: Gate, param: usize, scale: f64) -> Self {
        Self { gate, binding: Some((param, scale)) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMode {
    /// Exact statevector probabilities.
    Exact,
    /// Probabilities estimated from this many shots per shifted circuit.
    Sampled(usize),
}

fn shifted(gate: &Gate, delta: f64) -> Result<Gate> {
    Ok(match gate {
        Gate::Ry(q, t) => Gate::Ry(*q, t + delta),
        Gate::Rx(q, t) => Gate::Rx(*q, t + delta),
        Gate::ZRotation { mask, angle } => Gate::ZRotation { mask: *mask, angle: angle + delta },
        other => return Err(Error::usage(format!("gate {other:?} has no shift rule"))),
    })
}

fn probabilities<R: Rng + ?Sized>(state: &StateVector, mode: GradientMode, rng: &mut R) -> Result<Vec<f64>> {
    match mode {
        GradientMode::Exact => Ok(state.probabilities()),
        GradientMode::Sampled(shots) => {
            let counts = state.sample(shots, rng)?;
            Ok(counts.iter().map(|&c| c as f64 / shots as f64).collect())
        }
    }
}

/// Gradient of `objective(probabilities)` with respect to the circuit
/// parameters. `objective` returns the value and `∂F/∂p`.
pub fn shift_gradient<R, F>(
    n_qubits: usize,
    circuit: &[BoundGate],
    n_params: usize,
    objective: F,
    mode: GradientMode,
    rng: &mut R,
) -> Result<Vec<f64>>
where
    R: Rng + ?Sized,
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let mut grad = vec![0.0; n_params];
    let base = {
        let mut s = StateVector::new(n_qubits)?;
        for g in circuit {
            s.apply_gate(&g.gate)?;
        }
        s
    };
    let (_, dfdp) = objective(&probabilities(&base, mode, rng)?);

    // Prefix states avoid re-running the unshifted head of the circuit.
    let mut prefix = StateVector::new(n_qubits)?;
    for (k, g) in circuit.iter().enumerate() {
        if let Some((param, scale)) = g.binding {
            if param >= n_params {
                return Err(Error::usage(format!("gate bound to parameter {param} of {n_params}")));
            }
            let mut diff = 0.0;
            for (sign, delta) in [(1.0, FRAC_PI_2), (-1.0, -FRAC_PI_2)] {
                let mut s = prefix.clone();
                s.apply_gate(&shifted(&g.gate, delta)?)?;
                for rest in &circuit[k + 1..] {
                    s.apply_gate(&rest.gate)?;
                }
                let p = probabilities(&s, mode, rng)?;
                diff += sign * p.iter().zip(&dfdp).map(|(pi, di)| pi * di).sum::<f64>();
            }
            grad[param] += scale * diff / 2.0;
        }
        prefix.apply_gate(&g.gate)?;
    }
    Ok(grad)
}

/// Training objective of the planner, to be minimized:
/// `E[cost] + λ_KL · KL(plan ‖ prior) + penalty · P(unsafe plan)`, averaged
/// over a batch of contexts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanObjective {
    pub lambda_kl: f64,
    /// Constraint penalty weight applied to the probability of unsafe plans.
    pub penalty: f64,
}

impl PlanObjective {
    /// Value and `∂F/∂p_plan` for one plan distribution.
    pub fn evaluate(&self, ctx: &PlanContext, plan: &[f64; PLAN_CLASSES]) -> (f64, [f64; PLAN_CLASSES]) {
        let q = ctx.prior.probabilities();
        let KlDivergence { nats, .. } = super::kl_divergence(plan, q);
        let mut value = self.lambda_kl * nats;
        let mut grad = [0.0; PLAN_CLASSES];
        for i in 0..PLAN_CLASSES {
            let unsafe_term = if ctx.unsafe_plans[i] { self.penalty } else { 0.0 };
            value += plan[i] * (ctx.plan_cost[i] + unsafe_term);
            let p = plan[i].max(1e-300);
            grad[i] = ctx.plan_cost[i] + unsafe_term + self.lambda_kl * ((p / q[i].max(super::KL_FLOOR)).ln() + 1.0);
        }
        (value, grad)
    }

    /// Mean objective over `contexts` at the policy's current parameters.
    pub fn value(&self, policy: &QaoaPolicy, contexts: &[PlanContext]) -> Result<f64> {
        let mut total = 0.0;
        for ctx in contexts {
            let state = policy.build_state(&ctx.angles, &ctx.cost_table(policy.n_qubits))?;
            let plan = plan_marginal(&state.probabilities(), policy.n_qubits);
            total += self.evaluate(ctx, &plan).0;
        }
        Ok(total / contexts.len().max(1) as f64)
    }

    /// Parameter-shift gradient of [`PlanObjective::value`].
    pub fn gradient<R: Rng + ?Sized>(&self, policy: &QaoaPolicy, contexts: &[PlanContext], mode: GradientMode, rng: &mut R) -> Result<Vec<f64>> {
        let n = policy.n_qubits;
        let mut total = vec![0.0; policy.params().len()];
        for ctx in contexts {
            let cost = ctx.cost_table(n);
            let circuit = policy.bound_circuit(&ctx.angles, &cost);
            let g = parameter_shift_grad(policy, &circuit, |probs| {
                let plan = plan_marginal(probs, n);
                let (v, dplan) = self.evaluate(ctx, &plan);
                let dfdp = (0..probs.len()).map(|z| dplan[super::plan_of(z, n)]).collect();
                (v, dfdp)
            }, mode, rng)?;
            total.iter_mut().zip(g).for_each(|(t, gi)| *t += gi);
        }
        let scale = 1.0 / contexts.len().max(1) as f64;
        total.iter_mut().for_each(|t| *t *= scale);
        Ok(total)
    }
}

/// Parameter-shift gradient of an objective over the policy's circuit.
pub fn parameter_shift_grad<R, F>(policy: &QaoaPolicy, circuit: &[BoundGate], objective: F, mode: GradientMode, rng: &mut R) -> Result<Vec<f64>>
where
    R: Rng + ?Sized,
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    shift_gradient(policy.n_qubits, circuit, policy.params().len(), objective, mode, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::CostTable;
    use crate::qaoa::Ansatz;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_ry_z_expectation() {
        // ⟨Z⟩ = cos θ for RY(θ)|0⟩.
        let z_obj = |p: &[f64]| (p[0] - p[1], vec![1.0, -1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for theta in [0.0, 0.4, std::f64::consts::FRAC_PI_2, 2.5] {
            let c = [BoundGate::bound(Gate::Ry(0, theta), 0, 1.0)];
            let g = shift_gradient(1, &c, 1, z_obj, GradientMode::Exact, &mut rng).unwrap();
            assert!((g[0] + theta.sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_objective_has_zero_gradient() {
        let pol = QaoaPolicy::random(4, 2, Ansatz::Qaoa, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let cost = CostTable::new(vec![0.0; 16]).unwrap();
        let circuit = pol.bound_circuit(&[0.1, 0.2, 0.3, 0.4], &cost);
        let g = parameter_shift_grad(&pol, &circuit, |p| {
            let v: f64 = p.iter().zip(cost.values()).map(|(a, b)| a * b).sum();
            (v, cost.values().to_vec())
        }, GradientMode::Exact, &mut ChaCha8Rng::seed_from_u64(2))
        .unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn sampled_mode_tracks_exact() {
        let z_obj = |p: &[f64]| (p[0] - p[1], vec![1.0, -1.0]);
        let c = [BoundGate::bound(Gate::Ry(0, 1.0), 0, 1.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = shift_gradient(1, &c, 1, z_obj, GradientMode::Sampled(20_000), &mut rng).unwrap();
        assert!((g[0] + 1.0f64.sin()).abs() < 0.03);
    }
}
