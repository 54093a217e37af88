use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{encode_rate, fast_sigmoid, greedy, integrate, surrogate_sigma_prime, LifConfig, SpikeRecord, SpikeTrain};
use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN: usize = 128;
/// The hidden layer is split into this many equal groups, one per latent plan.
pub const PLAN_GROUPS: usize = 8;
/// Default synaptic gains. Presynaptic activity is sparse and binary, so
/// currents are amplified; the output gain is set so an untrained network
/// already emits a few output spikes per window. Keeping the gain outside the
/// stored weights leaves those at unit scale, where an Adam step of `lr` is a
/// meaningful relative change.
pub const DEFAULT_INPUT_GAIN: f64 = 6.0;
pub const DEFAULT_OUTPUT_GAIN: f64 = 24.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl NetShape {
    pub fn new(input: usize, hidden: usize, output: usize) -> Result<Self> {
        if input == 0 || output == 0 || hidden == 0 {
            return Err(Error::config(format!("network shape [{input}, {hidden}, {output}] has an empty layer")));
        }
        Ok(Self { input, hidden, output })
    }
}

/// Two dense matrices, stored presynaptic-major: `w_in[i * hidden + j]`
/// connects input `i` to hidden `j`, `w_out[j * output + k]` hidden `j` to
/// output `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub w_in: Vec<f64>,
    pub w_out: Vec<f64>,
}

impl Weights {
    pub fn zeros(shape: NetShape) -> Self {
        Self { w_in: vec![0.0; shape.input * shape.hidden], w_out: vec![0.0; shape.hidden * shape.output] }
    }

    /// Uniform draws with `std = 1 / sqrt(fan_in)`.
    pub fn random<R: Rng + ?Sized>(shape: NetShape, rng: &mut R) -> Self {
        let mut draw = |n: usize, fan_in: usize| -> Vec<f64> {
            let a = (3.0 / fan_in as f64).sqrt();
            (0..n).map(|_| rng.random_range(-a..a)).collect()
        };
        Self { w_in: draw(shape.input * shape.hidden, shape.input), w_out: draw(shape.hidden * shape.output, shape.hidden) }
    }

    fn check(&self, shape: NetShape) -> Result<()> {
        if self.w_in.len() != shape.input * shape.hidden || self.w_out.len() != shape.hidden * shape.output {
            return Err(Error::usage("weight matrices do not match the network shape"));
        }
        if self.iter().any(|w| !w.is_finite()) {
            return Err(Error::Training("non-finite network weight".into()));
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.w_in.iter().chain(&self.w_out)
    }

    fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w_in.iter_mut().chain(&mut self.w_out)
    }

    pub fn len(&self) -> usize {
        self.w_in.len() + self.w_out.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// How the spike nonlinearity is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    /// Heaviside spikes with reset and refractoriness; the backward pass uses
    /// the surrogate derivative.
    Spiking,
    /// Spikes replaced by the fast sigmoid itself and no reset, so the
    /// surrogate derivative is the true derivative.
    Smooth,
}

/// One replayed transition, with features already scaled into `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub state: Vec<f64>,
    pub plan: Option<usize>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub next_plan: Option<usize>,
    /// Actions the bootstrap maximum ranges over; all when `None`.
    pub next_mask: Option<Vec<bool>>,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
struct Adam {
    m: Weights,
    v: Weights,
    t: i32,
}

const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Per-step internals kept for backpropagation through time.
struct Trace {
    steps: usize,
    hid_pre: Vec<f64>,
    hid_s: Vec<f64>,
    hid_held: Vec<bool>,
    out_pre: Vec<f64>,
    out_s: Vec<f64>,
    out_held: Vec<bool>,
}

/// Three-layer LIF network whose output spike counts decode to Q-values.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikingQNet {
    shape: NetShape,
    pub lif: LifConfig,
    /// Surrogate slope.
    pub alpha: f64,
    /// Decode window, ms.
    pub window_ms: f64,
    /// Constant current injected into the hidden group of the active plan.
    pub plan_bias: f64,
    /// Weight of the final output potential in the decoded Q-value.
    pub potential_weight: f64,
    /// Fixed multipliers on the input-to-hidden and hidden-to-output currents.
    pub input_gain: f64,
    pub output_gain: f64,
    online: Weights,
    target: Weights,
    adam: Adam,
}

impl SpikingQNet {
    pub fn new<R: Rng + ?Sized>(shape: NetShape, lif: LifConfig, rng: &mut R) -> Result<Self> {
        let w = Weights::random(shape, rng);
        Self::from_weights(shape, lif, w.clone(), w)
    }

    pub fn from_weights(shape: NetShape, lif: LifConfig, online: Weights, target: Weights) -> Result<Self> {
        lif.validate()?;
        online.check(shape)?;
        target.check(shape)?;
        Ok(Self {
            shape,
            lif,
            alpha: 1.0,
            window_ms: 20.0,
            plan_bias: 0.3,
            potential_weight: 0.1,
            input_gain: DEFAULT_INPUT_GAIN,
            output_gain: DEFAULT_OUTPUT_GAIN,
            online,
            target,
            adam: Adam { m: Weights::zeros(shape), v: Weights::zeros(shape), t: 0 },
        })
    }

    pub fn shape(&self) -> NetShape {
        self.shape
    }

    pub fn online(&self) -> &Weights {
        &self.online
    }

    pub fn online_mut(&mut self) -> &mut Weights {
        &mut self.online
    }

    pub fn target(&self) -> &Weights {
        &self.target
    }

    pub fn steps(&self) -> usize {
        self.lif.steps(self.window_ms)
    }

    /// Rate-codes features over this network's window.
    pub fn encode<R: Rng + ?Sized>(&self, features: &[f64], rng: &mut R) -> SpikeTrain {
        encode_rate(features, self.window_ms, self.lif.dt, rng)
    }

    /// Q-values from the online weights.
    pub fn forward_q(&self, input: &SpikeTrain, plan: Option<usize>) -> Result<(Vec<f64>, SpikeRecord)> {
        let (q, rec, _) = self.simulate(&self.online, input, plan, GradMode::Spiking, false, false)?;
        Ok((q, rec))
    }

    /// Like [`SpikingQNet::forward_q`] but also keeps the output raster.
    pub fn forward_q_raster(&self, input: &SpikeTrain, plan: Option<usize>) -> Result<(Vec<f64>, SpikeRecord)> {
        let (q, rec, _) = self.simulate(&self.online, input, plan, GradMode::Spiking, false, true)?;
        Ok((q, rec))
    }

    /// Q-values from the target weights.
    pub fn forward_target(&self, input: &SpikeTrain, plan: Option<usize>) -> Result<Vec<f64>> {
        Ok(self.simulate(&self.target, input, plan, GradMode::Spiking, false, false)?.0)
    }

    /// Q-values under `mode`, online weights.
    pub fn forward_mode(&self, input: &SpikeTrain, plan: Option<usize>, mode: GradMode) -> Result<Vec<f64>> {
        Ok(self.simulate(&self.online, input, plan, mode, false, false)?.0)
    }

    /// Q-values and the gradient of `Σ_k dq[k]·Q_k` with respect to the
    /// online weights.
    pub fn q_gradient(&self, input: &SpikeTrain, plan: Option<usize>, mode: GradMode, dq: &[f64]) -> Result<(Vec<f64>, Weights)> {
        if dq.len() != self.shape.output {
            return Err(Error::usage("dq length differs from the output layer"));
        }
        let (q, _, trace) = self.simulate(&self.online, input, plan, mode, true, false)?;
        let mut grad = Weights::zeros(self.shape);
        self.backward(&self.online, input, &trace.expect("trace requested"), dq, mode, &mut grad);
        Ok((q, grad))
    }

    /// `θ⁻ ← θ`.
    pub fn sync_target(&mut self) {
        self.target.clone_from(&self.online);
    }

    /// One adaptive-moment step on the mean squared TD error of `batch`.
    /// Returns the mean loss before the step.
    pub fn td_update<R: Rng + ?Sized>(&mut self, batch: &[Experience], gamma: f64, lr: f64, rng: &mut R) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::usage("empty TD batch"));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut grad = Weights::zeros(self.shape);
        let mut loss = 0.0;
        for (k, e) in batch.iter().enumerate() {
            if e.action >= self.shape.output {
                return Err(Error::usage(format!("transition {k} has action {} of {}", e.action, self.shape.output)));
            }
            if !e.reward.is_finite() {
                return Err(Error::Training(format!("transition {k} has non-finite reward {}", e.reward)));
            }
            let x = self.encode(&e.state, rng);
            let x_next = self.encode(&e.next_state, rng);
            let target = if e.terminal {
                e.reward
            } else {
                let q_next = self.forward_target(&x_next, e.next_plan)?;
                e.reward + gamma * masked_max(&q_next, e.next_mask.as_deref())
            };
            let (q, _, trace) = self.simulate(&self.online, &x, e.plan, GradMode::Spiking, true, false)?;
            let err = q[e.action] - target;
            if !err.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite TD error in transition {k}: q={:?} target={target} reward={} action={}",
                    q, e.reward, e.action
                )));
            }
            loss += err * err;
            let mut dq = vec![0.0; self.shape.output];
            dq[e.action] = 2.0 * err * scale;
            self.backward(&self.online, &x, &trace.expect("trace requested"), &dq, GradMode::Spiking, &mut grad);
        }
        self.adam_step(&grad, lr)?;
        Ok(loss * scale)
    }

    /// Applies one Adam step with gradient `grad`.
    pub fn adam_step(&mut self, grad: &Weights, lr: f64) -> Result<()> {
        grad.check(self.shape).map_err(|_| Error::Training("non-finite SNN gradient".into()))?;
        let a = &mut self.adam;
        a.t += 1;
        let c1 = 1.0 - ADAM_B1.powi(a.t);
        let c2 = 1.0 - ADAM_B2.powi(a.t);
        for (((w, g), m), v) in self.online.iter_mut().zip(grad.iter()).zip(a.m.iter_mut()).zip(a.v.iter_mut()) {
            *m = ADAM_B1 * *m + (1.0 - ADAM_B1) * g;
            *v = ADAM_B2 * *v + (1.0 - ADAM_B2) * g * g;
            *w -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        }
        self.online.check(self.shape)
    }

    fn simulate(
        &self,
        w: &Weights,
        input: &SpikeTrain,
        plan: Option<usize>,
        mode: GradMode,
        keep_trace: bool,
        keep_raster: bool,
    ) -> Result<(Vec<f64>, SpikeRecord, Option<Trace>)> {
        let NetShape { input: d, hidden: h, output: o } = self.shape;
        let n = self.steps();
        if input.n_inputs != d || input.steps.len() != n {
            return Err(Error::usage(format!(
                "input train is {}x{}, network expects {d} inputs over {n} steps",
                input.n_inputs,
                input.steps.len()
            )));
        }
        if let Some(z) = plan {
            if z >= PLAN_GROUPS || h % PLAN_GROUPS != 0 {
                return Err(Error::usage(format!("plan {z} cannot bias a hidden layer of {h} in {PLAN_GROUPS} groups")));
            }
        }
        let cfg = &self.lif;
        let group = h / PLAN_GROUPS;
        let mut bias = vec![0.0; h];
        if let Some(z) = plan {
            bias[z * group..(z + 1) * group].iter_mut().for_each(|b| *b = self.plan_bias);
        }

        let mut u_h = vec![cfg.u_reset; h];
        let mut r_h = vec![0.0; h];
        let mut u_o = vec![cfg.u_reset; o];
        let mut r_o = vec![0.0; o];
        let mut last_h = vec![None::<usize>; h];
        let mut last_o = vec![None::<usize>; o];
        let refractory_steps = cfg.refractory / cfg.dt;
        let mut breaches = 0u64;
        let mut check = |last: &mut Option<usize>, t: usize| {
            if let Some(l) = *last {
                if ((t - l) as f64) <= refractory_steps {
                    breaches += 1;
                }
            }
            *last = Some(t);
        };

        let mut rec = SpikeRecord { counts: vec![0; o], raster: keep_raster.then(Vec::new), ..SpikeRecord::default() };
        let mut trace = keep_trace.then(|| Trace {
            steps: n,
            hid_pre: vec![0.0; n * h],
            hid_s: vec![0.0; n * h],
            hid_held: vec![false; n * h],
            out_pre: vec![0.0; n * o],
            out_s: vec![0.0; n * o],
            out_held: vec![false; n * o],
        });
        let mut current_h = vec![0.0; h];
        let mut s_h = vec![0.0; h];
        let mut current_o = vec![0.0; o];
        let mut q = vec![0.0; o];
        let (gi, go) = (self.input_gain, self.output_gain);

        for t in 0..n {
            current_h.copy_from_slice(&bias);
            for &i in &input.steps[t] {
                let row = &w.w_in[i as usize * h..(i as usize + 1) * h];
                current_h.iter_mut().zip(row).for_each(|(c, wi)| *c += gi * wi);
            }
            for j in 0..h {
                let (pre, s, held) = match mode {
                    GradMode::Spiking => {
                        let st = integrate(cfg, &mut u_h[j], &mut r_h[j], current_h[j]);
                        if st.spiked {
                            rec.hidden_spikes += 1;
                            check(&mut last_h[j], t);
                        }
                        (st.pre, if st.spiked { 1.0 } else { 0.0 }, st.held)
                    }
                    GradMode::Smooth => {
                        let pre = u_h[j] + cfg.leak() * (current_h[j] - u_h[j]);
                        u_h[j] = pre;
                        (pre, fast_sigmoid(pre - cfg.u_th, self.alpha), false)
                    }
                };
                s_h[j] = s;
                if let Some(tr) = trace.as_mut() {
                    tr.hid_pre[t * h + j] = pre;
                    tr.hid_s[t * h + j] = s;
                    tr.hid_held[t * h + j] = held;
                }
            }

            current_o.iter_mut().for_each(|c| *c = 0.0);
            for (j, &s) in s_h.iter().enumerate() {
                if s != 0.0 {
                    let row = &w.w_out[j * o..(j + 1) * o];
                    current_o.iter_mut().zip(row).for_each(|(c, wj)| *c += go * s * wj);
                }
            }
            let mut raster_row = vec![false; o];
            for k in 0..o {
                let (pre, s, held) = match mode {
                    GradMode::Spiking => {
                        let st = integrate(cfg, &mut u_o[k], &mut r_o[k], current_o[k]);
                        if st.spiked {
                            rec.counts[k] += 1;
                            raster_row[k] = true;
                            check(&mut last_o[k], t);
                        }
                        (st.pre, if st.spiked { 1.0 } else { 0.0 }, st.held)
                    }
                    GradMode::Smooth => {
                        let pre = u_o[k] + cfg.leak() * (current_o[k] - u_o[k]);
                        u_o[k] = pre;
                        (pre, fast_sigmoid(pre - cfg.u_th, self.alpha), false)
                    }
                };
                q[k] += s;
                if let Some(tr) = trace.as_mut() {
                    tr.out_pre[t * o + k] = pre;
                    tr.out_s[t * o + k] = s;
                    tr.out_held[t * o + k] = held;
                }
            }
            if let Some(r) = rec.raster.as_mut() {
                r.push(raster_row);
            }
        }
        rec.refractory_breaches = breaches;
        let inv = if n > 0 { 1.0 / n as f64 } else { 0.0 };
        for k in 0..o {
            q[k] = q[k] * inv + self.potential_weight * u_o[k];
        }
        Ok((q, rec, trace))
    }

    /// Backpropagation through time. Spikes use the surrogate derivative and
    /// the reset is a stop-gradient, so `∂u_after/∂u_before = 1 − s`.
    fn backward(&self, w: &Weights, input: &SpikeTrain, tr: &Trace, dq: &[f64], mode: GradMode, grad: &mut Weights) {
        let NetShape { hidden: h, output: o, .. } = self.shape;
        let n = tr.steps;
        if n == 0 {
            return;
        }
        let b = self.lif.leak();
        let a = 1.0 - b;
        let (th, alpha) = (self.lif.u_th, self.alpha);
        let (gain_in, gain_out) = (self.input_gain, self.output_gain);
        let reset = |s: f64| match mode {
            GradMode::Spiking => 1.0 - s,
            GradMode::Smooth => 1.0,
        };

        let mut g_s_hidden = vec![0.0; n * h];
        let direct: Vec<f64> = dq.iter().map(|d| d / n as f64).collect();
        let mut g_u: Vec<f64> = dq.iter().map(|d| d * self.potential_weight).collect();
        for t in (0..n).rev() {
            for k in 0..o {
                let idx = t * o + k;
                if tr.out_held[idx] {
                    g_u[k] = 0.0;
                    continue;
                }
                let g_pre = g_u[k] * reset(tr.out_s[idx]) + direct[k] * surrogate_sigma_prime(tr.out_pre[idx] - th, alpha);
                g_u[k] = a * g_pre;
                let g_i = gain_out * b * g_pre;
                if g_i == 0.0 {
                    continue;
                }
                for j in 0..h {
                    let s = tr.hid_s[t * h + j];
                    if s != 0.0 {
                        grad.w_out[j * o + k] += g_i * s;
                    }
                    g_s_hidden[t * h + j] += w.w_out[j * o + k] * g_i;
                }
            }
        }

        let mut g_u = vec![0.0; h];
        let mut g_i = vec![0.0; h];
        for t in (0..n).rev() {
            for j in 0..h {
                let idx = t * h + j;
                if tr.hid_held[idx] {
                    g_u[j] = 0.0;
                    g_i[j] = 0.0;
                    continue;
                }
                let g_pre = g_u[j] * reset(tr.hid_s[idx]) + g_s_hidden[idx] * surrogate_sigma_prime(tr.hid_pre[idx] - th, alpha);
                g_u[j] = a * g_pre;
                g_i[j] = gain_in * b * g_pre;
            }
            for &i in &input.steps[t] {
                let row = &mut grad.w_in[i as usize * h..(i as usize + 1) * h];
                row.iter_mut().zip(&g_i).for_each(|(g, gi)| *g += gi);
            }
        }
    }
}

/// `max_a Q(a)` over the allowed actions; over all actions if none is allowed.
pub(crate) fn masked_max(q: &[f64], mask: Option<&[bool]>) -> f64 {
    let allowed: Vec<usize> = match mask {
        Some(m) if m.iter().any(|&b| b) => (0..q.len()).filter(|&a| m[a]).collect(),
        _ => (0..q.len()).collect(),
    };
    q[greedy(q, &allowed)]
}

/// Squared TD error `(r + γ·max Q' − Q)²`.
pub fn td_loss(q: f64, reward: f64, gamma: f64, max_next: f64) -> f64 {
    let e = reward + gamma * max_next - q;
    e * e
}
