//! Spiking neuron layers: the gated spiking neuron (GSN) and the LIF, PLIF
//! and ALIF baselines, with surrogate-gradient backpropagation through time.
//!
//! All kinds share the synaptic drive `z(t) = W_in x(t) + W_rec o(t-1)` and a
//! subtraction reset `u <- v - theta * o`. They differ in how the pre-reset
//! potential `v` is formed:
//!
//! | kind | pre-reset potential |
//! |------|---------------------|
//! | GSN  | `lambda(t) u + (1 - lambda(t)) (z + b)`, `lambda(t) = sigmoid(z + b_gate)` |
//! | LIF  | `lambda u + (z + b)` with a fixed `lambda` |
//! | PLIF | as LIF with `lambda = sigmoid(a)` for one learnable scalar `a` |
//! | ALIF | as LIF, firing against `theta + beta * A(t)`, `A(t) = rho A(t-1) + o(t-1)` |

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{sigmoid, Matrix};

/// How the spike nonlinearity is evaluated in the forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpikeMode {
    /// Heaviside spikes; the triangle surrogate stands in for its derivative.
    #[default]
    Hard,
    /// Smooth spikes whose exact derivative is the triangle surrogate. Used
    /// only to verify gradients against finite differences.
    Relaxed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeuronKind {
    #[default]
    Gsn,
    Lif,
    Plif,
    Alif,
}

/// Pseudo-derivative of the spike function: `max(0, 1 - |v - theta|)`.
pub fn surrogate_grad(v: f64, theta: f64) -> f64 {
    (1.0 - (v - theta).abs()).max(0.0)
}

/// Antiderivative of the triangle surrogate, rising from 0 at `v = theta - 1`
/// to 1 at `v = theta + 1`.
pub fn relaxed_spike(v: f64, theta: f64) -> f64 {
    let x = v - theta;
    if x <= -1.0 {
        0.0
    } else if x < 0.0 {
        0.5 * (x + 1.0) * (x + 1.0)
    } else if x < 1.0 {
        1.0 - 0.5 * (1.0 - x) * (1.0 - x)
    } else {
        1.0
    }
}

pub fn spike(v: f64, theta: f64, mode: SpikeMode) -> f64 {
    match mode {
        SpikeMode::Hard => {
            if v >= theta {
                1.0
            } else {
                0.0
            }
        }
        SpikeMode::Relaxed => relaxed_spike(v, theta),
    }
}

/// Decay gate. The pre-activation is bounded so the gate stays strictly
/// inside `(0, 1)` in floating point.
pub fn decay_gate(pre: f64) -> f64 {
    sigmoid(pre.clamp(-30.0, 30.0))
}

/// Per-kind constants shared by every layer of a model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeuronConfig {
    pub kind: NeuronKind,
    pub threshold: f64,
    /// LIF/ALIF membrane time constant in steps; decay is `exp(-1/tau)`.
    pub lif_tau: f64,
    pub alif_beta: f64,
    /// ALIF adaptation time constant in steps; `rho = exp(-1/tau)`.
    pub alif_tau: f64,
}

impl Default for NeuronConfig {
    fn default() -> Self {
        Self { kind: NeuronKind::Gsn, threshold: 1.0, lif_tau: 2.0, alif_beta: 1.8, alif_tau: 200.0 }
    }
}

impl NeuronConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) {
            return Err(Error::config("threshold must be positive"));
        }
        if !(self.lif_tau > 0.0) || !(self.alif_tau > 0.0) {
            return Err(Error::config("time constants must be positive"));
        }
        if !(self.alif_beta >= 0.0) {
            return Err(Error::config("alif_beta must be non-negative"));
        }
        Ok(())
    }

    pub fn with_kind(mut self, kind: NeuronKind) -> Self {
        self.kind = kind;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Dynamics {
    Gsn { gate_bias: Vec<f64> },
    Lif { decay: f64 },
    Plif { raw_decay: f64 },
    Alif { decay: f64, beta: f64, rho: f64 },
}

impl Dynamics {
    pub fn kind(&self) -> NeuronKind {
        match self {
            Dynamics::Gsn { .. } => NeuronKind::Gsn,
            Dynamics::Lif { .. } => NeuronKind::Lif,
            Dynamics::Plif { .. } => NeuronKind::Plif,
            Dynamics::Alif { .. } => NeuronKind::Alif,
        }
    }
}

/// One recurrent spiking layer.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikingLayer {
    /// Feed-forward weights, `inputs x width`.
    pub w_in: Matrix,
    /// Recurrent weights, `width x width`.
    pub w_rec: Matrix,
    /// Input-current bias.
    pub bias: Vec<f64>,
    pub threshold: f64,
    pub dynamics: Dynamics,
}

/// Membrane state carried between steps.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerState {
    pub u: Vec<f64>,
    pub o_prev: Vec<f64>,
    /// ALIF adaptation variable; unused by the other kinds.
    pub adapt: Vec<f64>,
}

impl LayerState {
    pub fn zeros(width: usize) -> Self {
        Self { u: vec![0.0; width], o_prev: vec![0.0; width], adapt: vec![0.0; width] }
    }
}

/// Intermediate values of one step, kept for analysis and backpropagation.
#[derive(Clone, Debug, Default)]
pub struct StepRecord {
    pub current: Vec<f64>,
    /// Per-neuron decay actually applied this step.
    pub decay: Vec<f64>,
    pub pre_reset: Vec<f64>,
    pub threshold: Vec<f64>,
}

impl StepRecord {
    fn resize(&mut self, width: usize) {
        for v in [&mut self.current, &mut self.decay, &mut self.pre_reset, &mut self.threshold] {
            v.clear();
            v.resize(width, 0.0);
        }
    }
}

impl SpikingLayer {
    pub fn new(inputs: usize, width: usize, cfg: &NeuronConfig, init_scale: f64, rng: &mut impl Rng) -> Self {
        let in_bound = init_scale / (inputs as f64).sqrt();
        let rec_bound = init_scale / (width as f64).sqrt();
        Self {
            w_in: Matrix::uniform(inputs, width, in_bound, rng),
            w_rec: Matrix::uniform(width, width, rec_bound, rng),
            bias: vec![0.0; width],
            threshold: cfg.threshold,
            dynamics: Self::default_dynamics(cfg, width),
        }
    }

    pub fn zeros(inputs: usize, width: usize, cfg: &NeuronConfig) -> Self {
        Self {
            w_in: Matrix::zeros(inputs, width),
            w_rec: Matrix::zeros(width, width),
            bias: vec![0.0; width],
            threshold: cfg.threshold,
            dynamics: Self::default_dynamics(cfg, width),
        }
    }

    fn default_dynamics(cfg: &NeuronConfig, width: usize) -> Dynamics {
        let lif_decay = (-1.0 / cfg.lif_tau).exp();
        match cfg.kind {
            NeuronKind::Gsn => Dynamics::Gsn { gate_bias: vec![0.0; width] },
            NeuronKind::Lif => Dynamics::Lif { decay: lif_decay },
            NeuronKind::Plif => Dynamics::Plif { raw_decay: 0.0 },
            NeuronKind::Alif => {
                Dynamics::Alif { decay: lif_decay, beta: cfg.alif_beta, rho: (-1.0 / cfg.alif_tau).exp() }
            }
        }
    }

    pub fn inputs(&self) -> usize {
        self.w_in.rows()
    }

    pub fn width(&self) -> usize {
        self.w_in.cols()
    }

    pub fn kind(&self) -> NeuronKind {
        self.dynamics.kind()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.width();
        if self.w_rec.rows() != n || self.w_rec.cols() != n || self.bias.len() != n {
            return Err(Error::shape("spiking layer parameter shapes are inconsistent"));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::config("threshold must be positive"));
        }
        match &self.dynamics {
            Dynamics::Gsn { gate_bias } if gate_bias.len() != n => {
                Err(Error::shape("gate bias length differs from layer width"))
            }
            Dynamics::Lif { decay } | Dynamics::Alif { decay, .. } if !(*decay > 0.0 && *decay < 1.0) => {
                Err(Error::config("decay must lie in (0, 1)"))
            }
            _ => Ok(()),
        }
    }

    /// Number of learnable scalars.
    pub fn num_params(&self) -> usize {
        let extra = match &self.dynamics {
            Dynamics::Gsn { gate_bias } => gate_bias.len(),
            Dynamics::Plif { .. } => 1,
            Dynamics::Lif { .. } | Dynamics::Alif { .. } => 0,
        };
        self.w_in.data().len() + self.w_rec.data().len() + self.bias.len() + extra
    }

    /// Visits every learnable tensor in a fixed order.
    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &[f64])) {
        f("w_in", self.w_in.data());
        f("w_rec", self.w_rec.data());
        f("bias", &self.bias);
        match &self.dynamics {
            Dynamics::Gsn { gate_bias } => f("gate_bias", gate_bias),
            Dynamics::Plif { raw_decay } => f("raw_decay", std::slice::from_ref(raw_decay)),
            _ => {}
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("w_in", self.w_in.data_mut());
        f("w_rec", self.w_rec.data_mut());
        f("bias", &mut self.bias);
        match &mut self.dynamics {
            Dynamics::Gsn { gate_bias } => f("gate_bias", gate_bias),
            Dynamics::Plif { raw_decay } => f("raw_decay", std::slice::from_mut(raw_decay)),
            _ => {}
        }
    }

    /// Advances the layer one step. On return `state.o_prev` holds this
    /// step's spikes and `state.u` the post-reset potential.
    pub fn step(&self, state: &mut LayerState, input: &[f64], mode: SpikeMode, rec: &mut StepRecord) -> Result<()> {
        let n = self.width();
        if input.len() != self.inputs() || state.u.len() != n {
            return Err(Error::shape(format!(
                "layer expects {} inputs and {n} state entries, got {} and {}",
                self.inputs(),
                input.len(),
                state.u.len()
            )));
        }
        rec.resize(n);
        let z = &mut rec.current;
        self.w_in.accumulate_rows(input, z);
        self.w_rec.accumulate_rows(&state.o_prev, z);

        match &self.dynamics {
            Dynamics::Gsn { gate_bias } => {
                for i in 0..n {
                    let lambda = decay_gate(z[i] + gate_bias[i]);
                    let cur = z[i] + self.bias[i];
                    rec.decay[i] = lambda;
                    rec.threshold[i] = self.threshold;
                    rec.pre_reset[i] = lambda * state.u[i] + (1.0 - lambda) * cur;
                    z[i] = cur;
                }
            }
            Dynamics::Lif { decay } => self.leaky(*decay, state, rec, None),
            Dynamics::Plif { raw_decay } => self.leaky(sigmoid(*raw_decay), state, rec, None),
            Dynamics::Alif { decay, beta, rho } => self.leaky(*decay, state, rec, Some((*beta, *rho))),
        }

        for i in 0..n {
            let v = rec.pre_reset[i];
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("membrane potential of neuron {i}")));
            }
            let th = rec.threshold[i];
            let o = spike(v, th, mode);
            state.u[i] = v - th * o;
            state.o_prev[i] = o;
        }
        Ok(())
    }

    fn leaky(&self, decay: f64, state: &mut LayerState, rec: &mut StepRecord, adapt: Option<(f64, f64)>) {
        for i in 0..self.width() {
            let cur = rec.current[i] + self.bias[i];
            rec.current[i] = cur;
            rec.decay[i] = decay;
            rec.pre_reset[i] = decay * state.u[i] + cur;
            rec.threshold[i] = match adapt {
                Some((beta, rho)) => {
                    state.adapt[i] = rho * state.adapt[i] + state.o_prev[i];
                    self.threshold + beta * state.adapt[i]
                }
                None => self.threshold,
            };
        }
    }
}

/// Per-step values of a whole sequence, flattened `steps x width`.
#[derive(Clone, Debug, Default)]
pub struct LayerTrace {
    pub steps: usize,
    pub width: usize,
    pub current: Vec<f64>,
    pub decay: Vec<f64>,
    pub pre_reset: Vec<f64>,
    pub threshold: Vec<f64>,
    pub potential: Vec<f64>,
    pub spikes: Vec<f64>,
}

impl LayerTrace {
    pub fn with_capacity(steps: usize, width: usize) -> Self {
        let cap = steps * width;
        Self {
            steps: 0,
            width,
            current: Vec::with_capacity(cap),
            decay: Vec::with_capacity(cap),
            pre_reset: Vec::with_capacity(cap),
            threshold: Vec::with_capacity(cap),
            potential: Vec::with_capacity(cap),
            spikes: Vec::with_capacity(cap),
        }
    }

    pub fn push(&mut self, rec: &StepRecord, state: &LayerState) {
        self.current.extend_from_slice(&rec.current);
        self.decay.extend_from_slice(&rec.decay);
        self.pre_reset.extend_from_slice(&rec.pre_reset);
        self.threshold.extend_from_slice(&rec.threshold);
        self.potential.extend_from_slice(&state.u);
        self.spikes.extend_from_slice(&state.o_prev);
        self.steps += 1;
    }

    pub fn spikes_at(&self, t: usize) -> &[f64] {
        &self.spikes[t * self.width..(t + 1) * self.width]
    }
}

impl SpikingLayer {
    /// Runs a whole sequence from the zero state, recording every step.
    pub fn forward_sequence(&self, inputs: &[f64], steps: usize, mode: SpikeMode) -> Result<LayerTrace> {
        let mut state = LayerState::zeros(self.width());
        let mut rec = StepRecord::default();
        let mut trace = LayerTrace::with_capacity(steps, self.width());
        let d = self.inputs();
        for t in 0..steps {
            self.step(&mut state, &inputs[t * d..(t + 1) * d], mode, &mut rec)?;
            trace.push(&rec, &state);
        }
        Ok(trace)
    }

    /// Backpropagation through time over a trace produced from the zero state.
    ///
    /// `grad_spikes` holds `dL/do(t)` from consumers other than this layer's
    /// own recurrence and reset. Parameter gradients are accumulated into
    /// `grads` (a layer of identical shape); input gradients are accumulated
    /// into `grad_inputs` when given. With `window = Some(k)` the gradient
    /// is not carried from step `t` to `t - 1` when `t` is a multiple of `k`
    /// (truncated BPTT).
    pub fn backward(
        &self,
        inputs: &[f64],
        trace: &LayerTrace,
        grad_spikes: &[f64],
        grads: &mut SpikingLayer,
        mut grad_inputs: Option<&mut [f64]>,
        window: Option<usize>,
    ) {
        let n = self.width();
        let d = self.inputs();
        let zeros = vec![0.0; n];
        let mut carry_u = vec![0.0; n];
        let mut carry_o = vec![0.0; n];
        let mut carry_a = vec![0.0; n];
        let mut gz = vec![0.0; n];
        let mut plif_grad = 0.0;
        let plif_decay = match &self.dynamics {
            Dynamics::Plif { raw_decay } => sigmoid(*raw_decay),
            _ => 0.0,
        };

        for t in (0..trace.steps).rev() {
            let row = t * n..(t + 1) * n;
            let v = &trace.pre_reset[row.clone()];
            let o = &trace.spikes[row.clone()];
            let th = &trace.threshold[row.clone()];
            let cur = &trace.current[row.clone()];
            let lam = &trace.decay[row.clone()];
            let u_prev = if t > 0 { &trace.potential[(t - 1) * n..t * n] } else { &zeros[..] };
            let o_prev = if t > 0 { trace.spikes_at(t - 1) } else { &zeros[..] };
            let g_out = &grad_spikes[row];

            let mut next_carry_o = vec![0.0; n];
            for i in 0..n {
                let go = g_out[i] + carry_o[i];
                let gu = carry_u[i];
                let s = surrogate_grad(v[i], th[i]);
                let gx = s * (go - th[i] * gu);
                let gv = gu + gx;
                if let Dynamics::Alif { beta, rho, .. } = &self.dynamics {
                    let g_th = -gx - gu * o[i];
                    let ga = beta * g_th + carry_a[i];
                    carry_a[i] = rho * ga;
                    next_carry_o[i] += ga;
                }
                match &self.dynamics {
                    Dynamics::Gsn { .. } => {
                        let g_lambda = gv * (u_prev[i] - cur[i]);
                        let gi = gv * (1.0 - lam[i]);
                        let g_pre = g_lambda * lam[i] * (1.0 - lam[i]);
                        grads.bias[i] += gi;
                        if let Dynamics::Gsn { gate_bias } = &mut grads.dynamics {
                            gate_bias[i] += g_pre;
                        }
                        gz[i] = gi + g_pre;
                    }
                    Dynamics::Plif { .. } => {
                        plif_grad += gv * u_prev[i] * plif_decay * (1.0 - plif_decay);
                        grads.bias[i] += gv;
                        gz[i] = gv;
                    }
                    Dynamics::Lif { .. } | Dynamics::Alif { .. } => {
                        grads.bias[i] += gv;
                        gz[i] = gv;
                    }
                }
                carry_u[i] = gv * lam[i];
            }
            grads.w_in.add_outer(&inputs[t * d..(t + 1) * d], &gz);
            grads.w_rec.add_outer(o_prev, &gz);
            if let Some(gi) = grad_inputs.as_deref_mut() {
                self.w_in.accumulate_dots(&gz, &mut gi[t * d..(t + 1) * d]);
            }
            self.w_rec.accumulate_dots(&gz, &mut next_carry_o);
            carry_o = next_carry_o;
            if window.is_some_and(|k| k > 0 && t % k == 0) {
                carry_u.iter_mut().chain(carry_o.iter_mut()).chain(carry_a.iter_mut()).for_each(|c| *c = 0.0);
            }
        }
        if let Dynamics::Plif { raw_decay } = &mut grads.dynamics {
            *raw_decay += plif_grad;
        }
    }

    /// A zero-filled layer of the same shape, used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let dynamics = match &self.dynamics {
            Dynamics::Gsn { gate_bias } => Dynamics::Gsn { gate_bias: vec![0.0; gate_bias.len()] },
            Dynamics::Plif { .. } => Dynamics::Plif { raw_decay: 0.0 },
            other => other.clone(),
        };
        Self {
            w_in: Matrix::zeros(self.inputs(), self.width()),
            w_rec: Matrix::zeros(self.width(), self.width()),
            bias: vec![0.0; self.width()],
            threshold: self.threshold,
            dynamics,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_layer(dynamics: Dynamics, bias: f64) -> SpikingLayer {
        SpikingLayer {
            w_in: Matrix::zeros(1, 1),
            w_rec: Matrix::zeros(1, 1),
            bias: vec![bias],
            threshold: 1.0,
            dynamics,
        }
    }

    fn run(layer: &SpikingLayer, state: &mut LayerState, input: &[f64]) -> StepRecord {
        let mut rec = StepRecord::default();
        layer.step(state, input, SpikeMode::Hard, &mut rec).unwrap();
        rec
    }

    #[test]
    fn surrogate_triangle() {
        assert_eq!(surrogate_grad(1.0, 1.0), 1.0);
        assert_eq!(surrogate_grad(2.0, 1.0), 0.0);
        assert_eq!(surrogate_grad(0.0, 1.0), 0.0);
        assert_eq!(surrogate_grad(1.25, 1.0), 0.75);
        assert_eq!(surrogate_grad(5.0, 1.0), 0.0);
    }

    #[test]
    fn relaxed_spike_derivative_is_surrogate() {
        for &v in &[-0.5, 0.3, 0.9, 1.1, 1.7, 2.5] {
            let h = 1e-6;
            let fd = (relaxed_spike(v + h, 1.0) - relaxed_spike(v - h, 1.0)) / (2.0 * h);
            assert!((fd - surrogate_grad(v, 1.0)).abs() < 1e-8, "v={v}");
        }
    }

    #[test]
    fn zero_lif_stays_silent() {
        let layer = scalar_layer(Dynamics::Lif { decay: 0.5 }, 0.0);
        let mut st = LayerState::zeros(1);
        for _ in 0..100 {
            run(&layer, &mut st, &[0.0]);
            assert_eq!(st.u[0], 0.0);
            assert_eq!(st.o_prev[0], 0.0);
        }
    }

    #[test]
    fn lif_matches_hand_recursion() {
        let layer = scalar_layer(Dynamics::Lif { decay: 0.5 }, 0.8);
        let mut st = LayerState::zeros(1);
        let (mut u, mut seq) = (0.0f64, Vec::new());
        for _ in 0..12 {
            let v = 0.5 * u + 0.8;
            let o = if v >= 1.0 { 1.0 } else { 0.0 };
            u = v - o;
            seq.push((u, o));
        }
        let got: Vec<(f64, f64)> = (0..12)
            .map(|_| {
                run(&layer, &mut st, &[0.0]);
                (st.u[0], st.o_prev[0])
            })
            .collect();
        assert_eq!(got, seq);
        assert!((got[0].0 - 0.8).abs() < 1e-15 && got[0].1 == 0.0);
        assert!((got[1].0 - 0.2).abs() < 1e-15 && got[1].1 == 1.0);
    }

    #[test]
    fn gsn_spec_examples() {
        let layer = scalar_layer(Dynamics::Gsn { gate_bias: vec![0.0] }, 4.0);
        let mut st = LayerState::zeros(1);
        let rec = run(&layer, &mut st, &[0.0]);
        assert_eq!(rec.decay[0], 0.5);
        assert_eq!(rec.pre_reset[0], 2.0);
        assert_eq!(st.o_prev[0], 1.0);
        assert_eq!(st.u[0], 1.0);

        let layer = scalar_layer(Dynamics::Gsn { gate_bias: vec![0.0] }, 0.0);
        let mut st = LayerState { u: vec![0.6], o_prev: vec![0.0], adapt: vec![0.0] };
        run(&layer, &mut st, &[0.0]);
        assert!((st.u[0] - 0.3).abs() < 1e-15);
        assert_eq!(st.o_prev[0], 0.0);
    }

    #[test]
    fn gsn_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (nin, n) = (3, 4);
        let mut layer = SpikingLayer::new(nin, n, &NeuronConfig::default(), 2.0, &mut rng);
        layer.bias = (0..n).map(|_| rng.gen_range(0.0..1.5)).collect();
        layer.dynamics = Dynamics::Gsn { gate_bias: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let inputs: Vec<Vec<f64>> =
            (0..20).map(|_| (0..nin).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect()).collect();

        // scalar reference written from the neuron equations
        let gb = match &layer.dynamics {
            Dynamics::Gsn { gate_bias } => gate_bias.clone(),
            _ => unreachable!(),
        };
        let (mut u, mut o) = (vec![0.0; n], vec![0.0; n]);
        let mut expected = Vec::new();
        for x in &inputs {
            let mut new_o = vec![0.0; n];
            for i in 0..n {
                let mut z = 0.0;
                for j in 0..nin {
                    z += layer.w_in.get(j, i) * x[j];
                }
                for j in 0..n {
                    z += layer.w_rec.get(j, i) * o[j];
                }
                let lam = 1.0 / (1.0 + (-(z + gb[i])).exp());
                let v = lam * u[i] + (1.0 - lam) * (z + layer.bias[i]);
                new_o[i] = if v >= 1.0 { 1.0 } else { 0.0 };
                u[i] = v - new_o[i];
            }
            o = new_o;
            expected.push((u.clone(), o.clone()));
        }

        let mut st = LayerState::zeros(n);
        for (x, (eu, eo)) in inputs.iter().zip(&expected) {
            run(&layer, &mut st, x);
            assert_eq!(&st.o_prev, eo);
            for (a, b) in st.u.iter().zip(eu) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn plif_zero_raw_is_half_decay_lif() {
        let plif = scalar_layer(Dynamics::Plif { raw_decay: 0.0 }, 0.7);
        let lif = scalar_layer(Dynamics::Lif { decay: 0.5 }, 0.7);
        let (mut a, mut b) = (LayerState::zeros(1), LayerState::zeros(1));
        for _ in 0..30 {
            run(&plif, &mut a, &[0.0]);
            run(&lif, &mut b, &[0.0]);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn alif_without_adaptation_is_lif() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = NeuronConfig { kind: NeuronKind::Lif, ..Default::default() };
        let lif = SpikingLayer::new(5, 6, &cfg, 3.0, &mut rng);
        let mut alif = lif.clone();
        let decay = match lif.dynamics {
            Dynamics::Lif { decay } => decay,
            _ => unreachable!(),
        };
        alif.dynamics = Dynamics::Alif { decay, beta: 0.0, rho: 0.9 };
        let (mut a, mut b) = (LayerState::zeros(6), LayerState::zeros(6));
        for _ in 0..50 {
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..2.0)).collect();
            run(&lif, &mut a, &x);
            run(&alif, &mut b, &x);
            assert_eq!(a.u, b.u);
            assert_eq!(a.o_prev, b.o_prev);
        }
    }

    #[test]
    fn alif_intervals_lengthen_under_constant_drive() {
        let layer = scalar_layer(Dynamics::Alif { decay: (-0.5f64).exp(), beta: 1.8, rho: (-1.0 / 200.0f64).exp() }, 3.0);
        let mut st = LayerState::zeros(1);
        let mut spikes = Vec::new();
        for t in 0..2000 {
            run(&layer, &mut st, &[0.0]);
            if st.o_prev[0] == 1.0 {
                spikes.push(t);
            }
            if spikes.len() == 6 {
                break;
            }
        }
        assert_eq!(spikes.len(), 6);
        let isi: Vec<usize> = spikes.windows(2).map(|w| w[1] - w[0]).collect();
        for w in isi.windows(2) {
            assert!(w[1] > w[0], "inter-spike intervals {isi:?}");
        }
    }

    #[test]
    fn non_finite_is_an_error() {
        let layer = scalar_layer(Dynamics::Lif { decay: 0.5 }, f64::INFINITY);
        let mut st = LayerState::zeros(1);
        let mut rec = StepRecord::default();
        assert!(matches!(layer.step(&mut st, &[0.0], SpikeMode::Hard, &mut rec), Err(Error::NonFinite(_))));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let layer = scalar_layer(Dynamics::Lif { decay: 0.5 }, 0.0);
        let mut st = LayerState::zeros(1);
        let mut rec = StepRecord::default();
        assert!(matches!(layer.step(&mut st, &[0.0, 1.0], SpikeMode::Hard, &mut rec), Err(Error::Shape(_))));
    }

    /// Central differences on a relaxed-mode layer against `backward`.
    fn check_layer_gradient(kind: NeuronKind) {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let cfg = NeuronConfig { kind, ..Default::default() };
        let (nin, n, steps) = (3, 4, 12);
        let mut layer = SpikingLayer::new(nin, n, &cfg, 1.5, &mut rng);
        layer.bias = (0..n).map(|_| rng.gen_range(0.2..1.2)).collect();
        if let Dynamics::Plif { raw_decay } = &mut layer.dynamics {
            *raw_decay = 0.3;
        }
        let inputs: Vec<f64> = (0..steps * nin).map(|_| rng.gen_range(0.0..1.5)).collect();
        let weights: Vec<f64> = (0..steps * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |l: &SpikingLayer| -> f64 {
            let tr = l.forward_sequence(&inputs, steps, SpikeMode::Relaxed).unwrap();
            tr.spikes.iter().zip(&weights).map(|(o, w)| o * w).sum::<f64>()
        };
        let tr = layer.forward_sequence(&inputs, steps, SpikeMode::Relaxed).unwrap();
        let mut grads = layer.zeros_like();
        let mut gin = vec![0.0; inputs.len()];
        layer.backward(&inputs, &tr, &weights, &mut grads, Some(&mut gin), None);

        let mut analytic = Vec::new();
        grads.visit_params(&mut |_, g| analytic.extend_from_slice(g));
        let mut idx = 0;
        let total = layer.num_params();
        let eps = 1e-6;
        let mut worst: f64 = 0.0;
        for p in 0..total {
            let perturb = |delta: f64| {
                let mut l = layer.clone();
                let mut k = 0;
                l.visit_params_mut(&mut |_, vals| {
                    for v in vals.iter_mut() {
                        if k == p {
                            *v += delta;
                        }
                        k += 1;
                    }
                });
                loss(&l)
            };
            let fd = (perturb(eps) - perturb(-eps)) / (2.0 * eps);
            let a = analytic[idx];
            idx += 1;
            let err = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-6);
            worst = worst.max(err);
        }
        assert!(worst < 1e-4, "{kind:?}: worst relative error {worst}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        for kind in [NeuronKind::Gsn, NeuronKind::Lif, NeuronKind::Plif, NeuronKind::Alif] {
            check_layer_gradient(kind);
        }
    }

    #[test]
    fn truncation_window() {
        let layer = scalar_layer(Dynamics::Lif { decay: 0.5 }, 0.7);
        let steps = 9;
        let inputs = vec![0.0; steps];
        let tr = layer.forward_sequence(&inputs, steps, SpikeMode::Relaxed).unwrap();
        let g: Vec<f64> = (0..steps).map(|t| 0.1 * (t as f64 + 1.0)).collect();
        let bias_grad = |window| {
            let mut grads = layer.zeros_like();
            layer.backward(&inputs, &tr, &g, &mut grads, None, window);
            grads.bias[0]
        };
        // no carries at all: only the direct path through each step's spike
        let local: f64 = (0..steps).map(|t| surrogate_grad(tr.pre_reset[t], 1.0) * g[t]).sum();
        assert!((bias_grad(Some(1)) - local).abs() < 1e-12);
        assert_eq!(bias_grad(Some(steps)), bias_grad(None));
        assert_ne!(bias_grad(Some(3)), bias_grad(None));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #[test]
            fn gsn_invariants(seed in 0u64..10_000, scale in 0.1f64..20.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut layer = SpikingLayer::new(4, 5, &NeuronConfig::default(), scale, &mut rng);
                layer.bias = (0..5).map(|_| rng.gen_range(-scale..scale)).collect();
                layer.dynamics = Dynamics::Gsn { gate_bias: (0..5).map(|_| rng.gen_range(-scale..scale)).collect() };
                let mut st = LayerState::zeros(5);
                let mut rec = StepRecord::default();
                for _ in 0..20 {
                    let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-scale..scale)).collect();
                    layer.step(&mut st, &x, SpikeMode::Hard, &mut rec).unwrap();
                    for i in 0..5 {
                        prop_assert!(rec.decay[i] > 0.0 && rec.decay[i] < 1.0);
                        prop_assert!(st.o_prev[i] == 0.0 || st.o_prev[i] == 1.0);
                        prop_assert_eq!(st.u[i], rec.pre_reset[i] - layer.threshold * st.o_prev[i]);
                    }
                }
            }

            #[test]
            fn gsn_is_deterministic(seed in 0u64..10_000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let layer = SpikingLayer::new(3, 4, &NeuronConfig::default(), 3.0, &mut rng);
                let x: Vec<f64> = (0..30).map(|_| rng.gen_range(0.0..2.0)).collect();
                let a = layer.forward_sequence(&x, 10, SpikeMode::Hard).unwrap();
                let b = layer.forward_sequence(&x, 10, SpikeMode::Hard).unwrap();
                prop_assert_eq!(a.potential, b.potential);
                prop_assert_eq!(a.spikes, b.spikes);
            }
        }
    }
}
