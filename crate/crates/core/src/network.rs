//! Stacks of spiking layers topped by a non-spiking leaky readout.

use rand::Rng;

use crate::error::{Error, Result};
use crate::neurons::{LayerState, LayerTrace, NeuronConfig, SpikeMode, SpikingLayer, StepRecord};
use crate::tensor::Matrix;

/// Non-spiking readout: `y(t) = m(t) + c` with the leaky synaptic
/// integrator `m(t) = beta m(t-1) + (1 - beta) W x(t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Readout {
    /// `inputs x outputs`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub decay: f64,
}

impl Readout {
    pub fn new(inputs: usize, outputs: usize, decay: f64, init_scale: f64, rng: &mut impl Rng) -> Self {
        Self {
            weights: Matrix::uniform(inputs, outputs, init_scale / (inputs as f64).sqrt(), rng),
            bias: vec![0.0; outputs],
            decay,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn num_params(&self) -> usize {
        self.weights.data().len() + self.bias.len()
    }

    fn step(&self, m: &mut [f64], x: &[f64], out: &mut [f64]) {
        let mut drive = vec![0.0; self.outputs()];
        self.weights.accumulate_rows(x, &mut drive);
        for ((mi, &d), (o, &c)) in m.iter_mut().zip(&drive).zip(out.iter_mut().zip(&self.bias)) {
            *mi = self.decay * *mi + (1.0 - self.decay) * d;
            *o = *mi + c;
        }
    }

    fn zeros_like(&self) -> Self {
        Self { weights: Matrix::zeros(self.inputs(), self.outputs()), bias: vec![0.0; self.outputs()], decay: self.decay }
    }
}

/// Streaming state of a [`SpikingStack`].
#[derive(Clone, Debug, PartialEq)]
pub struct StackState {
    pub layers: Vec<LayerState>,
    pub readout: Vec<f64>,
}

/// Recorded forward pass of a [`SpikingStack`] over a sequence.
#[derive(Clone, Debug, Default)]
pub struct StackTrace {
    pub steps: usize,
    pub layers: Vec<LayerTrace>,
    /// Readout output, `steps x outputs`.
    pub output: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpikingStack {
    pub layers: Vec<SpikingLayer>,
    pub readout: Readout,
}

impl SpikingStack {
    pub fn new(
        inputs: usize,
        widths: &[usize],
        outputs: usize,
        neuron: &NeuronConfig,
        init: &InitConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = inputs;
        for (l, &w) in widths.iter().enumerate() {
            let scale = if l == 0 { init.input_scale } else { init.hidden_scale };
            let mut layer = SpikingLayer::new(prev, w, neuron, scale, rng);
            layer.bias.iter_mut().for_each(|b| *b = init.current_bias);
            layers.push(layer);
            prev = w;
        }
        let readout = Readout::new(prev, outputs, init.readout_decay, init.readout_scale, rng);
        Self { layers, readout }
    }

    pub fn inputs(&self) -> usize {
        self.layers.first().map(|l| l.inputs()).unwrap_or_else(|| self.readout.inputs())
    }

    pub fn outputs(&self) -> usize {
        self.readout.outputs()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.width()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.num_params()).sum::<usize>() + self.readout.num_params()
    }

    /// Outgoing synapse count of each spiking layer: next layer (or readout)
    /// width plus its own recurrent fan-out.
    pub fn fan_outs(&self) -> Vec<usize> {
        (0..self.layers.len())
            .map(|l| {
                let next = self.layers.get(l + 1).map(|n| n.width()).unwrap_or(self.readout.outputs());
                next + self.layers[l].width()
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev = self.inputs();
        for l in &self.layers {
            l.validate()?;
            if l.inputs() != prev {
                return Err(Error::shape("stacked layer widths do not chain"));
            }
            prev = l.width();
        }
        if self.readout.inputs() != prev || self.readout.bias.len() != self.readout.outputs() {
            return Err(Error::shape("readout shape does not match the last layer"));
        }
        Ok(())
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &[f64])) {
        for (l, layer) in self.layers.iter().enumerate() {
            layer.visit_params(&mut |name, v| f(&format!("layer{l}.{name}"), v));
        }
        f("readout.weights", self.readout.weights.data());
        f("readout.bias", &self.readout.bias);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_params_mut(&mut |name, v| f(&format!("layer{l}.{name}"), v));
        }
        f("readout.weights", self.readout.weights.data_mut());
        f("readout.bias", &mut self.readout.bias);
    }

    /// Names and shapes of every learnable tensor, in visiting order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            layer.visit_params(&mut |name, v| {
                let shape = match name {
                    "w_in" => vec![layer.inputs(), layer.width()],
                    "w_rec" => vec![layer.width(), layer.width()],
                    _ => vec![v.len()],
                };
                out.push((format!("layer{l}.{name}"), shape));
            });
        }
        out.push(("readout.weights".into(), vec![self.readout.inputs(), self.readout.outputs()]));
        out.push(("readout.bias".into(), vec![self.readout.outputs()]));
        out
    }

    pub fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(|l| l.zeros_like()).collect(), readout: self.readout.zeros_like() }
    }

    pub fn initial_state(&self) -> StackState {
        StackState {
            layers: self.layers.iter().map(|l| LayerState::zeros(l.width())).collect(),
            readout: vec![0.0; self.outputs()],
        }
    }

    /// Advances one frame, writing the readout into `out`. `recs` receives the
    /// per-layer step records.
    pub fn step(
        &self,
        state: &mut StackState,
        input: &[f64],
        mode: SpikeMode,
        recs: &mut Vec<StepRecord>,
        out: &mut [f64],
    ) -> Result<()> {
        recs.resize_with(self.layers.len(), StepRecord::default);
        let (first, rest) = match self.layers.split_first() {
            Some(split) => split,
            None => {
                self.readout.step(&mut state.readout, input, out);
                return Ok(());
            }
        };
        first.step(&mut state.layers[0], input, mode, &mut recs[0])?;
        for (l, layer) in rest.iter().enumerate() {
            let (done, todo) = state.layers.split_at_mut(l + 1);
            layer.step(&mut todo[0], &done[l].o_prev, mode, &mut recs[l + 1])?;
        }
        let last = &state.layers[self.layers.len() - 1].o_prev;
        self.readout.step(&mut state.readout, last, out);
        Ok(())
    }

    pub fn forward_sequence(&self, inputs: &[f64], steps: usize, mode: SpikeMode) -> Result<StackTrace> {
        let d = self.inputs();
        if inputs.len() != steps * d {
            return Err(Error::shape(format!("expected {steps}x{d} inputs, got {}", inputs.len())));
        }
        let mut state = self.initial_state();
        let mut recs = Vec::new();
        let mut traces: Vec<LayerTrace> =
            self.layers.iter().map(|l| LayerTrace::with_capacity(steps, l.width())).collect();
        let k = self.outputs();
        let mut output = vec![0.0; steps * k];
        for t in 0..steps {
            self.step(&mut state, &inputs[t * d..(t + 1) * d], mode, &mut recs, &mut output[t * k..(t + 1) * k])?;
            for ((tr, rec), st) in traces.iter_mut().zip(&recs).zip(&state.layers) {
                tr.push(rec, st);
            }
        }
        Ok(StackTrace { steps, layers: traces, output })
    }

    /// Backpropagation through time.
    ///
    /// `synops_weight` adds the gradient of `weight * sum_t sum_i o_i(t) * fan_out`
    /// for every spiking layer. `window` truncates the temporal gradient as in
    /// [`SpikingLayer::backward`].
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        inputs: &[f64],
        trace: &StackTrace,
        grad_output: &[f64],
        synops_weight: f64,
        grads: &mut SpikingStack,
        grad_inputs: Option<&mut [f64]>,
        window: Option<usize>,
    ) {
        let steps = trace.steps;
        let k = self.outputs();
        let ro = &self.readout;
        let readout_in: &[f64] = match trace.layers.last() {
            Some(t) => &t.spikes,
            None => inputs,
        };
        let ri = ro.inputs();
        let mut g_in = vec![0.0; steps * ri];
        let mut carry = vec![0.0; k];
        let mut gm = vec![0.0; k];
        let scale = 1.0 - ro.decay;
        for t in (0..steps).rev() {
            let gy = &grad_output[t * k..(t + 1) * k];
            for j in 0..k {
                grads.readout.bias[j] += gy[j];
                gm[j] = gy[j] + carry[j];
                carry[j] = ro.decay * gm[j];
            }
            let gd: Vec<f64> = gm.iter().map(|g| g * scale).collect();
            grads.readout.weights.add_outer(&readout_in[t * ri..(t + 1) * ri], &gd);
            ro.weights.accumulate_dots(&gd, &mut g_in[t * ri..(t + 1) * ri]);
            if window.is_some_and(|w| w > 0 && t % w == 0) {
                carry.iter_mut().for_each(|c| *c = 0.0);
            }
        }

        if self.layers.is_empty() {
            if let Some(gi) = grad_inputs {
                for (a, b) in gi.iter_mut().zip(&g_in) {
                    *a += b;
                }
            }
            return;
        }

        let fan_outs = self.fan_outs();
        let mut grad_spikes = g_in;
        let mut grad_inputs = grad_inputs;
        for l in (0..self.layers.len()).rev() {
            if synops_weight != 0.0 {
                let add = synops_weight * fan_outs[l] as f64;
                for g in grad_spikes.iter_mut() {
                    *g += add;
                }
            }
            let layer = &self.layers[l];
            let layer_in: &[f64] = if l == 0 { inputs } else { &trace.layers[l - 1].spikes };
            if l == 0 {
                layer.backward(layer_in, &trace.layers[0], &grad_spikes, &mut grads.layers[0], grad_inputs.as_deref_mut(), window);
            } else {
                let mut below = vec![0.0; steps * layer.inputs()];
                layer.backward(layer_in, &trace.layers[l], &grad_spikes, &mut grads.layers[l], Some(&mut below), window);
                grad_spikes = below;
            }
        }
    }
}

/// Weight initialization scales (uniform, divided by the square root of the
/// fan-in) and the readout leak.
///
/// The input layer sees normalized magnitudes that reach tens at onsets, so it
/// starts an order of magnitude smaller than the hidden layers; this keeps
/// untrained decay gates near 0.5. The current bias places neurons just below
/// threshold so gradients flow from the first step.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitConfig {
    pub input_scale: f64,
    pub hidden_scale: f64,
    pub readout_scale: f64,
    pub readout_decay: f64,
    /// Initial input-current bias of every spiking neuron. The decay-gate
    /// bias always starts at zero.
    pub current_bias: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self { input_scale: 0.01, hidden_scale: 0.1, readout_scale: 0.1, readout_decay: 0.5, current_bias: 0.9 }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.readout_decay) {
            return Err(Error::config("readout_decay must lie in [0, 1)"));
        }
        if [self.input_scale, self.hidden_scale, self.readout_scale].iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::config("init scales must be non-negative"));
        }
        if !self.current_bias.is_finite() {
            return Err(Error::config("current_bias must be finite"));
        }
        Ok(())
    }
}
