//! The full enhancement network: full-band stack, per-partition sub-band
//! stacks and multi-frame filtering, evaluated offline, frame by frame, or
//! over a whole utterance with recorded traces for training.

use std::collections::VecDeque;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::AudioBuffer;
use crate::config::{ModelConfig, NormConfig, NormMode};
use crate::deepfilter::{filter_group_frame, filter_group_frame_backward, filter_group_history, identity_logits};
use crate::error::{Error, Result};
use crate::network::{SpikingStack, StackState, StackTrace};
use crate::neurons::{NeuronKind, SpikeMode, StepRecord};
use crate::profiler::{ActivityAccumulator, DenseTopology, LayerTopology, Topology};
use crate::spectral::{ComplexSpectrogram, Stft};
use crate::subband::{build_subband_input, embedding_slot, SubbandGroup};

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub fullband: SpikingStack,
    /// One stack per partition, shared by all groups of that partition.
    pub subbands: Vec<SpikingStack>,
}

impl Model {
    /// Randomly initialized model.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = config.stft.num_bins();
        let scheme = &config.partition;
        let fullband =
            SpikingStack::new(f, &config.fullband.layer_sizes, f, &config.neuron, &config.init, &mut rng);
        let subbands = (0..scheme.groupings.len())
            .map(|k| {
                SpikingStack::new(
                    scheme.input_len(k),
                    &config.subband.layer_sizes[k],
                    scheme.logits_len(k),
                    &config.neuron,
                    &config.init,
                    &mut rng,
                )
            })
            .collect();
        let mut model = Self { config, fullband, subbands };
        if model.config.identity_filter_init {
            model.set_identity_filter_bias();
        }
        Ok(model)
    }

    /// Model whose filters are exactly the pass-through filter: all weights
    /// zero and readout biases at `w_0 = 1`.
    pub fn identity(config: ModelConfig) -> Result<Self> {
        let mut model = Self::new(config, 0)?.zeros_like();
        model.set_identity_filter_bias();
        Ok(model)
    }

    fn set_identity_filter_bias(&mut self) {
        let scheme = &self.config.partition;
        for (k, sb) in self.subbands.iter_mut().enumerate() {
            sb.readout.bias = identity_logits(scheme.groupings[k], scheme.filter_orders[k]);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let scheme = &self.config.partition;
        let f = self.config.stft.num_bins();
        self.fullband.validate()?;
        if self.fullband.inputs() != f
            || self.fullband.outputs() != f
            || self.fullband.widths() != self.config.fullband.layer_sizes
        {
            return Err(Error::shape("fullband stack does not match the configuration"));
        }
        if self.subbands.len() != scheme.groupings.len() {
            return Err(Error::shape("one subband stack per partition expected"));
        }
        for (k, sb) in self.subbands.iter().enumerate() {
            sb.validate()?;
            if sb.inputs() != scheme.input_len(k)
                || sb.outputs() != scheme.logits_len(k)
                || sb.widths() != self.config.subband.layer_sizes[k]
            {
                return Err(Error::shape(format!("subband stack {k} does not match the configuration")));
            }
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            fullband: self.fullband.zeros_like(),
            subbands: self.subbands.iter().map(|s| s.zeros_like()).collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.fullband.num_params() + self.subbands.iter().map(|s| s.num_params()).sum::<usize>()
    }

    /// Trainable parameters per module.
    pub fn param_counts(&self) -> Vec<(String, usize)> {
        let mut out = vec![("fullband".to_string(), self.fullband.num_params())];
        for (k, s) in self.subbands.iter().enumerate() {
            out.push((format!("subband{k}"), s.num_params()));
        }
        out
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &[f64])) {
        self.fullband.visit_params(&mut |n, v| f(&format!("fullband.{n}"), v));
        for (k, s) in self.subbands.iter().enumerate() {
            s.visit_params(&mut |n, v| f(&format!("subband{k}.{n}"), v));
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.fullband.visit_params_mut(&mut |n, v| f(&format!("fullband.{n}"), v));
        for (k, s) in self.subbands.iter_mut().enumerate() {
            s.visit_params_mut(&mut |n, v| f(&format!("subband{k}.{n}"), v));
        }
    }

    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out: Vec<_> =
            self.fullband.tensor_shapes().into_iter().map(|(n, s)| (format!("fullband.{n}"), s)).collect();
        for (k, sb) in self.subbands.iter().enumerate() {
            out.extend(sb.tensor_shapes().into_iter().map(|(n, s)| (format!("subband{k}.{n}"), s)));
        }
        out
    }

    pub fn groups(&self) -> Vec<SubbandGroup> {
        self.config.partition.groups()
    }

    /// Spiking layers in profiler order: full-band layers, then each
    /// partition's layers with one instance per group.
    pub fn topology(&self) -> Topology {
        let scheme = &self.config.partition;
        let mut layers = Vec::new();
        let mut dense = Vec::new();
        let mut add_stack = |name: &str, stack: &SpikingStack, instances: usize| {
            let fan = stack.fan_outs();
            for (l, layer) in stack.layers.iter().enumerate() {
                layers.push(LayerTopology {
                    name: format!("{name}.layer{l}"),
                    neurons: layer.width(),
                    fan_out: fan[l] - layer.width(),
                    has_recurrence: true,
                    instances,
                });
            }
            dense.push(DenseTopology {
                name: format!("{name}.input"),
                inputs: stack.inputs(),
                outputs: stack.layers[0].width(),
                instances,
                is_readout: false,
            });
            dense.push(DenseTopology {
                name: format!("{name}.readout"),
                inputs: stack.readout.inputs(),
                outputs: stack.outputs(),
                instances,
                is_readout: true,
            });
        };
        add_stack("fullband", &self.fullband, 1);
        for (k, (p, sb)) in scheme.partitions().iter().zip(&self.subbands).enumerate() {
            add_stack(&format!("subband{k}"), sb, p.num_groups());
        }
        Topology { layers, dense }
    }

    fn gated_layers(&self) -> Vec<bool> {
        std::iter::once(&self.fullband)
            .chain(&self.subbands)
            .flat_map(|s| s.layers.iter().map(|l| l.kind() == NeuronKind::Gsn))
            .collect()
    }

    pub fn new_accumulator(&self) -> ActivityAccumulator {
        ActivityAccumulator::new(&self.topology(), self.gated_layers())
    }

    pub fn total_spiking_neurons(&self) -> usize {
        self.topology().layers.iter().map(|l| l.total_neurons()).sum()
    }

    pub fn initial_state(&self) -> FrameState {
        FrameState {
            norm: InputNormalizer::new(self.config.normalization),
            fullband: self.fullband.initial_state(),
            groups: self.groups().iter().map(|g| self.subbands[g.partition].initial_state()).collect(),
            history: VecDeque::new(),
            scratch: Scratch::default(),
        }
    }

    /// Enhances one analysis frame (`F + 1` bins, DC first), advancing the
    /// network state. The DC bin is passed through.
    pub fn process_frame(
        &self,
        st: &mut FrameState,
        frame: &[Complex64],
        mode: SpikeMode,
        mut acc: Option<&mut ActivityAccumulator>,
    ) -> Result<Vec<Complex64>> {
        let f = self.config.stft.num_bins();
        if frame.len() != f + 1 {
            return Err(Error::shape(format!("frame has {} bins, expected {}", frame.len(), f + 1)));
        }
        let scheme = &self.config.partition;
        let sc = &mut st.scratch;
        sc.mags.clear();
        sc.mags.extend(frame[1..].iter().map(|c| c.norm()));
        sc.inputs.resize(f, 0.0);
        st.norm.apply(&sc.mags, &mut sc.inputs);
        sc.emb.resize(f, 0.0);
        self.fullband.step(&mut st.fullband, &sc.inputs, mode, &mut sc.recs, &mut sc.emb)?;
        if let Some(a) = acc.as_deref_mut() {
            for (l, (ls, rec)) in st.fullband.layers.iter().zip(&sc.recs).enumerate() {
                a.record_spikes(l, 0, &ls.o_prev);
                a.record_decays(l, &rec.decay);
            }
        }

        st.history.push_front(frame[1..].to_vec());
        st.history.truncate(scheme.max_order() + 1);
        let history: Vec<&[Complex64]> = st.history.iter().map(|v| v.as_slice()).collect();

        let mut out = frame.to_vec();
        let layer_base = self.layer_bases();
        let mut index_in_partition = vec![0usize; self.subbands.len()];
        for (gi, group) in scheme.groups().iter().enumerate() {
            let k = group.partition;
            let stack = &self.subbands[k];
            sc.feat.resize(scheme.input_len(k), 0.0);
            build_subband_input(&sc.inputs, &sc.emb, scheme.context, group, &mut sc.feat);
            sc.logits.resize(scheme.logits_len(k), 0.0);
            stack.step(&mut st.groups[gi], &sc.feat, mode, &mut sc.recs, &mut sc.logits)?;
            if let Some(a) = acc.as_deref_mut() {
                let inst = index_in_partition[k];
                for (l, (ls, rec)) in st.groups[gi].layers.iter().zip(&sc.recs).enumerate() {
                    a.record_spikes(layer_base[k] + l, inst, &ls.o_prev);
                    a.record_decays(layer_base[k] + l, &rec.decay);
                }
            }
            index_in_partition[k] += 1;
            let order = scheme.filter_orders[k];
            filter_group_history(&history, group, order, &sc.logits, &mut out[1 + group.start..1 + group.start + group.width]);
        }
        if let Some(a) = acc {
            a.end_step();
        }
        Ok(out)
    }

    /// Profiler layer index of the first layer of each partition's stack.
    fn layer_bases(&self) -> Vec<usize> {
        let mut base = self.fullband.layers.len();
        self.subbands
            .iter()
            .map(|s| {
                let b = base;
                base += s.layers.len();
                b
            })
            .collect()
    }

    /// Enhances a whole spectrogram with the frame-by-frame path.
    pub fn enhance_spectrogram(
        &self,
        noisy: &ComplexSpectrogram,
        mut acc: Option<&mut ActivityAccumulator>,
    ) -> Result<ComplexSpectrogram> {
        let mut st = self.initial_state();
        if self.config.normalization.mode == NormMode::UtteranceMean {
            st.norm.fix_mean(utterance_mean(noisy));
        }
        let mut out = ComplexSpectrogram::zeros(0, noisy.num_bins());
        for n in 0..noisy.num_frames() {
            let frame = self.process_frame(&mut st, &noisy.full_frame(n), SpikeMode::Hard, acc.as_deref_mut())?;
            out.push_frame(&frame);
        }
        if let Some(a) = acc {
            a.end_sample(self.total_spiking_neurons());
        }
        Ok(out)
    }

    /// Offline enhancement. The output has the input's length; samples past
    /// the last complete frame are zero.
    pub fn enhance(&self, audio: &AudioBuffer, acc: Option<&mut ActivityAccumulator>) -> Result<AudioBuffer> {
        let stft = Stft::new(self.config.stft)?;
        let noisy = stft.stft(audio)?;
        let enhanced = self.enhance_spectrogram(&noisy, acc)?;
        let mut out = stft.istft(&enhanced)?.into_samples();
        out.resize(audio.len(), 0.0);
        AudioBuffer::new(out)
    }

    /// Whole-utterance forward pass keeping every trace for backpropagation.
    pub fn forward(&self, noisy: &ComplexSpectrogram, mode: SpikeMode) -> Result<ForwardCache> {
        let f = self.config.stft.num_bins();
        if noisy.num_bins() != f {
            return Err(Error::shape(format!("spectrogram has {} bins, model expects {f}", noisy.num_bins())));
        }
        let t = noisy.num_frames();
        let mut norm = InputNormalizer::new(self.config.normalization);
        if self.config.normalization.mode == NormMode::UtteranceMean {
            norm.fix_mean(utterance_mean(noisy));
        }
        let mut inputs = vec![0.0; t * f];
        let mut mags = vec![0.0; f];
        for n in 0..t {
            for (m, c) in mags.iter_mut().zip(noisy.frame(n)) {
                *m = c.norm();
            }
            norm.apply(&mags, &mut inputs[n * f..(n + 1) * f]);
        }
        let fullband = self.fullband.forward_sequence(&inputs, t, mode)?;
        let emb = &fullband.output;

        let scheme = &self.config.partition;
        let groups = scheme.groups();
        let mut enhanced = ComplexSpectrogram::from_parts(
            f,
            noisy.dc().to_vec(),
            vec![Complex64::new(0.0, 0.0); t * f],
        )?;
        let mut sub_inputs = Vec::with_capacity(groups.len());
        let mut subband = Vec::with_capacity(groups.len());
        for group in &groups {
            let k = group.partition;
            let d = scheme.input_len(k);
            let mut feats = vec![0.0; t * d];
            for n in 0..t {
                build_subband_input(
                    &inputs[n * f..(n + 1) * f],
                    &emb[n * f..(n + 1) * f],
                    scheme.context,
                    group,
                    &mut feats[n * d..(n + 1) * d],
                );
            }
            let trace = self.subbands[k].forward_sequence(&feats, t, mode)?;
            let len = scheme.logits_len(k);
            for n in 0..t {
                let logits = &trace.output[n * len..(n + 1) * len];
                let row = &mut enhanced.frame_mut(n)[group.bins()];
                filter_group_frame(noisy, group, scheme.filter_orders[k], n, logits, row);
            }
            sub_inputs.push(feats);
            subband.push(trace);
        }
        Ok(ForwardCache { inputs, fullband, sub_inputs, subband, enhanced })
    }

    /// Smoothed SynOPs of a recorded forward pass (exact for hard spikes).
    pub fn synops_penalty(&self, cache: &ForwardCache) -> f64 {
        let stack_sum = |stack: &SpikingStack, trace: &StackTrace| -> f64 {
            stack
                .fan_outs()
                .iter()
                .zip(&trace.layers)
                .map(|(&fan, l)| l.spikes.iter().sum::<f64>() * fan as f64)
                .sum()
        };
        let mut total = stack_sum(&self.fullband, &cache.fullband);
        for (group, trace) in self.groups().iter().zip(&cache.subband) {
            total += stack_sum(&self.subbands[group.partition], trace);
        }
        total
    }

    /// Backpropagates `grad_enhanced` (`dL/d re + i dL/d im` of every modeled
    /// bin of the enhanced spectrogram) and the SynOPs penalty into `grads`.
    /// `window` is the truncated-BPTT length in frames; `None` runs over the
    /// whole utterance.
    pub fn backward(
        &self,
        noisy: &ComplexSpectrogram,
        cache: &ForwardCache,
        grad_enhanced: &[Complex64],
        synops_weight: f64,
        grads: &mut Model,
        window: Option<usize>,
    ) {
        let f = self.config.stft.num_bins();
        let t = noisy.num_frames();
        let scheme = &self.config.partition;
        let mut grad_emb = vec![0.0; t * f];
        for (gi, group) in scheme.groups().iter().enumerate() {
            let k = group.partition;
            let len = scheme.logits_len(k);
            let d = scheme.input_len(k);
            let mut grad_logits = vec![0.0; t * len];
            for n in 0..t {
                filter_group_frame_backward(
                    noisy,
                    group,
                    scheme.filter_orders[k],
                    n,
                    &grad_enhanced[n * f + group.start..n * f + group.start + group.width],
                    &mut grad_logits[n * len..(n + 1) * len],
                );
            }
            let mut grad_feats = vec![0.0; t * d];
            self.subbands[k].backward(
                &cache.sub_inputs[gi],
                &cache.subband[gi],
                &grad_logits,
                synops_weight,
                &mut grads.subbands[k],
                Some(&mut grad_feats),
                window,
            );
            for n in 0..t {
                for m in 0..group.width {
                    grad_emb[n * f + group.start + m] += grad_feats[n * d + embedding_slot(scheme.context, group.width, m)];
                }
            }
        }
        self.fullband.backward(&cache.inputs, &cache.fullband, &grad_emb, synops_weight, &mut grads.fullband, None, window);
    }
}

fn utterance_mean(spec: &ComplexSpectrogram) -> f64 {
    let n = spec.modeled().len().max(1) as f64;
    spec.modeled().iter().map(|c| c.norm()).sum::<f64>() / n
}

/// Divides magnitudes by a running (or fixed) mean magnitude.
#[derive(Clone, Debug)]
pub struct InputNormalizer {
    cfg: NormConfig,
    mean: Option<f64>,
    fixed: bool,
}

impl InputNormalizer {
    pub fn new(cfg: NormConfig) -> Self {
        Self { cfg, mean: None, fixed: false }
    }

    pub fn fix_mean(&mut self, mean: f64) {
        self.mean = Some(mean);
        self.fixed = true;
    }

    pub fn apply(&mut self, mags: &[f64], out: &mut [f64]) {
        if !self.fixed {
            let frame_mean = mags.iter().sum::<f64>() / mags.len().max(1) as f64;
            let a = self.cfg.ema_decay;
            self.mean = Some(match self.mean {
                None => frame_mean,
                Some(m) => a * m + (1.0 - a) * frame_mean,
            });
        }
        let scale = 1.0 / (self.mean.unwrap_or(0.0) + self.cfg.floor);
        for (o, m) in out.iter_mut().zip(mags) {
            *o = m * scale;
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Scratch {
    mags: Vec<f64>,
    inputs: Vec<f64>,
    emb: Vec<f64>,
    feat: Vec<f64>,
    logits: Vec<f64>,
    recs: Vec<StepRecord>,
}

/// Per-stream state of the frame-by-frame path.
#[derive(Clone, Debug)]
pub struct FrameState {
    norm: InputNormalizer,
    fullband: StackState,
    groups: Vec<StackState>,
    /// Modeled bins of the most recent frames, newest first.
    history: VecDeque<Vec<Complex64>>,
    scratch: Scratch,
}

/// Traces of a whole-utterance forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Normalized magnitudes, `T x F`.
    pub inputs: Vec<f64>,
    pub fullband: StackTrace,
    pub sub_inputs: Vec<Vec<f64>>,
    /// One trace per group, in `PartitionScheme::groups` order.
    pub subband: Vec<StackTrace>,
    pub enhanced: ComplexSpectrogram,
}

/// Hop-by-hop enhancement with an internal one-window input buffer and
/// overlap-add output buffer.
pub struct StreamingEnhancer<'a> {
    model: &'a Model,
    stft: Stft,
    state: FrameState,
    pending: Vec<f64>,
    ola: Vec<f64>,
    frames: usize,
    record: Option<ComplexSpectrogram>,
    acc: Option<ActivityAccumulator>,
}

impl<'a> StreamingEnhancer<'a> {
    pub fn new(model: &'a Model) -> Result<Self> {
        if model.config.normalization.mode != NormMode::Ema {
            return Err(Error::config("streaming requires the causal `ema` normalization mode"));
        }
        let stft = Stft::new(model.config.stft)?;
        let w = model.config.stft.window_len;
        Ok(Self {
            model,
            stft,
            state: model.initial_state(),
            pending: Vec::with_capacity(2 * w),
            ola: vec![0.0; w],
            frames: 0,
            record: None,
            acc: None,
        })
    }

    /// Keeps a copy of every enhanced frame.
    pub fn record_spectrogram(mut self) -> Self {
        self.record = Some(ComplexSpectrogram::zeros(0, self.model.config.stft.num_bins()));
        self
    }

    pub fn with_profiling(mut self) -> Self {
        self.acc = Some(self.model.new_accumulator());
        self
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Feeds samples (any chunk size) and returns the output samples that
    /// became final.
    pub fn push(&mut self, chunk: &[f64]) -> Result<Vec<f64>> {
        let cfg = self.model.config.stft;
        let (w, h) = (cfg.window_len, cfg.hop_len);
        self.pending.extend_from_slice(chunk);
        let mut out = Vec::new();
        while self.pending.len() >= w {
            let full = self.stft.analyze_frame(&self.pending[..w]);
            let enhanced = self.model.process_frame(&mut self.state, &full, SpikeMode::Hard, self.acc.as_mut())?;
            if let Some(r) = self.record.as_mut() {
                r.push_frame(&enhanced);
            }
            let seg = self.stft.synthesize_frame(&enhanced);
            for (o, s) in self.ola.iter_mut().zip(seg) {
                *o += s;
            }
            out.extend_from_slice(&self.ola[..h]);
            self.ola.drain(..h);
            self.ola.resize(w, 0.0);
            self.pending.drain(..h);
            self.frames += 1;
        }
        Ok(out)
    }

    /// Flushes the overlap-add tail. Returns the remaining output, the
    /// recorded spectrogram (if requested) and the activity counters.
    pub fn finish(mut self) -> (Vec<f64>, Option<ComplexSpectrogram>, Option<ActivityAccumulator>) {
        let cfg = self.model.config.stft;
        let tail = if self.frames > 0 { self.ola[..cfg.window_len - cfg.hop_len].to_vec() } else { Vec::new() };
        if let Some(a) = self.acc.as_mut() {
            a.end_sample(self.model.total_spiking_neurons());
        }
        (tail, self.record, self.acc)
    }
}

/// Streams `audio` through the model in hop-sized chunks. The output has the
/// input's length.
pub fn enhance_streaming(model: &Model, audio: &AudioBuffer) -> Result<(AudioBuffer, ComplexSpectrogram, ActivityAccumulator)> {
    let hop = model.config.stft.hop_len;
    let mut s = StreamingEnhancer::new(model)?.record_spectrogram().with_profiling();
    let mut out = Vec::with_capacity(audio.len());
    for chunk in audio.samples().chunks(hop) {
        out.extend(s.push(chunk)?);
    }
    if s.frames() == 0 {
        return Err(Error::AudioTooShort { len: audio.len(), needed: model.config.stft.window_len });
    }
    let (tail, spec, acc) = s.finish();
    out.extend(tail);
    out.resize(audio.len(), 0.0);
    Ok((AudioBuffer::new(out)?, spec.expect("recording enabled"), acc.expect("profiling enabled")))
}
