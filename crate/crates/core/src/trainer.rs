//! BPTT training with surrogate gradients, AdamW, gradient clipping and a
//! finite-difference gradient checker.

use std::time::Instant;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::losses::{loss_tf_grad, si_sdr_grad, si_snr, total_loss, LossBreakdown, LossWeights};
use crate::model::{ForwardCache, Model};
use crate::neurons::SpikeMode;
use crate::spectral::{ComplexSpectrogram, Stft};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub grad_clip_norm: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub mode: SpikeMode,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Stop after this many seconds of wall time (checked between steps).
    pub max_seconds: Option<f64>,
    /// Fraction of the pairs held out for evaluation.
    pub holdout_fraction: f64,
    /// Truncated-BPTT length in frames; `None` backpropagates through the
    /// whole utterance.
    pub bptt_window: Option<usize>,
    pub lr_schedule: LrSchedule,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from the base rate down to 5% of it over `epochs`.
    Cosine,
}

impl LrSchedule {
    /// Learning-rate multiplier for 1-based `epoch` of `epochs`.
    pub fn factor(self, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => {
                let x = (epoch.saturating_sub(1)) as f64 / epochs.max(1) as f64;
                0.05 + 0.95 * 0.5 * (1.0 + (std::f64::consts::PI * x).cos())
            }
        }
    }
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            grad_clip_norm: 10.0,
            batch_size: 4,
            epochs: 10,
            seed: 0,
            mode: SpikeMode::Hard,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            max_seconds: None,
            holdout_fraction: 0.1,
            bptt_window: None,
            lr_schedule: LrSchedule::Constant,
        }
    }
}

impl TrainingConfig {
    /// Recipe for the desk-scale toy corpus: 80 epochs with a cosine schedule,
    /// stopped after nine minutes at the latest.
    pub fn desk() -> Self {
        Self {
            learning_rate: 3e-3,
            epochs: 80,
            lr_schedule: LrSchedule::Cosine,
            max_seconds: Some(540.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.grad_clip_norm > 0.0) || self.batch_size == 0 {
            return Err(Error::config("learning_rate, grad_clip_norm and batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::config("invalid AdamW moments"));
        }
        if self.bptt_window == Some(0) {
            return Err(Error::config("bptt_window must be positive"));
        }
        if !(self.weight_decay >= 0.0) || !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::config("weight_decay must be non-negative and holdout_fraction in [0, 1)"));
        }
        Ok(())
    }
}

/// One aligned pair with everything the loss needs precomputed.
#[derive(Clone, Debug)]
pub struct Example {
    pub noisy: AudioBuffer,
    pub clean: AudioBuffer,
    pub noisy_spec: ComplexSpectrogram,
    pub clean_spec: ComplexSpectrogram,
    /// Clean signal after analysis and resynthesis; the SI-SDR reference.
    pub clean_ref: Vec<f64>,
}

impl Example {
    pub fn new(noisy: AudioBuffer, clean: AudioBuffer, stft: &Stft) -> Result<Self> {
        if noisy.len() != clean.len() {
            return Err(Error::shape(format!("noisy has {} samples, clean {}", noisy.len(), clean.len())));
        }
        let noisy_spec = stft.stft(&noisy)?;
        let clean_spec = stft.stft(&clean)?;
        let clean_ref = stft.istft(&clean_spec)?.into_samples();
        Ok(Self { noisy, clean, noisy_spec, clean_spec, clean_ref })
    }
}

/// Training loss of one example for an already computed forward pass, with
/// the gradient w.r.t. the enhanced modeled bins.
pub fn loss_from_cache(
    model: &Model,
    stft: &Stft,
    ex: &Example,
    cache: &ForwardCache,
    w: &LossWeights,
) -> Result<(LossBreakdown, Vec<Complex64>)> {
    let (tf, g_tf) = loss_tf_grad(&ex.clean_spec, &cache.enhanced, w.alpha)?;
    let est = stft.istft(&cache.enhanced)?;
    let (sdr, g_sdr) = si_sdr_grad(&ex.clean_ref, est.samples(), w.sisdr_cap_db)?;
    let g_spec = stft.istft_adjoint(cache.enhanced.num_frames(), &g_sdr);
    let penalty = if w.synops_weight != 0.0 { model.synops_penalty(cache) } else { 0.0 };
    let breakdown = total_loss(tf, sdr, penalty, w);
    let grad = g_tf.iter().zip(g_spec.modeled()).map(|(a, b)| w.gamma1 * a - w.gamma2 * b).collect();
    Ok((breakdown, grad))
}

/// Loss and parameter gradients of one example.
pub fn loss_and_grad(model: &Model, stft: &Stft, ex: &Example, mode: SpikeMode) -> Result<(LossBreakdown, Model)> {
    loss_and_grad_window(model, stft, ex, mode, None)
}

/// As [`loss_and_grad`] with truncated BPTT over `window` frames.
pub fn loss_and_grad_window(
    model: &Model,
    stft: &Stft,
    ex: &Example,
    mode: SpikeMode,
    window: Option<usize>,
) -> Result<(LossBreakdown, Model)> {
    let w = model.config.loss;
    let cache = model.forward(&ex.noisy_spec, mode)?;
    let (loss, grad_enh) = loss_from_cache(model, stft, ex, &cache, &w)?;
    let mut grads = model.zeros_like();
    model.backward(&ex.noisy_spec, &cache, &grad_enh, w.synops_weight, &mut grads, window);
    Ok((loss, grads))
}

pub fn loss_only(model: &Model, stft: &Stft, ex: &Example, mode: SpikeMode) -> Result<LossBreakdown> {
    let cache = model.forward(&ex.noisy_spec, mode)?;
    Ok(loss_from_cache(model, stft, ex, &cache, &model.config.loss)?.0)
}

pub fn flatten(model: &Model) -> Vec<f64> {
    let mut out = Vec::with_capacity(model.num_params());
    model.visit_params(&mut |_, v| out.extend_from_slice(v));
    out
}

pub fn unflatten(model: &mut Model, flat: &[f64]) {
    let mut off = 0;
    model.visit_params_mut(&mut |_, v| {
        v.copy_from_slice(&flat[off..off + v.len()]);
        off += v.len();
    });
}

/// Scales `grads` in place so its L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= s;
        }
    }
    norm
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    pub fn new(cfg: &TrainingConfig, num_params: usize) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * params[i]);
        }
    }
}

fn worker_threads() -> usize {
    let avail = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    match std::env::var("NEURODENOISE_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        Some(n) if n > 0 => n.min(avail.max(1)),
        _ => avail,
    }
}

/// Runs `f` over `items` on up to `NEURODENOISE_THREADS` threads, returning
/// results in item order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = worker_threads().min(items.len()).max(1);
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<R>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepStats {
    pub loss: f64,
    pub grad_norm: f64,
}

/// One optimizer step on `batch`: mean loss and gradient over the items,
/// global-norm clipping, AdamW update.
pub fn bptt_step(
    model: &mut Model,
    opt: &mut AdamW,
    stft: &Stft,
    batch: &[&Example],
    cfg: &TrainingConfig,
) -> Result<StepStats> {
    let results = parallel_map(batch, |ex| loss_and_grad_window(model, stft, ex, cfg.mode, cfg.bptt_window));
    let mut grad = vec![0.0; model.num_params()];
    let mut loss = 0.0;
    for r in results {
        let (l, g) = r?;
        loss += l.total;
        let mut off = 0;
        g.visit_params(&mut |_, v| {
            for (a, b) in grad[off..off + v.len()].iter_mut().zip(v) {
                *a += b;
            }
            off += v.len();
        });
    }
    let scale = 1.0 / batch.len() as f64;
    loss *= scale;
    grad.iter_mut().for_each(|g| *g *= scale);
    if !loss.is_finite() {
        return Err(Error::Diverged(format!("loss is {loss}")));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        let mut name = String::new();
        let mut off = 0;
        model.visit_params(&mut |n, v| {
            if name.is_empty() && i < off + v.len() {
                name = n.to_string();
            }
            off += v.len();
        });
        return Err(Error::Diverged(format!("non-finite gradient in {name}")));
    }
    let norm = clip_grad_norm(&mut grad, cfg.grad_clip_norm);
    let mut params = flatten(model);
    opt.update(&mut params, &grad);
    unflatten(model, &params);
    Ok(StepStats { loss, grad_norm: norm })
}

/// Mean SI-SNR improvement of hard-spike enhancement over interior samples.
pub fn evaluate_si_snri(model: &Model, data: &[Example]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Invalid("no evaluation pairs".into()));
    }
    let results = parallel_map(data, |ex| -> Result<f64> {
        let est = model.enhance(&ex.noisy, None)?;
        let r = model.config.stft.interior(ex.noisy.len());
        let clean = &ex.clean.samples()[r.clone()];
        Ok(si_snr(clean, &est.samples()[r.clone()])? - si_snr(clean, &ex.noisy.samples()[r])?)
    });
    let mut total = 0.0;
    for r in results {
        total += r?;
    }
    Ok(total / data.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub heldout_si_snri: f64,
    pub seconds: f64,
}

/// Trains in place. Epoch 0 is the baseline evaluation before any update.
pub fn train(
    model: &mut Model,
    train_set: &[Example],
    heldout: &[Example],
    cfg: &TrainingConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    let stft = Stft::new(model.config.stft)?;
    let mut opt = AdamW::new(cfg, model.num_params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let start = Instant::now();
    let eval = |m: &Model| if heldout.is_empty() { Ok(f64::NAN) } else { evaluate_si_snri(m, heldout) };
    let mut logs = vec![EpochLog { epoch: 0, steps: 0, train_loss: f64::NAN, heldout_si_snri: eval(model)?, seconds: 0.0 }];
    on_epoch(&logs[0]);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        opt.lr = cfg.learning_rate * cfg.lr_schedule.factor(epoch, cfg.epochs);
        let (mut sum, mut steps) = (0.0, 0);
        for idx in order.chunks(cfg.batch_size) {
            if cfg.max_seconds.is_some_and(|m| start.elapsed().as_secs_f64() >= m) {
                if steps > 0 {
                    logs.push(EpochLog {
                        epoch,
                        steps,
                        train_loss: sum / steps as f64,
                        heldout_si_snri: eval(model)?,
                        seconds: start.elapsed().as_secs_f64(),
                    });
                    on_epoch(logs.last().unwrap());
                }
                break 'epochs;
            }
            let batch: Vec<&Example> = idx.iter().map(|&i| &train_set[i]).collect();
            let s = bptt_step(model, &mut opt, &stft, &batch, cfg)?;
            sum += s.loss;
            steps += 1;
        }
        logs.push(EpochLog {
            epoch,
            steps,
            train_loss: sum / steps.max(1) as f64,
            heldout_si_snri: eval(model)?,
            seconds: start.elapsed().as_secs_f64(),
        });
        on_epoch(logs.last().unwrap());
    }
    Ok(logs)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameters skipped because a perturbation moved a neuron across a
    /// kink of the relaxed spike function.
    pub skipped: usize,
    pub entries: Vec<GradCheckEntry>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub samples: usize,
    pub seed: u64,
    /// Lower bound of the relative-error denominator.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { eps: 1e-4, samples: 200, seed: 0, floor: 1e-5 }
    }
}

/// Region of the relaxed spike function each recorded potential lies in.
fn kink_signature(cache: &ForwardCache) -> Vec<u8> {
    let mut sig = Vec::new();
    let traces = std::iter::once(&cache.fullband).chain(&cache.subband);
    for tr in traces {
        for l in &tr.layers {
            sig.extend(l.pre_reset.iter().zip(&l.threshold).map(|(v, th)| {
                let x = v - th;
                match x {
                    x if x <= -1.0 => 0,
                    x if x < 0.0 => 1,
                    x if x < 1.0 => 2,
                    _ => 3,
                }
            }));
        }
    }
    sig
}

/// Compares relaxed-mode analytic gradients of the total loss with central
/// differences. `corrupt` perturbs the analytic gradient before comparing
/// (negative control).
pub fn grad_check_with(
    model: &Model,
    ex: &Example,
    opts: &GradCheckOptions,
    corrupt: Option<&dyn Fn(&mut [f64])>,
) -> Result<GradCheckReport> {
    let stft = Stft::new(model.config.stft)?;
    let mode = SpikeMode::Relaxed;
    let (_, grads) = loss_and_grad(model, &stft, ex, mode)?;
    let mut analytic = flatten(&grads);
    if let Some(c) = corrupt {
        c(&mut analytic);
    }
    let base_sig = kink_signature(&model.forward(&ex.noisy_spec, mode)?);

    // Stratify over tensors so every module is represented.
    let mut tensors: Vec<(String, usize, usize)> = Vec::new();
    let mut off = 0;
    model.visit_params(&mut |n, v| {
        tensors.push((n.to_string(), off, v.len()));
        off += v.len();
    });
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut picks: Vec<(usize, usize)> = Vec::new();
    let mut round = 0;
    while picks.len() < opts.samples && round < opts.samples {
        for (ti, t) in tensors.iter().enumerate() {
            if picks.len() >= opts.samples {
                break;
            }
            let i = t.1 + rng.gen_range(0..t.2);
            if !picks.iter().any(|p| p.1 == i) {
                picks.push((ti, i));
            }
        }
        round += 1;
    }

    let params = flatten(model);
    let mut entries = Vec::new();
    let mut skipped = 0;
    let mut max_rel: f64 = 0.0;
    let eval = |i: usize, delta: f64| -> Result<(f64, Vec<u8>)> {
        let mut p = params.clone();
        p[i] += delta;
        let mut m = model.clone();
        unflatten(&mut m, &p);
        let cache = m.forward(&ex.noisy_spec, mode)?;
        let (l, _) = loss_from_cache(&m, &stft, ex, &cache, &m.config.loss)?;
        Ok((l.total, kink_signature(&cache)))
    };
    let results = parallel_map(&picks, |&(ti, i)| -> Result<Option<GradCheckEntry>> {
        let (lp, sp) = eval(i, opts.eps)?;
        let (lm, sm) = eval(i, -opts.eps)?;
        if sp != base_sig || sm != base_sig {
            return Ok(None);
        }
        let numeric = (lp - lm) / (2.0 * opts.eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
        Ok(Some(GradCheckEntry { name: tensors[ti].0.clone(), index: i - tensors[ti].1, analytic: a, numeric, rel_error: rel }))
    });
    for r in results {
        match r? {
            Some(e) => {
                max_rel = max_rel.max(e.rel_error);
                entries.push(e);
            }
            None => skipped += 1,
        }
    }
    Ok(GradCheckReport { max_rel_error: max_rel, checked: entries.len(), skipped, entries })
}

pub fn grad_check(model: &Model, ex: &Example, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    grad_check_with(model, ex, opts, None)
}
