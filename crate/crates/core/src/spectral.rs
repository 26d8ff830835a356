//! Causal STFT analysis and overlap-add synthesis.
//!
//! Frames are taken strictly from the past: frame `n` covers samples
//! `[n * hop, n * hop + window_len)` with no centre padding. The one-sided
//! spectrum of an `fft_size`-point transform has `fft_size / 2 + 1` bins; the
//! DC bin is stored separately and the remaining `F = fft_size / 2` bins are the
//! ones the enhancement model sees. Bin indices in the public accessors are FFT
//! indices, so bin `k` sits at `k * 16000 / fft_size` Hz.

use std::f64::consts::PI;
use std::ops::Range;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop_len: usize,
    pub fft_size: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self { window_len: 512, hop_len: 128, fft_size: 512 }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.hop_len == 0 {
            return Err(Error::config("window_len and hop_len must be positive"));
        }
        if !self.window_len.is_multiple_of(self.hop_len) {
            return Err(Error::config(format!(
                "hop_len {} does not divide window_len {}",
                self.hop_len, self.window_len
            )));
        }
        if self.fft_size < self.window_len || !self.fft_size.is_multiple_of(2) {
            return Err(Error::config("fft_size must be even and at least window_len"));
        }
        let window = hann(self.window_len);
        let sums = overlap_sums(&window, self.hop_len);
        let first = sums[0];
        if first <= 0.0 || sums.iter().any(|s| (s - first).abs() > 1e-9 * first) {
            return Err(Error::config(format!(
                "squared Hann window is not constant-overlap-add at hop {}",
                self.hop_len
            )));
        }
        Ok(())
    }

    /// Modeled bin count `F` (the DC bin is excluded).
    pub fn num_bins(&self) -> usize {
        self.fft_size / 2
    }

    pub fn num_frames(&self, len: usize) -> usize {
        if len < self.window_len {
            0
        } else {
            1 + (len - self.window_len) / self.hop_len
        }
    }

    pub fn output_len(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop_len + self.window_len
        }
    }

    /// Samples of a synthesized signal of `len` samples covered by a full
    /// complement of overlapping frames.
    pub fn interior(&self, len: usize) -> Range<usize> {
        let edge = self.window_len - self.hop_len;
        if len <= 2 * edge {
            return 0..0;
        }
        edge..len - edge
    }

    /// Algorithmic latency of the analysis window in seconds.
    pub fn window_latency_s(&self) -> f64 {
        self.window_len as f64 / crate::audio::SAMPLE_RATE as f64
    }
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len).map(|n| 0.5 * (1.0 - (2.0 * PI * n as f64 / len as f64).cos())).collect()
}

fn overlap_sums(window: &[f64], hop: usize) -> Vec<f64> {
    (0..hop)
        .map(|m| window.iter().skip(m).step_by(hop).map(|w| w * w).sum())
        .collect()
}

/// Complex spectrogram: `T` frames of one DC bin plus `F` modeled bins.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram {
    num_frames: usize,
    num_bins: usize,
    dc: Vec<Complex64>,
    bins: Vec<Complex64>,
}

impl ComplexSpectrogram {
    pub fn zeros(num_frames: usize, num_bins: usize) -> Self {
        Self {
            num_frames,
            num_bins,
            dc: vec![Complex64::new(0.0, 0.0); num_frames],
            bins: vec![Complex64::new(0.0, 0.0); num_frames * num_bins],
        }
    }

    pub fn from_parts(num_bins: usize, dc: Vec<Complex64>, bins: Vec<Complex64>) -> Result<Self> {
        if bins.len() != dc.len() * num_bins {
            return Err(Error::shape(format!(
                "{} modeled values for {} frames of {num_bins} bins",
                bins.len(),
                dc.len()
            )));
        }
        if dc.iter().chain(bins.iter()).any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite("spectrogram".into()));
        }
        Ok(Self { num_frames: dc.len(), num_bins, dc, bins })
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    /// Modeled bin count `F`.
    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    /// Value at frame `n` (0-based) and FFT bin `k` in `0..=F`.
    pub fn get(&self, n: usize, k: usize) -> Complex64 {
        if k == 0 {
            self.dc[n]
        } else {
            self.bins[n * self.num_bins + k - 1]
        }
    }

    pub fn set(&mut self, n: usize, k: usize, v: Complex64) {
        if k == 0 {
            self.dc[n] = v;
        } else {
            self.bins[n * self.num_bins + k - 1] = v;
        }
    }

    pub fn dc(&self) -> &[Complex64] {
        &self.dc
    }

    /// Modeled bins of frame `n` (FFT bins `1..=F`).
    pub fn frame(&self, n: usize) -> &[Complex64] {
        &self.bins[n * self.num_bins..(n + 1) * self.num_bins]
    }

    pub fn frame_mut(&mut self, n: usize) -> &mut [Complex64] {
        &mut self.bins[n * self.num_bins..(n + 1) * self.num_bins]
    }

    /// All modeled bins, frame-major.
    pub fn modeled(&self) -> &[Complex64] {
        &self.bins
    }

    pub fn modeled_mut(&mut self) -> &mut [Complex64] {
        &mut self.bins
    }

    /// Full one-sided row of frame `n` (`F + 1` values, DC first).
    pub fn full_frame(&self, n: usize) -> Vec<Complex64> {
        let mut row = Vec::with_capacity(self.num_bins + 1);
        row.push(self.dc[n]);
        row.extend_from_slice(self.frame(n));
        row
    }

    pub fn push_frame(&mut self, full: &[Complex64]) {
        debug_assert_eq!(full.len(), self.num_bins + 1);
        self.dc.push(full[0]);
        self.bins.extend_from_slice(&full[1..]);
        self.num_frames += 1;
    }
}

/// Non-negative `T x F` grid of modeled-bin magnitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct MagnitudeSpectrogram {
    num_frames: usize,
    num_bins: usize,
    data: Vec<f64>,
}

impl MagnitudeSpectrogram {
    pub fn new(num_frames: usize, num_bins: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != num_frames * num_bins {
            return Err(Error::shape(format!(
                "{} values for a {num_frames}x{num_bins} grid",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidAudio("magnitudes must be finite and non-negative".into()));
        }
        Ok(Self { num_frames, num_bins, data })
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    /// Magnitude at frame `n` and modeled column `j` (FFT bin `j + 1`).
    pub fn at(&self, n: usize, j: usize) -> f64 {
        self.data[n * self.num_bins + j]
    }

    pub fn frame(&self, n: usize) -> &[f64] {
        &self.data[n * self.num_bins..(n + 1) * self.num_bins]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

pub fn magnitude(spec: &ComplexSpectrogram) -> MagnitudeSpectrogram {
    MagnitudeSpectrogram {
        num_frames: spec.num_frames,
        num_bins: spec.num_bins,
        data: spec.bins.iter().map(|c| c.norm()).collect(),
    }
}

/// Planned forward/inverse transforms for one [`StftConfig`].
pub struct Stft {
    cfg: StftConfig,
    window: Vec<f64>,
    ola_norm: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        let window = hann(cfg.window_len);
        let ola_norm = overlap_sums(&window, cfg.hop_len)[0];
        let mut planner = FftPlanner::new();
        Ok(Self {
            forward: planner.plan_fft_forward(cfg.fft_size),
            inverse: planner.plan_fft_inverse(cfg.fft_size),
            cfg,
            window,
            ola_norm,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// One-sided spectrum (`F + 1` bins) of a single `window_len` frame.
    pub fn analyze_frame(&self, frame: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(frame.len(), self.cfg.window_len);
        let n = self.cfg.fft_size;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for ((b, &s), &w) in buf.iter_mut().zip(frame).zip(&self.window) {
            b.re = s * w;
        }
        self.forward.process(&mut buf);
        buf.truncate(n / 2 + 1);
        buf
    }

    /// Windowed, overlap-normalized time segment (`window_len` samples) of one
    /// one-sided spectrum. The imaginary parts of the DC and Nyquist bins are
    /// ignored, as for any real inverse transform.
    pub fn synthesize_frame(&self, full: &[Complex64]) -> Vec<f64> {
        let n = self.cfg.fft_size;
        let half = n / 2;
        debug_assert_eq!(full.len(), half + 1);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        buf[0] = Complex64::new(full[0].re, 0.0);
        buf[half] = Complex64::new(full[half].re, 0.0);
        for k in 1..half {
            buf[k] = full[k];
            buf[n - k] = full[k].conj();
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / (n as f64 * self.ola_norm);
        self.window.iter().zip(&buf).map(|(&w, c)| c.re * w * scale).collect()
    }

    /// Adjoint of [`Stft::synthesize_frame`]: maps a gradient on the frame's
    /// output samples to a gradient on its one-sided spectrum, with
    /// `re`/`im` holding the partial derivatives w.r.t. the real and
    /// imaginary parts.
    pub fn synthesize_frame_adjoint(&self, grad: &[f64]) -> Vec<Complex64> {
        let n = self.cfg.fft_size;
        let half = n / 2;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let scale = 1.0 / (n as f64 * self.ola_norm);
        for ((b, &g), &w) in buf.iter_mut().zip(grad).zip(&self.window) {
            b.re = g * w * scale;
        }
        self.forward.process(&mut buf);
        let mut out = Vec::with_capacity(half + 1);
        out.push(Complex64::new(buf[0].re, 0.0));
        for b in &buf[1..half] {
            out.push(b * 2.0);
        }
        out.push(Complex64::new(buf[half].re, 0.0));
        out
    }

    pub fn stft(&self, audio: &AudioBuffer) -> Result<ComplexSpectrogram> {
        let samples = audio.samples();
        if samples.len() < self.cfg.window_len {
            return Err(Error::AudioTooShort { len: samples.len(), needed: self.cfg.window_len });
        }
        let frames = self.cfg.num_frames(samples.len());
        let mut spec = ComplexSpectrogram {
            num_frames: 0,
            num_bins: self.cfg.num_bins(),
            dc: Vec::with_capacity(frames),
            bins: Vec::with_capacity(frames * self.cfg.num_bins()),
        };
        for n in 0..frames {
            let start = n * self.cfg.hop_len;
            spec.push_frame(&self.analyze_frame(&samples[start..start + self.cfg.window_len]));
        }
        Ok(spec)
    }

    pub fn istft(&self, spec: &ComplexSpectrogram) -> Result<AudioBuffer> {
        if spec.num_bins() != self.cfg.num_bins() {
            return Err(Error::shape(format!(
                "spectrogram has {} bins, config expects {}",
                spec.num_bins(),
                self.cfg.num_bins()
            )));
        }
        let mut out = vec![0.0; self.cfg.output_len(spec.num_frames())];
        for n in 0..spec.num_frames() {
            let seg = self.synthesize_frame(&spec.full_frame(n));
            let start = n * self.cfg.hop_len;
            for (o, s) in out[start..].iter_mut().zip(seg) {
                *o += s;
            }
        }
        AudioBuffer::new(out)
    }

    /// Gradient of a loss w.r.t. every bin of the spectrogram fed to
    /// [`Stft::istft`], given the gradient on the synthesized waveform.
    pub fn istft_adjoint(&self, frames: usize, grad: &[f64]) -> ComplexSpectrogram {
        let f = self.cfg.num_bins();
        let mut out = ComplexSpectrogram::zeros(0, f);
        for n in 0..frames {
            let start = n * self.cfg.hop_len;
            out.push_frame(&self.synthesize_frame_adjoint(&grad[start..start + self.cfg.window_len]));
        }
        out
    }
}

pub fn stft(audio: &AudioBuffer, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    Stft::new(*cfg)?.stft(audio)
}

pub fn istft(spec: &ComplexSpectrogram, cfg: &StftConfig) -> Result<AudioBuffer> {
    Stft::new(*cfg)?.istft(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> AudioBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioBuffer::new((0..len).map(|_| rng.gen_range(-0.5..0.5)).collect()).unwrap()
    }

    /// Naive O(N^2) DFT of a real sequence.
    fn naive_dft(x: &[f64], n: usize) -> Vec<Complex64> {
        (0..=n / 2)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(m, &v)| Complex64::from_polar(v, -2.0 * PI * (k * m) as f64 / n as f64))
                    .sum()
            })
            .collect()
    }

    /// Naive inverse of a one-sided spectrum (imag of DC/Nyquist ignored).
    fn naive_irdft(full: &[Complex64], n: usize) -> Vec<f64> {
        (0..n)
            .map(|m| {
                let mut acc = full[0].re + full[n / 2].re * if m % 2 == 0 { 1.0 } else { -1.0 };
                for (k, c) in full.iter().enumerate().take(n / 2).skip(1) {
                    let th = 2.0 * PI * (k * m) as f64 / n as f64;
                    acc += 2.0 * (c.re * th.cos() - c.im * th.sin());
                }
                acc / n as f64
            })
            .collect()
    }

    /// Overlap-add written out directly from the frame definitions.
    fn naive_istft(spec: &ComplexSpectrogram, cfg: &StftConfig) -> Vec<f64> {
        let w = hann(cfg.window_len);
        let norm: f64 = w.iter().step_by(cfg.hop_len).map(|v| v * v).sum();
        let mut out = vec![0.0; cfg.output_len(spec.num_frames())];
        for n in 0..spec.num_frames() {
            let seg = naive_irdft(&spec.full_frame(n), cfg.fft_size);
            for m in 0..cfg.window_len {
                out[n * cfg.hop_len + m] += seg[m] * w[m] / norm;
            }
        }
        out
    }

    #[test]
    fn default_config_is_valid() {
        let cfg = StftConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.num_bins(), 256);
    }

    #[test]
    fn half_overlap_hann_is_rejected() {
        let cfg = StftConfig { window_len: 512, hop_len: 256, fft_size: 512 };
        assert!(cfg.validate().is_err());
        let cfg = StftConfig { window_len: 512, hop_len: 100, fft_size: 512 };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_second_gives_122_zero_frames() {
        let spec = stft(&AudioBuffer::zeros(16000), &StftConfig::default()).unwrap();
        assert_eq!(spec.num_frames(), 122);
        assert!(spec.modeled().iter().chain(spec.dc()).all(|c| c.norm() == 0.0));
    }

    #[test]
    fn short_audio_is_an_error() {
        let err = stft(&AudioBuffer::zeros(511), &StftConfig::default()).unwrap_err();
        assert!(matches!(err, Error::AudioTooShort { len: 511, needed: 512 }));
    }

    #[test]
    fn sine_peak_matches_direct_dft() {
        let cfg = StftConfig::default();
        let x: Vec<f64> = (0..16000).map(|t| (2.0 * PI * 1000.0 * t as f64 / 16000.0).sin()).collect();
        let spec = stft(&AudioBuffer::new(x.clone()).unwrap(), &cfg).unwrap();
        let frame = 10;
        let w = hann(512);
        let windowed: Vec<f64> = (0..512).map(|m| x[frame * 128 + m] * w[m]).collect();
        let oracle = naive_dft(&windowed, 512);
        for k in 0..=256 {
            assert!((spec.get(frame, k) - oracle[k]).norm() < 1e-9, "bin {k}");
        }
        let peak = (0..=256).max_by(|&a, &b| oracle[a].norm().total_cmp(&oracle[b].norm())).unwrap();
        assert_eq!(peak, 32);
        let peak = (0..=256)
            .max_by(|&a, &b| spec.get(frame, a).norm().total_cmp(&spec.get(frame, b).norm()))
            .unwrap();
        assert_eq!(peak, 32);
    }

    #[test]
    fn istft_matches_overlap_add_oracle() {
        let cfg = StftConfig { window_len: 64, hop_len: 16, fft_size: 64 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut spec = ComplexSpectrogram::zeros(0, 32);
        for _ in 0..7 {
            let row: Vec<Complex64> =
                (0..33).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            spec.push_frame(&row);
        }
        let fast = istft(&spec, &cfg).unwrap();
        let oracle = naive_istft(&spec, &cfg);
        for (a, b) in fast.samples().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn impulse_spectrum_single_frame() {
        let cfg = StftConfig::default();
        let stft = Stft::new(cfg).unwrap();
        // all ones: impulse at m = 0, which the periodic window zeroes
        let ones = ComplexSpectrogram::from_parts(256, vec![Complex64::new(1.0, 0.0)], vec![Complex64::new(1.0, 0.0); 256])
            .unwrap();
        let out = stft.istft(&ones).unwrap();
        let oracle = naive_istft(&ones, &cfg);
        assert_eq!(out.len(), 512);
        for (a, b) in out.samples().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
        // alternating signs: impulse at the window centre, scaled by 1/1.5
        let alt: Vec<Complex64> = (1..=256).map(|k| Complex64::new(if k % 2 == 0 { 1.0 } else { -1.0 }, 0.0)).collect();
        let shifted = ComplexSpectrogram::from_parts(256, vec![Complex64::new(1.0, 0.0)], alt).unwrap();
        let out = stft.istft(&shifted).unwrap();
        let oracle = naive_istft(&shifted, &cfg);
        for (m, (a, b)) in out.samples().iter().zip(&oracle).enumerate() {
            assert!((a - b).abs() < 1e-12, "sample {m}");
        }
        assert!((out.samples()[256] - 1.0 / 1.5).abs() < 1e-12);
    }

    #[test]
    fn zero_spectrogram_gives_silence() {
        let out = istft(&ComplexSpectrogram::zeros(5, 256), &StftConfig::default()).unwrap();
        assert_eq!(out.len(), 4 * 128 + 512);
        assert!(out.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn istft_rejects_bin_mismatch() {
        let err = istft(&ComplexSpectrogram::zeros(3, 128), &StftConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn round_trip_interior() {
        let cfg = StftConfig::default();
        let x = noise(16000, 11);
        let y = istft(&stft(&x, &cfg).unwrap(), &cfg).unwrap();
        assert_eq!(y.len(), cfg.output_len(122));
        let r = cfg.interior(y.len());
        let err: f64 = r.clone().map(|i| (x.samples()[i] - y.samples()[i]).powi(2)).sum();
        let energy: f64 = r.map(|i| x.samples()[i].powi(2)).sum();
        assert!((err / energy).sqrt() < 1e-6);
    }

    #[test]
    fn magnitude_is_modulus() {
        let spec = ComplexSpectrogram::from_parts(
            2,
            vec![Complex64::new(9.0, 9.0)],
            vec![Complex64::new(3.0, 4.0), Complex64::new(0.0, 0.0)],
        )
        .unwrap();
        let mag = magnitude(&spec);
        assert_eq!(mag.data(), &[5.0, 0.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bins: Vec<Complex64> =
            (0..40).map(|_| Complex64::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0))).collect();
        let spec = ComplexSpectrogram::from_parts(8, vec![Complex64::default(); 5], bins.clone()).unwrap();
        for (m, c) in magnitude(&spec).data().iter().zip(&bins) {
            assert!((m - (c.re * c.re + c.im * c.im).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn adjoint_matches_inner_product_identity() {
        // <istft(X), g> == <X, istft_adjoint(g)> with the real inner product
        let cfg = StftConfig { window_len: 64, hop_len: 16, fft_size: 64 };
        let stft = Stft::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut spec = ComplexSpectrogram::zeros(0, 32);
        for _ in 0..5 {
            let row: Vec<Complex64> =
                (0..33).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            spec.push_frame(&row);
        }
        let y = stft.istft(&spec).unwrap();
        let g: Vec<f64> = (0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lhs: f64 = y.samples().iter().zip(&g).map(|(a, b)| a * b).sum();
        let adj = stft.istft_adjoint(5, &g);
        let mut rhs = 0.0;
        for n in 0..5 {
            for k in 0..=32 {
                let (a, b) = (spec.get(n, k), adj.get(n, k));
                rhs += a.re * b.re + a.im * b.im;
            }
        }
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]

            #[test]
            fn linearity(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
                let cfg = StftConfig { window_len: 64, hop_len: 16, fft_size: 64 };
                let x = noise(400, seed);
                let y = noise(400, seed + 1);
                let mix: Vec<f64> = x.samples().iter().zip(y.samples()).map(|(p, q)| a * p + b * q).collect();
                let sm = stft(&AudioBuffer::new(mix).unwrap(), &cfg).unwrap();
                let sx = stft(&x, &cfg).unwrap();
                let sy = stft(&y, &cfg).unwrap();
                for n in 0..sm.num_frames() {
                    for k in 0..=32 {
                        let expect = sx.get(n, k) * a + sy.get(n, k) * b;
                        prop_assert!((sm.get(n, k) - expect).norm() < 1e-9);
                    }
                }
            }

            #[test]
            fn causality(seed in 0u64..1000, cut in 64usize..400) {
                let cfg = StftConfig { window_len: 64, hop_len: 16, fft_size: 64 };
                let x = noise(400, seed);
                let mut trunc = x.samples().to_vec();
                for s in &mut trunc[cut..] { *s = 0.0; }
                let a = stft(&x, &cfg).unwrap();
                let b = stft(&AudioBuffer::new(trunc).unwrap(), &cfg).unwrap();
                for n in 0..a.num_frames() {
                    if n * cfg.hop_len + cfg.window_len <= cut {
                        prop_assert_eq!(a.full_frame(n), b.full_frame(n));
                    }
                }
            }

            #[test]
            fn parseval_round_trip(seed in 0u64..1000) {
                let cfg = StftConfig::default();
                let x = noise(4000, seed);
                let y = istft(&stft(&x, &cfg).unwrap(), &cfg).unwrap();
                let r = cfg.interior(y.len());
                let ex: f64 = r.clone().map(|i| x.samples()[i].powi(2)).sum();
                let ey: f64 = r.map(|i| y.samples()[i].powi(2)).sum();
                prop_assert!(((ex - ey) / ex).abs() < 1e-6);
            }
        }
    }
}
