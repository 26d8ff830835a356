//! Noisy/clean pair synthesis and a built-in toy corpus.

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{power, AudioBuffer, SAMPLE_RATE};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixSpec {
    pub snr_db: [f64; 2],
    pub loudness_dbfs: [f64; 2],
    pub clip_seconds: f64,
    pub gap_seconds: f64,
    pub seed: u64,
}

impl Default for MixSpec {
    fn default() -> Self {
        Self { snr_db: [-5.0, 20.0], loudness_dbfs: [-35.0, -15.0], clip_seconds: 4.0, gap_seconds: 0.2, seed: 0 }
    }
}

impl MixSpec {
    pub fn validate(&self) -> Result<()> {
        let ordered = |r: &[f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if !ordered(&self.snr_db) || !ordered(&self.loudness_dbfs) {
            return Err(Error::config("snr_db and loudness_dbfs must be finite [low, high] ranges"));
        }
        if !(self.clip_seconds > 0.0) || !(self.gap_seconds >= 0.0) {
            return Err(Error::config("clip_seconds must be positive and gap_seconds non-negative"));
        }
        Ok(())
    }

    pub fn clip_len(&self) -> usize {
        (self.clip_seconds * SAMPLE_RATE as f64).round() as usize
    }
}

fn db_to_power(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Scales `noise` so that `10 log10(P_clean / P_noise) = snr_db`. Returns
/// `(noisy, scaled_noise)` where the stored noise is `noisy - clean`.
pub fn mix_at_snr(clean: &AudioBuffer, noise: &AudioBuffer, snr_db: f64) -> Result<(AudioBuffer, AudioBuffer)> {
    if clean.len() != noise.len() {
        return Err(Error::shape(format!("clean has {} samples, noise {}", clean.len(), noise.len())));
    }
    let (ps, pn) = (clean.power(), noise.power());
    if ps == 0.0 {
        return Err(Error::Silent("clean signal".into()));
    }
    if pn == 0.0 {
        return Err(Error::Silent("noise signal".into()));
    }
    let gain = (ps / (pn * db_to_power(snr_db))).sqrt();
    let noisy: Vec<f64> = clean.samples().iter().zip(noise.samples()).map(|(c, n)| c + gain * n).collect();
    let scaled: Vec<f64> = noisy.iter().zip(clean.samples()).map(|(y, c)| y - c).collect();
    Ok((AudioBuffer::new(noisy)?, AudioBuffer::new(scaled)?))
}

/// RMS level in dBFS.
pub fn dbfs(audio: &AudioBuffer) -> f64 {
    20.0 * audio.rms().log10()
}

/// Gain that brings `audio` to `target_dbfs`.
pub fn loudness_gain(audio: &AudioBuffer, target_dbfs: f64) -> Result<f64> {
    let rms = audio.rms();
    if rms == 0.0 {
        return Err(Error::Silent("cannot normalize silence".into()));
    }
    Ok(10f64.powf(target_dbfs / 20.0) / rms)
}

pub fn loudness_normalize(audio: &AudioBuffer, target_dbfs: f64) -> Result<AudioBuffer> {
    Ok(audio.scaled(loudness_gain(audio, target_dbfs)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub noisy: AudioBuffer,
    pub clean: AudioBuffer,
    pub noise: AudioBuffer,
    pub snr_db: f64,
    pub loudness_dbfs: f64,
    pub seed: u64,
    pub index: u64,
}

fn pair_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Builds pair `index`: clean sources joined with silence gaps up to the
/// clip length, a random noise excerpt, mixing at a random SNR and
/// loudness normalization of the mixture (the same gain is applied to the
/// clean and noise parts).
pub fn synth_pair(sources: &[AudioBuffer], noises: &[AudioBuffer], spec: &MixSpec, index: u64) -> Result<Pair> {
    spec.validate()?;
    if sources.is_empty() || noises.is_empty() {
        return Err(Error::Invalid("source and noise corpora must be non-empty".into()));
    }
    if sources.iter().all(|s| s.power() == 0.0) {
        return Err(Error::Silent("every source clip is silent".into()));
    }
    if noises.iter().all(|n| n.power() == 0.0) {
        return Err(Error::Silent("every noise clip is silent".into()));
    }
    let mut rng = pair_rng(spec.seed, index);
    let len = spec.clip_len();
    let gap = (spec.gap_seconds * SAMPLE_RATE as f64).round() as usize;

    let mut clean = Vec::with_capacity(len);
    let mut first = true;
    while clean.len() < len {
        if !first {
            clean.extend(std::iter::repeat_n(0.0, gap.min(len - clean.len())));
        }
        first = false;
        let src = &sources[rng.gen_range(0..sources.len())];
        if src.is_empty() || src.power() == 0.0 {
            continue;
        }
        let offset = if clean.is_empty() { rng.gen_range(0..src.len()) } else { 0 };
        let take = (src.len() - offset).min(len - clean.len());
        clean.extend_from_slice(&src.samples()[offset..offset + take]);
    }
    let clean = AudioBuffer::new(clean)?;
    if clean.power() == 0.0 {
        return synth_pair(sources, noises, &MixSpec { seed: spec.seed.wrapping_add(1), ..spec.clone() }, index);
    }

    let audible: Vec<&AudioBuffer> = noises.iter().filter(|n| !n.is_empty() && n.power() > 0.0).collect();
    let noise_src = audible[rng.gen_range(0..audible.len())];
    let start = rng.gen_range(0..noise_src.len());
    let noise: Vec<f64> = (0..len).map(|i| noise_src.samples()[(start + i) % noise_src.len()]).collect();
    let mut noise = AudioBuffer::new(noise)?;
    if noise.power() == 0.0 {
        noise = AudioBuffer::new(noise_src.samples().iter().cycle().take(len).copied().collect())?;
    }

    let snr_db = rng.gen_range(spec.snr_db[0]..=spec.snr_db[1]);
    let loudness_dbfs = rng.gen_range(spec.loudness_dbfs[0]..=spec.loudness_dbfs[1]);
    let (noisy, _) = mix_at_snr(&clean, &noise, snr_db)?;
    let gain = loudness_gain(&noisy, loudness_dbfs)?;
    let noisy = noisy.scaled(gain);
    let clean = clean.scaled(gain);
    let noise = AudioBuffer::new(noisy.samples().iter().zip(clean.samples()).map(|(y, c)| y - c).collect())?;
    Ok(Pair { noisy, clean, noise, snr_db, loudness_dbfs, seed: spec.seed, index })
}

pub fn synth_pairset(sources: &[AudioBuffer], noises: &[AudioBuffer], spec: &MixSpec, count: usize) -> Result<Vec<Pair>> {
    (0..count as u64).map(|i| synth_pair(sources, noises, spec, i)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub noisy: PathBuf,
    pub clean: PathBuf,
    pub noise: PathBuf,
    pub snr_db: f64,
    pub loudness_dbfs: f64,
    pub seed: u64,
    pub index: u64,
}

/// Writes WAV files under `dir` and a JSON-lines manifest `manifest.jsonl`.
/// Paths in the manifest are relative to `dir`.
pub fn write_pairset(dir: &Path, pairs: &[Pair]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let manifest = dir.join("manifest.jsonl");
    let mut out = std::io::BufWriter::new(std::fs::File::create(&manifest)?);
    for p in pairs {
        let stem = format!("pair{:05}", p.index);
        let rec = ManifestRecord {
            noisy: format!("{stem}_noisy.wav").into(),
            clean: format!("{stem}_clean.wav").into(),
            noise: format!("{stem}_noise.wav").into(),
            snr_db: p.snr_db,
            loudness_dbfs: p.loudness_dbfs,
            seed: p.seed,
            index: p.index,
        };
        p.noisy.write_wav(dir.join(&rec.noisy))?;
        p.clean.write_wav(dir.join(&rec.clean))?;
        p.noise.write_wav(dir.join(&rec.noise))?;
        writeln!(out, "{}", serde_json::to_string(&rec)?)?;
    }
    out.flush()?;
    Ok(manifest)
}

/// Reads a manifest, resolving relative paths against its directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: ManifestRecord = serde_json::from_str(&line)?;
        for p in [&mut rec.noisy, &mut rec.clean, &mut rec.noise] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        out.push(rec);
    }
    Ok(out)
}

/// Harmonic "speech": syllables of a band-limited sawtooth with gliding
/// pitch, shaped by two moving resonances and separated by pauses.
pub fn toy_speech(seed: u64, seconds: f64) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = SAMPLE_RATE as f64;
    let len = (seconds * sr).round() as usize;
    let mut out = vec![0.0; len];
    let mut pos = (rng.gen_range(0.0..0.1) * sr) as usize;
    while pos < len {
        let dur = (rng.gen_range(0.12..0.35) * sr) as usize;
        let f0_start = rng.gen_range(90.0..240.0);
        let f0_end = f0_start * rng.gen_range(0.75..1.3);
        let f1 = (rng.gen_range(300.0..850.0), rng.gen_range(300.0..850.0));
        let f2 = (rng.gen_range(900.0..2400.0), rng.gen_range(900.0..2400.0));
        let level = rng.gen_range(0.5..1.0);
        let mut phase = 0.0;
        for i in 0..dur.min(len - pos) {
            let x = i as f64 / dur as f64;
            let f0 = f0_start + (f0_end - f0_start) * x;
            phase += 2.0 * PI * f0 / sr;
            let env = level * (PI * x).sin().powf(0.6);
            let (c1, c2) = (f1.0 + (f1.1 - f1.0) * x, f2.0 + (f2.1 - f2.0) * x);
            let mut s = 0.0;
            let mut k = 1.0;
            while k * f0 < 7000.0 {
                let f = k * f0;
                let res = 1.0 / (1.0 + ((f - c1) / 120.0).powi(2)) + 0.6 / (1.0 + ((f - c2) / 180.0).powi(2)) + 0.03;
                s += res / k.sqrt() * (k * phase).sin();
                k += 1.0;
            }
            out[pos + i] += env * s;
        }
        pos += dur;
        let pause = if rng.gen_bool(0.2) { rng.gen_range(0.2..0.5) } else { rng.gen_range(0.02..0.12) };
        pos += (pause * sr) as usize;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    AudioBuffer::new(out).expect("finite synthesis")
}

/// Coloured noise with a random spectral tilt, up to three narrow resonances
/// (hum- or whine-like bands that persist for the whole clip) and slow
/// amplitude modulation.
pub fn toy_noise(seed: u64, seconds: f64) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = SAMPLE_RATE as f64;
    let len = (seconds * sr).round() as usize;
    let lp_coef = rng.gen_range(0.0..0.97);
    let mix_white = rng.gen_range(0.0..1.0);
    let mix_high = rng.gen_range(0.0..0.5);
    let am_rate = rng.gen_range(0.1..2.0);
    let am_depth = rng.gen_range(0.0..0.6);
    let am_phase = rng.gen_range(0.0..2.0 * PI);
    // two-pole resonators y = 2 r cos(w) y1 - r^2 y2 + g x
    let mut bands: Vec<(f64, f64, f64, f64, f64)> = (0..rng.gen_range(0..=3))
        .map(|_| {
            let f = rng.gen_range(150.0..3000.0);
            let bw = rng.gen_range(15.0..60.0);
            let r = (-PI * bw / sr).exp();
            let (a1, a2) = (2.0 * r * (2.0 * PI * f / sr).cos(), r * r);
            // input gain giving the band the same variance as its input
            let var_gain = (1.0 + a2) / ((1.0 - a2) * ((1.0 + a2).powi(2) - a1 * a1));
            let g = rng.gen_range(0.8..2.5) / var_gain.sqrt();
            (a1, a2, g, 0.0, 0.0)
        })
        .collect();
    let (mut lp, mut prev) = (0.0, 0.0);
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let w: f64 = rng.gen_range(-1.0..1.0);
        lp = lp_coef * lp + (1.0 - lp_coef) * w;
        let high = w - prev;
        prev = w;
        let mut tonal = 0.0;
        for b in bands.iter_mut() {
            let y = b.0 * b.3 - b.1 * b.4 + b.2 * w;
            b.4 = b.3;
            b.3 = y;
            tonal += y;
        }
        let am = 1.0 + am_depth * (2.0 * PI * am_rate * i as f64 / sr + am_phase).sin();
        out.push(am * (lp / (1.0 - lp_coef).sqrt().max(0.05) + mix_white * w + mix_high * high + tonal));
    }
    AudioBuffer::new(out).expect("finite synthesis")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyCorpusSpec {
    pub sources: usize,
    pub noises: usize,
    pub seconds: f64,
    pub seed: u64,
}

impl Default for ToyCorpusSpec {
    fn default() -> Self {
        Self { sources: 32, noises: 16, seconds: 3.0, seed: 1 }
    }
}

/// `(sources, noises)` of the built-in toy corpus.
pub fn toy_corpus(spec: &ToyCorpusSpec) -> (Vec<AudioBuffer>, Vec<AudioBuffer>) {
    let sources = (0..spec.sources as u64).map(|i| toy_speech(spec.seed.wrapping_mul(1000).wrapping_add(i), spec.seconds)).collect();
    let noises = (0..spec.noises as u64)
        .map(|i| toy_noise(spec.seed.wrapping_mul(1000).wrapping_add(500 + i), spec.seconds))
        .collect();
    (sources, noises)
}

/// Loads every WAV file in `dir` (sorted by name).
pub fn load_wav_dir(dir: &Path) -> Result<Vec<AudioBuffer>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    paths.iter().map(AudioBuffer::read_wav).collect()
}

/// Mean power in dB of `noise` relative to `clean`.
pub fn measured_snr_db(clean: &AudioBuffer, noise: &AudioBuffer) -> f64 {
    10.0 * (power(clean.samples()) / power(noise.samples())).log10()
}
