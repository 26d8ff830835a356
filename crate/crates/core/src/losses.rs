//! Training objectives and evaluation metrics.

use std::f64::consts::LN_10;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::ComplexSpectrogram;
use crate::tensor::dot;

/// SI-SDR values are clamped to `[-cap, cap]` dB.
pub const DEFAULT_SISDR_CAP_DB: f64 = 60.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Magnitude share of the spectral loss.
    pub alpha: f64,
    /// Weight of the spectral loss.
    pub gamma1: f64,
    /// Weight of the `100 - SI-SDR` term.
    pub gamma2: f64,
    pub synops_weight: f64,
    pub sisdr_cap_db: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 0.5, gamma1: 0.5, gamma2: 0.001, synops_weight: 0.0, sisdr_cap_db: DEFAULT_SISDR_CAP_DB }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config("alpha must lie in [0, 1]"));
        }
        if !(self.gamma1 >= 0.0 && self.gamma2 >= 0.0 && self.synops_weight >= 0.0) {
            return Err(Error::config("loss weights must be non-negative"));
        }
        if !(self.sisdr_cap_db > 0.0 && self.sisdr_cap_db.is_finite()) {
            return Err(Error::config("sisdr_cap_db must be positive and finite"));
        }
        Ok(())
    }
}

fn check_spec_shapes(clean: &ComplexSpectrogram, est: &ComplexSpectrogram) -> Result<()> {
    if clean.num_frames() != est.num_frames() || clean.num_bins() != est.num_bins() {
        return Err(Error::shape(format!(
            "spectrograms differ: {}x{} vs {}x{}",
            clean.num_frames(),
            clean.num_bins(),
            est.num_frames(),
            est.num_bins()
        )));
    }
    Ok(())
}

/// Spectral loss over the modeled `T x F` bins:
/// `alpha mean (|s| - |s_hat|)^2 + (1 - alpha) (mean (s_r - s_hat_r)^2 + mean (s_i - s_hat_i)^2)`.
pub fn loss_tf(clean: &ComplexSpectrogram, est: &ComplexSpectrogram, alpha: f64) -> Result<f64> {
    check_spec_shapes(clean, est)?;
    let n = clean.modeled().len().max(1) as f64;
    let (mut mag, mut cplx) = (0.0, 0.0);
    for (s, e) in clean.modeled().iter().zip(est.modeled()) {
        let d = s.norm() - e.norm();
        mag += d * d;
        cplx += (s - e).norm_sqr();
    }
    Ok((alpha * mag + (1.0 - alpha) * cplx) / n)
}

/// [`loss_tf`] together with its gradient w.r.t. the estimate, packed as
/// `dL/d re + i dL/d im` per modeled bin.
pub fn loss_tf_grad(
    clean: &ComplexSpectrogram,
    est: &ComplexSpectrogram,
    alpha: f64,
) -> Result<(f64, Vec<Complex64>)> {
    let value = loss_tf(clean, est, alpha)?;
    let n = clean.modeled().len().max(1) as f64;
    let grad = clean
        .modeled()
        .iter()
        .zip(est.modeled())
        .map(|(s, e)| {
            let en = e.norm();
            let mag = if en > 0.0 { e * (-2.0 * (s.norm() - en) / en) } else { Complex64::new(0.0, 0.0) };
            (alpha * mag - (1.0 - alpha) * 2.0 * (s - e)) / n
        })
        .collect();
    Ok((value, grad))
}

fn sisdr_parts(clean: &[f64], est: &[f64]) -> Result<(f64, f64, f64)> {
    if clean.len() != est.len() {
        return Err(Error::shape(format!("reference has {} samples, estimate {}", clean.len(), est.len())));
    }
    let s = dot(clean, clean);
    if s == 0.0 {
        return Err(Error::Silent("SI-SDR reference is all zeros".into()));
    }
    let c = dot(est, clean);
    let q = dot(est, est);
    let target = c * c / s;
    let residual = (q - target).max(0.0);
    Ok((s, c, residual))
}

/// Scale-invariant SDR in dB, clamped to `[-cap, cap]`.
pub fn si_sdr_capped(clean: &[f64], est: &[f64], cap_db: f64) -> Result<f64> {
    let (s, c, residual) = sisdr_parts(clean, est)?;
    let target = c * c / s;
    let db = if residual == 0.0 {
        cap_db
    } else if target == 0.0 {
        -cap_db
    } else {
        10.0 * (target / residual).log10()
    };
    Ok(db.clamp(-cap_db, cap_db))
}

/// SI-SDR with the default 60 dB cap.
pub fn si_snr(clean: &[f64], est: &[f64]) -> Result<f64> {
    si_sdr_capped(clean, est, DEFAULT_SISDR_CAP_DB)
}

/// Negated SI-SDR.
pub fn loss_sisdr(clean: &[f64], est: &[f64]) -> Result<f64> {
    Ok(-si_snr(clean, est)?)
}

/// SI-SNR improvement of `est` over `noisy`.
pub fn si_snr_i(noisy: &[f64], clean: &[f64], est: &[f64]) -> Result<f64> {
    Ok(si_snr(clean, est)? - si_snr(clean, noisy)?)
}

/// SI-SDR (capped) and its gradient w.r.t. the estimate. The gradient is
/// zero where the cap is active.
pub fn si_sdr_grad(clean: &[f64], est: &[f64], cap_db: f64) -> Result<(f64, Vec<f64>)> {
    let value = si_sdr_capped(clean, est, cap_db)?;
    let (s, c, residual) = sisdr_parts(clean, est)?;
    let target = c * c / s;
    if value.abs() >= cap_db || residual == 0.0 || target == 0.0 {
        return Ok((value, vec![0.0; est.len()]));
    }
    let k = 10.0 / LN_10;
    let a = c / s;
    let grad = est
        .iter()
        .zip(clean)
        .map(|(&e, &r)| {
            let dp = 2.0 * a * r;
            let de = 2.0 * (e - a * r);
            k * (dp / target - de / residual)
        })
        .collect();
    Ok((value, grad))
}

/// `sum_layers sum_t sum_i o_i(t) * fan_out`; equals the SynOPs count when
/// spikes are binary.
pub fn synops_penalty<'a>(layers: impl IntoIterator<Item = (&'a [f64], usize)>) -> f64 {
    layers.into_iter().map(|(spikes, fan_out)| spikes.iter().sum::<f64>() * fan_out as f64).sum()
}

/// Components of the training objective.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize)]
pub struct LossBreakdown {
    pub tf: f64,
    pub si_sdr: f64,
    pub synops: f64,
    pub total: f64,
}

/// `gamma1 L_TF + gamma2 (100 - SI-SDR) + synops_weight penalty`.
pub fn total_loss(tf: f64, si_sdr: f64, synops: f64, w: &LossWeights) -> LossBreakdown {
    LossBreakdown {
        tf,
        si_sdr,
        synops,
        total: w.gamma1 * tf + w.gamma2 * (100.0 - si_sdr) + w.synops_weight * synops,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn spec_from(vals: Vec<Complex64>, bins: usize) -> ComplexSpectrogram {
        let frames = vals.len() / bins;
        ComplexSpectrogram::from_parts(bins, vec![Complex64::new(0.0, 0.0); frames], vals).unwrap()
    }

    #[test]
    fn tf_loss_examples() {
        let c = spec_from(vec![Complex64::new(1.0, 0.0)], 1);
        let z = spec_from(vec![Complex64::new(0.0, 0.0)], 1);
        assert_eq!(loss_tf(&c, &c, 0.5).unwrap(), 0.0);
        assert!((loss_tf(&c, &z, 0.5).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tf_loss_matches_elementwise_oracle_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut gen = || (0..12).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect::<Vec<_>>();
        let (a, b) = (gen(), gen());
        let (c, e) = (spec_from(a.clone(), 4), spec_from(b.clone(), 4));
        let alpha = 0.3;
        let mut oracle = 0.0;
        for (s, t) in a.iter().zip(&b) {
            let m = (s.re.hypot(s.im) - t.re.hypot(t.im)).powi(2);
            oracle += alpha * m + (1.0 - alpha) * ((s.re - t.re).powi(2) + (s.im - t.im).powi(2));
        }
        oracle /= 12.0;
        let (v, g) = loss_tf_grad(&c, &e, alpha).unwrap();
        assert!((v - oracle).abs() < 1e-10);
        for i in 0..12 {
            for part in 0..2 {
                let bump = |d: f64| {
                    let mut bb = b.clone();
                    if part == 0 {
                        bb[i].re += d
                    } else {
                        bb[i].im += d
                    }
                    loss_tf(&c, &spec_from(bb, 4), alpha).unwrap()
                };
                let fd = (bump(1e-6) - bump(-1e-6)) / 2e-6;
                let an = if part == 0 { g[i].re } else { g[i].im };
                assert!((fd - an).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn sisdr_perfect_and_scaled() {
        let s = random(400, 2);
        assert_eq!(si_snr(&s, &s).unwrap(), 60.0);
        assert_eq!(loss_sisdr(&s, &s).unwrap(), -60.0);
        let est: Vec<f64> = s.iter().zip(random(400, 3)).map(|(a, b)| a + 0.3 * b).collect();
        let base = si_snr(&s, &est).unwrap();
        for c in [3.0, 0.01, 250.0] {
            let scaled: Vec<f64> = est.iter().map(|v| c * v).collect();
            assert!((si_snr(&s, &scaled).unwrap() - base).abs() < 1e-12);
        }
        // power-of-two gains are exact in floating point
        let scaled: Vec<f64> = est.iter().map(|v| 4.0 * v).collect();
        assert_eq!(si_snr(&s, &scaled).unwrap(), base);
    }

    #[test]
    fn sisdr_zero_db_for_orthogonal_equal_power_noise() {
        let s = random(512, 4);
        let mut n = random(512, 5);
        let proj = dot(&n, &s) / dot(&s, &s);
        for (v, r) in n.iter_mut().zip(&s) {
            *v -= proj * r;
        }
        let gain = (dot(&s, &s) / dot(&n, &n)).sqrt();
        let est: Vec<f64> = s.iter().zip(&n).map(|(a, b)| a + gain * b).collect();
        assert!(si_snr(&s, &est).unwrap().abs() < 1e-9);
        // at gain/sqrt(10) the closed form gives 10 dB
        let est: Vec<f64> = s.iter().zip(&n).map(|(a, b)| a + gain / 10f64.sqrt() * b).collect();
        assert!((si_snr(&s, &est).unwrap() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn sisdr_errors_and_improvement() {
        assert!(matches!(si_snr(&[0.0; 4], &[1.0; 4]), Err(Error::Silent(_))));
        assert!(si_snr(&[1.0; 4], &[1.0; 3]).is_err());
        let s = random(100, 6);
        let noisy: Vec<f64> = s.iter().zip(random(100, 7)).map(|(a, b)| a + b).collect();
        assert_eq!(si_snr_i(&noisy, &s, &noisy).unwrap(), 0.0);
    }

    #[test]
    fn sisdr_gradient_matches_finite_differences() {
        let s = random(64, 8);
        let est: Vec<f64> = s.iter().zip(random(64, 9)).map(|(a, b)| 0.7 * a + 0.5 * b).collect();
        let (_, g) = si_sdr_grad(&s, &est, 60.0).unwrap();
        for i in 0..64 {
            let (mut p, mut m) = (est.clone(), est.clone());
            p[i] += 1e-6;
            m[i] -= 1e-6;
            let fd = (si_snr(&s, &p).unwrap() - si_snr(&s, &m).unwrap()) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-5 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn penalty_and_total() {
        assert_eq!(synops_penalty([(&[0.0, 0.0][..], 5)]), 0.0);
        assert_eq!(synops_penalty([(&[1.0][..], 5)]), 5.0);
        let w = LossWeights::default();
        let perfect = total_loss(0.0, 60.0, 0.0, &w);
        assert!((perfect.total - 0.04).abs() < 1e-15);
        let only_sdr = LossWeights { gamma1: 0.0, ..w };
        assert_eq!(total_loss(3.0, 10.0, 0.0, &only_sdr).total, 0.001 * 90.0);
        let w2 = LossWeights { synops_weight: 0.5, ..w };
        let b = total_loss(0.2, 12.0, 7.0, &w2);
        assert!((b.total - (0.5 * 0.2 + 0.001 * 88.0 + 0.5 * 7.0)).abs() < 1e-15);
    }
}
