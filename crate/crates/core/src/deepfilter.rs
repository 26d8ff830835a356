//! Multi-frame complex filtering of the noisy spectrogram.
//!
//! Blocks and filters of a group are `g x (d + 1)` grids stored row-major over
//! `(bin, tap)`; tap `j` multiplies frame `n - j`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::ComplexSpectrogram;
use crate::subband::{PartitionScheme, SubbandGroup};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Noisy history of `group` at frame `n` (0-based); frames before the
/// first are zero.
pub fn build_multiframe(spec: &ComplexSpectrogram, group: &SubbandGroup, order: usize, n: usize) -> Vec<Complex64> {
    let taps = order + 1;
    let mut block = vec![ZERO; group.width * taps];
    for j in 0..taps.min(n + 1) {
        let row = spec.frame(n - j);
        for m in 0..group.width {
            block[m * taps + j] = row[group.start + m];
        }
    }
    block
}

/// Unpacks interleaved `(re, im)` logits into complex taps.
pub fn logits_to_filter(logits: &[f64], width: usize, order: usize) -> Result<Vec<Complex64>> {
    let expected = 2 * width * (order + 1);
    if logits.len() != expected {
        return Err(Error::shape(format!("expected {expected} filter logits, got {}", logits.len())));
    }
    Ok(logits.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect())
}

pub fn filter_to_logits(filter: &[Complex64]) -> Vec<f64> {
    filter.iter().flat_map(|c| [c.re, c.im]).collect()
}

/// `out[m] = sum_j w[m, j] * x[m, j]`.
pub fn apply_filter(block: &[Complex64], filter: &[Complex64], taps: usize, out: &mut [Complex64]) {
    debug_assert_eq!(block.len(), filter.len());
    for (m, o) in out.iter_mut().enumerate() {
        let row = m * taps..(m + 1) * taps;
        *o = block[row.clone()].iter().zip(&filter[row]).map(|(x, w)| x * w).sum();
    }
}

/// Filters `group` at frame `n` using interleaved logits, writing the
/// enhanced bins into `out` (length `g`). Reads frames `n - d ..= n` only.
pub fn filter_group_frame(
    spec: &ComplexSpectrogram,
    group: &SubbandGroup,
    order: usize,
    n: usize,
    logits: &[f64],
    out: &mut [Complex64],
) {
    let history: Vec<&[Complex64]> = (0..(order + 1).min(n + 1)).map(|j| spec.frame(n - j)).collect();
    filter_group_history(&history, group, order, logits, out);
}

/// Same as [`filter_group_frame`] with the past given explicitly:
/// `history[j]` holds the modeled bins of frame `n - j`. Entries beyond the
/// slice count as zero.
pub fn filter_group_history(
    history: &[&[Complex64]],
    group: &SubbandGroup,
    order: usize,
    logits: &[f64],
    out: &mut [Complex64],
) {
    let taps = order + 1;
    for (m, o) in out.iter_mut().enumerate() {
        let mut acc = ZERO;
        for (j, frame) in history.iter().take(taps).enumerate() {
            let x = frame[group.start + m];
            let k = 2 * (m * taps + j);
            acc += x * Complex64::new(logits[k], logits[k + 1]);
        }
        *o = acc;
    }
}

/// Gradient of a real loss w.r.t. the interleaved logits of one group and
/// frame, given `grad_out[m] = dL/d re + i dL/d im` of the enhanced bins.
/// Accumulates into `grad_logits`.
pub fn filter_group_frame_backward(
    spec: &ComplexSpectrogram,
    group: &SubbandGroup,
    order: usize,
    n: usize,
    grad_out: &[Complex64],
    grad_logits: &mut [f64],
) {
    let taps = order + 1;
    for (m, g) in grad_out.iter().enumerate() {
        for j in 0..taps.min(n + 1) {
            let x = spec.frame(n - j)[group.start + m];
            let gw = g * x.conj();
            let k = 2 * (m * taps + j);
            grad_logits[k] += gw.re;
            grad_logits[k + 1] += gw.im;
        }
    }
}

/// Applies per-group filters to every frame. `logits[i]` holds the
/// `T x 2 g (d + 1)` logits of the `i`-th group of `scheme.groups()`.
/// The DC bin is copied from the noisy input.
pub fn assemble_enhanced(
    spec: &ComplexSpectrogram,
    scheme: &PartitionScheme,
    logits: &[Vec<f64>],
) -> Result<ComplexSpectrogram> {
    let groups = scheme.groups();
    if logits.len() != groups.len() {
        return Err(Error::shape(format!("{} groups but {} filter sets", groups.len(), logits.len())));
    }
    if spec.num_bins() != scheme.num_bins {
        return Err(Error::shape(format!(
            "spectrogram has {} bins, partition covers {}",
            spec.num_bins(),
            scheme.num_bins
        )));
    }
    let frames = spec.num_frames();
    let mut out = ComplexSpectrogram::from_parts(
        spec.num_bins(),
        spec.dc().to_vec(),
        vec![ZERO; frames * spec.num_bins()],
    )?;
    for (group, lg) in groups.iter().zip(logits) {
        let order = scheme.filter_orders[group.partition];
        let len = scheme.logits_len(group.partition);
        if lg.len() != frames * len {
            return Err(Error::shape(format!(
                "group at bin {} has {} logits, expected {}",
                group.start,
                lg.len(),
                frames * len
            )));
        }
        for n in 0..frames {
            let mut bins = vec![ZERO; group.width];
            filter_group_frame(spec, group, order, n, &lg[n * len..(n + 1) * len], &mut bins);
            out.frame_mut(n)[group.bins()].copy_from_slice(&bins);
        }
    }
    Ok(out)
}

/// Interleaved logits of the identity filter (`w_0 = 1`, others zero).
pub fn identity_logits(width: usize, order: usize) -> Vec<f64> {
    let taps = order + 1;
    let mut v = vec![0.0; 2 * width * taps];
    for m in 0..width {
        v[2 * m * taps] = 1.0;
    }
    v
}
