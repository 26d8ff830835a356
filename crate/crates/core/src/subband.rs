//! Frequency partitions, sub-band groups and grouped feature vectors.
//!
//! Bin indices here are 0-based modeled columns: column `j` is FFT bin `j + 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Partition layout shared by feature construction and deep filtering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionScheme {
    /// Ascending partition boundaries in `(0, F)`.
    pub cutoffs: Vec<usize>,
    /// Bins per group, one per partition.
    pub groupings: Vec<usize>,
    /// Filter order `d` per partition (`d + 1` taps).
    pub filter_orders: Vec<usize>,
    /// Neighbouring bins on each side of a group.
    pub context: usize,
    pub num_bins: usize,
}

impl Default for PartitionScheme {
    fn default() -> Self {
        Self { cutoffs: vec![32, 128], groupings: vec![8, 32, 64], filter_orders: vec![4, 2, 0], context: 15, num_bins: 256 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Partition {
    pub start: usize,
    pub end: usize,
    pub grouping: usize,
    pub order: usize,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn num_groups(&self) -> usize {
        self.len() / self.grouping
    }

    pub fn taps(&self) -> usize {
        self.order + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubbandGroup {
    pub partition: usize,
    pub start: usize,
    pub width: usize,
}

impl SubbandGroup {
    pub fn bins(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.width
    }
}

pub fn make_partition(
    cutoffs: &[usize],
    groupings: &[usize],
    orders: &[usize],
    context: usize,
    num_bins: usize,
) -> Result<PartitionScheme> {
    let scheme = PartitionScheme {
        cutoffs: cutoffs.to_vec(),
        groupings: groupings.to_vec(),
        filter_orders: orders.to_vec(),
        context,
        num_bins,
    };
    scheme.validate()?;
    Ok(scheme)
}

impl PartitionScheme {
    pub fn validate(&self) -> Result<()> {
        let k = self.cutoffs.len() + 1;
        if self.groupings.len() != k || self.filter_orders.len() != k {
            return Err(Error::config(format!(
                "{} cutoffs need {k} groupings and {k} filter orders, got {} and {}",
                self.cutoffs.len(),
                self.groupings.len(),
                self.filter_orders.len()
            )));
        }
        if self.num_bins == 0 {
            return Err(Error::config("partition scheme needs at least one bin"));
        }
        let mut prev = 0;
        for &c in &self.cutoffs {
            if c <= prev || c >= self.num_bins {
                return Err(Error::config(format!(
                    "cutoffs must be strictly ascending inside (0, {}), got {:?}",
                    self.num_bins, self.cutoffs
                )));
            }
            prev = c;
        }
        for p in self.partitions_unchecked() {
            if p.grouping == 0 {
                return Err(Error::config("grouping must be at least 1"));
            }
            if p.len() % p.grouping != 0 {
                return Err(Error::config(format!(
                    "partition [{}, {}) of {} bins is not divisible by grouping {}",
                    p.start,
                    p.end,
                    p.len(),
                    p.grouping
                )));
            }
        }
        Ok(())
    }

    fn partitions_unchecked(&self) -> Vec<Partition> {
        let mut bounds = Vec::with_capacity(self.cutoffs.len() + 2);
        bounds.push(0);
        bounds.extend_from_slice(&self.cutoffs);
        bounds.push(self.num_bins);
        bounds
            .windows(2)
            .zip(self.groupings.iter().zip(&self.filter_orders))
            .map(|(w, (&grouping, &order))| Partition { start: w[0], end: w[1], grouping, order })
            .collect()
    }

    pub fn partitions(&self) -> Vec<Partition> {
        self.partitions_unchecked()
    }

    /// Groups in ascending frequency order.
    pub fn groups(&self) -> Vec<SubbandGroup> {
        let mut out = Vec::new();
        for (k, p) in self.partitions().iter().enumerate() {
            for g in 0..p.num_groups() {
                out.push(SubbandGroup { partition: k, start: p.start + g * p.grouping, width: p.grouping });
            }
        }
        out
    }

    /// Feature length of a group in partition `k`.
    pub fn input_len(&self, k: usize) -> usize {
        2 * self.context + 2 * self.groupings[k]
    }

    /// Readout width of partition `k`: `2 g (d + 1)`.
    pub fn logits_len(&self, k: usize) -> usize {
        2 * self.groupings[k] * (self.filter_orders[k] + 1)
    }

    pub fn max_order(&self) -> usize {
        self.filter_orders.iter().copied().max().unwrap_or(0)
    }
}

/// Writes the feature vector of `group` for one frame:
/// `[N lower context magnitudes, g magnitudes, g embedding values, N upper context magnitudes]`.
/// Context bins outside the spectrum are zero.
pub fn build_subband_input(mag: &[f64], emb: &[f64], context: usize, group: &SubbandGroup, out: &mut [f64]) {
    let f = mag.len();
    let g = group.width;
    debug_assert_eq!(out.len(), 2 * context + 2 * g);
    for i in 0..context {
        let lower = group.start as isize - context as isize + i as isize;
        out[i] = if lower >= 0 { mag[lower as usize] } else { 0.0 };
        let upper = group.start + g + i;
        out[context + 2 * g + i] = if upper < f { mag[upper] } else { 0.0 };
    }
    out[context..context + g].copy_from_slice(&mag[group.bins()]);
    out[context + g..context + 2 * g].copy_from_slice(&emb[group.bins()]);
}

/// Position of the embedding value of in-group bin `m` within the feature vector.
pub fn embedding_slot(context: usize, width: usize, m: usize) -> usize {
    context + width + m
}

/// Multiply-accumulate count of one frame of the sub-band stage for dense
/// evaluation: per group, input and recurrent projections of every layer
/// plus the readout.
pub fn subband_macs_per_frame(scheme: &PartitionScheme, widths: &[Vec<usize>]) -> u64 {
    scheme
        .partitions()
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let mut prev = scheme.input_len(k);
            let mut per_group = 0u64;
            for &w in &widths[k] {
                per_group += (prev * w + w * w) as u64;
                prev = w;
            }
            per_group += (prev * scheme.logits_len(k)) as u64;
            per_group * p.num_groups() as u64
        })
        .sum()
}
