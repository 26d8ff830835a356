//! Neuromorphic cost accounting and activity statistics.
//!
//! Counters are integers (spike totals, fixed-point decay sums) so partial
//! accumulators merge exactly in any order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Network steps per second of audio (one step per 8 ms hop).
pub const STEPS_PER_SECOND: f64 = 125.0;
/// Default end-to-end latency used for the PDP proxy: 32 ms window plus
/// 0.02 ms encode/decode.
pub const DEFAULT_LATENCY_S: f64 = 0.03202;

pub const FIRING_BUCKETS: usize = 10;
pub const DECAY_BUCKETS: usize = 20;

/// Fixed-point scale for exact decay sums.
const DECAY_FIXED: f64 = (1u64 << 32) as f64;

/// One spiking layer. `instances` copies share parameters but not state
/// (sub-band groups).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerTopology {
    pub name: String,
    pub neurons: usize,
    /// Feed-forward fan-out per neuron (`N^{l+1}`).
    pub fan_out: usize,
    pub has_recurrence: bool,
    pub instances: usize,
}

impl LayerTopology {
    /// Outgoing synapses per neuron.
    pub fn synapses_per_spike(&self) -> usize {
        self.fan_out + if self.has_recurrence { self.neurons } else { 0 }
    }

    pub fn total_neurons(&self) -> usize {
        self.neurons * self.instances
    }
}

/// Dense (non-spiking) projection: network inputs and membrane readouts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseTopology {
    pub name: String,
    pub inputs: usize,
    pub outputs: usize,
    pub instances: usize,
    /// Readouts hold state and count as neurons; input projections do not.
    pub is_readout: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub layers: Vec<LayerTopology>,
    pub dense: Vec<DenseTopology>,
}

impl Topology {
    pub fn validate(&self) -> Result<()> {
        for l in &self.layers {
            if l.neurons == 0 || l.instances == 0 {
                return Err(Error::Invalid(format!("layer {} has no neurons", l.name)));
            }
        }
        Ok(())
    }
}

/// `sum_l sum_i R_i^l (N^{l+1} + N^l)` with `R_i^l` the total spike count of
/// neuron `i`. `spike_totals[l]` lists every neuron of every instance of layer `l`.
pub fn count_synops(topology: &Topology, spike_totals: &[Vec<u64>]) -> Result<u64> {
    if spike_totals.len() != topology.layers.len() {
        return Err(Error::shape(format!(
            "{} spike totals for {} layers",
            spike_totals.len(),
            topology.layers.len()
        )));
    }
    let mut total = 0u64;
    for (l, counts) in topology.layers.iter().zip(spike_totals) {
        if counts.len() != l.total_neurons() {
            return Err(Error::shape(format!(
                "layer {} has {} neurons, got {} totals",
                l.name,
                l.total_neurons(),
                counts.len()
            )));
        }
        total += counts.iter().sum::<u64>() * l.synapses_per_spike() as u64;
    }
    Ok(total)
}

/// `sum_l N^l` per step times `steps`.
pub fn count_neuronops(topology: &Topology, steps: u64) -> u64 {
    topology.layers.iter().map(|l| l.total_neurons() as u64).sum::<u64>() * steps
}

/// Per-step multiply-accumulates and neuron updates of the dense projections.
pub fn dense_ops_per_step(topology: &Topology) -> (u64, u64) {
    let macs = topology.dense.iter().map(|d| (d.inputs * d.outputs * d.instances) as u64).sum();
    let neurons = topology.dense.iter().filter(|d| d.is_readout).map(|d| (d.outputs * d.instances) as u64).sum();
    (macs, neurons)
}

/// `(synops + 10 neuronops) / seconds`.
pub fn power_proxy(synops: f64, neuronops: f64, audio_seconds: f64) -> Result<f64> {
    if !(audio_seconds > 0.0) {
        return Err(Error::Invalid("power proxy needs a positive audio duration".into()));
    }
    Ok((synops + 10.0 * neuronops) / audio_seconds)
}

pub fn pdp_proxy(power_proxy: f64, latency_s: f64) -> f64 {
    power_proxy * latency_s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpClass {
    /// Accumulate (spiking networks).
    Ac,
    /// Multiply-accumulate (conventional networks).
    Mac,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostModel {
    pub cost_syn_pj: f64,
    /// NeuronOP cost in SynOP equivalents.
    pub cost_neuron_equiv: f64,
    pub cost_mac_pj: f64,
    pub cost_ac_pj: f64,
    /// Class billed for spiking-network PDP ops.
    pub spiking_class: OpClass,
}

impl Default for CostModel {
    fn default() -> Self {
        Self { cost_syn_pj: 0.9, cost_neuron_equiv: 10.0, cost_mac_pj: 4.6, cost_ac_pj: 0.9, spiking_class: OpClass::Ac }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        let all = [self.cost_syn_pj, self.cost_neuron_equiv, self.cost_mac_pj, self.cost_ac_pj];
        if all.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(Error::config("cost model entries must be positive"));
        }
        Ok(())
    }

    pub fn energy_per_op_j(&self, class: OpClass) -> f64 {
        1e-12
            * match class {
                OpClass::Ac => self.cost_ac_pj,
                OpClass::Mac => self.cost_mac_pj,
            }
    }
}

pub fn energy_cost(pdp_ops: f64, class: OpClass, model: &CostModel) -> f64 {
    pdp_ops * model.energy_per_op_j(class)
}

/// Activity of one spiking layer across all its instances.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerActivity {
    pub spike_totals: Vec<u64>,
    pub decay_hist: [u64; DECAY_BUCKETS],
    /// Sum of decays in units of `2^-32`.
    pub decay_sum: u128,
    pub decay_sumsq: u128,
}

impl LayerActivity {
    fn new(neurons: usize) -> Self {
        Self { spike_totals: vec![0; neurons], decay_hist: [0; DECAY_BUCKETS], decay_sum: 0, decay_sumsq: 0 }
    }

    pub fn decay_count(&self) -> u64 {
        self.decay_hist.iter().sum()
    }
}

pub fn decay_bucket(lambda: f64) -> usize {
    ((lambda * DECAY_BUCKETS as f64).floor().max(0.0) as usize).min(DECAY_BUCKETS - 1)
}

fn rate_bucket(rate: f64) -> usize {
    ((rate * FIRING_BUCKETS as f64).floor().max(0.0) as usize).min(FIRING_BUCKETS - 1)
}

/// Mergeable activity counters for any number of utterances.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivityAccumulator {
    pub layers: Vec<LayerActivity>,
    /// Decays are recorded only for layers with gated dynamics.
    pub gated: Vec<bool>,
    pub steps: u64,
    /// Histogram of per-utterance mean firing rates.
    pub sample_hist: [u64; FIRING_BUCKETS],
    current_spikes: u64,
    current_steps: u64,
}

impl ActivityAccumulator {
    pub fn new(topology: &Topology, gated: Vec<bool>) -> Self {
        Self {
            layers: topology.layers.iter().map(|l| LayerActivity::new(l.total_neurons())).collect(),
            gated,
            steps: 0,
            sample_hist: [0; FIRING_BUCKETS],
            current_spikes: 0,
            current_steps: 0,
        }
    }

    /// Records spikes of layer `l`, instance `instance` for one step.
    pub fn record_spikes(&mut self, l: usize, instance: usize, spikes: &[f64]) {
        let n = spikes.len();
        let totals = &mut self.layers[l].spike_totals[instance * n..(instance + 1) * n];
        for (t, &s) in totals.iter_mut().zip(spikes) {
            if s != 0.0 {
                *t += 1;
                self.current_spikes += 1;
            }
        }
    }

    pub fn record_decays(&mut self, l: usize, decays: &[f64]) {
        if !self.gated[l] {
            return;
        }
        let a = &mut self.layers[l];
        for &d in decays {
            a.decay_hist[decay_bucket(d)] += 1;
            let q = (d * DECAY_FIXED).round() as u128;
            a.decay_sum += q;
            a.decay_sumsq += q * q;
        }
    }

    /// Marks the end of one network step.
    pub fn end_step(&mut self) {
        self.steps += 1;
        self.current_steps += 1;
    }

    /// Closes the current utterance and bins its mean firing rate.
    pub fn end_sample(&mut self, total_neurons: usize) {
        if self.current_steps > 0 && total_neurons > 0 {
            let rate = self.current_spikes as f64 / (self.current_steps as f64 * total_neurons as f64);
            self.sample_hist[rate_bucket(rate)] += 1;
        }
        self.current_spikes = 0;
        self.current_steps = 0;
    }

    pub fn merge(&mut self, other: &ActivityAccumulator) -> Result<()> {
        if self.layers.len() != other.layers.len()
            || self.layers.iter().zip(&other.layers).any(|(a, b)| a.spike_totals.len() != b.spike_totals.len())
        {
            return Err(Error::shape("cannot merge accumulators of different topologies"));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.spike_totals.iter_mut().zip(&b.spike_totals) {
                *x += y;
            }
            for (x, y) in a.decay_hist.iter_mut().zip(&b.decay_hist) {
                *x += y;
            }
            a.decay_sum += b.decay_sum;
            a.decay_sumsq += b.decay_sumsq;
        }
        for (x, y) in self.sample_hist.iter_mut().zip(&other.sample_hist) {
            *x += y;
        }
        self.steps += other.steps;
        self.current_spikes += other.current_spikes;
        self.current_steps += other.current_steps;
        Ok(())
    }

    pub fn spike_totals(&self) -> Vec<Vec<u64>> {
        self.layers.iter().map(|l| l.spike_totals.clone()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiringStats {
    /// Distribution of per-neuron mean rates over 10 equal buckets of `[0, 1]`.
    pub neuron_hist: Vec<f64>,
    pub sample_hist: Vec<f64>,
    pub silent_fraction: f64,
    pub below_0_2_fraction: f64,
}

pub fn firing_stats(acc: &ActivityAccumulator) -> FiringStats {
    let mut hist = [0u64; FIRING_BUCKETS];
    let (mut silent, mut low, mut total) = (0u64, 0u64, 0u64);
    for l in &acc.layers {
        for &c in &l.spike_totals {
            let rate = if acc.steps > 0 { c as f64 / acc.steps as f64 } else { 0.0 };
            hist[rate_bucket(rate)] += 1;
            silent += (c == 0) as u64;
            low += (rate < 0.2) as u64;
            total += 1;
        }
    }
    let norm = |h: &[u64]| {
        let s: u64 = h.iter().sum();
        h.iter().map(|&c| if s > 0 { c as f64 / s as f64 } else { 0.0 }).collect::<Vec<f64>>()
    };
    let frac = |c: u64| if total > 0 { c as f64 / total as f64 } else { 0.0 };
    FiringStats {
        neuron_hist: norm(&hist),
        sample_hist: norm(&acc.sample_hist),
        silent_fraction: frac(silent),
        below_0_2_fraction: frac(low),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayStats {
    /// Normalized histogram over 20 equal buckets of `[0, 1]`.
    pub hist: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
    pub count: u64,
}

impl DecayStats {
    /// Mass in `[lo, hi)` measured on bucket boundaries.
    pub fn mass_between(&self, lo: f64, hi: f64) -> f64 {
        let w = 1.0 / DECAY_BUCKETS as f64;
        self.hist
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let start = *i as f64 * w;
                start >= lo - 1e-12 && start + w <= hi + 1e-12
            })
            .map(|(_, m)| m)
            .sum()
    }
}

pub fn decay_stats(acc: &ActivityAccumulator) -> Result<DecayStats> {
    if !acc.gated.iter().any(|&g| g) {
        return Err(Error::Invalid("no gated layers to collect decay statistics from".into()));
    }
    let mut hist = [0u64; DECAY_BUCKETS];
    let (mut sum, mut sumsq) = (0u128, 0u128);
    for (l, &g) in acc.layers.iter().zip(&acc.gated) {
        if g {
            for (h, c) in hist.iter_mut().zip(&l.decay_hist) {
                *h += c;
            }
            sum += l.decay_sum;
            sumsq += l.decay_sumsq;
        }
    }
    let count: u64 = hist.iter().sum();
    if count == 0 {
        return Err(Error::Invalid("no decay values recorded".into()));
    }
    let n = count as f64;
    let mean = sum as f64 / DECAY_FIXED / n;
    let variance = (sumsq as f64 / (DECAY_FIXED * DECAY_FIXED) / n - mean * mean).max(0.0);
    Ok(DecayStats { hist: hist.iter().map(|&c| c as f64 / n).collect(), mean, variance, count })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    pub synops: f64,
    pub neuronops: f64,
    /// Ops per second of audio.
    pub power_proxy: f64,
    pub pdp_proxy: f64,
    pub energy_j: f64,
    pub latency_s: f64,
    pub audio_seconds: f64,
    pub steps: u64,
    pub firing_histogram: Vec<f64>,
    pub sample_rate_hist: Vec<f64>,
    pub silent_fraction: f64,
    pub below_0_2_fraction: f64,
    pub decay_histogram: Vec<f64>,
    pub decay_mean: Option<f64>,
    pub decay_variance: Option<f64>,
    /// Dense input projections and readouts, kept apart from the spiking figures.
    pub dense_macs: f64,
    pub dense_neuronops: f64,
    pub dense_power_proxy: f64,
}

pub fn build_report(
    topology: &Topology,
    acc: &ActivityAccumulator,
    audio_seconds: f64,
    latency_s: f64,
    cost: &CostModel,
) -> Result<PowerReport> {
    let synops = count_synops(topology, &acc.spike_totals())? as f64;
    let neuronops = count_neuronops(topology, acc.steps) as f64;
    let power = power_proxy(synops, neuronops, audio_seconds)?;
    let pdp = pdp_proxy(power, latency_s);
    let firing = firing_stats(acc);
    let decay = decay_stats(acc).ok();
    let (dense_macs, dense_neurons) = dense_ops_per_step(topology);
    let dense_macs = dense_macs as f64 * acc.steps as f64;
    let dense_neuronops = dense_neurons as f64 * acc.steps as f64;
    Ok(PowerReport {
        synops,
        neuronops,
        power_proxy: power,
        pdp_proxy: pdp,
        energy_j: energy_cost(pdp, cost.spiking_class, cost),
        latency_s,
        audio_seconds,
        steps: acc.steps,
        firing_histogram: firing.neuron_hist,
        sample_rate_hist: firing.sample_hist,
        silent_fraction: firing.silent_fraction,
        below_0_2_fraction: firing.below_0_2_fraction,
        decay_histogram: decay.as_ref().map(|d| d.hist.clone()).unwrap_or_default(),
        decay_mean: decay.as_ref().map(|d| d.mean),
        decay_variance: decay.as_ref().map(|d| d.variance),
        dense_macs,
        dense_neuronops,
        dense_power_proxy: power_proxy(dense_macs, dense_neuronops, audio_seconds)?,
    })
}

impl PowerReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let row = |s: &mut String, k: &str, v: String| s.push_str(&format!("{k:<22}{v}\n"));
        row(&mut s, "audio (s)", format!("{:.3}", self.audio_seconds));
        row(&mut s, "SynOPs", format!("{:.0}", self.synops));
        row(&mut s, "NeuronOPs", format!("{:.0}", self.neuronops));
        row(&mut s, "power proxy (M-Ops/s)", format!("{:.3}", self.power_proxy / 1e6));
        row(&mut s, "latency (ms)", format!("{:.2}", self.latency_s * 1e3));
        row(&mut s, "PDP proxy (M-Ops)", format!("{:.4}", self.pdp_proxy / 1e6));
        row(&mut s, "energy (uJ)", format!("{:.4}", self.energy_j * 1e6));
        row(&mut s, "silent neurons", format!("{:.3}", self.silent_fraction));
        row(&mut s, "rate < 0.2", format!("{:.3}", self.below_0_2_fraction));
        if let (Some(m), Some(v)) = (self.decay_mean, self.decay_variance) {
            row(&mut s, "decay mean/var", format!("{m:.4} / {v:.6}"));
        }
        row(&mut s, "dense MACs", format!("{:.0}", self.dense_macs));
        row(&mut s, "dense power (M-Ops/s)", format!("{:.3}", self.dense_power_proxy / 1e6));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(neurons: usize, fan_out: usize, rec: bool) -> LayerTopology {
        LayerTopology { name: "l".into(), neurons, fan_out, has_recurrence: rec, instances: 1 }
    }

    #[test]
    fn synops_examples() {
        let topo = Topology { layers: vec![layer(2, 3, true)], dense: vec![] };
        assert_eq!(count_synops(&topo, &[vec![0, 0]]).unwrap(), 0);
        assert_eq!(count_synops(&topo, &[vec![1, 2]]).unwrap(), 15);
        let ff_only = Topology { layers: vec![layer(2, 3, false)], dense: vec![] };
        assert_eq!(count_synops(&ff_only, &[vec![1, 2]]).unwrap(), 9);
        assert!(count_synops(&topo, &[vec![1]]).is_err());
    }

    #[test]
    fn neuronops_examples() {
        let topo = Topology { layers: vec![layer(4, 4, true), layer(4, 2, true), layer(2, 1, true)], dense: vec![] };
        assert_eq!(count_neuronops(&topo, 1), 10);
        assert_eq!(count_neuronops(&topo, 10), 100);
    }

    #[test]
    fn proxies() {
        assert_eq!(power_proxy(7.5, 5.0, 1.0).unwrap(), 57.5);
        assert_eq!(power_proxy(15.0, 10.0, 2.0).unwrap(), 57.5);
        assert!(power_proxy(1.0, 1.0, 0.0).is_err());
        assert_eq!(pdp_proxy(5.0, 0.0), 0.0);
        let pdp = pdp_proxy(51.30e6, DEFAULT_LATENCY_S);
        assert!((pdp / 1.64e6 - 1.0).abs() < 0.01);
        let c = CostModel::default();
        assert!((energy_cost(1.64e6, OpClass::Ac, &c) / 1.48e-6 - 1.0).abs() < 0.01);
        assert!((energy_cost(2.72e6, OpClass::Mac, &c) / 12.51e-6 - 1.0).abs() < 0.01);
        assert_eq!(energy_cost(0.0, OpClass::Ac, &c), 0.0);
    }

    #[test]
    fn firing_examples() {
        let topo = Topology { layers: vec![layer(2, 1, true)], dense: vec![] };
        let mut acc = ActivityAccumulator::new(&topo, vec![false]);
        for _ in 0..4 {
            acc.record_spikes(0, 0, &[1.0, 0.0]);
            acc.end_step();
        }
        acc.end_sample(2);
        let f = firing_stats(&acc);
        assert_eq!(f.neuron_hist[0], 0.5);
        assert_eq!(f.neuron_hist[9], 0.5);
        assert_eq!(f.silent_fraction, 0.5);
        assert_eq!(f.sample_hist[5], 1.0);
        assert!(decay_stats(&acc).is_err());

        let mut quiet = ActivityAccumulator::new(&topo, vec![false]);
        quiet.end_step();
        assert_eq!(firing_stats(&quiet).silent_fraction, 1.0);
    }

    #[test]
    fn decay_statistics_and_merge() {
        let topo = Topology { layers: vec![layer(3, 1, true)], dense: vec![] };
        let mut a = ActivityAccumulator::new(&topo, vec![true]);
        let mut b = a.clone();
        a.record_decays(0, &[0.5, 0.5, 0.5]);
        b.record_decays(0, &[0.1, 0.9, 0.5]);
        let sa = decay_stats(&a).unwrap();
        assert_eq!(sa.hist[10], 1.0);
        assert!((sa.mass_between(0.45, 0.55) - 1.0).abs() < 1e-12);
        assert!(sa.variance.abs() < 1e-12);
        let mut ab = a.clone();
        ab.merge(&b).unwrap();
        let mut ba = b.clone();
        ba.merge(&a).unwrap();
        assert_eq!(ab, ba);
        let s = decay_stats(&ab).unwrap();
        assert!((s.hist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let vals = [0.5, 0.5, 0.5, 0.1, 0.9, 0.5];
        let mean = vals.iter().sum::<f64>() / 6.0;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 6.0;
        assert!((s.mean - mean).abs() < 1e-9 && (s.variance - var).abs() < 1e-9);
    }
}
