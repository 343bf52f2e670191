//! Sparse synapse storage, pair-based STDP, eligibility traces and the
//! reward-modulated (R-max) weight update.

use std::fmt::Write as _;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::neuron::{Polarity, SpikeHistory};
use crate::params::{RstdpParams, StdpParams};

/// Pair-based STDP window.
///
/// `delta_t_ms` is `t_pre - t_post`: negative when the presynaptic spike
/// came first, which potentiates.
pub fn stdp_delta(delta_t_ms: f64, p: &StdpParams) -> f64 {
    if delta_t_ms < 0.0 && delta_t_ms > -p.tau_w_ms {
        p.a_plus * (delta_t_ms / p.tau_s_ms).exp()
    } else if delta_t_ms > 0.0 && delta_t_ms < p.tau_w_ms {
        -p.a_minus * (-delta_t_ms / p.tau_s_ms).exp()
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlasticityMode {
    Off,
    /// STDP outcomes go straight into the weights.
    Stdp,
    /// STDP outcomes accumulate in eligibility traces; weights move only
    /// under a reward signal.
    Rstdp,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Synapse {
    pub pre: u32,
    pub post: u32,
    pub weight: f64,
    pub eligibility: f64,
}

/// Eligibility magnitudes below this are flushed to zero.
const ELIGIBILITY_FLOOR: f64 = 1e-12;

fn key(pre: u32, post: u32) -> u64 {
    (u64::from(pre) << 32) | u64::from(post)
}

/// Sparse `(pre, post) -> {weight, eligibility}` map. Entries exist only for
/// pairs that have been instantiated; insertion order is preserved so that
/// every traversal is deterministic.
#[derive(Clone, Debug, Default)]
pub struct SynapseTable {
    synapses: Vec<Synapse>,
    index: FxHashMap<u64, u32>,
    outgoing: Vec<Vec<u32>>,
    eligible: Vec<u32>,
    is_eligible: Vec<bool>,
}

impl PartialEq for SynapseTable {
    fn eq(&self, other: &Self) -> bool {
        self.synapses.len() == other.synapses.len()
            && self.synapses.iter().zip(&other.synapses).all(|(a, b)| {
                a.pre == b.pre
                    && a.post == b.post
                    && a.weight.to_bits() == b.weight.to_bits()
                    && a.eligibility.to_bits() == b.eligibility.to_bits()
            })
    }
}

impl SynapseTable {
    pub fn new(neurons: usize) -> Self {
        Self { outgoing: vec![Vec::new(); neurons], ..Default::default() }
    }

    /// Rebuild a table from its entries in insertion order.
    pub fn from_synapses(neurons: usize, synapses: Vec<Synapse>) -> Self {
        let mut table = Self::new(neurons);
        for s in synapses {
            let id = table.insert(s.pre, s.post, s.weight);
            if s.eligibility != 0.0 {
                table.synapses[id as usize].eligibility = s.eligibility;
                table.mark_eligible(id);
            }
        }
        table
    }

    pub fn neurons(&self) -> usize {
        self.outgoing.len()
    }

    pub fn len(&self) -> usize {
        self.synapses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.synapses.is_empty()
    }

    pub fn synapses(&self) -> &[Synapse] {
        &self.synapses
    }

    pub fn get(&self, pre: u32, post: u32) -> Option<&Synapse> {
        self.index.get(&key(pre, post)).map(|&id| &self.synapses[id as usize])
    }

    pub fn weight(&self, pre: u32, post: u32) -> f64 {
        self.get(pre, post).map_or(0.0, |s| s.weight)
    }

    /// Instantiate (or overwrite) a synapse.
    pub fn insert(&mut self, pre: u32, post: u32, weight: f64) -> u32 {
        if let Some(&id) = self.index.get(&key(pre, post)) {
            self.synapses[id as usize].weight = weight;
            return id;
        }
        let id = self.synapses.len() as u32;
        self.synapses.push(Synapse { pre, post, weight, eligibility: 0.0 });
        self.is_eligible.push(false);
        self.index.insert(key(pre, post), id);
        self.outgoing[pre as usize].push(id);
        id
    }

    /// Add `unit * w` into `input[post]` for every synapse leaving `pre`.
    #[inline]
    pub(crate) fn propagate(&self, pre: u32, unit: f64, input: &mut [f64]) {
        for &id in &self.outgoing[pre as usize] {
            let s = &self.synapses[id as usize];
            input[s.post as usize] += unit * s.weight;
        }
    }

    pub fn outgoing(&self, pre: u32) -> impl Iterator<Item = &Synapse> + '_ {
        self.outgoing[pre as usize].iter().map(move |&id| &self.synapses[id as usize])
    }

    fn mark_eligible(&mut self, id: u32) {
        if !self.is_eligible[id as usize] {
            self.is_eligible[id as usize] = true;
            self.eligible.push(id);
        }
    }

    /// Number of synapses currently carrying a non-zero eligibility trace.
    pub fn eligible_count(&self) -> usize {
        self.eligible.len()
    }

    #[allow(clippy::too_many_arguments)]
    fn apply_delta(
        &mut self,
        pre: u32,
        post: u32,
        delta: f64,
        create: bool,
        mode: PlasticityMode,
        polarity: &[Polarity],
        w_max: f64,
    ) {
        let id = match self.index.get(&key(pre, post)) {
            Some(&id) => id,
            None if create => self.insert(pre, post, 0.0),
            None => return,
        };
        match mode {
            PlasticityMode::Off => {}
            PlasticityMode::Stdp => {
                let sign = polarity[pre as usize].sign();
                let s = &mut self.synapses[id as usize];
                s.weight = sign * (s.weight.abs() + delta).clamp(0.0, w_max);
            }
            PlasticityMode::Rstdp => {
                self.synapses[id as usize].eligibility += delta;
                self.mark_eligible(id);
            }
        }
    }

    /// Nearest-neighbour pairing for the neurons in `fired` (the spikes of
    /// step `step`) against the most recent spikes recorded in `history`.
    ///
    /// A postsynaptic spike pairs with each partner's latest earlier spike
    /// and instantiates the synapse on demand; a presynaptic spike only
    /// depresses synapses that already exist. Partners that also fire in
    /// this step contribute nothing (Δt = 0). `history` must not yet
    /// contain this step.
    #[allow(clippy::too_many_arguments)]
    pub fn on_spike_pairing(
        &mut self,
        fired: &[u32],
        step: u64,
        dt_ms: f64,
        history: &SpikeHistory,
        polarity: &[Polarity],
        stdp: &StdpParams,
        mode: PlasticityMode,
    ) {
        if mode == PlasticityMode::Off || fired.is_empty() {
            return;
        }
        for &i in fired {
            for (s, list) in history.recent() {
                let lag = (step - s) as f64 * dt_ms;
                if lag >= stdp.tau_w_ms {
                    continue;
                }
                let potentiation = stdp_delta(-lag, stdp);
                let depression = stdp_delta(lag, stdp);
                for &j in list {
                    if j == i || history.last_spike(j) != Some(*s) || history.fired_now(j) {
                        continue;
                    }
                    // j fired first: j -> i potentiates, i -> j depresses.
                    self.apply_delta(j, i, potentiation, true, mode, polarity, stdp.w_max);
                    self.apply_delta(i, j, depression, false, mode, polarity, stdp.w_max);
                }
            }
        }
    }

    /// One Euler step of `de/dt = -e / τ_e` on every non-zero trace.
    pub fn decay_eligibility(&mut self, dt_ms: f64, tau_e_ms: f64) {
        let synapses = &mut self.synapses;
        let flags = &mut self.is_eligible;
        self.eligible.retain(|&id| {
            let s = &mut synapses[id as usize];
            s.eligibility += dt_ms * (-s.eligibility / tau_e_ms);
            if s.eligibility.abs() < ELIGIBILITY_FLOOR {
                s.eligibility = 0.0;
                flags[id as usize] = false;
                false
            } else {
                true
            }
        });
    }

    /// R-max update: every synapse's magnitude moves by `η·R·e`, clamped to
    /// `[0, w_max]` with the sign of its source neuron.
    pub fn apply_rstdp(&mut self, reward: f64, rstdp: &RstdpParams, polarity: &[Polarity], w_max: f64) {
        if reward == 0.0 {
            return;
        }
        for &id in &self.eligible {
            let s = &mut self.synapses[id as usize];
            let sign = polarity[s.pre as usize].sign();
            s.weight = sign * (s.weight.abs() + rstdp.eta * reward * s.eligibility).clamp(0.0, w_max);
        }
    }

    /// Zero every eligibility trace.
    pub fn clear_eligibility(&mut self) {
        for &id in &self.eligible {
            self.synapses[id as usize].eligibility = 0.0;
            self.is_eligible[id as usize] = false;
        }
        self.eligible.clear();
    }

    /// Sum of weights from `from` to every neuron flagged in `to_mask`,
    /// split into (excitatory-source sum, inhibitory-source sum).
    pub fn group_sums(&self, from: &[u32], to_mask: &[bool], polarity: &[Polarity]) -> (f64, f64) {
        let mut exc = 0.0;
        let mut inh = 0.0;
        for &pre in from {
            for s in self.outgoing(pre) {
                if to_mask[s.post as usize] {
                    match polarity[pre as usize] {
                        Polarity::Excitatory => exc += s.weight,
                        Polarity::Inhibitory => inh += s.weight,
                    }
                }
            }
        }
        (exc, inh)
    }

    /// CRC32 over every (pre, post, weight, eligibility) in insertion order.
    pub fn digest(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for s in &self.synapses {
            h.update(&s.pre.to_le_bytes());
            h.update(&s.post.to_le_bytes());
            h.update(&s.weight.to_bits().to_le_bytes());
            h.update(&s.eligibility.to_bits().to_le_bytes());
        }
        h.finalize()
    }

    /// CSV with header `pre_id,post_id,weight,eligibility`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pre_id,post_id,weight,eligibility\n");
        for s in &self.synapses {
            let _ = writeln!(out, "{},{},{},{}", s.pre, s.post, s.weight, s.eligibility);
        }
        out
    }
}

/// Piecewise reward signal driven by the latest reward and punishment times.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardSchedule {
    pub last_reward_ms: Option<f64>,
    pub last_punish_ms: Option<f64>,
}

impl RewardSchedule {
    pub fn reward_at(&mut self, t_ms: f64) {
        self.last_reward_ms = Some(t_ms);
    }

    pub fn punish_at(&mut self, t_ms: f64) {
        self.last_punish_ms = Some(t_ms);
    }
}

/// `C_p` inside a punishment window, else `C_r` inside a reward window,
/// else 0. Punishment wins when both windows cover `t`.
pub fn reward_signal(t_ms: f64, schedule: &RewardSchedule, p: &RstdpParams) -> f64 {
    let within = |t0: Option<f64>| t0.is_some_and(|t0| t_ms >= t0 && t_ms - t0 <= p.t_r_ms);
    if within(schedule.last_punish_ms) {
        p.c_p
    } else if within(schedule.last_reward_ms) {
        p.c_r
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const E: Polarity = Polarity::Excitatory;

    fn stdp() -> StdpParams {
        StdpParams::default()
    }

    #[test]
    fn window_values() {
        let p = stdp();
        assert!((stdp_delta(-10.0, &p) - 1.1 * (-1.0f64 / 3.0).exp()).abs() < 1e-15);
        assert!((stdp_delta(10.0, &p) + 0.95 * (-1.0f64 / 3.0).exp()).abs() < 1e-15);
        assert!((stdp_delta(-10.0, &p) - 0.78818).abs() < 1e-5);
        assert!((stdp_delta(10.0, &p) + 0.68070).abs() < 1e-5);
        assert_eq!(stdp_delta(-25.0, &p), 0.0);
        assert_eq!(stdp_delta(0.0, &p), 0.0);
        assert_eq!(stdp_delta(20.0, &p), 0.0);
        assert_eq!(stdp_delta(-20.0, &p), 0.0);
    }

    proptest! {
        #[test]
        fn window_sign_and_monotone_decay(x in 0.01f64..19.99, y in 0.01f64..19.99) {
            let p = stdp();
            prop_assert!(stdp_delta(-x, &p) > 0.0);
            prop_assert!(stdp_delta(x, &p) < 0.0);
            if x < y {
                prop_assert!(stdp_delta(-x, &p).abs() > stdp_delta(-y, &p).abs());
                prop_assert!(stdp_delta(x, &p).abs() > stdp_delta(y, &p).abs());
            }
        }

        #[test]
        fn weights_stay_within_bounds(
            updates in proptest::collection::vec((0u32..4, 0u32..4, -30.0f64..30.0, any::<bool>()), 1..60)
        ) {
            let polarity = [E, Polarity::Inhibitory, E, Polarity::Inhibitory];
            let p = stdp();
            let r = RstdpParams::default();
            let mut t = SynapseTable::new(4);
            for (pre, post, delta, rewarded) in updates {
                if pre == post { continue; }
                if rewarded {
                    t.apply_delta(pre, post, delta / 10.0, true, PlasticityMode::Rstdp, &polarity, p.w_max);
                    t.apply_rstdp(delta.signum() * 10.0, &r, &polarity, p.w_max);
                } else {
                    t.apply_delta(pre, post, delta, true, PlasticityMode::Stdp, &polarity, p.w_max);
                }
            }
            for s in t.synapses() {
                match polarity[s.pre as usize] {
                    Polarity::Excitatory => prop_assert!((0.0..=p.w_max).contains(&s.weight)),
                    Polarity::Inhibitory => prop_assert!((-p.w_max..=0.0).contains(&s.weight)),
                }
            }
        }
    }

    fn history_with(spikes: &[(u32, u64)], neurons: usize) -> SpikeHistory {
        let mut h = SpikeHistory::new(neurons);
        let mut steps: Vec<u64> = spikes.iter().map(|s| s.1).collect();
        steps.sort_unstable();
        steps.dedup();
        for s in steps {
            let fired: Vec<u32> = spikes.iter().filter(|x| x.1 == s).map(|x| x.0).collect();
            h.record(s, &fired, 1.0, 20.0);
        }
        h
    }

    #[test]
    fn no_spikes_leaves_table_unchanged() {
        let mut t = SynapseTable::new(2);
        t.insert(0, 1, 1.0);
        let before = t.clone();
        let h = history_with(&[(0, 3)], 2);
        t.on_spike_pairing(&[], 10, 1.0, &h, &[E, E], &stdp(), PlasticityMode::Stdp);
        assert_eq!(t, before);
    }

    #[test]
    fn pre_then_post_potentiates() {
        let mut t = SynapseTable::new(2);
        t.insert(0, 1, 1.0);
        let h = history_with(&[(0, 10)], 2);
        t.on_spike_pairing(&[1], 20, 1.0, &h, &[E, E], &stdp(), PlasticityMode::Stdp);
        assert!((t.weight(0, 1) - (1.0 + stdp_delta(-10.0, &stdp()))).abs() < 1e-12);
    }

    #[test]
    fn post_then_pre_depresses() {
        let mut t = SynapseTable::new(2);
        t.insert(0, 1, 1.0);
        let h = history_with(&[(1, 10)], 2);
        t.on_spike_pairing(&[0], 20, 1.0, &h, &[E, E], &stdp(), PlasticityMode::Stdp);
        assert!((t.weight(0, 1) - (1.0 - stdp_delta(10.0, &stdp()).abs())).abs() < 1e-12);
    }

    #[test]
    fn pairing_instantiates_missing_synapse_only_on_potentiation() {
        let mut t = SynapseTable::new(2);
        let h = history_with(&[(1, 10)], 2);
        t.on_spike_pairing(&[0], 20, 1.0, &h, &[E, E], &stdp(), PlasticityMode::Stdp);
        assert!(t.get(0, 1).is_none());
        assert!(t.weight(1, 0) > 0.0);
        let mut t = SynapseTable::new(2);
        let h = history_with(&[(0, 10)], 2);
        t.on_spike_pairing(&[1], 20, 1.0, &h, &[E, E], &stdp(), PlasticityMode::Stdp);
        assert_eq!(t.len(), 1);
        assert!(t.weight(0, 1) > 0.0);
    }

    #[test]
    fn nearest_neighbour_uses_latest_presynaptic_spike() {
        let mut t = SynapseTable::new(2);
        let h = history_with(&[(0, 2), (0, 15)], 2);
        t.on_spike_pairing(&[1], 20, 1.0, &h, &[E, E], &stdp(), PlasticityMode::Stdp);
        assert!((t.weight(0, 1) - stdp_delta(-5.0, &stdp())).abs() < 1e-12);
    }

    #[test]
    fn inhibitory_source_grows_in_magnitude() {
        let mut t = SynapseTable::new(2);
        let h = history_with(&[(0, 10)], 2);
        let pol = [Polarity::Inhibitory, E];
        t.on_spike_pairing(&[1], 20, 1.0, &h, &pol, &stdp(), PlasticityMode::Stdp);
        assert!((t.weight(0, 1) + stdp_delta(-10.0, &stdp())).abs() < 1e-12);
    }

    #[test]
    fn rstdp_pairing_feeds_eligibility_not_weight() {
        let mut t = SynapseTable::new(2);
        let h = history_with(&[(0, 10)], 2);
        t.on_spike_pairing(&[1], 20, 1.0, &h, &[E, E], &stdp(), PlasticityMode::Rstdp);
        let s = t.get(0, 1).unwrap();
        assert_eq!(s.weight, 0.0);
        assert_eq!(s.eligibility, stdp_delta(-10.0, &stdp()));
    }

    #[test]
    fn eligibility_decay_examples() {
        let mut t = SynapseTable::new(2);
        t.insert(0, 1, 0.0);
        t.decay_eligibility(1.0, 100.0);
        assert_eq!(t.get(0, 1).unwrap().eligibility, 0.0);

        let mut t = SynapseTable::from_synapses(2, vec![Synapse { pre: 0, post: 1, weight: 0.0, eligibility: 1.0 }]);
        t.decay_eligibility(1.0, 100.0);
        assert!((t.get(0, 1).unwrap().eligibility - 0.99).abs() < 1e-15);
    }

    #[test]
    fn rstdp_update_is_reward_times_trace() {
        let pol = [E, E];
        let r = RstdpParams { eta: 1.0, ..RstdpParams::default() };
        let mut t = SynapseTable::from_synapses(2, vec![Synapse { pre: 0, post: 1, weight: 1.0, eligibility: 0.05 }]);
        t.apply_rstdp(0.0, &r, &pol, 5.0);
        assert_eq!(t.weight(0, 1), 1.0);
        t.apply_rstdp(10.0, &r, &pol, 5.0);
        assert!((t.weight(0, 1) - 1.5).abs() < 1e-12);
        t.apply_rstdp(-10.0, &r, &pol, 5.0);
        assert!((t.weight(0, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reward_branches() {
        let p = RstdpParams::default();
        let s = RewardSchedule { last_reward_ms: Some(100.0), last_punish_ms: Some(200.0) };
        assert_eq!(reward_signal(103.0, &s, &p), 10.0);
        assert_eq!(reward_signal(202.0, &s, &p), -10.0);
        assert_eq!(reward_signal(150.0, &s, &p), 0.0);
        assert_eq!(reward_signal(99.0, &s, &p), 0.0);
        let both = RewardSchedule { last_reward_ms: Some(100.0), last_punish_ms: Some(102.0) };
        assert_eq!(reward_signal(104.0, &both, &p), -10.0);
        assert_eq!(reward_signal(101.0, &both, &p), 10.0);
        assert_eq!(reward_signal(0.0, &RewardSchedule::default(), &p), 0.0);
    }

    #[test]
    fn csv_export_and_digest() {
        let mut t = SynapseTable::new(3);
        t.insert(2, 0, 0.5);
        assert_eq!(t.to_csv(), "pre_id,post_id,weight,eligibility\n2,0,0.5,0\n");
        let d = t.digest();
        t.insert(2, 0, 0.25);
        assert_ne!(d, t.digest());
    }
}
