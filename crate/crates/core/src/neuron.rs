//! Clock-driven leaky integrate-and-fire population.
//!
//! Each step integrates `τ_m dV/dt = -(V - V_s) + I/g` with one explicit
//! Euler update, where `V_s = V_reset` and
//! `I = unit · Σ_j w_ji σ_j(t-1) + I_s(t)`. Spikes therefore reach their
//! targets one step after they are emitted.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{steps_in, NeuronParams};
use crate::plasticity::SynapseTable;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    #[default]
    Excitatory,
    Inhibitory,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Excitatory => 1.0,
            Polarity::Inhibitory => -1.0,
        }
    }
}

const NEVER: u64 = u64::MAX;

/// Latest spike step of every neuron plus the fired sets of the steps that
/// are still inside the pairing horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeHistory {
    last: Vec<u64>,
    recent: VecDeque<(u64, Vec<u32>)>,
    now: Vec<bool>,
}

impl SpikeHistory {
    pub fn new(neurons: usize) -> Self {
        Self { last: vec![NEVER; neurons], recent: VecDeque::new(), now: vec![false; neurons] }
    }

    pub fn last_spike(&self, neuron: u32) -> Option<u64> {
        match self.last[neuron as usize] {
            NEVER => None,
            s => Some(s),
        }
    }

    pub fn recent(&self) -> impl Iterator<Item = (&u64, &Vec<u32>)> {
        self.recent.iter().map(|(s, l)| (s, l))
    }

    pub(crate) fn fired_now(&self, neuron: u32) -> bool {
        self.now[neuron as usize]
    }

    /// Flag the spikes of the step being processed.
    pub(crate) fn begin_step(&mut self, fired: &[u32]) {
        for &n in fired {
            self.now[n as usize] = true;
        }
    }

    /// Commit the spikes of `step` and forget steps older than `horizon_ms`.
    pub fn record(&mut self, step: u64, fired: &[u32], dt_ms: f64, horizon_ms: f64) {
        for &n in fired {
            self.now[n as usize] = false;
            self.last[n as usize] = step;
        }
        if !fired.is_empty() {
            self.recent.push_back((step, fired.to_vec()));
        }
        while let Some(&(s, _)) = self.recent.front() {
            if (step + 1 - s) as f64 * dt_ms >= horizon_ms {
                self.recent.pop_front();
            } else {
                break;
            }
        }
    }

    pub fn clear(&mut self) {
        self.last.fill(NEVER);
        self.recent.clear();
        self.now.fill(false);
    }

    pub(crate) fn raw_last(&self) -> &[u64] {
        &self.last
    }

    pub(crate) fn from_parts(last: Vec<u64>, recent: Vec<(u64, Vec<u32>)>) -> Self {
        let n = last.len();
        Self { last, recent: recent.into(), now: vec![false; n] }
    }
}

/// Membrane variables of every neuron plus the simulation clock.
#[derive(Clone, Debug)]
pub struct NetworkState {
    pub v: Vec<f64>,
    pub refractory_steps: Vec<u32>,
    pub polarity: Vec<Polarity>,
    /// Neurons that fired in the most recent step, ascending.
    pub fired: Vec<u32>,
    pub history: SpikeHistory,
    /// Completed steps; the next step is stamped `step · dt`.
    pub step: u64,
    input: Vec<f64>,
}

impl PartialEq for NetworkState {
    fn eq(&self, other: &Self) -> bool {
        self.v.len() == other.v.len()
            && self.v.iter().zip(&other.v).all(|(a, b)| a.to_bits() == b.to_bits())
            && self.refractory_steps == other.refractory_steps
            && self.polarity == other.polarity
            && self.fired == other.fired
            && self.history == other.history
            && self.step == other.step
    }
}

impl NetworkState {
    /// Every neuron at rest (`V = V_reset`), excitatory, never fired.
    pub fn new(neurons: usize, p: &NeuronParams) -> Self {
        Self {
            v: vec![p.v_reset_mv; neurons],
            refractory_steps: vec![0; neurons],
            polarity: vec![Polarity::Excitatory; neurons],
            fired: Vec::new(),
            history: SpikeHistory::new(neurons),
            step: 0,
            input: vec![0.0; neurons],
        }
    }

    pub(crate) fn from_parts(
        v: Vec<f64>,
        refractory_steps: Vec<u32>,
        polarity: Vec<Polarity>,
        fired: Vec<u32>,
        history: SpikeHistory,
        step: u64,
    ) -> Self {
        let n = v.len();
        Self { v, refractory_steps, polarity, fired, history, step, input: vec![0.0; n] }
    }

    pub fn neurons(&self) -> usize {
        self.v.len()
    }

    pub fn time_ms(&self, dt_ms: f64) -> f64 {
        self.step as f64 * dt_ms
    }

    pub fn refractory_ms(&self, neuron: usize, dt_ms: f64) -> f64 {
        self.refractory_steps[neuron] as f64 * dt_ms
    }

    /// Return every neuron to rest and forget spike history; the clock and
    /// polarity are kept.
    pub fn reset_to_rest(&mut self, p: &NeuronParams) {
        self.v.fill(p.v_reset_mv);
        self.refractory_steps.fill(0);
        self.fired.clear();
        self.history.clear();
    }
}

/// Below this arena size the membrane update stays on the calling thread.
#[cfg(feature = "parallel")]
const PARALLEL_MIN_NEURONS: usize = 8192;
#[cfg(feature = "parallel")]
const CHUNK: usize = 2048;

struct Lif {
    decay: f64,
    v_s: f64,
    v_th: f64,
    inv_g: f64,
    ref_steps: u32,
}

impl Lif {
    fn new(p: &NeuronParams) -> Self {
        Self {
            decay: p.dt_ms / p.tau_m_ms,
            v_s: p.v_reset_mv,
            v_th: p.v_threshold_mv,
            inv_g: 1.0 / p.conductance_us(),
            ref_steps: steps_in(p.tau_ref_ms, p.dt_ms) as u32,
        }
    }

    /// Integrate one slice; spikes are appended as `offset + i`. Returns the
    /// first non-finite neuron if any.
    fn integrate(&self, v: &mut [f64], refr: &mut [u32], input: &[f64], offset: u32, fired: &mut Vec<u32>) -> Option<u32> {
        for i in 0..v.len() {
            if refr[i] > 0 {
                refr[i] -= 1;
                v[i] = self.v_s;
                continue;
            }
            let vi = v[i] + self.decay * (-(v[i] - self.v_s) + input[i] * self.inv_g);
            if !vi.is_finite() {
                return Some(offset + i as u32);
            }
            if vi >= self.v_th {
                fired.push(offset + i as u32);
                v[i] = self.v_s;
                refr[i] = self.ref_steps;
            } else {
                v[i] = vi;
            }
        }
        None
    }
}

/// Advance every neuron by one step. `external` lists the stimulation
/// currents (neuron, nA) applied during this step. Fired neurons are left in
/// `state.fired`. Large arenas integrate in parallel chunks when the
/// `parallel` feature is on; the result is identical either way.
pub fn step_network(
    state: &mut NetworkState,
    synapses: &SynapseTable,
    p: &NeuronParams,
    external: &[(u32, f64)],
) -> Result<()> {
    step_impl(state, synapses, p, external, true)
}

/// [`step_network`] pinned to the calling thread.
pub fn step_network_seq(
    state: &mut NetworkState,
    synapses: &SynapseTable,
    p: &NeuronParams,
    external: &[(u32, f64)],
) -> Result<()> {
    step_impl(state, synapses, p, external, false)
}

#[cfg_attr(not(feature = "parallel"), allow(unused_variables))]
fn step_impl(
    state: &mut NetworkState,
    synapses: &SynapseTable,
    p: &NeuronParams,
    external: &[(u32, f64)],
    allow_parallel: bool,
) -> Result<()> {
    let n = state.v.len();
    state.input.fill(0.0);
    let unit = p.synaptic_unit_na;
    for &j in &state.fired {
        synapses.propagate(j, unit, &mut state.input);
    }
    for &(i, c) in external {
        state.input[i as usize] += c;
    }
    let lif = Lif::new(p);
    let time_ms = state.step as f64 * p.dt_ms;
    let mut fired = std::mem::take(&mut state.fired);
    fired.clear();

    #[cfg(feature = "parallel")]
    if allow_parallel && n >= PARALLEL_MIN_NEURONS {
        use rayon::prelude::*;
        let parts: Vec<(Vec<u32>, Option<u32>)> = state
            .v
            .par_chunks_mut(CHUNK)
            .zip(state.refractory_steps.par_chunks_mut(CHUNK))
            .zip(state.input.par_chunks(CHUNK))
            .enumerate()
            .map(|(c, ((v, r), inp))| {
                let mut local = Vec::new();
                let fault = lif.integrate(v, r, inp, (c * CHUNK) as u32, &mut local);
                (local, fault)
            })
            .collect();
        for (local, fault) in parts {
            if let Some(neuron) = fault {
                return Err(Error::SimulationFault { neuron, time_ms });
            }
            fired.extend_from_slice(&local);
        }
        state.fired = fired;
        state.step += 1;
        return Ok(());
    }

    if let Some(neuron) = lif.integrate(&mut state.v, &mut state.refractory_steps, &state.input[..n], 0, &mut fired) {
        return Err(Error::SimulationFault { neuron, time_ms });
    }
    state.fired = fired;
    state.step += 1;
    Ok(())
}

/// Fired sets of consecutive steps.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpikeRaster {
    pub dt_ms: f64,
    pub start_step: u64,
    pub steps: Vec<Vec<u32>>,
}

impl SpikeRaster {
    pub fn new(dt_ms: f64, start_step: u64) -> Self {
        Self { dt_ms, start_step, steps: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn spike_count(&self) -> usize {
        self.steps.iter().map(Vec::len).sum()
    }

    pub fn time_of(&self, index: usize) -> f64 {
        (self.start_step + index as u64) as f64 * self.dt_ms
    }

    /// Spike times (ms) of one neuron.
    pub fn spike_times(&self, neuron: u32) -> Vec<f64> {
        self.steps
            .iter()
            .enumerate()
            .filter(|(_, s)| s.binary_search(&neuron).is_ok())
            .map(|(i, _)| self.time_of(i))
            .collect()
    }

    /// CSV rows `time_ms,neuron_id`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_ms,neuron_id\n");
        for (i, fired) in self.steps.iter().enumerate() {
            let t = self.time_of(i);
            for n in fired {
                let _ = writeln!(out, "{t},{n}");
            }
        }
        out
    }
}
