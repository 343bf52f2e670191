//! A complete experiment instance: parameters, neurons, synapses, engrams
//! and the reward schedule, plus the step loop that ties them together.

use crate::engram::{EngramRegistry, SymbolKind};
use crate::error::{Error, Result};
use crate::neuron::{step_network, NetworkState, SpikeRaster};
use crate::params::{is_multiple, steps_in, Params};
use crate::plasticity::{reward_signal, PlasticityMode, RewardSchedule, SynapseTable};
use crate::stimulus::{poisson_stimulus, InjectionSchedule, StimulusPlan};

/// SplitMix64 finaliser folded over `parts`.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub params: Params,
    pub state: NetworkState,
    pub synapses: SynapseTable,
    pub registry: EngramRegistry,
    pub rewards: RewardSchedule,
}

impl Network {
    pub fn new(params: Params) -> Result<Self> {
        params.validate()?;
        let n = params.engram.neurons;
        Ok(Self {
            state: NetworkState::new(n, &params.neuron),
            synapses: SynapseTable::new(n),
            registry: EngramRegistry::new(&params.engram)?,
            rewards: RewardSchedule::default(),
            params,
        })
    }

    pub fn neurons(&self) -> usize {
        self.state.neurons()
    }

    pub fn dt(&self) -> f64 {
        self.params.neuron.dt_ms
    }

    pub fn time_ms(&self) -> f64 {
        self.state.time_ms(self.dt())
    }

    /// Allocate an engram and refresh neuron polarities.
    pub fn allocate(&mut self, label: &str, kind: SymbolKind, seed: u64) -> Result<usize> {
        self.registry.allocate(label, kind, seed)?;
        self.sync_polarity();
        Ok(self.registry.len() - 1)
    }

    pub(crate) fn sync_polarity(&mut self) {
        self.state.polarity = self.registry.polarity();
    }

    /// Poisson drive of one engram over an absolute window, using the
    /// configured rate and amplitude.
    pub fn stimulate(&self, label: &str, window_ms: (f64, f64), seed: u64) -> Result<StimulusPlan> {
        let e = self.registry.require(label)?;
        let s = &self.params.stimulus;
        poisson_stimulus(e, s.rate_hz, window_ms, s.amplitude_na, seed)
    }

    /// Simulate `duration_ms` from the current clock, returning the raster.
    pub fn run_window(&mut self, plans: &[StimulusPlan], duration_ms: f64, mode: PlasticityMode) -> Result<SpikeRaster> {
        let mut raster = SpikeRaster::new(self.dt(), self.state.step);
        self.run_window_with(plans, duration_ms, mode, |_, _, fired| raster.steps.push(fired.to_vec()))?;
        Ok(raster)
    }

    /// As [`Network::run_window`] but hands every step's fired set to
    /// `observer` instead of storing it.
    pub fn run_window_with<F>(
        &mut self,
        plans: &[StimulusPlan],
        duration_ms: f64,
        mode: PlasticityMode,
        mut observer: F,
    ) -> Result<()>
    where
        F: FnMut(&EngramRegistry, u64, &[u32]),
    {
        self.run_window_until(plans, duration_ms, mode, |reg, step, fired| {
            observer(reg, step, fired);
            true
        })
        .map(|_| ())
    }

    /// As [`Network::run_window_with`] but stops early once `observer`
    /// returns false. Returns the number of steps simulated.
    pub fn run_window_until<F>(
        &mut self,
        plans: &[StimulusPlan],
        duration_ms: f64,
        mode: PlasticityMode,
        mut observer: F,
    ) -> Result<u64>
    where
        F: FnMut(&EngramRegistry, u64, &[u32]) -> bool,
    {
        let dt = self.dt();
        if !(duration_ms >= 0.0 && is_multiple(duration_ms, dt)) {
            return Err(Error::config(format!("duration {duration_ms} ms is not a multiple of dt = {dt}")));
        }
        let steps = steps_in(duration_ms, dt);
        let mut schedule = InjectionSchedule::new(plans, dt);
        schedule.seek(self.state.step);
        let mut external = Vec::new();
        let horizon = self.params.stdp.tau_w_ms;
        for done in 0..steps {
            let step = self.state.step;
            schedule.take(step, &mut external);
            step_network(&mut self.state, &self.synapses, &self.params.neuron, &external)?;
            let fired = std::mem::take(&mut self.state.fired);
            if mode != PlasticityMode::Off {
                self.state.history.begin_step(&fired);
                if mode == PlasticityMode::Rstdp {
                    self.synapses.decay_eligibility(dt, self.params.rstdp.tau_e_ms);
                }
                self.synapses.on_spike_pairing(
                    &fired,
                    step,
                    dt,
                    &self.state.history,
                    &self.state.polarity,
                    &self.params.stdp,
                    mode,
                );
                if mode == PlasticityMode::Rstdp {
                    let r = reward_signal(step as f64 * dt, &self.rewards, &self.params.rstdp);
                    self.synapses.apply_rstdp(r, &self.params.rstdp, &self.state.polarity, self.params.stdp.w_max);
                }
            }
            self.state.history.record(step, &fired, dt, horizon);
            let go_on = observer(&self.registry, step, &fired);
            self.state.fired = fired;
            if !go_on {
                return Ok(done + 1);
            }
        }
        Ok(steps)
    }

    /// Silence every neuron (weights and clock untouched).
    pub fn rest(&mut self) {
        self.state.reset_to_rest(&self.params.neuron);
    }
}
