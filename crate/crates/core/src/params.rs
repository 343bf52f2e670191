//! Model parameters.
//!
//! Neuron, STDP and R-STDP constants default to the reference model values.
//! Stimulation drive, synaptic unit current, readout smoothing and protocol
//! timing are engineering defaults tuned for desk-scale runs. Everything is
//! overridable from a TOML file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeuronParams {
    /// Membrane capacitance C_m (nF).
    pub c_m_nf: f64,
    /// Membrane time constant τ_m (ms). Leak conductance g = C_m / τ_m (µS).
    pub tau_m_ms: f64,
    /// Reset potential, also used as the leak reversal V_s (mV).
    pub v_reset_mv: f64,
    pub v_threshold_mv: f64,
    /// Absolute refractory period τ_ref (ms).
    pub tau_ref_ms: f64,
    /// Integration step (ms).
    pub dt_ms: f64,
    /// Current (nA) delivered for one step by a presynaptic spike through a
    /// synapse of weight 1.
    pub synaptic_unit_na: f64,
}

impl Default for NeuronParams {
    fn default() -> Self {
        Self {
            c_m_nf: 30.0,
            tau_m_ms: 30.0,
            v_reset_mv: -65.0,
            v_threshold_mv: -35.0,
            tau_ref_ms: 10.0,
            dt_ms: 1.0,
            synaptic_unit_na: 2.5,
        }
    }
}

impl NeuronParams {
    /// Leak conductance in µS.
    pub fn conductance_us(&self) -> f64 {
        self.c_m_nf / self.tau_m_ms
    }

    /// Membrane jump (mV) produced by a current held for one step.
    pub fn step_jump_mv(&self, current_na: f64) -> f64 {
        self.dt_ms / self.tau_m_ms * current_na / self.conductance_us()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StimulusParams {
    /// Poisson event rate per stimulated neuron (Hz).
    pub rate_hz: f64,
    /// Current carried by one Poisson event for one step (nA).
    pub amplitude_na: f64,
}

impl Default for StimulusParams {
    fn default() -> Self {
        // 180 nA for one 1 ms step is a 6 mV jump: five coincident events
        // carry a resting neuron to threshold.
        Self { rate_hz: 2000.0, amplitude_na: 180.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StdpParams {
    pub tau_s_ms: f64,
    /// Half-width of the pairing window τ_w (ms).
    pub tau_w_ms: f64,
    pub a_plus: f64,
    pub a_minus: f64,
    /// Magnitude bound: excitatory-source weights live in [0, w_max],
    /// inhibitory-source weights in [-w_max, 0].
    pub w_max: f64,
}

impl Default for StdpParams {
    fn default() -> Self {
        Self { tau_s_ms: 30.0, tau_w_ms: 20.0, a_plus: 1.1, a_minus: 0.95, w_max: 4.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RstdpParams {
    pub c_r: f64,
    pub c_p: f64,
    /// Reward window T_R (ms).
    pub t_r_ms: f64,
    /// Eligibility time constant τ_e (ms).
    pub tau_e_ms: f64,
    /// Global scale on the R·e weight update.
    pub eta: f64,
    /// Also deliver the signal when the network stays silent (answers no).
    /// Off by default: only an answer releases reward or punishment.
    pub signal_silent_answers: bool,
}

impl Default for RstdpParams {
    fn default() -> Self {
        Self { c_r: 10.0, c_p: -10.0, t_r_ms: 5.0, tau_e_ms: 100.0, eta: 0.03, signal_silent_answers: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngramParams {
    /// Arena size N.
    pub neurons: usize,
    /// Sparseness λ; λ·N must be an integer.
    pub lambda: f64,
    /// Fraction of each engram tagged inhibitory.
    pub inhibitory_fraction: f64,
}

impl Default for EngramParams {
    fn default() -> Self {
        Self { neurons: 1000, lambda: 0.05, inhibitory_fraction: 0.15 }
    }
}

impl EngramParams {
    /// Engram size K = λ·N. Only meaningful after validation.
    pub fn engram_size(&self) -> usize {
        (self.lambda * self.neurons as f64).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReadoutParams {
    /// Answer threshold θ on the smoothed similarity.
    pub theta: f64,
    /// Negative-control ceiling θ_neg.
    pub theta_neg: f64,
    /// A neuron counts as firing if it spiked within this trailing window (ms).
    pub window_ms: f64,
    /// Time constant of the exponential moving average (ms).
    pub smoothing_ms: f64,
}

impl Default for ReadoutParams {
    fn default() -> Self {
        Self { theta: 0.5, theta_neg: 0.2, window_ms: 50.0, smoothing_ms: 20.0 }
    }
}

/// Order in which a graph's triples are presented.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodeOrder {
    /// Seeded shuffle, then a stable reorder so that for the same relation
    /// `B R C` is presented before `A R B`.
    #[default]
    Dependency,
    /// Plain seeded shuffle.
    Shuffled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolParams {
    /// Length of each of the three stimulation windows of a triple (ms).
    pub window_ms: f64,
    /// Silence between the head/relation/tail windows (ms).
    pub gap_ms: f64,
    pub repetitions: usize,
    /// Unstimulated settling time after each presentation (ms).
    pub rest_ms: f64,
    pub order: EncodeOrder,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self { window_ms: 6.0, gap_ms: 0.0, repetitions: 4, rest_ms: 30.0, order: EncodeOrder::Dependency }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueryParams {
    pub cue_ms: f64,
    pub readout_ms: f64,
}

impl Default for QueryParams {
    fn default() -> Self {
        Self { cue_ms: 100.0, readout_ms: 100.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InductionParams {
    /// Co-stimulation time (ms).
    pub duration_ms: f64,
    /// Mean group weight a population pair must reach to count as connected.
    pub report_threshold: f64,
    /// Minimum rise during the run for a crossing to count as new; keeps
    /// drift across the threshold out of the report.
    pub min_gain: f64,
}

impl Default for InductionParams {
    fn default() -> Self {
        Self { duration_ms: 300.0, report_threshold: 1.0, min_gain: 0.5 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub neuron: NeuronParams,
    pub stimulus: StimulusParams,
    pub stdp: StdpParams,
    pub rstdp: RstdpParams,
    pub engram: EngramParams,
    pub readout: ReadoutParams,
    pub protocol: ProtocolParams,
    pub query: QueryParams,
    pub induction: InductionParams,
}

/// True when `ms` is an integer multiple of `dt`.
pub(crate) fn is_multiple(ms: f64, dt: f64) -> bool {
    let r = ms / dt;
    (r - r.round()).abs() < 1e-9
}

/// Number of whole steps in `ms`.
pub(crate) fn steps_in(ms: f64, dt: f64) -> u64 {
    (ms / dt).round().max(0.0) as u64
}

impl Params {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let params: Params = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("parameters always serialize")
    }

    pub fn validate(&self) -> Result<()> {
        let n = &self.neuron;
        let positive = [
            ("neuron.c_m_nf", n.c_m_nf),
            ("neuron.tau_m_ms", n.tau_m_ms),
            ("neuron.dt_ms", n.dt_ms),
            ("stdp.tau_s_ms", self.stdp.tau_s_ms),
            ("stdp.tau_w_ms", self.stdp.tau_w_ms),
            ("stdp.w_max", self.stdp.w_max),
            ("rstdp.tau_e_ms", self.rstdp.tau_e_ms),
            ("readout.window_ms", self.readout.window_ms),
            ("readout.smoothing_ms", self.readout.smoothing_ms),
            ("protocol.window_ms", self.protocol.window_ms),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(format!("{name} must be positive, got {value}")));
            }
        }
        let non_negative = [
            ("neuron.tau_ref_ms", n.tau_ref_ms),
            ("neuron.synaptic_unit_na", n.synaptic_unit_na),
            ("stimulus.rate_hz", self.stimulus.rate_hz),
            ("rstdp.t_r_ms", self.rstdp.t_r_ms),
            ("rstdp.eta", self.rstdp.eta),
            ("protocol.gap_ms", self.protocol.gap_ms),
            ("protocol.rest_ms", self.protocol.rest_ms),
            ("query.cue_ms", self.query.cue_ms),
            ("query.readout_ms", self.query.readout_ms),
            ("induction.duration_ms", self.induction.duration_ms),
            ("induction.report_threshold", self.induction.report_threshold),
            ("induction.min_gain", self.induction.min_gain),
        ];
        for (name, value) in non_negative {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::config(format!("{name} must be non-negative, got {value}")));
            }
        }
        if n.v_threshold_mv <= n.v_reset_mv {
            return Err(Error::config("neuron.v_threshold_mv must exceed neuron.v_reset_mv"));
        }
        let dt = n.dt_ms;
        let windows = [
            ("neuron.tau_ref_ms", n.tau_ref_ms),
            ("protocol.window_ms", self.protocol.window_ms),
            ("protocol.gap_ms", self.protocol.gap_ms),
            ("protocol.rest_ms", self.protocol.rest_ms),
            ("query.cue_ms", self.query.cue_ms),
            ("query.readout_ms", self.query.readout_ms),
            ("induction.duration_ms", self.induction.duration_ms),
        ];
        for (name, value) in windows {
            if !is_multiple(value, dt) {
                return Err(Error::config(format!("{name} = {value} is not a multiple of dt = {dt}")));
            }
        }
        let e = &self.engram;
        if e.neurons == 0 {
            return Err(Error::config("engram.neurons must be positive"));
        }
        if !(e.lambda > 0.0 && e.lambda < 1.0) {
            return Err(Error::config(format!("engram.lambda must lie in (0, 1), got {}", e.lambda)));
        }
        let k = e.lambda * e.neurons as f64;
        if (k - k.round()).abs() > 1e-9 || k.round() < 1.0 {
            return Err(Error::config(format!(
                "engram.lambda * engram.neurons = {k} must be a positive integer"
            )));
        }
        if !(0.0..=1.0).contains(&e.inhibitory_fraction) {
            return Err(Error::config("engram.inhibitory_fraction must lie in [0, 1]"));
        }
        let r = &self.readout;
        if !(r.theta > 0.0 && r.theta <= 1.0) {
            return Err(Error::config(format!("readout.theta must lie in (0, 1], got {}", r.theta)));
        }
        if !(r.theta_neg >= 0.0 && r.theta_neg <= r.theta) {
            return Err(Error::config("readout.theta_neg must lie in [0, theta]"));
        }
        if self.rstdp.c_p > 0.0 || self.rstdp.c_r < 0.0 {
            return Err(Error::config("rstdp.c_r must be >= 0 and rstdp.c_p <= 0"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_match_model_table() {
        let p = Params::default();
        p.validate().unwrap();
        assert_eq!(p.neuron.conductance_us(), 1.0);
        assert_eq!(p.engram.engram_size(), 50);
        assert_eq!((p.stdp.a_plus, p.stdp.a_minus), (1.1, 0.95));
        assert_eq!((p.rstdp.c_r, p.rstdp.c_p, p.rstdp.t_r_ms), (10.0, -10.0, 5.0));
    }

    #[test]
    fn toml_overrides_merge_with_defaults() {
        let p = Params::from_toml_str("[engram]\nneurons = 2000\nlambda = 0.025\n").unwrap();
        assert_eq!(p.engram.engram_size(), 50);
        assert_eq!(p.neuron, NeuronParams::default());
        let echoed = Params::from_toml_str(&p.to_toml_string()).unwrap();
        assert_eq!(echoed, p);
    }

    #[test]
    fn non_integer_engram_size_is_rejected() {
        let err = Params::from_toml_str("[engram]\nneurons = 1000\nlambda = 0.0333\n").unwrap_err();
        assert!(err.to_string().contains("positive integer"), "{err}");
    }

    #[test]
    fn unknown_keys_and_bad_theta_are_rejected() {
        assert!(Params::from_toml_str("[neuron]\nbogus = 1\n").is_err());
        assert!(Params::from_toml_str("[readout]\ntheta = 0.0\n").is_err());
        assert!(Params::from_toml_str("[protocol]\nwindow_ms = 2.5\n").is_err());
    }
}
