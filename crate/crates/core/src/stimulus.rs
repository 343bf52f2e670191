//! Poisson stimulation plans.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::engram::Engram;
use crate::error::{Error, Result};
use crate::params::steps_in;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StimEvent {
    pub time_ms: f64,
    pub neuron: u32,
    pub current_na: f64,
}

/// Current injections for a set of neurons over one time window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StimulusPlan {
    pub window_ms: (f64, f64),
    pub rate_hz: f64,
    /// Sorted by time, then by position of the neuron in the engram.
    pub events: Vec<StimEvent>,
}

impl StimulusPlan {
    pub fn empty(window_ms: (f64, f64)) -> Self {
        Self { window_ms, rate_hz: 0.0, events: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Little-endian dump of every event; two plans are identical iff their
    /// dumps are.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.events.len() * 20);
        out.extend_from_slice(&self.window_ms.0.to_le_bytes());
        out.extend_from_slice(&self.window_ms.1.to_le_bytes());
        out.extend_from_slice(&self.rate_hz.to_le_bytes());
        for e in &self.events {
            out.extend_from_slice(&e.time_ms.to_le_bytes());
            out.extend_from_slice(&e.neuron.to_le_bytes());
            out.extend_from_slice(&e.current_na.to_le_bytes());
        }
        out
    }
}

/// Independent homogeneous Poisson trains for every member of `engram`
/// over `[start, end)`, each event carrying `amplitude_na` for one step.
pub fn poisson_stimulus(
    engram: &Engram,
    rate_hz: f64,
    window_ms: (f64, f64),
    amplitude_na: f64,
    seed: u64,
) -> Result<StimulusPlan> {
    if engram.neuron_ids.is_empty() {
        return Err(Error::EmptyEngram(engram.label.clone()));
    }
    poisson_for_neurons(&engram.neuron_ids, rate_hz, window_ms, amplitude_na, seed)
}

pub(crate) fn poisson_for_neurons(
    neurons: &[u32],
    rate_hz: f64,
    window_ms: (f64, f64),
    amplitude_na: f64,
    seed: u64,
) -> Result<StimulusPlan> {
    let (start, end) = window_ms;
    if !(rate_hz.is_finite() && rate_hz >= 0.0) {
        return Err(Error::config(format!("stimulus rate must be non-negative, got {rate_hz}")));
    }
    if !(start.is_finite() && end.is_finite() && start <= end) {
        return Err(Error::config(format!("stimulus window [{start}, {end}) is not well ordered")));
    }
    if rate_hz == 0.0 || start == end {
        return Ok(StimulusPlan::empty(window_ms));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaps = Exp::new(rate_hz / 1000.0).expect("rate is positive and finite");
    let mut keyed: Vec<(f64, usize, StimEvent)> = Vec::new();
    for (pos, &neuron) in neurons.iter().enumerate() {
        let mut t = start + gaps.sample(&mut rng);
        while t < end {
            keyed.push((t, pos, StimEvent { time_ms: t, neuron, current_na: amplitude_na }));
            t += gaps.sample(&mut rng);
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(StimulusPlan { window_ms, rate_hz, events: keyed.into_iter().map(|k| k.2).collect() })
}

/// Plans flattened to `(step, neuron, current)` in step order.
#[derive(Clone, Debug, Default)]
pub struct InjectionSchedule {
    entries: Vec<(u64, u32, f64)>,
    cursor: usize,
}

impl InjectionSchedule {
    pub fn new(plans: &[StimulusPlan], dt_ms: f64) -> Self {
        let mut entries: Vec<(u64, u32, f64)> = plans
            .iter()
            .flat_map(|p| p.events.iter())
            .map(|e| ((e.time_ms / dt_ms).floor() as u64, e.neuron, e.current_na))
            .collect();
        // Stable: events sharing a step keep plan order, so summation order
        // is fixed.
        entries.sort_by_key(|e| e.0);
        Self { entries, cursor: 0 }
    }

    /// Skip everything scheduled before `step`.
    pub fn seek(&mut self, step: u64) {
        self.cursor = self.entries.partition_point(|e| e.0 < step);
    }

    /// Injections for `step`; must be called with non-decreasing steps.
    pub fn take(&mut self, step: u64, out: &mut Vec<(u32, f64)>) {
        out.clear();
        while let Some(&(s, n, c)) = self.entries.get(self.cursor) {
            if s > step {
                break;
            }
            if s == step {
                out.push((n, c));
            }
            self.cursor += 1;
        }
    }
}

/// Number of steps spanned by a window.
pub fn window_steps(window_ms: (f64, f64), dt_ms: f64) -> u64 {
    steps_in(window_ms.1 - window_ms.0, dt_ms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engram::{Engram, SymbolKind};

    fn engram(k: u32) -> Engram {
        Engram::new("A", SymbolKind::Entity, (0..k).collect(), 0)
    }

    #[test]
    fn zero_rate_gives_empty_plan() {
        let plan = poisson_stimulus(&engram(50), 0.0, (0.0, 100.0), 180.0, 7).unwrap();
        assert!(plan.is_empty());
    }

    #[test]
    fn event_count_matches_poisson_expectation() {
        // 50 neurons x 100 Hz x 0.1 s: mean 500, sd sqrt(500).
        let plan = poisson_stimulus(&engram(50), 100.0, (0.0, 100.0), 180.0, 11).unwrap();
        let sd = 500f64.sqrt();
        assert!((plan.len() as f64 - 500.0).abs() <= 4.0 * sd, "{} events", plan.len());
        assert!(plan.events.iter().all(|e| (0.0..100.0).contains(&e.time_ms)));
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let a = poisson_stimulus(&engram(20), 300.0, (10.0, 60.0), 180.0, 3).unwrap();
        let b = poisson_stimulus(&engram(20), 300.0, (10.0, 60.0), 180.0, 3).unwrap();
        let c = poisson_stimulus(&engram(20), 300.0, (10.0, 60.0), 180.0, 4).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_ne!(a.to_bytes(), c.to_bytes());
    }

    #[test]
    fn empty_engram_and_bad_window_are_errors() {
        let empty = Engram::new("ghost", SymbolKind::Entity, vec![], 0);
        assert!(matches!(
            poisson_stimulus(&empty, 10.0, (0.0, 1.0), 1.0, 0),
            Err(Error::EmptyEngram(_))
        ));
        assert!(poisson_stimulus(&engram(3), 10.0, (5.0, 1.0), 1.0, 0).is_err());
    }

    #[test]
    fn schedule_groups_events_by_step() {
        let plan = StimulusPlan {
            window_ms: (0.0, 3.0),
            rate_hz: 1.0,
            events: vec![
                StimEvent { time_ms: 0.2, neuron: 1, current_na: 1.0 },
                StimEvent { time_ms: 0.7, neuron: 1, current_na: 2.0 },
                StimEvent { time_ms: 2.5, neuron: 3, current_na: 4.0 },
            ],
        };
        let mut sched = InjectionSchedule::new(&[plan], 1.0);
        let mut buf = Vec::new();
        sched.take(0, &mut buf);
        assert_eq!(buf, vec![(1, 1.0), (1, 2.0)]);
        sched.take(1, &mut buf);
        assert!(buf.is_empty());
        sched.take(2, &mut buf);
        assert_eq!(buf, vec![(3, 4.0)]);
    }
}
