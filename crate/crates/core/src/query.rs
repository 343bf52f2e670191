//! Cue-based retrieval and reasoning-trace export.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engram::{SmoothedReadout, SymbolKind, TraceLog};
use crate::error::{Error, Result};
use crate::kg::label_hash;
use crate::network::{derive_seed, Network};
use crate::neuron::SpikeRaster;
use crate::plasticity::PlasticityMode;
use crate::snapshot::write_atomic;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub label: String,
    /// Peak smoothed similarity over the cue and readout windows.
    pub peak: f64,
    /// First time (ms after cue onset) the smoothed similarity reached θ.
    pub time_to_threshold_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub cue: Vec<String>,
    pub theta: f64,
    /// Sorted by peak, descending; ties keep registry order.
    pub candidates: Vec<Candidate>,
    pub answers: Vec<String>,
    /// Smoothed similarity of every watched engram, time relative to cue onset.
    pub trace: TraceLog,
    pub raster: SpikeRaster,
}

impl QueryResult {
    pub fn candidate(&self, label: &str) -> Option<&Candidate> {
        self.candidates.iter().find(|c| c.label == label)
    }

    pub fn top(&self) -> Option<&Candidate> {
        self.candidates.first()
    }
}

/// Outcome of one cued run: peaks and threshold times per watched engram.
pub(crate) struct CuedRun {
    pub watch: Vec<usize>,
    pub peaks: Vec<f64>,
    pub first_cross: Vec<Option<f64>>,
    pub trace: Option<TraceLog>,
    pub raster: Option<SpikeRaster>,
}

/// Stimulus seed for a cue set; depends only on the labels and `seed`.
pub(crate) fn cue_seed(seed: u64, labels: &[&str]) -> u64 {
    let mut parts = vec![seed];
    parts.extend(labels.iter().map(|l| label_hash(l)));
    derive_seed(&parts)
}

/// How long a cued run lasts.
#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) enum Stop {
    /// Simulate the whole cue and readout windows.
    Full,
    /// End on the step the first watched engram reaches θ.
    FirstCross,
}

/// Rest the network, drive `cue` for `cue_ms`, keep simulating for
/// `readout_ms` and follow the smoothed similarity of `watch`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn cued_run(
    net: &mut Network,
    cue: &[&str],
    watch: Vec<usize>,
    cue_ms: f64,
    readout_ms: f64,
    mode: PlasticityMode,
    seed: u64,
    record: bool,
    stop: Stop,
) -> Result<CuedRun> {
    let dt = net.dt();
    net.rest();
    let t0 = net.time_ms();
    let base = cue_seed(seed, cue);
    let plans = cue
        .iter()
        .enumerate()
        .map(|(i, l)| net.stimulate(l, (t0, t0 + cue_ms), derive_seed(&[base, i as u64])))
        .collect::<Result<Vec<_>>>()?;
    let theta = net.params.readout.theta;
    let mut readout = SmoothedReadout::new(&net.registry, watch.clone(), &net.params.readout, dt);
    let mut peaks = vec![f64::NEG_INFINITY; watch.len()];
    let mut first_cross = vec![None; watch.len()];
    let mut trace = record.then(|| {
        TraceLog::new(watch.iter().map(|&i| net.registry.engrams()[i].label.clone()).collect())
    });
    let mut raster = record.then(|| SpikeRaster::new(dt, net.state.step));
    let start = net.state.step;
    net.run_window_until(&plans, cue_ms + readout_ms, mode, |reg, step, fired| {
        let vals = readout.observe(reg, step, fired);
        let t = (step - start) as f64 * dt;
        for (j, &v) in vals.iter().enumerate() {
            if v > peaks[j] {
                peaks[j] = v;
            }
            if first_cross[j].is_none() && v >= theta {
                first_cross[j] = Some(t);
            }
        }
        if let Some(tr) = trace.as_mut() {
            tr.push(t, vals.to_vec());
        }
        if let Some(r) = raster.as_mut() {
            r.steps.push(fired.to_vec());
        }
        !(stop == Stop::FirstCross && first_cross.first().is_some_and(Option::is_some))
    })?;
    for p in &mut peaks {
        if *p == f64::NEG_INFINITY {
            *p = 0.0;
        }
    }
    Ok(CuedRun { watch, peaks, first_cross, trace, raster })
}

/// Answer rule shared by queries and training trials.
pub(crate) fn is_answer(peak: f64, theta: f64) -> bool {
    peak >= theta && peak > 0.0
}

/// Stimulate `head` and `relation`, simulate through the readout window and
/// rank every entity engram other than the cue by peak smoothed similarity.
/// Plasticity is off and the neuron state is restored afterwards, so the
/// network is left exactly as it was.
pub fn query(net: &mut Network, head: &str, relation: &str, theta: f64, seed: u64) -> Result<QueryResult> {
    let cue_ids = [net.registry.require(head)?, net.registry.require(relation)?].map(|e| e.label.clone());
    let ids: Vec<usize> = cue_ids.iter().map(|l| net.registry.id_of(l).unwrap()).collect();
    let watch: Vec<usize> = (0..net.registry.len()).collect();
    let saved = net.state.clone();
    let q = &net.params.query;
    let (cue_ms, readout_ms) = (q.cue_ms, q.readout_ms);
    let run = cued_run(net, &[head, relation], watch, cue_ms, readout_ms, PlasticityMode::Off, seed, true, Stop::Full);
    net.state = saved;
    let run = run?;

    let mut candidates: Vec<Candidate> = run
        .watch
        .iter()
        .enumerate()
        .filter(|(_, &id)| !ids.contains(&id) && net.registry.engrams()[id].kind == SymbolKind::Entity)
        .map(|(j, &id)| Candidate {
            label: net.registry.engrams()[id].label.clone(),
            peak: run.peaks[j],
            time_to_threshold_ms: if run.peaks[j] > 0.0 { run.first_cross[j] } else { None },
        })
        .collect();
    candidates.sort_by(|a, b| b.peak.total_cmp(&a.peak));
    let answers = candidates.iter().filter(|c| is_answer(c.peak, theta)).map(|c| c.label.clone()).collect();
    Ok(QueryResult {
        cue: cue_ids.to_vec(),
        theta,
        candidates,
        answers,
        trace: run.trace.unwrap_or_default(),
        raster: run.raster.unwrap_or_default(),
    })
}

/// Answer of the network to "does `head relation tail` hold?" plus the
/// tail's smoothed similarity trace. Only the tail is followed, which keeps
/// the check cheap on large registries.
pub fn verify_triple(
    net: &mut Network,
    head: &str,
    relation: &str,
    tail: &str,
    theta: f64,
    seed: u64,
) -> Result<(bool, Vec<f64>)> {
    net.registry.require(head)?;
    net.registry.require(relation)?;
    let tail_id = net.registry.id_of(tail).ok_or_else(|| Error::UnboundSymbol(tail.to_string()))?;
    let saved = net.state.clone();
    let q = &net.params.query;
    let (cue_ms, readout_ms) = (q.cue_ms, q.readout_ms);
    let run = cued_run(net, &[head, relation], vec![tail_id], cue_ms, readout_ms, PlasticityMode::Off, seed, true, Stop::Full);
    net.state = saved;
    let run = run?;
    let series = run.trace.and_then(|t| t.series(tail)).unwrap_or_default();
    Ok((is_answer(run.peaks[0], theta), series))
}

#[derive(Serialize)]
struct TraceDoc<'a> {
    cue: &'a [String],
    theta: f64,
    candidates: &'a [Candidate],
    answers: &'a [String],
    raster_start_ms: f64,
    raster: &'a [Vec<u32>],
}

/// Write the similarity series as `time_ms,label,sim` CSV at `path` and the
/// ranked result plus the spike raster as JSON next to it (`.json`).
pub fn export_reasoning_trace(result: &QueryResult, path: &Path) -> Result<()> {
    write_atomic(path, result.trace.to_csv().as_bytes())?;
    let doc = TraceDoc {
        cue: &result.cue,
        theta: result.theta,
        candidates: &result.candidates,
        answers: &result.answers,
        raster_start_ms: result.raster.start_step as f64 * result.raster.dt_ms,
        raster: &result.raster.steps,
    };
    write_atomic(&path.with_extension("json"), serde_json::to_string_pretty(&doc)?.as_bytes())
}
