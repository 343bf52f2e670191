//! Training and experiment protocols: sequential triple encoding,
//! reward-driven transitivity learning, induction by co-stimulation and the
//! inhibitory-ratio sweep. Synthetic dataset builders live here too.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engram::SymbolKind;
use crate::error::{Error, Result};
use crate::kg::{label_hash, mask_split, DatasetSplit, RelationMeta, Triple};
use crate::network::{derive_seed, Network};
use crate::params::{EncodeOrder, Params};
use crate::plasticity::PlasticityMode;
use crate::query::{cued_run, is_answer, Stop};

/// Present `head`, `relation` and `tail` in turn (one window each), then let
/// the network settle, all with STDP on. Repeated `protocol.repetitions`
/// times.
pub fn encode_triple(net: &mut Network, head: &str, relation: &str, tail: &str, seed: u64) -> Result<()> {
    for l in [head, relation, tail] {
        net.registry.require(l)?;
    }
    let p = net.params.protocol.clone();
    let base = derive_seed(&[seed, label_hash(head), label_hash(relation), label_hash(tail)]);
    let span = 3.0 * p.window_ms + 2.0 * p.gap_ms;
    for rep in 0..p.repetitions {
        let t0 = net.time_ms();
        let plans = [head, relation, tail]
            .iter()
            .enumerate()
            .map(|(k, l)| {
                let start = t0 + k as f64 * (p.window_ms + p.gap_ms);
                net.stimulate(l, (start, start + p.window_ms), derive_seed(&[base, rep as u64, k as u64]))
            })
            .collect::<Result<Vec<_>>>()?;
        net.run_window_with(&plans, span, PlasticityMode::Stdp, |_, _, _| {})?;
        net.run_window_with(&[], p.rest_ms, PlasticityMode::Stdp, |_, _, _| {})?;
    }
    Ok(())
}

/// Presentation order for `triples`.
///
/// The seeded shuffle is the base order. Under [`EncodeOrder::Dependency`]
/// it is refined so that, within a relation, a triple whose head is another
/// triple's tail comes first: presenting `A R B` before `B R C` would let
/// the second presentation (B fires, then R) depress the R→B synapses the
/// first one built. Cycles are broken at the earliest shuffled position.
pub fn encoding_order(triples: &[Triple], order: EncodeOrder, seed: u64) -> Vec<usize> {
    let mut shuffled: Vec<usize> = (0..triples.len()).collect();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    if order == EncodeOrder::Shuffled {
        return shuffled;
    }
    let mut rank = vec![0; triples.len()];
    for (r, &i) in shuffled.iter().enumerate() {
        rank[i] = r;
    }
    // Edge u -> v: u = (B, R, C) must precede v = (A, R, B).
    let mut by_head: HashMap<(&str, &str), Vec<usize>> = HashMap::new();
    for (i, t) in triples.iter().enumerate() {
        by_head.entry((&t.head, &t.relation)).or_default().push(i);
    }
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); triples.len()];
    let mut indegree = vec![0usize; triples.len()];
    for (v, t) in triples.iter().enumerate() {
        for &u in by_head.get(&(t.tail.as_str(), t.relation.as_str())).map_or(&[][..], |x| x) {
            if u != v {
                succ[u].push(v);
                indegree[v] += 1;
            }
        }
    }
    let mut ready: BinaryHeap<Reverse<(usize, usize)>> =
        (0..triples.len()).filter(|&i| indegree[i] == 0).map(|i| Reverse((rank[i], i))).collect();
    let mut done = vec![false; triples.len()];
    let mut out = Vec::with_capacity(triples.len());
    let mut cursor = 0;
    while out.len() < triples.len() {
        let next = match ready.pop() {
            Some(Reverse((_, i))) if !done[i] => i,
            Some(_) => continue,
            None => {
                while done[shuffled[cursor]] {
                    cursor += 1;
                }
                shuffled[cursor]
            }
        };
        done[next] = true;
        out.push(next);
        for &v in &succ[next] {
            indegree[v] = indegree[v].saturating_sub(1);
            if indegree[v] == 0 && !done[v] {
                ready.push(Reverse((rank[v], v)));
            }
        }
    }
    out
}

/// Encode every triple in [`encoding_order`]. `progress` is called with
/// (done, total) after each triple.
pub fn encode_graph(
    net: &mut Network,
    triples: &[Triple],
    seed: u64,
    mut progress: impl FnMut(usize, usize),
) -> Result<()> {
    let order = encoding_order(triples, net.params.protocol.order, seed);
    for (done, &i) in order.iter().enumerate() {
        let t = &triples[i];
        encode_triple(net, &t.head, &t.relation, &t.tail, derive_seed(&[seed, i as u64]))?;
        progress(done + 1, triples.len());
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub triple: Triple,
    pub truth: bool,
    pub answer: bool,
    pub correct: bool,
    pub peak: f64,
    /// `C_r` when correct, `C_p` otherwise.
    pub reward: f64,
    /// Whether the signal was actually released into the network.
    pub delivered: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub accuracy: f64,
    /// Mean signal actually delivered per trial (silent trials count 0).
    pub mean_reward: f64,
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,accuracy,mean_reward\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.epoch, r.accuracy, r.mean_reward));
    }
    out
}

/// One supervised question: cue head and relation with R-STDP on. The
/// network answers yes the moment the tail's smoothed similarity reaches θ
/// and no when the readout window ends without that. A yes releases reward
/// or punishment on the spot and the reward window is simulated; a no only
/// does so with `rstdp.signal_silent_answers`.
pub fn transitivity_trial(net: &mut Network, query: &Triple, truth: bool, seed: u64) -> Result<TrialOutcome> {
    let tail = net.registry.id_of(&query.tail).ok_or_else(|| Error::UnboundSymbol(query.tail.clone()))?;
    let (cue_ms, readout_ms) = (net.params.query.cue_ms, net.params.query.readout_ms);
    let theta = net.params.readout.theta;
    net.synapses.clear_eligibility();
    let run = cued_run(
        net,
        &[&query.head, &query.relation],
        vec![tail],
        cue_ms,
        readout_ms,
        PlasticityMode::Rstdp,
        seed,
        false,
        Stop::FirstCross,
    )?;
    let peak = run.peaks[0];
    let answer = is_answer(peak, theta);
    let correct = answer == truth;
    let now = net.time_ms();
    let reward = if correct { net.params.rstdp.c_r } else { net.params.rstdp.c_p };
    let delivered = answer || net.params.rstdp.signal_silent_answers;
    if delivered {
        if correct {
            net.rewards.reward_at(now);
        } else {
            net.rewards.punish_at(now);
        }
        let tail_ms = net.params.rstdp.t_r_ms + net.dt();
        net.run_window_with(&[], tail_ms, PlasticityMode::Rstdp, |_, _, _| {})?;
    }
    net.synapses.clear_eligibility();
    net.rest();
    Ok(TrialOutcome { triple: query.clone(), truth, answer, correct, peak, reward, delivered })
}

/// Ask every masked triple once per epoch (seeded order), rewarding correct
/// answers. Ground truth is the relation's transitivity flag. `on_trial`
/// sees every outcome.
pub fn train_transitivity(
    net: &mut Network,
    split: &DatasetSplit,
    meta: &RelationMeta,
    epochs: usize,
    seed: u64,
    mut on_trial: impl FnMut(usize, &TrialOutcome),
) -> Result<Vec<EpochMetrics>> {
    let mut labelled = Vec::with_capacity(split.masked.len());
    for t in &split.masked {
        let truth = *meta
            .get(&t.relation)
            .ok_or_else(|| Error::config(format!("relation '{}' has no transitivity entry", t.relation)))?;
        for l in [&t.head, &t.relation, &t.tail] {
            net.registry.require(l)?;
        }
        labelled.push((t.clone(), truth));
    }
    let mut metrics = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let epoch_seed = derive_seed(&[seed, epoch as u64]);
        let mut order: Vec<usize> = (0..labelled.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        let (mut correct, mut reward) = (0usize, 0.0);
        for i in order {
            let (t, truth) = &labelled[i];
            // Cue noise depends on the query only, so with unchanged weights
            // a query gets the same answer in every epoch.
            let out = transitivity_trial(net, t, *truth, seed)?;
            correct += usize::from(out.correct);
            if out.delivered {
                reward += out.reward;
            }
            on_trial(epoch + 1, &out);
        }
        let n = labelled.len().max(1) as f64;
        metrics.push(EpochMetrics { epoch: epoch + 1, accuracy: correct as f64 / n, mean_reward: reward / n });
    }
    Ok(metrics)
}

/// Mean weight from the excitatory members of `from` onto the members of
/// `to`, counting absent synapses as zero.
pub fn group_mean(net: &Network, from: usize, to: usize) -> f64 {
    let src = &net.registry.engrams()[from];
    let exc: Vec<u32> = src
        .neuron_ids
        .iter()
        .copied()
        .filter(|&n| net.state.polarity[n as usize] == crate::neuron::Polarity::Excitatory)
        .collect();
    if exc.is_empty() {
        return 0.0;
    }
    let mask = net.registry.mask(to);
    let (sum, _) = net.synapses.group_sums(&exc, &mask, &net.state.polarity);
    sum / (exc.len() * net.registry.engrams()[to].len()) as f64
}

fn group_matrix(net: &Network) -> Vec<Vec<f64>> {
    let m = net.registry.len();
    (0..m).map(|i| (0..m).map(|j| if i == j { 0.0 } else { group_mean(net, i, j) }).collect()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupChange {
    pub from: String,
    pub to: String,
    pub before: f64,
    pub after: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InductionReport {
    pub co_stimulated: Vec<String>,
    /// Population pairs whose mean weight crossed the reporting threshold.
    pub new_groups: Vec<GroupChange>,
    pub emergent: Vec<Triple>,
}

impl InductionReport {
    pub fn contains(&self, t: &Triple) -> bool {
        self.emergent.contains(t)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("head\trelation\ttail\n");
        for t in &self.emergent {
            out.push_str(&format!("{t}\n"));
        }
        out
    }
}

/// Co-stimulate `labels` with STDP on for `duration_ms` and report the
/// triples the new connectivity implies.
///
/// A triple (P, R, Q) is reported when P and Q are entities that were not
/// stimulated, the triple is not in `known`, P and R are associated in
/// either direction, the mean group weights R→Q and P→Q reach the reporting
/// threshold, and at least one of these links crossed it during the run
/// while rising by at least `induction.min_gain`.
pub fn run_induction(
    net: &mut Network,
    labels: &[&str],
    known: &[Triple],
    duration_ms: f64,
    seed: u64,
) -> Result<InductionReport> {
    let stim: Vec<usize> = labels
        .iter()
        .map(|l| net.registry.id_of(l).ok_or_else(|| Error::UnboundSymbol(l.to_string())))
        .collect::<Result<_>>()?;
    let mut report = InductionReport { co_stimulated: labels.iter().map(|s| s.to_string()).collect(), ..Default::default() };
    if duration_ms == 0.0 {
        return Ok(report);
    }
    let threshold = net.params.induction.report_threshold;
    let min_gain = net.params.induction.min_gain;
    let before = group_matrix(net);
    net.rest();
    let t0 = net.time_ms();
    let base = derive_seed(&[seed, 0x1d]);
    let plans = labels
        .iter()
        .enumerate()
        .map(|(i, l)| net.stimulate(l, (t0, t0 + duration_ms), derive_seed(&[base, i as u64])))
        .collect::<Result<Vec<_>>>()?;
    net.run_window_with(&plans, duration_ms, PlasticityMode::Stdp, |_, _, _| {})?;
    net.run_window_with(&[], net.params.protocol.rest_ms, PlasticityMode::Stdp, |_, _, _| {})?;
    net.rest();
    let after = group_matrix(net);

    let engrams = net.registry.engrams();
    let m = engrams.len();
    for i in 0..m {
        for j in 0..m {
            if i != j && after[i][j] >= threshold && before[i][j] < threshold && after[i][j] - before[i][j] >= min_gain {
                report.new_groups.push(GroupChange {
                    from: engrams[i].label.clone(),
                    to: engrams[j].label.clone(),
                    before: before[i][j],
                    after: after[i][j],
                });
            }
        }
    }
    let known: HashSet<&Triple> = known.iter().collect();
    let entity = |i: usize| engrams[i].kind == SymbolKind::Entity && !stim.contains(&i);
    for p in (0..m).filter(|&p| entity(p)) {
        for r in (0..m).filter(|&r| engrams[r].kind == SymbolKind::Relation) {
            for q in (0..m).filter(|&q| q != p && entity(q)) {
                // Co-activation can order the subject after its relation, so
                // either direction counts for that pair.
                let pr = |w: &[Vec<f64>]| w[p][r].max(w[r][p]);
                let now = [pr(&after), after[r][q], after[p][q]];
                let was = [pr(&before), before[r][q], before[p][q]];
                let formed = now.iter().zip(&was).any(|(&a, &b)| b < threshold && a - b >= min_gain);
                if now.iter().any(|&w| w < threshold) || !formed {
                    continue;
                }
                let t = Triple::new(&engrams[p].label, &engrams[r].label, &engrams[q].label);
                if !known.contains(&t) {
                    report.emergent.push(t);
                }
            }
        }
    }
    Ok(report)
}

/// The six facts of the induction experiment.
pub fn induction_triples() -> Vec<Triple> {
    [
        ("Biden", "IsPresidentOf", "America"),
        ("Putin", "IsPresidentOf", "Russia"),
        ("Biden", "IsA", "Person"),
        ("Putin", "IsA", "Person"),
        ("America", "IsA", "Country"),
        ("Russia", "IsA", "Country"),
    ]
    .iter()
    .map(|(h, r, t)| Triple::new(*h, *r, *t))
    .collect()
}

/// Random graph of distinct triples without self-loops.
pub fn random_graph(entities: usize, relations: usize, triples: usize, seed: u64) -> Result<Vec<Triple>> {
    if entities < 2 || relations == 0 || triples > entities * (entities - 1) * relations {
        return Err(Error::config("random graph is over-constrained"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(triples);
    while out.len() < triples {
        let h = rng.random_range(0..entities);
        let t = rng.random_range(0..entities);
        let r = rng.random_range(0..relations);
        if h != t && seen.insert((h, r, t)) {
            out.push(Triple::new(format!("E{h}"), format!("Rel{r}"), format!("E{t}")));
        }
    }
    Ok(out)
}

/// `count` triples over the same symbols that are absent from `graph`.
pub fn untrained_triples(graph: &[Triple], count: usize, seed: u64) -> Vec<Triple> {
    let mut ents: Vec<&str> = graph.iter().flat_map(|t| [t.head.as_str(), t.tail.as_str()]).collect();
    ents.sort_unstable();
    ents.dedup();
    let mut rels: Vec<&str> = graph.iter().map(|t| t.relation.as_str()).collect();
    rels.sort_unstable();
    rels.dedup();
    let known: HashSet<&Triple> = graph.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    let limit = ents.len() * ents.len() * rels.len();
    while out.len() < count && seen.len() < limit {
        let h = ents[rng.random_range(0..ents.len())];
        let t = ents[rng.random_range(0..ents.len())];
        let r = rels[rng.random_range(0..rels.len())];
        let cand = Triple::new(h, r, t);
        if h != t && !known.contains(&cand) && seen.insert(cand.clone()) {
            out.push(cand);
        }
    }
    out
}

/// Shape of the synthetic transitivity dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransitivitySpec {
    pub transitive_relations: usize,
    pub non_transitive_relations: usize,
    pub chains_per_relation: usize,
    /// Links per chain; a chain has `chain_length + 1` entities.
    pub chain_length: usize,
    pub mask_fraction: f64,
}

impl Default for TransitivitySpec {
    fn default() -> Self {
        Self {
            transitive_relations: 2,
            non_transitive_relations: 2,
            chains_per_relation: 2,
            chain_length: 4,
            mask_fraction: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitivityDataset {
    pub split: DatasetSplit,
    pub meta: RelationMeta,
}

/// Chains `e0 -R-> e1 -R-> ... -R-> eL` per relation, each relation over its
/// own entities. Chain links are always trained. For transitive relations
/// the implied triples `e_i R e_j` (j ≥ i + 2) are split: the masked share
/// becomes positive queries, the rest is trained. For every masked positive
/// one chain-completion triple of a non-transitive relation is added as a
/// negative query.
pub fn transitivity_dataset(spec: &TransitivitySpec, seed: u64) -> Result<TransitivityDataset> {
    if spec.chain_length < 2 || spec.chains_per_relation == 0 {
        return Err(Error::config("transitivity chains need at least two links"));
    }
    let mut meta = RelationMeta::new();
    let mut train = Vec::new();
    let mut closure = Vec::new();
    let mut negatives = Vec::new();
    let relations = (0..spec.transitive_relations)
        .map(|i| (format!("Trans{i}"), true))
        .chain((0..spec.non_transitive_relations).map(|i| (format!("NonTrans{i}"), false)));
    for (rel, transitive) in relations {
        meta.insert(rel.clone(), transitive);
        for c in 0..spec.chains_per_relation {
            let e = |i: usize| format!("{rel}.c{c}.e{i}");
            for i in 0..spec.chain_length {
                train.push(Triple::new(e(i), &rel, e(i + 1)));
            }
            for i in 0..=spec.chain_length {
                for j in i + 2..=spec.chain_length {
                    let t = Triple::new(e(i), &rel, e(j));
                    if transitive {
                        closure.push(t);
                    } else {
                        negatives.push(t);
                    }
                }
            }
        }
    }
    let implied = mask_split(&closure, spec.mask_fraction, seed)?;
    if implied.masked.len() > negatives.len() {
        return Err(Error::config("not enough non-transitive chains to balance the masked positives"));
    }
    negatives.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 0x4e])));
    negatives.truncate(implied.masked.len());
    train.extend(implied.train);
    let mut masked = implied.masked;
    masked.extend(negatives);
    Ok(TransitivityDataset { split: DatasetSplit { train, masked, mask_fraction: spec.mask_fraction }, meta })
}

/// Build a network for `params`, bind every symbol of the dataset, encode
/// the training triples and run R-STDP training.
pub fn run_transitivity(
    params: &Params,
    data: &TransitivityDataset,
    epochs: usize,
    seed: u64,
) -> Result<(Network, Vec<EpochMetrics>)> {
    let mut net = Network::new(params.clone())?;
    let mut all = data.split.train.clone();
    all.extend(data.split.masked.iter().cloned());
    net.bind_symbols(&all, derive_seed(&[seed, 1]))?;
    encode_graph(&mut net, &data.split.train, derive_seed(&[seed, 2]), |_, _| {})?;
    let metrics = train_transitivity(&mut net, &data.split, &data.meta, epochs, derive_seed(&[seed, 3]), |_, _| {})?;
    Ok((net, metrics))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub seed: u64,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("ratio,seed,final_accuracy,best_accuracy\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.ratio, r.seed, r.final_accuracy, r.best_accuracy));
    }
    out
}

/// Train once per (ratio, seed) with the inhibitory fraction overridden.
/// Points run as independent simulations on up to `jobs` threads; rows come
/// back ordered by ratio, then seed.
pub fn sweep_inhibitory_ratio(
    params: &Params,
    spec: &TransitivitySpec,
    ratios: &[f64],
    seeds: &[u64],
    epochs: usize,
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    if let Some(r) = ratios.iter().find(|r| !(0.0..1.0).contains(*r)) {
        return Err(Error::config(format!("inhibitory ratio {r} outside [0, 1)")));
    }
    let points: Vec<(f64, u64)> = ratios.iter().flat_map(|&r| seeds.iter().map(move |&s| (r, s))).collect();
    let rows = crate::par::map(points, jobs, |(ratio, seed)| -> Result<SweepRow> {
        let mut p = params.clone();
        p.engram.inhibitory_fraction = ratio;
        let data = transitivity_dataset(spec, seed)?;
        let (_, metrics) = run_transitivity(&p, &data, epochs, seed)?;
        Ok(SweepRow {
            ratio,
            seed,
            final_accuracy: metrics.last().map_or(0.0, |m| m.accuracy),
            best_accuracy: metrics.iter().map(|m| m.accuracy).fold(0.0, f64::max),
        })
    });
    rows.into_iter().collect()
}
