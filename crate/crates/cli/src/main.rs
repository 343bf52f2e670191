//! `gsnn`: encode knowledge graphs into a spiking network, query it and run
//! the transitivity, inhibition-sweep and induction experiments.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use gsnn_core::protocol::{
    induction_triples, metrics_csv, sweep_csv, transitivity_dataset, TransitivityDataset, TransitivitySpec,
};
use gsnn_core::{
    encode_graph, export_reasoning_trace, load_snapshot, mask_split, parse_relation_meta, parse_triples, query,
    run_induction, save_snapshot, snapshot, sweep_inhibitory_ratio, train_transitivity, verify_triple, Network,
    Params, Triple,
};

#[derive(Parser)]
#[command(name = "gsnn", version, about = "Spiking-network knowledge-graph engine")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML config file; missing sections use built-in defaults.
    #[arg(long, global = true, env = "GSNN_CONFIG")]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set engram.neurons=4000`. Repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for parallel sweeps (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Bind symbols, encode every triple and save a snapshot.
    Encode {
        triples: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cue HEAD and RELATION and rank the entities that light up.
    Query {
        snapshot: PathBuf,
        head: String,
        relation: String,
        #[arg(long)]
        theta: Option<f64>,
        /// Number of ranked candidates to print.
        #[arg(long, default_value_t = 10)]
        top: usize,
        /// Write the similarity trace as CSV here (plus a .json sibling).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Ask whether HEAD RELATION TAIL holds.
    Verify {
        snapshot: PathBuf,
        head: String,
        relation: String,
        tail: String,
        #[arg(long)]
        theta: Option<f64>,
        /// Exit with status 1 unless the answer matches.
        #[arg(long)]
        expect: Option<bool>,
    },
    /// Reward-driven transitivity training on masked triples.
    TrainTransitivity {
        #[arg(long)]
        out: PathBuf,
        /// Triples TSV; without it a synthetic chain dataset is generated.
        #[arg(long, requires = "meta")]
        triples: Option<PathBuf>,
        /// Relation metadata TSV (`relation<TAB>0|1`).
        #[arg(long, requires = "triples")]
        meta: Option<PathBuf>,
        #[arg(long, default_value_t = 0.3)]
        mask: f64,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        /// Continue from this snapshot instead of encoding from scratch.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Exit with status 1 if the final accuracy is lower.
        #[arg(long)]
        min_accuracy: Option<f64>,
    },
    /// Final transitivity accuracy as a function of the inhibitory fraction.
    SweepInhibition {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,0.05,0.1,0.15,0.2,0.3")]
        ratios: Vec<f64>,
        /// Seeds per ratio, counted from `--seed`.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
    },
    /// Encode a graph, co-stimulate entities and report emergent triples.
    Induce {
        #[arg(long)]
        out: PathBuf,
        /// Triples TSV; defaults to the built-in six-fact set.
        #[arg(long)]
        triples: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "Biden,Putin")]
        stimulate: Vec<String>,
        #[arg(long)]
        duration_ms: Option<f64>,
        /// Query every emergent triple afterwards; exit 1 if one fails.
        #[arg(long)]
        verify: bool,
    },
    /// Write the reasoning trace of a query (CSV + JSON).
    ExportTrace {
        snapshot: PathBuf,
        head: String,
        relation: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the section layout and contents of a snapshot.
    SnapshotInfo {
        snapshot: PathBuf,
        /// Dump the whole snapshot as JSON instead.
        #[arg(long)]
        json: bool,
    },
}

/// Result of a command that ran to completion.
enum Outcome {
    Ok,
    /// The experiment ran but an asserted expectation did not hold.
    Failed(String),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failed(msg)) => {
            eprintln!("assertion failed: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            let fault = matches!(e.downcast_ref::<gsnn_core::Error>(), Some(gsnn_core::Error::SimulationFault { .. }));
            ExitCode::from(if fault { 1 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    let g = &cli.global;
    let params = || config::resolve(g.config.as_deref(), &g.overrides);
    match cli.command {
        Command::Encode { triples, out } => encode(params()?, &triples, &out, g.seed),
        Command::Query { snapshot, head, relation, theta, top, trace } => {
            let mut net = open(&snapshot, &g.overrides)?;
            let theta = theta.unwrap_or(net.params.readout.theta);
            let r = query(&mut net, &head, &relation, theta, g.seed)?;
            println!("rank\tlabel\tpeak\ttime_to_threshold_ms");
            for (i, c) in r.candidates.iter().take(top).enumerate() {
                let ttt = c.time_to_threshold_ms.map_or("-".to_string(), |t| t.to_string());
                println!("{}\t{}\t{:.4}\t{}", i + 1, c.label, c.peak, ttt);
            }
            println!("answers: {}", r.answers.join(","));
            if let Some(path) = trace {
                export_reasoning_trace(&r, &path)?;
            }
            Ok(Outcome::Ok)
        }
        Command::Verify { snapshot, head, relation, tail, theta, expect } => {
            let mut net = open(&snapshot, &g.overrides)?;
            let theta = theta.unwrap_or(net.params.readout.theta);
            let (yes, series) = verify_triple(&mut net, &head, &relation, &tail, theta, g.seed)?;
            let peak = series.iter().copied().fold(0.0, f64::max);
            println!("{}\t{head}\t{relation}\t{tail}\tpeak={peak:.4}", if yes { "yes" } else { "no" });
            Ok(match expect {
                Some(e) if e != yes => Outcome::Failed(format!("expected {e}, network answered {yes}")),
                _ => Outcome::Ok,
            })
        }
        Command::TrainTransitivity { out, triples, meta, mask, epochs, resume, min_accuracy } => {
            let data = match (triples, meta) {
                (Some(t), Some(m)) => {
                    let triples = parse_triples(&read(&t)?)?;
                    let meta = parse_relation_meta(&read(&m)?)?;
                    TransitivityDataset { split: mask_split(&triples, mask, g.seed)?, meta }
                }
                _ => transitivity_dataset(&TransitivitySpec { mask_fraction: mask, ..Default::default() }, g.seed)?,
            };
            train(params()?, &data, &out, epochs, resume.as_deref(), min_accuracy, g.seed)
        }
        Command::SweepInhibition { out, ratios, seeds, epochs } => {
            let p = params()?;
            prepare_out(&out, &p)?;
            let seeds: Vec<u64> = (g.seed..g.seed + seeds).collect();
            let start = Instant::now();
            let rows = sweep_inhibitory_ratio(&p, &TransitivitySpec::default(), &ratios, &seeds, epochs, g.jobs)?;
            fs::write(out.join("metrics.csv"), sweep_csv(&rows))?;
            println!("ratio\tmedian_final_accuracy");
            let mut best = (f64::NAN, f64::NEG_INFINITY);
            for &r in &ratios {
                let m = median(rows.iter().filter(|x| x.ratio == r).map(|x| x.final_accuracy).collect());
                println!("{r}\t{m:.4}");
                if m > best.1 {
                    best = (r, m);
                }
            }
            println!("peak at ratio {}", best.0);
            eprintln!("sweep took {:.1?}", start.elapsed());
            Ok(Outcome::Ok)
        }
        Command::Induce { out, triples, stimulate, duration_ms, verify } => {
            let triples = match triples {
                Some(t) => parse_triples(&read(&t)?)?,
                None => induction_triples(),
            };
            induce(params()?, &triples, &out, &stimulate, duration_ms, verify, g.seed)
        }
        Command::ExportTrace { snapshot, head, relation, out } => {
            let mut net = open(&snapshot, &g.overrides)?;
            let theta = net.params.readout.theta;
            let r = query(&mut net, &head, &relation, theta, g.seed)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            export_reasoning_trace(&r, &out)?;
            println!("wrote {} and {}", out.display(), out.with_extension("json").display());
            Ok(Outcome::Ok)
        }
        Command::SnapshotInfo { snapshot: path, json } => {
            let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
            let net = snapshot::from_bytes(&bytes)?;
            if json {
                println!("{}", snapshot::to_json(&net)?);
                return Ok(Outcome::Ok);
            }
            for (name, len) in snapshot::describe(&bytes)? {
                println!("section {name}\t{len} bytes");
            }
            println!("neurons\t{}", net.neurons());
            println!("engrams\t{}", net.registry.len());
            println!("synapses\t{}", net.synapses.len());
            println!("time_ms\t{}", net.time_ms());
            println!("digest\t{:016x}", net.synapses.digest());
            Ok(Outcome::Ok)
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Load a snapshot; `--set` overrides are applied to its stored parameters.
fn open(path: &Path, overrides: &[String]) -> Result<Network> {
    let mut net = load_snapshot(path)?;
    if !overrides.is_empty() {
        let p = config::amend(&net.params, overrides)?;
        if p.engram != net.params.engram || p.neuron.dt_ms != net.params.neuron.dt_ms {
            anyhow::bail!("engram layout and dt are fixed by the snapshot and cannot be overridden");
        }
        net.params = p;
    }
    Ok(net)
}

/// Create `dir`, `dir/traces` and echo the effective config.
fn prepare_out(dir: &Path, params: &Params) -> Result<()> {
    fs::create_dir_all(dir.join("traces")).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.echo"), params.to_toml_string())?;
    Ok(())
}

fn encoded(params: Params, bind: &[Triple], train: &[Triple], seed: u64) -> Result<Network> {
    let mut net = Network::new(params)?;
    net.bind_symbols(bind, seed)?;
    encode_graph(&mut net, train, seed, |done, total| {
        if done % 1000 == 0 || done == total {
            eprintln!("encoded {done}/{total}");
        }
    })?;
    Ok(net)
}

fn encode(params: Params, triples: &Path, out: &Path, seed: u64) -> Result<Outcome> {
    let triples = parse_triples(&read(triples)?)?;
    let start = Instant::now();
    let net = encoded(params, &triples, &triples, seed)?;
    prepare_out(out, &net.params)?;
    save_snapshot(&net, &out.join("snapshot.gsnn"))?;
    println!("triples\t{}", triples.len());
    println!("engrams\t{}", net.registry.len());
    println!("synapses\t{}", net.synapses.len());
    eprintln!("encoding took {:.1?}", start.elapsed());
    Ok(Outcome::Ok)
}

fn train(
    params: Params,
    data: &TransitivityDataset,
    out: &Path,
    epochs: usize,
    resume: Option<&Path>,
    min_accuracy: Option<f64>,
    seed: u64,
) -> Result<Outcome> {
    let mut net = match resume {
        Some(path) => load_snapshot(path)?,
        None => {
            let mut all = data.split.train.clone();
            all.extend(data.split.masked.iter().cloned());
            encoded(params, &all, &data.split.train, seed)?
        }
    };
    prepare_out(out, &net.params)?;
    fs::write(out.join("train.tsv"), gsnn_core::kg::triples_to_tsv(&data.split.train))?;
    fs::write(out.join("masked.tsv"), gsnn_core::kg::triples_to_tsv(&data.split.masked))?;
    fs::write(out.join("meta.tsv"), gsnn_core::kg::relation_meta_to_tsv(&data.meta))?;
    let mut trials = String::from("epoch,head,relation,tail,truth,answer,peak,reward\n");
    let metrics = train_transitivity(&mut net, &data.split, &data.meta, epochs, seed, |epoch, o| {
        let t = &o.triple;
        trials.push_str(&format!(
            "{epoch},{},{},{},{},{},{},{}\n",
            t.head, t.relation, t.tail, o.truth, o.answer, o.peak, if o.delivered { o.reward } else { 0.0 }
        ));
    })?;
    fs::write(out.join("metrics.csv"), metrics_csv(&metrics))?;
    fs::write(out.join("traces").join("trials.csv"), trials)?;
    save_snapshot(&net, &out.join("snapshot.gsnn"))?;
    for m in &metrics {
        println!("epoch {}\taccuracy {:.4}\tmean_reward {:.2}", m.epoch, m.accuracy, m.mean_reward);
    }
    let last = metrics.last().map(|m| m.accuracy);
    Ok(match (min_accuracy, last) {
        (Some(min), Some(acc)) if acc < min => Outcome::Failed(format!("final accuracy {acc:.4} below {min}")),
        (Some(min), None) => Outcome::Failed(format!("no epochs run, cannot reach accuracy {min}")),
        _ => Outcome::Ok,
    })
}

fn induce(
    params: Params,
    triples: &[Triple],
    out: &Path,
    stimulate: &[String],
    duration_ms: Option<f64>,
    verify: bool,
    seed: u64,
) -> Result<Outcome> {
    let mut net = encoded(params, triples, triples, seed)?;
    prepare_out(out, &net.params)?;
    let labels: Vec<&str> = stimulate.iter().map(String::as_str).collect();
    let duration = duration_ms.unwrap_or(net.params.induction.duration_ms);
    let report = run_induction(&mut net, &labels, triples, duration, seed)?;
    fs::write(out.join("report.tsv"), report.to_tsv())?;
    let mut groups = String::from("from,to,before,after\n");
    for c in &report.new_groups {
        groups.push_str(&format!("{},{},{},{}\n", c.from, c.to, c.before, c.after));
    }
    fs::write(out.join("traces").join("groups.csv"), groups)?;
    save_snapshot(&net, &out.join("snapshot.gsnn"))?;
    println!("emergent triples: {}", report.emergent.len());
    for t in &report.emergent {
        println!("{t}");
    }
    if !verify {
        return Ok(Outcome::Ok);
    }
    let theta = net.params.readout.theta;
    let mut failed = Vec::new();
    for t in &report.emergent {
        let (yes, series) = verify_triple(&mut net, &t.head, &t.relation, &t.tail, theta, seed)?;
        let peak = series.iter().copied().fold(0.0, f64::max);
        println!("verify\t{t}\t{}\tpeak={peak:.4}", if yes { "yes" } else { "no" });
        if !yes {
            failed.push(t.to_string().replace('\t', " "));
        }
    }
    Ok(if failed.is_empty() { Outcome::Ok } else { Outcome::Failed(format!("not retrieved: {}", failed.join("; "))) })
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
