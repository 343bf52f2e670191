//! Versioned binary snapshots of a whole [`Network`].
//!
//! Layout: magic `GSNN`, format version (u32 LE), then four sections in
//! fixed order (`HEAD`, `REGS`, `WGHT`, `NEUR`). Each section is a 4-byte
//! tag, a u64 payload length, the payload and a CRC32 of the payload. All
//! integers and floats are little-endian; floats are stored as raw bits.

use std::path::Path;

use serde::Serialize;

use crate::engram::{Engram, EngramRegistry, SymbolKind};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::neuron::{NetworkState, Polarity, SpikeHistory};
use crate::params::Params;
use crate::plasticity::{RewardSchedule, Synapse, SynapseTable};

pub const MAGIC: &[u8; 4] = b"GSNN";
pub const FORMAT_VERSION: u32 = 1;

const SECTIONS: [(&[u8; 4], &str); 4] =
    [(b"HEAD", "header"), (b"REGS", "registry"), (b"WGHT", "weights"), (b"NEUR", "neuron state")];

#[derive(Default)]
struct Out(Vec<u8>);

impl Out {
    fn u8(&mut self, x: u8) {
        self.0.push(x);
    }
    fn u32(&mut self, x: u32) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn u64(&mut self, x: u64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn f64(&mut self, x: f64) {
        self.u64(x.to_bits());
    }
    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn opt_f64(&mut self, x: Option<f64>) {
        match x {
            Some(v) => {
                self.u8(1);
                self.f64(v);
            }
            None => self.u8(0),
        }
    }
    fn ids(&mut self, ids: &[u32]) {
        self.u64(ids.len() as u64);
        for &i in ids {
            self.u32(i);
        }
    }
}

struct In<'a> {
    buf: &'a [u8],
    pos: usize,
    section: &'static str,
}

impl<'a> In<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Snapshot { section: self.section, message: message.into() }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err("truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    /// A length field that must fit in the remaining bytes at `unit` bytes
    /// per element.
    fn len(&mut self, unit: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n.saturating_mul(unit) > self.buf.len() - self.pos {
            return Err(self.err("length field exceeds section size"));
        }
        Ok(n)
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| self.err("invalid UTF-8"))
    }
    fn opt_f64(&mut self) -> Result<Option<f64>> {
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(self.f64()?)),
            _ => Err(self.err("bad option tag")),
        }
    }
    fn ids(&mut self, bound: usize) -> Result<Vec<u32>> {
        let n = self.len(4)?;
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            let i = self.u32()?;
            if i as usize >= bound {
                return Err(self.err(format!("neuron index {i} out of range")));
            }
            v.push(i);
        }
        Ok(v)
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.err("trailing bytes"));
        }
        Ok(())
    }
}

fn section_bytes(net: &Network) -> [Vec<u8>; 4] {
    let mut head = Out::default();
    head.str(&net.params.to_toml_string());

    let mut regs = Out::default();
    regs.u64(net.registry.neurons() as u64);
    regs.u64(net.registry.len() as u64);
    for e in net.registry.engrams() {
        regs.str(&e.label);
        regs.u8(match e.kind {
            SymbolKind::Entity => 0,
            SymbolKind::Relation => 1,
        });
        regs.u64(e.inhibitory_count as u64);
        regs.ids(&e.neuron_ids);
    }

    let mut wght = Out::default();
    wght.u64(net.synapses.len() as u64);
    for s in net.synapses.synapses() {
        wght.u32(s.pre);
        wght.u32(s.post);
        wght.f64(s.weight);
        wght.f64(s.eligibility);
    }

    let st = &net.state;
    let mut neur = Out::default();
    neur.u64(st.step);
    neur.u64(st.neurons() as u64);
    for &v in &st.v {
        neur.f64(v);
    }
    for &r in &st.refractory_steps {
        neur.u32(r);
    }
    for &p in &st.polarity {
        neur.u8(u8::from(p == Polarity::Inhibitory));
    }
    neur.ids(&st.fired);
    for &l in st.history.raw_last() {
        neur.u64(l);
    }
    let recent: Vec<_> = st.history.recent().collect();
    neur.u64(recent.len() as u64);
    for (s, list) in recent {
        neur.u64(*s);
        neur.ids(list);
    }
    neur.opt_f64(net.rewards.last_reward_ms);
    neur.opt_f64(net.rewards.last_punish_ms);

    [head.0, regs.0, wght.0, neur.0]
}

/// Serialise a network to bytes.
pub fn to_bytes(net: &Network) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for ((tag, _), payload) in SECTIONS.iter().zip(section_bytes(net)) {
        out.extend_from_slice(*tag);
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    }
    out
}

/// Split a container into its verified section payloads.
fn sections(bytes: &[u8]) -> Result<Vec<&[u8]>> {
    let mut r = In { buf: bytes, pos: 0, section: "header" };
    if r.take(4).map_err(|_| r.err("missing magic"))? != MAGIC {
        return Err(r.err("bad magic, not a snapshot file"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(r.err(format!("unsupported format version {version}, expected {FORMAT_VERSION}")));
    }
    let mut out = Vec::new();
    for (tag, name) in SECTIONS {
        r.section = name;
        if r.take(4)? != tag {
            return Err(r.err("missing section tag"));
        }
        let n = r.len(1)?;
        let payload = r.take(n)?;
        let crc = r.u32()?;
        if crc != crc32fast::hash(payload) {
            return Err(r.err("checksum mismatch"));
        }
        out.push(payload);
    }
    r.finish()?;
    Ok(out)
}

/// Rebuild a network from bytes produced by [`to_bytes`].
pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
    let parts = sections(bytes)?;

    let mut r = In { buf: parts[0], pos: 0, section: "header" };
    let params = Params::from_toml_str(&r.str()?).map_err(|e| r.err(e.to_string()))?;
    r.finish()?;
    let n = params.engram.neurons;

    let mut r = In { buf: parts[1], pos: 0, section: "registry" };
    if r.u64()? as usize != n {
        return Err(r.err("arena size disagrees with header"));
    }
    let mut registry = EngramRegistry::new(&params.engram).map_err(|e| r.err(e.to_string()))?;
    let count = r.len(1)?;
    for _ in 0..count {
        let label = r.str()?;
        let kind = match r.u8()? {
            0 => SymbolKind::Entity,
            1 => SymbolKind::Relation,
            _ => return Err(r.err("bad symbol kind")),
        };
        let inhibitory = r.u64()? as usize;
        let ids = r.ids(n)?;
        if inhibitory > ids.len() {
            return Err(r.err("inhibitory count exceeds engram size"));
        }
        registry.insert(Engram::new(label, kind, ids, inhibitory)).map_err(|e| r.err(e.to_string()))?;
    }
    r.finish()?;

    let mut r = In { buf: parts[2], pos: 0, section: "weights" };
    let count = r.len(24)?;
    let mut syn = Vec::with_capacity(count);
    for _ in 0..count {
        let (pre, post) = (r.u32()?, r.u32()?);
        if pre as usize >= n || post as usize >= n {
            return Err(r.err("synapse endpoint out of range"));
        }
        syn.push(Synapse { pre, post, weight: r.f64()?, eligibility: r.f64()? });
    }
    r.finish()?;
    let synapses = SynapseTable::from_synapses(n, syn);

    let mut r = In { buf: parts[3], pos: 0, section: "neuron state" };
    let step = r.u64()?;
    if r.u64()? as usize != n {
        return Err(r.err("arena size disagrees with header"));
    }
    let v = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let refractory = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let polarity = (0..n)
        .map(|_| match r.u8()? {
            0 => Ok(Polarity::Excitatory),
            1 => Ok(Polarity::Inhibitory),
            _ => Err(r.err("bad polarity flag")),
        })
        .collect::<Result<Vec<_>>>()?;
    let fired = r.ids(n)?;
    let last = (0..n).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
    let recent_len = r.len(16)?;
    let mut recent = Vec::with_capacity(recent_len);
    for _ in 0..recent_len {
        let s = r.u64()?;
        recent.push((s, r.ids(n)?));
    }
    let rewards = RewardSchedule { last_reward_ms: r.opt_f64()?, last_punish_ms: r.opt_f64()? };
    r.finish()?;
    let state = NetworkState::from_parts(v, refractory, polarity, fired, SpikeHistory::from_parts(last, recent), step);

    Ok(Network { params, state, synapses, registry, rewards })
}

/// Atomic write: the bytes go to a sibling temporary file which is then
/// renamed over `path`.
pub fn save_snapshot(net: &Network, path: &Path) -> Result<()> {
    write_atomic(path, &to_bytes(net))
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_snapshot(path: &Path) -> Result<Network> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Lossless JSON rendering (floats as exact decimal strings via `{:?}`).
pub fn to_json(net: &Network) -> Result<String> {
    #[derive(Serialize)]
    struct Doc<'a> {
        format_version: u32,
        params: &'a Params,
        engrams: &'a [Engram],
        synapses: Vec<[String; 4]>,
        step: u64,
        v: Vec<String>,
        refractory_steps: &'a [u32],
        polarity: &'a [Polarity],
        fired: &'a [u32],
        last_spike: Vec<Option<u64>>,
        recent_spikes: Vec<(u64, &'a Vec<u32>)>,
        rewards: &'a RewardSchedule,
    }
    let st = &net.state;
    let doc = Doc {
        format_version: FORMAT_VERSION,
        params: &net.params,
        engrams: net.registry.engrams(),
        synapses: net
            .synapses
            .synapses()
            .iter()
            .map(|s| [s.pre.to_string(), s.post.to_string(), format!("{:?}", s.weight), format!("{:?}", s.eligibility)])
            .collect(),
        step: st.step,
        v: st.v.iter().map(|x| format!("{x:?}")).collect(),
        refractory_steps: &st.refractory_steps,
        polarity: &st.polarity,
        fired: &st.fired,
        last_spike: (0..st.neurons() as u32).map(|i| st.history.last_spike(i)).collect(),
        recent_spikes: st.history.recent().map(|(s, l)| (*s, l)).collect(),
        rewards: &net.rewards,
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

/// One-line summary of each section, for inspection tools.
pub fn describe(bytes: &[u8]) -> Result<Vec<(String, usize)>> {
    let parts = sections(bytes)?;
    Ok(SECTIONS.iter().zip(parts).map(|((_, name), p)| (name.to_string(), p.len())).collect())
}
