//! Triple datasets, relation metadata and train/mask splits.

use std::collections::{BTreeMap, HashSet};
use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engram::{EngramRegistry, SymbolKind};
use crate::error::{Error, Result};
use crate::network::{derive_seed, Network};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl Triple {
    pub fn new(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Self {
        Self { head: head.into(), relation: relation.into(), tail: tail.into() }
    }
}

impl std::fmt::Display for Triple {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}\t{}\t{}", self.head, self.relation, self.tail)
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

fn is_skippable(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with('#')
}

/// Streaming reader over `head<TAB>relation<TAB>tail` lines. Blank lines and
/// lines starting with `#` are skipped.
pub fn read_triples<R: BufRead>(reader: R) -> impl Iterator<Item = Result<Triple>> {
    reader.lines().enumerate().filter_map(|(i, line)| {
        let line_no = i + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(parse_err(line_no, e.to_string()))),
        };
        if is_skippable(&line) {
            return None;
        }
        let cols: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
        if cols.len() != 3 {
            return Some(Err(parse_err(line_no, format!("expected 3 tab-separated columns, found {}", cols.len()))));
        }
        if cols.iter().any(|c| c.trim().is_empty()) {
            return Some(Err(parse_err(line_no, "empty field")));
        }
        Some(Ok(Triple::new(cols[0].trim(), cols[1].trim(), cols[2].trim())))
    })
}

/// Parse a whole TSV document. Duplicates are kept; a label used both as a
/// relation and as an entity is rejected at the line that introduces the
/// clash.
pub fn parse_triples(text: &str) -> Result<Vec<Triple>> {
    let mut out = Vec::new();
    let mut relations = HashSet::new();
    let mut entities = HashSet::new();
    let lines: Vec<usize> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !is_skippable(l))
        .map(|(i, _)| i + 1)
        .collect();
    for (k, t) in read_triples(text.as_bytes()).enumerate() {
        let t = t?;
        let line = lines[k];
        relations.insert(t.relation.clone());
        entities.insert(t.head.clone());
        entities.insert(t.tail.clone());
        if entities.contains(&t.relation) || relations.contains(&t.head) || relations.contains(&t.tail) {
            return Err(parse_err(line, "label used both as a relation and as an entity"));
        }
        out.push(t);
    }
    Ok(out)
}

/// Drop repeated triples, keeping first occurrences in order.
pub fn dedup_triples(triples: Vec<Triple>) -> Vec<Triple> {
    let mut seen = HashSet::new();
    triples.into_iter().filter(|t| seen.insert(t.clone())).collect()
}

pub fn triples_to_tsv(triples: &[Triple]) -> String {
    triples.iter().map(|t| format!("{t}\n")).collect()
}

/// Relation label → transitive flag.
pub type RelationMeta = BTreeMap<String, bool>;

/// Parse `relation<TAB>0|1` lines.
pub fn parse_relation_meta(text: &str) -> Result<RelationMeta> {
    let mut meta = RelationMeta::new();
    for (i, line) in text.lines().enumerate() {
        if is_skippable(line) {
            continue;
        }
        let cols: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
        if cols.len() != 2 || cols[0].trim().is_empty() {
            return Err(parse_err(i + 1, "expected relation<TAB>0|1"));
        }
        let flag = match cols[1].trim() {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(i + 1, format!("transitivity flag must be 0 or 1, got '{other}'"))),
        };
        if meta.insert(cols[0].trim().to_string(), flag).is_some() {
            return Err(parse_err(i + 1, format!("relation '{}' listed twice", cols[0].trim())));
        }
    }
    Ok(meta)
}

pub fn relation_meta_to_tsv(meta: &RelationMeta) -> String {
    meta.iter().map(|(r, t)| format!("{r}\t{}\n", u8::from(*t))).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<Triple>,
    pub masked: Vec<Triple>,
    pub mask_fraction: f64,
}

/// Seeded split stratified by relation. The overall masked count is
/// `round(fraction · n)`; strata receive their floor share and the leftover
/// goes to the largest remainders, so each stratum is within one triple of
/// its exact share. Both halves keep input order.
pub fn mask_split(triples: &[Triple], fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::config(format!("mask fraction must lie in [0, 1), got {fraction}")));
    }
    let mut strata: Vec<(&str, Vec<usize>)> = Vec::new();
    for (i, t) in triples.iter().enumerate() {
        match strata.iter_mut().find(|(r, _)| *r == t.relation) {
            Some((_, v)) => v.push(i),
            None => strata.push((&t.relation, vec![i])),
        }
    }
    let target = (fraction * triples.len() as f64).round() as usize;
    let exact: Vec<f64> = strata.iter().map(|(_, v)| fraction * v.len() as f64).collect();
    let mut quota: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..strata.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut left = target.saturating_sub(quota.iter().sum());
    for &s in &order {
        if left == 0 {
            break;
        }
        if quota[s] < strata[s].1.len() {
            quota[s] += 1;
            left -= 1;
        }
    }
    let mut masked = vec![false; triples.len()];
    for (s, (_, idx)) in strata.iter().enumerate() {
        let mut idx = idx.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, s as u64]));
        idx.shuffle(&mut rng);
        for &i in &idx[..quota[s]] {
            masked[i] = true;
        }
    }
    let (m, t): (Vec<_>, Vec<_>) = triples.iter().cloned().zip(masked).partition(|(_, m)| *m);
    Ok(DatasetSplit {
        train: t.into_iter().map(|x| x.0).collect(),
        masked: m.into_iter().map(|x| x.0).collect(),
        mask_fraction: fraction,
    })
}

/// 64-bit FNV-1a.
pub(crate) fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Allocate an engram for every unbound label, in first-occurrence order.
/// Each label's draw depends only on `seed` and the label, so binding is
/// idempotent and insensitive to list order. Returns the number of new
/// engrams.
pub fn bind_symbols(triples: &[Triple], registry: &mut EngramRegistry, seed: u64) -> Result<usize> {
    let mut added = 0;
    for t in triples {
        for (label, kind) in [
            (&t.head, SymbolKind::Entity),
            (&t.relation, SymbolKind::Relation),
            (&t.tail, SymbolKind::Entity),
        ] {
            match registry.get(label) {
                Some(e) if e.kind != kind => {
                    return Err(Error::config(format!("label '{label}' is bound as {:?}", e.kind)));
                }
                Some(_) => {}
                None => {
                    registry.allocate(label, kind, derive_seed(&[seed, label_hash(label)]))?;
                    added += 1;
                }
            }
        }
    }
    Ok(added)
}

impl Network {
    /// [`bind_symbols`] on this network's registry, refreshing polarities.
    pub fn bind_symbols(&mut self, triples: &[Triple], seed: u64) -> Result<usize> {
        let added = bind_symbols(triples, &mut self.registry, seed)?;
        self.sync_polarity();
        Ok(added)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::EngramParams;

    const INDUCTION: &str = "# six facts\nBiden\tIsPresidentOf\tAmerica\nPutin\tIsPresidentOf\tRussia\n\
        Biden\tIsA\tPerson\nPutin\tIsA\tPerson\nAmerica\tIsA\tCountry\nRussia\tIsA\tCountry\n";

    #[test]
    fn parses_lines_and_comments() {
        let t = parse_triples("Biden\tIsPresidentOf\tAmerica\n").unwrap();
        assert_eq!(t, vec![Triple::new("Biden", "IsPresidentOf", "America")]);
        assert!(parse_triples("").unwrap().is_empty());
        assert_eq!(parse_triples(INDUCTION).unwrap().len(), 6);
    }

    #[test]
    fn reports_bad_lines_by_number() {
        let err = parse_triples("# c\nA\tR\tB\nA\tR\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = parse_triples("A\t\tB\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse_triples("A\tR\tB\nR\tS\tC\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn duplicates_are_kept_unless_deduplicated() {
        let t = parse_triples("A\tR\tB\nA\tR\tB\n").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(dedup_triples(t).len(), 1);
    }

    #[test]
    fn relation_meta_round_trip() {
        let meta = parse_relation_meta("Bigger\t1\nAntonym\t0\n").unwrap();
        assert!(meta["Bigger"]);
        assert_eq!(parse_relation_meta(&relation_meta_to_tsv(&meta)).unwrap(), meta);
        assert!(parse_relation_meta("Bigger\tyes\n").is_err());
    }

    fn synthetic(n: usize, relations: usize) -> Vec<Triple> {
        (0..n).map(|i| Triple::new(format!("e{i}"), format!("r{}", i % relations), format!("e{}", i + 1))).collect()
    }

    #[test]
    fn split_counts_and_determinism() {
        let t = synthetic(100, 1);
        let s = mask_split(&t, 0.3, 5).unwrap();
        assert_eq!(s.masked.len(), 30);
        assert_eq!(s.train.len(), 70);
        assert_eq!(mask_split(&t, 0.3, 5).unwrap(), s);
        assert_ne!(mask_split(&t, 0.3, 6).unwrap(), s);
        assert!(mask_split(&t, 0.0, 5).unwrap().masked.is_empty());
        assert!(mask_split(&t, 1.0, 5).is_err());
    }

    #[test]
    fn split_is_stratified() {
        let t = synthetic(103, 4);
        let s = mask_split(&t, 0.3, 1).unwrap();
        assert_eq!(s.masked.len(), 31);
        for r in 0..4 {
            let label = format!("r{r}");
            let n = t.iter().filter(|x| x.relation == label).count() as f64;
            let m = s.masked.iter().filter(|x| x.relation == label).count() as f64;
            assert!((m - 0.3 * n).abs() <= 1.0);
        }
    }

    #[test]
    fn binding_is_total_and_idempotent() {
        let t = parse_triples(INDUCTION).unwrap();
        let mut reg = EngramRegistry::new(&EngramParams::default()).unwrap();
        assert_eq!(bind_symbols(&t, &mut reg, 3).unwrap(), 8);
        let snapshot = reg.clone();
        assert_eq!(bind_symbols(&t, &mut reg, 3).unwrap(), 0);
        assert_eq!(reg, snapshot);
        assert_eq!(bind_symbols(&[], &mut reg, 3).unwrap(), 0);
        assert_eq!(reg.get("IsA").unwrap().kind, SymbolKind::Relation);
        for x in &t {
            assert!(reg.get(&x.head).is_some() && reg.get(&x.relation).is_some() && reg.get(&x.tail).is_some());
        }
    }

    #[test]
    fn binding_draw_depends_only_on_label_and_seed() {
        let t = parse_triples(INDUCTION).unwrap();
        let mut rev = t.clone();
        rev.reverse();
        let mut a = EngramRegistry::new(&EngramParams::default()).unwrap();
        let mut b = EngramRegistry::new(&EngramParams::default()).unwrap();
        bind_symbols(&t, &mut a, 3).unwrap();
        bind_symbols(&rev, &mut b, 3).unwrap();
        assert_eq!(a.get("Country").unwrap().neuron_ids, b.get("Country").unwrap().neuron_ids);
    }
}
