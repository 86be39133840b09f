//! Condition-partitioned corpus ingestion and vocabulary construction.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Structure of the consistency constraints between condition vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    /// Adjacent conditions only, in manifest order (time bins).
    Chain,
    /// Every unordered pair of conditions (locations).
    Complete,
}

impl Topology {
    /// Unordered condition pairs `(a, b)` with `a < b` that carry a
    /// consistency penalty.
    pub fn pairs(self, n_conditions: usize) -> Vec<(usize, usize)> {
        match self {
            Topology::Chain => (1..n_conditions).map(|c| (c - 1, c)).collect(),
            Topology::Complete => (0..n_conditions)
                .flat_map(|a| (a + 1..n_conditions).map(move |b| (a, b)))
                .collect(),
        }
    }

    /// Conditions constrained against `c`.
    pub fn neighbors(self, c: usize, n_conditions: usize) -> Vec<usize> {
        match self {
            Topology::Chain => {
                let mut out = Vec::with_capacity(2);
                if c > 0 {
                    out.push(c - 1);
                }
                if c + 1 < n_conditions {
                    out.push(c + 1);
                }
                out
            }
            Topology::Complete => (0..n_conditions).filter(|&b| b != c).collect(),
        }
    }

    pub fn to_u8(self) -> u8 {
        match self {
            Topology::Chain => 0,
            Topology::Complete => 1,
        }
    }

    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Topology::Chain),
            1 => Ok(Topology::Complete),
            other => Err(Error::Format(format!("unknown topology tag {other}"))),
        }
    }
}

impl std::str::FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chain" => Ok(Topology::Chain),
            "complete" => Ok(Topology::Complete),
            other => Err(Error::InvalidArgument(format!(
                "topology must be `chain` or `complete`, got `{other}`"
            ))),
        }
    }
}

/// Ordered condition ids plus the constraint topology.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionManifest {
    pub conditions: Vec<String>,
    pub topology: Topology,
}

impl ConditionManifest {
    pub fn new(conditions: Vec<String>, topology: Topology) -> Result<Self> {
        let manifest = ConditionManifest {
            conditions,
            topology,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        if self.conditions.is_empty() {
            return Err(Error::InvalidManifest("no conditions".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.conditions {
            if c.is_empty() {
                return Err(Error::InvalidManifest("empty condition id".into()));
            }
            if !seen.insert(c.as_str()) {
                return Err(Error::InvalidManifest(format!("duplicate condition `{c}`")));
            }
        }
        if self.conditions.len() > u16::MAX as usize {
            return Err(Error::InvalidManifest("too many conditions".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.conditions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conditions.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.conditions
            .iter()
            .position(|c| c == id)
            .ok_or_else(|| Error::UnknownCondition(id.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let manifest: ConditionManifest =
            serde_json::from_reader(BufReader::new(fs::File::open(path)?))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

/// Token streams, one per condition, in manifest order.
pub type TokenStreams = Vec<Vec<String>>;

/// Lowercases and splits on Unicode whitespace, without punctuation stripping.
pub fn split_lowercase(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

/// Strips leading and trailing non-alphanumeric characters.
pub fn strip_punctuation(token: &str) -> &str {
    token.trim_matches(|c: char| !c.is_alphanumeric())
}

/// Full tokenizer: lowercase, whitespace split, punctuation stripped at
/// token edges. Tokens that are pure punctuation vanish.
pub fn tokenize(text: &str) -> Vec<String> {
    split_lowercase(text)
        .filter_map(|t| {
            let s = strip_punctuation(&t);
            (!s.is_empty()).then(|| s.to_string())
        })
        .collect()
}

fn decode(path: &Path, bytes: Vec<u8>) -> Result<String> {
    String::from_utf8(bytes).map_err(|e| Error::InvalidUtf8 {
        path: path.to_path_buf(),
        offset: e.utf8_error().valid_up_to(),
    })
}

fn condition_files(root: &Path, id: &str) -> Result<Vec<PathBuf>> {
    let file = root.join(format!("{id}.txt"));
    if file.is_file() {
        return Ok(vec![file]);
    }
    let dir = root.join(id);
    if dir.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "txt"))
            .collect();
        files.sort();
        return Ok(files);
    }
    Err(Error::MissingCondition(id.to_string()))
}

/// Reads `<root>/<id>.txt` or `<root>/<id>/*.txt` (sorted by name) for every
/// condition in the manifest and tokenizes them.
pub fn read_condition_corpus(root: &Path, manifest: &ConditionManifest) -> Result<TokenStreams> {
    manifest
        .conditions
        .par_iter()
        .map(|id| {
            let mut tokens = Vec::new();
            for path in condition_files(root, id)? {
                let text = decode(&path, fs::read(&path)?)?;
                tokens.extend(tokenize(&text));
            }
            Ok(tokens)
        })
        .collect()
}

/// Bidirectional word/id map with global and per-condition frequencies.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    id_of: HashMap<String, usize>,
    count_global: Vec<u64>,
    /// `[id][condition]`
    count_by_condition: Vec<Vec<u64>>,
    min_count: u64,
}

impl Vocabulary {
    /// Builds a vocabulary from already-ordered entries. Ids follow the order
    /// given.
    pub fn from_entries(entries: Vec<(String, Vec<u64>)>, min_count: u64) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyVocabulary(min_count));
        }
        let n_conditions = entries[0].1.len();
        let mut words = Vec::with_capacity(entries.len());
        let mut id_of = HashMap::with_capacity(entries.len());
        let mut count_global = Vec::with_capacity(entries.len());
        let mut count_by_condition = Vec::with_capacity(entries.len());
        for (word, counts) in entries {
            if counts.len() != n_conditions {
                return Err(Error::Format(format!(
                    "word `{word}` has {} condition counts, expected {n_conditions}",
                    counts.len()
                )));
            }
            if id_of.insert(word.clone(), words.len()).is_some() {
                return Err(Error::Format(format!("duplicate word `{word}`")));
            }
            count_global.push(counts.iter().sum());
            words.push(word);
            count_by_condition.push(counts);
        }
        Ok(Vocabulary {
            words,
            id_of,
            count_global,
            count_by_condition,
            min_count,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn n_conditions(&self) -> usize {
        self.count_by_condition.first().map_or(0, Vec::len)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.id_of.get(word).copied()
    }

    pub fn count(&self, id: usize) -> u64 {
        self.count_global[id]
    }

    pub fn count_in(&self, id: usize, condition: usize) -> u64 {
        self.count_by_condition[id][condition]
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    /// Writes `word<TAB>global<TAB>c1,c2,...`, one line per id.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        for (id, word) in self.words.iter().enumerate() {
            let per: Vec<String> = self.count_by_condition[id]
                .iter()
                .map(u64::to_string)
                .collect();
            writeln!(w, "{word}\t{}\t{}", self.count_global[id], per.join(","))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        self.write_tsv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Reads the TSV written by [`Vocabulary::save`]. The threshold is not
    /// stored, so `min_count` is reconstructed as the smallest global count.
    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut entries = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: &str| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                msg: msg.to_string(),
            };
            let mut fields = line.split('\t');
            let (Some(word), Some(global), Some(per), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(parse_err("expected 3 tab-separated fields"));
            };
            let global: u64 = global.parse().map_err(|_| parse_err("bad global count"))?;
            let per: Vec<u64> = per
                .split(',')
                .map(|s| s.parse().map_err(|_| parse_err("bad condition count")))
                .collect::<Result<_>>()?;
            if per.iter().sum::<u64>() != global {
                return Err(parse_err("condition counts do not sum to global count"));
            }
            entries.push((word.to_string(), per));
        }
        let min_count = entries
            .iter()
            .map(|(_, c)| c.iter().sum::<u64>())
            .min()
            .unwrap_or(1);
        Vocabulary::from_entries(entries, min_count)
    }
}

/// Counts tokens and keeps those with global count `>= min_count`.
///
/// Ids are assigned by descending global count, ties broken
/// lexicographically.
pub fn build_vocabulary(streams: &[Vec<String>], min_count: u64) -> Result<Vocabulary> {
    if min_count < 1 {
        return Err(Error::InvalidArgument(
            "min_count must be at least 1".into(),
        ));
    }
    let n_conditions = streams.len();
    let partial: Vec<HashMap<&str, u64>> = streams
        .par_iter()
        .map(|stream| {
            let mut counts = HashMap::new();
            for tok in stream {
                *counts.entry(tok.as_str()).or_insert(0) += 1;
            }
            counts
        })
        .collect();

    let mut merged: HashMap<&str, Vec<u64>> = HashMap::new();
    for (c, counts) in partial.iter().enumerate() {
        for (&word, &n) in counts {
            merged.entry(word).or_insert_with(|| vec![0; n_conditions])[c] += n;
        }
    }

    let mut kept: Vec<(String, Vec<u64>)> = merged
        .into_iter()
        .filter(|(_, per)| per.iter().sum::<u64>() >= min_count)
        .map(|(w, per)| (w.to_string(), per))
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyVocabulary(min_count));
    }
    kept.sort_by(|(wa, ca), (wb, cb)| {
        let (ta, tb): (u64, u64) = (ca.iter().sum(), cb.iter().sum());
        tb.cmp(&ta).then_with(|| wa.cmp(wb))
    });
    Vocabulary::from_entries(kept, min_count)
}
