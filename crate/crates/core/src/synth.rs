//! Synthetic condition-stamped corpora with one planted drifting word.
//!
//! Each condition alternates runs of uniformly drawn filler words with short
//! topic segments drawn from cluster A or cluster B (both clusters appear in
//! every condition). The planted word sits at the center of a segment of its
//! current topic (cluster A before `drift_point`, cluster B from
//! `drift_point` on) with probability `1 - leak`, and of an off-topic segment
//! with probability `leak`. The leak keeps both clusters among the planted
//! word's observed contexts in every condition, so the drift shows up as a
//! change in nonzero counts rather than only as missing cells.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ConditionManifest, TokenStreams, Topology};
use crate::error::{Error, Result};
use crate::eval::{EvalRecord, EvalSet};

pub const MIN_TOKENS_PER_CONDITION: usize = 50;

fn default_filler_run() -> usize {
    12
}

fn default_segment_len() -> usize {
    7
}

fn default_leak() -> f64 {
    0.05
}

fn default_topology() -> Topology {
    Topology::Chain
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSpec {
    pub n_conditions: usize,
    pub fillers: Vec<String>,
    pub cluster_a: Vec<String>,
    pub cluster_b: Vec<String>,
    /// The drifting word; `None` yields an all-stable corpus.
    pub planted: Option<String>,
    /// First (0-based) condition where the planted word moves to cluster B.
    pub drift_point: usize,
    pub tokens_per_condition: usize,
    pub seed: u64,
    #[serde(default = "default_filler_run")]
    pub filler_run: usize,
    #[serde(default = "default_segment_len")]
    pub segment_len: usize,
    /// Probability the planted word appears in an off-topic segment.
    #[serde(default = "default_leak")]
    pub leak: f64,
    #[serde(default = "default_topology")]
    pub topology: Topology,
}

impl DriftSpec {
    /// 20 fillers, two 5-word clusters, planted word `drifter`.
    pub fn standard(
        n_conditions: usize,
        drift_point: usize,
        tokens_per_condition: usize,
        seed: u64,
    ) -> Self {
        let names = |prefix: &str, n: usize| (0..n).map(|k| format!("{prefix}{k:02}")).collect();
        DriftSpec {
            n_conditions,
            fillers: names("filler", 20),
            cluster_a: names("alpha", 5),
            cluster_b: names("beta", 5),
            planted: Some("drifter".into()),
            drift_point,
            tokens_per_condition,
            seed,
            filler_run: default_filler_run(),
            segment_len: default_segment_len(),
            leak: default_leak(),
            topology: Topology::Chain,
        }
    }

    pub fn condition_ids(&self) -> Vec<String> {
        (1..=self.n_conditions).map(|c| format!("c{c}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.n_conditions == 0 {
            return bad("n_conditions must be >= 1".into());
        }
        if self.tokens_per_condition < MIN_TOKENS_PER_CONDITION {
            return bad(format!(
                "tokens_per_condition {} is below the minimum of {MIN_TOKENS_PER_CONDITION}",
                self.tokens_per_condition
            ));
        }
        if self.fillers.is_empty() || self.cluster_a.is_empty() || self.cluster_b.is_empty() {
            return bad("filler and cluster lists must be non-empty".into());
        }
        if !(0.0..0.5).contains(&self.leak) {
            return bad(format!("leak must lie in [0, 0.5), got {}", self.leak));
        }
        if self.segment_len == 0 {
            return bad("segment_len must be >= 1".into());
        }
        if self.planted.is_some() && !(1..self.n_conditions).contains(&self.drift_point) {
            return bad(format!(
                "drift_point must lie in [1, {}], got {}",
                self.n_conditions.saturating_sub(1),
                self.drift_point
            ));
        }
        let mut seen = HashSet::new();
        let all = self
            .fillers
            .iter()
            .chain(&self.cluster_a)
            .chain(&self.cluster_b)
            .chain(self.planted.iter());
        for w in all {
            if w.is_empty() || w.chars().any(|c| c.is_whitespace() || !c.is_alphanumeric()) {
                return bad(format!("word `{w}` would not survive tokenization"));
            }
            if w.to_lowercase() != *w {
                return bad(format!("word `{w}` must be lowercase"));
            }
            if !seen.insert(w.as_str()) {
                return bad(format!("word `{w}` appears in more than one list"));
            }
        }
        Ok(())
    }
}

/// Ground truth a generated corpus is built to exhibit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldFacts {
    pub planted: Option<String>,
    pub early_conditions: Vec<String>,
    pub late_conditions: Vec<String>,
    /// Expected neighbors of the planted word before the drift.
    pub early_neighbors: Vec<String>,
    /// Expected neighbors of the planted word after the drift.
    pub late_neighbors: Vec<String>,
    /// Words expected to rank above the planted word in stability.
    pub more_stable_than_planted: Vec<String>,
    /// Stable words mapped to themselves across the first and last
    /// conditions.
    pub equivalence_pairs: Vec<EvalRecord>,
}

impl GoldFacts {
    pub fn eval_set(&self, name: &str) -> EvalSet {
        EvalSet {
            name: name.to_string(),
            records: self.equivalence_pairs.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub manifest: ConditionManifest,
    pub streams: TokenStreams,
    pub gold: GoldFacts,
}

/// Generates the corpus; deterministic given `spec.seed`.
pub fn generate(spec: &DriftSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let ids = spec.condition_ids();
    let manifest = ConditionManifest::new(ids.clone(), spec.topology)?;
    let center = spec.segment_len / 2;
    let streams = (0..spec.n_conditions)
        .map(|c| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(1_000_003).wrapping_add(c as u64));
            let planted_topic_is_a = c < spec.drift_point;
            let mut out =
                Vec::with_capacity(spec.tokens_per_condition + spec.segment_len + spec.filler_run);
            let mut segment = 0usize;
            while out.len() < spec.tokens_per_condition {
                for _ in 0..spec.filler_run {
                    out.push(spec.fillers.choose(&mut rng).expect("non-empty").clone());
                }
                let topic_is_a = segment.is_multiple_of(2);
                let cluster = if topic_is_a {
                    &spec.cluster_a
                } else {
                    &spec.cluster_b
                };
                let p_insert = if topic_is_a == planted_topic_is_a {
                    1.0 - spec.leak
                } else {
                    spec.leak
                };
                let insert = spec.planted.is_some() && rng.gen_bool(p_insert);
                for k in 0..spec.segment_len {
                    match &spec.planted {
                        Some(p) if insert && k == center => out.push(p.clone()),
                        _ => out.push(cluster.choose(&mut rng).expect("non-empty").clone()),
                    }
                }
                segment += 1;
            }
            out.truncate(spec.tokens_per_condition);
            out
        })
        .collect();

    let (early, late) = match spec.planted {
        Some(_) => (
            ids[..spec.drift_point].to_vec(),
            ids[spec.drift_point..].to_vec(),
        ),
        None => (ids.clone(), ids.clone()),
    };
    let (first, last) = (ids[0].clone(), ids[ids.len() - 1].clone());
    let equivalence_pairs = spec
        .cluster_a
        .iter()
        .chain(&spec.cluster_b)
        .map(|w| EvalRecord {
            query_word: w.clone(),
            query_condition: last.clone(),
            target_condition: first.clone(),
            gold_word: w.clone(),
        })
        .collect();
    let gold = GoldFacts {
        planted: spec.planted.clone(),
        early_conditions: early,
        late_conditions: late,
        early_neighbors: spec.cluster_a.clone(),
        late_neighbors: spec.cluster_b.clone(),
        more_stable_than_planted: if spec.planted.is_some() {
            spec.fillers.clone()
        } else {
            vec![]
        },
        equivalence_pairs,
    };
    Ok(SynthCorpus {
        manifest,
        streams,
        gold,
    })
}

/// Share of `word`'s in-window co-occurrences (radius `window`) that fall on
/// members of `cluster`, or `None` if the word never co-occurs.
pub fn cluster_share(
    stream: &[String],
    word: &str,
    cluster: &[String],
    window: usize,
) -> Option<f64> {
    let members: HashSet<&str> = cluster.iter().map(String::as_str).collect();
    let (mut hits, mut total) = (0usize, 0usize);
    for (p, tok) in stream.iter().enumerate() {
        if tok != word {
            continue;
        }
        let lo = p.saturating_sub(window);
        let hi = (p + window).min(stream.len() - 1);
        for (q, other) in stream.iter().enumerate().take(hi + 1).skip(lo) {
            if q == p {
                continue;
            }
            total += 1;
            if members.contains(other.as_str()) {
                hits += 1;
            }
        }
    }
    (total > 0).then(|| hits as f64 / total as f64)
}

impl SynthCorpus {
    /// Writes `<dir>/<condition>.txt`, `manifest.json`, `gold.json` and the
    /// equivalence pairs as `pairs.tsv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (id, stream) in self.manifest.conditions.iter().zip(&self.streams) {
            let mut f = std::io::BufWriter::new(fs::File::create(dir.join(format!("{id}.txt")))?);
            for line in stream.chunks(20) {
                writeln!(f, "{}", line.join(" "))?;
            }
            f.flush()?;
        }
        self.manifest.save(&dir.join("manifest.json"))?;
        fs::write(
            dir.join("gold.json"),
            serde_json::to_string_pretty(&self.gold)? + "\n",
        )?;
        fs::write(dir.join("pairs.tsv"), self.gold.eval_set("pairs").to_tsv())?;
        Ok(())
    }
}
