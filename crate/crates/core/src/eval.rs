//! Cross-condition equivalence evaluation with MRR and MP@K.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query::{NeighborOptions, QueryIndex};
use crate::scalar::Scalar;

/// Reciprocal ranks beyond this position count as zero.
pub const MRR_CUTOFF: usize = 10;
pub const DEFAULT_KS: [usize; 4] = [1, 3, 5, 10];

/// `1/rank` within the top-10 cutoff, else 0. An absent rank scores 0.
pub fn reciprocal_rank(rank: Option<usize>) -> Result<f64> {
    match rank {
        Some(0) => Err(Error::InvalidArgument("rank must be >= 1".into())),
        Some(r) if r <= MRR_CUTOFF => Ok(1.0 / r as f64),
        _ => Ok(0.0),
    }
}

/// 1 if the gold word is within the top `k`, else 0.
pub fn precision_at_k(rank: Option<usize>, k: usize) -> Result<f64> {
    if k < 1 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    match rank {
        Some(0) => Err(Error::InvalidArgument("rank must be >= 1".into())),
        Some(r) if r <= k => Ok(1.0),
        _ => Ok(0.0),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub query_word: String,
    pub query_condition: String,
    pub target_condition: String,
    pub gold_word: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalSet {
    pub name: String,
    pub records: Vec<EvalRecord>,
}

const HEADER: [&str; 4] = [
    "query_word",
    "query_condition",
    "target_condition",
    "gold_word",
];

impl EvalSet {
    /// Reads the four-column TSV; `#` lines and blank lines are ignored.
    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut records = Vec::new();
        let mut seen_header = false;
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            let err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                msg,
            };
            if !seen_header {
                if fields != HEADER {
                    return Err(err(format!("expected header `{}`", HEADER.join("\\t"))));
                }
                seen_header = true;
                continue;
            }
            let [q, qc, tc, g] = fields[..] else {
                return Err(err(format!("expected 4 fields, found {}", fields.len())));
            };
            records.push(EvalRecord {
                query_word: q.to_string(),
                query_condition: qc.to_string(),
                target_condition: tc.to_string(),
                gold_word: g.to_string(),
            });
        }
        if !seen_header {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: "missing header".into(),
            });
        }
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(EvalSet { name, records })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = HEADER.join("\t");
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                r.query_word, r.query_condition, r.target_condition, r.gold_word
            );
        }
        out
    }
}

/// What to do with records whose query or gold word has no vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OovPolicy {
    #[default]
    Skip,
    ScoreAsZero,
}

impl std::str::FromStr for OovPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "skip" => Ok(OovPolicy::Skip),
            "zero" | "score-as-zero" => Ok(OovPolicy::ScoreAsZero),
            other => Err(Error::InvalidArgument(format!(
                "unknown OOV policy `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalOptions {
    pub neighbors: NeighborOptions,
    pub oov: OovPolicy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub mrr: f64,
    pub mp_at: BTreeMap<usize, f64>,
    pub n_scored: usize,
    pub n_skipped: usize,
    pub include_self: bool,
    pub oov_policy: OovPolicy,
}

/// Averages reciprocal rank and precision@k over the given ranks, summing
/// in input order.
pub fn report_from_ranks(
    ranks: &[Option<usize>],
    ks: &[usize],
    n_skipped: usize,
) -> Result<EvalReport> {
    if ranks.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let n = ranks.len() as f64;
    let mut rr = 0.0;
    for &r in ranks {
        rr += reciprocal_rank(r)?;
    }
    let mut mp_at = BTreeMap::new();
    for &k in ks {
        let mut hits = 0.0;
        for &r in ranks {
            hits += precision_at_k(r, k)?;
        }
        mp_at.insert(k, hits / n);
    }
    Ok(EvalReport {
        name: String::new(),
        mrr: rr / n,
        mp_at,
        n_scored: ranks.len(),
        n_skipped,
        include_self: true,
        oov_policy: OovPolicy::Skip,
    })
}

/// Scores every record by ranking the target-condition vocabulary against
/// the query's centered embedding.
pub fn evaluate<T: Scalar>(
    index: &QueryIndex<T>,
    set: &EvalSet,
    ks: &[usize],
    opts: EvalOptions,
) -> Result<EvalReport> {
    let outcomes: Vec<Option<Option<usize>>> = set
        .records
        .par_iter()
        .map(|r| {
            let src = index.condition_index(&r.query_condition)?;
            let tgt = index.condition_index(&r.target_condition)?;
            let (Ok(q), Ok(g)) = (index.word_id(&r.query_word), index.word_id(&r.gold_word)) else {
                return Ok(None);
            };
            if !index.is_usable(q, src) || index.vector(g, tgt).is_none() {
                return Ok(None);
            }
            index.rank_of(q, src, g, tgt, opts.neighbors).map(Some)
        })
        .collect::<Result<_>>()?;

    let mut ranks = Vec::with_capacity(outcomes.len());
    let mut skipped = 0;
    for o in outcomes {
        match (o, opts.oov) {
            (Some(rank), _) => ranks.push(rank),
            (None, OovPolicy::Skip) => skipped += 1,
            (None, OovPolicy::ScoreAsZero) => ranks.push(None),
        }
    }
    let mut report = report_from_ranks(&ranks, ks, skipped)?;
    report.name = set.name.clone();
    report.include_self = opts.neighbors.include_self;
    report.oov_policy = opts.oov;
    Ok(report)
}

/// Fixed-width table, one row per report: MRR then each MP@K.
pub fn format_table(reports: &[EvalReport]) -> String {
    let ks: Vec<usize> = reports
        .iter()
        .flat_map(|r| r.mp_at.keys().copied())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let width = reports
        .iter()
        .map(|r| r.name.len())
        .max()
        .unwrap_or(0)
        .max(5);
    let mut out = format!("{:<width$}  {:>6}", "Model", "MRR");
    for k in &ks {
        let _ = write!(out, "  {:>6}", format!("MP@{k}"));
    }
    let _ = writeln!(out, "  {:>8}  {:>8}", "scored", "skipped");
    for r in reports {
        let _ = write!(out, "{:<width$}  {:>6.4}", r.name, r.mrr);
        for k in &ks {
            match r.mp_at.get(k) {
                Some(v) => {
                    let _ = write!(out, "  {v:>6.4}");
                }
                None => out.push_str("       -"),
            }
        }
        let _ = writeln!(out, "  {:>8}  {:>8}", r.n_scored, r.n_skipped);
    }
    out
}
