//! Cross-condition neighbor search, stability ranking and trajectory export
//! over centered embeddings.

use std::cmp::Ordering;
use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    center_embeddings_with, center_rows, Representation, SavedModel, TextEmbeddings,
};
use crate::scalar::{dot, norm, Scalar};

struct ConditionTable<T> {
    centered: Vec<T>,
    unit: Vec<T>,
    present: Vec<bool>,
    /// Present with nonzero norm, so cosine is defined.
    usable: Vec<bool>,
}

impl<T: Scalar> ConditionTable<T> {
    fn new(centered: Vec<T>, present: Vec<bool>, dim: usize) -> Self {
        let mut unit = centered.clone();
        let mut usable = present.clone();
        for (row, ok) in unit.chunks_exact_mut(dim).zip(usable.iter_mut()) {
            let n = norm(row);
            if *ok && n > T::zero() {
                row.iter_mut().for_each(|x| *x /= n);
            } else {
                *ok = false;
                row.iter_mut().for_each(|x| *x = T::zero());
            }
        }
        ConditionTable {
            centered,
            unit,
            present,
            usable,
        }
    }
}

/// Frozen, query-ready embeddings: per condition, the centered matrix and
/// its unit-normalized rows.
pub struct QueryIndex<T> {
    words: Vec<String>,
    id_of: HashMap<String, usize>,
    conditions: Vec<String>,
    dim: usize,
    tables: Vec<ConditionTable<T>>,
}

/// One ranked candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor<T> {
    pub word: String,
    pub id: usize,
    pub score: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeighborResult<T> {
    pub word: String,
    pub source: String,
    pub target: String,
    /// Scores non-increasing; ties by ascending id.
    pub neighbors: Vec<Neighbor<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborOptions {
    /// Whether the query word is itself a candidate.
    pub include_self: bool,
}

impl Default for NeighborOptions {
    fn default() -> Self {
        NeighborOptions { include_self: true }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityRanking<T> {
    /// `(word, mean pairwise cosine)`, most stable first.
    pub entries: Vec<(String, T)>,
    /// Words with a zero-norm or missing vector in some condition.
    pub skipped: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryNeighbor {
    pub word: String,
    pub score: f64,
    pub vector: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub condition: String,
    pub vector: Vec<f64>,
    pub neighbors: Vec<TrajectoryNeighbor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub word: String,
    pub steps: Vec<TrajectoryStep>,
}

fn by_score_then_id<T: Scalar>(a: &(usize, T), b: &(usize, T)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then(a.0.cmp(&b.0))
}

impl<T: Scalar> QueryIndex<T> {
    /// Builds an index from per-condition matrices (`|W| × dim`, row-major)
    /// that are already in query space; nothing is recentered.
    pub fn from_matrices(
        words: Vec<String>,
        conditions: Vec<String>,
        dim: usize,
        matrices: Vec<Vec<T>>,
        present: Vec<Vec<bool>>,
    ) -> Result<Self> {
        if dim == 0 || matrices.len() != conditions.len() || present.len() != conditions.len() {
            return Err(Error::InvalidArgument(
                "inconsistent query index shape".into(),
            ));
        }
        if matrices.iter().any(|m| m.len() != words.len() * dim)
            || present.iter().any(|p| p.len() != words.len())
        {
            return Err(Error::InvalidArgument(
                "matrix size does not match |W| × dim".into(),
            ));
        }
        let mut id_of = HashMap::with_capacity(words.len());
        for (id, w) in words.iter().enumerate() {
            if id_of.insert(w.clone(), id).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate word `{w}`")));
            }
        }
        let tables = matrices
            .into_par_iter()
            .zip(present)
            .map(|(m, p)| ConditionTable::new(m, p, dim))
            .collect();
        Ok(QueryIndex {
            words,
            id_of,
            conditions,
            dim,
            tables,
        })
    }

    /// Centered embeddings of a trained model.
    pub fn from_model(model: &SavedModel<T>, repr: Representation) -> Result<Self> {
        let matrices = (0..model.manifest.len())
            .into_par_iter()
            .map(|c| center_embeddings_with(&model.params, c, repr))
            .collect::<Result<Vec<_>>>()?;
        let n = model.vocab.len();
        Self::from_matrices(
            model.vocab.words().to_vec(),
            model.manifest.conditions.clone(),
            model.params.dim(),
            matrices,
            vec![vec![true; n]; model.manifest.len()],
        )
    }

    /// External embeddings. With `center`, each condition's present rows are
    /// mean-centered first; otherwise vectors are used as given.
    pub fn from_text(emb: TextEmbeddings<T>, center: bool) -> Result<Self> {
        let TextEmbeddings {
            words,
            conditions,
            dim,
            mut matrices,
            present,
        } = emb;
        if center {
            for (m, p) in matrices.iter_mut().zip(&present) {
                let rows: Vec<usize> = (0..words.len()).filter(|&w| p[w]).collect();
                let mut sub: Vec<T> = rows
                    .iter()
                    .flat_map(|&w| m[w * dim..(w + 1) * dim].to_vec())
                    .collect();
                center_rows(&mut sub, dim);
                for (k, &w) in rows.iter().enumerate() {
                    m[w * dim..(w + 1) * dim].copy_from_slice(&sub[k * dim..(k + 1) * dim]);
                }
            }
        }
        Self::from_matrices(words, conditions, dim, matrices, present)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn conditions(&self) -> &[String] {
        &self.conditions
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Vocabulary id, or an out-of-vocabulary error listing the closest
    /// words by edit distance.
    pub fn word_id(&self, word: &str) -> Result<usize> {
        if let Some(&id) = self.id_of.get(word) {
            return Ok(id);
        }
        let mut scored: Vec<(usize, &String)> = self
            .words
            .iter()
            .map(|w| (strsim::levenshtein(word, w), w))
            .collect();
        scored.sort();
        Err(Error::OutOfVocabulary {
            word: word.to_string(),
            suggestions: scored.into_iter().take(5).map(|(_, w)| w.clone()).collect(),
        })
    }

    pub fn condition_index(&self, id: &str) -> Result<usize> {
        self.conditions
            .iter()
            .position(|c| c == id)
            .ok_or_else(|| Error::UnknownCondition(id.to_string()))
    }

    /// Centered vector, if the word has one in this condition.
    pub fn vector(&self, w: usize, c: usize) -> Option<&[T]> {
        let t = &self.tables[c];
        t.present[w].then(|| &t.centered[w * self.dim..(w + 1) * self.dim])
    }

    pub fn is_usable(&self, w: usize, c: usize) -> bool {
        self.tables[c].usable[w]
    }

    fn unit(&self, w: usize, c: usize) -> &[T] {
        &self.tables[c].unit[w * self.dim..(w + 1) * self.dim]
    }

    fn query_unit(&self, w: usize, src: usize) -> Result<&[T]> {
        if !self.tables[src].present[w] {
            return Err(Error::OutOfVocabulary {
                word: self.words[w].clone(),
                suggestions: vec![format!("(absent in condition `{}`)", self.conditions[src])],
            });
        }
        if !self.tables[src].usable[w] {
            return Err(Error::ZeroNorm);
        }
        Ok(self.unit(w, src))
    }

    /// Cosine of unit rows; exactly 1 for identical rows.
    #[inline]
    fn score(q: &[T], cand: &[T]) -> T {
        if q == cand {
            return T::one();
        }
        dot(q, cand).max(-T::one()).min(T::one())
    }

    /// Every usable candidate in `tgt` scored against `query`, best first.
    fn ranked(&self, query: &[T], tgt: usize, exclude: Option<usize>) -> Vec<(usize, T)> {
        let table = &self.tables[tgt];
        let mut scored: Vec<(usize, T)> = (0..self.words.len())
            .filter(|&w| table.usable[w] && Some(w) != exclude)
            .map(|w| (w, Self::score(query, self.unit(w, tgt))))
            .collect();
        scored.sort_by(by_score_then_id);
        scored
    }

    pub fn nearest_by_id(
        &self,
        w: usize,
        src: usize,
        tgt: usize,
        k: usize,
        opts: NeighborOptions,
    ) -> Result<Vec<Neighbor<T>>> {
        if k < 1 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let q = self.query_unit(w, src)?;
        let exclude = (!opts.include_self).then_some(w);
        let mut ranked = self.ranked(q, tgt, exclude);
        ranked.truncate(k);
        Ok(ranked
            .into_iter()
            .map(|(id, score)| Neighbor {
                word: self.words[id].clone(),
                id,
                score,
            })
            .collect())
    }

    /// Top-`k` words of condition `tgt` by cosine to `word`'s centered
    /// embedding in condition `src`.
    pub fn nearest_neighbors(
        &self,
        word: &str,
        src: &str,
        tgt: &str,
        k: usize,
        opts: NeighborOptions,
    ) -> Result<NeighborResult<T>> {
        let w = self.word_id(word)?;
        let (s, t) = (self.condition_index(src)?, self.condition_index(tgt)?);
        Ok(NeighborResult {
            word: word.to_string(),
            source: src.to_string(),
            target: tgt.to_string(),
            neighbors: self.nearest_by_id(w, s, t, k, opts)?,
        })
    }

    /// 1-based rank of `gold` among the `tgt` candidates for query `w` in
    /// `src`, or `None` if `gold` is not a candidate there.
    pub fn rank_of(
        &self,
        w: usize,
        src: usize,
        gold: usize,
        tgt: usize,
        opts: NeighborOptions,
    ) -> Result<Option<usize>> {
        let q = self.query_unit(w, src)?;
        let table = &self.tables[tgt];
        let excluded = |c: usize| !opts.include_self && c == w;
        if !table.usable[gold] || excluded(gold) {
            return Ok(None);
        }
        let gold_score = Self::score(q, self.unit(gold, tgt));
        let ahead = (0..self.words.len())
            .filter(|&c| c != gold && table.usable[c] && !excluded(c))
            .filter(|&c| {
                let s = Self::score(q, self.unit(c, tgt));
                s > gold_score || (s == gold_score && c < gold)
            })
            .count();
        Ok(Some(ahead + 1))
    }

    /// Mean cosine between a word's centered vectors over every unordered
    /// condition pair, most stable first, truncated to `top_n`.
    pub fn stability_ranking(&self, top_n: usize) -> Result<StabilityRanking<T>> {
        let nc = self.conditions.len();
        if nc < 2 {
            return Err(Error::InvalidArgument(
                "stability needs at least two conditions".into(),
            ));
        }
        let pairs: Vec<(usize, usize)> = (0..nc)
            .flat_map(|a| (a + 1..nc).map(move |b| (a, b)))
            .collect();
        let scores: Vec<Option<T>> = (0..self.words.len())
            .into_par_iter()
            .map(|w| {
                if !(0..nc).all(|c| self.tables[c].usable[w]) {
                    return None;
                }
                let sum: f64 = pairs
                    .iter()
                    .map(|&(a, b)| Self::score(self.unit(w, a), self.unit(w, b)).as_f64())
                    .sum();
                Some(T::of(sum / pairs.len() as f64))
            })
            .collect();
        let mut ranked: Vec<(usize, T)> = Vec::new();
        let mut skipped = Vec::new();
        for (w, s) in scores.into_iter().enumerate() {
            match s {
                Some(s) => ranked.push((w, s)),
                None => skipped.push(self.words[w].clone()),
            }
        }
        ranked.sort_by(by_score_then_id);
        ranked.truncate(top_n);
        Ok(StabilityRanking {
            entries: ranked
                .into_iter()
                .map(|(w, s)| (self.words[w].clone(), s))
                .collect(),
            skipped,
        })
    }

    /// Per condition, the word's centered vector and its `n` nearest other
    /// words (same condition) with their vectors. `conditions` defaults to
    /// all.
    pub fn trajectory(
        &self,
        word: &str,
        conditions: Option<&[String]>,
        n: usize,
    ) -> Result<Trajectory> {
        let w = self.word_id(word)?;
        let conds: Vec<usize> = match conditions {
            Some(list) => list
                .iter()
                .map(|c| self.condition_index(c))
                .collect::<Result<_>>()?,
            None => (0..self.conditions.len()).collect(),
        };
        let to_f64 = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<f64>>();
        let mut steps = Vec::with_capacity(conds.len());
        for c in conds {
            let q = self.query_unit(w, c)?;
            let neighbors = self
                .ranked(q, c, Some(w))
                .into_iter()
                .take(n)
                .map(|(id, score)| TrajectoryNeighbor {
                    word: self.words[id].clone(),
                    score: score.as_f64(),
                    vector: to_f64(self.vector(id, c).expect("usable rows are present")),
                })
                .collect();
            steps.push(TrajectoryStep {
                condition: self.conditions[c].clone(),
                vector: to_f64(self.vector(w, c).expect("query row is present")),
                neighbors,
            });
        }
        Ok(Trajectory {
            word: word.to_string(),
            steps,
        })
    }
}
