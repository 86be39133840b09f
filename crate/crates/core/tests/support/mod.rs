//! Independent reference implementations used as test oracles.
//!
//! Nothing here calls into the library's numerical code; everything is
//! recomputed from the definitions with plain loops.

#![allow(dead_code)]

use std::collections::BTreeMap;

use condemb::model::Tensor;
use condemb::{CoocEntry, CoocTensor, ModelParams, Topology};
use rand::Rng;

pub type Counts = BTreeMap<(u32, u32, u16), f64>;

/// Random corpus over `w{k}` words with a skewed unigram distribution, plus
/// a sprinkling of out-of-vocabulary tokens (`oov{k}`).
pub fn random_corpus<R: Rng>(
    rng: &mut R,
    n_conditions: usize,
    n_types: usize,
    max_tokens: usize,
) -> Vec<Vec<String>> {
    (0..n_conditions)
        .map(|_| {
            let len = rng.gen_range(0..=max_tokens / n_conditions);
            (0..len)
                .map(|_| {
                    if rng.gen_bool(0.05) {
                        format!("oov{}", rng.gen_range(0..3))
                    } else {
                        let u: f64 = rng.gen();
                        format!("w{}", ((u * u) * n_types as f64) as usize)
                    }
                })
                .collect()
        })
        .collect()
}

/// Every ordered pair of distinct positions at distance ≤ `window`, counted
/// once per ordered pair.
pub fn brute_force_cooc(
    streams: &[Vec<String>],
    id: impl Fn(&str) -> Option<u32>,
    window: usize,
) -> Counts {
    let mut out = Counts::new();
    for (c, s) in streams.iter().enumerate() {
        for a in 0..s.len() {
            for b in a.saturating_sub(window)..(a + window + 1).min(s.len()) {
                if a == b {
                    continue;
                }
                if let (Some(i), Some(j)) = (id(&s[a]), id(&s[b])) {
                    *out.entry((i, j, c as u16)).or_insert(0.0) += 1.0;
                }
            }
        }
    }
    out
}

pub fn as_counts(t: &CoocTensor) -> Counts {
    t.entries().iter().map(|e| ((e.i, e.j, e.c), e.x)).collect()
}

/// Condition pairs the consistency penalty couples, written out directly.
pub fn coupled_pairs(topology: Topology, n_conditions: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for a in 0..n_conditions {
        for b in a + 1..n_conditions {
            if topology == Topology::Complete || b == a + 1 {
                out.push((a, b));
            }
        }
    }
    out
}

fn at(p: &ModelParams<f64>, t: Tensor, idx: usize) -> f64 {
    p.tensor(t)[idx]
}

/// Objective evaluated term by term from raw parameter arrays.
pub fn naive_loss(
    p: &ModelParams<f64>,
    t: &CoocTensor,
    topology: Topology,
    alpha: f64,
    beta: f64,
) -> f64 {
    let (nc, m) = (p.n_conditions(), p.dim());
    let mut data = 0.0;
    for e in t.entries() {
        let (i, j, c) = (e.i as usize, e.j as usize, e.c as usize);
        let mut dot = 0.0;
        for k in 0..m {
            let q = at(p, Tensor::Q, c * m + k);
            let wi = at(p, Tensor::V, i * m + k) * q + at(p, Tensor::D, (i * nc + c) * m + k);
            let cj = at(p, Tensor::U, j * m + k) * q + at(p, Tensor::Dp, (j * nc + c) * m + k);
            dot += wi * cj;
        }
        let r = dot + at(p, Tensor::B, i * nc + c) + at(p, Tensor::Bp, j * nc + c) - e.x.ln();
        data += r * r;
    }
    let mut cons = 0.0;
    for (a, b) in coupled_pairs(topology, nc) {
        for k in 0..m {
            let d = at(p, Tensor::Q, a * m + k) - at(p, Tensor::Q, b * m + k);
            cons += d * d;
        }
    }
    let dev: f64 = p
        .tensor(Tensor::D)
        .iter()
        .chain(p.tensor(Tensor::Dp))
        .map(|x| x * x)
        .sum();
    data + alpha / 2.0 * cons + beta / 2.0 * dev
}

/// Random parameters with every tensor perturbed away from structure, and a
/// random sparse tensor with positive values.
pub fn random_instance<R: Rng>(
    rng: &mut R,
    n_words: usize,
    n_conditions: usize,
    dim: usize,
) -> (ModelParams<f64>, CoocTensor) {
    let mut p = ModelParams::<f64>::zeros(n_words, n_conditions, dim).unwrap();
    for t in Tensor::ALL {
        let center = if t == Tensor::Q { 1.0 } else { 0.0 };
        for x in p.tensor_mut(t) {
            *x = center + rng.gen_range(-0.5..0.5);
        }
    }
    let mut entries = Vec::new();
    for c in 0..n_conditions {
        for i in 0..n_words {
            for j in 0..n_words {
                if rng.gen_bool(0.4) {
                    entries.push(CoocEntry {
                        i: i as u32,
                        j: j as u32,
                        c: c as u16,
                        x: rng.gen_range(0.2..30.0),
                    });
                }
            }
        }
    }
    if entries.is_empty() {
        entries.push(CoocEntry {
            i: 0,
            j: 0,
            c: 0,
            x: 2.0,
        });
    }
    (
        p,
        CoocTensor::from_entries(n_words, n_conditions, 5, entries).unwrap(),
    )
}

/// Central finite-difference gradient of `f` with respect to every
/// parameter of tensor `t`.
pub fn finite_difference(
    p: &ModelParams<f64>,
    t: Tensor,
    eps: f64,
    f: impl Fn(&ModelParams<f64>) -> f64,
) -> Vec<f64> {
    let mut q = p.clone();
    (0..p.tensor(t).len())
        .map(|k| {
            let x0 = q.tensor(t)[k];
            q.tensor_mut(t)[k] = x0 + eps;
            let up = f(&q);
            q.tensor_mut(t)[k] = x0 - eps;
            let down = f(&q);
            q.tensor_mut(t)[k] = x0;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-12 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Worst per-tensor relative error between `analytic` and finite
/// differences of `f`.
pub fn worst_gradient_error(
    p: &ModelParams<f64>,
    analytic: &ModelParams<f64>,
    eps: f64,
    f: impl Fn(&ModelParams<f64>) -> f64,
) -> (Tensor, f64) {
    Tensor::ALL
        .into_iter()
        .map(|t| {
            (
                t,
                relative_error(analytic.tensor(t), &finite_difference(p, t, eps, &f)),
            )
        })
        .fold((Tensor::V, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc })
}

/// 1-based rank of `gold` by brute-force cosine over rows of `matrix`,
/// ties by ascending id, or `None` if gold has zero norm.
pub fn brute_force_rank(
    query: &[f64],
    matrix: &[f64],
    dim: usize,
    gold: usize,
    exclude: Option<usize>,
) -> Option<usize> {
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        (nb > 0.0).then(|| dot / (na * nb))
    };
    let n = matrix.len() / dim;
    let mut scored: Vec<(usize, f64)> = (0..n)
        .filter(|&w| Some(w) != exclude)
        .filter_map(|w| cos(query, &matrix[w * dim..(w + 1) * dim]).map(|s| (w, s)))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.iter().position(|&(w, _)| w == gold).map(|r| r + 1)
}

/// What training on a generated corpus produced.
pub struct SynthRun {
    pub corpus: condemb::synth::SynthCorpus,
    pub model: condemb::SavedModel<f64>,
    pub losses: Vec<f64>,
}

/// Vocabulary (min count 1), window-5 counts, scaling, then deterministic
/// training with `config`.
pub fn train_on_synth(spec: &condemb::synth::DriftSpec, config: &condemb::TrainConfig) -> SynthRun {
    let corpus = condemb::synth::generate(spec).unwrap();
    let vocab = condemb::build_vocabulary(&corpus.streams, 1).unwrap();
    let raw = condemb::count_cooccurrences(&corpus.streams, &vocab, 5).unwrap();
    let tensor = condemb::scale_counts(&raw).unwrap();
    let topology = corpus.manifest.topology;
    let mut losses = Vec::new();
    let out = condemb::trainer::train_with_progress::<f64>(&tensor, topology, config, |s| {
        losses.push(s.loss)
    })
    .unwrap();
    let model = condemb::SavedModel::new(out.params, vocab, corpus.manifest.clone()).unwrap();
    SynthRun {
        corpus,
        model,
        losses,
    }
}
