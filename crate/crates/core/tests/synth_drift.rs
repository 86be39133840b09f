mod support;

use condemb::model::Representation;
use condemb::query::{NeighborOptions, QueryIndex};
use condemb::synth::{generate, DriftSpec};
use condemb::{build_vocabulary, Topology, TrainConfig};
use support::*;

/// Share of the planted word's raw window mass that falls on `cluster`.
fn mass_share(
    counts: &Counts,
    vocab: &condemb::Vocabulary,
    planted: &str,
    cluster: &[String],
    c: u16,
) -> f64 {
    let p = vocab.id(planted).unwrap() as u32;
    let ids: Vec<u32> = cluster
        .iter()
        .filter_map(|w| vocab.id(w))
        .map(|i| i as u32)
        .collect();
    let (mut on, mut total) = (0.0, 0.0);
    for (&(i, j, cc), &x) in counts {
        if i == p && cc == c && j != p {
            total += x;
            if ids.contains(&j) {
                on += x;
            }
        }
    }
    on / total
}

#[test]
fn planted_mass_follows_drift_in_raw_counts() {
    for seed in 0..3 {
        let spec = DriftSpec::standard(3, 2, 10_000, seed);
        let corpus = generate(&spec).unwrap();
        let vocab = build_vocabulary(&corpus.streams, 1).unwrap();
        let counts = brute_force_cooc(&corpus.streams, |w| vocab.id(w).map(|i| i as u32), 2);
        let topical: Vec<String> = spec
            .cluster_a
            .iter()
            .chain(&spec.cluster_b)
            .cloned()
            .collect();
        for c in 0..3u16 {
            let a = mass_share(&counts, &vocab, "drifter", &spec.cluster_a, c);
            let b = mass_share(&counts, &vocab, "drifter", &spec.cluster_b, c);
            assert!(mass_share(&counts, &vocab, "drifter", &topical, c) > 0.99);
            if (c as usize) < spec.drift_point {
                assert!(a > 0.9 && b < 0.1, "seed {seed} c{c}: a={a} b={b}");
            } else {
                assert!(a < 0.1 && b > 0.9, "seed {seed} c{c}: a={a} b={b}");
            }
        }
    }
}

#[test]
fn gold_facts_agree_with_raw_counts() {
    let spec = DriftSpec::standard(5, 3, 10_000, 4);
    let corpus = generate(&spec).unwrap();
    let gold = &corpus.gold;
    let vocab = build_vocabulary(&corpus.streams, 1).unwrap();
    let counts = brute_force_cooc(&corpus.streams, |w| vocab.id(w).map(|i| i as u32), 2);
    let index_of = |id: &String| corpus.manifest.index_of(id).unwrap() as u16;
    for c in &gold.early_conditions {
        assert!(
            mass_share(
                &counts,
                &vocab,
                "drifter",
                &gold.early_neighbors,
                index_of(c)
            ) > 0.9
        );
    }
    for c in &gold.late_conditions {
        assert!(
            mass_share(
                &counts,
                &vocab,
                "drifter",
                &gold.late_neighbors,
                index_of(c)
            ) > 0.9
        );
    }
    for f in &gold.more_stable_than_planted {
        let id = vocab.id(f).unwrap();
        let per: Vec<u64> = (0..5).map(|c| vocab.count_in(id, c)).collect();
        let mean = per.iter().sum::<u64>() as f64 / 5.0;
        assert!(
            per.iter().all(|&n| (n as f64 - mean).abs() < 0.25 * mean),
            "{f}: {per:?}"
        );
    }
    for r in &gold.equivalence_pairs {
        assert_eq!(r.query_word, r.gold_word);
        assert!(!gold.planted.iter().any(|p| *p == r.query_word));
    }
}

#[test]
fn stable_corpus_gives_tight_stability_scores() {
    let mut spec = DriftSpec::standard(4, 2, 6_000, 5);
    spec.planted = None;
    let run = train_on_synth(&spec, &TrainConfig::for_topology(Topology::Chain));
    let index = QueryIndex::from_model(&run.model, Representation::WordSide).unwrap();
    let ranking = index.stability_ranking(usize::MAX).unwrap();
    let scores: Vec<f64> = ranking.entries.iter().map(|e| e.1).collect();
    let spread = scores[0] - scores[scores.len() - 1];
    assert!(spread < 0.15, "spread {spread}: {:?}", ranking.entries);

    let planted = train_on_synth(
        &DriftSpec::standard(4, 2, 6_000, 5),
        &TrainConfig::for_topology(Topology::Chain),
    );
    let with_drift = QueryIndex::from_model(&planted.model, Representation::WordSide)
        .unwrap()
        .stability_ranking(usize::MAX)
        .unwrap();
    let drifter = with_drift
        .entries
        .iter()
        .find(|e| e.0 == "drifter")
        .unwrap()
        .1;
    assert!(
        scores[scores.len() - 1] - drifter > spread,
        "drifter {drifter} within stable spread"
    );
}

#[test]
fn deviation_penalty_does_not_collapse_condition_vectors() {
    let spec = DriftSpec::standard(3, 1, 3_000, 6);
    let config = TrainConfig {
        dim: 20,
        epochs: 15,
        ..TrainConfig::for_topology(Topology::Chain)
    };
    assert_eq!(config.beta, 0.2);
    let run = train_on_synth(&spec, &config);
    let p = &run.model.params;
    let max_norm = (0..3)
        .map(|c| p.q_row(c).iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    assert!(max_norm >= 0.1, "max |Q_c| = {max_norm}");
    assert!(run.losses.last().unwrap() < &run.losses[0]);
    let index = QueryIndex::from_model(&run.model, Representation::WordSide).unwrap();
    let late = index
        .nearest_neighbors(
            "drifter",
            "c3",
            "c3",
            4,
            NeighborOptions {
                include_self: false,
            },
        )
        .unwrap();
    assert!(
        late.neighbors
            .iter()
            .filter(|n| n.word.starts_with("beta"))
            .count()
            >= 2
    );
}
