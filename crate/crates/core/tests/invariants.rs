mod support;

use condemb::eval::{evaluate, EvalOptions, EvalRecord, EvalSet, OovPolicy, DEFAULT_KS};
use condemb::model::{read_text_embeddings, write_text_export, Representation};
use condemb::query::{NeighborOptions, QueryIndex};
use condemb::{
    center_embeddings, compose_embedding, ConditionManifest, ModelParams, SavedModel, Side,
    Topology, Vocabulary,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::*;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn random_model(seed: u64, n_words: usize, n_conditions: usize, dim: usize) -> SavedModel<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (params, _) = random_instance(&mut rng, n_words, n_conditions, dim);
    let entries = (0..n_words)
        .map(|w| (format!("w{w:02}"), vec![1; n_conditions]))
        .collect();
    let vocab = Vocabulary::from_entries(entries, 1).unwrap();
    let conditions = (0..n_conditions).map(|c| format!("c{c}")).collect();
    let manifest = ConditionManifest::new(conditions, Topology::Chain).unwrap();
    SavedModel::new(params, vocab, manifest).unwrap()
}

fn random_eval_set(seed: u64, model: &SavedModel<f64>, n: usize) -> EvalSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = model.vocab.words();
    let conds = &model.manifest.conditions;
    let records = (0..n)
        .map(|_| EvalRecord {
            query_word: words[rng.gen_range(0..words.len())].clone(),
            query_condition: conds[rng.gen_range(0..conds.len())].clone(),
            target_condition: conds[rng.gen_range(0..conds.len())].clone(),
            gold_word: words[rng.gen_range(0..words.len())].clone(),
        })
        .collect();
    EvalSet {
        name: "random".into(),
        records,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parallel_offsets_survive_composition(
        v2 in prop::collection::vec(-64i32..64, 4),
        v4 in prop::collection::vec(-64i32..64, 4),
        delta in prop::collection::vec(-64i32..64, 4),
        q in prop::collection::vec(-8i32..8, 8),
    ) {
        let mut p = ModelParams::<f64>::zeros(4, 2, 4).unwrap();
        for k in 0..4 {
            let (v2, v4, d) = (v2[k] as f64, v4[k] as f64, delta[k] as f64);
            p.v[k] = v2 + d;
            p.v[4 + k] = v2;
            p.v[8 + k] = v4 + d;
            p.v[12 + k] = v4;
        }
        p.q = q.iter().map(|&x| x as f64).collect();
        for c in 0..2 {
            let e: Vec<Vec<f64>> = (0..4).map(|w| compose_embedding(&p, w, c, Side::Word).unwrap()).collect();
            prop_assert_eq!(sub(&e[0], &e[1]), sub(&e[2], &e[3]));
        }
    }

    #[test]
    fn condition_gap_bounded_by_q_gap(seed in any::<u64>(), w in 1usize..6, c in 2usize..5, m in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut p, _) = random_instance(&mut rng, w, c, m);
        p.d.iter_mut().for_each(|x| *x = 0.0);
        for word in 0..w {
            for a in 0..c {
                for b in 0..c {
                    let ea = compose_embedding(&p, word, a, Side::Word).unwrap();
                    let eb = compose_embedding(&p, word, b, Side::Word).unwrap();
                    let bound = norm(&p.v[p.row(word)]) * norm(&sub(p.q_row(a), p.q_row(b)));
                    prop_assert!(norm(&sub(&ea, &eb)) <= bound * (1.0 + 1e-12) + 1e-15);
                }
            }
        }
    }

    #[test]
    fn centered_embeddings_have_zero_mean(seed in any::<u64>(), w in 1usize..9, c in 1usize..4, m in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut p, _) = random_instance(&mut rng, w, c, m);
        p.v.iter_mut().for_each(|x| *x += 5.0);
        for cond in 0..c {
            let centered = center_embeddings(&p, cond).unwrap();
            for k in 0..m {
                let mean = (0..w).map(|word| centered[word * m + k]).sum::<f64>() / w as f64;
                prop_assert!(mean.abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn metrics_are_ordered(seed in any::<u64>(), n_words in 2usize..30, include_self in any::<bool>()) {
        let model = random_model(seed, n_words, 3, 4);
        let index = QueryIndex::from_model(&model, Representation::WordSide).unwrap();
        let set = random_eval_set(seed ^ 1, &model, 40);
        let opts = EvalOptions { neighbors: NeighborOptions { include_self }, oov: OovPolicy::Skip };
        let r = evaluate(&index, &set, &DEFAULT_KS, opts).unwrap();
        let mp: Vec<f64> = DEFAULT_KS.iter().map(|k| r.mp_at[k]).collect();
        prop_assert!(mp.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(r.mp_at[&1] <= r.mrr + 1e-15 && r.mrr <= r.mp_at[&10] + 1e-15);
    }

    #[test]
    fn every_word_is_its_own_nearest_neighbor(seed in any::<u64>(), n_words in 2usize..30) {
        let model = random_model(seed, n_words, 2, 5);
        let index = QueryIndex::from_model(&model, Representation::WordSide).unwrap();
        for (w, word) in model.vocab.words().iter().enumerate() {
            for c in ["c0", "c1"] {
                if !index.is_usable(w, index.condition_index(c).unwrap()) {
                    continue;
                }
                let r = index.nearest_neighbors(word, c, c, 1, NeighborOptions::default()).unwrap();
                prop_assert_eq!(&r.neighbors[0].word, word);
                prop_assert_eq!(r.neighbors[0].score, 1.0);
            }
        }
    }

    #[test]
    fn ranking_ignores_positive_rescaling(seed in any::<u64>(), n in 2usize..25, m in 1usize..6, factor in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src: Vec<f64> = (0..n * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tgt: Vec<f64> = (0..n * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let build = |scale: f64| {
            let words = (0..n).map(|w| format!("w{w}")).collect();
            let scaled = tgt.iter().map(|x| x * scale).collect();
            QueryIndex::from_matrices(words, vec!["a".into(), "b".into()], m, vec![src.clone(), scaled], vec![vec![true; n]; 2]).unwrap()
        };
        let (base, rescaled) = (build(1.0), build(factor));
        for w in 0..n {
            if !base.is_usable(w, 0) {
                continue;
            }
            let ids = |ix: &QueryIndex<f64>| -> Vec<usize> {
                ix.nearest_by_id(w, 0, 1, n, NeighborOptions::default()).unwrap().iter().map(|x| x.id).collect()
            };
            let order = ids(&base);
            prop_assert_eq!(&order, &ids(&rescaled));
            let q = &src[w * m..(w + 1) * m];
            for (pos, &id) in order.iter().enumerate().take(3) {
                prop_assert_eq!(brute_force_rank(q, &tgt, m, id, None), Some(pos + 1));
            }
        }
    }
}

#[test]
fn hand_built_ranks_give_known_metrics() {
    let n = 15;
    let mut words: Vec<String> = (0..n).map(|k| format!("w{k:02}")).collect();
    words.push("query".into());
    let angle = |k: usize| (k as f64 * 5.0).to_radians();
    let mut tgt: Vec<f64> = (0..n)
        .flat_map(|k| [angle(k).cos(), angle(k).sin()])
        .collect();
    tgt.extend([-1.0, 0.0]);
    let mut src = vec![0.0; 2 * n];
    src.extend([1.0, 0.0]);
    let mut present = vec![vec![false; n + 1], vec![true; n + 1]];
    present[0][n] = true;
    let index = QueryIndex::from_matrices(
        words,
        vec!["s".into(), "t".into()],
        2,
        vec![src, tgt],
        present,
    )
    .unwrap();
    let record = |gold: &str| EvalRecord {
        query_word: "query".into(),
        query_condition: "s".into(),
        target_condition: "t".into(),
        gold_word: gold.into(),
    };
    let set = EvalSet {
        name: "hand".into(),
        records: vec![record("w00"), record("w03"), record("w11")],
    };
    let r = evaluate(&index, &set, &DEFAULT_KS, EvalOptions::default()).unwrap();
    assert_eq!(r.mrr, 5.0 / 12.0);
    assert_eq!(r.mp_at[&1], 1.0 / 3.0);
    assert_eq!(r.mp_at[&3], 1.0 / 3.0);
    assert_eq!(r.mp_at[&5], 2.0 / 3.0);
    assert_eq!(r.mp_at[&10], 2.0 / 3.0);
    assert_eq!(r.n_scored, 3);
}

#[test]
fn text_export_scores_like_the_model() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..5 {
        let model = random_model(seed, 20, 3, 5);
        let path = dir.path().join(format!("emb{seed}.txt"));
        let mut buf = Vec::new();
        write_text_export(&model, Representation::WordSide, &mut buf).unwrap();
        std::fs::write(&path, buf).unwrap();
        let set = random_eval_set(seed + 100, &model, 60);
        let direct = evaluate(
            &QueryIndex::from_model(&model, Representation::WordSide).unwrap(),
            &set,
            &DEFAULT_KS,
            EvalOptions::default(),
        )
        .unwrap();
        for center in [false, true] {
            let ext =
                QueryIndex::from_text(read_text_embeddings::<f64>(&path).unwrap(), center).unwrap();
            let via_file = evaluate(&ext, &set, &DEFAULT_KS, EvalOptions::default()).unwrap();
            assert!((via_file.mrr - direct.mrr).abs() <= 1e-6);
            for k in DEFAULT_KS {
                assert!((via_file.mp_at[&k] - direct.mp_at[&k]).abs() <= 1e-6);
            }
            assert_eq!(via_file.n_scored, direct.n_scored);
        }
    }
}

#[test]
fn saved_model_round_trips_at_f32_precision() {
    let dir = tempfile::tempdir().unwrap();
    let model = random_model(3, 7, 2, 3);
    let path = dir.path().join("m.bin");
    model.save(&path).unwrap();
    let back = SavedModel::<f64>::load(&path).unwrap();
    assert_eq!(back.params, model.params.cast::<f32>().cast::<f64>());
    assert_eq!(back.vocab.words(), model.vocab.words());
    assert_eq!(back.manifest, model.manifest);
}
