//! Trains on a generated corpus with one drifting word and prints what the
//! model recovered: neighbors before and after the drift, and the least
//! stable words.
//!
//!     cargo run --release --example planted_drift [seed]

use condemb::model::Representation;
use condemb::query::{NeighborOptions, QueryIndex};
use condemb::synth::{generate, DriftSpec};
use condemb::trainer::train_with_progress;
use condemb::{build_vocabulary, count_cooccurrences, scale_counts, SavedModel, TrainConfig};

fn main() -> condemb::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    let spec = DriftSpec::standard(5, 3, 10_000, seed);
    let corpus = generate(&spec)?;
    let vocab = build_vocabulary(&corpus.streams, 1)?;
    let tensor = scale_counts(&count_cooccurrences(&corpus.streams, &vocab, 5)?)?;

    let config = TrainConfig::for_topology(spec.topology);
    let out = train_with_progress::<f64>(&tensor, spec.topology, &config, |s| {
        if s.epoch == 1 || s.epoch % 10 == 0 {
            println!("epoch {:>2}  loss {:>10.3}", s.epoch, s.loss);
        }
    })?;
    let model = SavedModel::new(out.params, vocab, corpus.manifest)?;
    let index = QueryIndex::from_model(&model, Representation::WordSide)?;

    for cond in spec.condition_ids() {
        let r = index.nearest_neighbors(
            "drifter",
            &cond,
            &cond,
            4,
            NeighborOptions {
                include_self: false,
            },
        )?;
        let words: Vec<_> = r
            .neighbors
            .iter()
            .map(|n| format!("{} {:.2}", n.word, n.score))
            .collect();
        println!("{cond}: {}", words.join(", "));
    }
    let ranking = index.stability_ranking(usize::MAX)?;
    println!("least stable:");
    for (word, score) in ranking.entries.iter().rev().take(3) {
        println!("  {word:<10} {score:.3}");
    }
    Ok(())
}
