//! Condition-specific word embeddings.
//!
//! A corpus split by condition (time bin or region) is turned into a sparse
//! co-occurrence tensor, and each word gets one vector per condition,
//! `v_w ⊙ q_c + d_{w,c}`: a shared basic vector modulated by a learned
//! condition vector, plus a penalized per-condition deviation. The
//! [`query`] and [`eval`] modules work on centered embeddings.

pub mod cooc;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod query;
mod scalar;
pub mod synth;
pub mod trainer;

pub use cooc::{count_cooccurrences, scale_counts, CoocEntry, CoocTensor};
pub use corpus::{
    build_vocabulary, read_condition_corpus, tokenize, ConditionManifest, Topology, Vocabulary,
};
pub use error::{Error, Result};
pub use model::{
    center_embeddings, compose_embedding, cosine, init_params, ModelParams, SavedModel, Side,
};
pub use scalar::Scalar;
pub use trainer::{train, TrainConfig, TrainOutcome};

pub type ModelParamsF32 = ModelParams<f32>;
pub type ModelParamsF64 = ModelParams<f64>;
pub type SavedModelF32 = SavedModel<f32>;
pub type SavedModelF64 = SavedModel<f64>;
pub type QueryIndexF32 = query::QueryIndex<f32>;
pub type QueryIndexF64 = query::QueryIndex<f64>;
