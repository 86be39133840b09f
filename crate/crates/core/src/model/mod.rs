//! Trainable parameters and composition of condition-specific embeddings.
//!
//! A word's embedding in condition `c` is `v_w ⊙ q_c + d_{w,c}`, with a
//! parallel context-side embedding `u_w ⊙ q_c + d'_{w,c}` used only during
//! training.

mod io;

pub use io::{
    read_text_embeddings, sidecar_paths, write_text_export, SavedModel, TextEmbeddings,
    MODEL_MAGIC, MODEL_VERSION,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dot, norm, Scalar};

/// Which of the two embedding families to compose.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Word,
    Context,
}

/// Vector used for queries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Representation {
    /// `v_w ⊙ q_c + d_{w,c}`.
    #[default]
    WordSide,
    /// Word side plus context side.
    WordPlusContext,
}

/// Names one of the seven parameter tensors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Tensor {
    V,
    U,
    Q,
    D,
    Dp,
    B,
    Bp,
}

impl Tensor {
    pub const ALL: [Tensor; 7] = [
        Tensor::V,
        Tensor::U,
        Tensor::Q,
        Tensor::D,
        Tensor::Dp,
        Tensor::B,
        Tensor::Bp,
    ];
}

/// All trainable tensors, stored row-major in flat buffers.
///
/// Deviation and bias tensors are indexed by `(word, condition)` with the
/// condition varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub(crate) n_words: usize,
    pub(crate) n_conditions: usize,
    pub(crate) dim: usize,
    /// `|W| × m`
    pub v: Vec<T>,
    /// `|W| × m`
    pub u: Vec<T>,
    /// `C × m`
    pub q: Vec<T>,
    /// `|W| × C × m`
    pub d: Vec<T>,
    /// `|W| × C × m`
    pub dp: Vec<T>,
    /// `|W| × C`
    pub b: Vec<T>,
    /// `|W| × C`
    pub bp: Vec<T>,
}

impl<T: Scalar> ModelParams<T> {
    /// All-zero parameters.
    pub fn zeros(n_words: usize, n_conditions: usize, dim: usize) -> Result<Self> {
        if n_words == 0 || n_conditions == 0 || dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "model dimensions must be positive (|W|={n_words}, C={n_conditions}, m={dim})"
            )));
        }
        let wcm = n_words * n_conditions * dim;
        Ok(ModelParams {
            n_words,
            n_conditions,
            dim,
            v: vec![T::zero(); n_words * dim],
            u: vec![T::zero(); n_words * dim],
            q: vec![T::zero(); n_conditions * dim],
            d: vec![T::zero(); wcm],
            dp: vec![T::zero(); wcm],
            b: vec![T::zero(); n_words * n_conditions],
            bp: vec![T::zero(); n_words * n_conditions],
        })
    }

    pub fn n_words(&self) -> usize {
        self.n_words
    }

    pub fn n_conditions(&self) -> usize {
        self.n_conditions
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, w: usize) -> std::ops::Range<usize> {
        w * self.dim..(w + 1) * self.dim
    }

    #[inline]
    pub fn cond_row(&self, c: usize) -> std::ops::Range<usize> {
        c * self.dim..(c + 1) * self.dim
    }

    #[inline]
    pub fn dev_row(&self, w: usize, c: usize) -> std::ops::Range<usize> {
        let start = (w * self.n_conditions + c) * self.dim;
        start..start + self.dim
    }

    #[inline]
    pub fn bias_index(&self, w: usize, c: usize) -> usize {
        w * self.n_conditions + c
    }

    pub fn q_row(&self, c: usize) -> &[T] {
        &self.q[self.cond_row(c)]
    }

    pub(crate) fn check_word(&self, w: usize) -> Result<()> {
        if w >= self.n_words {
            return Err(Error::OutOfRange {
                what: "word id",
                index: w,
                size: self.n_words,
            });
        }
        Ok(())
    }

    pub(crate) fn check_condition(&self, c: usize) -> Result<()> {
        if c >= self.n_conditions {
            return Err(Error::OutOfRange {
                what: "condition",
                index: c,
                size: self.n_conditions,
            });
        }
        Ok(())
    }

    /// Named views of every tensor, in file order.
    pub fn tensors(&self) -> [(&'static str, &[T]); 7] {
        [
            ("V", &self.v),
            ("U", &self.u),
            ("Q", &self.q),
            ("D", &self.d),
            ("Dp", &self.dp),
            ("B", &self.b),
            ("Bp", &self.bp),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Vec<T>); 7] {
        [
            ("V", &mut self.v),
            ("U", &mut self.u),
            ("Q", &mut self.q),
            ("D", &mut self.d),
            ("Dp", &mut self.dp),
            ("B", &mut self.b),
            ("Bp", &mut self.bp),
        ]
    }

    pub fn tensor(&self, t: Tensor) -> &[T] {
        match t {
            Tensor::V => &self.v,
            Tensor::U => &self.u,
            Tensor::Q => &self.q,
            Tensor::D => &self.d,
            Tensor::Dp => &self.dp,
            Tensor::B => &self.b,
            Tensor::Bp => &self.bp,
        }
    }

    pub fn tensor_mut(&mut self, t: Tensor) -> &mut [T] {
        match t {
            Tensor::V => &mut self.v,
            Tensor::U => &mut self.u,
            Tensor::Q => &mut self.q,
            Tensor::D => &mut self.d,
            Tensor::Dp => &mut self.dp,
            Tensor::B => &mut self.b,
            Tensor::Bp => &mut self.bp,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    /// Converts every tensor to another scalar type.
    pub fn cast<S: Scalar>(&self) -> ModelParams<S> {
        let conv = |t: &[T]| t.iter().map(|&x| S::of(x.as_f64())).collect();
        ModelParams {
            n_words: self.n_words,
            n_conditions: self.n_conditions,
            dim: self.dim,
            v: conv(&self.v),
            u: conv(&self.u),
            q: conv(&self.q),
            d: conv(&self.d),
            dp: conv(&self.dp),
            b: conv(&self.b),
            bp: conv(&self.bp),
        }
    }
}

/// Seeded initialization: `V, U ~ U(-0.5/m, 0.5/m)`, `Q = 1 + U(-0.01, 0.01)`,
/// deviations and biases zero.
pub fn init_params<T: Scalar>(
    n_words: usize,
    n_conditions: usize,
    dim: usize,
    seed: u64,
) -> Result<ModelParams<T>> {
    let mut p = ModelParams::zeros(n_words, n_conditions, dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = 0.5 / dim as f64;
    for x in p.v.iter_mut().chain(p.u.iter_mut()) {
        *x = T::of(rng.gen_range(-half..half));
    }
    for x in p.q.iter_mut() {
        *x = T::of(1.0 + rng.gen_range(-0.01..0.01));
    }
    Ok(p)
}

/// Writes `base ⊙ q + dev` into `out`.
#[inline]
pub(crate) fn compose_into<T: Scalar>(out: &mut [T], base: &[T], q: &[T], dev: &[T]) {
    for (((o, &x), &y), &z) in out.iter_mut().zip(base).zip(q).zip(dev) {
        *o = x * y + z;
    }
}

/// Condition-specific embedding of word `w` under condition `c`.
pub fn compose_embedding<T: Scalar>(
    params: &ModelParams<T>,
    w: usize,
    c: usize,
    side: Side,
) -> Result<Vec<T>> {
    params.check_word(w)?;
    params.check_condition(c)?;
    let (base, dev) = match side {
        Side::Word => (&params.v, &params.d),
        Side::Context => (&params.u, &params.dp),
    };
    let mut out = vec![T::zero(); params.dim];
    compose_into(
        &mut out,
        &base[params.row(w)],
        params.q_row(c),
        &dev[params.dev_row(w, c)],
    );
    Ok(out)
}

/// Composed embeddings of every word in condition `c`, `|W| × m` row-major.
pub fn condition_matrix<T: Scalar>(
    params: &ModelParams<T>,
    c: usize,
    repr: Representation,
) -> Result<Vec<T>> {
    params.check_condition(c)?;
    let m = params.dim;
    let mut out = vec![T::zero(); params.n_words * m];
    let mut ctx = vec![T::zero(); m];
    for (w, row) in out.chunks_exact_mut(m).enumerate() {
        compose_into(
            row,
            &params.v[params.row(w)],
            params.q_row(c),
            &params.d[params.dev_row(w, c)],
        );
        if repr == Representation::WordPlusContext {
            compose_into(
                &mut ctx,
                &params.u[params.row(w)],
                params.q_row(c),
                &params.dp[params.dev_row(w, c)],
            );
            for (o, &x) in row.iter_mut().zip(&ctx) {
                *o += x;
            }
        }
    }
    Ok(out)
}

/// Subtracts the column mean from a row-major `rows × dim` matrix.
pub fn center_rows<T: Scalar>(matrix: &mut [T], dim: usize) {
    let rows = matrix.len() / dim;
    if rows == 0 {
        return;
    }
    let mut mean = vec![0.0f64; dim];
    for row in matrix.chunks_exact(dim) {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x.as_f64();
        }
    }
    let mean: Vec<T> = mean.into_iter().map(|s| T::of(s / rows as f64)).collect();
    for row in matrix.chunks_exact_mut(dim) {
        for (x, &m) in row.iter_mut().zip(&mean) {
            *x -= m;
        }
    }
}

/// Centered word-side embeddings of condition `c`, `|W| × m` row-major.
pub fn center_embeddings<T: Scalar>(params: &ModelParams<T>, c: usize) -> Result<Vec<T>> {
    center_embeddings_with(params, c, Representation::WordSide)
}

pub fn center_embeddings_with<T: Scalar>(
    params: &ModelParams<T>,
    c: usize,
    repr: Representation,
) -> Result<Vec<T>> {
    let mut m = condition_matrix(params, c, repr)?;
    center_rows(&mut m, params.dim);
    Ok(m)
}

/// A single composed vector tagged with where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionedEmbedding<T> {
    pub word: usize,
    pub condition: usize,
    pub vector: Vec<T>,
    pub centered: bool,
}

impl<T: Scalar> ConditionedEmbedding<T> {
    pub fn raw(params: &ModelParams<T>, word: usize, condition: usize) -> Result<Self> {
        Ok(ConditionedEmbedding {
            word,
            condition,
            vector: compose_embedding(params, word, condition, Side::Word)?,
            centered: false,
        })
    }

    pub fn centered(params: &ModelParams<T>, word: usize, condition: usize) -> Result<Self> {
        params.check_word(word)?;
        let all = center_embeddings(params, condition)?;
        Ok(ConditionedEmbedding {
            word,
            condition,
            vector: all[params.row(word)].to_vec(),
            centered: true,
        })
    }
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "vector lengths differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == T::zero() || nb == T::zero() {
        return Err(Error::ZeroNorm);
    }
    let c = dot(a, b) / (na * nb);
    Ok(c.max(-T::one()).min(T::one()))
}
