//! Squared log-count reconstruction loss with condition-consistency and
//! deviation penalties, and its analytic gradients.

use crate::cooc::{CoocEntry, CoocTensor};
use crate::corpus::Topology;
use crate::error::{Error, Result};
use crate::model::{compose_into, ModelParams};
use crate::scalar::{dot, Scalar};

fn check_entry<T: Scalar>(
    params: &ModelParams<T>,
    i: usize,
    j: usize,
    c: usize,
    x: f64,
) -> Result<()> {
    params.check_word(i)?;
    params.check_word(j)?;
    params.check_condition(c)?;
    if x.is_nan() || x <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "co-occurrence value must be > 0, got {x}"
        )));
    }
    Ok(())
}

/// Word-side and context-side composed vectors `(p, r)` of an entry.
fn composed<T: Scalar>(params: &ModelParams<T>, i: usize, j: usize, c: usize) -> (Vec<T>, Vec<T>) {
    let m = params.dim();
    let q = params.q_row(c);
    let mut p = vec![T::zero(); m];
    let mut r = vec![T::zero(); m];
    compose_into(
        &mut p,
        &params.v[params.row(i)],
        q,
        &params.d[params.dev_row(i, c)],
    );
    compose_into(
        &mut r,
        &params.u[params.row(j)],
        q,
        &params.dp[params.dev_row(j, c)],
    );
    (p, r)
}

/// `p·r + b_{i,c} + b'_{j,c} − log x`.
pub fn residual<T: Scalar>(
    params: &ModelParams<T>,
    i: usize,
    j: usize,
    c: usize,
    x: f64,
) -> Result<T> {
    check_entry(params, i, j, c, x)?;
    let (p, r) = composed(params, i, j, c);
    Ok(
        dot(&p, &r) + params.b[params.bias_index(i, c)] + params.bp[params.bias_index(j, c)]
            - T::of(x.ln()),
    )
}

/// Full objective over the nonzero entries of `tensor`.
///
/// Accumulated in `f64` regardless of `T`.
pub fn total_loss<T: Scalar>(
    params: &ModelParams<T>,
    tensor: &CoocTensor,
    topology: Topology,
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    let mut data = 0.0f64;
    for e in tensor.entries() {
        let r = residual(params, e.i as usize, e.j as usize, e.c as usize, e.x)?.as_f64();
        data += r * r;
    }
    let mut consistency = 0.0f64;
    for (a, b) in topology.pairs(params.n_conditions()) {
        consistency += params
            .q_row(a)
            .iter()
            .zip(params.q_row(b))
            .map(|(&x, &y)| (x - y).as_f64().powi(2))
            .sum::<f64>();
    }
    let deviation: f64 = params
        .d
        .iter()
        .chain(&params.dp)
        .map(|x| x.as_f64().powi(2))
        .sum();
    Ok(data + 0.5 * alpha * consistency + 0.5 * beta * deviation)
}

/// Gradients of the squared residual of one entry.
#[derive(Clone, Debug, PartialEq)]
pub struct EntryGradients<T> {
    pub residual: T,
    pub v: Vec<T>,
    pub u: Vec<T>,
    pub q: Vec<T>,
    pub d: Vec<T>,
    pub dp: Vec<T>,
    pub b: T,
    pub bp: T,
}

/// Gradients of `e²` for entry `(i, j, c, x)` with respect to `V_i`, `U_j`,
/// `Q_c`, `D_{i,c}`, `D'_{j,c}`, `b_{i,c}`, `b'_{j,c}`.
pub fn entry_gradients<T: Scalar>(
    params: &ModelParams<T>,
    i: usize,
    j: usize,
    c: usize,
    x: f64,
) -> Result<EntryGradients<T>> {
    let e = residual(params, i, j, c, x)?;
    let (p, r) = composed(params, i, j, c);
    let q = params.q_row(c);
    let vi = &params.v[params.row(i)];
    let uj = &params.u[params.row(j)];
    let two_e = e + e;
    Ok(EntryGradients {
        residual: e,
        v: r.iter().zip(q).map(|(&r, &q)| two_e * r * q).collect(),
        u: p.iter().zip(q).map(|(&p, &q)| two_e * p * q).collect(),
        q: (0..params.dim())
            .map(|k| two_e * (vi[k] * r[k] + uj[k] * p[k]))
            .collect(),
        d: r.iter().map(|&r| two_e * r).collect(),
        dp: p.iter().map(|&p| two_e * p).collect(),
        b: two_e,
        bp: two_e,
    })
}

/// Batch gradient of the consistency penalty on `Q_c`:
/// `α · Σ_{b ~ c} (Q_c − Q_b)`.
pub fn q_regularizer_gradient<T: Scalar>(
    params: &ModelParams<T>,
    c: usize,
    topology: Topology,
    alpha: f64,
) -> Vec<T> {
    let alpha = T::of(alpha);
    let qc = params.q_row(c);
    let mut g = vec![T::zero(); params.dim()];
    for b in topology.neighbors(c, params.n_conditions()) {
        for ((g, &x), &y) in g.iter_mut().zip(qc).zip(params.q_row(b)) {
            *g += alpha * (x - y);
        }
    }
    g
}

/// Gradient of [`total_loss`] with respect to every parameter, in the same
/// layout as the parameters.
pub fn full_gradient<T: Scalar>(
    params: &ModelParams<T>,
    tensor: &CoocTensor,
    topology: Topology,
    alpha: f64,
    beta: f64,
) -> Result<ModelParams<T>> {
    let mut g = ModelParams::zeros(params.n_words(), params.n_conditions(), params.dim())?;
    for &CoocEntry { i, j, c, x } in tensor.entries() {
        let (i, j, c) = (i as usize, j as usize, c as usize);
        let eg = entry_gradients(params, i, j, c, x)?;
        let add = |dst: &mut [T], src: &[T]| dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
        let (ri, rj, rc, dic, djc) = (
            g.row(i),
            g.row(j),
            g.cond_row(c),
            g.dev_row(i, c),
            g.dev_row(j, c),
        );
        add(&mut g.v[ri], &eg.v);
        add(&mut g.u[rj], &eg.u);
        add(&mut g.q[rc], &eg.q);
        add(&mut g.d[dic], &eg.d);
        add(&mut g.dp[djc], &eg.dp);
        let (bi, bj) = (g.bias_index(i, c), g.bias_index(j, c));
        g.b[bi] += eg.b;
        g.bp[bj] += eg.bp;
    }
    for c in 0..params.n_conditions() {
        let reg = q_regularizer_gradient(params, c, topology, alpha);
        let rc = g.cond_row(c);
        g.q[rc].iter_mut().zip(&reg).for_each(|(d, &s)| *d += s);
    }
    let beta = T::of(beta);
    for (gd, &d) in g.d.iter_mut().zip(&params.d) {
        *gd += beta * d;
    }
    for (gd, &d) in g.dp.iter_mut().zip(&params.dp) {
        *gd += beta * d;
    }
    Ok(g)
}
