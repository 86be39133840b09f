//! Single-entry adaptive-rate updates.

use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};

use super::config::{DeviationRegularization, TrainConfig, ADAGRAD_EPS};
use crate::cooc::{CoocEntry, CoocTensor};
use crate::corpus::Topology;
use crate::error::{Error, Result};
use crate::model::{ModelParams, Tensor};
use crate::scalar::Scalar;

/// Accumulated squared gradients, one per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub acc: ModelParams<T>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        OptimizerState {
            acc: ModelParams::zeros(params.n_words(), params.n_conditions(), params.dim())
                .expect("params have positive dimensions"),
        }
    }
}

/// Per-tensor facts the stochastic regularizer schedule needs.
#[derive(Clone, Debug)]
pub struct RegSchedule {
    pub topology: Topology,
    pub n_conditions: usize,
    /// Nonzero entries per condition.
    pub nnz_by_condition: Vec<usize>,
    /// Entries with word `i` in condition `c`, indexed `i * C + c`.
    pub word_touches: Vec<u32>,
    /// Entries with context `j` in condition `c`, indexed `j * C + c`.
    pub context_touches: Vec<u32>,
}

impl RegSchedule {
    pub fn new(tensor: &CoocTensor, topology: Topology) -> Self {
        let nc = tensor.n_conditions();
        let mut word_touches = vec![0; tensor.n_words() * nc];
        let mut context_touches = vec![0; tensor.n_words() * nc];
        for e in tensor.entries() {
            word_touches[e.i as usize * nc + e.c as usize] += 1;
            context_touches[e.j as usize * nc + e.c as usize] += 1;
        }
        RegSchedule {
            topology,
            n_conditions: nc,
            nnz_by_condition: tensor.nnz_by_condition(),
            word_touches,
            context_touches,
        }
    }

    /// The share of `Q_c`'s consistency gradient applied by one step on an
    /// entry of condition `c`.
    pub fn q_step_weight(&self, alpha: f64, c: usize) -> f64 {
        match self.nnz_by_condition[c] {
            0 => 0.0,
            n => alpha / n as f64,
        }
    }
}

/// Storage the update rule runs against: either exclusive, or shared
/// through relaxed atomics for lock-free parallel training.
pub(crate) trait ParamStore<T: Scalar> {
    fn read(&self, t: Tensor, range: Range<usize>, out: &mut [T]);
    fn read_one(&self, t: Tensor, k: usize) -> T;
    /// `acc += g²; θ −= lr / √(acc + ε) · g`, elementwise from `start`.
    fn adagrad(&mut self, t: Tensor, start: usize, grad: &[T], lr: T);
}

pub(crate) struct Exclusive<'a, T> {
    pub params: &'a mut ModelParams<T>,
    pub acc: &'a mut ModelParams<T>,
}

impl<T: Scalar> ParamStore<T> for Exclusive<'_, T> {
    fn read(&self, t: Tensor, range: Range<usize>, out: &mut [T]) {
        out.copy_from_slice(&self.params.tensor(t)[range]);
    }

    fn read_one(&self, t: Tensor, k: usize) -> T {
        self.params.tensor(t)[k]
    }

    fn adagrad(&mut self, t: Tensor, start: usize, grad: &[T], lr: T) {
        let eps = T::of(ADAGRAD_EPS);
        let theta = &mut self.params.tensor_mut(t)[start..start + grad.len()];
        let acc = &mut self.acc.tensor_mut(t)[start..start + grad.len()];
        for ((th, a), &g) in theta.iter_mut().zip(acc.iter_mut()).zip(grad) {
            *a += g * g;
            *th -= lr / (*a + eps).sqrt() * g;
        }
    }
}

/// Parameters and accumulators as atomic bit patterns. Reads and writes are
/// individually atomic but read-modify-write sequences are not, so
/// concurrent updates to the same element may be lost.
pub(crate) struct SharedState<T> {
    shape: (usize, usize, usize),
    params: [Vec<AtomicU64>; 7],
    acc: [Vec<AtomicU64>; 7],
    _marker: std::marker::PhantomData<T>,
}

fn to_atomic<T: Scalar>(p: &ModelParams<T>) -> [Vec<AtomicU64>; 7] {
    Tensor::ALL.map(|t| {
        p.tensor(t)
            .iter()
            .map(|x| AtomicU64::new(x.to_bits64()))
            .collect()
    })
}

fn from_atomic<T: Scalar>(shape: (usize, usize, usize), a: &[Vec<AtomicU64>; 7]) -> ModelParams<T> {
    let mut p = ModelParams::zeros(shape.0, shape.1, shape.2).expect("valid shape");
    for (k, t) in Tensor::ALL.into_iter().enumerate() {
        for (dst, src) in p.tensor_mut(t).iter_mut().zip(&a[k]) {
            *dst = T::from_bits64(src.load(Ordering::Relaxed));
        }
    }
    p
}

fn slot(t: Tensor) -> usize {
    Tensor::ALL
        .iter()
        .position(|&x| x == t)
        .expect("tensor listed in ALL")
}

impl<T: Scalar> SharedState<T> {
    pub fn new(params: &ModelParams<T>, opt: &OptimizerState<T>) -> Self {
        SharedState {
            shape: (params.n_words(), params.n_conditions(), params.dim()),
            params: to_atomic(params),
            acc: to_atomic(&opt.acc),
            _marker: std::marker::PhantomData,
        }
    }

    pub fn snapshot(&self) -> (ModelParams<T>, OptimizerState<T>) {
        (
            from_atomic(self.shape, &self.params),
            OptimizerState {
                acc: from_atomic(self.shape, &self.acc),
            },
        )
    }

    pub fn view(&self) -> SharedView<'_, T> {
        SharedView { state: self }
    }
}

#[derive(Clone, Copy)]
pub(crate) struct SharedView<'a, T> {
    state: &'a SharedState<T>,
}

impl<T: Scalar> ParamStore<T> for SharedView<'_, T> {
    fn read(&self, t: Tensor, range: Range<usize>, out: &mut [T]) {
        for (o, a) in out.iter_mut().zip(&self.state.params[slot(t)][range]) {
            *o = T::from_bits64(a.load(Ordering::Relaxed));
        }
    }

    fn read_one(&self, t: Tensor, k: usize) -> T {
        T::from_bits64(self.state.params[slot(t)][k].load(Ordering::Relaxed))
    }

    fn adagrad(&mut self, t: Tensor, start: usize, grad: &[T], lr: T) {
        let eps = T::of(ADAGRAD_EPS);
        let s = slot(t);
        let theta = &self.state.params[s][start..start + grad.len()];
        let acc = &self.state.acc[s][start..start + grad.len()];
        for ((th, a), &g) in theta.iter().zip(acc).zip(grad) {
            let new_acc = T::from_bits64(a.load(Ordering::Relaxed)) + g * g;
            a.store(new_acc.to_bits64(), Ordering::Relaxed);
            let old = T::from_bits64(th.load(Ordering::Relaxed));
            th.store(
                (old - lr / (new_acc + eps).sqrt() * g).to_bits64(),
                Ordering::Relaxed,
            );
        }
    }
}

/// Per-worker buffers so a step allocates nothing.
pub(crate) struct Scratch<T> {
    vi: Vec<T>,
    uj: Vec<T>,
    qc: Vec<T>,
    qb: Vec<T>,
    dic: Vec<T>,
    dpjc: Vec<T>,
    p: Vec<T>,
    r: Vec<T>,
    gv: Vec<T>,
    gu: Vec<T>,
    gq: Vec<T>,
    gd: Vec<T>,
    gdp: Vec<T>,
}

impl<T: Scalar> Scratch<T> {
    pub fn new(dim: usize) -> Self {
        let z = || vec![T::zero(); dim];
        Scratch {
            vi: z(),
            uj: z(),
            qc: z(),
            qb: z(),
            dic: z(),
            dpjc: z(),
            p: z(),
            r: z(),
            gv: z(),
            gu: z(),
            gq: z(),
            gd: z(),
            gdp: z(),
        }
    }
}

/// Shape information a step needs without holding the parameters.
#[derive(Clone, Copy)]
pub(crate) struct Layout {
    pub n_conditions: usize,
    pub dim: usize,
}

impl Layout {
    pub fn of<T: Scalar>(p: &ModelParams<T>) -> Self {
        Layout {
            n_conditions: p.n_conditions(),
            dim: p.dim(),
        }
    }
}

/// One stochastic step on entry `e`; returns the residual before the update.
pub(crate) fn step<T: Scalar, S: ParamStore<T>>(
    store: &mut S,
    s: &mut Scratch<T>,
    layout: Layout,
    e: &CoocEntry,
    config: &TrainConfig,
    schedule: &RegSchedule,
) -> Result<T> {
    let (i, j, c) = (e.i as usize, e.j as usize, e.c as usize);
    let (nc, m) = (layout.n_conditions, layout.dim);
    let row = |w: usize| w * m..(w + 1) * m;
    let dev = |w: usize| (w * nc + c) * m..(w * nc + c + 1) * m;
    let (bi, bj) = (i * nc + c, j * nc + c);

    store.read(Tensor::V, row(i), &mut s.vi);
    store.read(Tensor::U, row(j), &mut s.uj);
    store.read(Tensor::Q, row(c), &mut s.qc);
    store.read(Tensor::D, dev(i), &mut s.dic);
    store.read(Tensor::Dp, dev(j), &mut s.dpjc);

    let mut e_val =
        store.read_one(Tensor::B, bi) + store.read_one(Tensor::Bp, bj) - T::of(e.x.ln());
    for k in 0..m {
        s.p[k] = s.vi[k] * s.qc[k] + s.dic[k];
        s.r[k] = s.uj[k] * s.qc[k] + s.dpjc[k];
        e_val += s.p[k] * s.r[k];
    }
    let two_e = e_val + e_val;

    let beta = T::of(config.beta);
    let (beta_d, beta_dp) = match config.deviation_reg {
        DeviationRegularization::Full => (beta, beta),
        DeviationRegularization::PerTouch => (
            beta / T::of(schedule.word_touches[bi].max(1) as f64),
            beta / T::of(schedule.context_touches[bj].max(1) as f64),
        ),
    };
    for k in 0..m {
        s.gv[k] = two_e * s.r[k] * s.qc[k];
        s.gu[k] = two_e * s.p[k] * s.qc[k];
        s.gq[k] = two_e * (s.vi[k] * s.r[k] + s.uj[k] * s.p[k]);
        s.gd[k] = two_e * s.r[k] + beta_d * s.dic[k];
        s.gdp[k] = two_e * s.p[k] + beta_dp * s.dpjc[k];
    }

    let q_weight = T::of(schedule.q_step_weight(config.alpha, c));
    if q_weight != T::zero() {
        for b in schedule.topology.neighbors(c, nc) {
            store.read(Tensor::Q, row(b), &mut s.qb);
            for k in 0..m {
                s.gq[k] += q_weight * (s.qc[k] - s.qb[k]);
            }
        }
    }

    let finite = two_e.is_finite()
        && [&s.gv, &s.gu, &s.gq, &s.gd, &s.gdp]
            .iter()
            .all(|g| g.iter().all(|x| x.is_finite()));
    if !finite {
        return Err(Error::NonFinite { i, j, c });
    }

    let lr = T::of(config.initial_lr);
    store.adagrad(Tensor::V, i * m, &s.gv, lr);
    store.adagrad(Tensor::U, j * m, &s.gu, lr);
    store.adagrad(Tensor::Q, c * m, &s.gq, lr);
    store.adagrad(Tensor::D, (i * nc + c) * m, &s.gd, lr);
    store.adagrad(Tensor::Dp, (j * nc + c) * m, &s.gdp, lr);
    store.adagrad(Tensor::B, bi, &[two_e], lr);
    store.adagrad(Tensor::Bp, bj, &[two_e], lr);
    Ok(e_val)
}

/// Applies one stochastic update for `entry` in place.
///
/// The data-term gradient is combined with the deviation penalty of the
/// touched deviations and a `1/nnz_c` share of the consistency penalty on
/// `Q_c`. Fails without modifying anything if a gradient is not finite.
pub fn sgd_step<T: Scalar>(
    params: &mut ModelParams<T>,
    opt: &mut OptimizerState<T>,
    entry: &CoocEntry,
    config: &TrainConfig,
    schedule: &RegSchedule,
) -> Result<T> {
    params.check_word(entry.i as usize)?;
    params.check_word(entry.j as usize)?;
    params.check_condition(entry.c as usize)?;
    if entry.x.is_nan() || entry.x <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "co-occurrence value must be > 0, got {}",
            entry.x
        )));
    }
    let layout = Layout::of(params);
    let mut scratch = Scratch::new(layout.dim);
    let mut store = Exclusive {
        params,
        acc: &mut opt.acc,
    };
    step(&mut store, &mut scratch, layout, entry, config, schedule)
}

/// The consistency-penalty gradient a single step on an entry of condition
/// `c` contributes to `Q_c`, at the current parameters.
pub fn q_regularizer_step<T: Scalar>(
    params: &ModelParams<T>,
    c: usize,
    alpha: f64,
    schedule: &RegSchedule,
) -> Vec<T> {
    let w = T::of(schedule.q_step_weight(alpha, c));
    let qc = params.q_row(c);
    let mut g = vec![T::zero(); params.dim()];
    for b in schedule.topology.neighbors(c, params.n_conditions()) {
        for ((g, &x), &y) in g.iter_mut().zip(qc).zip(params.q_row(b)) {
            *g += w * (x - y);
        }
    }
    g
}
