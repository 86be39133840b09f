//! Stochastic training over the nonzero co-occurrence entries.

mod config;
mod objective;
mod sgd;

pub use config::{
    DeviationRegularization, TrainConfig, TrainConfigFile, ADAGRAD_EPS, DEFAULT_DIM,
    DEFAULT_EPOCHS, DEFAULT_LR,
};
pub use objective::{
    entry_gradients, full_gradient, q_regularizer_gradient, residual, total_loss, EntryGradients,
};
pub use sgd::{q_regularizer_step, sgd_step, OptimizerState, RegSchedule};

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cooc::CoocTensor;
use crate::corpus::Topology;
use crate::error::{Error, Result};
use crate::model::{init_params, ModelParams};
use crate::scalar::Scalar;
use sgd::{step, Exclusive, Layout, Scratch, SharedState};

/// Per-epoch progress.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Update steps taken this epoch.
    pub steps: usize,
    pub loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub params: ModelParams<T>,
    pub optimizer: OptimizerState<T>,
    pub epochs: Vec<EpochStats>,
}

/// Visiting order of entry indices for `epoch`, reseeded from the master
/// seed each epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let epoch_seed = seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    order
}

/// Trains from a fresh seeded initialization.
pub fn train<T: Scalar>(
    tensor: &CoocTensor,
    topology: Topology,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    train_with_progress(tensor, topology, config, |_| {})
}

pub fn train_with_progress<T: Scalar>(
    tensor: &CoocTensor,
    topology: Topology,
    config: &TrainConfig,
    progress: impl FnMut(&EpochStats),
) -> Result<TrainOutcome<T>> {
    let params = init_params(
        tensor.n_words(),
        tensor.n_conditions(),
        config.dim,
        config.seed,
    )?;
    train_from(params, tensor, topology, config, progress)
}

/// Runs `config.epochs` epochs starting from `params`. Each epoch visits
/// every nonzero entry exactly once.
pub fn train_from<T: Scalar>(
    mut params: ModelParams<T>,
    tensor: &CoocTensor,
    topology: Topology,
    config: &TrainConfig,
    mut progress: impl FnMut(&EpochStats),
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if tensor.is_empty() {
        return Err(Error::InvalidArgument(
            "co-occurrence tensor is empty".into(),
        ));
    }
    if params.n_words() != tensor.n_words() || params.n_conditions() != tensor.n_conditions() {
        return Err(Error::InvalidArgument(format!(
            "parameter shape (|W|={}, C={}) does not match tensor (|W|={}, C={})",
            params.n_words(),
            params.n_conditions(),
            tensor.n_words(),
            tensor.n_conditions()
        )));
    }
    let schedule = RegSchedule::new(tensor, topology);
    let layout = Layout::of(&params);
    let mut opt = OptimizerState::new(&params);
    let mut stats = Vec::with_capacity(config.epochs);
    let entries = tensor.entries();

    if config.workers <= 1 {
        let mut scratch = Scratch::new(layout.dim);
        for epoch in 0..config.epochs {
            let start = Instant::now();
            let mut steps = 0;
            {
                let mut store = Exclusive {
                    params: &mut params,
                    acc: &mut opt.acc,
                };
                for k in epoch_order(entries.len(), config.seed, epoch) {
                    step(
                        &mut store,
                        &mut scratch,
                        layout,
                        &entries[k],
                        config,
                        &schedule,
                    )?;
                    steps += 1;
                }
            }
            let loss = total_loss(&params, tensor, topology, config.alpha, config.beta)?;
            let s = EpochStats {
                epoch: epoch + 1,
                steps,
                loss,
                seconds: start.elapsed().as_secs_f64(),
            };
            progress(&s);
            stats.push(s);
        }
    } else {
        let shared = SharedState::new(&params, &opt);
        for epoch in 0..config.epochs {
            let start = Instant::now();
            let order = epoch_order(entries.len(), config.seed, epoch);
            let chunk = order.len().div_ceil(config.workers);
            let abort = AtomicBool::new(false);
            let steps = std::sync::atomic::AtomicUsize::new(0);
            let failure: Mutex<Option<Error>> = Mutex::new(None);
            std::thread::scope(|scope| {
                for part in order.chunks(chunk) {
                    let (shared, schedule, abort, failure, steps) =
                        (&shared, &schedule, &abort, &failure, &steps);
                    scope.spawn(move || {
                        let mut view = shared.view();
                        let mut scratch = Scratch::new(layout.dim);
                        for &k in part {
                            if abort.load(Ordering::Relaxed) {
                                return;
                            }
                            if let Err(e) = step(
                                &mut view,
                                &mut scratch,
                                layout,
                                &entries[k],
                                config,
                                schedule,
                            ) {
                                abort.store(true, Ordering::Relaxed);
                                failure.lock().expect("failure lock").get_or_insert(e);
                                return;
                            }
                            steps.fetch_add(1, Ordering::Relaxed);
                        }
                    });
                }
            });
            if let Some(e) = failure.into_inner().expect("failure lock") {
                return Err(e);
            }
            let (snapshot, _) = shared.snapshot();
            let loss = total_loss(&snapshot, tensor, topology, config.alpha, config.beta)?;
            let s = EpochStats {
                epoch: epoch + 1,
                steps: steps.into_inner(),
                loss,
                seconds: start.elapsed().as_secs_f64(),
            };
            progress(&s);
            stats.push(s);
        }
        (params, opt) = shared.snapshot();
    }

    if !params.is_finite() {
        return Err(Error::InvalidArgument(
            "training produced non-finite parameters".into(),
        ));
    }
    Ok(TrainOutcome {
        params,
        optimizer: opt,
        epochs: stats,
    })
}
