use std::fs;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Topology;
use crate::error::{Error, Result};

/// Strength of the per-step deviation penalty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeviationRegularization {
    /// `β · d` on every step that touches `d`.
    #[default]
    Full,
    /// `β · d / touches`, so one epoch applies the batch gradient once.
    PerTouch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Condition-consistency weight.
    pub alpha: f64,
    /// Deviation weight.
    pub beta: f64,
    pub epochs: usize,
    pub dim: usize,
    pub initial_lr: f64,
    pub seed: u64,
    /// 1 for deterministic training, more for lock-free parallel updates.
    pub workers: usize,
    pub deviation_reg: DeviationRegularization,
}

pub const DEFAULT_DIM: usize = 50;
pub const DEFAULT_EPOCHS: usize = 40;
pub const DEFAULT_LR: f64 = 0.05;
pub const ADAGRAD_EPS: f64 = 1e-8;

impl TrainConfig {
    /// Defaults for a topology: `α = 1.5` for chains (time), `α = 1.0` for
    /// complete graphs (locations); `β = 0.2`, 40 epochs, 50 dimensions.
    pub fn for_topology(topology: Topology) -> Self {
        let alpha = match topology {
            Topology::Chain => 1.5,
            Topology::Complete => 1.0,
        };
        TrainConfig {
            alpha,
            beta: 0.2,
            epochs: DEFAULT_EPOCHS,
            dim: DEFAULT_DIM,
            initial_lr: DEFAULT_LR,
            seed: 0,
            workers: 1,
            deviation_reg: DeviationRegularization::Full,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be finite and >= 0");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be finite and >= 0");
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad("initial_lr must be > 0");
        }
        if self.dim == 0 {
            return bad("dim must be >= 1");
        }
        if self.workers == 0 {
            return bad("workers must be >= 1");
        }
        Ok(())
    }
}

/// JSON training configuration; absent keys fall back to topology defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfigFile {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub epochs: Option<usize>,
    pub dim: Option<usize>,
    pub initial_lr: Option<f64>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub topology_override: Option<Topology>,
    pub deviation_reg: Option<DeviationRegularization>,
}

impl TrainConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(fs::File::open(
            path,
        )?))?)
    }

    /// Effective topology and config given the manifest's topology.
    pub fn resolve(&self, manifest_topology: Topology) -> Result<(Topology, TrainConfig)> {
        let topology = self.topology_override.unwrap_or(manifest_topology);
        let d = TrainConfig::for_topology(topology);
        let config = TrainConfig {
            alpha: self.alpha.unwrap_or(d.alpha),
            beta: self.beta.unwrap_or(d.beta),
            epochs: self.epochs.unwrap_or(d.epochs),
            dim: self.dim.unwrap_or(d.dim),
            initial_lr: self.initial_lr.unwrap_or(d.initial_lr),
            seed: self.seed.unwrap_or(d.seed),
            workers: self.workers.unwrap_or(d.workers),
            deviation_reg: self.deviation_reg.unwrap_or(d.deviation_reg),
        };
        config.validate()?;
        Ok((topology, config))
    }
}
