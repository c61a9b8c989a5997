//! SGD with momentum, coupled weight decay and a step learning-rate
//! schedule.
//!
//! Each update uses the sum of per-sample gradients over a mini-batch.
//! Per-sample work may run on the rayon pool; gradients are reduced in
//! sample order so training is bit-reproducible for any worker count.

use std::io::Write;
use std::path::Path;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::autodiff::{KernelGrad, Tape};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::loss::{EdgeLabel, TracingConfig};
use crate::net::{self, EdgeNetConfig, InitScheme, ModelState, NetArch};
use crate::par::{self, Execution};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: u32,
    /// Epochs between learning-rate drops; `0` keeps the rate constant.
    pub lr_drop_period: u32,
    pub lr_drop_factor: f64,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; `0` disables.
    pub checkpoint_every: u32,
    pub init: InitScheme,
}

impl Default for TrainConfig {
    /// Full-scale settings meant for a pretrained backbone.
    fn default() -> Self {
        Self {
            lr0: 1e-6,
            momentum: 0.9,
            weight_decay: 2e-4,
            batch_size: 10,
            epochs: 40,
            lr_drop_period: 10,
            lr_drop_factor: 0.1,
            seed: 0,
            checkpoint_every: 0,
            init: InitScheme::default(),
        }
    }
}

impl TrainConfig {
    /// Settings for the small network trained from scratch on 64×64 images.
    ///
    /// Losses are sums over pixels, maps and batch, so the step size is far
    /// below what per-pixel means would allow; He scaling keeps the signal
    /// alive through the untrained ReLU stack.
    pub fn desk() -> Self {
        Self {
            lr0: 1e-5,
            epochs: 60,
            lr_drop_period: 20,
            init: InitScheme::He,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("train.momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.lr_drop_factor > 0.0 && self.lr_drop_factor <= 1.0) {
            return Err(Error::Config(format!(
                "train.lr_drop_factor must lie in (0, 1], got {}",
                self.lr_drop_factor
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if !(self.lr0 >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("train.lr0 and train.weight_decay must be non-negative".into()));
        }
        Ok(())
    }

    /// `lr0 · factor^⌊epoch / period⌋`, with `epoch` counted from 0.
    pub fn learning_rate(&self, epoch: u32) -> f64 {
        if self.lr_drop_period == 0 {
            return self.lr0;
        }
        let drops = epoch / self.lr_drop_period;
        self.lr0 * self.lr_drop_factor.powi(drops as i32)
    }
}

/// Gaussian-initialized parameters for `arch` (see [`ModelState::init`]).
pub fn init_params(arch: NetArch, seed: u64) -> Result<ModelState> {
    ModelState::init(arch, seed)
}

/// `v ← μv + g + λθ; θ ← θ − lr(epoch)·v` for every parameter value.
pub fn sgd_step(state: &mut ModelState, grads: &[KernelGrad], cfg: &TrainConfig, epoch: u32) -> Result<()> {
    let names = state.kernel_names();
    if grads.len() != names.len() {
        return Err(Error::Shape(format!("{} gradients for {} kernels", grads.len(), names.len())));
    }
    for (g, name) in grads.iter().zip(&names) {
        if let Some(i) = g.weights.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(format!("{name} weight[{i}]")));
        }
        if let Some(i) = g.bias.iter().flat_map(|b| b.data()).position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(format!("{name} bias[{i}]")));
        }
    }
    let lr = cfg.learning_rate(epoch);
    let (mu, wd) = (cfg.momentum, cfg.weight_decay);
    let update = |theta: &mut Grid, v: &mut Grid, g: &Grid| {
        for ((t, v), &g) in theta.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *v = mu * *v + g + wd * *t;
            *t -= lr * *v;
        }
    };
    let mut momentum = std::mem::take(&mut state.momentum);
    for ((k, m), g) in state.kernels_mut().into_iter().zip(&mut momentum).zip(grads) {
        update(&mut k.weights, &mut m.weights, &g.weights);
        if let (Some(b), Some(mb), Some(gb)) = (&mut k.bias, &mut m.bias, &g.bias) {
            update(b, mb, gb);
        }
    }
    state.momentum = momentum;
    Ok(())
}

/// One training pair.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Grid,
    pub label: EdgeLabel,
}

/// Loss values of one evaluation; `bdry` and `tex` are unweighted sums
/// over all supervised maps.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub ce: f64,
    pub bdry: f64,
    pub tex: f64,
}

impl LossParts {
    fn add(&mut self, o: &LossParts) {
        self.total += o.total;
        self.ce += o.ce;
        self.bdry += o.bdry;
        self.tex += o.tex;
    }

    fn scaled(&self, s: f64) -> Self {
        Self {
            total: self.total * s,
            ce: self.ce * s,
            bdry: self.bdry * s,
            tex: self.tex * s,
        }
    }
}

/// Loss configurations of every supervised level.
#[derive(Debug, Clone)]
pub struct LevelConfigs {
    pub sides: Vec<TracingConfig>,
    pub fused: TracingConfig,
}

impl LevelConfigs {
    pub fn from_net(cfg: &EdgeNetConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            sides: cfg.loss.side_configs(cfg.arch.stages)?,
            fused: cfg.loss.final_config()?,
        })
    }
}

/// Loss and parameter gradients of one sample.
pub fn sample_gradient(state: &ModelState, sample: &Sample, levels: &LevelConfigs) -> Result<(Vec<KernelGrad>, LossParts)> {
    let tape = Tape::new();
    let model = state.bind(&tape, true);
    let out = net::forward(&tape, &sample.image, &model)?;
    let loss = net::total_loss(&tape, &out, &sample.label, &levels.sides, &levels.fused)?;
    let mut parts = LossParts {
        total: tape.scalar(loss.total),
        ..LossParts::default()
    };
    for t in &loss.levels {
        parts.ce += tape.scalar(t.ce);
        parts.bdry += tape.scalar(t.bdry);
        parts.tex += tape.scalar(t.tex);
    }
    tape.backward(loss.total)?;
    Ok((model.grads(&tape), parts))
}

/// Loss of one sample without gradients.
pub fn sample_loss(state: &ModelState, sample: &Sample, levels: &LevelConfigs) -> Result<LossParts> {
    let tape = Tape::new();
    let model = state.bind(&tape, false);
    let out = net::forward(&tape, &sample.image, &model)?;
    let loss = net::total_loss(&tape, &out, &sample.label, &levels.sides, &levels.fused)?;
    let mut parts = LossParts {
        total: tape.scalar(loss.total),
        ..LossParts::default()
    };
    for t in &loss.levels {
        parts.ce += tape.scalar(t.ce);
        parts.bdry += tape.scalar(t.bdry);
        parts.tex += tape.scalar(t.tex);
    }
    Ok(parts)
}

/// Sum of per-sample gradients, reduced in sample order.
pub fn batch_gradient(
    state: &ModelState,
    batch: &[&Sample],
    levels: &LevelConfigs,
    exec: Execution,
) -> Result<(Vec<KernelGrad>, LossParts)> {
    let results = par::map_slice(batch, exec, |s| sample_gradient(state, s, levels));
    let mut sum: Vec<KernelGrad> = state.kernels().into_iter().map(KernelGrad::zeros_like).collect();
    let mut parts = LossParts::default();
    for r in results {
        let (g, p) = r?;
        for (acc, gi) in sum.iter_mut().zip(&g) {
            acc.add_assign(gi);
        }
        parts.add(&p);
    }
    Ok((sum, parts))
}

/// Epoch-mean losses over the samples visited in that epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    /// 1-based index of the completed epoch.
    pub epoch: u32,
    pub mean: LossParts,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: ModelState,
    pub trace: Vec<EpochLoss>,
}

/// Continues training `state` from `state.epoch` up to `cfg.epochs`.
///
/// Samples whose label supervises no pixel are skipped with a warning.
/// Sample order in every epoch depends only on `cfg.seed` and the epoch
/// index, so resuming from a checkpoint reproduces an uninterrupted run.
/// `on_epoch` runs after each epoch (checkpointing, progress).
pub fn train_from<F>(
    mut state: ModelState,
    data: &[Sample],
    net_cfg: &EdgeNetConfig,
    cfg: &TrainConfig,
    exec: Execution,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&ModelState, &EpochLoss) -> Result<()>,
{
    cfg.validate()?;
    if state.arch != net_cfg.arch {
        return Err(Error::Config("model architecture differs from the network configuration".into()));
    }
    let levels = LevelConfigs::from_net(net_cfg)?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let mut usable: Vec<&Sample> = Vec::with_capacity(data.len());
    for (i, s) in data.iter().enumerate() {
        match s.label.alpha() {
            Ok(_) => usable.push(s),
            Err(_) => warn!("sample {i} has no supervised pixels; skipped"),
        }
    }
    if usable.is_empty() {
        return Err(Error::EmptySupervision);
    }
    let mut trace = Vec::new();
    while state.epoch < cfg.epochs {
        let epoch = state.epoch;
        let mut order: Vec<usize> = (0..usable.len()).collect();
        Rng::new(rng::sub_seed(cfg.seed, u64::from(epoch))).shuffle(&mut order);
        let mut sum = LossParts::default();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| usable[i]).collect();
            let (grads, parts) = batch_gradient(&state, &batch, &levels, exec)?;
            sgd_step(&mut state, &grads, cfg, epoch)?;
            sum.add(&parts);
        }
        state.epoch += 1;
        let record = EpochLoss {
            epoch: state.epoch,
            mean: sum.scaled(1.0 / usable.len() as f64),
        };
        info!(
            "epoch {} lr {:.3e} loss {:.4} (ce {:.4}, bdry {:.4}, tex {:.4})",
            record.epoch,
            cfg.learning_rate(epoch),
            record.mean.total,
            record.mean.ce,
            record.mean.bdry,
            record.mean.tex
        );
        on_epoch(&state, &record)?;
        trace.push(record);
    }
    Ok(TrainOutcome { state, trace })
}

/// Initializes from `cfg.seed` and trains for `cfg.epochs` epochs.
pub fn train(data: &[Sample], net_cfg: &EdgeNetConfig, cfg: &TrainConfig, exec: Execution) -> Result<TrainOutcome> {
    let state = ModelState::init_with(net_cfg.arch, cfg.seed, cfg.init)?;
    train_from(state, data, net_cfg, cfg, exec, |_, _| Ok(()))
}

pub const LOSS_CSV_HEADER: &str = "epoch,mean_total,mean_ce,mean_bdry,mean_tex";

pub fn loss_csv(trace: &[EpochLoss]) -> String {
    let mut s = String::from(LOSS_CSV_HEADER);
    s.push('\n');
    for e in trace {
        let m = &e.mean;
        s.push_str(&format!("{},{},{},{},{}\n", e.epoch, m.total, m.ce, m.bdry, m.tex));
    }
    s
}

pub fn write_loss_csv(path: &Path, trace: &[EpochLoss]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(loss_csv(trace).as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_is_a_step_function() {
        let cfg = TrainConfig {
            lr0: 1e-6,
            lr_drop_period: 20,
            lr_drop_factor: 0.1,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.learning_rate(0), 1e-6);
        assert_eq!(cfg.learning_rate(19), 1e-6);
        assert_eq!(cfg.learning_rate(20), 1e-6 * 0.1);
        assert!((cfg.learning_rate(25) - 1e-7).abs() < 1e-22);
        assert_eq!(cfg.learning_rate(40), 1e-6 * 0.1f64.powi(2));
        let flat = TrainConfig {
            lr_drop_period: 0,
            ..cfg
        };
        assert_eq!(flat.learning_rate(1000), 1e-6);
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TrainConfig { momentum: 1.0, ..ok },
            TrainConfig { lr_drop_factor: 0.0, ..ok },
            TrainConfig { lr_drop_factor: 1.5, ..ok },
            TrainConfig { batch_size: 0, ..ok },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn csv_layout() {
        let t = [EpochLoss {
            epoch: 1,
            mean: LossParts {
                total: 1.5,
                ce: 1.0,
                bdry: 0.25,
                tex: 0.0,
            },
        }];
        assert_eq!(loss_csv(&t), "epoch,mean_total,mean_ce,mean_bdry,mean_tex\n1,1.5,1,0.25,0\n");
    }
}
