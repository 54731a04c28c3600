//! Small 1-D convolutional regressor from an 8×200 window to a stability
//! score in (0, 1), trained with MSE and Adam.
//!
//! Inputs are standardized per channel with statistics fitted on the
//! training windows; those statistics travel with the checkpoint. Channels
//! listed in [`TrainConfig::drop_channels`] are zeroed after standardization
//! (the velocity ablation drops rows 6 and 7).

pub mod adam;
pub mod arch;
pub mod checkpoint;
pub mod net;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use arch::{ArchitectureSpec, LayerSpec};
pub use net::{backward, forward, BatchMode, LossAndGrad, Mode, Network};

use crate::error::{Error, Result};
use crate::simgen::derive_seed;
use crate::types::{ScoredWindow, Terrain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub init_seed: u64,
    pub shuffle_seed: u64,
    pub dropout_seed: u64,
    /// Input rows zeroed before the network sees them.
    pub drop_channels: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            adam: AdamConfig::default(),
            init_seed: 1,
            shuffle_seed: 2,
            dropout_seed: 3,
            drop_channels: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, spec: &ArchitectureSpec) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let a = &self.adam;
        if !(a.lr.is_finite() && a.lr > 0.0) || !(a.eps.is_finite() && a.eps > 0.0) {
            return Err(Error::Config(format!(
                "adam lr and eps must be positive, got {} and {}",
                a.lr, a.eps
            )));
        }
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return Err(Error::Config(format!(
                "adam betas must lie in [0, 1), got {} and {}",
                a.beta1, a.beta2
            )));
        }
        if let Some(&c) = self
            .drop_channels
            .iter()
            .find(|&&c| c >= spec.input_channels)
        {
            return Err(Error::Config(format!(
                "cannot drop channel {c}; input has {}",
                spec.input_channels
            )));
        }
        Ok(())
    }
}

/// Per-channel standardization `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InputNorm {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Fits channel means and standard deviations over every time step of every window.
    pub fn fit(windows: &[&[f64]], channels: usize) -> Self {
        let mut mean = vec![0.0; channels];
        let mut std = vec![1.0; channels];
        if windows.is_empty() {
            return Self { mean, std };
        }
        let len = windows[0].len() / channels;
        let n = (windows.len() * len) as f64;
        for c in 0..channels {
            let m = windows
                .iter()
                .map(|w| w[c * len..(c + 1) * len].iter().sum::<f64>())
                .sum::<f64>()
                / n;
            let var = windows
                .iter()
                .map(|w| {
                    w[c * len..(c + 1) * len]
                        .iter()
                        .map(|v| (v - m) * (v - m))
                        .sum::<f64>()
                })
                .sum::<f64>()
                / n;
            mean[c] = m;
            std[c] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        }
        Self { mean, std }
    }
}

/// Train and validation MSE after an epoch; epoch 0 is before any update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub format_version: u32,
    pub architecture: ArchitectureSpec,
    pub input_norm: InputNorm,
    /// Flat parameters in [`ArchitectureSpec::param_slots`] order.
    pub params: Vec<f64>,
    pub train_config: TrainConfig,
    pub curve: Vec<EpochRecord>,
    pub provenance: BTreeMap<String, String>,
}

impl ModelCheckpoint {
    pub fn network(&self) -> Result<Network> {
        Network::new(&self.architecture)
    }

    /// Standardized, channel-dropped network input for one raw window.
    pub fn prepare_input(&self, raw: &[f64]) -> Result<Vec<f64>> {
        let channels = self.architecture.input_channels;
        let len = self.architecture.input_len;
        if raw.len() != channels * len {
            return Err(Error::Input(format!(
                "window has {} values, model takes {channels}x{len}",
                raw.len()
            )));
        }
        let mut x = Vec::with_capacity(raw.len());
        for c in 0..channels {
            let drop = self.train_config.drop_channels.contains(&c);
            let (m, s) = (self.input_norm.mean[c], self.input_norm.std[c]);
            x.extend(
                raw[c * len..(c + 1) * len]
                    .iter()
                    .map(|v| if drop { 0.0 } else { (v - m) / s }),
            );
        }
        Ok(x)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        checkpoint::load(path)
    }
}

/// Kaiming-uniform fan-in weights (bound `sqrt(6 / fan_in)`), zero biases.
pub fn init_weights(spec: &ArchitectureSpec, seed: u64) -> Result<ModelCheckpoint> {
    let slots = spec.param_slots()?;
    let mut params = vec![0.0; spec.n_params()?];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for s in &slots {
        let bound = (6.0 / s.fan_in as f64).sqrt();
        for w in &mut params[s.weight_offset..s.weight_offset + s.weight_len] {
            *w = rng.random_range(-bound..bound);
        }
    }
    Ok(ModelCheckpoint {
        format_version: checkpoint::FORMAT_VERSION,
        architecture: spec.clone(),
        input_norm: InputNorm::identity(spec.input_channels),
        params,
        train_config: TrainConfig {
            init_seed: seed,
            ..TrainConfig::default()
        },
        curve: Vec::new(),
        provenance: BTreeMap::new(),
    })
}

fn eval_mse(net: &Network, params: &[f64], xs: &[Vec<f64>], ys: &[f64]) -> Result<f64> {
    let preds = forward(net, params, xs, false, 0)?;
    Ok(preds
        .iter()
        .zip(ys)
        .map(|(p, y)| (p - y) * (p - y))
        .sum::<f64>()
        / ys.len() as f64)
}

/// Trains from scratch for a fixed number of epochs.
///
/// The output bias starts at the logit of the mean training label; every
/// other parameter comes from [`init_weights`].
///
/// Each epoch shuffles the training set with a stream seeded from
/// `(shuffle_seed, epoch)`; batch `k` overall draws dropout masks from
/// `(dropout_seed, k)`. Returned weights are rounded to `f32`, the precision
/// they are stored at.
pub fn train(
    train_set: &[&ScoredWindow],
    val_set: &[&ScoredWindow],
    spec: &ArchitectureSpec,
    cfg: &TrainConfig,
) -> Result<ModelCheckpoint> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config(format!(
            "training needs non-empty train and validation sets (got {} and {})",
            train_set.len(),
            val_set.len()
        )));
    }
    cfg.validate(spec)?;
    let net = Network::new(spec)?;
    let mut ckpt = init_weights(spec, cfg.init_seed)?;
    ckpt.train_config = cfg.clone();
    let raw: Vec<&[f64]> = train_set
        .iter()
        .map(|w| w.frame.channels.as_slice())
        .collect();
    ckpt.input_norm = InputNorm::fit(&raw, spec.input_channels);

    let prep = |set: &[&ScoredWindow]| -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let xs = set
            .iter()
            .map(|w| ckpt.prepare_input(&w.frame.channels))
            .collect::<Result<Vec<_>>>()?;
        Ok((xs, set.iter().map(|w| w.gt).collect()))
    };
    let (train_x, train_y) = prep(train_set)?;
    let (val_x, val_y) = prep(val_set)?;

    let mut params = std::mem::take(&mut ckpt.params);
    // Start the output at the label mean. From a 0.5 start on skewed labels
    // the first steps drive the sigmoid into saturation and kill the hidden
    // units before the bias can catch up.
    let head = spec
        .param_slots()?
        .last()
        .copied()
        .expect("validated spec has a head");
    let mean_y = (train_y.iter().sum::<f64>() / train_y.len() as f64).clamp(1e-3, 1.0 - 1e-3);
    params[head.bias_offset] = (mean_y / (1.0 - mean_y)).ln();
    let mut state = AdamState::new(params.len());
    let mut curve = vec![EpochRecord {
        epoch: 0,
        train_mse: eval_mse(&net, &params, &train_x, &train_y)?,
        val_mse: eval_mse(&net, &params, &val_x, &val_y)?,
    }];
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut step: u64 = 0;
    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            cfg.shuffle_seed,
            epoch as u64,
        )));
        for chunk in order.chunks(cfg.batch_size) {
            let xs: Vec<Vec<f64>> = chunk.iter().map(|&i| train_x[i].clone()).collect();
            let ys: Vec<f64> = chunk.iter().map(|&i| train_y[i]).collect();
            let out = backward(
                &net,
                &params,
                &xs,
                &ys,
                BatchMode::Train {
                    dropout_seed: derive_seed(cfg.dropout_seed, step),
                },
            )?;
            adam_step(&mut params, &out.grad, &mut state, &cfg.adam);
            step += 1;
        }
        let rec = EpochRecord {
            epoch,
            train_mse: eval_mse(&net, &params, &train_x, &train_y)?,
            val_mse: eval_mse(&net, &params, &val_x, &val_y)?,
        };
        if epoch % 10 == 0 || epoch == cfg.epochs {
            log::info!(
                "epoch {epoch:3}: train mse {:.5}, val mse {:.5}",
                rec.train_mse,
                rec.val_mse
            );
        }
        curve.push(rec);
    }
    ckpt.params = params.iter().map(|&w| w as f32 as f64).collect();
    ckpt.curve = curve;
    Ok(ckpt)
}

/// Model output for one window, with the label and class it came with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub window_id: String,
    pub terrain: Terrain,
    pub commanded_speed: f64,
    pub gt: f64,
    pub pred: f64,
}

/// Inference over windows, in input order.
pub fn predict(ckpt: &ModelCheckpoint, windows: &[ScoredWindow]) -> Result<Vec<Prediction>> {
    let net = ckpt.network()?;
    let xs = windows
        .iter()
        .map(|w| ckpt.prepare_input(&w.frame.channels))
        .collect::<Result<Vec<_>>>()?;
    let preds = forward(&net, &ckpt.params, &xs, false, 0)?;
    Ok(windows
        .iter()
        .zip(preds)
        .map(|(w, pred)| Prediction {
            window_id: w.window_id.clone(),
            terrain: w.meta.terrain,
            commanded_speed: w.meta.commanded_speed,
            gt: w.gt,
            pred,
        })
        .collect())
}

pub const PREDICTIONS_HEADER: [&str; 5] = ["window_id", "terrain", "commanded_speed", "gt", "pred"];

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    w.write_record(PREDICTIONS_HEADER)
        .map_err(|e| Error::csv(path, e))?;
    for p in preds {
        w.write_record([
            p.window_id.clone(),
            p.terrain.to_string(),
            format!("{}", p.commanded_speed),
            format!("{}", p.gt),
            format!("{}", p.pred),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let header = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != PREDICTIONS_HEADER {
        return Err(Error::Input(format!(
            "{}: unexpected header {header:?}",
            path.display()
        )));
    }
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            let num = |i: usize| {
                rec[i].parse::<f64>().map_err(|_| {
                    Error::Input(format!("{}: bad number {:?}", path.display(), &rec[i]))
                })
            };
            Ok(Prediction {
                window_id: rec[0].to_string(),
                terrain: rec[1].parse()?,
                commanded_speed: num(2)?,
                gt: num(3)?,
                pred: num(4)?,
            })
        })
        .collect()
}
