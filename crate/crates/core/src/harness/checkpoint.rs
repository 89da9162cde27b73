use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::Tensor;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::optim::AdamW;
use super::train::Trainer;
use crate::dtm::GapState;
use crate::error::{Error, Result};
use crate::model::DmafNet;
use crate::nn::{device, DTYPE};

pub const CHECKPOINT_FORMAT: &str = "dmaf-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

const WEIGHTS: &str = "weights.safetensors";
const OPTIMIZER: &str = "optimizer.safetensors";
const STATE: &str = "state.json";

#[derive(Serialize, Deserialize)]
struct State {
    format: String,
    version: u32,
    config: RunConfig,
    step: u64,
    epoch: usize,
    cursor: usize,
    order: Vec<usize>,
    train_idx: Vec<usize>,
    optimizer_steps: BTreeMap<String, u64>,
    gaps: GapState,
    rng: ChaCha8Rng,
    has_prev_grad: Vec<bool>,
}

fn save_tensors(map: &HashMap<String, Tensor>, path: &Path) -> Result<()> {
    candle_core::safetensors::save(map, path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

fn load_tensors(path: &Path) -> Result<HashMap<String, Tensor>> {
    candle_core::safetensors::load(path, &device())
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

impl Trainer {
    /// Write weights, optimizer moments, monitor state and RNG to `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_tensors(&self.net.params().snapshot(), &dir.join(WEIGHTS))?;
        let mut opt = HashMap::new();
        for (k, v) in &self.opt.first {
            opt.insert(format!("m.{k}"), v.clone());
        }
        for (k, v) in &self.opt.second {
            opt.insert(format!("v.{k}"), v.clone());
        }
        for (m, g) in self.prev_grad.iter().enumerate() {
            if let Some(g) = g {
                opt.insert(format!("prev_grad.{m}"), Tensor::new(g.as_slice(), &device())?);
            }
        }
        if opt.is_empty() {
            opt.insert("empty".into(), Tensor::zeros(1, DTYPE, &device())?);
        }
        save_tensors(&opt, &dir.join(OPTIMIZER))?;
        let state = State {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.cfg.clone(),
            step: self.step,
            epoch: self.epoch,
            cursor: self.cursor,
            order: self.order.clone(),
            train_idx: self.train_idx.clone(),
            optimizer_steps: self.opt.steps.clone(),
            gaps: self.gaps.clone(),
            rng: self.rng.clone(),
            has_prev_grad: self.prev_grad.iter().map(Option::is_some).collect(),
        };
        let path = dir.join(STATE);
        let text = serde_json::to_string_pretty(&state).map_err(|e| Error::json(&path, e))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Restore a trainer. With `expected`, the stored network configuration must match it.
    pub fn load(dir: &Path, expected: Option<&RunConfig>) -> Result<Self> {
        let path = dir.join(STATE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let state: State = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        if state.format != CHECKPOINT_FORMAT || state.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{} v{} is not a supported checkpoint (expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION})",
                state.format, state.version
            )));
        }
        if let Some(exp) = expected {
            if exp.net != state.config.net {
                return Err(Error::Checkpoint(format!(
                    "network configuration differs from the checkpoint in {}",
                    dir.display()
                )));
            }
        }
        let cfg = state.config;
        let net = DmafNet::with_alpha1(cfg.net.clone(), cfg.seed, cfg.alpha1_init)?;
        net.params().load(&load_tensors(&dir.join(WEIGHTS))?)?;
        let mut opt = AdamW::new(cfg.optimizer.clone());
        opt.steps = state.optimizer_steps;
        let mut prev_grad = vec![None; cfg.net.n_modalities];
        for (k, v) in load_tensors(&dir.join(OPTIMIZER))? {
            if let Some(name) = k.strip_prefix("m.") {
                opt.first.insert(name.to_string(), v);
            } else if let Some(name) = k.strip_prefix("v.") {
                opt.second.insert(name.to_string(), v);
            } else if let Some(m) = k.strip_prefix("prev_grad.") {
                let m: usize = m
                    .parse()
                    .map_err(|_| Error::Checkpoint(format!("bad tensor name {k}")))?;
                if m >= prev_grad.len() {
                    return Err(Error::Checkpoint(format!("bad tensor name {k}")));
                }
                prev_grad[m] = Some(v.to_vec1::<f64>()?);
            }
        }
        let restored: Vec<bool> = prev_grad.iter().map(Option::is_some).collect();
        if restored != state.has_prev_grad {
            return Err(Error::Checkpoint("gradient history incomplete".into()));
        }
        Ok(Self {
            cfg,
            net,
            opt,
            gaps: state.gaps,
            prev_grad,
            rng: state.rng,
            step: state.step,
            epoch: state.epoch,
            order: state.order,
            cursor: state.cursor,
            train_idx: state.train_idx,
        })
    }
}
