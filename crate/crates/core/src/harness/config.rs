use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::optim::AdamWConfig;
use crate::dtm::DtmConfig;
use crate::error::{Error, Result};
use crate::model::{NetConfig, ALPHA1_INIT};
use crate::objective::LossWeights;

/// Component switches; all eight combinations are valid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub use_dmaf: bool,
    pub use_distill: bool,
    pub use_dtm: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            use_dmaf: true,
            use_distill: true,
            use_dtm: true,
        }
    }
}

impl Ablation {
    pub fn none() -> Self {
        Self {
            use_dmaf: false,
            use_distill: false,
            use_dtm: false,
        }
    }

    pub fn all() -> [Ablation; 8] {
        let mut out = [Self::default(); 8];
        for (i, a) in out.iter_mut().enumerate() {
            a.use_dmaf = i & 1 != 0;
            a.use_distill = i & 2 != 0;
            a.use_dtm = i & 4 != 0;
        }
        out
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if !self.use_dmaf {
            parts.push("no_dmaf");
        }
        if !self.use_distill {
            parts.push("no_distill");
        }
        if !self.use_dtm {
            parts.push("no_dtm");
        }
        if parts.is_empty() {
            "full".into()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub output: PathBuf,
    pub net: NetConfig,
    pub optimizer: AdamWConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda: LossWeights,
    pub alpha1_init: f64,
    /// Prototype temperature per modality.
    pub tau: Vec<f64>,
    pub ablation: Ablation,
    pub dtm: DtmConfig,
    pub seed: u64,
    pub train_fraction: f64,
    /// Save a checkpoint every this many optimizer steps (0 = only at the end).
    pub checkpoint_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let net = NetConfig::desk();
        let tau = vec![1.0; net.n_modalities];
        Self {
            corpus: PathBuf::from("corpus"),
            output: PathBuf::from("run"),
            net,
            optimizer: AdamWConfig::default(),
            epochs: 300,
            batch_size: 1,
            lambda: LossWeights::default(),
            alpha1_init: ALPHA1_INIT,
            tau,
            ablation: Ablation::default(),
            dtm: DtmConfig::default(),
            seed: 0,
            train_fraction: 0.8,
            checkpoint_every: 0,
        }
    }
}

impl RunConfig {
    pub fn for_net(net: NetConfig) -> Self {
        let tau = vec![1.0; net.n_modalities];
        Self {
            net,
            tau,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        let err = |m: String| Err(Error::Config(m));
        if self.batch_size != 1 {
            return err(format!("batch size {} unsupported; only 1", self.batch_size));
        }
        if self.tau.len() != self.net.n_modalities {
            return err(format!(
                "{} temperatures for {} modalities",
                self.tau.len(),
                self.net.n_modalities
            ));
        }
        if let Some(t) = self.tau.iter().find(|&&t| !(t >= 1.0 && t.is_finite())) {
            return err(format!("prototype temperature {t} must be ≥ 1"));
        }
        if !(self.alpha1_init > 0.0 && self.alpha1_init < 1.0) {
            return err(format!("alpha1 init {} outside (0, 1)", self.alpha1_init));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return err(format!("train fraction {} outside (0, 1]", self.train_fraction));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2)) {
            return err("optimizer settings out of range".into());
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
