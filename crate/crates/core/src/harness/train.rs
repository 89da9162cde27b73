use std::collections::BTreeMap;
use std::path::Path;

use candle_core::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::optim::AdamW;
use super::runlog::{ModalityRecord, RunLog, StepRecord};
use crate::datagen::{Corpus, Manifest, ModalitySample};
use crate::distill::{
    covariance_loss, mode_pool, prototype_loss, prototype_term, prototypes, relation_loss,
    FeatureSource, RelationTerm,
};
use crate::dtm::{cosine, gradient_scale, GapState};
use crate::error::{Error, Result};
use crate::model::{DmafNet, ForwardOptions, ForwardOutput};
use crate::nn::{flatten_f64, scalar};
use crate::objective::{fuse_loss, seg_loss, total_loss, weighted_sum, SegTarget};

/// Deterministic train/validation split of `0..n`.
pub fn split_indices(n: usize, seed: u64, train_fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    idx.shuffle(&mut rng);
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1.min(n), n);
    let (mut train, mut val) = (idx[..n_train].to_vec(), idx[n_train..].to_vec());
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Loss tensors of one forward pass before any DTM weighting.
pub struct Losses {
    pub output: ForwardOutput,
    pub fuse: Tensor,
    /// Uni-modal segmentation loss per present modality.
    pub sep: BTreeMap<usize, Tensor>,
    pub rel: Option<Tensor>,
    pub proto: Option<Tensor>,
    /// Raw `(g_r, g_p)` per present modality.
    pub gaps: BTreeMap<usize, (f64, f64)>,
    pub alpha1: f64,
}

/// Forward pass and all loss components for one sample.
pub fn compute_losses(
    net: &DmafNet,
    sample: &ModalitySample,
    tau: &[f64],
    use_dmaf: bool,
    use_distill: bool,
) -> Result<Losses> {
    let cfg = net.config();
    let images = net.inputs(sample)?;
    let presence = &sample.presence;
    let output = net.forward(
        &images,
        presence,
        ForwardOptions {
            use_dmaf,
            uni_decoders: true,
        },
    )?;
    let (h, w) = cfg.image_size;
    let target = SegTarget::new(&sample.label, h, w, cfg.n_classes)?;
    let fuse = fuse_loss(&output.fused_logits, &target)?;
    let mut sep = BTreeMap::new();
    for (m, z) in output.uni_logits.iter().enumerate() {
        if let Some(z) = z {
            sep.insert(m, seg_loss(z, &target)?);
        }
    }
    let alpha1 = scalar(&net.relation_mix.alpha()?)?;
    if !use_distill {
        return Ok(Losses {
            output,
            fuse,
            sep,
            rel: None,
            proto: None,
            gaps: BTreeMap::new(),
            alpha1,
        });
    }
    let lb = cfg.n_levels - 1;
    let fused_b = &output.fused[lb];
    let contributions = output.contributions(lb)?;
    let factor = 1 << lb;
    let small = mode_pool(&sample.label, h, w, factor, cfg.n_classes)?;
    let fused_protos = prototypes(fused_b, &small, cfg.n_classes, true, FeatureSource::Fused)?;
    let mut rel_terms = Vec::new();
    let mut proto_terms = Vec::new();
    let mut gaps = BTreeMap::new();
    for m in (0..presence.len()).filter(|&m| presence[m]) {
        let uni_b = &output.uni_features[m][lb];
        let cov = covariance_loss(&net.projector, uni_b, fused_b)?;
        let attn = net.align.forward(uni_b, &contributions, presence, fused_b)?.loss;
        let loss = net.relation_mix.mix(&cov, &attn)?;
        let gap = scalar(&loss)?;
        rel_terms.push(RelationTerm {
            modality: m,
            cov,
            attn,
            loss,
            gap,
        });
        let uni_protos = prototypes(uni_b, &small, cfg.n_classes, true, FeatureSource::Modality(m))?;
        let term = prototype_term(&fused_protos, &uni_protos, m, tau[m])?;
        gaps.insert(m, (gap, term.gap));
        proto_terms.push(term);
    }
    Ok(Losses {
        output,
        fuse,
        sep,
        rel: Some(relation_loss(&rel_terms)?),
        proto: Some(prototype_loss(&proto_terms)?),
        gaps,
        alpha1,
    })
}

fn finite(component: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            component: component.to_string(),
        })
    }
}

/// Reject a corpus whose shape disagrees with the network.
pub fn check_corpus(cfg: &RunConfig, manifest: &Manifest) -> Result<()> {
    let n = &cfg.net;
    if manifest.n_modalities != n.n_modalities
        || manifest.n_classes != n.n_classes
        || (manifest.height, manifest.width) != n.image_size
    {
        return Err(Error::Config(format!(
            "corpus has M={} C={} {}×{}, config expects M={} C={} {}×{}",
            manifest.n_modalities,
            manifest.n_classes,
            manifest.height,
            manifest.width,
            n.n_modalities,
            n.n_classes,
            n.image_size.0,
            n.image_size.1
        )));
    }
    Ok(())
}

pub struct Trainer {
    pub cfg: RunConfig,
    pub net: DmafNet,
    pub opt: AdamW,
    pub gaps: GapState,
    /// Unscaled encoder gradient from each modality's previous step.
    pub prev_grad: Vec<Option<Vec<f64>>>,
    pub rng: ChaCha8Rng,
    pub step: u64,
    pub epoch: usize,
    pub order: Vec<usize>,
    pub cursor: usize,
    pub train_idx: Vec<usize>,
}

impl Trainer {
    pub fn new(cfg: RunConfig, n_samples: usize) -> Result<Self> {
        cfg.validate()?;
        let net = DmafNet::with_alpha1(cfg.net.clone(), cfg.seed, cfg.alpha1_init)?;
        let (train_idx, _) = split_indices(n_samples, cfg.seed, cfg.train_fraction);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        let m = cfg.net.n_modalities;
        Ok(Self {
            opt: AdamW::new(cfg.optimizer.clone()),
            gaps: GapState::new(m),
            prev_grad: vec![None; m],
            rng,
            step: 0,
            epoch: 0,
            order: Vec::new(),
            cursor: 0,
            train_idx,
            net,
            cfg,
        })
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.train_idx.len()
    }

    /// Index of the next training sample, reshuffling at epoch boundaries.
    fn next_index(&mut self) -> Result<usize> {
        if self.train_idx.is_empty() {
            return Err(Error::Config("empty training split".into()));
        }
        if self.cursor >= self.order.len() {
            if !self.order.is_empty() {
                self.epoch += 1;
            }
            self.order = self.train_idx.clone();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let i = self.order[self.cursor];
        self.cursor += 1;
        Ok(i)
    }

    /// One optimizer step on `sample`.
    pub fn train_step(&mut self, sample: &ModalitySample) -> Result<StepRecord> {
        let ab = self.cfg.ablation;
        let losses = compute_losses(&self.net, sample, &self.cfg.tau, ab.use_dmaf, ab.use_distill)?;
        let present: Vec<usize> = (0..sample.presence.len())
            .filter(|&m| sample.presence[m])
            .collect();
        let raw: BTreeMap<usize, (f64, f64)> = if ab.use_distill {
            losses.gaps.clone()
        } else {
            present.iter().map(|&m| (m, (1.0, 1.0))).collect()
        };
        let dtm = self.gaps.update(&raw, &self.cfg.dtm)?;
        let weights: BTreeMap<usize, f64> = if ab.use_dtm {
            dtm.weights.clone()
        } else {
            let u = 1.0 / present.len() as f64;
            present.iter().map(|&m| (m, u)).collect()
        };

        let fuse_v = finite("fusion loss", scalar(&losses.fuse)?)?;
        let mut sep_v = BTreeMap::new();
        for (&m, t) in &losses.sep {
            sep_v.insert(m, finite(&format!("separate loss of modality {m}"), scalar(t)?)?);
        }
        let sep = weighted_sum(
            &losses
                .sep
                .iter()
                .map(|(m, t)| (weights[m], t.clone()))
                .collect::<Vec<_>>(),
        )?;
        let zero = losses.fuse.zeros_like()?;
        let rel = losses.rel.clone().unwrap_or_else(|| zero.clone());
        let proto = losses.proto.clone().unwrap_or_else(|| zero.clone());
        let rel_v = finite("relation loss", scalar(&rel)?)?;
        let proto_v = finite("prototype loss", scalar(&proto)?)?;
        let total = total_loss(&self.cfg.lambda, &losses.fuse, &sep, &rel, &proto)?;
        let total_v = finite("total loss", scalar(&total)?)?;

        let grads = total.backward()?;
        let mut named: BTreeMap<String, Tensor> = BTreeMap::new();
        for (name, var) in self.net.params().iter() {
            if let Some(g) = grads.get(var.as_tensor()) {
                named.insert(name.clone(), g.clone());
            }
        }
        for m in 0..sample.presence.len() {
            if !sample.presence[m] {
                let prefix = DmafNet::encoder_prefix(m);
                named.retain(|k, _| !k.starts_with(&prefix));
            }
        }
        let mut gammas = BTreeMap::new();
        let mut sims = BTreeMap::new();
        for &m in &present {
            let prefix = DmafNet::encoder_prefix(m);
            let keys: Vec<String> = named.keys().filter(|k| k.starts_with(&prefix)).cloned().collect();
            let mut flat = Vec::new();
            for k in &keys {
                flat.extend(flatten_f64(&named[k])?);
            }
            let sim = self.prev_grad[m].as_ref().map_or(0.0, |p| cosine(&flat, p));
            let (gamma, damped) = if ab.use_dtm {
                (
                    gradient_scale(weights[&m], sim, &self.cfg.dtm),
                    sim < self.cfg.dtm.conflict_threshold,
                )
            } else {
                (1.0, false)
            };
            if gamma != 1.0 {
                for k in &keys {
                    let g = (&named[k] * gamma)?;
                    named.insert(k.clone(), g);
                }
            }
            self.prev_grad[m] = Some(flat);
            gammas.insert(m, (gamma, damped));
            sims.insert(m, sim);
        }
        self.opt.step(self.net.params(), &named)?;
        self.step += 1;

        let modalities = (0..sample.presence.len())
            .map(|m| {
                sample.presence[m].then(|| ModalityRecord {
                    sep: sep_v[&m],
                    relation_gap: raw[&m].0,
                    prototype_gap: raw[&m].1,
                    relation_ema: self.gaps.modalities[m].relation_ema.unwrap_or(0.0),
                    prototype_ema: self.gaps.modalities[m].prototype_ema.unwrap_or(0.0),
                    total_gap: dtm.total_gap[&m],
                    weight: weights[&m],
                    gamma: gammas[&m].0,
                    similarity: sims[&m],
                    damped: gammas[&m].1,
                    decay: dtm.decay[&m],
                })
            })
            .collect();
        Ok(StepRecord {
            step: self.step,
            epoch: self.epoch,
            sample_id: sample.sample_id.clone(),
            total: total_v,
            fuse: fuse_v,
            sep: scalar(&sep)?,
            rel: rel_v,
            proto: proto_v,
            alpha1: losses.alpha1,
            alpha2: dtm.alpha2,
            modalities,
        })
    }

    /// Run `n` steps over the training split, saving checkpoints as configured.
    pub fn run_steps(
        &mut self,
        corpus: &Corpus,
        n: u64,
        log: &mut RunLog,
        checkpoint_dir: Option<&Path>,
    ) -> Result<()> {
        for _ in 0..n {
            let i = self.next_index()?;
            let rec = self.train_step(&corpus.samples[i])?;
            log::debug!("step {} total {:.5}", rec.step, rec.total);
            log.push(rec);
            if let Some(dir) = checkpoint_dir {
                let every = self.cfg.checkpoint_every;
                if every > 0 && self.step % every == 0 {
                    self.save(dir)?;
                }
            }
        }
        Ok(())
    }

    pub fn total_steps(&self) -> u64 {
        (self.cfg.epochs * self.steps_per_epoch()) as u64
    }

    /// Continue until the configured number of epochs has been run.
    pub fn run_to_end(&mut self, corpus: &Corpus, log: &mut RunLog, checkpoint_dir: Option<&Path>) -> Result<()> {
        let remaining = self.total_steps().saturating_sub(self.step);
        self.run_steps(corpus, remaining, log, checkpoint_dir)
    }
}

/// Train on an in-memory corpus from scratch.
pub fn train_corpus(cfg: &RunConfig, corpus: &Corpus) -> Result<(Trainer, RunLog)> {
    check_corpus(cfg, &corpus.manifest)?;
    let mut trainer = Trainer::new(cfg.clone(), corpus.samples.len())?;
    let mut log = RunLog::new(cfg.net.n_modalities);
    trainer.run_to_end(corpus, &mut log, None)?;
    Ok((trainer, log))
}
