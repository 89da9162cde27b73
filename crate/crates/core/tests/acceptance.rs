//! Acceptance checks. Each test writes one `criterion N: PASS|FAIL` line to stderr,
//! bypassing the test harness capture, then asserts.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use candle_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dmaf::datagen::{
    generate_corpus, sample_presence, Corpus, MissingProtocol, ModalitySample, SceneSpec,
};
use dmaf::distill::{
    covariance, covariance_loss, mode_pool, prototype_term, prototypes, FeatureSource,
};
use dmaf::dtm::{adaptive_decay, gradient_scale, inverse_gap_weights, DtmConfig, GapState};
use dmaf::harness::{
    combinations, compute_losses, evaluate, evaluate_uni, train_corpus, Ablation, MetricsReport,
    RunConfig, RunLog, Trainer,
};
use dmaf::model::{DmafNet, ForwardOptions, NetConfig};
use dmaf::nn::{device, flatten_f64, scalar};
use dmaf::objective::{fuse_loss, seg_loss, SegTarget};

fn report(criterion: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {criterion}: {verdict}  {detail}");
}

fn randn(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample::<f64, _>(rand_distr::StandardNormal)
}

fn random_presence(rng: &mut ChaCha8Rng, m: usize, need_absent: bool) -> Vec<bool> {
    loop {
        let p: Vec<bool> = (0..m).map(|_| rng.random_bool(0.5)).collect();
        let n = p.iter().filter(|&&x| x).count();
        if n > 0 && (!need_absent || n < m) {
            return p;
        }
    }
}

// ---------------------------------------------------------------------------
// 1. closed-form and brute-force oracles

fn oracle_sigmoid(x: f64) -> f64 {
    x.exp() / (1.0 + x.exp())
}

fn oracle_covariance(x: &[f64], c: usize, hw: usize) -> Vec<f64> {
    let mut mean = vec![0.0; c];
    for i in 0..c {
        for p in 0..hw {
            mean[i] += x[i * hw + p];
        }
        mean[i] /= hw as f64;
    }
    let mut out = vec![0.0; c * c];
    for i in 0..c {
        for j in 0..c {
            let mut s = 0.0;
            for p in 0..hw {
                s += (x[i * hw + p] - mean[i]) * (x[j * hw + p] - mean[j]);
            }
            out[i * c + j] = s / hw as f64;
        }
    }
    out
}

/// Straight-line replay of the monitor recurrences for one modality stream.
#[derive(Default, Clone)]
struct OracleModality {
    ema: Option<(f64, f64)>,
    last: Option<(f64, f64)>,
}

#[test]
fn criterion_1_equation_oracles() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = DtmConfig::default();
    let tol = 1e-9;
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut bump = |k: &'static str, v: f64| {
        let e = worst.entry(k).or_insert(0.0);
        *e = e.max(v);
    };

    for _ in 0..1000 {
        let c = rng.random_range(1..=6);
        let h = rng.random_range(1..=8);
        let w = rng.random_range(1..=8);
        let x: Vec<f64> = (0..c * h * w).map(|_| 3.0 * randn(&mut rng)).collect();
        let t = Tensor::from_vec(x.clone(), (1, c, h, w), &device()).unwrap();
        let got = flatten_f64(&covariance(&t).unwrap()).unwrap();
        let want = oracle_covariance(&x, c, h * w);
        let err = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        bump("covariance", err);
    }

    for _ in 0..1000 {
        let r: f64 = rng.random_range(0.0..5.0);
        let p: f64 = rng.random_range(0.0..5.0);
        let ratio = (r + cfg.eps) / (p + cfg.eps);
        let want = 0.9 * (1.0 - oracle_sigmoid(ratio));
        bump("alpha_decay", (adaptive_decay(r, p, &cfg) - want).abs());
    }

    for _ in 0..1000 {
        let n = rng.random_range(1..=5);
        let g: BTreeMap<usize, f64> = (0..n).map(|m| (m, rng.random_range(1e-3..10.0))).collect();
        let w = inverse_gap_weights(&g, cfg.eps);
        let harmonic: f64 = g.values().map(|v| 1.0 / (v + cfg.eps)).sum();
        for (m, v) in &g {
            bump("weights", (w[m] - (1.0 / (v + cfg.eps)) / harmonic).abs());
        }
    }

    for _ in 0..1000 {
        let w: f64 = rng.random_range(0.01..1.0);
        let sim: f64 = rng.random_range(-1.0..1.0);
        let mut want = 1.0 / w;
        if want > 10.0 {
            want = 10.0;
        }
        if want < 0.1 {
            want = 0.1;
        }
        if sim < -0.5 {
            want *= 0.7;
        }
        bump("gamma", (gradient_scale(w, sim, &cfg) - want).abs());
    }

    // EMA (with adaptive decay), running means, α₂, total gap and weights over
    // random sequences with random presence.
    for _ in 0..1000 {
        let m = rng.random_range(1..=4);
        let steps = rng.random_range(1..=12);
        let mut state = GapState::new(m);
        let mut oracle = vec![OracleModality::default(); m];
        let mut means: Option<(f64, f64)> = None;
        for _ in 0..steps {
            let present = random_presence(&mut rng, m, false);
            let raw: BTreeMap<usize, (f64, f64)> = (0..m)
                .filter(|&i| present[i])
                .map(|i| (i, (rng.random_range(0.0..3.0), rng.random_range(0.0..2.0))))
                .collect();
            let got = state.update(&raw, &cfg).unwrap();
            let mut totals = BTreeMap::new();
            let n = raw.len() as f64;
            let sr: f64 = raw.values().map(|v| v.0).sum::<f64>() / n;
            let sp: f64 = raw.values().map(|v| v.1).sum::<f64>() / n;
            means = Some(match means {
                None => (sr, sp),
                Some((a, b)) => (0.99 * a + 0.01 * sr, 0.99 * b + 0.01 * sp),
            });
            let (gr, gp) = means.unwrap();
            let a2 = (gr + cfg.eps) / (gr + gp + 2.0 * cfg.eps);
            bump("alpha2", (got.alpha2 - a2).abs());
            for (&i, &(r, p)) in &raw {
                let o = &mut oracle[i];
                let (pr, pp) = o.last.unwrap_or((r, p));
                let d = 0.9 / (1.0 + ((pr + cfg.eps) / (pp + cfg.eps)).exp());
                bump("alpha_decay", (got.decay[&i] - d).abs());
                o.ema = Some(match o.ema {
                    None => (r, p),
                    Some((er, ep)) => (d * er + (1.0 - d) * r, d * ep + (1.0 - d) * p),
                });
                o.last = Some((r, p));
                let (er, ep) = o.ema.unwrap();
                bump("ema", (state.modalities[i].relation_ema.unwrap() - er).abs());
                bump("ema", (state.modalities[i].prototype_ema.unwrap() - ep).abs());
                let total = a2 * er + (1.0 - a2) * ep;
                bump("total_gap", (got.total_gap[&i] - total).abs());
                totals.insert(i, total);
            }
            let inv: f64 = totals.values().map(|g| 1.0 / (g + cfg.eps)).sum();
            for (i, g) in &totals {
                bump("weights", (got.weights[i] - 1.0 / (g + cfg.eps) / inv).abs());
            }
        }
    }

    let pass = worst.values().all(|&e| e <= tol);
    let detail = worst
        .iter()
        .map(|(k, v)| format!("{k}={v:.1e}"))
        .collect::<Vec<_>>()
        .join(" ");
    report(
        1,
        pass,
        &format!("max abs error {detail} (tol {tol:e}, 1000 cases each, {:.1}s)", start.elapsed().as_secs_f64()),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 2 / 3. masking and fusion normalisation

fn desk_corpus(n: usize, protocol: MissingProtocol, seed: u64) -> Corpus {
    let net = NetConfig::desk();
    let scene = SceneSpec::new(net.image_size.0, net.image_size.1, net.n_classes, net.n_modalities).unwrap();
    generate_corpus(&scene, &protocol, n, seed).unwrap()
}

fn perturbed(sample: &ModalitySample, rng: &mut ChaCha8Rng) -> ModalitySample {
    let mut out = sample.clone();
    for (m, img) in out.images.iter_mut().enumerate() {
        if !sample.presence[m] {
            img.iter_mut().for_each(|v| *v = (5.0 * randn(rng)) as f32);
        }
    }
    out
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    scalar(&a.sub(b).unwrap().abs().unwrap().max_all().unwrap()).unwrap()
}

#[test]
fn criterion_2_masking_invariance() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let corpus = desk_corpus(10, MissingProtocol::pdt(3, 0), 2);
    let mut worst = 0.0f64;
    for case in 0..10 {
        let net = DmafNet::new(NetConfig::desk(), 100 + case).unwrap();
        let presence = random_presence(&mut rng, 3, true);
        let base = corpus.samples[case as usize].restricted(&presence);
        let noisy = perturbed(&base, &mut rng);
        let use_dmaf = case % 2 == 0 || case == 9;
        let a = compute_losses(&net, &base, &[1.0; 3], use_dmaf, true).unwrap();
        let b = compute_losses(&net, &noisy, &[1.0; 3], use_dmaf, true).unwrap();
        for (x, y) in a.output.fused_logits.iter().zip(&b.output.fused_logits) {
            worst = worst.max(max_abs_diff(x, y));
        }
        let mut pairs = vec![(&a.fuse, &b.fuse)];
        pairs.extend(a.sep.keys().map(|m| (&a.sep[m], &b.sep[m])));
        pairs.push((a.rel.as_ref().unwrap(), b.rel.as_ref().unwrap()));
        pairs.push((a.proto.as_ref().unwrap(), b.proto.as_ref().unwrap()));
        for (x, y) in pairs {
            worst = worst.max(max_abs_diff(x, y));
        }
        for (m, g) in &a.gaps {
            worst = worst.max((g.0 - b.gaps[m].0).abs()).max((g.1 - b.gaps[m].1).abs());
        }
    }
    let pass = worst < 1e-5;
    report(
        2,
        pass,
        &format!("max-norm change {worst:.2e} over 10 configurations (tol 1e-5, {:.1}s)", start.elapsed().as_secs_f64()),
    );
    assert!(pass);
}

#[test]
fn criterion_3_fusion_normalisation() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let corpus = desk_corpus(20, MissingProtocol::pdt(3, 0), 3);
    let mut worst_sum = 0.0f64;
    let mut worst_absent = 0.0f64;
    let nets: Vec<DmafNet> = (0..5).map(|i| DmafNet::new(NetConfig::desk(), 300 + i).unwrap()).collect();
    for pass_idx in 0..100 {
        let net = &nets[pass_idx / 20];
        let presence = random_presence(&mut rng, 3, false);
        let sample = perturbed(&corpus.samples[pass_idx % 20].restricted(&presence), &mut rng);
        let out = net
            .forward(
                &net.inputs(&sample).unwrap(),
                &presence,
                ForwardOptions {
                    use_dmaf: true,
                    uni_decoders: false,
                },
            )
            .unwrap();
        for w in &out.weights {
            for s in flatten_f64(&w.sum(0).unwrap()).unwrap() {
                worst_sum = worst_sum.max((s - 1.0).abs());
            }
            for (m, &p) in presence.iter().enumerate() {
                if !p {
                    let row = flatten_f64(&w.narrow(0, m, 1).unwrap()).unwrap();
                    worst_absent = row.iter().fold(worst_absent, |a, v| a.max(v.abs()));
                }
            }
        }
    }
    let pass = worst_sum <= 1e-6 && worst_absent == 0.0;
    report(
        3,
        pass,
        &format!(
            "max |Σa−1| {worst_sum:.2e}, max absent weight {worst_absent:e} over 100 passes ({:.1}s)",
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 4. gradients against central differences

/// Fixed teacher quantities for the distillation losses.
struct Teacher {
    fused: Tensor,
    contributions: Vec<Tensor>,
    protos: dmaf::distill::PrototypeSet,
    small: Vec<u8>,
}

fn teacher(net: &DmafNet, sample: &ModalitySample) -> Teacher {
    let cfg = net.config();
    let out = net
        .forward(&net.inputs(sample).unwrap(), &sample.presence, ForwardOptions::default())
        .unwrap();
    let lb = cfg.n_levels - 1;
    let (h, w) = cfg.image_size;
    let small = mode_pool(&sample.label, h, w, 1 << lb, cfg.n_classes).unwrap();
    let fused = out.fused[lb].detach();
    let protos = prototypes(&fused, &small, cfg.n_classes, true, FeatureSource::Fused).unwrap();
    Teacher {
        contributions: out.contributions(lb).unwrap().iter().map(|t| t.detach()).collect(),
        fused,
        protos,
        small,
    }
}

/// Student-side relation and prototype losses against a frozen teacher.
fn student_losses(net: &DmafNet, sample: &ModalitySample, t: &Teacher) -> (Tensor, Tensor) {
    let cfg = net.config();
    let lb = cfg.n_levels - 1;
    let out = net
        .forward(&net.inputs(sample).unwrap(), &sample.presence, ForwardOptions::default())
        .unwrap();
    let mut rel = Vec::new();
    let mut proto = Vec::new();
    for m in (0..cfg.n_modalities).filter(|&m| sample.presence[m]) {
        let uni = &out.uni_features[m][lb];
        let cov = covariance_loss(&net.projector, uni, &t.fused).unwrap();
        let attn = net.align.forward(uni, &t.contributions, &sample.presence, &t.fused).unwrap().loss;
        rel.push(net.relation_mix.mix(&cov, &attn).unwrap());
        let up = prototypes(uni, &t.small, cfg.n_classes, true, FeatureSource::Modality(m)).unwrap();
        proto.push(prototype_term(&t.protos, &up, m, 1.0).unwrap().loss);
    }
    (
        Tensor::stack(&rel, 0).unwrap().mean(0).unwrap(),
        Tensor::stack(&proto, 0).unwrap().mean(0).unwrap(),
    )
}

#[test]
fn criterion_4_gradient_checks() {
    let start = Instant::now();
    let cfg = NetConfig::new(3, 3, 2, 4, (16, 16)).with_token_grid((4, 4));
    let scene = SceneSpec::new(16, 16, 3, 3).unwrap();
    let corpus = generate_corpus(&scene, &MissingProtocol::pdt(3, 0), 2, 4).unwrap();
    let sample = corpus.samples[0].restricted(&[true, false, true]);
    let net = DmafNet::new(cfg.clone(), 4).unwrap();
    let target = SegTarget::new(&sample.label, 16, 16, 3).unwrap();
    let t = teacher(&net, &sample);

    let fuse_fn = |net: &DmafNet| -> Tensor {
        let out = net
            .forward(&net.inputs(&sample).unwrap(), &sample.presence, ForwardOptions::default())
            .unwrap();
        fuse_loss(&out.fused_logits, &target).unwrap()
    };
    let sep_fn = |net: &DmafNet| -> Tensor {
        let out = net
            .forward(&net.inputs(&sample).unwrap(), &sample.presence, ForwardOptions::default())
            .unwrap();
        let terms: Vec<Tensor> = out
            .uni_logits
            .iter()
            .flatten()
            .map(|z| seg_loss(z, &target).unwrap())
            .collect();
        Tensor::stack(&terms, 0).unwrap().mean(0).unwrap()
    };
    let rel_fn = |net: &DmafNet| student_losses(net, &sample, &t).0;
    let proto_fn = |net: &DmafNet| student_losses(net, &sample, &t).1;

    // the frozen-teacher losses must coincide with the training-time ones
    let full = compute_losses(&net, &sample, &[1.0; 3], true, true).unwrap();
    let consistency = (scalar(&rel_fn(&net)).unwrap() - scalar(full.rel.as_ref().unwrap()).unwrap())
        .abs()
        .max((scalar(&proto_fn(&net)).unwrap() - scalar(full.proto.as_ref().unwrap()).unwrap()).abs());

    let losses: [(&str, &dyn Fn(&DmafNet) -> Tensor); 4] = [
        ("fuse", &fuse_fn),
        ("sep", &sep_fn),
        ("rel", &rel_fn),
        ("proto", &proto_fn),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = 1e-5;
    let mut worst = BTreeMap::new();
    let mut checked = 0;
    for (name, f) in losses {
        let loss = f(&net);
        let grads = loss.backward().unwrap();
        let mut candidates: Vec<(String, Vec<f64>)> = net
            .params()
            .iter()
            .filter_map(|(n, v)| grads.get(v.as_tensor()).map(|g| (n.clone(), flatten_f64(g).unwrap())))
            .filter(|(_, g)| g.iter().any(|x| x.abs() > 1e-4))
            .collect();
        candidates.sort_by(|a, b| a.0.cmp(&b.0));
        assert!(!candidates.is_empty(), "{name}: no parameter receives a gradient");
        let mut err = 0.0f64;
        for _ in 0..12 {
            let (pname, g) = &candidates[rng.random_range(0..candidates.len())];
            let idx = loop {
                let i = rng.random_range(0..g.len());
                if g[i].abs() > 1e-4 {
                    break i;
                }
            };
            let var = net.params().get(pname).unwrap();
            let orig = var.as_tensor().copy().unwrap();
            let mut vals = flatten_f64(&orig).unwrap();
            let shape = orig.shape().clone();
            let mut eval_at = |delta: f64| {
                vals[idx] += delta;
                var.set(&Tensor::from_vec(vals.clone(), shape.clone(), &device()).unwrap()).unwrap();
                vals[idx] -= delta;
                scalar(&f(&net)).unwrap()
            };
            let numeric = (eval_at(h) - eval_at(-h)) / (2.0 * h);
            var.set(&orig).unwrap();
            let rel = (g[idx] - numeric).abs() / g[idx].abs().max(numeric.abs());
            err = err.max(rel);
            checked += 1;
        }
        worst.insert(name, err);
    }
    let pass = worst.values().all(|&e| e < 1e-4) && consistency < 1e-12;
    let detail = worst
        .iter()
        .map(|(k, v)| format!("{k}={v:.1e}"))
        .collect::<Vec<_>>()
        .join(" ");
    report(
        4,
        pass,
        &format!(
            "max relative error {detail} over {checked} entries (tol 1e-4), teacher consistency {consistency:.1e} ({:.1}s)",
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 5. overfitting a tiny corpus

#[test]
fn criterion_5_overfit() {
    let start = Instant::now();
    let corpus = desk_corpus(8, MissingProtocol::pdt(3, 0), 5);
    let mut cfg = RunConfig::for_net(NetConfig::desk());
    cfg.epochs = 200;
    cfg.train_fraction = 1.0;
    cfg.seed = 5;
    let mut trainer = Trainer::new(cfg, corpus.samples.len()).unwrap();
    let mut log = RunLog::new(3);
    let full = vec![vec![true; 3]];
    let mut best = (0, 0.0);
    for block in 1..=20 {
        trainer.run_steps(&corpus, 10 * 8, &mut log, None).unwrap();
        let dsc = evaluate(&trainer.net, &corpus.samples, &full, true).unwrap().rows[0].dsc_mean;
        best = (block * 10, dsc);
        if dsc > 0.95 {
            break;
        }
    }
    let pass = best.1 > 0.95;
    report(
        5,
        pass,
        &format!(
            "training-set fused macro-DSC {:.4} after {} epochs (need > 0.95 within 200, {:.0}s)",
            best.1,
            best.0,
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 6 / 7 / 9. trained comparisons on the imbalanced corpus

const STUDY_SIZE: usize = 32;
const STUDY_EPOCHS: usize = 100;
const STUDY_SEEDS: [u64; 3] = [0, 1, 2];

fn study_net() -> NetConfig {
    NetConfig::new(3, 3, 3, 4, (STUDY_SIZE, STUDY_SIZE)).with_token_grid((4, 4))
}

fn study_scene() -> SceneSpec {
    SceneSpec::new(STUDY_SIZE, STUDY_SIZE, 3, 3).unwrap()
}

struct RunResult {
    uni: Vec<f64>,
    report: MetricsReport,
}

impl RunResult {
    /// Mean fused macro-DSC over every modality subset.
    fn fused(&self) -> f64 {
        self.report.rows.iter().map(|r| r.dsc_mean).sum::<f64>() / self.report.rows.len() as f64
    }
}

struct Study {
    runs: BTreeMap<(String, u64), RunResult>,
    seconds: f64,
}

fn study_configs() -> Vec<(&'static str, Ablation)> {
    let full = Ablation::default();
    vec![
        ("full", full),
        ("no_dtm", Ablation { use_dtm: false, ..full }),
        ("no_dmaf", Ablation { use_dmaf: false, ..full }),
        ("no_distill", Ablation { use_distill: false, ..full }),
    ]
}

fn study() -> &'static Study {
    static STUDY: OnceLock<Study> = OnceLock::new();
    STUDY.get_or_init(|| {
        let start = Instant::now();
        let scene = study_scene();
        let train = generate_corpus(&scene, &MissingProtocol::brats_sml(0), 64, 0).unwrap();
        let test = generate_corpus(&scene, &MissingProtocol::pdt(3, 0), 32, 1000).unwrap();
        let combos = combinations(3);
        let mut runs = BTreeMap::new();
        for (name, ablation) in study_configs() {
            for seed in STUDY_SEEDS {
                let mut cfg = RunConfig::for_net(study_net());
                cfg.epochs = STUDY_EPOCHS;
                cfg.seed = seed;
                cfg.ablation = ablation;
                let (trainer, _) = train_corpus(&cfg, &train).unwrap();
                let uni = (0..3).map(|m| evaluate_uni(&trainer.net, &test.samples, m).unwrap()).collect();
                let report = evaluate(&trainer.net, &test.samples, &combos, ablation.use_dmaf).unwrap();
                runs.insert((name.to_string(), seed), RunResult { uni, report });
            }
        }
        Study {
            runs,
            seconds: start.elapsed().as_secs_f64(),
        }
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn study_median(name: &str, f: impl Fn(&RunResult) -> f64) -> (f64, Vec<f64>) {
    let s = study();
    let vals: Vec<f64> = STUDY_SEEDS.iter().map(|&seed| f(&s.runs[&(name.to_string(), seed)])).collect();
    (median(vals.clone()), vals)
}

#[test]
fn criterion_6_rebalancing() {
    let weakest = 2;
    let (on, on_all) = study_median("full", |r| r.uni[weakest]);
    let (off, off_all) = study_median("no_dtm", |r| r.uni[weakest]);
    let gain = 100.0 * (on - off);
    let pass = gain >= 2.0;
    report(
        6,
        pass,
        &format!(
            "modality {weakest} uni-modal macro-DSC median {:.2} with monitor vs {:.2} without (gain {gain:+.2} points, need ≥ 2; per seed {:.3?} vs {:.3?}; study {:.0}s)",
            100.0 * on,
            100.0 * off,
            on_all,
            off_all,
            study().seconds
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_ablation() {
    let (full, _) = study_median("full", RunResult::fused);
    let mut pass = true;
    let mut parts = vec![format!("full {:.2}", 100.0 * full)];
    for name in ["no_dmaf", "no_distill", "no_dtm"] {
        let (v, _) = study_median(name, RunResult::fused);
        let diff = 100.0 * (full - v);
        let verdict = if diff >= 0.0 {
            "ok"
        } else if diff >= -0.5 {
            "tie"
        } else {
            pass = false;
            "worse"
        };
        parts.push(format!("{name} {:.2} ({verdict} {diff:+.2})", 100.0 * v));
    }
    report(7, pass, &format!("median fused macro-DSC over all subsets: {}", parts.join(", ")));
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 8. missing-rate presets

#[test]
fn criterion_8_protocol_fidelity() {
    let presets: [(&str, fn(u64) -> MissingProtocol); 3] = [
        ("brats_sml", MissingProtocol::brats_sml),
        ("myops_sml", MissingProtocol::myops_sml),
        ("brats_four", MissingProtocol::brats_four),
    ];
    let mut failures = Vec::new();
    let mut checked = 0;
    for (name, make) in presets {
        for seed in 0..100u64 {
            for n in [10usize, 37, 64, 100] {
                let p = make(seed);
                let m = p.n_modalities();
                let pm = sample_presence(&p, n, m).unwrap();
                for (col, &rate) in p.target_rates.iter().enumerate() {
                    let missing = (0..n).filter(|&r| !pm.get(r, col)).count();
                    let want = (rate * n as f64 + 0.5).floor() as usize;
                    if missing != want {
                        failures.push(format!("{name} seed {seed} N={n} column {col}: {missing} ≠ {want}"));
                    }
                }
                if (0..n).any(|r| (0..m).all(|c| !pm.get(r, c))) {
                    failures.push(format!("{name} seed {seed} N={n}: all-absent row"));
                }
                checked += 1;
            }
        }
    }
    let pass = failures.is_empty();
    report(
        8,
        pass,
        &format!("{checked} presence matrices (3 presets × 100 seeds × 4 sizes), {} violations {:?}", failures.len(), failures.iter().take(3).collect::<Vec<_>>()),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 9. combination report

#[test]
fn criterion_9_combination_report() {
    let dir = tempfile::tempdir().unwrap();
    let s = study();
    let r = &s.runs[&("full".to_string(), 0)].report;
    r.write(dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("combinations.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let header_ok = lines[0] == "m0,m1,m2,dsc_c1,dsc_c2,dsc_mean,hd_c1,hd_c2,hd_mean,hd_undefined_c1,hd_undefined_c2,n_samples";
    let rows_ok = lines.len() - 1 == 7 && r.rows.len() == 7;

    // four modalities give fifteen rows
    let cfg4 = NetConfig::new(4, 3, 2, 4, (16, 16)).with_token_grid((4, 4));
    let scene4 = SceneSpec::new(16, 16, 3, 4).unwrap();
    let c4 = generate_corpus(&scene4, &MissingProtocol::brats_four(0), 6, 0).unwrap();
    let r4 = evaluate(&DmafNet::new(cfg4, 0).unwrap(), &c4.samples, &combinations(4), true).unwrap();
    let rows4_ok = r4.rows.len() == 15;

    let all = r.row(&[true; 3]).unwrap().dsc_mean;
    let mut singles = Vec::new();
    for m in 0..3 {
        let p: Vec<bool> = (0..3).map(|i| i == m).collect();
        singles.push(r.row(&p).unwrap().dsc_mean);
    }
    let dominance = singles.iter().all(|&v| all >= v);
    let pass = header_ok && rows_ok && rows4_ok && dominance;
    // other seeds, for information only
    let others: Vec<String> = STUDY_SEEDS[1..]
        .iter()
        .map(|&seed| {
            let r = &s.runs[&("full".to_string(), seed)].report;
            let best = (0..3)
                .map(|m| r.row(&(0..3).map(|i| i == m).collect::<Vec<_>>()).unwrap().dsc_mean)
                .fold(0.0, f64::max);
            format!("seed {seed}: {:.4} vs {best:.4}", r.row(&[true; 3]).unwrap().dsc_mean)
        })
        .collect();
    report(
        9,
        pass,
        &format!(
            "rows M=3: {} M=4: {}, header {}, all-modality macro-DSC {:.4} vs singles {:.4?} (seed 0; {})",
            r.rows.len(),
            r4.rows.len(),
            if header_ok { "ok" } else { "mismatch" },
            all,
            singles,
            others.join(", ")
        ),
    );
    assert!(pass);
}
