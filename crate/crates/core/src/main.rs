use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dmaf::datagen::{generate_corpus, read_corpus, write_corpus, MissingProtocol, SceneSpec};
use dmaf::harness::{
    check_corpus, combinations, evaluate, plot_report, plot_runlog, split_indices, RunConfig,
    RunLog, Trainer,
};
use dmaf::{Error, Result};

#[derive(Parser)]
#[command(name = "dmaf", version, about = "Incomplete multi-modal segmentation toolkit")]
struct Cli {
    /// Base directory for relative output paths.
    #[arg(long, env = "DMAF_OUTPUT_ROOT", global = true)]
    output_root: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    /// Every modality present.
    Pdt,
    /// Per-modality missing rates.
    Idt,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Three modalities missing at 0.2, 0.5, 0.8.
    BratsSml,
    /// Three modalities missing at 0.3, 0.5, 0.7.
    MyopsSml,
    /// Four modalities missing at 0.2, 0.4, 0.6, 0.8.
    BratsFour,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        n_samples: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 3)]
        modalities: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, value_enum, default_value_t = Mode::Pdt)]
        mode: Mode,
        /// Comma-separated per-modality missing rates, required for `idt`.
        #[arg(long, value_delimiter = ',')]
        rates: Option<Vec<f64>>,
        #[arg(long, value_enum, conflicts_with = "rates")]
        preset: Option<Preset>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a network.
    Train {
        /// JSON run configuration; unspecified fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        no_dmaf: bool,
        #[arg(long)]
        no_distill: bool,
        #[arg(long)]
        no_dtm: bool,
        /// Resume from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint on every modality combination.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Evaluate only the held-out split used during training.
        #[arg(long)]
        held_out: bool,
    },
    /// Render trajectories from a run log, or a table from an evaluation report.
    Plot {
        #[arg(long, required_unless_present = "report")]
        log: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn rooted(root: &Option<PathBuf>, p: &Path) -> PathBuf {
    match root {
        Some(r) if p.is_relative() => r.join(p),
        _ => p.to_path_buf(),
    }
}

fn run(cli: Cli) -> Result<()> {
    let root = cli.output_root;
    match cli.command {
        Command::GenData {
            out,
            n_samples,
            size,
            modalities,
            classes,
            mode,
            rates,
            preset,
            seed,
        } => {
            let protocol = match (preset, mode, rates) {
                (Some(Preset::BratsSml), ..) => MissingProtocol::brats_sml(seed),
                (Some(Preset::MyopsSml), ..) => MissingProtocol::myops_sml(seed),
                (Some(Preset::BratsFour), ..) => MissingProtocol::brats_four(seed),
                (None, Mode::Idt, Some(r)) => MissingProtocol::idt(r, seed)?,
                (None, Mode::Idt, None) => {
                    return Err(Error::InvalidProtocol("idt needs --rates".into()))
                }
                (None, Mode::Pdt, _) => MissingProtocol::pdt(modalities, seed),
            };
            let m = protocol.n_modalities();
            let scene = SceneSpec::new(size, size, classes, m)?;
            let corpus = generate_corpus(&scene, &protocol, n_samples, seed)?;
            let out = rooted(&root, &out);
            let manifest = write_corpus(&out, &corpus)?;
            println!(
                "wrote {} samples to {} (missing rates {:?})",
                manifest.n_samples,
                out.display(),
                manifest.realized_missing_rates
            );
        }
        Command::Train {
            config,
            corpus,
            out,
            epochs,
            seed,
            no_dmaf,
            no_distill,
            no_dtm,
            resume,
        } => {
            let mut cfg = match &config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            if let Some(c) = corpus {
                cfg.corpus = c;
            }
            if let Some(o) = out {
                cfg.output = o;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.ablation.use_dmaf &= !no_dmaf;
            cfg.ablation.use_distill &= !no_distill;
            cfg.ablation.use_dtm &= !no_dtm;
            cfg.output = rooted(&root, &cfg.output);
            cfg.validate()?;
            let corpus = read_corpus(&cfg.corpus)?;
            check_corpus(&cfg, &corpus.manifest)?;
            let out = cfg.output.clone();
            std::fs::create_dir_all(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            let ckpt = out.join("checkpoint");
            let log_path = out.join("runlog.csv");
            let (mut trainer, mut log) = if resume {
                let mut t = Trainer::load(&ckpt, Some(&cfg))?;
                t.cfg.epochs = cfg.epochs;
                let mut log = RunLog::read(&log_path)?;
                log.records.retain(|r| r.step <= t.step);
                (t, log)
            } else {
                (
                    Trainer::new(cfg.clone(), corpus.samples.len())?,
                    RunLog::new(cfg.net.n_modalities),
                )
            };
            cfg.save(&out.join("config.json"))?;
            let every = match cfg.checkpoint_every {
                0 => u64::MAX,
                k => k,
            };
            loop {
                let remaining = trainer.total_steps().saturating_sub(trainer.step);
                trainer.run_steps(&corpus, remaining.min(every), &mut log, None)?;
                trainer.save(&ckpt)?;
                log.write(&log_path)?;
                if trainer.step >= trainer.total_steps() {
                    break;
                }
            }
            println!(
                "trained {} steps ({}); log {}",
                trainer.step,
                cfg.ablation.label(),
                log_path.display()
            );
        }
        Command::Eval {
            checkpoint,
            corpus,
            out,
            held_out,
        } => {
            let trainer = Trainer::load(&checkpoint, None)?;
            let corpus = read_corpus(&corpus)?;
            check_corpus(&trainer.cfg, &corpus.manifest)?;
            let samples = if held_out {
                let (_, val) =
                    split_indices(corpus.samples.len(), trainer.cfg.seed, trainer.cfg.train_fraction);
                corpus.subset(&val).samples
            } else {
                corpus.samples
            };
            let combos = combinations(trainer.cfg.net.n_modalities);
            let report = evaluate(&trainer.net, &samples, &combos, trainer.cfg.ablation.use_dmaf)?;
            let out = rooted(&root, &out);
            report.write(&out)?;
            for row in &report.rows {
                println!(
                    "{}  dsc {:.4}  hd {}",
                    dmaf::harness::combination_label(&row.present),
                    row.dsc_mean,
                    row.hd_mean.map_or("-".into(), |h| format!("{h:.3}"))
                );
            }
        }
        Command::Plot { log, report, out } => {
            let out = rooted(&root, &out);
            if let Some(l) = log {
                for p in plot_runlog(&l, &out)? {
                    println!("{}", p.display());
                }
            }
            if let Some(r) = report {
                println!("{}", plot_report(&r, &out)?.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
