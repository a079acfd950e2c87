//! Command-line entry points. Every command validates its configuration
//! before touching the output directory, takes a lock file on it, and writes
//! the effective configuration next to its outputs.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::DType;
use clap::{Args, Parser, Subcommand};
use lookout_core::PolicyKind;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, LoadedModel};
use crate::config::{RunConfig, CONFIG_FILE};
use crate::dataset::{self, load_manifest, load_panorama, load_split, synth_class_names, synth_generate, Split};
use crate::error::{Error, Result};
use crate::harness::{self, comparison_table, curves_csv, EvalOptions, PolicyReport};
use crate::nets::{ClassificationMode, ExplorerModel, Profile};
use crate::trace;
use crate::trainer::{IterationMetrics, TrainModel, Trainer, METRICS_HEADER};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CURVES_FILE: &str = "curves.csv";
pub const REPORT_FILE: &str = "report.json";
pub const TABLE_FILE: &str = "table.txt";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const LOCK_FILE: &str = ".lock";

#[derive(Debug, Parser)]
#[command(name = "lookout", version, about = "Active exploration of 360° panoramas")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON run configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// full or micro.
    #[arg(long, global = true)]
    pub profile: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic labelled corpus (images, manifest, classes).
    Synth {
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train a model; writes checkpoints and a per-iteration metrics CSV.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Start from the shared blocks of a checkpoint (transfer learning).
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Compare glimpse policies on the test split.
    Eval {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// learned, random, middle-random, neighborhood or gt-oracle.
        #[arg(long = "policy")]
        policies: Vec<String>,
        #[arg(long)]
        glimpses: Option<usize>,
        #[arg(long = "eval-seeds")]
        eval_seeds: Option<usize>,
        /// Full-image classifier checkpoint to report alongside.
        #[arg(long)]
        upper_bound: Option<PathBuf>,
    },
    /// Dump one exploration step by step.
    Explore {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        glimpses: Option<usize>,
        #[arg(long, default_value = "learned")]
        policy: String,
    },
    /// Print the comparison table of saved evaluation reports.
    Report {
        /// Report files; defaults to the output directory's report.
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
    },
}

/// The effective configuration: file (or defaults) with flags applied.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.common.out {
        cfg.out = o.clone();
    }
    if let Some(p) = &cli.common.profile {
        cfg.profile = p.parse::<Profile>().map_err(Error::Config)?;
    }
    match &cli.command {
        Command::Synth { count } => {
            if let Some(c) = count {
                cfg.data.synth.count = *c;
            }
        }
        Command::Train {
            manifest,
            epochs,
            resume,
            init,
        } => {
            set(&mut cfg.data.manifest, manifest);
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
            set(&mut cfg.train.resume, resume);
            set(&mut cfg.train.init, init);
        }
        Command::Eval {
            manifest,
            checkpoint,
            policies,
            glimpses,
            eval_seeds,
            upper_bound,
        } => {
            set(&mut cfg.data.manifest, manifest);
            set(&mut cfg.eval.checkpoint, checkpoint);
            set(&mut cfg.eval.upper_bound, upper_bound);
            if !policies.is_empty() {
                cfg.eval.policies = policies.clone();
            }
            if let Some(g) = glimpses {
                cfg.eval.glimpses = *g;
            }
            if let Some(k) = eval_seeds {
                cfg.eval.seeds = *k;
            }
        }
        Command::Explore {
            checkpoint,
            image,
            glimpses,
            ..
        } => {
            set(&mut cfg.explore.checkpoint, checkpoint);
            set(&mut cfg.explore.image, image);
            if let Some(g) = glimpses {
                cfg.explore.glimpses = *g;
            }
        }
        Command::Report { .. } => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn set(slot: &mut Option<PathBuf>, value: &Option<PathBuf>) {
    if value.is_some() {
        slot.clone_from(value);
    }
}

fn required<'a>(value: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Config(format!("{what} is required")))
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} {} does not exist", path.display())))
    }
}

/// Exclusive ownership of an output directory for the life of a command.
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        let mut f = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| {
                if e.kind() == std::io::ErrorKind::AlreadyExists {
                    Error::Invalid(format!(
                        "{} is locked by another process ({})",
                        dir.display(),
                        path.display()
                    ))
                } else {
                    Error::io(&path, e)
                }
            })?;
        let _ = writeln!(f, "{}", std::process::id());
        Ok(Self { path })
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn begin(cfg: &RunConfig) -> Result<OutputLock> {
    let lock = OutputLock::acquire(&cfg.out)?;
    write_text(&cfg.out.join(CONFIG_FILE), &cfg.to_json())?;
    Ok(lock)
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Synth { .. } => cmd_synth(&cfg).map(|_| ()),
        Command::Train { .. } => cmd_train(&cfg),
        Command::Eval { .. } => cmd_eval(&cfg).map(|_| ()),
        Command::Explore { policy, .. } => cmd_explore(&cfg, policy).map(|_| ()),
        Command::Report { inputs } => cmd_report(&cfg, inputs),
    }
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<dataset::DatasetManifest> {
    let spec = cfg.synth_spec();
    let _lock = begin(cfg)?;
    let samples = synth_generate(&spec)?;
    let manifest = dataset::write_corpus(
        &cfg.out,
        &samples,
        &synth_class_names(spec.classes),
        cfg.data.test_fraction,
        cfg.seed,
    )?;
    eprintln!(
        "wrote {} panoramas ({} test) to {}",
        manifest.entries.len(),
        manifest.split(Split::Test).count(),
        cfg.out.display()
    );
    Ok(manifest)
}

fn checkpoint_bytes(trainer: &Trainer) -> Result<Vec<u8>> {
    let profile = trainer.config.profile.to_string();
    let (it, ep) = (trainer.iteration, trainer.epoch);
    match &trainer.model {
        TrainModel::Explorer(m) => checkpoint::encode(&checkpoint::explorer_header(m, &profile, it, ep), &m.store),
        TrainModel::UpperBound(m) => checkpoint::encode(&checkpoint::upper_bound_header(m, &profile, it, ep), &m.store),
    }
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let manifest_path = required(&cfg.data.manifest, "data.manifest (--manifest)")?;
    require_file(manifest_path, "manifest")?;
    if let Some(r) = &cfg.train.resume {
        require_file(r, "resume checkpoint")?;
    }
    if let Some(i) = &cfg.train.init {
        require_file(i, "init checkpoint")?;
    }
    let manifest = load_manifest(manifest_path)?;
    let tc = cfg.train_config();
    let train = load_split(&manifest, Split::Train, &tc.profile.geometry())?;
    if train.is_empty() {
        return Err(Error::Invalid(format!(
            "{} has no training entries",
            manifest_path.display()
        )));
    }
    let resumed = match &cfg.train.resume {
        None => None,
        Some(path) => {
            let (model, header) = checkpoint::load(path, DType::F32)?;
            if header.classification != tc.classification {
                return Err(Error::Config(format!(
                    "checkpoint was trained with classification {}, config says {}",
                    header.classification.name(),
                    tc.classification.name()
                )));
            }
            let model = match model {
                LoadedModel::Explorer(m) => TrainModel::Explorer(m),
                LoadedModel::UpperBound(m) => TrainModel::UpperBound(m),
            };
            Some((model, header.iteration, header.epoch))
        }
    };

    let source = match &cfg.train.init {
        None => None,
        Some(path) => Some(checkpoint::load(path, DType::F32)?.0),
    };

    let _lock = begin(cfg)?;
    let mut trainer = match (resumed, source) {
        (Some((model, iteration, epoch)), _) => Trainer::with_model(tc.clone(), model, iteration, epoch)?,
        (None, Some(LoadedModel::Explorer(m))) => Trainer::transfer(tc.clone(), &m.store)?,
        (None, Some(LoadedModel::UpperBound(m))) => Trainer::transfer(tc.clone(), &m.store)?,
        (None, None) => Trainer::new(tc.clone())?,
    };
    let ckpt_dir = cfg.out.join(CHECKPOINT_DIR);
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let metrics_path = cfg.out.join(METRICS_FILE);
    let mut metrics = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)
        .map_err(|e| Error::io(&metrics_path, e))?;
    let empty = metrics.metadata().map_err(|e| Error::io(&metrics_path, e))?.len() == 0;
    if empty {
        writeln!(metrics, "{METRICS_HEADER}").map_err(|e| Error::io(&metrics_path, e))?;
    }

    let every = tc.checkpoint_every;
    for _ in 0..tc.epochs {
        let mut sum = 0f64;
        let mut count = 0usize;
        let mut hook = |t: &Trainer, m: &IterationMetrics| -> Result<()> {
            writeln!(metrics, "{}", m.csv_row()).map_err(|e| Error::io(&metrics_path, e))?;
            sum += m.total;
            count += 1;
            if every > 0 && t.iteration % every == 0 {
                let p = ckpt_dir.join(format!("iter_{:06}.ckpt", t.iteration));
                checkpoint::write_file(&p, &checkpoint_bytes(t)?)?;
            }
            Ok(())
        };
        trainer.train_epoch(&train, &mut hook)?;
        eprintln!(
            "epoch {} done: iteration {}, mean loss {:.4}",
            trainer.epoch,
            trainer.iteration,
            sum / count.max(1) as f64
        );
    }
    metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
    checkpoint::write_file(&ckpt_dir.join(FINAL_CHECKPOINT), &checkpoint_bytes(&trainer)?)?;
    Ok(())
}

/// Everything `eval` writes to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub glimpses: usize,
    pub seeds: Vec<u64>,
    pub samples: usize,
    pub policies: Vec<PolicyReport>,
    pub upper_bound_accuracy: Option<f64>,
}

impl EvalReport {
    pub fn table(&self) -> String {
        let mut t = comparison_table(&self.policies);
        if let Some(a) = self.upper_bound_accuracy {
            t.push_str(&format!("full-image classifier accuracy: {a:.3}\n"));
        }
        t
    }
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    let manifest_path = required(&cfg.data.manifest, "data.manifest (--manifest)")?;
    require_file(manifest_path, "manifest")?;
    let policies = cfg.eval.policy_kinds()?;
    if policies.contains(&PolicyKind::Learned) && cfg.eval.checkpoint.is_none() {
        return Err(Error::Config(
            "the learned policy needs eval.checkpoint (--checkpoint)".into(),
        ));
    }
    for p in [&cfg.eval.checkpoint, &cfg.eval.upper_bound].into_iter().flatten() {
        require_file(p, "checkpoint")?;
    }
    let model = match &cfg.eval.checkpoint {
        Some(p) => checkpoint::load_explorer(p, DType::F32)?.0,
        None => ExplorerModel::new(
            cfg.profile.architecture(),
            ClassificationMode::Off,
            cfg.train.classes,
            DType::F32,
            cfg.seed,
        )?,
    };
    let upper = cfg
        .eval
        .upper_bound
        .as_ref()
        .map(|p| checkpoint::load_upper_bound(p, DType::F32))
        .transpose()?;
    let manifest = load_manifest(manifest_path)?;
    let test = load_split(&manifest, Split::Test, &model.arch.geometry())?;
    if test.is_empty() {
        return Err(Error::Invalid(format!(
            "{} has no test entries",
            manifest_path.display()
        )));
    }

    let _lock = begin(cfg)?;
    let opts = EvalOptions {
        glimpses: cfg.eval.glimpses,
        seeds: cfg.eval_seeds(),
        batch_size: cfg.eval.batch_size,
        ..EvalOptions::default()
    };
    let mut reports = Vec::with_capacity(policies.len());
    for p in policies {
        let r = harness::evaluate(&model, &test, p, &opts)?;
        eprintln!("{:<14} final RMSE {:.3}", p.name(), r.final_rmse());
        reports.push(r);
    }
    let upper_bound_accuracy = match &upper {
        Some((m, _)) => {
            let geom = m.arch.geometry();
            let full = if geom == model.arch.geometry() {
                test.clone()
            } else {
                load_split(&manifest, Split::Test, &geom)?
            };
            Some(harness::upper_bound_accuracy(m, &full, cfg.eval.batch_size)?)
        }
        None => None,
    };
    let report = EvalReport {
        glimpses: opts.glimpses,
        seeds: opts.seeds,
        samples: test.len(),
        policies: reports,
        upper_bound_accuracy,
    };
    write_text(&cfg.out.join(CURVES_FILE), &curves_csv(&report.policies))?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Invalid(e.to_string()))?;
    write_text(&cfg.out.join(REPORT_FILE), &json)?;
    let table = report.table();
    write_text(&cfg.out.join(TABLE_FILE), &table)?;
    print!("{table}");
    Ok(report)
}

pub fn cmd_explore(cfg: &RunConfig, policy: &str) -> Result<trace::ExplorationTrace> {
    let policy: PolicyKind = policy
        .parse()
        .map_err(|e: lookout_core::policy::UnknownPolicy| Error::Config(e.to_string()))?;
    let image = required(&cfg.explore.image, "explore.image (--image)")?;
    require_file(image, "image")?;
    if policy == PolicyKind::Learned && cfg.explore.checkpoint.is_none() {
        return Err(Error::Config(
            "the learned policy needs explore.checkpoint (--checkpoint)".into(),
        ));
    }
    let model = match &cfg.explore.checkpoint {
        Some(p) => {
            require_file(p, "checkpoint")?;
            checkpoint::load_explorer(p, DType::F32)?.0
        }
        None => ExplorerModel::new(
            cfg.profile.architecture(),
            ClassificationMode::Off,
            cfg.train.classes,
            DType::F32,
            cfg.seed,
        )?,
    };
    let geom = model.arch.geometry();
    let pano = load_panorama(image, geom.height(), geom.width())?;
    let _lock = begin(cfg)?;
    let name = image
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    trace::explore(&model, &pano, &name, cfg.explore.glimpses, policy, cfg.seed, &cfg.out)
}

pub fn cmd_report(cfg: &RunConfig, inputs: &[PathBuf]) -> Result<()> {
    let default = [cfg.out.join(REPORT_FILE)];
    let inputs = if inputs.is_empty() { &default[..] } else { inputs };
    for path in inputs {
        require_file(path, "report")?;
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report: EvalReport =
            serde_json::from_str(&text).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
        println!(
            "{} ({} samples × {} seeds, T = {})",
            path.display(),
            report.samples,
            report.seeds.len(),
            report.glimpses
        );
        print!("{}", report.table());
    }
    Ok(())
}

/// Process exit code of a failed command: 2 for configuration errors, 3 for
/// everything else.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        _ => 3,
    }
}
