//! Subcommand implementations.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use tfa_core::attention::{AttentionMaps, TfaVariant};
use tfa_core::audio::{read_wav, write_wav, Waveform};
use tfa_core::data::TargetKind;
use tfa_core::masks::{apply_mask, enhance_with_mask, oracle_mask, Mask, MaskKind};
use tfa_core::metrics::{evaluate, test_set, utterance_csv, EvalReport, System, TestItem};
use tfa_core::restcn::{count_params, EnhancementModel};
use tfa_core::stft::{istft, magnitude, stft};
use tfa_core::train::{history_csv, train_loop, TrainOutcome};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::gradcheck::{format_table, run_suite};

#[derive(Debug, Parser)]
#[command(name = "tfa", version, about = "Time-frequency attention speech enhancement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and write its history and checkpoints.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory (created if missing).
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Enhance a 16 kHz mono WAV file.
    Enhance(EnhanceArgs),
    /// Score noisy, oracle and (optionally) model output on the frozen test set.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Trained checkpoint; its directory's effective_config.toml is used unless --config is given.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also write per-utterance scores.
        #[arg(long)]
        per_utterance: bool,
    },
    /// Train the off, TA, FA and TFA variants on identical data and compare them.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Finite-difference check of every layer and the toy network.
    Gradcheck {
        /// Random instantiations per case.
        #[arg(long, default_value_t = 20)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Adds a case with a deliberately severed gradient.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

#[derive(Debug, Default, Args)]
pub struct ConfigArgs {
    /// Flat TOML file of config keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides one key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// irm or psm.
    #[arg(long)]
    pub target: Option<TargetKind>,
    /// off, ta, fa or tfa.
    #[arg(long)]
    pub variant: Option<TfaVariant>,
}

impl ConfigArgs {
    /// Defaults, then the file (or `fallback` when no file is named), then
    /// `--set` pairs, then the dedicated flags.
    pub fn resolve(&self, fallback: Option<&Path>) -> CliResult<RunConfig> {
        let mut cfg = match (&self.config, fallback) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(path)) if path.exists() => RunConfig::load(path)?,
            _ => RunConfig::default(),
        };
        for pair in &self.set {
            cfg.set_pair(pair)?;
        }
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        if let Some(target) = self.target {
            cfg.train.target = target;
        }
        if let Some(variant) = self.variant {
            cfg.model.variant = variant;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    /// Noisy input WAV.
    pub input: PathBuf,
    /// Enhanced output WAV.
    pub output: PathBuf,
    #[arg(long, required_unless_present = "oracle")]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Write one attention CSV per block.
    #[arg(long)]
    pub dump_attention: bool,
    /// Directory for attention dumps (defaults to the output file's directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Apply the ground-truth mask instead of the model (requires --clean).
    #[arg(long, requires = "clean")]
    pub oracle: Option<TargetKind>,
    /// Clean reference for --oracle.
    #[arg(long)]
    pub clean: Option<PathBuf>,
}

fn write(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn config_beside(checkpoint: &Path) -> PathBuf {
    checkpoint
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join("effective_config.toml")
}

fn load_model(cfg: &RunConfig, checkpoint: &Path) -> CliResult<EnhancementModel> {
    if !checkpoint.exists() {
        return Err(CliError::Data(format!(
            "checkpoint {} does not exist",
            checkpoint.display()
        )));
    }
    EnhancementModel::load(cfg.model, checkpoint).map_err(|e| CliError::Data(format!("{}: {e}", checkpoint.display())))
}

/// Runs `argv` and returns the process exit code.
pub fn run(argv: impl IntoIterator<Item = impl Into<OsString> + Clone>) -> u8 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Train { config, out } => cmd_train(&config.resolve(None)?, &out).map(|_| ()),
        Command::Enhance(args) => cmd_enhance(&args),
        Command::Evaluate {
            config,
            checkpoint,
            out,
            per_utterance,
        } => {
            let fallback = checkpoint.as_deref().map(config_beside);
            let cfg = config.resolve(fallback.as_deref())?;
            cmd_evaluate(&cfg, checkpoint.as_deref(), &out, per_utterance)
        }
        Command::Ablate { config, out } => {
            if config.variant.is_some() {
                return Err(CliError::Usage("ablate trains every variant; drop --variant".into()));
            }
            cmd_ablate(&config.resolve(None)?, &out)
        }
        Command::Gradcheck {
            draws,
            seed,
            inject_fault,
        } => cmd_gradcheck(draws, seed, inject_fault),
    }
}

/// Trains into `out`: history, both checkpoints, batch digests and the effective config.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> CliResult<TrainOutcome> {
    create_dir(out)?;
    write(&out.join("effective_config.toml"), &cfg.to_toml())?;
    let label = cfg.model.variant;
    let epochs = cfg.train.epochs;
    let outcome = train_loop(&cfg.model, &cfg.train, |r| {
        eprintln!(
            "[{label}] epoch {}/{epochs}  train_mse {:.6}  val_mse {:.6}",
            r.epoch, r.train_mse, r.val_mse
        );
    })?;
    write(&out.join("history.csv"), &history_csv(&outcome.history))?;
    let mut digests = format!("epoch,digest\nvalidation,{}\n", outcome.validation_digest);
    for (i, d) in outcome.epoch_digests.iter().enumerate() {
        let _ = writeln!(digests, "{},{d}", i + 1);
    }
    write(&out.join("batch_digests.csv"), &digests)?;
    outcome.best.save(&out.join("best.ckpt"))?;
    outcome.last.save(&out.join("last.ckpt"))?;
    Ok(outcome)
}

fn attention_csv(maps: &AttentionMaps) -> String {
    let mut out = String::from("frame,ta");
    for k in 0..maps.d_model {
        let _ = write!(out, ",tf_{k}");
    }
    out.push('\n');
    for l in 0..maps.frames {
        let ta = maps.t_map.as_ref().map_or(1.0, |t| t[l]);
        let _ = write!(out, "{l},{ta}");
        for k in 0..maps.d_model {
            let _ = write!(out, ",{}", maps.weight(l, k));
        }
        out.push('\n');
    }
    out
}

fn cmd_enhance(args: &EnhanceArgs) -> CliResult<()> {
    let noisy = read_wav(&args.input)?;
    if noisy.is_empty() {
        return Err(CliError::Data(format!("{} holds no samples", args.input.display())));
    }
    let enhanced = if let Some(kind) = args.oracle {
        let clean_path = args.clean.as_ref().expect("clap enforces --clean with --oracle");
        let clean = read_wav(clean_path)?;
        if clean.len() != noisy.len() {
            return Err(CliError::Data(format!(
                "clean reference has {} samples, noisy input {}",
                clean.len(),
                noisy.len()
            )));
        }
        let noise = Waveform::new(
            noisy
                .samples()
                .iter()
                .zip(clean.samples())
                .map(|(x, s)| x - s)
                .collect(),
        )?;
        enhance_with_mask(&noisy, &oracle_mask(kind, &clean, &noise, &noisy)?)?
    } else {
        let checkpoint = args
            .checkpoint
            .as_ref()
            .expect("clap enforces --checkpoint without --oracle");
        let cfg = args.config.resolve(Some(&config_beside(checkpoint)))?;
        let model = load_model(&cfg, checkpoint)?;
        let spec = stft(&noisy)?;
        let (grid, maps) = model.predict_traced(&magnitude(&spec))?;
        let mask = Mask::new(grid.map(|v| v.clamp(0.0, 1.0)), MaskKind::Predicted)?;
        if args.dump_attention {
            let dir = match &args.out {
                Some(d) => d.clone(),
                None => args.output.parent().map(Path::to_path_buf).unwrap_or_default(),
            };
            create_dir(&dir)?;
            if cfg.model.variant == TfaVariant::Off {
                eprintln!("note: variant `off` has no attention maps to dump");
            } else {
                for (b, m) in maps.iter().enumerate() {
                    write(&dir.join(format!("attention_block{}.csv", b + 1)), &attention_csv(m))?;
                }
            }
        }
        istft(&apply_mask(&spec, &mask)?, noisy.len())?
    };
    if let Some(parent) = args.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_wav(&enhanced, &args.output)?;
    Ok(())
}

fn evaluate_into(
    system: System<'_>,
    items: &[TestItem],
    out: &Path,
    name: &str,
    per_utterance: bool,
) -> CliResult<EvalReport> {
    let (report, scores) = evaluate(system, items)?;
    write(&out.join(format!("eval_{name}.csv")), &report.to_csv())?;
    if per_utterance {
        write(&out.join(format!("utterances_{name}.csv")), &utterance_csv(&scores))?;
    }
    Ok(report)
}

fn cmd_evaluate(cfg: &RunConfig, checkpoint: Option<&Path>, out: &Path, per_utterance: bool) -> CliResult<()> {
    let model = checkpoint.map(|c| load_model(cfg, c)).transpose()?;
    create_dir(out)?;
    write(&out.join("effective_config.toml"), &cfg.to_toml())?;
    let items = test_set(&cfg.test)?;
    evaluate_into(System::Identity, &items, out, "noisy", per_utterance)?;
    evaluate_into(
        System::Oracle(TargetKind::Irm),
        &items,
        out,
        "oracle_irm",
        per_utterance,
    )?;
    evaluate_into(
        System::Oracle(TargetKind::Psm),
        &items,
        out,
        "oracle_psm",
        per_utterance,
    )?;
    if let Some(model) = &model {
        evaluate_into(System::Model(model), &items, out, "model", per_utterance)?;
    }
    Ok(())
}

/// Variant order of every ablation table.
pub const ABLATION_ORDER: [TfaVariant; 4] = [TfaVariant::Off, TfaVariant::TaOnly, TfaVariant::FaOnly, TfaVariant::Tfa];

fn cmd_ablate(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    create_dir(out)?;
    write(&out.join("effective_config.toml"), &cfg.to_toml())?;
    let mut runs = Vec::new();
    for variant in ABLATION_ORDER {
        let mut vcfg = cfg.clone();
        vcfg.model.variant = variant;
        let outcome = cmd_train(&vcfg, &out.join(variant.as_str()))?;
        runs.push((variant, vcfg, outcome));
    }

    let reference = &runs[0].2;
    let mut digests = String::from("variant,epoch,digest\n");
    for (variant, _, o) in &runs {
        if o.epoch_digests != reference.epoch_digests || o.validation_digest != reference.validation_digest {
            return Err(CliError::Numeric(format!(
                "variant {variant} saw different batches than {}",
                runs[0].0
            )));
        }
        let _ = writeln!(digests, "{variant},validation,{}", o.validation_digest);
        for (i, d) in o.epoch_digests.iter().enumerate() {
            let _ = writeln!(digests, "{variant},{},{d}", i + 1);
        }
    }
    write(&out.join("batch_digests.csv"), &digests)?;

    let mut history = String::from("variant,epoch,train_mse,val_mse\n");
    let mut summary = String::from("variant,params,final_train_mse,final_val_mse,best_val_mse,best_epoch\n");
    for (variant, vcfg, o) in &runs {
        for r in &o.history {
            let _ = writeln!(history, "{variant},{},{:.9},{:.9}", r.epoch, r.train_mse, r.val_mse);
        }
        let last = o.history.last().expect("at least one epoch");
        let best = &o.history[o.best_epoch - 1];
        let _ = writeln!(
            summary,
            "{variant},{},{:.9},{:.9},{:.9},{}",
            count_params(&vcfg.model),
            last.train_mse,
            last.val_mse,
            best.val_mse,
            o.best_epoch
        );
    }
    write(&out.join("ablation_history.csv"), &history)?;
    write(&out.join("ablation_summary.csv"), &summary)?;

    let items = test_set(&cfg.test)?;
    let mut eval = String::from("variant,condition_noise,condition_snr_db,metric,mean,count\n");
    for (variant, _, o) in &runs {
        let (report, _) = evaluate(System::Model(&o.best), &items)?;
        for line in report.to_csv().lines().skip(1) {
            let _ = writeln!(eval, "{variant},{line}");
        }
    }
    write(&out.join("ablation_eval.csv"), &eval)?;
    evaluate_into(System::Identity, &items, out, "noisy", false)?;
    Ok(())
}

fn cmd_gradcheck(draws: usize, seed: u64, fault: bool) -> CliResult<()> {
    if draws == 0 {
        return Err(CliError::Usage("--draws must be ≥ 1".into()));
    }
    let rows = run_suite(draws, seed, fault);
    print!("{}", format_table(&rows));
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "gradient check failed: {}",
            failed.join(", ")
        )))
    }
}
