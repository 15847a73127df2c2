//! `ric` command-line interface.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use crate::classifier::{argmax, softmax};
use crate::codec::{decrypt, encrypt, read_ciphertext, sidecar_path, write_ciphertext, Variant};
use crate::config::ExperimentConfig;
use crate::experiment::{all_passed, Check, LockFile, Workspace};
use crate::imageio::{read_png, write_png};
use crate::keystream::SecretKey;
use crate::tensor::Image8;

#[derive(Parser, Debug)]
#[command(name = "ric", version, about = "Recoverable privacy-preserving image classification")]
pub struct Cli {
    /// Experiment config (TOML). Defaults apply to missing fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Force deterministic mode on.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct KeyArgs {
    /// Secret key (decimal u64). Prefer RIC_KEY or --keyfile to keep it out of shell history.
    #[arg(long, env = "RIC_KEY", hide_env_values = true)]
    pub key: Option<String>,
    #[arg(long)]
    pub keyfile: Option<PathBuf>,
}

impl KeyArgs {
    pub fn resolve(&self) -> anyhow::Result<SecretKey> {
        match (&self.key, &self.keyfile) {
            (_, Some(p)) => {
                let raw = std::fs::read_to_string(p).with_context(|| format!("reading key file {}", p.display()))?;
                Ok(raw.parse()?)
            }
            (Some(k), None) => Ok(k.parse()?),
            (None, None) => bail!("a key is required: pass --key, --keyfile or set RIC_KEY"),
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum VariantArg {
    Full,
    Rni,
    NoSrl,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => Variant::Full,
            VariantArg::Rni => Variant::Rni,
            VariantArg::NoSrl => Variant::NoSrl,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum AttackKind {
    /// Decrypt under many guessed keys.
    Bruteforce,
    /// U-Net regression from leaked (ciphertext, recovery) pairs.
    Kpa,
    /// Generative inversion by the classifying server.
    Cloud,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train (or load from cache) the frozen classifier and report test accuracy.
    TrainClassifier,
    /// Train (or load from cache) a codec.
    TrainRic {
        #[arg(long, value_enum, default_value = "full")]
        variant: VariantArg,
        #[arg(long)]
        lambda: Option<f32>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Encrypt a PNG image; writes the ciphertext PNG and its `.ric.json` sidecar.
    Encrypt {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        key: KeyArgs,
    },
    /// Decrypt a ciphertext PNG (with its sidecar) into a PNG image.
    Decrypt {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        key: KeyArgs,
    },
    /// Classify a PNG image (plaintext or ciphertext) with the frozen classifier.
    Classify {
        #[arg(long)]
        input: PathBuf,
    },
    /// Evaluate the main codec: accuracy in both domains, ADP, PSNR, SSIM.
    Eval,
    /// Ablations: NAE vs RNI and SRL on/off, or the lambda sweep.
    Ablate {
        #[arg(long)]
        lambda_sweep: bool,
    },
    /// Attack evaluations against the main codec.
    Attack {
        #[command(subcommand)]
        kind: AttackKind,
    },
    /// Brute-force probability bound; `--estimate` measures alpha on the main codec.
    Bound {
        #[arg(long, default_value_t = 1)]
        m: u32,
        #[arg(long)]
        d: Option<u64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, conflicts_with = "alpha")]
        estimate: bool,
    },
    /// Write the effective config as TOML.
    DumpConfig,
}

pub fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(o) = &cli.output_dir {
        cfg.output_dir = o.clone();
    }
    if cli.deterministic {
        cfg.deterministic = true;
    }
    Ok(cfg)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::TrainClassifier => "train_classifier",
        Command::TrainRic { .. } => "train_ric",
        Command::Encrypt { .. } => "encrypt",
        Command::Decrypt { .. } => "decrypt",
        Command::Classify { .. } => "classify",
        Command::Eval => "eval",
        Command::Ablate { lambda_sweep: false } => "ablation",
        Command::Ablate { lambda_sweep: true } => "lambda_sweep",
        Command::Attack { kind: AttackKind::Bruteforce } => "bruteforce",
        Command::Attack { kind: AttackKind::Kpa } => "attack_kpa",
        Command::Attack { kind: AttackKind::Cloud } => "attack_cloud",
        Command::Bound { .. } => "bound",
        Command::DumpConfig => "dump_config",
    }
}

fn report_checks(checks: &[Check]) -> bool {
    for c in checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    all_passed(checks)
}

fn read_image(path: &std::path::Path, ws: &Workspace) -> anyhow::Result<crate::Tensor> {
    let img = read_png(path)?;
    let want = ws.splits.train.shape();
    if img.dims() != want {
        bail!("{} is {:?}, the models expect {:?}", path.display(), img.dims(), want);
    }
    let (c, h, w) = want;
    Ok(img.to_unit().reshape(&[1, c, h, w])?)
}

/// Runs one command. `Ok(false)` means it finished but an assertion failed.
pub fn run(cli: Cli) -> anyhow::Result<bool> {
    let cfg = load_config(&cli)?;
    if let Command::DumpConfig = cli.command {
        print!("{}", cfg.to_toml());
        return Ok(true);
    }
    std::fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    // One experiment process per output directory.
    let lock_path = cfg.output_dir.join("ric.lock");
    let Some(_lock) = LockFile::try_acquire(&lock_path)? else {
        bail!("another ric process is using {} (lock {})", cfg.output_dir.display(), lock_path.display());
    };
    let ws = Workspace::open(cfg)?;
    let name = command_name(&cli.command);
    let marker = ws.reports().join(format!("{name}.incomplete.json"));
    let _ = std::fs::remove_file(&marker);
    let result = execute(&ws, cli.command);
    if let Err(e) = &result {
        let body = serde_json::json!({ "command": name, "incomplete": true, "error": format!("{e:#}"), "config_hash": ws.cfg.hash() });
        let _ = std::fs::write(&marker, serde_json::to_vec_pretty(&body)?);
    }
    result
}

fn execute(ws: &Workspace, command: Command) -> anyhow::Result<bool> {
    let attack = ws.cfg.attack;
    Ok(match command {
        Command::TrainClassifier => {
            let clf = ws.classifier()?;
            let acc = clf.accuracy(&ws.splits.test)?;
            info!("classifier {} test accuracy {acc:.2}%", clf.id());
            println!("test_accuracy {acc:.2}");
            true
        }
        Command::TrainRic { variant, lambda, epochs } => {
            let clf = ws.classifier()?;
            let lambda = lambda.unwrap_or(ws.cfg.model.lambda);
            let epochs = epochs.unwrap_or(ws.cfg.train.epochs);
            let (model, curves) = ws.ric(&clf, variant.into(), lambda, epochs)?;
            println!("model {} trained for {} epochs", model.id(), curves.epochs.len());
            if let Some(last) = curves.epochs.last() {
                println!("{}", serde_json::to_string(last)?);
            }
            true
        }
        Command::Encrypt { input, output, key } => {
            let key = key.resolve()?;
            let clf = ws.existing_classifier()?;
            let (model, _) = ws.existing_main_ric()?;
            let ct = encrypt(&model, &clf, key, &read_image(&input, ws)?, &attack)?;
            write_ciphertext(&output, &ct)?;
            println!("wrote {} and {}", output.display(), sidecar_path(&output).display());
            true
        }
        Command::Decrypt { input, output, key } => {
            let key = key.resolve()?;
            let clf = ws.existing_classifier()?;
            let (model, _) = ws.existing_main_ric()?;
            let ct = read_ciphertext(&input)?;
            let rec = decrypt(&model, &clf, key, &ct, &attack)?;
            write_png(&output, &Image8::from_unit(&rec)?)?;
            println!("wrote {}", output.display());
            true
        }
        Command::Classify { input } => {
            let clf = ws.existing_classifier()?;
            let z = clf.logits(&read_image(&input, ws)?)?;
            let p = softmax(z.data());
            println!("{}", serde_json::json!({ "label": argmax(z.data()), "probabilities": p }));
            true
        }
        Command::Eval => {
            let clf = ws.existing_classifier()?;
            let (model, curves) = ws.existing_main_ric()?;
            report_checks(&ws.eval_main(&clf, &model, &curves)?.checks)
        }
        Command::Ablate { lambda_sweep } => {
            let clf = ws.classifier()?;
            let r = if lambda_sweep { ws.lambda_sweep(&clf)? } else { ws.ablate(&clf)? };
            for row in &r.rows {
                println!("{:<14} adp {:>7.3}%  psnr {:>6.2} dB  ssim {:.4}", row.tag, row.metrics.adp, row.metrics.psnr_mean, row.metrics.ssim_mean);
            }
            report_checks(&r.checks)
        }
        Command::Attack { kind } => {
            let clf = ws.existing_classifier()?;
            let (model, _) = ws.existing_main_ric()?;
            let checks = match kind {
                AttackKind::Bruteforce => ws.bruteforce(&clf, &model)?.checks,
                AttackKind::Kpa => ws.kpa(&clf, &model)?.checks,
                AttackKind::Cloud => ws.cloud(&clf, &model)?.checks,
            };
            report_checks(&checks)
        }
        Command::Bound { m, d, alpha, estimate } => {
            let r = if estimate {
                let clf = ws.existing_classifier()?;
                let (model, _) = ws.existing_main_ric()?;
                ws.bound(m, d, None, Some((&clf, &model)))?
            } else {
                ws.bound(m, d, alpha, None)?
            };
            println!("{}", serde_json::to_string_pretty(&r.bound)?);
            report_checks(&r.checks)
        }
        Command::DumpConfig => unreachable!("handled before the workspace opens"),
    })
}
