//! Desk-scale pipelines shared by the CLI and the acceptance suite.
//! Trained networks are cached under `<output>/checkpoints`, keyed by a hash
//! of the settings that produced them, so repeated runs reuse them.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use log::info;
use serde::{Deserialize, Serialize};

use rand::Rng;

use crate::attack::{AttackConfig, NaeCache};
use crate::checkpoint::{load_classifier, load_ric, save_classifier, save_ric};
use crate::classifier::{train_classifier, Classifier};
use crate::codec::{decrypt_pixels, encrypt_cached, RicModel, Variant};
use crate::config::{short_hash, ExperimentConfig};
use crate::data::{ingest, Dataset, Splits};
use crate::error::{Error, Result};
use crate::eval::{eval_keys, evaluate, EvalOutput};
use crate::imageio::write_png;
use crate::keystream::{derive_stream, Purpose, SecretKey};
use crate::metrics::MetricsReport;
use crate::nn::seeded_rng;
use crate::report::{histogram, line_chart};
use crate::security::{estimate_alpha, theorem_report, AlphaEstimate, AlphaSample, NesConfig, SecurityBound};
use crate::tensor::Tensor;
use crate::threat::{
    brute_force_sweep, eval_kpa, train_cloud_attack, train_discriminator, train_kpa, CloudAttackConfig, DiscriminatorConfig, Fidelity,
    KpaConfig, SeedStats, SweepResult,
};
use crate::training::{train_ric, Curves};

/// Default artifact directory: `$RIC_ARTIFACTS`, else `target/ric-artifacts`
/// in the workspace.
pub fn default_artifacts() -> PathBuf {
    std::env::var_os("RIC_ARTIFACTS")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target/ric-artifacts"))
}

pub struct Workspace {
    pub cfg: ExperimentConfig,
    pub splits: Splits,
    pub root: PathBuf,
}

fn pid_alive(pid: u32) -> bool {
    Path::new(&format!("/proc/{pid}")).exists() || !Path::new("/proc/self").exists()
}

/// Exclusive marker file holding the owner's pid; removed on drop.
pub struct LockFile {
    path: PathBuf,
}

impl LockFile {
    /// Takes the lock, or returns `None` while a live process holds it.
    /// Locks left behind by dead processes are broken.
    pub fn try_acquire(path: &Path) -> Result<Option<Self>> {
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(path) {
                Ok(mut f) => {
                    writeln!(f, "{}", std::process::id()).map_err(|e| Error::io(path, e))?;
                    return Ok(Some(Self { path: path.to_path_buf() }));
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let owner = fs::read_to_string(path).ok().and_then(|s| s.trim().parse::<u32>().ok());
                    match owner {
                        Some(pid) if pid_alive(pid) => return Ok(None),
                        // Written but not yet flushed by a live owner: treat as held.
                        None if fs::metadata(path).map(|m| m.len() == 0).unwrap_or(false) => return Ok(None),
                        _ => {
                            let _ = fs::remove_file(path);
                        }
                    }
                }
                Err(e) => return Err(Error::io(path, e)),
            }
        }
        Ok(None)
    }
}

impl Drop for LockFile {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// `<dir><suffix>` beside `dir`. Cache names contain dots (`l0.8`), so
/// `Path::with_extension` would truncate them.
fn sibling(dir: &Path, suffix: &str) -> PathBuf {
    let mut name = dir.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    dir.with_file_name(name)
}

/// Loads the artifact in `dir`, or produces it under a lock. Other processes
/// (or threads) wanting the same artifact wait for the producer.
fn cached<T>(dir: &Path, load: impl Fn(&Path) -> Result<T>, produce: impl FnOnce(&Path) -> Result<T>) -> Result<T> {
    let lock_path = sibling(dir, ".lock");
    loop {
        if dir.join("manifest.json").exists() {
            return load(dir);
        }
        if let Some(_lock) = LockFile::try_acquire(&lock_path)? {
            if dir.join("manifest.json").exists() {
                return load(dir);
            }
            return produce(dir);
        }
        std::thread::sleep(Duration::from_secs(5));
    }
}

impl Workspace {
    pub fn open(cfg: ExperimentConfig) -> Result<Self> {
        let root = cfg.output_dir.clone();
        for sub in ["checkpoints", "reports", "figures", "ciphertexts"] {
            let p = root.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let splits = ingest(&cfg.dataset)?;
        Ok(Self { cfg, splits, root })
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn figures(&self) -> PathBuf {
        self.root.join("figures")
    }

    pub fn ciphertexts(&self) -> PathBuf {
        self.root.join("ciphertexts")
    }

    pub fn classifier_dir(&self) -> PathBuf {
        self.checkpoints().join(format!(
            "classifier-{}-{}",
            self.cfg.classifier.arch.id(),
            short_hash(&(&self.cfg.dataset, &self.cfg.classifier))
        ))
    }

    /// The frozen classifier, trained on first use.
    pub fn classifier(&self) -> Result<Classifier> {
        let splits = &self.splits;
        let section = &self.cfg.classifier;
        cached(&self.classifier_dir(), load_classifier, |dir| {
            info!("training classifier into {}", dir.display());
            let (clf, report) = train_classifier(&splits.train, Some(&splits.val), section.arch, &section.hyper)?;
            let test_acc = if splits.test.is_empty() { None } else { Some(clf.accuracy(&splits.test)?) };
            let metrics = serde_json::json!({ "test_accuracy": test_acc, "curves": report });
            save_classifier(dir, &clf, metrics)?;
            Ok(clf)
        })
    }

    pub fn ric_dir(&self, variant: Variant, lambda: f32, epochs: usize) -> PathBuf {
        let model = crate::config::ModelSection { lambda, ..self.cfg.model.clone() };
        let train = crate::training::TrainConfig { epochs, ..self.cfg.train.clone() };
        let key = (&self.cfg.dataset, &self.cfg.classifier, &model, &train, &self.cfg.attack, variant);
        self.checkpoints().join(format!("ric-{}-l{lambda}-e{epochs}-{}", variant_id(variant), short_hash(&key)))
    }

    /// A trained codec with its curves, trained on first use.
    pub fn ric(&self, clf: &Classifier, variant: Variant, lambda: f32, epochs: usize) -> Result<(RicModel, Curves)> {
        let dir = self.ric_dir(variant, lambda, epochs);
        let load = |d: &Path| -> Result<(RicModel, Curves)> {
            let model = load_ric(d)?;
            let raw = fs::read(d.join("curves.json")).map_err(|e| Error::io(d.join("curves.json"), e))?;
            Ok((model, serde_json::from_slice(&raw)?))
        };
        cached(&dir, load, |d| {
            info!("training codec into {}", d.display());
            let arch = self.cfg.model.arch(clf.input, variant);
            let arch = crate::codec::RicArch { lambda, ..arch };
            let mut model = RicModel::new(arch, self.cfg.model.init_seed)?;
            let tc = crate::training::TrainConfig { epochs, ..self.cfg.train_config() };
            let partial = sibling(d, ".partial");
            let curves = train_ric(&mut model, clf, &self.splits.train, Some(&self.splits.val), &tc, |log, m| {
                let _ = save_ric(&partial, m, serde_json::json!({ "epoch": log.epoch, "partial": true }));
            })?;
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            fs::write(d.join("curves.json"), serde_json::to_vec(&curves)?).map_err(|e| Error::io(d, e))?;
            let last = curves.epochs.last().cloned();
            save_ric(d, &model, serde_json::json!({ "final_epoch": last }))?;
            let _ = fs::remove_dir_all(&partial);
            Ok((model, curves))
        })
    }

    /// The main codec at the configured lambda and epoch budget.
    pub fn main_ric(&self, clf: &Classifier) -> Result<(RicModel, Curves)> {
        self.ric(clf, Variant::Full, self.cfg.model.lambda, self.cfg.train.epochs)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let p = self.reports().join(format!("{name}.json"));
        let body = serde_json::json!({
            "config_hash": self.cfg.hash(),
            "report": value,
        });
        fs::write(&p, serde_json::to_vec_pretty(&body)?).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    pub fn write_csv<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<PathBuf> {
        let p = self.reports().join(format!("{name}.csv"));
        let mut w = csv::Writer::from_path(&p).map_err(|e| Error::Data { path: p.clone(), msg: e.to_string() })?;
        for r in rows {
            w.serialize(r).map_err(|e| Error::Data { path: p.clone(), msg: e.to_string() })?;
        }
        w.flush().map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }
}


/// One named assertion inside a command's scope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.to_string(), passed, detail }
    }
}

pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.passed)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalSummary {
    pub tag: String,
    pub model_id: String,
    pub classifier_id: String,
    pub lambda: f32,
    pub variant: Variant,
    pub epochs: usize,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub summary: EvalSummary,
    pub checks: Vec<Check>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TableReport {
    pub rows: Vec<EvalSummary>,
    pub checks: Vec<Check>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BruteForceReport {
    pub model_id: String,
    pub classifier_id: String,
    pub sweep: SweepResult,
    pub wrong_mean_psnr: f64,
    pub best_wrong_psnr: f64,
    pub gap_db: f64,
    pub checks: Vec<Check>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttackReport {
    pub attack: String,
    pub model_id: String,
    pub classifier_id: String,
    pub authorized: Fidelity,
    pub attack_held_out: Fidelity,
    /// Attack fidelity on its own training inputs (known-plaintext only).
    pub attack_train: Option<Fidelity>,
    pub loss_curve: Vec<f64>,
    pub extra: serde_json::Value,
    pub checks: Vec<Check>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundReport {
    pub bound: SecurityBound,
    pub estimate: Option<AlphaEstimate>,
    pub estimate_double_z: Option<AlphaEstimate>,
    pub model_id: Option<String>,
    pub checks: Vec<Check>,
}

/// Held-out ciphertexts, one fresh key per image, with authorized recoveries.
pub struct HeldOut {
    pub ciphertexts: Tensor,
    pub plaintexts: Tensor,
    pub authorized: Fidelity,
}

fn stack_owned(items: &[Tensor]) -> Result<Tensor> {
    let refs: Vec<&Tensor> = items.iter().collect();
    Tensor::stack(&refs)
}

/// Encrypts image `i` of `data` under `keys[i]` and decrypts it with the same key.
fn encrypt_per_key(model: &RicModel, clf: &Classifier, data: &Dataset, keys: &[SecretKey], attack: &AttackConfig) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    let mut cts = Vec::with_capacity(data.len());
    let mut recs = Vec::with_capacity(data.len());
    let mut cache = NaeCache::new();
    for (i, &key) in keys.iter().enumerate().take(data.len()) {
        let ct = encrypt_cached(model, clf, key, &data.image(i), attack, &mut cache)?;
        recs.push(decrypt_pixels(model, clf, key, &ct.pixels, attack, &mut cache)?);
        cts.push(ct.unit());
    }
    Ok((cts, recs))
}

impl Workspace {
    /// Loads the cached classifier without training it.
    pub fn existing_classifier(&self) -> Result<Classifier> {
        let d = self.classifier_dir();
        if !d.join("manifest.json").exists() {
            return Err(Error::Invalid(format!("no trained classifier at {}; run `ric train-classifier` first", d.display())));
        }
        load_classifier(&d)
    }

    /// Loads the cached main codec without training it.
    pub fn existing_main_ric(&self) -> Result<(RicModel, Curves)> {
        let d = self.ric_dir(Variant::Full, self.cfg.model.lambda, self.cfg.train.epochs);
        if !d.join("manifest.json").exists() {
            return Err(Error::Invalid(format!("no trained codec at {}; run `ric train-ric` first", d.display())));
        }
        let raw = fs::read(d.join("curves.json")).map_err(|e| Error::io(d.join("curves.json"), e))?;
        Ok((load_ric(&d)?, serde_json::from_slice(&raw)?))
    }

    fn eval_set(&self) -> Dataset {
        self.splits.test.head(self.cfg.eval.images)
    }

    /// Encrypt/classify/decrypt over the held-out evaluation images.
    pub fn evaluate_model(&self, clf: &Classifier, model: &RicModel, tag: &str, epochs: usize) -> Result<(EvalSummary, EvalOutput)> {
        let keys = eval_keys(self.cfg.eval.key_seed, self.cfg.eval.keys);
        let out = evaluate(model, clf, &self.eval_set(), &keys, &self.cfg.attack, &mut NaeCache::new())?;
        let summary = EvalSummary {
            tag: tag.to_string(),
            model_id: model.id(),
            classifier_id: clf.id(),
            lambda: model.lambda(),
            variant: model.variant(),
            epochs,
            metrics: out.report.clone(),
        };
        info!("{tag}: adp {:.2}% psnr {:.2} dB ssim {:.4}", summary.metrics.adp, summary.metrics.psnr_mean, summary.metrics.ssim_mean);
        Ok((summary, out))
    }

    /// Main-model evaluation: ADP and mean recovery PSNR floors.
    pub fn eval_main(&self, clf: &Classifier, model: &RicModel, curves: &Curves) -> Result<EvalReport> {
        let (summary, out) = self.evaluate_model(clf, model, "main", curves.epochs.len())?;
        let m = &summary.metrics;
        let checks = vec![
            Check::new("adp_at_most_1pct", m.adp <= 1.0, format!("ADP {:.3}%", m.adp)),
            Check::new("mean_psnr_at_least_35db", m.psnr_mean >= 35.0, format!("mean PSNR {:.2} dB", m.psnr_mean)),
        ];
        let report = EvalReport { summary, checks };
        self.write_json("eval", &report)?;
        self.write_csv("eval_records", &out.records)?;
        let psnrs: Vec<f64> = out.records.iter().map(|r| r.psnr).collect();
        histogram(&self.figures().join("eval_psnr_hist.svg"), "Recovery PSNR", "PSNR (dB)", &psnrs, 30)?;
        self.training_figure(curves, "main")?;
        for (i, (ct, rec)) in out.ciphertexts.iter().zip(&out.recoveries).enumerate().take(8) {
            write_png(&self.ciphertexts().join(format!("eval_{i:02}_cipher.png")), ct)?;
            write_png(&self.ciphertexts().join(format!("eval_{i:02}_recovered.png")), rec)?;
        }
        Ok(report)
    }

    pub fn training_figure(&self, curves: &Curves, tag: &str) -> Result<()> {
        let e = &curves.epochs;
        let pts = |f: &dyn Fn(&crate::training::EpochLog) -> f64| e.iter().map(|l| (l.epoch as f64, f(l))).collect::<Vec<_>>();
        line_chart(
            &self.figures().join(format!("training_{tag}.svg")),
            &format!("Training curves ({tag})"),
            "epoch",
            "loss",
            &[("total", pts(&|l| l.loss)), ("beta*rec", pts(&|l| self.cfg.train.loss.beta as f64 * l.rec)), ("adv", pts(&|l| l.adv))],
        )?;
        let psnr: Vec<(f64, f64)> = e.iter().filter_map(|l| l.val_psnr.map(|p| (l.epoch as f64, p))).collect();
        if !psnr.is_empty() {
            line_chart(&self.figures().join(format!("val_psnr_{tag}.svg")), &format!("Validation PSNR ({tag})"), "epoch", "dB", &[("psnr", psnr)])?;
        }
        Ok(())
    }

    /// Full model against the RNI-for-NAE and no-SRL variants at the sweep budget.
    pub fn ablate(&self, clf: &Classifier) -> Result<TableReport> {
        let lambda = self.cfg.model.lambda;
        let epochs = self.cfg.sweep_epochs;
        let mut rows = Vec::new();
        for (variant, tag) in [(Variant::Full, "full"), (Variant::Rni, "rni_for_nae"), (Variant::NoSrl, "no_srl")] {
            let (model, curves) = self.ric(clf, variant, lambda, epochs)?;
            self.training_figure(&curves, tag)?;
            rows.push(self.evaluate_model(clf, &model, tag, epochs)?.0);
        }
        let (full, rni, nosrl) = (&rows[0].metrics, &rows[1].metrics, &rows[2].metrics);
        let checks = vec![
            Check::new("rni_adp_strictly_higher", rni.adp > full.adp, format!("RNI ADP {:.3}% vs full {:.3}%", rni.adp, full.adp)),
            Check::new(
                "rni_psnr_5db_lower",
                rni.psnr_mean <= full.psnr_mean - 5.0,
                format!("RNI PSNR {:.2} dB vs full {:.2} dB", rni.psnr_mean, full.psnr_mean),
            ),
            Check::new(
                "no_srl_psnr_not_higher",
                nosrl.psnr_mean <= full.psnr_mean,
                format!("no-SRL PSNR {:.2} dB vs full {:.2} dB", nosrl.psnr_mean, full.psnr_mean),
            ),
        ];
        let report = TableReport { rows, checks };
        self.write_json("ablation", &report)?;
        self.write_csv("ablation", &report.rows.iter().map(TableRow::from).collect::<Vec<_>>())?;
        Ok(report)
    }

    pub const SWEEP: [f32; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

    /// One codec per lambda at the sweep budget.
    pub fn lambda_sweep(&self, clf: &Classifier) -> Result<TableReport> {
        let epochs = self.cfg.sweep_epochs;
        let mut rows = Vec::new();
        for &l in &Self::SWEEP {
            let (model, _) = self.ric(clf, Variant::Full, l, epochs)?;
            rows.push(self.evaluate_model(clf, &model, &format!("lambda_{l}"), epochs)?.0);
        }
        let at = |l: f32| rows.iter().find(|r| r.lambda == l).map(|r| r.metrics.clone()).expect("swept");
        let (lo, hi) = (at(0.1), at(0.8));
        let worst = rows.iter().filter(|r| r.lambda <= 0.8).map(|r| r.metrics.adp).fold(f64::NEG_INFINITY, f64::max);
        let checks = vec![
            Check::new(
                "psnr_0.8_exceeds_0.1",
                hi.psnr_mean > lo.psnr_mean,
                format!("PSNR {:.2} dB at 0.8 vs {:.2} dB at 0.1", hi.psnr_mean, lo.psnr_mean),
            ),
            Check::new("adp_at_most_1pct_up_to_0.8", worst <= 1.0, format!("max ADP {worst:.3}% for lambda <= 0.8")),
        ];
        let report = TableReport { rows, checks };
        self.write_json("lambda_sweep", &report)?;
        self.write_csv("lambda_sweep", &report.rows.iter().map(TableRow::from).collect::<Vec<_>>())?;
        let psnr: Vec<(f64, f64)> = report.rows.iter().map(|r| (r.lambda as f64, r.metrics.psnr_mean)).collect();
        let adp: Vec<(f64, f64)> = report.rows.iter().map(|r| (r.lambda as f64, r.metrics.adp)).collect();
        line_chart(&self.figures().join("lambda_sweep_psnr.svg"), "Recovery PSNR vs lambda", "lambda", "PSNR (dB)", &[("psnr", psnr)])?;
        line_chart(&self.figures().join("lambda_sweep_adp.svg"), "ADP vs lambda", "lambda", "ADP (%)", &[("adp", adp)])?;
        Ok(report)
    }

    pub fn bruteforce(&self, clf: &Classifier, model: &RicModel) -> Result<BruteForceReport> {
        let bf = &self.cfg.bruteforce;
        let mut rng = seeded_rng(bf.sampler_seed);
        let seeds: Vec<u64> = (0..bf.wrong_seeds).map(|_| rng.random_range(0..bf.seed_range.max(1))).collect();
        let images = self.splits.test.head(bf.images);
        let sweep = brute_force_sweep(model, clf, &images, SecretKey::new(bf.correct_key), &seeds, &self.cfg.attack)?;
        let (wm, bw, gap) = (sweep.wrong_mean(), sweep.best_wrong(), sweep.gap_db());
        let checks = vec![
            Check::new("wrong_key_mean_psnr_below_10db", wm < 10.0, format!("mean wrong-key PSNR {wm:.2} dB")),
            Check::new("correct_minus_best_wrong_at_least_20db", gap >= 20.0, format!("correct {:.2} dB, best wrong {bw:.2} dB, gap {gap:.2} dB", sweep.correct.mean_psnr)),
        ];
        let report = BruteForceReport {
            model_id: model.id(),
            classifier_id: clf.id(),
            wrong_mean_psnr: wm,
            best_wrong_psnr: bw,
            gap_db: gap,
            sweep,
            checks,
        };
        self.write_json("bruteforce", &report)?;
        let mut rows = vec![report.sweep.correct.clone()];
        rows.extend(report.sweep.wrong.iter().cloned());
        self.write_csv("bruteforce_seeds", &rows.iter().map(SeedRow::from).collect::<Vec<_>>())?;
        let pts: Vec<(f64, f64)> = report.sweep.wrong.iter().enumerate().map(|(i, s)| (i as f64, s.mean_psnr)).collect();
        line_chart(
            &self.figures().join("bruteforce_psnr.svg"),
            "Mean PSNR per guessed key",
            "seed index",
            "PSNR (dB)",
            &[("wrong keys", pts), ("correct key", vec![(0.0, report.sweep.correct.mean_psnr), (bf.wrong_seeds.max(1) as f64 - 1.0, report.sweep.correct.mean_psnr)])],
        )?;
        Ok(report)
    }

    /// Held-out ciphertexts shared by the known-plaintext and cloud attacks.
    pub fn held_out(&self, clf: &Classifier, model: &RicModel, n: usize) -> Result<HeldOut> {
        let data = self.splits.test.head(n);
        let keys = eval_keys(self.cfg.eval.key_seed.wrapping_add(1), data.len());
        let (cts, recs) = encrypt_per_key(model, clf, &data, &keys, &self.cfg.attack)?;
        let plain: Vec<Tensor> = (0..data.len()).map(|i| data.image(i)).collect();
        let (ciphertexts, plaintexts) = (stack_owned(&cts)?, stack_owned(&plain)?);
        let authorized = Fidelity::of(&stack_owned(&recs)?, &plaintexts)?;
        Ok(HeldOut { ciphertexts, plaintexts, authorized })
    }

    pub fn kpa(&self, clf: &Classifier, model: &RicModel) -> Result<AttackReport> {
        let k = &self.cfg.kpa;
        let train = self.splits.train.head(k.n_pairs);
        let keys = eval_keys(k.seed, train.len());
        let (cts, recs) = encrypt_per_key(model, clf, &train, &keys, &self.cfg.attack)?;
        let (xs, ys) = (stack_owned(&cts)?, stack_owned(&recs)?);
        let cfg = KpaConfig { n_pairs: k.n_pairs, depth: k.depth, base_width: k.base_width, epochs: k.epochs, batch: k.batch, lr: k.lr, seed: k.seed };
        let (m, curve) = train_kpa(&xs, &ys, &cfg)?;
        let held = self.held_out(clf, model, k.held_out)?;
        let attack_held_out = eval_kpa(&m, &held.ciphertexts, &held.plaintexts)?;
        let attack_train = eval_kpa(&m, &xs, &ys)?;
        let checks = vec![
            Check::new(
                "kpa_15db_below_authorized",
                attack_held_out.mean_psnr <= held.authorized.mean_psnr - 15.0,
                format!("attack {:.2} dB vs authorized {:.2} dB", attack_held_out.mean_psnr, held.authorized.mean_psnr),
            ),
            Check::new(
                "kpa_ssim_below_0.5",
                attack_held_out.mean_ssim.is_none_or(|s| s < 0.5),
                format!("attack SSIM {:?}", attack_held_out.mean_ssim),
            ),
        ];
        let report = AttackReport {
            attack: "known_plaintext".into(),
            model_id: model.id(),
            classifier_id: clf.id(),
            authorized: held.authorized,
            attack_held_out,
            attack_train: Some(attack_train),
            loss_curve: curve.clone(),
            extra: serde_json::json!({ "n_pairs": train.len(), "config": cfg }),
            checks,
        };
        self.write_json("attack_kpa", &report)?;
        let pts: Vec<(f64, f64)> = curve.iter().enumerate().map(|(i, &v)| (i as f64, v)).collect();
        line_chart(&self.figures().join("attack_kpa_loss.svg"), "Known-plaintext attack loss", "epoch", "mean L2", &[("loss", pts)])?;
        Ok(report)
    }

    pub fn cloud_config(&self) -> (CloudAttackConfig, DiscriminatorConfig) {
        let c = &self.cfg.cloud;
        (
            CloudAttackConfig { eta1: c.eta1, eta2: c.eta2, latent_dim: c.latent_dim, epochs: c.epochs, batch: c.batch, lr: c.lr, seed: c.seed },
            DiscriminatorConfig { epochs: c.disc_epochs, batch: c.batch, lr: c.lr, seed: c.seed.wrapping_add(10) },
        )
    }

    pub fn cloud(&self, clf: &Classifier, model: &RicModel) -> Result<AttackReport> {
        let c = &self.cfg.cloud;
        let (acfg, dcfg) = self.cloud_config();
        let real = self.splits.train.head(c.disc_real);
        let real_t = stack_owned(&(0..real.len()).map(|i| real.image(i)).collect::<Vec<_>>())?;
        let val = self.splits.val.head(200);
        let val_t = stack_owned(&(0..val.len()).map(|i| val.image(i)).collect::<Vec<_>>())?;
        let (disc, drep) = train_discriminator(&real_t, &val_t, &dcfg)?;
        let order = self.splits.train.shuffled_indices(c.seed);
        let pool = self.splits.train.subset(&order[..c.ciphertexts.min(order.len())]);
        let keys = eval_keys(c.seed, pool.len());
        let (cts, _) = encrypt_per_key(model, clf, &pool, &keys, &self.cfg.attack)?;
        let atk = train_cloud_attack(clf, &stack_owned(&cts)?, &disc, &acfg)?;
        let held = self.held_out(clf, model, c.held_out)?;
        let (recon, _) = atk.reconstruct(&held.ciphertexts)?;
        let attack_held_out = Fidelity::of(&recon, &held.plaintexts)?;
        let agree = atk.curves.last().map(|e| e.label_agreement).unwrap_or(0.0);
        let checks = vec![
            Check::new(
                "cloud_15db_below_authorized",
                attack_held_out.mean_psnr <= held.authorized.mean_psnr - 15.0,
                format!("attack {:.2} dB vs authorized {:.2} dB", attack_held_out.mean_psnr, held.authorized.mean_psnr),
            ),
            Check::new("discriminator_noise_accuracy_80pct", drep.noise_accuracy >= 0.8, format!("held-out accuracy {:.3}", drep.noise_accuracy)),
        ];
        let report = AttackReport {
            attack: "cloud".into(),
            model_id: model.id(),
            classifier_id: clf.id(),
            authorized: held.authorized,
            attack_held_out,
            attack_train: None,
            loss_curve: atk.curves.iter().map(|e| e.total).collect(),
            extra: serde_json::json!({
                "ciphertexts": pool.len(),
                "config": acfg,
                "discriminator": drep,
                "curves": atk.curves,
                "final_label_agreement": agree,
            }),
            checks,
        };
        self.write_json("attack_cloud", &report)?;
        let terms = |f: &dyn Fn(&crate::threat::CloudEpoch) -> f64| atk.curves.iter().map(|e| (e.epoch as f64, f(e))).collect::<Vec<_>>();
        line_chart(
            &self.figures().join("attack_cloud_terms.svg"),
            "Cloud attack objective terms",
            "epoch",
            "value",
            &[("total", terms(&|e| e.total)), ("ce", terms(&|e| e.ce)), ("realness", terms(&|e| e.realness)), ("latent var", terms(&|e| e.latent_var))],
        )?;
        Ok(report)
    }

    /// Probability bound at `(m, d, alpha)`; with a model, `alpha` is estimated.
    pub fn bound(&self, m: u32, d: Option<u64>, alpha: Option<f64>, estimate: Option<(&Classifier, &RicModel)>) -> Result<BoundReport> {
        let b = &self.cfg.bound;
        let (est, est2, model_id) = match estimate {
            Some((clf, model)) => {
                let mut rng = seeded_rng(b.seed);
                let images = self.splits.test.head(b.ciphertexts);
                let mut samples = Vec::new();
                for _ in 0..b.key_pairs {
                    let key = SecretKey::new(rng.random::<u32>() as u64);
                    let wrong = SecretKey::new(rng.random::<u32>() as u64);
                    let mut cache = NaeCache::new();
                    for i in 0..images.len() {
                        let ct = encrypt_cached(model, clf, key, &images.image(i), &self.cfg.attack, &mut cache)?;
                        samples.push(AlphaSample { ciphertext: ct.pixels, key, wrong });
                    }
                }
                let nes = NesConfig { sigma: b.sigma, z: b.z, antithetic: true };
                let mut s1 = derive_stream(SecretKey::new(b.seed), Purpose::Nes);
                let e1 = estimate_alpha(model, clf, &samples, &nes, &self.cfg.attack, b.pixels, &mut s1)?;
                let nes2 = NesConfig { z: 2 * b.z, ..nes };
                let mut s2 = derive_stream(SecretKey::new(b.seed), Purpose::Nes);
                let e2 = estimate_alpha(model, clf, &samples, &nes2, &self.cfg.attack, b.pixels, &mut s2)?;
                (Some(e1), Some(e2), Some(model.id()))
            }
            None => (None, None, None),
        };
        let d = d.or(est.as_ref().map(|e| e.d as u64)).ok_or_else(|| Error::Invalid("bound needs --d or a model".into()))?;
        let alpha = alpha.or(est.as_ref().map(|e| e.alpha)).ok_or_else(|| Error::Invalid("bound needs --alpha or --estimate".into()))?;
        let bound = theorem_report(m, d, alpha)?;
        let mut checks = Vec::new();
        if let (Some(a), Some(b2)) = (&est, &est2) {
            checks.push(Check::new("alpha_positive", a.alpha > 0.0, format!("alpha {:.3}", a.alpha)));
            let rel = (b2.alpha - a.alpha).abs() / a.alpha.abs();
            checks.push(Check::new("alpha_stable_when_z_doubles", rel < 0.1, format!("alpha {:.3} at z, {:.3} at 2z ({:.1}%)", a.alpha, b2.alpha, 100.0 * rel)));
            let bf = self.reports().join("bruteforce.json");
            if let Ok(raw) = fs::read(&bf) {
                let v: serde_json::Value = serde_json::from_slice(&raw)?;
                if let Some(w) = v["report"]["sweep"]["wrong"].as_array() {
                    let worst = w.iter().filter_map(|s| s["mean_psnr"].as_f64()).fold(f64::NEG_INFINITY, f64::max);
                    checks.push(Check::new(
                        "wrong_key_psnr_within_threshold_plus_2db",
                        worst <= bound.threshold_db + 2.0,
                        format!("best wrong-key mean PSNR {worst:.2} dB vs threshold {:.2} dB", bound.threshold_db),
                    ));
                }
            }
        }
        let report = BoundReport { bound, estimate: est, estimate_double_z: est2, model_id, checks };
        self.write_json("bound", &report)?;
        Ok(report)
    }
}

#[derive(Serialize)]
struct TableRow {
    tag: String,
    variant: String,
    lambda: f32,
    epochs: usize,
    acc_plain: f64,
    acc_enc: f64,
    adp: f64,
    psnr_mean: f64,
    ssim_mean: f64,
    model_id: String,
}

impl From<&EvalSummary> for TableRow {
    fn from(s: &EvalSummary) -> Self {
        Self {
            tag: s.tag.clone(),
            variant: variant_id(s.variant).into(),
            lambda: s.lambda,
            epochs: s.epochs,
            acc_plain: s.metrics.acc_plain,
            acc_enc: s.metrics.acc_enc,
            adp: s.metrics.adp,
            psnr_mean: s.metrics.psnr_mean,
            ssim_mean: s.metrics.ssim_mean,
            model_id: s.model_id.clone(),
        }
    }
}

#[derive(Serialize)]
struct SeedRow {
    seed: u64,
    mean_psnr: f64,
    min_psnr: f64,
    max_psnr: f64,
    mean_ssim: Option<f64>,
}

impl From<&SeedStats> for SeedRow {
    fn from(s: &SeedStats) -> Self {
        Self { seed: s.seed, mean_psnr: s.mean_psnr, min_psnr: s.min_psnr, max_psnr: s.max_psnr, mean_ssim: s.mean_ssim }
    }
}

pub fn variant_id(v: Variant) -> &'static str {
    match v {
        Variant::Full => "full",
        Variant::Rni => "rni",
        Variant::NoSrl => "nosrl",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.lock");
        let a = LockFile::try_acquire(&p).unwrap().expect("first acquire");
        assert!(LockFile::try_acquire(&p).unwrap().is_none());
        drop(a);
        assert!(LockFile::try_acquire(&p).unwrap().is_some());
    }

    #[test]
    fn sibling_keeps_dotted_names() {
        let a = sibling(Path::new("c/ric-full-l0.8-e4-ab"), ".lock");
        let b = sibling(Path::new("c/ric-full-l0.1-e4-ab"), ".lock");
        assert_eq!(a, Path::new("c/ric-full-l0.8-e4-ab.lock"));
        assert_ne!(a, b);
    }

    #[test]
    fn stale_lock_is_broken() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.lock");
        fs::write(&p, "4000000000\n").unwrap();
        assert!(LockFile::try_acquire(&p).unwrap().is_some());
    }
}
