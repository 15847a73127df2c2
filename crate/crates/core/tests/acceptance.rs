//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers to run a subset, e.g.
//! `cargo test --test acceptance -- 1 2 4`.
//!
//! Trained networks come from the artifact cache (`RIC_ARTIFACTS`, default
//! `target/ric-artifacts`); anything missing is trained on first use.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ric_core::attack::{craft_for_key, verify_nae, NaeCache};
use ric_core::checkpoint::{load_classifier, load_ric};
use ric_core::codec::{decrypt_pixels, dequantize, encrypt_cached, quantize_eval, srl_blend, srl_subtract};
use ric_core::config::ExperimentConfig;
use ric_core::experiment::{all_passed, default_artifacts, Check, Workspace};
use ric_core::keystream::{derive_stream, Purpose, SecretKey};
use ric_core::metrics::adp;
use ric_core::security::{bound_probability, nes_gradient, BoundMode, NesConfig};
use ric_core::{Image8, Tensor};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(checks: &[Check]) -> Outcome {
    let detail = checks.iter().map(|c| format!("[{}] {}: {}", if c.passed { "ok" } else { "x" }, c.name, c.detail)).collect::<Vec<_>>().join("; ");
    Outcome { passed: all_passed(checks), detail }
}

fn workspace() -> Workspace {
    Workspace::open(ExperimentConfig { output_dir: default_artifacts(), ..ExperimentConfig::default() }).expect("workspace")
}

/// (method, dataset, ACC_p, ACC_e, printed ADP) for every populated cell of the accuracy table.
const TABLE: &[(&str, &str, f64, f64, f64)] = &[
    ("RIC", "ImageNet", 77.80, 77.80, 0.00),
    ("RIC", "Cifar-10", 97.09, 97.09, 0.00),
    ("RIC", "MNIST", 99.75, 99.75, 0.00),
    ("InstaHide", "ImageNet", 77.80, 72.90, 6.30),
    ("InstaHide", "Cifar-10", 97.09, 91.46, 5.80),
    ("InstaHide", "MNIST", 99.75, 98.35, 1.40),
    ("Cloak", "ImageNet", 77.80, 23.19, 70.19),
    ("Cloak", "Cifar-10", 97.09, 60.58, 37.58),
    ("Cloak", "MNIST", 99.75, 85.42, 14.37),
    ("TAPAS", "ImageNet", 77.80, 7.84, 89.92),
    ("TAPAS", "Cifar-10", 97.09, 61.27, 36.89),
    ("TAPAS", "MNIST", 99.75, 97.97, 0.78),
    ("ARDEN", "Cifar-10", 97.09, 88.31, 9.04),
    ("ARDEN", "MNIST", 99.75, 99.70, 0.05),
    ("MiniONN", "Cifar-10", 97.09, 81.61, 5.36),
    ("MiniONN", "MNIST", 99.75, 99.17, 0.58),
];

fn c1_adp_table() -> Outcome {
    let mut bad = Vec::new();
    for &(m, d, p, e, printed) in TABLE {
        let v = adp(p, e).unwrap();
        if (v - printed).abs() > 0.01 {
            bad.push(format!("{m}/{d}: computed {v:.2} vs printed {printed:.2}"));
        }
    }
    Outcome {
        passed: bad.is_empty(),
        detail: format!("{}/{} rows within 0.01{}", TABLE.len() - bad.len(), TABLE.len(), if bad.is_empty() { String::new() } else { format!("; mismatches: {}", bad.join(", ")) }),
    }
}

fn c2_bound() -> Outcome {
    let approx = bound_probability(1, 770_000, BoundMode::PowerOfTen).unwrap();
    let exact = bound_probability(1, 76_800, BoundMode::Exact).unwrap();
    // Independent log-space evaluation: 76800·(log10 3 − 8·log10 2).
    let oracle = 76_800.0 * (3f64.log10() - 8.0 * 2f64.log10());
    let a_ok = (approx / -1.54e6 - 1.0).abs() <= 0.01;
    let e_ok = (exact / -1.483e5 - 1.0).abs() <= 0.001 && (exact - oracle).abs() < 1e-6;
    Outcome { passed: a_ok && e_ok, detail: format!("approx {approx:.4e} (target -1.54e6), exact {exact:.6e} (oracle {oracle:.6e}, target -1.483e5)") }
}

fn c3_nes() -> Outcome {
    let dim = 1024;
    let cfg = NesConfig { sigma: 1e-3, z: 500, antithetic: true };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut errs = Vec::new();
    for trial in 0..10u64 {
        let w: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        let mut s = derive_stream(SecretKey::new(1000 + trial), Purpose::Nes);
        let g = nes_gradient(|x| x.iter().zip(&w).map(|(a, b)| a * b).sum(), &r, &cfg, &mut s).unwrap();
        let num: f64 = g.iter().zip(&w).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        errs.push(num / den);
    }
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    // With n mirrored pairs the estimate is (1/n)·Σ v vᵀ w, whose relative error concentrates at sqrt((d+1)/n).
    let theory = ((dim as f64 + 1.0) / (cfg.z / 2) as f64).sqrt();
    Outcome {
        passed: worst <= 0.05,
        detail: format!("relative L2 error mean {mean:.3}, worst {worst:.3} over 10 trials (sampling theory {theory:.3}; target 0.05)"),
    }
}

fn c4_srl() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 784;
    let (mut worst_id, mut worst_q_ratio) = (0f64, 0f64);
    for _ in 0..1000 {
        let u: Vec<f32> = (0..n).map(|_| rng.random()).collect();
        let a: Vec<f32> = (0..n).map(|_| rng.random()).collect();
        let lambda: f32 = rng.random_range(0.01..0.99);
        let ut = Tensor::new(&[1, 1, 28, 28], u.clone()).unwrap();
        let at = Tensor::new(&[1, 1, 28, 28], a).unwrap();
        let x = srl_blend(&ut, &at, lambda).unwrap();
        let back = srl_subtract(&x, &at, lambda).unwrap();
        for (b, o) in back.data().iter().zip(&u) {
            worst_id = worst_id.max((b - o).abs() as f64);
        }
        let xq = dequantize(&quantize_eval(&x).unwrap());
        let backq = srl_subtract(&xq, &at, lambda).unwrap();
        let bound = (0.5 / 255.0) / (1.0 - lambda as f64);
        for (b, o) in backq.data().iter().zip(&u) {
            worst_q_ratio = worst_q_ratio.max((b - o).abs() as f64 / bound);
        }
    }
    // f32 arithmetic adds ~1e-7/(1−λ) on top of the half-level rounding.
    let passed = worst_id <= 1e-5 && worst_q_ratio <= 1.0 + 1e-3;
    Outcome { passed, detail: format!("identity max err {worst_id:.2e} (tol 1e-5); quantised max err / bound {worst_q_ratio:.6}") }
}

fn c5_nae(ws: &Workspace) -> Outcome {
    let clf = ws.classifier().unwrap();
    let acc = clf.accuracy(&ws.splits.test).unwrap();
    let cfg = ws.cfg.attack;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ok = 0;
    let mut failures = Vec::new();
    for _ in 0..100 {
        let key = SecretKey::new(rng.random());
        let target = rng.random_range(0..clf.num_classes);
        match craft_for_key(&clf, key, target, &cfg) {
            Ok(nae) => {
                let (label, margin) = verify_nae(&clf, &nae).unwrap();
                if label == target && margin >= cfg.g1 - 1e-4 {
                    ok += 1;
                } else {
                    failures.push(format!("target {target}: label {label} margin {margin:.3}"));
                }
            }
            Err(e) => failures.push(e.to_string()),
        }
    }
    Outcome {
        passed: acc >= 98.5 && ok == 100,
        detail: format!("classifier test accuracy {acc:.2}%; {ok}/100 pairs reach margin {} within {} iterations{}", cfg.g1, cfg.max_iters, failures.first().map(|f| format!("; first failure: {f}")).unwrap_or_default()),
    }
}

fn c6_train(ws: &Workspace) -> Outcome {
    let clf = ws.classifier().unwrap();
    let (model, curves) = ws.main_ric(&clf).unwrap();
    let r = ws.eval_main(&clf, &model, &curves).unwrap();
    let mut o = outcome(&r.checks);
    o.detail = format!("{} train images, {} epochs, {} held-out images; {}", ws.splits.train.len(), curves.epochs.len(), r.summary.metrics.sample_count, o.detail);
    o
}

fn c7_bruteforce(ws: &Workspace) -> Outcome {
    let clf = ws.classifier().unwrap();
    let (model, _) = ws.main_ric(&clf).unwrap();
    outcome(&ws.bruteforce(&clf, &model).unwrap().checks)
}

fn c8_ablation(ws: &Workspace) -> Outcome {
    let clf = ws.classifier().unwrap();
    outcome(&ws.ablate(&clf).unwrap().checks)
}

fn c9_attacks(ws: &Workspace) -> Outcome {
    let clf = ws.classifier().unwrap();
    let (model, _) = ws.main_ric(&clf).unwrap();
    let kpa = ws.kpa(&clf, &model).unwrap();
    let cloud = ws.cloud(&clf, &model).unwrap();
    let gate = ["kpa_15db_below_authorized", "cloud_15db_below_authorized"];
    let all: Vec<Check> = kpa.checks.into_iter().chain(cloud.checks).collect();
    let passed = all.iter().filter(|c| gate.contains(&c.name.as_str())).all(|c| c.passed);
    Outcome { passed, detail: outcome(&all).detail }
}

fn run_pipeline(ws: &Workspace, images: &[Tensor], key: SecretKey) -> (Vec<Image8>, Vec<Image8>) {
    let ckpt = ws.classifier_dir();
    let clf = load_classifier(&ckpt).unwrap();
    let model = load_ric(&ws.ric_dir(ric_core::codec::Variant::Full, ws.cfg.model.lambda, ws.cfg.train.epochs)).unwrap();
    let mut cache = NaeCache::new();
    let mut cts = Vec::new();
    let mut recs = Vec::new();
    for img in images {
        let ct = encrypt_cached(&model, &clf, key, img, &ws.cfg.attack, &mut cache).unwrap();
        let rec = decrypt_pixels(&model, &clf, key, &ct.pixels, &ws.cfg.attack, &mut NaeCache::new()).unwrap();
        recs.push(Image8::from_unit(&rec).unwrap());
        cts.push(ct.pixels);
    }
    (cts, recs)
}

fn c10_determinism(ws: &Workspace) -> Outcome {
    let clf = ws.classifier().unwrap();
    ws.main_ric(&clf).unwrap();
    let images: Vec<Tensor> = (0..8).map(|i| ws.splits.test.image(i)).collect();
    let key = SecretKey::new(777);
    let a = run_pipeline(ws, &images, key);
    let b = run_pipeline(ws, &images, key);
    let ct_same = a.0.iter().zip(&b.0).filter(|(x, y)| x == y).count();
    let rec_same = a.1.iter().zip(&b.1).filter(|(x, y)| x == y).count();
    Outcome {
        passed: ws.cfg.deterministic && ct_same == images.len() && rec_same == images.len(),
        detail: format!("deterministic={}; {ct_same}/{n} ciphertexts and {rec_same}/{n} recoveries bitwise identical across two fresh loads", ws.cfg.deterministic, n = images.len()),
    }
}

fn c11_sweep(ws: &Workspace) -> Outcome {
    let clf = ws.classifier().unwrap();
    outcome(&ws.lambda_sweep(&clf).unwrap().checks)
}

fn main() {
    // Relative dataset paths in the default config resolve from the workspace root.
    std::env::set_current_dir(Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")).unwrap();
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).is_test(true).try_init();
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let names = [
        "ADP arithmetic over the accuracy table",
        "brute-force bound calculator",
        "NES gradient of a linear function",
        "SRL algebra",
        "NAE crafting success",
        "desk codec training (ADP, PSNR)",
        "key sensitivity (brute force)",
        "ablation ordering",
        "attack asymmetry (KPA, cloud)",
        "determinism",
        "lambda sweep trend",
    ];
    let mut ws: Option<Workspace> = None;
    let mut failed = 0;
    for (i, name) in names.iter().enumerate() {
        let n = i + 1;
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        if n >= 5 && ws.is_none() {
            ws = Some(workspace());
        }
        let t = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(|| match n {
            1 => c1_adp_table(),
            2 => c2_bound(),
            3 => c3_nes(),
            4 => c4_srl(),
            5 => c5_nae(ws.as_ref().unwrap()),
            6 => c6_train(ws.as_ref().unwrap()),
            7 => c7_bruteforce(ws.as_ref().unwrap()),
            8 => c8_ablation(ws.as_ref().unwrap()),
            9 => c9_attacks(ws.as_ref().unwrap()),
            10 => c10_determinism(ws.as_ref().unwrap()),
            _ => c11_sweep(ws.as_ref().unwrap()),
        }));
        let o = res.unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default();
            Outcome { passed: false, detail: format!("error: {msg}") }
        });
        if !o.passed {
            failed += 1;
        }
        println!("criterion {n:>2} {} {name} ({:.1}s): {}", if o.passed { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64(), o.detail);
    }
    if failed > 0 {
        println!("acceptance: {failed} criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
