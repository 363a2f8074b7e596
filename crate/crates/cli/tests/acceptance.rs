//! Acceptance criteria, one line each. Runs without the libtest harness so
//! every line reaches the output; exits nonzero when any criterion fails.
//!
//! Criteria 4, 7 and 9 share one `spontts demo` run on the desk profile.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use rand::Rng;
use serde_json::Value;
use spontts::acoustic::{length_regulate, AcousticModel, VarianceStats};
use spontts::config::{EmbedSection, Profile, RunConfig};
use spontts::corpus::{generate_synthetic_corpus, SyntheticConfig};
use spontts::detector::{evaluate_detector, f1_from_pr, threshold_decisions, DetectorScores};
use spontts::labels::{
    combine, contract_phoneme_to_char, decompose, expand_char_to_phoneme, BehaviorFlags, CharLabelSeq, LabelClass,
};
use spontts::nn::{MultiHeadAttention, ParamStore};
use spontts::pipeline::{
    acoustic_items, build_embedder, build_vocab, finetune_init, gradient_check, load_features, lr_at, prepare_corpus,
    train_acoustic, FeatureCache, GradHead, OptimizerSpec, PRETRAIN_CKPT,
};
use spontts::util::keyed_rng;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// 1 -------------------------------------------------------------------------

fn table_f1() -> Outcome {
    let rows = [(0.815, 0.524, 0.638), (0.8, 0.557, 0.657), (0.866, 0.619, 0.722), (0.844, 0.710, 0.771)];
    let worst = rows.iter().map(|&(p, r, f)| (f1_from_pr(p, r) - f).abs()).fold(0.0, f64::max);
    check(worst <= 0.001, format!("max |F1 - reported| = {worst:.5} (tol 0.001)"))
}

// 2 -------------------------------------------------------------------------

fn label_codec() -> Outcome {
    for v in 0..4i64 {
        let class = combine(decompose(v).map_err(fail)?);
        if class.value() as i64 != v {
            return Err(format!("combine(decompose({v})) = {class}"));
        }
    }
    for fp in [false, true] {
        for pr in [false, true] {
            let f = BehaviorFlags {
                filled_pause: fp,
                prolongation: pr,
            };
            if decompose(combine(f).value() as i64).map_err(fail)? != f {
                return Err(format!("decompose(combine({f:?})) differs"));
            }
        }
    }
    if decompose(4).is_ok() || decompose(-1).is_ok() {
        return Err("out-of-range class accepted".into());
    }
    let mut rng = keyed_rng(2, "acceptance-codec");
    let cases = 2000;
    for case in 0..cases {
        let n = rng.random_range(1..20);
        let grouping: Vec<usize> = (0..n).map(|_| rng.random_range(1..5)).collect();
        let labels = CharLabelSeq((0..n).map(|_| LabelClass::try_from(rng.random_range(0..4i64)).unwrap()).collect());
        let ph = expand_char_to_phoneme(&labels, &grouping).map_err(fail)?;
        let mut end = 0;
        for &g in &grouping {
            if ph.0[end..end + g - 1].iter().any(|c| *c != LabelClass::None) {
                return Err(format!("case {case}: label on a non-final phoneme"));
            }
            end += g;
        }
        if contract_phoneme_to_char(&ph, &grouping).map_err(fail)? != labels {
            return Err(format!("case {case}: round trip differs"));
        }
    }
    Ok(format!("4 classes bijective, {cases} random round trips, last-phoneme invariant held"))
}

// 3 -------------------------------------------------------------------------

fn detector_oracle() -> Outcome {
    let mut rng = keyed_rng(3, "acceptance-detector");
    let instances = 500;
    for case in 0..instances {
        let utts = rng.random_range(1..6);
        let mut dec = Vec::new();
        let mut refs = Vec::new();
        for _ in 0..utts {
            let n = rng.random_range(0..12);
            dec.push((0..n).map(|_| rng.random_bool(0.4)).collect::<Vec<bool>>());
            refs.push((0..n).map(|_| rng.random_bool(0.3)).collect::<Vec<bool>>());
        }
        let m = evaluate_detector(&dec, &refs).map_err(fail)?;
        let mut cm = [[0usize; 2]; 2];
        for (d, r) in dec.iter().flatten().zip(refs.iter().flatten()) {
            cm[*d as usize][*r as usize] += 1;
        }
        let (tp, fp, fn_) = (cm[1][1], cm[1][0], cm[0][1]);
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        if (m.tp, m.fp, m.fn_) != (tp, fp, fn_) || m.precision != p || m.recall != r || m.f1 != f {
            return Err(format!("case {case}: {m:?} vs recount tp {tp} fp {fp} fn {fn_}"));
        }
    }
    let sweeps = 200;
    for case in 0..sweeps {
        let n = rng.random_range(1..40);
        let scores = DetectorScores((0..n).map(|_| rng.random::<f64>()).collect());
        let refs = vec![(0..n).map(|_| rng.random_bool(0.5)).collect::<Vec<bool>>()];
        let (mut last_pos, mut last_recall) = (usize::MAX, f64::INFINITY);
        for k in 1..100 {
            let d = threshold_decisions(&scores, k as f64 / 100.0).map_err(fail)?;
            let pos = d.iter().filter(|&&b| b).count();
            let recall = evaluate_detector(&[d], &refs).map_err(fail)?.recall;
            if pos > last_pos || recall > last_recall {
                return Err(format!("sweep {case}: not monotone at threshold {}", k as f64 / 100.0));
            }
            (last_pos, last_recall) = (pos, recall);
        }
    }
    Ok(format!("{instances} recounts exact, {sweeps} threshold sweeps monotone"))
}

// 4 -------------------------------------------------------------------------

fn synthetic_detection() -> Outcome {
    let demo = demo()?;
    let rows = demo.report["result"]["evaluation"].as_array().ok_or("no evaluation rows")?;
    let get = |input: &str, behavior: &str| -> Result<(f64, f64), String> {
        let row = rows
            .iter()
            .find(|r| r["input_type"] == input && r["behavior"] == behavior)
            .ok_or(format!("missing row {input}/{behavior}"))?;
        Ok((row["precision"].as_f64().unwrap(), row["recall"].as_f64().unwrap()))
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for behavior in ["filled_pause", "prolongation"] {
        let (p, r) = get("text+speech", behavior)?;
        let (sp, sr) = get("speech", behavior)?;
        ok &= p >= 0.9 && r >= 0.9 && r > sr;
        parts.push(format!("{behavior}: text+speech P {p:.3} R {r:.3}, speech P {sp:.3} R {sr:.3}"));
    }
    let secs = demo.report["result"]["seconds"]["train_detector"].as_f64().unwrap_or(f64::INFINITY)
        + demo.report["result"]["seconds"]["evaluate"].as_f64().unwrap_or(f64::INFINITY);
    ok &= secs < 300.0;
    parts.push(format!("train+evaluate {secs:.0}s (limit 300s)"));
    check(ok, parts.join("; "))
}

// 5 -------------------------------------------------------------------------

fn gradient_checks() -> Outcome {
    let heads = [
        GradHead::DetectorCe,
        GradHead::LabelMse,
        GradHead::Duration,
        GradHead::Pitch,
        GradHead::Energy,
        GradHead::Mel,
    ];
    let mut parts = Vec::new();
    let mut ok = true;
    for h in heads {
        let r = gradient_check(h, 1e-6).map_err(fail)?;
        ok &= r.max_rel_error < 1e-4;
        parts.push(format!("{h:?} {:.1e}", r.max_rel_error));
    }
    check(ok, format!("max relative error (tol 1e-4): {}", parts.join(", ")))
}

// 6 -------------------------------------------------------------------------

fn attention_invariants() -> Outcome {
    let dev = Device::Cpu;
    let mut store = ParamStore::new(DType::F64, 6);
    let (d, heads) = (8, 2);
    let mha = MultiHeadAttention::new(&mut store, "attn", d, heads).map_err(fail)?;
    let mut rng = keyed_rng(6, "acceptance-attention");
    let mut randn = |shape: &[usize]| -> Result<Tensor, String> {
        let n = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        Tensor::from_vec(v, shape, &dev).map_err(fail)
    };
    let (b, tq, tk) = (3, 4, 6);
    let q = randn(&[b, tq, d])?;
    let kv = randn(&[b, tk, d])?;
    let valid = [6usize, 3, 1];
    let mask: Vec<f64> = valid.iter().flat_map(|&v| (0..tk).map(move |j| if j < v { 1.0 } else { 0.0 })).collect();
    let mask = Tensor::from_vec(mask, (b, tk), &dev).map_err(fail)?;
    let (out, w) = mha.forward(&q, &kv, &mask).map_err(fail)?;
    // `B x H x Tq x Tk`, one `H x Tq x Tk` block per batch entry.
    let w: Vec<Vec<Vec<Vec<f64>>>> = (0..b)
        .map(|i| w.get(i).and_then(|t| t.to_vec3::<f64>()).map_err(fail))
        .collect::<Result<_, _>>()?;
    let mut max_sum_err = 0.0f64;
    for (i, wb) in w.iter().enumerate() {
        for row in wb.iter().flatten() {
            max_sum_err = max_sum_err.max((row.iter().sum::<f64>() - 1.0).abs());
            if row[valid[i]..].iter().any(|&x| x != 0.0) {
                return Err(format!("batch {i}: masked key has nonzero weight"));
            }
        }
    }
    // Batch 2 has one valid key: every query returns that key's value.
    let key = kv.narrow(0, 2, 1).and_then(|t| t.narrow(1, 0, 1)).map_err(fail)?;
    let expect = mha
        .v
        .forward(&key)
        .and_then(|v| mha.o.forward(&v))
        .map_err(fail)?
        .flatten_all()
        .and_then(|t| t.to_vec1::<f64>())
        .map_err(fail)?;
    let got = out.get(2).and_then(|t| t.to_vec2::<f64>()).map_err(fail)?;
    let single_err = got
        .iter()
        .flat_map(|row| row.iter().zip(&expect).map(|(a, e)| (a - e).abs()))
        .fold(0.0, f64::max);

    let cases = 1000;
    for case in 0..cases {
        let bsz = rng.random_range(1..4);
        let n = rng.random_range(1..8);
        let durs: Vec<Vec<usize>> = (0..bsz)
            .map(|_| (0..rng.random_range(1..=n)).map(|_| rng.random_range(0..5)).collect())
            .collect();
        let h = Tensor::arange(0f64, (bsz * n * 2) as f64, &dev)
            .and_then(|t| t.reshape((bsz, n, 2)))
            .map_err(fail)?;
        let (y, lengths) = length_regulate(&h, &durs).map_err(fail)?;
        let want: Vec<usize> = durs.iter().map(|d| d.iter().sum()).collect();
        if lengths != want || y.dim(1).map_err(fail)? != want.iter().copied().max().unwrap_or(0).max(1) {
            return Err(format!("case {case}: lengths {lengths:?}, expected {want:?}"));
        }
    }
    check(
        max_sum_err <= 1e-6 && single_err <= 1e-12,
        format!("row-sum error {max_sum_err:.1e} (tol 1e-6), masked weights 0, single-key error {single_err:.1e}, {cases} length-regulation cases"),
    )
}

// 7 -------------------------------------------------------------------------

fn finetune_contract() -> Outcome {
    let demo = demo()?;
    let init = &demo.report["result"]["finetune"]["init"];
    let before = init["hashes_before"].as_object().ok_or("no hashes")?;
    let after = init["hashes_after"].as_object().ok_or("no hashes")?;
    let mut ok = true;
    for (g, h) in before {
        ok &= if g == "decoder" { after[g] != *h } else { after[g] == *h };
    }
    let mult = init["multipliers"]["decoder"].as_f64().unwrap_or(0.0);
    ok &= mult == 10.0;
    ok &= init["multipliers"]
        .as_object()
        .unwrap()
        .iter()
        .all(|(g, m)| g == "decoder" || m.as_f64() == Some(1.0));

    // Independent bitwise check on the pre-trained checkpoint.
    let (mut model, _) = AcousticModel::load(&demo.out.join(PRETRAIN_CKPT), None).map_err(fail)?;
    let host_before = model.store().to_host().map_err(fail)?;
    let spec = RunConfig::for_profile(Profile::Desk).optimizer;
    let seed = init["decoder_seed"].as_u64().ok_or("no decoder seed")?;
    let report = finetune_init(&mut model, &spec, seed).map_err(fail)?;
    let host_after = model.store().to_host().map_err(fail)?;
    let (mut same, mut changed) = (0, 0);
    for (name, t) in &host_before {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        let identical = bits(&t.data) == bits(&host_after[name].data);
        if ParamStore::group_of(name) == "decoder" {
            changed += usize::from(!identical);
        } else if identical {
            same += 1;
        } else {
            ok = false;
        }
    }
    ok &= changed > 0 && report.multipliers["decoder"] == 10.0;
    check(
        ok,
        format!("decoder tensors changed: {changed}; other tensors bit-identical: {same}; decoder LR multiplier {mult}"),
    )
}

// 8 -------------------------------------------------------------------------

fn schedule() -> Outcome {
    let spec = OptimizerSpec::default();
    let lr = |s| lr_at(s, &spec, 256).unwrap();
    let half_early = lr(2000) == 0.5 * lr(4000);
    let half_late = lr(16000) == 0.5 * lr(4000);
    let peak = (1..=40000u64).max_by(|a, b| lr(*a).total_cmp(&lr(*b))).unwrap();
    check(
        half_early && half_late && peak == 4000,
        format!("lr(2000)/lr(4000) = {}, lr(16000)/lr(4000) = {}, peak at {peak}", lr(2000) / lr(4000), lr(16000) / lr(4000)),
    )
}

// 9 -------------------------------------------------------------------------

fn overfit(dir: &Path) -> Result<(f64, f64, f64), String> {
    let start = Instant::now();
    let cfg = RunConfig::for_profile(Profile::Desk);
    let syn = SyntheticConfig {
        conversations: 2,
        utterances_per_conversation: 4,
        test_conversations: 0,
        min_chars: 3,
        max_chars: 5,
        ..SyntheticConfig::default()
    };
    let corpus = generate_synthetic_corpus(11, &syn).and_then(|c| c.write(&dir.join("corpus"))).map_err(fail)?;
    let cache = FeatureCache::open(&dir.join("features"), &cfg.features).map_err(fail)?;
    let prep = prepare_corpus(&corpus, &cache);
    if prep.failed > 0 {
        return Err(format!("{} utterances failed feature extraction", prep.failed));
    }
    let feats = load_features(&corpus, &cache).map_err(fail)?;
    let vocab = build_vocab([&corpus]);
    let embedder = build_embedder(&EmbedSection::default(), None);
    let items =
        acoustic_items(&corpus, Some(&feats), &vocab, &embedder, cfg.acoustic.history, |_| true).map_err(fail)?;
    let stats = VarianceStats::from_targets(items.iter().filter_map(|i| i.targets.as_ref()));
    let model = AcousticModel::new(cfg.acoustic.clone(), vocab, stats, 11, DType::F32).map_err(fail)?;
    let log = train_acoustic(&model, &items, 2000, &cfg.optimizer, 8, 11, false, 500, &mut |_, _| Ok(()), 0)
        .map_err(fail)?;
    if items.len() != 8 {
        return Err(format!("{} overfit items", items.len()));
    }
    Ok((log.initial.total, log.final_.total, start.elapsed().as_secs_f64()))
}

fn end_to_end() -> Outcome {
    let demo = demo()?;
    let res = &demo.report["result"];
    let finetuned = demo.out.join("acoustic/finetune.ckpt").exists();
    let effect = &res["synth"]["label_effect"];
    let (fa, fb) = (effect["frames_a"].as_u64().unwrap_or(0), effect["frames_b"].as_u64().unwrap_or(0));
    let diff = effect["mean_abs_diff"].as_f64().unwrap_or(0.0);
    let labels_matter = effect["characters"].as_u64().unwrap_or(0) > 0 && (fa != fb || diff > 1e-2);

    let dir = tempfile::tempdir().map_err(fail)?;
    let (initial, last, overfit_secs) = overfit(dir.path())?;
    let drop = 1.0 - last / initial;
    let total = demo.seconds + overfit_secs;
    check(
        finetuned && drop >= 0.9 && labels_matter && total < 900.0,
        format!(
            "demo {:.0}s to finetuned checkpoint: {finetuned}; overfit loss {initial:.3} -> {last:.4} ({:.1}% drop, need 90%); \
             labelled region frames {fa} vs {fb}, mean |mel diff| {diff:.4} (tol 1e-2); total {total:.0}s (limit 900s)",
            demo.seconds,
            100.0 * drop
        ),
    )
}

// 10 ------------------------------------------------------------------------

const TINY: &str = r#"
profile = "desk"
[detector]
epochs = 3
[train]
pretrain_steps = 6
finetune_steps = 4
batch_size = 4
log_every = 2
"#;

fn artifact_hashes(out: &Path) -> Result<BTreeMap<String, String>, String> {
    let state: Value = serde_json::from_slice(&std::fs::read(out.join("state.json")).map_err(fail)?).map_err(fail)?;
    let mut m = BTreeMap::new();
    for (stage, rec) in state["stages"].as_object().ok_or("no stages")? {
        for (role, a) in rec["artifacts"].as_object().ok_or("no artifacts")? {
            m.insert(format!("{stage}/{role}"), a["sha256"].as_str().unwrap_or("").to_string());
        }
    }
    Ok(m)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(fail)?;
    let root = dir.path();
    let cfg_path = root.join("tiny.toml");
    std::fs::write(&cfg_path, TINY).map_err(fail)?;
    let hq = SyntheticConfig {
        conversations: 4,
        utterances_per_conversation: 3,
        test_conversations: 1,
        min_chars: 3,
        max_chars: 5,
        ..SyntheticConfig::default()
    };
    let lq = SyntheticConfig {
        conversations: 2,
        ..RunConfig::default().demo.low_quality
    };
    generate_synthetic_corpus(1, &hq).and_then(|c| c.write(&root.join("hq"))).map_err(fail)?;
    generate_synthetic_corpus(2, &lq).and_then(|c| c.write(&root.join("lq"))).map_err(fail)?;
    let stages = ["train-detector", "pseudo-label", "pretrain", "finetune"];
    let run = |out: &Path, args: &[&str]| -> Result<(), String> {
        let o = Command::new(env!("CARGO_BIN_EXE_spontts"))
            .arg("--config")
            .arg(&cfg_path)
            .arg("--out")
            .arg(out)
            .args(args)
            .env("RUST_LOG", "warn")
            .output()
            .map_err(fail)?;
        if o.status.success() {
            Ok(())
        } else {
            Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&o.stderr)))
        }
    };
    let full = |out: &Path| -> Result<(), String> {
        let (h, l) = (root.join("hq/manifest.jsonl"), root.join("lq/manifest.jsonl"));
        run(out, &["prepare", "--corpus", h.to_str().unwrap(), "--unlabeled", l.to_str().unwrap()])?;
        stages.iter().try_for_each(|s| run(out, &[s]))
    };
    let (a, b) = (root.join("a"), root.join("b"));
    full(&a)?;
    let first = artifact_hashes(&a)?;
    full(&b)?;
    let second = artifact_hashes(&b)?;
    for s in stages {
        run(&a, &[s])?;
    }
    let rerun = artifact_hashes(&a)?;
    let differing: Vec<&String> = first.keys().filter(|k| second.get(*k) != first.get(*k) || rerun.get(*k) != first.get(*k)).collect();
    check(
        differing.is_empty() && first.len() >= 8,
        format!("{} stage artifacts compared across two runs and in-place re-runs; differing: {differing:?}", first.len()),
    )
}

// ---------------------------------------------------------------------------

struct Demo {
    out: PathBuf,
    report: Value,
    seconds: f64,
}

static DEMO_DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
static DEMO: OnceLock<Result<Demo, String>> = OnceLock::new();

fn demo() -> Result<&'static Demo, String> {
    DEMO.get_or_init(|| {
        let out = DEMO_DIR.get_or_init(|| tempfile::tempdir().unwrap()).path().join("run");
        let start = Instant::now();
        let o = Command::new(env!("CARGO_BIN_EXE_spontts"))
            .args(["--profile", "desk", "--out"])
            .arg(&out)
            .arg("demo")
            .env("RUST_LOG", "warn")
            .output()
            .map_err(fail)?;
        let seconds = start.elapsed().as_secs_f64();
        if !o.status.success() {
            return Err(format!("demo exited with {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)));
        }
        let report = serde_json::from_slice(&o.stdout).map_err(fail)?;
        Ok(Demo { out, report, seconds })
    })
    .as_ref()
    .map_err(Clone::clone)
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "table_f1_consistency", table_f1),
        (2, "label_codec", label_codec),
        (3, "detector_oracle", detector_oracle),
        (4, "synthetic_corpus_detection", synthetic_detection),
        (5, "gradient_checks", gradient_checks),
        (6, "attention_invariants", attention_invariants),
        (7, "finetune_contract", finetune_contract),
        (8, "lr_schedule", schedule),
        (9, "end_to_end_desk_pipeline", end_to_end),
        (10, "determinism", determinism),
    ];
    let selected: Vec<_> = criteria
        .iter()
        .filter(|(_, name, _)| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()) || "acceptance".contains(f.as_str())))
        .collect();
    let mut failed = 0;
    for (n, name, f) in &selected {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n:>2} {name}: PASS ({secs:.1}s) {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} {name}: FAIL ({secs:.1}s) {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", selected.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
