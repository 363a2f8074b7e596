use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use spontts::acoustic::AcousticModel;
use spontts::config::RunConfig;
use spontts::corpus::{generate_synthetic_corpus, load_corpus, Corpus, Split};
use spontts::error::{Error, Result};
use spontts::features::read_mel;
use spontts::labels::{CharLabelSeq, LabelClass};
use spontts::pipeline::{
    evaluate_detectors, label_region_difference, parse_labels, prepare, stage_extract_pseudo_labels, stage_finetune,
    stage_pretrain, stage_train_detectors, synthesis_item, synthesize_to, AdHocText, PrepareReport, RegionDiff, Run,
    Stage, SynthSidecar, SynthSource, FINETUNE_CKPT, HIGH_QUALITY, LOW_QUALITY,
};
use spontts::util::write_atomic;

use crate::{Cli, Command, SynthArgs};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    schema_version: u32,
    command: &'a str,
    profile: spontts::config::Profile,
    config_hash: &'a str,
    seeds: BTreeMap<String, u64>,
    result: T,
}

fn emit<T: Serialize>(run: &Run, command: &str, seeds: BTreeMap<String, u64>, result: T) -> Result<()> {
    let mut all = BTreeMap::from([("run".to_string(), run.config.seed)]);
    all.extend(seeds);
    let report = Report {
        schema_version: REPORT_SCHEMA_VERSION,
        command,
        profile: run.config.profile,
        config_hash: &run.config_hash,
        seeds: all,
        result,
    };
    let text = serde_json::to_string_pretty(&report)?;
    let dir = run.path("reports");
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
    write_atomic(&dir.join(format!("{command}.json")), text.as_bytes())?;
    println!("{text}");
    Ok(())
}

fn stage_seeds(run: &Run, stage: Stage) -> BTreeMap<String, u64> {
    run.state.stages.get(&stage).map(|r| r.seeds.clone()).unwrap_or_default()
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = RunConfig::resolve(cli.config.as_deref(), cli.profile, cli.seed)?;
    let mut run = Run::open(&cli.out, cfg)?;
    match &cli.command {
        Command::Prepare { corpus, unlabeled } => cmd_prepare(&mut run, corpus.as_deref(), unlabeled.as_deref()),
        Command::TrainDetector => {
            let r = stage_train_detectors(&mut run)?;
            emit(&run, "train-detector", stage_seeds(&run, Stage::DetectorsTrained), r)
        }
        Command::PseudoLabel => {
            let r = stage_extract_pseudo_labels(&mut run)?;
            emit(&run, "pseudo-label", stage_seeds(&run, Stage::PseudoLabeled), r)
        }
        Command::Pretrain => {
            let r = stage_pretrain(&mut run)?;
            emit(&run, "pretrain", stage_seeds(&run, Stage::Pretrained), r)
        }
        Command::Finetune => {
            let r = stage_finetune(&mut run)?;
            emit(&run, "finetune", stage_seeds(&run, Stage::Finetuned), r)
        }
        Command::Synth(args) => {
            let r = cmd_synth(&run, args)?;
            emit(&run, "synth", BTreeMap::new(), r)
        }
        Command::Evaluate => {
            let rows = evaluate_detectors(&run)?;
            emit(&run, "evaluate", stage_seeds(&run, Stage::DetectorsTrained), rows)
        }
        Command::Demo => cmd_demo(&mut run),
    }
}

#[derive(Serialize)]
struct PrepareResult {
    #[serde(skip_serializing_if = "Option::is_none")]
    high_quality: Option<PrepareReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    low_quality: Option<PrepareReport>,
}

fn prepare_both(run: &mut Run, corpus: Option<&Path>, unlabeled: Option<&Path>) -> Result<PrepareResult> {
    if corpus.is_none() && unlabeled.is_none() {
        return Err(Error::Validation("prepare needs --corpus and/or --unlabeled".into()));
    }
    let mut res = PrepareResult {
        high_quality: None,
        low_quality: None,
    };
    if let Some(m) = corpus {
        res.high_quality = Some(prepare(run, HIGH_QUALITY, m)?);
    }
    if let Some(m) = unlabeled {
        res.low_quality = Some(prepare(run, LOW_QUALITY, m)?);
    }
    Ok(res)
}

fn failed(res: &PrepareResult) -> usize {
    [&res.high_quality, &res.low_quality].iter().filter_map(|r| r.as_ref()).map(|r| r.failed).sum()
}

fn cmd_prepare(run: &mut Run, corpus: Option<&Path>, unlabeled: Option<&Path>) -> Result<()> {
    let res = prepare_both(run, corpus, unlabeled)?;
    let n = failed(&res);
    emit(run, "prepare", BTreeMap::new(), &res)?;
    if n > 0 {
        return Err(Error::Validation(format!("{n} utterance(s) failed feature extraction")));
    }
    Ok(())
}

fn checkpoint_path(run: &Run, given: Option<&Path>) -> Result<PathBuf> {
    let path = given.map(Path::to_path_buf).unwrap_or_else(|| run.path(FINETUNE_CKPT));
    if !path.exists() {
        return Err(Error::Precondition(format!(
            "checkpoint {} does not exist (run finetune first)",
            path.display()
        )));
    }
    Ok(path)
}

/// Prepared corpora, high-quality first.
fn prepared_corpora(run: &Run) -> Result<Vec<Corpus>> {
    let mut out = Vec::new();
    for role in [HIGH_QUALITY, LOW_QUALITY] {
        if let Some(rec) = run.state.corpora.get(role) {
            out.push(load_corpus(&rec.manifest)?);
        }
    }
    if out.is_empty() {
        return Err(Error::Precondition("no corpus has been prepared (run prepare first)".into()));
    }
    Ok(out)
}

fn cmd_synth(run: &Run, args: &SynthArgs) -> Result<SynthSidecar> {
    let ckpt = checkpoint_path(run, args.checkpoint.as_deref())?;
    let (model, _) = AcousticModel::load(&ckpt, None)?;
    let embed_cache = Some(run.path("embeddings"));
    let (item, stem) = match (&args.utterance, &args.text, &args.phonemes) {
        (Some(id), _, _) => {
            let corpora = prepared_corpora(run)?;
            let corpus = corpora
                .iter()
                .find(|c| c.utterances().any(|u| &u.id == id))
                .ok_or_else(|| Error::Validation(format!("unknown utterance id '{id}'")))?;
            let src = SynthSource::Utterance { corpus, utt_id: id };
            (synthesis_item(&model, &run.config, embed_cache, &src)?, id.replace('/', "_"))
        }
        (None, Some(text), Some(phonemes)) => {
            let t = AdHocText::parse(text, phonemes)?;
            (synthesis_item(&model, &run.config, embed_cache, &SynthSource::Text(&t))?, "adhoc".to_string())
        }
        _ => return Err(Error::Validation("synth needs --utterance or --text with --phonemes".into())),
    };
    let labels = args.labels.as_deref().map(parse_labels).transpose()?;
    let vocoder = (!args.mel_only).then_some(args.vocoder.as_deref());
    let stem = args.name.clone().unwrap_or(stem);
    synthesize_to(
        &model,
        &ckpt,
        &item,
        labels.as_ref(),
        &run.config.features,
        &run.path("synth"),
        &stem,
        vocoder,
    )
}

#[derive(Serialize)]
struct DemoSynth {
    utt_id: String,
    labels: SynthSidecar,
    zeros: SynthSidecar,
    predicted: SynthSidecar,
    /// Effect of the labels on the labelled characters (labels vs zeros).
    label_effect: RegionDiff,
}

#[derive(Serialize)]
struct DemoResult {
    prepare: PrepareResult,
    detectors: Vec<spontts::pipeline::DetectorSummary>,
    pseudo_labels: spontts::pipeline::PseudoSummary,
    pretrain: spontts::pipeline::AcousticStageReport,
    finetune: spontts::pipeline::AcousticStageReport,
    evaluation: Vec<spontts::pipeline::EvaluationRow>,
    synth: DemoSynth,
    /// Wall-clock seconds per step.
    seconds: BTreeMap<&'static str, f64>,
}

fn cmd_demo(run: &mut Run) -> Result<()> {
    let demo = run.config.demo.clone();
    let hq_dir = run.path("demo/high_quality");
    let lq_dir = run.path("demo/low_quality");
    log::info!("writing synthetic corpora under {}", run.path("demo").display());
    let hq = generate_synthetic_corpus(demo.high_quality_seed, &demo.high_quality)?.write(&hq_dir)?;
    generate_synthetic_corpus(demo.low_quality_seed, &demo.low_quality)?.write(&lq_dir)?;

    let mut seconds = BTreeMap::new();
    let mut clock = Instant::now();
    let mut lap = |name: &'static str| {
        seconds.insert(name, clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };
    let prep = prepare_both(run, Some(&hq_dir.join("manifest.jsonl")), Some(&lq_dir.join("manifest.jsonl")))?;
    let n = failed(&prep);
    if n > 0 {
        return Err(Error::Validation(format!("{n} utterance(s) failed feature extraction")));
    }
    lap("prepare");
    let detectors = stage_train_detectors(run)?;
    lap("train_detector");
    let pseudo_labels = stage_extract_pseudo_labels(run)?;
    lap("pseudo_label");
    let pretrain = stage_pretrain(run)?;
    lap("pretrain");
    let finetune = stage_finetune(run)?;
    lap("finetune");
    let evaluation = evaluate_detectors(run)?;
    lap("evaluate");
    let synth = demo_synth(run, &hq, &demo.synth_utterance)?;
    lap("synth");

    let mut seeds = BTreeMap::new();
    for s in Stage::ALL {
        seeds.extend(stage_seeds(run, s));
    }
    let result = DemoResult {
        prepare: prep,
        detectors,
        pseudo_labels,
        pretrain,
        finetune,
        evaluation,
        synth,
        seconds,
    };
    emit(run, "demo", seeds, result)
}

/// Synthesizes one labelled test utterance with its own labels, with
/// all-zero labels and with predicted labels.
fn demo_synth(run: &Run, hq: &Corpus, wanted: &str) -> Result<DemoSynth> {
    let utt = hq
        .utterances()
        .find(|u| {
            if wanted.is_empty() {
                hq.split_of(&u.id) == Split::Test
                    && u.char_labels.as_ref().is_some_and(|l| l.0.iter().any(|c| *c != LabelClass::None))
            } else {
                u.id == wanted
            }
        })
        .ok_or_else(|| Error::Validation(format!("no demo utterance '{wanted}' with labels")))?;
    let labels = utt
        .char_labels
        .clone()
        .ok_or_else(|| Error::Validation(format!("demo utterance '{}' has no labels", utt.id)))?;
    let zeros = CharLabelSeq(vec![LabelClass::None; labels.len()]);

    let ckpt = checkpoint_path(run, None)?;
    let (model, _) = AcousticModel::load(&ckpt, None)?;
    let src = SynthSource::Utterance { corpus: hq, utt_id: &utt.id };
    let item = synthesis_item(&model, &run.config, Some(run.path("embeddings")), &src)?;
    let dir = run.path("synth");
    let stem = utt.id.replace('/', "_");
    let f = &run.config.features;
    let with = synthesize_to(&model, &ckpt, &item, Some(&labels), f, &dir, &format!("{stem}.labels"), Some(None))?;
    let without = synthesize_to(&model, &ckpt, &item, Some(&zeros), f, &dir, &format!("{stem}.zeros"), Some(None))?;
    let predicted = synthesize_to(&model, &ckpt, &item, None, f, &dir, &format!("{stem}.predicted"), Some(None))?;
    let label_effect = label_region_difference(
        &read_mel(&with.mel)?.frames,
        &with.durations,
        &read_mel(&without.mel)?.frames,
        &without.durations,
        &utt.grouping,
        &labels,
    )?;
    Ok(DemoSynth {
        utt_id: utt.id.clone(),
        labels: with,
        zeros: without,
        predicted,
        label_effect,
    })
}
