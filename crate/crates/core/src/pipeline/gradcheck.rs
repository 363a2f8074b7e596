use candle_core::{DType, Device, Tensor, Var};
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acoustic::{
    AcousticConfig, AcousticItem, AcousticModel, AcousticTargets, LabelHead, LossComponents, PhonemeVocab,
    VarianceStats,
};
use crate::corpus::EMBEDDING_DIM;
use crate::detector::{Behavior, CharVocab, Detector, DetectorConfig, DetectorExample, InputType, MelStats};
use crate::error::{Error, Result};
use crate::features::CharSpans;
use crate::labels::{LabelClass, PhonemeLabelSeq};
use crate::nn::{check_gradients, Ctx, GradCheckReport, Linear, ParamStore};
use crate::util::keyed_rng;

/// Loss heads covered by [`gradient_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradHead {
    /// Squared error of a single linear layer.
    Linear,
    LabelMse,
    LabelCe,
    DetectorCe,
    Duration,
    Pitch,
    Energy,
    Mel,
}

impl GradHead {
    pub const ALL: [GradHead; 8] = [
        GradHead::Linear,
        GradHead::LabelMse,
        GradHead::LabelCe,
        GradHead::DetectorCe,
        GradHead::Duration,
        GradHead::Pitch,
        GradHead::Energy,
        GradHead::Mel,
    ];

    /// Largest relative error accepted for this head.
    pub fn tolerance(self) -> f64 {
        match self {
            GradHead::Linear => 1e-8,
            _ => 1e-4,
        }
    }
}

impl std::str::FromStr for GradHead {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Validation(format!("unknown gradient head '{s}'")))
    }
}

const ENTRIES_PER_TENSOR: usize = 4;

fn all_vars(store: &ParamStore) -> Vec<(String, Var)> {
    store.vars().map(|(n, v)| (n.to_string(), v.clone())).collect()
}

/// Finite-difference check of one loss head on a small double-precision
/// instance with every parameter tensor as a target.
pub fn gradient_check(head: GradHead, eps: f64) -> Result<GradCheckReport> {
    if !(eps > 0.0) {
        return Err(Error::Validation("eps must be positive".into()));
    }
    match head {
        GradHead::Linear => {
            let mut store = ParamStore::new(DType::F64, 5);
            let lin = Linear::new(&mut store, "head", 6, 3, true)?;
            let mut rng = keyed_rng(5, "gradcheck-linear");
            let x = Tensor::from_vec((0..24).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>(), (4, 6), &Device::Cpu)?;
            let y = Tensor::from_vec((0..12).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>(), (4, 3), &Device::Cpu)?;
            let loss = || Ok(lin.forward(&x)?.sub(&y)?.sqr()?.mean_all()?);
            check_gradients(&all_vars(&store), &loss, eps, ENTRIES_PER_TENSOR)
        }
        GradHead::DetectorCe => {
            let cfg = DetectorConfig {
                input_type: InputType::TextSpeech,
                cnn_channels: 3,
                hidden: 3,
                char_embedding_dim: 2,
                n_mels: 4,
                ..DetectorConfig::for_behavior(Behavior::FilledPause)
            };
            let vocab = CharVocab::build(&["a".to_string(), "b".to_string()]);
            let det = Detector::new(cfg, vocab, MelStats::identity(4), 3, DType::F64)?;
            let ex = DetectorExample {
                utt_id: "g".into(),
                mel: Array2::from_shape_fn((9, 4), |(i, j)| ((i as f64 * 0.37 + j as f64 * 1.3).sin()) as f32),
                spans: CharSpans(vec![(0, 4), (4, 9)]),
                chars: vec!["a".into(), "b".into()],
                labels: Some(vec![true, false]),
            };
            let loss = || det.loss(&[&ex], [0.75, 1.5]);
            check_gradients(&all_vars(det.store()), &loss, eps, ENTRIES_PER_TENSOR)
        }
        _ => {
            let label_head = if head == GradHead::LabelCe {
                LabelHead::Classification
            } else {
                LabelHead::Regression
            };
            let cfg = tiny_acoustic_config(label_head);
            let items: Vec<AcousticItem> = (0..3).map(|s| toy_item(s, 3 + s as usize, &cfg)).collect();
            let stats = VarianceStats::from_targets(items.iter().filter_map(|i| i.targets.as_ref()));
            let vocab = PhonemeVocab::build(&["a", "e", "k", "n", "o", "s"].map(String::from));
            let model = AcousticModel::new(cfg, vocab, stats, 11, DType::F64)?;
            let batch = model.batch(&[&items[0], &items[1]])?;
            let pick = move |l: LossComponents| match head {
                GradHead::Duration => l.duration,
                GradHead::Pitch => l.pitch,
                GradHead::Energy => l.energy,
                GradHead::Mel => l.mel,
                _ => l.label,
            };
            let loss = || Ok(pick(model.forward_train(&batch, &mut Ctx::eval())?));
            check_gradients(&all_vars(model.store()), &loss, eps, ENTRIES_PER_TENSOR)
        }
    }
}

fn tiny_acoustic_config(label_head: LabelHead) -> AcousticConfig {
    AcousticConfig {
        d_model: 8,
        heads: 2,
        encoder_layers: 1,
        decoder_layers: 1,
        ffn_filter: 12,
        ffn_kernel: 3,
        dropout: 0.0,
        variance_filter: 6,
        variance_kernel: 3,
        variance_dropout: 0.0,
        pitch_bins: 4,
        energy_bins: 4,
        history: 2,
        history_hidden: 5,
        n_mels: 6,
        label_head,
        ..AcousticConfig::default()
    }
}

fn toy_item(seed: u64, chars: usize, cfg: &AcousticConfig) -> AcousticItem {
    let mut rng = keyed_rng(seed, "gradcheck-item");
    let grouping: Vec<usize> = (0..chars).map(|_| rng.random_range(1..=2)).collect();
    let n: usize = grouping.iter().sum();
    let phoneme_ids: Vec<u32> = (0..n).map(|_| rng.random_range(4..10)).collect();
    let mut conversation_ids = vec![PhonemeVocab::CLS];
    conversation_ids.extend((0..4).map(|_| rng.random_range(4..10u32)));
    conversation_ids.push(PhonemeVocab::SEP);
    conversation_ids.extend(phoneme_ids.iter().copied());
    let durations: Vec<usize> = (0..n).map(|_| rng.random_range(1..4)).collect();
    let t: usize = durations.iter().sum();
    let labels = PhonemeLabelSeq((0..n).map(|_| LabelClass::ALL[rng.random_range(0..4)]).collect());
    AcousticItem {
        utt_id: format!("g{seed}"),
        phoneme_ids,
        grouping,
        conversation_ids,
        history: Array2::from_shape_fn((cfg.window(), EMBEDDING_DIM), |_| rng.random_range(-1.0..1.0)),
        targets: Some(AcousticTargets {
            mel: Array2::from_shape_fn((t, cfg.n_mels), |_| rng.random_range(-4.0..1.0)),
            durations,
            pitch: (0..n).map(|_| if rng.random_bool(0.7) { rng.random_range(80.0..300.0) } else { 0.0 }).collect(),
            energy: (0..n).map(|_| rng.random_range(0.0..2.0)).collect(),
            labels,
        }),
    }
}
