//! Spontaneous-behavior label codec.
//!
//! Two behaviors are modeled, filled pause and prolongation. Both attach to
//! the character they follow, so labels live at character level and are
//! combined into one of four classes. For the acoustic model the character
//! sequence is expanded to phonemes; only the final phoneme of a character
//! carries the character's class, every other phoneme is `None`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct BehaviorFlags {
    pub filled_pause: bool,
    pub prolongation: bool,
}

impl BehaviorFlags {
    pub fn new(filled_pause: bool, prolongation: bool) -> Self {
        Self {
            filled_pause,
            prolongation,
        }
    }
}

/// Combined behavior class: 0 none, 1 filled pause, 2 prolongation, 3 both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
#[repr(u8)]
pub enum LabelClass {
    #[default]
    None = 0,
    FilledPause = 1,
    Prolongation = 2,
    Both = 3,
}

impl LabelClass {
    pub const ALL: [LabelClass; 4] = [
        LabelClass::None,
        LabelClass::FilledPause,
        LabelClass::Prolongation,
        LabelClass::Both,
    ];

    pub fn value(self) -> u8 {
        self as u8
    }

    pub fn is_positive(self) -> bool {
        self != LabelClass::None
    }

    pub fn flags(self) -> BehaviorFlags {
        let v = self.value();
        BehaviorFlags::new(v & 1 != 0, v & 2 != 0)
    }

    /// Class recovered from a real-valued regression estimate: round, then clamp to 0..=3.
    pub fn from_estimate(estimate: f64) -> Self {
        let r = if estimate.is_nan() { 0.0 } else { estimate.round() };
        let v = r.clamp(0.0, 3.0) as u8;
        LabelClass::ALL[v as usize]
    }
}

impl TryFrom<i64> for LabelClass {
    type Error = Error;

    fn try_from(v: i64) -> Result<Self> {
        match v {
            0..=3 => Ok(LabelClass::ALL[v as usize]),
            _ => Err(Error::LabelClass(v)),
        }
    }
}

impl TryFrom<u8> for LabelClass {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        LabelClass::try_from(v as i64)
    }
}

impl From<LabelClass> for u8 {
    fn from(c: LabelClass) -> u8 {
        c.value()
    }
}

impl std::fmt::Display for LabelClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.value())
    }
}

pub fn combine(flags: BehaviorFlags) -> LabelClass {
    match (flags.filled_pause, flags.prolongation) {
        (false, false) => LabelClass::None,
        (true, false) => LabelClass::FilledPause,
        (false, true) => LabelClass::Prolongation,
        (true, true) => LabelClass::Both,
    }
}

/// Inverse of [`combine`] over raw integer classes.
pub fn decompose(class: i64) -> Result<BehaviorFlags> {
    LabelClass::try_from(class).map(LabelClass::flags)
}

/// Per-character label sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CharLabelSeq(pub Vec<LabelClass>);

/// Per-phoneme label sequence; positive values only at the last phoneme of a character.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PhonemeLabelSeq(pub Vec<LabelClass>);

impl CharLabelSeq {
    pub fn zeros(n: usize) -> Self {
        Self(vec![LabelClass::None; n])
    }

    pub fn from_values(values: &[i64]) -> Result<Self> {
        values
            .iter()
            .map(|&v| LabelClass::try_from(v))
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> Vec<u8> {
        self.0.iter().map(|c| c.value()).collect()
    }

    pub fn positive_count(&self) -> usize {
        self.0.iter().filter(|c| c.is_positive()).count()
    }

    /// Binary per-character decisions for one behavior.
    pub fn behavior_mask(&self, behavior: crate::detector::Behavior) -> Vec<bool> {
        self.0.iter().map(|c| behavior.present_in(c.flags())).collect()
    }
}

impl PhonemeLabelSeq {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> Vec<u8> {
        self.0.iter().map(|c| c.value()).collect()
    }
}

fn check_grouping(grouping: &[usize], what: &str) -> Result<()> {
    if let Some(k) = grouping.iter().position(|&g| g == 0) {
        return Err(Error::Validation(format!(
            "{what}: character {k} has an empty phoneme group"
        )));
    }
    Ok(())
}

pub fn expand_char_to_phoneme(labels: &CharLabelSeq, grouping: &[usize]) -> Result<PhonemeLabelSeq> {
    if labels.len() != grouping.len() {
        return Err(Error::Shape(format!(
            "{} character labels but grouping has {} characters",
            labels.len(),
            grouping.len()
        )));
    }
    check_grouping(grouping, "expand")?;
    let total: usize = grouping.iter().sum();
    let mut out = Vec::with_capacity(total);
    for (&label, &g) in labels.0.iter().zip(grouping) {
        out.extend(std::iter::repeat_n(LabelClass::None, g - 1));
        out.push(label);
    }
    Ok(PhonemeLabelSeq(out))
}

pub fn contract_phoneme_to_char(labels: &PhonemeLabelSeq, grouping: &[usize]) -> Result<CharLabelSeq> {
    check_grouping(grouping, "contract")?;
    let total: usize = grouping.iter().sum();
    if labels.len() != total {
        return Err(Error::Shape(format!(
            "{} phoneme labels but grouping covers {} phonemes",
            labels.len(),
            total
        )));
    }
    let mut out = Vec::with_capacity(grouping.len());
    let mut start = 0;
    for (k, &g) in grouping.iter().enumerate() {
        let group = &labels.0[start..start + g];
        if let Some(off) = group[..g - 1].iter().position(|c| c.is_positive()) {
            return Err(Error::Validation(format!(
                "nonzero label at phoneme {} which is not the last phoneme of character {k}",
                start + off
            )));
        }
        out.push(group[g - 1]);
        start += g;
    }
    Ok(CharLabelSeq(out))
}

/// Character labels read from the last phoneme of each group, ignoring
/// positives elsewhere. Used to summarize predicted phoneme labels.
pub fn char_labels_from_final_phonemes(labels: &PhonemeLabelSeq, grouping: &[usize]) -> Result<CharLabelSeq> {
    let total: usize = grouping.iter().sum();
    if labels.len() != total {
        return Err(Error::Shape(format!(
            "{} phoneme labels but grouping covers {} phonemes",
            labels.len(),
            total
        )));
    }
    let mut end = 0;
    Ok(CharLabelSeq(
        grouping
            .iter()
            .map(|&g| {
                end += g;
                labels.0[end - 1]
            })
            .collect(),
    ))
}
