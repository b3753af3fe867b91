//! Privacy-concern scores and labels from Five-Factor-Model personality data.
//!
//! Traits are always ordered from highest to lowest privacy concern:
//! NEU, OPN, CON, AGR, EXT.

use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Divisor of the gold concern score.
pub const GOLD_NORMALIZER: f64 = 125.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Trait {
    #[serde(rename = "NEU")]
    Neuroticism,
    #[serde(rename = "OPN")]
    Openness,
    #[serde(rename = "CON")]
    Conscientiousness,
    #[serde(rename = "AGR")]
    Agreeableness,
    #[serde(rename = "EXT")]
    Extraversion,
}

impl Trait {
    pub fn code(self) -> &'static str {
        match self {
            Trait::Neuroticism => "NEU",
            Trait::Openness => "OPN",
            Trait::Conscientiousness => "CON",
            Trait::Agreeableness => "AGR",
            Trait::Extraversion => "EXT",
        }
    }
}

impl fmt::Display for Trait {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

const ORDER: [Trait; 5] = [
    Trait::Neuroticism,
    Trait::Openness,
    Trait::Conscientiousness,
    Trait::Agreeableness,
    Trait::Extraversion,
];

/// Traits from highest to lowest privacy concern.
pub fn concern_ordering() -> [Trait; 5] {
    ORDER
}

/// Inclusive range of valid questionnaire scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBounds {
    pub lo: f64,
    pub hi: f64,
}

impl Default for ScoreBounds {
    fn default() -> Self {
        Self { lo: 1.0, hi: 5.0 }
    }
}

impl ScoreBounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(invalid(format!("invalid score bounds [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

/// Continuous trait scores in concern order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraitScores([f64; 5]);

impl TraitScores {
    pub fn new(values: [f64; 5], bounds: ScoreBounds) -> Result<Self> {
        for (t, v) in ORDER.iter().zip(values) {
            if !bounds.contains(v) {
                return Err(invalid(format!(
                    "s{t} = {v} outside [{}, {}]",
                    bounds.lo, bounds.hi
                )));
            }
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> [f64; 5] {
        self.0
    }

    pub fn get(&self, t: Trait) -> f64 {
        self.0[ORDER.iter().position(|&o| o == t).expect("all traits ordered")]
    }
}

/// Binary (yes/no) trait labels in concern order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TraitLabels(pub [bool; 5]);

impl TraitLabels {
    pub fn get(&self, t: Trait) -> bool {
        self.0[ORDER.iter().position(|&o| o == t).expect("all traits ordered")]
    }

    /// All 32 label combinations, NEU as the most significant bit.
    pub fn all() -> impl Iterator<Item = TraitLabels> {
        (0u8..32).map(|bits| {
            let mut l = [false; 5];
            for (i, slot) in l.iter_mut().enumerate() {
                *slot = bits & (1 << (4 - i)) != 0;
            }
            TraitLabels(l)
        })
    }
}

/// Per-trait weights in concern order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightVector([f64; 5]);

impl Default for WeightVector {
    fn default() -> Self {
        Self([5.0, 4.7, 4.3, 4.1, 1.0])
    }
}

impl WeightVector {
    pub fn new(weights: [f64; 5]) -> Result<Self> {
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(invalid("weights must be strictly positive"));
        }
        Ok(Self(weights))
    }

    pub fn values(&self) -> [f64; 5] {
        self.0
    }

    pub fn dot(&self, y: &[f64; 5]) -> f64 {
        self.0.iter().zip(y).map(|(v, y)| v * y).sum()
    }
}

/// A concern degree in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ConcernScore(f64);

impl ConcernScore {
    pub fn new(r: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&r) {
            return Err(invalid(format!("concern score {r} outside [0, 1]")));
        }
        Ok(Self(r))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for ConcernScore {
    type Error = Error;

    fn try_from(r: f64) -> Result<Self> {
        Self::new(r)
    }
}

impl From<ConcernScore> for f64 {
    fn from(s: ConcernScore) -> f64 {
        s.0
    }
}

/// Categorical concern level. The discriminants double as class indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConcernLabel {
    LoPC = 0,
    MePC = 1,
    HiPC = 2,
}

impl ConcernLabel {
    pub const ALL: [ConcernLabel; 3] = [ConcernLabel::LoPC, ConcernLabel::MePC, ConcernLabel::HiPC];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ConcernLabel::LoPC => "LoPC",
            ConcernLabel::MePC => "MePC",
            ConcernLabel::HiPC => "HiPC",
        }
    }
}

impl fmt::Display for ConcernLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConcernLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "LoPC" => Ok(ConcernLabel::LoPC),
            "MePC" => Ok(ConcernLabel::MePC),
            "HiPC" => Ok(ConcernLabel::HiPC),
            other => Err(invalid(format!("unknown concern label `{other}`"))),
        }
    }
}

/// Unclamped `(1/125)·Σ v_i·s_i`.
pub fn gold_raw(s: &TraitScores, v: &WeightVector) -> f64 {
    v.dot(&s.0) / GOLD_NORMALIZER
}

/// Gold regression value of a user. Values outside [0, 1] (only possible
/// with non-default bounds) are clamped with a warning.
pub fn gold_score(s: &TraitScores, v: &WeightVector) -> ConcernScore {
    let raw = gold_raw(s, v);
    if !(0.0..=1.0).contains(&raw) {
        warn!("gold score {raw} outside [0, 1], clamping");
    }
    ConcernScore(raw.clamp(0.0, 1.0))
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Concern from five predicted trait scores: `sigmoid(Σ v_i·y_i)`.
pub fn sigmoid_score(y: &[f64; 5], v: &WeightVector) -> Result<ConcernScore> {
    if y.iter().any(|x| x.is_nan()) {
        return Err(invalid("predicted trait scores contain NaN"));
    }
    let z = v.dot(y);
    if z.is_nan() {
        return Err(invalid("weighted trait sum is undefined"));
    }
    Ok(ConcernScore(sigmoid(z)))
}

/// Concern category from trait labels. CON never matters.
pub fn derive_label(l: &TraitLabels) -> ConcernLabel {
    let [neu, opn, _con, agr, ext] = l.0;
    if neu && opn && !agr && !ext {
        ConcernLabel::HiPC
    } else if !neu && !opn && agr && ext {
        ConcernLabel::LoPC
    } else {
        ConcernLabel::MePC
    }
}
