use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::Error;

/// The four emotions shared by the text and face channels.
///
/// The discriminant is the stable integer encoding used by every
/// serialized artifact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum EmotionLabel {
    Happiness = 0,
    Sadness = 1,
    Surprise = 2,
    Hate = 3,
}

pub const NUM_LABELS: usize = 4;

impl EmotionLabel {
    pub const ALL: [EmotionLabel; NUM_LABELS] = [
        EmotionLabel::Happiness,
        EmotionLabel::Sadness,
        EmotionLabel::Surprise,
        EmotionLabel::Hate,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            EmotionLabel::Happiness => "Happiness",
            EmotionLabel::Sadness => "Sadness",
            EmotionLabel::Surprise => "Surprise",
            EmotionLabel::Hate => "Hate",
        }
    }

    /// Index of the largest score, lowest index on ties.
    pub fn argmax(scores: &[f64; NUM_LABELS]) -> Self {
        let mut best = 0;
        for i in 1..NUM_LABELS {
            if scores[i] > scores[best] {
                best = i;
            }
        }
        Self::ALL[best]
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmotionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Parse(format!("unknown emotion label `{s}`")))
    }
}
