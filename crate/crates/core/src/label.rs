use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frame-level class. `Background` marks frames with no measurable structure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Head = 0,
    Abdomen = 1,
    Femur = 2,
    Background = 3,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 4] = [
        ClassLabel::Head,
        ClassLabel::Abdomen,
        ClassLabel::Femur,
        ClassLabel::Background,
    ];

    pub const FOREGROUND: [ClassLabel; 3] =
        [ClassLabel::Head, ClassLabel::Abdomen, ClassLabel::Femur];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("class index {i} out of range")))
    }

    pub fn is_foreground(self) -> bool {
        self != ClassLabel::Background
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Head => "head",
            ClassLabel::Abdomen => "abdomen",
            ClassLabel::Femur => "femur",
            ClassLabel::Background => "background",
        }
    }
}

impl std::fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown class label `{s}`")))
    }
}
