//! Pure-tone-average hearing-loss classes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{BadsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HearingLossClass {
    Normal,
    Slight,
    Mild,
    Moderate,
    ModeratelySevere,
    Severe,
    Profound,
}

/// Upper PTA bound (dB HL) of every class but the last; values above a
/// bound belong to the next class.
const UPPER_BOUNDS: [f64; 6] = [15.0, 25.0, 40.0, 55.0, 70.0, 90.0];

impl HearingLossClass {
    pub const ALL: [HearingLossClass; 7] = [
        HearingLossClass::Normal,
        HearingLossClass::Slight,
        HearingLossClass::Mild,
        HearingLossClass::Moderate,
        HearingLossClass::ModeratelySevere,
        HearingLossClass::Severe,
        HearingLossClass::Profound,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            HearingLossClass::Normal => "normal",
            HearingLossClass::Slight => "slight",
            HearingLossClass::Mild => "mild",
            HearingLossClass::Moderate => "moderate",
            HearingLossClass::ModeratelySevere => "moderately_severe",
            HearingLossClass::Severe => "severe",
            HearingLossClass::Profound => "profound",
        }
    }

    /// Half-open PTA interval `(lo, hi]` in dB HL; unbounded at the ends.
    pub fn pta_range(self) -> (f64, f64) {
        let i = self.index();
        let lo = if i == 0 { f64::NEG_INFINITY } else { UPPER_BOUNDS[i - 1] };
        let hi = if i == 6 { f64::INFINITY } else { UPPER_BOUNDS[i] };
        (lo, hi)
    }
}

impl fmt::Display for HearingLossClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HearingLossClass {
    type Err = BadsError;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.to_ascii_lowercase().chars().filter(|c| c.is_ascii_alphabetic()).collect();
        Ok(match key.as_str() {
            "normal" => HearingLossClass::Normal,
            "slight" => HearingLossClass::Slight,
            "mild" => HearingLossClass::Mild,
            "moderate" => HearingLossClass::Moderate,
            "moderatelysevere" | "msevere" | "modsevere" => HearingLossClass::ModeratelySevere,
            "severe" => HearingLossClass::Severe,
            "profound" => HearingLossClass::Profound,
            _ => return Err(BadsError::Invalid(format!("unknown hearing-loss class '{s}'"))),
        })
    }
}

/// Pure-tone average of the thresholds at 500 Hz, 1 kHz and 2 kHz.
pub fn pta(thresholds_500_1k_2k: [f64; 3]) -> f64 {
    thresholds_500_1k_2k.iter().sum::<f64>() / 3.0
}

pub fn classify(pta_db: f64) -> HearingLossClass {
    let i = UPPER_BOUNDS.iter().position(|&b| pta_db <= b).unwrap_or(6);
    HearingLossClass::ALL[i]
}
