//! Canonical audiograms and the simulated responder.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BadsError, Result};
use crate::math::normal_cdf;
use crate::sim::classes::HearingLossClass;
use crate::sim::spline::NaturalCubicSpline;
use crate::stimulus::{frequency_to_octaves, Observation, ToneStimulus};

pub const ANCHOR_FILE_VERSION: u32 = 1;
pub const ANCHOR_FREQUENCIES_HZ: [f64; 7] = [500.0, 1000.0, 2000.0, 3000.0, 4000.0, 6000.0, 8000.0];
pub const DEFAULT_SPREAD_DB: f64 = 5.0;

const EMBEDDED_ANCHORS: &str = include_str!("../../data/canonical_audiograms.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorEntry {
    pub class: HearingLossClass,
    pub frequencies: Vec<f64>,
    pub thresholds: Vec<f64>,
}

/// Versioned anchor file: one threshold curve per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub version: u32,
    #[serde(default = "default_spread")]
    pub spread_db: f64,
    pub audiograms: Vec<AnchorEntry>,
}

fn default_spread() -> f64 {
    DEFAULT_SPREAD_DB
}

impl AnchorSet {
    /// Anchors shipped with the crate.
    pub fn embedded() -> Self {
        Self::from_json(EMBEDDED_ANCHORS).expect("embedded anchor file is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let set: AnchorSet = serde_json::from_str(text)?;
        if set.version != ANCHOR_FILE_VERSION {
            return Err(BadsError::Invalid(format!("unsupported anchor file version {}", set.version)));
        }
        for class in HearingLossClass::ALL {
            set.entry(class)?;
        }
        Ok(set)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn entry(&self, class: HearingLossClass) -> Result<&AnchorEntry> {
        self.audiograms
            .iter()
            .find(|e| e.class == class)
            .ok_or_else(|| BadsError::Invalid(format!("anchor file has no entry for {class}")))
    }

    pub fn audiogram(&self, class: HearingLossClass, spread_db: Option<f64>) -> Result<GroundTruthAudiogram> {
        let e = self.entry(class)?;
        GroundTruthAudiogram::new(class, e.frequencies.clone(), e.thresholds.clone(), spread_db.unwrap_or(self.spread_db))
    }
}

/// Threshold curve over frequency plus a probit psychometric slope in
/// intensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthAudiogram {
    pub class: HearingLossClass,
    pub anchor_frequencies: Vec<f64>,
    pub anchor_thresholds: Vec<f64>,
    pub spread_db: f64,
    curve: NaturalCubicSpline,
}

impl GroundTruthAudiogram {
    pub fn new(class: HearingLossClass, frequencies: Vec<f64>, thresholds: Vec<f64>, spread_db: f64) -> Result<Self> {
        if frequencies.len() != ANCHOR_FREQUENCIES_HZ.len() {
            return Err(BadsError::Invalid(format!("expected 7 anchor frequencies, got {}", frequencies.len())));
        }
        if !(spread_db > 0.0 && spread_db.is_finite()) {
            return Err(BadsError::Domain(format!("psychometric spread must be positive, got {spread_db}")));
        }
        let octaves = frequencies.iter().map(|f| frequency_to_octaves(*f)).collect();
        let curve = NaturalCubicSpline::new(octaves, thresholds.clone())?;
        Ok(GroundTruthAudiogram { class, anchor_frequencies: frequencies, anchor_thresholds: thresholds, spread_db, curve })
    }

    /// Threshold in dB HL, interpolated over log frequency.
    pub fn threshold_at(&self, frequency_hz: f64) -> f64 {
        self.curve.eval(frequency_to_octaves(frequency_hz))
    }

    /// Anchor thresholds at 500 Hz, 1 kHz and 2 kHz.
    pub fn pta_anchors(&self) -> [f64; 3] {
        let at = |f: f64| {
            self.anchor_frequencies
                .iter()
                .position(|x| (*x - f).abs() < 1e-9)
                .map(|i| self.anchor_thresholds[i])
                .unwrap_or_else(|| self.threshold_at(f))
        };
        [at(500.0), at(1000.0), at(2000.0)]
    }

    pub fn response_probability(&self, tone: &ToneStimulus) -> f64 {
        normal_cdf((tone.intensity_db - self.threshold_at(tone.frequency_hz)) / self.spread_db)
    }

    pub fn sample_response<R: Rng + ?Sized>(&self, tone: &ToneStimulus, rng: &mut R) -> Observation {
        let p = self.response_probability(tone);
        Observation::new(*tone, rng.gen::<f64>() < p)
    }
}

/// Canonical audiogram of `class` from the embedded anchors and the default
/// spread.
pub fn canonical_audiogram(class: HearingLossClass) -> GroundTruthAudiogram {
    AnchorSet::embedded().audiogram(class, None).expect("embedded anchors are valid")
}
