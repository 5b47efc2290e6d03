//! Tone stimuli in the task-augmented input space and binary observations.

use serde::{Deserialize, Serialize};

use crate::error::{BadsError, Result};

pub const MIN_FREQUENCY_HZ: f64 = 125.0;
pub const MAX_FREQUENCY_HZ: f64 = 16_000.0;
pub const MIN_INTENSITY_DB: f64 = -10.0;
pub const MAX_INTENSITY_DB: f64 = 110.0;

/// Which exam a stimulus belongs to: the reference (old) exam or the
/// current (new) one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Task {
    Reference,
    Current,
}

impl Task {
    pub fn id(self) -> u8 {
        match self {
            Task::Reference => 1,
            Task::Current => 2,
        }
    }
}

impl TryFrom<u8> for Task {
    type Error = BadsError;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Task::Reference),
            2 => Ok(Task::Current),
            other => Err(BadsError::Domain(format!("task id must be 1 or 2, got {other}"))),
        }
    }
}

impl From<Task> for u8 {
    fn from(t: Task) -> u8 {
        t.id()
    }
}

/// A pure tone presented at some frequency and intensity, tagged with the
/// exam it belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToneStimulus {
    pub frequency_hz: f64,
    pub intensity_db: f64,
    pub task: Task,
}

impl ToneStimulus {
    pub fn new(frequency_hz: f64, intensity_db: f64, task: Task) -> Result<Self> {
        let s = ToneStimulus { frequency_hz, intensity_db, task };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(MIN_FREQUENCY_HZ..=MAX_FREQUENCY_HZ).contains(&self.frequency_hz) {
            return Err(BadsError::Domain(format!(
                "frequency {} Hz outside [{MIN_FREQUENCY_HZ}, {MAX_FREQUENCY_HZ}]",
                self.frequency_hz
            )));
        }
        if !(MIN_INTENSITY_DB..=MAX_INTENSITY_DB).contains(&self.intensity_db) {
            return Err(BadsError::Domain(format!(
                "intensity {} dB HL outside [{MIN_INTENSITY_DB}, {MAX_INTENSITY_DB}]",
                self.intensity_db
            )));
        }
        Ok(())
    }

    pub fn with_task(mut self, task: Task) -> Self {
        self.task = task;
        self
    }

    /// Frequency in octaves above 125 Hz.
    pub fn octaves(&self) -> f64 {
        frequency_to_octaves(self.frequency_hz)
    }

    /// Intensity mapped affinely so that [-10, 110] dB HL lands on [0, 1].
    pub fn normalized_intensity(&self) -> f64 {
        normalize_intensity(self.intensity_db)
    }

    pub fn features(&self) -> Features {
        Features { intensity: self.normalized_intensity(), octave: self.octaves(), task: self.task }
    }
}

pub fn frequency_to_octaves(frequency_hz: f64) -> f64 {
    (frequency_hz / MIN_FREQUENCY_HZ).log2()
}

pub fn octaves_to_frequency(octaves: f64) -> f64 {
    MIN_FREQUENCY_HZ * octaves.exp2()
}

pub fn normalize_intensity(intensity_db: f64) -> f64 {
    (intensity_db - MIN_INTENSITY_DB) / (MAX_INTENSITY_DB - MIN_INTENSITY_DB)
}

/// Kernel-space coordinates of a stimulus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Features {
    pub intensity: f64,
    pub octave: f64,
    pub task: Task,
}

/// A stimulus together with the subject's binary response (`true` = heard).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub stimulus: ToneStimulus,
    pub heard: bool,
}

impl Observation {
    pub fn new(stimulus: ToneStimulus, heard: bool) -> Self {
        Observation { stimulus, heard }
    }

    /// Signed label used by the probit sites: +1 heard, -1 not heard.
    pub fn sign(&self) -> f64 {
        if self.heard {
            1.0
        } else {
            -1.0
        }
    }
}
