//! Simulated reference exams and the exam CSV format.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{argmax_first, bald_score, latents_for, CandidateGrid};
use crate::error::{BadsError, Result};
use crate::gp::ep::{ep_fit_f, EpConfig};
use crate::gp::kernel::HyperParams;
use crate::gp::map::{map_optimize, HyperPrior, MapConfig};
use crate::sim::ground_truth::GroundTruthAudiogram;
use crate::sim::halton::halton_2d;
use crate::stimulus::{
    octaves_to_frequency, Observation, Task, ToneStimulus, MAX_INTENSITY_DB, MIN_INTENSITY_DB,
};

pub const REFERENCE_EXAM_SIZE: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamConfig {
    pub halton_points: usize,
    pub bald_points: usize,
    pub grid: CandidateGrid,
    pub hyperprior: HyperPrior,
    pub ep: EpConfig,
    /// Budget for the hyperparameter refits during the BALD phase.
    pub interim_map: MapConfig,
    pub final_map: MapConfig,
    /// BALD picks between interim hyperparameter refits.
    pub refit_every: usize,
}

impl Default for ExamConfig {
    fn default() -> Self {
        ExamConfig {
            halton_points: 15,
            bald_points: 35,
            grid: CandidateGrid::default(),
            hyperprior: HyperPrior::default(),
            ep: EpConfig::default(),
            interim_map: MapConfig { restarts: 1, max_evals: 60, ..MapConfig::default() },
            final_map: MapConfig::default(),
            refit_every: 10,
        }
    }
}

/// A previous exam: task-1 observations and the MAP hyperparameters fitted
/// to them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceExam {
    pub observations: Vec<Observation>,
    pub generator_seed: u64,
    pub theta: HyperParams,
}

/// Halton tone `k` (1-based): base 2 spreads octaves over the grid's
/// frequency range, base 3 spreads intensity over [-10, 110] dB HL.
fn halton_tones(n: usize, grid: &CandidateGrid) -> Vec<ToneStimulus> {
    let lo = crate::stimulus::frequency_to_octaves(grid.frequencies[0]);
    let hi = crate::stimulus::frequency_to_octaves(*grid.frequencies.last().expect("non-empty grid"));
    halton_2d(n)
        .into_iter()
        .map(|(u, v)| ToneStimulus {
            frequency_hz: octaves_to_frequency(lo + u * (hi - lo)),
            intensity_db: MIN_INTENSITY_DB + v * (MAX_INTENSITY_DB - MIN_INTENSITY_DB),
            task: Task::Reference,
        })
        .collect()
}

/// Simulates a reference exam: Halton-placed tones, then tones maximizing
/// `I(y; f)` under the current fit, with responses drawn from `gt`.
/// Hyperparameters are refit periodically and once more at the end.
pub fn generate_reference_exam(gt: &GroundTruthAudiogram, seed: u64, config: &ExamConfig) -> Result<ReferenceExam> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obs: Vec<Observation> = halton_tones(config.halton_points, &config.grid)
        .iter()
        .map(|t| gt.sample_response(t, &mut rng))
        .collect();
    let candidates = config.grid.stimuli_for(Task::Reference);
    let mut theta = config.hyperprior.mode();
    let refit = |obs: &[Observation], theta: &HyperParams, map: &MapConfig| -> HyperParams {
        map_optimize(obs, &config.hyperprior, theta, map, &config.ep).map(|r| r.theta).unwrap_or(*theta)
    };
    theta = refit(&obs, &theta, &config.interim_map);

    for k in 0..config.bald_points {
        if k > 0 && k % config.refit_every.max(1) == 0 {
            theta = refit(&obs, &theta, &config.interim_map);
        }
        let state = ep_fit_f(&obs, &theta, &config.ep)?;
        let scores: Vec<f64> = latents_for(Some(&state), &theta, &candidates).iter().map(bald_score).collect();
        let i = argmax_first(&scores).ok_or_else(|| BadsError::Invalid("no BALD candidate".into()))?;
        obs.push(gt.sample_response(&candidates[i], &mut rng));
    }
    theta = refit(&obs, &theta, &config.final_map);
    Ok(ReferenceExam { observations: obs, generator_seed: seed, theta })
}

#[derive(Debug, Serialize, Deserialize)]
struct ExamRow {
    freq_hz: f64,
    intensity_db: f64,
    task: u8,
    response: u8,
}

/// Writes observations as `freq_hz,intensity_db,task,response`.
pub fn write_exam_csv<W: Write>(obs: &[Observation], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for o in obs {
        w.serialize(ExamRow {
            freq_hz: o.stimulus.frequency_hz,
            intensity_db: o.stimulus.intensity_db,
            task: o.stimulus.task.id(),
            response: o.heard as u8,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_exam_csv<R: Read>(reader: R) -> Result<Vec<Observation>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (line, row) in r.deserialize::<ExamRow>().enumerate() {
        let row = row?;
        let heard = match row.response {
            0 => false,
            1 => true,
            v => return Err(BadsError::Invalid(format!("row {}: response must be 0 or 1, got {v}", line + 1))),
        };
        let stimulus = ToneStimulus::new(row.freq_hz, row.intensity_db, Task::try_from(row.task)?)?;
        out.push(Observation::new(stimulus, heard));
    }
    Ok(out)
}
