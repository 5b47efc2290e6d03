//! WebAssembly bindings for the static demo page: start a simulated
//! comparison, answer tones by hand or with the simulated listener, and read
//! the predictive surfaces of both models.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use bads_core::acquisition::{select_next, CandidateGrid, Strategy};
use bads_core::harness::derive_seed;
use bads_core::models::{BankConfig, ModelBank};
use bads_core::sim::{canonical_audiogram, generate_reference_exam, ExamConfig, GroundTruthAudiogram, HearingLossClass};
use bads_core::stimulus::{Observation, Task, ToneStimulus};

const BF_THRESHOLD: f64 = 100.0;

fn demo_grid() -> CandidateGrid {
    CandidateGrid::new(16, 125.0, 8000.0, 13, -10.0, 110.0).expect("valid grid")
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct Tone {
    pub frequency_hz: f64,
    pub intensity_db: f64,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct Step {
    pub iteration: usize,
    pub frequency_hz: f64,
    pub intensity_db: f64,
    pub heard: bool,
    pub p_mf: f64,
    pub p_mg: f64,
    pub log_bf: f64,
    pub concluded: bool,
}

#[derive(Serialize)]
struct SurfaceView {
    frequencies: Vec<f64>,
    intensities: Vec<f64>,
    p_same: Vec<Vec<f64>>,
    p_different: Vec<Vec<f64>>,
    old_thresholds: Vec<f64>,
    new_thresholds: Vec<f64>,
    reference: Vec<Observation>,
    answered: Vec<Step>,
}

/// A comparison against a simulated previous exam.
#[wasm_bindgen]
pub struct Demo {
    bank: ModelBank,
    grid: CandidateGrid,
    old: GroundTruthAudiogram,
    listener: GroundTruthAudiogram,
    rng: ChaCha8Rng,
    seed: u64,
    pending: Option<Tone>,
    steps: Vec<Step>,
}

impl Demo {
    pub fn start(old_class: &str, new_class: &str, seed: u64) -> Result<Demo, String> {
        let old: HearingLossClass = old_class.parse().map_err(|e: bads_core::BadsError| e.to_string())?;
        let new: HearingLossClass = new_class.parse().map_err(|e: bads_core::BadsError| e.to_string())?;
        let grid = demo_grid();
        let old_gt = canonical_audiogram(old);
        let exam = generate_reference_exam(&old_gt, seed, &ExamConfig { grid: grid.clone(), ..ExamConfig::default() })
            .map_err(|e| e.to_string())?;
        let bank = ModelBank::with_reference_params(exam.observations, exam.theta, BankConfig::default()).map_err(|e| e.to_string())?;
        Ok(Demo {
            bank,
            grid,
            old: old_gt,
            listener: canonical_audiogram(new),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1])),
            seed,
            pending: None,
            steps: Vec::new(),
        })
    }

    pub fn concluded(&self) -> bool {
        self.steps.last().is_some_and(|s| s.concluded)
    }

    pub fn tone(&mut self) -> Result<Tone, String> {
        if self.concluded() {
            return Err("comparison already concluded".into());
        }
        if let Some(t) = self.pending {
            return Ok(t);
        }
        let pick_seed = derive_seed(self.seed, &[2, self.steps.len() as u64]);
        let pick = select_next(&self.bank, &self.grid, Strategy::Bads, pick_seed, None).map_err(|e| e.to_string())?;
        let t = Tone { frequency_hz: pick.stimulus.frequency_hz, intensity_db: pick.stimulus.intensity_db, score: pick.score };
        self.pending = Some(t);
        Ok(t)
    }

    pub fn respond(&mut self, heard: bool) -> Result<Step, String> {
        let t = self.tone()?;
        let stimulus = ToneStimulus::new(t.frequency_hz, t.intensity_db, Task::Current).map_err(|e| e.to_string())?;
        self.bank.update(Observation::new(stimulus, heard)).map_err(|e| e.to_string())?;
        self.pending = None;
        let [p_mf, p_mg] = self.bank.posterior();
        let log_bf = self.bank.log_bayes_factor();
        let step = Step {
            iteration: self.steps.len() + 1,
            frequency_hz: t.frequency_hz,
            intensity_db: t.intensity_db,
            heard,
            p_mf,
            p_mg,
            log_bf,
            concluded: log_bf.abs() >= BF_THRESHOLD.ln(),
        };
        self.steps.push(step);
        Ok(step)
    }

    /// Answers the pending tone the way the simulated listener would.
    pub fn respond_simulated(&mut self) -> Result<Step, String> {
        let t = self.tone()?;
        let stimulus = ToneStimulus::new(t.frequency_hz, t.intensity_db, Task::Current).map_err(|e| e.to_string())?;
        let heard = self.listener.sample_response(&stimulus, &mut self.rng).heard;
        self.respond(heard)
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    fn surface_view(&self) -> SurfaceView {
        let pred = self.bank.predict(&self.grid.stimuli());
        let nf = self.grid.frequencies.len();
        let rows = |f: &dyn Fn(usize) -> f64| (0..self.grid.intensities.len()).map(|r| (0..nf).map(|c| f(r * nf + c)).collect()).collect();
        SurfaceView {
            frequencies: self.grid.frequencies.clone(),
            intensities: self.grid.intensities.clone(),
            p_same: rows(&|i| pred.p_same[i]),
            p_different: rows(&|i| pred.p_different(i)),
            old_thresholds: self.grid.frequencies.iter().map(|&f| self.old.threshold_at(f)).collect(),
            new_thresholds: self.grid.frequencies.iter().map(|&f| self.listener.threshold_at(f)).collect(),
            reference: self.bank.reference().to_vec(),
            answered: self.steps.clone(),
        }
    }
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

#[wasm_bindgen]
impl Demo {
    /// Simulates the previous exam of `old_class` and prepares a listener
    /// of `new_class` for the simulate button.
    #[wasm_bindgen(constructor)]
    pub fn new(old_class: &str, new_class: &str, seed: u64) -> Result<Demo, JsError> {
        Demo::start(old_class, new_class, seed).map_err(js)
    }

    /// JSON of the tone to present next; stable until answered.
    #[wasm_bindgen(js_name = nextTone)]
    pub fn next_tone(&mut self) -> Result<String, JsError> {
        self.tone().map(|t| to_json(&t)).map_err(js)
    }

    /// Records a response to the pending tone; returns the step as JSON.
    pub fn answer(&mut self, heard: bool) -> Result<String, JsError> {
        self.respond(heard).map(|s| to_json(&s)).map_err(js)
    }

    /// Lets the simulated listener answer; returns the step as JSON.
    pub fn simulate(&mut self) -> Result<String, JsError> {
        self.respond_simulated().map(|s| to_json(&s)).map_err(js)
    }

    /// Predictive `p(heard)` of both models over the grid plus the true
    /// thresholds, as JSON.
    pub fn surface(&self) -> String {
        to_json(&self.surface_view())
    }

    #[wasm_bindgen(getter, js_name = isConcluded)]
    pub fn is_concluded(&self) -> bool {
        self.concluded()
    }
}
