//! A single simulated differential exam.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{select_next, CandidateGrid, RecentDataModel, Strategy};
use crate::error::{BadsError, Result};
use crate::harness::seeds::{derive_seed, EXAM_STREAM, RESPONSE_STREAM, SELECTION_STREAM};
use crate::models::{BankConfig, EvidenceMode, ModelBank, ModelId};
use crate::sim::{generate_reference_exam, AnchorSet, ExamConfig, GroundTruthAudiogram, HearingLossClass, ReferenceExam};
use crate::stimulus::{Observation, Task};

pub const DEFAULT_MAX_ITERATIONS: usize = 50;
pub const DEFAULT_BF_THRESHOLD: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialConfig {
    pub old_class: HearingLossClass,
    pub new_class: HearingLossClass,
    pub strategy: Strategy,
    pub seed: u64,
    /// Seed of the simulated reference exam; derived from `seed` when unset.
    pub exam_seed: Option<u64>,
    pub max_iterations: usize,
    pub bf_threshold: f64,
    pub grid: CandidateGrid,
    pub spread_db: f64,
    pub evidence_mode: EvidenceMode,
}

impl Default for TrialConfig {
    fn default() -> Self {
        TrialConfig {
            old_class: HearingLossClass::Normal,
            new_class: HearingLossClass::Normal,
            strategy: Strategy::Bads,
            seed: 0,
            exam_seed: None,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            bf_threshold: DEFAULT_BF_THRESHOLD,
            grid: CandidateGrid::default(),
            spread_db: crate::sim::ground_truth::DEFAULT_SPREAD_DB,
            evidence_mode: EvidenceMode::default(),
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(BadsError::Invalid("max_iterations must be at least 1".into()));
        }
        if self.bf_threshold.is_nan() || self.bf_threshold <= 1.0 {
            return Err(BadsError::Invalid(format!("Bayes-factor threshold must exceed 1, got {}", self.bf_threshold)));
        }
        if !(self.spread_db > 0.0 && self.spread_db.is_finite()) {
            return Err(BadsError::Invalid(format!("psychometric spread must be positive, got {}", self.spread_db)));
        }
        if self.grid.is_empty() {
            return Err(BadsError::Invalid("empty candidate grid".into()));
        }
        Ok(())
    }

    pub fn exam_seed(&self) -> u64 {
        self.exam_seed.unwrap_or_else(|| derive_seed(self.seed, &[EXAM_STREAM, self.old_class.index() as u64]))
    }

    /// The model a perfect judge would pick: same function when the class
    /// did not change.
    pub fn expected_model(&self) -> ModelId {
        expected_model(self.old_class, self.new_class)
    }

    pub fn bank_config(&self) -> BankConfig {
        BankConfig { evidence_mode: self.evidence_mode, ..BankConfig::default() }
    }
}

pub fn expected_model(old: HearingLossClass, new: HearingLossClass) -> ModelId {
    if old == new {
        ModelId::Same
    } else {
        ModelId::Different
    }
}

/// State after one response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub p_mf: f64,
    pub p_mg: f64,
    pub log_evidence_f: f64,
    pub log_evidence_g: f64,
    /// `ln BF` in favor of the same-function model.
    pub log_bf: f64,
    pub observation: Observation,
}

impl TraceEntry {
    pub fn bayes_factor(&self) -> f64 {
        self.log_bf.abs().exp()
    }

    pub fn p_of(&self, model: ModelId) -> f64 {
        match model {
            ModelId::Same => self.p_mf,
            ModelId::Different => self.p_mg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub iteration: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub config: TrialConfig,
    /// Iteration at which the Bayes factor first reached the threshold, in
    /// either direction.
    pub iterations_to_threshold: Option<usize>,
    /// Leading model when the trial ended.
    pub winner: ModelId,
    pub prior: [f64; 2],
    /// One entry per executed iteration.
    pub trace: Vec<TraceEntry>,
    pub failure: Option<TrialFailure>,
    pub warnings: Vec<String>,
}

impl TrialResult {
    pub fn expected_model(&self) -> ModelId {
        self.config.expected_model()
    }

    /// Iterations to the threshold when the decision went to the expected
    /// model; `None` when it never got there or decided wrongly.
    pub fn iterations_to_correct(&self) -> Option<usize> {
        self.iterations_to_threshold.filter(|_| self.winner == self.expected_model())
    }

    /// Posterior of `model` after `iteration` responses; the last recorded
    /// value carries forward once the trial has stopped.
    pub fn posterior_at(&self, iteration: usize, model: ModelId) -> f64 {
        if iteration == 0 || self.trace.is_empty() {
            return match model {
                ModelId::Same => self.prior[0],
                ModelId::Different => self.prior[1],
            };
        }
        let k = iteration.min(self.trace.len());
        self.trace[k - 1].p_of(model)
    }

    pub fn iterations(&self) -> usize {
        self.trace.len()
    }
}

/// Builds the ground truth for `class` from the embedded anchors.
pub fn ground_truth(class: HearingLossClass, spread_db: f64) -> Result<GroundTruthAudiogram> {
    AnchorSet::embedded().audiogram(class, Some(spread_db))
}

pub fn reference_exam_for(cfg: &TrialConfig) -> Result<ReferenceExam> {
    let gt = ground_truth(cfg.old_class, cfg.spread_db)?;
    let exam_cfg = ExamConfig { grid: cfg.grid.clone(), ..ExamConfig::default() };
    generate_reference_exam(&gt, cfg.exam_seed(), &exam_cfg)
}

pub fn run_trial(cfg: &TrialConfig) -> Result<TrialResult> {
    cfg.validate()?;
    let exam = reference_exam_for(cfg)?;
    run_trial_with_exam(cfg, &exam)
}

/// Runs the active loop against a prepared reference exam. Failures after
/// the bank is built end the trial early and are recorded in the result.
pub fn run_trial_with_exam(cfg: &TrialConfig, exam: &ReferenceExam) -> Result<TrialResult> {
    cfg.validate()?;
    let responder = ground_truth(cfg.new_class, cfg.spread_db)?;
    let mut bank = ModelBank::with_reference_params(exam.observations.clone(), exam.theta, cfg.bank_config())?;
    let mut recent = (cfg.strategy == Strategy::Bald).then(|| RecentDataModel::new(exam.theta));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[RESPONSE_STREAM]));
    let threshold = cfg.bf_threshold.ln();

    let mut result = TrialResult {
        config: cfg.clone(),
        iterations_to_threshold: None,
        winner: bank.leading_model(),
        prior: bank.posterior(),
        trace: Vec::with_capacity(cfg.max_iterations),
        failure: None,
        warnings: Vec::new(),
    };

    for iteration in 1..=cfg.max_iterations {
        let step = (|| -> Result<Observation> {
            let pick_seed = derive_seed(cfg.seed, &[SELECTION_STREAM, iteration as u64]);
            let pick = select_next(&bank, &cfg.grid, cfg.strategy, pick_seed, recent.as_ref())?;
            let tone = pick.stimulus.with_task(Task::Current);
            let obs = responder.sample_response(&tone, &mut rng);
            bank.update(obs)?;
            if let Some(r) = recent.as_mut() {
                r.observe(obs)?;
            }
            Ok(obs)
        })();
        let obs = match step {
            Ok(o) => o,
            Err(e) => {
                result.failure = Some(TrialFailure { iteration, message: e.to_string() });
                break;
            }
        };
        let [p_mf, p_mg] = bank.posterior();
        let log_bf = bank.log_bayes_factor();
        result.trace.push(TraceEntry {
            iteration,
            p_mf,
            p_mg,
            log_evidence_f: bank.log_evidence_f(),
            log_evidence_g: bank.log_evidence_g(),
            log_bf,
            observation: obs,
        });
        if log_bf.abs() >= threshold {
            result.iterations_to_threshold = Some(iteration);
            break;
        }
    }
    result.winner = bank.leading_model();
    result.warnings = bank.warnings().to_vec();
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(old: HearingLossClass, new: HearingLossClass, max_iterations: usize, bf_threshold: f64) -> TrialConfig {
        TrialConfig {
            old_class: old,
            new_class: new,
            max_iterations,
            bf_threshold,
            grid: CandidateGrid::new(8, 125.0, 8000.0, 7, -10.0, 110.0).unwrap(),
            seed: 11,
            ..TrialConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrialConfig { max_iterations: 0, ..TrialConfig::default() }.validate().is_err());
        assert!(TrialConfig { bf_threshold: 1.0, ..TrialConfig::default() }.validate().is_err());
        assert!(TrialConfig { spread_db: 0.0, ..TrialConfig::default() }.validate().is_err());
        assert!(TrialConfig::default().validate().is_ok());
    }

    #[test]
    fn expected_model_orientation() {
        use HearingLossClass::*;
        assert_eq!(expected_model(Mild, Mild), ModelId::Same);
        assert_eq!(expected_model(Mild, Severe), ModelId::Different);
    }

    #[test]
    fn unreachable_threshold_runs_to_the_cap() {
        let cfg = quick(HearingLossClass::Mild, HearingLossClass::Mild, 4, 1e300);
        let r = run_trial(&cfg).unwrap();
        assert_eq!(r.iterations_to_threshold, None);
        assert_eq!(r.trace.len(), 4);
        assert_eq!(r.prior, [0.5, 0.5]);
        for (k, e) in r.trace.iter().enumerate() {
            assert_eq!(e.iteration, k + 1);
            assert!((e.p_mf + e.p_mg - 1.0).abs() < 1e-12);
            assert!((e.log_bf - (e.log_evidence_f - e.log_evidence_g)).abs() < 1e-12);
            assert_eq!(e.observation.stimulus.task, Task::Current);
        }
        assert_eq!(r.posterior_at(0, ModelId::Same), 0.5);
        assert_eq!(r.posterior_at(99, ModelId::Same), r.trace[3].p_mf);
    }

    #[test]
    fn same_seed_same_result() {
        let cfg = quick(HearingLossClass::Normal, HearingLossClass::Severe, 3, 100.0);
        let a = run_trial(&cfg).unwrap();
        let b = run_trial(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn large_change_is_detected() {
        let cfg = quick(HearingLossClass::Normal, HearingLossClass::Profound, 15, 100.0);
        let r = run_trial(&cfg).unwrap();
        assert_eq!(r.winner, ModelId::Different);
        assert!(r.iterations_to_correct().is_some());
        assert_eq!(r.iterations_to_threshold, Some(r.trace.len()));
        assert!(r.trace.last().unwrap().bayes_factor() >= 100.0);
    }
}
