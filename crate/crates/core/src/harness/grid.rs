//! Class-pair grids, summaries and strategy comparisons.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::acquisition::Strategy;
use crate::error::{BadsError, Result};
use crate::harness::seeds::{derive_seed, EXAM_STREAM};
use crate::harness::trial::{expected_model, reference_exam_for, run_trial_with_exam, TrialConfig, TrialFailure, TrialResult};
use crate::models::ModelId;
use crate::sim::{HearingLossClass, ReferenceExam};

/// Position of a class pair in the 7×7 grid, old class major.
pub fn cell_index(old: HearingLossClass, new: HearingLossClass) -> usize {
    old.index() * HearingLossClass::ALL.len() + new.index()
}

pub fn cell_label(old: HearingLossClass, new: HearingLossClass) -> String {
    format!("{old}->{new}")
}

/// Profound to profound: every response is negative, so neither model can
/// be told apart from the other.
pub fn is_degenerate(old: HearingLossClass, new: HearingLossClass) -> bool {
    old == HearingLossClass::Profound && new == HearingLossClass::Profound
}

/// Settings shared by every trial of a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub master_seed: u64,
    pub reps: usize,
    /// Template for each trial; class pair, strategy and seeds are filled in
    /// per trial.
    pub trial: TrialConfig,
    /// Worker threads; `None` uses every core.
    pub workers: Option<usize>,
}

impl BatchConfig {
    pub fn new(master_seed: u64, reps: usize, trial: TrialConfig) -> Self {
        BatchConfig { master_seed, reps, trial, workers: None }
    }

    fn validate(&self) -> Result<()> {
        if self.reps < 1 {
            return Err(BadsError::Invalid("reps must be at least 1".into()));
        }
        self.trial.validate()
    }

    /// Trial `rep` of a cell. The reference exam depends only on the old
    /// class and the repetition, so cells sharing an old class share exams.
    pub fn trial_config(&self, old: HearingLossClass, new: HearingLossClass, strategy: Strategy, rep: usize) -> TrialConfig {
        TrialConfig {
            old_class: old,
            new_class: new,
            strategy,
            seed: derive_seed(self.master_seed, &[cell_index(old, new) as u64, rep as u64]),
            exam_seed: Some(derive_seed(self.master_seed, &[EXAM_STREAM, old.index() as u64, rep as u64])),
            ..self.trial.clone()
        }
    }
}

/// One trial of a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub old_class: HearingLossClass,
    pub new_class: HearingLossClass,
    pub strategy: Strategy,
    pub rep: usize,
    pub result: TrialResult,
}

impl TrialRecord {
    pub fn cell_label(&self) -> String {
        cell_label(self.old_class, self.new_class)
    }
}

/// Per-iteration quartiles of the posterior of the expected model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuartilePoint {
    pub iteration: usize,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub old_class: HearingLossClass,
    pub new_class: HearingLossClass,
    pub strategy: Strategy,
    pub expected: ModelId,
    pub degenerate: bool,
    pub reps: usize,
    /// Iterations to a threshold decision for the expected model, per
    /// repetition.
    pub iterations: Vec<Option<usize>>,
    pub mean_iters: Option<f64>,
    pub std_iters: Option<f64>,
    /// Median with undecided or wrongly decided trials counted as infinite.
    pub median_iters: Option<f64>,
    pub failures: usize,
    pub trajectory: Vec<QuartilePoint>,
}

impl CellSummary {
    pub fn label(&self) -> String {
        cell_label(self.old_class, self.new_class)
    }

    /// Median posterior of the expected model after `iteration` responses.
    pub fn median_posterior_at(&self, iteration: usize) -> Option<f64> {
        self.trajectory.get(iteration).map(|q| q.median)
    }

    pub fn reached(&self) -> usize {
        self.iterations.iter().flatten().count()
    }
}

/// Summary over every cell of a batch, in cell order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub cells: Vec<CellSummary>,
    pub records: Vec<TrialRecord>,
}

impl GridSummary {
    pub fn cell(&self, old: HearingLossClass, new: HearingLossClass, strategy: Strategy) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.old_class == old && c.new_class == new && c.strategy == strategy)
    }

    /// Cells counted in aggregate statistics.
    pub fn scored_cells(&self) -> impl Iterator<Item = &CellSummary> {
        self.cells.iter().filter(|c| !c.degenerate)
    }
}

/// Linear-interpolation quantile of sorted finite data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    if frac == 0.0 || sorted[lo] == sorted[hi] {
        return sorted[lo];
    }
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Median where `None` counts as larger than every value; `None` if the
/// median itself falls on one.
pub fn median_with_censoring(values: &[Option<usize>]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = values.iter().map(|x| x.map_or(f64::INFINITY, |k| k as f64)).collect();
    v.sort_by(f64::total_cmp);
    let m = quantile(&v, 0.5);
    m.is_finite().then_some(m)
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(std))
}

/// Summarizes the repetitions of one cell. Trajectories span iterations
/// `0..=horizon`.
pub fn summarize_cell(records: &[&TrialRecord], horizon: usize) -> Result<CellSummary> {
    let first = records.first().ok_or_else(|| BadsError::Invalid("no trials to summarize".into()))?;
    let (old, new) = (first.old_class, first.new_class);
    let expected = expected_model(old, new);
    let iterations: Vec<Option<usize>> = records.iter().map(|r| r.result.iterations_to_correct()).collect();
    let reached: Vec<f64> = iterations.iter().flatten().map(|k| *k as f64).collect();
    let (mean_iters, std_iters) = mean_std(&reached);
    let trajectory = (0..=horizon)
        .map(|k| {
            let mut ps: Vec<f64> = records.iter().map(|r| r.result.posterior_at(k, expected)).collect();
            ps.sort_by(f64::total_cmp);
            QuartilePoint { iteration: k, q25: quantile(&ps, 0.25), median: quantile(&ps, 0.5), q75: quantile(&ps, 0.75) }
        })
        .collect();
    Ok(CellSummary {
        old_class: old,
        new_class: new,
        strategy: first.strategy,
        expected,
        degenerate: is_degenerate(old, new),
        reps: records.len(),
        median_iters: median_with_censoring(&iterations),
        iterations,
        mean_iters,
        std_iters,
        failures: records.iter().filter(|r| r.result.failure.is_some()).count(),
        trajectory,
    })
}

/// Groups records by (strategy, cell) and summarizes each group.
pub fn summarize(records: Vec<TrialRecord>, horizon: usize) -> Result<GridSummary> {
    let mut groups: BTreeMap<(Strategy, usize), Vec<&TrialRecord>> = BTreeMap::new();
    for r in &records {
        groups.entry((r.strategy, cell_index(r.old_class, r.new_class))).or_default().push(r);
    }
    let cells = groups.values().map(|g| summarize_cell(g, horizon)).collect::<Result<Vec<_>>>()?;
    Ok(GridSummary { cells, records })
}

struct Job {
    old: HearingLossClass,
    new: HearingLossClass,
    strategy: Strategy,
    rep: usize,
}

fn run_jobs(batch: &BatchConfig, jobs: Vec<Job>) -> Result<Vec<TrialRecord>> {
    batch.validate()?;
    // exams keyed by (old class, rep), built once and shared across cells
    let mut exam_keys: Vec<(HearingLossClass, usize)> = jobs.iter().map(|j| (j.old, j.rep)).collect();
    exam_keys.sort();
    exam_keys.dedup();

    let build_exam = |&(old, rep): &(HearingLossClass, usize)| -> (HearingLossClass, usize, Result<ReferenceExam>) {
        let cfg = batch.trial_config(old, old, Strategy::Bads, rep);
        (old, rep, reference_exam_for(&cfg))
    };
    let run_job = |job: &Job, exams: &BTreeMap<(HearingLossClass, usize), std::result::Result<ReferenceExam, String>>| {
        let cfg = batch.trial_config(job.old, job.new, job.strategy, job.rep);
        let result = match &exams[&(job.old, job.rep)] {
            Ok(exam) => run_trial_with_exam(&cfg, exam),
            Err(e) => Err(BadsError::Invalid(format!("reference exam failed: {e}"))),
        };
        let result = result.unwrap_or_else(|e| TrialResult {
            iterations_to_threshold: None,
            winner: ModelId::Same,
            prior: cfg.bank_config().model_prior,
            trace: Vec::new(),
            failure: Some(TrialFailure { iteration: 0, message: e.to_string() }),
            warnings: Vec::new(),
            config: cfg.clone(),
        });
        TrialRecord { old_class: job.old, new_class: job.new, strategy: job.strategy, rep: job.rep, result }
    };

    let collect_exams = |built: Vec<(HearingLossClass, usize, Result<ReferenceExam>)>| {
        built.into_iter().map(|(o, r, e)| ((o, r), e.map_err(|e| e.to_string()))).collect::<BTreeMap<_, _>>()
    };

    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(batch.workers.unwrap_or(0))
            .build()
            .map_err(|e| BadsError::Invalid(format!("worker pool: {e}")))?;
        Ok(pool.install(|| {
            let exams = collect_exams(exam_keys.par_iter().map(build_exam).collect());
            jobs.par_iter().map(|j| run_job(j, &exams)).collect()
        }))
    }
    #[cfg(not(feature = "parallel"))]
    {
        let exams = collect_exams(exam_keys.iter().map(build_exam).collect());
        Ok(jobs.iter().map(|j| run_job(j, &exams)).collect())
    }
}

/// Runs `reps` trials of each listed class pair under `strategy`.
pub fn run_cells(batch: &BatchConfig, cells: &[(HearingLossClass, HearingLossClass)], strategy: Strategy) -> Result<GridSummary> {
    let jobs = cells
        .iter()
        .flat_map(|&(old, new)| (0..batch.reps).map(move |rep| Job { old, new, strategy, rep }))
        .collect();
    summarize(run_jobs(batch, jobs)?, batch.trial.max_iterations)
}

/// All 49 class pairs.
pub fn run_grid(batch: &BatchConfig, strategy: Strategy) -> Result<GridSummary> {
    let cells: Vec<_> = HearingLossClass::ALL
        .iter()
        .flat_map(|&o| HearingLossClass::ALL.iter().map(move |&n| (o, n)))
        .collect();
    run_cells(batch, &cells, strategy)
}

/// Per-strategy curves on one class pair, with seeds paired across
/// strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub old_class: HearingLossClass,
    pub new_class: HearingLossClass,
    pub arms: Vec<CellSummary>,
    pub records: Vec<TrialRecord>,
}

pub fn compare_strategies(
    batch: &BatchConfig,
    old: HearingLossClass,
    new: HearingLossClass,
    strategies: &[Strategy],
) -> Result<Comparison> {
    if strategies.len() < 2 {
        return Err(BadsError::Invalid("comparison needs at least two strategies".into()));
    }
    let jobs = strategies
        .iter()
        .flat_map(|&strategy| (0..batch.reps).map(move |rep| Job { old, new, strategy, rep }))
        .collect();
    let records = run_jobs(batch, jobs)?;
    // listing order is kept, so a strategy listed twice gets two arms
    let arms = strategies
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let arm: Vec<&TrialRecord> = records[i * batch.reps..(i + 1) * batch.reps].iter().collect();
            summarize_cell(&arm, batch.trial.max_iterations)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Comparison { old_class: old, new_class: new, arms, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::CandidateGrid;

    fn tiny_batch(reps: usize) -> BatchConfig {
        let trial = TrialConfig {
            max_iterations: 2,
            grid: CandidateGrid::new(6, 125.0, 8000.0, 5, -10.0, 110.0).unwrap(),
            ..TrialConfig::default()
        };
        BatchConfig { workers: Some(1), ..BatchConfig::new(5, reps, trial) }
    }

    #[test]
    fn cell_layout() {
        use HearingLossClass::*;
        assert_eq!(cell_index(Normal, Normal), 0);
        assert_eq!(cell_index(Profound, Profound), 48);
        assert_eq!(cell_index(Slight, Normal), 7);
        assert!(is_degenerate(Profound, Profound));
        assert!(!is_degenerate(Severe, Profound));
        assert_eq!(cell_label(ModeratelySevere, Mild), "moderately_severe->mild");
    }

    #[test]
    fn quantiles_and_censored_median() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&[7.0], 0.75), 7.0);
        assert_eq!(median_with_censoring(&[Some(3), None, Some(5)]), Some(5.0));
        assert_eq!(median_with_censoring(&[Some(3), None, None]), None);
        assert_eq!(median_with_censoring(&[Some(2), Some(4)]), Some(3.0));
    }

    #[test]
    fn mean_and_sample_std() {
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, Some(5.0));
        // sample variance 32/7
        assert!((s.unwrap() - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[3.0]), (Some(3.0), Some(0.0)));
        assert_eq!(mean_std(&[]), (None, None));
    }

    #[test]
    fn exams_shared_by_old_class() {
        use HearingLossClass::*;
        let b = tiny_batch(2);
        let a = b.trial_config(Mild, Severe, Strategy::Bads, 1);
        let c = b.trial_config(Mild, Normal, Strategy::Rnd, 1);
        assert_eq!(a.exam_seed, c.exam_seed);
        assert_ne!(a.seed, c.seed);
        assert_ne!(b.trial_config(Mild, Severe, Strategy::Bads, 0).exam_seed, a.exam_seed);
        // paired across strategies
        assert_eq!(b.trial_config(Mild, Severe, Strategy::Rnd, 1).seed, a.seed);
    }

    #[test]
    fn cells_times_reps_trials() {
        use HearingLossClass::*;
        let b = tiny_batch(2);
        let s = run_cells(&b, &[(Normal, Profound), (Profound, Profound)], Strategy::Rnd).unwrap();
        assert_eq!(s.records.len(), 4);
        assert_eq!(s.cells.len(), 2);
        let deg = s.cell(Profound, Profound, Strategy::Rnd).unwrap();
        assert!(deg.degenerate);
        assert_eq!(deg.expected, ModelId::Same);
        assert_eq!(s.scored_cells().count(), 1);
        for c in &s.cells {
            assert_eq!(c.trajectory.len(), 3);
            assert_eq!(c.trajectory[0].median, 0.5);
            assert!(c.trajectory.iter().all(|q| q.q25 <= q.median && q.median <= q.q75));
        }
    }

    #[test]
    fn duplicate_strategy_gives_identical_arms() {
        let b = tiny_batch(2);
        let c = compare_strategies(&b, HearingLossClass::Normal, HearingLossClass::Mild, &[Strategy::Us, Strategy::Us]).unwrap();
        assert_eq!(c.arms.len(), 2);
        assert_eq!(c.arms[0], c.arms[1]);
        assert!(compare_strategies(&b, HearingLossClass::Normal, HearingLossClass::Mild, &[Strategy::Us]).is_err());
    }
}
