//! Tone selection: model-identity mutual information (BADS) and the BALD,
//! uncertainty-sampling and random baselines.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BadsError, Result};
use crate::gp::ep::{ep_fit_f, EpConfig, EpState, LatentPredictive};
use crate::gp::kernel::{kernel_f, HyperParams};
use crate::gp::map::{map_optimize, HyperPrior, MapConfig};
use crate::math::{gauss_hermite_64, normal_cdf};
use crate::models::{ModelBank, PredictiveBernoulliMixture};
use crate::stimulus::{octaves_to_frequency, Features, Observation, Task, ToneStimulus, MIN_FREQUENCY_HZ};

/// `h(p) = −p ln p − (1−p) ln(1−p)` in nats, with `0 ln 0 = 0`.
pub fn entropy_bernoulli(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(BadsError::Domain(format!("probability {p} outside [0, 1]")));
    }
    Ok(binary_entropy(p))
}

fn binary_entropy(p: f64) -> f64 {
    let term = |q: f64| if q > 0.0 { -q * q.ln() } else { 0.0 };
    term(p) + term(1.0 - p)
}

/// Entropy of a Bernoulli mixture, which is itself a Bernoulli.
pub fn entropy_mixture(m: &PredictiveBernoulliMixture) -> f64 {
    binary_entropy(m.collapsed_p())
}

/// Mutual information between the next response and the model identity,
/// from the two model-conditional success probabilities and the model
/// posterior.
pub fn model_information(p_same: f64, p_different: f64, posterior: [f64; 2]) -> f64 {
    let marginal = posterior[0] * p_same + posterior[1] * p_different;
    let mi = binary_entropy(marginal.clamp(0.0, 1.0)) - posterior[0] * binary_entropy(p_same) - posterior[1] * binary_entropy(p_different);
    if mi < 0.0 {
        debug_assert!(mi > -1e-9, "negative mutual information {mi}");
        0.0
    } else {
        mi
    }
}

/// BADS score at a single tone.
pub fn bads_score(bank: &ModelBank, x: &ToneStimulus) -> f64 {
    let preds = bank.predict(std::slice::from_ref(x));
    model_information(preds.p_same[0], preds.p_different(0), preds.posterior)
}

/// Predictive entropy of the model-marginal distribution.
pub fn us_score(bank: &ModelBank, x: &ToneStimulus) -> f64 {
    entropy_mixture(&bank.marginal_predictive(x))
}

/// `I(y; f)` for a probit likelihood and Gaussian latent: the predictive
/// entropy minus the expected conditional entropy, the latter by 64-node
/// Gauss–Hermite quadrature.
pub fn bald_score(latent: &LatentPredictive) -> f64 {
    let predictive = binary_entropy(latent.probability());
    if latent.variance <= 0.0 {
        return 0.0;
    }
    let expected = gauss_hermite_64().expect(latent.mean, latent.variance, |f| binary_entropy(normal_cdf(f)));
    (predictive - expected).clamp(0.0, std::f64::consts::LN_2)
}

/// Acquisition strategy, named `bads`, `bald`, `us` or `rnd` in configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Bads,
    Bald,
    Us,
    Rnd,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Bads, Strategy::Bald, Strategy::Us, Strategy::Rnd];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Bads => "bads",
            Strategy::Bald => "bald",
            Strategy::Us => "us",
            Strategy::Rnd => "rnd",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = BadsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bads" => Ok(Strategy::Bads),
            "bald" => Ok(Strategy::Bald),
            "us" => Ok(Strategy::Us),
            "rnd" => Ok(Strategy::Rnd),
            other => Err(BadsError::Invalid(format!("unknown strategy '{other}' (expected bads|bald|us|rnd)"))),
        }
    }
}

/// Log-spaced frequencies × linearly spaced intensities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateGrid {
    pub frequencies: Vec<f64>,
    pub intensities: Vec<f64>,
}

impl CandidateGrid {
    pub fn new(n_freq: usize, f_lo: f64, f_hi: f64, n_int: usize, i_lo: f64, i_hi: f64) -> Result<Self> {
        if n_freq == 0 || n_int == 0 || f_lo > f_hi || i_lo > i_hi {
            return Err(BadsError::Invalid("empty candidate grid".into()));
        }
        let lerp = |lo: f64, hi: f64, n: usize, k: usize| if n == 1 { lo } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 };
        let (o_lo, o_hi) = ((f_lo / MIN_FREQUENCY_HZ).log2(), (f_hi / MIN_FREQUENCY_HZ).log2());
        let grid = CandidateGrid {
            frequencies: (0..n_freq).map(|k| octaves_to_frequency(lerp(o_lo, o_hi, n_freq, k))).collect(),
            intensities: (0..n_int).map(|k| lerp(i_lo, i_hi, n_int, k)).collect(),
        };
        for s in grid.stimuli() {
            s.validate()?;
        }
        Ok(grid)
    }

    pub fn len(&self) -> usize {
        self.frequencies.len() * self.intensities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Current-exam tones ordered by intensity, then frequency, so that the
    /// first maximum is the softest, lowest tone among ties.
    pub fn stimuli(&self) -> Vec<ToneStimulus> {
        self.stimuli_for(Task::Current)
    }

    pub fn stimuli_for(&self, task: Task) -> Vec<ToneStimulus> {
        self.intensities
            .iter()
            .flat_map(|&i| self.frequencies.iter().map(move |&f| ToneStimulus { frequency_hz: f, intensity_db: i, task }))
            .collect()
    }
}

impl Default for CandidateGrid {
    fn default() -> Self {
        CandidateGrid::new(32, 125.0, 8000.0, 25, -10.0, 110.0).expect("default grid is valid")
    }
}

/// A scored candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionScore {
    pub stimulus: ToneStimulus,
    pub score: f64,
    pub strategy: Strategy,
}

/// Single-task GP over the current exam alone, used by the BALD baseline
/// that ignores the reference exam.
#[derive(Debug, Clone)]
pub struct RecentDataModel {
    pub theta: HyperParams,
    observations: Vec<Observation>,
    state: Option<EpState>,
    refit_every: usize,
    prior: HyperPrior,
    map: MapConfig,
    ep: EpConfig,
}

impl RecentDataModel {
    pub fn new(theta: HyperParams) -> Self {
        RecentDataModel {
            theta,
            observations: Vec::new(),
            state: None,
            refit_every: 10,
            prior: HyperPrior::default(),
            map: MapConfig { restarts: 1, ..MapConfig::default() },
            ep: EpConfig::default(),
        }
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn observe(&mut self, obs: Observation) -> Result<()> {
        self.observations.push(obs);
        if self.observations.len().is_multiple_of(self.refit_every) {
            if let Ok(r) = map_optimize(&self.observations, &self.prior, &self.theta, &self.map, &self.ep) {
                self.theta = r.theta;
            }
        }
        self.state = Some(ep_fit_f(&self.observations, &self.theta, &self.ep)?);
        Ok(())
    }

    pub fn latents(&self, xs: &[ToneStimulus]) -> Vec<LatentPredictive> {
        latents_for(self.state.as_ref(), &self.theta, xs)
    }
}

/// Latent moments for a single-task state; the prior when `state` is `None`.
pub fn latents_for(state: Option<&EpState>, theta: &HyperParams, xs: &[ToneStimulus]) -> Vec<LatentPredictive> {
    let feats: Vec<Features> = xs.iter().map(|x| x.features()).collect();
    let m = feats.len();
    let means = DVector::from_element(m, theta.c);
    let vars = DVector::from_iterator(m, feats.iter().map(|x| kernel_f(x, x, theta)));
    match state {
        None => (0..m).map(|j| LatentPredictive { mean: theta.c, variance: vars[j] }).collect(),
        Some(s) => {
            let train: Vec<Features> = s.train_inputs.iter().map(|x| x.features()).collect();
            let cross = DMatrix::from_fn(train.len(), m, |i, j| kernel_f(&train[i], &feats[j], theta));
            s.predict_many(&means, &cross, &vars)
        }
    }
}

/// Scores every candidate under `strategy`; `recent` is required for BALD.
/// Random sampling scores every candidate zero.
pub fn score_candidates(
    bank: &ModelBank,
    candidates: &[ToneStimulus],
    strategy: Strategy,
    recent: Option<&RecentDataModel>,
) -> Result<Vec<f64>> {
    Ok(match strategy {
        Strategy::Bads => {
            let preds = bank.predict(candidates);
            (0..candidates.len()).map(|i| model_information(preds.p_same[i], preds.p_different(i), preds.posterior)).collect()
        }
        Strategy::Us => {
            let preds = bank.predict(candidates);
            (0..candidates.len()).map(|i| entropy_mixture(&preds.marginal(i))).collect()
        }
        Strategy::Bald => {
            let recent = recent.ok_or_else(|| BadsError::Invalid("BALD needs a recent-data model".into()))?;
            recent.latents(candidates).iter().map(bald_score).collect()
        }
        Strategy::Rnd => vec![0.0; candidates.len()],
    })
}

/// Index of the largest score; the first index wins ties.
pub fn argmax_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_nan() {
            continue;
        }
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i)
}

/// Picks the next tone from `grid`. Deterministic in its inputs: ties go to
/// the lowest intensity, then the lowest frequency; random sampling draws
/// from a generator seeded with `seed`.
pub fn select_next(
    bank: &ModelBank,
    grid: &CandidateGrid,
    strategy: Strategy,
    seed: u64,
    recent: Option<&RecentDataModel>,
) -> Result<AcquisitionScore> {
    let candidates = grid.stimuli();
    if candidates.is_empty() {
        return Err(BadsError::Invalid("empty candidate grid".into()));
    }
    if strategy == Strategy::Rnd {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let i = rng.gen_range(0..candidates.len());
        return Ok(AcquisitionScore { stimulus: candidates[i], score: 0.0, strategy });
    }
    let scores = score_candidates(bank, &candidates, strategy, recent)?;
    let i = argmax_first(&scores).ok_or_else(|| BadsError::Invalid("all candidate scores are NaN".into()))?;
    Ok(AcquisitionScore { stimulus: candidates[i], score: scores[i], strategy })
}
