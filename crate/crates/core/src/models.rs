//! The two-model bank: `same` (one latent function explains both exams) and
//! `different` (a two-task GP whose task correlation is marginalized over a
//! uniform grid).
//!
//! Both models share the reference exam and its frozen MAP hyperparameters.
//! Every prior needed for EP is assembled as `base + ρ·lin + ρ²·quad`, so the
//! expensive kernel work happens once per hyperparameter setting and each of
//! the ρ components only pays for its own EP solve.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{BadsError, Result};
use crate::gp::ep::{ep_fit_f, ep_fit_prior, EpConfig, EpState};
use crate::gp::kernel::{add_jitter, cross_stationary, kernel_f, HyperParams};
use crate::gp::map::{map_optimize, maximize, HyperPrior, MapConfig, MIN_OBSERVATIONS_FOR_MAP};
use crate::math::{normal_cdf};
use crate::stimulus::{Features, Observation, Task, ToneStimulus};

pub const RHO_GRID_POINTS: usize = 50;
/// Distance kept between the grid endpoints and ±1.
pub const RHO_CLIP: f64 = 1e-6;
pub const SNAPSHOT_VERSION: u32 = 1;
pub const MIN_REFERENCE_OBSERVATIONS: usize = 10;

/// Quadrature grid over the task correlation with uniform weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoGrid {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl RhoGrid {
    /// `n` evenly spaced points on [-1, 1] with the endpoints pulled in to
    /// ±(1 − 1e-6).
    pub fn uniform(n: usize) -> Self {
        assert!(n >= 2, "rho grid needs at least two points");
        let lim = 1.0 - RHO_CLIP;
        let points = (0..n)
            .map(|j| (-1.0 + 2.0 * j as f64 / (n - 1) as f64).clamp(-lim, lim))
            .collect();
        RhoGrid { points, weights: vec![1.0 / n as f64; n] }
    }

    /// Arbitrary points with uniform weights.
    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.iter().any(|r| !(-1.0..=1.0).contains(r)) {
            return Err(BadsError::Domain(format!("invalid rho grid {points:?}")));
        }
        let w = 1.0 / points.len() as f64;
        let weights = vec![w; points.len()];
        Ok(RhoGrid { points, weights })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl Default for RhoGrid {
    fn default() -> Self {
        RhoGrid::uniform(RHO_GRID_POINTS)
    }
}

/// Weighted Bernoulli components; its mean is the success probability of the
/// collapsed Bernoulli.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveBernoulliMixture {
    pub components: Vec<(f64, f64)>,
}

impl PredictiveBernoulliMixture {
    /// Builds a mixture from `(weight, p)` pairs, normalizing the weights.
    pub fn new(components: Vec<(f64, f64)>) -> Result<Self> {
        let total: f64 = components.iter().map(|(w, _)| *w).sum();
        if components.is_empty() || total <= 0.0 || components.iter().any(|(w, p)| *w < 0.0 || !(0.0..=1.0).contains(p)) {
            return Err(BadsError::Invalid("mixture needs non-negative weights and probabilities in [0, 1]".into()));
        }
        Ok(PredictiveBernoulliMixture { components: components.into_iter().map(|(w, p)| (w / total, p)).collect() })
    }

    pub fn single(p: f64) -> Self {
        PredictiveBernoulliMixture { components: vec![(1.0, p)] }
    }

    pub fn collapsed_p(&self) -> f64 {
        self.components.iter().map(|(w, p)| w * p).sum::<f64>().clamp(0.0, 1.0)
    }
}

/// The two hypotheses about the current exam.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelId {
    /// Same latent function as the reference exam.
    Same,
    /// A different, task-correlated latent function.
    Different,
}

/// Weights of the ρ components in the different-function predictive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixtureWeights {
    /// `p(ρ_j | data)`, proportional to the grid weight times the component
    /// evidence.
    #[default]
    Posterior,
    /// The grid weights `p(ρ_j)` alone.
    Prior,
}

/// How model evidences are reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceMode {
    /// `p(y' | X', D, M)`: evidence of the new responses given the reference
    /// exam, whose EP sites stay frozen.
    #[default]
    Conditional,
    /// `p(y, y' | X, X', M)`: joint EP refit over both exams.
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankConfig {
    pub rho_grid: RhoGrid,
    /// Prior probabilities of (same, different).
    pub model_prior: [f64; 2],
    pub evidence_mode: EvidenceMode,
    #[serde(default)]
    pub mixture_weights: MixtureWeights,
    pub hyperprior: HyperPrior,
    pub ep: EpConfig,
    /// Search budget for the reference fit.
    pub reference_map: MapConfig,
    /// Search budget for the per-observation refit of the current-task
    /// hyperparameters.
    pub online_map: MapConfig,
}

impl Default for BankConfig {
    fn default() -> Self {
        BankConfig {
            rho_grid: RhoGrid::default(),
            model_prior: [0.5, 0.5],
            evidence_mode: EvidenceMode::Conditional,
            mixture_weights: MixtureWeights::Posterior,
            hyperprior: HyperPrior::default(),
            ep: EpConfig::default(),
            reference_map: MapConfig::default(),
            online_map: MapConfig { restarts: 1, max_evals: 30, initial_step: 0.3, tolerance: 1e-4 },
        }
    }
}

/// Bayes rule over the two models from their log evidences.
pub fn model_posterior(log_evidence_f: f64, log_evidence_g: f64, prior: [f64; 2]) -> [f64; 2] {
    let a = prior[0].ln() + log_evidence_f - prior[1].ln() - log_evidence_g;
    if a.is_nan() {
        return prior;
    }
    let p_f = 1.0 / (1.0 + (-a).exp());
    let p_g = 1.0 / (1.0 + a.exp());
    [p_f, p_g]
}

/// `log Σ_j w_j Z_j` over the surviving components.
pub fn evidence_from_components(log_evidences: &[f64], weights: &[f64]) -> Result<f64> {
    let total: f64 = weights.iter().sum();
    if log_evidences.is_empty() || total <= 0.0 {
        return Err(BadsError::Evidence("no surviving rho components".into()));
    }
    // dividing the raw sums keeps equal evidences at exactly their value
    let m = log_evidences.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Ok(m);
    }
    let s: f64 = log_evidences.iter().zip(weights).map(|(l, w)| w * (l - m).exp()).sum();
    Ok(m + (s / total).ln())
}

// value(ρ) = base + ρ·lin + ρ²·quad
#[derive(Debug, Clone)]
struct RhoPoly<T> {
    base: T,
    lin: T,
    quad: T,
}

impl RhoPoly<DVector<f64>> {
    fn at(&self, rho: f64) -> DVector<f64> {
        &self.base + &self.lin * rho + &self.quad * (rho * rho)
    }
}

impl RhoPoly<DMatrix<f64>> {
    fn at(&self, rho: f64) -> DMatrix<f64> {
        &self.base + &self.lin * rho + &self.quad * (rho * rho)
    }
}

/// Prior moments of the training latents for one hyperparameter setting.
struct TrainPrior {
    mean: RhoPoly<DVector<f64>>,
    cov: RhoPoly<DMatrix<f64>>,
}

/// Prior moments of test latents and their covariance with the training
/// latents.
struct TestPrior {
    mean: RhoPoly<DVector<f64>>,
    cross: RhoPoly<DMatrix<f64>>,
    var: RhoPoly<DVector<f64>>,
}

fn matrix_of<F: Fn(&Features, &Features) -> f64>(a: &[Features], b: &[Features], k: F) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| k(&a[i], &b[j]))
}

/// Model-conditional predictions over a batch of test stimuli.
#[derive(Debug, Clone)]
pub struct BankPredictions {
    /// `p(heard)` under the same-function model, per stimulus.
    pub p_same: Vec<f64>,
    /// `p(heard)` under each surviving ρ component, `[component][stimulus]`.
    pub p_components: Vec<Vec<f64>>,
    /// Normalized weights of the surviving components.
    pub component_weights: Vec<f64>,
    pub posterior: [f64; 2],
}

impl BankPredictions {
    pub fn len(&self) -> usize {
        self.p_same.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_same.is_empty()
    }

    pub fn mixture_different(&self, i: usize) -> PredictiveBernoulliMixture {
        PredictiveBernoulliMixture {
            components: self.component_weights.iter().zip(&self.p_components).map(|(w, p)| (*w, p[i])).collect(),
        }
    }

    pub fn p_different(&self, i: usize) -> f64 {
        self.component_weights.iter().zip(&self.p_components).map(|(w, p)| w * p[i]).sum::<f64>().clamp(0.0, 1.0)
    }

    /// Model-marginal predictive: the same-model Bernoulli and the ρ
    /// components, weighted by the model posterior.
    pub fn marginal(&self, i: usize) -> PredictiveBernoulliMixture {
        let mut components = Vec::with_capacity(self.p_components.len() + 1);
        components.push((self.posterior[0], self.p_same[i]));
        components.extend(self.component_weights.iter().zip(&self.p_components).map(|(w, p)| (self.posterior[1] * w, p[i])));
        PredictiveBernoulliMixture { components }
    }
}

/// Serializable record of a bank: enough to rebuild every EP state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankSnapshot {
    pub version: u32,
    pub config: BankConfig,
    pub reference: Vec<Observation>,
    pub new_data: Vec<Observation>,
    pub theta_f: HyperParams,
    pub theta_g: HyperParams,
    pub log_evidence_f: f64,
    pub log_evidence_g: f64,
    pub posterior: [f64; 2],
}

/// Outcome of a finished comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDecision {
    /// Evidence ratio of the winner over the loser (≥ 1).
    pub bayes_factor: f64,
    pub winner: ModelId,
    pub posterior_trace: Vec<[f64; 2]>,
}

/// Paired same/different models over a reference exam and the responses
/// collected so far in the current exam.
#[derive(Debug, Clone)]
pub struct ModelBank {
    config: BankConfig,
    reference: Vec<Observation>,
    new_data: Vec<Observation>,
    theta_f: HyperParams,
    theta_g: HyperParams,
    reference_fit: EpState,
    ep_f: EpState,
    ep_g: Vec<Option<EpState>>,
    log_evidence_f: f64,
    log_evidence_g: f64,
    posterior: [f64; 2],
    warnings: Vec<String>,
}

impl ModelBank {
    /// Fits MAP hyperparameters to the reference exam and freezes them.
    pub fn fit_reference(reference: Vec<Observation>, config: BankConfig) -> Result<Self> {
        Self::check_reference(&reference)?;
        let fit = map_optimize(&reference, &config.hyperprior, &config.hyperprior.mode(), &config.reference_map, &config.ep)?;
        Self::with_reference_params(reference, fit.theta, config)
    }

    /// Builds a bank around reference hyperparameters that were already
    /// estimated.
    pub fn with_reference_params(reference: Vec<Observation>, theta_f: HyperParams, config: BankConfig) -> Result<Self> {
        Self::check_reference(&reference)?;
        theta_f.validate()?;
        Self::check_config(&config)?;
        let reference_fit = ep_fit_f(&reference, &theta_f, &config.ep)?;
        let mut bank = ModelBank {
            ep_f: reference_fit.clone(),
            ep_g: Vec::new(),
            reference_fit,
            reference,
            new_data: Vec::new(),
            theta_f,
            theta_g: theta_f,
            log_evidence_f: 0.0,
            log_evidence_g: 0.0,
            posterior: config.model_prior,
            warnings: Vec::new(),
            config,
        };
        bank.refit_all()?;
        Ok(bank)
    }

    fn check_reference(reference: &[Observation]) -> Result<()> {
        if reference.len() < MIN_REFERENCE_OBSERVATIONS {
            return Err(BadsError::Invalid(format!(
                "reference exam needs at least {MIN_REFERENCE_OBSERVATIONS} observations, got {}",
                reference.len()
            )));
        }
        if reference.iter().any(|o| o.stimulus.task != Task::Reference) {
            return Err(BadsError::Invalid("reference observations must carry task 1".into()));
        }
        Ok(())
    }

    fn check_config(config: &BankConfig) -> Result<()> {
        let [a, b] = config.model_prior;
        // a zero entry is allowed and pins the posterior to the other model
        if !(a >= 0.0 && b >= 0.0 && ((a + b) - 1.0).abs() < 1e-9) {
            return Err(BadsError::Invalid(format!("model prior {:?} must be non-negative and sum to 1", config.model_prior)));
        }
        if config.rho_grid.is_empty() || config.rho_grid.points.len() != config.rho_grid.weights.len() {
            return Err(BadsError::Invalid("rho grid points and weights disagree".into()));
        }
        Ok(())
    }

    pub fn from_snapshot(snapshot: &BankSnapshot) -> Result<Self> {
        if snapshot.version != SNAPSHOT_VERSION {
            return Err(BadsError::Invalid(format!("unsupported bank snapshot version {}", snapshot.version)));
        }
        let mut bank = Self::with_reference_params(snapshot.reference.clone(), snapshot.theta_f, snapshot.config.clone())?;
        snapshot.theta_g.validate()?;
        bank.theta_g = snapshot.theta_g;
        bank.new_data = snapshot.new_data.clone();
        if bank.new_data.iter().any(|o| o.stimulus.task != Task::Current) {
            return Err(BadsError::Invalid("current-exam observations must carry task 2".into()));
        }
        bank.refit_all()?;
        Ok(bank)
    }

    pub fn snapshot(&self) -> BankSnapshot {
        BankSnapshot {
            version: SNAPSHOT_VERSION,
            config: self.config.clone(),
            reference: self.reference.clone(),
            new_data: self.new_data.clone(),
            theta_f: self.theta_f,
            theta_g: self.theta_g,
            log_evidence_f: self.log_evidence_f,
            log_evidence_g: self.log_evidence_g,
            posterior: self.posterior,
        }
    }

    pub fn config(&self) -> &BankConfig {
        &self.config
    }

    pub fn reference(&self) -> &[Observation] {
        &self.reference
    }

    pub fn new_data(&self) -> &[Observation] {
        &self.new_data
    }

    pub fn theta_f(&self) -> &HyperParams {
        &self.theta_f
    }

    pub fn theta_g(&self) -> &HyperParams {
        &self.theta_g
    }

    pub fn reference_fit(&self) -> &EpState {
        &self.reference_fit
    }

    pub fn ep_f(&self) -> &EpState {
        &self.ep_f
    }

    pub fn ep_g(&self) -> &[Option<EpState>] {
        &self.ep_g
    }

    pub fn log_evidence_f(&self) -> f64 {
        self.log_evidence_f
    }

    pub fn log_evidence_g(&self) -> f64 {
        self.log_evidence_g
    }

    /// `(p(same | data), p(different | data))`.
    pub fn posterior(&self) -> [f64; 2] {
        self.posterior
    }

    /// `ln BF` in favor of the same-function model.
    pub fn log_bayes_factor(&self) -> f64 {
        self.log_evidence_f - self.log_evidence_g
    }

    pub fn leading_model(&self) -> ModelId {
        if self.log_bayes_factor() >= 0.0 {
            ModelId::Same
        } else {
            ModelId::Different
        }
    }

    /// Component failures recorded since the bank was built.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Adds one response from the current exam: refits the same-model EP,
    /// re-optimizes the current-task hyperparameters and refits every ρ
    /// component.
    pub fn update(&mut self, obs: Observation) -> Result<()> {
        if obs.stimulus.task != Task::Current {
            return Err(BadsError::Invalid("updates must carry task 2".into()));
        }
        obs.stimulus.validate()?;
        self.new_data.push(obs);
        if let Err(e) = self.refit_after_update() {
            self.new_data.pop();
            // restore the previous states
            let _ = self.refit_all();
            return Err(e);
        }
        Ok(())
    }

    fn refit_after_update(&mut self) -> Result<()> {
        let f_prior = self.train_prior(&self.theta_f)?;
        self.ep_f = self.fit_component(&f_prior, 1.0, Some(&self.ep_f))?;
        self.log_evidence_f = self.ep_f.log_evidence;

        if self.new_data.len() >= MIN_OBSERVATIONS_FOR_MAP {
            let previous = self.ep_g.clone();
            let config = self.config.clone();
            let mut warm = previous.clone();
            let found = maximize(&self.theta_g, &config.online_map, |theta| {
                let prior = self.train_prior(theta)?;
                let (states, _) = self.fit_components(&prior, &warm);
                let (log_z, weights): (Vec<f64>, Vec<f64>) = states
                    .iter()
                    .zip(&config.rho_grid.weights)
                    .filter_map(|(s, w)| s.as_ref().map(|s| (s.log_evidence, *w)))
                    .unzip();
                let ev = evidence_from_components(&log_z, &weights)?;
                warm = states;
                Ok(ev + config.hyperprior.log_density(theta))
            });
            match found {
                Ok(r) => self.theta_g = r.theta,
                Err(e) => self.warnings.push(format!("current-task hyperparameter search failed: {e}; keeping previous values")),
            }
            self.ep_g = previous;
        }
        self.refit_g()
    }

    /// Refits every EP state from scratch under the current hyperparameters.
    fn refit_all(&mut self) -> Result<()> {
        let f_prior = self.train_prior(&self.theta_f)?;
        self.ep_f = self.fit_component(&f_prior, 1.0, None)?;
        self.log_evidence_f = self.ep_f.log_evidence;
        self.ep_g.clear();
        self.refit_g()
    }

    fn refit_g(&mut self) -> Result<()> {
        let prior = self.train_prior(&self.theta_g)?;
        let warm = std::mem::take(&mut self.ep_g);
        let (states, failures) = self.fit_components(&prior, &warm);
        for (rho, err) in failures {
            self.warnings.push(format!("dropped rho component {rho:.4}: {err}"));
        }
        let (log_z, weights): (Vec<f64>, Vec<f64>) = states
            .iter()
            .zip(&self.config.rho_grid.weights)
            .filter_map(|(s, w)| s.as_ref().map(|s| (s.log_evidence, *w)))
            .unzip();
        self.ep_g = states;
        self.log_evidence_g = evidence_from_components(&log_z, &weights)?;
        self.posterior = model_posterior(self.log_evidence_f, self.log_evidence_g, self.config.model_prior);
        Ok(())
    }

    /// Training set the EP states run over for the configured evidence mode.
    fn training_observations(&self) -> Vec<Observation> {
        match self.config.evidence_mode {
            EvidenceMode::Conditional => self.new_data.clone(),
            EvidenceMode::Joint => self.reference.iter().chain(&self.new_data).copied().collect(),
        }
    }

    fn fit_component(&self, prior: &TrainPrior, rho: f64, warm: Option<&EpState>) -> Result<EpState> {
        let obs = self.training_observations();
        let mean = prior.mean.at(rho);
        let cov = if obs.is_empty() { DMatrix::zeros(0, 0) } else { add_jitter(prior.cov.at(rho))?.matrix };
        let warm_sites = warm.map(|s| {
            let n = obs.len();
            let mut t = DVector::zeros(n);
            let mut v = DVector::zeros(n);
            let m = s.site_precisions.len().min(n);
            t.rows_mut(0, m).copy_from(&s.site_precisions.rows(0, m));
            v.rows_mut(0, m).copy_from(&s.site_natural_means.rows(0, m));
            (t, v)
        });
        let fit = |w: Option<(&DVector<f64>, &DVector<f64>)>| ep_fit_prior(&obs, &mean, &cov, &self.config.ep, w);
        match &warm_sites {
            Some((t, v)) => fit(Some((t, v))).or_else(|_| fit(None)),
            None => fit(None),
        }
    }

    fn fit_components(&self, prior: &TrainPrior, warm: &[Option<EpState>]) -> (Vec<Option<EpState>>, Vec<(f64, BadsError)>) {
        let rhos = &self.config.rho_grid.points;
        let fit_one = |j: usize| self.fit_component(prior, rhos[j], warm.get(j).and_then(|s| s.as_ref()));
        #[cfg(feature = "parallel")]
        let results: Vec<Result<EpState>> = {
            use rayon::prelude::*;
            (0..rhos.len()).into_par_iter().map(fit_one).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let results: Vec<Result<EpState>> = (0..rhos.len()).map(fit_one).collect();

        let mut failures = Vec::new();
        let states = results
            .into_iter()
            .enumerate()
            .map(|(j, r)| match r {
                Ok(s) => Some(s),
                Err(e) => {
                    failures.push((rhos[j], e));
                    None
                }
            })
            .collect();
        (states, failures)
    }

    fn reference_features(&self) -> Vec<Features> {
        self.reference.iter().map(|o| o.stimulus.features()).collect()
    }

    fn new_features(&self) -> Vec<Features> {
        self.new_data.iter().map(|o| o.stimulus.features()).collect()
    }

    /// Prior over the training latents when the current task uses `theta`.
    fn train_prior(&self, theta: &HyperParams) -> Result<TrainPrior> {
        theta.validate()?;
        let tf = self.theta_f;
        let x1 = self.reference_features();
        let x2 = self.new_features();
        let n2 = x2.len();
        let k22 = matrix_of(&x2, &x2, |a, b| kernel_f(a, b, theta));
        let kc = matrix_of(&x1, &x2, |a, b| cross_stationary(a, b, &tf, theta));
        Ok(match self.config.evidence_mode {
            EvidenceMode::Conditional => {
                let whitened = self.reference_fit.whiten(&kc);
                TrainPrior {
                    mean: RhoPoly {
                        base: DVector::from_element(n2, theta.c),
                        lin: kc.tr_mul(self.reference_fit.weights()),
                        quad: DVector::zeros(n2),
                    },
                    cov: RhoPoly { base: k22, lin: DMatrix::zeros(n2, n2), quad: -whitened.tr_mul(&whitened) },
                }
            }
            EvidenceMode::Joint => {
                let n1 = x1.len();
                let n = n1 + n2;
                let k11 = matrix_of(&x1, &x1, |a, b| kernel_f(a, b, &tf));
                let mut base = DMatrix::zeros(n, n);
                base.view_mut((0, 0), (n1, n1)).copy_from(&k11);
                base.view_mut((n1, n1), (n2, n2)).copy_from(&k22);
                let mut lin = DMatrix::zeros(n, n);
                lin.view_mut((0, n1), (n1, n2)).copy_from(&kc);
                lin.view_mut((n1, 0), (n2, n1)).copy_from(&kc.transpose());
                let mut mean = DVector::from_element(n, tf.c);
                mean.rows_mut(n1, n2).fill(theta.c);
                TrainPrior {
                    mean: RhoPoly { base: mean, lin: DVector::zeros(n), quad: DVector::zeros(n) },
                    cov: RhoPoly { base, lin, quad: DMatrix::zeros(n, n) },
                }
            }
        })
    }

    fn test_prior(&self, theta: &HyperParams, xs: &[Features]) -> TestPrior {
        let tf = self.theta_f;
        let m = xs.len();
        let x1 = self.reference_features();
        let x2 = self.new_features();
        let k2s = matrix_of(&x2, xs, |a, b| kernel_f(a, b, theta));
        let kcs = matrix_of(&x1, xs, |a, b| cross_stationary(a, b, &tf, theta));
        let kss = DVector::from_iterator(m, xs.iter().map(|x| kernel_f(x, x, theta)));
        match self.config.evidence_mode {
            EvidenceMode::Conditional => {
                let kc = matrix_of(&x1, &x2, |a, b| cross_stationary(a, b, &tf, theta));
                let a_train = self.reference_fit.whiten(&kc);
                let a_test = self.reference_fit.whiten(&kcs);
                let col_norms = DVector::from_iterator(m, a_test.column_iter().map(|c| c.norm_squared()));
                TestPrior {
                    mean: RhoPoly {
                        base: DVector::from_element(m, theta.c),
                        lin: kcs.tr_mul(self.reference_fit.weights()),
                        quad: DVector::zeros(m),
                    },
                    cross: RhoPoly { base: k2s, lin: DMatrix::zeros(x2.len(), m), quad: -a_train.tr_mul(&a_test) },
                    var: RhoPoly { base: kss, lin: DVector::zeros(m), quad: -col_norms },
                }
            }
            EvidenceMode::Joint => {
                let n1 = x1.len();
                let n = n1 + x2.len();
                let mut base = DMatrix::zeros(n, m);
                base.view_mut((n1, 0), (x2.len(), m)).copy_from(&k2s);
                let mut lin = DMatrix::zeros(n, m);
                lin.view_mut((0, 0), (n1, m)).copy_from(&kcs);
                TestPrior {
                    mean: RhoPoly { base: DVector::from_element(m, theta.c), lin: DVector::zeros(m), quad: DVector::zeros(m) },
                    cross: RhoPoly { base, lin, quad: DMatrix::zeros(n, m) },
                    var: RhoPoly { base: kss, lin: DVector::zeros(m), quad: DVector::zeros(m) },
                }
            }
        }
    }

    /// Model-conditional success probabilities at every stimulus in `xs`
    /// (scored as current-exam tones).
    pub fn predict(&self, xs: &[ToneStimulus]) -> BankPredictions {
        let feats: Vec<Features> = xs.iter().map(|x| x.with_task(Task::Current).features()).collect();
        let probit = |s: &EpState, prior: &TestPrior, rho: f64| -> Vec<f64> {
            s.predict_many(&prior.mean.at(rho), &prior.cross.at(rho), &prior.var.at(rho))
                .iter()
                .map(|p| normal_cdf(p.mean / (1.0 + p.variance).sqrt()))
                .collect()
        };

        let f_prior = self.test_prior(&self.theta_f, &feats);
        let p_same = probit(&self.ep_f, &f_prior, 1.0);

        let g_prior = self.test_prior(&self.theta_g, &feats);
        let grid = &self.config.rho_grid;
        let mut p_components = Vec::new();
        let mut weights = Vec::new();
        for ((state, rho), w) in self.ep_g.iter().zip(&grid.points).zip(&grid.weights) {
            if let Some(s) = state {
                p_components.push(probit(s, &g_prior, *rho));
                weights.push(match self.config.mixture_weights {
                    MixtureWeights::Posterior => w.ln() + s.log_evidence,
                    MixtureWeights::Prior => w.ln(),
                });
            }
        }
        let top = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        weights.iter_mut().for_each(|w| *w = (*w - top).exp());
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        BankPredictions { p_same, p_components, component_weights: weights, posterior: self.posterior }
    }

    /// `p(heard)` at `x` under the same-function model.
    pub fn predictive_mf(&self, x: &ToneStimulus) -> f64 {
        self.predict(std::slice::from_ref(x)).p_same[0]
    }

    /// ρ-mixture of Bernoullis at `x` under the different-function model.
    pub fn predictive_mg(&self, x: &ToneStimulus) -> PredictiveBernoulliMixture {
        self.predict(std::slice::from_ref(x)).mixture_different(0)
    }

    /// Model-marginal predictive at `x`.
    pub fn marginal_predictive(&self, x: &ToneStimulus) -> PredictiveBernoulliMixture {
        self.predict(std::slice::from_ref(x)).marginal(0)
    }

    /// `log p(y | X, M_g)` by the ρ quadrature rule, for the configured
    /// evidence mode.
    pub fn evidence_g(&self) -> Result<f64> {
        let (log_z, weights): (Vec<f64>, Vec<f64>) = self
            .ep_g
            .iter()
            .zip(&self.config.rho_grid.weights)
            .filter_map(|(s, w)| s.as_ref().map(|s| (s.log_evidence, *w)))
            .unzip();
        evidence_from_components(&log_z, &weights)
    }

    /// Decision at the current state, oriented toward the leading model.
    pub fn decision(&self, posterior_trace: Vec<[f64; 2]>) -> ModelDecision {
        ModelDecision {
            bayes_factor: self.log_bayes_factor().abs().exp(),
            winner: self.leading_model(),
            posterior_trace,
        }
    }

    #[cfg(test)]
    pub(crate) fn force_posterior(&mut self, posterior: [f64; 2]) {
        self.posterior = posterior;
    }
}

/// Reference-exam latent moments; exposed for diagnostics and plots.
pub fn reference_latent(bank: &ModelBank, x: &ToneStimulus) -> crate::gp::LatentPredictive {
    let theta = *bank.theta_f();
    crate::gp::latent_predict(bank.reference_fit(), &x.with_task(Task::Reference), theta.c, |a, b| kernel_f(a, b, &theta))
}
