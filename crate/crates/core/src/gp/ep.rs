//! Expectation propagation for GP probit classification.
//!
//! Sites are stored in natural parameters (`τ̃`, `ν̃`) on the latent scale
//! including the prior mean. The posterior is recomputed from the sites after
//! every sweep through `B = I + S̃^½ K S̃^½`, which never requires factorizing
//! the prior covariance itself.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BadsError, Result};
use crate::gp::kernel::{gram, HyperParams};
use crate::math::{inverse_mills, log_normal_cdf};
use crate::stimulus::{Features, Observation, ToneStimulus};

/// Schedule parameters for the EP fixed-point iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpConfig {
    /// Fraction of the moment-matched update applied per site.
    pub damping: f64,
    pub tolerance: f64,
    pub max_sweeps: usize,
    /// Seed of the per-sweep site ordering.
    pub seed: u64,
}

impl Default for EpConfig {
    fn default() -> Self {
        EpConfig { damping: 0.8, tolerance: 1e-6, max_sweeps: 200, seed: 0x5eed }
    }
}

/// Gaussian approximation to a GP probit posterior.
#[derive(Debug, Clone)]
pub struct EpState {
    pub site_precisions: DVector<f64>,
    /// Site natural means `ν̃` (precision times site mean).
    pub site_natural_means: DVector<f64>,
    pub posterior_mean: DVector<f64>,
    pub posterior_cov: DMatrix<f64>,
    pub log_evidence: f64,
    pub train_inputs: Vec<ToneStimulus>,
    pub train_targets: Vec<bool>,
    pub sweeps: usize,
    sqrt_tau: DVector<f64>,
    chol_b: DMatrix<f64>,
    weights: DVector<f64>,
}

/// Gaussian moments of the latent function at one test input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentPredictive {
    pub mean: f64,
    pub variance: f64,
}

impl LatentPredictive {
    /// `Φ(μ / √(1 + σ²))`.
    pub fn probability(&self) -> f64 {
        crate::math::normal_cdf(self.mean / (1.0 + self.variance).sqrt())
    }
}

struct Posterior {
    sigma: DMatrix<f64>,
    mu: DVector<f64>,
    sqrt_tau: DVector<f64>,
    chol_b: DMatrix<f64>,
    weights: DVector<f64>,
}

fn compute_posterior(k: &DMatrix<f64>, m: &DVector<f64>, tau: &DVector<f64>, nu: &DVector<f64>) -> Result<Posterior> {
    let n = k.nrows();
    let sqrt_tau = tau.map(|t| t.max(0.0).sqrt());
    let mut b = DMatrix::<f64>::identity(n, n);
    for j in 0..n {
        for i in 0..n {
            b[(i, j)] += sqrt_tau[i] * sqrt_tau[j] * k[(i, j)];
        }
    }
    let chol = Cholesky::new(b).ok_or(BadsError::Degenerate { jitter: 0.0 })?;
    let l = chol.l();
    let mut sk = k.clone();
    for i in 0..n {
        sk.row_mut(i).scale_mut(sqrt_tau[i]);
    }
    let v = l.solve_lower_triangular(&sk).ok_or(BadsError::Degenerate { jitter: 0.0 })?;
    let sigma = k - v.tr_mul(&v);
    let rhs = (k * nu + m).component_mul(&sqrt_tau);
    let weights = nu - chol.solve(&rhs).component_mul(&sqrt_tau);
    let mu = k * &weights + m;
    Ok(Posterior { sigma, mu, sqrt_tau, chol_b: l, weights })
}

fn log_evidence(post: &Posterior, m: &DVector<f64>, tau: &DVector<f64>, nu: &DVector<f64>, signs: &[f64]) -> f64 {
    let n = m.len();
    let v = post.sigma.diagonal();
    let mut lz_sum = 0.0;
    let mut tail = 0.0;
    let mut p = DVector::zeros(n);
    let mut q = DVector::zeros(n);
    for i in 0..n {
        let tau_c = 1.0 / v[i] - tau[i];
        let nu_c = post.mu[i] / v[i] - nu[i];
        let mean_c = nu_c / tau_c;
        let var_c = 1.0 / tau_c;
        lz_sum += log_normal_cdf(signs[i] * mean_c / (1.0 + var_c).sqrt());
        p[i] = nu[i] - m[i] * tau[i];
        q[i] = nu_c - m[i] * tau_c;
        tail += (tau[i] / tau_c).ln_1p();
    }
    let log_det_half: f64 = post.chol_b.diagonal().iter().map(|d| d.ln()).sum();
    let quad = p.dot(&(&post.sigma * &p));
    let mut cross = 0.0;
    let mut diag_term = 0.0;
    for i in 0..n {
        let tau_c = 1.0 / v[i] - tau[i];
        diag_term += v[i] * p[i] * p[i];
        cross += q[i] * ((tau[i] / tau_c * q[i] - 2.0 * p[i]) * v[i]);
    }
    -log_det_half + lz_sum + 0.5 * quad - 0.5 * diag_term + 0.5 * cross + 0.5 * tail
}

/// Runs EP for the given observations under a Gaussian prior with mean
/// `prior_mean` and covariance `prior_cov`. Optional `warm` sites seed the
/// iteration.
pub fn ep_fit_prior(
    obs: &[Observation],
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
    config: &EpConfig,
    warm: Option<(&DVector<f64>, &DVector<f64>)>,
) -> Result<EpState> {
    let n = obs.len();
    if prior_mean.len() != n || prior_cov.shape() != (n, n) {
        return Err(BadsError::Invalid(format!(
            "prior dimensions {}x{} / {} do not match {n} observations",
            prior_cov.nrows(),
            prior_cov.ncols(),
            prior_mean.len()
        )));
    }
    let signs: Vec<f64> = obs.iter().map(Observation::sign).collect();
    let (mut tau, mut nu) = match warm {
        Some((t, v)) if t.len() == n && v.len() == n => (t.clone(), v.clone()),
        _ => (DVector::zeros(n), DVector::zeros(n)),
    };

    let mut post = compute_posterior(prior_cov, prior_mean, &tau, &nu)?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.damping;
    let mut sweeps = 0;
    let mut residual = f64::INFINITY;

    while n > 0 && sweeps < config.max_sweeps {
        sweeps += 1;
        order.shuffle(&mut rng);
        residual = 0.0f64;
        for &i in &order {
            let s_ii = post.sigma[(i, i)];
            let tau_c = 1.0 / s_ii - tau[i];
            let nu_c = post.mu[i] / s_ii - nu[i];
            let mean_c = nu_c / tau_c;
            let var_c = 1.0 / tau_c;

            let denom = (1.0 + var_c).sqrt();
            let z = signs[i] * mean_c / denom;
            let r = inverse_mills(z);
            let dlz = signs[i] * r / denom;
            let d2lz = -r * (z + r) / (1.0 + var_c);

            let tau_target = (-d2lz / (1.0 + d2lz / tau_c)).max(0.0);
            let nu_target = (dlz - mean_c * d2lz) / (1.0 + d2lz / tau_c);
            let tau_new = d * tau_target + (1.0 - d) * tau[i];
            let nu_new = d * nu_target + (1.0 - d) * nu[i];

            let dtau = tau_new - tau[i];
            let dnu = nu_new - nu[i];
            residual = residual.max(dtau.abs()).max(dnu.abs());
            tau[i] = tau_new;
            nu[i] = nu_new;

            let si = post.sigma.column(i).clone_owned();
            let ci = dtau / (1.0 + dtau * si[i]);
            let shift = ci * (post.mu[i] + si[i] * dnu) - dnu;
            post.sigma.ger(-ci, &si, &si, 1.0);
            post.mu.axpy(-shift, &si, 1.0);
        }
        post = compute_posterior(prior_cov, prior_mean, &tau, &nu)?;
        if !residual.is_finite() {
            return Err(BadsError::Convergence { sweeps, residual });
        }
        if residual < config.tolerance {
            break;
        }
    }
    if n > 0 && residual >= config.tolerance {
        return Err(BadsError::Convergence { sweeps, residual });
    }

    let log_z = if n == 0 { 0.0 } else { log_evidence(&post, prior_mean, &tau, &nu, &signs) };
    Ok(EpState {
        site_precisions: tau,
        site_natural_means: nu,
        posterior_mean: post.mu,
        posterior_cov: post.sigma,
        log_evidence: log_z,
        train_inputs: obs.iter().map(|o| o.stimulus).collect(),
        train_targets: obs.iter().map(|o| o.heard).collect(),
        sweeps,
        sqrt_tau: post.sqrt_tau,
        chol_b: post.chol_b,
        weights: post.weights,
    })
}

/// EP under a constant mean and a kernel over stimulus features.
pub fn ep_fit<K>(obs: &[Observation], mean: f64, kernel: K, config: &EpConfig) -> Result<EpState>
where
    K: Fn(&Features, &Features) -> f64,
{
    if obs.is_empty() {
        return Err(BadsError::Invalid("EP requires at least one observation".into()));
    }
    let xs: Vec<Features> = obs.iter().map(|o| o.stimulus.features()).collect();
    let k = gram(&xs, kernel)?.matrix;
    ep_fit_prior(obs, &DVector::from_element(obs.len(), mean), &k, config, None)
}

/// EP for the single-task model with hyperparameters `theta`.
pub fn ep_fit_f(obs: &[Observation], theta: &HyperParams, config: &EpConfig) -> Result<EpState> {
    ep_fit(obs, theta.c, |a, b| crate::gp::kernel::kernel_f(a, b, theta), config)
}

impl EpState {
    pub fn len(&self) -> usize {
        self.train_targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_targets.is_empty()
    }

    /// Site means `ν̃ / τ̃`; zero where a site carries no precision.
    pub fn site_means(&self) -> DVector<f64> {
        self.site_natural_means.zip_map(&self.site_precisions, |nu, tau| if tau > 0.0 { nu / tau } else { 0.0 })
    }

    /// `(K + S̃⁻¹)⁻¹ (μ̃ − m)`: the vector that maps prior cross-covariances
    /// onto posterior means.
    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    /// `L⁻¹ S̃^½ k` for a column (or block of columns) of cross-covariances.
    pub fn whiten(&self, k_cross: &DMatrix<f64>) -> DMatrix<f64> {
        let mut scaled = k_cross.clone();
        for i in 0..scaled.nrows() {
            scaled.row_mut(i).scale_mut(self.sqrt_tau[i]);
        }
        self.chol_b.solve_lower_triangular(&scaled).unwrap_or(scaled)
    }

    /// Latent moments at one test point given its prior mean, the prior
    /// covariances with the training inputs and its prior variance.
    pub fn predict(&self, prior_mean: f64, k_cross: &DVector<f64>, prior_var: f64) -> LatentPredictive {
        let mut out = self.predict_many(
            &DVector::from_element(1, prior_mean),
            &k_cross.clone().reshape_generic(Dyn(k_cross.len()), Dyn(1)),
            &DVector::from_element(1, prior_var),
        );
        out.pop().expect("one prediction")
    }

    /// Batched predictions; `k_cross` is `n_train × n_test`.
    pub fn predict_many(&self, prior_means: &DVector<f64>, k_cross: &DMatrix<f64>, prior_vars: &DVector<f64>) -> Vec<LatentPredictive> {
        let m = prior_means.len();
        if self.is_empty() {
            return (0..m)
                .map(|j| LatentPredictive { mean: prior_means[j], variance: prior_vars[j].max(0.0) })
                .collect();
        }
        let means = k_cross.tr_mul(&self.weights) + prior_means;
        let v = self.whiten(k_cross);
        (0..m)
            .map(|j| {
                let reduction = v.column(j).norm_squared();
                LatentPredictive { mean: means[j], variance: (prior_vars[j] - reduction).max(0.0) }
            })
            .collect()
    }
}

/// Latent predictive at `x` for a state fitted with a constant mean and
/// the given kernel.
pub fn latent_predict<K>(state: &EpState, x: &ToneStimulus, mean: f64, kernel: K) -> LatentPredictive
where
    K: Fn(&Features, &Features) -> f64,
{
    let fx = x.features();
    let k_cross = DVector::from_iterator(state.len(), state.train_inputs.iter().map(|s| kernel(&s.features(), &fx)));
    state.predict(mean, &k_cross, kernel(&fx, &fx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::kernel::kernel_f;
    use crate::math::normal_cdf;
    use crate::stimulus::Task;

    fn obs(freq: f64, db: f64, heard: bool) -> Observation {
        Observation::new(ToneStimulus::new(freq, db, Task::Reference).unwrap(), heard)
    }

    fn one_point(c: f64, k: f64, heard: bool) -> EpState {
        let o = [obs(1000.0, 40.0, heard)];
        ep_fit_prior(&o, &DVector::from_element(1, c), &DMatrix::from_element(1, 1, k), &EpConfig::default(), None).unwrap()
    }

    #[test]
    fn single_site_symmetry_point() {
        let s = one_point(0.0, 1.0, true);
        assert!((s.log_evidence - 0.5f64.ln()).abs() < 1e-9, "{}", s.log_evidence);
    }

    #[test]
    fn single_site_shifted_mean() {
        // ∫Φ(f) N(f; 1, 1) df = Φ(1/√2) = 0.76024993890652...
        let s = one_point(1.0, 1.0, true);
        assert!((s.log_evidence.exp() - 0.760_249_938_906_523_3).abs() < 1e-6);
        let s0 = one_point(1.0, 1.0, false);
        assert!((s0.log_evidence.exp() - (1.0 - 0.760_249_938_906_523_3)).abs() < 1e-6);
    }

    #[test]
    fn single_site_moments_match_closed_form() {
        // Tilted distribution Φ(f) N(f; c, k): mean c + k r / √(1+k),
        // variance k − k² r (z + r) / (1+k), with z = c/√(1+k), r = φ(z)/Φ(z).
        let (c, k) = (0.4, 2.0);
        let s = one_point(c, k, true);
        let z = c / (1.0 + k).sqrt();
        let r = crate::math::normal_pdf(z) / normal_cdf(z);
        let mean = c + k * r / (1.0 + k).sqrt();
        let var = k - k * k * r * (z + r) / (1.0 + k);
        assert!((s.posterior_mean[0] - mean).abs() < 1e-6);
        assert!((s.posterior_cov[(0, 0)] - var).abs() < 1e-6);

        let p = s.predict(c, &DVector::from_element(1, k), k);
        assert!((p.mean - mean).abs() < 1e-6);
        assert!((p.variance - var).abs() < 1e-6);
    }

    #[test]
    fn empty_sites_recover_prior() {
        let theta = HyperParams { c: -1.0, alpha: 3.0, beta: 2.0, ell: 1.0 };
        let o = [obs(1000.0, 40.0, true)];
        let mut s = ep_fit_f(&o, &theta, &EpConfig::default()).unwrap();
        // zero out the site and rebuild the cached factors
        let k = DMatrix::from_element(1, 1, kernel_f(&o[0].stimulus.features(), &o[0].stimulus.features(), &theta));
        let post = compute_posterior(&k, &DVector::from_element(1, theta.c), &DVector::zeros(1), &DVector::zeros(1)).unwrap();
        s.sqrt_tau = post.sqrt_tau;
        s.chol_b = post.chol_b;
        s.weights = post.weights;
        let x = ToneStimulus::new(2000.0, 70.0, Task::Current).unwrap();
        let p = latent_predict(&s, &x, theta.c, |a, b| kernel_f(a, b, &theta));
        let fx = x.features();
        assert!((p.mean - theta.c).abs() < 1e-12);
        assert!((p.variance - kernel_f(&fx, &fx, &theta)).abs() < 1e-12);
    }

    #[test]
    fn heard_observation_pulls_mean_up() {
        let theta = HyperParams { c: 0.0, alpha: 1.0, beta: 1.0, ell: 1.0 };
        let o = vec![obs(1000.0, 40.0, true); 4];
        let s = ep_fit_f(&o, &theta, &EpConfig::default()).unwrap();
        let p = latent_predict(&s, &o[0].stimulus, theta.c, |a, b| kernel_f(a, b, &theta));
        assert!(p.mean > theta.c);
    }

    #[test]
    fn same_label_data_converges() {
        let theta = HyperParams { c: 0.0, alpha: 50.0, beta: 5.0, ell: 1.0 };
        let o: Vec<_> = (0..20).map(|i| obs(250.0 * (1 + i % 8) as f64, (i * 5) as f64, false)).collect();
        let s = ep_fit_f(&o, &theta, &EpConfig::default()).unwrap();
        assert!(s.log_evidence.is_finite());
        assert!(s.site_precisions.iter().all(|t| *t >= 0.0));
    }

    #[test]
    fn deterministic_refit() {
        let theta = HyperParams { c: -1.0, alpha: 40.0, beta: 3.0, ell: 0.8 };
        let o: Vec<_> = (0..15).map(|i| obs(125.0 * 2f64.powf(i as f64 * 0.4), (i * 7) as f64, i % 3 != 0)).collect();
        let a = ep_fit_f(&o, &theta, &EpConfig::default()).unwrap();
        let b = ep_fit_f(&o, &theta, &EpConfig::default()).unwrap();
        assert!((a.site_precisions - b.site_precisions).amax() <= 1e-12);
        assert!((a.site_natural_means - b.site_natural_means).amax() <= 1e-12);
        assert!((a.posterior_cov.clone() - a.posterior_cov.transpose()).amax() < 1e-10);
    }

    #[test]
    fn rejects_empty_and_mismatched() {
        let theta = HyperParams::default();
        assert!(ep_fit_f(&[], &theta, &EpConfig::default()).is_err());
        let o = [obs(1000.0, 40.0, true)];
        assert!(ep_fit_prior(&o, &DVector::zeros(2), &DMatrix::identity(2, 2), &EpConfig::default(), None).is_err());
    }

    #[test]
    fn sweep_cap_reports_residual() {
        let theta = HyperParams { c: 0.0, alpha: 50.0, beta: 5.0, ell: 1.0 };
        let o: Vec<_> = (0..10).map(|i| obs(1000.0, (i * 10) as f64, i > 4)).collect();
        let cfg = EpConfig { max_sweeps: 1, ..EpConfig::default() };
        match ep_fit_f(&o, &theta, &cfg) {
            Err(BadsError::Convergence { sweeps, residual }) => {
                assert_eq!(sweeps, 1);
                assert!(residual > 0.0);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }
}
