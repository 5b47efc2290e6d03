//! Maximum a posteriori hyperparameters via derivative-free search.

use serde::{Deserialize, Serialize};

use crate::error::{BadsError, Result};
use crate::gp::ep::{ep_fit_f, EpConfig};
use crate::gp::kernel::HyperParams;
use crate::stimulus::Observation;

/// Below this many observations the MAP search is skipped.
pub const MIN_OBSERVATIONS_FOR_MAP: usize = 5;

/// Normal density on one coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalPrior {
    pub mean: f64,
    pub sd: f64,
}

impl NormalPrior {
    pub const fn new(mean: f64, sd: f64) -> Self {
        NormalPrior { mean, sd }
    }

    pub fn log_density(&self, x: f64) -> f64 {
        -0.5 * ((x - self.mean) / self.sd).powi(2) - self.sd.ln() - 0.918_938_533_204_672_8
    }
}

/// Independent priors: normal on `c`, log-normal on `α`, `β`, `ℓ`. The
/// density is taken over the log-space coordinates the optimizer moves in.
///
/// The default is scaled to audiograms on the normalized intensity axis:
/// slopes of a few dB, thresholds anywhere in the audiometer's range and
/// frequency deviations of tens of dB over an octave or two.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperPrior {
    pub c: NormalPrior,
    pub log_alpha: NormalPrior,
    pub log_beta: NormalPrior,
    pub log_ell: NormalPrior,
}

impl Default for HyperPrior {
    fn default() -> Self {
        HyperPrior {
            c: NormalPrior::new(-8.0, 6.0),
            log_alpha: NormalPrior::new(5.0, 0.5),
            log_beta: NormalPrior::new(2.5, 1.5),
            log_ell: NormalPrior::new(0.5, 1.0),
        }
    }
}

impl HyperPrior {
    /// Unit-free weak prior: `c ~ N(0, 2)` and log-normal(0, 2) on the
    /// rest.
    pub fn vague() -> Self {
        let wide = NormalPrior::new(0.0, 2.0);
        HyperPrior { c: wide, log_alpha: wide, log_beta: wide, log_ell: wide }
    }

    pub fn log_density(&self, theta: &HyperParams) -> f64 {
        let v = theta.to_log_space();
        self.c.log_density(v[0])
            + self.log_alpha.log_density(v[1])
            + self.log_beta.log_density(v[2])
            + self.log_ell.log_density(v[3])
    }

    /// Prior mode, used as the starting point of reference fits.
    pub fn mode(&self) -> HyperParams {
        HyperParams::from_log_space(&[self.c.mean, self.log_alpha.mean, self.log_beta.mean, self.log_ell.mean])
    }

    pub fn validate(&self) -> Result<()> {
        for p in [self.c, self.log_alpha, self.log_beta, self.log_ell] {
            if !(p.sd > 0.0 && p.sd.is_finite() && p.mean.is_finite()) {
                return Err(BadsError::Invalid(format!("hyperprior {p:?} needs a finite mean and positive sd")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    pub restarts: usize,
    /// Objective evaluations allowed per restart.
    pub max_evals: usize,
    /// Simplex edge length in log-space.
    pub initial_step: f64,
    pub tolerance: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig { restarts: 3, max_evals: 150, initial_step: 0.5, tolerance: 1e-6 }
    }
}

/// Outcome of a MAP search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapResult {
    pub theta: HyperParams,
    pub log_posterior: f64,
    pub initial_log_posterior: f64,
    pub evaluations: usize,
}

/// Minimizes `f` with the Nelder–Mead simplex method. Non-finite values are
/// treated as +∞. Returns the best point, its value and the number of
/// evaluations spent.
pub fn nelder_mead<F>(mut f: F, start: &[f64], step: f64, max_evals: usize, tol: f64) -> (Vec<f64>, f64, usize)
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = start.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let v0 = eval(start, &mut evals);
    simplex.push((start.to_vec(), v0));
    for i in 0..dim {
        let mut x = start.to_vec();
        x[i] += step;
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }

    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        if worst.is_finite() && (worst - best).abs() <= tol * (1.0 + best.abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..dim).map(|j| simplex[..dim].iter().map(|(x, _)| x[j]).sum::<f64>() / dim as f64).collect();
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&simplex[dim].0).map(|(c, w)| c + t * (w - c)).collect() };

        let xr = along(-1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = eval(&xe, &mut evals);
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[dim].1 {
                let xc = along(-0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < simplex[dim].1.min(fr) {
                simplex[dim] = (xc, fc);
            } else {
                let x0 = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let xs: Vec<f64> = x0.iter().zip(&entry.0).map(|(a, b)| a + 0.5 * (b - a)).collect();
                    let v = eval(&xs, &mut evals);
                    *entry = (xs, v);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, v) = simplex.swap_remove(0);
    (x, v, evals)
}

const RESTART_OFFSETS: [[f64; 4]; 3] = [[0.0, 0.0, 0.0, 0.0], [1.0, 1.0, -0.5, 0.5], [-1.0, -1.0, 0.5, -0.5]];

/// Maximizes `objective` (a log posterior) over hyperparameters from `init`
/// with multi-restart Nelder–Mead in log space. The result never scores
/// below `init`.
pub fn maximize<F>(init: &HyperParams, config: &MapConfig, mut objective: F) -> Result<MapResult>
where
    F: FnMut(&HyperParams) -> Result<f64>,
{
    let init_value = objective(init).ok().filter(|v| v.is_finite());
    let mut best_theta = *init;
    let mut best_value = init_value.unwrap_or(f64::NEG_INFINITY);
    let mut evaluations = 1;
    let base = init.to_log_space();

    for offset in RESTART_OFFSETS.iter().cycle().take(config.restarts.max(1)) {
        let start: Vec<f64> = base.iter().zip(offset).map(|(b, o)| b + o).collect();
        let (x, v, n) = nelder_mead(
            |x| match objective(&HyperParams::from_log_space(x)) {
                Ok(lp) => -lp,
                Err(_) => f64::INFINITY,
            },
            &start,
            config.initial_step,
            config.max_evals,
            config.tolerance,
        );
        evaluations += n;
        let value = -v;
        // require a clear improvement so EP noise cannot move us downhill
        if value.is_finite() && value > best_value + 1e-6 {
            best_value = value;
            best_theta = HyperParams::from_log_space(&x);
        }
    }
    if !best_value.is_finite() {
        return Err(BadsError::Optimization("every restart failed to evaluate the objective".into()));
    }
    Ok(MapResult {
        theta: best_theta,
        log_posterior: best_value,
        initial_log_posterior: init_value.unwrap_or(f64::NEG_INFINITY),
        evaluations,
    })
}

/// EP log evidence plus log hyperprior for the single-task model.
pub fn log_posterior(obs: &[Observation], prior: &HyperPrior, theta: &HyperParams, ep: &EpConfig) -> Result<f64> {
    Ok(ep_fit_f(obs, theta, ep)?.log_evidence + prior.log_density(theta))
}

/// MAP hyperparameters of the single-task probit GP; a no-op on fewer than
/// [`MIN_OBSERVATIONS_FOR_MAP`] observations.
pub fn map_optimize(obs: &[Observation], prior: &HyperPrior, init: &HyperParams, config: &MapConfig, ep: &EpConfig) -> Result<MapResult> {
    if obs.len() < MIN_OBSERVATIONS_FOR_MAP {
        return Ok(MapResult { theta: *init, log_posterior: f64::NAN, initial_log_posterior: f64::NAN, evaluations: 0 });
    }
    maximize(init, config, |theta| log_posterior(obs, prior, theta, ep))
}
