//! Covariance functions over the augmented (intensity, frequency, task) space.

use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{BadsError, Result};
use crate::stimulus::{Features, Task};

/// Constant mean plus the weights of the linear-intensity and
/// squared-exponential-frequency kernel components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Constant prior mean of the latent function.
    pub c: f64,
    /// Weight of the linear intensity component.
    pub alpha: f64,
    /// Amplitude of the squared-exponential frequency component.
    pub beta: f64,
    /// Frequency length scale, in octaves.
    pub ell: f64,
}

impl HyperParams {
    pub fn new(c: f64, alpha: f64, beta: f64, ell: f64) -> Result<Self> {
        let h = HyperParams { c, alpha, beta, ell };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.alpha, self.beta, self.ell].iter().all(|v| *v > 0.0 && v.is_finite());
        if !positive || !self.c.is_finite() {
            return Err(BadsError::Domain(format!("invalid hyperparameters {self:?}")));
        }
        Ok(())
    }

    /// Unconstrained coordinates `[c, ln α, ln β, ln ℓ]`.
    pub fn to_log_space(&self) -> [f64; 4] {
        [self.c, self.alpha.ln(), self.beta.ln(), self.ell.ln()]
    }

    pub fn from_log_space(v: &[f64]) -> Self {
        HyperParams { c: v[0], alpha: v[1].exp(), beta: v[2].exp(), ell: v[3].exp() }
    }
}

impl Default for HyperParams {
    /// Starting point for hyperparameter search, expressed in normalized
    /// intensity units (a 120 dB span maps onto [0, 1]).
    fn default() -> Self {
        HyperParams { c: -2.0, alpha: 100.0, beta: 4.0, ell: 1.0 }
    }
}

/// `α i i' + β exp(-|φ - φ'|² / 2ℓ²)`; the task coordinate is ignored.
pub fn kernel_f(x: &Features, x2: &Features, theta: &HyperParams) -> f64 {
    let d = x.octave - x2.octave;
    theta.alpha * (x.intensity * x2.intensity) + theta.beta * (-0.5 * d * d / (theta.ell * theta.ell)).exp()
}

/// Task (conjoint) correlation: 1 on the same task, `rho` across tasks.
pub fn kernel_t(t: Task, t2: Task, rho: f64) -> Result<f64> {
    check_rho(rho)?;
    Ok(if t == t2 { 1.0 } else { rho })
}

pub(crate) fn check_rho(rho: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&rho) {
        return Err(BadsError::Domain(format!("task correlation {rho} outside [-1, 1]")));
    }
    Ok(())
}

/// Stationary part between a point governed by `theta1` and one governed by
/// `theta2`. Amplitudes combine geometrically; length scales combine through
/// the convolution form, which keeps the two-task kernel positive
/// semidefinite when the length scales differ.
pub fn cross_stationary(x: &Features, x2: &Features, theta1: &HyperParams, theta2: &HyperParams) -> f64 {
    let d = x.octave - x2.octave;
    let l1 = theta1.ell * theta1.ell;
    let l2 = theta2.ell * theta2.ell;
    let sum = l1 + l2;
    let norm = (2.0 * theta1.ell * theta2.ell / sum).sqrt();
    (theta1.alpha * theta2.alpha).sqrt() * (x.intensity * x2.intensity)
        + (theta1.beta * theta2.beta).sqrt() * norm * (-d * d / sum).exp()
}

/// Hyperparameters of the two-task kernel: reference-task and current-task
/// stationary parts plus the task correlation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskKernel {
    pub reference: HyperParams,
    pub current: HyperParams,
    pub rho: f64,
}

impl TaskKernel {
    pub fn new(reference: HyperParams, current: HyperParams, rho: f64) -> Result<Self> {
        check_rho(rho)?;
        Ok(TaskKernel { reference, current, rho })
    }

    fn params(&self, task: Task) -> &HyperParams {
        match task {
            Task::Reference => &self.reference,
            Task::Current => &self.current,
        }
    }

    pub fn mean(&self, x: &Features) -> f64 {
        self.params(x.task).c
    }

    pub fn eval(&self, x: &Features, x2: &Features) -> f64 {
        if x.task == x2.task {
            kernel_f(x, x2, self.params(x.task))
        } else {
            self.rho * cross_stationary(x, x2, self.params(x.task), self.params(x2.task))
        }
    }
}

/// `K_t(t, t') × K_[i,φ]` with per-task stationary parts.
pub fn kernel_g(x: &Features, x2: &Features, theta_per_task: (&HyperParams, &HyperParams), rho: f64) -> Result<f64> {
    let k = TaskKernel::new(*theta_per_task.0, *theta_per_task.1, rho)?;
    Ok(k.eval(x, x2))
}

const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-2;

/// A covariance matrix with the diagonal jitter needed for a successful
/// Cholesky factorization.
#[derive(Debug, Clone)]
pub struct Gram {
    pub matrix: DMatrix<f64>,
    pub jitter: f64,
}

pub fn gram<F>(xs: &[Features], kernel: F) -> Result<Gram>
where
    F: Fn(&Features, &Features) -> f64,
{
    if xs.is_empty() {
        return Err(BadsError::Invalid("gram matrix of an empty stimulus set".into()));
    }
    let n = xs.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel(&xs[i], &xs[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    add_jitter(k)
}

/// Adds `jitter · mean(diag)` to the diagonal, escalating tenfold until the
/// matrix factorizes.
pub fn add_jitter(k: DMatrix<f64>) -> Result<Gram> {
    let n = k.nrows();
    let scale = (k.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    let mut rel = JITTER_START;
    while rel <= JITTER_MAX * (1.0 + 1e-9) {
        let jitter = rel * scale;
        let mut m = k.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if Cholesky::new(m.clone()).is_some() {
            return Ok(Gram { matrix: m, jitter });
        }
        rel *= 10.0;
    }
    Err(BadsError::Degenerate { jitter: JITTER_MAX * scale })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feat(intensity: f64, octave: f64, task: Task) -> Features {
        Features { intensity, octave, task }
    }

    fn theta(alpha: f64, beta: f64, ell: f64) -> HyperParams {
        HyperParams { c: 0.0, alpha, beta, ell }
    }

    #[test]
    fn kernel_f_collapses_to_beta() {
        let a = feat(0.0, 3.0, Task::Reference);
        assert_eq!(kernel_f(&a, &a, &theta(7.0, 2.5, 0.3)), 2.5);
    }

    #[test]
    fn kernel_f_arithmetic() {
        let a = feat(1.0, 2.0, Task::Reference);
        let b = feat(2.0, 2.0, Task::Current);
        assert!((kernel_f(&a, &b, &theta(0.5, 1.0, 1.0)) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn kernel_f_one_length_scale_apart() {
        let a = feat(0.0, 1.0, Task::Reference);
        let b = feat(0.0, 1.7, Task::Reference);
        let k = kernel_f(&a, &b, &theta(1.0, 3.0, 0.7));
        // exp(-1/2) = 0.60653065971263342360...
        assert!((k - 3.0 * 0.606_530_659_712_633_4).abs() < 1e-14);
    }

    #[test]
    fn task_kernel_cases() {
        assert_eq!(kernel_t(Task::Reference, Task::Reference, 0.3).unwrap(), 1.0);
        assert_eq!(kernel_t(Task::Reference, Task::Current, 0.3).unwrap(), 0.3);
        assert_eq!(kernel_t(Task::Reference, Task::Current, 0.0).unwrap(), 0.0);
        assert!(matches!(kernel_t(Task::Reference, Task::Current, 1.2), Err(BadsError::Domain(_))));
    }

    #[test]
    fn kernel_g_reductions() {
        let t1 = theta(2.0, 1.5, 0.8);
        let t2 = theta(5.0, 0.5, 1.9);
        let a = feat(0.3, 1.0, Task::Reference);
        let b = feat(0.7, 2.0, Task::Reference);
        assert_eq!(kernel_g(&a, &b, (&t1, &t2), 0.4).unwrap(), kernel_f(&a, &b, &t1));

        let b2 = feat(0.7, 2.0, Task::Current);
        let same = kernel_g(&a, &b2, (&t1, &t1), 1.0).unwrap();
        assert!((same - kernel_f(&a, &b2, &t1)).abs() < 1e-14);

        let z1 = feat(0.0, 2.0, Task::Reference);
        let z2 = feat(0.0, 2.0, Task::Current);
        let flipped = kernel_g(&z1, &z2, (&t1, &t1), -1.0).unwrap();
        assert!((flipped + 1.5).abs() < 1e-14);
        assert!(kernel_g(&z1, &z2, (&t1, &t2), -1.5).is_err());
    }

    #[test]
    fn kernels_are_symmetric() {
        let t1 = theta(2.0, 1.5, 0.8);
        let t2 = theta(5.0, 0.5, 1.9);
        let a = feat(0.3, 1.0, Task::Reference);
        let b = feat(0.9, 4.5, Task::Current);
        assert_eq!(kernel_f(&a, &b, &t1), kernel_f(&b, &a, &t1));
        let k = TaskKernel::new(t1, t2, -0.6).unwrap();
        assert_eq!(k.eval(&a, &b), k.eval(&b, &a));
    }

    #[test]
    fn gram_single_point() {
        let t = theta(3.0, 2.0, 1.0);
        let x = [feat(0.0, 1.0, Task::Reference)];
        let g = gram(&x, |a, b| kernel_f(a, b, &t)).unwrap();
        assert_eq!(g.matrix.shape(), (1, 1));
        assert!((g.matrix[(0, 0)] - (2.0 + g.jitter)).abs() < 1e-15);
        assert!(g.jitter > 0.0 && g.jitter <= 2e-8);
    }

    #[test]
    fn gram_duplicate_points_need_jitter() {
        let t = theta(3.0, 2.0, 1.0);
        let x = [feat(0.4, 1.0, Task::Reference), feat(0.4, 1.0, Task::Reference)];
        let g = gram(&x, |a, b| kernel_f(a, b, &t)).unwrap();
        assert_eq!(g.matrix[(0, 1)], g.matrix[(1, 0)]);
        assert!((g.matrix[(0, 1)] - (3.0 * 0.16 + 2.0)).abs() < 1e-12);
        assert!(Cholesky::new(g.matrix.clone()).is_some());
    }

    #[test]
    fn gram_rejects_empty() {
        let t = HyperParams::default();
        assert!(gram(&[], |a, b| kernel_f(a, b, &t)).is_err());
    }
}
