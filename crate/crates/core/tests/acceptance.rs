//! Acceptance criteria. Runs without the libtest harness so every
//! criterion prints one PASS/FAIL line; exits non-zero if any fails.

use std::f64::consts::LN_2;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use bads_core::acquisition::{bads_score, bald_score, entropy_bernoulli, entropy_mixture, Strategy};
use bads_core::gp::map::log_posterior;
use bads_core::gp::{ep_fit_prior, map_optimize, EpConfig, HyperParams, HyperPrior, LatentPredictive, MapConfig, TaskKernel};
use bads_core::harness::{run_cells, write_trials_csv, BatchConfig, TrialConfig};
use bads_core::math::normal_cdf;
use bads_core::models::{BankConfig, ModelBank, ModelId, PredictiveBernoulliMixture};
use bads_core::sim::{canonical_audiogram, HearingLossClass};
use bads_core::stimulus::{Observation, Task, ToneStimulus};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn random_tone(rng: &mut ChaCha8Rng, task: Task) -> ToneStimulus {
    let octave = rng.gen_range(0.0..6.0f64);
    ToneStimulus::new(125.0 * octave.exp2(), rng.gen_range(-10.0..110.0), task).unwrap()
}

fn random_theta(rng: &mut ChaCha8Rng, prior: &HyperPrior) -> HyperParams {
    let mut draw = |p: &bads_core::gp::map::NormalPrior| p.mean + p.sd * rng.sample::<f64, _>(StandardNormal);
    HyperParams { c: draw(&prior.c), alpha: draw(&prior.log_alpha).exp(), beta: draw(&prior.log_beta).exp(), ell: draw(&prior.log_ell).exp() }
}

// Dense tensor-grid integration over whitened latents z, f = m + L z.
struct GridQuadrature {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GridQuadrature {
    fn new(points: usize, half_width: f64) -> Self {
        let h = 2.0 * half_width / (points - 1) as f64;
        let nodes: Vec<f64> = (0..points).map(|k| -half_width + h * k as f64).collect();
        let weights = nodes.iter().map(|z| h * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()).collect();
        GridQuadrature { nodes, weights }
    }

    /// Returns (evidence, p(y* = 1 | D)).
    fn integrate(&self, m: &DVector<f64>, l: &DMatrix<f64>, signs: &[f64], m_star: f64, a: &DVector<f64>, var_star: f64) -> (f64, f64) {
        let n = m.len();
        let g = self.nodes.len();
        let total = g.pow(n as u32);
        let scale = (1.0 + var_star).sqrt();
        let mut z = vec![0.0; n];
        let (mut evidence, mut joint) = (0.0, 0.0);
        for idx in 0..total {
            let mut rest = idx;
            let mut w = 1.0;
            for zd in z.iter_mut() {
                let k = rest % g;
                rest /= g;
                *zd = self.nodes[k];
                w *= self.weights[k];
            }
            let mut lik = 1.0;
            for i in 0..n {
                let f: f64 = m[i] + (0..=i).map(|j| l[(i, j)] * z[j]).sum::<f64>();
                lik *= normal_cdf(signs[i] * f);
            }
            let mean_star = m_star + (0..n).map(|j| a[j] * z[j]).sum::<f64>();
            evidence += w * lik;
            joint += w * lik * normal_cdf(mean_star / scale);
        }
        (evidence, joint / evidence)
    }
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let prior = HyperPrior::default();
    let quad = GridQuadrature::new(161, 8.0);
    let (mut worst_p, mut worst_lz) = (0.0f64, 0.0f64);
    let ep = EpConfig::default();
    for _ in 0..200 {
        let n = rng.gen_range(1..=3usize);
        let kernel = TaskKernel::new(random_theta(&mut rng, &prior), random_theta(&mut rng, &prior), rng.gen_range(-0.99..0.99)).unwrap();
        let task = |rng: &mut ChaCha8Rng| if rng.gen_bool(0.5) { Task::Reference } else { Task::Current };
        let obs: Vec<Observation> = (0..n)
            .map(|_| {
                let t = task(&mut rng);
                Observation::new(random_tone(&mut rng, t), rng.gen_bool(0.5))
            })
            .collect();
        let t = task(&mut rng);
        let star = random_tone(&mut rng, t).features();
        let xs: Vec<_> = obs.iter().map(|o| o.stimulus.features()).collect();
        let mut k = DMatrix::from_fn(n, n, |i, j| kernel.eval(&xs[i], &xs[j]));
        let jitter = 1e-8 * k.trace() / n as f64;
        for i in 0..n {
            k[(i, i)] += jitter;
        }
        let m = DVector::from_iterator(n, xs.iter().map(|x| kernel.mean(x)));
        let k_star = DVector::from_iterator(n, xs.iter().map(|x| kernel.eval(x, &star)));
        let k_ss = kernel.eval(&star, &star);

        let state = ep_fit_prior(&obs, &m, &k, &ep, None).unwrap();
        let p_ep = state.predict(kernel.mean(&star), &k_star, k_ss).probability();

        let l = k.clone().cholesky().unwrap().l();
        let a = l.solve_lower_triangular(&k_star).unwrap();
        let var_star = (k_ss - a.norm_squared()).max(0.0);
        let signs: Vec<f64> = obs.iter().map(|o| o.sign()).collect();
        let (z, p_num) = quad.integrate(&m, &l, &signs, kernel.mean(&star), &a, var_star);
        worst_p = worst_p.max((p_ep - p_num).abs());
        worst_lz = worst_lz.max((state.log_evidence - z.ln()).abs());
    }
    outcome(worst_p <= 0.01 && worst_lz <= 0.05, format!("max |Δp| = {worst_p:.2e} (≤ 0.01), max |Δ log Z| = {worst_lz:.2e} (≤ 0.05)"))
}

fn criterion_2() -> Outcome {
    let ep = EpConfig::default();
    let mut worst = 0.0f64;
    let mut symmetric = f64::NAN;
    let tone = ToneStimulus::new(1000.0, 40.0, Task::Reference).unwrap();
    for &c in &[-4.0, -2.0, -1.0, -0.3, 0.0, 0.3, 1.0, 2.0, 4.0] {
        for &kv in &[0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 20.0, 100.0] {
            let state = ep_fit_prior(&[Observation::new(tone, true)], &DVector::from_element(1, c), &DMatrix::from_element(1, 1, kv), &ep, None).unwrap();
            let z = state.log_evidence.exp();
            let exact = normal_cdf(c / (1.0 + kv).sqrt());
            worst = worst.max((z - exact).abs());
            if c == 0.0 && kv == 1.0 {
                symmetric = z;
            }
        }
    }
    outcome(worst <= 1e-3 && (symmetric - 0.5).abs() <= 1e-3, format!("max |Z − Φ(c/√(1+k))| = {worst:.2e} over 72 (c, k); Z(0, 1) = {symmetric:.6}"))
}

fn random_bank(rng: &mut ChaCha8Rng, model_prior: [f64; 2]) -> ModelBank {
    let class = HearingLossClass::ALL[rng.gen_range(0..7)];
    let gt = canonical_audiogram(class);
    let reference: Vec<Observation> = (0..rng.gen_range(10..=16)).map(|_| gt.sample_response(&random_tone(rng, Task::Reference), rng)).collect();
    let theta = random_theta(rng, &HyperPrior::default());
    let config = BankConfig { model_prior, ..BankConfig::default() };
    let mut bank = ModelBank::with_reference_params(reference, theta, config).unwrap();
    let new_gt = canonical_audiogram(HearingLossClass::ALL[rng.gen_range(0..7)]);
    for _ in 0..rng.gen_range(0..=3) {
        let obs = new_gt.sample_response(&random_tone(rng, Task::Current), rng);
        bank.update(obs).unwrap();
    }
    bank
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let h_half = entropy_bernoulli(0.5).unwrap();
    let h_ok = (h_half - LN_2).abs() <= 1e-12;

    let mut mixture_ok = true;
    for _ in 0..1000 {
        let k = rng.gen_range(1..=6);
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let m = PredictiveBernoulliMixture::new(raw.iter().map(|w| (w / total, rng.gen_range(0.0..=1.0))).collect()).unwrap();
        mixture_ok &= entropy_mixture(&m) == entropy_bernoulli(m.collapsed_p()).unwrap();
    }

    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..1000 {
        let w = rng.gen_range(0.02..0.98);
        let bank = random_bank(&mut rng, [w, 1.0 - w]);
        for _ in 0..5 {
            let s = bads_score(&bank, &random_tone(&mut rng, Task::Current));
            lo = lo.min(s);
            hi = hi.max(s);
        }
    }
    let range_ok = lo >= 0.0 && hi <= LN_2;

    let mut degenerate_max = 0.0f64;
    for prior in [[1.0, 0.0], [0.0, 1.0]] {
        for _ in 0..20 {
            let bank = random_bank(&mut rng, prior);
            for _ in 0..5 {
                degenerate_max = degenerate_max.max(bads_score(&bank, &random_tone(&mut rng, Task::Current)).abs());
            }
        }
    }
    let degenerate_ok = degenerate_max == 0.0;
    outcome(
        h_ok && mixture_ok && range_ok && degenerate_ok,
        format!(
            "h(0.5) − ln 2 = {:.1e}; mixture entropy exact: {mixture_ok}; bads_score ∈ [{lo:.3e}, {hi:.4}] over 1000 banks; degenerate max {degenerate_max:e}",
            h_half - LN_2
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let h = |p: f64| entropy_bernoulli(p.clamp(0.0, 1.0)).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let mean = rng.gen_range(-3.0..3.0);
        let variance = rng.gen_range(0.01..9.0);
        let latent = LatentPredictive { mean, variance };
        let sd: f64 = variance.sqrt();
        let samples = 1_000_000;
        let mut expected = 0.0;
        for _ in 0..samples {
            let f = mean + sd * rng.sample::<f64, _>(StandardNormal);
            expected += h(normal_cdf(f));
        }
        let mc = h(latent.probability()) - expected / samples as f64;
        worst = worst.max((bald_score(&latent) - mc).abs());
    }
    outcome(worst <= 1e-3, format!("max |GH64 − MC(1e6)| = {worst:.2e} over 50 (μ, σ²) (≤ 1e-3)"))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let prior = HyperPrior::default();
    let mut worst = f64::INFINITY;
    for _ in 0..500 {
        let n = rng.gen_range(1..=30);
        let xs: Vec<_> = (0..n)
            .map(|_| {
                let t = if rng.gen_bool(0.5) { Task::Reference } else { Task::Current };
                random_tone(&mut rng, t).features()
            })
            .collect();
        let (t1, t2) = (random_theta(&mut rng, &prior), random_theta(&mut rng, &prior));
        for rho in [-0.999, -0.5, 0.0, 0.5, 0.999] {
            let kernel = TaskKernel::new(t1, t2, rho).unwrap();
            let k = DMatrix::from_fn(n, n, |i, j| kernel.eval(&xs[i], &xs[j]));
            let min = SymmetricEigen::new(k).eigenvalues.min();
            worst = worst.min(min);
        }
    }
    outcome(worst >= -1e-8, format!("min eigenvalue {worst:.3e} over 500 sets × 5 ρ (≥ −1e-8)"))
}

const MASTER_SEED: u64 = 2024;
const REPS: usize = 10;

fn batch(max_iterations: usize) -> BatchConfig {
    BatchConfig { workers: None, ..BatchConfig::new(MASTER_SEED, REPS, TrialConfig { max_iterations, ..TrialConfig::default() }) }
}

fn criterion_6() -> Outcome {
    use HearingLossClass::*;
    let large = run_cells(&batch(50), &[(Normal, Profound)], Strategy::Bads).unwrap();
    let np = large.cells[0].median_iters;
    let np_ok = np.is_some_and(|m| m <= 10.0);

    // the posterior at iteration 30 does not depend on the cap beyond it
    let same = run_cells(&batch(30), &[(Normal, Normal)], Strategy::Bads).unwrap();
    let cell = &same.cells[0];
    let p30 = cell.median_posterior_at(30).unwrap_or(0.0);
    let correct = cell.expected == ModelId::Same;
    let nn_ok = correct && p30 >= 0.9;

    // every adjacent pair in both directions
    let pairs: Vec<_> = HearingLossClass::ALL.windows(2).flat_map(|w| [(w[0], w[1]), (w[1], w[0])]).collect();
    let adjacent = run_cells(&batch(50), &pairs, Strategy::Bads).unwrap();
    let worst = adjacent.cells.iter().max_by(|a, b| a.median_iters.unwrap_or(f64::INFINITY).total_cmp(&b.median_iters.unwrap_or(f64::INFINITY))).unwrap();
    let adj_ok = adjacent.cells.iter().all(|c| c.median_iters.is_some_and(|m| m <= 40.0));
    let mod_msev = adjacent.cells.iter().find(|c| c.old_class == Moderate && c.new_class == ModeratelySevere).and_then(|c| c.median_iters);
    let show = |m: Option<f64>| m.map_or("none".to_string(), |v| format!("{v}"));
    outcome(
        np_ok && nn_ok && adj_ok,
        format!(
            "normal→profound median {} (≤ 10); normal→normal median p(M_f) at 30 = {p30:.3} (≥ 0.9); moderate→moderately_severe median {}, slowest adjacent {} median {} (all ≤ 40)",
            show(np),
            show(mod_msev),
            worst.label(),
            show(worst.median_iters)
        ),
    )
}

fn criterion_7() -> Outcome {
    use HearingLossClass::*;
    let b = batch(50);
    let bads = run_cells(&b, &[(Normal, Moderate)], Strategy::Bads).unwrap();
    let rnd = run_cells(&b, &[(Normal, Moderate)], Strategy::Rnd).unwrap();
    let paired = bads.records.iter().zip(&rnd.records).all(|(a, r)| a.result.config.seed == r.result.config.seed && a.result.config.exam_seed == r.result.config.exam_seed);
    let (mb, mr) = (bads.cells[0].median_iters, rnd.cells[0].median_iters);
    let pass = paired
        && match (mb, mr) {
            (Some(b), Some(r)) => b < r,
            (Some(_), None) => true,
            _ => false,
        };
    outcome(pass, format!("normal→moderate median BADS {mb:?} vs RND {mr:?} over {REPS} paired seeds"))
}

fn criterion_8() -> Outcome {
    use HearingLossClass::*;
    let cells = [(Mild, Severe), (Slight, Slight)];
    let render = |workers: usize| {
        let b = BatchConfig { workers: Some(workers), ..BatchConfig::new(77, 2, TrialConfig { max_iterations: 8, ..TrialConfig::default() }) };
        let s = run_cells(&b, &cells, Strategy::Bads).unwrap();
        let mut buf = Vec::new();
        write_trials_csv(&s.records, &mut buf).unwrap();
        buf
    };
    let a = render(1);
    let b = render(1);
    let c = render(2);
    outcome(!a.is_empty() && a == b && a == c, format!("{} bytes; rerun identical: {}; 2 workers identical: {}", a.len(), a == b, a == c))
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let prior = HyperPrior::default();
    let ep = EpConfig::default();
    let mut worst = f64::INFINITY;
    for _ in 0..20 {
        let gt = canonical_audiogram(HearingLossClass::ALL[rng.gen_range(0..7)]);
        let obs: Vec<Observation> = (0..50).map(|_| gt.sample_response(&random_tone(&mut rng, Task::Reference), &mut rng)).collect();
        let init = random_theta(&mut rng, &prior);
        let start = log_posterior(&obs, &prior, &init, &ep).unwrap();
        let result = map_optimize(&obs, &prior, &init, &MapConfig::default(), &ep).unwrap();
        let end = log_posterior(&obs, &prior, &result.theta, &ep).unwrap();
        worst = worst.min(end - start);
    }
    outcome(worst >= -1e-9, format!("min log-posterior gain {worst:.3e} over 20 exams (≥ −1e-9)"))
}

type Criterion = (&'static str, fn() -> Outcome, Option<Duration>);

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 EP vs numeric integration", criterion_1, Some(Duration::from_secs(120))),
        ("2 single-site evidence", criterion_2, None),
        ("3 entropy / MI properties", criterion_3, Some(Duration::from_secs(60))),
        ("4 BALD quadrature vs Monte Carlo", criterion_4, Some(Duration::from_secs(120))),
        ("5 kernel PSD", criterion_5, None),
        ("6 differential-detection trend", criterion_6, Some(Duration::from_secs(15 * 60))),
        ("7 BADS beats RND", criterion_7, None),
        ("8 determinism", criterion_8, None),
        ("9 MAP never decreases", criterion_9, None),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run, budget) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.starts_with(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let mut o = run();
        let elapsed = t.elapsed();
        if let Some(b) = budget {
            if elapsed > b {
                o.pass = false;
                o.detail.push_str(&format!("; over the {}s budget", b.as_secs()));
            }
        }
        println!("{} criterion {name}: {} [{:.1}s]", if o.pass { "PASS" } else { "FAIL" }, o.detail, elapsed.as_secs_f64());
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
