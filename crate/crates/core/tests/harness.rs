use bads_core::acquisition::Strategy;
use bads_core::harness::{derive_seed, run_cells, run_trial, BatchConfig, TrialConfig};
use bads_core::models::model_posterior;
use bads_core::sim::HearingLossClass::*;

fn short(old: bads_core::sim::HearingLossClass, new: bads_core::sim::HearingLossClass, seed: u64) -> TrialConfig {
    TrialConfig { old_class: old, new_class: new, seed, max_iterations: 6, ..TrialConfig::default() }
}

#[test]
fn trace_is_consistent_with_evidences() {
    let r = run_trial(&short(Mild, Moderate, 11)).unwrap();
    assert!(r.failure.is_none());
    assert_eq!(r.prior, [0.5, 0.5]);
    for (k, e) in r.trace.iter().enumerate() {
        assert_eq!(e.iteration, k + 1);
        assert!((e.p_mf + e.p_mg - 1.0).abs() < 1e-12);
        assert!((e.log_bf - (e.log_evidence_f - e.log_evidence_g)).abs() < 1e-9);
        assert!((e.bayes_factor() - e.log_bf.abs().exp()).abs() <= 1e-9 * e.bayes_factor());
        let p = model_posterior(e.log_evidence_f, e.log_evidence_g, [0.5, 0.5]);
        assert!((p[0] - e.p_mf).abs() < 1e-12);
    }
}

#[test]
fn stops_at_threshold() {
    let r = run_trial(&TrialConfig { max_iterations: 20, ..short(Normal, Profound, 4) }).unwrap();
    let k = r.iterations_to_threshold.expect("large change is detected");
    assert_eq!(r.trace.len(), k);
    assert!(r.trace[k - 1].bayes_factor() >= 100.0);
    assert!(r.trace[..k - 1].iter().all(|e| e.bayes_factor() < 100.0));
}

#[test]
fn strategies_share_seeds_and_exams() {
    let b = BatchConfig::new(5, 2, short(Slight, Mild, 0));
    let x = run_cells(&b, &[(Slight, Mild)], Strategy::Bads).unwrap();
    let y = run_cells(&b, &[(Slight, Mild)], Strategy::Us).unwrap();
    for (a, c) in x.records.iter().zip(&y.records) {
        assert_eq!(a.result.config.seed, c.result.config.seed);
        assert_eq!(a.result.config.exam_seed, c.result.config.exam_seed);
    }
    assert_ne!(x.records[0].result.config.seed, x.records[1].result.config.seed);
}

#[test]
fn derived_seeds_depend_on_every_part() {
    let a = derive_seed(1, &[2, 3]);
    assert_eq!(a, derive_seed(1, &[2, 3]));
    assert_ne!(a, derive_seed(1, &[3, 2]));
    assert_ne!(a, derive_seed(2, &[2, 3]));
    assert_ne!(a, derive_seed(1, &[2, 3, 0]));
}
