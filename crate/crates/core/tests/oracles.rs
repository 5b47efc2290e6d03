// Fixed reference values computed offline at 30 significant digits.

use bads_core::acquisition::{entropy_bernoulli, entropy_mixture, model_information};
use bads_core::gp::{ep_fit, kernel_f, HyperParams, LatentPredictive};
use bads_core::models::{model_posterior, PredictiveBernoulliMixture};
use bads_core::sim::{canonical_audiogram, classify, pta, HearingLossClass};
use bads_core::{Observation, Task, ToneStimulus};

const PHI_INV_SQRT2: f64 = 0.760249938906523268841373326946;
const H_QUARTER: f64 = 0.562335144618808350288030315224;
const PHI_1: f64 = 0.841344746068542948585232545632;
const PHI_HALF: f64 = 0.691462461274013103637704610608;
const PHI_4: f64 = 0.999968328758166880078746229243;
const MI_09_05: f64 = 0.101749225079196688563779888356;
const EXP_NEG_HALF: f64 = 0.606530659712633423603799534991;
const HUNDRED_OVER_101: f64 = 0.990099009900990099009900990099;

fn tone(f: f64, i: f64) -> ToneStimulus {
    ToneStimulus::new(f, i, Task::Reference).unwrap()
}

#[test]
fn single_site_evidence_with_unit_mean() {
    // c = 1 and prior variance 1: a bare constant kernel
    let obs = [Observation::new(tone(1000.0, 40.0), true)];
    let st = ep_fit(&obs, 1.0, |_, _| 1.0, &Default::default()).unwrap();
    assert!((st.log_evidence.exp() - PHI_INV_SQRT2).abs() < 1e-9, "{}", st.log_evidence.exp());

    let half = ep_fit(&obs, 0.0, |_, _| 1.0, &Default::default()).unwrap();
    assert!((half.log_evidence - 0.5f64.ln()).abs() < 1e-12);
}

#[test]
fn probit_predictive_values() {
    assert!((LatentPredictive { mean: 1.0, variance: 0.0 }.probability() - PHI_1).abs() < 1e-12);
    assert!((LatentPredictive { mean: 1.0, variance: 3.0 }.probability() - PHI_HALF).abs() < 1e-12);
    assert_eq!(LatentPredictive { mean: 0.0, variance: 2.5 }.probability(), 0.5);
}

#[test]
fn entropies() {
    assert!((entropy_bernoulli(0.25).unwrap() - H_QUARTER).abs() < 1e-12);
    assert!((entropy_bernoulli(0.5).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    let m = PredictiveBernoulliMixture::new(vec![(0.25, 1.0), (0.75, 0.0)]).unwrap();
    assert!((entropy_mixture(&m) - H_QUARTER).abs() < 1e-12);
    assert!((model_information(0.9, 0.5, [0.5, 0.5]) - MI_09_05).abs() < 1e-12);
    assert!((model_information(1.0, 0.0, [0.5, 0.5]) - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn se_component_at_one_length_scale() {
    let theta = HyperParams::new(0.0, 2.0, 3.0, 0.7).unwrap();
    let a = tone(500.0, -10.0).features();
    let mut b = a;
    b.octave += theta.ell;
    // intensity feature is zero at -10 dB so only the SE term remains
    assert!(a.intensity.abs() < 1e-12);
    assert!((kernel_f(&a, &b, &theta) - 3.0 * EXP_NEG_HALF).abs() < 1e-12);
}

#[test]
fn hundredfold_evidence_gap() {
    let p = model_posterior(100f64.ln(), 0.0, [0.5, 0.5]);
    assert!((p[0] - HUNDRED_OVER_101).abs() < 1e-12);
    assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
    let q = model_posterior(-3.0, -3.0, [0.9, 0.1]);
    assert!((q[0] - 0.9).abs() < 1e-12);
}

#[test]
fn psychometric_tail() {
    let gt = canonical_audiogram(HearingLossClass::Mild);
    let th = gt.threshold_at(1000.0);
    assert!((gt.response_probability(&tone(1000.0, th)) - 0.5).abs() < 1e-12);
    let p = gt.response_probability(&tone(1000.0, th + 4.0 * gt.spread_db));
    assert!((p - PHI_4).abs() < 1e-9);
}

#[test]
fn canonical_classes_are_self_consistent() {
    for c in HearingLossClass::ALL {
        let gt = canonical_audiogram(c);
        assert_eq!(classify(pta(gt.pta_anchors())), c, "{c}");
        // spline between the 1 kHz and 2 kHz anchors stays near them
        let (a, b) = (gt.threshold_at(1000.0), gt.threshold_at(2000.0));
        let mid = gt.threshold_at(1500.0);
        assert!(mid >= a.min(b) - 15.0 && mid <= a.max(b) + 15.0, "{c}: {mid} vs [{a}, {b}]");
    }
    assert_eq!(pta([20.0, 30.0, 40.0]), 30.0);
    assert_eq!(pta([0.0, 0.0, 45.0]), 15.0);
}
