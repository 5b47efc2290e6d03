//! Audiometry simulator: hearing-loss classes, canonical ground truths,
//! simulated responders and reference exams.

pub mod classes;
pub mod exam;
pub mod ground_truth;
pub mod halton;
pub mod spline;

pub use classes::{classify, pta, HearingLossClass};
pub use exam::{generate_reference_exam, read_exam_csv, write_exam_csv, ExamConfig, ReferenceExam, REFERENCE_EXAM_SIZE};
pub use ground_truth::{canonical_audiogram, AnchorSet, GroundTruthAudiogram};
pub use halton::halton;
pub use spline::NaturalCubicSpline;
