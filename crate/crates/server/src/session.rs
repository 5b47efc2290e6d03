//! Session state machine and its append-only event log.
//!
//! A session is rebuilt from its log by replaying each record through the
//! same code path that produced it, so the posterior trace after a reload is
//! bit-identical to the live one.

use serde::{Deserialize, Serialize};

use bads_core::acquisition::{select_next, CandidateGrid, RecentDataModel, Strategy};
use bads_core::error::BadsError;
use bads_core::gp::HyperParams;
use bads_core::harness::derive_seed;
use bads_core::models::{BankConfig, ModelBank, ModelDecision, ModelId};
use bads_core::sim::{HearingLossClass, REFERENCE_EXAM_SIZE};
use bads_core::stimulus::{Observation, Task, ToneStimulus};

pub const DEFAULT_SESSION_BF: f64 = 100.0;
const SURFACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum SessionError {
    NotFound(String),
    Conflict { code: &'static str, message: String },
    Validation(String),
    Internal(String),
}

impl SessionError {
    fn conflict(code: &'static str, message: impl Into<String>) -> Self {
        SessionError::Conflict { code, message: message.into() }
    }
}

impl std::fmt::Display for SessionError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SessionError::NotFound(m) | SessionError::Validation(m) | SessionError::Internal(m) => f.write_str(m),
            SessionError::Conflict { message, .. } => f.write_str(message),
        }
    }
}

impl From<BadsError> for SessionError {
    fn from(e: BadsError) -> Self {
        match e {
            BadsError::Invalid(_) | BadsError::Domain(_) | BadsError::Csv(_) => SessionError::Validation(e.to_string()),
            other => SessionError::Internal(other.to_string()),
        }
    }
}

pub type SessionResult<T> = std::result::Result<T, SessionError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Active,
    Concluded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSettings {
    pub strategy: Strategy,
    pub bf_threshold: f64,
    pub grid: CandidateGrid,
    /// Seeds random tone picks; unused by the deterministic strategies.
    pub seed: u64,
}

impl Default for SessionSettings {
    fn default() -> Self {
        SessionSettings { strategy: Strategy::Bads, bf_threshold: DEFAULT_SESSION_BF, grid: CandidateGrid::default(), seed: 0 }
    }
}

impl SessionSettings {
    pub fn validate(&self) -> SessionResult<()> {
        if !(self.bf_threshold > 1.0 && self.bf_threshold.is_finite()) {
            return Err(SessionError::Validation(format!("bf_threshold must be finite and exceed 1, got {}", self.bf_threshold)));
        }
        if self.grid.is_empty() {
            return Err(SessionError::Validation("empty candidate grid".into()));
        }
        Ok(())
    }
}

/// Where the reference exam came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceSource {
    Simulated { class: HearingLossClass, exam_seed: u64 },
    Uploaded,
}

/// Checks an uploaded reference exam.
pub fn validate_reference(obs: &[Observation]) -> SessionResult<()> {
    if obs.len() != REFERENCE_EXAM_SIZE {
        return Err(SessionError::Validation(format!(
            "reference exam must have {REFERENCE_EXAM_SIZE} observations, got {}",
            obs.len()
        )));
    }
    for (k, o) in obs.iter().enumerate() {
        if o.stimulus.task != Task::Reference {
            return Err(SessionError::Validation(format!("reference observation {} is not a task-1 tone", k + 1)));
        }
        o.stimulus.validate().map_err(|e| SessionError::Validation(format!("reference observation {}: {e}", k + 1)))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposedTone {
    pub ordinal: usize,
    pub frequency_hz: f64,
    pub intensity_db: f64,
    pub score: f64,
    pub strategy: Strategy,
}

/// One answered tone with the posterior it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub ordinal: usize,
    pub frequency_hz: f64,
    pub intensity_db: f64,
    pub score: f64,
    pub heard: bool,
    pub p_mf: f64,
    pub p_mg: f64,
    pub log_bf: f64,
    pub at: String,
}

/// A line of the on-disk log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    Created {
        id: String,
        at: String,
        settings: SessionSettings,
        source: ReferenceSource,
        reference: Vec<Observation>,
        theta_f: HyperParams,
    },
    Response {
        ordinal: usize,
        at: String,
        frequency_hz: f64,
        intensity_db: f64,
        score: f64,
        heard: bool,
    },
    Concluded {
        at: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSnapshot {
    pub ordinal: usize,
    pub p_mf: f64,
    pub p_mg: f64,
    pub log_bf: f64,
    pub bayes_factor: f64,
    pub status: Status,
    pub decision: Option<ModelDecision>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub p_mf: f64,
    pub p_mg: f64,
    pub log_bf: f64,
}

/// `p(heard)` over the candidate grid, one row per intensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub version: u32,
    pub frequencies: Vec<f64>,
    pub intensities: Vec<f64>,
    pub p_same: Vec<Vec<f64>>,
    pub p_different: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub status: Status,
    pub settings: SessionSettings,
    pub source: ReferenceSource,
    pub created_at: String,
    pub updated_at: String,
    pub prior: [f64; 2],
    pub posterior: [f64; 2],
    pub log_bf: f64,
    pub bayes_factor: f64,
    pub leading_model: ModelId,
    pub decision: Option<ModelDecision>,
    pub pending: Option<ProposedTone>,
    pub trace: Vec<TracePoint>,
    pub events: Vec<SessionEvent>,
    pub theta_f: HyperParams,
    pub theta_g: HyperParams,
    pub reference: Vec<Observation>,
    pub surface: Surface,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    settings: SessionSettings,
    source: ReferenceSource,
    created_at: String,
    updated_at: String,
    bank: ModelBank,
    recent: Option<RecentDataModel>,
    prior: [f64; 2],
    status: Status,
    decision: Option<ModelDecision>,
    events: Vec<SessionEvent>,
    pending: Option<ProposedTone>,
    /// Set once the session is deleted so in-flight handlers stop writing.
    pub deleted: bool,
}

impl Session {
    /// Builds a session from its creation record. `Created` is the only
    /// record that can start a log.
    pub fn from_created(record: &LogRecord) -> SessionResult<Session> {
        let LogRecord::Created { id, at, settings, source, reference, theta_f } = record else {
            return Err(SessionError::Internal("session log does not start with a creation record".into()));
        };
        settings.validate()?;
        validate_reference(reference)?;
        let bank = ModelBank::with_reference_params(reference.clone(), *theta_f, BankConfig::default())?;
        let recent = (settings.strategy == Strategy::Bald).then(|| RecentDataModel::new(*theta_f));
        Ok(Session {
            id: id.clone(),
            settings: settings.clone(),
            source: source.clone(),
            created_at: at.clone(),
            updated_at: at.clone(),
            prior: bank.posterior(),
            bank,
            recent,
            status: Status::Active,
            decision: None,
            events: Vec::new(),
            pending: None,
            deleted: false,
        })
    }

    /// Rebuilds a session by replaying its log.
    pub fn replay(records: &[LogRecord]) -> SessionResult<Session> {
        let first = records.first().ok_or_else(|| SessionError::Internal("empty session log".into()))?;
        let mut s = Session::from_created(first)?;
        for r in &records[1..] {
            match r {
                LogRecord::Created { .. } => return Err(SessionError::Internal("duplicate creation record".into())),
                LogRecord::Response { ordinal, at, frequency_hz, intensity_db, score, heard } => {
                    if *ordinal != s.events.len() + 1 {
                        return Err(SessionError::Internal(format!("log ordinal {ordinal} out of sequence")));
                    }
                    let tone = ProposedTone {
                        ordinal: *ordinal,
                        frequency_hz: *frequency_hz,
                        intensity_db: *intensity_db,
                        score: *score,
                        strategy: s.settings.strategy,
                    };
                    s.apply(tone, *heard, at.clone())?;
                }
                LogRecord::Concluded { at } => s.close(at.clone()),
            }
        }
        s.propose();
        Ok(s)
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn settings(&self) -> &SessionSettings {
        &self.settings
    }

    pub fn bank(&self) -> &ModelBank {
        &self.bank
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn pending(&self) -> Option<ProposedTone> {
        self.pending
    }

    fn ensure_active(&self) -> SessionResult<()> {
        if self.deleted {
            return Err(SessionError::NotFound(format!("session {} not found", self.id)));
        }
        if self.status == Status::Concluded {
            return Err(SessionError::conflict("session_concluded", format!("session {} is concluded", self.id)));
        }
        Ok(())
    }

    /// The tone to present next. Repeated calls return the same tone until
    /// it is answered.
    pub fn next_tone(&mut self) -> SessionResult<ProposedTone> {
        self.ensure_active()?;
        if let Some(p) = self.pending {
            return Ok(p);
        }
        let ordinal = self.events.len() + 1;
        let seed = derive_seed(self.settings.seed, &[ordinal as u64]);
        let pick = select_next(&self.bank, &self.settings.grid, self.settings.strategy, seed, self.recent.as_ref())?;
        let tone = ProposedTone {
            ordinal,
            frequency_hz: pick.stimulus.frequency_hz,
            intensity_db: pick.stimulus.intensity_db,
            score: pick.score,
            strategy: self.settings.strategy,
        };
        self.pending = Some(tone);
        Ok(tone)
    }

    fn propose(&mut self) {
        if self.status == Status::Active && !self.deleted {
            // a failed pick resurfaces on the next next_tone call
            let _ = self.next_tone();
        }
    }

    /// Records the answer to the pending tone and proposes the next one.
    /// Returns the snapshot and the log record to persist. On error the
    /// session may be partially updated, so callers work on a clone.
    pub fn submit(&mut self, ordinal: usize, heard: bool, at: String) -> SessionResult<(ResponseSnapshot, LogRecord)> {
        self.ensure_active()?;
        if ordinal <= self.events.len() {
            return Err(SessionError::conflict("ordinal_answered", format!("ordinal {ordinal} was already answered")));
        }
        let Some(tone) = self.pending else {
            return Err(SessionError::conflict("no_tone_proposed", "no tone has been proposed; fetch next-tone first"));
        };
        if tone.ordinal != ordinal {
            return Err(SessionError::conflict(
                "ordinal_mismatch",
                format!("pending tone has ordinal {}, got {ordinal}", tone.ordinal),
            ));
        }
        self.apply(tone, heard, at.clone())?;
        self.propose();
        let last = self.events.last().expect("event just appended");
        let snapshot = ResponseSnapshot {
            ordinal,
            p_mf: last.p_mf,
            p_mg: last.p_mg,
            log_bf: last.log_bf,
            bayes_factor: last.log_bf.abs().exp(),
            status: self.status,
            decision: self.decision.clone(),
        };
        let record = LogRecord::Response {
            ordinal,
            at,
            frequency_hz: tone.frequency_hz,
            intensity_db: tone.intensity_db,
            score: tone.score,
            heard,
        };
        Ok((snapshot, record))
    }

    /// Ends an active session at its current state.
    pub fn conclude(&mut self, at: String) -> SessionResult<LogRecord> {
        self.ensure_active()?;
        self.close(at.clone());
        Ok(LogRecord::Concluded { at })
    }

    fn close(&mut self, at: String) {
        self.status = Status::Concluded;
        self.pending = None;
        self.decision = Some(self.bank.decision(self.posterior_trace()));
        self.updated_at = at;
    }

    fn apply(&mut self, tone: ProposedTone, heard: bool, at: String) -> SessionResult<()> {
        let stimulus = ToneStimulus::new(tone.frequency_hz, tone.intensity_db, Task::Current)?;
        let obs = Observation::new(stimulus, heard);
        self.bank.update(obs)?;
        if let Some(r) = self.recent.as_mut() {
            r.observe(obs)?;
        }
        let [p_mf, p_mg] = self.bank.posterior();
        let log_bf = self.bank.log_bayes_factor();
        self.events.push(SessionEvent {
            ordinal: tone.ordinal,
            frequency_hz: tone.frequency_hz,
            intensity_db: tone.intensity_db,
            score: tone.score,
            heard,
            p_mf,
            p_mg,
            log_bf,
            at: at.clone(),
        });
        self.pending = None;
        self.updated_at = at.clone();
        if log_bf.abs() >= self.settings.bf_threshold.ln() {
            self.close(at);
        }
        Ok(())
    }

    fn posterior_trace(&self) -> Vec<[f64; 2]> {
        self.events.iter().map(|e| [e.p_mf, e.p_mg]).collect()
    }

    pub fn trace(&self) -> Vec<TracePoint> {
        self.events
            .iter()
            .map(|e| TracePoint { iteration: e.ordinal, p_mf: e.p_mf, p_mg: e.p_mg, log_bf: e.log_bf })
            .collect()
    }

    pub fn surface(&self) -> Surface {
        let grid = &self.settings.grid;
        let pred = self.bank.predict(&grid.stimuli());
        let nf = grid.frequencies.len();
        let rows = |f: &dyn Fn(usize) -> f64| (0..grid.intensities.len()).map(|r| (0..nf).map(|c| f(r * nf + c)).collect()).collect();
        Surface {
            version: SURFACE_VERSION,
            frequencies: grid.frequencies.clone(),
            intensities: grid.intensities.clone(),
            p_same: rows(&|i| pred.p_same[i]),
            p_different: rows(&|i| pred.p_different(i)),
        }
    }

    pub fn view(&self) -> SessionView {
        let log_bf = self.bank.log_bayes_factor();
        SessionView {
            id: self.id.clone(),
            status: self.status,
            settings: self.settings.clone(),
            source: self.source.clone(),
            created_at: self.created_at.clone(),
            updated_at: self.updated_at.clone(),
            prior: self.prior,
            posterior: self.bank.posterior(),
            log_bf,
            bayes_factor: log_bf.abs().exp(),
            leading_model: self.bank.leading_model(),
            decision: self.decision.clone(),
            pending: self.pending,
            trace: self.trace(),
            events: self.events.clone(),
            theta_f: *self.bank.theta_f(),
            theta_g: *self.bank.theta_g(),
            reference: self.bank.reference().to_vec(),
            surface: self.surface(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use bads_core::sim::{canonical_audiogram, generate_reference_exam, ExamConfig};

    fn small_grid() -> CandidateGrid {
        CandidateGrid::new(6, 125.0, 8000.0, 6, -10.0, 110.0).unwrap()
    }

    fn created(class: HearingLossClass, bf: f64) -> LogRecord {
        let grid = small_grid();
        let exam = generate_reference_exam(&canonical_audiogram(class), 5, &ExamConfig { grid: grid.clone(), ..ExamConfig::default() }).unwrap();
        LogRecord::Created {
            id: "t".into(),
            at: "2026-01-01T00:00:00.000Z".into(),
            settings: SessionSettings { grid, bf_threshold: bf, ..SessionSettings::default() },
            source: ReferenceSource::Simulated { class, exam_seed: 5 },
            reference: exam.observations,
            theta_f: exam.theta,
        }
    }

    #[test]
    fn answering_requires_a_proposal() {
        let mut s = Session::from_created(&created(HearingLossClass::Mild, 1e300)).unwrap();
        assert!(matches!(s.submit(1, true, "x".into()), Err(SessionError::Conflict { code: "no_tone_proposed", .. })));
    }

    #[test]
    fn fresh_session_sits_at_the_prior() {
        let s = Session::from_created(&created(HearingLossClass::Normal, 100.0)).unwrap();
        let v = s.view();
        assert_eq!(v.posterior, [0.5, 0.5]);
        assert!(v.events.is_empty() && v.trace.is_empty());
        assert_eq!(v.surface.p_same.len(), 6);
        assert!(v.surface.p_same.iter().chain(&v.surface.p_different).flatten().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn next_tone_is_idempotent_and_answers_are_ordered() {
        let mut s = Session::from_created(&created(HearingLossClass::Mild, 1e300)).unwrap();
        let a = s.next_tone().unwrap();
        assert_eq!(s.next_tone().unwrap(), a);
        assert_eq!(a.ordinal, 1);
        assert!(matches!(s.submit(2, true, "x".into()), Err(SessionError::Conflict { code: "ordinal_mismatch", .. })));
        let (snap, _) = s.submit(1, true, "x".into()).unwrap();
        assert!((snap.p_mf + snap.p_mg - 1.0).abs() < 1e-12);
        assert!(matches!(s.submit(1, true, "x".into()), Err(SessionError::Conflict { code: "ordinal_answered", .. })));
        let next = s.pending().unwrap();
        assert_eq!(next.ordinal, 2);
        assert_eq!(s.next_tone().unwrap(), next);
    }

    #[test]
    fn replay_reproduces_the_trace() {
        let first = created(HearingLossClass::Mild, 1e300);
        let mut s = Session::from_created(&first).unwrap();
        let mut log = vec![first];
        for k in 1..=4 {
            let t = s.next_tone().unwrap();
            let (_, rec) = s.submit(t.ordinal, k % 2 == 0, format!("t{k}")).unwrap();
            log.push(rec);
        }
        log.push(s.conclude("end".into()).unwrap());
        let r = Session::replay(&log).unwrap();
        assert_eq!(r.view(), s.view());
        assert_eq!(r.status(), Status::Concluded);
    }

    #[test]
    fn crossing_the_threshold_concludes() {
        let mut s = Session::from_created(&created(HearingLossClass::Normal, 1.0001)).unwrap();
        let t = s.next_tone().unwrap();
        let (snap, _) = s.submit(t.ordinal, false, "x".into()).unwrap();
        assert_eq!(snap.status, Status::Concluded);
        assert!(snap.decision.is_some());
        assert!(matches!(s.next_tone(), Err(SessionError::Conflict { code: "session_concluded", .. })));
    }

    #[test]
    fn reference_validation() {
        let LogRecord::Created { reference, .. } = created(HearingLossClass::Normal, 100.0) else { unreachable!() };
        assert!(validate_reference(&reference).is_ok());
        assert!(matches!(validate_reference(&reference[..49]), Err(SessionError::Validation(_))));
        let mut wrong = reference.clone();
        wrong[3].stimulus.task = Task::Current;
        assert!(validate_reference(&wrong).is_err());
    }
}
