//! JSON config files and their merge with command-line flags.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use bads_core::acquisition::{CandidateGrid, Strategy};
use bads_core::error::{BadsError, Result};
use bads_core::harness::TrialConfig;
use bads_core::models::EvidenceMode;
use bads_core::sim::HearingLossClass;

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n_freq: usize,
    pub f_lo: f64,
    pub f_hi: f64,
    pub n_int: usize,
    pub i_lo: f64,
    pub i_hi: f64,
}

impl GridSpec {
    pub fn build(&self) -> Result<CandidateGrid> {
        CandidateGrid::new(self.n_freq, self.f_lo, self.f_hi, self.n_int, self.i_lo, self.i_hi)
    }
}

/// Every flag, all optional. Keys match the long flag names with `-`
/// replaced by `_`.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub old: Option<HearingLossClass>,
    pub new: Option<HearingLossClass>,
    pub strategy: Option<Strategy>,
    pub strategies: Option<Vec<Strategy>>,
    pub seed: Option<u64>,
    pub max_iter: Option<usize>,
    pub bf: Option<f64>,
    pub reps: Option<usize>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub spread_db: Option<f64>,
    pub evidence_mode: Option<EvidenceMode>,
    pub grid: Option<GridSpec>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| BadsError::Invalid(format!("config {}: {e}", path.display())))
    }

    /// Fields set in `flags` win over fields set here.
    pub fn overridden_by(self, flags: FileConfig) -> FileConfig {
        FileConfig {
            old: flags.old.or(self.old),
            new: flags.new.or(self.new),
            strategy: flags.strategy.or(self.strategy),
            strategies: flags.strategies.or(self.strategies),
            seed: flags.seed.or(self.seed),
            max_iter: flags.max_iter.or(self.max_iter),
            bf: flags.bf.or(self.bf),
            reps: flags.reps.or(self.reps),
            workers: flags.workers.or(self.workers),
            out: flags.out.or(self.out),
            spread_db: flags.spread_db.or(self.spread_db),
            evidence_mode: flags.evidence_mode.or(self.evidence_mode),
            grid: flags.grid.or(self.grid),
        }
    }

    pub fn require_out(&self) -> Result<PathBuf> {
        self.out.clone().ok_or_else(|| BadsError::Invalid("an output directory is required (--out)".into()))
    }

    pub fn require_pair(&self) -> Result<(HearingLossClass, HearingLossClass)> {
        match (self.old, self.new) {
            (Some(o), Some(n)) => Ok((o, n)),
            _ => Err(BadsError::Invalid("both --old and --new are required".into())),
        }
    }

    /// Trial template with defaults for anything unset.
    pub fn trial(&self) -> Result<TrialConfig> {
        let d = TrialConfig::default();
        let cfg = TrialConfig {
            old_class: self.old.unwrap_or(d.old_class),
            new_class: self.new.unwrap_or(d.new_class),
            strategy: self.strategy.unwrap_or(d.strategy),
            seed: self.seed.unwrap_or(d.seed),
            max_iterations: self.max_iter.unwrap_or(d.max_iterations),
            bf_threshold: self.bf.unwrap_or(d.bf_threshold),
            spread_db: self.spread_db.unwrap_or(d.spread_db),
            evidence_mode: self.evidence_mode.unwrap_or(d.evidence_mode),
            grid: match &self.grid {
                Some(g) => g.build()?,
                None => d.grid,
            },
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file: FileConfig = serde_json::from_str(r#"{"old": "mild", "new": "severe", "seed": 3, "bf": 50, "reps": 4}"#).unwrap();
        let flags = FileConfig { seed: Some(9), new: Some(HearingLossClass::Normal), ..FileConfig::default() };
        let m = file.overridden_by(flags);
        assert_eq!(m.old, Some(HearingLossClass::Mild));
        assert_eq!(m.new, Some(HearingLossClass::Normal));
        assert_eq!(m.seed, Some(9));
        assert_eq!(m.bf, Some(50.0));
        assert_eq!(m.reps, Some(4));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<FileConfig>(r#"{"max_iterations": 3}"#).is_err());
        assert!(serde_json::from_str::<FileConfig>(r#"{"strategy": "thompson"}"#).is_err());
    }

    #[test]
    fn trial_defaults_and_validation() {
        let t = FileConfig::default().trial().unwrap();
        assert_eq!(t, TrialConfig::default());
        assert!(FileConfig { bf: Some(1.0), ..FileConfig::default() }.trial().is_err());
        assert!(FileConfig { max_iter: Some(0), ..FileConfig::default() }.trial().is_err());
        assert!(FileConfig::default().require_pair().is_err());
    }
}
