//! The iterative loop: fit knowns, extract candidates from the residual, match
//! them against the library, confirm, feed confirmed components back, repeat.

mod compare;
mod matching;
mod report;
mod session;

use std::collections::{HashSet, VecDeque};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::cls::LsOptions;
use crate::cone::{ConeConfig, SourceCount};
use crate::error::{Error, Result};
use crate::sparse::{BregmanConfig, RecoveryMethod};

pub use compare::{best_column_cosines, compare_nmf, BaselineComparison};
pub use matching::{cosine_similarity, match_library, LibraryMatch, MatchResult};
pub use report::{CandidateSummary, IterationSummary, Report, SubstanceReport};
pub use session::{
    AppliedDecision, Candidate, CandidateDecision, Decision, IterationRecord, KnownComponent,
    Origin, Session, SessionStatus,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub ls: LsOptions<f64>,
    pub cone: ConeConfig,
    pub source_count: SourceCount,
    pub recovery: RecoveryMethod,
    pub bregman: BregmanConfig<f64>,
    pub top_k: usize,
    /// Converged once `‖R‖_F / ‖X‖_F` is at or below this.
    pub convergence_threshold: f64,
    pub max_iterations: usize,
    /// A confirmed component's bound is this times its largest fitted concentration.
    pub bound_slack: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            ls: LsOptions::default(),
            cone: ConeConfig::noise_tolerant(),
            source_count: SourceCount::Auto { max: 5 },
            recovery: RecoveryMethod::Bregman,
            bregman: BregmanConfig::default(),
            top_k: 5,
            convergence_threshold: 0.02,
            max_iterations: 10,
            bound_slack: 1.1,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.bregman.validate()?;
        match self.source_count {
            SourceCount::Fixed(0) => {
                return Err(Error::InvalidParameter("source count must be ≥ 1".into()))
            }
            SourceCount::Auto { max: 0 } => {
                return Err(Error::InvalidParameter(
                    "maximum source count must be ≥ 1".into(),
                ))
            }
            _ => {}
        }
        if self.top_k == 0 {
            return Err(Error::InvalidParameter("top_k must be ≥ 1".into()));
        }
        if !(self.convergence_threshold >= 0.0) {
            return Err(Error::InvalidParameter(
                "convergence threshold must be ≥ 0".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("max_iterations must be ≥ 1".into()));
        }
        if !(self.bound_slack >= 1.0) || !self.bound_slack.is_finite() {
            return Err(Error::InvalidParameter("bound slack must be ≥ 1".into()));
        }
        if !(self.cone.min_norm_frac >= 0.0 && self.cone.min_norm_frac < 1.0) {
            return Err(Error::InvalidParameter(
                "min_norm_frac must lie in [0, 1)".into(),
            ));
        }
        if !(self.cone.parallel_tol >= 0.0) {
            return Err(Error::InvalidParameter("parallel_tol must be ≥ 0".into()));
        }
        if !(self.ls.tol >= 0.0) || self.ls.max_iter == 0 {
            return Err(Error::InvalidParameter(
                "fit tol must be ≥ 0 and max_iter ≥ 1".into(),
            ));
        }
        Ok(())
    }
}

/// Supplies decisions for the candidates of a session's latest iteration.
pub trait Confirmer {
    fn decide(&mut self, session: &Session) -> Vec<CandidateDecision>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoPolicy {
    /// Confirm only the highest-scoring candidate that matches.
    Strongest,
    /// Confirm every candidate that matches.
    All,
}

/// Confirms candidates whose best library match, among names not yet known or
/// claimed by a higher-scoring candidate, reaches `threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AutoConfirmer {
    pub threshold: f64,
    pub policy: AutoPolicy,
}

impl AutoConfirmer {
    pub fn new(threshold: f64) -> Self {
        Self {
            threshold,
            policy: AutoPolicy::Strongest,
        }
    }
}

impl Confirmer for AutoConfirmer {
    fn decide(&mut self, session: &Session) -> Vec<CandidateDecision> {
        let Some(rec) = session.latest() else {
            return Vec::new();
        };
        let mut claimed: HashSet<&str> = session.known().iter().map(|k| k.name.as_str()).collect();
        let mut confirmed = false;
        rec.candidates
            .iter()
            .map(|c| {
                if confirmed && self.policy == AutoPolicy::Strongest {
                    return CandidateDecision::reject(c.index);
                }
                let pick = c
                    .matches
                    .iter()
                    .find(|m| m.similarity >= self.threshold && !claimed.contains(m.name.as_str()));
                match pick {
                    Some(m) => {
                        claimed.insert(m.name.as_str());
                        confirmed = true;
                        CandidateDecision::confirm(c.index, m.name.clone())
                    }
                    None => CandidateDecision::reject(c.index),
                }
            })
            .collect()
    }
}

/// Plays back a fixed list of decision rounds; candidates of rounds beyond the
/// script are rejected.
#[derive(Debug, Clone, Default)]
pub struct ScriptedConfirmer {
    rounds: VecDeque<Vec<CandidateDecision>>,
}

impl ScriptedConfirmer {
    pub fn new(rounds: impl IntoIterator<Item = Vec<CandidateDecision>>) -> Self {
        Self {
            rounds: rounds.into_iter().collect(),
        }
    }

    /// The decision rounds recorded in a session, in iteration order.
    pub fn from_session(session: &Session) -> Self {
        let rounds = session
            .iteration_log()
            .iter()
            .map(|rec| {
                session
                    .decisions()
                    .iter()
                    .filter(|d| d.iteration == rec.iteration)
                    .map(|d| CandidateDecision {
                        candidate: d.candidate,
                        decision: d.decision.clone(),
                    })
                    .collect::<Vec<_>>()
            })
            .take_while(|g| !g.is_empty());
        Self::new(rounds)
    }
}

impl Confirmer for ScriptedConfirmer {
    fn decide(&mut self, session: &Session) -> Vec<CandidateDecision> {
        match self.rounds.pop_front() {
            Some(round) => round,
            None => session
                .undecided()
                .into_iter()
                .map(CandidateDecision::reject)
                .collect(),
        }
    }
}

/// Result of [`run_pipeline`]; the report is complete up to the point of any error.
#[derive(Debug)]
pub struct PipelineRun {
    pub report: Report,
    pub timings: Vec<Duration>,
    pub error: Option<Error>,
}

/// Iterates `session` with `confirmer` until it converges or is exhausted.
pub fn run_pipeline(session: &mut Session, confirmer: &mut dyn Confirmer) -> PipelineRun {
    let mut timings = Vec::new();
    let mut error = None;
    while !session.status().is_terminal() {
        let decisions = match session.status() {
            SessionStatus::Created => Vec::new(),
            _ => confirmer.decide(session),
        };
        let t = Instant::now();
        let res = session.run_iteration(&decisions);
        timings.push(t.elapsed());
        if let Err(e) = res {
            error = Some(e);
            break;
        }
    }
    let mut report = Report::from_session(session);
    report.error = error.as_ref().map(|e| e.to_string());
    PipelineRun {
        report,
        timings,
        error,
    }
}
