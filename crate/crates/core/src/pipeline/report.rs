use std::fmt::Write as _;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::matching::LibraryMatch;
use super::session::{AppliedDecision, Decision, Origin, Session, SessionStatus};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstanceReport {
    pub name: String,
    pub origin: Origin,
    pub bound: f64,
    /// Concentrations from the last fit that included this substance.
    pub concentrations: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub index: usize,
    pub row_index: usize,
    pub score: f64,
    pub best_match: Option<LibraryMatch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub iteration: usize,
    pub known: Vec<String>,
    pub residual_norm: f64,
    pub relative_residual: f64,
    pub negative_fraction: f64,
    pub source_count: usize,
    pub candidates: Vec<CandidateSummary>,
    pub decisions: Vec<AppliedDecision>,
}

/// Outcome of a run. Serialised without timings unless they were attached
/// explicitly, so that reports of identical runs are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub session_id: String,
    pub status: SessionStatus,
    pub substances: Vec<SubstanceReport>,
    pub iterations: Vec<IterationSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<Vec<f64>>,
}

impl Report {
    pub fn from_session(session: &Session) -> Self {
        let log = session.iteration_log();
        let substances = session
            .known()
            .iter()
            .map(|k| {
                let concentrations = log.iter().rev().find_map(|rec| {
                    rec.known_names
                        .iter()
                        .position(|n| n == &k.name)
                        .map(|i| rec.concentrations.row(i).to_vec())
                });
                SubstanceReport {
                    name: k.name.clone(),
                    origin: k.origin.clone(),
                    bound: k.bound,
                    concentrations,
                }
            })
            .collect();
        let iterations = log
            .iter()
            .map(|rec| IterationSummary {
                iteration: rec.iteration,
                known: rec.known_names.clone(),
                residual_norm: rec.residual_norm,
                relative_residual: rec.relative_residual,
                negative_fraction: rec.negative_fraction,
                source_count: rec.source_count,
                candidates: rec
                    .candidates
                    .iter()
                    .map(|c| CandidateSummary {
                        index: c.index,
                        row_index: c.row_index,
                        score: c.score,
                        best_match: c.best_match().cloned(),
                    })
                    .collect(),
                decisions: session
                    .decisions()
                    .iter()
                    .filter(|d| d.iteration == rec.iteration)
                    .cloned()
                    .collect(),
            })
            .collect();
        Self {
            session_id: session.id().to_string(),
            status: session.status(),
            substances,
            iterations,
            error: None,
            timings_ms: None,
        }
    }

    pub fn with_timings(mut self, timings: &[Duration]) -> Self {
        self.timings_ms = Some(timings.iter().map(|d| d.as_secs_f64() * 1e3).collect());
        self
    }

    /// Names confirmed during the run, in confirmation order.
    pub fn identified(&self) -> Vec<&str> {
        self.substances
            .iter()
            .filter(|s| matches!(s.origin, Origin::Confirmed { .. }))
            .map(|s| s.name.as_str())
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "session {}: {}", self.session_id, self.status);
        for it in &self.iterations {
            let _ = writeln!(
                out,
                "iteration {}: ‖R‖/‖X‖ = {:.4}, negative fraction {:.3}, {} candidate(s)",
                it.iteration,
                it.relative_residual,
                it.negative_fraction,
                it.candidates.len()
            );
            for c in &it.candidates {
                let m = c.best_match.as_ref().map_or("no match".to_string(), |m| {
                    format!("{} ({:.4})", m.name, m.similarity)
                });
                let d = it
                    .decisions
                    .iter()
                    .find(|d| d.candidate == c.index)
                    .map(|d| match &d.decision {
                        Decision::Confirm { name } => format!(" -> confirmed as {name}"),
                        Decision::Reject => " -> rejected".to_string(),
                    });
                let _ = writeln!(
                    out,
                    "  candidate {} (row {}, score {:.3e}): {}{}",
                    c.index,
                    c.row_index,
                    c.score,
                    m,
                    d.unwrap_or_default()
                );
            }
        }
        let _ = writeln!(out, "substances:");
        for s in &self.substances {
            let origin = match &s.origin {
                Origin::Initial => "initial".to_string(),
                Origin::Confirmed {
                    iteration, score, ..
                } => match score {
                    Some(sc) => format!("confirmed in iteration {iteration}, match {sc:.4}"),
                    None => format!("confirmed in iteration {iteration}"),
                },
            };
            let conc = s.concentrations.as_ref().map_or(String::from("-"), |c| {
                c.iter()
                    .map(|v| format!("{v:.4}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            });
            let _ = writeln!(
                out,
                "  {} [{}] bound {:.4}: {}",
                s.name, origin, s.bound, conc
            );
        }
        if let Some(t) = &self.timings_ms {
            let total: f64 = t.iter().sum();
            let _ = writeln!(out, "time: {total:.1} ms over {} step(s)", t.len());
        }
        if let Some(e) = &self.error {
            let _ = writeln!(out, "error: {e}");
        }
        out
    }
}
