use std::collections::BTreeMap;
use std::fmt;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::matching::{cosine_similarity, match_library, LibraryMatch};
use super::PipelineConfig;
use crate::cls::{box_constrained_ls, compute_residual, ResidualMatrix};
use crate::cone::{extract_mixing, RowScore, SourceCount};
use crate::error::{Error, Result};
use crate::sparse::{recover, RecoveryStats};
use crate::spectra::{ConcentrationBounds, MixtureMatrix, ReferenceLibrary, Spectrum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    /// No iteration has run yet.
    Created,
    AwaitingConfirmation,
    Converged,
    /// Stopped without reaching the residual threshold: every candidate was
    /// rejected, or the iteration limit was hit.
    Exhausted,
}

impl SessionStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Converged | Self::Exhausted)
    }
}

impl fmt::Display for SessionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Created => "created",
            Self::AwaitingConfirmation => "awaiting_confirmation",
            Self::Converged => "converged",
            Self::Exhausted => "exhausted",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    Initial,
    Confirmed {
        iteration: usize,
        candidate: usize,
        /// Similarity between the candidate and the library entry of the same name, if any.
        score: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownComponent {
    pub name: String,
    pub bound: f64,
    pub origin: Origin,
    /// Reference spectrum on the session grid.
    pub reference: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Decision {
    Confirm { name: String },
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateDecision {
    pub candidate: usize,
    pub decision: Decision,
}

impl CandidateDecision {
    pub fn confirm(candidate: usize, name: impl Into<String>) -> Self {
        Self {
            candidate,
            decision: Decision::Confirm { name: name.into() },
        }
    }

    pub fn reject(candidate: usize) -> Self {
        Self {
            candidate,
            decision: Decision::Reject,
        }
    }
}

/// A decision once it has been applied, tagged with the iteration whose candidate it concerns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedDecision {
    pub iteration: usize,
    pub candidate: usize,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub index: usize,
    /// Residual row that was selected as this candidate's mixing row.
    pub row_index: usize,
    pub score: f64,
    pub mixing_row: Vec<f64>,
    pub spectrum: Vec<f64>,
    pub matches: Vec<LibraryMatch>,
}

impl Candidate {
    pub fn best_match(&self) -> Option<&LibraryMatch> {
        self.matches.first()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub known_names: Vec<String>,
    /// Fitted concentrations, knowns × mixtures.
    pub concentrations: Array2<f64>,
    pub fit_converged: bool,
    pub residual_norm: f64,
    /// `‖R‖_F / ‖X‖_F` before clamping.
    pub relative_residual: f64,
    pub negative_fraction: f64,
    pub negative_min: f64,
    pub source_count: usize,
    pub source_count_estimated: bool,
    /// Highest row scores, best first.
    pub top_scores: Vec<RowScore<f64>>,
    pub recovery: Option<RecoveryStats>,
    pub candidates: Vec<Candidate>,
}

const TOP_SCORES_KEPT: usize = 10;

/// State of one semi-blind unmixing run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    id: String,
    data: MixtureMatrix<f64>,
    library: ReferenceLibrary<f64>,
    initial_bounds: ConcentrationBounds<f64>,
    config: PipelineConfig,
    known: Vec<KnownComponent>,
    iteration_log: Vec<IterationRecord>,
    decisions: Vec<AppliedDecision>,
    pending: BTreeMap<usize, Decision>,
    status: SessionStatus,
}

impl Session {
    pub fn new(
        id: impl Into<String>,
        data: MixtureMatrix<f64>,
        library: ReferenceLibrary<f64>,
        bounds: ConcentrationBounds<f64>,
        config: PipelineConfig,
    ) -> Result<Self> {
        config.validate()?;
        if library.grid() != data.grid() {
            return Err(Error::GridMismatch(
                "library is not on the mixture grid".into(),
            ));
        }
        let mut known = Vec::with_capacity(bounds.len());
        for (name, &bound) in bounds.per_substance() {
            let s = library
                .get(name)
                .ok_or_else(|| Error::UnknownSubstance(name.clone()))?;
            known.push(KnownComponent {
                name: name.clone(),
                bound,
                origin: Origin::Initial,
                reference: s.intensities.clone(),
            });
        }
        Ok(Self {
            id: id.into(),
            data,
            library,
            initial_bounds: bounds,
            config,
            known,
            iteration_log: Vec::new(),
            decisions: Vec::new(),
            pending: BTreeMap::new(),
            status: SessionStatus::Created,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn data(&self) -> &MixtureMatrix<f64> {
        &self.data
    }

    pub fn library(&self) -> &ReferenceLibrary<f64> {
        &self.library
    }

    pub fn initial_bounds(&self) -> &ConcentrationBounds<f64> {
        &self.initial_bounds
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn known(&self) -> &[KnownComponent] {
        &self.known
    }

    pub fn iteration_log(&self) -> &[IterationRecord] {
        &self.iteration_log
    }

    pub fn latest(&self) -> Option<&IterationRecord> {
        self.iteration_log.last()
    }

    pub fn decisions(&self) -> &[AppliedDecision] {
        &self.decisions
    }

    pub fn pending(&self) -> &BTreeMap<usize, Decision> {
        &self.pending
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn is_known(&self, name: &str) -> bool {
        self.known.iter().any(|k| k.name == name)
    }

    /// Candidates of the latest iteration without a stored decision.
    pub fn undecided(&self) -> Vec<usize> {
        match (self.status, self.latest()) {
            (SessionStatus::AwaitingConfirmation, Some(rec)) => (0..rec.candidates.len())
                .filter(|k| !self.pending.contains_key(k))
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Stores a decision on a candidate of the latest iteration; it is applied by the next iteration.
    pub fn decide(&mut self, candidate: usize, decision: Decision) -> Result<()> {
        if self.status.is_terminal() {
            return Err(Error::SessionFinished(self.status.to_string()));
        }
        let count = match (self.status, self.latest()) {
            (SessionStatus::AwaitingConfirmation, Some(rec)) => rec.candidates.len(),
            _ => 0,
        };
        if candidate >= count {
            return Err(Error::UnknownCandidate { candidate, count });
        }
        if self.pending.contains_key(&candidate) {
            return Err(Error::AlreadyDecided(candidate));
        }
        if let Decision::Confirm { name } = &decision {
            if name.trim().is_empty() {
                return Err(Error::InvalidParameter(
                    "confirmed name must not be empty".into(),
                ));
            }
            let claimed = self
                .pending
                .values()
                .any(|d| matches!(d, Decision::Confirm { name: n } if n == name));
            if self.is_known(name) || claimed {
                return Err(Error::AlreadyKnown(name.clone()));
            }
        }
        self.pending.insert(candidate, decision);
        Ok(())
    }

    /// Applies `decisions` together with any stored ones, feeds confirmed
    /// candidates back as known components and runs the next iteration. All
    /// candidates of the latest iteration must be decided. When every one is
    /// rejected the session ends as exhausted without a new iteration.
    ///
    /// The session is left untouched when an error is returned.
    pub fn run_iteration(&mut self, decisions: &[CandidateDecision]) -> Result<()> {
        let mut next = self.clone();
        next.advance(decisions)?;
        *self = next;
        Ok(())
    }

    /// Runs the next iteration with the stored decisions only.
    pub fn step(&mut self) -> Result<()> {
        self.run_iteration(&[])
    }

    fn advance(&mut self, decisions: &[CandidateDecision]) -> Result<()> {
        match self.status {
            SessionStatus::Converged | SessionStatus::Exhausted => {
                return Err(Error::SessionFinished(self.status.to_string()))
            }
            SessionStatus::Created => {
                if let Some(d) = decisions.first() {
                    return Err(Error::UnknownCandidate {
                        candidate: d.candidate,
                        count: 0,
                    });
                }
                return self.iterate();
            }
            SessionStatus::AwaitingConfirmation => {}
        }
        for d in decisions {
            self.decide(d.candidate, d.decision.clone())?;
        }
        let undecided = self.undecided();
        if !undecided.is_empty() {
            return Err(Error::UndecidedCandidates(undecided));
        }
        let record = self
            .iteration_log
            .last()
            .expect("awaiting confirmation implies a record")
            .clone();
        let mut confirmed = 0;
        for (candidate, decision) in std::mem::take(&mut self.pending) {
            if let Decision::Confirm { name } = &decision {
                let known = self.component_from(&record, candidate, name)?;
                self.known.push(known);
                confirmed += 1;
            }
            self.decisions.push(AppliedDecision {
                iteration: record.iteration,
                candidate,
                decision,
            });
        }
        if confirmed == 0 {
            self.status = SessionStatus::Exhausted;
            return Ok(());
        }
        self.iterate()
    }

    /// Reference = recovered spectrum scaled to unit maximum; bound = slack × the
    /// largest concentration implied by the candidate's mixing row.
    fn component_from(
        &self,
        record: &IterationRecord,
        candidate: usize,
        name: &str,
    ) -> Result<KnownComponent> {
        let c = &record.candidates[candidate];
        let peak = c.spectrum.iter().copied().fold(0.0_f64, f64::max);
        if peak <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "candidate {candidate} has an empty spectrum and cannot be confirmed"
            )));
        }
        let reference: Vec<f64> = c.spectrum.iter().map(|v| v / peak).collect();
        let top_conc = c.mixing_row.iter().copied().fold(0.0_f64, f64::max) * peak;
        let score = c
            .matches
            .iter()
            .find(|m| m.name == name)
            .map(|m| m.similarity)
            .or_else(|| {
                self.library.get(name).and_then(|s| {
                    cosine_similarity(Array1::from(reference.clone()).view(), s.view())
                })
            });
        Ok(KnownComponent {
            name: name.to_string(),
            bound: self.config.bound_slack * top_conc,
            origin: Origin::Confirmed {
                iteration: record.iteration,
                candidate,
                score,
            },
            reference,
        })
    }

    fn current_bounds(&self) -> Result<ConcentrationBounds<f64>> {
        let mut bounds = self.initial_bounds.clone();
        for k in &self.known {
            if matches!(k.origin, Origin::Confirmed { .. }) {
                bounds.push(k.name.clone(), k.bound)?;
            }
        }
        Ok(bounds)
    }

    fn reference_matrix(&self, names: &[String]) -> Array2<f64> {
        let p = self.data.rows();
        let mut a = Array2::zeros((p, names.len()));
        for (j, name) in names.iter().enumerate() {
            let k = self
                .known
                .iter()
                .find(|k| &k.name == name)
                .expect("name from the known list");
            a.column_mut(j).assign(&Array1::from(k.reference.clone()));
        }
        a
    }

    /// Unclamped residual `X − A S` of an iteration.
    pub fn residual_of(&self, record: &IterationRecord) -> Result<ResidualMatrix<f64>> {
        let a = self.reference_matrix(&record.known_names);
        compute_residual(&self.data, a.view(), record.concentrations.view(), false)
    }

    fn iterate(&mut self) -> Result<()> {
        let cfg = self.config.clone();
        let iteration = self.iteration_log.len() + 1;
        let m = self.data.cols();
        let bounds = self.current_bounds()?;
        let known_names: Vec<String> = bounds.names().map(str::to_owned).collect();
        let a = self.reference_matrix(&known_names);

        let (concentrations, fit_converged) = if known_names.is_empty() {
            (Array2::zeros((0, m)), true)
        } else {
            let s = box_constrained_ls(&self.data, a.view(), &bounds, &cfg.ls)?;
            (s.values, s.converged)
        };
        let residual = compute_residual(&self.data, a.view(), concentrations.view(), false)?;
        let x_norm = self.data.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        let residual_norm = residual.frobenius_norm();
        let relative_residual = if x_norm > 0.0 {
            residual_norm / x_norm
        } else {
            0.0
        };

        let mut record = IterationRecord {
            iteration,
            known_names,
            concentrations,
            fit_converged,
            residual_norm,
            relative_residual,
            negative_fraction: residual.negative_fraction,
            negative_min: residual.negative_min,
            source_count: 0,
            source_count_estimated: false,
            top_scores: Vec::new(),
            recovery: None,
            candidates: Vec::new(),
        };
        let clamped = residual.clamped();
        tracing::info!(
            iteration,
            relative_residual,
            negative_fraction = residual.negative_fraction,
            "fitted knowns"
        );
        if relative_residual <= cfg.convergence_threshold
            || clamped.values.iter().all(|v| *v == 0.0)
        {
            self.iteration_log.push(record);
            self.status = SessionStatus::Converged;
            return Ok(());
        }

        let count = match cfg.source_count {
            SourceCount::Auto { max } => SourceCount::Auto {
                max: max.min(clamped.rows()),
            },
            fixed => fixed,
        };
        let ext = extract_mixing(clamped.view(), count, &cfg.cone)?;
        let w = recover(cfg.recovery, &clamped, &ext.mixing, &cfg.bregman)?;
        let mut ranked = ext.scores.clone();
        ranked.sort_by(|x, y| {
            y.score
                .total_cmp(&x.score)
                .then(x.row_index.cmp(&y.row_index))
        });
        ranked.truncate(TOP_SCORES_KEPT);

        for k in 0..ext.mixing.n() {
            let spectrum = Spectrum {
                grid: self.data.grid().clone(),
                intensities: w.values.column(k).to_vec(),
                label: format!("candidate-{k}"),
            };
            let matches = match match_library(k, &spectrum, &self.library, cfg.top_k) {
                Ok(m) => m.ranked,
                Err(Error::ZeroNorm) => Vec::new(),
                Err(e) => return Err(e),
            };
            record.candidates.push(Candidate {
                index: k,
                row_index: ext.mixing.source_indices[k],
                score: ext.mixing.scores[k],
                mixing_row: ext.mixing.rows.row(k).to_vec(),
                spectrum: spectrum.intensities,
                matches,
            });
        }
        record.source_count = ext.n;
        record.source_count_estimated = ext.estimated;
        record.top_scores = ranked;
        record.recovery = w.stats;
        tracing::info!(
            iteration,
            candidates = record.candidates.len(),
            "extracted candidates"
        );
        self.iteration_log.push(record);
        self.status = if iteration >= cfg.max_iterations {
            SessionStatus::Exhausted
        } else {
            SessionStatus::AwaitingConfirmation
        };
        Ok(())
    }

    /// Rebuilds the session from its inputs by re-applying the logged decisions.
    pub fn replay(&self) -> Result<Session> {
        let mut fresh = Session::new(
            self.id.clone(),
            self.data.clone(),
            self.library.clone(),
            self.initial_bounds.clone(),
            self.config.clone(),
        )?;
        if self.iteration_log.is_empty() {
            return Ok(fresh);
        }
        fresh.step()?;
        for rec in &self.iteration_log {
            let group: Vec<CandidateDecision> = self
                .decisions
                .iter()
                .filter(|d| d.iteration == rec.iteration)
                .map(|d| CandidateDecision {
                    candidate: d.candidate,
                    decision: d.decision.clone(),
                })
                .collect();
            if group.is_empty() {
                break;
            }
            fresh.run_iteration(&group)?;
        }
        for (&k, d) in &self.pending {
            fresh.decide(k, d.clone())?;
        }
        Ok(fresh)
    }
}
