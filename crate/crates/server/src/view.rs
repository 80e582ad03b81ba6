//! JSON projections of a session for the frontend.

use serde::{Deserialize, Serialize};
use unmix_core::pipeline::{
    AppliedDecision, Decision, LibraryMatch, Origin, Session, SessionStatus,
};

/// Spectra in views carry at most this many points.
pub const MAX_VIEW_POINTS: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledSpectrum {
    pub wavenumbers: Vec<f64>,
    pub intensities: Vec<f64>,
    /// Length of the spectrum before downsampling.
    pub full_len: usize,
}

/// Keeps the largest-magnitude sample of each of `max_points` equal buckets so
/// that narrow peaks survive.
pub fn downsample(wavenumbers: &[f64], values: &[f64], max_points: usize) -> SampledSpectrum {
    let p = values.len();
    if p <= max_points || max_points == 0 {
        return SampledSpectrum {
            wavenumbers: wavenumbers.to_vec(),
            intensities: values.to_vec(),
            full_len: p,
        };
    }
    let (mut w, mut v) = (
        Vec::with_capacity(max_points),
        Vec::with_capacity(max_points),
    );
    for b in 0..max_points {
        let lo = b * p / max_points;
        let hi = ((b + 1) * p / max_points).max(lo + 1);
        let i = (lo..hi)
            .max_by(|&a, &c| values[a].abs().total_cmp(&values[c].abs()).then(c.cmp(&a)))
            .unwrap_or(lo);
        w.push(wavenumbers[i]);
        v.push(values[i]);
    }
    SampledSpectrum {
        wavenumbers: w,
        intensities: v,
        full_len: p,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationView {
    pub iteration: usize,
    pub known: Vec<String>,
    pub residual_norm: f64,
    pub relative_residual: f64,
    pub negative_fraction: f64,
    pub source_count: usize,
    pub candidate_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownView {
    pub name: String,
    pub bound: f64,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    pub index: usize,
    pub score: f64,
    pub spectrum: SampledSpectrum,
    pub matches: Vec<LibraryMatch>,
    /// Stored or applied decision, if any.
    pub decision: Option<Decision>,
    /// True while the candidate still needs a decision before the next step.
    pub awaiting_decision: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiSessionView {
    pub id: String,
    pub status: SessionStatus,
    pub iterations: Vec<IterationView>,
    pub knowns: Vec<KnownView>,
    /// Candidates of the latest iteration.
    pub candidates: Vec<CandidateView>,
    pub decisions: Vec<AppliedDecision>,
}

impl ApiSessionView {
    pub fn of(session: &Session) -> Self {
        let grid = session.data().grid().as_slice();
        let iterations = session
            .iteration_log()
            .iter()
            .map(|r| IterationView {
                iteration: r.iteration,
                known: r.known_names.clone(),
                residual_norm: r.residual_norm,
                relative_residual: r.relative_residual,
                negative_fraction: r.negative_fraction,
                source_count: r.source_count,
                candidate_count: r.candidates.len(),
            })
            .collect();
        let knowns = session
            .known()
            .iter()
            .map(|k| KnownView {
                name: k.name.clone(),
                bound: k.bound,
                origin: k.origin.clone(),
            })
            .collect();
        let awaiting = session.status() == SessionStatus::AwaitingConfirmation;
        let candidates = session
            .latest()
            .map(|rec| {
                rec.candidates
                    .iter()
                    .map(|c| {
                        let decision = session.pending().get(&c.index).cloned().or_else(|| {
                            session
                                .decisions()
                                .iter()
                                .find(|d| d.iteration == rec.iteration && d.candidate == c.index)
                                .map(|d| d.decision.clone())
                        });
                        CandidateView {
                            index: c.index,
                            score: c.score,
                            spectrum: downsample(grid, &c.spectrum, MAX_VIEW_POINTS),
                            matches: c.matches.clone(),
                            awaiting_decision: awaiting && decision.is_none(),
                            decision,
                        }
                    })
                    .collect()
            })
            .unwrap_or_default();
        Self {
            id: session.id().to_owned(),
            status: session.status(),
            iterations,
            knowns,
            candidates,
            decisions: session.decisions().to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_spectra_pass_through() {
        let s = downsample(&[1.0, 2.0, 3.0], &[0.0, 5.0, 1.0], 2048);
        assert_eq!(s.intensities, vec![0.0, 5.0, 1.0]);
        assert_eq!(s.full_len, 3);
    }

    #[test]
    fn peaks_survive_downsampling() {
        let p = 10_000;
        let w: Vec<f64> = (0..p).map(|i| i as f64).collect();
        let mut v = vec![0.0; p];
        v[4321] = 7.0;
        v[9999] = -2.0;
        let s = downsample(&w, &v, MAX_VIEW_POINTS);
        assert_eq!(s.intensities.len(), MAX_VIEW_POINTS);
        assert!(s.wavenumbers.windows(2).all(|x| x[0] < x[1]));
        assert!(s.wavenumbers.contains(&4321.0) && s.intensities.contains(&7.0));
        assert_eq!(*s.intensities.last().unwrap(), -2.0);
        assert_eq!(s.full_len, p);
    }
}
