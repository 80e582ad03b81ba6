use std::io::{BufRead, Write};

use unmix_core::pipeline::{CandidateDecision, Confirmer, Session};

/// Asks on a terminal for a decision on every candidate.
///
/// `y` (or an empty line) confirms the best library match, `n` rejects, and
/// any other text confirms under that name. End of input rejects whatever is left.
pub struct PromptConfirmer<R, W> {
    input: R,
    output: W,
}

impl<R: BufRead, W: Write> PromptConfirmer<R, W> {
    pub fn new(input: R, output: W) -> Self {
        Self { input, output }
    }

    fn ask(&mut self, prompt: &str) -> Option<String> {
        let _ = write!(self.output, "{prompt}");
        let _ = self.output.flush();
        let mut line = String::new();
        match self.input.read_line(&mut line) {
            Ok(0) | Err(_) => None,
            Ok(_) => Some(line.trim().to_owned()),
        }
    }
}

impl<R: BufRead, W: Write> Confirmer for PromptConfirmer<R, W> {
    fn decide(&mut self, session: &Session) -> Vec<CandidateDecision> {
        let Some(rec) = session.latest() else {
            return Vec::new();
        };
        let _ = writeln!(
            self.output,
            "iteration {}: ‖R‖/‖X‖ = {:.4}, {} candidate(s)",
            rec.iteration,
            rec.relative_residual,
            rec.candidates.len()
        );
        let mut taken: Vec<String> = session.known().iter().map(|k| k.name.clone()).collect();
        let mut out = Vec::with_capacity(rec.candidates.len());
        let mut eof = false;
        for c in &rec.candidates {
            let _ = writeln!(self.output, "candidate {} (score {:.4e})", c.index, c.score);
            for m in &c.matches {
                let _ = writeln!(self.output, "    {:<24} {:.4}", m.name, m.similarity);
            }
            let best = c
                .matches
                .iter()
                .find(|m| !taken.contains(&m.name))
                .map(|m| m.name.clone());
            let answer = if eof {
                None
            } else {
                let hint = best
                    .as_deref()
                    .map(|b| format!(" [y = {b}]"))
                    .unwrap_or_default();
                self.ask(&format!("confirm? y/n/name{hint}: "))
            };
            let name = match answer.as_deref() {
                None => {
                    eof = true;
                    None
                }
                Some("n") | Some("N") => None,
                Some("") | Some("y") | Some("Y") => best,
                Some(other) if taken.iter().any(|t| t == other) => {
                    let _ = writeln!(self.output, "`{other}` is already known; rejecting");
                    None
                }
                Some(other) => Some(other.to_owned()),
            };
            out.push(match name {
                Some(n) => {
                    taken.push(n.clone());
                    CandidateDecision::confirm(c.index, n)
                }
                None => CandidateDecision::reject(c.index),
            });
        }
        out
    }
}
