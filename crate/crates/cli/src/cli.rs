use std::net::IpAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use unmix_core::cone::{ConeConfig, SourceCount};
use unmix_core::pipeline::{AutoPolicy, PipelineConfig};
use unmix_core::sparse::RecoveryMethod;

#[derive(Debug, Parser)]
#[command(
    name = "unmix",
    version,
    about = "Semi-blind unmixing of Raman mixture spectra"
)]
pub struct Cli {
    /// More log output on stderr (-v info, -vv debug); RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic benchmark: mixture CSV, library directory, truth sidecar.
    Gen(GenArgs),
    /// Fit known references under concentration bounds and write the residual.
    Fit(FitArgs),
    /// Score the rows of a residual by their distance to the cone of the other rows.
    Score(ScoreArgs),
    /// Extract mixing rows and recover source spectra from a residual.
    Extract(ExtractArgs),
    /// Rank library entries by cosine similarity to a spectrum.
    Match(MatchArgs),
    /// Run the full fit / extract / confirm loop and write a report.
    Pipeline(PipelineArgs),
    /// Compare cone + Bregman extraction with the NMF baseline on the fitted residual.
    CompareNmf(CompareArgs),
    /// Serve the analyst HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Benchmark preset (1 or 2).
    #[arg(long)]
    pub benchmark: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Noise standard deviation relative to the largest noiseless intensity.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Number of wavenumber samples.
    #[arg(long)]
    pub points: Option<usize>,
    /// Leave out decoy library entries.
    #[arg(long)]
    pub no_decoys: bool,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct KnownArgs {
    /// Known substance and its concentration bound, `name:bound` (bound may be a fraction like 1/3).
    #[arg(long = "known", value_parser = parse_known)]
    pub knowns: Vec<(String, f64)>,
    /// Cap on the summed concentration of the knowns.
    #[arg(long)]
    pub total_bound: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub lib: PathBuf,
    #[command(flatten)]
    pub known: KnownArgs,
    #[arg(long)]
    pub ls_tol: Option<f64>,
    #[arg(long)]
    pub ls_max_iter: Option<usize>,
    /// Output directory for concentrations.csv and residual.csv.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConeArgs {
    /// Rows below this fraction of the largest row norm are ignored.
    #[arg(long)]
    pub min_norm_frac: Option<f64>,
    /// Rows within this `1 − cos` of each other count as one ray.
    #[arg(long)]
    pub parallel_tol: Option<f64>,
    /// Start from the settings for noisy data instead of the exact ones.
    #[arg(long)]
    pub noise_tolerant: bool,
}

impl ConeArgs {
    pub fn config(&self, default: ConeConfig) -> ConeConfig {
        let base = if self.noise_tolerant {
            ConeConfig::noise_tolerant()
        } else {
            default
        };
        ConeConfig {
            min_norm_frac: self.min_norm_frac.unwrap_or(base.min_norm_frac),
            parallel_tol: self.parallel_tol.unwrap_or(base.parallel_tol),
            ..base
        }
    }
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Residual in mixture CSV layout; negative entries are clamped to zero.
    #[arg(long)]
    pub residual: PathBuf,
    #[command(flatten)]
    pub cone: ConeArgs,
    /// Output CSV of per-row scores.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractionArgs {
    /// Number of sources; estimated from the score gap when absent.
    #[arg(long)]
    pub n: Option<usize>,
    /// Largest source count considered when estimating.
    #[arg(long)]
    pub max_n: Option<usize>,
    #[command(flatten)]
    pub cone: ConeArgs,
    /// ℓ1 weight of the Bregman recovery.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Bregman step size; defaults to 1/‖B‖².
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub fit_tol: Option<f64>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Method {
    Bregman,
    Pinv,
    Nnls,
}

impl From<Method> for RecoveryMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Bregman => RecoveryMethod::Bregman,
            Method::Pinv => RecoveryMethod::Pinv,
            Method::Nnls => RecoveryMethod::Nnls,
        }
    }
}

impl ExtractionArgs {
    /// Applies the flags on top of `base`.
    pub fn apply(&self, base: PipelineConfig) -> PipelineConfig {
        let mut cfg = base;
        cfg.cone = self.cone.config(cfg.cone);
        cfg.source_count = match (self.n, self.max_n, cfg.source_count) {
            (Some(n), _, _) => SourceCount::Fixed(n),
            (None, Some(max), _) => SourceCount::Auto { max },
            (None, None, sc) => sc,
        };
        if let Some(mu) = self.mu {
            cfg.bregman.mu = mu;
        }
        if self.delta.is_some() {
            cfg.bregman.delta = self.delta;
        }
        if let Some(it) = self.max_iter {
            cfg.bregman.max_iter = it;
        }
        if let Some(tol) = self.fit_tol {
            cfg.bregman.fit_tol = tol;
        }
        if let Some(m) = self.method {
            cfg.recovery = m.into();
        }
        cfg
    }
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Residual in mixture CSV layout; negative entries are clamped to zero.
    #[arg(long)]
    pub residual: PathBuf,
    #[command(flatten)]
    pub extraction: ExtractionArgs,
    /// Output directory for mixing.csv and sources.csv.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    /// Spectrum as a two-column CSV (wavenumber, intensity).
    #[arg(long)]
    pub spectrum: PathBuf,
    #[arg(long)]
    pub lib: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Policy {
    /// Confirm only the strongest matching candidate per iteration.
    Strongest,
    /// Confirm every matching candidate.
    All,
}

impl From<Policy> for AutoPolicy {
    fn from(p: Policy) -> Self {
        match p {
            Policy::Strongest => AutoPolicy::Strongest,
            Policy::All => AutoPolicy::All,
        }
    }
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub lib: PathBuf,
    #[command(flatten)]
    pub known: KnownArgs,
    #[command(flatten)]
    pub extraction: ExtractionArgs,
    /// Confirm automatically when the best library match reaches this cosine.
    #[arg(long, conflicts_with = "decisions")]
    pub auto: Option<f64>,
    #[arg(long, value_enum, default_value_t = Policy::Strongest, requires = "auto")]
    pub policy: Policy,
    /// JSON list of decision rounds to replay instead of asking.
    #[arg(long)]
    pub decisions: Option<PathBuf>,
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Stop once ‖R‖/‖X‖ falls to this value.
    #[arg(long)]
    pub convergence_threshold: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub bound_slack: Option<f64>,
    /// Include per-iteration wall times in the report.
    #[arg(long)]
    pub timings: bool,
    #[arg(long)]
    pub report: PathBuf,
}

impl PipelineArgs {
    pub fn config(&self) -> PipelineConfig {
        let mut cfg = self.extraction.apply(PipelineConfig::default());
        if let Some(k) = self.top_k {
            cfg.top_k = k;
        }
        if let Some(t) = self.convergence_threshold {
            cfg.convergence_threshold = t;
        }
        if let Some(m) = self.max_iterations {
            cfg.max_iterations = m;
        }
        if let Some(s) = self.bound_slack {
            cfg.bound_slack = s;
        }
        cfg
    }
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub lib: PathBuf,
    #[command(flatten)]
    pub known: KnownArgs,
    #[command(flatten)]
    pub extraction: ExtractionArgs,
    /// Ground-truth sidecar; `truth.json` next to the data file is used when present.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub nmf_seed: u64,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Directory holding persisted sessions.
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub lib: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    #[arg(long, default_value_t = unmix_server::DEFAULT_PORT)]
    pub port: u16,
    /// Allow binding a non-loopback address.
    #[arg(long)]
    pub allow_remote: bool,
    #[arg(long, default_value_t = unmix_server::DEFAULT_BODY_LIMIT)]
    pub body_limit: usize,
}

fn parse_number(s: &str) -> Result<f64, String> {
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| format!("bad number `{s}`"))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("bad number `{s}`"))?;
            a / b
        }
        None => s.trim().parse().map_err(|_| format!("bad number `{s}`"))?,
    };
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("`{s}` is not a finite nonnegative number"))
    }
}

pub fn parse_known(s: &str) -> Result<(String, f64), String> {
    let (name, bound) = s
        .rsplit_once(':')
        .ok_or_else(|| format!("expected name:bound, got `{s}`"))?;
    if name.trim().is_empty() {
        return Err(format!("empty substance name in `{s}`"));
    }
    Ok((name.trim().to_owned(), parse_number(bound)?))
}
