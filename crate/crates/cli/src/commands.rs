use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;
use unmix_core::cls::{compute_residual, fit_knowns, LsOptions, ResidualMatrix};
use unmix_core::cone::{extract_mixing, score_rows, ConeConfig, SourceCount};
use unmix_core::pipeline::{
    compare_nmf, match_library, run_pipeline, AutoConfirmer, CandidateDecision, Confirmer,
    PipelineConfig, ScriptedConfirmer, Session,
};
use unmix_core::sparse::recover;
use unmix_core::spectra::{
    parse_reference_csv, parse_spectra_csv, read_reference_dir, ConcentrationBounds, MixtureMatrix,
    ReferenceLibrary,
};
use unmix_core::synth::{gen_benchmark, BenchmarkConfig, GroundTruth};
use unmix_server::ServiceConfig;

use crate::cli::{
    CompareArgs, ExtractArgs, FitArgs, GenArgs, KnownArgs, MatchArgs, PipelineArgs, ScoreArgs,
    ServeArgs,
};
use crate::confirm::PromptConfirmer;

/// Bad flag values or combinations; reported with exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn read_mixture(path: &Path) -> Result<MixtureMatrix<f64>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    parse_spectra_csv(BufReader::new(f)).with_context(|| format!("cannot parse {}", path.display()))
}

fn read_library(dir: &Path, grid_of: &MixtureMatrix<f64>) -> Result<ReferenceLibrary<f64>> {
    let raw = read_reference_dir::<f64>(dir)
        .with_context(|| format!("cannot read library {}", dir.display()))?;
    if raw.is_empty() {
        bail!("library {} has no .csv files", dir.display());
    }
    Ok(ReferenceLibrary::from_spectra(grid_of.grid(), &raw)?)
}

fn bounds(known: &KnownArgs) -> Result<ConcentrationBounds<f64>> {
    ConcentrationBounds::from_pairs(known.knowns.iter().cloned(), known.total_bound)
        .map_err(|e| usage(e.to_string()))
}

fn check(cfg: &PipelineConfig) -> Result<()> {
    cfg.validate().map_err(|e| usage(e.to_string()))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn csv_header(first: &str, labels: impl IntoIterator<Item = impl AsRef<str>>) -> String {
    let mut s = first.to_owned();
    for l in labels {
        s.push(',');
        s.push_str(l.as_ref());
    }
    s.push('\n');
    s
}

/// Known fit shared by `fit` and `compare-nmf`.
fn fitted_residual(
    data: &Path,
    lib: &Path,
    known: &KnownArgs,
    ls: &LsOptions<f64>,
) -> Result<(
    MixtureMatrix<f64>,
    Vec<String>,
    ndarray::Array2<f64>,
    ResidualMatrix<f64>,
)> {
    let x = read_mixture(data)?;
    let library = read_library(lib, &x)?;
    let b = bounds(known)?;
    if b.is_empty() {
        let r = ResidualMatrix::from_values(x.grid().clone(), x.values().to_owned())?;
        return Ok((x, Vec::new(), ndarray::Array2::zeros((0, r.cols())), r));
    }
    let (a, s) = fit_knowns(&x, &library, &b, ls)?;
    if !s.converged {
        tracing::warn!(
            iterations = s.iterations,
            "known fit stopped before converging"
        );
    }
    let r = compute_residual(&x, a.view(), s.values.view(), false)?;
    Ok((x, s.substance_names, s.values, r))
}

pub fn gen(args: GenArgs) -> Result<()> {
    let mut cfg =
        BenchmarkConfig::preset(args.benchmark, args.seed).map_err(|e| usage(e.to_string()))?;
    cfg.noise_sigma = args.noise;
    if let Some(p) = args.points {
        cfg.p = p;
    }
    cfg.include_decoys = !args.no_decoys;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let b = gen_benchmark(&cfg)?;
    b.write_to(&args.output)
        .with_context(|| format!("cannot write benchmark to {}", args.output.display()))?;
    println!(
        "benchmark {} (seed {}): {} × {} mixture, {} library entries → {}",
        args.benchmark,
        args.seed,
        b.mixture.rows(),
        b.mixture.cols(),
        b.library.len(),
        args.output.display()
    );
    Ok(())
}

pub fn fit(args: FitArgs) -> Result<()> {
    if args.known.knowns.is_empty() {
        return Err(usage("fit needs at least one --known"));
    }
    let mut ls = LsOptions::default();
    if let Some(t) = args.ls_tol {
        ls.tol = t;
    }
    if let Some(n) = args.ls_max_iter {
        ls.max_iter = n;
    }
    let (x, names, conc, r) = fitted_residual(&args.data, &args.lib, &args.known, &ls)?;

    let mut out = csv_header("substance", x.labels());
    for (name, row) in names.iter().zip(conc.rows()) {
        out.push_str(name);
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    write(&args.output.join("concentrations.csv"), &out)?;
    write(
        &args.output.join("residual.csv"),
        &r.as_mixture(&x)?.to_csv(),
    )?;
    println!(
        "‖R‖ = {:.6e}, negative fraction {:.4}, min {:.4e}",
        r.frobenius_norm(),
        r.negative_fraction,
        r.negative_min
    );
    Ok(())
}

fn read_residual(path: &Path) -> Result<(MixtureMatrix<f64>, ResidualMatrix<f64>)> {
    let x = read_mixture(path)?;
    let r = ResidualMatrix::from_values(x.grid().clone(), x.values().to_owned())?;
    if r.negative_fraction > 0.0 {
        tracing::info!(
            fraction = r.negative_fraction,
            "clamping negative residual entries"
        );
    }
    Ok((x, r.clamped()))
}

pub fn score(args: ScoreArgs) -> Result<()> {
    let cone = args.cone.config(ConeConfig::default());
    if !(cone.min_norm_frac >= 0.0 && cone.min_norm_frac < 1.0) || !(cone.parallel_tol >= 0.0) {
        return Err(usage(
            "min_norm_frac must lie in [0, 1) and parallel_tol be ≥ 0",
        ));
    }
    let (_, r) = read_residual(&args.residual)?;
    let mut scores = score_rows(r.view(), &cone)?;
    scores.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.row_index.cmp(&b.row_index))
    });
    let grid = r.grid.as_slice();
    let mut out = String::from("row,wavenumber,score\n");
    for s in &scores {
        let _ = writeln!(out, "{},{},{}", s.row_index, grid[s.row_index], s.score);
    }
    write(&args.output, &out)
}

pub fn extract(args: ExtractArgs) -> Result<()> {
    let cfg = args.extraction.apply(PipelineConfig {
        cone: ConeConfig::default(),
        ..PipelineConfig::default()
    });
    check(&cfg)?;
    let (x, r) = read_residual(&args.residual)?;
    let ext = extract_mixing(r.view(), cfg.source_count, &cfg.cone)?;
    let sources = recover(cfg.recovery, &r, &ext.mixing, &cfg.bregman)?;

    let mut mixing = csv_header("source", x.labels());
    for (k, row) in ext.mixing.rows.rows().into_iter().enumerate() {
        let _ = write!(mixing, "{k}");
        for v in row {
            let _ = write!(mixing, ",{v}");
        }
        mixing.push('\n');
    }
    let labels: Vec<String> = (0..ext.n).map(|k| format!("source_{k}")).collect();
    let src = MixtureMatrix::new(
        sources.grid.clone(),
        sources.values.clone(),
        labels,
        vec![None; ext.n],
    )?;
    write(&args.output.join("mixing.csv"), &mixing)?;
    write(&args.output.join("sources.csv"), &src.to_csv())?;

    println!(
        "n = {}{}, witness rows {:?}, negative entries {}",
        ext.n,
        if ext.estimated { " (estimated)" } else { "" },
        ext.mixing.source_indices,
        sources.negative_count
    );
    if let Some(stats) = &sources.stats {
        if stats.unconverged_rows > 0 {
            tracing::warn!(
                rows = stats.unconverged_rows,
                worst_fit = stats.worst_fit,
                "Bregman rows did not converge"
            );
        }
    }
    Ok(())
}

pub fn match_spectrum(args: MatchArgs) -> Result<()> {
    if args.top_k == 0 {
        return Err(usage("--top-k must be ≥ 1"));
    }
    let f = File::open(&args.spectrum)
        .with_context(|| format!("cannot open {}", args.spectrum.display()))?;
    let label = args
        .spectrum
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("spectrum");
    let s = parse_reference_csv::<f64, _>(BufReader::new(f), label)
        .with_context(|| format!("cannot parse {}", args.spectrum.display()))?;
    let raw = read_reference_dir::<f64>(&args.lib)
        .with_context(|| format!("cannot read library {}", args.lib.display()))?;
    let library = ReferenceLibrary::from_spectra(&s.grid, &raw)?;
    let result = match_library(0, &s, &library, args.top_k)?;
    println!("{}", serde_json::to_string_pretty(&result.ranked)?);
    Ok(())
}

fn session_id(data: &Path) -> String {
    data.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("session")
        .to_owned()
}

fn read_decisions(path: &Path) -> Result<Vec<Vec<CandidateDecision>>> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_slice(&bytes)
        .with_context(|| format!("{} is not a list of decision rounds", path.display()))
}

pub fn pipeline(args: PipelineArgs) -> Result<bool> {
    let cfg = args.config();
    check(&cfg)?;
    if let Some(t) = args.auto {
        if !(0.0..=1.0).contains(&t) {
            return Err(usage("--auto threshold must lie in [0, 1]"));
        }
    }
    let b = bounds(&args.known)?;
    let mut confirmer: Box<dyn Confirmer> = match (&args.auto, &args.decisions) {
        (Some(t), _) => Box::new(AutoConfirmer {
            threshold: *t,
            policy: args.policy.into(),
        }),
        (None, Some(path)) => Box::new(ScriptedConfirmer::new(read_decisions(path)?)),
        (None, None) => Box::new(PromptConfirmer::new(io::stdin().lock(), io::stderr())),
    };
    let x = read_mixture(&args.data)?;
    let library = read_library(&args.lib, &x)?;
    let mut session = Session::new(session_id(&args.data), x, library, b, cfg)?;

    let run = run_pipeline(&mut session, confirmer.as_mut());
    let report = if args.timings {
        run.report.with_timings(&run.timings)
    } else {
        run.report
    };
    write(&args.report, &report.to_json()?)?;
    print!("{}", report.to_text());
    if let Some(e) = &run.error {
        eprintln!("error: pipeline stopped: {e}");
    }
    Ok(run.error.is_none())
}

fn truth_path(args: &CompareArgs) -> Option<PathBuf> {
    if let Some(t) = &args.truth {
        return Some(t.clone());
    }
    let sidecar = args
        .data
        .parent()
        .unwrap_or(Path::new("."))
        .join("truth.json");
    sidecar.is_file().then_some(sidecar)
}

pub fn compare(args: CompareArgs) -> Result<()> {
    let cfg = args.extraction.apply(PipelineConfig::default());
    check(&cfg)?;
    let truth = match truth_path(&args) {
        Some(p) => Some(
            GroundTruth::load(&p)
                .with_context(|| format!("cannot load ground truth {}", p.display()))?,
        ),
        None => None,
    };
    let (_, _, _, r) = fitted_residual(&args.data, &args.lib, &args.known, &cfg.ls)?;
    let r = r.clamped();
    let count = match (cfg.source_count, &truth) {
        (SourceCount::Auto { .. }, Some(t))
            if args.extraction.n.is_none() && args.extraction.max_n.is_none() =>
        {
            SourceCount::Fixed(t.sources.ncols())
        }
        (sc, _) => sc,
    };
    let cmp = compare_nmf(
        &r,
        count,
        &cfg.cone,
        &cfg.bregman,
        args.nmf_seed,
        truth.as_ref().map(|t| t.sources.view()),
    )?;
    let cos = |c: &Option<Vec<f64>>| match c {
        Some(v) => json!(v),
        None => json!("unavailable"),
    };
    let out = json!({
        "n": cmp.n,
        "nmf_seed": args.nmf_seed,
        "nmf_objective": cmp.nmf_objective,
        "cone_cosines": cos(&cmp.cone_cosines),
        "nmf_cosines": cos(&cmp.nmf_cosines),
    });
    let text = serde_json::to_string_pretty(&out)? + "\n";
    write(&args.output, &text)?;
    print!("{text}");
    Ok(())
}

pub fn serve(args: ServeArgs) -> Result<()> {
    let mut cfg = ServiceConfig::new(args.data_dir);
    cfg.library_dir = args.lib;
    cfg.addr = (args.host, args.port).into();
    cfg.allow_remote = args.allow_remote;
    cfg.body_limit = args.body_limit;
    if !cfg.addr.ip().is_loopback() && !cfg.allow_remote {
        return Err(usage(format!(
            "refusing to bind {} without --allow-remote",
            cfg.addr
        )));
    }
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    rt.block_on(unmix_server::serve(cfg))?;
    Ok(())
}
