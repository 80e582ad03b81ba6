use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{gen_source_spectrum, verify_standalone_peaks_relative, PeakSpec};
use crate::error::{Error, Result};
use crate::spectra::{ConcentrationBounds, MixtureMatrix, ReferenceLibrary, SpectralGrid};

/// Bands are truncated at this many half-widths from their center.
pub const PEAK_CUTOFF: f64 = 6.0;

/// Library entries that never occur in generated mixtures.
pub const DECOY_NAMES: [&str; 4] = ["acetone", "dimethyl_sulfoxide", "isopropanol", "toluene"];

// (center cm⁻¹, half-width cm⁻¹, amplitude). Positions are loosely modelled on
// real bands but shifted so that the supports of the four mixture substances
// stay disjoint wherever the benchmarks need them to be.
const METHANOL: &[(f64, f64, f64)] = &[
    (1033.0, 9.0, 1.0),
    (1600.0, 12.0, 0.45),
    (2835.0, 10.0, 0.8),
];
const ETHANOL: &[(f64, f64, f64)] = &[(882.0, 9.0, 1.0), (1290.0, 6.0, 0.3), (3000.0, 12.0, 0.7)];
const ACETONITRILE: &[(f64, f64, f64)] = &[
    (380.0, 8.0, 0.5),
    (750.0, 8.0, 0.4),
    (1376.0, 8.0, 0.35),
    (2254.0, 7.0, 1.0),
];
const ETHYLENE_GLYCOL: &[(f64, f64, f64)] = &[
    (480.0, 9.0, 0.4),
    (1180.0, 8.0, 0.6),
    (1400.0, 8.0, 0.3),
    (2700.0, 10.0, 1.0),
];
const ACETONE: &[(f64, f64, f64)] = &[(787.0, 8.0, 1.0), (1710.0, 10.0, 0.5), (2925.0, 12.0, 0.8)];
const DMSO: &[(f64, f64, f64)] = &[
    (670.0, 7.0, 1.0),
    (700.0, 7.0, 0.8),
    (1045.0, 9.0, 0.4),
    (2913.0, 11.0, 0.9),
];
const ISOPROPANOL: &[(f64, f64, f64)] = &[
    (819.0, 8.0, 1.0),
    (1130.0, 9.0, 0.3),
    (1450.0, 11.0, 0.5),
    (2880.0, 12.0, 0.9),
];
const TOLUENE: &[(f64, f64, f64)] = &[
    (1003.0, 5.0, 1.0),
    (1030.0, 6.0, 0.5),
    (1210.0, 7.0, 0.4),
    (3057.0, 9.0, 0.6),
];

fn peak_table(name: &str) -> Option<&'static [(f64, f64, f64)]> {
    Some(match name {
        "methanol" => METHANOL,
        "ethanol" => ETHANOL,
        "acetonitrile" => ACETONITRILE,
        "ethylene_glycol" => ETHYLENE_GLYCOL,
        "acetone" => ACETONE,
        "dimethyl_sulfoxide" => DMSO,
        "isopropanol" => ISOPROPANOL,
        "toluene" => TOLUENE,
        _ => return None,
    })
}

/// Truncated band list of a built-in substance.
pub fn substance_peaks(name: &str) -> Result<Vec<PeakSpec<f64>>> {
    let table = peak_table(name).ok_or_else(|| Error::UnknownSubstance(name.to_string()))?;
    table
        .iter()
        .map(|&(c, w, a)| PeakSpec::new(c, w, a)?.truncated(PEAK_CUTOFF))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownSpec {
    pub name: String,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnknownSpec {
    pub name: String,
    /// Multiplies this source's mixing row; small values make a weak component.
    pub mixing_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub p: usize,
    pub range: (f64, f64),
    pub m: usize,
    pub first_wavelength: f64,
    pub wavelength_step: f64,
    pub knowns: Vec<KnownSpec>,
    /// Cap on the summed concentration of all initial knowns.
    pub total_bound: Option<f64>,
    pub unknowns: Vec<UnknownSpec>,
    /// Noise standard deviation relative to the largest noiseless intensity.
    pub noise_sigma: f64,
    /// Clip noisy intensities at zero.
    pub nonnegative: bool,
    pub include_decoys: bool,
    pub seed: u64,
}

impl BenchmarkConfig {
    fn base(seed: u64) -> Self {
        Self {
            p: 1024,
            range: (300.0, 3100.0),
            m: 5,
            first_wavelength: 248.0,
            wavelength_step: 2.0,
            knowns: Vec::new(),
            total_bound: None,
            unknowns: Vec::new(),
            noise_sigma: 0.0,
            nonnegative: true,
            include_decoys: true,
            seed,
        }
    }

    /// One known (methanol, bound 1/3) and two unknowns in five mixtures.
    pub fn benchmark_1(seed: u64) -> Self {
        Self {
            knowns: vec![KnownSpec {
                name: "methanol".into(),
                bound: 1.0 / 3.0,
            }],
            unknowns: vec![
                UnknownSpec {
                    name: "ethanol".into(),
                    mixing_scale: 1.0,
                },
                UnknownSpec {
                    name: "acetonitrile".into(),
                    mixing_scale: 1.0,
                },
            ],
            ..Self::base(seed)
        }
    }

    /// Two knowns sharing a total bound of 1/2, a strong unknown and a weak one.
    pub fn benchmark_2(seed: u64) -> Self {
        Self {
            knowns: vec![
                KnownSpec {
                    name: "methanol".into(),
                    bound: 0.5,
                },
                KnownSpec {
                    name: "ethanol".into(),
                    bound: 0.5,
                },
            ],
            total_bound: Some(0.5),
            unknowns: vec![
                UnknownSpec {
                    name: "acetonitrile".into(),
                    mixing_scale: 1.0,
                },
                UnknownSpec {
                    name: "ethylene_glycol".into(),
                    mixing_scale: 0.4,
                },
            ],
            ..Self::base(seed)
        }
    }

    pub fn preset(id: u32, seed: u64) -> Result<Self> {
        match id {
            1 => Ok(Self::benchmark_1(seed)),
            2 => Ok(Self::benchmark_2(seed)),
            other => Err(Error::InvalidParameter(format!(
                "unknown benchmark {other}"
            ))),
        }
    }

    pub fn grid(&self) -> Result<SpectralGrid<f64>> {
        SpectralGrid::linspace(self.range.0, self.range.1, self.p)
    }

    pub fn laser_wavelengths(&self) -> Vec<f64> {
        (0..self.m)
            .map(|k| self.first_wavelength + self.wavelength_step * k as f64)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.unknowns.len();
        if self.knowns.is_empty() && n == 0 {
            return Err(Error::InvalidParameter(
                "benchmark needs at least one substance".into(),
            ));
        }
        if self.m == 0 || self.m < n {
            return Err(Error::InvalidParameter(format!(
                "need at least as many mixtures as unknown sources ({} < {n})",
                self.m
            )));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::InvalidParameter("noise sigma must be ≥ 0".into()));
        }
        if self.wavelength_step <= 0.0 {
            return Err(Error::InvalidParameter(
                "wavelength step must be positive".into(),
            ));
        }
        let mut names: Vec<&str> = self
            .knowns
            .iter()
            .map(|k| k.name.as_str())
            .chain(self.unknowns.iter().map(|u| u.name.as_str()))
            .collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DuplicateName(w[0].to_string()));
        }
        for k in &self.knowns {
            if !(k.bound > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "bound of {} must be positive",
                    k.name
                )));
            }
        }
        if let Some(t) = self.total_bound {
            if !(t > 0.0) {
                return Err(Error::InvalidParameter(
                    "total bound must be positive".into(),
                ));
            }
        }
        for u in &self.unknowns {
            if !(u.mixing_scale > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "mixing scale of {} must be positive",
                    u.name
                )));
            }
        }
        Ok(())
    }
}

/// Everything that was planted in a benchmark. Serialised as the sidecar file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub noise_sigma: f64,
    pub source_names: Vec<String>,
    /// `p × n` unknown spectra.
    pub sources: Array2<f64>,
    /// `n × m`
    pub mixing: Array2<f64>,
    pub witness_indices: Vec<usize>,
    pub known_names: Vec<String>,
    pub known_bounds: Vec<f64>,
    pub total_bound: Option<f64>,
    /// `k × m`
    pub known_concentrations: Array2<f64>,
    pub laser_wavelengths: Vec<f64>,
}

impl GroundTruth {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn bounds(&self) -> Result<ConcentrationBounds<f64>> {
        ConcentrationBounds::from_pairs(
            self.known_names
                .iter()
                .cloned()
                .zip(self.known_bounds.iter().copied()),
            self.total_bound,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub config: BenchmarkConfig,
    pub mixture: MixtureMatrix<f64>,
    pub library: ReferenceLibrary<f64>,
    pub bounds: ConcentrationBounds<f64>,
    pub truth: GroundTruth,
}

pub const MIXTURE_FILE: &str = "mixture.csv";
pub const LIBRARY_DIR: &str = "library";
pub const TRUTH_FILE: &str = "truth.json";

impl Benchmark {
    /// Writes `mixture.csv`, `library/` and `truth.json` under `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join(MIXTURE_FILE), self.mixture.to_csv())?;
        self.library.write_dir(dir.join(LIBRARY_DIR))?;
        fs::write(dir.join(TRUTH_FILE), self.truth.to_json()?)?;
        Ok(())
    }

    /// `X` with the known contributions removed (before noise): `W₀ M₀`.
    pub fn unknown_part(&self) -> Array2<f64> {
        self.truth.sources.dot(&self.truth.mixing)
    }
}

fn cosine(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt())
}

/// Mixing rows are redrawn until no two of them are closer than this in cosine,
/// so that every source forms its own ray.
const MAX_ROW_COSINE: f64 = 0.95;

fn draw_mixing(rng: &mut ChaCha8Rng, unknowns: &[UnknownSpec], m: usize) -> Result<Array2<f64>> {
    let n = unknowns.len();
    for _ in 0..1000 {
        let mut mix = Array2::from_shape_simple_fn((n, m), || 0.05 + 0.45 * rng.random::<f64>());
        for (mut row, u) in mix.axis_iter_mut(Axis(0)).zip(unknowns) {
            row *= u.mixing_scale;
        }
        let distinct =
            (0..n).all(|a| (a + 1..n).all(|b| cosine(mix.row(a), mix.row(b)) <= MAX_ROW_COSINE));
        if distinct {
            return Ok(mix);
        }
    }
    Err(Error::InfeasibleConfig(
        "could not draw sufficiently distinct mixing rows; add mixtures".into(),
    ))
}

/// Generates `X = A S₀ + W₀ M₀ + noise` together with its library, bounds and
/// ground truth. Random draws (known concentrations, mixing rows, noise, in that
/// order) come from one ChaCha8 stream seeded with `config.seed`.
pub fn gen_benchmark(config: &BenchmarkConfig) -> Result<Benchmark> {
    config.validate()?;
    let grid = config.grid()?;
    let p = grid.len();
    let m = config.m;

    let mut library = ReferenceLibrary::new(grid.clone());
    let mut all_names: Vec<String> = config
        .knowns
        .iter()
        .map(|k| k.name.clone())
        .chain(config.unknowns.iter().map(|u| u.name.clone()))
        .collect();
    if config.include_decoys {
        for d in DECOY_NAMES {
            if !all_names.iter().any(|n| n == d) {
                all_names.push(d.to_string());
            }
        }
    }
    for name in &all_names {
        let spectrum = gen_source_spectrum(&substance_peaks(name)?, &grid, name)?;
        library.insert(name.clone(), &spectrum)?;
    }
    let column = |name: &str| library.get(name).map(|s| s.view().to_owned()).unwrap();

    let k = config.knowns.len();
    let n = config.unknowns.len();
    let mut a = Array2::zeros((p, k));
    for (j, kn) in config.knowns.iter().enumerate() {
        a.column_mut(j).assign(&column(&kn.name));
    }
    let mut w0 = Array2::zeros((p, n));
    for (j, u) in config.unknowns.iter().enumerate() {
        w0.column_mut(j).assign(&column(&u.name));
    }

    // the knowns must not touch the unknowns, otherwise the known fit absorbs part of them
    for i in 0..p {
        let known_here = a.row(i).iter().any(|v| *v > 0.0);
        if known_here {
            if let Some(j) = (0..n).find(|&j| w0[[i, j]] > 0.0) {
                return Err(Error::InfeasibleConfig(format!(
                    "{} overlaps a known substance at {} cm⁻¹",
                    config.unknowns[j].name,
                    grid.as_slice()[i]
                )));
            }
        }
    }
    let verdicts = verify_standalone_peaks_relative(w0.view(), 1e-6);
    let mut witness_indices = Vec::with_capacity(n);
    for v in &verdicts {
        match v.witness {
            Some(i) => witness_indices.push(i),
            None => {
                return Err(Error::InfeasibleConfig(format!(
                    "{} has no stand-alone peak on this grid",
                    config.unknowns[v.source].name
                )))
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let share = config
        .total_bound
        .map_or(f64::INFINITY, |t| t / k.max(1) as f64);
    let mut s0 = Array2::zeros((k, m));
    for (j, kn) in config.knowns.iter().enumerate() {
        let cap = kn.bound.min(share);
        for col in 0..m {
            s0[[j, col]] = cap * (0.4 + 0.55 * rng.random::<f64>());
        }
    }
    let m0 = draw_mixing(&mut rng, &config.unknowns, m)?;

    let mut x = a.dot(&s0) + w0.dot(&m0);
    if config.noise_sigma > 0.0 {
        let peak = x.iter().copied().fold(0.0, f64::max);
        let normal = Normal::new(0.0, config.noise_sigma * peak)
            .map_err(|e| Error::InvalidParameter(format!("noise: {e}")))?;
        for v in x.iter_mut() {
            *v += normal.sample(&mut rng);
            if config.nonnegative {
                *v = v.max(0.0);
            }
        }
    }

    let wavelengths = config.laser_wavelengths();
    let mixture = MixtureMatrix::with_wavelengths(grid, x, &wavelengths)?;
    let truth = GroundTruth {
        seed: config.seed,
        noise_sigma: config.noise_sigma,
        source_names: config.unknowns.iter().map(|u| u.name.clone()).collect(),
        sources: w0,
        mixing: m0,
        witness_indices,
        known_names: config.knowns.iter().map(|kn| kn.name.clone()).collect(),
        known_bounds: config.knowns.iter().map(|kn| kn.bound).collect(),
        total_bound: config.total_bound,
        known_concentrations: s0,
        laser_wavelengths: wavelengths,
    };
    let bounds = truth.bounds()?;
    Ok(Benchmark {
        config: config.clone(),
        mixture,
        library,
        bounds,
        truth,
    })
}
