//! Synthetic benchmark mixtures: sums of random damped harmonic sources with
//! a controlled amount of time-frequency overlap, plus white noise.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::wav::{wav_read, wav_write, WavFormat};

/// Whether harmonics of different sources may share frequency bins.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlapClass {
    /// No cross-source pair of harmonics within ±2 bins.
    None,
    /// At least one cross-source pair in the same bin.
    Forced,
}

impl OverlapClass {
    pub const ALL: [OverlapClass; 2] = [OverlapClass::None, OverlapClass::Forced];

    pub fn as_str(self) -> &'static str {
        match self {
            OverlapClass::None => "none",
            OverlapClass::Forced => "forced",
        }
    }
}

impl fmt::Display for OverlapClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OverlapClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(OverlapClass::None),
            "forced" => Ok(OverlapClass::Forced),
            other => Err(Error::InvalidArgument(format!("unknown overlap class {other:?}"))),
        }
    }
}

/// Sinusoidal frequency modulation shared by all harmonics of a source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vibrato {
    /// Relative frequency deviation.
    pub depth: f64,
    /// Modulation rate in Hz.
    pub rate: f64,
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmonicSourceSpec {
    /// Fundamental frequency in Hz.
    pub fundamental: f64,
    pub n_harmonics: usize,
    pub amplitudes: Vec<f64>,
    /// Phase of each harmonic at the onset, in radians.
    pub origin_phases: Vec<f64>,
    /// Exponential decay rate in 1/s, shared by all harmonics.
    pub damping: f64,
    pub onset: f64,
    pub duration: f64,
    pub vibrato: Option<Vibrato>,
}

impl HarmonicSourceSpec {
    /// Nominal harmonic frequencies `h f0`.
    pub fn harmonic_frequencies(&self) -> Vec<f64> {
        (1..=self.n_harmonics).map(|h| h as f64 * self.fundamental).collect()
    }

    /// Samples the source at `sample_rate` over `n_samples` samples.
    pub fn synthesize(&self, sample_rate: f64, n_samples: usize) -> Vec<f64> {
        let two_pi = 2.0 * std::f64::consts::PI;
        (0..n_samples)
            .map(|n| {
                let t = n as f64 / sample_rate;
                let local = t - self.onset;
                if local < 0.0 || local >= self.duration {
                    return 0.0;
                }
                // Integral of the relative instantaneous frequency.
                let warped = match &self.vibrato {
                    Some(v) => local - v.depth / (two_pi * v.rate) * ((two_pi * v.rate * local + v.phase).cos() - v.phase.cos()),
                    None => local,
                };
                let envelope = (-self.damping * local).exp();
                let mut acc = 0.0;
                for (h, (&a, &phi)) in self.amplitudes.iter().zip(&self.origin_phases).enumerate() {
                    let freq = (h + 1) as f64 * self.fundamental;
                    acc += a * (two_pi * freq * warped + phi).cos();
                }
                envelope * acc
            })
            .collect()
    }
}

/// Generator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatagenConfig {
    pub sample_rate: f64,
    /// Signal length in seconds.
    pub duration: f64,
    pub snr_db: f64,
    /// Window length whose bin width defines the overlap classes.
    pub window_length: usize,
    pub fundamental_range: (f64, f64),
    pub harmonics_range: (usize, usize),
    pub damping_range: (f64, f64),
    /// Peak absolute value of the mixture after scaling.
    pub peak: f64,
    pub max_draws: usize,
    pub vibrato: bool,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        Self {
            sample_rate: 11025.0,
            duration: 1.0,
            snr_db: 60.0,
            window_length: 512,
            fundamental_range: (110.0, 880.0),
            harmonics_range: (4, 10),
            damping_range: (0.5, 8.0),
            peak: 0.9,
            max_draws: 1000,
            vibrato: false,
        }
    }
}

impl DatagenConfig {
    pub fn bin_width(&self) -> f64 {
        self.sample_rate / self.window_length as f64
    }

    pub fn n_samples(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize
    }

    fn validate(&self) -> Result<()> {
        let ok = self.sample_rate > 0.0
            && self.duration > 0.0
            && self.snr_db.is_finite()
            && self.window_length > 0
            && self.fundamental_range.0 > 0.0
            && self.fundamental_range.0 <= self.fundamental_range.1
            && self.harmonics_range.0 >= 1
            && self.harmonics_range.0 <= self.harmonics_range.1
            && self.damping_range.0 >= 0.0
            && self.damping_range.0 <= self.damping_range.1
            && self.peak > 0.0
            && self.max_draws > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid generator settings: {self:?}")))
        }
    }
}

/// A generated mixture with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureCase<T: Real> {
    pub id: String,
    /// `mixture[n] = Σ_k sources[k][n] + noise[n]`, summed in source order.
    pub mixture: Vec<T>,
    pub sources: Vec<Vec<T>>,
    pub noise: Vec<T>,
    pub sample_rate: T,
    pub overlap_class: OverlapClass,
    pub seed: u64,
    /// Source parameters, when known.
    pub specs: Vec<HarmonicSourceSpec>,
}

impl<T: Real> MixtureCase<T> {
    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn len(&self) -> usize {
        self.mixture.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mixture.is_empty()
    }
}

/// Smallest distance in Hz between harmonics of different sources.
pub fn min_cross_distance(specs: &[HarmonicSourceSpec]) -> f64 {
    let freqs: Vec<Vec<f64>> = specs.iter().map(|s| s.harmonic_frequencies()).collect();
    let mut best = f64::INFINITY;
    for a in 0..freqs.len() {
        for b in a + 1..freqs.len() {
            for &x in &freqs[a] {
                for &y in &freqs[b] {
                    best = best.min((x - y).abs());
                }
            }
        }
    }
    best
}

/// Whether two harmonics of different sources round to the same bin.
pub fn shares_bin(specs: &[HarmonicSourceSpec], bin_width: f64) -> bool {
    let bins: Vec<HashSet<i64>> = specs
        .iter()
        .map(|s| s.harmonic_frequencies().iter().map(|f| (f / bin_width).round() as i64).collect())
        .collect();
    (0..bins.len()).any(|a| (a + 1..bins.len()).any(|b| !bins[a].is_disjoint(&bins[b])))
}

/// Re-derives the overlap class from the drawn parameters, if any applies.
pub fn classify_overlap(specs: &[HarmonicSourceSpec], bin_width: f64) -> Option<OverlapClass> {
    if min_cross_distance(specs) > 2.0 * bin_width {
        Some(OverlapClass::None)
    } else if shares_bin(specs, bin_width) {
        Some(OverlapClass::Forced)
    } else {
        None
    }
}

fn satisfies(class: OverlapClass, specs: &[HarmonicSourceSpec], bin_width: f64) -> bool {
    classify_overlap(specs, bin_width) == Some(class)
}

/// Draws `k` source specifications meeting the overlap constraint.
pub fn draw_specs(k: usize, class: OverlapClass, config: &DatagenConfig, rng: &mut ChaCha8Rng) -> Result<Vec<HarmonicSourceSpec>> {
    let nyquist = config.sample_rate / 2.0;
    let (f_lo, f_hi) = config.fundamental_range;
    let (h_lo, h_hi) = config.harmonics_range;
    for _ in 0..config.max_draws {
        let mut specs = Vec::with_capacity(k);
        for _ in 0..k {
            let fundamental = rng.gen_range(f_lo..=f_hi);
            let vibrato = config.vibrato.then(|| Vibrato {
                depth: rng.gen_range(0.005..=0.02),
                rate: rng.gen_range(4.0..=7.0),
                phase: rng.gen_range(0.0..2.0 * std::f64::consts::PI),
            });
            let max_dev = 1.0 + vibrato.as_ref().map_or(0.0, |v| v.depth);
            let drawn = rng.gen_range(h_lo..=h_hi);
            let below_nyquist = ((nyquist / (fundamental * max_dev)).ceil() as usize).saturating_sub(1);
            let n_harmonics = drawn.min(below_nyquist).max(1);
            specs.push(HarmonicSourceSpec {
                fundamental,
                n_harmonics,
                amplitudes: Vec::new(),
                origin_phases: Vec::new(),
                damping: 0.0,
                onset: 0.0,
                duration: config.duration,
                vibrato,
            });
        }
        if satisfies(class, &specs, config.bin_width()) {
            for s in &mut specs {
                s.amplitudes = (0..s.n_harmonics).map(|_| 1.0 - rng.gen::<f64>() * 0.8).collect();
                s.origin_phases = (0..s.n_harmonics).map(|_| rng.gen_range(0.0..2.0 * std::f64::consts::PI)).collect();
                s.damping = rng.gen_range(config.damping_range.0..=config.damping_range.1);
            }
            return Ok(specs);
        }
    }
    Err(Error::OverlapInfeasible {
        draws: config.max_draws,
        detail: format!(
            "{k} sources, class {class}, fundamentals in {:?} Hz, bin width {:.2} Hz",
            config.fundamental_range,
            config.bin_width()
        ),
    })
}

/// One random mixture of `k` harmonic sources.
pub fn gen_harmonic_mixture<T: Real>(k: usize, class: OverlapClass, seed: u64, config: &DatagenConfig) -> Result<MixtureCase<T>> {
    if k < 2 {
        return Err(Error::InvalidArgument("a mixture needs at least two sources".into()));
    }
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs = draw_specs(k, class, config, &mut rng)?;
    let n = config.n_samples();
    let sources: Vec<Vec<f64>> = specs.iter().map(|s| s.synthesize(config.sample_rate, n)).collect();
    let clean: Vec<f64> = (0..n).map(|i| sources.iter().map(|s| s[i]).sum()).collect();
    let clean_power = clean.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let noise_std = (clean_power / 10f64.powf(config.snr_db / 10.0)).sqrt();
    let noise: Vec<f64> = (0..n).map(|_| noise_std * rng.sample::<f64, _>(StandardNormal)).collect();
    let peak = clean.iter().zip(&noise).map(|(c, e)| (c + e).abs()).fold(0.0, f64::max);
    let scale = if peak > 0.0 { config.peak / peak } else { 1.0 };

    let sources: Vec<Vec<T>> = sources.iter().map(|s| s.iter().map(|&v| T::lit(v * scale)).collect()).collect();
    let noise: Vec<T> = noise.iter().map(|&v| T::lit(v * scale)).collect();
    let mixture = mix(&sources, &noise);
    Ok(MixtureCase {
        id: format!("{class}-{seed:016x}"),
        mixture,
        sources,
        noise,
        sample_rate: T::lit(config.sample_rate),
        overlap_class: class,
        seed,
        specs,
    })
}

fn mix<T: Real>(sources: &[Vec<T>], noise: &[T]) -> Vec<T> {
    (0..noise.len())
        .map(|i| {
            let mut acc = T::zero();
            for s in sources {
                acc += s[i];
            }
            acc + noise[i]
        })
        .collect()
}

/// Distinct per-case seeds derived from a master seed and the class.
pub fn case_seeds(n_cases: usize, class: OverlapClass, master_seed: u64) -> Vec<u64> {
    let tag = match class {
        OverlapClass::None => 0x6e6f_6e65,
        OverlapClass::Forced => 0x666f_7263,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed ^ tag);
    let mut seen = HashSet::with_capacity(n_cases);
    let mut seeds = Vec::with_capacity(n_cases);
    while seeds.len() < n_cases {
        let s: u64 = rng.gen();
        if seen.insert(s) {
            seeds.push(s);
        }
    }
    seeds
}

/// `n_cases` two-source mixtures of one overlap class.
pub fn gen_dataset<T: Real>(n_cases: usize, class: OverlapClass, master_seed: u64, config: &DatagenConfig) -> Result<Vec<MixtureCase<T>>> {
    if n_cases < 1 {
        return Err(Error::InvalidArgument("a dataset needs at least one case".into()));
    }
    case_seeds(n_cases, class, master_seed)
        .into_iter()
        .enumerate()
        .map(|(i, seed)| {
            let mut case = gen_harmonic_mixture(2, class, seed, config)?;
            case.id = format!("{class}-{i:03}");
            Ok(case)
        })
        .collect()
}

/// One entry of a dataset manifest. Paths are relative to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub seed: u64,
    pub overlap_class: OverlapClass,
    pub mixture: PathBuf,
    pub sources: Vec<PathBuf>,
    #[serde(default)]
    pub specs: Vec<HarmonicSourceSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub sample_rate: u32,
    pub cases: Vec<ManifestEntry>,
}

/// Writes every case as float WAV files under `dir` and returns the manifest
/// describing them.
pub fn write_dataset<T: Real>(cases: &[MixtureCase<T>], dir: &Path) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(cases.len());
    let mut sample_rate = None;
    for case in cases {
        let sr = case.sample_rate.to_f64_lossy().round() as u32;
        if *sample_rate.get_or_insert(sr) != sr {
            return Err(Error::InvalidArgument("cases of one dataset must share a sample rate".into()));
        }
        let mixture = PathBuf::from(format!("{}_mix.wav", case.id));
        wav_write(dir.join(&mixture), &case.mixture, sr, WavFormat::Float32)?;
        let mut sources = Vec::with_capacity(case.n_sources());
        for (k, s) in case.sources.iter().enumerate() {
            let p = PathBuf::from(format!("{}_src{k}.wav", case.id));
            wav_write(dir.join(&p), s, sr, WavFormat::Float32)?;
            sources.push(p);
        }
        entries.push(ManifestEntry {
            id: case.id.clone(),
            seed: case.seed,
            overlap_class: case.overlap_class,
            mixture,
            sources,
            specs: case.specs.clone(),
        });
    }
    Ok(DatasetManifest {
        sample_rate: sample_rate.unwrap_or(0),
        cases: entries,
    })
}

/// Loads one manifest entry. The stored noise is the mixture minus the sum
/// of the sources.
pub fn load_case<T: Real>(entry: &ManifestEntry, base_dir: &Path) -> Result<MixtureCase<T>> {
    let (mixture, sr) = wav_read::<T>(base_dir.join(&entry.mixture))?;
    let mut sources = Vec::with_capacity(entry.sources.len());
    for p in &entry.sources {
        let (s, sr_s) = wav_read::<T>(base_dir.join(p))?;
        if sr_s != sr || s.len() != mixture.len() {
            return Err(Error::ShapeMismatch(format!("source {} does not match its mixture", p.display())));
        }
        sources.push(s);
    }
    let noise = (0..mixture.len())
        .map(|i| {
            let mut acc = mixture[i];
            for s in &sources {
                acc -= s[i];
            }
            acc
        })
        .collect();
    Ok(MixtureCase {
        id: entry.id.clone(),
        mixture,
        sources,
        noise,
        sample_rate: T::lit(f64::from(sr)),
        overlap_class: entry.overlap_class,
        seed: entry.seed,
        specs: entry.specs.clone(),
    })
}
