//! Phase recovery for NMF-separated components: Wiener masking, Griffin-Lim
//! and Le Roux kernel-based consistency enforcement.

use ndarray::{Array2, Zip};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorization::FactorPair;
use crate::scalar::Real;
use crate::tf::{
    consistency_project, inconsistency, istft, unit_phasor, weighted_real_distance_sqr, with_phase_of,
    LeRouxKernel, Spectrogram,
};

/// Assignment of NMF components to output sources.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grouping {
    groups: Vec<Vec<usize>>,
}

impl Grouping {
    /// One component per source.
    pub fn one_to_one(k: usize) -> Self {
        Self { groups: (0..k).map(|i| vec![i]).collect() }
    }

    /// `groups[s]` lists the components summed into source `s`; every
    /// component in `0..n_components` must appear exactly once.
    pub fn new(groups: Vec<Vec<usize>>, n_components: usize) -> Result<Self> {
        let mut seen = vec![false; n_components];
        for g in &groups {
            if g.is_empty() {
                return Err(Error::InvalidArgument("empty source group".into()));
            }
            for &c in g {
                if c >= n_components || seen[c] {
                    return Err(Error::InvalidArgument(format!("component {c} out of range or assigned twice")));
                }
                seen[c] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidArgument(format!("component {missing} is not assigned to any source")));
        }
        Ok(Self { groups })
    }

    pub fn n_sources(&self) -> usize {
        self.groups.len()
    }

    pub fn n_components(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }
}

/// Per-source complex spectrograms with their resynthesized signals.
#[derive(Clone, Debug)]
pub struct SourceEstimateSet<T: Real> {
    spectrograms: Vec<Spectrogram<T>>,
    signals: Vec<Vec<T>>,
    mixture: Spectrogram<T>,
}

impl<T: Real> SourceEstimateSet<T> {
    /// Builds the set, resynthesizing every source with [`istft`].
    pub fn from_spectrograms(mixture: Spectrogram<T>, spectrograms: Vec<Spectrogram<T>>) -> Result<Self> {
        if let Some(bad) = spectrograms.iter().position(|s| !s.same_layout(&mixture)) {
            return Err(Error::ShapeMismatch(format!("source {bad} does not match the mixture layout")));
        }
        let signals = spectrograms.iter().map(istft).collect();
        Ok(Self { spectrograms, signals, mixture })
    }

    pub fn spectrograms(&self) -> &[Spectrogram<T>] {
        &self.spectrograms
    }

    pub fn signals(&self) -> &[Vec<T>] {
        &self.signals
    }

    pub fn into_signals(self) -> Vec<Vec<T>> {
        self.signals
    }

    pub fn mixture(&self) -> &Spectrogram<T> {
        &self.mixture
    }

    pub fn n_sources(&self) -> usize {
        self.spectrograms.len()
    }
}

fn check_factors<T: Real>(x: &Spectrogram<T>, factors: &FactorPair<T>, grouping: &Grouping) -> Result<()> {
    if factors.w.nrows() != x.n_bins() || factors.h.ncols() != x.n_frames() {
        return Err(Error::ShapeMismatch(format!(
            "factors give {}x{}, spectrogram is {}x{}",
            factors.w.nrows(),
            factors.h.ncols(),
            x.n_bins(),
            x.n_frames()
        )));
    }
    if grouping.n_components() != factors.k() {
        return Err(Error::InvalidArgument(format!(
            "grouping covers {} components but the model has {}",
            grouping.n_components(),
            factors.k()
        )));
    }
    Ok(())
}

/// Per-source model spectrograms `Σ_{j ∈ group} W_j H_j`.
pub fn source_models<T: Real>(factors: &FactorPair<T>, grouping: &Grouping) -> Vec<Array2<T>> {
    grouping
        .groups()
        .iter()
        .map(|g| {
            let mut acc = factors.component(g[0]);
            for &j in &g[1..] {
                acc = acc + factors.component(j);
            }
            acc
        })
        .collect()
}

/// Soft masks `V_s / Σ_l V_l`; they sum to one in every bin.
pub fn wiener_masks<T: Real>(factors: &FactorPair<T>, grouping: &Grouping) -> Vec<Array2<T>> {
    let models = source_models(factors, grouping);
    let mut total = Array2::<T>::zeros(models[0].dim());
    for m in &models {
        total = total + m;
    }
    let n = T::from_usize_lossy(models.len());
    models
        .into_iter()
        .map(|mut m| {
            Zip::from(&mut m).and(&total).for_each(|v, &s| {
                *v = if s > T::zero() { *v / s } else { n.recip() };
            });
            m
        })
        .collect()
}

/// Wiener-like separation `X_s = (V_s / V̂) X`.
pub fn wiener_separate<T: Real>(
    x: &Spectrogram<T>,
    factors: &FactorPair<T>,
    grouping: &Grouping,
) -> Result<SourceEstimateSet<T>> {
    check_factors(x, factors, grouping)?;
    let specs = wiener_masks(factors, grouping)
        .into_iter()
        .map(|mask| {
            let mut data = x.data().clone();
            Zip::from(&mut data).and(&mask).for_each(|c, &m| *c = *c * m);
            x.with_data(data)
        })
        .collect::<Result<Vec<_>>>()?;
    SourceEstimateSet::from_spectrograms(x.clone(), specs)
}

/// Initialization for the iterative phase methods: the Wiener estimates.
pub fn init_from_wiener<T: Real>(
    x: &Spectrogram<T>,
    factors: &FactorPair<T>,
    grouping: &Grouping,
) -> Result<SourceEstimateSet<T>> {
    wiener_separate(x, factors, grouping)
}

/// Which magnitude the iterative phase methods hold fixed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseInit {
    /// Magnitude and phase of the Wiener estimate.
    #[default]
    WienerMagnitude,
    /// NMF model magnitude `V_s` with the mixture phase.
    NmfMagnitude,
}

/// Fixed magnitude and starting point for one source.
#[derive(Clone, Debug)]
pub struct PhaseTarget<T: Real> {
    pub magnitude: Array2<T>,
    pub init: Spectrogram<T>,
}

pub fn phase_targets<T: Real>(
    x: &Spectrogram<T>,
    factors: &FactorPair<T>,
    grouping: &Grouping,
    mode: PhaseInit,
) -> Result<Vec<PhaseTarget<T>>> {
    match mode {
        PhaseInit::WienerMagnitude => {
            let set = init_from_wiener(x, factors, grouping)?;
            Ok(set
                .spectrograms
                .into_iter()
                .map(|s| PhaseTarget { magnitude: s.magnitude(), init: s })
                .collect())
        }
        PhaseInit::NmfMagnitude => {
            check_factors(x, factors, grouping)?;
            source_models(factors, grouping)
                .into_iter()
                .map(|v| {
                    let init = x.with_data(with_phase_of(&v, x.data()))?;
                    Ok(PhaseTarget { magnitude: v, init })
                })
                .collect()
        }
    }
}

/// Output of an iterative phase reconstruction.
#[derive(Clone, Debug)]
pub struct PhaseRecon<T: Real> {
    pub spectrogram: Spectrogram<T>,
    /// `‖V - |P(X^i)|‖` at each iteration, `P` being the projection used.
    pub distances: Vec<T>,
    /// `inconsistency(X^i)` for `i = 0..=iterations`.
    pub inconsistencies: Vec<T>,
}

/// Replaces the phases of `current` by those of `target`, keeping the
/// previous phase where `target` vanishes, and sets the magnitude.
fn reproject_magnitude<T: Real>(magnitude: &Array2<T>, target: &Array2<Complex<T>>, current: &mut Array2<Complex<T>>) {
    Zip::from(current).and(magnitude).and(target).for_each(|c, &m, &y| {
        let keep = unit_phasor(*c, Complex::new(T::one(), T::zero()));
        *c = unit_phasor(y, keep) * m;
    });
}

fn iterate_phase<T: Real, P>(
    magnitude: &Array2<T>,
    init: &Spectrogram<T>,
    iterations: usize,
    mut project: P,
) -> Result<PhaseRecon<T>>
where
    P: FnMut(&Spectrogram<T>) -> Result<Spectrogram<T>>,
{
    if magnitude.dim() != init.data().dim() {
        return Err(Error::ShapeMismatch("target magnitude and initial spectrogram differ in shape".into()));
    }
    if magnitude.iter().any(|&m| !(m >= T::zero()) || !m.is_finite()) {
        return Err(Error::InvalidArgument("target magnitude must be finite and nonnegative".into()));
    }
    let mut x = init.with_data(with_phase_of(magnitude, init.data()))?;
    let mut distances = Vec::with_capacity(iterations);
    let mut inconsistencies = Vec::with_capacity(iterations + 1);
    inconsistencies.push(inconsistency(&x));
    for _ in 0..iterations {
        let y = project(&x)?;
        distances.push(weighted_real_distance_sqr(magnitude, &y.magnitude()).sqrt());
        reproject_magnitude(magnitude, y.data(), x.data_mut());
        inconsistencies.push(inconsistency(&x));
    }
    Ok(PhaseRecon { spectrogram: x, distances, inconsistencies })
}

/// Griffin-Lim: `X ← V · F(X) / |F(X)|` with the exact consistency projection.
pub fn griffin_lim_separate<T: Real>(magnitude: &Array2<T>, init: &Spectrogram<T>, iterations: usize) -> Result<PhaseRecon<T>> {
    iterate_phase(magnitude, init, iterations, |x| Ok(consistency_project(x)))
}

/// Le Roux phase updates: `φ ← angle(kernel ⊛ X)` with the magnitude fixed.
pub fn leroux_separate<T: Real>(
    magnitude: &Array2<T>,
    init: &Spectrogram<T>,
    iterations: usize,
    kernel: &LeRouxKernel<T>,
) -> Result<PhaseRecon<T>> {
    if **kernel.plan() != **init.plan() {
        return Err(Error::InvalidArgument("kernel was built for a different STFT plan".into()));
    }
    iterate_phase(magnitude, init, iterations, |x| kernel.apply(x))
}
