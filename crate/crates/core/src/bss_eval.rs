//! BSS Eval source-separation metrics.
//!
//! An estimate (zero-padded by `L - 1` samples) is split into orthogonal
//! parts using least-squares projections onto delayed copies `0..L` of the
//! references: `s_target` lies in the span of the matched reference,
//! `e_interf` is the extra part explained by all references and `e_artif` is
//! the rest. Gram matrices are Toeplitz blocks of reference
//! cross-correlations, computed by FFT and factorized once per reference set.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::scalar::Real;

/// Default number of filter taps.
pub const DEFAULT_FILTER_LEN: usize = 512;

/// Largest source count accepted by the exhaustive permutation search.
pub const MAX_PERMUTATION_SOURCES: usize = 6;

const CLAMP_DB: f64 = 300.0;
const RIDGE_REL: f64 = 1e-10;

/// Scores indexed by reference; `permutation[j]` is the estimate matched to
/// reference `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparationScores<T: Real> {
    pub sdr: Vec<T>,
    pub sir: Vec<T>,
    pub sar: Vec<T>,
    pub permutation: Vec<usize>,
    /// Whether a Gram matrix needed the ridge fallback.
    pub ridge_used: bool,
}

/// The three orthogonal parts of a padded estimate.
#[derive(Clone, Debug)]
pub struct Decomposition<T: Real> {
    pub target: Vec<T>,
    pub interference: Vec<T>,
    pub artifacts: Vec<T>,
}

/// Ratios computed from a decomposition, clamped to ±300 dB.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ratios<T: Real> {
    pub sdr: T,
    pub sir: T,
    pub sar: T,
}

fn energy<T: Real>(x: impl Iterator<Item = T>) -> T {
    x.map(|v| v * v).sum()
}

fn ratio_db<T: Real>(num: T, den: T) -> T {
    let clamp = T::lit(CLAMP_DB);
    let value = T::lit(10.0) * (num / den).log10();
    if value.is_nan() {
        -clamp
    } else {
        value.max(-clamp).min(clamp)
    }
}

impl<T: Real> Decomposition<T> {
    pub fn ratios(&self) -> Ratios<T> {
        let target = energy(self.target.iter().copied());
        let interf = energy(self.interference.iter().copied());
        let artif = energy(self.artifacts.iter().copied());
        let distortion = energy(self.interference.iter().zip(&self.artifacts).map(|(&i, &a)| i + a));
        let explained = energy(self.target.iter().zip(&self.interference).map(|(&t, &i)| t + i));
        Ratios {
            sdr: ratio_db(target, distortion),
            sir: ratio_db(target, interf),
            sar: ratio_db(explained, artif),
        }
    }
}

/// Precomputed projection machinery for one set of references.
pub struct BssEvaluator<T: Real> {
    n_samples: usize,
    filter_len: usize,
    nfft: usize,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
    ref_spectra: Vec<Vec<Complex<T>>>,
    all: Cholesky<T>,
    single: Vec<Cholesky<T>>,
    ridge_used: bool,
}

impl<T: Real> std::fmt::Debug for BssEvaluator<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BssEvaluator")
            .field("n_sources", &self.single.len())
            .field("n_samples", &self.n_samples)
            .field("filter_len", &self.filter_len)
            .field("ridge_used", &self.ridge_used)
            .finish()
    }
}

fn check_signal<T: Real>(x: &[T], len: usize, what: &str) -> Result<()> {
    if x.len() != len {
        return Err(Error::ShapeMismatch(format!("{what} has {} samples, expected {len}", x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("BSS Eval input"));
    }
    Ok(())
}

impl<T: Real> BssEvaluator<T> {
    pub fn new(refs: &[Vec<T>], filter_len: usize) -> Result<Self> {
        let k = refs.len();
        if k == 0 {
            return Err(Error::InvalidArgument("at least one reference is required".into()));
        }
        if filter_len == 0 {
            return Err(Error::InvalidArgument("filter length must be at least 1".into()));
        }
        let n = refs[0].len();
        if n == 0 {
            return Err(Error::EmptySignal);
        }
        for r in refs {
            check_signal(r, n, "reference")?;
        }
        let nfft = (n + filter_len - 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(nfft);
        let inverse = planner.plan_fft_inverse(nfft);
        let ref_spectra: Vec<Vec<Complex<T>>> = refs.iter().map(|r| spectrum_with(&forward, nfft, r)).collect();

        // Cross-correlations r_ij(τ) = Σ_n s_i[n] s_j[n+τ] for |τ| < L.
        let l = filter_len;
        let mut corr = vec![vec![Vec::new(); k]; k];
        for i in 0..k {
            for j in i..k {
                corr[i][j] = correlate_with(&inverse, nfft, &ref_spectra[i], &ref_spectra[j]);
            }
        }
        let lag = |i: usize, j: usize, tau: isize| -> T {
            // r_ji(τ) = r_ij(-τ).
            let (a, b, t) = if i <= j { (i, j, tau) } else { (j, i, -tau) };
            corr[a][b][t.rem_euclid(nfft as isize) as usize]
        };
        let gram_all = Array2::from_shape_fn((k * l, k * l), |(p, q)| {
            let (i, a) = (p / l, p % l);
            let (j, b) = (q / l, q % l);
            lag(i, j, a as isize - b as isize)
        });
        let ridge = T::lit(RIDGE_REL);
        let (all, ridged) = Cholesky::with_ridge(&gram_all, ridge)?;
        let mut ridge_used = ridged;
        let mut single = Vec::with_capacity(k);
        for j in 0..k {
            let g = Array2::from_shape_fn((l, l), |(a, b)| lag(j, j, a as isize - b as isize));
            let (c, ridged) = Cholesky::with_ridge(&g, ridge)?;
            ridge_used |= ridged;
            single.push(c);
        }
        if ridge_used {
            log::warn!("reference Gram matrix is singular; added a {RIDGE_REL:e}·trace ridge");
        }
        Ok(Self {
            n_samples: n,
            filter_len,
            nfft,
            forward,
            inverse,
            ref_spectra,
            all,
            single,
            ridge_used,
        })
    }

    pub fn n_sources(&self) -> usize {
        self.single.len()
    }

    pub fn filter_len(&self) -> usize {
        self.filter_len
    }

    pub fn ridge_used(&self) -> bool {
        self.ridge_used
    }

    fn spectrum(&self, x: &[T]) -> Vec<Complex<T>> {
        spectrum_with(&self.forward, self.nfft, x)
    }

    fn correlate(&self, a: &[Complex<T>], b: &[Complex<T>]) -> Vec<T> {
        correlate_with(&self.inverse, self.nfft, a, b)
    }

    /// `Σ_b c_b s_j[m - b]` for `m < n + L - 1`.
    fn filtered(&self, j: usize, coeffs: &[T]) -> Vec<T> {
        let cs = self.spectrum(coeffs);
        let mut buf: Vec<Complex<T>> = cs.iter().zip(&self.ref_spectra[j]).map(|(x, y)| x * y).collect();
        self.inverse.process(&mut buf);
        let scale = T::from_usize_lossy(self.nfft).recip();
        buf.into_iter().take(self.padded_len()).map(|c| c.re * scale).collect()
    }

    fn padded_len(&self) -> usize {
        self.n_samples + self.filter_len - 1
    }

    /// Inner products `⟨est, s_j delayed by b⟩` for every reference and delay.
    fn projections(&self, est: &[T]) -> Vec<Vec<T>> {
        let es = self.spectrum(est);
        self.ref_spectra
            .iter()
            .map(|s| self.correlate(s, &es).into_iter().take(self.filter_len).collect())
            .collect()
    }

    fn project_all(&self, rhs: &[Vec<T>]) -> Vec<T> {
        let flat = Array1::from_iter(rhs.iter().flatten().copied());
        let coef = self.all.solve(&flat);
        let l = self.filter_len;
        let mut out = vec![T::zero(); self.padded_len()];
        for j in 0..self.n_sources() {
            let part = self.filtered(j, &coef.as_slice().expect("contiguous")[j * l..(j + 1) * l]);
            for (o, p) in out.iter_mut().zip(part) {
                *o += p;
            }
        }
        out
    }

    fn project_single(&self, rhs: &[Vec<T>], j: usize) -> Vec<T> {
        let coef = self.single[j].solve(&Array1::from_vec(rhs[j].clone()));
        self.filtered(j, coef.as_slice().expect("contiguous"))
    }

    fn decompose_with(&self, est: &[T], rhs: &[Vec<T>], all: &[T], j: usize) -> Decomposition<T> {
        let target = self.project_single(rhs, j);
        let interference = all.iter().zip(&target).map(|(&a, &t)| a - t).collect();
        let artifacts = (0..self.padded_len())
            .map(|m| est.get(m).copied().unwrap_or(T::zero()) - all[m])
            .collect();
        Decomposition {
            target,
            interference,
            artifacts,
        }
    }

    /// Decomposition of `est` against reference `target`.
    pub fn decompose(&self, est: &[T], target: usize) -> Result<Decomposition<T>> {
        check_signal(est, self.n_samples, "estimate")?;
        if target >= self.n_sources() {
            return Err(Error::InvalidArgument(format!("reference index {target} out of range")));
        }
        let rhs = self.projections(est);
        let all = self.project_all(&rhs);
        Ok(self.decompose_with(est, &rhs, &all, target))
    }

    /// Ratios for every (estimate, reference) pair, indexed `[estimate][reference]`.
    pub fn pairwise(&self, estimates: &[Vec<T>]) -> Result<Vec<Vec<Ratios<T>>>> {
        estimates
            .iter()
            .map(|est| {
                check_signal(est, self.n_samples, "estimate")?;
                let rhs = self.projections(est);
                let all = self.project_all(&rhs);
                Ok((0..self.n_sources())
                    .map(|j| self.decompose_with(est, &rhs, &all, j).ratios())
                    .collect())
            })
            .collect()
    }

    /// Scores with the estimate-to-reference assignment that maximizes the
    /// mean SIR.
    pub fn scores(&self, estimates: &[Vec<T>]) -> Result<SeparationScores<T>> {
        let k = self.n_sources();
        if estimates.len() != k {
            return Err(Error::ShapeMismatch(format!("{} estimates for {k} references", estimates.len())));
        }
        if k > MAX_PERMUTATION_SOURCES {
            return Err(Error::TooManySources(k));
        }
        let table = self.pairwise(estimates)?;
        let mut best: Option<(T, Vec<usize>)> = None;
        for perm in permutations(k) {
            let total: T = (0..k).map(|j| table[perm[j]][j].sir).sum();
            if best.as_ref().map_or(true, |(b, _)| total > *b) {
                best = Some((total, perm));
            }
        }
        let (_, permutation) = best.expect("at least one permutation");
        let pick = |j: usize| table[permutation[j]][j];
        Ok(SeparationScores {
            sdr: (0..k).map(|j| pick(j).sdr).collect(),
            sir: (0..k).map(|j| pick(j).sir).collect(),
            sar: (0..k).map(|j| pick(j).sar).collect(),
            permutation,
            ridge_used: self.ridge_used,
        })
    }
}

fn spectrum_with<T: Real>(forward: &Arc<dyn Fft<T>>, nfft: usize, x: &[T]) -> Vec<Complex<T>> {
    let mut buf = vec![Complex::new(T::zero(), T::zero()); nfft];
    for (b, &v) in buf.iter_mut().zip(x) {
        b.re = v;
    }
    forward.process(&mut buf);
    buf
}

/// Circular `Σ_n a[n] b[n+τ]` from spectra, indexed by `τ mod nfft`.
fn correlate_with<T: Real>(inverse: &Arc<dyn Fft<T>>, nfft: usize, a: &[Complex<T>], b: &[Complex<T>]) -> Vec<T> {
    let mut buf: Vec<Complex<T>> = a.iter().zip(b).map(|(x, y)| x.conj() * y).collect();
    inverse.process(&mut buf);
    let scale = T::from_usize_lossy(nfft).recip();
    buf.into_iter().map(|c| c.re * scale).collect()
}

/// All permutations of `0..n` in lexicographic order.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn extend(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                extend(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    extend(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

/// Decomposes `est` against `refs[target]`.
pub fn decompose_estimate<T: Real>(est: &[T], refs: &[Vec<T>], target: usize, filter_len: usize) -> Result<Decomposition<T>> {
    BssEvaluator::new(refs, filter_len)?.decompose(est, target)
}

pub fn compute_scores<T: Real>(estimates: &[Vec<T>], refs: &[Vec<T>], filter_len: usize) -> Result<SeparationScores<T>> {
    if refs.len() > MAX_PERMUTATION_SOURCES {
        return Err(Error::TooManySources(refs.len()));
    }
    BssEvaluator::new(refs, filter_len)?.scores(estimates)
}
