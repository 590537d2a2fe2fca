//! STFT analysis/synthesis, the consistency projection and the local
//! TF-domain kernel used by Le Roux phase reconstruction.
//!
//! Framing convention: the signal is zero-padded by `window_length` samples on
//! the left and by at least `window_length` on the right (rounded up so the
//! padded body is a whole number of hops). Frame `t` covers padded samples
//! `[t * hop, t * hop + window_length)`. With the normalized window every
//! sample of the original signal sits under a full set of overlapping frames,
//! so [`istft`] inverts [`stft`] exactly on the whole signal.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, Zip};
use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// STFT parameterization: window, hop and sample rate.
///
/// The window is rescaled at construction so that the shifted squared-window
/// sum is exactly one, which makes the inverse a plain overlap-add.
#[derive(Clone)]
pub struct StftPlan<T: Real> {
    window_length: usize,
    hop: usize,
    window: Vec<T>,
    sample_rate: T,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
}

impl<T: Real> fmt::Debug for StftPlan<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StftPlan")
            .field("window_length", &self.window_length)
            .field("hop", &self.hop)
            .field("sample_rate", &self.sample_rate)
            .finish()
    }
}

impl<T: Real> PartialEq for StftPlan<T> {
    fn eq(&self, other: &Self) -> bool {
        self.window_length == other.window_length
            && self.hop == other.hop
            && self.sample_rate == other.sample_rate
            && self.window == other.window
    }
}

/// Periodic Hann window of length `n` (not normalized).
pub fn hann_window<T: Real>(n: usize) -> Vec<T> {
    let two_pi = T::PI() + T::PI();
    let len = T::from_usize_lossy(n);
    (0..n)
        .map(|i| {
            let phase = two_pi * T::from_usize_lossy(i) / len;
            T::lit(0.5) * (T::one() - phase.cos())
        })
        .collect()
}

impl<T: Real> StftPlan<T> {
    /// Normalized periodic Hann window with the given hop.
    pub fn hann(window_length: usize, hop: usize, sample_rate: T) -> Result<Arc<Self>> {
        Self::new(hann_window(window_length), hop, sample_rate)
    }

    /// Normalized periodic Hann window with 75% overlap (`hop = window_length / 4`).
    pub fn hann_75(window_length: usize, sample_rate: T) -> Result<Arc<Self>> {
        Self::hann(window_length, window_length / 4, sample_rate)
    }

    /// Builds a plan from an arbitrary nonnegative window. The window is
    /// checked for the squared-window COLA property and rescaled so the
    /// shifted squared sum equals one.
    pub fn new(window: Vec<T>, hop: usize, sample_rate: T) -> Result<Arc<Self>> {
        let n = window.len();
        if n == 0 || n % 2 != 0 {
            return Err(Error::InvalidPlan(format!(
                "window length must be a positive even integer, got {n}"
            )));
        }
        if hop == 0 || n % hop != 0 {
            return Err(Error::InvalidPlan(format!(
                "hop {hop} must be positive and divide the window length {n}"
            )));
        }
        if !(sample_rate > T::zero()) || !sample_rate.is_finite() {
            return Err(Error::InvalidPlan("sample rate must be positive".into()));
        }
        if window.iter().any(|&w| !(w >= T::zero()) || !w.is_finite()) {
            return Err(Error::InvalidPlan("window entries must be finite and nonnegative".into()));
        }

        let sums: Vec<T> = (0..hop)
            .map(|r| (r..n).step_by(hop).map(|i| window[i] * window[i]).sum())
            .collect();
        let mean = sums.iter().copied().sum::<T>() / T::from_usize_lossy(hop);
        if !(mean > T::zero()) {
            return Err(Error::InvalidPlan("window is identically zero".into()));
        }
        let tol = T::lit(1e-12).max(T::lit(100.0) * T::epsilon());
        if sums.iter().any(|&s| ((s - mean) / mean).abs() > tol) {
            return Err(Error::InvalidPlan(format!(
                "window/hop pair violates the squared-window COLA condition (hop {hop})"
            )));
        }
        let scale = mean.sqrt().recip();
        let window: Vec<T> = window.into_iter().map(|w| w * scale).collect();

        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        Ok(Arc::new(Self {
            window_length: n,
            hop,
            window,
            sample_rate,
            forward,
            inverse,
        }))
    }

    pub fn window_length(&self) -> usize {
        self.window_length
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn window(&self) -> &[T] {
        &self.window
    }

    pub fn sample_rate(&self) -> T {
        self.sample_rate
    }

    /// Number of one-sided frequency bins, `window_length / 2 + 1`.
    pub fn n_bins(&self) -> usize {
        self.window_length / 2 + 1
    }

    /// Frames overlapping any given sample (`window_length / hop`).
    pub fn overlap_factor(&self) -> usize {
        self.window_length / self.hop
    }

    /// Frequency spacing between bins, in Hz.
    pub fn bin_width(&self) -> T {
        self.sample_rate / T::from_usize_lossy(self.window_length)
    }

    pub fn bin_frequency(&self, bin: usize) -> T {
        self.bin_width() * T::from_usize_lossy(bin)
    }

    fn pad_left(&self) -> usize {
        self.window_length
    }

    /// Length of the zero-padded signal the frames are cut from.
    pub fn padded_length(&self, signal_length: usize) -> usize {
        let body = signal_length + self.window_length;
        let body = body.div_ceil(self.hop) * self.hop;
        body + self.window_length
    }

    /// Number of frames produced for a signal of the given length.
    pub fn n_frames(&self, signal_length: usize) -> usize {
        (self.padded_length(signal_length) - self.window_length) / self.hop + 1
    }
}

/// One-sided weight of bin `f`: 1 for DC and Nyquist, 2 otherwise, so that
/// weighted sums over one-sided bins equal full-spectrum sums.
#[inline]
pub fn bin_weight<T: Real>(f: usize, n_bins: usize) -> T {
    if f == 0 || f + 1 == n_bins {
        T::one()
    } else {
        T::lit(2.0)
    }
}

/// Complex one-sided spectrogram tied to the plan that produced it.
#[derive(Clone, Debug)]
pub struct Spectrogram<T: Real> {
    data: Array2<Complex<T>>,
    plan: Arc<StftPlan<T>>,
    signal_length: usize,
}

impl<T: Real> Spectrogram<T> {
    /// Wraps raw data, checking its shape against the plan.
    pub fn new(data: Array2<Complex<T>>, plan: Arc<StftPlan<T>>, signal_length: usize) -> Result<Self> {
        let expected = (plan.n_bins(), plan.n_frames(signal_length));
        if data.dim() != expected {
            return Err(Error::ShapeMismatch(format!(
                "spectrogram is {:?}, plan and signal length {} require {:?}",
                data.dim(),
                signal_length,
                expected
            )));
        }
        Ok(Self { data, plan, signal_length })
    }

    pub fn zeros(plan: Arc<StftPlan<T>>, signal_length: usize) -> Self {
        let dim = (plan.n_bins(), plan.n_frames(signal_length));
        Self { data: Array2::zeros(dim), plan, signal_length }
    }

    /// A spectrogram with the same plan and length but new data.
    pub fn with_data(&self, data: Array2<Complex<T>>) -> Result<Self> {
        Self::new(data, self.plan.clone(), self.signal_length)
    }

    pub fn data(&self) -> &Array2<Complex<T>> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array2<Complex<T>> {
        &mut self.data
    }

    pub fn into_data(self) -> Array2<Complex<T>> {
        self.data
    }

    pub fn plan(&self) -> &Arc<StftPlan<T>> {
        &self.plan
    }

    pub fn signal_length(&self) -> usize {
        self.signal_length
    }

    pub fn n_bins(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.data.ncols()
    }

    pub fn magnitude(&self) -> Array2<T> {
        self.data.mapv(|c| c.norm())
    }

    pub fn power(&self) -> Array2<T> {
        self.data.mapv(|c| c.norm_sqr())
    }

    /// Full-spectrum squared norm (one-sided bins weighted by [`bin_weight`]).
    pub fn norm_sqr(&self) -> T {
        weighted_norm_sqr(&self.data)
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.data.dim() == other.data.dim()
            && self.signal_length == other.signal_length
            && *self.plan == *other.plan
    }
}

/// Full-spectrum squared norm of a one-sided complex array.
pub fn weighted_norm_sqr<T: Real>(data: &Array2<Complex<T>>) -> T {
    let n_bins = data.nrows();
    data.outer_iter()
        .enumerate()
        .map(|(f, row)| bin_weight::<T>(f, n_bins) * row.iter().map(|c| c.norm_sqr()).sum::<T>())
        .sum()
}

/// Full-spectrum squared distance between two one-sided complex arrays.
pub fn weighted_distance_sqr<T: Real>(a: &Array2<Complex<T>>, b: &Array2<Complex<T>>) -> T {
    debug_assert_eq!(a.dim(), b.dim());
    let n_bins = a.nrows();
    let mut total = T::zero();
    for f in 0..n_bins {
        let w = bin_weight::<T>(f, n_bins);
        let row: T = a.row(f).iter().zip(b.row(f)).map(|(x, y)| (*x - *y).norm_sqr()).sum();
        total += w * row;
    }
    total
}

/// Full-spectrum squared distance between two one-sided real arrays.
pub fn weighted_real_distance_sqr<T: Real>(a: &Array2<T>, b: &Array2<T>) -> T {
    debug_assert_eq!(a.dim(), b.dim());
    let n_bins = a.nrows();
    let mut total = T::zero();
    for f in 0..n_bins {
        let w = bin_weight::<T>(f, n_bins);
        let row: T = a.row(f).iter().zip(b.row(f)).map(|(x, y)| (*x - *y) * (*x - *y)).sum();
        total += w * row;
    }
    total
}

/// Short-time Fourier transform of a real signal.
pub fn stft<T: Real>(signal: &[T], plan: &Arc<StftPlan<T>>) -> Result<Spectrogram<T>> {
    if signal.is_empty() {
        return Err(Error::EmptySignal);
    }
    let n = plan.window_length;
    let padded_len = plan.padded_length(signal.len());
    let mut padded = vec![T::zero(); padded_len];
    padded[plan.pad_left()..plan.pad_left() + signal.len()].copy_from_slice(signal);
    Ok(analyze_padded(&padded, plan, signal.len(), n))
}

fn analyze_padded<T: Real>(padded: &[T], plan: &Arc<StftPlan<T>>, signal_length: usize, n: usize) -> Spectrogram<T> {
    let n_frames = plan.n_frames(signal_length);
    let n_bins = plan.n_bins();
    let mut data = Array2::zeros((n_bins, n_frames));
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); plan.forward.get_inplace_scratch_len()];
    for t in 0..n_frames {
        let start = t * plan.hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(padded[start + i] * plan.window[i], T::zero());
        }
        plan.forward.process_with_scratch(&mut buf, &mut scratch);
        for f in 0..n_bins {
            data[[f, t]] = buf[f];
        }
    }
    Spectrogram { data, plan: plan.clone(), signal_length }
}

/// Weighted overlap-add over the padded domain (no cropping).
fn overlap_add<T: Real>(spec: &Spectrogram<T>) -> Vec<T> {
    let plan = &spec.plan;
    let n = plan.window_length;
    let n_bins = plan.n_bins();
    let mut out = vec![T::zero(); plan.padded_length(spec.signal_length)];
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); plan.inverse.get_inplace_scratch_len()];
    let inv_n = T::from_usize_lossy(n).recip();
    for t in 0..spec.n_frames() {
        for f in 0..n_bins {
            buf[f] = spec.data[[f, t]];
        }
        for f in 1..n_bins - 1 {
            buf[n - f] = spec.data[[f, t]].conj();
        }
        plan.inverse.process_with_scratch(&mut buf, &mut scratch);
        let start = t * plan.hop;
        for i in 0..n {
            out[start + i] += buf[i].re * inv_n * plan.window[i];
        }
    }
    out
}

/// Inverse STFT by weighted overlap-add, cropped to the original length.
pub fn istft<T: Real>(spec: &Spectrogram<T>) -> Vec<T> {
    let full = overlap_add(spec);
    let start = spec.plan.pad_left();
    full[start..start + spec.signal_length].to_vec()
}

/// The consistency operator `STFT ∘ STFT⁻¹`: an orthogonal projection (in
/// the full-spectrum inner product) onto the set of consistent spectrograms.
pub fn consistency_project<T: Real>(spec: &Spectrogram<T>) -> Spectrogram<T> {
    let n = spec.plan.window_length;
    let mut padded = overlap_add(spec);
    let start = spec.plan.pad_left();
    for (i, x) in padded.iter_mut().enumerate() {
        if i < start || i >= start + spec.signal_length {
            *x = T::zero();
        }
    }
    analyze_padded(&padded, &spec.plan, spec.signal_length, n)
}

/// Squared full-spectrum distance between `X` and its consistent projection.
pub fn inconsistency<T: Real>(spec: &Spectrogram<T>) -> T {
    let projected = consistency_project(spec);
    weighted_distance_sqr(&spec.data, &projected.data)
}

/// Truncation radii of the local consistency kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Truncation {
    /// Neighbouring bins on each side of the target bin.
    pub bin_radius: usize,
    /// Neighbouring frames on each side of the target frame.
    pub frame_radius: usize,
}

impl Truncation {
    /// Three bins on each side and every overlapping frame.
    pub fn default_for<T: Real>(plan: &StftPlan<T>) -> Self {
        Self { bin_radius: 3, frame_radius: plan.overlap_factor() - 1 }
    }

    /// Truncation covering the whole kernel support; kernel application is
    /// then exactly [`consistency_project`].
    pub fn full<T: Real>(plan: &StftPlan<T>) -> Self {
        Self { bin_radius: plan.window_length / 2, frame_radius: plan.overlap_factor() - 1 }
    }
}

/// Local TF-domain convolution kernel approximating [`consistency_project`].
///
/// `F(X)(f, t) = Σ_{d, Δ} α(Δ, d) · e^{j2π f' d hop / N} · X(f', t - d)` with
/// `f' = f - Δ` taken on the full (Hermitian) spectrum. Frames whose support
/// reaches into the zero padding use taps computed with the padding mask, so
/// an untruncated kernel reproduces the projection on every frame.
#[derive(Clone, Debug)]
pub struct LeRouxKernel<T: Real> {
    plan: Arc<StftPlan<T>>,
    truncation: Truncation,
    /// Interior taps, indexed `[d + frame_radius, Δ - lowest offset]`.
    taps: Array2<Complex<T>>,
    bin_offsets: Vec<isize>,
    /// `e^{j2π m / N}` for `m` in `0..N`.
    twiddles: Vec<Complex<T>>,
}

/// Builds the local consistency kernel for a plan.
pub fn leroux_kernel<T: Real>(plan: &Arc<StftPlan<T>>, truncation: Truncation) -> Result<LeRouxKernel<T>> {
    LeRouxKernel::new(plan.clone(), truncation)
}

impl<T: Real> LeRouxKernel<T> {
    pub fn new(plan: Arc<StftPlan<T>>, truncation: Truncation) -> Result<Self> {
        let n = plan.window_length;
        if truncation.bin_radius < 1 || truncation.frame_radius < 1 {
            return Err(Error::InvalidArgument("kernel truncation radii must be at least 1".into()));
        }
        if truncation.bin_radius > n / 2 {
            return Err(Error::InvalidArgument(format!(
                "bin radius {} exceeds the spectrum half-width {}",
                truncation.bin_radius,
                n / 2
            )));
        }
        let b = truncation.bin_radius as isize;
        // Offsets are residues mod N; drop the duplicate -N/2 == N/2.
        let lowest = if 2 * truncation.bin_radius == n { -b + 1 } else { -b };
        let bin_offsets: Vec<isize> = (lowest..=b).collect();
        let two_pi = T::PI() + T::PI();
        let twiddles = (0..n)
            .map(|m| {
                let ang = two_pi * T::from_usize_lossy(m) / T::from_usize_lossy(n);
                Complex::new(ang.cos(), ang.sin())
            })
            .collect();
        let mut kernel = Self {
            plan,
            truncation,
            taps: Array2::zeros((0, 0)),
            bin_offsets,
            twiddles,
        };
        kernel.taps = kernel.compute_taps(0, n);
        Ok(kernel)
    }

    pub fn plan(&self) -> &Arc<StftPlan<T>> {
        &self.plan
    }

    pub fn truncation(&self) -> Truncation {
        self.truncation
    }

    /// Interior tap `α(Δ, d)`; `None` outside the truncation.
    pub fn tap(&self, bin_offset: isize, frame_offset: isize) -> Option<Complex<T>> {
        let d = frame_offset + self.truncation.frame_radius as isize;
        let j = self.bin_offsets.iter().position(|&o| o == bin_offset)?;
        if d < 0 || d as usize >= self.taps.nrows() {
            return None;
        }
        Some(self.taps[[d as usize, j]])
    }

    /// Coefficient coupling a bin to itself in the same frame.
    pub fn central(&self) -> Complex<T> {
        self.tap(0, 0).expect("central tap always present")
    }

    /// Taps for a frame whose in-signal samples are `lo..hi` (frame-local).
    fn compute_taps(&self, lo: usize, hi: usize) -> Array2<Complex<T>> {
        let n = self.plan.window_length;
        let hop = self.plan.hop as isize;
        let w = &self.plan.window;
        let radius = self.truncation.frame_radius as isize;
        let inv_n = T::from_usize_lossy(n).recip();
        let mut taps = Array2::zeros((2 * radius as usize + 1, self.bin_offsets.len()));
        for d in -radius..=radius {
            let shift = d * hop;
            let products: Vec<(usize, T)> = (lo..hi)
                .filter_map(|i| {
                    let k = i as isize + shift;
                    (k >= 0 && (k as usize) < n).then(|| (i, w[i] * w[k as usize]))
                })
                .collect();
            for (j, &delta) in self.bin_offsets.iter().enumerate() {
                let mut acc = Complex::new(T::zero(), T::zero());
                for &(i, p) in &products {
                    // e^{-j2π Δ i / N}
                    let m = (-(delta * i as isize)).rem_euclid(n as isize) as usize;
                    acc = acc + self.twiddles[m] * p;
                }
                taps[[(d + radius) as usize, j]] = acc * inv_n;
            }
        }
        taps
    }

    /// Applies the kernel to a spectrogram, approximating `F(X)`.
    pub fn apply(&self, spec: &Spectrogram<T>) -> Result<Spectrogram<T>> {
        if *spec.plan != *self.plan {
            return Err(Error::InvalidArgument("kernel and spectrogram use different STFT plans".into()));
        }
        let n_bins = spec.n_bins();
        let n_frames = spec.n_frames();
        if self.truncation.frame_radius > n_frames.saturating_sub(1) || self.truncation.bin_radius > n_bins - 1 {
            return Err(Error::InvalidArgument(format!(
                "kernel truncation {:?} exceeds spectrogram size {}x{}",
                self.truncation, n_bins, n_frames
            )));
        }
        let n = self.plan.window_length as isize;
        let hop = self.plan.hop;
        let pad = self.plan.pad_left();
        let len = spec.signal_length;
        let radius = self.truncation.frame_radius as isize;
        let x = &spec.data;
        let nyquist = (n / 2) as usize;

        // Hermitian extension; DC and Nyquist contribute only their real parts.
        let full_value = |idx: usize, t: usize| -> Complex<T> {
            if idx == 0 || idx == nyquist {
                Complex::new(x[[idx, t]].re, T::zero())
            } else if idx < nyquist {
                x[[idx, t]]
            } else {
                x[[n as usize - idx, t]].conj()
            }
        };

        let mut edge_taps: HashMap<(usize, usize), Array2<Complex<T>>> = HashMap::new();
        let mut out = Array2::zeros(x.dim());
        for t in 0..n_frames {
            let start = t * hop;
            let lo = pad.saturating_sub(start).min(n as usize);
            let hi = (pad + len).saturating_sub(start).min(n as usize);
            let taps = if lo == 0 && hi == n as usize {
                &self.taps
            } else {
                edge_taps.entry((lo, hi)).or_insert_with(|| self.compute_taps(lo, hi.max(lo)))
            };
            for d in -radius..=radius {
                let src = t as isize - d;
                if src < 0 || src as usize >= n_frames {
                    continue;
                }
                let src = src as usize;
                let tap_row = taps.row((d + radius) as usize);
                for f in 0..n_bins {
                    let mut acc = Complex::new(T::zero(), T::zero());
                    for (j, &delta) in self.bin_offsets.iter().enumerate() {
                        let idx = (f as isize - delta).rem_euclid(n) as usize;
                        let m = ((idx as isize) * d * hop as isize).rem_euclid(n) as usize;
                        acc = acc + tap_row[j] * self.twiddles[m] * full_value(idx, src);
                    }
                    out[[f, t]] = out[[f, t]] + acc;
                }
            }
        }
        spec.with_data(out)
    }
}

/// Unit phasor of `z`, or `fallback` when `z` is zero.
#[inline]
pub fn unit_phasor<T: Real>(z: Complex<T>, fallback: Complex<T>) -> Complex<T> {
    let r = z.norm();
    if r > T::zero() && r.is_finite() {
        z / r
    } else {
        fallback
    }
}

/// Combines a magnitude array with the phases of `phase_source`.
pub fn with_phase_of<T: Real>(magnitude: &Array2<T>, phase_source: &Array2<Complex<T>>) -> Array2<Complex<T>> {
    let one = Complex::new(T::one(), T::zero());
    let mut out = Array2::zeros(magnitude.dim());
    Zip::from(&mut out)
        .and(magnitude)
        .and(phase_source)
        .for_each(|o, &m, &p| *o = unit_phasor(p, one) * m);
    out
}
