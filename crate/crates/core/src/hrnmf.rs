//! High-resolution NMF: within each frequency band every component follows
//! complex autoregressive dynamics
//!
//! `X_k(f,t) = Σ_p a_p(k,f) X_k(f,t-p) + b_k(f,t)`, `b_k ~ CN(0, V_k(f,t))`,
//!
//! with NMF-structured innovation variances `V_k = W_k H_k`, observed through
//! `X(f,t) = Σ_k X_k(f,t) + n(f,t)`, `n ~ CN(0, σ²)`. Coefficients before the
//! first frame are zero.
//!
//! Estimation is exact EM. Bands are conditionally independent, so the E-step
//! runs one Kalman filter and smoother per band over the stacked companion
//! state of all components. The backward pass is the modified Bryson-Frazier
//! form, which never inverts a predicted covariance.

use ndarray::{Array1, Array2, Axis};
use num_complex::Complex;
use num_traits::Zero;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::factorization::{fit_nmf, mur_step_floored, random_factors, Divergence, FactorPair};
use crate::linalg::{adjoint, hermitize, solve_complex};
use crate::phase::{Grouping, SourceEstimateSet};
use crate::scalar::{eps, Real};
use crate::tf::Spectrogram;

#[derive(Clone, Debug)]
pub struct HrnmfModel<T: Real> {
    /// `F×K` innovation spectral templates.
    pub w: Array2<T>,
    /// `K×T` innovation activations.
    pub h: Array2<T>,
    /// AR coefficients indexed `[k][f]`; the inner length is the order `P(k,f)`.
    pub ar: Vec<Vec<Vec<Complex<T>>>>,
    /// Observation noise variance `σ²`.
    pub noise_var: T,
}

impl<T: Real> HrnmfModel<T> {
    /// Model with first-order dynamics and `a = 0` in every band.
    pub fn new(factors: FactorPair<T>, noise_var: T) -> Result<Self> {
        let orders = vec![vec![1; factors.w.nrows()]; factors.k()];
        Self::with_orders(factors, &orders, noise_var)
    }

    /// Model with the given AR orders `[k][f]`, all coefficients zero.
    pub fn with_orders(factors: FactorPair<T>, orders: &[Vec<usize>], noise_var: T) -> Result<Self> {
        let ar = orders
            .iter()
            .map(|per_band| per_band.iter().map(|&p| vec![Complex::zero(); p]).collect())
            .collect();
        let model = Self {
            w: factors.w,
            h: factors.h,
            ar,
            noise_var,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn k(&self) -> usize {
        self.w.ncols()
    }

    pub fn n_bins(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.h.ncols()
    }

    pub fn order(&self, k: usize, f: usize) -> usize {
        self.ar[k][f].len()
    }

    pub fn factors(&self) -> FactorPair<T> {
        FactorPair {
            w: self.w.clone(),
            h: self.h.clone(),
        }
    }

    /// `V_k(f,t) = W(f,k) H(k,t)`.
    pub fn variance(&self, k: usize, f: usize, t: usize) -> T {
        self.w[[f, k]] * self.h[[k, t]]
    }

    /// Parameters of a single band.
    pub fn band(&self, f: usize) -> BandModel<T> {
        let variances = Array2::from_shape_fn((self.k(), self.n_frames()), |(k, t)| self.variance(k, f, t));
        BandModel {
            variances,
            ar: self.ar.iter().map(|per_band| per_band[f].clone()).collect(),
            noise_var: self.noise_var,
        }
    }

    /// `(k, f)` pairs whose AR filter has a pole on or outside the unit circle.
    pub fn unstable_bands(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (k, per_band) in self.ar.iter().enumerate() {
            for (f, a) in per_band.iter().enumerate() {
                if !ar_is_stable(a) {
                    out.push((k, f));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.w.ncols() != self.h.nrows() || self.k() == 0 {
            return Err(Error::ShapeMismatch("HRNMF factors need matching, nonzero rank".into()));
        }
        if self.ar.len() != self.k() || self.ar.iter().any(|a| a.len() != self.n_bins()) {
            return Err(Error::ShapeMismatch("AR coefficients must be indexed [component][band]".into()));
        }
        if self.w.iter().chain(self.h.iter()).any(|x| !x.is_finite() || *x < T::zero()) {
            return Err(Error::NonFinite("HRNMF factors"));
        }
        if self.ar.iter().flatten().flatten().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite("HRNMF AR coefficients"));
        }
        if !(self.noise_var > T::zero()) || !self.noise_var.is_finite() {
            return Err(Error::InvalidArgument("noise variance must be positive and finite".into()));
        }
        Ok(())
    }

    fn check_input(&self, x: &Spectrogram<T>) -> Result<()> {
        self.validate()?;
        if x.n_bins() != self.n_bins() || x.n_frames() != self.n_frames() {
            return Err(Error::ShapeMismatch(format!(
                "spectrogram is {}x{} but the model is {}x{}",
                x.n_bins(),
                x.n_frames(),
                self.n_bins(),
                self.n_frames()
            )));
        }
        if x.data().iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite("HRNMF input spectrogram"));
        }
        Ok(())
    }
}

/// Schur-Cohn step-down test for `1 - Σ_p a_p z^{-p}`.
pub fn ar_is_stable<T: Real>(a: &[Complex<T>]) -> bool {
    let mut c: Vec<Complex<T>> = a.iter().map(|&x| -x).collect();
    while let Some(&k) = c.last() {
        let mag = k.norm_sqr();
        if mag >= T::one() {
            return false;
        }
        let m = c.len();
        let scale = (T::one() - mag).recip();
        c = (0..m - 1).map(|i| (c[i] - k * c[m - 2 - i].conj()) * scale).collect();
    }
    true
}

/// Parameters of one frequency band.
#[derive(Clone, Debug)]
pub struct BandModel<T: Real> {
    /// `K×T` innovation variances.
    pub variances: Array2<T>,
    /// AR coefficients per component.
    pub ar: Vec<Vec<Complex<T>>>,
    pub noise_var: T,
}

/// Posterior statistics of one band.
#[derive(Clone, Debug)]
pub struct BandPosterior<T: Real> {
    /// `E[X_k(t) | X]`, `K×T`.
    pub means: Array2<Complex<T>>,
    /// `E[|X_k(t)|² | X]`, `K×T`.
    pub second_moments: Array2<T>,
    /// `E[X_k(t) X̄_k(t-1) | X]`, `K×T`; zero at `t = 0`.
    pub lag1: Array2<Complex<T>>,
    /// Per component and frame, `E[v v^H | X]` for `v = [X_k(t), …, X_k(t-P)]`
    /// (a `1×1` matrix when `P = 0`).
    pub moments: Vec<Vec<Array2<Complex<T>>>>,
    /// `Σ_t E[|X(t) - Σ_k X_k(t)|² | X]`.
    pub noise_power: T,
    /// Exact marginal log-likelihood of the band.
    pub loglik: T,
}

struct StateLayout {
    offsets: Vec<usize>,
    dim: usize,
}

impl StateLayout {
    fn new<T: Real>(ar: &[Vec<Complex<T>>]) -> Self {
        let mut offsets = Vec::with_capacity(ar.len());
        let mut dim = 0;
        for a in ar {
            offsets.push(dim);
            dim += a.len().max(1);
        }
        Self { offsets, dim }
    }
}

fn transition<T: Real>(ar: &[Vec<Complex<T>>], layout: &StateLayout) -> Array2<Complex<T>> {
    let mut a = Array2::zeros((layout.dim, layout.dim));
    for (coeffs, &off) in ar.iter().zip(&layout.offsets) {
        for (p, &c) in coeffs.iter().enumerate() {
            a[[off, off + p]] = c;
        }
        for i in 1..coeffs.len() {
            a[[off + i, off + i - 1]] = Complex::new(T::one(), T::zero());
        }
    }
    a
}

fn add_process_noise<T: Real>(p: &mut Array2<Complex<T>>, band: &BandModel<T>, layout: &StateLayout, t: usize) {
    for (k, &off) in layout.offsets.iter().enumerate() {
        p[[off, off]] = p[[off, off]] + band.variances[[k, t]];
    }
}

fn mat_vec<T: Real>(a: &Array2<Complex<T>>, v: &Array1<Complex<T>>) -> Array1<Complex<T>> {
    a.dot(v)
}

/// Rejects covariances whose diagonal went clearly negative and clamps the
/// round-off negatives to zero. `reference` is the covariance the matrix was
/// computed from by subtraction; cancellation error scales with it.
fn check_covariance<T: Real>(p: &mut Array2<Complex<T>>, reference: &Array2<Complex<T>>, scale: T) -> Result<()> {
    let floor = T::lit(1e-9) * scale.max(T::min_positive_value());
    let rel = T::epsilon().sqrt();
    for i in 0..p.nrows() {
        let d = p[[i, i]].re;
        let tol = floor + rel * reference[[i, i]].re.abs();
        if !d.is_finite() || d < -tol {
            return Err(Error::Numerical(format!("posterior covariance collapsed (diagonal {d})")));
        }
        if d < T::zero() {
            p[[i, i]] = Complex::new(T::zero(), p[[i, i]].im);
        }
    }
    Ok(())
}

/// Exact posterior moments and log-likelihood of one band.
pub fn kalman_smooth_band<T: Real>(x_f: &[Complex<T>], band: &BandModel<T>) -> Result<BandPosterior<T>> {
    let n_frames = x_f.len();
    let k_count = band.ar.len();
    if n_frames == 0 {
        return Err(Error::EmptySignal);
    }
    if band.variances.dim() != (k_count, n_frames) || k_count == 0 {
        return Err(Error::ShapeMismatch("band variances must be K×T".into()));
    }
    if !(band.noise_var > T::zero()) || !band.noise_var.is_finite() {
        return Err(Error::InvalidArgument("noise variance must be positive and finite".into()));
    }
    if band.variances.iter().any(|v| !v.is_finite() || *v < T::zero()) {
        return Err(Error::NonFinite("band variances"));
    }

    let layout = StateLayout::new(&band.ar);
    let d = layout.dim;
    let leads = &layout.offsets;
    let a = transition(&band.ar, &layout);
    let a_h = adjoint(&a);
    let zero = Complex::<T>::zero();
    let scale = band.variances.iter().fold(band.noise_var, |m, &v| m.max(v));

    // Forward filter.
    let mut x_pred = Array1::<Complex<T>>::zeros(d);
    let mut p_pred = Array2::<Complex<T>>::zeros((d, d));
    add_process_noise(&mut p_pred, band, &layout, 0);
    let mut preds = Vec::with_capacity(n_frames);
    let mut filt_covs = Vec::with_capacity(n_frames);
    let mut gains = Vec::with_capacity(n_frames);
    let mut innovations = Vec::with_capacity(n_frames);
    let mut loglik = T::zero();
    for (t, &y) in x_f.iter().enumerate() {
        let ph = Array1::from_shape_fn(d, |i| leads.iter().fold(zero, |acc, &l| acc + p_pred[[i, l]]));
        let s = leads.iter().fold(band.noise_var, |acc, &l| acc + ph[l].re);
        if !(s > T::zero()) || !s.is_finite() {
            return Err(Error::Numerical(format!("nonpositive innovation variance at frame {t}")));
        }
        let e = leads.iter().fold(y, |acc, &l| acc - x_pred[l]);
        let gain = ph.mapv(|c| c / s);
        let x_filt = Array1::from_shape_fn(d, |i| x_pred[i] + gain[i] * e);
        let mut p_filt = Array2::from_shape_fn((d, d), |(i, j)| p_pred[[i, j]] - gain[i] * ph[j].conj());
        hermitize(&mut p_filt);
        check_covariance(&mut p_filt, &p_pred, scale)?;
        loglik += -(T::PI() * s).ln() - e.norm_sqr() / s;

        let (next_x, next_p) = if t + 1 < n_frames {
            let mut p = a.dot(&p_filt).dot(&a_h);
            add_process_noise(&mut p, band, &layout, t + 1);
            hermitize(&mut p);
            (mat_vec(&a, &x_filt), p)
        } else {
            (x_filt.clone(), p_filt.clone())
        };
        preds.push((x_pred, p_pred));
        filt_covs.push(p_filt);
        gains.push(gain);
        innovations.push((e, s));
        x_pred = next_x;
        p_pred = next_p;
    }

    // Backward pass over adjoint variables.
    let mut lam_hat = Array1::<Complex<T>>::zeros(d);
    let mut big_hat = Array2::<Complex<T>>::zeros((d, d));
    let mut means = vec![Array1::<Complex<T>>::zeros(d); n_frames];
    let mut covs = vec![Array2::<Complex<T>>::zeros((d, d)); n_frames];
    let mut cross = vec![Array2::<Complex<T>>::zeros((d, d)); n_frames];
    for t in (0..n_frames).rev() {
        let (xp, pp) = &preds[t];
        let gain = &gains[t];
        let (e, s) = innovations[t];

        // λ̃ = C^H λ̂ - h e / S with C = I - K h^T.
        let k_lam = gain.iter().zip(lam_hat.iter()).fold(zero, |acc, (&g, &l)| acc + g.conj() * l);
        let mut lam = lam_hat.clone();
        for &l in leads {
            lam[l] = lam[l] - k_lam - e / s;
        }
        // Λ̃ = C^H Λ̂ C + h h^T / S.
        let row = Array1::from_shape_fn(d, |j| (0..d).fold(zero, |acc, i| acc + gain[i].conj() * big_hat[[i, j]]));
        let mut m1 = big_hat.clone();
        for &l in leads {
            for j in 0..d {
                m1[[l, j]] = m1[[l, j]] - row[j];
            }
        }
        let col = m1.dot(gain);
        let mut big = m1;
        for i in 0..d {
            for &l in leads {
                big[[i, l]] = big[[i, l]] - col[i];
            }
        }
        let inv_s = s.recip();
        for &i in leads {
            for &j in leads {
                big[[i, j]] = big[[i, j]] + inv_s;
            }
        }
        hermitize(&mut big);

        means[t] = xp - &pp.dot(&lam);
        let pl = pp.dot(&big);
        let mut cov = pp - &pl.dot(pp);
        hermitize(&mut cov);
        check_covariance(&mut cov, pp, scale)?;
        covs[t] = cov;
        if t > 0 {
            let mut left = -pl;
            for i in 0..d {
                left[[i, i]] = left[[i, i]] + T::one();
            }
            cross[t] = left.dot(&a).dot(&filt_covs[t - 1]);
        }
        lam_hat = a_h.dot(&lam);
        big_hat = a_h.dot(&big).dot(&a);
    }

    let mut out_means = Array2::zeros((k_count, n_frames));
    let mut second = Array2::zeros((k_count, n_frames));
    let mut lag1 = Array2::zeros((k_count, n_frames));
    let mut moments = Vec::with_capacity(k_count);
    for (k, &off) in leads.iter().enumerate() {
        let order = band.ar[k].len();
        let mut per_frame = Vec::with_capacity(n_frames);
        for t in 0..n_frames {
            let m = &means[t];
            out_means[[k, t]] = m[off];
            second[[k, t]] = covs[t][[off, off]].re + m[off].norm_sqr();
            if t > 0 {
                lag1[[k, t]] = cross[t][[off, off]] + m[off] * means[t - 1][off].conj();
            }
            // Entry i of the lag vector: (frame selector, state index).
            let locate = |i: usize| if i < order.max(1) { (0usize, off + i) } else { (1usize, off + order - 1) };
            let size = order + 1;
            let mom = Array2::from_shape_fn((size, size), |(i, j)| {
                let (si, a_idx) = locate(i);
                let (sj, b_idx) = locate(j);
                match (si, sj) {
                    (0, 0) => covs[t][[a_idx, b_idx]] + m[a_idx] * m[b_idx].conj(),
                    _ if t == 0 => zero,
                    (0, _) => cross[t][[a_idx, b_idx]] + m[a_idx] * means[t - 1][b_idx].conj(),
                    (_, 0) => (cross[t][[b_idx, a_idx]] + m[b_idx] * means[t - 1][a_idx].conj()).conj(),
                    _ => covs[t - 1][[a_idx, b_idx]] + means[t - 1][a_idx] * means[t - 1][b_idx].conj(),
                }
            });
            per_frame.push(mom);
        }
        moments.push(per_frame);
    }

    let mut noise_power = T::zero();
    for t in 0..n_frames {
        let resid = leads.iter().fold(x_f[t], |acc, &l| acc - means[t][l]);
        let mut var = T::zero();
        for &i in leads {
            for &j in leads {
                var += covs[t][[i, j]].re;
            }
        }
        noise_power += resid.norm_sqr() + var;
    }

    Ok(BandPosterior {
        means: out_means,
        second_moments: second,
        lag1,
        moments,
        noise_power,
        loglik,
    })
}

/// Posterior of every band plus the total log-likelihood.
#[derive(Clone, Debug)]
pub struct Posterior<T: Real> {
    pub bands: Vec<BandPosterior<T>>,
    pub loglik: T,
}

/// E-step over all bands, in parallel.
pub fn e_step<T: Real>(x: &Spectrogram<T>, model: &HrnmfModel<T>) -> Result<Posterior<T>> {
    model.check_input(x)?;
    let bands = (0..model.n_bins())
        .into_par_iter()
        .map(|f| {
            let row: Vec<Complex<T>> = x.data().row(f).to_vec();
            kalman_smooth_band(&row, &model.band(f))
        })
        .collect::<Result<Vec<_>>>()?;
    let loglik = bands.iter().map(|b| b.loglik).sum();
    Ok(Posterior { bands, loglik })
}

pub fn hrnmf_loglik<T: Real>(x: &Spectrogram<T>, model: &HrnmfModel<T>) -> Result<T> {
    Ok(e_step(x, model)?.loglik)
}

/// Parameter blocks updated by an EM step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmOptions {
    pub ar: bool,
    pub noise: bool,
    pub w: bool,
    pub h: bool,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            ar: true,
            noise: true,
            w: true,
            h: true,
        }
    }
}

/// Updated model and the log-likelihood of the model that was passed in.
#[derive(Clone, Debug)]
pub struct EmStep<T: Real> {
    pub model: HrnmfModel<T>,
    pub loglik: T,
}

/// Maximizes `Σ_t E|X(t) - Σ_p a_p X(t-p)|² / V(t)` over `a`.
fn update_ar<T: Real>(moments: &[Array2<Complex<T>>], variances: ndarray::ArrayView1<T>, old: &[Complex<T>]) -> Vec<Complex<T>> {
    let order = old.len();
    let size = order + 1;
    let mut r = Array2::<Complex<T>>::zeros((size, size));
    for (mom, &v) in moments.iter().zip(variances.iter()) {
        let inv = v.max(T::min_positive_value()).recip();
        r.zip_mut_with(mom, |acc, &m| *acc = *acc + m * inv);
    }
    let lhs = Array2::from_shape_fn((order, order), |(i, j)| r[[i + 1, j + 1]].conj());
    let rhs: Vec<Complex<T>> = (1..size).map(|p| r[[0, p]]).collect();
    let solved = if order == 1 {
        let den = lhs[[0, 0]].re;
        if den > T::zero() {
            Ok(vec![rhs[0] / den])
        } else {
            Err(Error::Numerical("degenerate AR system".into()))
        }
    } else {
        solve_complex(&lhs, &rhs)
    };
    match solved {
        Ok(a) if a.iter().all(|c| c.re.is_finite() && c.im.is_finite()) => a,
        _ => old.to_vec(),
    }
}

/// `E|X(t) - Σ_p a_p X(t-p)|²` from the lag-vector moment matrix.
fn innovation_power<T: Real>(mom: &Array2<Complex<T>>, a: &[Complex<T>]) -> T {
    if a.is_empty() {
        return mom[[0, 0]].re.max(T::zero());
    }
    let c: Vec<Complex<T>> = std::iter::once(Complex::new(T::one(), T::zero())).chain(a.iter().map(|&x| -x)).collect();
    let mut acc = Complex::<T>::zero();
    for (i, &ci) in c.iter().enumerate() {
        for (j, &cj) in c.iter().enumerate() {
            acc = acc + ci * mom[[i, j]] * cj.conj();
        }
    }
    acc.re.max(T::zero())
}

/// One generalized EM step: exact E-step, exact AR and noise updates, and one
/// Itakura-Saito multiplicative sweep of each component's `(W_k, H_k)`
/// toward its posterior innovation power.
pub fn em_step<T: Real>(x: &Spectrogram<T>, model: &HrnmfModel<T>) -> Result<HrnmfModel<T>> {
    Ok(em_step_with(x, model, EmOptions::default())?.model)
}

pub fn em_step_with<T: Real>(x: &Spectrogram<T>, model: &HrnmfModel<T>, options: EmOptions) -> Result<EmStep<T>> {
    let posterior = e_step(x, model)?;
    let (n_bins, n_frames) = (model.n_bins(), model.n_frames());
    let mut next = model.clone();

    let band_updates: Vec<(Vec<Vec<Complex<T>>>, Array2<T>)> = posterior
        .bands
        .par_iter()
        .enumerate()
        .map(|(f, post)| {
            let band = model.band(f);
            let mut coeffs = Vec::with_capacity(model.k());
            let mut powers = Array2::zeros((model.k(), n_frames));
            for k in 0..model.k() {
                let a = if options.ar && !band.ar[k].is_empty() {
                    update_ar(&post.moments[k], band.variances.row(k), &band.ar[k])
                } else {
                    band.ar[k].clone()
                };
                for t in 0..n_frames {
                    powers[[k, t]] = innovation_power(&post.moments[k][t], &a);
                }
                coeffs.push(a);
            }
            (coeffs, powers)
        })
        .collect();

    for (f, (coeffs, _)) in band_updates.iter().enumerate() {
        for (k, a) in coeffs.iter().enumerate() {
            next.ar[k][f] = a.clone();
        }
    }

    if options.w || options.h {
        let floor = eps::<T>();
        for k in 0..model.k() {
            let target = Array2::from_shape_fn((n_bins, n_frames), |(f, t)| band_updates[f].1[[k, t]]);
            let pair = FactorPair {
                w: model.w.column(k).to_owned().insert_axis(Axis(1)),
                h: model.h.row(k).to_owned().insert_axis(Axis(0)),
            };
            let updated = mur_step_floored(&target, &pair, Divergence::ItakuraSaito, None, floor);
            if options.w {
                next.w.column_mut(k).assign(&updated.w.column(0));
            }
            if options.h {
                next.h.row_mut(k).assign(&updated.h.row(0));
            }
        }
    }

    if options.noise {
        let total: T = posterior.bands.iter().map(|b| b.noise_power).sum();
        next.noise_var = (total / T::from_usize_lossy(n_bins * n_frames)).max(eps());
    }
    next.validate()?;
    Ok(EmStep {
        model: next,
        loglik: posterior.loglik,
    })
}

/// How `(W, H)` are initialized before EM.
#[derive(Clone, Debug)]
pub enum HrnmfInit<T: Real> {
    /// Uniform random factors scaled to the mean power.
    Random,
    /// KL-NMF on the magnitude spectrogram; the factors are then squared
    /// elementwise to give variances.
    KlNmf { sweeps: usize },
    /// IS-NMF on the power spectrogram.
    IsNmf { sweeps: usize },
    /// Given variance factors.
    Factors(FactorPair<T>),
}

impl<T: Real> Default for HrnmfInit<T> {
    fn default() -> Self {
        HrnmfInit::KlNmf { sweeps: 30 }
    }
}

/// Initial model: factors per `init`, `a = 0`, `σ² = 0.01·mean|X|²`.
pub fn init_hrnmf<T: Real>(x: &Spectrogram<T>, k: usize, init: &HrnmfInit<T>, seed: u64) -> Result<HrnmfModel<T>> {
    if k < 1 {
        return Err(Error::InvalidArgument("HRNMF needs at least one component".into()));
    }
    let power = x.power();
    let mean_power = power.mean().unwrap_or(T::zero());
    let factors = match init {
        HrnmfInit::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            random_factors(x.n_bins(), x.n_frames(), k, mean_power, &mut rng)
        }
        HrnmfInit::KlNmf { sweeps } => {
            let fit = fit_nmf(&x.magnitude(), k, Divergence::KullbackLeibler, *sweeps, seed)?;
            FactorPair {
                w: fit.factors.w.mapv(|v| (v * v).max(eps())),
                h: fit.factors.h.mapv(|v| (v * v).max(eps())),
            }
        }
        HrnmfInit::IsNmf { sweeps } => fit_nmf(&power, k, Divergence::ItakuraSaito, *sweeps, seed)?.factors,
        HrnmfInit::Factors(pair) => {
            if pair.k() != k {
                return Err(Error::InvalidArgument(format!("initial factors have rank {} instead of {k}", pair.k())));
            }
            pair.clone()
        }
    };
    let noise_var = (T::lit(0.01) * mean_power).max(eps());
    let model = HrnmfModel::new(factors, noise_var)?;
    model.check_input(x)?;
    Ok(model)
}

/// Final model and the log-likelihood of every visited model (initial first).
#[derive(Clone, Debug)]
pub struct HrnmfFit<T: Real> {
    pub model: HrnmfModel<T>,
    pub trajectory: Vec<T>,
}

pub fn fit_hrnmf<T: Real>(x: &Spectrogram<T>, k: usize, iterations: usize, init: &HrnmfInit<T>, seed: u64) -> Result<HrnmfFit<T>> {
    let model = init_hrnmf(x, k, init, seed)?;
    fit_hrnmf_from(x, model, iterations, EmOptions::default())
}

pub fn fit_hrnmf_from<T: Real>(
    x: &Spectrogram<T>,
    mut model: HrnmfModel<T>,
    iterations: usize,
    options: EmOptions,
) -> Result<HrnmfFit<T>> {
    if iterations == 0 {
        return Err(Error::InvalidArgument("at least one iteration is required".into()));
    }
    let mut trajectory = Vec::with_capacity(iterations + 1);
    for _ in 0..iterations {
        let step = em_step_with(x, &model, options)?;
        trajectory.push(step.loglik);
        model = step.model;
    }
    trajectory.push(hrnmf_loglik(x, &model)?);
    Ok(HrnmfFit { model, trajectory })
}

/// Concatenates per-source models into one mixture model; the noise
/// variances add.
pub fn stack_models<T: Real>(models: &[HrnmfModel<T>]) -> Result<HrnmfModel<T>> {
    let first = models.first().ok_or_else(|| Error::InvalidArgument("no models to stack".into()))?;
    let pair = FactorPair::concat(&models.iter().map(|m| m.factors()).collect::<Vec<_>>())?;
    if models.iter().any(|m| m.n_bins() != first.n_bins() || m.n_frames() != first.n_frames()) {
        return Err(Error::ShapeMismatch("stacked models must share the spectrogram size".into()));
    }
    let model = HrnmfModel {
        w: pair.w,
        h: pair.h,
        ar: models.iter().flat_map(|m| m.ar.iter().cloned()).collect(),
        noise_var: models.iter().map(|m| m.noise_var).sum(),
    };
    model.validate()?;
    Ok(model)
}

/// Posterior-mean separation, summed per group of components.
pub fn hrnmf_separate<T: Real>(x: &Spectrogram<T>, model: &HrnmfModel<T>, grouping: &Grouping) -> Result<SourceEstimateSet<T>> {
    if grouping.n_components() != model.k() {
        return Err(Error::InvalidArgument("grouping does not cover the HRNMF components".into()));
    }
    let posterior = e_step(x, model)?;
    let specs = grouping
        .groups()
        .iter()
        .map(|g| {
            let data = Array2::from_shape_fn(x.data().dim(), |(f, t)| {
                g.iter().fold(Complex::zero(), |acc, &k| acc + posterior.bands[f].means[[k, t]])
            });
            x.with_data(data)
        })
        .collect::<Result<Vec<_>>>()?;
    SourceEstimateSet::from_spectrograms(x.clone(), specs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tf::{stft, StftPlan};
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    type C = Complex<f64>;

    fn cgauss(rng: &mut ChaCha8Rng, var: f64) -> C {
        let s = (var / 2.0).sqrt();
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C::new(re * s, im * s)
    }

    fn random_band(rng: &mut ChaCha8Rng, k: usize, t: usize, orders: &[usize]) -> (Vec<C>, BandModel<f64>) {
        let variances = Array2::from_shape_simple_fn((k, t), || rng.gen_range(0.2..2.0));
        let ar = orders
            .iter()
            .map(|&p| (0..p).map(|_| C::from_polar(rng.gen_range(0.0..0.7) / p as f64, rng.gen_range(0.0..6.28))).collect())
            .collect();
        let x: Vec<C> = (0..t).map(|_| cgauss(rng, 1.5)).collect();
        let noise_var = rng.gen_range(0.05..0.5);
        (x, BandModel { variances, ar, noise_var })
    }

    /// Gaussian elimination returning the solution of `A X = B` and `ln|det A|`.
    fn dense_solve(a: &Array2<C>, b: &Array2<C>) -> (Array2<C>, f64) {
        let n = a.nrows();
        let mut m = a.clone();
        let mut x = b.clone();
        let mut logdet = 0.0;
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| m[[i, c]].norm().partial_cmp(&m[[j, c]].norm()).unwrap()).unwrap();
            for j in 0..n {
                m.swap([c, j], [p, j]);
            }
            for j in 0..x.ncols() {
                x.swap([c, j], [p, j]);
            }
            let piv = m[[c, c]];
            logdet += piv.norm().ln();
            for r in 0..n {
                if r == c {
                    continue;
                }
                let factor = m[[r, c]] / piv;
                for j in 0..n {
                    let v = m[[c, j]];
                    m[[r, j]] -= factor * v;
                }
                for j in 0..x.ncols() {
                    let v = x[[c, j]];
                    x[[r, j]] -= factor * v;
                }
            }
        }
        for r in 0..n {
            let piv = m[[r, r]];
            for j in 0..x.ncols() {
                x[[r, j]] /= piv;
            }
        }
        (x, logdet)
    }

    /// Posterior moments by conditioning the joint Gaussian of all source
    /// coefficients on the observations.
    struct DenseOracle {
        means: Vec<Vec<C>>,
        cov: Vec<Array2<C>>,
        loglik: f64,
    }

    fn dense_oracle(x: &[C], band: &BandModel<f64>) -> DenseOracle {
        let t_len = x.len();
        let mut prior = Vec::new();
        for (k, a) in band.ar.iter().enumerate() {
            // Impulse response matrix L with X = L b.
            let mut l = Array2::<C>::zeros((t_len, t_len));
            for s in 0..t_len {
                let mut resp = vec![C::zero(); t_len];
                for t in s..t_len {
                    let mut v = if t == s { C::new(1.0, 0.0) } else { C::zero() };
                    for (p, &ap) in a.iter().enumerate() {
                        if t >= s + p + 1 {
                            v += ap * resp[t - p - 1];
                        }
                    }
                    resp[t] = v;
                    l[[t, s]] = v;
                }
            }
            let d = Array2::from_diag(&band.variances.row(k).mapv(|v| C::new(v, 0.0)));
            prior.push(l.dot(&d).dot(&adjoint(&l)));
        }
        let mut cy = Array2::<C>::eye(t_len).mapv(|c| c * band.noise_var);
        for p in &prior {
            cy = cy + p;
        }
        let y = Array2::from_shape_fn((t_len, 1), |(t, _)| x[t]);
        let (cy_inv_y, logdet) = dense_solve(&cy, &y);
        let quad: f64 = (0..t_len).map(|t| (x[t].conj() * cy_inv_y[[t, 0]]).re).sum();
        let loglik = -(t_len as f64) * std::f64::consts::PI.ln() - logdet - quad;
        let mut means = Vec::new();
        let mut cov = Vec::new();
        for p in &prior {
            means.push(p.dot(&cy_inv_y).column(0).to_vec());
            let (cy_inv_p, _) = dense_solve(&cy, p);
            cov.push(p - &p.dot(&cy_inv_p));
        }
        DenseOracle { means, cov, loglik }
    }

    #[test]
    fn scalar_wiener_shrinkage() {
        let band = BandModel {
            variances: Array2::from_elem((1, 1), 3.0),
            ar: vec![vec![C::zero()]],
            noise_var: 1.0,
        };
        let x = [C::new(2.0, -1.0)];
        let post = kalman_smooth_band(&x, &band).unwrap();
        assert!((post.means[[0, 0]] - x[0] * 0.75).norm() < 1e-14);
        let expected_second = 0.75 + (x[0] * 0.75).norm_sqr();
        assert!((post.second_moments[[0, 0]] - expected_second).abs() < 1e-14);
    }

    #[test]
    fn smoother_matches_dense_conditioning() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..60 {
            let k = 1 + trial % 3;
            let t = 1 + (trial / 3) % 5;
            let orders: Vec<usize> = (0..k).map(|i| (trial + i) % 3).collect();
            let (x, band) = random_band(&mut rng, k, t, &orders);
            let post = kalman_smooth_band(&x, &band).unwrap();
            let oracle = dense_oracle(&x, &band);
            assert!((post.loglik - oracle.loglik).abs() < 1e-8, "trial {trial}");
            for kk in 0..k {
                for tt in 0..t {
                    let m = oracle.means[kk][tt];
                    assert!((post.means[[kk, tt]] - m).norm() < 1e-8);
                    let second = oracle.cov[kk][[tt, tt]].re + m.norm_sqr();
                    assert!((post.second_moments[[kk, tt]] - second).abs() < 1e-8);
                    assert!(post.second_moments[[kk, tt]] >= post.means[[kk, tt]].norm_sqr() - 1e-9);
                    if tt > 0 {
                        let lag = oracle.cov[kk][[tt, tt - 1]] + m * oracle.means[kk][tt - 1].conj();
                        assert!((post.lag1[[kk, tt]] - lag).norm() < 1e-8);
                    }
                    // Every entry of the lag-vector moment matrix.
                    let order = band.ar[kk].len();
                    let mom = &post.moments[kk][tt];
                    assert_eq!(mom.nrows(), order + 1);
                    for i in 0..=order {
                        for j in 0..=order {
                            let expected = if tt < i || tt < j {
                                C::zero()
                            } else {
                                oracle.cov[kk][[tt - i, tt - j]] + oracle.means[kk][tt - i] * oracle.means[kk][tt - j].conj()
                            };
                            assert!((mom[[i, j]] - expected).norm() < 1e-8, "trial {trial} k {kk} t {tt} ({i},{j})");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn zero_dynamics_give_static_wiener() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (x, band) = random_band(&mut rng, 3, 6, &[1, 1, 1]);
        let post = kalman_smooth_band(&x, &BandModel { ar: vec![vec![C::zero()]; 3], ..band.clone() }).unwrap();
        for t in 0..6 {
            let total: f64 = band.variances.column(t).sum() + band.noise_var;
            for k in 0..3 {
                let expected = x[t] * (band.variances[[k, t]] / total);
                assert!((post.means[[k, t]] - expected).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn vanishing_noise_returns_the_observation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (x, band) = random_band(&mut rng, 1, 8, &[1]);
        let post = kalman_smooth_band(&x, &BandModel { noise_var: 1e-10, ..band }).unwrap();
        for t in 0..8 {
            assert!((post.means[[0, t]] - x[t]).norm() < 1e-8);
        }
    }

    #[test]
    fn band_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (x, band) = random_band(&mut rng, 2, 4, &[1, 1]);
        assert!(kalman_smooth_band(&x, &BandModel { noise_var: 0.0, ..band.clone() }).is_err());
        assert!(kalman_smooth_band(&x[..3], &band).is_err());
        assert!(kalman_smooth_band(&[], &band).is_err());
    }

    #[test]
    fn stability_diagnostic() {
        assert!(ar_is_stable(&[C::new(0.9, 0.0)]));
        assert!(!ar_is_stable(&[C::new(0.0, 1.2)]));
        // Double pole at 0.5: 1 - z^-1 + 0.25 z^-2.
        assert!(ar_is_stable(&[C::new(1.0, 0.0), C::new(-0.25, 0.0)]));
        // Poles at 1.2 and 0.5.
        assert!(!ar_is_stable(&[C::new(1.7, 0.0), C::new(-0.6, 0.0)]));
    }

    fn random_spectrogram(seed: u64) -> Spectrogram<f64> {
        let plan = StftPlan::hann_75(16, 8000.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..120).map(|_| rng.gen_range(-1.0..1.0)).collect();
        stft(&x, &plan).unwrap()
    }

    #[test]
    fn em_increases_loglik() {
        for seed in 0..3 {
            let x = random_spectrogram(seed);
            let fit = fit_hrnmf(&x, 2, 15, &HrnmfInit::Random, seed).unwrap();
            for pair in fit.trajectory.windows(2) {
                assert!(pair[1] >= pair[0] - 1e-6 * pair[0].abs(), "{} -> {}", pair[0], pair[1]);
            }
        }
    }

    #[test]
    fn frozen_zero_dynamics_reduce_to_is_updates() {
        let x = random_spectrogram(11);
        let model = init_hrnmf(&x, 2, &HrnmfInit::Random, 4).unwrap();
        let options = EmOptions { ar: false, noise: false, ..EmOptions::default() };
        let step = em_step_with(&x, &model, options).unwrap();
        let posterior = e_step(&x, &model).unwrap();
        for k in 0..2 {
            let powers = Array2::from_shape_fn((x.n_bins(), x.n_frames()), |(f, t)| posterior.bands[f].second_moments[[k, t]]);
            let pair = FactorPair::new(
                model.w.column(k).to_owned().insert_axis(Axis(1)),
                model.h.row(k).to_owned().insert_axis(Axis(0)),
            )
            .unwrap();
            let expected = crate::factorization::mur_step(&powers, &pair, Divergence::ItakuraSaito, None).unwrap();
            for (a, b) in step.model.w.column(k).iter().zip(expected.w.iter()) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-12));
            }
            for (a, b) in step.model.h.row(k).iter().zip(expected.h.iter()) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-12));
            }
        }
        assert!(step.model.ar.iter().flatten().flatten().all(|c| *c == C::zero()));
        assert_eq!(step.model.noise_var, model.noise_var);
    }

    #[test]
    fn ar_coefficient_recovered_from_simulated_data() {
        let (n_bins, n_frames) = (9, 200);
        let mut errors = Vec::new();
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let w: Vec<f64> = (0..n_bins).map(|_| rng.gen_range(0.5..2.0)).collect();
            let h: Vec<f64> = (0..n_frames).map(|_| rng.gen_range(0.5..2.0)).collect();
            let a: Vec<C> = (0..n_bins).map(|_| C::from_polar(rng.gen_range(0.5..0.9), rng.gen_range(0.0..6.28))).collect();
            let noise = 1e-3;
            let mut data = Array2::<C>::zeros((n_bins, n_frames));
            for f in 0..n_bins {
                let mut prev = C::zero();
                for t in 0..n_frames {
                    let s = a[f] * prev + cgauss(&mut rng, w[f] * h[t]);
                    data[[f, t]] = s + cgauss(&mut rng, noise);
                    prev = s;
                }
            }
            let plan = StftPlan::hann_75(16, 8000.0).unwrap();
            let len = (1..2000).find(|&l| plan.n_frames(l) == n_frames).unwrap();
            let x = Spectrogram::new(data, plan, len).unwrap();
            let fit = fit_hrnmf(&x, 1, 30, &HrnmfInit::IsNmf { sweeps: 30 }, seed).unwrap();
            let mut band_err: Vec<f64> = (0..n_bins).map(|f| (fit.model.ar[0][f][0].norm() - a[f].norm()).abs()).collect();
            band_err.sort_by(|p, q| p.partial_cmp(q).unwrap());
            errors.push(band_err[n_bins / 2]);
        }
        errors.sort_by(|p, q| p.partial_cmp(q).unwrap());
        let median = 0.5 * (errors[9] + errors[10]);
        assert!(median < 0.05, "median |a| error {median}");
    }

    #[test]
    fn fit_is_deterministic() {
        let x = random_spectrogram(2);
        let a = fit_hrnmf(&x, 2, 3, &HrnmfInit::default(), 9).unwrap();
        let b = fit_hrnmf(&x, 2, 3, &HrnmfInit::default(), 9).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        assert!(fit_hrnmf(&x, 0, 3, &HrnmfInit::<f64>::Random, 9).is_err());
    }

    #[test]
    fn stacked_model_concatenates_components() {
        let x = random_spectrogram(4);
        let a = init_hrnmf(&x, 1, &HrnmfInit::Random, 1).unwrap();
        let b = init_hrnmf(&x, 2, &HrnmfInit::Random, 2).unwrap();
        let s = stack_models(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.k(), 3);
        assert!((s.noise_var - a.noise_var - b.noise_var).abs() < 1e-15);
        let sep = hrnmf_separate(&x, &s, &Grouping::new(vec![vec![0], vec![1, 2]], 3).unwrap()).unwrap();
        assert_eq!(sep.n_sources(), 2);
    }
}
