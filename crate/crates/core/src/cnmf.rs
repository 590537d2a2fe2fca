//! Complex NMF: `X(f,t) ≈ Σ_k W_k(f) H_k(t) e^{jφ_k(f,t)}` with a free phase
//! field per component, optionally pulled towards consistency (CNMF-LR).
//!
//! Fitting uses the auxiliary-function scheme: the residual is distributed to
//! the components in proportion `β_k = V_k / Σ_l V_l`, which gives a
//! separable majorizer `Σ_k (1/β_k) |X̄_k - V_k e^{jφ_k}|²` of the squared
//! error. Phases and the rank-one factors of each component then have closed
//! form minimizers. All squared norms use full-spectrum bin weights.

use ndarray::{Array2, Zip};
use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::factorization::random_factors;
use crate::phase::{Grouping, SourceEstimateSet};
use crate::scalar::{eps, Real};
use crate::tf::{bin_weight, consistency_project, inconsistency, unit_phasor, weighted_distance_sqr, Spectrogram};

#[derive(Clone, Debug)]
pub struct CnmfModel<T: Real> {
    pub w: Array2<T>,
    pub h: Array2<T>,
    /// Unit-modulus phase field of each component.
    pub phases: Vec<Array2<Complex<T>>>,
    /// Consistency weight; zero gives plain CNMF.
    pub gamma: T,
    /// L1 weight on `H`; zero disables the penalty.
    pub sparsity: T,
}

/// Which parameter blocks a sweep updates. Phases are always updated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CnmfOptions {
    pub update_w: bool,
    pub update_h: bool,
}

impl Default for CnmfOptions {
    fn default() -> Self {
        Self { update_w: true, update_h: true }
    }
}

impl<T: Real> CnmfModel<T> {
    pub fn k(&self) -> usize {
        self.w.ncols()
    }

    fn magnitude(&self, k: usize) -> Array2<T> {
        let w = self.w.column(k);
        let h = self.h.row(k);
        Array2::from_shape_fn((w.len(), h.len()), |(f, t)| w[f] * h[t])
    }

    /// `W_k H_k e^{jφ_k}`.
    pub fn component(&self, k: usize) -> Array2<Complex<T>> {
        let mut out = self.phases[k].clone();
        Zip::from(&mut out).and(&self.magnitude(k)).for_each(|c, &m| *c = *c * m);
        out
    }

    /// Model prediction `X̂ = Σ_k W_k H_k e^{jφ_k}`.
    pub fn prediction(&self) -> Array2<Complex<T>> {
        let mut acc = self.component(0);
        for k in 1..self.k() {
            acc = acc + self.component(k);
        }
        acc
    }

    fn validate(&self, x: &Spectrogram<T>) -> Result<()> {
        let dim = x.data().dim();
        if self.w.nrows() != dim.0 || self.h.ncols() != dim.1 || self.w.ncols() != self.h.nrows() {
            return Err(Error::ShapeMismatch("CNMF factors do not match the spectrogram".into()));
        }
        if self.phases.len() != self.k() || self.phases.iter().any(|p| p.dim() != dim) {
            return Err(Error::ShapeMismatch("CNMF phase fields do not match the spectrogram".into()));
        }
        if self.k() == 0 {
            return Err(Error::InvalidArgument("CNMF needs at least one component".into()));
        }
        let nan = self.w.iter().chain(self.h.iter()).any(|v| !v.is_finite())
            || self.phases.iter().flatten().any(|c| !c.re.is_finite() || !c.im.is_finite())
            || x.data().iter().any(|c| !c.re.is_finite() || !c.im.is_finite());
        if nan {
            return Err(Error::NonFinite("CNMF input"));
        }
        Ok(())
    }
}

/// `‖X − X̂‖² + γ Σ_k inconsistency(X_k) + λ Σ H`.
pub fn cnmf_objective<T: Real>(x: &Spectrogram<T>, model: &CnmfModel<T>) -> Result<T> {
    model.validate(x)?;
    let mut value = weighted_distance_sqr(x.data(), &model.prediction());
    if model.gamma > T::zero() {
        for k in 0..model.k() {
            value += model.gamma * inconsistency(&x.with_data(model.component(k))?);
        }
    }
    if model.sparsity > T::zero() {
        value += model.sparsity * model.h.sum();
    }
    Ok(value)
}

/// Residual-distributed components `X̄_k = Y_k + β_k (X − Σ_l Y_l)`, which sum
/// to `X`, together with the weights `β_k`.
pub fn residual_components<T: Real>(x: &Spectrogram<T>, model: &CnmfModel<T>) -> (Vec<Array2<Complex<T>>>, Vec<Array2<T>>) {
    let k_count = model.k();
    let mags: Vec<Array2<T>> = (0..k_count).map(|k| model.magnitude(k)).collect();
    let mut total = Array2::<T>::zeros(x.data().dim());
    for m in &mags {
        total = total + m;
    }
    let betas: Vec<Array2<T>> = mags
        .iter()
        .map(|m| {
            let mut b = m.clone();
            Zip::from(&mut b).and(&total).for_each(|b, &s| {
                *b = if s > T::zero() { *b / s } else { T::from_usize_lossy(k_count).recip() }
            });
            b
        })
        .collect();
    let components: Vec<Array2<Complex<T>>> = (0..k_count).map(|k| model.component(k)).collect();
    let mut residual = x.data().clone();
    for c in &components {
        residual = residual - c;
    }
    let bars = components
        .into_iter()
        .zip(&betas)
        .map(|(mut c, b)| {
            Zip::from(&mut c).and(b).and(&residual).for_each(|c, &b, &r| *c = *c + r * b);
            c
        })
        .collect();
    (bars, betas)
}

/// One sweep: residual distribution, phase update, then closed-form rank-one
/// weighted least-squares updates of `W` and `H`.
pub fn cnmf_step<T: Real>(x: &Spectrogram<T>, model: &CnmfModel<T>) -> Result<CnmfModel<T>> {
    cnmf_step_with(x, model, CnmfOptions::default())
}

pub fn cnmf_step_with<T: Real>(x: &Spectrogram<T>, model: &CnmfModel<T>, options: CnmfOptions) -> Result<CnmfModel<T>> {
    model.validate(x)?;
    let floor = eps::<T>();
    let (n_bins, n_frames) = x.data().dim();
    let (bars, betas) = residual_components(x, model);
    let mut next = model.clone();

    for k in 0..model.k() {
        let target = if model.gamma > T::zero() {
            let projected = consistency_project(&x.with_data(model.component(k))?);
            let mut t = bars[k].clone();
            Zip::from(&mut t).and(projected.data()).for_each(|a, &p| *a = *a + p * model.gamma);
            t
        } else {
            bars[k].clone()
        };
        Zip::from(&mut next.phases[k]).and(&target).for_each(|p, &z| *p = unit_phasor(z, *p));

        // Projection of X̄_k on the new phase; equals |X̄_k| when γ = 0.
        let mut proj = Array2::<T>::zeros((n_bins, n_frames));
        Zip::from(&mut proj)
            .and(&bars[k])
            .and(&next.phases[k])
            .for_each(|p, &b, &ph| *p = (b * ph.conj()).re);
        let mut weight = Array2::<T>::zeros((n_bins, n_frames));
        for f in 0..n_bins {
            let omega = bin_weight::<T>(f, n_bins);
            for t in 0..n_frames {
                weight[[f, t]] = omega / betas[k][[f, t]].max(T::min_positive_value());
            }
        }

        if options.update_w {
            for f in 0..n_bins {
                let mut num = T::zero();
                let mut den = T::zero();
                for t in 0..n_frames {
                    let h = next.h[[k, t]];
                    num += weight[[f, t]] * proj[[f, t]] * h;
                    den += weight[[f, t]] * h * h;
                }
                next.w[[f, k]] = if den > T::zero() { (num / den).max(floor) } else { floor };
            }
        }
        if options.update_h {
            let half_l1 = model.sparsity * T::lit(0.5);
            for t in 0..n_frames {
                let mut num = T::zero();
                let mut den = T::zero();
                for f in 0..n_bins {
                    let w = next.w[[f, k]];
                    num += weight[[f, t]] * proj[[f, t]] * w;
                    den += weight[[f, t]] * w * w;
                }
                next.h[[k, t]] = if den > T::zero() { ((num - half_l1) / den).max(floor) } else { floor };
            }
        }
    }
    if next.w.iter().chain(next.h.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("CNMF update"));
    }
    Ok(next)
}

/// Final model and objective after each sweep (first entry: initial value).
#[derive(Clone, Debug)]
pub struct CnmfFit<T: Real> {
    pub model: CnmfModel<T>,
    pub trajectory: Vec<T>,
}

/// Random magnitude factors scaled to the mean of `|X|`, all phases set to
/// the mixture phase.
pub fn init_cnmf<T: Real>(x: &Spectrogram<T>, k: usize, gamma: T, seed: u64) -> Result<CnmfModel<T>> {
    if k < 1 {
        return Err(Error::InvalidArgument("CNMF needs at least one component".into()));
    }
    if gamma < T::zero() || !gamma.is_finite() {
        return Err(Error::InvalidArgument("consistency weight must be finite and nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mag = x.magnitude();
    let factors = random_factors(x.n_bins(), x.n_frames(), k, mag.mean().unwrap_or(T::zero()), &mut rng);
    let one = Complex::new(T::one(), T::zero());
    let phase = x.data().mapv(|c| unit_phasor(c, one));
    Ok(CnmfModel {
        w: factors.w,
        h: factors.h,
        phases: vec![phase; k],
        gamma,
        sparsity: T::zero(),
    })
}

pub fn fit_cnmf<T: Real>(x: &Spectrogram<T>, k: usize, gamma: T, iterations: usize, seed: u64) -> Result<CnmfFit<T>> {
    let model = init_cnmf(x, k, gamma, seed)?;
    fit_cnmf_from(x, model, iterations, CnmfOptions::default())
}

pub fn fit_cnmf_from<T: Real>(
    x: &Spectrogram<T>,
    mut model: CnmfModel<T>,
    iterations: usize,
    options: CnmfOptions,
) -> Result<CnmfFit<T>> {
    if iterations == 0 {
        return Err(Error::InvalidArgument("at least one iteration is required".into()));
    }
    let mut trajectory = vec![cnmf_objective(x, &model)?];
    for _ in 0..iterations {
        model = cnmf_step_with(x, &model, options)?;
        trajectory.push(cnmf_objective(x, &model)?);
    }
    Ok(CnmfFit { model, trajectory })
}

/// Separated sources: residual-distributed components summed per group.
pub fn cnmf_separate<T: Real>(x: &Spectrogram<T>, model: &CnmfModel<T>, grouping: &Grouping) -> Result<SourceEstimateSet<T>> {
    model.validate(x)?;
    if grouping.n_components() != model.k() {
        return Err(Error::InvalidArgument("grouping does not cover the CNMF components".into()));
    }
    let (bars, _) = residual_components(x, model);
    let specs = grouping
        .groups()
        .iter()
        .map(|g| {
            let mut acc = bars[g[0]].clone();
            for &j in &g[1..] {
                acc = acc + &bars[j];
            }
            x.with_data(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    SourceEstimateSet::from_spectrograms(x.clone(), specs)
}
