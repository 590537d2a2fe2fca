//! Nonnegative matrix factorization `V ≈ WH` with multiplicative updates.
//!
//! The updates are the majorize-minimize rules for the β-divergence family at
//! β = 1 (Kullback-Leibler), β = 0 (Itakura-Saito, with the 1/2 exponent that
//! guarantees descent) and β = 2 (weighted Euclidean). Every update is
//! therefore non-increasing in the cost.

use ndarray::{Array2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{eps, Real};

/// Element-wise cost between a nonnegative target and its approximation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Divergence {
    #[serde(rename = "kl")]
    KullbackLeibler,
    #[serde(rename = "is")]
    ItakuraSaito,
    #[serde(rename = "euc")]
    WeightedEuclidean,
}

impl Divergence {
    fn beta(self) -> i32 {
        match self {
            Divergence::KullbackLeibler => 1,
            Divergence::ItakuraSaito => 0,
            Divergence::WeightedEuclidean => 2,
        }
    }

    /// Scalar divergence `d(x | y)`; `x` is floored for IS, `0 ln 0 = 0` for KL.
    pub fn scalar<T: Real>(self, x: T, y: T, floor: T) -> T {
        match self {
            Divergence::KullbackLeibler => {
                if x > T::zero() {
                    x * (x / y).ln() - x + y
                } else {
                    y
                }
            }
            Divergence::ItakuraSaito => {
                let r = x.max(floor) / y;
                r - r.ln() - T::one()
            }
            Divergence::WeightedEuclidean => (x - y) * (x - y),
        }
    }
}

/// Spectral templates `W` (F×K) and activations `H` (K×T).
#[derive(Clone, Debug, PartialEq)]
pub struct FactorPair<T: Real> {
    pub w: Array2<T>,
    pub h: Array2<T>,
}

impl<T: Real> FactorPair<T> {
    pub fn new(w: Array2<T>, h: Array2<T>) -> Result<Self> {
        if w.ncols() != h.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "W has {} columns but H has {} rows",
                w.ncols(),
                h.nrows()
            )));
        }
        if w.iter().chain(h.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("factor pair"));
        }
        if w.iter().chain(h.iter()).any(|&x| x < T::zero()) {
            return Err(Error::InvalidArgument("factors must be nonnegative".into()));
        }
        Ok(Self { w, h })
    }

    /// Number of components.
    pub fn k(&self) -> usize {
        self.w.ncols()
    }

    pub fn reconstruct(&self) -> Array2<T> {
        self.w.dot(&self.h)
    }

    /// `V_k = W_k H_k` for one component.
    pub fn component(&self, k: usize) -> Array2<T> {
        let w = self.w.column(k);
        let h = self.h.row(k);
        Array2::from_shape_fn((w.len(), h.len()), |(f, t)| w[f] * h[t])
    }

    /// `K(F+T) / (FT)`: how strongly the factorization compresses the data.
    pub fn compression_ratio(&self) -> f64 {
        let (f, k) = self.w.dim();
        let t = self.h.ncols();
        (k * (f + t)) as f64 / (f * t) as f64
    }

    /// Rescales `W_k ← c W_k`, `H_k ← H_k / c`; the product is unchanged.
    pub fn rescale_component(&mut self, k: usize, c: T) {
        self.w.column_mut(k).mapv_inplace(|x| x * c);
        self.h.row_mut(k).mapv_inplace(|x| x / c);
    }

    /// Stacks factor pairs along the component axis.
    pub fn concat(parts: &[FactorPair<T>]) -> Result<Self> {
        let ws: Vec<_> = parts.iter().map(|p| p.w.view()).collect();
        let hs: Vec<_> = parts.iter().map(|p| p.h.view()).collect();
        let w = ndarray::concatenate(Axis(1), &ws).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let h = ndarray::concatenate(Axis(0), &hs).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Self::new(w, h)
    }
}

fn check_same_shape<T: Real>(a: &Array2<T>, b: &Array2<T>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!("{what}: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Summed (optionally weighted) element-wise divergence `D(V | V̂)`.
pub fn divergence<T: Real>(
    v: &Array2<T>,
    vhat: &Array2<T>,
    kind: Divergence,
    weights: Option<&Array2<T>>,
) -> Result<T> {
    check_same_shape(v, vhat, "divergence")?;
    if let Some(m) = weights {
        check_same_shape(v, m, "divergence weights")?;
    }
    if vhat.iter().any(|&y| !(y > T::zero())) {
        return Err(Error::InvalidArgument("approximation must be strictly positive".into()));
    }
    if v.iter().any(|&x| !(x >= T::zero())) {
        return Err(Error::InvalidArgument("target must be nonnegative".into()));
    }
    Ok(divergence_unchecked(v, vhat, kind, weights, eps()))
}

pub(crate) fn divergence_unchecked<T: Real>(
    v: &Array2<T>,
    vhat: &Array2<T>,
    kind: Divergence,
    weights: Option<&Array2<T>>,
    floor: T,
) -> T {
    let mut total = T::zero();
    match weights {
        Some(m) => Zip::from(v).and(vhat).and(m).for_each(|&x, &y, &w| total += w * kind.scalar(x, y, floor)),
        None => Zip::from(v).and(vhat).for_each(|&x, &y| total += kind.scalar(x, y, floor)),
    }
    total
}

/// `(M ∘ V ∘ V̂^{β-2}, M ∘ V̂^{β-1})`, the two matrices every update contracts.
fn ratio_terms<T: Real>(
    v: &Array2<T>,
    vhat: &Array2<T>,
    kind: Divergence,
    weights: Option<&Array2<T>>,
    floor: T,
) -> (Array2<T>, Array2<T>) {
    let mut num = Array2::zeros(v.dim());
    let mut den = Array2::zeros(v.dim());
    let beta = kind.beta();
    Zip::from(&mut num)
        .and(&mut den)
        .and(v)
        .and(vhat)
        .for_each(|n, d, &x, &y| {
            let x = if beta == 0 { x.max(floor) } else { x };
            match beta {
                1 => {
                    *n = x / y;
                    *d = T::one();
                }
                0 => {
                    *n = x / (y * y);
                    *d = y.recip();
                }
                _ => {
                    *n = x;
                    *d = y;
                }
            }
        });
    if let Some(m) = weights {
        num = num * m;
        den = den * m;
    }
    (num, den)
}

fn apply_ratio<T: Real>(target: &mut Array2<T>, num: &Array2<T>, den: &Array2<T>, kind: Divergence, floor: T) {
    let half_power = kind == Divergence::ItakuraSaito;
    Zip::from(target).and(num).and(den).for_each(|x, &n, &d| {
        let r = n / d.max(floor);
        let r = if half_power { r.sqrt() } else { r };
        *x = (*x * r).max(floor);
    });
}

pub(crate) fn clamped_product<T: Real>(factors: &FactorPair<T>, floor: T) -> Array2<T> {
    factors.reconstruct().mapv(|x| x.max(floor))
}

/// One sweep (W then H) with an explicit entry floor.
pub(crate) fn mur_step_floored<T: Real>(
    v: &Array2<T>,
    factors: &FactorPair<T>,
    kind: Divergence,
    weights: Option<&Array2<T>>,
    floor: T,
) -> FactorPair<T> {
    let mut w = factors.w.mapv(|x| x.max(floor));
    let mut h = factors.h.mapv(|x| x.max(floor));

    let vhat = w.dot(&h).mapv(|x| x.max(floor));
    let (num, den) = ratio_terms(v, &vhat, kind, weights, floor);
    let ht = h.t();
    apply_ratio(&mut w, &num.dot(&ht), &den.dot(&ht), kind, floor);

    let vhat = w.dot(&h).mapv(|x| x.max(floor));
    let (num, den) = ratio_terms(v, &vhat, kind, weights, floor);
    let wt = w.t();
    apply_ratio(&mut h, &wt.dot(&num), &wt.dot(&den), kind, floor);

    FactorPair { w, h }
}

fn check_factor_shapes<T: Real>(v: &Array2<T>, factors: &FactorPair<T>) -> Result<()> {
    if v.nrows() != factors.w.nrows() || v.ncols() != factors.h.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "V is {:?} but factors give {}x{}",
            v.dim(),
            factors.w.nrows(),
            factors.h.ncols()
        )));
    }
    Ok(())
}

/// One multiplicative-update sweep: `W` first, then `H`.
pub fn mur_step<T: Real>(
    v: &Array2<T>,
    factors: &FactorPair<T>,
    kind: Divergence,
    weights: Option<&Array2<T>>,
) -> Result<FactorPair<T>> {
    check_factor_shapes(v, factors)?;
    if let Some(m) = weights {
        check_same_shape(v, m, "weights")?;
    }
    if v.iter().chain(factors.w.iter()).chain(factors.h.iter()).any(|x| x.is_nan()) {
        return Err(Error::NonFinite("multiplicative update input"));
    }
    Ok(mur_step_floored(v, factors, kind, weights, eps()))
}

/// Random factors with entries uniform on (0, 1], scaled so that the mean of
/// `WH` equals `target_mean`.
pub fn random_factors<T: Real, R: Rng>(n_rows: usize, n_cols: usize, k: usize, target_mean: T, rng: &mut R) -> FactorPair<T> {
    let mut draw = || T::lit(1.0 - rng.gen::<f64>());
    let w = Array2::from_shape_simple_fn((n_rows, k), &mut draw);
    let h = Array2::from_shape_simple_fn((k, n_cols), &mut draw);
    let mut pair = FactorPair { w, h };
    let current = pair.reconstruct().mean().unwrap_or(T::one());
    if target_mean > T::zero() && current > T::zero() {
        let s = (target_mean / current).sqrt();
        pair.w.mapv_inplace(|x| (x * s).max(eps()));
        pair.h.mapv_inplace(|x| (x * s).max(eps()));
    }
    pair
}

/// Result of [`fit_nmf`]: final factors and the divergence after each sweep
/// (the first entry is the initial divergence).
#[derive(Clone, Debug)]
pub struct NmfFit<T: Real> {
    pub factors: FactorPair<T>,
    pub trajectory: Vec<T>,
}

/// Fits `K` components with the given number of sweeps from a seeded random
/// start.
pub fn fit_nmf<T: Real>(v: &Array2<T>, k: usize, kind: Divergence, iterations: usize, seed: u64) -> Result<NmfFit<T>> {
    let (f, t) = v.dim();
    if k == 0 || k > f.min(t) {
        return Err(Error::InvalidArgument(format!("component count {k} must be in 1..={}", f.min(t))));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = v.mean().unwrap_or(T::zero());
    let init = random_factors(f, t, k, mean, &mut rng);
    fit_nmf_from(v, init, kind, iterations)
}

/// Runs `iterations` sweeps from the given factors.
pub fn fit_nmf_from<T: Real>(v: &Array2<T>, init: FactorPair<T>, kind: Divergence, iterations: usize) -> Result<NmfFit<T>> {
    if iterations == 0 {
        return Err(Error::InvalidArgument("at least one iteration is required".into()));
    }
    if v.iter().any(|x| !x.is_finite() || *x < T::zero()) {
        return Err(Error::InvalidArgument("V must be finite and nonnegative".into()));
    }
    let floor = eps();
    check_factor_shapes(v, &init)?;
    let mut factors = init;
    let mut trajectory = Vec::with_capacity(iterations + 1);
    trajectory.push(divergence_unchecked(v, &clamped_product(&factors, floor), kind, None, floor));
    for _ in 0..iterations {
        factors = mur_step_floored(v, &factors, kind, None, floor);
        trajectory.push(divergence_unchecked(v, &clamped_product(&factors, floor), kind, None, floor));
    }
    Ok(NmfFit { factors, trajectory })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

    #[test]
    fn scalar_divergences_match_closed_forms() {
        let v = array![[2.0]];
        let y = array![[1.0]];
        let kl = divergence(&v, &y, Divergence::KullbackLeibler, None).unwrap();
        let is = divergence(&v, &y, Divergence::ItakuraSaito, None).unwrap();
        assert!((kl - (2.0 * 2f64.ln() - 1.0)).abs() < 1e-15);
        assert!((is - (2.0 - 2f64.ln() - 1.0)).abs() < 1e-15);
        assert!((kl - 0.3863).abs() < 1e-4);
        assert!((is - 0.3069).abs() < 1e-4);
    }

    #[test]
    fn self_divergence_is_zero() {
        let v = array![[0.5, 1.5], [3.0, 0.25]];
        for kind in [Divergence::KullbackLeibler, Divergence::ItakuraSaito, Divergence::WeightedEuclidean] {
            assert_eq!(divergence(&v, &v, kind, None).unwrap(), 0.0);
        }
    }

    #[test]
    fn kl_zero_target_convention() {
        let v = array![[0.0f64]];
        let y = array![[0.7f64]];
        let d = divergence(&v, &y, Divergence::KullbackLeibler, None).unwrap();
        assert!((d - 0.7).abs() < 1e-15);
    }

    #[test]
    fn divergence_errors() {
        let v = array![[1.0, 2.0]];
        assert!(divergence(&v, &array![[1.0]], Divergence::KullbackLeibler, None).is_err());
        assert!(divergence(&v, &array![[1.0, 0.0]], Divergence::KullbackLeibler, None).is_err());
    }

    #[test]
    fn exact_factorization_is_a_fixed_point() {
        let w: Array2<f64> = array![[1.0, 0.5], [0.2, 2.0], [0.7, 0.7]];
        let h = array![[1.0, 0.3, 2.0, 0.1], [0.4, 1.2, 0.05, 0.9]];
        let pair = FactorPair::new(w, h).unwrap();
        let v = pair.reconstruct();
        for kind in [Divergence::KullbackLeibler, Divergence::ItakuraSaito, Divergence::WeightedEuclidean] {
            let next = mur_step(&v, &pair, kind, None).unwrap();
            for (a, b) in next.w.iter().chain(next.h.iter()).zip(pair.w.iter().chain(pair.h.iter())) {
                assert!((a - b).abs() <= 1e-12 * b.abs());
            }
        }
    }

    #[test]
    fn component_rescaling_keeps_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = Array2::from_shape_simple_fn((6, 8), || rng.gen::<f64>());
        let mut pair = random_factors(6, 8, 3, 0.5, &mut rng);
        let before = divergence(&v, &pair.reconstruct(), Divergence::KullbackLeibler, None).unwrap();
        pair.rescale_component(1, 7.5);
        let after = divergence(&v, &pair.reconstruct(), Divergence::KullbackLeibler, None).unwrap();
        assert!((before - after).abs() < 1e-12 * before);
    }

    #[test]
    fn rank_one_recovery() {
        let w = array![1.0f64, 0.2, 3.0, 0.5, 0.05, 1.7];
        let h = array![0.3, 1.0, 2.0, 0.1, 0.9, 1.1, 0.6];
        let v = Array2::from_shape_fn((6, 7), |(f, t)| w[f] * h[t]);
        let fit = fit_nmf(&v, 1, Divergence::KullbackLeibler, 200, 11).unwrap();
        for pair in fit.trajectory.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-10);
        }
        let l1: f64 = v.sum();
        assert!(*fit.trajectory.last().unwrap() < 1e-6 * l1);
        let approx = fit.factors.reconstruct();
        let rel = (&approx - &v).mapv(|x| x * x).sum().sqrt() / v.mapv(|x| x * x).sum().sqrt();
        assert!(rel < 1e-3);
    }

    #[test]
    fn zero_rows_do_not_produce_nan() {
        let mut v = Array2::from_elem((4, 5), 1.0f64);
        v.row_mut(2).fill(0.0);
        v.column_mut(3).fill(0.0);
        for kind in [Divergence::KullbackLeibler, Divergence::ItakuraSaito, Divergence::WeightedEuclidean] {
            let fit = fit_nmf(&v, 2, kind, 20, 1).unwrap();
            assert!(fit.factors.w.iter().chain(fit.factors.h.iter()).all(|x| x.is_finite() && *x > 0.0));
        }
    }

    #[test]
    fn fit_is_deterministic_and_rejects_large_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v = Array2::from_shape_simple_fn((5, 9), || rng.gen::<f64>());
        let a = fit_nmf(&v, 2, Divergence::ItakuraSaito, 30, 42).unwrap();
        let b = fit_nmf(&v, 2, Divergence::ItakuraSaito, 30, 42).unwrap();
        assert_eq!(a.factors, b.factors);
        assert_eq!(a.trajectory, b.trajectory);
        assert!(fit_nmf(&v, 6, Divergence::KullbackLeibler, 30, 0).is_err());
        assert!(fit_nmf(&v, 2, Divergence::KullbackLeibler, 0, 0).is_err());
    }

    #[test]
    fn nan_input_rejected() {
        let v = array![[f64::NAN, 1.0]];
        let pair = FactorPair::new(array![[1.0f64]], array![[1.0, 1.0]]).unwrap();
        assert!(mur_step(&v, &pair, Divergence::KullbackLeibler, None).is_err());
    }

    #[test]
    fn weighted_euclidean_respects_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = Array2::from_shape_simple_fn((6, 6), || rng.gen::<f64>());
        let m = Array2::from_shape_simple_fn((6, 6), || rng.gen::<f64>() * 3.0);
        let mut pair = random_factors(6, 6, 2, 0.5, &mut rng);
        let mut last = divergence(&v, &pair.reconstruct(), Divergence::WeightedEuclidean, Some(&m)).unwrap();
        for _ in 0..50 {
            pair = mur_step(&v, &pair, Divergence::WeightedEuclidean, Some(&m)).unwrap();
            let d = divergence(&v, &pair.reconstruct(), Divergence::WeightedEuclidean, Some(&m)).unwrap();
            assert!(d <= last + 1e-10);
            last = d;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn sweeps_never_increase_cost(seed in any::<u64>(), f in 2usize..10, t in 2usize..12, k in 1usize..4, kind_idx in 0usize..3) {
            let kind = [Divergence::KullbackLeibler, Divergence::ItakuraSaito, Divergence::WeightedEuclidean][kind_idx];
            let k = k.min(f).min(t);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = Array2::from_shape_simple_fn((f, t), || rng.gen::<f64>() * 4.0);
            let fit = fit_nmf(&v, k, kind, 25, seed ^ 1).unwrap();
            for pair in fit.trajectory.windows(2) {
                prop_assert!(pair[1] <= pair[0] + 1e-10, "{:?} increased: {} -> {}", kind, pair[0], pair[1]);
            }
            prop_assert!(fit.factors.w.iter().chain(fit.factors.h.iter()).all(|x| *x > 0.0));
        }
    }
}
