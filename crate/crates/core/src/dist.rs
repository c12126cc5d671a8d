//! Absolutely continuous service-time distributions.
//!
//! Every family has an analytic cdf `F`, density `F'` and stationary-excess
//! (equilibrium) distribution `F₀(x) = μ∫₀ˣ(1−F(y))dy` with density
//! `F₀'(x) = μ(1−F(x))`. All families satisfy `F(0) = 0`, `F(x) < 1` and are
//! strictly increasing, so the inverses needed for control recovery exist.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use rand_chacha::rand_core::RngCore;
use thiserror::Error;

use crate::rng::open_unit;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistError {
    #[error("time must be nonnegative, got {0}")]
    NegativeTime(f64),
    #[error("invalid distribution parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("probability {0} outside [0, 1)")]
    ProbabilityOutOfRange(f64),
}

/// Absolute tolerance of the numeric inverses.
pub const INVERSE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    Exponential { rate: f64 },
    Erlang { shape: u32, rate: f64 },
    HyperExponential { weights: Vec<f64>, rates: Vec<f64> },
}

/// A service-time law with its mean rate `μ = 1/E[η]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceDist {
    family: Family,
    mean_rate: f64,
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

impl ServiceDist {
    pub fn exponential(rate: f64) -> Result<Self, DistError> {
        if !positive(rate) {
            return Err(DistError::InvalidParameter("exponential rate must be positive"));
        }
        Ok(Self { family: Family::Exponential { rate }, mean_rate: rate })
    }

    /// Sum of `shape` independent exponentials of rate `rate`.
    pub fn erlang(shape: u32, rate: f64) -> Result<Self, DistError> {
        if shape == 0 {
            return Err(DistError::InvalidParameter("erlang shape must be at least 1"));
        }
        if !positive(rate) {
            return Err(DistError::InvalidParameter("erlang rate must be positive"));
        }
        Ok(Self { family: Family::Erlang { shape, rate }, mean_rate: rate / shape as f64 })
    }

    /// Mixture of exponentials; `weights` must be positive and sum to one.
    pub fn hyperexponential(weights: Vec<f64>, rates: Vec<f64>) -> Result<Self, DistError> {
        if weights.is_empty() || weights.len() != rates.len() {
            return Err(DistError::InvalidParameter("hyperexponential needs matching, nonempty weights and rates"));
        }
        if !weights.iter().all(|&w| positive(w)) || !rates.iter().all(|&r| positive(r)) {
            return Err(DistError::InvalidParameter("hyperexponential weights and rates must be positive"));
        }
        if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(DistError::InvalidParameter("hyperexponential weights must sum to 1"));
        }
        let mean: f64 = weights.iter().zip(&rates).map(|(w, r)| w / r).sum();
        Ok(Self { family: Family::HyperExponential { weights, rates }, mean_rate: 1.0 / mean })
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    /// `μ`, the reciprocal of the mean service time.
    pub fn mean_rate(&self) -> f64 {
        self.mean_rate
    }

    pub fn mean(&self) -> f64 {
        1.0 / self.mean_rate
    }

    /// Squared coefficient of variation.
    pub fn scv(&self) -> f64 {
        match &self.family {
            Family::Exponential { .. } => 1.0,
            Family::Erlang { shape, .. } => 1.0 / *shape as f64,
            Family::HyperExponential { weights, rates } => {
                let m2: f64 = weights.iter().zip(rates).map(|(w, r)| 2.0 * w / (r * r)).sum();
                m2 * self.mean_rate * self.mean_rate - 1.0
            }
        }
    }

    /// `1 − F(x)` for `x ≥ 0`.
    pub fn survival_at(&self, x: f64) -> f64 {
        debug_assert!(x >= 0.0);
        let x = x.max(0.0);
        match &self.family {
            Family::Exponential { rate } => (-rate * x).exp(),
            Family::Erlang { shape, rate } => {
                let lx = rate * x;
                let mut term = 1.0;
                let mut sum = 1.0;
                for j in 1..*shape {
                    term *= lx / j as f64;
                    sum += term;
                }
                (-lx).exp() * sum
            }
            Family::HyperExponential { weights, rates } => weights.iter().zip(rates).map(|(w, r)| w * (-r * x).exp()).sum(),
        }
    }

    /// `F(x)` for `x ≥ 0`.
    pub fn cdf_at(&self, x: f64) -> f64 {
        match &self.family {
            Family::Exponential { rate } => -(-rate * x.max(0.0)).exp_m1(),
            _ => 1.0 - self.survival_at(x),
        }
    }

    /// `F'(x)` for `x ≥ 0`.
    pub fn pdf_at(&self, x: f64) -> f64 {
        debug_assert!(x >= 0.0);
        let x = x.max(0.0);
        match &self.family {
            Family::Exponential { rate } => rate * (-rate * x).exp(),
            Family::Erlang { shape, rate } => {
                let lx = rate * x;
                let mut term = 1.0;
                for j in 1..*shape {
                    term *= lx / j as f64;
                }
                rate * term * (-lx).exp()
            }
            Family::HyperExponential { weights, rates } => weights.iter().zip(rates).map(|(w, r)| w * r * (-r * x).exp()).sum(),
        }
    }

    /// `1 − F₀(x) = μ∫ₓ^∞(1−F(y))dy` for `x ≥ 0`.
    pub fn eq_survival_at(&self, x: f64) -> f64 {
        debug_assert!(x >= 0.0);
        let x = x.max(0.0);
        match &self.family {
            Family::Exponential { rate } => (-rate * x).exp(),
            Family::Erlang { shape, rate } => {
                // (1/k) Σ_{j=1..k} S_j(x) = e^{−λx}/k Σ_{i<k} (k−i)(λx)^i/i!
                let k = *shape;
                let lx = rate * x;
                let mut term = 1.0;
                let mut sum = k as f64;
                for i in 1..k {
                    term *= lx / i as f64;
                    sum += (k - i) as f64 * term;
                }
                (-lx).exp() * sum / k as f64
            }
            Family::HyperExponential { weights, rates } => {
                self.mean_rate * weights.iter().zip(rates).map(|(w, r)| w * (-r * x).exp() / r).sum::<f64>()
            }
        }
    }

    /// `F₀(x)` for `x ≥ 0`.
    pub fn eq_cdf_at(&self, x: f64) -> f64 {
        match &self.family {
            Family::Exponential { .. } => self.cdf_at(x),
            _ => 1.0 - self.eq_survival_at(x),
        }
    }

    /// `F₀'(x) = μ(1 − F(x))` for `x ≥ 0`.
    pub fn eq_pdf_at(&self, x: f64) -> f64 {
        self.mean_rate * self.survival_at(x)
    }

    pub fn cdf(&self, x: f64) -> Result<f64, DistError> {
        check_time(x).map(|x| self.cdf_at(x))
    }

    pub fn pdf(&self, x: f64) -> Result<f64, DistError> {
        check_time(x).map(|x| self.pdf_at(x))
    }

    pub fn eq_cdf(&self, x: f64) -> Result<f64, DistError> {
        check_time(x).map(|x| self.eq_cdf_at(x))
    }

    pub fn eq_pdf(&self, x: f64) -> Result<f64, DistError> {
        check_time(x).map(|x| self.eq_pdf_at(x))
    }

    /// `sup_x F'(x)`.
    pub fn pdf_sup(&self) -> f64 {
        match &self.family {
            Family::Exponential { rate } => *rate,
            Family::Erlang { shape: 1, rate } => *rate,
            Family::Erlang { shape, rate } => self.pdf_at((*shape - 1) as f64 / rate),
            Family::HyperExponential { weights, rates } => weights.iter().zip(rates).map(|(w, r)| w * r).sum(),
        }
    }

    /// `F⁻¹(u)` for `u ∈ [0, 1)`.
    pub fn quantile(&self, u: f64) -> Result<f64, DistError> {
        check_probability(u)?;
        match &self.family {
            Family::Exponential { rate } => Ok(-(-u).ln_1p() / rate),
            _ => Ok(invert(u, self.mean(), |x| self.cdf_at(x), |x| self.pdf_at(x))),
        }
    }

    /// `F₀⁻¹(u)` for `u ∈ [0, 1)`.
    pub fn eq_quantile(&self, u: f64) -> Result<f64, DistError> {
        check_probability(u)?;
        Ok(invert(u, self.mean(), |x| self.eq_cdf_at(x), |x| self.eq_pdf_at(x)))
    }

    /// Draw from `F` by structural sampling.
    pub fn sample(&self, rng: &mut impl RngCore) -> f64 {
        match &self.family {
            Family::Exponential { rate } => -open_unit(rng).ln() / rate,
            Family::Erlang { shape, rate } => (0..*shape).map(|_| -open_unit(rng).ln()).sum::<f64>() / rate,
            Family::HyperExponential { weights, rates } => {
                let u = open_unit(rng);
                let mut acc = 0.0;
                let mut pick = rates.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                -open_unit(rng).ln() / rates[pick]
            }
        }
    }

    /// Draw from `F₀` by inverse transform on the numeric inverse.
    pub fn sample_equilibrium(&self, rng: &mut impl RngCore) -> f64 {
        let u = open_unit(rng);
        invert(u, self.mean(), |x| self.eq_cdf_at(x), |x| self.eq_pdf_at(x))
    }
}

fn check_time(x: f64) -> Result<f64, DistError> {
    if x.is_nan() || x < 0.0 {
        Err(DistError::NegativeTime(x))
    } else {
        Ok(x)
    }
}

fn check_probability(u: f64) -> Result<(), DistError> {
    if (0.0..1.0).contains(&u) {
        Ok(())
    } else {
        Err(DistError::ProbabilityOutOfRange(u))
    }
}

/// Safeguarded Newton–bisection for `cdf(x) = u` on a strictly increasing cdf.
fn invert(u: f64, scale: f64, cdf: impl Fn(f64) -> f64, pdf: impl Fn(f64) -> f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    let mut lo = 0.0;
    let mut hi = scale;
    while cdf(hi) < u {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return f64::MAX;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let g = cdf(x) - u;
        if g > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let d = pdf(x);
        let newton = if d > 0.0 { x - g / d } else { f64::NAN };
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        let moved = (next - x).abs();
        x = next;
        if moved <= INVERSE_TOL || hi - lo <= INVERSE_TOL {
            break;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use alloc::vec;
    use alloc::vec::Vec;

    fn families() -> Vec<ServiceDist> {
        vec![
            ServiceDist::exponential(1.3).unwrap(),
            ServiceDist::erlang(1, 0.7).unwrap(),
            ServiceDist::erlang(3, 2.0).unwrap(),
            ServiceDist::hyperexponential(vec![0.5, 0.5], vec![1.0, 3.0]).unwrap(),
        ]
    }

    /// Composite Simpson rule, independent of the crate's quadrature.
    fn simpson(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn exponential_cdf_values() {
        let d = ServiceDist::exponential(1.0).unwrap();
        assert_eq!(d.cdf(0.0).unwrap(), 0.0);
        assert!((d.cdf(1.0).unwrap() - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((d.cdf(1.0).unwrap() - 0.63212).abs() < 1e-5);
    }

    #[test]
    fn erlang_cdf_matches_integrated_density() {
        let d = ServiceDist::erlang(2, 2.0).unwrap();
        let oracle = simpson(0.0, 1.0, 2000, |x| 4.0 * x * (-2.0 * x).exp());
        let v = d.cdf(1.0).unwrap();
        assert!((v - oracle).abs() < 1e-12);
        assert!((v - (1.0 - 3.0 * (-2.0f64).exp())).abs() < 1e-14);
        assert!((v - 0.59399).abs() < 1e-5);
    }

    #[test]
    fn equilibrium_cdf_matches_quadrature() {
        for d in families() {
            let mu = d.mean_rate();
            for &x in &[0.0_f64, 0.3, 1.0, 2.5] {
                let oracle = simpson(0.0, x.max(1e-300), 2000, |y| mu * (1.0 - d.cdf_at(y)));
                assert!((d.eq_cdf(x).unwrap() - oracle).abs() < 1e-10, "{d:?} at {x}");
            }
        }
        let e = ServiceDist::exponential(2.0).unwrap();
        for &x in &[0.0, 0.1, 1.0, 7.0] {
            assert_eq!(e.eq_cdf_at(x), e.cdf_at(x));
        }
    }

    #[test]
    fn negative_time_rejected() {
        let d = ServiceDist::exponential(1.0).unwrap();
        assert_eq!(d.cdf(-1.0), Err(DistError::NegativeTime(-1.0)));
        assert!(d.eq_cdf(-0.1).is_err());
        assert!(d.pdf(f64::NAN).is_err());
        assert!(ServiceDist::erlang(0, 1.0).is_err());
        assert!(ServiceDist::hyperexponential(vec![0.3, 0.3], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn density_consistency_and_invariants() {
        for d in families() {
            let h = 1e-4;
            let mut prev = (0.0, 0.0);
            for i in 1..200 {
                let x = i as f64 * 0.05;
                let fd = (d.cdf_at(x + h) - d.cdf_at(x - h)) / (2.0 * h);
                assert!((fd - d.pdf_at(x)).abs() < 1e-6, "{d:?} at {x}");
                assert_eq!(d.eq_pdf_at(x), d.mean_rate() * d.survival_at(x));
                assert!((d.eq_pdf_at(x) - d.mean_rate() * (1.0 - d.cdf_at(x))).abs() < 1e-15);
                assert!(d.eq_pdf_at(x) <= d.mean_rate());
                let (c, e) = (d.cdf_at(x), d.eq_cdf_at(x));
                assert!(c >= prev.0 && e >= prev.1 && c < 1.0);
                prev = (c, e);
            }
            let mass = simpson(0.0, 60.0 / d.mean_rate(), 20000, |x| d.pdf_at(x));
            assert!((mass - 1.0).abs() < 1e-8);
            assert!(d.pdf_at(0.5) <= d.pdf_sup() + 1e-15);
        }
    }

    #[test]
    fn quantiles_invert() {
        for d in families() {
            for &u in &[0.0, 1e-9, 0.25, 0.5, 0.9, 0.999999] {
                let x = d.quantile(u).unwrap();
                assert!((d.cdf_at(x) - u).abs() < 1e-11, "{d:?} u={u}");
                let y = d.eq_quantile(u).unwrap();
                assert!((d.eq_cdf_at(y) - u).abs() < 1e-11, "{d:?} u={u}");
            }
            assert!(d.quantile(1.0).is_err());
        }
    }

    fn mean_and_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (v / n).sqrt())
    }

    #[test]
    fn sample_means_within_three_standard_errors() {
        let mut rng = stream(2024, 0);
        let e = ServiceDist::exponential(1.0).unwrap();
        let xs: Vec<f64> = (0..100_000).map(|_| e.sample(&mut rng)).collect();
        let (m, se) = mean_and_se(&xs);
        assert!((m - 1.0).abs() < 3.0 * se, "mean {m} se {se}");

        let xs: Vec<f64> = (0..100_000).map(|_| e.sample_equilibrium(&mut rng)).collect();
        let (m, se) = mean_and_se(&xs);
        assert!((m - 1.0).abs() < 3.0 * se, "equilibrium mean {m} se {se}");

        let h = ServiceDist::hyperexponential(vec![0.5, 0.5], vec![1.0, 3.0]).unwrap();
        let xs: Vec<f64> = (0..100_000).map(|_| h.sample(&mut rng)).collect();
        let (m, se) = mean_and_se(&xs);
        assert!((m - (0.5 + 0.5 / 3.0)).abs() < 3.0 * se, "mean {m} se {se}");
    }

    #[test]
    fn kolmogorov_smirnov_below_one_percent_critical_value() {
        let n = 10_000;
        let critical = crate::stats::ks_critical_value(n, 0.01);
        for (k, d) in families().into_iter().enumerate() {
            let mut rng = stream(99, k as u64);
            let xs: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
            let stat = crate::stats::ks_statistic(&xs, |x| d.cdf_at(x));
            assert!(stat < critical, "{d:?}: D = {stat}");
            let ys: Vec<f64> = (0..n).map(|_| d.sample_equilibrium(&mut rng)).collect();
            let stat = crate::stats::ks_statistic(&ys, |x| d.eq_cdf_at(x));
            assert!(stat < critical, "{d:?} equilibrium: D = {stat}");
        }
    }
}
