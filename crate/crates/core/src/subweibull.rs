//! Sub-Weibull tail-class descriptors and reference error samplers.
//!
//! A [`SubWeibull`] value is a certificate `‖X‖_k ≤ ν k^θ` for all `k ≥ 1`; the
//! closure operations compose certificates only. Whether a concrete sampler
//! actually satisfies its declared class is checked empirically by
//! [`crate::validation`].

use std::f64::consts::{E, PI};

use rand::Rng;
use rand_distr::{Distribution, Normal, Weibull};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubWeibull {
    theta: f64,
    nu: f64,
}

/// Whether two random variables are known to be independent.
///
/// The product rule only holds for independent factors, so [`SubWeibull::mul`]
/// refuses [`Dependence::Unknown`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dependence {
    Independent,
    Unknown,
}

impl SubWeibull {
    pub fn new(theta: f64, nu: f64) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::invalid(format!("sub-Weibull theta must be > 0, got {theta}")));
        }
        if !(nu >= 0.0 && nu.is_finite()) {
            return Err(Error::invalid(format!("sub-Weibull nu must be >= 0, got {nu}")));
        }
        Ok(Self { theta, nu })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// Widens the class to `(theta2, nu2)`; never narrows.
    pub fn include(&self, theta2: f64, nu2: f64) -> Result<Self> {
        if theta2 < self.theta || nu2 < self.nu {
            return Err(Error::invalid(format!("inclusion only widens: ({theta2}, {nu2}) does not contain ({}, {})", self.theta, self.nu)));
        }
        Self::new(theta2, nu2)
    }

    /// Class of `a X`.
    pub fn scale(&self, a: f64) -> Self {
        Self { theta: self.theta, nu: a.abs() * self.nu }
    }

    /// Class of `a + X`.
    pub fn shift(&self, a: f64) -> Self {
        Self { theta: self.theta, nu: a.abs() + self.nu }
    }

    /// Class of `X + Y`, valid for dependent summands.
    pub fn add(&self, other: &Self) -> Self {
        Self { theta: self.theta.max(other.theta), nu: self.nu + other.nu }
    }

    /// Class of `X Y` for independent factors.
    pub fn mul(&self, other: &Self, dependence: Dependence) -> Result<Self> {
        match dependence {
            Dependence::Independent => Ok(Self { theta: self.theta + other.theta, nu: self.nu * other.nu }),
            Dependence::Unknown => Err(Error::invalid("the product rule requires independent factors")),
        }
    }

    /// `ν k^θ`, the certified bound on `‖X‖_k`.
    pub fn moment_bound(&self, k: f64) -> f64 {
        self.nu * k.powf(self.theta)
    }

    /// Scale `ν₁ = (2e/θ)^θ ν` of the equivalent tail form `P[|X| ≥ ε] ≤ 2 exp(-(ε/ν₁)^{1/θ})`.
    pub fn tail_scale(&self) -> f64 {
        (2.0 * E / self.theta).powf(self.theta) * self.nu
    }

    /// Level exceeded by `|X|` with probability at most `delta`.
    pub fn hp_bound(&self, delta: f64) -> Result<f64> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
        }
        Ok(self.nu * (2.0 / delta).ln().powf(self.theta) * (2.0 * E / self.theta).powf(self.theta))
    }

    /// Upper bound on `P[|X| ≥ eps]`.
    pub fn tail_prob_bound(&self, eps: f64) -> Result<f64> {
        if !(eps > 0.0) {
            return Err(Error::invalid(format!("eps must be > 0, got {eps}")));
        }
        let nu1 = self.tail_scale();
        if nu1 == 0.0 {
            return Ok(0.0);
        }
        Ok(2.0 * (-(eps / nu1).powf(1.0 / self.theta)).exp())
    }
}

/// Class of `‖ε + ξ‖` for `dim`-dimensional vectors whose entries belong to
/// `eps_class` and `xi_class` respectively.
pub fn vector_norm_class(dim: usize, eps_class: &SubWeibull, xi_class: &SubWeibull) -> Result<SubWeibull> {
    if dim < 1 {
        return Err(Error::invalid("vector dimension must be at least 1"));
    }
    let root = (dim as f64).sqrt();
    let nu = 2f64.powf(eps_class.theta) * root * eps_class.nu + 2f64.powf(xi_class.theta) * root * xi_class.nu;
    SubWeibull::new(eps_class.theta.max(xi_class.theta), nu)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    Gaussian,
    BoundedUniform,
    WeibullTail,
}

/// A scalar error distribution together with a sub-Weibull class it provably belongs to.
///
/// * `Gaussian`: `N(0, scale²)`.
/// * `BoundedUniform`: uniform on `[-scale, scale]`.
/// * `WeibullTail`: random sign times a Weibull variable with shape `1/θ` and scale `scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSampler {
    kind: SamplerKind,
    scale: f64,
    declared: SubWeibull,
}

impl ErrorSampler {
    pub fn gaussian(std_dev: f64) -> Result<Self> {
        check_scale(std_dev)?;
        Self::build(SamplerKind::Gaussian, std_dev, 0.5)
    }

    pub fn bounded_uniform(half_width: f64) -> Result<Self> {
        check_scale(half_width)?;
        Self::build(SamplerKind::BoundedUniform, half_width, 0.5)
    }

    /// Symmetric Weibull-tailed errors whose declared class is exactly `subW(theta, nu)`.
    pub fn weibull_tail(theta: f64, nu: f64) -> Result<Self> {
        let declared = SubWeibull::new(theta, nu)?;
        let unit = peak_moment_ratio(|k| weibull_abs_moment(theta, 1.0, k), theta);
        Ok(Self { kind: SamplerKind::WeibullTail, scale: nu / unit, declared })
    }

    /// Degenerate sampler that always returns zero.
    pub fn zero() -> Self {
        Self { kind: SamplerKind::Gaussian, scale: 0.0, declared: SubWeibull { theta: 0.5, nu: 0.0 } }
    }

    pub fn from_kind(kind: SamplerKind, scale: f64, theta: f64) -> Result<Self> {
        match kind {
            SamplerKind::Gaussian => Self::gaussian(scale),
            SamplerKind::BoundedUniform => Self::bounded_uniform(scale),
            SamplerKind::WeibullTail => {
                let unit = peak_moment_ratio(|k| weibull_abs_moment(theta, 1.0, k), theta);
                Self::weibull_tail(theta, scale * unit)
            }
        }
    }

    fn build(kind: SamplerKind, scale: f64, theta: f64) -> Result<Self> {
        let probe = Self { kind, scale: 1.0, declared: SubWeibull { theta, nu: 1.0 } };
        let unit = peak_moment_ratio(|k| probe.abs_moment(k), theta);
        Ok(Self { kind, scale, declared: SubWeibull::new(theta, unit * scale)? })
    }

    pub fn kind(&self) -> SamplerKind {
        self.kind
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn declared(&self) -> SubWeibull {
        self.declared
    }

    pub fn is_zero(&self) -> bool {
        self.scale == 0.0
    }

    /// Exact `E|X|^k`.
    pub fn abs_moment(&self, k: f64) -> f64 {
        match self.kind {
            SamplerKind::Gaussian => {
                if self.scale == 0.0 {
                    return 0.0;
                }
                (k * self.scale.ln() + 0.5 * k * 2f64.ln() + ln_gamma(0.5 * (k + 1.0)) - 0.5 * PI.ln()).exp()
            }
            SamplerKind::BoundedUniform => self.scale.powf(k) / (k + 1.0),
            SamplerKind::WeibullTail => weibull_abs_moment(self.declared.theta, self.scale, k),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.scale == 0.0 {
            return 0.0;
        }
        match self.kind {
            SamplerKind::Gaussian => Normal::new(0.0, self.scale).expect("finite scale").sample(rng),
            SamplerKind::BoundedUniform => rng.random_range(-self.scale..=self.scale),
            SamplerKind::WeibullTail => {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let w = Weibull::new(self.scale, 1.0 / self.declared.theta).expect("positive parameters");
                sign * w.sample(rng)
            }
        }
    }

    pub fn sample_n<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}

fn check_scale(scale: f64) -> Result<()> {
    if scale >= 0.0 && scale.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("sampler scale must be finite and >= 0, got {scale}")))
    }
}

/// `E|X|^k = λ^k Γ(1 + kθ)` for a Weibull variable of shape `1/θ` and scale `λ`.
fn weibull_abs_moment(theta: f64, scale: f64, k: f64) -> f64 {
    (k * scale.ln() + ln_gamma(1.0 + k * theta)).exp()
}

/// `sup_{k ≥ 1} ‖X‖_k / k^θ` for a unit-scale distribution with absolute
/// moments `abs_moment`.
///
/// The ratio is decreasing in `k` for all three sampler families (their
/// Γ-function moments grow slower than `k^{kθ}`), so the supremum is found on a
/// dense grid over `[1, 64]`; the result carries a 1e-9 relative pad against
/// rounding.
fn peak_moment_ratio(abs_moment: impl Fn(f64) -> f64, theta: f64) -> f64 {
    let mut best: f64 = 0.0;
    for i in 0..=6300 {
        let k = 1.0 + i as f64 * 0.01;
        let r = abs_moment(k).powf(1.0 / k) / k.powf(theta);
        best = best.max(r);
    }
    best * (1.0 + 1e-9)
}
