//! Tracking-error bounds.
//!
//! With `ρ_t = 1 − p + p ζ_t`:
//!
//! * expectation bound: `E d_t ≤ β_t d_0 + Σ_{i=1}^t (κ_i φ_{i−1} + α p ω_i E_i)` where
//!   `β_t = Π_{i=1}^t ρ_i`, `κ_i = Π_{k=i}^t ρ_k`, `ω_i = Π_{k=i+1}^t ρ_k`;
//! * its sup-relaxation `ρ^t d_0 + (sup φ + α p sup E)/(1 − ρ)`;
//! * the high-probability bound
//!   `log^{θ_x}(2/δ) (2e/θ_x)^{θ_x} (η(t) d_0 + (1 − ζ^t)/(1 − ζ) sup_{i ≤ t}(α ν_{e,i} + φ_i/p))`
//!   with `η(t) = max_k (1 − p + ζ^k p)^{t/k}/√k`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::csvout::{fmt_num, CsvTable};
use crate::error::{Error, Result};
use crate::par::{map_indexed, stream_rng, Execution};
use crate::subweibull::{ErrorSampler, SubWeibull};

/// `max{|1 − αμ|, |1 − αL|}`.
pub fn zeta(alpha: f64, mu: f64, l: f64) -> f64 {
    (1.0 - alpha * mu).abs().max((1.0 - alpha * l).abs())
}

/// `‖ζ^{Ω_t}‖_k = (1 − p + ζ^k p)^{t/k}` for `Ω_t ~ Binomial(t, p)`.
pub fn binomial_moment(zeta: f64, p: f64, t: f64, k: f64) -> f64 {
    (1.0 - p + zeta.powf(k) * p).powf(t / k)
}

/// `η(t)` and the maximizing `k` over the integer grid `1..=k_max`.
pub fn eta_argmax(t: usize, p: f64, zeta: f64, k_max: usize) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 1);
    for k in 1..=k_max.max(1) {
        let kf = k as f64;
        let log_val = (t as f64 / kf) * (1.0 - p + zeta.powi(k as i32) * p).ln() - 0.5 * kf.ln();
        if log_val > best.0 {
            best = (log_val, k);
        }
    }
    (best.0.exp(), best.1)
}

pub fn eta(t: usize, p: f64, zeta: f64, k_max: usize) -> f64 {
    eta_argmax(t, p, zeta, k_max).0
}

/// Grid cap used by [`hp_bound_trajectory`].
///
/// Once `ζ^k p` is negligible the objective behaves like
/// `(1 − p)^{t/k}/√k`, which peaks at `k = 2t|ln(1 − p)|`; the cap is twice
/// that (and at least `max(t, 100)`), so the maximizer stays interior.
pub fn default_k_max(t: usize, p: f64) -> usize {
    let base = t.max(100);
    if p >= 1.0 {
        return base;
    }
    let peak = 4.0 * t as f64 * (-(1.0 - p).ln());
    base.max(peak.ceil() as usize)
}

/// Per-step data the bounds are evaluated on. Vectors are indexed by step:
/// `zeta[t]` and `e_mean[t]`, `nu_e[t]` for `t = 0..=T` (entry 0 is used only
/// inside the high-probability sup), `phi[t]` for `t = 0..T` or longer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub alpha: f64,
    pub p: f64,
    pub zeta: Vec<f64>,
    pub phi: Vec<f64>,
    pub e_mean: Vec<f64>,
    pub nu_e: Vec<f64>,
    pub theta_eps: f64,
    pub theta_xi: f64,
    pub d0: f64,
}

impl BoundInputs {
    /// Largest `T` the inputs cover.
    pub fn horizon(&self) -> usize {
        self.zeta.len().min(self.e_mean.len()).min(self.nu_e.len()).saturating_sub(1)
    }

    fn check(&self, horizon: usize) -> Result<()> {
        if horizon > self.horizon() || self.phi.len() < horizon {
            return Err(Error::OutOfHorizon { t: horizon, horizon: self.horizon().min(self.phi.len()) });
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::invalid(format!("p must lie in (0, 1], got {}", self.p)));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::invalid("alpha must be > 0"));
        }
        if let Some(z) = self.zeta[..=horizon].iter().find(|z| !(**z >= 0.0 && **z < 1.0)) {
            return Err(Error::invalid(format!(
                "contraction factor zeta = {z} is not in [0, 1); the step size must satisfy 0 < alpha < 2/L"
            )));
        }
        Ok(())
    }

    pub fn rho(&self, t: usize) -> f64 {
        1.0 - self.p + self.p * self.zeta[t]
    }

    fn phi_clamped(&self, i: usize) -> f64 {
        self.phi.get(i).copied().unwrap_or_else(|| self.phi.last().copied().unwrap_or(0.0))
    }
}

/// Bound values at `t = 0..=T` with their additive decomposition
/// `bound = transient + path + error`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCurve {
    pub bound: Vec<f64>,
    pub transient: Vec<f64>,
    pub path: Vec<f64>,
    pub error: Vec<f64>,
}

impl BoundCurve {
    fn from_terms(terms: Vec<(f64, f64, f64)>) -> Self {
        let mut c = BoundCurve { bound: vec![], transient: vec![], path: vec![], error: vec![] };
        for (a, b, e) in terms {
            c.bound.push(a + b + e);
            c.transient.push(a);
            c.path.push(b);
            c.error.push(e);
        }
        c
    }

    pub fn len(&self) -> usize {
        self.bound.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bound.is_empty()
    }

    pub fn to_table(&self) -> CsvTable {
        let mut table = CsvTable::new(["t", "bound", "transient_term", "path_term", "error_term"]);
        for t in 0..self.len() {
            table.push(vec![
                t.to_string(),
                fmt_num(self.bound[t]),
                fmt_num(self.transient[t]),
                fmt_num(self.path[t]),
                fmt_num(self.error[t]),
            ]);
        }
        table
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        self.to_table().write(w)
    }
}

/// Expectation bound at `t = 0..=T`, evaluated directly from the product
/// definitions (accumulated in log-space, `O(T²)`, parallel across `t`).
pub fn expectation_bound(inputs: &BoundInputs, horizon: usize, exec: Execution) -> Result<BoundCurve> {
    inputs.check(horizon)?;
    let ln_rho: Vec<f64> = (0..=horizon).map(|t| inputs.rho(t).ln()).collect();
    let ap = inputs.alpha * inputs.p;
    let terms = map_indexed(exec, horizon + 1, |t| {
        // Walk i = t, t−1, ..., 1 keeping log Π_{k=i+1}^t ρ_k.
        let mut log_omega: f64 = 0.0;
        let mut path = 0.0;
        let mut error = 0.0;
        for i in (1..=t).rev() {
            let omega = log_omega.exp();
            let kappa = (log_omega + ln_rho[i]).exp();
            path += kappa * inputs.phi[i - 1];
            error += ap * omega * inputs.e_mean[i];
            log_omega += ln_rho[i];
        }
        (log_omega.exp() * inputs.d0, path, error)
    });
    Ok(BoundCurve::from_terms(terms))
}

/// The same bound via `b_t = ρ_t (b_{t−1} + φ_{t−1}) + α p E_t`; used as a
/// cross-check of [`expectation_bound`].
pub fn expectation_bound_recursive(inputs: &BoundInputs, horizon: usize) -> Result<Vec<f64>> {
    inputs.check(horizon)?;
    let mut out = vec![inputs.d0];
    for t in 1..=horizon {
        let prev = out[t - 1];
        out.push(inputs.rho(t) * (prev + inputs.phi[t - 1]) + inputs.alpha * inputs.p * inputs.e_mean[t]);
    }
    Ok(out)
}

/// `ρ̄^t d_0 + sup φ/(1 − ρ̄) + α p sup E/(1 − ρ̄)` with `ρ̄`, `sup φ`, `sup E`
/// taken over the steps up to `t`.
pub fn expectation_bound_asymptotic(inputs: &BoundInputs, horizon: usize) -> Result<BoundCurve> {
    inputs.check(horizon)?;
    let mut rho_bar: f64 = inputs.rho(0);
    let mut sup_phi: f64 = 0.0;
    let mut sup_e: f64 = 0.0;
    let mut terms = Vec::with_capacity(horizon + 1);
    for t in 0..=horizon {
        if t >= 1 {
            rho_bar = rho_bar.max(inputs.rho(t));
            sup_phi = sup_phi.max(inputs.phi[t - 1]);
            sup_e = sup_e.max(inputs.e_mean[t]);
        }
        if rho_bar >= 1.0 {
            return Err(Error::invalid("sup rho >= 1: the asymptotic bound needs p > 0 and 0 < alpha < 2/L"));
        }
        let gap = 1.0 - rho_bar;
        terms.push((rho_bar.powi(t as i32) * inputs.d0, sup_phi / gap, inputs.alpha * inputs.p * sup_e / gap));
    }
    Ok(BoundCurve::from_terms(terms))
}

/// `log^θ(2/δ) (2e/θ)^θ`.
pub fn hp_factor(theta: f64, delta: f64) -> Result<f64> {
    SubWeibull::new(theta, 1.0)?.hp_bound(delta)
}

/// High-probability bound at `t = 0..=T` (holds for each `t` with probability `1 − δ`).
///
/// The sup term is split between `path` and `error` at its maximizing index.
pub fn hp_bound_trajectory(inputs: &BoundInputs, horizon: usize, delta: f64, exec: Execution) -> Result<BoundCurve> {
    inputs.check(horizon)?;
    let theta_x = 1f64.max(inputs.theta_eps).max(inputs.theta_xi);
    let factor = hp_factor(theta_x, delta)?;
    // Prefix sup of ζ and prefix argmax of α ν_e,i + φ_i / p.
    let mut zeta_bar = Vec::with_capacity(horizon + 1);
    let mut arg = Vec::with_capacity(horizon + 1);
    let mut best = (f64::NEG_INFINITY, 0usize);
    let mut z: f64 = 0.0;
    for t in 0..=horizon {
        z = z.max(inputs.zeta[t]);
        zeta_bar.push(z);
        let v = inputs.alpha * inputs.nu_e[t] + inputs.phi_clamped(t) / inputs.p;
        if v > best.0 {
            best = (v, t);
        }
        arg.push(best.1);
    }
    let terms = map_indexed(exec, horizon + 1, |t| {
        let zt = zeta_bar[t];
        let transient = factor * eta(t, inputs.p, zt, default_k_max(t, inputs.p)) * inputs.d0;
        let geo = if t == 0 { 0.0 } else { (1.0 - zt.powi(t as i32)) / (1.0 - zt) };
        let i = arg[t];
        (transient, factor * geo * inputs.phi_clamped(i) / inputs.p, factor * geo * inputs.alpha * inputs.nu_e[i])
    });
    Ok(BoundCurve::from_terms(terms))
}

/// Gradient-error model `e = ε + ξ + B n` (entrywise i.i.d. `ε`, `ξ`, `n`).
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorModel {
    pub dim: usize,
    pub eps: ErrorSampler,
    pub xi: ErrorSampler,
    /// Optional `(B, sampler)` with `B = β Gᵀ` mapping measurement noise into the gradient.
    pub noise: Option<(DMatrix<f64>, ErrorSampler)>,
}

impl ErrorModel {
    pub fn new(dim: usize, eps: ErrorSampler, xi: ErrorSampler) -> Self {
        Self { dim, eps, xi, noise: None }
    }

    pub fn sample_norm<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mut e = DVector::from_fn(self.dim, |_, _| self.eps.sample(rng));
        for v in e.iter_mut() {
            *v += self.xi.sample(rng);
        }
        if let Some((b, s)) = &self.noise {
            let n = DVector::from_fn(b.ncols(), |_, _| s.sample(rng));
            e += b * n;
        }
        e.norm()
    }

    /// Sub-Weibull class of the entries of `ξ + B n`: `ξ` plus, per row `m`,
    /// `Σ_j |B_mj| ν_n` by the scaling and sum rules (maximized over rows).
    pub fn effective_xi_class(&self) -> SubWeibull {
        let xi = self.xi.declared();
        match &self.noise {
            None => xi,
            Some((b, s)) => {
                let row_sum = (0..b.nrows()).map(|m| b.row(m).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
                xi.add(&s.declared().scale(row_sum))
            }
        }
    }

    /// Class of `‖e‖` by the vector-norm lemma.
    pub fn norm_class(&self) -> Result<SubWeibull> {
        crate::subweibull::vector_norm_class(self.dim, &self.eps.declared(), &self.effective_xi_class())
    }

    pub fn is_zero(&self) -> bool {
        self.eps.is_zero() && self.xi.is_zero() && self.noise.as_ref().is_none_or(|(_, s)| s.is_zero())
    }
}

/// Monte Carlo estimate of `E‖e‖`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorNormEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

impl ErrorNormEstimate {
    /// `mean + 3 SE`, the value used as `E_t` in the expectation bound.
    pub fn upper(&self) -> f64 {
        self.mean + 3.0 * self.std_error
    }
}

const CHUNK: usize = 4096;

/// Estimates `E‖e‖` from `n_samples ≥ 10⁴` draws; chunks use their own RNG
/// streams so the result does not depend on the worker count.
pub fn expected_error_norm(model: &ErrorModel, n_samples: usize, seed: u64, exec: Execution) -> Result<ErrorNormEstimate> {
    if n_samples < 10_000 {
        return Err(Error::invalid(format!("expected_error_norm needs at least 10^4 samples, got {n_samples}")));
    }
    if model.is_zero() {
        return Ok(ErrorNormEstimate { mean: 0.0, std_error: 0.0, n_samples });
    }
    let n_chunks = n_samples.div_ceil(CHUNK);
    let sums = map_indexed(exec, n_chunks, |c| {
        let mut rng = stream_rng(seed, c as u64);
        let count = CHUNK.min(n_samples - c * CHUNK);
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..count {
            let v = model.sample_norm(&mut rng);
            s += v;
            s2 += v * v;
        }
        (s, s2)
    });
    let (s, s2) = sums.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = n_samples as f64;
    let mean = s / n;
    let var = ((s2 - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(ErrorNormEstimate { mean, std_error: (var / n).sqrt(), n_samples })
}
