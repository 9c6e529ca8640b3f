//! Per-coordinate Gaussian-process regression of a separable input cost
//! `U(x) = Σ_m u_m(x_m)` and the concurrent learner that feeds posterior-mean
//! gradients to the online iteration.
//!
//! Each coordinate has a zero-mean GP with squared-exponential kernel
//! `k(x, x') = σ_f² exp(−(x − x')²/(2ℓ²))`. With `c = (K + σ²I)⁻¹ z`:
//!
//! ```text
//! μ(x)     = k(x)ᵀ c
//! cov(x,x') = k(x, x') − k(x)ᵀ (K + σ²I)⁻¹ k(x')
//! μ'(x)    = Σ_i c_i (x_i − x)/ℓ² k(x_i, x)
//! ```

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algorithm::InputCostGradient;
use crate::error::{Error, Result};
use crate::problem::TimeVaryingProblem;
use crate::subweibull::ErrorSampler;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SEKernel {
    pub sigma_f2: f64,
    pub ell: f64,
}

impl SEKernel {
    pub fn new(sigma_f2: f64, ell: f64) -> Result<Self> {
        if !(sigma_f2 > 0.0 && sigma_f2.is_finite() && ell > 0.0 && ell.is_finite()) {
            return Err(Error::invalid(format!("kernel needs sigma_f2 > 0 and ell > 0, got ({sigma_f2}, {ell})")));
        }
        Ok(Self { sigma_f2, ell })
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let d = x - y;
        self.sigma_f2 * (-d * d / (2.0 * self.ell * self.ell)).exp()
    }

    /// `∂k(site, x)/∂x`.
    pub fn d_eval(&self, site: f64, x: f64) -> f64 {
        (site - x) / (self.ell * self.ell) * self.eval(site, x)
    }
}

/// Serializable posterior state; the factorization is rebuilt on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpState {
    pub kernel: SEKernel,
    pub noise_var: f64,
    pub sites: Vec<f64>,
    pub values: Vec<f64>,
}

/// Immutable posterior snapshot with a cached Cholesky factor of `K + σ²I`.
#[derive(Debug, Clone)]
pub struct GPPosterior {
    kernel: SEKernel,
    noise_var: f64,
    sites: Vec<f64>,
    values: Vec<f64>,
    /// Lower Cholesky factor.
    chol_l: DMatrix<f64>,
    coef: DVector<f64>,
}

impl GPPosterior {
    /// Prior (no data).
    pub fn prior(kernel: SEKernel, noise_var: f64) -> Result<Self> {
        Self::fit(kernel, noise_var, Vec::new(), Vec::new())
    }

    pub fn fit(kernel: SEKernel, noise_var: f64, sites: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if !(noise_var >= 0.0 && noise_var.is_finite()) {
            return Err(Error::invalid(format!("noise variance must be >= 0, got {noise_var}")));
        }
        if sites.len() != values.len() {
            return Err(Error::DimensionMismatch { context: "GP values", expected: sites.len(), found: values.len() });
        }
        if sites.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::invalid("GP data must be finite"));
        }
        if noise_var == 0.0 {
            let mut sorted = sites.clone();
            sorted.sort_by(f64::total_cmp);
            if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
                return Err(Error::Factorization(format!("duplicate site {} with zero observation noise", w[0])));
            }
        }
        let q = sites.len();
        let diag = if noise_var > 0.0 { noise_var } else { 1e-10 * kernel.sigma_f2 };
        let gram = DMatrix::from_fn(q, q, |i, j| kernel.eval(sites[i], sites[j]) + if i == j { diag } else { 0.0 });
        let chol = gram.cholesky().ok_or_else(|| Error::Factorization(format!("K + sigma^2 I is not positive definite ({q} sites)")))?;
        let coef = chol.solve(&DVector::from_column_slice(&values));
        Ok(Self { kernel, noise_var, sites, values, chol_l: chol.l(), coef })
    }

    pub fn from_state(state: &GpState) -> Result<Self> {
        Self::fit(state.kernel, state.noise_var, state.sites.clone(), state.values.clone())
    }

    pub fn state(&self) -> GpState {
        GpState { kernel: self.kernel, noise_var: self.noise_var, sites: self.sites.clone(), values: self.values.clone() }
    }

    pub fn kernel(&self) -> SEKernel {
        self.kernel
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn sites(&self) -> &[f64] {
        &self.sites
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    fn k_vec(&self, x: f64) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.sites.iter().map(|s| self.kernel.eval(*s, x)))
    }

    pub fn posterior_mean(&self, x: f64) -> f64 {
        self.sites.iter().zip(self.coef.iter()).map(|(s, c)| c * self.kernel.eval(*s, x)).sum()
    }

    pub fn posterior_cov(&self, x: f64, y: f64) -> f64 {
        if self.is_empty() {
            return self.kernel.eval(x, y);
        }
        let vx = self.chol_l.solve_lower_triangular(&self.k_vec(x)).expect("nonsingular factor");
        let vy = self.chol_l.solve_lower_triangular(&self.k_vec(y)).expect("nonsingular factor");
        self.kernel.eval(x, y) - vx.dot(&vy)
    }

    /// Diagonal of the posterior covariance, floored at 0.
    pub fn posterior_var(&self, x: f64) -> f64 {
        self.posterior_cov(x, x).max(0.0)
    }

    /// Analytic derivative of the posterior mean.
    pub fn posterior_mean_gradient(&self, x: f64) -> f64 {
        self.sites.iter().zip(self.coef.iter()).map(|(s, c)| c * self.kernel.d_eval(*s, x)).sum()
    }

    /// New posterior with `(x, z)` appended; the factorization is rebuilt.
    pub fn add_observation(&self, x: f64, z: f64) -> Result<Self> {
        let mut sites = self.sites.clone();
        let mut values = self.values.clone();
        sites.push(x);
        values.push(z);
        Self::fit(self.kernel, self.noise_var, sites, values)
    }

    /// `log N(z; μ(x), ς²(x) + σ²)`.
    pub fn log_predictive(&self, x: f64, z: f64) -> f64 {
        let var = self.posterior_var(x) + self.noise_var.max(1e-10 * self.kernel.sigma_f2);
        let r = z - self.posterior_mean(x);
        -0.5 * (r * r / var + var.ln() + (2.0 * std::f64::consts::PI).ln())
    }
}

/// `(μ'_1(x_1), ..., μ'_M(x_M))`.
pub fn estimate_u_gradient(gps: &[GPPosterior], x: &DVector<f64>) -> Result<DVector<f64>> {
    if gps.len() != x.len() {
        return Err(Error::DimensionMismatch { context: "GP per coordinate", expected: x.len(), found: gps.len() });
    }
    Ok(DVector::from_iterator(x.len(), gps.iter().zip(x.iter()).map(|(gp, xm)| gp.posterior_mean_gradient(*xm))))
}

/// How the learner handles data once the true cost changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataPolicy {
    /// One posterior per coordinate holding every observation ever made.
    KeepAll,
    /// A bank of cost models. Each new evaluation is checked against the
    /// active model's predictive distribution; an inconsistent evaluation
    /// moves the learner to a stored model that explains it, or opens a new
    /// one. No observation is discarded and the learner is never told when
    /// the cost changes.
    Bank,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub policy: DataPolicy,
    /// Functional evaluations every `eval_period` steps.
    pub eval_period: usize,
    /// Number of initial evaluations per coordinate, evenly spaced over the step-0 box.
    pub n_initial: usize,
    /// Standard deviation of the evaluation noise.
    pub obs_std: f64,
    /// Consistency test: `|z − μ(x)| ≤ κ sqrt(ς²(x) + σ²) + tol`.
    pub consistency_sigmas: f64,
    pub consistency_tol: f64,
    /// An inconsistent evaluation opens a new model only once the active one
    /// holds at least this many observations; a younger model may still hand
    /// over to a stored model that explains the evaluation.
    pub min_model_size: usize,
}

/// Model switch recorded by the bank policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSwitch {
    pub t: usize,
    pub from: usize,
    pub to: usize,
}

/// Concurrent learner: supplies `∇μ_t(x)` and collects a noisy evaluation
/// `z_m = u_m(x_m) + ϖ` of every coordinate every `eval_period` steps.
pub struct GpLearner<'a> {
    problem: &'a TimeVaryingProblem,
    cfg: LearnerConfig,
    kernels: Vec<SEKernel>,
    noise: ErrorSampler,
    rng: ChaCha8Rng,
    models: Vec<Vec<GPPosterior>>,
    active: usize,
    switches: Vec<ModelSwitch>,
    failure: Option<Error>,
}

impl<'a> GpLearner<'a> {
    /// Seeds every coordinate with `n_initial` noisy evaluations of `U_0`.
    pub fn new(problem: &'a TimeVaryingProblem, kernels: Vec<SEKernel>, cfg: LearnerConfig, mut rng: ChaCha8Rng) -> Result<Self> {
        let m = problem.n_inputs();
        if kernels.len() != m {
            return Err(Error::DimensionMismatch { context: "GP kernels", expected: m, found: kernels.len() });
        }
        if cfg.eval_period == 0 {
            return Err(Error::invalid("evaluation period must be at least 1 step"));
        }
        if cfg.n_initial == 0 {
            return Err(Error::invalid("at least one initial evaluation per coordinate is required"));
        }
        let noise = ErrorSampler::gaussian(cfg.obs_std)?;
        let noise_var = cfg.obs_std * cfg.obs_std;
        let (lo, hi) = (problem.boxes().lower(0), problem.boxes().upper(0));
        let u0 = problem.input_cost(0);
        let mut model = Vec::with_capacity(m);
        for (i, kernel) in kernels.iter().enumerate() {
            let sites: Vec<f64> = (0..cfg.n_initial)
                .map(|j| {
                    if cfg.n_initial == 1 {
                        0.5 * (lo[i] + hi[i])
                    } else {
                        lo[i] + (hi[i] - lo[i]) * j as f64 / (cfg.n_initial - 1) as f64
                    }
                })
                .collect();
            let values = sites.iter().map(|s| u0.coordinate_value(i, *s) + noise.sample(&mut rng)).collect();
            model.push(GPPosterior::fit(*kernel, noise_var, sites, values)?);
        }
        Ok(Self { problem, cfg, kernels, noise, rng, models: vec![model], active: 0, switches: Vec::new(), failure: None })
    }

    pub fn active_model(&self) -> &[GPPosterior] {
        &self.models[self.active]
    }

    pub fn n_models(&self) -> usize {
        self.models.len()
    }

    pub fn switches(&self) -> &[ModelSwitch] {
        &self.switches
    }

    /// First factorization error met while learning, if any.
    pub fn take_failure(&mut self) -> Option<Error> {
        self.failure.take()
    }

    fn consistent(&self, model: &[GPPosterior], x: &DVector<f64>, z: &[f64]) -> bool {
        model.iter().enumerate().all(|(m, gp)| {
            let sd = (gp.posterior_var(x[m]) + gp.noise_var()).sqrt();
            (z[m] - gp.posterior_mean(x[m])).abs() <= self.cfg.consistency_sigmas * sd + self.cfg.consistency_tol
        })
    }

    fn log_predictive(model: &[GPPosterior], x: &DVector<f64>, z: &[f64]) -> f64 {
        model.iter().enumerate().map(|(m, gp)| gp.log_predictive(x[m], z[m])).sum()
    }

    fn absorb(&mut self, x: &DVector<f64>, t: usize) -> Result<()> {
        let u = self.problem.input_cost(t);
        let z: Vec<f64> = (0..x.len()).map(|m| u.coordinate_value(m, x[m]) + self.noise.sample(&mut self.rng)).collect();
        let mut target = self.active;
        if self.cfg.policy == DataPolicy::Bank && !self.consistent(&self.models[self.active], x, &z) {
            let best = (0..self.models.len())
                .filter(|&r| r != self.active && self.consistent(&self.models[r], x, &z))
                .map(|r| (r, Self::log_predictive(&self.models[r], x, &z)))
                .max_by(|a, b| a.1.total_cmp(&b.1));
            let mature = self.models[self.active][0].len() >= self.cfg.min_model_size;
            target = match best {
                Some((r, _)) => r,
                // A young model absorbs the surprise instead of spawning another.
                None if !mature => self.active,
                None => {
                    let fresh = self
                        .kernels
                        .iter()
                        .map(|k| GPPosterior::prior(*k, self.cfg.obs_std * self.cfg.obs_std))
                        .collect::<Result<Vec<_>>>()?;
                    self.models.push(fresh);
                    self.models.len() - 1
                }
            };
            if target != self.active {
                self.switches.push(ModelSwitch { t, from: self.active, to: target });
                self.active = target;
            }
        }
        let updated = self.models[target].iter().enumerate().map(|(m, gp)| gp.add_observation(x[m], z[m])).collect::<Result<Vec<_>>>()?;
        self.models[target] = updated;
        Ok(())
    }
}

impl InputCostGradient for GpLearner<'_> {
    fn gradient(&mut self, x: &DVector<f64>, _t: usize) -> DVector<f64> {
        estimate_u_gradient(&self.models[self.active], x).expect("one posterior per coordinate")
    }

    fn after_step(&mut self, x: &DVector<f64>, t: usize) {
        if t == 0 || !t.is_multiple_of(self.cfg.eval_period) || self.failure.is_some() {
            return;
        }
        if let Err(e) = self.absorb(x, t) {
            self.failure = Some(e);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::par::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn kernel() -> SEKernel {
        SEKernel::new(1.3, 0.7).unwrap()
    }

    fn random_gp(seed: u64, q: usize, noise_var: f64) -> GPPosterior {
        let mut rng = stream_rng(seed, 0);
        let k = SEKernel::new(rng.random_range(0.5..3.0), rng.random_range(0.3..2.0)).unwrap();
        let sites: Vec<f64> = (0..q).map(|_| rng.random_range(-3.0..3.0)).collect();
        let values = (0..q).map(|_| rng.random_range(-2.0..2.0)).collect();
        GPPosterior::fit(k, noise_var, sites, values).unwrap()
    }

    #[test]
    fn kernel_examples() {
        let k = kernel();
        assert_eq!(k.eval(0.4, 0.4), 1.3);
        assert!((k.eval(0.0, 0.7) - 1.3 * (-0.5f64).exp()).abs() < 1e-15);
        assert_eq!(k.eval(0.1, -2.0), k.eval(-2.0, 0.1));
        assert!(SEKernel::new(0.0, 1.0).is_err());
        assert!(SEKernel::new(1.0, -1.0).is_err());
    }

    #[test]
    fn posterior_mean_examples() {
        let gp = GPPosterior::fit(kernel(), 0.0, vec![0.3], vec![2.5]).unwrap();
        assert!((gp.posterior_mean(0.3) - 2.5).abs() < 1e-9);

        let gp = random_gp(1, 5, 0.01);
        let far = 3.0 + 20.0 * gp.kernel().ell + 1.0;
        let zmax = gp.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(gp.posterior_mean(far).abs() < 1e-10 * zmax * 5.0);

        // Dense-solve oracle (LU, independent of the Cholesky path).
        let gp = random_gp(2, 5, 0.05);
        let q = gp.len();
        let k = gp.kernel();
        let gram = DMatrix::from_fn(q, q, |i, j| k.eval(gp.sites()[i], gp.sites()[j]) + if i == j { 0.05 } else { 0.0 });
        let c = gram.lu().solve(&DVector::from_column_slice(gp.values())).unwrap();
        for x in [-2.0, -0.1, 0.77, 2.9] {
            let direct: f64 = (0..q).map(|i| c[i] * k.eval(gp.sites()[i], x)).sum();
            assert!((direct - gp.posterior_mean(x)).abs() < 1e-10);
        }
    }

    #[test]
    fn posterior_cov_and_var_examples() {
        let prior = GPPosterior::prior(kernel(), 0.1).unwrap();
        assert_eq!(prior.posterior_var(0.5), 1.3);
        assert_eq!(prior.posterior_mean(0.5), 0.0);
        assert_eq!(prior.posterior_mean_gradient(0.5), 0.0);

        let gp = GPPosterior::fit(kernel(), 0.0, vec![0.3], vec![2.5]).unwrap();
        assert!(gp.posterior_cov(0.3, 0.3).abs() < 1e-9);

        let gp = random_gp(3, 6, 0.02);
        let mut rng = stream_rng(3, 1);
        for _ in 0..50 {
            let (x, y) = (rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
            assert!(gp.posterior_cov(x, x) <= gp.kernel().eval(x, x));
            assert!(gp.posterior_cov(x, x) >= -1e-10);
            assert!((gp.posterior_cov(x, y) - gp.posterior_cov(y, x)).abs() < 1e-12);
        }
    }

    #[test]
    fn add_observation_examples() {
        let gp = random_gp(4, 4, 0.0);
        let next = gp.add_observation(5.0, -1.25).unwrap();
        assert_eq!(next.len(), gp.len() + 1);
        assert!((next.posterior_mean(5.0) + 1.25).abs() < 1e-8);
        assert!(matches!(next.add_observation(5.0, 0.0), Err(Error::Factorization(_))));

        let gp = random_gp(5, 4, 0.05);
        let mut rng = stream_rng(5, 1);
        let next = gp.add_observation(0.4, 1.0).unwrap();
        for _ in 0..20 {
            let x = rng.random_range(-4.0..4.0);
            assert!(next.posterior_var(x) <= gp.posterior_var(x) + 1e-12);
        }
        assert!(next.posterior_var(0.4) <= gp.posterior_var(0.4));
    }

    #[test]
    fn noiseless_interpolation() {
        for seed in 0..10 {
            // Sites at least half a length-scale apart keep K well conditioned.
            let mut rng = stream_rng(seed, 3);
            let k = SEKernel::new(rng.random_range(0.5..3.0), rng.random_range(0.3..1.0)).unwrap();
            let sites: Vec<f64> = (0..6).map(|i| i as f64 * 0.5 * k.ell + rng.random_range(0.0..0.1)).collect();
            let values = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let gp = GPPosterior::fit(k, 1e-12, sites, values).unwrap();
            for (s, z) in gp.sites().iter().zip(gp.values()) {
                assert!((gp.posterior_mean(*s) - z).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..50 {
            let gp = random_gp(100 + seed, 1 + seed as usize % 8, 0.01);
            let mut rng = stream_rng(seed, 2);
            let x = rng.random_range(-3.5..3.5);
            let h = 1e-6;
            let fd = (gp.posterior_mean(x + h) - gp.posterior_mean(x - h)) / (2.0 * h);
            let an = gp.posterior_mean_gradient(x);
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "seed {seed}: {fd} vs {an}");
        }
        let gp = GPPosterior::fit(kernel(), 0.0, vec![0.9], vec![3.0]).unwrap();
        assert!(gp.posterior_mean_gradient(0.9).abs() < 1e-12);
        let gp = GPPosterior::fit(kernel(), 0.1, vec![0.0, 1.0, 2.0], vec![0.0; 3]).unwrap();
        assert_eq!(gp.posterior_mean_gradient(0.5), 0.0);
    }

    #[test]
    fn estimate_u_gradient_examples() {
        // Dense noiseless samples of x² over [−5, 5].
        let sites: Vec<f64> = (0..=20).map(|i| -5.0 + 0.5 * i as f64).collect();
        let values: Vec<f64> = sites.iter().map(|s| s * s).collect();
        let k = SEKernel::new(100.0, 2.0).unwrap();
        let gp = GPPosterior::fit(k, 1e-10, sites, values).unwrap();
        let gps = vec![gp.clone(), gp.clone(), gp];
        let x = DVector::from_vec(vec![-3.3, 0.2, 4.0]);
        let g = estimate_u_gradient(&gps, &x).unwrap();
        for m in 0..3 {
            assert!((g[m] - 2.0 * x[m]).abs() < 0.05, "{} vs {}", g[m], 2.0 * x[m]);
        }
        let mut y = x.clone();
        y[0] = 1.0;
        let g2 = estimate_u_gradient(&gps, &y).unwrap();
        assert_eq!(g[1], g2[1]);
        assert_eq!(g[2], g2[2]);

        let priors = vec![GPPosterior::prior(k, 0.1).unwrap(); 3];
        assert_eq!(estimate_u_gradient(&priors, &x).unwrap(), DVector::zeros(3));
        assert!(estimate_u_gradient(&priors[..2], &x).is_err());
    }

    #[test]
    fn state_round_trip() {
        let gp = random_gp(7, 5, 0.01);
        let json = serde_json::to_string(&gp.state()).unwrap();
        let back = GPPosterior::from_state(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.state(), gp.state());
        assert_eq!(back.posterior_mean(0.3), gp.posterior_mean(0.3));
    }

    #[test]
    fn gradient_error_is_sub_gaussian_under_the_prior() {
        // u ~ GP(0, k) sampled on a grid, observed with noise at 8 sites; the
        // standardized gradient error at a fixed point must respect the
        // θ = 1/2 tail P[|X| ≥ ε] ≤ 2 exp(−(ε/ν₁)²) with ν = 1 standardization.
        let k = SEKernel::new(1.0, 1.0).unwrap();
        let noise_var = 0.01;
        let grid: Vec<f64> = (0..=80).map(|i| -4.0 + 0.1 * i as f64).collect();
        let n = grid.len();
        let cov = DMatrix::from_fn(n, n, |i, j| k.eval(grid[i], grid[j]) + if i == j { 1e-9 } else { 0.0 });
        let l = cov.cholesky().unwrap().l();
        let mut rng = stream_rng(17, 0);
        let obs_idx = [2usize, 12, 22, 32, 48, 58, 68, 78];
        let query = 40; // x = 0
        let mut errs = Vec::new();
        for _ in 0..2000 {
            let z = DVector::from_fn(n, |_, _| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng));
            let u = &l * z;
            let true_grad = (u[query + 1] - u[query - 1]) / 0.2;
            let sites: Vec<f64> = obs_idx.iter().map(|i| grid[*i]).collect();
            let values: Vec<f64> = obs_idx
                .iter()
                .map(|i| u[*i] + 0.1 * rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng))
                .collect();
            let gp = GPPosterior::fit(k, noise_var, sites, values).unwrap();
            errs.push(gp.posterior_mean_gradient(grid[query]) - true_grad);
        }
        let sd = (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt();
        let class = crate::subweibull::ErrorSampler::gaussian(1.0).unwrap().declared();
        for eps in [1.0, 2.0, 3.0] {
            let freq = errs.iter().filter(|e| (*e / sd).abs() >= eps).count() as f64 / errs.len() as f64;
            assert!(freq <= class.tail_prob_bound(eps).unwrap() + 0.01, "eps {eps}: {freq}");
        }
    }

    proptest! {
        #[test]
        fn analytic_gradient_matches_fd(seed in 0u64..10_000, q in 1usize..10, x in -4.0f64..4.0, noise in 1e-6f64..1.0) {
            let gp = random_gp(seed, q, noise);
            let h = 1e-6;
            let fd = (gp.posterior_mean(x + h) - gp.posterior_mean(x - h)) / (2.0 * h);
            let an = gp.posterior_mean_gradient(x);
            prop_assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0));
        }

        #[test]
        fn variance_nonnegative(seed in 0u64..10_000, q in 1usize..12, x in -6.0f64..6.0) {
            let gp = random_gp(seed, q, 1e-8);
            prop_assert!(gp.posterior_cov(x, x) >= -1e-10);
            prop_assert!(gp.posterior_var(x) >= 0.0);
        }
    }
}
