//! Monte Carlo checks of the bounds and of the sampler tail declarations.
//!
//! Every check yields one [`CheckResult`] carrying both the empirical
//! statistic and the theoretical value it is compared against. All trials
//! draw from per-index streams, so reports do not depend on the worker count.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::Serialize;
use statrs::distribution::{Binomial as BinomialLaw, DiscreteCDF};

use crate::algorithm::{run_with, AlgoConfig, ExactInputCost};
use crate::bounds::{
    binomial_moment, expectation_bound, expected_error_norm, hp_bound_trajectory, zeta, BoundCurve, BoundInputs, ErrorModel,
    ErrorNormEstimate,
};
use crate::config::ValidationConfig;
use crate::csvout::{fmt_num, CsvTable};
use crate::error::{Error, Result};
use crate::par::{derive_seed, map_indexed, stream_rng, Execution};
use crate::problem::{BoxSchedule, CostSchedule, LinearPlantMap, OptimumPath, QuadraticInputCost, TimeVaryingProblem};
use crate::subweibull::{vector_norm_class, Dependence, ErrorSampler, SubWeibull};

const TAG_BUILD: u64 = 1;
const TAG_EXPECTATION: u64 = 2;
const TAG_HP: u64 = 3;
const TAG_ERROR_NORM: u64 = 4;
const TAG_MOMENTS: u64 = 5;
const TAG_CALCULUS: u64 = 6;

/// Oracle tolerance of the validation instances.
pub const VALIDATION_ORACLE_TOL: f64 = 1e-12;

/// One row of a [`ValidationReport`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Empirical quantity.
    pub statistic: f64,
    /// Theoretical value the statistic is compared against.
    pub bound: f64,
    pub n_samples: usize,
    pub std_error: f64,
    pub detail: String,
}

impl CheckResult {
    /// `bound / statistic`: how loose the bound is (infinite when the statistic is 0).
    pub fn ratio(&self) -> f64 {
        if self.statistic == 0.0 {
            f64::INFINITY
        } else {
            self.bound / self.statistic
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn n_failed(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed).count()
    }

    pub fn extend(&mut self, other: ValidationReport) {
        self.checks.extend(other.checks);
    }

    pub fn to_table(&self) -> CsvTable {
        let mut t = CsvTable::new(["check", "passed", "statistic", "bound", "ratio", "n_samples", "std_error", "detail"]);
        for c in &self.checks {
            t.push(vec![
                c.name.clone(),
                c.passed.to_string(),
                fmt_num(c.statistic),
                fmt_num(c.bound),
                fmt_num(c.ratio()),
                c.n_samples.to_string(),
                fmt_num(c.std_error),
                c.detail.clone(),
            ]);
        }
        t
    }

    /// Human-readable summary, one line per check.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{} {:<48} stat {:>12.5e}  bound {:>12.5e}  ratio {:>9.3}  {}\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.statistic,
                c.bound,
                c.ratio(),
                c.detail
            ));
        }
        out.push_str(&format!("{} of {} checks passed\n", self.checks.len() - self.n_failed(), self.checks.len()));
        out
    }
}

/// Synthetic instance: `M` inputs, `n_y` outputs with `H = I`, constant `w`,
/// sinusoidally drifting reference, static quadratic cost with `a_m ∈ [0.25, 1]`,
/// box `[−h, h]^M`, and `x_0` at the box corner farthest from `x_{*,0}`.
#[derive(Debug, Clone)]
pub struct SyntheticInstance {
    pub problem: TimeVaryingProblem,
    pub path: OptimumPath,
    pub x0: DVector<f64>,
    pub algo: AlgoConfig,
    pub errors: ErrorModel,
}

/// Builds the synthetic instance with `T = horizon` steps. `drift = false`
/// freezes the reference, which makes the problem static.
pub fn synthetic_instance(v: &ValidationConfig, horizon: usize, drift: bool, seed: u64) -> Result<SyntheticInstance> {
    let mut rng = stream_rng(derive_seed(seed, TAG_BUILD), 0);
    let (m, ny) = (v.n_inputs, v.n_outputs);
    let g = DMatrix::from_fn(ny, m, |_, _| rng.random_range(-1.0..1.0));
    let g = &g / g.singular_values().max();
    let h = DMatrix::identity(ny, ny);
    let a = (0..m).map(|_| rng.random_range(0.25..1.0)).collect();
    let b = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let base: Vec<f64> = (0..ny).map(|_| rng.random_range(-1.0..1.0)).collect();
    let phase: Vec<f64> = (0..ny).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    let w0 = DVector::from_fn(ny, |_, _| rng.random_range(-0.5..0.5));
    let len = horizon + 1;
    let amp = if drift { v.ref_drift_amp } else { 0.0 };
    let y_ref = (0..len)
        .map(|t| DVector::from_fn(ny, |i, _| base[i] + amp * (std::f64::consts::TAU * t as f64 / v.ref_drift_period + phase[i]).sin()))
        .collect();
    let costs = CostSchedule {
        beta: 1.0,
        y_ref,
        w: vec![w0; len],
        palette: vec![QuadraticInputCost::new(a, b, vec![0.0; m])?],
        index: vec![0; len],
    };
    let hw = v.box_half_width;
    let boxes = BoxSchedule::constant(DVector::from_element(m, -hw), DVector::from_element(m, hw), len)?;
    let problem = TimeVaryingProblem::new(LinearPlantMap::new(g, h)?, costs, boxes)?;

    let env = problem.curvature_envelope();
    let alpha = v.alpha.unwrap_or(v.alpha_factor / env.l);
    if alpha >= 2.0 / env.l {
        return Err(Error::Config(format!(
            "validation step size alpha = {alpha} violates the step-size condition 0 < alpha < 2/L = {:.6} (L = {:.6})",
            2.0 / env.l,
            env.l
        )));
    }
    let path = problem.optimum_path(VALIDATION_ORACLE_TOL)?;
    let xs0 = &path.x_star[0];
    let x0 = DVector::from_fn(m, |i, _| if xs0[i] > 0.0 { -hw } else { hw });

    let eps = ErrorSampler::from_kind(v.error_kind, v.error_scale, v.error_theta)?;
    let algo = AlgoConfig { alpha, p: v.p, eps_sampler: eps, xi_sampler: eps, meas_noise: ErrorSampler::zero(), seed };
    algo.validate(&problem)?;
    Ok(SyntheticInstance { problem, path, x0, algo, errors: ErrorModel::new(m, eps, eps) })
}

impl SyntheticInstance {
    pub fn with_p(mut self, p: f64) -> Self {
        self.algo.p = p;
        self
    }

    pub fn zero_errors(mut self) -> Self {
        self.algo.eps_sampler = ErrorSampler::zero();
        self.algo.xi_sampler = ErrorSampler::zero();
        self.errors = ErrorModel::new(self.errors.dim, ErrorSampler::zero(), ErrorSampler::zero());
        self
    }

    pub fn horizon(&self) -> usize {
        self.problem.horizon() - 1
    }

    pub fn zeta(&self) -> f64 {
        let c = self.problem.curvature(0).expect("step 0 exists");
        zeta(self.algo.alpha, c.mu, c.l)
    }

    /// `E‖e‖` estimate (upper end, mean + 3 SE) and the sub-Weibull class of `‖e‖`.
    pub fn error_statistics(&self, n_samples: usize, seed: u64, exec: Execution) -> Result<(ErrorNormEstimate, SubWeibull)> {
        let est = expected_error_norm(&self.errors, n_samples, derive_seed(seed, TAG_ERROR_NORM), exec)?;
        Ok((est, self.errors.norm_class()?))
    }

    pub fn bound_inputs(&self, e_upper: f64, nu_e: f64) -> Result<BoundInputs> {
        let len = self.problem.horizon();
        let zetas = (0..len).map(|t| self.problem.curvature(t).map(|c| zeta(self.algo.alpha, c.mu, c.l))).collect::<Result<Vec<_>>>()?;
        Ok(BoundInputs {
            alpha: self.algo.alpha,
            p: self.algo.p,
            zeta: zetas,
            phi: self.path.phi.clone(),
            e_mean: vec![e_upper; len],
            nu_e: vec![nu_e; len],
            theta_eps: self.algo.eps_sampler.declared().theta(),
            theta_xi: self.algo.xi_sampler.declared().theta(),
            d0: (&self.x0 - &self.path.x_star[0]).norm(),
        })
    }

    /// `d_t` of one trial, `t = 0..=T`.
    pub fn trial(&self, seed: u64, tag: u64, i: usize) -> Result<Vec<f64>> {
        let mut rng = stream_rng(derive_seed(seed, tag), i as u64);
        let traj = run_with(
            &self.problem,
            &self.algo,
            Some(self.x0.clone()),
            self.horizon(),
            &self.path,
            &mut ExactInputCost(&self.problem),
            &mut rng,
        )?;
        Ok(traj.d)
    }
}

/// Empirical `E d_t` against the expectation bound.
#[derive(Debug, Clone)]
pub struct ExpectationCheck {
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    pub bound: BoundCurve,
    pub error_norm: ErrorNormEstimate,
    pub result: CheckResult,
}

impl ExpectationCheck {
    pub fn to_table(&self) -> CsvTable {
        let mut t = CsvTable::new(["t", "mean_d", "std_error", "mean_plus_3se", "bound"]);
        for i in 0..self.mean.len() {
            t.push(vec![
                i.to_string(),
                fmt_num(self.mean[i]),
                fmt_num(self.std_error[i]),
                fmt_num(self.mean[i] + 3.0 * self.std_error[i]),
                fmt_num(self.bound.bound[i]),
            ]);
        }
        t
    }
}

/// Runs `n_trials` trajectories and checks `mean d_t + 3 SE ≤ bound_t` at every `t`.
/// `E_t` enters the bound as the upper end of its Monte Carlo estimate.
pub fn validate_expectation_bound(
    inst: &SyntheticInstance,
    n_trials: usize,
    error_samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<ExpectationCheck> {
    if n_trials < 100 {
        return Err(Error::invalid(format!("the expectation check needs at least 100 trials, got {n_trials}")));
    }
    let horizon = inst.horizon();
    let (est, class) = inst.error_statistics(error_samples, seed, exec)?;
    let inputs = inst.bound_inputs(est.upper(), class.nu())?;
    let bound = expectation_bound(&inputs, horizon, exec)?;
    let runs = map_indexed(exec, n_trials, |i| inst.trial(seed, TAG_EXPECTATION, i)).into_iter().collect::<Result<Vec<_>>>()?;
    let n = n_trials as f64;
    let mut mean = vec![0.0; horizon + 1];
    let mut std_error = vec![0.0; horizon + 1];
    for t in 0..=horizon {
        let mu = runs.iter().map(|d| d[t]).sum::<f64>() / n;
        let var = runs.iter().map(|d| (d[t] - mu).powi(2)).sum::<f64>() / (n - 1.0);
        mean[t] = mu;
        std_error[t] = (var / n).sqrt();
    }
    // d_t is measured against an x_{*,t} known to within the oracle tolerance;
    // the relative part covers the noiseless case, where mean and bound coincide.
    let slack = |b: f64| b * 1e-9 + 10.0 * VALIDATION_ORACLE_TOL;
    let upper: Vec<f64> = (0..=horizon).map(|t| mean[t] + 3.0 * std_error[t]).collect();
    let violations = (0..=horizon).filter(|&t| upper[t] > bound.bound[t] + slack(bound.bound[t])).count();
    let tight =
        (1.min(horizon)..=horizon).max_by(|&a, &b| (upper[a] / bound.bound[a]).total_cmp(&(upper[b] / bound.bound[b]))).unwrap_or(0);
    let result = CheckResult {
        name: "expectation_bound".into(),
        passed: violations == 0,
        statistic: upper[tight],
        bound: bound.bound[tight],
        n_samples: n_trials,
        std_error: std_error[tight],
        detail: format!(
            "mean+3SE vs bound; tightest at t={tight}; violations={violations}/{}; p={}; E|e|<={:.4e}",
            horizon + 1,
            inst.algo.p,
            est.upper()
        ),
    };
    Ok(ExpectationCheck { mean, std_error, bound, error_norm: est, result })
}

/// One-sided 99% critical count for `Binomial(n, δ)`.
pub fn binomial_critical_count(n: usize, delta: f64) -> Result<u64> {
    let law = BinomialLaw::new(delta, n as u64).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(law.inverse_cdf(0.99))
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() as f64 * q).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

/// Exceedance counts of the high-probability bound at each `(δ, t)`.
///
/// Passes iff the frequency is at most `δ`; the detail column also gives the
/// one-sided binomial 99% critical count.
pub fn validate_hp_bound(
    inst: &SyntheticInstance,
    n_trials: usize,
    deltas: &[f64],
    check_times: &[usize],
    error_samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<ValidationReport> {
    if n_trials < 1000 {
        return Err(Error::invalid(format!("the high-probability check needs at least 1000 trials, got {n_trials}")));
    }
    let horizon = inst.horizon();
    if let Some(t) = check_times.iter().find(|t| **t > horizon) {
        return Err(Error::OutOfHorizon { t: *t, horizon });
    }
    let (est, class) = inst.error_statistics(error_samples, seed, exec)?;
    let inputs = inst.bound_inputs(est.upper(), class.nu())?;
    let runs = map_indexed(exec, n_trials, |i| inst.trial(seed, TAG_HP, i).map(|d| check_times.iter().map(|t| d[*t]).collect::<Vec<_>>()))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut report = ValidationReport::default();
    for &delta in deltas {
        let curve = hp_bound_trajectory(&inputs, horizon, delta, exec)?;
        let critical = binomial_critical_count(n_trials, delta)?;
        for (j, &t) in check_times.iter().enumerate() {
            let mut d: Vec<f64> = runs.iter().map(|r| r[j]).collect();
            let b = curve.bound[t];
            let count = d.iter().filter(|v| **v > b).count();
            d.sort_by(f64::total_cmp);
            let q = quantile(&d, 1.0 - delta);
            let freq = count as f64 / n_trials as f64;
            report.checks.push(CheckResult {
                name: format!("hp_bound delta={delta} t={t}"),
                passed: freq <= delta,
                statistic: freq,
                bound: delta,
                n_samples: n_trials,
                std_error: (delta * (1.0 - delta) / n_trials as f64).sqrt(),
                detail: format!(
                    "exceedances={count}; binomial 99% critical={critical}; bound={b:.4e}; empirical {}-quantile={q:.4e}; bound/quantile={:.3}",
                    1.0 - delta,
                    b / q
                ),
            });
        }
    }
    Ok(report)
}

/// Log likelihood ratio of `Ω ~ Binomial(t, p)` against `Binomial(t, q)`.
fn log_weight(omega: u64, t: u64, p: f64, q: f64) -> f64 {
    let tail = if p < 1.0 { (t - omega) as f64 * ((1.0 - p) / (1.0 - q)).ln() } else { 0.0 };
    omega as f64 * (p / q).ln() + tail
}

/// Importance-sampling estimate of `E_p[ζ^{kΩ_t}]` with proposal `Binomial(t, q)`.
fn is_moment<R: Rng>(zeta: f64, p: f64, t: u64, k: f64, q: f64, n: usize, rng: &mut R) -> (f64, f64) {
    let law = Binomial::new(t, q).expect("q in [0, 1]");
    // Neumaier-compensated sum keeps the p = 1 case (n equal terms) exact.
    let (mut s, mut comp, mut s2) = (0.0f64, 0.0f64, 0.0);
    for _ in 0..n {
        let omega = law.sample(rng);
        let v = (omega as f64 * k * zeta.ln() + log_weight(omega, t, p, q)).exp();
        let next = s + v;
        comp += if s.abs() >= v.abs() { (s - next) + v } else { (v - next) + s };
        s = next;
        s2 += v * v;
    }
    let nf = n as f64;
    let mean = (s + comp) / nf;
    (mean, ((s2 / nf - mean * mean).max(0.0) / nf).sqrt())
}

/// Cross-entropy tuning of the proposal: `q ← Σ W h Ω / (t Σ W h)` with `h = ζ^{kΩ}`.
fn tune_proposal<R: Rng>(zeta: f64, p: f64, t: u64, k: f64, n: usize, rng: &mut R) -> f64 {
    let mut q = p;
    for _ in 0..4 {
        let law = Binomial::new(t, q).expect("q in [0, 1]");
        let (mut num, mut den) = (0.0, 0.0);
        for _ in 0..n {
            let omega = law.sample(rng);
            let wh = (omega as f64 * k * zeta.ln() + log_weight(omega, t, p, q)).exp();
            num += wh * omega as f64;
            den += wh;
        }
        if den > 0.0 {
            q = (num / (den * t as f64)).clamp(1e-6, 1.0 - 1e-6);
        }
    }
    q
}

/// Checks `‖ζ^{Ω_t}‖_k = (1 − p + ζ^k p)^{t/k}` for `Ω_t ~ Binomial(t, p)` on a grid.
///
/// Small moments are rare events under `p` itself, so the estimate uses a
/// binomial proposal tuned by cross-entropy; the plain Monte Carlo estimate is
/// reported alongside. Pass iff the relative error of the norm is at most 2%
/// (`1e-12` at `p = 1`, where `Ω_t = t` surely).
pub fn validate_moment_identity(
    zetas: &[f64],
    ps: &[f64],
    ts: &[usize],
    ks: &[f64],
    n_samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<ValidationReport> {
    if n_samples < 100_000 {
        return Err(Error::invalid(format!("the moment identity check needs at least 10^5 samples, got {n_samples}")));
    }
    let mut grid = Vec::new();
    for &z in zetas {
        for &p in ps {
            for &t in ts {
                for &k in ks {
                    grid.push((z, p, t, k));
                }
            }
        }
    }
    let base = derive_seed(seed, TAG_MOMENTS);
    let checks = map_indexed(exec, grid.len(), |g| {
        let (z, p, t, k) = grid[g];
        let mut rng = stream_rng(base, g as u64);
        let exact = binomial_moment(z, p, t as f64, k);
        let tu = t as u64;
        let q = if p >= 1.0 { 1.0 } else { tune_proposal(z, p, tu, k, n_samples / 10, &mut rng) };
        let (m, se) = is_moment(z, p, tu, k, q, n_samples, &mut rng);
        let (naive, _) = is_moment(z, p, tu, k, p, n_samples, &mut rng);
        let est = m.powf(1.0 / k);
        let rel = (est - exact).abs() / exact;
        let tol = if p >= 1.0 { 1e-12 } else { 0.02 };
        CheckResult {
            name: format!("moment_identity zeta={z} p={p} t={t} k={k}"),
            passed: rel <= tol,
            statistic: est,
            bound: exact,
            n_samples,
            // Delta method: SE of m^{1/k}.
            std_error: if m > 0.0 { est * se / (k * m) } else { 0.0 },
            detail: format!("relative error={rel:.3e}; proposal q={q:.4}; plain MC estimate={:.6e}", naive.max(0.0).powf(1.0 / k)),
        }
    });
    Ok(ValidationReport { checks })
}

/// Reference samplers for the calculus check.
pub fn reference_samplers() -> Result<Vec<(&'static str, ErrorSampler)>> {
    Ok(vec![
        ("gaussian", ErrorSampler::gaussian(1.0)?),
        ("bounded-uniform", ErrorSampler::bounded_uniform(1.0)?),
        ("weibull-tail(0.5)", ErrorSampler::weibull_tail(0.5, 1.0)?),
        ("weibull-tail(1.5)", ErrorSampler::weibull_tail(1.5, 1.0)?),
    ])
}

/// A random variable built from samplers, with the class the closure rules assign it.
#[derive(Debug, Clone, Copy)]
enum Composite {
    Base,
    Scaled(f64),
    Shifted(f64),
    /// `X + X`: fully dependent summands.
    SelfSum,
    /// `X + Y` with `Y` independent.
    Sum,
    /// `X Y` with `Y` independent.
    Product,
    /// `‖ε + ξ‖` in `dim` dimensions, `ε` entries from `X` and `ξ` entries from `Y`.
    Norm(usize),
    /// `X` viewed in the wider class `(θ + 0.5, 1.5 ν)`.
    Included,
}

impl Composite {
    const ALL: [Composite; 8] = [
        Composite::Base,
        Composite::Scaled(-3.0),
        Composite::Shifted(2.0),
        Composite::SelfSum,
        Composite::Sum,
        Composite::Product,
        Composite::Norm(6),
        Composite::Included,
    ];

    fn label(self) -> String {
        match self {
            Composite::Base => "X".into(),
            Composite::Scaled(a) => format!("{a}X"),
            Composite::Shifted(a) => format!("X+{a}"),
            Composite::SelfSum => "X+X".into(),
            Composite::Sum => "X+Y".into(),
            Composite::Product => "XY".into(),
            Composite::Norm(d) => format!("|eps+xi|_{d}"),
            Composite::Included => "X (wider class)".into(),
        }
    }

    fn class(self, x: &ErrorSampler, y: &ErrorSampler) -> Result<SubWeibull> {
        let (cx, cy) = (x.declared(), y.declared());
        match self {
            Composite::Base => Ok(cx),
            Composite::Scaled(a) => Ok(cx.scale(a)),
            Composite::Shifted(a) => Ok(cx.shift(a)),
            Composite::SelfSum => Ok(cx.add(&cx)),
            Composite::Sum => Ok(cx.add(&cy)),
            Composite::Product => cx.mul(&cy, Dependence::Independent),
            Composite::Norm(d) => vector_norm_class(d, &cx, &cy),
            Composite::Included => cx.include(cx.theta() + 0.5, 1.5 * cx.nu()),
        }
    }

    fn sample<R: Rng>(self, x: &ErrorSampler, y: &ErrorSampler, rng: &mut R) -> f64 {
        match self {
            Composite::Base | Composite::Included => x.sample(rng),
            Composite::Scaled(a) => a * x.sample(rng),
            Composite::Shifted(a) => a + x.sample(rng),
            Composite::SelfSum => 2.0 * x.sample(rng),
            Composite::Sum => x.sample(rng) + y.sample(rng),
            Composite::Product => x.sample(rng) * y.sample(rng),
            Composite::Norm(d) => (0..d).map(|_| (x.sample(rng) + y.sample(rng)).powi(2)).sum::<f64>().sqrt(),
        }
    }
}

const CALCULUS_K_MAX: usize = 8;
const CALCULUS_DELTAS: [f64; 3] = [0.5, 0.1, 0.01];
const CALCULUS_CHUNK: usize = 1 << 16;

#[derive(Debug, Clone, Copy)]
struct MomentSums {
    s: [f64; CALCULUS_K_MAX],
    s2: [f64; CALCULUS_K_MAX],
    exceed: [usize; CALCULUS_DELTAS.len()],
}

/// For every reference sampler `X` (paired with the next sampler `Y`) and every
/// composite, checks `E|Z|^k ≤ (ν′ k^{θ′})^k + 3 SE` for `k = 1..=8` and
/// `P[|Z| > hp_bound(δ)] ≤ δ` for `δ ∈ {0.5, 0.1, 0.01}`.
pub fn validate_sampler_calculus(n_samples: usize, seed: u64, exec: Execution) -> Result<ValidationReport> {
    if n_samples < 1000 {
        return Err(Error::invalid("the calculus check needs at least 1000 samples"));
    }
    let samplers = reference_samplers()?;
    let mut cases = Vec::new();
    for i in 0..samplers.len() {
        for c in Composite::ALL {
            let (xn, x) = samplers[i];
            let (yn, y) = samplers[(i + 1) % samplers.len()];
            let class = c.class(&x, &y)?;
            let levels = CALCULUS_DELTAS.iter().map(|d| class.hp_bound(*d)).collect::<Result<Vec<_>>>()?;
            cases.push((xn, yn, x, y, c, class, levels));
        }
    }
    let n_chunks = n_samples.div_ceil(CALCULUS_CHUNK);
    let base = derive_seed(seed, TAG_CALCULUS);
    let partial = map_indexed(exec, cases.len() * n_chunks, |j| {
        let (case, chunk) = (j / n_chunks, j % n_chunks);
        let (_, _, x, y, c, _, levels) = &cases[case];
        let mut rng = stream_rng(base, j as u64);
        let mut acc = MomentSums { s: [0.0; CALCULUS_K_MAX], s2: [0.0; CALCULUS_K_MAX], exceed: [0; CALCULUS_DELTAS.len()] };
        for _ in 0..CALCULUS_CHUNK.min(n_samples - chunk * CALCULUS_CHUNK) {
            let z = c.sample(x, y, &mut rng).abs();
            let mut pow = 1.0;
            for k in 0..CALCULUS_K_MAX {
                pow *= z;
                acc.s[k] += pow;
                acc.s2[k] += pow * pow;
            }
            for (e, level) in acc.exceed.iter_mut().zip(levels) {
                *e += usize::from(z > *level);
            }
        }
        acc
    });

    let n = n_samples as f64;
    let mut report = ValidationReport::default();
    for (case, (xn, yn, _, _, c, class, levels)) in cases.iter().enumerate() {
        let mut tot = MomentSums { s: [0.0; CALCULUS_K_MAX], s2: [0.0; CALCULUS_K_MAX], exceed: [0; CALCULUS_DELTAS.len()] };
        for acc in &partial[case * n_chunks..(case + 1) * n_chunks] {
            for k in 0..CALCULUS_K_MAX {
                tot.s[k] += acc.s[k];
                tot.s2[k] += acc.s2[k];
            }
            for d in 0..CALCULUS_DELTAS.len() {
                tot.exceed[d] += acc.exceed[d];
            }
        }
        let name = format!("{} with X={xn}, Y={yn}", c.label());
        // Worst k by the ratio of empirical moment to its declared bound.
        let mut worst = (f64::NEG_INFINITY, 0usize, 0.0, 0.0, 0.0);
        let mut ok = true;
        for k in 0..CALCULUS_K_MAX {
            let kf = (k + 1) as f64;
            let m = tot.s[k] / n;
            let se = ((tot.s2[k] / n - m * m).max(0.0) / n).sqrt();
            let bound = class.moment_bound(kf).powf(kf);
            ok &= m <= bound + 3.0 * se;
            let r = m / bound;
            if r > worst.0 {
                worst = (r, k + 1, m, bound, se);
            }
        }
        report.checks.push(CheckResult {
            name: format!("calculus moments {name}"),
            passed: ok,
            statistic: worst.2,
            bound: worst.3,
            n_samples,
            std_error: worst.4,
            detail: format!("class subW({:.4}, {:.4e}); tightest k={}; E|Z|^k vs (nu k^theta)^k", class.theta(), class.nu(), worst.1),
        });
        for (d, delta) in CALCULUS_DELTAS.iter().enumerate() {
            let freq = tot.exceed[d] as f64 / n;
            report.checks.push(CheckResult {
                name: format!("calculus tail delta={delta} {name}"),
                passed: freq <= *delta,
                statistic: freq,
                bound: *delta,
                n_samples,
                std_error: (delta * (1.0 - delta) / n).sqrt(),
                detail: format!("P[|Z| > {:.4e}]", levels[d]),
            });
        }
    }
    Ok(report)
}

/// Noise-free contraction on the static instance: `d_t ≤ ζ^t d_0 + 1e-9` for `t ≤ T`, `p = 1`.
pub fn validate_contraction(v: &ValidationConfig, horizon: usize, seed: u64) -> Result<CheckResult> {
    let inst = synthetic_instance(v, horizon, false, seed)?.with_p(1.0).zero_errors();
    let d = inst.trial(seed, 0, 0)?;
    let z = inst.zeta();
    let (worst_t, excess) =
        d.iter().enumerate().map(|(t, dt)| (t, dt - z.powi(t as i32) * d[0])).max_by(|a, b| a.1.total_cmp(&b.1)).unwrap_or((0, 0.0));
    Ok(CheckResult {
        name: "noise_free_contraction".into(),
        passed: excess <= 1e-9,
        statistic: excess,
        bound: 1e-9,
        n_samples: 1,
        std_error: 0.0,
        detail: format!("max_t (d_t - zeta^t d_0) at t={worst_t}; zeta={z:.6}; T={horizon}"),
    })
}

/// Everything `validate-bounds` runs, as configured.
pub struct FullValidation {
    pub report: ValidationReport,
    pub expectation: ExpectationCheck,
}

pub fn run_all(v: &ValidationConfig, seed: u64, exec: Execution) -> Result<FullValidation> {
    let inst = synthetic_instance(v, v.horizon, true, seed)?;
    let expectation = validate_expectation_bound(&inst, v.n_trials_expectation, v.error_norm_samples, seed, exec)?;
    let mut report = ValidationReport { checks: vec![expectation.result.clone()] };
    report.extend(validate_hp_bound(&inst, v.n_trials_hp, &v.deltas, &v.check_times, v.error_norm_samples, seed, exec)?);
    report.extend(validate_moment_identity(&v.moment_zetas, &v.moment_ps, &v.moment_ts, &v.moment_ks, v.moment_samples, seed, exec)?);
    report.extend(validate_sampler_calculus(v.calculus_samples, seed, exec)?);
    report.checks.push(validate_contraction(v, v.contraction_horizon, seed)?);
    Ok(FullValidation { report, expectation })
}
