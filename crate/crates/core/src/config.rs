//! TOML configuration shared by every subcommand.
//!
//! Every section and field is optional and falls back to the defaults below;
//! unknown keys are rejected. The fully resolved value is echoed next to the
//! outputs of each run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gplearn::DataPolicy;
use crate::subweibull::SamplerKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Master seed; every random stream of every subcommand derives from it.
    pub seed: u64,
    pub plant: PlantConfig,
    pub costs: CostConfig,
    pub constraints: ConstraintConfig,
    pub algorithm: AlgorithmConfig,
    pub gp: GpConfig,
    pub suite: SuiteConfig,
    pub validation: ValidationConfig,
    pub bounds: BoundsConfig,
    pub demo: DemoConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 7,
            plant: PlantConfig::default(),
            costs: CostConfig::default(),
            constraints: ConstraintConfig::default(),
            algorithm: AlgorithmConfig::default(),
            gp: GpConfig::default(),
            suite: SuiteConfig::default(),
            validation: ValidationConfig::default(),
            bounds: BoundsConfig::default(),
            demo: DemoConfig::default(),
        }
    }
}

/// Plant map and the disturbance and reference traces of the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    pub n_ders: usize,
    pub n_pcc: usize,
    /// Entries of `G` and `H` are drawn uniformly from this range, then each
    /// matrix is rescaled to unit spectral norm.
    pub entry_range: [f64; 2],
    /// Load per PCC (kW): `base + ramp·logistic((t − ramp_center)/ramp_width)
    /// + daily_amp·sin(πt/T) + ripple_amp·sin(2πt/ripple_period + φ)`.
    pub load_base: f64,
    pub load_ramp: f64,
    pub load_ramp_center: f64,
    pub load_ramp_width: f64,
    pub load_daily_amp: f64,
    pub load_ripple_amp: f64,
    pub load_ripple_period: f64,
    /// Reference per PCC (kW): `ref_offset + ref_amp·sin(4πt/T + φ)`.
    pub ref_offset: f64,
    pub ref_amp: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            n_ders: 6,
            n_pcc: 2,
            entry_range: [0.5, 1.0],
            load_base: 30.0,
            load_ramp: 20.0,
            load_ramp_center: 360.0,
            load_ramp_width: 60.0,
            load_daily_amp: 12.0,
            load_ripple_amp: 3.0,
            load_ripple_period: 240.0,
            ref_offset: 80.0,
            ref_amp: 8.0,
        }
    }
}

/// Tracking weight and the switching quadratic user costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    pub beta: f64,
    /// Range of `a_m` for each cost regime; regimes alternate at the switch times.
    pub a_ranges: Vec<[f64; 2]>,
    pub b_range: [f64; 2],
    /// Steps at which the active regime advances (cyclically through `a_ranges`
    /// and back to the first regime after the last).
    pub switch_times: Vec<usize>,
    /// Regime sequence: regime `pattern[j]` is active after `j` switches.
    pub pattern: Vec<usize>,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            a_ranges: vec![[0.1, 0.5], [0.5, 1.0]],
            b_range: [-1.0, 1.0],
            switch_times: vec![2880, 5760],
            pattern: vec![0, 1, 0],
        }
    }
}

/// Time-varying DER limits. DERs are split into equal groups; group `g` moves
/// its lower limit sinusoidally inside `lower_ranges[g]` and its upper limit
/// inside `upper_ranges[g]`, with a random phase per DER.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintConfig {
    pub lower_ranges: Vec<[f64; 2]>,
    pub upper_ranges: Vec<[f64; 2]>,
    pub period: f64,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        Self {
            lower_ranges: vec![[-10.0, -6.0], [3.0, 7.0], [0.0, 3.0]],
            upper_ranges: vec![[6.0, 10.0], [13.0, 17.0], [28.0, 32.0]],
            period: 2880.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub alpha: f64,
    /// Standard deviation of the PCC measurement noise (kW).
    pub meas_noise_std: f64,
    /// Standard deviation of the entrywise plant-gradient error.
    pub xi_std: f64,
    /// Standard deviation of the entrywise input-cost-gradient error (exact mode).
    pub eps_std: f64,
    pub oracle_tol: f64,
}

impl Default for AlgorithmConfig {
    fn default() -> Self {
        Self { alpha: 0.5, meas_noise_std: 0.3, xi_std: 0.0, eps_std: 0.0, oracle_tol: crate::problem::ORACLE_TOL }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    pub signal_variance: f64,
    /// Length-scale as a multiple of each DER's step-0 box width.
    pub length_scale_factor: f64,
    /// Standard deviation of the functional-evaluation noise.
    pub obs_std: f64,
    pub n_initial: usize,
    pub eval_period: usize,
    pub policy: DataPolicy,
    pub consistency_sigmas: f64,
    pub consistency_tol: f64,
    pub min_model_size: usize,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            signal_variance: 1000.0,
            length_scale_factor: 1.0,
            obs_std: 0.01,
            n_initial: 5,
            eval_period: 360,
            policy: DataPolicy::Bank,
            consistency_sigmas: 4.0,
            consistency_tol: 2.0,
            min_model_size: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Exact,
    GpLearned,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Exact => "exact",
            Mode::GpLearned => "gp-learned",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    /// Number of time indices (5 s each).
    pub horizon: usize,
    pub p_values: Vec<f64>,
    pub modes: Vec<Mode>,
    pub n_experiments: usize,
    /// First step of the late window used to compare learned and exact modes.
    pub late_start: usize,
    pub write_trajectories: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            horizon: 8640,
            p_values: vec![0.4, 0.6, 0.8, 1.0],
            modes: vec![Mode::Exact, Mode::GpLearned],
            n_experiments: 10,
            late_start: 6000,
            write_trajectories: true,
        }
    }
}

/// Synthetic instance and Monte Carlo sizes for `validate-bounds` (also the
/// instance behind `bound-curve`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    pub n_inputs: usize,
    pub n_outputs: usize,
    pub horizon: usize,
    pub p: f64,
    /// Step size as a multiple of `1/L`; ignored when `alpha` is set.
    pub alpha_factor: f64,
    pub alpha: Option<f64>,
    pub error_kind: SamplerKind,
    /// Scale of the entrywise `ε` and `ξ` errors (std for gaussian, half-width
    /// for bounded-uniform, Weibull scale for weibull-tail).
    pub error_scale: f64,
    pub error_theta: f64,
    pub box_half_width: f64,
    pub ref_drift_amp: f64,
    pub ref_drift_period: f64,
    pub n_trials_expectation: usize,
    pub n_trials_hp: usize,
    pub deltas: Vec<f64>,
    pub check_times: Vec<usize>,
    pub error_norm_samples: usize,
    pub moment_zetas: Vec<f64>,
    pub moment_ps: Vec<f64>,
    pub moment_ts: Vec<usize>,
    pub moment_ks: Vec<f64>,
    pub moment_samples: usize,
    pub calculus_samples: usize,
    pub contraction_horizon: usize,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            n_inputs: 6,
            n_outputs: 3,
            horizon: 500,
            p: 0.7,
            alpha_factor: 1.0,
            alpha: None,
            error_kind: SamplerKind::Gaussian,
            error_scale: 0.05,
            error_theta: 0.5,
            box_half_width: 2.0,
            ref_drift_amp: 0.5,
            ref_drift_period: 250.0,
            n_trials_expectation: 1000,
            n_trials_hp: 2000,
            deltas: vec![0.3, 0.1],
            check_times: vec![50, 250, 500],
            error_norm_samples: 100_000,
            moment_zetas: vec![0.5, 0.9],
            moment_ps: vec![0.3, 0.7, 1.0],
            moment_ts: vec![5, 50],
            moment_ks: vec![1.0, 2.0, 4.0],
            moment_samples: 100_000,
            calculus_samples: 1_000_000,
            contraction_horizon: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsConfig {
    /// One high-probability curve per entry; empty writes expectation curves only.
    pub deltas: Vec<f64>,
    /// Defaults to the validation horizon.
    pub horizon: Option<usize>,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self { deltas: vec![0.1], horizon: None }
    }
}

/// `gp-demo`: fit a GP to noisy samples of `a x² + b x` and report its gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub a: f64,
    pub b: f64,
    pub range: [f64; 2],
    pub n_observations: usize,
    pub noise_std: f64,
    pub signal_variance: f64,
    pub length_scale: f64,
    pub n_grid: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            a: 0.5,
            b: -1.0,
            range: [-5.0, 5.0],
            n_observations: 12,
            noise_std: 0.1,
            signal_variance: 100.0,
            length_scale: 5.0,
            n_grid: 101,
        }
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] {
        Ok(())
    } else {
        Err(bad(format!("{name} must be a finite [low, high] pair with low <= high, got {r:?}")))
    }
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(bad(format!("{name} must lie in (0, 1], got {p}")))
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("cannot read config file {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => bad(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| bad(e.to_string()))
    }

    /// Static checks. Conditions that need a built problem (the step-size
    /// bound `α < 2/L`) are checked when the problem is built.
    pub fn check(&self) -> Result<()> {
        let pl = &self.plant;
        if pl.n_ders == 0 || pl.n_pcc == 0 {
            return Err(bad("plant.n_ders and plant.n_pcc must be at least 1"));
        }
        check_range("plant.entry_range", pl.entry_range)?;
        if pl.entry_range[1] <= 0.0 {
            return Err(bad("plant.entry_range must allow positive entries"));
        }
        if !(pl.load_ramp_width > 0.0 && pl.load_ripple_period > 0.0) {
            return Err(bad("plant.load_ramp_width and plant.load_ripple_period must be > 0"));
        }

        let c = &self.costs;
        if !(c.beta > 0.0 && c.beta.is_finite()) {
            return Err(bad(format!("costs.beta must be > 0, got {}", c.beta)));
        }
        if c.a_ranges.is_empty() {
            return Err(bad("costs.a_ranges needs at least one regime"));
        }
        for r in &c.a_ranges {
            check_range("costs.a_ranges entry", *r)?;
            if r[0] <= 0.0 {
                return Err(bad("costs.a_ranges must be strictly positive (a_m > 0 keeps every f_t strongly convex)"));
            }
        }
        check_range("costs.b_range", c.b_range)?;
        if c.pattern.len() != c.switch_times.len() + 1 {
            return Err(bad(format!(
                "costs.pattern needs one regime per interval: {} switch times need {} entries, got {}",
                c.switch_times.len(),
                c.switch_times.len() + 1,
                c.pattern.len()
            )));
        }
        if let Some(r) = c.pattern.iter().find(|r| **r >= c.a_ranges.len()) {
            return Err(bad(format!("costs.pattern refers to regime {r} but only {} are defined", c.a_ranges.len())));
        }
        if c.switch_times.windows(2).any(|w| w[0] >= w[1]) || c.switch_times.first() == Some(&0) {
            return Err(bad("costs.switch_times must be strictly increasing and positive"));
        }
        if c.switch_times.last().is_some_and(|s| *s >= self.suite.horizon) {
            return Err(bad("costs.switch_times must lie inside the suite horizon"));
        }

        let k = &self.constraints;
        if k.lower_ranges.is_empty() || k.lower_ranges.len() != k.upper_ranges.len() {
            return Err(bad("constraints.lower_ranges and constraints.upper_ranges must be nonempty and equally long"));
        }
        if k.lower_ranges.len() > pl.n_ders {
            return Err(bad("more constraint groups than DERs"));
        }
        for (lo, hi) in k.lower_ranges.iter().zip(&k.upper_ranges) {
            check_range("constraints.lower_ranges entry", *lo)?;
            check_range("constraints.upper_ranges entry", *hi)?;
            if lo[1] > hi[0] {
                return Err(bad(format!("lower limit range {lo:?} overlaps upper limit range {hi:?}; boxes could be empty")));
            }
        }
        if !(k.period > 0.0) {
            return Err(bad("constraints.period must be > 0"));
        }

        let a = &self.algorithm;
        if !(a.alpha > 0.0 && a.alpha.is_finite()) {
            return Err(bad(format!("algorithm.alpha must be > 0, got {}", a.alpha)));
        }
        for (name, v) in [("meas_noise_std", a.meas_noise_std), ("xi_std", a.xi_std), ("eps_std", a.eps_std)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(bad(format!("algorithm.{name} must be >= 0")));
            }
        }
        if !(a.oracle_tol > 0.0) {
            return Err(bad("algorithm.oracle_tol must be > 0"));
        }

        let g = &self.gp;
        if !(g.signal_variance > 0.0 && g.length_scale_factor > 0.0 && g.obs_std >= 0.0) {
            return Err(bad("gp.signal_variance and gp.length_scale_factor must be > 0, gp.obs_std >= 0"));
        }
        if g.n_initial == 0 || g.eval_period == 0 {
            return Err(bad("gp.n_initial and gp.eval_period must be at least 1"));
        }
        if !(g.consistency_sigmas > 0.0 && g.consistency_tol >= 0.0) {
            return Err(bad("gp.consistency_sigmas must be > 0 and gp.consistency_tol >= 0"));
        }

        let s = &self.suite;
        if s.horizon < 2 {
            return Err(bad("suite.horizon must be at least 2"));
        }
        if !s.horizon.is_multiple_of(g.eval_period) {
            return Err(bad(format!("gp.eval_period = {} must divide suite.horizon = {}", g.eval_period, s.horizon)));
        }
        if s.p_values.is_empty() || s.modes.is_empty() || s.n_experiments == 0 {
            return Err(bad("suite needs at least one p value, one mode and one experiment"));
        }
        for p in &s.p_values {
            check_probability("suite.p_values entry", *p)?;
        }
        if s.late_start >= s.horizon {
            return Err(bad(format!("suite.late_start = {} must be below suite.horizon = {}", s.late_start, s.horizon)));
        }

        let v = &self.validation;
        if v.n_inputs == 0 || v.n_outputs == 0 || v.horizon == 0 {
            return Err(bad("validation.n_inputs, n_outputs and horizon must be at least 1"));
        }
        check_probability("validation.p", v.p)?;
        if !(v.alpha_factor > 0.0) {
            return Err(bad("validation.alpha_factor must be > 0"));
        }
        if let Some(alpha) = v.alpha {
            if !(alpha > 0.0) {
                return Err(bad("validation.alpha must be > 0"));
            }
        }
        if !(v.error_scale >= 0.0 && v.error_theta > 0.0 && v.box_half_width > 0.0) {
            return Err(bad("validation.error_scale >= 0, error_theta > 0 and box_half_width > 0 are required"));
        }
        if v.n_trials_expectation < 100 {
            return Err(bad(format!("validation.n_trials_expectation must be at least 100, got {}", v.n_trials_expectation)));
        }
        if v.n_trials_hp < 1000 {
            return Err(bad(format!("validation.n_trials_hp must be at least 1000, got {}", v.n_trials_hp)));
        }
        for d in v.deltas.iter().chain(&self.bounds.deltas) {
            if !(*d > 0.0 && *d < 1.0) {
                return Err(bad(format!("delta values must lie in (0, 1), got {d}")));
            }
        }
        if let Some(t) = v.check_times.iter().find(|t| **t > v.horizon || **t == 0) {
            return Err(bad(format!("validation.check_times entry {t} is outside 1..={}", v.horizon)));
        }
        if v.error_norm_samples < 10_000 {
            return Err(bad("validation.error_norm_samples must be at least 10^4"));
        }
        if v.moment_samples < 100_000 {
            return Err(bad("validation.moment_samples must be at least 10^5"));
        }
        for z in &v.moment_zetas {
            if !(*z >= 0.0 && *z < 1.0) {
                return Err(bad("validation.moment_zetas must lie in [0, 1)"));
            }
        }
        for p in &v.moment_ps {
            check_probability("validation.moment_ps entry", *p)?;
        }
        if v.moment_ks.iter().any(|k| *k < 1.0) {
            return Err(bad("validation.moment_ks must be >= 1"));
        }
        if v.calculus_samples < 1000 {
            return Err(bad("validation.calculus_samples must be at least 1000"));
        }
        if self.bounds.horizon == Some(0) {
            return Err(bad("bounds.horizon must be at least 1"));
        }

        let d = &self.demo;
        check_range("demo.range", d.range)?;
        if d.n_observations == 0 || d.n_grid < 2 || !(d.signal_variance > 0.0 && d.length_scale > 0.0 && d.noise_std >= 0.0) {
            return Err(bad("demo needs n_observations >= 1, n_grid >= 2, positive kernel parameters and noise_std >= 0"));
        }
        Ok(())
    }
}
