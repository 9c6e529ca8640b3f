//! Microgrid scenario: DERs behind `n_pcc` points of common coupling track a
//! power reference while the DER cost regime switches at fixed times.
//!
//! Every random quantity derives from the master seed through separate
//! streams: one for building the instance and, per experiment `e`, one each
//! for the initial point, the algorithm draws and the learner's evaluations.
//! Experiments with the same `e` share all three across `p` and modes.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::algorithm::{run_with, AlgoConfig, ExactInputCost, Trajectory};
use crate::config::{Config, Mode};
use crate::csvout::{fmt_num, CsvTable};
use crate::error::{Error, Result};
use crate::gplearn::{GpLearner, LearnerConfig, ModelSwitch, SEKernel};
use crate::par::{map_indexed, stream_rng, Execution};
use crate::problem::{BoxSchedule, CostSchedule, CurvaturePair, LinearPlantMap, OptimumPath, QuadraticInputCost, TimeVaryingProblem};
use crate::subweibull::ErrorSampler;

const STREAM_BUILD: u64 = 0;
const PURPOSE_X0: u64 = 1;
const PURPOSE_ALGO: u64 = 2;
const PURPOSE_LEARNER: u64 = 3;

fn experiment_stream(e: usize, purpose: u64) -> u64 {
    ((e as u64 + 1) << 8) | purpose
}

/// Window before a switch used as the pre-switch reference level.
pub const PRE_SWITCH_WINDOW: usize = 50;

/// A built scenario instance with its optimizer path.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub problem: TimeVaryingProblem,
    pub path: OptimumPath,
    pub kernels: Vec<SEKernel>,
    pub learner: LearnerConfig,
    pub switch_times: Vec<usize>,
    pub alpha: f64,
    pub envelope: CurvaturePair,
    instance: InstanceDump,
}

/// What `scenario_instance.json` records: every drawn quantity of the instance.
#[derive(Debug, Clone, Serialize)]
struct InstanceDump {
    seed: u64,
    horizon: usize,
    g: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
    load_phases: Vec<f64>,
    ref_phases: Vec<f64>,
    box_phases: Vec<f64>,
    cost_regimes: Vec<QuadraticInputCost>,
    switch_times: Vec<usize>,
    pattern: Vec<usize>,
    kernel_length_scales: Vec<f64>,
    mu: f64,
    l: f64,
    alpha: f64,
    max_step_size: f64,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn unit_norm_matrix<R: Rng>(rows: usize, cols: usize, range: [f64; 2], rng: &mut R) -> Result<DMatrix<f64>> {
    let m = DMatrix::from_fn(rows, cols, |_, _| if range[0] < range[1] { rng.random_range(range[0]..range[1]) } else { range[0] });
    let norm = m.singular_values().max();
    if !(norm > 0.0) {
        return Err(Error::Config("plant matrix entries must not all vanish".into()));
    }
    Ok(m / norm)
}

fn uniform<R: Rng>(r: [f64; 2], rng: &mut R) -> f64 {
    if r[0] < r[1] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Builds the instance for `cfg.seed`. Rejects `α ≥ 2/L` as a configuration error.
pub fn build_scenario(cfg: &Config) -> Result<Scenario> {
    cfg.check()?;
    let mut rng = stream_rng(cfg.seed, STREAM_BUILD);
    let pl = &cfg.plant;
    let (m, n_pcc) = (pl.n_ders, pl.n_pcc);
    let horizon = cfg.suite.horizon;

    let g = unit_norm_matrix(n_pcc, m, pl.entry_range, &mut rng)?;
    let h = unit_norm_matrix(n_pcc, n_pcc, pl.entry_range, &mut rng)?;
    let load_phases: Vec<f64> = (0..n_pcc).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let ref_phases: Vec<f64> = (0..n_pcc).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let box_phases: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let regimes = cfg
        .costs
        .a_ranges
        .iter()
        .map(|ar| {
            let a = (0..m).map(|_| uniform(*ar, &mut rng)).collect();
            let b = (0..m).map(|_| uniform(cfg.costs.b_range, &mut rng)).collect();
            QuadraticInputCost::new(a, b, vec![0.0; m])
        })
        .collect::<Result<Vec<_>>>()?;

    let tf = horizon as f64;
    let w = (0..horizon)
        .map(|t| {
            let t = t as f64;
            let common = pl.load_base
                + pl.load_ramp * logistic((t - pl.load_ramp_center) / pl.load_ramp_width)
                + pl.load_daily_amp * (PI * t / tf).sin();
            DVector::from_iterator(
                n_pcc,
                load_phases.iter().map(|ph| common + pl.load_ripple_amp * (2.0 * PI * t / pl.load_ripple_period + ph).sin()),
            )
        })
        .collect();
    let y_ref = (0..horizon)
        .map(|t| {
            DVector::from_iterator(n_pcc, ref_phases.iter().map(|ph| pl.ref_offset + pl.ref_amp * (4.0 * PI * t as f64 / tf + ph).sin()))
        })
        .collect();
    let index = (0..horizon).map(|t| cfg.costs.pattern[cfg.costs.switch_times.iter().filter(|s| **s <= t).count()]).collect();

    let k = &cfg.constraints;
    let n_groups = k.lower_ranges.len();
    let group = |i: usize| i * n_groups / m;
    let wave = |r: [f64; 2], t: usize, ph: f64| r[0] + (r[1] - r[0]) * (0.5 + 0.5 * (2.0 * PI * t as f64 / k.period + ph).sin());
    let lower = (0..horizon).map(|t| DVector::from_fn(m, |i, _| wave(k.lower_ranges[group(i)], t, box_phases[i]))).collect();
    let upper = (0..horizon).map(|t| DVector::from_fn(m, |i, _| wave(k.upper_ranges[group(i)], t, box_phases[i]))).collect();

    let plant = LinearPlantMap::new(g.clone(), h.clone())?;
    let costs = CostSchedule { beta: cfg.costs.beta, y_ref, w, palette: regimes.clone(), index };
    let problem = TimeVaryingProblem::new(plant, costs, BoxSchedule::new(lower, upper)?)?;

    let envelope = problem.curvature_envelope();
    let alpha = cfg.algorithm.alpha;
    if alpha >= 2.0 / envelope.l {
        return Err(Error::Config(format!(
            "algorithm.alpha = {alpha} violates the step-size condition 0 < alpha < 2/L = {:.6} for this instance (L = {:.6})",
            2.0 / envelope.l,
            envelope.l
        )));
    }
    let path = problem.optimum_path(cfg.algorithm.oracle_tol)?;

    let (lo0, hi0) = (problem.boxes().lower(0), problem.boxes().upper(0));
    let kernels = (0..m)
        .map(|i| SEKernel::new(cfg.gp.signal_variance, cfg.gp.length_scale_factor * (hi0[i] - lo0[i]).max(f64::MIN_POSITIVE)))
        .collect::<Result<Vec<_>>>()?;
    let learner = LearnerConfig {
        policy: cfg.gp.policy,
        eval_period: cfg.gp.eval_period,
        n_initial: cfg.gp.n_initial,
        obs_std: cfg.gp.obs_std,
        consistency_sigmas: cfg.gp.consistency_sigmas,
        consistency_tol: cfg.gp.consistency_tol,
        min_model_size: cfg.gp.min_model_size,
    };

    let instance = InstanceDump {
        seed: cfg.seed,
        horizon,
        g: rows(&g),
        h: rows(&h),
        load_phases,
        ref_phases,
        box_phases,
        cost_regimes: regimes,
        switch_times: cfg.costs.switch_times.clone(),
        pattern: cfg.costs.pattern.clone(),
        kernel_length_scales: kernels.iter().map(|k| k.ell).collect(),
        mu: envelope.mu,
        l: envelope.l,
        alpha,
        max_step_size: 2.0 / envelope.l,
    };
    Ok(Scenario { problem, path, kernels, learner, switch_times: cfg.costs.switch_times.clone(), alpha, envelope, instance })
}

impl Scenario {
    /// Number of algorithm steps per experiment (`horizon − 1`).
    pub fn steps(&self) -> usize {
        self.problem.horizon() - 1
    }

    pub fn write_instance_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.instance)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    /// Initial point of experiment `e`: uniform in the step-0 box.
    pub fn initial_point(&self, seed: u64, e: usize) -> DVector<f64> {
        let mut rng = stream_rng(seed, experiment_stream(e, PURPOSE_X0));
        let (lo, hi) = (self.problem.boxes().lower(0), self.problem.boxes().upper(0));
        DVector::from_fn(lo.len(), |i, _| uniform([lo[i], hi[i]], &mut rng))
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub p: f64,
    pub mode: Mode,
    pub experiment: usize,
    pub trajectory: Trajectory,
    pub switches: Vec<ModelSwitch>,
    pub n_models: usize,
}

fn algo_config(cfg: &Config, p: f64, mode: Mode) -> Result<AlgoConfig> {
    let a = &cfg.algorithm;
    Ok(AlgoConfig {
        alpha: a.alpha,
        p,
        // Learned mode carries its own input-cost error; no extra ε is sampled.
        eps_sampler: match mode {
            Mode::Exact => ErrorSampler::gaussian(a.eps_std)?,
            Mode::GpLearned => ErrorSampler::zero(),
        },
        xi_sampler: ErrorSampler::gaussian(a.xi_std)?,
        meas_noise: ErrorSampler::gaussian(a.meas_noise_std)?,
        seed: cfg.seed,
    })
}

/// One trajectory of `sc.steps()` steps.
pub fn run_experiment(sc: &Scenario, cfg: &Config, p: f64, mode: Mode, e: usize) -> Result<ExperimentOutcome> {
    let algo = algo_config(cfg, p, mode)?;
    algo.validate(&sc.problem)?;
    let x0 = sc.initial_point(cfg.seed, e);
    let mut rng = stream_rng(cfg.seed, experiment_stream(e, PURPOSE_ALGO));
    let (mut trajectory, switches, n_models) = match mode {
        Mode::Exact => {
            let traj = run_with(&sc.problem, &algo, Some(x0), sc.steps(), &sc.path, &mut ExactInputCost(&sc.problem), &mut rng)?;
            (traj, Vec::new(), 0)
        }
        Mode::GpLearned => {
            let lrng = stream_rng(cfg.seed, experiment_stream(e, PURPOSE_LEARNER));
            let mut learner = GpLearner::new(&sc.problem, sc.kernels.clone(), sc.learner, lrng)?;
            let traj = run_with(&sc.problem, &algo, Some(x0), sc.steps(), &sc.path, &mut learner, &mut rng)?;
            if let Some(err) = learner.take_failure() {
                return Err(err);
            }
            (traj, learner.switches().to_vec(), learner.n_models())
        }
    };
    // Gradients are not part of any output; drop them to keep suites light.
    trajectory.grad = Vec::new();
    Ok(ExperimentOutcome { p, mode, experiment: e, trajectory, switches, n_models })
}

/// Mean and sample standard deviation of `d_t` over the experiments of one `(p, mode)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanCurve {
    pub p: f64,
    pub mode: Mode,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub mean_e_norm: Vec<f64>,
}

impl MeanCurve {
    fn from_outcomes(p: f64, mode: Mode, runs: &[&ExperimentOutcome]) -> Self {
        let len = runs[0].trajectory.len();
        let n = runs.len() as f64;
        let mut mean = vec![0.0; len];
        let mut std = vec![0.0; len];
        let mut mean_e_norm = vec![0.0; len];
        for t in 0..len {
            let mu = runs.iter().map(|r| r.trajectory.d[t]).sum::<f64>() / n;
            let ss = runs.iter().map(|r| (r.trajectory.d[t] - mu).powi(2)).sum::<f64>();
            mean[t] = mu;
            std[t] = if runs.len() > 1 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
            mean_e_norm[t] = runs.iter().map(|r| r.trajectory.e_norm[t]).sum::<f64>() / n;
        }
        Self { p, mode, mean, std, mean_e_norm }
    }

    /// Average of the mean curve over `[from, to)`.
    pub fn window_mean(&self, from: usize, to: usize) -> f64 {
        let to = to.min(self.mean.len());
        let from = from.min(to.saturating_sub(1));
        self.mean[from..to].iter().sum::<f64>() / (to - from) as f64
    }
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub outcomes: Vec<ExperimentOutcome>,
    pub curves: Vec<MeanCurve>,
}

/// All `(p, mode, experiment)` combinations, in that nesting order.
pub fn run_suite(sc: &Scenario, cfg: &Config, exec: Execution) -> Result<SuiteResult> {
    let s = &cfg.suite;
    let (np, nm, ne) = (s.p_values.len(), s.modes.len(), s.n_experiments);
    let outcomes = map_indexed(exec, np * nm * ne, |i| {
        let (pi, mi, e) = (i / (nm * ne), (i / ne) % nm, i % ne);
        run_experiment(sc, cfg, s.p_values[pi], s.modes[mi], e)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let curves = outcomes
        .chunks(ne)
        .map(|runs| {
            let refs: Vec<&ExperimentOutcome> = runs.iter().collect();
            MeanCurve::from_outcomes(runs[0].p, runs[0].mode, &refs)
        })
        .collect();
    Ok(SuiteResult { outcomes, curves })
}

impl SuiteResult {
    pub fn curve(&self, p: f64, mode: Mode) -> Option<&MeanCurve> {
        self.curves.iter().find(|c| c.p == p && c.mode == mode)
    }

    /// Columns `p, mode, t, mean_d, std_d`.
    pub fn summary_table(&self) -> CsvTable {
        let mut table = CsvTable::new(["p", "mode", "t", "mean_d", "std_d"]);
        for c in &self.curves {
            for t in 0..c.mean.len() {
                table.push(vec![fmt_num(c.p), c.mode.label().into(), t.to_string(), fmt_num(c.mean[t]), fmt_num(c.std[t])]);
            }
        }
        table
    }

    /// File name of one trajectory, e.g. `traj_p0.6_gp-learned_e03.csv`.
    pub fn trajectory_file_name(o: &ExperimentOutcome) -> String {
        format!("traj_p{}_{}_e{:02}.csv", o.p, o.mode.label(), o.experiment)
    }

    /// Model switches of the learned-mode runs: `p, experiment, t, from, to`.
    pub fn switch_table(&self) -> CsvTable {
        let mut table = CsvTable::new(["p", "experiment", "t", "from", "to"]);
        for o in &self.outcomes {
            for s in &o.switches {
                table.push(vec![fmt_num(o.p), o.experiment.to_string(), s.t.to_string(), s.from.to_string(), s.to.to_string()]);
            }
        }
        table
    }
}

/// Behaviour of one mean curve around one cost switch.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchResponse {
    pub switch_time: usize,
    pub pre_mean: f64,
    pub at_switch: f64,
    /// Mean over the last quarter of the interval that starts at the switch.
    pub settled: f64,
}

impl SwitchResponse {
    pub fn jumped(&self) -> bool {
        self.at_switch > self.pre_mean
    }

    /// The error returns at least halfway from the jump to the pre-switch level.
    pub fn reconverged(&self) -> bool {
        self.settled <= 0.5 * (self.at_switch + self.pre_mean)
    }
}

/// Start and end of the cost intervals `[0, s_1), [s_1, s_2), ..., [s_k, len)`.
fn intervals(switch_times: &[usize], len: usize) -> Vec<(usize, usize)> {
    let mut edges = vec![0];
    edges.extend(switch_times.iter().copied().filter(|s| *s < len));
    edges.push(len);
    edges.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Steps averaged for the plateau level.
pub const PLATEAU_WINDOW: usize = 500;

/// Plateau level: average of the mean curve over the last 500 steps.
pub fn plateau(curve: &MeanCurve) -> f64 {
    let len = curve.mean.len();
    curve.window_mean(len.saturating_sub(PLATEAU_WINDOW), len)
}

pub fn switch_responses(curve: &MeanCurve, switch_times: &[usize]) -> Vec<SwitchResponse> {
    let len = curve.mean.len();
    intervals(switch_times, len)
        .into_iter()
        .skip(1)
        .map(|(s, end)| SwitchResponse {
            switch_time: s,
            pre_mean: curve.window_mean(s.saturating_sub(PRE_SWITCH_WINDOW), s),
            at_switch: curve.mean[s],
            settled: curve.window_mean(end - (end - s) / 4, end),
        })
        .collect()
}

/// `|a − b| / b` for the late-window averages of a learned and an exact curve.
pub fn late_relative_gap(learned: &MeanCurve, exact: &MeanCurve, late_start: usize) -> f64 {
    let a = learned.window_mean(late_start, learned.mean.len());
    let b = exact.window_mean(late_start, exact.mean.len());
    (a - b).abs() / b
}
