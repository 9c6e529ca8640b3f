//! The online iteration
//!
//! ```text
//! x_t = proj_{X_t}[ x_{t−1} − v_{t−1} α ( β Gᵀ(ŷ_{t−1} − y_ref,t) + s_t(x_{t−1}) + ξ_t ) ]
//! ŷ_{t−1} = G x_{t−1} + H w_{t−1} + n_t,     v_{t−1} ~ Bernoulli(p)
//! ```
//!
//! where `s_t` is an estimate of `∇U_t` (exact plus sampled `ε_t`, or a learned
//! model). Each step draws, in order, one uniform `u` (with `v = u < p`), `ε`
//! (M values), `ξ` (M values) and `n` (one per output), whether or not the
//! measurement arrives. Under a common seed, trajectories for different `p`
//! therefore share their error sequences, and the arrival patterns are nested:
//! a measurement that arrives at some `p` also arrives at every larger `p`.

use std::io::Write;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::csvout::{fmt_num, CsvTable};
use crate::error::{Error, Result};
use crate::par::stream_rng;
use crate::problem::{OptimumPath, TimeVaryingProblem};
use crate::subweibull::ErrorSampler;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlgoConfig {
    pub alpha: f64,
    pub p: f64,
    /// Entrywise error on the input-cost gradient.
    pub eps_sampler: ErrorSampler,
    /// Entrywise error on the plant gradient.
    pub xi_sampler: ErrorSampler,
    /// Entrywise output measurement noise.
    pub meas_noise: ErrorSampler,
    pub seed: u64,
}

impl AlgoConfig {
    /// Noise-free configuration.
    pub fn exact(alpha: f64, p: f64, seed: u64) -> Self {
        Self { alpha, p, eps_sampler: ErrorSampler::zero(), xi_sampler: ErrorSampler::zero(), meas_noise: ErrorSampler::zero(), seed }
    }

    /// Checks `0 < p ≤ 1` and the step-size condition `0 < α < 2/L`.
    pub fn validate(&self, problem: &TimeVaryingProblem) -> Result<()> {
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::invalid(format!("measurement probability p must lie in (0, 1], got {}", self.p)));
        }
        let l = problem.curvature_envelope().l;
        if !(self.alpha > 0.0 && self.alpha < 2.0 / l) {
            return Err(Error::invalid(format!(
                "step size alpha = {} violates the contraction condition 0 < alpha < 2/L = {:.6} (L = {:.6})",
                self.alpha,
                2.0 / l,
                l
            )));
        }
        Ok(())
    }
}

/// Source of `∇U_t` estimates.
pub trait InputCostGradient {
    /// Estimate of `∇U_t(x)`, excluding the sampled `ε_t`.
    fn gradient(&mut self, x: &DVector<f64>, t: usize) -> DVector<f64>;

    /// Called with the new iterate `x_t` after every step.
    fn after_step(&mut self, _x: &DVector<f64>, _t: usize) {}
}

/// The true `∇U_t`.
#[derive(Debug, Clone, Copy)]
pub struct ExactInputCost<'a>(pub &'a TimeVaryingProblem);

impl InputCostGradient for ExactInputCost<'_> {
    fn gradient(&mut self, x: &DVector<f64>, t: usize) -> DVector<f64> {
        self.0.input_cost(t).gradient(x)
    }
}

/// Random quantities of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDraw {
    pub v: bool,
    pub eps: DVector<f64>,
    pub xi: DVector<f64>,
    pub noise: DVector<f64>,
}

impl StepDraw {
    pub fn draw<R: Rng + ?Sized>(cfg: &AlgoConfig, n_inputs: usize, n_outputs: usize, rng: &mut R) -> Self {
        let v = rng.random::<f64>() < cfg.p;
        let eps = DVector::from_fn(n_inputs, |_, _| cfg.eps_sampler.sample(rng));
        let xi = DVector::from_fn(n_inputs, |_, _| cfg.xi_sampler.sample(rng));
        let noise = DVector::from_fn(n_outputs, |_, _| cfg.meas_noise.sample(rng));
        Self { v, eps, xi, noise }
    }
}

/// `β Gᵀ(ŷ − y_ref,t) + s + ε + ξ`, where `s` estimates `∇U_t(x)`.
pub fn noisy_gradient(
    problem: &TimeVaryingProblem,
    y_hat: &DVector<f64>,
    t: usize,
    s: &DVector<f64>,
    eps: &DVector<f64>,
    xi: &DVector<f64>,
) -> DVector<f64> {
    problem.tracking_gradient(y_hat, t) + s + eps + xi
}

/// `proj_{X_t}[x_prev − α grad]` if `v`, else `proj_{X_t}[x_prev]`.
pub fn step(problem: &TimeVaryingProblem, x_prev: &DVector<f64>, t: usize, v: bool, alpha: f64, grad: &DVector<f64>) -> DVector<f64> {
    if v {
        problem.project(&(x_prev - grad * alpha), t)
    } else {
        problem.project(x_prev, t)
    }
}

/// Per-step record; index 0 holds the initial point.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `x_t` for `t = 0..=T`.
    pub x: Vec<DVector<f64>>,
    /// `v_{t−1}`: whether the measurement used to form `x_t` arrived (false at `t = 0`).
    pub v: Vec<bool>,
    /// `d_t = ‖x_t − x_{*,t}‖`.
    pub d: Vec<f64>,
    /// `‖e_t‖`: norm of the total gradient error at step `t` (0 at `t = 0`).
    pub e_norm: Vec<f64>,
    /// Gradient estimate used at step `t` (zero at `t = 0`).
    pub grad: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn to_table(&self) -> CsvTable {
        let m = self.x.first().map_or(0, |x| x.len());
        let mut header = vec!["t".to_string(), "v".into(), "d_t".into(), "e_norm".into()];
        header.extend((1..=m).map(|i| format!("x_{i}")));
        let rows = (0..self.len())
            .map(|t| {
                let mut row = vec![t.to_string(), u8::from(self.v[t]).to_string(), fmt_num(self.d[t]), fmt_num(self.e_norm[t])];
                row.extend(self.x[t].iter().map(|v| fmt_num(*v)));
                row
            })
            .collect();
        CsvTable { header, rows }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        self.to_table().write(w)
    }
}

/// Runs `T` steps from `x0` with the exact input-cost gradient (plus sampled
/// `ε`), drawing randomness from stream 0 of `cfg.seed`.
pub fn run(
    problem: &TimeVaryingProblem,
    cfg: &AlgoConfig,
    x0: Option<DVector<f64>>,
    horizon: usize,
    path: &OptimumPath,
) -> Result<Trajectory> {
    let mut rng = stream_rng(cfg.seed, 0);
    run_with(problem, cfg, x0, horizon, path, &mut ExactInputCost(problem), &mut rng)
}

/// General form of [`run`]: caller-supplied gradient source and RNG.
///
/// `x0` defaults to the midpoint of `X_0`. The recorded error `e_t` is the
/// total deviation of the used gradient from the measured-output gradient
/// with exact `∇U_t`, i.e. `(s − ∇U_t) + ε + ξ`.
pub fn run_with(
    problem: &TimeVaryingProblem,
    cfg: &AlgoConfig,
    x0: Option<DVector<f64>>,
    horizon: usize,
    path: &OptimumPath,
    learner: &mut dyn InputCostGradient,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    if horizon >= problem.horizon() || horizon >= path.x_star.len() {
        return Err(Error::OutOfHorizon { t: horizon, horizon: problem.horizon().min(path.x_star.len()) });
    }
    let m = problem.n_inputs();
    let ny = problem.plant().n_outputs();
    let x0 = x0.unwrap_or_else(|| problem.boxes().midpoint(0));
    crate::problem::check_dim("initial point", m, x0.len())?;
    if !problem.boxes().contains(&x0, 0) {
        return Err(Error::Infeasible("x0 lies outside the step-0 box".into()));
    }

    let mut traj = Trajectory {
        x: Vec::with_capacity(horizon + 1),
        v: Vec::with_capacity(horizon + 1),
        d: Vec::with_capacity(horizon + 1),
        e_norm: Vec::with_capacity(horizon + 1),
        grad: Vec::with_capacity(horizon + 1),
    };
    traj.d.push((&x0 - &path.x_star[0]).norm());
    traj.v.push(false);
    traj.e_norm.push(0.0);
    traj.grad.push(DVector::zeros(m));
    learner.after_step(&x0, 0);
    traj.x.push(x0);

    for t in 1..=horizon {
        let draw = StepDraw::draw(cfg, m, ny, rng);
        let x_prev = &traj.x[t - 1];
        let y_hat = problem.plant().evaluate(x_prev, problem.w(t - 1))? + &draw.noise;
        let s = learner.gradient(x_prev, t);
        let grad = noisy_gradient(problem, &y_hat, t, &s, &draw.eps, &draw.xi);
        let e = (&s - problem.input_cost(t).gradient(x_prev)) + &draw.eps + &draw.xi;
        let x = step(problem, x_prev, t, draw.v, cfg.alpha, &grad);
        learner.after_step(&x, t);
        traj.d.push((&x - &path.x_star[t]).norm());
        traj.v.push(draw.v);
        traj.e_norm.push(e.norm());
        traj.grad.push(grad);
        traj.x.push(x);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::tests::static_problem;
    use crate::problem::{BoxSchedule, CostSchedule, LinearPlantMap, QuadraticInputCost};
    use nalgebra::DMatrix;

    fn instance(horizon: usize) -> TimeVaryingProblem {
        let mut rng = stream_rng(21, 0);
        let g = DMatrix::from_fn(3, 6, |_, _| rng.random_range(-1.0..1.0));
        let g = &g / g.norm();
        let cost = QuadraticInputCost::new(
            (0..6).map(|_| rng.random_range(0.25..1.0)).collect(),
            (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(),
            vec![0.0; 6],
        )
        .unwrap();
        static_problem(
            g,
            DMatrix::identity(3, 3),
            1.0,
            DVector::from_vec(vec![1.0, -1.0, 0.5]),
            DVector::from_vec(vec![0.2, 0.1, -0.3]),
            cost,
            DVector::repeat(6, -2.0),
            DVector::repeat(6, 2.0),
            horizon,
        )
    }

    #[test]
    fn noisy_gradient_reductions() {
        let p = instance(2);
        let x = DVector::from_vec(vec![0.5, -0.1, 0.2, 1.0, -1.5, 0.0]);
        let y = p.plant().evaluate(&x, p.w(1)).unwrap();
        let s = p.input_cost(1).gradient(&x);
        let z = DVector::zeros(6);
        let g = noisy_gradient(&p, &y, 1, &s, &z, &z);
        assert!((g - p.exact_gradient(&x, 1).unwrap()).norm() < 1e-14);

        let n = DVector::from_vec(vec![0.3, -0.2, 0.1]);
        let g = noisy_gradient(&p, &(&y + &n), 1, &s, &z, &z);
        let expected = p.plant().g().tr_mul(&n) * p.beta();
        assert!((g - p.exact_gradient(&x, 1).unwrap() - expected).norm() < 1e-14);
    }

    #[test]
    fn noisy_gradient_is_unbiased() {
        let p = instance(2);
        let cfg = AlgoConfig {
            eps_sampler: ErrorSampler::gaussian(0.5).unwrap(),
            xi_sampler: ErrorSampler::bounded_uniform(0.3).unwrap(),
            ..AlgoConfig::exact(0.5, 1.0, 0)
        };
        let x = DVector::from_vec(vec![0.5, -0.1, 0.2, 1.0, -1.5, 0.0]);
        let y = p.plant().evaluate(&x, p.w(1)).unwrap();
        let s = p.input_cost(1).gradient(&x);
        let exact = p.exact_gradient(&x, 1).unwrap();
        let mut rng = stream_rng(8, 0);
        let n = 100_000;
        let mut sum = DVector::zeros(6);
        for _ in 0..n {
            let d = StepDraw::draw(&cfg, 6, 3, &mut rng);
            sum += noisy_gradient(&p, &y, 1, &s, &d.eps, &d.xi);
        }
        let mean = sum / n as f64;
        let se = ((0.25 + 0.09 / 3.0) / n as f64).sqrt();
        for m in 0..6 {
            assert!((mean[m] - exact[m]).abs() <= 3.0 * se, "coordinate {m}");
        }
    }

    #[test]
    fn step_examples() {
        let p = instance(2);
        let x = DVector::from_vec(vec![0.5, -0.1, 0.2, 1.0, -1.5, 0.0]);
        let g = DVector::repeat(6, 100.0);
        assert_eq!(step(&p, &x, 1, false, 0.5, &g), x);
        assert_eq!(step(&p, &x, 1, true, 0.0, &g), x);
        let path = p.optimum_path(1e-12).unwrap();
        let xs = &path.x_star[1];
        let next = step(&p, xs, 1, true, 0.5, &p.exact_gradient(xs, 1).unwrap());
        assert!((next - xs).norm() < 1e-10);
    }

    #[test]
    fn noise_free_contraction() {
        let p = instance(201);
        let path = p.optimum_path(1e-12).unwrap();
        let l = p.curvature(0).unwrap().l;
        let cfg = AlgoConfig::exact(1.0 / l, 1.0, 3);
        let zeta = p.curvature(0).unwrap().zeta(cfg.alpha);
        let traj = run(&p, &cfg, Some(DVector::repeat(6, 2.0)), 200, &path).unwrap();
        for t in 0..=200 {
            assert!(traj.d[t] <= zeta.powi(t as i32) * traj.d[0] + 1e-9, "t = {t}");
        }
        for t in 0..200 {
            if traj.d[t] > 1e-8 {
                assert!(traj.d[t + 1] / traj.d[t] <= zeta + 1e-12);
            }
        }
    }

    #[test]
    fn run_is_deterministic_and_feasible() {
        let p = instance(301);
        let path = p.optimum_path(1e-10).unwrap();
        let cfg = AlgoConfig {
            eps_sampler: ErrorSampler::gaussian(0.5).unwrap(),
            xi_sampler: ErrorSampler::weibull_tail(1.0, 0.2).unwrap(),
            meas_noise: ErrorSampler::gaussian(0.1).unwrap(),
            ..AlgoConfig::exact(0.5, 0.6, 99)
        };
        let a = run(&p, &cfg, None, 300, &path).unwrap();
        let b = run(&p, &cfg, None, 300, &path).unwrap();
        assert_eq!(a, b);
        for t in 0..=300 {
            assert!(p.boxes().contains(&a.x[t], t));
        }
        assert!(a.v.iter().skip(1).any(|v| !v));
        // Missing measurement with a static box: the iterate stalls.
        for t in 1..=300 {
            if !a.v[t] {
                assert_eq!(a.x[t], a.x[t - 1]);
            }
        }
    }

    #[test]
    fn shared_seed_shares_error_sequences_across_p() {
        let p = instance(51);
        let path = p.optimum_path(1e-10).unwrap();
        let base = AlgoConfig { eps_sampler: ErrorSampler::gaussian(0.5).unwrap(), ..AlgoConfig::exact(0.5, 1.0, 4) };
        let a = run(&p, &base, None, 50, &path).unwrap();
        let b = run(&p, &AlgoConfig { p: 0.5, ..base }, None, 50, &path).unwrap();
        // p = 1 consumes no Bernoulli draw, p < 1 does, so compare two p < 1 runs instead.
        let c = run(&p, &AlgoConfig { p: 0.9, ..base }, None, 50, &path).unwrap();
        assert_eq!(b.e_norm, c.e_norm);
        assert_eq!(a.len(), 51);
    }

    #[test]
    fn rejects_bad_configs_and_inputs() {
        let p = instance(10);
        let path = p.optimum_path(1e-10).unwrap();
        let l = p.curvature(0).unwrap().l;
        assert!(AlgoConfig::exact(2.0 / l, 1.0, 0).validate(&p).is_err());
        assert!(AlgoConfig::exact(0.0, 1.0, 0).validate(&p).is_err());
        assert!(AlgoConfig::exact(1.0 / l, 0.0, 0).validate(&p).is_err());
        assert!(AlgoConfig::exact(1.0 / l, 1.0, 0).validate(&p).is_ok());
        let cfg = AlgoConfig::exact(0.5, 1.0, 0);
        assert!(matches!(run(&p, &cfg, Some(DVector::repeat(6, 5.0)), 5, &path), Err(Error::Infeasible(_))));
        assert!(run(&p, &cfg, None, 10, &path).is_err());
    }

    #[test]
    fn csv_shape() {
        let p = instance(4);
        let path = p.optimum_path(1e-10).unwrap();
        let traj = run(&p, &AlgoConfig::exact(0.5, 1.0, 0), None, 3, &path).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "t,v,d_t,e_norm,x_1,x_2,x_3,x_4,x_5,x_6");
        assert_eq!(lines.len(), 5);
        assert!(text.ends_with('\n'));
        assert!(lines[1].starts_with("0,0,"));
    }

    #[test]
    fn time_varying_boxes_keep_iterates_feasible() {
        let horizon = 40;
        let lower: Vec<_> = (0..horizon).map(|t| DVector::repeat(2, -1.0 + 0.02 * t as f64)).collect();
        let upper: Vec<_> = (0..horizon).map(|t| DVector::repeat(2, 1.0 + 0.01 * t as f64)).collect();
        let costs = CostSchedule {
            beta: 1.0,
            y_ref: vec![DVector::from_element(1, 5.0); horizon],
            w: vec![DVector::zeros(1); horizon],
            palette: vec![QuadraticInputCost::new(vec![0.5; 2], vec![0.0; 2], vec![0.0; 2]).unwrap()],
            index: vec![0; horizon],
        };
        let p = TimeVaryingProblem::new(
            LinearPlantMap::new(DMatrix::from_element(1, 2, 0.7), DMatrix::zeros(1, 1)).unwrap(),
            costs,
            BoxSchedule::new(lower, upper).unwrap(),
        )
        .unwrap();
        let path = p.optimum_path(1e-10).unwrap();
        let cfg = AlgoConfig { xi_sampler: ErrorSampler::gaussian(1.0).unwrap(), ..AlgoConfig::exact(0.5, 0.5, 1) };
        let traj = run(&p, &cfg, None, horizon - 1, &path).unwrap();
        for t in 0..horizon {
            assert!(p.boxes().contains(&traj.x[t], t));
        }
    }
}
