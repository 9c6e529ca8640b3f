//! The time-varying problem
//!
//! ```text
//! min_x  f_t(x) = β/2 ‖G x + H w_t − y_ref,t‖² + Σ_m (a_m x_m² + b_m x_m + c_m)   s.t. x ∈ X_t
//! ```
//!
//! with box constraint sets `X_t`, plus an optimizer oracle that produces the
//! reference trajectory `x_{*,t}` and the path lengths `φ_t`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::subweibull::ErrorSampler;

/// Default fixed-point residual tolerance of the optimizer oracle.
pub const ORACLE_TOL: f64 = 1e-10;
/// Iteration cap of the optimizer oracle.
pub const ORACLE_MAX_ITER: usize = 1_000_000;

/// `y = G x + H w`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPlantMap {
    g: DMatrix<f64>,
    h: DMatrix<f64>,
}

impl LinearPlantMap {
    pub fn new(g: DMatrix<f64>, h: DMatrix<f64>) -> Result<Self> {
        if g.nrows() == 0 || g.ncols() == 0 {
            return Err(Error::invalid("G must have at least one row and one column"));
        }
        if h.nrows() != g.nrows() {
            return Err(Error::DimensionMismatch { context: "rows of H", expected: g.nrows(), found: h.nrows() });
        }
        if g.iter().chain(h.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("plant matrices must be finite"));
        }
        Ok(Self { g, h })
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn n_inputs(&self) -> usize {
        self.g.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.g.nrows()
    }

    pub fn n_disturbances(&self) -> usize {
        self.h.ncols()
    }

    pub fn evaluate(&self, x: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("input vector", self.n_inputs(), x.len())?;
        check_dim("disturbance vector", self.n_disturbances(), w.len())?;
        Ok(&self.g * x + &self.h * w)
    }

    /// `G x + H w + n` with `n` drawn entrywise from `noise`.
    pub fn measure<R: Rng + ?Sized>(&self, x: &DVector<f64>, w: &DVector<f64>, noise: &ErrorSampler, rng: &mut R) -> Result<DVector<f64>> {
        let y = self.evaluate(x, w)?;
        Ok(y + DVector::from_fn(self.n_outputs(), |_, _| noise.sample(rng)))
    }
}

/// Per-step box constraints `lower_t ≤ x ≤ upper_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSchedule {
    lower: Vec<DVector<f64>>,
    upper: Vec<DVector<f64>>,
}

impl BoxSchedule {
    pub fn new(lower: Vec<DVector<f64>>, upper: Vec<DVector<f64>>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::invalid("box schedule must cover at least one step"));
        }
        check_dim("upper bound schedule length", lower.len(), upper.len())?;
        let dim = lower[0].len();
        for (t, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            check_dim("lower bound", dim, lo.len())?;
            check_dim("upper bound", dim, hi.len())?;
            if lo.iter().zip(hi.iter()).any(|(l, u)| !(l.is_finite() && u.is_finite() && l <= u)) {
                return Err(Error::invalid(format!("box at step {t} is empty or unbounded")));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The same box at every one of `horizon` steps.
    pub fn constant(lower: DVector<f64>, upper: DVector<f64>, horizon: usize) -> Result<Self> {
        Self::new(vec![lower; horizon], vec![upper; horizon])
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn lower(&self, t: usize) -> &DVector<f64> {
        &self.lower[t]
    }

    pub fn upper(&self, t: usize) -> &DVector<f64> {
        &self.upper[t]
    }

    pub fn midpoint(&self, t: usize) -> DVector<f64> {
        (&self.lower[t] + &self.upper[t]) * 0.5
    }

    pub fn contains(&self, x: &DVector<f64>, t: usize) -> bool {
        x.iter().zip(self.lower[t].iter().zip(self.upper[t].iter())).all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    /// Euclidean projection onto the box at step `t` (componentwise clamp).
    pub fn project(&self, z: &DVector<f64>, t: usize) -> DVector<f64> {
        DVector::from_iterator(z.len(), z.iter().zip(self.lower[t].iter().zip(self.upper[t].iter())).map(|(v, (l, u))| v.clamp(*l, *u)))
    }
}

/// `U(x) = Σ_m a_m x_m² + b_m x_m + c_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticInputCost {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl QuadraticInputCost {
    pub fn new(a: Vec<f64>, b: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        check_dim("linear coefficients b", a.len(), b.len())?;
        check_dim("constant coefficients c", a.len(), c.len())?;
        if a.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("quadratic input-cost coefficients a_m must be > 0"));
        }
        if b.iter().chain(&c).any(|v| !v.is_finite()) {
            return Err(Error::invalid("input-cost coefficients must be finite"));
        }
        Ok(Self { a, b, c })
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    /// `u_m(x_m)`.
    pub fn coordinate_value(&self, m: usize, xm: f64) -> f64 {
        self.a[m] * xm * xm + self.b[m] * xm + self.c[m]
    }

    /// `u_m'(x_m)`.
    pub fn coordinate_gradient(&self, m: usize, xm: f64) -> f64 {
        2.0 * self.a[m] * xm + self.b[m]
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        (0..self.dim()).map(|m| self.coordinate_value(m, x[m])).sum()
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim(), |m, _| self.coordinate_gradient(m, x[m]))
    }
}

/// Cost data over the horizon. `U_t` is `palette[index[t]]`, which keeps
/// switching schedules compact and lets curvature be computed once per regime.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSchedule {
    pub beta: f64,
    pub y_ref: Vec<DVector<f64>>,
    pub w: Vec<DVector<f64>>,
    pub palette: Vec<QuadraticInputCost>,
    pub index: Vec<usize>,
}

/// `(μ, L)`: strong convexity and smoothness constants of `f_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvaturePair {
    pub mu: f64,
    pub l: f64,
}

impl CurvaturePair {
    /// Contraction factor of `x ↦ x − α∇f_t(x)`.
    pub fn zeta(&self, alpha: f64) -> f64 {
        crate::bounds::zeta(alpha, self.mu, self.l)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeVaryingProblem {
    plant: LinearPlantMap,
    costs: CostSchedule,
    boxes: BoxSchedule,
    gtg: DMatrix<f64>,
    curvature: Vec<CurvaturePair>,
}

impl TimeVaryingProblem {
    pub fn new(plant: LinearPlantMap, costs: CostSchedule, boxes: BoxSchedule) -> Result<Self> {
        let horizon = boxes.len();
        check_dim("reference schedule length", horizon, costs.y_ref.len())?;
        check_dim("disturbance schedule length", horizon, costs.w.len())?;
        check_dim("input-cost schedule length", horizon, costs.index.len())?;
        if !(costs.beta > 0.0 && costs.beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be > 0, got {}", costs.beta)));
        }
        if costs.palette.is_empty() {
            return Err(Error::invalid("at least one input cost is required"));
        }
        let m = plant.n_inputs();
        check_dim("box dimension", m, boxes.lower(0).len())?;
        for u in &costs.palette {
            check_dim("input-cost dimension", m, u.dim())?;
        }
        for t in 0..horizon {
            check_dim("reference dimension", plant.n_outputs(), costs.y_ref[t].len())?;
            check_dim("disturbance dimension", plant.n_disturbances(), costs.w[t].len())?;
            if costs.index[t] >= costs.palette.len() {
                return Err(Error::invalid(format!(
                    "input-cost index {} at step {t} exceeds palette of {}",
                    costs.index[t],
                    costs.palette.len()
                )));
            }
        }
        let gtg = plant.g().transpose() * plant.g() * costs.beta;
        let curvature = costs
            .palette
            .iter()
            .map(|u| {
                let hess = &gtg + DMatrix::from_diagonal(&DVector::from_iterator(m, u.a.iter().map(|a| 2.0 * a)));
                let eig = SymmetricEigen::new(hess).eigenvalues;
                CurvaturePair { mu: eig.min(), l: eig.max() }
            })
            .collect::<Vec<_>>();
        if curvature.iter().any(|c| !(c.mu > 0.0)) {
            return Err(Error::invalid("cost is not strongly convex"));
        }
        Ok(Self { plant, costs, boxes, gtg, curvature })
    }

    pub fn plant(&self) -> &LinearPlantMap {
        &self.plant
    }

    pub fn costs(&self) -> &CostSchedule {
        &self.costs
    }

    pub fn boxes(&self) -> &BoxSchedule {
        &self.boxes
    }

    /// Number of time indices `t = 0, ..., horizon − 1`.
    pub fn horizon(&self) -> usize {
        self.boxes.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.plant.n_inputs()
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t < self.horizon() {
            Ok(())
        } else {
            Err(Error::OutOfHorizon { t, horizon: self.horizon() })
        }
    }

    pub fn input_cost(&self, t: usize) -> &QuadraticInputCost {
        &self.costs.palette[self.costs.index[t]]
    }

    pub fn w(&self, t: usize) -> &DVector<f64> {
        &self.costs.w[t]
    }

    pub fn y_ref(&self, t: usize) -> &DVector<f64> {
        &self.costs.y_ref[t]
    }

    pub fn beta(&self) -> f64 {
        self.costs.beta
    }

    pub fn value(&self, x: &DVector<f64>, t: usize) -> Result<f64> {
        self.check_step(t)?;
        let r = self.plant.evaluate(x, self.w(t))? - self.y_ref(t);
        Ok(0.5 * self.beta() * r.norm_squared() + self.input_cost(t).value(x))
    }

    /// `β Gᵀ (y − y_ref,t)`, the tracking part of the gradient evaluated at an
    /// (possibly measured) output `y`.
    pub fn tracking_gradient(&self, y: &DVector<f64>, t: usize) -> DVector<f64> {
        self.plant.g().tr_mul(&(y - self.y_ref(t))) * self.beta()
    }

    /// `∇f_t(x)` with the true plant output.
    pub fn exact_gradient(&self, x: &DVector<f64>, t: usize) -> Result<DVector<f64>> {
        self.check_step(t)?;
        let y = self.plant.evaluate(x, self.w(t))?;
        Ok(self.tracking_gradient(&y, t) + self.input_cost(t).gradient(x))
    }

    pub fn project(&self, z: &DVector<f64>, t: usize) -> DVector<f64> {
        self.boxes.project(z, t)
    }

    pub fn curvature(&self, t: usize) -> Result<CurvaturePair> {
        self.check_step(t)?;
        Ok(self.curvature[self.costs.index[t]])
    }

    /// `(inf_t μ_t, sup_t L_t)` over the regimes that actually occur.
    pub fn curvature_envelope(&self) -> CurvaturePair {
        let mut used = vec![false; self.curvature.len()];
        for &i in &self.costs.index {
            used[i] = true;
        }
        let active = self.curvature.iter().zip(&used).filter(|(_, u)| **u).map(|(c, _)| c);
        active.fold(CurvaturePair { mu: f64::INFINITY, l: 0.0 }, |acc, c| CurvaturePair { mu: acc.mu.min(c.mu), l: acc.l.max(c.l) })
    }

    /// `β GᵀG + diag(2a)` at step `t`.
    pub fn hessian(&self, t: usize) -> DMatrix<f64> {
        let a = &self.input_cost(t).a;
        &self.gtg + DMatrix::from_diagonal(&DVector::from_iterator(a.len(), a.iter().map(|v| 2.0 * v)))
    }

    /// `x_{*,t}` via projected gradient with step `1/L_t` from the box midpoint.
    pub fn optimal_point(&self, t: usize, tol: f64) -> Result<DVector<f64>> {
        self.check_step(t)?;
        self.optimal_point_from(t, tol, self.boxes.midpoint(t))
    }

    /// `x_{*,t}` via projected gradient with step `1/L_t` from `start`.
    ///
    /// The map `x ↦ proj(x − ∇f_t(x)/L)` contracts with factor `1 − μ/L`, so
    /// `‖x − x_*‖ ≤ (L/μ) ‖x − proj(x − ∇f_t(x)/L)‖`. Iteration stops once that
    /// distance certificate is below `tol`, which also puts the fixed-point
    /// residual below `tol`.
    pub fn optimal_point_from(&self, t: usize, tol: f64, start: DVector<f64>) -> Result<DVector<f64>> {
        self.check_step(t)?;
        if !(tol > 0.0) {
            return Err(Error::invalid(format!("oracle tolerance must be > 0, got {tol}")));
        }
        check_dim("oracle start", self.n_inputs(), start.len())?;
        let curv = self.curvature(t)?;
        let step = 1.0 / curv.l;
        let target = tol * curv.mu / curv.l;
        let hess = self.hessian(t);
        // ∇f_t(x) = Q x + c with c = β Gᵀ(H w_t − y_ref,t) + b.
        let offset = self.tracking_gradient(&(self.plant.h() * self.w(t)), t) + DVector::from_column_slice(&self.input_cost(t).b);
        let mut x = self.project(&start, t);
        let mut residual = f64::INFINITY;
        for _ in 0..ORACLE_MAX_ITER {
            let next = self.project(&(&x - (&hess * &x + &offset) * step), t);
            residual = (&next - &x).norm();
            if residual <= target {
                return Ok(next);
            }
            x = next;
        }
        Err(Error::NotConverged { iterations: ORACLE_MAX_ITER, residual, tol })
    }

    /// Optimizers for every step, warm-started along the horizon.
    pub fn optimum_path(&self, tol: f64) -> Result<OptimumPath> {
        let mut x_star = Vec::with_capacity(self.horizon());
        let mut prev = self.boxes.midpoint(0);
        for t in 0..self.horizon() {
            let x = self.optimal_point_from(t, tol, prev)?;
            prev = x.clone();
            x_star.push(x);
        }
        let phi = x_star.windows(2).map(|w| (&w[1] - &w[0]).norm()).collect();
        Ok(OptimumPath { x_star, phi })
    }
}

/// `x_{*,t}` for every step and `φ_t = ‖x_{*,t} − x_{*,t+1}‖`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimumPath {
    pub x_star: Vec<DVector<f64>>,
    pub phi: Vec<f64>,
}

impl OptimumPath {
    /// `φ_t`; errors at the last step of the horizon.
    pub fn path_length(&self, t: usize) -> Result<f64> {
        self.phi.get(t).copied().ok_or(Error::OutOfHorizon { t: t + 1, horizon: self.x_star.len() })
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { context, expected, found })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::par::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;

    /// Static problem with a single regime.
    pub(crate) fn static_problem(
        g: DMatrix<f64>,
        h: DMatrix<f64>,
        beta: f64,
        y_ref: DVector<f64>,
        w: DVector<f64>,
        cost: QuadraticInputCost,
        lower: DVector<f64>,
        upper: DVector<f64>,
        horizon: usize,
    ) -> TimeVaryingProblem {
        let costs = CostSchedule { beta, y_ref: vec![y_ref; horizon], w: vec![w; horizon], palette: vec![cost], index: vec![0; horizon] };
        TimeVaryingProblem::new(LinearPlantMap::new(g, h).unwrap(), costs, BoxSchedule::constant(lower, upper, horizon).unwrap()).unwrap()
    }

    fn random_instance(seed: u64) -> TimeVaryingProblem {
        let mut rng = stream_rng(seed, 0);
        let (m, n) = (6, 3);
        let g = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        let h = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let cost = QuadraticInputCost::new(
            (0..m).map(|_| rng.random_range(0.1..1.0)).collect(),
            (0..m).map(|_| rng.random_range(-1.0..1.0)).collect(),
            vec![0.0; m],
        )
        .unwrap();
        let yref = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let w = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        static_problem(g, h, 1.0, yref, w, cost, DVector::repeat(m, -1.0), DVector::repeat(m, 1.0), 2)
    }

    fn wide_box(m: usize) -> (DVector<f64>, DVector<f64>) {
        (DVector::repeat(m, -1e6), DVector::repeat(m, 1e6))
    }

    #[test]
    fn evaluate_map_examples() {
        let p = LinearPlantMap::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        let y = p.evaluate(&DVector::from_vec(vec![1.0, 2.0]), &DVector::zeros(2)).unwrap();
        assert_eq!(y, DVector::from_vec(vec![1.0, 2.0]));
        let w0 = DVector::from_vec(vec![3.0, -1.0]);
        assert_eq!(p.evaluate(&DVector::zeros(2), &w0).unwrap(), w0);
        let p = LinearPlantMap::new(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DMatrix::from_element(1, 1, 2.0)).unwrap();
        let y = p.evaluate(&DVector::from_vec(vec![1.0, 1.0]), &DVector::from_element(1, 3.0)).unwrap();
        assert_eq!(y[0], 8.0);
        assert!(p.evaluate(&DVector::zeros(3), &DVector::zeros(1)).is_err());
    }

    #[test]
    fn measure_output_examples() {
        let p = LinearPlantMap::new(DMatrix::from_element(2, 2, 0.5), DMatrix::identity(2, 2)).unwrap();
        let (x, w) = (DVector::from_vec(vec![1.0, -2.0]), DVector::from_vec(vec![0.3, 0.1]));
        let truth = p.evaluate(&x, &w).unwrap();
        let mut rng = stream_rng(5, 0);
        assert_eq!(p.measure(&x, &w, &ErrorSampler::zero(), &mut rng).unwrap(), truth);

        let g = ErrorSampler::gaussian(1.0).unwrap();
        let n = 100_000;
        let mut sum = DVector::zeros(2);
        for _ in 0..n {
            sum += p.measure(&x, &w, &g, &mut rng).unwrap();
        }
        let mean = sum / n as f64;
        for i in 0..2 {
            assert!((mean[i] - truth[i]).abs() < 3.0 / (n as f64).sqrt());
        }

        let u = ErrorSampler::bounded_uniform(0.2).unwrap();
        for _ in 0..1000 {
            let y = p.measure(&x, &w, &u, &mut rng).unwrap();
            assert!((y - &truth).norm() <= 0.2 * 2f64.sqrt());
        }
    }

    #[test]
    fn gradient_examples() {
        // G = 0, a = 1, b = 0: ∇f = 2x.
        let m = 3;
        let (lo, hi) = wide_box(m);
        let cost = QuadraticInputCost::new(vec![1.0; m], vec![0.0; m], vec![0.0; m]).unwrap();
        let p = static_problem(DMatrix::zeros(1, m), DMatrix::zeros(1, 1), 1.0, DVector::zeros(1), DVector::zeros(1), cost, lo, hi, 3);
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        assert_eq!(p.exact_gradient(&x, 0).unwrap(), &x * 2.0);
        assert!(matches!(p.exact_gradient(&x, 3), Err(Error::OutOfHorizon { .. })));
    }

    #[test]
    fn gradient_vanishes_at_unconstrained_minimizer() {
        let p = random_instance(1);
        let hess = p.hessian(0);
        let rhs = -(p.tracking_gradient(&(p.plant().h() * p.w(0)), 0) + DVector::from_column_slice(&p.input_cost(0).b));
        let x = hess.cholesky().unwrap().solve(&rhs);
        assert!(p.exact_gradient(&x, 0).unwrap().norm() < 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = random_instance(2);
        let mut rng = stream_rng(2, 1);
        let h = 1e-5;
        for _ in 0..20 {
            let x = DVector::from_fn(6, |_, _| rng.random_range(-2.0..2.0));
            let g = p.exact_gradient(&x, 0).unwrap();
            for m in 0..6 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[m] += h;
                xm[m] -= h;
                let fd = (p.value(&xp, 0).unwrap() - p.value(&xm, 0).unwrap()) / (2.0 * h);
                assert!((fd - g[m]).abs() <= 1e-6 * g[m].abs().max(1.0), "{fd} vs {}", g[m]);
            }
        }
    }

    #[test]
    fn projection_examples() {
        let b = BoxSchedule::constant(DVector::zeros(2), DVector::repeat(2, 1.0), 1).unwrap();
        let inside = DVector::from_vec(vec![0.3, 0.9]);
        assert_eq!(b.project(&inside, 0), inside);
        assert_eq!(b.project(&DVector::from_vec(vec![100.0, -100.0]), 0), DVector::from_vec(vec![1.0, 0.0]));

        let mut rng = stream_rng(3, 0);
        let b = BoxSchedule::constant(DVector::from_vec(vec![-1.0, 0.0, 2.0]), DVector::from_vec(vec![1.0, 0.5, 4.0]), 1).unwrap();
        for _ in 0..20 {
            let z = DVector::from_fn(3, |_, _| rng.random_range(-5.0..5.0));
            let pz = b.project(&z, 0);
            for _ in 0..100 {
                let x = DVector::from_fn(3, |i, _| rng.random_range(b.lower(0)[i]..=b.upper(0)[i]));
                assert!((&z - &pz).dot(&(x - &pz)) <= 1e-12);
            }
        }
        assert!(BoxSchedule::constant(DVector::repeat(1, 1.0), DVector::repeat(1, 0.0), 1).is_err());
    }

    #[test]
    fn curvature_examples() {
        let m = 4;
        let (lo, hi) = wide_box(m);
        let cost = QuadraticInputCost::new(vec![1.0; m], vec![0.0; m], vec![0.0; m]).unwrap();
        let p = static_problem(
            DMatrix::zeros(2, m),
            DMatrix::zeros(2, 1),
            1.0,
            DVector::zeros(2),
            DVector::zeros(1),
            cost,
            lo.clone(),
            hi.clone(),
            1,
        );
        let c = p.curvature(0).unwrap();
        assert!((c.mu - 2.0).abs() < 1e-12 && (c.l - 2.0).abs() < 1e-12);

        let cost = QuadraticInputCost::new(vec![0.5; m], vec![0.0; m], vec![0.0; m]).unwrap();
        let p = static_problem(DMatrix::identity(m, m), DMatrix::zeros(m, 1), 1.0, DVector::zeros(m), DVector::zeros(1), cost, lo, hi, 1);
        let c = p.curvature(0).unwrap();
        assert!((c.mu - 2.0).abs() < 1e-12 && (c.l - 2.0).abs() < 1e-12);
    }

    #[test]
    fn curvature_matches_independent_eigensolver() {
        // Power iteration and inverse power iteration (via Cholesky) as the independent oracle.
        let p = random_instance(4);
        let hess = p.hessian(0);
        let c = p.curvature(0).unwrap();
        let mut v = DVector::repeat(6, 1.0);
        for _ in 0..5000 {
            v = &hess * &v;
            v /= v.norm();
        }
        let l = v.dot(&(&hess * &v));
        let chol = hess.clone().cholesky().unwrap();
        let mut u = DVector::repeat(6, 1.0);
        for _ in 0..5000 {
            u = chol.solve(&u);
            u /= u.norm();
        }
        let mu = u.dot(&(&hess * &u));
        assert!((l - c.l).abs() < 1e-8, "{l} {}", c.l);
        assert!((mu - c.mu).abs() < 1e-8, "{mu} {}", c.mu);
    }

    #[test]
    fn optimal_point_examples() {
        // Interior minimizer.
        let p = random_instance(5);
        let hess = p.hessian(0);
        let rhs = -(p.tracking_gradient(&(p.plant().h() * p.w(0)), 0) + DVector::from_column_slice(&p.input_cost(0).b));
        let unconstrained = hess.cholesky().unwrap().solve(&rhs);
        let (lo, hi) = wide_box(6);
        let q = static_problem(
            p.plant().g().clone(),
            p.plant().h().clone(),
            1.0,
            p.y_ref(0).clone(),
            p.w(0).clone(),
            p.input_cost(0).clone(),
            lo,
            hi,
            1,
        );
        let x = q.optimal_point(0, 1e-10).unwrap();
        assert!((x - unconstrained).norm() < 1e-8);

        // f(x) = (x − 5)², box [0, 1].
        let cost = QuadraticInputCost::new(vec![1.0], vec![-10.0], vec![25.0]).unwrap();
        let q = static_problem(
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            1.0,
            DVector::zeros(1),
            DVector::zeros(1),
            cost,
            DVector::zeros(1),
            DVector::repeat(1, 1.0),
            1,
        );
        assert!((q.optimal_point(0, 1e-10).unwrap()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn optimal_point_two_start_agreement() {
        for seed in 0..5 {
            let p = random_instance(10 + seed);
            let tol = 1e-10;
            let a = p.optimal_point(0, tol).unwrap();
            let b = p.optimal_point_from(0, tol, DVector::repeat(6, -1.0)).unwrap();
            assert!((&a - &b).norm() <= 10.0 * tol);
            let step = 1.0 / p.curvature(0).unwrap().l;
            let res = (&a - p.project(&(&a - p.exact_gradient(&a, 0).unwrap() * step), 0)).norm();
            assert!(res <= tol);
        }
    }

    #[test]
    fn path_length_examples() {
        let p = random_instance(6);
        let path = p.optimum_path(1e-10).unwrap();
        assert!(path.path_length(0).unwrap() <= 2e-10 * 10.0);
        assert!(path.path_length(1).is_err());

        // G = I, a → tiny, reference moved by Δ: the optimizer moves by ≈ Δ.
        let m = 2;
        let (lo, hi) = wide_box(m);
        let cost = QuadraticInputCost::new(vec![1e-9; m], vec![0.0; m], vec![0.0; m]).unwrap();
        for scale in [0.5, 1.0, 2.0] {
            let delta = DVector::from_vec(vec![3.0, 4.0]) * scale;
            let costs = CostSchedule {
                beta: 1.0,
                y_ref: vec![DVector::zeros(m), delta.clone()],
                w: vec![DVector::zeros(1); 2],
                palette: vec![cost.clone()],
                index: vec![0; 2],
            };
            let p = TimeVaryingProblem::new(
                LinearPlantMap::new(DMatrix::identity(m, m), DMatrix::zeros(m, 1)).unwrap(),
                costs,
                BoxSchedule::constant(lo.clone(), hi.clone(), 2).unwrap(),
            )
            .unwrap();
            let phi = p.optimum_path(1e-12).unwrap().phi[0];
            assert!((phi - 5.0 * scale).abs() < 1e-6, "{phi}");
        }
    }

    #[test]
    fn rejects_bad_costs() {
        assert!(QuadraticInputCost::new(vec![0.0], vec![0.0], vec![0.0]).is_err());
        assert!(QuadraticInputCost::new(vec![1.0], vec![0.0, 1.0], vec![0.0]).is_err());
    }

    proptest! {
        #[test]
        fn projection_idempotent_and_nonexpansive(
            a in proptest::collection::vec(-10.0f64..10.0, 4),
            b in proptest::collection::vec(-10.0f64..10.0, 4),
        ) {
            let boxes = BoxSchedule::constant(DVector::from_vec(vec![-1.0, 0.0, -3.0, 2.0]), DVector::from_vec(vec![1.0, 5.0, -2.0, 2.0]), 1).unwrap();
            let (a, b) = (DVector::from_vec(a), DVector::from_vec(b));
            let pa = boxes.project(&a, 0);
            prop_assert_eq!(boxes.project(&pa, 0), pa.clone());
            prop_assert!((pa - boxes.project(&b, 0)).norm() <= (a - b).norm() + 1e-12);
        }

        #[test]
        fn gradient_step_contracts(seed in 0u64..1000, alpha_frac in 0.01f64..0.99) {
            let p = random_instance(seed);
            let c = p.curvature(0).unwrap();
            prop_assert!(c.mu <= c.l);
            let alpha = alpha_frac * 2.0 / c.l;
            let zeta = c.zeta(alpha);
            let mut rng = stream_rng(seed, 9);
            let x = DVector::from_fn(6, |_, _| rng.random_range(-3.0..3.0));
            let y = DVector::from_fn(6, |_, _| rng.random_range(-3.0..3.0));
            let tx = &x - p.exact_gradient(&x, 0).unwrap() * alpha;
            let ty = &y - p.exact_gradient(&y, 0).unwrap() * alpha;
            prop_assert!((tx - ty).norm() <= zeta * (x - y).norm() + 1e-12);
        }
    }
}
