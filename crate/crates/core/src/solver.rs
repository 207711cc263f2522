//! Capacity-MSE solver.
//!
//! The constrained program is solved by bisection on the sensing multiplier
//! `lambda`: for each `lambda` the concave Lagrangian `MI(Q) - lambda * mse(Q)`
//! is maximized over `{Q >= 0, tr Q <= P}` with a spectral projected gradient
//! method (Barzilai-Borwein steps, nonmonotone Armijo backtracking), warm
//! started from the nearest bracket end. Rates are computed in nats internally
//! and reported in bits.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exec::Exec;
use crate::information::{mi_gradient_unchecked, mi_unchecked, MseBound, MseEvaluator};
use crate::linalg::{self, c, frobenius, inner, CMat};
use crate::model::{trace_ball_projection, CovMatrix, Scenario, ScenarioShape, TradeoffPoint, TradeoffStatus};

/// Relative margin around `delta_min` inside which a target is treated as the endpoint.
pub const ENDPOINT_MARGIN: f64 = 1e-6;
/// Sweep upper limit, as a multiple of `delta_min`, when the communication endpoint has no finite MSE.
pub const OPEN_ENDED_CAP: f64 = 10.0;

const NONMONOTONE_MEMORY: usize = 10;
const ARMIJO_SUFFICIENT: f64 = 1e-4;
/// Smallest line-search step, relative to `P`, before the search is declared stalled.
const STEP_FLOOR: f64 = 1e-13;
/// Log-multiplier bracket width below which blending the bracket ends is attempted.
const BLEND_WIDTH: f64 = 0.05;

fn default_kkt_tol() -> f64 {
    1e-6
}
fn default_max_outer() -> usize {
    200
}
fn default_max_inner() -> usize {
    5000
}
fn default_step_init() -> f64 {
    1.0
}
fn default_armijo() -> f64 {
    0.5
}
fn default_growth() -> f64 {
    4.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_kkt_tol")]
    pub kkt_tol: f64,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    #[serde(default = "default_max_inner")]
    pub max_inner: usize,
    /// Initial projected-gradient step, relative to `P / ||grad||_F`.
    #[serde(default = "default_step_init")]
    pub step_init: f64,
    /// Backtracking factor.
    #[serde(default = "default_armijo")]
    pub armijo: f64,
    /// Multiplicative growth of the multiplier while bracketing.
    #[serde(default = "default_growth")]
    pub dual_bracket_growth: f64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            kkt_tol: default_kkt_tol(),
            max_outer: default_max_outer(),
            max_inner: default_max_inner(),
            step_init: default_step_init(),
            armijo: default_armijo(),
            dual_bracket_growth: default_growth(),
            exec: Exec::default(),
        }
    }
}

impl SolverConfig {
    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kkt_tol > 0.0 && self.step_init > 0.0) {
            return Err(invalid("kkt_tol and step_init must be positive"));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(invalid("iteration limits must be positive"));
        }
        if !(self.armijo > 0.0 && self.armijo < 1.0) {
            return Err(invalid("armijo must lie in (0, 1)"));
        }
        if !(self.dual_bracket_growth > 1.0) {
            return Err(invalid("dual_bracket_growth must exceed 1"));
        }
        Ok(())
    }
}

/// Water-filling over parallel channels with gains `gains` (SNR per unit power).
///
/// Returns the powers and the water level `1/nu`. All-zero gains spread power evenly.
pub fn water_fill(gains: &[f64], power: f64) -> (Vec<f64>, f64) {
    let n = gains.len();
    let mut order: Vec<usize> = (0..n).filter(|&i| gains[i] > 0.0).collect();
    if order.is_empty() {
        return (vec![power / n as f64; n], f64::INFINITY);
    }
    order.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]));
    let mut level = 0.0;
    let mut inv_sum = 0.0;
    for (count, &i) in order.iter().enumerate() {
        inv_sum += 1.0 / gains[i];
        let candidate = (power + inv_sum) / (count + 1) as f64;
        if candidate <= 1.0 / gains[i] {
            break;
        }
        level = candidate;
    }
    let powers = gains.iter().map(|&g| if g > 0.0 { (level - 1.0 / g).max(0.0) } else { 0.0 }).collect();
    (powers, level)
}

/// Sensing-optimal endpoint: `delta_min` and its minimizer.
#[derive(Debug, Clone)]
pub struct SensingOptimum {
    pub delta_min: f64,
    pub q: CovMatrix,
    pub kkt_residual: f64,
    pub status: TradeoffStatus,
    pub iterations: usize,
}

/// Output of [`sweep_curve`].
#[derive(Debug, Clone)]
pub struct Sweep {
    pub delta_min: f64,
    /// MSE of the capacity-achieving input; `+inf` when some parameter is unobservable there.
    pub delta_comm: f64,
    /// True when the sweep was capped at `OPEN_ENDED_CAP * delta_min` instead of `delta_comm`.
    pub open_ended: bool,
    pub points: Vec<TradeoffPoint>,
    /// Same sweep with the Bayesian CRB as constraint (an upper bound on the curve).
    pub bcrb_points: Option<Vec<TradeoffPoint>>,
}

struct InnerResult {
    q: CMat,
    value: f64,
    residual: f64,
    converged: bool,
    iterations: usize,
}

/// `||Proj(Q + s g) - Q||_F / P` with `s = P / ||g||_F`: zero exactly at a stationary point.
fn stationarity(q: &CMat, g: &CMat, power: f64) -> f64 {
    let gn = frobenius(g);
    if gn == 0.0 || !gn.is_finite() {
        return if gn == 0.0 { 0.0 } else { f64::INFINITY };
    }
    let p = trace_ball_projection(&(q + g * c(power / gn)), power);
    frobenius(&(p.matrix() - q)) / power
}

/// Power multiplier estimate `Re tr(Q grad) / tr Q`.
fn power_multiplier(q: &CMat, g: &CMat) -> f64 {
    let tr = linalg::trace_re(q);
    if tr > 0.0 {
        (linalg::trace_of_product(q, g).re / tr).max(0.0)
    } else {
        0.0
    }
}

/// Reusable solver for one scenario: caches the prior sample operators and both endpoints.
pub struct TradeoffSolver<'a> {
    scenario: &'a Scenario,
    config: SolverConfig,
    evaluator: MseEvaluator,
    capacity: TradeoffPoint,
}

impl<'a> TradeoffSolver<'a> {
    pub fn new(scenario: &'a Scenario, config: SolverConfig) -> Result<Self> {
        scenario.validate()?;
        config.validate()?;
        let thetas = scenario.theta_samples();
        let evaluator = MseEvaluator::from_parts(&scenario.sensing, scenario.weights.as_slice(), &thetas, config.exec)?;
        let mut solver = TradeoffSolver { scenario, config, evaluator, capacity: placeholder_point(scenario.tx_dim()) };
        solver.capacity = solver.compute_capacity();
        Ok(solver)
    }

    pub fn evaluator(&self) -> &MseEvaluator {
        &self.evaluator
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    fn power(&self) -> f64 {
        self.scenario.power
    }

    fn compute_capacity(&self) -> TradeoffPoint {
        let user = &self.scenario.user;
        let m = user.tx_dim();
        let p = self.power();
        let svd = user.h.clone().svd(false, true);
        let v_t = svd.v_t.expect("requested");
        let gains: Vec<f64> = svd.singular_values.iter().map(|s| s * s / user.noise_var).collect();
        let q = if gains.iter().all(|&g| g <= 0.0) {
            CovMatrix::scaled_identity(m, p)
        } else {
            let (powers, _) = water_fill(&gains, p);
            let mut acc = CMat::zeros(m, m);
            for (i, &pw) in powers.iter().enumerate() {
                if pw > 0.0 {
                    let v = v_t.row(i).adjoint();
                    acc += &v * v.adjoint() * c(pw);
                }
            }
            CovMatrix::new(acc).expect("finite")
        };
        let mse = self.evaluator.ecrb(&q);
        self.point(q.into_matrix(), mse, mse, 0.0, MseBound::Ecrb, TradeoffStatus::Optimal)
    }

    /// Capacity-achieving input with its (possibly infinite) MSE.
    pub fn capacity_only(&self) -> TradeoffPoint {
        self.capacity.clone()
    }

    fn point(
        &self,
        q: CMat,
        delta: f64,
        mse: f64,
        lambda: f64,
        bound: MseBound,
        status: TradeoffStatus,
    ) -> TradeoffPoint {
        let user = &self.scenario.user;
        let mi = mi_unchecked(user, &q);
        let mut grad = mi_gradient_unchecked(user, &q);
        if lambda > 0.0 && lambda.is_finite() {
            if let Ok((_, g)) = self.evaluator.value_and_gradient(bound, &q) {
                grad -= g * c(lambda);
            }
        }
        let mut residual = stationarity(&q, &grad, self.power());
        if lambda > 0.0 && delta.is_finite() {
            residual = residual.max((mse - delta).abs() / delta);
        }
        let status = if status == TradeoffStatus::Optimal && residual > self.config.kkt_tol {
            TradeoffStatus::MaxIter
        } else {
            status
        };
        TradeoffPoint {
            delta,
            rate_bits: mi / LN_2,
            mse,
            nu_power: power_multiplier(&q, &grad),
            q_opt: CovMatrix::new(q).expect("iterates are finite"),
            kkt_residual: residual,
            lambda_sensing: lambda,
            status,
        }
    }

    fn start(&self) -> CMat {
        CMat::identity(self.scenario.tx_dim(), self.scenario.tx_dim()) * c(self.power() / self.scenario.tx_dim() as f64)
    }

    /// Spectral projected gradient ascent of `f` over the trace ball.
    ///
    /// Stops at stationarity `tol`. If the line search stalls at rounding level first, the
    /// result still counts as converged when the residual is within `accept`.
    fn maximize<F>(&self, f: F, q0: &CMat, tol: f64, accept: f64) -> InnerResult
    where
        F: Fn(&CMat) -> Option<(f64, CMat)>,
    {
        let power = self.power();
        let mut q = trace_ball_projection(q0, power).into_matrix();
        let (mut value, mut grad) = match f(&q) {
            Some(vg) => vg,
            None => {
                q = self.start();
                f(&q).expect("objective finite at the scaled identity")
            }
        };
        let gn = frobenius(&grad);
        let mut alpha = if gn > 0.0 { self.config.step_init * power / gn } else { 1.0 };
        let mut history = vec![value];
        let mut residual = stationarity(&q, &grad, power);
        for it in 0..self.config.max_inner {
            if residual <= tol {
                return InnerResult { q, value, residual, converged: true, iterations: it };
            }
            let target = trace_ball_projection(&(&q + &grad * c(alpha)), power).into_matrix();
            let d = target - &q;
            let slope = inner(&grad, &d);
            let reference = history.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let floor = STEP_FLOOR * power / frobenius(&d).max(f64::MIN_POSITIVE);
            let mut t = 1.0;
            let mut accepted = None;
            while t > floor {
                let trial = &q + &d * c(t);
                if let Some((v, g)) = f(&trial) {
                    if v.is_finite() && v >= reference + ARMIJO_SUFFICIENT * t * slope {
                        accepted = Some((trial, v, g));
                        break;
                    }
                }
                t *= self.config.armijo;
            }
            let Some((q_new, v_new, g_new)) = accepted else {
                return InnerResult { q, value, residual, converged: residual <= accept, iterations: it };
            };
            let s = &q_new - &q;
            let y = &g_new - &grad;
            let sy = inner(&s, &y);
            let ss = inner(&s, &s);
            alpha = if sy < 0.0 && ss > 0.0 { (ss / -sy).clamp(1e-30, 1e30) } else { alpha * 4.0 };
            q = linalg::hermitian_part(&q_new);
            value = v_new;
            grad = g_new;
            history.push(value);
            if history.len() > NONMONOTONE_MEMORY {
                history.remove(0);
            }
            residual = stationarity(&q, &grad, power);
        }
        let converged = residual <= tol;
        InnerResult { q, value, residual, converged, iterations: self.config.max_inner }
    }

    /// Minimizes the chosen bound over the trace ball starting from `(P/M) I`.
    pub fn sensing_optimum(&self, bound: MseBound) -> SensingOptimum {
        let ev = &self.evaluator;
        let res = self.maximize(
            |q| ev.value_and_gradient(bound, q).ok().map(|(v, g)| (-v, -g)),
            &self.start(),
            self.config.kkt_tol,
            self.config.kkt_tol,
        );
        SensingOptimum {
            delta_min: -res.value,
            q: CovMatrix::new(res.q).expect("finite"),
            kkt_residual: res.residual,
            status: if res.converged { TradeoffStatus::Optimal } else { TradeoffStatus::MaxIter },
            iterations: res.iterations,
        }
    }

    fn lagrangian_max(&self, bound: MseBound, lambda: f64, warm: &CMat) -> (InnerResult, f64) {
        let user = &self.scenario.user;
        let ev = &self.evaluator;
        let res = self.maximize(
            |q| {
                let (v, g) = ev.value_and_gradient(bound, q).ok()?;
                let mi = mi_unchecked(user, q);
                Some((mi - lambda * v, mi_gradient_unchecked(user, q) - g * c(lambda)))
            },
            warm,
            0.1 * self.config.kkt_tol,
            self.config.kkt_tol,
        );
        let v = ev.value_matrix(bound, &res.q);
        (res, v)
    }

    /// Maximum rate subject to `bound(Q) <= delta`, using a precomputed sensing endpoint.
    pub fn solve_with(&self, delta: f64, bound: MseBound, endpoint: &SensingOptimum) -> Result<TradeoffPoint> {
        if !(delta > 0.0) || delta.is_nan() {
            return Err(invalid("delta must be positive"));
        }
        let cap_q = self.capacity.q_opt.matrix().clone();
        let cap_v = self.evaluator.value_matrix(bound, &cap_q);
        if cap_v <= delta {
            return Ok(self.point(cap_q, delta, cap_v, 0.0, bound, TradeoffStatus::Optimal));
        }
        let dmin = endpoint.delta_min;
        if delta < dmin * (1.0 - ENDPOINT_MARGIN) {
            return Err(Error::Infeasible { delta, delta_min: dmin });
        }
        if delta <= dmin * (1.0 + ENDPOINT_MARGIN) {
            let mut p = self.point(endpoint.q.matrix().clone(), delta, dmin, 0.0, bound, endpoint.status);
            p.lambda_sensing = f64::INFINITY;
            p.kkt_residual = endpoint.kkt_residual;
            p.status = endpoint.status;
            return Ok(p);
        }
        self.dual_bisection(delta, bound, cap_q, cap_v)
    }

    fn dual_bisection(&self, delta: f64, bound: MseBound, cap_q: CMat, cap_v: f64) -> Result<TradeoffPoint> {
        let tol = self.config.kkt_tol;
        let growth = self.config.dual_bracket_growth;
        let h = |v: f64| (v / delta).ln();
        let done = |v: f64| (v - delta).abs() <= tol * delta;

        // Initial multiplier balancing the two gradients at the scaled identity.
        let q0 = self.start();
        let mi_g = frobenius(&mi_gradient_unchecked(&self.scenario.user, &q0));
        let lam0 = match self.evaluator.value_and_gradient(bound, &q0) {
            Ok((_, g)) if frobenius(&g) > 0.0 && mi_g > 0.0 => mi_g / frobenius(&g),
            _ => 1.0,
        };

        // Bracket: `lo` violates the constraint, `hi` satisfies it.
        let mut lo = (0.0, cap_q, cap_v, true);
        let mut hi: Option<(f64, CMat, f64, bool)> = None;
        let mut lam = lam0;
        let mut outer = 0;
        let mut warm = q0;
        while hi.is_none() {
            if outer >= self.config.max_outer {
                let q = lo.1.clone();
                return Ok(self.point(q, delta, lo.2, lo.0, bound, TradeoffStatus::MaxIter));
            }
            outer += 1;
            let (res, v) = self.lagrangian_max(bound, lam, &warm);
            warm = res.q.clone();
            if v <= delta {
                hi = Some((lam, res.q, v, res.converged));
            } else {
                lo = (lam, res.q, v, res.converged);
                lam *= growth;
            }
        }
        let mut hi = hi.expect("bracketed");
        let mut side = 0i8;
        let (mut h_lo, mut h_hi) = (h(lo.2), h(hi.2));
        while outer < self.config.max_outer {
            if done(hi.2) {
                return Ok(self.finish(hi, delta, bound));
            }
            if lo.0 > 0.0 && done(lo.2) {
                return Ok(self.finish(lo, delta, bound));
            }
            // Near the root, the blend of the two bracket solutions usually already meets
            // the KKT tolerance; the check is cheap next to another inner solve.
            if lo.0 > 0.0 && hi.3 && lo.3 && (hi.0.ln() - lo.0.ln()) < BLEND_WIDTH {
                let p = self.blend(&lo, &hi, delta, bound);
                if p.status == TradeoffStatus::Optimal {
                    return Ok(p);
                }
            }
            let next = if lo.0 == 0.0 {
                hi.0 / growth
            } else {
                let (x_lo, x_hi) = (lo.0.ln(), hi.0.ln());
                let w = x_hi - x_lo;
                if w < 1e-13 {
                    break;
                }
                let x = x_lo - h_lo * w / (h_hi - h_lo);
                let x =
                    if x > x_lo && x < x_hi { x.clamp(x_lo + 1e-3 * w, x_hi - 1e-3 * w) } else { 0.5 * (x_lo + x_hi) };
                x.exp()
            };
            outer += 1;
            let warm = if lo.0 == 0.0 || (next.ln() - lo.0.ln()) < (hi.0.ln() - next.ln()) { &lo.1 } else { &hi.1 };
            let (res, v) = self.lagrangian_max(bound, next, &warm.clone());
            // Anderson-Bjorck: when the same end moves twice, shrink the stale value at the other.
            let h_new = h(v);
            if v <= delta {
                if side == 1 {
                    let m = 1.0 - h_new / h_hi;
                    h_lo *= if m > 0.0 { m } else { 0.5 };
                }
                hi = (next, res.q, v, res.converged);
                h_hi = h_new;
                side = 1;
            } else {
                if side == -1 {
                    let m = 1.0 - h_new / h_lo;
                    h_hi *= if m > 0.0 { m } else { 0.5 };
                }
                lo = (next, res.q, v, res.converged);
                h_lo = h_new;
                side = -1;
            }
        }
        // Bracket collapsed without hitting the target.
        Ok(self.blend(&lo, &hi, delta, bound))
    }

    /// Moves from the feasible bracket end toward the infeasible one as far as the constraint
    /// allows, with the multiplier interpolated geometrically alongside.
    fn blend(
        &self,
        lo: &(f64, CMat, f64, bool),
        hi: &(f64, CMat, f64, bool),
        delta: f64,
        bound: MseBound,
    ) -> TradeoffPoint {
        let ev = &self.evaluator;
        let (mut t_lo, mut t_hi) = (0.0, 1.0);
        for _ in 0..60 {
            let t = 0.5 * (t_lo + t_hi);
            let q = &hi.1 * c(1.0 - t) + &lo.1 * c(t);
            if ev.value_matrix(bound, &q) <= delta {
                t_lo = t;
            } else {
                t_hi = t;
            }
        }
        let q = &hi.1 * c(1.0 - t_lo) + &lo.1 * c(t_lo);
        let v = ev.value_matrix(bound, &q);
        let lambda = if lo.0 > 0.0 { (hi.0.ln() * (1.0 - t_lo) + lo.0.ln() * t_lo).exp() } else { hi.0 };
        self.finish((lambda, q, v, hi.3 && lo.3), delta, bound)
    }

    fn finish(&self, entry: (f64, CMat, f64, bool), delta: f64, bound: MseBound) -> TradeoffPoint {
        let (lambda, q, v, converged) = entry;
        let status = if converged { TradeoffStatus::Optimal } else { TradeoffStatus::MaxIter };
        self.point(q, delta, v, lambda, bound, status)
    }
}

fn placeholder_point(m: usize) -> TradeoffPoint {
    TradeoffPoint {
        delta: f64::INFINITY,
        rate_bits: 0.0,
        mse: f64::INFINITY,
        q_opt: CovMatrix::zeros(m),
        kkt_residual: 0.0,
        lambda_sensing: 0.0,
        nu_power: 0.0,
        status: TradeoffStatus::Optimal,
    }
}

/// Capacity-achieving input via SVD and water-filling; `delta` holds its ECRB.
pub fn capacity_only(scenario: &Scenario) -> Result<TradeoffPoint> {
    Ok(TradeoffSolver::new(scenario, SolverConfig::default())?.capacity_only())
}

/// Smallest achievable ECRB under the power budget and its minimizer.
pub fn min_achievable_mse(scenario: &Scenario, config: &SolverConfig) -> Result<SensingOptimum> {
    Ok(TradeoffSolver::new(scenario, *config)?.sensing_optimum(MseBound::Ecrb))
}

/// One point of the capacity-MSE curve.
pub fn solve_capacity_mse(scenario: &Scenario, delta: f64, config: &SolverConfig) -> Result<TradeoffPoint> {
    solve_with_bound(scenario, delta, MseBound::Ecrb, config)
}

/// Same as [`solve_capacity_mse`] with the chosen bound as sensing constraint.
pub fn solve_with_bound(
    scenario: &Scenario,
    delta: f64,
    bound: MseBound,
    config: &SolverConfig,
) -> Result<TradeoffPoint> {
    let solver = TradeoffSolver::new(scenario, *config)?;
    if !(delta > 0.0) || delta.is_nan() {
        return Err(invalid("delta must be positive"));
    }
    if solver.evaluator.value_matrix(bound, solver.capacity.q_opt.matrix()) <= delta {
        let endpoint = SensingOptimum {
            delta_min: 0.0,
            q: solver.capacity.q_opt.clone(),
            kkt_residual: 0.0,
            status: TradeoffStatus::Optimal,
            iterations: 0,
        };
        return solver.solve_with(delta, bound, &endpoint);
    }
    let endpoint = solver.sensing_optimum(bound);
    solver.solve_with(delta, bound, &endpoint)
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i == 0 {
                lo
            } else if i == n - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// `n_points` log-spaced points from `delta_min` to the communication endpoint.
///
/// All points share one prior sample set. When `include_bcrb` is set the same
/// grid is solved again with the Bayesian CRB constraint.
pub fn sweep_curve(scenario: &Scenario, n_points: usize, config: &SolverConfig, include_bcrb: bool) -> Result<Sweep> {
    if n_points < 2 {
        return Err(invalid("a sweep needs at least two points"));
    }
    let solver = TradeoffSolver::new(scenario, *config)?;
    let endpoint = solver.sensing_optimum(MseBound::Ecrb);
    let delta_min = endpoint.delta_min;
    let delta_comm = solver.capacity.mse;
    let open_ended = !(delta_comm.is_finite() && delta_comm > delta_min * (1.0 + ENDPOINT_MARGIN));
    let upper = if open_ended { OPEN_ENDED_CAP * delta_min } else { delta_comm };
    let grid = log_grid(delta_min, upper, n_points);
    let exec = config.exec;
    let points = exec
        .map(n_points, |i| solver.solve_with(grid[i], MseBound::Ecrb, &endpoint))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let bcrb_points = if include_bcrb {
        let bendpoint = solver.sensing_optimum(MseBound::Bcrb);
        Some(
            exec.map(n_points, |i| solver.solve_with(grid[i], MseBound::Bcrb, &bendpoint))
                .into_iter()
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    Ok(Sweep { delta_min, delta_comm, open_ended, points, bcrb_points })
}

/// Per-sub-carrier inputs of the diagonal power-allocation problem.
struct OfdmProblem {
    gains: Vec<f64>,
    comm_noise: f64,
    /// `c` in the sensing constraint `c * sum_k 1/p_k <= delta`.
    sens_coef: f64,
    power: f64,
}

impl OfdmProblem {
    fn from_scenario(scenario: &Scenario) -> Result<Self> {
        let h = &scenario.user.h;
        let k = h.nrows();
        let diagonal = h.is_square()
            && (0..k).all(|i| (0..k).all(|j| i == j || h[(i, j)].norm() == 0.0))
            && scenario.sensing.map().is_linear();
        if scenario.shape != ScenarioShape::Ofdm || !diagonal {
            return Err(invalid("solve_ofdm needs an OFDM scenario (diagonal H, linear sensing map)"));
        }
        let w = scenario.weights.as_slice();
        let mean_a = w.iter().sum::<f64>() / w.len() as f64;
        Ok(OfdmProblem {
            gains: (0..k).map(|i| h[(i, i)].norm_sqr()).collect(),
            comm_noise: scenario.user.noise_var,
            sens_coef: scenario.sensing.noise_var() * mean_a,
            power: scenario.power,
        })
    }

    fn delta_min(&self) -> f64 {
        let k = self.gains.len() as f64;
        self.sens_coef * k * k / self.power
    }

    /// Root of `g/(s + p g) + mu c / p^2 = nu` in `(0, P]`.
    fn carrier_power(&self, g: f64, mu: f64, nu: f64) -> f64 {
        let s = self.comm_noise;
        if mu == 0.0 {
            return if g / s <= nu { 0.0 } else { (1.0 / nu - s / g).min(self.power) };
        }
        let f = |p: f64| g / (s + p * g) + mu * self.sens_coef / (p * p) - nu;
        if f(self.power) >= 0.0 {
            return self.power;
        }
        let mut lo = (mu * self.sens_coef / nu).sqrt().min(self.power);
        let mut hi = self.power;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    fn powers(&self, mu: f64, nu: f64) -> Vec<f64> {
        self.gains.iter().map(|&g| self.carrier_power(g, mu, nu)).collect()
    }

    /// Power multiplier making the allocation spend exactly `P`.
    fn balance(&self, mu: f64) -> (f64, Vec<f64>) {
        let total = |nu: f64| self.powers(mu, nu).iter().sum::<f64>();
        let (mut lo, mut hi) = (1.0, 1.0);
        while total(lo) < self.power {
            lo *= 0.5;
        }
        while total(hi) > self.power {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            if total(mid) > self.power {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi / lo - 1.0 <= 1e-15 {
                break;
            }
        }
        let nu = (lo * hi).sqrt();
        let mut p = self.powers(mu, nu);
        let sum: f64 = p.iter().sum();
        if sum > 0.0 {
            p.iter_mut().for_each(|x| *x *= self.power / sum);
        }
        (nu, p)
    }

    fn sensing(&self, p: &[f64]) -> f64 {
        self.sens_coef * p.iter().map(|x| 1.0 / x).sum::<f64>()
    }
}

/// Diagonal power allocation for OFDM scenarios by nested dual bisection.
pub fn solve_ofdm(scenario: &Scenario, delta: f64, config: &SolverConfig) -> Result<TradeoffPoint> {
    config.validate()?;
    let prob = OfdmProblem::from_scenario(scenario)?;
    if !(delta > 0.0) || delta.is_nan() {
        return Err(invalid("delta must be positive"));
    }
    let dmin = prob.delta_min();
    if delta < dmin * (1.0 - ENDPOINT_MARGIN) {
        return Err(Error::Infeasible { delta, delta_min: dmin });
    }
    let k = prob.gains.len();
    let (mu, nu, p) = {
        let (nu0, p0) = prob.balance(0.0);
        if prob.sensing(&p0) <= delta {
            (0.0, nu0, p0)
        } else if delta <= dmin * (1.0 + ENDPOINT_MARGIN) {
            (f64::INFINITY, f64::NAN, vec![prob.power / k as f64; k])
        } else {
            let target = |mu: f64| {
                let (nu, p) = prob.balance(mu);
                (prob.sensing(&p), nu, p)
            };
            let mut lo = 0.0;
            let mut hi = 1.0;
            let mut at_hi = target(hi);
            while at_hi.0 > delta {
                lo = hi;
                hi *= config.dual_bracket_growth;
                at_hi = target(hi);
            }
            if lo == 0.0 {
                lo = hi;
                while target(lo).0 <= delta {
                    lo /= config.dual_bracket_growth;
                }
            }
            for _ in 0..config.max_outer {
                if (at_hi.0 - delta).abs() <= 1e-3 * config.kkt_tol * delta || hi / lo - 1.0 <= 1e-15 {
                    break;
                }
                let mid = (lo * hi).sqrt();
                let at_mid = target(mid);
                if at_mid.0 <= delta {
                    hi = mid;
                    at_hi = at_mid;
                } else {
                    lo = mid;
                }
            }
            (hi, at_hi.1, at_hi.2)
        }
    };
    let q = CovMatrix::from_diag(&p)?;
    let mse = prob.sensing(&p);
    let rate: f64 = prob.gains.iter().zip(&p).map(|(g, x)| (1.0 + x * g / prob.comm_noise).ln()).sum::<f64>();
    let power_gap = (p.iter().sum::<f64>() - prob.power).abs() / prob.power;
    let slack = if mu > 0.0 { (mse - delta).abs() / delta } else { 0.0 };
    let residual = power_gap.max(if mu.is_finite() { slack } else { 0.0 });
    Ok(TradeoffPoint {
        delta,
        rate_bits: rate / LN_2,
        mse,
        q_opt: q,
        kkt_residual: residual,
        lambda_sensing: mu,
        nu_power: if nu.is_nan() { 0.0 } else { nu },
        status: if residual <= config.kkt_tol { TradeoffStatus::Optimal } else { TradeoffStatus::MaxIter },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::{build_doa, build_ofdm, steering_vector, DoaConfig, DoaPrior, OfdmConfig};
    use std::f64::consts::PI;

    fn small_doa(m: usize) -> Scenario {
        let cfg = DoaConfig { m_tx: m, t_rx: m, ..DoaConfig::tapered_uniform_reference() };
        build_doa(&cfg).unwrap().with_prior_samples(128).unwrap()
    }

    fn small_ofdm(k: usize, alpha: f64) -> Scenario {
        build_ofdm(&OfdmConfig { k_sub: k, power: Some(k as f64), ..OfdmConfig::reference(alpha) }).unwrap()
    }

    #[test]
    fn water_fill_examples() {
        let (p, _) = water_fill(&[1.0, 1.0], 2.0);
        assert_eq!(p, vec![1.0, 1.0]);
        // Level L: (L - 1) + (L - 1/4) = 1 -> L = 1.125.
        let (p, level) = water_fill(&[1.0, 4.0], 1.0);
        assert!((level - 1.125).abs() < 1e-15);
        assert!((p[0] - 0.125).abs() < 1e-15 && (p[1] - 0.875).abs() < 1e-15);
        let (p, _) = water_fill(&[10.0, 0.01], 1.0);
        assert_eq!(p[1], 0.0);
        let (p, _) = water_fill(&[0.0, 0.0, 0.0], 3.0);
        assert_eq!(p, vec![1.0; 3]);
    }

    #[test]
    fn doa_capacity_closed_form() {
        let scenario = small_doa(16);
        let point = capacity_only(&scenario).unwrap();
        let expected = (1.0 + 16.0 * 10f64.powf(1.5)).log2();
        assert!((point.rate_bits - expected).abs() < 1e-9);
        let v = steering_vector(16, 0.0);
        let q = &v * v.adjoint() / c(16.0);
        assert!((point.q_opt.matrix() - q).camax() < 1e-12);
        assert!(point.kkt_residual < 1e-12);
    }

    #[test]
    fn ofdm_capacity_endpoints() {
        let flat = small_ofdm(16, 0.1);
        let point = capacity_only(&flat).unwrap();
        let p = point.q_opt.diag();
        // A flat-ish channel at 10 dB keeps every sub-carrier active.
        assert!(p.iter().all(|&x| x > 0.5));
        assert!(point.delta.is_finite());
        let zero = CMat::zeros(4, 4);
        let mut s = small_ofdm(4, 0.1);
        s.user.h = zero;
        let point = capacity_only(&s).unwrap();
        assert!(point.q_opt.diag().iter().all(|&x| (x - 1.0).abs() < 1e-15));
    }

    #[test]
    fn ofdm_sensing_optimum_is_equal_power() {
        // sigma_u^2 = 1 with P = 4 needs sens SNR = 10 log10(4).
        let cfg =
            OfdmConfig { k_sub: 4, sens_snr_db: 10.0 * 4f64.log10(), power: Some(4.0), ..OfdmConfig::reference(10.0) };
        let s = build_ofdm(&cfg).unwrap();
        assert!((s.sensing.noise_var() - 1.0).abs() < 1e-12);
        let opt = min_achievable_mse(&s, &SolverConfig::default()).unwrap();
        assert!((opt.delta_min - 4.0).abs() < 1e-9);
        assert!(opt.q.diag().iter().all(|&x| (x - 1.0).abs() < 1e-9));
        assert_eq!(opt.status, TradeoffStatus::Optimal);
    }

    #[test]
    fn infeasible_below_delta_min() {
        let s = small_ofdm(8, 10.0);
        let dmin = min_achievable_mse(&s, &SolverConfig::default()).unwrap().delta_min;
        let err = solve_capacity_mse(&s, dmin / 2.0, &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Infeasible { .. }));
        assert!(matches!(solve_ofdm(&s, dmin / 2.0, &SolverConfig::default()), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn endpoint_consistency() {
        let s = small_doa(4);
        let cfg = SolverConfig::default();
        let opt = min_achievable_mse(&s, &cfg).unwrap();
        let point = solve_capacity_mse(&s, opt.delta_min, &cfg).unwrap();
        let mi = crate::information::gaussian_mi(&s.user, &opt.q).unwrap() / LN_2;
        assert!((point.rate_bits - mi).abs() < 1e-9);
    }

    #[test]
    fn flat_channel_has_no_tradeoff() {
        let mut s = small_ofdm(8, 0.1);
        // Exactly flat: unit gains.
        s.user.h = CMat::identity(8, 8);
        let cfg = SolverConfig::default();
        let dmin = s.sensing.noise_var() * 64.0 / 8.0;
        for factor in [1.0, 1.5, 4.0] {
            let p = solve_ofdm(&s, dmin * factor, &cfg).unwrap();
            assert!(p.q_opt.diag().iter().all(|&x| (x - 1.0).abs() < 1e-9));
            let expected = 8.0 * (1.0 + 1.0 / s.user.noise_var).log2();
            assert!((p.rate_bits - expected).abs() < 1e-9);
            let g = solve_capacity_mse(&s, dmin * factor, &cfg).unwrap();
            assert!((g.rate_bits - expected).abs() < 1e-7);
        }
    }

    #[test]
    fn ofdm_zero_multiplier_is_water_filling() {
        let s = small_ofdm(16, 10.0);
        let cap = capacity_only(&s).unwrap();
        let p = solve_ofdm(&s, f64::INFINITY, &SolverConfig::default()).unwrap();
        assert_eq!(p.lambda_sensing, 0.0);
        for (a, b) in p.q_opt.diag().iter().zip(cap.q_opt.diag()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn ofdm_solvers_agree_small() {
        let s = small_ofdm(8, 10.0);
        let cfg = SolverConfig::default();
        let dmin = s.sensing.noise_var() * 64.0 / 8.0;
        let cap = capacity_only(&s).unwrap();
        let upper = if cap.delta.is_finite() { cap.delta } else { 10.0 * dmin };
        for t in [0.2, 0.5, 0.8] {
            let delta = dmin * (upper / dmin).powf(t);
            let a = solve_ofdm(&s, delta, &cfg).unwrap();
            let b = solve_capacity_mse(&s, delta, &cfg).unwrap();
            assert_eq!(a.status, TradeoffStatus::Optimal);
            assert_eq!(b.status, TradeoffStatus::Optimal, "{b:?}");
            assert!((a.rate_bits - b.rate_bits).abs() <= 1e-4 * a.rate_bits);
            assert!((a.lambda_sensing - b.lambda_sensing).abs() <= 1e-2 * a.lambda_sensing);
        }
    }

    #[test]
    fn doa_sweep_shape() {
        let s = small_doa(6);
        let cfg = SolverConfig::default();
        let sweep = sweep_curve(&s, 6, &cfg, true).unwrap();
        assert!(!sweep.open_ended);
        let rates: Vec<f64> = sweep.points.iter().map(|p| p.rate_bits).collect();
        for w in rates.windows(2) {
            assert!(w[1] >= w[0] - 1e-6, "{rates:?}");
        }
        for p in &sweep.points {
            assert_eq!(p.status, TradeoffStatus::Optimal, "{p:?}");
            assert!(p.q_opt.trace() <= s.power * (1.0 + 1e-8));
            assert!(p.mse <= p.delta * (1.0 + 1e-6));
            assert!(p.kkt_residual <= cfg.kkt_tol);
        }
        let lambdas: Vec<f64> = sweep.points.iter().map(|p| p.lambda_sensing).collect();
        for w in lambdas.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-3) + 1e-12, "{lambdas:?}");
        }
        for (a, b) in sweep.points.iter().zip(sweep.bcrb_points.as_ref().unwrap()) {
            assert!(b.rate_bits >= a.rate_bits - 1e-6);
        }
    }

    #[test]
    fn config_rejects_bad_values() {
        let bad = SolverConfig { armijo: 1.5, ..SolverConfig::default() };
        assert!(bad.validate().is_err());
        let s: SolverConfig = serde_json::from_str(r#"{"kkt_tol": 1e-7}"#).unwrap();
        assert_eq!(s.kkt_tol, 1e-7);
        assert_eq!(s.max_inner, 5000);
        assert!(serde_json::from_str::<SolverConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn beta_prior_scenario_solves() {
        let cfg = DoaConfig {
            m_tx: 4,
            t_rx: 4,
            prior: DoaPrior::Beta { s1: 5.5, s2: 15.0, theta_min: -PI / 2.0, theta_max: PI / 2.0 },
            user_aod: PI / 4.0,
            ..DoaConfig::tapered_uniform_reference()
        };
        let s = build_doa(&cfg).unwrap().with_prior_samples(64).unwrap();
        let sweep = sweep_curve(&s, 4, &SolverConfig::default(), false).unwrap();
        for p in &sweep.points {
            assert_eq!(
                p.status,
                TradeoffStatus::Optimal,
                "delta {} residual {} lambda {}",
                p.delta,
                p.kkt_residual,
                p.lambda_sensing
            );
        }
    }
}
