//! Finite-block Monte Carlo: covariance-constrained codebooks, sensor
//! simulation, ML/MMSE/LS estimators and the empirical checks built on them.
//!
//! Sequences are stored column-wise: an `M x N` matrix holds `N` symbols.

use nalgebra::DVector;
use rand::RngCore;

use crate::error::{invalid, Error, Result};
use crate::exec::{pairwise_sum, Exec};
use crate::information::{conditional_fim, InfoDensity};
use crate::linalg::{self, c, CMat, CVec};
use crate::model::{CovMatrix, ParamKind, Prior, Scenario, ScenarioShape, SensingModel, Theta, UserChannel};
use crate::rng::{substream, Purpose};
use crate::scenarios::dft_matrix;

/// Per-codeword draw limit in [`generate_codebook`].
pub const MAX_ATTEMPTS: usize = 10_000;
pub const DEFAULT_GRID_SIZE: usize = 2048;
pub const GOLDEN_ITERATIONS: usize = 40;

/// Codewords whose empirical covariance lies in the `delta`-band around `target_q`.
#[derive(Debug, Clone)]
pub struct Codebook {
    /// Each entry is `M x N`.
    pub codewords: Vec<CMat>,
    pub target_q: CovMatrix,
    pub delta_band: f64,
    /// Total number of sequences drawn, including rejected ones.
    pub attempts: usize,
}

impl Codebook {
    /// Rechecks the band and per-symbol power conditions for every codeword.
    pub fn check_invariants(&self) -> bool {
        let m = self.target_q.dim() as f64;
        self.codewords.iter().all(|x| {
            let q_hat = empirical_covariance(x);
            in_band(&q_hat, &self.target_q, self.delta_band)
                && linalg::trace_re(&q_hat) <= self.target_q.trace() + m * self.delta_band + 1e-12
        })
    }
}

/// Uncentered sample second moment `(1/N) sum_n x_n x_n^H`.
pub fn empirical_covariance(x: &CMat) -> CMat {
    let n = x.ncols().max(1) as f64;
    linalg::hermitian_part(&(x * x.adjoint())) / c(n)
}

/// `Q - delta I <= q_hat <= Q + delta I`, checked on the eigenvalues of `q_hat - Q`.
pub fn in_band(q_hat: &CMat, q: &CovMatrix, delta: f64) -> bool {
    let eig = linalg::eigenvalues(&(q_hat - q.matrix()));
    eig.first().is_none_or(|&lo| lo >= -delta) && eig.last().is_none_or(|&hi| hi <= delta)
}

/// `n` i.i.d. `CN(0, Q)` symbols, given a square-root factor of `Q`.
fn draw_sequence(rng: &mut dyn RngCore, factor: &CMat, n: usize) -> CMat {
    factor * linalg::complex_normal_mat(rng, factor.ncols(), n)
}

/// `n` i.i.d. `CN(0, Q)` symbols.
pub fn iid_sequence(q: &CovMatrix, n: usize, rng: &mut dyn RngCore) -> CMat {
    draw_sequence(rng, &linalg::psd_sqrt_factor(q.matrix()), n)
}

/// Rejection-samples `count` codewords of length `n` into the `delta`-band of `q`.
pub fn generate_codebook(q: &CovMatrix, n: usize, count: usize, delta: f64, rng: &mut dyn RngCore) -> Result<Codebook> {
    if !(delta > 0.0) || n == 0 {
        return Err(invalid("band width must be positive and block length at least 1"));
    }
    let factor = linalg::psd_sqrt_factor(q.matrix());
    let mut codewords = Vec::with_capacity(count);
    let mut attempts = 0;
    for w in 0..count {
        let mut accepted = None;
        for _ in 0..MAX_ATTEMPTS {
            attempts += 1;
            let x = draw_sequence(rng, &factor, n);
            if in_band(&empirical_covariance(&x), q, delta) {
                accepted = Some(x);
                break;
            }
        }
        match accepted {
            Some(x) => codewords.push(x),
            None => return Err(Error::BandTooTight { codeword: w, attempts: MAX_ATTEMPTS }),
        }
    }
    Ok(Codebook { codewords, target_q: q.clone(), delta_band: delta, attempts })
}

/// `z_n = G(theta) x_n + u_n` with `u_n ~ CN(0, noise_var I)`.
pub fn simulate_sensor(model: &SensingModel, theta: &Theta, x: &CMat, rng: &mut dyn RngCore) -> Result<CMat> {
    if x.nrows() != model.in_dim() || theta.len() != model.param_dim() {
        return Err(Error::DimensionMismatch("codeword or parameter dimension".into()));
    }
    let mut z = model.g(theta) * x;
    let sd = model.noise_var().sqrt();
    if sd > 0.0 {
        z += linalg::complex_normal_mat(rng, z.nrows(), z.ncols()) * c(sd);
    }
    Ok(z)
}

/// Least-squares cost `sum_n ||z_n - G(t) x_n||^2` up to a `t`-free constant, via
/// the sufficient statistics `R = Z X^H` and `S = X X^H`.
struct LsCost<'a> {
    model: &'a SensingModel,
    r: CMat,
    s: CMat,
}

impl<'a> LsCost<'a> {
    fn new(model: &'a SensingModel, z: &CMat, x: &CMat) -> Result<Self> {
        if model.param_dim() != 1 || model.kind() != ParamKind::Real {
            return Err(invalid("scalar real parameter required"));
        }
        if x.nrows() != model.in_dim() || z.nrows() != model.out_dim() || z.ncols() != x.ncols() {
            return Err(Error::DimensionMismatch("sequence dimensions".into()));
        }
        Ok(LsCost { model, r: z * x.adjoint(), s: x * x.adjoint() })
    }

    fn eval(&self, t: f64) -> f64 {
        let g = self.model.g(&CVec::from_element(1, c(t)));
        let cross: f64 = g.iter().zip(self.r.iter()).map(|(a, b)| (a.conj() * b).re).sum();
        let gs = &g * &self.s;
        let quad: f64 = gs.iter().zip(g.iter()).map(|(a, b)| (a * b.conj()).re).sum();
        quad - 2.0 * cross
    }
}

fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iterations: usize) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..iterations {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        x1
    } else {
        x2
    }
}

fn ml_on_grid(cost: &LsCost, grid: &[f64], values: &[f64]) -> f64 {
    let best = values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0);
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(grid.len() - 1)];
    let refined = golden_section(|t| cost.eval(t), lo, hi, GOLDEN_ITERATIONS);
    if cost.eval(refined) <= values[best] {
        refined
    } else {
        grid[best]
    }
}

/// Maximum-likelihood estimate of a scalar angle on `support`: grid search followed by
/// golden-section refinement around the best grid point.
pub fn ml_estimate_doa(z: &CMat, x: &CMat, model: &SensingModel, support: (f64, f64), grid_size: usize) -> Result<f64> {
    let cost = LsCost::new(model, z, x)?;
    let grid = uniform_grid(support.0, support.1, grid_size);
    let values: Vec<f64> = grid.iter().map(|&t| cost.eval(t)).collect();
    Ok(ml_on_grid(&cost, &grid, &values))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmseEstimate {
    pub theta: f64,
    /// Posterior weights underflowed and the ML estimate was returned instead.
    pub fell_back: bool,
}

/// Posterior-mean estimate by trapezoidal quadrature over the prior support.
pub fn mmse_estimate_doa(
    z: &CMat,
    x: &CMat,
    model: &SensingModel,
    prior: &dyn Prior,
    grid_size: usize,
) -> Result<MmseEstimate> {
    let cost = LsCost::new(model, z, x)?;
    let support = prior.support().ok_or_else(|| invalid("prior needs a bounded support"))?;
    let grid = uniform_grid(support.0, support.1, grid_size);
    let values: Vec<f64> = grid.iter().map(|&t| cost.eval(t)).collect();
    let noise = model.noise_var();
    let loglik: Vec<f64> = values.iter().map(|v| -v / noise).collect();
    let peak = loglik.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut weights = Vec::with_capacity(grid.len());
    for (t, l) in grid.iter().zip(&loglik) {
        let pdf = prior.pdf(&CVec::from_element(1, c(*t))).ok_or_else(|| invalid("prior density required"))?;
        weights.push((l - peak).exp() * pdf);
    }
    let trap = |f: &dyn Fn(usize) -> f64| -> f64 {
        let n = grid.len();
        (0..n - 1).map(|i| 0.5 * (grid[i + 1] - grid[i]) * (f(i) + f(i + 1))).sum()
    };
    let den = trap(&|i| weights[i]);
    let num = trap(&|i| weights[i] * grid[i]);
    if den > 0.0 && den.is_finite() && num.is_finite() {
        Ok(MmseEstimate { theta: (num / den).clamp(support.0, support.1), fell_back: false })
    } else {
        Ok(MmseEstimate { theta: ml_on_grid(&cost, &grid, &values), fell_back: true })
    }
}

/// Least-squares estimate of the taps in `z_n = diag(x_n) F theta + u_n`.
///
/// With `F` unitary the normal matrix `sum_n F^H X_n^H X_n F` equals `F^H diag(e) F`,
/// `e_k = sum_n |x_{n,k}|^2`, so the solve reduces to a per-sub-carrier division.
pub fn ls_estimate_ofdm(z: &CMat, x: &CMat) -> Result<CVec> {
    let k = x.nrows();
    if z.shape() != x.shape() || k == 0 {
        return Err(Error::DimensionMismatch("OFDM sequences must both be K x N".into()));
    }
    let dft = dft_matrix(k);
    let energy: Vec<f64> = (0..k).map(|r| x.row(r).iter().map(|v| v.norm_sqr()).sum()).collect();
    let scale = energy.iter().cloned().fold(0.0, f64::max);
    if energy.iter().any(|&e| !(e > 1e-14 * scale) || !e.is_finite()) {
        return Err(Error::UnexcitedSubcarrier);
    }
    let matched = CVec::from_fn(k, |r, _| {
        let s: crate::Complex64 = x.row(r).iter().zip(z.row(r).iter()).map(|(a, b)| a.conj() * b).sum();
        s / energy[r]
    });
    Ok(dft.adjoint() * matched)
}

#[derive(Debug, Clone)]
pub struct InfoDensityStats {
    /// Mean over trials of the per-trial average information density (nats).
    pub mean: f64,
    pub stderr: f64,
    /// Per-trial averages `(1/n) sum_i i(x_i; y_i)`.
    pub trial_means: Vec<f64>,
}

/// Empirical behaviour of the normalized information density for i.i.d. `CN(0, Q)` inputs.
pub fn empirical_info_density_mean(
    user: &UserChannel,
    q: &CovMatrix,
    n: usize,
    trials: usize,
    seed: u64,
    exec: Exec,
) -> Result<InfoDensityStats> {
    if n == 0 || trials == 0 {
        return Err(invalid("n and trials must be positive"));
    }
    if q.dim() != user.tx_dim() {
        return Err(Error::DimensionMismatch("covariance and channel".into()));
    }
    let density = InfoDensity::new(user, q);
    let factor = linalg::psd_sqrt_factor(q.matrix());
    let sd = user.noise_var.sqrt();
    let trial_means = exec.map(trials, |t| {
        let mut rng = substream(seed, Purpose::InfoDensity, t as u64);
        let xs = draw_sequence(&mut rng, &factor, n);
        let ws = linalg::complex_normal_mat(&mut rng, user.rx_dim(), n) * c(sd);
        let ys = &user.h * &xs + ws;
        let vals: Vec<f64> =
            (0..n).map(|i| density.eval(&xs.column(i).into_owned(), &ys.column(i).into_owned())).collect();
        pairwise_sum(&vals) / n as f64
    });
    let mean = pairwise_sum(&trial_means) / trials as f64;
    let var = if trials > 1 {
        trial_means.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (trials - 1) as f64
    } else {
        0.0
    };
    Ok(InfoDensityStats { mean, stderr: (var / trials as f64).sqrt(), trial_means })
}

/// Out-of-band frequency of i.i.d. `CN(0, Q)` blocks against the Chebyshev bound.
#[derive(Debug, Clone, Copy)]
pub struct ConcentrationReport {
    pub n_block: usize,
    pub trials: usize,
    pub delta: f64,
    pub rate: f64,
    /// `1 / (delta'^2 N)` with `delta' = delta / lambda_max(Q)`.
    pub chebyshev_bound: f64,
    /// Binomial standard deviation at the bound, `sqrt(b (1 - b) / trials)`, `b = min(bound, 1)`.
    pub sigma: f64,
}

impl ConcentrationReport {
    pub fn within_bound(&self) -> bool {
        self.rate <= self.chebyshev_bound + 3.0 * self.sigma
    }
}

/// Chebyshev bound `1 / (delta'^2 N)` on the out-of-band probability.
///
/// The bound follows from the variance of the empirical covariance along the single
/// nonzero eigen-direction, so it is exact for rank-one `Q`; for higher rank it
/// ignores the union over directions and is only indicative.
pub fn chebyshev_bound(q: &CovMatrix, delta: f64, n: usize) -> f64 {
    let d = delta / q.max_eigenvalue();
    1.0 / (d * d * n as f64)
}

pub fn concentration_experiment(
    q: &CovMatrix,
    n: usize,
    delta: f64,
    trials: usize,
    seed: u64,
    exec: Exec,
) -> Result<ConcentrationReport> {
    if !(delta > 0.0) || n == 0 || trials == 0 {
        return Err(invalid("delta, block length and trials must be positive"));
    }
    let factor = linalg::psd_sqrt_factor(q.matrix());
    let outside = exec.map(trials, |t| {
        let mut rng = substream(seed ^ (n as u64) << 32, Purpose::Concentration, t as u64);
        let x = draw_sequence(&mut rng, &factor, n);
        if in_band(&empirical_covariance(&x), q, delta) {
            0.0
        } else {
            1.0
        }
    });
    let rate = pairwise_sum(&outside) / trials as f64;
    let bound = chebyshev_bound(q, delta, n);
    let b = bound.min(1.0);
    Ok(ConcentrationReport {
        n_block: n,
        trials,
        delta,
        rate,
        chebyshev_bound: bound,
        sigma: (b * (1.0 - b) / trials as f64).sqrt(),
    })
}

/// Options for [`block_mse_experiment`].
#[derive(Debug, Clone, Copy)]
pub struct TrialOptions {
    pub n_block: usize,
    pub trials: usize,
    pub grid_size: usize,
    /// Draw each codeword from the band `B(Q, delta)` instead of i.i.d. `CN(0, Q)`.
    pub delta_band: Option<f64>,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for TrialOptions {
    fn default() -> Self {
        TrialOptions {
            n_block: 512,
            trials: 2000,
            grid_size: DEFAULT_GRID_SIZE,
            delta_band: None,
            seed: 0,
            exec: Exec::default(),
        }
    }
}

/// One simulated block.
#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub trial: usize,
    pub theta: Theta,
    pub theta_hat: Theta,
    /// Weighted squared error `sum_i a_i |theta_hat_i - theta_i|^2`.
    pub squared_error: f64,
    /// `tr(A J(theta | Q_hat)^-1)` for this block's empirical covariance.
    pub crb: f64,
}

#[derive(Debug, Clone)]
pub struct MseReport {
    pub n_block: usize,
    pub trials: usize,
    /// `N` times the trial-averaged squared error.
    pub n_mse_empirical: f64,
    /// Trial average of `tr(A J(theta_t | Q_hat_t)^-1)`: an unbiased estimate of the ECRB at `Q_hat`.
    pub ecrb_predicted: f64,
    pub ratio: f64,
    /// Standard error of `n_mse_empirical`.
    pub n_mse_stderr: f64,
    pub records: Vec<TrialRecord>,
}

fn draw_codeword(q: &CovMatrix, factor: &CMat, opts: &TrialOptions, rng: &mut dyn RngCore) -> Result<CMat> {
    match opts.delta_band {
        None => Ok(draw_sequence(rng, factor, opts.n_block)),
        Some(delta) => Ok(generate_codebook(q, opts.n_block, 1, delta, rng)?.codewords.remove(0)),
    }
}

fn run_trial(scenario: &Scenario, q: &CovMatrix, factor: &CMat, opts: &TrialOptions, t: usize) -> Result<TrialRecord> {
    let seed = opts.seed;
    let theta = scenario.prior.sample(&mut substream(seed, Purpose::TrialTheta, t as u64), 1).remove(0);
    let x = draw_codeword(q, factor, opts, &mut substream(seed, Purpose::Codeword, t as u64))?;
    let z = simulate_sensor(&scenario.sensing, &theta, &x, &mut substream(seed, Purpose::SensorNoise, t as u64))?;
    let q_hat = CovMatrix::new(empirical_covariance(&x))?;
    let theta_hat = match scenario.shape {
        ScenarioShape::Doa => {
            let support = scenario.prior.support().ok_or_else(|| invalid("DoA prior needs a support"))?;
            let est = ml_estimate_doa(&z, &x, &scenario.sensing, support, opts.grid_size)?;
            CVec::from_element(1, c(est))
        }
        ScenarioShape::Ofdm => ls_estimate_ofdm(&z, &x)?,
        ScenarioShape::Custom => return Err(invalid("block simulation supports DoA and OFDM scenarios")),
    };
    let w = scenario.weights.as_slice();
    let squared_error: f64 = (0..theta.len()).map(|i| w[i] * (theta_hat[i] - theta[i]).norm_sqr()).sum();
    let fim = conditional_fim(&scenario.sensing, &theta, &q_hat)?;
    let crb = match linalg::inverse_hpd(&fim.entries) {
        Some(inv) => (0..theta.len()).map(|i| w[i] * inv[(i, i)].re).sum(),
        None => f64::INFINITY,
    };
    Ok(TrialRecord { trial: t, theta, theta_hat, squared_error, crb })
}

/// Simulates `trials` independent blocks of length `N` with input covariance `q`,
/// estimates the parameter (ML for DoA, LS for OFDM) and compares `N * MSE` with the ECRB.
pub fn block_mse_experiment(scenario: &Scenario, q: &CovMatrix, opts: &TrialOptions) -> Result<MseReport> {
    if opts.n_block == 0 || opts.trials == 0 {
        return Err(invalid("block length and trials must be positive"));
    }
    if q.dim() != scenario.tx_dim() {
        return Err(Error::DimensionMismatch("covariance and scenario".into()));
    }
    let factor = linalg::psd_sqrt_factor(q.matrix());
    let records = opts
        .exec
        .map(opts.trials, |t| run_trial(scenario, q, &factor, opts, t))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let n = opts.n_block as f64;
    let trials = opts.trials as f64;
    let errs: Vec<f64> = records.iter().map(|r| r.squared_error).collect();
    let crbs: Vec<f64> = records.iter().map(|r| r.crb).collect();
    let mse = pairwise_sum(&errs) / trials;
    let var = errs.iter().map(|e| (e - mse).powi(2)).sum::<f64>() / (trials - 1.0).max(1.0);
    let predicted = pairwise_sum(&crbs) / trials;
    Ok(MseReport {
        n_block: opts.n_block,
        trials: opts.trials,
        n_mse_empirical: n * mse,
        ecrb_predicted: predicted,
        ratio: n * mse / predicted,
        n_mse_stderr: n * (var / trials).sqrt(),
        records,
    })
}

/// Estimates for matched ML and MMSE trials on a scalar DoA scenario.
#[derive(Debug, Clone)]
pub struct EstimatorComparison {
    pub ml_errors: Vec<f64>,
    pub mmse_errors: Vec<f64>,
    pub fallbacks: usize,
}

/// Runs ML and MMSE on the same simulated blocks.
pub fn compare_ml_mmse(scenario: &Scenario, q: &CovMatrix, opts: &TrialOptions) -> Result<EstimatorComparison> {
    let support = scenario.prior.support().ok_or_else(|| invalid("prior needs a support"))?;
    let factor = linalg::psd_sqrt_factor(q.matrix());
    let seed = opts.seed;
    let rows = opts
        .exec
        .map(opts.trials, |t| -> Result<(f64, f64, bool)> {
            let theta = scenario.prior.sample(&mut substream(seed, Purpose::TrialTheta, t as u64), 1).remove(0);
            let x = draw_codeword(q, &factor, opts, &mut substream(seed, Purpose::Codeword, t as u64))?;
            let z =
                simulate_sensor(&scenario.sensing, &theta, &x, &mut substream(seed, Purpose::SensorNoise, t as u64))?;
            let ml = ml_estimate_doa(&z, &x, &scenario.sensing, support, opts.grid_size)?;
            let mmse = mmse_estimate_doa(&z, &x, &scenario.sensing, scenario.prior.as_ref(), opts.grid_size)?;
            let t0 = theta[0].re;
            Ok(((ml - t0).powi(2), (mmse.theta - t0).powi(2), mmse.fell_back))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(EstimatorComparison {
        ml_errors: rows.iter().map(|r| r.0).collect(),
        mmse_errors: rows.iter().map(|r| r.1).collect(),
        fallbacks: rows.iter().filter(|r| r.2).count(),
    })
}

/// Per-sub-carrier empirical powers of an OFDM codeword.
pub fn subcarrier_powers(x: &CMat) -> DVector<f64> {
    let n = x.ncols().max(1) as f64;
    DVector::from_fn(x.nrows(), |r, _| x.row(r).iter().map(|v| v.norm_sqr()).sum::<f64>() / n)
}
