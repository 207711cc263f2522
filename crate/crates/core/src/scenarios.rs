//! The two reference scenarios: ULA direction-of-arrival estimation and
//! cyclic-prefix OFDM channel estimation.
//!
//! Noise variances come from SNR settings relative to the power budget:
//! `noise_var = P / 10^(snr_db / 10)`. Changing `P` therefore rescales the
//! noise as well.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, RngCore};
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{self, c, CMat, CVec, I};
use crate::model::{
    CovMatrix, Jacobian, ParamKind, Prior, Scenario, ScenarioShape, SensingMap, SensingModel, Theta, UserChannel,
};
use crate::rng::{substream, Purpose};

/// Grid size of the tabulated inverse CDF used by the tapered-uniform sampler.
pub const TAPER_CDF_GRID: usize = 4096;

/// `noise_var` for a given SNR (dB) relative to power `power`.
pub fn noise_var_from_snr(power: f64, snr_db: f64) -> f64 {
    power / 10f64.powf(snr_db / 10.0)
}

/// Half-wavelength ULA response `[1, e^{i pi sin t}, ..., e^{i (n-1) pi sin t}]`.
pub fn steering_vector(n: usize, theta: f64) -> CVec {
    let phase = PI * theta.sin();
    CVec::from_fn(n, |k, _| Complex64::from_polar(1.0, phase * k as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DoaPrior {
    TaperedUniform { s: f64, kappa: f64 },
    Beta { s1: f64, s2: f64, theta_min: f64, theta_max: f64 },
}

fn default_gain() -> [f64; 2] {
    [1.0, 0.0]
}

fn default_power() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoaConfig {
    pub m_tx: usize,
    pub t_rx: usize,
    /// User angle of departure (rad).
    pub user_aod: f64,
    /// Complex user channel gain as `[re, im]`.
    #[serde(default = "default_gain")]
    pub beta: [f64; 2],
    /// Complex back-scatter gain as `[re, im]`.
    #[serde(default = "default_gain")]
    pub lambda_gain: [f64; 2],
    pub prior: DoaPrior,
    pub comm_snr_db: f64,
    pub sens_snr_db: f64,
    #[serde(default = "default_power")]
    pub power: f64,
}

impl DoaConfig {
    /// Uniform-prior setting: M = T = 16, 15 dB / -25 dB, s = pi/2, kappa = 0.7, user at 0.
    pub fn tapered_uniform_reference() -> Self {
        DoaConfig {
            m_tx: 16,
            t_rx: 16,
            user_aod: 0.0,
            beta: default_gain(),
            lambda_gain: default_gain(),
            prior: DoaPrior::TaperedUniform { s: PI / 2.0, kappa: 0.7 },
            comm_snr_db: 15.0,
            sens_snr_db: -25.0,
            power: 1.0,
        }
    }

    /// Beta(5.5, 15) prior on (-pi/2, pi/2) with the user at `user_aod`.
    pub fn beta_reference(user_aod: f64) -> Self {
        DoaConfig {
            user_aod,
            prior: DoaPrior::Beta { s1: 5.5, s2: 15.0, theta_min: -PI / 2.0, theta_max: PI / 2.0 },
            ..Self::tapered_uniform_reference()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_tx == 0 || self.t_rx == 0 {
            return Err(invalid("array sizes must be at least 1"));
        }
        if !(self.user_aod.abs() < PI / 2.0) {
            return Err(invalid("user AoD must lie in (-pi/2, pi/2)"));
        }
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(invalid("power must be positive"));
        }
        match self.prior {
            DoaPrior::TaperedUniform { s, kappa } => {
                if !(s > 0.0 && s <= PI / 2.0) {
                    return Err(invalid("tapered-uniform half-width s must lie in (0, pi/2]"));
                }
                if !(0.0..=1.0).contains(&kappa) {
                    return Err(invalid("roll-off kappa must lie in [0, 1]"));
                }
            }
            DoaPrior::Beta { s1, s2, theta_min, theta_max } => {
                if !(s1 > 1.0 && s2 > 1.0) {
                    return Err(invalid("Beta shape parameters must exceed 1"));
                }
                if !(theta_min < theta_max && theta_min >= -PI / 2.0 && theta_max <= PI / 2.0) {
                    return Err(invalid("Beta support must satisfy -pi/2 <= theta_min < theta_max <= pi/2"));
                }
            }
        }
        Ok(())
    }
}

/// `G(theta) = lambda v_T(theta) v_M(theta)^H`.
#[derive(Debug, Clone)]
pub struct DoaSensing {
    pub m: usize,
    pub t: usize,
    pub gain: Complex64,
}

impl DoaSensing {
    /// `T G - G M` with `T`, `M` the element-position diagonals.
    pub fn position_weighted(&self, theta: f64) -> CMat {
        let g = self.matrix_at(theta);
        CMat::from_fn(self.t, self.m, |r, k| g[(r, k)] * (r as f64 - k as f64))
    }

    pub fn matrix_at(&self, theta: f64) -> CMat {
        let vt = steering_vector(self.t, theta);
        let vm = steering_vector(self.m, theta);
        vt * vm.adjoint() * self.gain
    }
}

impl SensingMap for DoaSensing {
    fn param_dim(&self) -> usize {
        1
    }

    fn kind(&self) -> ParamKind {
        ParamKind::Real
    }

    fn in_dim(&self) -> usize {
        self.m
    }

    fn out_dim(&self) -> usize {
        self.t
    }

    fn matrix(&self, theta: &Theta) -> CMat {
        self.matrix_at(theta[0].re)
    }

    fn partial(&self, theta: &Theta, _i: usize) -> Jacobian {
        let th = theta[0].re;
        Jacobian::Dense(self.position_weighted(th) * (I * (PI * th.cos())))
    }
}

/// Closed-form DoA Fisher information `(2 pi^2 / s2) cos^2(t) tr(Gt Q Gt^H)`.
pub fn doa_fim_closed_form(map: &DoaSensing, noise_var: f64, theta: f64, q: &CovMatrix) -> f64 {
    let gt = map.position_weighted(theta);
    let tr = linalg::trace_re(&(&gt * q.matrix() * gt.adjoint()));
    2.0 * PI * PI / noise_var * theta.cos().powi(2) * tr
}

pub fn build_doa(cfg: &DoaConfig) -> Result<Scenario> {
    cfg.validate()?;
    let beta = Complex64::new(cfg.beta[0], cfg.beta[1]);
    let gain = Complex64::new(cfg.lambda_gain[0], cfg.lambda_gain[1]);
    let v = steering_vector(cfg.m_tx, cfg.user_aod);
    let h = CMat::from_fn(1, cfg.m_tx, |_, k| v[k].conj() * beta);
    let user = UserChannel::new(h, noise_var_from_snr(cfg.power, cfg.comm_snr_db))?;
    let map = DoaSensing { m: cfg.m_tx, t: cfg.t_rx, gain };
    let sensing = SensingModel::new(Arc::new(map), noise_var_from_snr(cfg.power, cfg.sens_snr_db))?;
    let prior: Arc<dyn Prior> = match cfg.prior {
        DoaPrior::TaperedUniform { s, kappa } => Arc::new(TaperedUniform::new(s, kappa)?),
        DoaPrior::Beta { s1, s2, theta_min, theta_max } => Arc::new(BetaPrior::new(s1, s2, theta_min, theta_max)?),
    };
    Ok(Scenario::new(user, sensing, prior, cfg.power, 0)?.with_shape(ScenarioShape::Doa))
}

/// Raised-cosine tapered uniform density on `[-s, s]` with flat part `|t| < s kappa`.
pub fn tapered_uniform_pdf(theta: f64, s: f64, kappa: f64) -> f64 {
    let a = theta.abs();
    let norm = 1.0 / (s * (1.0 + kappa));
    if a < s * kappa {
        norm
    } else if a <= s {
        let w = s * (1.0 - kappa);
        if w <= 0.0 {
            return norm;
        }
        norm * 0.5 * (1.0 + (PI * (a - s * kappa) / w).cos())
    } else {
        0.0
    }
}

/// Mass of the tapered-uniform density on `[u, s]`, `0 <= u <= s`.
fn tapered_tail_mass(u: f64, s: f64, kappa: f64) -> f64 {
    let w = s * (1.0 - kappa);
    let sk = s * kappa;
    let unnorm = if u < sk {
        (sk - u) + 0.5 * w
    } else if w > 0.0 {
        0.5 * (s - u) - w / (2.0 * PI) * (PI * (u - sk) / w).sin()
    } else {
        0.0
    };
    unnorm / (s * (1.0 + kappa))
}

pub fn tapered_uniform_cdf(theta: f64, s: f64, kappa: f64) -> f64 {
    if theta <= -s {
        0.0
    } else if theta >= s {
        1.0
    } else if theta <= 0.0 {
        tapered_tail_mass(-theta, s, kappa)
    } else {
        1.0 - tapered_tail_mass(theta, s, kappa)
    }
}

#[derive(Debug, Clone)]
pub struct TaperedUniform {
    pub s: f64,
    pub kappa: f64,
    grid: Vec<f64>,
    cdf: Vec<f64>,
}

impl TaperedUniform {
    pub fn new(s: f64, kappa: f64) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) || !(0.0..=1.0).contains(&kappa) {
            return Err(invalid("tapered uniform needs s > 0 and kappa in [0, 1]"));
        }
        let n = TAPER_CDF_GRID;
        let grid: Vec<f64> = (0..n).map(|i| -s + 2.0 * s * i as f64 / (n - 1) as f64).collect();
        let cdf = grid.iter().map(|&t| tapered_uniform_cdf(t, s, kappa)).collect();
        Ok(TaperedUniform { s, kappa, grid, cdf })
    }

    fn inverse_cdf(&self, u: f64) -> f64 {
        let idx = self.cdf.partition_point(|&f| f < u).clamp(1, self.cdf.len() - 1);
        let (f0, f1) = (self.cdf[idx - 1], self.cdf[idx]);
        let (t0, t1) = (self.grid[idx - 1], self.grid[idx]);
        if f1 > f0 {
            t0 + (t1 - t0) * (u - f0) / (f1 - f0)
        } else {
            t0
        }
    }
}

impl Prior for TaperedUniform {
    fn param_dim(&self) -> usize {
        1
    }

    fn sample(&self, rng: &mut dyn RngCore, count: usize) -> Vec<Theta> {
        (0..count)
            .map(|_| {
                let u: f64 = rng.random();
                CVec::from_element(1, c(self.inverse_cdf(u)))
            })
            .collect()
    }

    fn pdf(&self, theta: &Theta) -> Option<f64> {
        Some(tapered_uniform_pdf(theta[0].re, self.s, self.kappa))
    }

    fn support(&self) -> Option<(f64, f64)> {
        Some((-self.s, self.s))
    }
}

/// Beta density with shapes `(s1, s2)` mapped affinely onto `[theta_min, theta_max]`.
pub fn beta_prior_pdf(theta: f64, s1: f64, s2: f64, theta_min: f64, theta_max: f64) -> f64 {
    if theta < theta_min || theta > theta_max {
        return 0.0;
    }
    let width = theta_max - theta_min;
    let ln = (s1 - 1.0) * (theta - theta_min).ln() + (s2 - 1.0) * (theta_max - theta).ln()
        - (s1 + s2 - 1.0) * width.ln()
        - statrs::function::beta::ln_beta(s1, s2);
    // (s - 1) * ln(0) at an edge with s == 1 is NaN; the density there is finite.
    if ln.is_nan() {
        let at_min = theta == theta_min;
        let t = if at_min { theta_max - theta } else { theta - theta_min };
        let s_other = if at_min { s2 } else { s1 };
        let s_edge = if at_min { s1 } else { s2 };
        if s_edge == 1.0 {
            return ((s_other - 1.0) * t.ln() - (s1 + s2 - 1.0) * width.ln() - statrs::function::beta::ln_beta(s1, s2))
                .exp();
        }
        return 0.0;
    }
    ln.exp()
}

#[derive(Debug, Clone)]
pub struct BetaPrior {
    pub s1: f64,
    pub s2: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    dist: Beta<f64>,
}

impl BetaPrior {
    pub fn new(s1: f64, s2: f64, theta_min: f64, theta_max: f64) -> Result<Self> {
        if !(theta_min < theta_max) {
            return Err(invalid("Beta prior needs theta_min < theta_max"));
        }
        let dist = Beta::new(s1, s2).map_err(|e| invalid(format!("Beta prior: {e}")))?;
        Ok(BetaPrior { s1, s2, theta_min, theta_max, dist })
    }

    pub fn mode(&self) -> f64 {
        self.theta_min + (self.theta_max - self.theta_min) * (self.s1 - 1.0) / (self.s1 + self.s2 - 2.0)
    }
}

impl Prior for BetaPrior {
    fn param_dim(&self) -> usize {
        1
    }

    fn sample(&self, rng: &mut dyn RngCore, count: usize) -> Vec<Theta> {
        let width = self.theta_max - self.theta_min;
        (0..count)
            .map(|_| {
                let x: f64 = self.dist.sample(rng);
                CVec::from_element(1, c(self.theta_min + width * x))
            })
            .collect()
    }

    fn pdf(&self, theta: &Theta) -> Option<f64> {
        Some(beta_prior_pdf(theta[0].re, self.s1, self.s2, self.theta_min, self.theta_max))
    }

    fn support(&self) -> Option<(f64, f64)> {
        Some((self.theta_min, self.theta_max))
    }
}

/// Normalized beamforming gain `b(t) = v_M(t)^H Q v_M(t) / (M P)` on `grid`.
pub fn beam_pattern(q: &CovMatrix, power: f64, grid: &[f64]) -> Vec<(f64, f64)> {
    let m = q.dim();
    grid.iter()
        .map(|&t| {
            let v = steering_vector(m, t);
            let b = (v.adjoint() * q.matrix() * &v)[(0, 0)].re / (m as f64 * power);
            (t, b.max(0.0))
        })
        .collect()
}

/// `n`-point grid spanning `[-pi/2, pi/2]` inclusive.
pub fn angle_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| -PI / 2.0 + PI * i as f64 / (n.max(2) - 1) as f64).collect()
}

fn default_ofdm_power() -> Option<f64> {
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfdmConfig {
    pub k_sub: usize,
    /// Delay spread of the exponential power delay profile.
    pub alpha: f64,
    pub phase_seed: u64,
    pub comm_snr_db: f64,
    pub sens_snr_db: f64,
    /// Power budget; defaults to `K`.
    #[serde(default = "default_ofdm_power")]
    pub power: Option<f64>,
}

impl OfdmConfig {
    /// K = 64, 10 dB communication SNR, -10 dB sensing SNR, P = 64.
    pub fn reference(alpha: f64) -> Self {
        OfdmConfig { k_sub: 64, alpha, phase_seed: 1, comm_snr_db: 10.0, sens_snr_db: -10.0, power: None }
    }

    pub fn power(&self) -> f64 {
        self.power.unwrap_or(self.k_sub as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_sub == 0 {
            return Err(invalid("OFDM needs at least one sub-carrier"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(invalid("delay spread alpha must be positive"));
        }
        let p = self.power();
        if !(p > 0.0 && p.is_finite()) {
            return Err(invalid("power must be positive"));
        }
        Ok(())
    }
}

/// Unitary DFT matrix, `F_jk = e^{-2 pi i j k / K} / sqrt(K)`.
pub fn dft_matrix(k: usize) -> CMat {
    let scale = 1.0 / (k as f64).sqrt();
    CMat::from_fn(k, k, |j, n| {
        let ang = -2.0 * PI * ((j * n) % k) as f64 / k as f64;
        Complex64::from_polar(scale, ang)
    })
}

/// Time-domain taps `h_k = exp(-k/(2 alpha) + i phi_k)`, rescaled to `||h||^2 = K`.
pub fn ofdm_taps(cfg: &OfdmConfig) -> CVec {
    let mut rng = substream(cfg.phase_seed, Purpose::OfdmPhases, 0);
    let k = cfg.k_sub;
    let mut h = CVec::from_fn(k, |n, _| {
        let phi: f64 = rng.random_range(0.0..2.0 * PI);
        Complex64::from_polar((-(n as f64) / (2.0 * cfg.alpha)).exp(), phi)
    });
    let scale = (k as f64 / h.norm_squared()).sqrt();
    h *= c(scale);
    h
}

/// `G(theta) = diag(F theta)`, `dG/dtheta_i = diag(f_i)`.
#[derive(Debug, Clone)]
pub struct OfdmSensing {
    pub dft: CMat,
}

impl SensingMap for OfdmSensing {
    fn param_dim(&self) -> usize {
        self.dft.ncols()
    }

    fn kind(&self) -> ParamKind {
        ParamKind::Complex
    }

    fn in_dim(&self) -> usize {
        self.dft.nrows()
    }

    fn out_dim(&self) -> usize {
        self.dft.nrows()
    }

    fn matrix(&self, theta: &Theta) -> CMat {
        CMat::from_diagonal(&(&self.dft * theta))
    }

    fn partial(&self, _theta: &Theta, i: usize) -> Jacobian {
        Jacobian::Diagonal(self.dft.column(i).into_owned())
    }

    fn is_linear(&self) -> bool {
        true
    }
}

/// Closed-form OFDM Fisher information `(1/s2) F^H (I o Q) F`.
pub fn ofdm_fim_closed_form(dft: &CMat, noise_var: f64, q: &CovMatrix) -> CMat {
    let d = CMat::from_diagonal(&CVec::from_iterator(q.dim(), q.diag().into_iter().map(c)));
    dft.adjoint() * d * dft / c(noise_var)
}

/// i.i.d. `CN(0, 1)` taps.
#[derive(Debug, Clone)]
pub struct ComplexGaussianPrior {
    pub k: usize,
}

impl Prior for ComplexGaussianPrior {
    fn param_dim(&self) -> usize {
        self.k
    }

    fn sample(&self, rng: &mut dyn RngCore, count: usize) -> Vec<Theta> {
        (0..count).map(|_| linalg::complex_normal_vec(rng, self.k)).collect()
    }

    fn support(&self) -> Option<(f64, f64)> {
        None
    }
}

pub fn build_ofdm(cfg: &OfdmConfig) -> Result<Scenario> {
    cfg.validate()?;
    let k = cfg.k_sub;
    let power = cfg.power();
    let dft = dft_matrix(k);
    let freq = &dft * ofdm_taps(cfg);
    let user = UserChannel::new(CMat::from_diagonal(&freq), noise_var_from_snr(power, cfg.comm_snr_db))?;
    let sensing = SensingModel::new(Arc::new(OfdmSensing { dft }), noise_var_from_snr(power, cfg.sens_snr_db))?;
    let prior: Arc<dyn Prior> = Arc::new(ComplexGaussianPrior { k });
    Ok(Scenario::new(user, sensing, prior, power, 0)?.with_shape(ScenarioShape::Ofdm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::information::{conditional_fim, ecrb_objective, MseEvaluator};
    use crate::linalg::{frobenius, random_psd};

    fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let inner: f64 = (1..n).map(|i| f(a + h * i as f64)).sum();
        h * (0.5 * f(a) + inner + 0.5 * f(b))
    }

    #[test]
    fn steering_vector_examples() {
        let v = steering_vector(4, 0.0);
        assert!(v.iter().all(|z| (z - c(1.0)).norm() < 1e-15));
        let v = steering_vector(2, PI / 2.0);
        assert!((v[1] - c(-1.0)).norm() < 1e-15);
        for t in [-1.2, -0.3, 0.0, 0.7, 1.5] {
            assert!((steering_vector(9, t).norm_squared() - 9.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tapered_uniform_integrates_to_one() {
        for (s, kappa) in [(PI / 2.0, 0.7), (1.0, 0.0), (0.5, 0.3), (1.2, 1.0)] {
            let mass = trapezoid(|t| tapered_uniform_pdf(t, s, kappa), -s, s, 200_000);
            assert!((mass - 1.0).abs() < 1e-3, "s={s} kappa={kappa} mass={mass}");
            // Closed-form CDF agrees with quadrature at an interior point.
            let partial = trapezoid(|t| tapered_uniform_pdf(t, s, kappa), -s, 0.3 * s, 200_000);
            assert!((partial - tapered_uniform_cdf(0.3 * s, s, kappa)).abs() < 1e-6);
        }
    }

    #[test]
    fn tapered_uniform_special_values() {
        let s = 1.3;
        assert!((tapered_uniform_pdf(0.4, s, 1.0) - 1.0 / (2.0 * s)).abs() < 1e-15);
        assert_eq!(tapered_uniform_pdf(s, s, 0.5), 0.0);
        assert!(tapered_uniform_pdf(-s, s, 0.2).abs() < 1e-15);
        assert_eq!(tapered_uniform_pdf(1.5 * s, s, 0.2), 0.0);
    }

    #[test]
    fn beta_prior_values() {
        let (a, b) = (-PI / 2.0, PI / 2.0);
        assert!((beta_prior_pdf(0.3, 1.0, 1.0, a, b) - 1.0 / PI).abs() < 1e-12);
        assert!((beta_prior_pdf(a, 1.0, 1.0, a, b) - 1.0 / PI).abs() < 1e-12);
        assert_eq!(beta_prior_pdf(2.0, 5.5, 15.0, a, b), 0.0);
        let mass = trapezoid(|t| beta_prior_pdf(t, 5.5, 15.0, a, b), a, b, 200_000);
        assert!((mass - 1.0).abs() < 1e-6);
        let prior = BetaPrior::new(5.5, 15.0, a, b).unwrap();
        let mode = prior.mode();
        assert!((mode - (-PI / 2.0 + PI * 4.5 / 18.5)).abs() < 1e-12);
        assert!((mode + 0.806).abs() < 1e-3);
        // The density peaks at the mode.
        let f = |t: f64| beta_prior_pdf(t, 5.5, 15.0, a, b);
        assert!(f(mode) > f(mode - 1e-3) && f(mode) > f(mode + 1e-3));
    }

    #[test]
    fn doa_derivative_check() {
        let scenario = build_doa(&DoaConfig::tapered_uniform_reference()).unwrap();
        let mut rng = substream(5, Purpose::Test, 0);
        let thetas = scenario.prior.sample(&mut rng, 100);
        let err = scenario.sensing.derivative_check(&thetas, &mut rng);
        assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn ofdm_derivative_check() {
        let scenario = build_ofdm(&OfdmConfig { k_sub: 8, ..OfdmConfig::reference(10.0) }).unwrap();
        let mut rng = substream(6, Purpose::Test, 0);
        let thetas = scenario.prior.sample(&mut rng, 100);
        assert!(scenario.sensing.derivative_check(&thetas, &mut rng) < 1e-5);
    }

    #[test]
    fn doa_fim_hand_value() {
        let cfg = DoaConfig { m_tx: 2, t_rx: 2, ..DoaConfig::tapered_uniform_reference() };
        let scenario = build_doa(&cfg).unwrap();
        let s2 = scenario.sensing.noise_var();
        let theta = CVec::from_element(1, c(0.0));
        let j = conditional_fim(&scenario.sensing, &theta, &CovMatrix::scaled_identity(2, 2.0)).unwrap();
        assert!((j.entries[(0, 0)].re - 4.0 * PI * PI / s2).abs() < 1e-12 * (4.0 * PI * PI / s2));
    }

    #[test]
    fn doa_generic_fim_matches_closed_form() {
        let scenario = build_doa(&DoaConfig::tapered_uniform_reference()).unwrap();
        let map = DoaSensing { m: 16, t: 16, gain: c(1.0) };
        let s2 = scenario.sensing.noise_var();
        let mut rng = substream(7, Purpose::Test, 0);
        for _ in 0..50 {
            let theta: f64 = rng.random_range(-1.5..1.5);
            let q = CovMatrix::new(random_psd(&mut rng, 16, 3)).unwrap();
            let generic = conditional_fim(&scenario.sensing, &CVec::from_element(1, c(theta)), &q).unwrap();
            let closed = doa_fim_closed_form(&map, s2, theta, &q);
            assert!((generic.entries[(0, 0)].re - closed).abs() <= 1e-10 * closed.abs());
        }
    }

    #[test]
    fn dft_is_unitary() {
        let f = dft_matrix(16);
        assert!(frobenius(&(f.adjoint() * &f - CMat::identity(16, 16))) < 1e-12);
    }

    #[test]
    fn ofdm_fim_matches_closed_form_and_ignores_off_diagonals() {
        let scenario = build_ofdm(&OfdmConfig { k_sub: 16, ..OfdmConfig::reference(10.0) }).unwrap();
        let dft = dft_matrix(16);
        let s2 = scenario.sensing.noise_var();
        let mut rng = substream(8, Purpose::Test, 0);
        let q = CovMatrix::new(random_psd(&mut rng, 16, 16)).unwrap();
        let closed = ofdm_fim_closed_form(&dft, s2, &q);
        for theta in scenario.prior.sample(&mut rng, 3) {
            let generic = conditional_fim(&scenario.sensing, &theta, &q).unwrap();
            assert!((generic.entries - &closed).camax() < 1e-10);
        }
        let diag_only = CovMatrix::from_diag(&q.diag()).unwrap();
        let theta = CVec::zeros(16);
        let a = conditional_fim(&scenario.sensing, &theta, &q).unwrap();
        let b = conditional_fim(&scenario.sensing, &theta, &diag_only).unwrap();
        assert!((a.entries - b.entries).camax() < 1e-12);
    }

    #[test]
    fn ofdm_ecrb_is_sum_of_inverse_powers() {
        let scenario = build_ofdm(&OfdmConfig { k_sub: 8, ..OfdmConfig::reference(10.0) }).unwrap();
        let s2 = scenario.sensing.noise_var();
        let p = [0.5, 1.0, 2.0, 0.25, 3.0, 1.5, 0.75, 1.0];
        let q = CovMatrix::from_diag(&p).unwrap();
        let thetas = scenario.theta_samples();
        let v = ecrb_objective(&scenario, &thetas, &q).unwrap();
        let expected: f64 = s2 * p.iter().map(|x| 1.0 / x).sum::<f64>();
        assert!((v - expected).abs() < 1e-9 * expected);
        let mut zeroed = p;
        zeroed[3] = 0.0;
        let v = ecrb_objective(&scenario, &thetas, &CovMatrix::from_diag(&zeroed).unwrap()).unwrap();
        assert!(v.is_infinite());
        assert_eq!(MseEvaluator::new(&scenario, &thetas).unwrap().sample_count(), 1);
    }

    #[test]
    fn ofdm_channel_flatness() {
        let flat = build_ofdm(&OfdmConfig::reference(0.1)).unwrap();
        let sel = build_ofdm(&OfdmConfig::reference(10.0)).unwrap();
        let spread = |s: &Scenario| {
            let g: Vec<f64> = (0..64).map(|k| s.user.h[(k, k)].norm()).collect();
            let max = g.iter().cloned().fold(0.0, f64::max);
            let min = g.iter().cloned().fold(f64::INFINITY, f64::min);
            max / min
        };
        assert!(spread(&flat) < 1.05);
        assert!(spread(&sel) > 3.0);
        let energy: f64 = (0..64).map(|k| flat.user.h[(k, k)].norm_sqr()).sum();
        assert!((energy / 64.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn beam_pattern_examples() {
        let m = 16;
        let p = 2.0;
        let phi = 0.4;
        let v = steering_vector(m, phi);
        let q = CovMatrix::new(&v * v.adjoint() * c(p / m as f64)).unwrap();
        let b = beam_pattern(&q, p, &[phi]);
        assert!((b[0].1 - 1.0).abs() < 1e-12);
        let iso = CovMatrix::scaled_identity(m, p);
        for (_, b) in beam_pattern(&iso, p, &angle_grid(721)) {
            assert!((b - 1.0 / m as f64).abs() < 1e-12);
        }
    }

    fn chi_square_pvalue(prior: &dyn Prior, lo: f64, hi: f64, pdf: impl Fn(f64) -> f64) -> f64 {
        let bins = 64;
        let n = 100_000;
        let mut rng = substream(9, Purpose::Test, 1);
        let mut counts = vec![0usize; bins];
        for t in prior.sample(&mut rng, n) {
            let idx = (((t[0].re - lo) / (hi - lo)) * bins as f64).floor() as isize;
            counts[idx.clamp(0, bins as isize - 1) as usize] += 1;
        }
        let width = (hi - lo) / bins as f64;
        let mut stat = 0.0;
        let mut dof = 0;
        for (b, &count) in counts.iter().enumerate() {
            let a = lo + width * b as f64;
            let expected = n as f64 * trapezoid(&pdf, a, a + width, 200);
            if expected > 5.0 {
                stat += (count as f64 - expected).powi(2) / expected;
                dof += 1;
            }
        }
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        1.0 - ChiSquared::new((dof - 1) as f64).unwrap().cdf(stat)
    }

    #[test]
    fn samplers_match_densities() {
        let t = TaperedUniform::new(PI / 2.0, 0.7).unwrap();
        let p = chi_square_pvalue(&t, -PI / 2.0, PI / 2.0, |x| tapered_uniform_pdf(x, PI / 2.0, 0.7));
        assert!(p > 0.001, "tapered uniform p = {p}");
        let b = BetaPrior::new(5.5, 15.0, -PI / 2.0, PI / 2.0).unwrap();
        let p = chi_square_pvalue(&b, -PI / 2.0, PI / 2.0, |x| beta_prior_pdf(x, 5.5, 15.0, -PI / 2.0, PI / 2.0));
        assert!(p > 0.001, "beta p = {p}");
    }

    #[test]
    fn samples_stay_in_support() {
        let mut rng = substream(10, Purpose::Test, 0);
        let t = TaperedUniform::new(1.0, 0.3).unwrap();
        assert!(t.sample(&mut rng, 10_000).iter().all(|x| x[0].re.abs() <= 1.0));
        let b = BetaPrior::new(2.0, 3.0, -0.5, 0.8).unwrap();
        assert!(b.sample(&mut rng, 10_000).iter().all(|x| (-0.5..=0.8).contains(&x[0].re)));
    }
}
