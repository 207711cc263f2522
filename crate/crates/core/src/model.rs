//! Domain types shared by every other module.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, c, CMat, CVec};
use crate::rng::{substream, Purpose};

/// Target parameter vector. Real-valued parameters keep a zero imaginary part.
pub type Theta = CVec;

/// Eigenvalues below this are treated as numerical noise when validating PSD-ness.
pub const PSD_TOL: f64 = 1e-10;

/// Input covariance `Q`: Hermitian positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    entries: CMat,
}

impl CovMatrix {
    /// Validates `m` and clips it onto the PSD cone (see [`project_psd`]).
    ///
    /// A matrix already PSD to within `PSD_TOL` is kept as is (only symmetrized).
    pub fn new(m: CMat) -> Result<Self> {
        if !m.is_square() || !linalg::all_finite(&m) {
            return project_psd(&m);
        }
        let h = linalg::hermitian_part(&m);
        if linalg::eigenvalues(&h).first().is_none_or(|&v| v >= -PSD_TOL) {
            return Ok(CovMatrix { entries: h });
        }
        project_psd(&m)
    }

    /// Wraps a matrix already known to be Hermitian PSD (symmetrized, not clipped).
    pub(crate) fn from_psd(m: CMat) -> Self {
        CovMatrix { entries: linalg::hermitian_part(&m) }
    }

    pub fn scaled_identity(dim: usize, total_power: f64) -> Self {
        CovMatrix { entries: CMat::identity(dim, dim) * c(total_power / dim as f64) }
    }

    pub fn zeros(dim: usize) -> Self {
        CovMatrix { entries: CMat::zeros(dim, dim) }
    }

    pub fn from_diag(powers: &[f64]) -> Result<Self> {
        if powers.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(invalid("diagonal powers must be finite and nonnegative"));
        }
        let n = powers.len();
        Ok(CovMatrix { entries: CMat::from_fn(n, n, |i, j| if i == j { c(powers[i]) } else { c(0.0) }) })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.entries
    }

    pub fn into_matrix(self) -> CMat {
        self.entries
    }

    pub fn trace(&self) -> f64 {
        linalg::trace_re(&self.entries)
    }

    pub fn diag(&self) -> Vec<f64> {
        self.entries.diagonal().iter().map(|z| z.re).collect()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        linalg::eigenvalues(&self.entries)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues().last().copied().unwrap_or(0.0)
    }

    /// Checks the Hermitian and PSD invariants against the crate tolerances.
    pub fn check_invariants(&self) -> Result<()> {
        if linalg::hermitian_defect(&self.entries) > 1e-12 {
            return Err(invalid("covariance is not Hermitian"));
        }
        let min = self.eigenvalues().first().copied().unwrap_or(0.0);
        if min < -PSD_TOL {
            return Err(invalid(format!("covariance has eigenvalue {min:e} < 0")));
        }
        Ok(())
    }
}

/// Frobenius-nearest PSD matrix: eigenvalues of the Hermitian part clipped at 0.
pub fn project_psd(m: &CMat) -> Result<CovMatrix> {
    if !m.is_square() {
        return Err(invalid("matrix must be square"));
    }
    if !linalg::all_finite(m) {
        return Err(invalid("matrix has non-finite entries"));
    }
    let (values, vectors) = linalg::hermitian_eigen(m);
    let clipped: Vec<f64> = values.iter().map(|v| v.max(0.0)).collect();
    Ok(CovMatrix::from_psd(linalg::from_eigen(&clipped, &vectors)))
}

/// Frobenius-nearest point of `{Q >= 0, tr Q <= power}`.
pub fn project_trace_ball(m: &CMat, power: f64) -> Result<CovMatrix> {
    if !(power > 0.0 && power.is_finite()) {
        return Err(invalid("power budget must be positive"));
    }
    if !m.is_square() || !linalg::all_finite(m) {
        return Err(invalid("matrix must be square with finite entries"));
    }
    Ok(trace_ball_projection(m, power))
}

pub(crate) fn trace_ball_projection(m: &CMat, power: f64) -> CovMatrix {
    let (values, vectors) = linalg::hermitian_eigen(m);
    let projected = linalg::project_capped_simplex(&values, power);
    CovMatrix::from_psd(linalg::from_eigen(&projected, &vectors))
}

/// Communication channel `y = H x + w`, `w ~ CN(0, noise_var I)`.
#[derive(Debug, Clone)]
pub struct UserChannel {
    pub h: CMat,
    pub noise_var: f64,
}

impl UserChannel {
    pub fn new(h: CMat, noise_var: f64) -> Result<Self> {
        if !linalg::all_finite(&h) {
            return Err(invalid("user channel has non-finite entries"));
        }
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(invalid("user noise variance must be positive"));
        }
        Ok(UserChannel { h, noise_var })
    }

    pub fn rx_dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn tx_dim(&self) -> usize {
        self.h.ncols()
    }
}

/// Real parameters use the `2/s2 Re tr(.)` Fisher convention, complex ones `1/s2 tr(.)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Real,
    Complex,
}

impl ParamKind {
    pub fn fim_factor(self) -> f64 {
        match self {
            ParamKind::Real => 2.0,
            ParamKind::Complex => 1.0,
        }
    }
}

/// Partial derivative `dG/dtheta_i`, stored densely or as a diagonal.
#[derive(Debug, Clone)]
pub enum Jacobian {
    Dense(CMat),
    Diagonal(CVec),
}

impl Jacobian {
    pub fn to_dense(&self) -> CMat {
        match self {
            Jacobian::Dense(m) => m.clone(),
            Jacobian::Diagonal(d) => CMat::from_diagonal(d),
        }
    }
}

/// The parameter-to-channel map `theta -> G(theta)` of the sensor.
pub trait SensingMap: Send + Sync + fmt::Debug {
    fn param_dim(&self) -> usize;
    fn kind(&self) -> ParamKind;
    /// Transmit dimension `M` (columns of `G`).
    fn in_dim(&self) -> usize;
    /// Sensor dimension `T` (rows of `G`).
    fn out_dim(&self) -> usize;
    fn matrix(&self, theta: &Theta) -> CMat;
    fn partial(&self, theta: &Theta, i: usize) -> Jacobian;
    /// `G` affine in `theta`: partials, and hence the Fisher information, do not depend on `theta`.
    fn is_linear(&self) -> bool {
        false
    }
}

/// Sensor channel `z = G(theta) x + u`, `u ~ CN(0, noise_var I)`.
#[derive(Debug, Clone)]
pub struct SensingModel {
    map: Arc<dyn SensingMap>,
    noise_var: f64,
}

impl SensingModel {
    pub fn new(map: Arc<dyn SensingMap>, noise_var: f64) -> Result<Self> {
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(invalid("sensing noise variance must be positive"));
        }
        if map.param_dim() == 0 || map.in_dim() == 0 || map.out_dim() == 0 {
            return Err(invalid("sensing map dimensions must be positive"));
        }
        Ok(SensingModel { map, noise_var })
    }

    /// Same map with a different noise variance (zero allowed, for noise-free simulation).
    pub fn with_noise_var(&self, noise_var: f64) -> Self {
        SensingModel { map: Arc::clone(&self.map), noise_var }
    }

    pub fn map(&self) -> &dyn SensingMap {
        self.map.as_ref()
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn param_dim(&self) -> usize {
        self.map.param_dim()
    }

    pub fn kind(&self) -> ParamKind {
        self.map.kind()
    }

    pub fn in_dim(&self) -> usize {
        self.map.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.map.out_dim()
    }

    pub fn g(&self, theta: &Theta) -> CMat {
        self.map.matrix(theta)
    }

    pub fn dg(&self, theta: &Theta, i: usize) -> Jacobian {
        self.map.partial(theta, i)
    }

    /// Worst relative error of the analytic partials against central finite
    /// differences along a random direction, over the given points.
    pub fn derivative_check(&self, thetas: &[Theta], rng: &mut dyn RngCore) -> f64 {
        let k = self.param_dim();
        let mut worst = 0.0f64;
        for theta in thetas {
            let dir: CVec = match self.kind() {
                ParamKind::Real => CVec::from_fn(k, |_, _| c(rand::Rng::random_range(rng, -1.0..1.0))),
                ParamKind::Complex => linalg::complex_normal_vec(rng, k),
            };
            let scale = 1.0 + theta.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let step = 1e-6 * scale;
            let plus = self.g(&(theta + &dir * c(step)));
            let minus = self.g(&(theta - &dir * c(step)));
            let fd = (plus - minus) / c(2.0 * step);
            let mut analytic = CMat::zeros(self.out_dim(), self.in_dim());
            for i in 0..k {
                analytic += self.dg(theta, i).to_dense() * dir[i];
            }
            let denom = linalg::frobenius(&analytic).max(1e-300);
            worst = worst.max(linalg::frobenius(&(fd - &analytic)) / denom);
        }
        worst
    }
}

/// Distribution of the target parameter.
pub trait Prior: Send + Sync + fmt::Debug {
    fn param_dim(&self) -> usize;
    fn sample(&self, rng: &mut dyn RngCore, count: usize) -> Vec<Theta>;
    /// Density, when available in closed form.
    fn pdf(&self, _theta: &Theta) -> Option<f64> {
        None
    }
    /// Per-coordinate support `[lo, hi]` of the real part; `None` when unbounded.
    fn support(&self) -> Option<(f64, f64)>;
}

/// Prior given by a fixed list of samples, resampled with replacement.
#[derive(Debug, Clone)]
pub struct EmpiricalPrior {
    samples: Vec<Theta>,
}

impl EmpiricalPrior {
    pub fn new(samples: Vec<Theta>) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(invalid("empirical prior needs at least one sample"));
        };
        let k = first.len();
        if samples.iter().any(|s| s.len() != k) {
            return Err(invalid("empirical prior samples differ in length"));
        }
        Ok(EmpiricalPrior { samples })
    }
}

impl Prior for EmpiricalPrior {
    fn param_dim(&self) -> usize {
        self.samples[0].len()
    }

    fn sample(&self, rng: &mut dyn RngCore, count: usize) -> Vec<Theta> {
        (0..count).map(|_| self.samples[rand::Rng::random_range(rng, 0..self.samples.len())].clone()).collect()
    }

    fn support(&self) -> Option<(f64, f64)> {
        let re = self.samples.iter().flat_map(|s| s.iter().map(|z| z.re));
        let (lo, hi) = re.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
        Some((lo, hi))
    }
}

/// Weighted-MSE importance weights `a_i >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Weights(Vec<f64>);

impl Weights {
    pub fn new(a: Vec<f64>) -> Result<Self> {
        if a.is_empty() || a.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(invalid("weights must be a nonempty list of finite nonnegative reals"));
        }
        Ok(Weights(a))
    }

    pub fn ones(k: usize) -> Self {
        Weights(vec![1.0; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for Weights {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Weights::new(v)
    }
}

impl From<Weights> for Vec<f64> {
    fn from(w: Weights) -> Self {
        w.0
    }
}

/// Which structured builder produced a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioShape {
    Doa,
    Ofdm,
    Custom,
}

pub const DEFAULT_PRIOR_SAMPLES: usize = 512;

/// Everything needed to pose the capacity-MSE problem.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub user: UserChannel,
    pub sensing: SensingModel,
    pub prior: Arc<dyn Prior>,
    pub power: f64,
    pub weights: Weights,
    pub prior_samples: usize,
    pub seed: u64,
    pub shape: ScenarioShape,
}

impl Scenario {
    pub fn new(user: UserChannel, sensing: SensingModel, prior: Arc<dyn Prior>, power: f64, seed: u64) -> Result<Self> {
        let k = sensing.param_dim();
        let scenario = Scenario {
            user,
            sensing,
            prior,
            power,
            weights: Weights::ones(k),
            prior_samples: DEFAULT_PRIOR_SAMPLES,
            seed,
            shape: ScenarioShape::Custom,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn with_weights(mut self, weights: Weights) -> Result<Self> {
        self.weights = weights;
        self.validate()?;
        Ok(self)
    }

    pub fn with_prior_samples(mut self, count: usize) -> Result<Self> {
        self.prior_samples = count;
        self.validate()?;
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub(crate) fn with_shape(mut self, shape: ScenarioShape) -> Self {
        self.shape = shape;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.user.tx_dim() != self.sensing.in_dim() {
            return Err(Error::DimensionMismatch(format!(
                "user channel has {} transmit columns, sensing channel {}",
                self.user.tx_dim(),
                self.sensing.in_dim()
            )));
        }
        if self.prior.param_dim() != self.sensing.param_dim() {
            return Err(Error::DimensionMismatch("prior and sensing parameter dimensions differ".into()));
        }
        if self.weights.len() != self.sensing.param_dim() {
            return Err(Error::DimensionMismatch("one weight per parameter required".into()));
        }
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(invalid("power budget must be positive"));
        }
        if self.prior_samples == 0 {
            return Err(invalid("prior sample count must be positive"));
        }
        Ok(())
    }

    pub fn tx_dim(&self) -> usize {
        self.user.tx_dim()
    }

    pub fn param_dim(&self) -> usize {
        self.sensing.param_dim()
    }

    /// The fixed prior sample set used for every sample-average evaluation of this scenario.
    pub fn theta_samples(&self) -> Vec<Theta> {
        let mut rng = substream(self.seed, Purpose::PriorSamples, 0);
        self.prior.sample(&mut rng, self.prior_samples)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TradeoffStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

impl fmt::Display for TradeoffStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TradeoffStatus::Optimal => "optimal",
            TradeoffStatus::Infeasible => "infeasible",
            TradeoffStatus::MaxIter => "max_iter",
        })
    }
}

/// One point `(delta, C(delta))` with its optimizer and certificates.
///
/// `rate_bits` is reported in bits per channel use; multipliers are in nats
/// (the solver works with natural logarithms).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TradeoffPoint {
    #[serde(with = "extended_f64")]
    pub delta: f64,
    pub rate_bits: f64,
    /// Sensing-constraint value attained by `q_opt`.
    #[serde(with = "extended_f64")]
    pub mse: f64,
    pub q_opt: CovMatrix,
    pub kkt_residual: f64,
    #[serde(with = "extended_f64")]
    pub lambda_sensing: f64,
    pub nu_power: f64,
    pub status: TradeoffStatus,
}

/// Serializes non-finite floats as the strings `"inf"`, `"-inf"`, `"nan"`.
pub mod extended_f64 {
    use super::*;

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_str(&format_f64(*x))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Str(s) => parse_f64(&s).map_err(serde::de::Error::custom),
        }
    }
}

/// Full-precision scientific notation (17 significant digits); `inf`/`-inf`/`nan` otherwise.
pub fn format_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{x:.16e}")
    }
}

pub fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    match s.trim() {
        "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
        "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
        "nan" => Ok(f64::NAN),
        t => t.parse().map_err(|e| format!("invalid number {t:?}: {e}")),
    }
}

/// Dense complex matrix record: row-major `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseComplexMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<[f64; 2]>,
}

impl From<&CMat> for DenseComplexMatrix {
    fn from(m: &CMat) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push([m[(i, j)].re, m[(i, j)].im]);
            }
        }
        DenseComplexMatrix { rows: m.nrows(), cols: m.ncols(), data }
    }
}

impl TryFrom<DenseComplexMatrix> for CMat {
    type Error = Error;
    fn try_from(d: DenseComplexMatrix) -> Result<CMat> {
        if d.data.len() != d.rows * d.cols {
            return Err(invalid(format!("matrix record has {} entries, expected {}x{}", d.data.len(), d.rows, d.cols)));
        }
        Ok(CMat::from_fn(d.rows, d.cols, |i, j| {
            let [re, im] = d.data[i * d.cols + j];
            Complex64::new(re, im)
        }))
    }
}

impl Serialize for CovMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        DenseComplexMatrix::from(&self.entries).serialize(s)
    }
}

impl<'de> Deserialize<'de> for CovMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let record = DenseComplexMatrix::deserialize(d)?;
        let m = CMat::try_from(record).map_err(serde::de::Error::custom)?;
        if linalg::hermitian_defect(&m) > 1e-8 {
            return Err(serde::de::Error::custom("covariance matrix is not Hermitian"));
        }
        CovMatrix::new(m).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frobenius, random_hermitian, random_psd};
    use proptest::prelude::*;

    fn diag(v: &[f64]) -> CMat {
        CovMatrix::from_diag(v).map(|q| q.into_matrix()).unwrap_or_else(|_| {
            let n = v.len();
            CMat::from_fn(n, n, |i, j| if i == j { c(v[i]) } else { c(0.0) })
        })
    }

    #[test]
    fn project_psd_examples() {
        let id = CMat::identity(2, 2);
        assert!(frobenius(&(project_psd(&id).unwrap().into_matrix() - &id)) < 1e-15);
        let m = diag(&[1.0, -1.0]);
        let p = project_psd(&m).unwrap();
        assert!(frobenius(&(p.into_matrix() - diag(&[1.0, 0.0]))) < 1e-15);
    }

    #[test]
    fn project_psd_rejects_nan() {
        let mut m = CMat::identity(2, 2);
        m[(0, 1)] = Complex64::new(f64::NAN, 0.0);
        assert!(matches!(project_psd(&m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn project_psd_is_nearest_among_random_psd() {
        let mut rng = substream(11, Purpose::Test, 0);
        for _ in 0..5 {
            let a = random_hermitian(&mut rng, 4);
            let r = project_psd(&a).unwrap();
            let dist = frobenius(&(r.matrix() - &a));
            for _ in 0..100 {
                let rank = rand::Rng::random_range(&mut rng, 1..=4);
                let p = random_psd(&mut rng, 4, rank) * c(rand::Rng::random_range(&mut rng, 0.01..2.0));
                assert!(dist <= frobenius(&(p - &a)) + 1e-12);
            }
        }
    }

    #[test]
    fn project_trace_ball_examples() {
        let cases = [([0.5, 0.5], [0.5, 0.5]), ([4.0, 0.0], [2.0, 0.0]), ([3.0, 1.0], [2.0, 0.0])];
        for (input, expected) in cases {
            let p = project_trace_ball(&diag(&input), 2.0).unwrap();
            assert!(frobenius(&(p.into_matrix() - diag(&expected))) < 1e-14);
        }
        assert!(project_trace_ball(&diag(&[1.0, 1.0]), 0.0).is_err());
        assert!(project_trace_ball(&diag(&[1.0, 1.0]), -1.0).is_err());
    }

    #[test]
    fn trace_ball_projection_is_nearest_feasible() {
        let mut rng = substream(12, Purpose::Test, 0);
        let a = random_hermitian(&mut rng, 3) * c(3.0);
        let r = project_trace_ball(&a, 1.5).unwrap();
        let dist = frobenius(&(r.matrix() - &a));
        for _ in 0..200 {
            let p = random_psd(&mut rng, 3, 3);
            let p = &p * c(rand::Rng::random_range(&mut rng, 0.0..1.5) / linalg::trace_re(&p));
            assert!(dist <= frobenius(&(p - &a)) + 1e-12);
        }
    }

    #[test]
    fn cov_matrix_json_round_trip() {
        let mut rng = substream(13, Purpose::Test, 0);
        let q = CovMatrix::new(random_psd(&mut rng, 3, 2)).unwrap();
        let json = serde_json::to_string(&q).unwrap();
        let back: CovMatrix = serde_json::from_str(&json).unwrap();
        back.check_invariants().unwrap();
        assert!(frobenius(&(back.matrix() - q.matrix())) < 1e-15);
        let bad = r#"{"rows":2,"cols":2,"data":[[1,0],[0,1],[0,0],[1,0]]}"#;
        assert!(serde_json::from_str::<CovMatrix>(bad).is_err());
    }

    #[test]
    fn tradeoff_point_serializes_infinity() {
        let p = TradeoffPoint {
            delta: f64::INFINITY,
            rate_bits: 1.0,
            mse: f64::INFINITY,
            q_opt: CovMatrix::scaled_identity(2, 1.0),
            kkt_residual: 0.0,
            lambda_sensing: 0.0,
            nu_power: 0.5,
            status: TradeoffStatus::Optimal,
        };
        let json = serde_json::to_string(&p).unwrap();
        assert!(json.contains(r#""delta":"inf""#));
        let back: TradeoffPoint = serde_json::from_str(&json).unwrap();
        assert!(back.delta.is_infinite());
    }

    #[test]
    fn weights_validation() {
        assert!(Weights::new(vec![1.0, 0.0]).is_ok());
        assert!(Weights::new(vec![-1.0]).is_err());
        assert!(Weights::new(vec![]).is_err());
    }

    #[test]
    fn user_channel_validation() {
        assert!(UserChannel::new(CMat::identity(1, 1), 0.0).is_err());
        assert!(UserChannel::new(CMat::identity(1, 1), 1.0).is_ok());
    }

    fn hermitian_strategy(n: usize) -> impl Strategy<Value = CMat> {
        proptest::collection::vec(-3.0f64..3.0, 2 * n * n).prop_map(move |v| {
            let m = CMat::from_fn(n, n, |i, j| Complex64::new(v[2 * (i * n + j)], v[2 * (i * n + j) + 1]));
            linalg::hermitian_part(&m)
        })
    }

    proptest! {
        #[test]
        fn project_psd_idempotent(a in hermitian_strategy(4)) {
            let once = project_psd(&a).unwrap();
            let twice = project_psd(once.matrix()).unwrap();
            prop_assert!(frobenius(&(twice.matrix() - once.matrix())) < 1e-12);
            once.check_invariants().unwrap();
        }

        #[test]
        fn trace_ball_output_feasible(a in hermitian_strategy(4), power in 0.1f64..5.0) {
            let q = project_trace_ball(&a, power).unwrap();
            let eig = q.eigenvalues();
            prop_assert!(eig[0] >= -1e-12);
            prop_assert!(q.trace() <= power + 1e-12);
        }
    }
}
