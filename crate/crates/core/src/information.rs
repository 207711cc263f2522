//! Information measures of a Gaussian input with covariance `Q`.
//!
//! Gradients with respect to a Hermitian `Q` follow the convention
//! `df = Re tr(grad^H dQ)`, so the gradient is itself Hermitian and a step
//! `Q + t grad` is the steepest-ascent direction in the Frobenius geometry.
//!
//! Mean-square-error objectives are sample averages over a fixed prior sample
//! set. [`MseEvaluator`] precomputes the `Q`-independent part of every
//! per-sample Fisher information so that each evaluation costs `O(K^2 M^2)`
//! per sample.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::exec::{pairwise_sum, Exec};
use crate::linalg::{self, c, CMat, CVec};
use crate::model::{CovMatrix, Jacobian, ParamKind, Scenario, SensingModel, Theta, UserChannel};

/// Relative eigenvalue threshold for declaring a Fisher information singular.
pub const RANK_TOL: f64 = 1e-12;

/// Samples handled per work item in parallel reductions.
const CHUNK: usize = 32;

/// Conditional Fisher information `J(theta | Q)`, `K x K`.
#[derive(Debug, Clone)]
pub struct FimMatrix {
    pub entries: CMat,
    pub kind: ParamKind,
}

impl FimMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        linalg::eigenvalues(&self.entries)
    }

    /// `true` when the smallest eigenvalue is below `RANK_TOL * tr(J) / K`.
    pub fn is_singular(&self) -> bool {
        is_singular_spectrum(&self.eigenvalues())
    }
}

fn is_singular_spectrum(eig: &[f64]) -> bool {
    let k = eig.len() as f64;
    let tr: f64 = eig.iter().sum();
    !(tr > 0.0) || eig[0] < RANK_TOL * tr / k
}

fn check_q(dim: usize, q: &CovMatrix) -> Result<()> {
    if q.dim() != dim {
        return Err(Error::DimensionMismatch(format!(
            "covariance is {}x{}, channel expects {dim}x{dim}",
            q.dim(),
            q.dim()
        )));
    }
    Ok(())
}

/// `sigma^2 I + H Q H^H`.
fn output_covariance(user: &UserChannel, q: &CMat) -> CMat {
    let l = user.rx_dim();
    linalg::hermitian_part(&(&user.h * q * user.h.adjoint())) + CMat::identity(l, l) * c(user.noise_var)
}

/// Gaussian mutual information `log det(I + H Q H^H / sigma^2)` in nats.
pub fn gaussian_mi(user: &UserChannel, q: &CovMatrix) -> Result<f64> {
    check_q(user.tx_dim(), q)?;
    Ok(mi_unchecked(user, q.matrix()))
}

pub(crate) fn mi_unchecked(user: &UserChannel, q: &CMat) -> f64 {
    let l = user.rx_dim();
    let cov = output_covariance(user, q);
    let logdet = linalg::logdet_hpd(&cov)
        .unwrap_or_else(|| linalg::eigenvalues(&cov).iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).sum());
    (logdet - l as f64 * user.noise_var.ln()).max(0.0)
}

/// Gradient of [`gaussian_mi`]: `H^H (sigma^2 I + H Q H^H)^{-1} H`.
pub fn mi_gradient(user: &UserChannel, q: &CovMatrix) -> Result<CMat> {
    check_q(user.tx_dim(), q)?;
    Ok(mi_gradient_unchecked(user, q.matrix()))
}

pub(crate) fn mi_gradient_unchecked(user: &UserChannel, q: &CMat) -> CMat {
    let inv = linalg::inverse_hpd(&output_covariance(user, q)).expect("noise variance keeps the output covariance PD");
    linalg::hermitian_part(&(user.h.adjoint() * inv * &user.h))
}

/// Information density `log f(y|x) - log f(y)` for output law `CN(0, sigma^2 I + H Q H^H)`.
pub fn information_density(user: &UserChannel, q: &CovMatrix, x: &CVec, y: &CVec) -> Result<f64> {
    check_q(user.tx_dim(), q)?;
    if x.len() != user.tx_dim() || y.len() != user.rx_dim() {
        return Err(Error::DimensionMismatch("input/output vector length".into()));
    }
    let density = InfoDensity::new(user, q);
    Ok(density.eval(x, y))
}

/// Information density with the output covariance factored once.
pub(crate) struct InfoDensity<'a> {
    user: &'a UserChannel,
    cov_inv: CMat,
    logdet_ratio: f64,
}

impl<'a> InfoDensity<'a> {
    pub(crate) fn new(user: &'a UserChannel, q: &CovMatrix) -> Self {
        let cov = output_covariance(user, q.matrix());
        let l = user.rx_dim() as f64;
        InfoDensity {
            user,
            cov_inv: linalg::inverse_hpd(&cov).expect("output covariance is PD"),
            logdet_ratio: linalg::logdet_hpd(&cov).expect("output covariance is PD") - l * user.noise_var.ln(),
        }
    }

    pub(crate) fn eval(&self, x: &CVec, y: &CVec) -> f64 {
        let resid = y - &self.user.h * x;
        let cond = resid.norm_squared() / self.user.noise_var;
        let marg = (y.adjoint() * &self.cov_inv * y)[(0, 0)].re;
        self.logdet_ratio - cond + marg
    }
}

/// Conditional Fisher information at one parameter value.
///
/// Real parameters: `J_ij = (2/s2) Re tr(dG_j Q dG_i^H)`;
/// complex parameters: `J_ij = (1/s2) tr(dG_j Q dG_i^H)`.
pub fn conditional_fim(model: &SensingModel, theta: &Theta, q: &CovMatrix) -> Result<FimMatrix> {
    check_q(model.in_dim(), q)?;
    let k = model.param_dim();
    let partials: Vec<CMat> = (0..k).map(|i| model.dg(theta, i).to_dense()).collect();
    let scale = model.kind().fim_factor() / model.noise_var();
    let mut j = CMat::zeros(k, k);
    for col in 0..k {
        let b = &partials[col] * q.matrix();
        for row in 0..k {
            // tr(B D_row^H) = sum_ab B_ab conj(D_row_ab)
            let t: Complex64 = b.iter().zip(partials[row].iter()).map(|(x, y)| x * y.conj()).sum();
            j[(row, col)] = match model.kind() {
                ParamKind::Real => c(scale * t.re),
                ParamKind::Complex => t * scale,
            };
        }
    }
    Ok(FimMatrix { entries: linalg::hermitian_part(&j), kind: model.kind() })
}

/// `Q`-independent part of `J(theta_s | .)` for one sample.
#[derive(Debug, Clone)]
enum SampleOperator {
    /// Upper-triangular blocks `D_i^H D_j`, `i <= j`, row-major.
    Dense(Vec<CMat>),
    /// `M x K` matrix whose columns are the diagonals of `D_i`.
    Diagonal(CMat),
}

/// Which sensing constraint a solve uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MseBound {
    /// `tr(A E[J^-1])`, the exact asymptotic MSE.
    Ecrb,
    /// `tr(A E[J]^-1)`, the Bayesian CRB (van Trees) relaxation.
    Bcrb,
}

/// Sample-average ECRB/BCRB evaluator over a fixed prior sample set.
#[derive(Debug, Clone)]
pub struct MseEvaluator {
    kind: ParamKind,
    scale: f64,
    k: usize,
    m: usize,
    samples: Vec<SampleOperator>,
    weights: Vec<f64>,
    exec: Exec,
}

impl MseEvaluator {
    pub fn new(scenario: &Scenario, thetas: &[Theta]) -> Result<Self> {
        Self::from_parts(&scenario.sensing, scenario.weights.as_slice(), thetas, Exec::default())
    }

    pub fn from_parts(model: &SensingModel, weights: &[f64], thetas: &[Theta], exec: Exec) -> Result<Self> {
        if thetas.is_empty() {
            return Err(Error::InvalidInput("prior sample set is empty".into()));
        }
        let k = model.param_dim();
        if weights.len() != k || thetas.iter().any(|t| t.len() != k) {
            return Err(Error::DimensionMismatch("parameter dimension".into()));
        }
        // Linear maps have theta-free partials: one sample represents them all.
        let used = if model.map().is_linear() { &thetas[..1] } else { thetas };
        let samples = exec.map(used.len(), |s| build_operator(model, &used[s]));
        Ok(MseEvaluator {
            kind: model.kind(),
            scale: model.kind().fim_factor() / model.noise_var(),
            k,
            m: model.in_dim(),
            samples,
            weights: weights.to_vec(),
            exec,
        })
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn tx_dim(&self) -> usize {
        self.m
    }

    /// Number of distinct per-sample operators (1 for linear models).
    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    fn fim_of(&self, op: &SampleOperator, q: &CMat) -> CMat {
        let k = self.k;
        let mut j = CMat::zeros(k, k);
        match op {
            SampleOperator::Dense(blocks) => {
                let mut idx = 0;
                for i in 0..k {
                    for jj in i..k {
                        // tr(Q Phi_ij) with Phi_ij = D_i^H D_j.
                        let t = linalg::trace_of_product(q, &blocks[idx]);
                        let v = match self.kind {
                            ParamKind::Real => c(t.re),
                            ParamKind::Complex => t,
                        } * self.scale;
                        j[(i, jj)] = v;
                        j[(jj, i)] = v.conj();
                        idx += 1;
                    }
                }
            }
            SampleOperator::Diagonal(d) => {
                let p: Vec<f64> = (0..self.m).map(|r| q[(r, r)].re).collect();
                for i in 0..k {
                    for jj in i..k {
                        let t: Complex64 = (0..self.m).map(|r| d[(r, i)].conj() * d[(r, jj)] * p[r]).sum();
                        let v = match self.kind {
                            ParamKind::Real => c(t.re),
                            ParamKind::Complex => t,
                        } * self.scale;
                        j[(i, jj)] = v;
                        j[(jj, i)] = v.conj();
                    }
                }
            }
        }
        j
    }

    /// Per-sample Fisher information matrices at `q`.
    pub fn fims(&self, q: &CovMatrix) -> Vec<FimMatrix> {
        self.samples.iter().map(|op| FimMatrix { entries: self.fim_of(op, q.matrix()), kind: self.kind }).collect()
    }

    /// `tr(A J^-1)` and, optionally, `W = J^-1 A J^-1`; `None` when `J` is singular.
    fn weighted_inverse(&self, j: &CMat, want_w: bool) -> Option<(f64, Option<CMat>)> {
        if self.k == 1 {
            let v = j[(0, 0)].re;
            if !(v > 0.0) {
                return None;
            }
            let a = self.weights[0];
            return Some((a / v, want_w.then(|| CMat::from_element(1, 1, c(a / (v * v))))));
        }
        let (eig, vecs) = linalg::hermitian_eigen(j);
        if is_singular_spectrum(&eig) {
            return None;
        }
        let inv_vals: Vec<f64> = eig.iter().map(|v| 1.0 / v).collect();
        let inv = linalg::from_eigen(&inv_vals, &vecs);
        let value: f64 = (0..self.k).map(|i| self.weights[i] * inv[(i, i)].re).sum();
        let w = want_w.then(|| {
            let mut ainv = inv.clone();
            for (i, a) in self.weights.iter().enumerate() {
                ainv.row_mut(i).scale_mut(*a);
            }
            linalg::hermitian_part(&(&inv * ainv))
        });
        Some((value, w))
    }

    /// Adds `coef * sum_ij W_ji Phi_ij` for one sample into `acc` (Hermitian part taken later).
    fn accumulate_contraction(&self, op: &SampleOperator, w: &CMat, coef: f64, acc: &mut CMat) {
        let k = self.k;
        match op {
            SampleOperator::Dense(blocks) => {
                let mut idx = 0;
                for i in 0..k {
                    for jj in i..k {
                        let wji = w[(jj, i)];
                        // Off-diagonal pairs contribute W_ji Phi_ij + (W_ji Phi_ij)^H; the
                        // Hermitian part is taken once at the end, so add 2 W_ji Phi_ij.
                        let f = if i == jj { wji * coef } else { wji * (2.0 * coef) };
                        acc.zip_apply(&blocks[idx], |a, b| *a += b * f);
                        idx += 1;
                    }
                }
            }
            SampleOperator::Diagonal(d) => {
                for r in 0..self.m {
                    let mut t = Complex64::default();
                    for i in 0..k {
                        for jj in 0..k {
                            t += d[(r, jj)] * w[(jj, i)] * d[(r, i)].conj();
                        }
                    }
                    acc[(r, r)] += c(coef * t.re);
                }
            }
        }
    }

    fn chunks(&self) -> usize {
        self.samples.len().div_ceil(CHUNK)
    }

    fn chunk_range(&self, c: usize) -> std::ops::Range<usize> {
        c * CHUNK..((c + 1) * CHUNK).min(self.samples.len())
    }

    /// Sample-average ECRB `(1/S) sum_s tr(A J(theta_s|Q)^-1)`; `+inf` if any `J` is singular.
    pub fn ecrb(&self, q: &CovMatrix) -> f64 {
        self.ecrb_matrix(q.matrix())
    }

    pub(crate) fn ecrb_matrix(&self, q: &CMat) -> f64 {
        let partial = self.exec.map(self.chunks(), |ci| {
            let mut vals = Vec::with_capacity(CHUNK);
            for s in self.chunk_range(ci) {
                match self.weighted_inverse(&self.fim_of(&self.samples[s], q), false) {
                    Some((v, _)) => vals.push(v),
                    None => return f64::INFINITY,
                }
            }
            pairwise_sum(&vals)
        });
        pairwise_sum(&partial) / self.samples.len() as f64
    }

    /// Gradient of [`Self::ecrb`]; `SingularFim` if any sample's `J` is singular.
    pub fn ecrb_gradient(&self, q: &CovMatrix) -> Result<CMat> {
        self.ecrb_value_and_gradient(q.matrix()).map(|(_, g)| g)
    }

    pub(crate) fn ecrb_value_and_gradient(&self, q: &CMat) -> Result<(f64, CMat)> {
        let n = self.samples.len() as f64;
        let partial = self.exec.map(self.chunks(), |ci| {
            let mut acc = CMat::zeros(self.m, self.m);
            let mut vals = Vec::with_capacity(CHUNK);
            for s in self.chunk_range(ci) {
                let op = &self.samples[s];
                let (v, w) = self.weighted_inverse(&self.fim_of(op, q), true).ok_or(Error::SingularFim)?;
                vals.push(v);
                self.accumulate_contraction(op, &w.expect("requested"), 1.0, &mut acc);
            }
            Ok((pairwise_sum(&vals), acc))
        });
        let mut total = CMat::zeros(self.m, self.m);
        let mut vals = Vec::with_capacity(partial.len());
        for item in partial {
            let (v, acc) = item?;
            vals.push(v);
            total += acc;
        }
        let grad = linalg::hermitian_part(&total) * c(-self.scale / n);
        Ok((pairwise_sum(&vals) / n, grad))
    }

    /// Prior-averaged Fisher information `(1/S) sum_s J(theta_s | Q)`.
    pub fn mean_fim(&self, q: &CovMatrix) -> CMat {
        self.mean_fim_matrix(q.matrix())
    }

    fn mean_fim_matrix(&self, q: &CMat) -> CMat {
        let partial = self.exec.map(self.chunks(), |ci| {
            let mut acc = CMat::zeros(self.k, self.k);
            for s in self.chunk_range(ci) {
                acc += self.fim_of(&self.samples[s], q);
            }
            acc
        });
        let mut total = CMat::zeros(self.k, self.k);
        for p in partial {
            total += p;
        }
        total / c(self.samples.len() as f64)
    }

    /// BCRB objective `tr(A (E J)^-1)`; `+inf` when the mean FIM is singular.
    pub fn bcrb(&self, q: &CovMatrix) -> f64 {
        self.bcrb_matrix(q.matrix())
    }

    pub(crate) fn bcrb_matrix(&self, q: &CMat) -> f64 {
        match self.weighted_inverse(&self.mean_fim_matrix(q), false) {
            Some((v, _)) => v,
            None => f64::INFINITY,
        }
    }

    pub fn bcrb_gradient(&self, q: &CovMatrix) -> Result<CMat> {
        self.bcrb_value_and_gradient(q.matrix()).map(|(_, g)| g)
    }

    pub(crate) fn bcrb_value_and_gradient(&self, q: &CMat) -> Result<(f64, CMat)> {
        let (v, w) = self.weighted_inverse(&self.mean_fim_matrix(q), true).ok_or(Error::SingularFim)?;
        let w = w.expect("requested");
        let n = self.samples.len() as f64;
        let partial = self.exec.map(self.chunks(), |ci| {
            let mut acc = CMat::zeros(self.m, self.m);
            for s in self.chunk_range(ci) {
                self.accumulate_contraction(&self.samples[s], &w, 1.0, &mut acc);
            }
            acc
        });
        let mut total = CMat::zeros(self.m, self.m);
        for p in partial {
            total += p;
        }
        Ok((v, linalg::hermitian_part(&total) * c(-self.scale / n)))
    }

    pub fn value(&self, bound: MseBound, q: &CovMatrix) -> f64 {
        self.value_matrix(bound, q.matrix())
    }

    pub(crate) fn value_matrix(&self, bound: MseBound, q: &CMat) -> f64 {
        match bound {
            MseBound::Ecrb => self.ecrb_matrix(q),
            MseBound::Bcrb => self.bcrb_matrix(q),
        }
    }

    pub(crate) fn value_and_gradient(&self, bound: MseBound, q: &CMat) -> Result<(f64, CMat)> {
        match bound {
            MseBound::Ecrb => self.ecrb_value_and_gradient(q),
            MseBound::Bcrb => self.bcrb_value_and_gradient(q),
        }
    }
}

fn build_operator(model: &SensingModel, theta: &Theta) -> SampleOperator {
    let k = model.param_dim();
    let partials: Vec<Jacobian> = (0..k).map(|i| model.dg(theta, i)).collect();
    if partials.iter().all(|p| matches!(p, Jacobian::Diagonal(_))) {
        let m = model.in_dim();
        let mut d = CMat::zeros(m, k);
        for (i, p) in partials.iter().enumerate() {
            if let Jacobian::Diagonal(v) = p {
                d.column_mut(i).copy_from(v);
            }
        }
        return SampleOperator::Diagonal(d);
    }
    let dense: Vec<CMat> = partials.iter().map(Jacobian::to_dense).collect();
    let mut blocks = Vec::with_capacity(k * (k + 1) / 2);
    for i in 0..k {
        for j in i..k {
            blocks.push(dense[i].adjoint() * &dense[j]);
        }
    }
    SampleOperator::Dense(blocks)
}

fn evaluator(scenario: &Scenario, thetas: &[Theta], q: &CovMatrix) -> Result<MseEvaluator> {
    check_q(scenario.tx_dim(), q)?;
    for t in thetas {
        if let (Some((lo, hi)), true) = (scenario.prior.support(), scenario.sensing.kind() == ParamKind::Real) {
            if t.iter().any(|z| z.re < lo || z.re > hi) {
                return Err(Error::InvalidInput("prior sample outside the support".into()));
            }
        }
    }
    MseEvaluator::new(scenario, thetas)
}

/// Sample-average weighted ECRB at `q`; `+inf` when some sample's FIM is singular.
pub fn ecrb_objective(scenario: &Scenario, thetas: &[Theta], q: &CovMatrix) -> Result<f64> {
    Ok(evaluator(scenario, thetas, q)?.ecrb(q))
}

pub fn ecrb_gradient(scenario: &Scenario, thetas: &[Theta], q: &CovMatrix) -> Result<CMat> {
    evaluator(scenario, thetas, q)?.ecrb_gradient(q)
}

/// Weighted BCRB `tr(A (mean_s J(theta_s|Q))^-1)`; never exceeds the ECRB on the same samples.
pub fn bcrb_objective(scenario: &Scenario, thetas: &[Theta], q: &CovMatrix) -> Result<f64> {
    Ok(evaluator(scenario, thetas, q)?.bcrb(q))
}

pub fn bcrb_gradient(scenario: &Scenario, thetas: &[Theta], q: &CovMatrix) -> Result<CMat> {
    evaluator(scenario, thetas, q)?.bcrb_gradient(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frobenius, random_hermitian, random_psd};
    use crate::rng::{substream, Purpose};
    use std::f64::consts::LN_2;

    fn scalar_user() -> UserChannel {
        UserChannel::new(CMat::identity(1, 1), 1.0).unwrap()
    }

    #[test]
    fn mi_scalar_and_zero() {
        let user = scalar_user();
        assert_eq!(gaussian_mi(&user, &CovMatrix::zeros(1)).unwrap(), 0.0);
        let q = CovMatrix::scaled_identity(1, 1.0);
        assert!((gaussian_mi(&user, &q).unwrap() - LN_2).abs() < 1e-15);
        let g = mi_gradient(&user, &q).unwrap();
        assert!((g[(0, 0)].re - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mi_gradient_zero_channel() {
        let user = UserChannel::new(CMat::zeros(2, 3), 1.0).unwrap();
        let g = mi_gradient(&user, &CovMatrix::scaled_identity(3, 1.0)).unwrap();
        assert_eq!(frobenius(&g), 0.0);
    }

    #[test]
    fn mi_dimension_mismatch() {
        let user = scalar_user();
        assert!(matches!(gaussian_mi(&user, &CovMatrix::zeros(2)), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn mi_gradient_matches_finite_differences() {
        let mut rng = substream(21, Purpose::Test, 0);
        for _ in 0..10 {
            let h = linalg::complex_normal_mat(&mut rng, 3, 4);
            let user = UserChannel::new(h, 0.7).unwrap();
            let q = CovMatrix::new(random_psd(&mut rng, 4, 4)).unwrap();
            let g = mi_gradient(&user, &q).unwrap();
            let dir = random_hermitian(&mut rng, 4);
            let eps = 1e-5;
            let fp = mi_unchecked(&user, &(q.matrix() + &dir * c(eps)));
            let fm = mi_unchecked(&user, &(q.matrix() - &dir * c(eps)));
            let fd = (fp - fm) / (2.0 * eps);
            let an = linalg::inner(&g, &dir);
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "{fd} vs {an}");
        }
    }

    #[test]
    fn information_density_scalar_origin() {
        let user = scalar_user();
        let q = CovMatrix::scaled_identity(1, 1.0);
        let z = CVec::zeros(1);
        let v = information_density(&user, &q, &z, &z).unwrap();
        // ln((1/pi) / (1/(2 pi))) = ln 2
        assert!((v - LN_2).abs() < 1e-15);
    }

    #[test]
    fn information_density_zero_channel() {
        let mut rng = substream(22, Purpose::Test, 0);
        let user = UserChannel::new(CMat::zeros(2, 2), 1.3).unwrap();
        let q = CovMatrix::scaled_identity(2, 2.0);
        for _ in 0..10 {
            let x = linalg::complex_normal_vec(&mut rng, 2);
            let y = linalg::complex_normal_vec(&mut rng, 2);
            assert!(information_density(&user, &q, &x, &y).unwrap().abs() < 1e-14);
        }
    }
}
