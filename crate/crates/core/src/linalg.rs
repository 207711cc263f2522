//! Dense complex linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub const I: Complex64 = Complex64::new(0.0, 1.0);

pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// `(A + A^H) / 2`.
pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()) * c(0.5)
}

/// Largest absolute entry of `A - A^H`.
pub fn hermitian_defect(a: &CMat) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn all_finite(a: &CMat) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Eigendecomposition of the Hermitian part of `a`; eigenvalues ascending.
pub fn hermitian_eigen(a: &CMat) -> (Vec<f64>, CMat) {
    let n = a.nrows();
    let eig = hermitian_part(a).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMat::from_fn(n, n, |r, k| eig.eigenvectors[(r, order[k])]);
    (values, vectors)
}

pub fn eigenvalues(a: &CMat) -> Vec<f64> {
    hermitian_eigen(a).0
}

/// `V diag(values) V^H`, Hermitian by construction.
pub fn from_eigen(values: &[f64], vectors: &CMat) -> CMat {
    let mut scaled = vectors.clone();
    for (k, &v) in values.iter().enumerate() {
        scaled.column_mut(k).scale_mut(v);
    }
    hermitian_part(&(scaled * vectors.adjoint()))
}

/// Euclidean projection of `v` onto `{x >= 0, sum x <= cap}`.
pub fn project_capped_simplex(v: &[f64], cap: f64) -> Vec<f64> {
    let clipped: Vec<f64> = v.iter().map(|&x| x.max(0.0)).collect();
    if clipped.iter().sum::<f64>() <= cap {
        return clipped;
    }
    // Projection onto {x >= 0, sum x = cap}: x = max(v - tau, 0).
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (k, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let t = (cumsum - cap) / (k + 1) as f64;
        if s - t > 0.0 {
            tau = t;
        } else {
            break;
        }
    }
    let out: Vec<f64> = v.iter().map(|&x| (x - tau).max(0.0)).collect();
    // Rounding can leave the sum a few ulps above the cap.
    let total: f64 = out.iter().sum();
    if total > cap {
        let scale = cap / total;
        out.into_iter().map(|x| x * scale).collect()
    } else {
        out
    }
}

/// Real Frobenius inner product `Re tr(A^H B)`.
pub fn inner(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

pub fn frobenius(a: &CMat) -> f64 {
    inner(a, a).sqrt()
}

pub fn trace_re(a: &CMat) -> f64 {
    a.diagonal().iter().map(|z| z.re).sum()
}

/// `tr(A B)` without forming the product.
pub fn trace_of_product(a: &CMat, b: &CMat) -> Complex64 {
    let mut acc = Complex64::default();
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

/// Cholesky factor, rejecting factors whose diagonal is not real positive.
fn cholesky_pd(a: &CMat) -> Option<nalgebra::Cholesky<Complex64, nalgebra::Dyn>> {
    let chol = hermitian_part(a).cholesky()?;
    let ok = chol.l_dirty().diagonal().iter().all(|z| z.re > 0.0 && z.re.is_finite() && z.im.abs() <= 1e-12 * z.re);
    ok.then_some(chol)
}

/// `ln det(A)` for Hermitian positive definite `A`, `None` if not PD.
pub fn logdet_hpd(a: &CMat) -> Option<f64> {
    let chol = cholesky_pd(a)?;
    Some(2.0 * chol.l_dirty().diagonal().iter().map(|z| z.re.ln()).sum::<f64>())
}

/// Inverse of a Hermitian positive definite matrix, `None` if not PD.
pub fn inverse_hpd(a: &CMat) -> Option<CMat> {
    let chol = cholesky_pd(a)?;
    Some(hermitian_part(&chol.inverse()))
}

/// One draw of `CN(0, 1)`: independent real and imaginary parts of variance 1/2.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn complex_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CVec {
    CVec::from_fn(n, |_, _| complex_normal(rng))
}

pub fn complex_normal_mat<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    CMat::from_fn(rows, cols, |_, _| complex_normal(rng))
}

/// Random Hermitian matrix with i.i.d. `CN(0,1)` upper triangle.
pub fn random_hermitian<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CMat {
    hermitian_part(&complex_normal_mat(rng, n, n))
}

/// Random PSD matrix `X X^H` with `X` of size `n x rank`.
pub fn random_psd<R: Rng + ?Sized>(rng: &mut R, n: usize, rank: usize) -> CMat {
    let x = complex_normal_mat(rng, n, rank);
    hermitian_part(&(&x * x.adjoint()))
}

/// Square-root factor `S` with `S S^H = A` for PSD `A`.
///
/// Eigenvalues below `1e-14` times the largest are treated as zero, so a
/// low-rank `A` yields a factor confined to its range.
pub fn psd_sqrt_factor(a: &CMat) -> CMat {
    let (values, mut vectors) = hermitian_eigen(a);
    let floor = 1e-14 * values.last().copied().unwrap_or(0.0).max(0.0);
    for (k, v) in values.iter().enumerate() {
        let v = if *v > floor { v.sqrt() } else { 0.0 };
        vectors.column_mut(k).scale_mut(v);
    }
    vectors
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Purpose};

    #[test]
    fn capped_simplex_cases() {
        assert_eq!(project_capped_simplex(&[0.5, 0.5], 2.0), vec![0.5, 0.5]);
        assert_eq!(project_capped_simplex(&[4.0, 0.0], 2.0), vec![2.0, 0.0]);
        assert_eq!(project_capped_simplex(&[3.0, 1.0], 2.0), vec![2.0, 0.0]);
        assert_eq!(project_capped_simplex(&[-1.0, 0.5], 2.0), vec![0.0, 0.5]);
        let p = project_capped_simplex(&[1.0, 1.0, 1.0], 1.5);
        for x in p {
            assert!((x - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn eigen_reconstructs() {
        let mut rng = substream(1, Purpose::Test, 0);
        let a = random_hermitian(&mut rng, 6);
        let (vals, vecs) = hermitian_eigen(&a);
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let back = from_eigen(&vals, &vecs);
        assert!(frobenius(&(back - &a)) < 1e-12);
    }

    #[test]
    fn logdet_and_inverse() {
        let mut rng = substream(2, Purpose::Test, 0);
        let a = random_psd(&mut rng, 5, 8) + CMat::identity(5, 5);
        let vals = eigenvalues(&a);
        let expected: f64 = vals.iter().map(|v| v.ln()).sum();
        assert!((logdet_hpd(&a).unwrap() - expected).abs() < 1e-10);
        let inv = inverse_hpd(&a).unwrap();
        assert!(frobenius(&(&inv * &a - CMat::identity(5, 5))) < 1e-10);
        let minus = -CMat::identity(2, 2);
        assert!(logdet_hpd(&minus).is_none());
    }

    #[test]
    fn sqrt_factor_reproduces() {
        let mut rng = substream(3, Purpose::Test, 0);
        let a = random_psd(&mut rng, 4, 2);
        let s = psd_sqrt_factor(&a);
        assert!(frobenius(&(&s * s.adjoint() - &a)) < 1e-10);
    }
}
