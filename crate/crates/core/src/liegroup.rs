//! SO(n) machinery: the skew-matrix Lie algebra, the exponential map,
//! exponential charts, Haar sampling and right-translated tangent frames.
//!
//! The canonical basis of `so(n)` is `E_ij = e_i e_j^T - e_j e_i^T` for
//! `i > j`, ordered lexicographically in `(i, j)`. The basis is orthogonal
//! but not normalized: every element has Frobenius norm `sqrt(2)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::sampling::gaussian_matrix;
use crate::scalar::Real;

/// Largest chart coordinate norm accepted by [`Chart::point`].
pub const CHART_RADIUS: f64 = 1.0;

/// Dimension `n(n-1)/2` of `so(n)`.
pub fn so_dim(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Canonical basis index pairs `(i, j)`, `i > j`, lexicographic.
pub fn skew_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(so_dim(n));
    for i in 0..n {
        for j in 0..i {
            pairs.push((i, j));
        }
    }
    pairs
}

fn ortho_tol<T: Real>(n: usize) -> T {
    T::lit(1e-12).max(T::default_epsilon() * T::lit(100.0 * n as f64))
}

fn ortho_fail_tol<T: Real>(n: usize) -> T {
    T::lit(1e-9).max(T::default_epsilon() * T::lit(1e4 * n as f64))
}

/// Element of `so(n)` stored by its canonical-basis coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewMat<T: Real> {
    n: usize,
    coeffs: DVector<T>,
}

impl<T: Real> SkewMat<T> {
    pub fn from_coeffs(n: usize, coeffs: DVector<T>) -> Result<Self> {
        check_dim(so_dim(n), coeffs.len())?;
        Ok(Self { n, coeffs })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            coeffs: DVector::zeros(so_dim(n)),
        }
    }

    /// `k`-th canonical basis element.
    pub fn basis(n: usize, k: usize) -> Self {
        let mut coeffs = DVector::zeros(so_dim(n));
        coeffs[k] = T::one();
        Self { n, coeffs }
    }

    /// Reads the strictly lower triangle; rejects matrices that are not skew
    /// to `1e-12` relative.
    pub fn from_matrix(m: &DMatrix<T>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::InvalidInput("skew matrix must be square".into()));
        }
        let defect = (m + m.transpose()).amax();
        if defect > T::lit(1e-12) * m.amax().max(T::one()) {
            return Err(Error::InvalidInput(format!(
                "matrix is not skew (defect {:e})",
                defect.as_f64()
            )));
        }
        Ok(Self::skew_part(m))
    }

    /// Coefficients of the skew part `(m - m^T) / 2`.
    pub fn skew_part(m: &DMatrix<T>) -> Self {
        let n = m.nrows();
        let half = T::lit(0.5);
        let coeffs = DVector::from_iterator(
            so_dim(n),
            skew_pairs(n).into_iter().map(|(i, j)| (m[(i, j)] - m[(j, i)]) * half),
        );
        Self { n, coeffs }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn coeffs(&self) -> &DVector<T> {
        &self.coeffs
    }

    pub fn to_matrix(&self) -> DMatrix<T> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (k, (i, j)) in skew_pairs(self.n).into_iter().enumerate() {
            m[(i, j)] = self.coeffs[k];
            m[(j, i)] = -self.coeffs[k];
        }
        m
    }
}

/// Special orthogonal matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthMat<T: Real> {
    m: DMatrix<T>,
}

impl<T: Real> OrthMat<T> {
    /// Validates `|Q^T Q - I|_F < 1e-12` and `det Q > 0`.
    pub fn new(m: DMatrix<T>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::InvalidInput("orthogonal matrix must be square".into()));
        }
        let defect = orthogonality_defect(&m);
        if !(defect < ortho_tol::<T>(m.nrows())) {
            return Err(Error::InvalidInput(format!(
                "matrix is not orthogonal (defect {:e})",
                defect.as_f64()
            )));
        }
        if m.determinant() <= T::zero() {
            return Err(Error::InvalidInput("orthogonal matrix has det <= 0".into()));
        }
        Ok(Self { m })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            m: DMatrix::identity(n, n),
        }
    }

    pub(crate) fn from_matrix_unchecked(m: DMatrix<T>) -> Self {
        Self { m }
    }

    pub fn n(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.m
    }

    pub fn defect(&self) -> T {
        orthogonality_defect(&self.m)
    }

    pub fn mul(&self, other: &OrthMat<T>) -> OrthMat<T> {
        OrthMat { m: &self.m * &other.m }
    }

    pub fn transpose(&self) -> OrthMat<T> {
        OrthMat { m: self.m.transpose() }
    }
}

/// `|Q^T Q - I|_F`.
pub fn orthogonality_defect<T: Real>(q: &DMatrix<T>) -> T {
    let n = q.nrows();
    (q.transpose() * q - DMatrix::<T>::identity(n, n)).norm()
}

/// Closest orthogonal matrix in Frobenius norm (polar factor).
fn polar_projection<T: Real>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    let svd = m.clone().svd(true, true);
    match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => Ok(u * v_t),
        _ => Err(Error::Numerical("SVD failed during re-orthonormalization".into())),
    }
}

/// Matrix exponential of a skew matrix.
///
/// Results with orthogonality defect above `1e-12` are projected back onto
/// SO(n); a defect above `1e-9` is reported as a numerical failure.
pub fn expm<T: Real>(a: &SkewMat<T>) -> Result<OrthMat<T>> {
    expm_matrix(&a.to_matrix())
}

pub(crate) fn expm_matrix<T: Real>(a: &DMatrix<T>) -> Result<OrthMat<T>> {
    let n = a.nrows();
    let e = a.clone().exp();
    let defect = orthogonality_defect(&e);
    if !defect.is_finite() || defect > ortho_fail_tol::<T>(n) {
        return Err(Error::Numerical(format!(
            "exponential lost orthogonality (defect {:e})",
            defect.as_f64()
        )));
    }
    if defect >= ortho_tol::<T>(n) {
        return Ok(OrthMat::from_matrix_unchecked(polar_projection(&e)?));
    }
    Ok(OrthMat::from_matrix_unchecked(e))
}

/// Haar-distributed rotation: QR of a Gaussian matrix with `diag(R) > 0`,
/// then one column flipped if needed to land in SO(n).
pub fn haar_sample<T: Real, R: Rng + ?Sized>(rng: &mut R, n: usize) -> OrthMat<T> {
    assert!(n >= 2, "haar_sample requires n >= 2");
    loop {
        let g = gaussian_matrix::<T, _>(rng, n, n);
        let qr = g.qr();
        let r = qr.r();
        if (0..n).any(|i| r[(i, i)] == T::zero()) {
            continue;
        }
        let mut q = qr.q();
        for j in 0..n {
            if r[(j, j)] < T::zero() {
                q.column_mut(j).neg_mut();
            }
        }
        if q.determinant() < T::zero() {
            q.column_mut(0).neg_mut();
        }
        return OrthMat::from_matrix_unchecked(q);
    }
}

/// Right-translated frame `{E_k Q}` of `T_Q SO(n)`.
pub fn tangent_basis<T: Real>(q: &OrthMat<T>) -> Vec<DMatrix<T>> {
    let n = q.n();
    (0..so_dim(n))
        .map(|k| SkewMat::<T>::basis(n, k).to_matrix() * q.matrix())
        .collect()
}

/// Matrix of `ad_A = [A, .]` on the canonical basis.
pub fn ad_matrix<T: Real>(a: &SkewMat<T>) -> DMatrix<T> {
    let n = a.n();
    let m = so_dim(n);
    let am = a.to_matrix();
    let mut ad = DMatrix::zeros(m, m);
    for k in 0..m {
        let e = SkewMat::<T>::basis(n, k).to_matrix();
        let bracket = &am * &e - &e * &am;
        ad.set_column(k, SkewMat::skew_part(&bracket).coeffs());
    }
    ad
}

/// `(exp(X) - I) / X` as a power series.
fn phi_series<T: Real>(x: &DMatrix<T>) -> DMatrix<T> {
    let m = x.nrows();
    let mut sum = DMatrix::<T>::identity(m, m);
    let mut term = DMatrix::<T>::identity(m, m);
    for k in 1..80 {
        term = &term * x / T::lit((k + 1) as f64);
        sum += &term;
        if term.amax() <= T::default_epsilon() * T::lit(1e-3) {
            break;
        }
    }
    sum
}

/// Sinc with a Taylor branch near zero.
fn sinc<T: Real>(x: T) -> T {
    if x.abs() < T::lit(1e-4) {
        let x2 = x * x;
        T::one() - x2 / T::lit(6.0) + x2 * x2 / T::lit(120.0)
    } else {
        x.sin() / x
    }
}

/// Exponential chart `a -> exp(A(a)) Q0` around a base rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart<T: Real> {
    base: OrthMat<T>,
}

impl<T: Real> Chart<T> {
    pub fn new(base: OrthMat<T>) -> Self {
        Self { base }
    }

    pub fn base(&self) -> &OrthMat<T> {
        &self.base
    }

    pub fn n(&self) -> usize {
        self.base.n()
    }

    pub fn dim(&self) -> usize {
        so_dim(self.n())
    }

    pub(crate) fn check_radius(&self, a: &DVector<T>) -> Result<()> {
        check_dim(self.dim(), a.len())?;
        if a.norm() > T::lit(CHART_RADIUS) {
            return Err(Error::InvalidInput(format!(
                "chart coordinates have norm {:e} > {CHART_RADIUS}",
                a.norm().as_f64()
            )));
        }
        Ok(())
    }

    /// Rotation at chart coordinates `a`, `|a| <= 1`.
    pub fn point(&self, a: &DVector<T>) -> Result<OrthMat<T>> {
        self.check_radius(a)?;
        self.point_unchecked(a)
    }

    pub(crate) fn point_unchecked(&self, a: &DVector<T>) -> Result<OrthMat<T>> {
        let skew = SkewMat::from_coeffs(self.n(), a.clone())?;
        Ok(expm(&skew)?.mul(&self.base))
    }

    /// Right-trivialized chart Jacobian `J(a) = (exp(ad_A) - 1) / ad_A`.
    ///
    /// Column `k` holds the canonical coefficients of `W_k` where
    /// `dQ/da_k = W_k Q`.
    pub fn jacobian(&self, a: &DVector<T>) -> DMatrix<T> {
        let skew = SkewMat::from_coeffs(self.n(), a.clone()).expect("chart coordinate dimension");
        phi_series(&ad_matrix(&skew))
    }

    /// Density of the Haar measure in chart coordinates, normalized to 1 at
    /// the origin: `det J(a) = prod sinc(theta_j / 2)` over the eigenvalues
    /// `theta_j^2` of `-ad_A^2`.
    pub fn haar_density(&self, a: &DVector<T>) -> T {
        let skew = SkewMat::from_coeffs(self.n(), a.clone()).expect("chart coordinate dimension");
        let ad = ad_matrix(&skew);
        let sq = ad.transpose() * &ad;
        let sq = (&sq + sq.transpose()) * T::lit(0.5);
        sq.symmetric_eigen()
            .eigenvalues
            .iter()
            .map(|&mu| sinc(mu.max(T::zero()).sqrt() * T::lit(0.5)))
            .fold(T::one(), |acc, f| acc * f)
    }

    /// Inverse chart by Newton iteration on `exp(A(a)) = Q Q0^T`.
    pub fn coords_of(&self, q: &OrthMat<T>) -> Result<DVector<T>> {
        let n = self.n();
        let target = q.matrix() * self.base.matrix().transpose();
        let mut a = SkewMat::skew_part(&target).coeffs().clone();
        for _ in 0..60 {
            let current = expm(&SkewMat::from_coeffs(n, a.clone())?)?;
            let err = &target * current.matrix().transpose();
            let rhs = SkewMat::skew_part(&err).coeffs().clone();
            let step = self
                .jacobian(&a)
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Numerical("singular chart Jacobian".into()))?;
            a += &step;
            if step.amax() <= T::default_epsilon() * T::lit(10.0) * (T::one() + a.amax()) {
                return Ok(a);
            }
        }
        Err(Error::Numerical("inverse chart did not converge".into()))
    }
}
