//! Symmetric bilinear maps `B : R^n x R^n -> R^n`, inner products, and the
//! cancellation residual `<B(y,y), y>_G`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::sampling::{gaussian_vector, SampleSpec};
use crate::scalar::Real;

/// Dense symmetric bilinear map with `B(y,z)_k = sum_ij b[k][i][j] y_i z_j`.
///
/// Construction always symmetrizes in `(i, j)`, so `eval(y, z) == eval(z, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymBilinearMap<T> {
    n: usize,
    coeffs: Vec<T>,
}

impl<T: Real> SymBilinearMap<T> {
    /// Symmetrizes a flat `n^3` tensor stored in `[k][i][j]` order.
    pub fn symmetrize(n: usize, raw: &[T]) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        check_dim(n * n * n, raw.len())?;
        if let Some(pos) = raw.iter().position(|v| !v.is_finite()) {
            let (k, i, j) = (pos / (n * n), (pos / n) % n, pos % n);
            return Err(Error::InvalidInput(format!("B[{k}][{i}][{j}] is not finite")));
        }
        let half = T::lit(0.5);
        let mut coeffs = vec![T::zero(); n * n * n];
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    coeffs[(k * n + i) * n + j] = (raw[(k * n + i) * n + j] + raw[(k * n + j) * n + i]) * half;
                }
            }
        }
        Ok(Self { n, coeffs })
    }

    /// Symmetrizes a nested `[k][i][j]` tensor, validating that it is cubic.
    pub fn from_nested(raw: &[Vec<Vec<T>>]) -> Result<Self> {
        let n = raw.len();
        if n == 0 {
            return Err(Error::InvalidInput("B must be non-empty".into()));
        }
        let mut flat = Vec::with_capacity(n * n * n);
        for (k, plane) in raw.iter().enumerate() {
            if plane.len() != n {
                return Err(Error::InvalidInput(format!(
                    "B[{k}] has {} rows, expected {n}",
                    plane.len()
                )));
            }
            for (i, row) in plane.iter().enumerate() {
                if row.len() != n {
                    return Err(Error::InvalidInput(format!(
                        "B[{k}][{i}] has {} entries, expected {n}",
                        row.len()
                    )));
                }
                flat.extend_from_slice(row);
            }
        }
        Self::symmetrize(n, &flat)
    }

    /// Builds a map from a closure over `(k, i, j)`, then symmetrizes.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Result<Self> {
        let mut raw = Vec::with_capacity(n * n * n);
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    raw.push(f(k, i, j));
                }
            }
        }
        Self::symmetrize(n, &raw)
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            coeffs: vec![T::zero(); n * n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn coeff(&self, k: usize, i: usize, j: usize) -> T {
        self.coeffs[(k * self.n + i) * self.n + j]
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    /// Nested `[k][i][j]` copy of the coefficients.
    pub fn to_nested(&self) -> Vec<Vec<Vec<T>>> {
        let n = self.n;
        (0..n)
            .map(|k| (0..n).map(|i| (0..n).map(|j| self.coeff(k, i, j)).collect()).collect())
            .collect()
    }

    /// Evaluates `B(y, z)`.
    pub fn eval(&self, y: &DVector<T>, z: &DVector<T>) -> Result<DVector<T>> {
        check_dim(self.n, y.len())?;
        check_dim(self.n, z.len())?;
        Ok(self.apply(y, z))
    }

    /// `B(y, z)` without dimension checks; panics on mismatch.
    pub fn apply(&self, y: &DVector<T>, z: &DVector<T>) -> DVector<T> {
        let n = self.n;
        assert_eq!(y.len(), n, "B(y, z): y has wrong dimension");
        assert_eq!(z.len(), n, "B(y, z): z has wrong dimension");
        // Pairing (i, j) with (j, i) makes the result bitwise symmetric in (y, z).
        DVector::from_fn(n, |k, _| {
            let plane = &self.coeffs[k * n * n..(k + 1) * n * n];
            let mut acc = T::zero();
            for i in 0..n {
                acc += plane[i * n + i] * (y[i] * z[i]);
                for j in (i + 1)..n {
                    acc += plane[i * n + j] * (y[i] * z[j] + y[j] * z[i]);
                }
            }
            acc
        })
    }

    /// Right-hand side `B(y, y)` of the ODE.
    pub fn rhs(&self, y: &DVector<T>) -> DVector<T> {
        self.apply(y, y)
    }

    /// Matrix of the linear map `z -> B(y, z)`.
    pub fn partial(&self, y: &DVector<T>) -> DMatrix<T> {
        let n = self.n;
        DMatrix::from_fn(n, n, |k, j| {
            let mut acc = T::zero();
            for i in 0..n {
                acc += self.coeff(k, i, j) * y[i];
            }
            acc
        })
    }

    /// Maps every coefficient through `f`; the result is re-symmetrized.
    pub fn map_coeffs(&self, mut f: impl FnMut(usize, usize, usize, T) -> T) -> Self {
        let n = self.n;
        Self::from_fn(n, |k, i, j| f(k, i, j, self.coeff(k, i, j))).expect("mapped tensor keeps its shape")
    }

    /// Converts to another scalar type through `f64`.
    pub fn cast<U: Real>(&self) -> SymBilinearMap<U> {
        SymBilinearMap {
            n: self.n,
            coeffs: self.coeffs.iter().map(|c| U::lit(c.as_f64())).collect(),
        }
    }
}

/// Symmetric bilinear form `<y, z>_G = y^T G z`.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerProduct<T: Real> {
    gram: DMatrix<T>,
}

impl<T: Real> InnerProduct<T> {
    /// Wraps a symmetric matrix. The matrix is symmetrized after a tolerance
    /// check of `1e-9` relative to its largest entry.
    pub fn new(gram: DMatrix<T>) -> Result<Self> {
        if !gram.is_square() {
            return Err(Error::InvalidInput(format!(
                "Gram matrix must be square, got {}x{}",
                gram.nrows(),
                gram.ncols()
            )));
        }
        if gram.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("Gram matrix has non-finite entries".into()));
        }
        let scale = gram.amax().max(T::one());
        let asym = (&gram - gram.transpose()).amax();
        if asym > T::lit(1e-9) * scale {
            return Err(Error::InvalidInput(format!(
                "Gram matrix is not symmetric (defect {:e})",
                asym.as_f64()
            )));
        }
        let gram = (&gram + gram.transpose()) * T::lit(0.5);
        Ok(Self { gram })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            gram: DMatrix::identity(n, n),
        }
    }

    pub fn diagonal(diag: &[T]) -> Self {
        Self {
            gram: DMatrix::from_diagonal(&DVector::from_column_slice(diag)),
        }
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    pub fn gram(&self) -> &DMatrix<T> {
        &self.gram
    }

    pub fn inner(&self, y: &DVector<T>, z: &DVector<T>) -> T {
        (y.transpose() * &self.gram * z)[(0, 0)]
    }

    pub fn min_eigenvalue(&self) -> T {
        self.gram
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(T::max_value().unwrap(), |a, b| a.min(b))
    }

    /// Lower-triangular `L` with `G = L L^T`, if `G` is positive definite.
    pub fn cholesky(&self) -> Option<DMatrix<T>> {
        self.gram.clone().cholesky().map(|c| c.l())
    }

    pub fn is_positive_definite(&self) -> bool {
        self.cholesky().is_some() && self.min_eigenvalue() > T::zero()
    }
}

/// `<B(y1, y2), y3>_G`.
pub fn trilinear<T: Real>(
    b: &SymBilinearMap<T>,
    g: &InnerProduct<T>,
    y1: &DVector<T>,
    y2: &DVector<T>,
    y3: &DVector<T>,
) -> Result<T> {
    check_dim(b.dim(), g.dim())?;
    check_dim(b.dim(), y3.len())?;
    let byz = b.eval(y1, y2)?;
    Ok(g.inner(&byz, y3))
}

/// Maximum over seeded Gaussian samples `y` of
/// `|<B(y,y), y>_G| / (1 + |y|^3)`.
pub fn cancellation_residual<T: Real>(b: &SymBilinearMap<T>, g: &InnerProduct<T>, samples: SampleSpec) -> Result<T> {
    check_dim(b.dim(), g.dim())?;
    let mut rng = samples.rng();
    let mut worst = T::zero();
    for _ in 0..samples.count {
        let y = gaussian_vector::<T, _>(&mut rng, b.dim());
        let r = g.inner(&b.rhs(&y), &y).abs();
        let norm = y.norm();
        worst = worst.max(r / (T::one() + norm * norm * norm));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::rng_from_seed;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn idx(n: usize, k: usize, i: usize, j: usize) -> usize {
        (k * n + i) * n + j
    }

    fn rotor_raw(alpha: f64) -> Vec<f64> {
        // dy1 = a y2 y3, dy2 = -a y1 y3, stored unsymmetrized on one slot.
        let mut raw = vec![0.0; 27];
        raw[idx(3, 0, 1, 2)] = alpha;
        raw[idx(3, 1, 0, 2)] = -alpha;
        raw
    }

    #[test]
    fn symmetrize_averages_slots() {
        let mut raw = vec![0.0; 27];
        raw[idx(3, 0, 1, 2)] = 1.0;
        let b = SymBilinearMap::symmetrize(3, &raw).unwrap();
        assert_eq!(b.coeff(0, 1, 2), 0.5);
        assert_eq!(b.coeff(0, 2, 1), 0.5);
    }

    #[test]
    fn symmetrize_is_idempotent() {
        let b = SymBilinearMap::symmetrize(3, &rotor_raw(1.0)).unwrap();
        let again = SymBilinearMap::symmetrize(3, b.coeffs()).unwrap();
        assert_eq!(b, again);
    }

    #[test]
    fn symmetrize_rejects_wrong_length() {
        let err = SymBilinearMap::<f64>::symmetrize(3, &[0.0; 26]).unwrap_err();
        assert_eq!(
            err,
            Error::DimensionMismatch {
                expected: 27,
                found: 26
            }
        );
        assert!(SymBilinearMap::<f64>::symmetrize(2, &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, f64::NAN]).is_err());
    }

    #[test]
    fn rotor_polarized_form() {
        let b = SymBilinearMap::symmetrize(3, &rotor_raw(1.0)).unwrap();
        let (a, c) = (v(&[1.0, -2.0, 0.5]), v(&[3.0, 0.25, -1.0]));
        let out = b.eval(&a, &c).unwrap();
        let expect = v(&[
            (a[1] * c[2] + a[2] * c[1]) / 2.0,
            -(a[0] * c[2] + a[2] * c[0]) / 2.0,
            0.0,
        ]);
        assert!((out - expect).amax() < 1e-15);
    }

    #[test]
    fn rotor_eval_example() {
        let b = SymBilinearMap::symmetrize(3, &rotor_raw(1.0)).unwrap();
        let y = v(&[1.0, 2.0, 3.0]);
        assert_eq!(b.eval(&y, &y).unwrap(), v(&[6.0, -3.0, 0.0]));
        assert_eq!(b.eval(&DVector::zeros(3), &y).unwrap(), DVector::zeros(3));
    }

    #[test]
    fn pump_eval_example() {
        // dy1 = -y1 y2, dy2 = y1^2
        let mut raw = vec![0.0; 8];
        raw[idx(2, 0, 0, 1)] = -1.0;
        raw[idx(2, 1, 0, 0)] = 1.0;
        let b = SymBilinearMap::symmetrize(2, &raw).unwrap();
        let y = v(&[0.7, -1.3]);
        let out = b.rhs(&y);
        assert!((out - v(&[-0.7 * -1.3, 0.49])).amax() < 1e-15);
    }

    #[test]
    fn eval_dimension_mismatch() {
        let b = SymBilinearMap::<f64>::zeros(3);
        assert!(matches!(
            b.eval(&v(&[1.0, 2.0]), &v(&[1.0, 2.0, 3.0])),
            Err(Error::DimensionMismatch { expected: 3, found: 2 })
        ));
    }

    #[test]
    fn trilinear_examples() {
        let b = SymBilinearMap::symmetrize(3, &rotor_raw(1.0)).unwrap();
        let id = InnerProduct::identity(3);
        let y = v(&[1.0, 2.0, 3.0]);
        assert_eq!(trilinear(&b, &id, &y, &y, &y).unwrap(), 0.0);

        // B(y,z) = (<y,e1> z + <z,e1> y)/2 violates the cancellation.
        let bad = SymBilinearMap::from_fn(3, |k, i, j| {
            let mut c = 0.0;
            if i == 0 && j == k {
                c += 0.5;
            }
            if j == 0 && i == k {
                c += 0.5;
            }
            c
        })
        .unwrap();
        let e1 = v(&[1.0, 0.0, 0.0]);
        assert_eq!(trilinear(&bad, &id, &e1, &e1, &e1).unwrap(), 1.0);
        assert!(cancellation_residual(&bad, &id, SampleSpec::default()).unwrap() >= 0.1);
    }

    #[test]
    fn rigid_body_trilinear_with_inertia_metric() {
        // omega' = ((I2-I3)/I1 w2 w3, (I3-I1)/I2 w3 w1, (I1-I2)/I3 w1 w2), I = (1,2,3)
        let inertia = [1.0, 2.0, 3.0];
        let mut raw = vec![0.0; 27];
        for i in 0..3 {
            let (j, k) = ((i + 1) % 3, (i + 2) % 3);
            raw[(i * 3 + j) * 3 + k] = (inertia[j] - inertia[k]) / inertia[i];
        }
        let b = SymBilinearMap::symmetrize(3, &raw).unwrap();
        let g = InnerProduct::diagonal(&inertia);
        let ones = v(&[1.0, 1.0, 1.0]);
        assert!((b.rhs(&ones) - v(&[-1.0, 1.0, -1.0 / 3.0])).amax() < 1e-15);
        assert!(trilinear(&b, &g, &ones, &ones, &ones).unwrap().abs() < 1e-15);
    }

    #[test]
    fn cancellation_residual_rotor_amplifier() {
        let id3 = InnerProduct::identity(3);
        let rotor = SymBilinearMap::symmetrize(3, &rotor_raw(1.0)).unwrap();
        for seed in 0..5 {
            let r = cancellation_residual(&rotor, &id3, SampleSpec::new(seed, 100)).unwrap();
            assert!(r < 1e-12);
        }
        let mut raw = vec![0.0; 8];
        raw[idx(2, 0, 1, 1)] = -1.0;
        raw[idx(2, 1, 0, 1)] = 1.0;
        let amp = SymBilinearMap::symmetrize(2, &raw).unwrap();
        let r = cancellation_residual(&amp, &InnerProduct::identity(2), SampleSpec::default()).unwrap();
        assert!(r < 1e-12);
    }

    #[test]
    fn polarization_identity_holds_for_conservative_maps() {
        let rotor = SymBilinearMap::symmetrize(3, &rotor_raw(1.7)).unwrap();
        let id = InnerProduct::identity(3);
        let mut rng = rng_from_seed(11);
        for _ in 0..100 {
            let y = gaussian_vector::<f64, _>(&mut rng, 3);
            let z = gaussian_vector::<f64, _>(&mut rng, 3);
            let lhs = id.inner(&rotor.rhs(&y), &z) + 2.0 * id.inner(&rotor.apply(&y, &z), &y);
            let scale = 1.0 + y.norm_squared() * z.norm();
            assert!(lhs.abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn inner_product_validation() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(InnerProduct::new(asym).is_err());
        let indefinite = InnerProduct::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).unwrap();
        assert!(!indefinite.is_positive_definite());
        assert!(InnerProduct::<f64>::identity(4).is_positive_definite());
    }

    #[test]
    fn works_in_single_precision() {
        let b = SymBilinearMap::<f32>::symmetrize(3, &rotor_raw(1.0).iter().map(|&x| x as f32).collect::<Vec<_>>())
            .unwrap();
        let y = DVector::from_column_slice(&[1.0f32, 2.0, 3.0]);
        assert_eq!(b.rhs(&y), DVector::from_column_slice(&[6.0f32, -3.0, 0.0]));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn tensor(n: usize) -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(-2.0f64..2.0, n * n * n)
        }

        proptest! {
            #[test]
            fn eval_is_symmetric_and_bilinear(
                raw in tensor(3),
                y in proptest::collection::vec(-3.0f64..3.0, 3),
                z in proptest::collection::vec(-3.0f64..3.0, 3),
                w in proptest::collection::vec(-3.0f64..3.0, 3),
                a in -2.0f64..2.0,
                c in -2.0f64..2.0,
            ) {
                let b = SymBilinearMap::symmetrize(3, &raw).unwrap();
                let (y, z, w) = (v(&y), v(&z), v(&w));
                prop_assert_eq!(b.apply(&y, &z), b.apply(&z, &y));
                let lhs = b.apply(&(&y * a + &z * c), &w);
                let rhs = b.apply(&y, &w) * a + b.apply(&z, &w) * c;
                let scale = 1.0 + lhs.amax().max(rhs.amax()) + (y.amax() + z.amax()) * w.amax() * 20.0;
                prop_assert!((lhs - rhs).amax() <= 1e-14 * scale);
            }

            #[test]
            fn symmetrization_preserves_diagonal(raw in tensor(2), y in proptest::collection::vec(-3.0f64..3.0, 2)) {
                let y = v(&y);
                let b = SymBilinearMap::symmetrize(2, &raw).unwrap();
                let direct = DVector::from_fn(2, |k, _| {
                    let mut acc = 0.0;
                    for i in 0..2 { for j in 0..2 { acc += raw[(k * 2 + i) * 2 + j] * y[i] * y[j]; } }
                    acc
                });
                prop_assert!((b.rhs(&y) - direct).amax() < 1e-12);
            }
        }
    }
}
