//! Search for a positive-definite `G` with `<B(y,y), y>_G = 0` for all `y`,
//! and the change of basis that makes such a `G` Euclidean.
//!
//! The cancellation condition is linear in `G`: the cubic polynomial
//! `y -> sum_{l,k} G_lk B(y,y)_l y_k` must vanish identically, which gives one
//! linear equation per monomial `y_i y_j y_k` (`i <= j <= k`) in the
//! `n(n+1)/2` free entries of `G`. The admissible `G` form the null space of
//! that system; a positive-definite element is found by projected ascent on
//! the smallest eigenvalue. The search is a heuristic: failing to find a
//! certificate does not prove that none exists. The only infeasibility proof
//! offered is a parallel witness (see [`parallel_witness`]).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::quadode::{cancellation_residual, InnerProduct, SymBilinearMap};
use crate::sampling::{derive_seed, gaussian_vector, rng_from_seed, SampleSpec};
use crate::scalar::Real;

/// Number of free entries of a symmetric `n x n` matrix.
pub fn vech_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Position of `G_ij` (either order) in the half-vectorization.
pub fn vech_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    // Row-major upper triangle.
    i * n - i * (i + 1) / 2 + j
}

pub fn vech<T: Real>(g: &DMatrix<T>) -> DVector<T> {
    let n = g.nrows();
    let mut v = DVector::zeros(vech_len(n));
    for i in 0..n {
        for j in i..n {
            v[vech_index(n, i, j)] = g[(i, j)];
        }
    }
    v
}

pub fn unvech<T: Real>(n: usize, v: &DVector<T>) -> DMatrix<T> {
    DMatrix::from_fn(n, n, |i, j| v[vech_index(n, i, j)])
}

/// Distinct orderings of a multiset of three indices.
fn distinct_permutations(m: [usize; 3]) -> Vec<[usize; 3]> {
    let [a, b, c] = m;
    let mut perms = vec![[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]];
    perms.sort_unstable();
    perms.dedup();
    perms
}

/// Linear constraints on `vech(G)` equivalent to `<B(y,y), y>_G = 0`.
#[derive(Debug, Clone)]
pub struct ConstraintSystem<T: Real> {
    n: usize,
    monomials: Vec<[usize; 3]>,
    matrix: DMatrix<T>,
}

/// Orthonormal (in `vech` coordinates) basis of the admissible `G`.
#[derive(Debug, Clone)]
pub struct NullSpace<T: Real> {
    pub basis: Vec<DMatrix<T>>,
    pub singular_values: Vec<T>,
}

impl<T: Real> ConstraintSystem<T> {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Monomial `y_i y_j y_k` (sorted indices) of each row.
    pub fn monomials(&self) -> &[[usize; 3]] {
        &self.monomials
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    /// Constraint values `A vech(G)`.
    pub fn apply(&self, g: &DMatrix<T>) -> DVector<T> {
        &self.matrix * vech(g)
    }

    /// Largest constraint violation `max |A vech(G)|`.
    pub fn residual(&self, g: &DMatrix<T>) -> T {
        if self.is_empty() {
            return T::zero();
        }
        self.apply(g).amax()
    }

    /// Null-space basis by SVD; singular values below
    /// `rel_cutoff * sigma_max` count as zero.
    pub fn null_space(&self, rel_cutoff: T) -> Result<NullSpace<T>> {
        let n = self.n;
        let unknowns = vech_len(n);
        if self.is_empty() || self.matrix.amax() == T::zero() {
            let basis = (0..unknowns)
                .map(|k| {
                    let mut v = DVector::zeros(unknowns);
                    v[k] = T::one();
                    unvech(n, &v)
                })
                .collect();
            return Ok(NullSpace {
                basis,
                singular_values: vec![T::zero(); unknowns],
            });
        }
        // Pad with zero rows so the SVD returns a full right basis.
        let rows = self.matrix.nrows().max(unknowns);
        let mut padded = DMatrix::zeros(rows, unknowns);
        padded
            .view_mut((0, 0), (self.matrix.nrows(), unknowns))
            .copy_from(&self.matrix);
        let svd = padded.svd(false, true);
        let v_t = svd
            .v_t
            .ok_or_else(|| Error::Numerical("SVD of constraint system failed".into()))?;
        let sigma_max = svd.singular_values.max();
        let cutoff = rel_cutoff * sigma_max;
        let mut basis = Vec::new();
        for (k, &s) in svd.singular_values.iter().enumerate() {
            if s <= cutoff {
                basis.push(unvech(n, &v_t.row(k).transpose()));
            }
        }
        Ok(NullSpace {
            basis,
            singular_values: svd.singular_values.iter().copied().collect(),
        })
    }
}

/// Assembles the constraint system of `B`. Rows that vanish identically are
/// dropped, so `B = 0` yields an empty system.
pub fn constraint_system<T: Real>(b: &SymBilinearMap<T>) -> ConstraintSystem<T> {
    let n = b.dim();
    let unknowns = vech_len(n);
    let mut monomials = Vec::new();
    let mut rows: Vec<Vec<T>> = Vec::new();
    for i in 0..n {
        for j in i..n {
            for k in j..n {
                let mut row = vec![T::zero(); unknowns];
                // coefficient of y_p y_q y_r in sum_l G_lr b[l][p][q] y_p y_q y_r
                for [p, q, r] in distinct_permutations([i, j, k]) {
                    for l in 0..n {
                        row[vech_index(n, l, r)] += b.coeff(l, p, q);
                    }
                }
                if row.iter().any(|v| *v != T::zero()) {
                    monomials.push([i, j, k]);
                    rows.push(row);
                }
            }
        }
    }
    let matrix = DMatrix::from_fn(rows.len(), unknowns, |r, c| rows[r][c]);
    ConstraintSystem { n, monomials, matrix }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertificateStatus {
    Found,
    NotFound,
}

/// Which search stage produced a certificate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertificateSource {
    /// The caller-supplied candidate with this index.
    Candidate(usize),
    Identity,
    Search,
}

/// Nonzero `y` with `B(y,y) = lambda y`, `lambda != 0`.
///
/// Such a vector rules out every inner product, since
/// `<B(y,y), y>_G = lambda <y, y>_G != 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelWitness<T: Real> {
    /// Unit vector.
    pub y: DVector<T>,
    pub lambda: T,
    /// `|B(y,y) - lambda y|`.
    pub residual: T,
}

#[derive(Debug, Clone)]
pub struct CertificateResult<T: Real> {
    pub status: CertificateStatus,
    /// Trace-normalized certificate, `trace(G) = n`.
    pub gram: Option<InnerProduct<T>>,
    /// Lower-triangular `L` with `G = L L^T`.
    pub cholesky: Option<DMatrix<T>>,
    /// `L^T`, mapping original coordinates `y` to Euclidean ones `y' = L^T y`.
    pub basis_change: Option<DMatrix<T>>,
    pub min_eigenvalue: Option<T>,
    pub null_space_dim: usize,
    pub source: Option<CertificateSource>,
    pub witness: Option<ParallelWitness<T>>,
}

impl<T: Real> CertificateResult<T> {
    pub fn is_found(&self) -> bool {
        self.status == CertificateStatus::Found
    }
}

#[derive(Debug, Clone)]
pub struct CertificateOptions<T: Real> {
    /// Relative singular-value cutoff for the null space.
    pub rank_cutoff: T,
    /// Minimum eigenvalue required after trace normalization.
    pub pd_threshold: T,
    /// Required cancellation residual of an accepted certificate.
    pub residual_tol: T,
    pub restarts: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Inner products tested before the identity and the null-space search.
    pub candidates: Vec<InnerProduct<T>>,
    /// Random starts for the parallel-witness search on failure.
    pub witness_samples: usize,
}

impl<T: Real> Default for CertificateOptions<T> {
    fn default() -> Self {
        Self {
            rank_cutoff: T::lit(1e-10),
            pd_threshold: T::lit(1e-8),
            residual_tol: T::lit(1e-10),
            restarts: 8,
            iterations: 400,
            seed: 0,
            candidates: Vec::new(),
            witness_samples: 32,
        }
    }
}

impl<T: Real> CertificateOptions<T> {
    pub fn with_candidate(mut self, g: InnerProduct<T>) -> Self {
        self.candidates.push(g);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

fn min_eig<T: Real>(g: &DMatrix<T>) -> T {
    g.clone().symmetric_eigen().eigenvalues.min()
}

/// Trace-normalizes `g` and checks it against the acceptance rules.
fn accept<T: Real>(
    b: &SymBilinearMap<T>,
    system: &ConstraintSystem<T>,
    g: &DMatrix<T>,
    opts: &CertificateOptions<T>,
) -> Option<(InnerProduct<T>, DMatrix<T>, T)> {
    let n = b.dim();
    if g.nrows() != n || g.ncols() != n {
        return None;
    }
    let trace = g.trace();
    if !(trace > T::zero()) {
        return None;
    }
    let g = g * (T::lit(n as f64) / trace);
    let g = (&g + g.transpose()) * T::lit(0.5);
    let lam = min_eig(&g);
    if !(lam > opts.pd_threshold) {
        return None;
    }
    let scale = system.matrix().amax().max(T::one()) * g.amax().max(T::one());
    if system.residual(&g) > opts.residual_tol * scale {
        return None;
    }
    let ip = InnerProduct::new(g).ok()?;
    let samples = SampleSpec::new(derive_seed(opts.seed, 0xC0FFEE), 100);
    if cancellation_residual(b, &ip, samples).ok()? >= opts.residual_tol {
        return None;
    }
    let l = ip.cholesky()?;
    Some((ip, l, lam))
}

/// Projected ascent of the smallest eigenvalue of `sum_i c_i N_i` over the
/// unit sphere of coefficients, smoothed by a shrinking soft-min.
fn ascend_min_eigenvalue<T: Real>(basis: &[DMatrix<T>], start: DVector<T>, iterations: usize) -> (DVector<T>, T) {
    let d = basis.len();
    let combine = |c: &DVector<T>| {
        let mut g = &basis[0] * c[0];
        for i in 1..d {
            g += &basis[i] * c[i];
        }
        g
    };
    let mut c = start.normalize();
    let mut best = (c.clone(), min_eig(&combine(&c)));
    let mu_hi = T::lit(0.1);
    let mu_lo = T::lit(1e-5);
    for it in 0..iterations {
        let frac = T::lit(it as f64 / iterations.max(1) as f64);
        let mu = mu_hi * (mu_lo / mu_hi).powf(frac);
        let step = T::lit(0.5) * (T::one() - frac) + T::lit(0.01);
        let eig = combine(&c).symmetric_eigen();
        let lmin = eig.eigenvalues.min();
        if lmin > best.1 {
            best = (c.clone(), lmin);
        }
        let weights: Vec<T> = eig.eigenvalues.iter().map(|&l| (-(l - lmin) / mu).exp()).collect();
        let wsum = weights.iter().fold(T::zero(), |a, &w| a + w);
        let mut grad = DVector::zeros(d);
        for (idx, &w) in weights.iter().enumerate() {
            if w / wsum < T::lit(1e-12) {
                continue;
            }
            let v = eig.eigenvectors.column(idx);
            for j in 0..d {
                grad[j] += w / wsum * (v.transpose() * &basis[j] * v)[(0, 0)];
            }
        }
        let radial = grad.dot(&c);
        grad -= &c * radial;
        let gnorm = grad.norm();
        if gnorm <= T::default_epsilon() {
            break;
        }
        c = (&c + grad * (step / gnorm.max(T::one()))).normalize();
    }
    let lmin = min_eig(&combine(&c));
    if lmin > best.1 {
        best = (c, lmin);
    }
    best
}

/// Searches for a positive-definite certificate: caller candidates, then the
/// identity, then projected ascent over the null space with random restarts.
/// On failure, a parallel witness is searched for.
pub fn find_certificate<T: Real>(b: &SymBilinearMap<T>, opts: &CertificateOptions<T>) -> Result<CertificateResult<T>> {
    let n = b.dim();
    let system = constraint_system(b);
    let null = system.null_space(opts.rank_cutoff)?;
    let found = |ip: InnerProduct<T>, l: DMatrix<T>, lam: T, source| CertificateResult {
        status: CertificateStatus::Found,
        gram: Some(ip),
        basis_change: Some(l.transpose()),
        cholesky: Some(l),
        min_eigenvalue: Some(lam),
        null_space_dim: null.basis.len(),
        source: Some(source),
        witness: None,
    };

    for (idx, cand) in opts.candidates.iter().enumerate() {
        if let Some((ip, l, lam)) = accept(b, &system, cand.gram(), opts) {
            return Ok(found(ip, l, lam, CertificateSource::Candidate(idx)));
        }
    }
    if let Some((ip, l, lam)) = accept(b, &system, &DMatrix::identity(n, n), opts) {
        return Ok(found(ip, l, lam, CertificateSource::Identity));
    }

    if !null.basis.is_empty() {
        let d = null.basis.len();
        let id_vech = vech(&DMatrix::<T>::identity(n, n));
        let mut starts = Vec::new();
        let projected = DVector::from_fn(d, |i, _| vech(&null.basis[i]).dot(&id_vech));
        if projected.norm() > T::default_epsilon() {
            starts.push(projected);
        }
        for r in 0..opts.restarts {
            let mut rng = rng_from_seed(derive_seed(opts.seed, r as u64));
            starts.push(gaussian_vector(&mut rng, d));
        }
        let mut best: Option<(DVector<T>, T)> = None;
        for start in starts {
            if start.norm() == T::zero() {
                continue;
            }
            let (c, lam) = ascend_min_eigenvalue(&null.basis, start, opts.iterations);
            if best.as_ref().is_none_or(|(_, b)| lam > *b) {
                best = Some((c, lam));
            }
        }
        if let Some((c, _)) = best {
            let mut g = DMatrix::zeros(n, n);
            for (ci, ni) in c.iter().zip(&null.basis) {
                g += ni * *ci;
            }
            if let Some((ip, l, lam)) = accept(b, &system, &g, opts) {
                return Ok(found(ip, l, lam, CertificateSource::Search));
            }
        }
    }

    let witness = parallel_witness(
        b,
        SampleSpec::new(derive_seed(opts.seed, 0xA11CE), opts.witness_samples),
    );
    Ok(CertificateResult {
        status: CertificateStatus::NotFound,
        gram: None,
        cholesky: None,
        basis_change: None,
        min_eigenvalue: None,
        null_space_dim: null.basis.len(),
        source: None,
        witness,
    })
}

/// `B'(y', z') = L^T B(L^{-T} y', L^{-T} z')`, which conserves the Euclidean
/// norm whenever `B` conserves `<., .>_G` with `G = L L^T`.
pub fn euclideanize<T: Real>(b: &SymBilinearMap<T>, cert: &CertificateResult<T>) -> Result<SymBilinearMap<T>> {
    let l = match (&cert.status, &cert.cholesky) {
        (CertificateStatus::Found, Some(l)) => l,
        _ => return Err(Error::Precondition("euclideanize requires a found certificate".into())),
    };
    change_basis(b, l)
}

pub(crate) fn change_basis<T: Real>(b: &SymBilinearMap<T>, l: &DMatrix<T>) -> Result<SymBilinearMap<T>> {
    let n = b.dim();
    let m = l
        .transpose()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("Cholesky factor is singular".into()))?;
    // t1[l][p][j] = sum_q b[l][p][q] m[q][j]
    let idx = |a: usize, p: usize, q: usize| (a * n + p) * n + q;
    let mut t1 = vec![T::zero(); n * n * n];
    for a in 0..n {
        for p in 0..n {
            for j in 0..n {
                let mut acc = T::zero();
                for q in 0..n {
                    acc += b.coeff(a, p, q) * m[(q, j)];
                }
                t1[idx(a, p, j)] = acc;
            }
        }
    }
    let mut t2 = vec![T::zero(); n * n * n];
    for a in 0..n {
        for i in 0..n {
            for j in 0..n {
                let mut acc = T::zero();
                for p in 0..n {
                    acc += m[(p, i)] * t1[idx(a, p, j)];
                }
                t2[idx(a, i, j)] = acc;
            }
        }
    }
    let mut out = vec![T::zero(); n * n * n];
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let mut acc = T::zero();
                for a in 0..n {
                    acc += l[(a, k)] * t2[idx(a, i, j)];
                }
                out[idx(k, i, j)] = acc;
            }
        }
    }
    SymBilinearMap::symmetrize(n, &out)
}

fn cubic_gradient<T: Real>(b: &SymBilinearMap<T>, y: &DVector<T>) -> DVector<T> {
    b.rhs(y) + b.partial(y).transpose() * y * T::lit(2.0)
}

/// Newton polish of `B(y,y) = lambda y`, `|y| = 1`.
fn polish_eigenpair<T: Real>(b: &SymBilinearMap<T>, mut y: DVector<T>, mut lambda: T) -> (DVector<T>, T) {
    let n = b.dim();
    for _ in 0..40 {
        let f = b.rhs(&y) - &y * lambda;
        let c = (y.norm_squared() - T::one()) * T::lit(0.5);
        let mut jac = DMatrix::zeros(n + 1, n + 1);
        let jb = b.partial(&y) * T::lit(2.0) - DMatrix::identity(n, n) * lambda;
        jac.view_mut((0, 0), (n, n)).copy_from(&jb);
        for i in 0..n {
            jac[(i, n)] = -y[i];
            jac[(n, i)] = y[i];
        }
        let mut rhs = DVector::zeros(n + 1);
        rhs.rows_mut(0, n).copy_from(&(-f));
        rhs[n] = -c;
        let Some(step) = jac.lu().solve(&rhs) else { break };
        y += step.rows(0, n);
        lambda += step[n];
        if step.amax() < T::default_epsilon() * T::lit(10.0) {
            break;
        }
    }
    let norm = y.norm();
    if norm > T::zero() {
        y /= norm;
    }
    (y, lambda)
}

/// Searches for `y` with `B(y,y)` a nonzero multiple of `y`, by local
/// maximization of `<B(y,y), y>` on the Euclidean unit sphere followed by a
/// Newton polish. Returns a witness only when `|B(y,y) - lambda y| < 1e-8`
/// and `|lambda| > 1e-8`.
pub fn parallel_witness<T: Real>(b: &SymBilinearMap<T>, samples: SampleSpec) -> Option<ParallelWitness<T>> {
    let n = b.dim();
    let bscale = b.coeffs().iter().fold(T::zero(), |a, c| a.max(c.abs()));
    if bscale == T::zero() {
        return None;
    }
    let tol = T::lit(1e-8);
    let step = T::lit(0.25) / (bscale * T::lit(n as f64));
    let mut best: Option<ParallelWitness<T>> = None;
    for r in 0..samples.count {
        let mut rng = rng_from_seed(derive_seed(samples.seed, r as u64));
        let mut y = gaussian_vector::<T, _>(&mut rng, n);
        if y.norm() == T::zero() {
            continue;
        }
        y = y.normalize();
        for _ in 0..200 {
            let mut g = cubic_gradient(b, &y);
            let radial = g.dot(&y);
            g -= &y * radial;
            if g.norm() < T::lit(1e-14) {
                break;
            }
            y = (&y + g * step).normalize();
        }
        let lambda0 = b.rhs(&y).dot(&y);
        let (y, lambda) = polish_eigenpair(b, y, lambda0);
        if !lambda.is_finite() || y.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let residual = (b.rhs(&y) - &y * lambda).norm();
        let phi = b.rhs(&y).dot(&y);
        if residual < tol && lambda.abs() > tol && phi.abs() > tol {
            let better = best.as_ref().is_none_or(|w| lambda.abs() > w.lambda.abs());
            if better {
                best = Some(ParallelWitness { y, lambda, residual });
            }
        }
    }
    best
}
