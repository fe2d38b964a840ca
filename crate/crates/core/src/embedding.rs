//! The embedding tower on `M = SO(n) x T^n x T^1`.
//!
//! Level 4 lives on `SO(n)`, levels 3 and 2 on `SO(n) x T^n`, and level 1 on
//! the full manifold. Points are addressed through exponential charts
//! `a -> exp(A(a)) Q0`; torus angles are measured in turns (period 1).
//! Tangent vectors and 1-forms are expressed in the chart frame
//! `(d/da_k, d/dtheta_i, d/ds)` and its dual.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::liegroup::{haar_sample, so_dim, Chart, OrthMat, SkewMat, CHART_RADIUS};
use crate::quadode::{cancellation_residual, InnerProduct, SymBilinearMap};
use crate::sampling::{ball_point, derive_seed, rng_from_seed, uniform, SampleSpec};
use crate::scalar::Real;

/// Residual above which [`build_smap`] refuses a map as not Euclidean-conservative.
/// Raised to `1e3 * epsilon` for scalars coarser than `f64`.
pub const SMAP_RESIDUAL_TOL: f64 = 1e-10;

/// Linear map `y -> S(y)` into skew matrices with `S(y) y = B(y, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SMap<T: Real> {
    b: SymBilinearMap<T>,
    generators: Vec<DMatrix<T>>,
}

impl<T: Real> SMap<T> {
    pub fn dim(&self) -> usize {
        self.b.dim()
    }

    /// The generators `S(e_k)`.
    pub fn generators(&self) -> &[DMatrix<T>] {
        &self.generators
    }

    /// The bilinear map the S-map was built from.
    pub fn bilinear(&self) -> &SymBilinearMap<T> {
        &self.b
    }

    /// `S(y) = sum_k y_k S(e_k)`.
    pub fn at(&self, y: &DVector<T>) -> DMatrix<T> {
        let n = self.dim();
        let mut s = DMatrix::zeros(n, n);
        for (k, gen) in self.generators.iter().enumerate() {
            if y[k] != T::zero() {
                s += gen * y[k];
            }
        }
        s
    }

    /// Canonical `so(n)` coefficients of `S(y)`.
    pub fn coeffs_at(&self, y: &DVector<T>) -> DVector<T> {
        SkewMat::skew_part(&self.at(y)).coeffs().clone()
    }

    /// Copy with entry `(i, j)` of generator `k` shifted by `delta`, without
    /// restoring skewness. Used for fault injection.
    pub fn with_perturbed_entry(&self, k: usize, i: usize, j: usize, delta: T) -> Self {
        let mut out = self.clone();
        out.generators[k][(i, j)] += delta;
        out
    }
}

/// Builds the S-map of a Euclidean-conservative map entrywise from
/// `<S(e_k) e_j, e_i> = (2/3) (B(e_k, e_j)_i - B(e_k, e_i)_j)`.
pub fn build_smap<T: Real>(b: &SymBilinearMap<T>) -> Result<SMap<T>> {
    let n = b.dim();
    let residual = cancellation_residual(b, &InnerProduct::identity(n), SampleSpec::default())?;
    let tol = T::lit(SMAP_RESIDUAL_TOL).max(T::default_epsilon() * T::lit(1e3));
    if !(residual < tol) {
        return Err(Error::Precondition(format!(
            "map does not conserve the Euclidean norm (residual {:e}); euclideanize it with a certificate first",
            residual.as_f64()
        )));
    }
    let two_thirds = T::lit(2.0 / 3.0);
    let generators = (0..n)
        .map(|k| DMatrix::from_fn(n, n, |i, j| two_thirds * (b.coeff(i, k, j) - b.coeff(j, k, i))))
        .collect();
    Ok(SMap {
        b: b.clone(),
        generators,
    })
}

/// Level of the tower; determines the manifold a point lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Level {
    L1 = 1,
    L2 = 2,
    L3 = 3,
    L4 = 4,
}

impl Level {
    pub fn from_number(k: u8) -> Result<Self> {
        match k {
            1 => Ok(Level::L1),
            2 => Ok(Level::L2),
            3 => Ok(Level::L3),
            4 => Ok(Level::L4),
            _ => Err(Error::InvalidInput(format!("unknown level {k}"))),
        }
    }

    pub fn number(self) -> u8 {
        self as u8
    }

    /// Manifold dimension for a system of dimension `n`.
    pub fn manifold_dim(self, n: usize) -> usize {
        match self {
            Level::L4 => so_dim(n),
            Level::L3 | Level::L2 => so_dim(n) + n,
            Level::L1 => so_dim(n) + n + 1,
        }
    }

    fn torus_dim(self, n: usize) -> usize {
        match self {
            Level::L4 => 0,
            _ => n,
        }
    }
}

fn wrap<T: Real>(x: T) -> T {
    x - x.floor()
}

/// Point of `M` in an exponential chart.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartPoint<T: Real> {
    pub a: DVector<T>,
    pub theta: DVector<T>,
    pub s: T,
    pub level: Level,
}

impl<T: Real> ChartPoint<T> {
    /// Angles are reduced mod 1. `theta` must be empty at level 4; `s` is
    /// ignored (stored as 0) except at level 1.
    pub fn new(level: Level, a: DVector<T>, theta: DVector<T>, s: T) -> Result<Self> {
        match level {
            Level::L4 => check_dim(0, theta.len())?,
            _ => check_dim(so_dim(theta.len()), a.len())?,
        }
        let theta = theta.map(wrap);
        let s = if level == Level::L1 { wrap(s) } else { T::zero() };
        Ok(Self { a, theta, s, level })
    }

    /// Chart origin with zero angles.
    pub fn origin(level: Level, n: usize) -> Self {
        Self {
            a: DVector::zeros(so_dim(n)),
            theta: DVector::zeros(level.torus_dim(n)),
            s: T::zero(),
            level,
        }
    }

    /// Chart coordinates `(a, theta[, s])`.
    pub fn coords(&self) -> DVector<T> {
        let mut v: Vec<T> = self.a.iter().chain(self.theta.iter()).copied().collect();
        if self.level == Level::L1 {
            v.push(self.s);
        }
        DVector::from_vec(v)
    }

    pub fn from_coords(level: Level, n: usize, x: &DVector<T>) -> Result<Self> {
        check_dim(level.manifold_dim(n), x.len())?;
        let m = so_dim(n);
        let a = x.rows(0, m).into_owned();
        let theta = x.rows(m, level.torus_dim(n)).into_owned();
        let s = if level == Level::L1 { x[x.len() - 1] } else { T::zero() };
        if level == Level::L4 {
            return Ok(Self { a, theta, s, level });
        }
        Self::new(level, a, theta, s)
    }

    /// Same point viewed at another level (dropping or zero-filling factors).
    pub fn at_level(&self, level: Level, n: usize) -> Self {
        let theta = if level == Level::L4 {
            DVector::zeros(0)
        } else if self.theta.len() == n {
            self.theta.clone()
        } else {
            DVector::zeros(n)
        };
        let s = if level == Level::L1 { self.s } else { T::zero() };
        Self {
            a: self.a.clone(),
            theta,
            s,
            level,
        }
    }
}

/// Field values at one chart point. `g` is present at levels 2 and 1.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldEval<T: Real> {
    pub u: DVector<T>,
    pub v: DVector<T>,
    pub f: DVector<T>,
    pub p_prime: T,
    pub p: T,
    pub g: Option<DMatrix<T>>,
    pub vol_density: T,
}

/// Values of the level-4 fields `U(y) Q`, `F(y, z)(Q)` and `dF(y, z)(U(y))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Level4Eval<T: Real> {
    pub u: DMatrix<T>,
    pub f: T,
    pub df_along_u: T,
}

/// Level-4 fields on `SO(n)` at a rotation `q`.
pub fn level4_fields<T: Real>(smap: &SMap<T>, y: &DVector<T>, z: &DVector<T>, q: &OrthMat<T>) -> Level4Eval<T> {
    let s = smap.at(y);
    let qz = q.matrix() * z;
    Level4Eval {
        u: &s * q.matrix(),
        f: y.dot(&qz),
        df_along_u: y.dot(&(&s * &qz)),
    }
}

/// Chart data at one point: rotation, Jacobian and Haar density.
pub(crate) struct Frame<T: Real> {
    pub q: OrthMat<T>,
    pub jac: DMatrix<T>,
    jac_lu: nalgebra::LU<T, nalgebra::Dyn, nalgebra::Dyn>,
    pub density: T,
}

impl<T: Real> Frame<T> {
    pub(crate) fn new(chart: &Chart<T>, a: &DVector<T>) -> Result<Self> {
        let q = chart.point(a)?;
        let jac = chart.jacobian(a);
        let density = chart.haar_density(a);
        let jac_lu = jac.clone().lu();
        Ok(Self {
            q,
            jac,
            jac_lu,
            density,
        })
    }

    /// Chart components of the right-invariant field `W Q` for `W` with
    /// canonical coefficients `w`.
    pub(crate) fn chart_components(&self, w: &DVector<T>) -> Result<DVector<T>> {
        self.jac_lu
            .solve(w)
            .ok_or_else(|| Error::Numerical("chart Jacobian is singular".into()))
    }

    fn chart_components_mat(&self, w: &DMatrix<T>) -> Result<DMatrix<T>> {
        self.jac_lu
            .solve(w)
            .ok_or_else(|| Error::Numerical("chart Jacobian is singular".into()))
    }
}

fn require_level<T: Real>(x: &ChartPoint<T>, allowed: &[Level]) -> Result<()> {
    if allowed.contains(&x.level) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "chart point has level {}, expected one of {:?}",
            x.level.number(),
            allowed.iter().map(|l| l.number()).collect::<Vec<_>>()
        )))
    }
}

fn check_point<T: Real>(smap: &SMap<T>, chart: &Chart<T>, x: &ChartPoint<T>) -> Result<()> {
    let n = smap.dim();
    check_dim(n, chart.n())?;
    check_dim(so_dim(n), x.a.len())?;
    check_dim(x.level.torus_dim(n), x.theta.len())?;
    Ok(())
}

/// Level-3 fields on `SO(n) x T^n`: `U~(y) = U(y) + sum F(y, e_i) d/dtheta_i`,
/// `V~(y) = sum F(y, e_i) dtheta_i` and `P'(y, y) = 1/2 sum F(y, e_i)^2`.
pub fn level3_fields<T: Real>(
    smap: &SMap<T>,
    y: &DVector<T>,
    chart: &Chart<T>,
    x: &ChartPoint<T>,
) -> Result<FieldEval<T>> {
    require_level(x, &[Level::L3, Level::L2])?;
    check_point(smap, chart, x)?;
    check_dim(smap.dim(), y.len())?;
    let frame = Frame::new(chart, &x.a)?;
    level3_from_frame(smap, y, &frame)
}

pub(crate) fn level3_from_frame<T: Real>(smap: &SMap<T>, y: &DVector<T>, frame: &Frame<T>) -> Result<FieldEval<T>> {
    let n = smap.dim();
    let m = so_dim(n);
    let f = frame.q.matrix().transpose() * y;
    let ua = frame.chart_components(&smap.coeffs_at(y))?;
    let mut u = DVector::zeros(m + n);
    u.rows_mut(0, m).copy_from(&ua);
    u.rows_mut(m, n).copy_from(&f);
    let mut v = DVector::zeros(m + n);
    v.rows_mut(m, n).copy_from(&f);
    let p_prime = f.norm_squared() * T::lit(0.5);
    Ok(FieldEval {
        u,
        v,
        f,
        p_prime,
        p: p_prime,
        g: None,
        vol_density: frame.density,
    })
}

/// Blocks of the level-2 metric at one point.
#[allow(dead_code)] // `frame_v` and `h` are read by the projector cross-check in tests
pub(crate) struct MetricParts<T: Real> {
    /// Chart-frame columns `U~(e_j)`.
    pub frame_u: DMatrix<T>,
    /// Chart-frame columns `V~(e_j)` (1-form coefficients).
    pub frame_v: DMatrix<T>,
    /// `h` in the chart frame.
    pub h: DMatrix<T>,
    /// `h`-orthonormal basis of the complement of the `U~(e_j)`.
    pub complement: DMatrix<T>,
    /// `V~(e_i)(U~(e_j))`.
    pub gamma: DMatrix<T>,
    /// `V~(e_i)(N_k)`.
    pub cross: DMatrix<T>,
}

pub(crate) fn metric_parts<T: Real>(smap: &SMap<T>, frame: &Frame<T>) -> Result<MetricParts<T>> {
    let n = smap.dim();
    let m = so_dim(n);
    let dim = m + n;
    let qt = frame.q.matrix().transpose();

    let mut generators = DMatrix::zeros(m, n);
    for j in 0..n {
        generators.set_column(j, &SkewMat::skew_part(&smap.generators[j]).coeffs().clone());
    }
    let mut frame_u = DMatrix::zeros(dim, n);
    frame_u
        .view_mut((0, 0), (m, n))
        .copy_from(&frame.chart_components_mat(&generators)?);
    frame_u.view_mut((m, 0), (n, n)).copy_from(&qt);
    let mut frame_v = DMatrix::zeros(dim, n);
    frame_v.view_mut((m, 0), (n, n)).copy_from(&qt);

    // Frobenius metric on right-translated tangents; the canonical basis has
    // squared norm 2.
    let mut h = DMatrix::zeros(dim, dim);
    h.view_mut((0, 0), (m, m))
        .copy_from(&(frame.jac.transpose() * &frame.jac * T::lit(2.0)));
    h.view_mut((m, m), (n, n)).fill_with_identity();
    let h = (&h + h.transpose()) * T::lit(0.5);

    let chol = h
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("auxiliary metric is not positive definite".into()))?;
    let l = chol.l();
    let lt = l.transpose();
    let u_tilde = &lt * &frame_u;
    let gram_u = u_tilde.transpose() * &u_tilde;
    let gram_inv = gram_u
        .cholesky()
        .ok_or_else(|| Error::Numerical("frame vectors U(e_j) are linearly dependent".into()))?
        .inverse();
    let proj = DMatrix::<T>::identity(dim, dim) - &u_tilde * gram_inv * u_tilde.transpose();
    let proj = (&proj + proj.transpose()) * T::lit(0.5);
    let eig = proj.symmetric_eigen();
    let keep: Vec<usize> = (0..dim).filter(|&i| eig.eigenvalues[i] > T::lit(0.5)).collect();
    if keep.len() != m {
        return Err(Error::Numerical(format!(
            "complement has dimension {}, expected {m}",
            keep.len()
        )));
    }
    let mut n_tilde = DMatrix::zeros(dim, m);
    for (c, &i) in keep.iter().enumerate() {
        n_tilde.set_column(c, &eig.eigenvectors.column(i));
    }
    let complement = lt
        .solve_upper_triangular(&n_tilde)
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;

    let gamma = frame_v.transpose() * &frame_u;
    let cross = frame_v.transpose() * &complement;
    Ok(MetricParts {
        frame_u,
        frame_v,
        h,
        complement,
        gamma,
        cross,
    })
}

/// Chart-frame metric assembled from blocks in the basis `[U~(e_j) | N_k]`.
pub(crate) fn assemble_metric<T: Real>(parts: &MetricParts<T>, c: T) -> Result<DMatrix<T>> {
    let n = parts.frame_u.ncols();
    let dim = parts.frame_u.nrows();
    let m = dim - n;
    let mut t = DMatrix::zeros(dim, dim);
    t.view_mut((0, 0), (dim, n)).copy_from(&parts.frame_u);
    t.view_mut((0, n), (dim, m)).copy_from(&parts.complement);
    let t_inv = t
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("combined frame is singular".into()))?;

    let gamma = (&parts.gamma + parts.gamma.transpose()) * T::lit(0.5);
    let mut blocks = DMatrix::zeros(dim, dim);
    blocks.view_mut((0, 0), (n, n)).copy_from(&gamma);
    blocks.view_mut((0, n), (n, m)).copy_from(&parts.cross);
    blocks.view_mut((n, 0), (m, n)).copy_from(&parts.cross.transpose());
    blocks.view_mut((n, n), (m, m)).fill_with_identity();
    blocks.view_mut((n, n), (m, m)).scale_mut(c);

    let g = t_inv.transpose() * blocks * &t_inv;
    Ok((&g + g.transpose()) * T::lit(0.5))
}

/// Chart-frame matrix of the level-2 metric `g` with complement constant `c`.
pub fn level2_metric<T: Real>(smap: &SMap<T>, chart: &Chart<T>, x: &ChartPoint<T>, c: T) -> Result<DMatrix<T>> {
    require_level(x, &[Level::L2, Level::L3])?;
    check_point(smap, chart, x)?;
    check_c(c)?;
    let frame = Frame::new(chart, &x.a)?;
    assemble_metric(&metric_parts(smap, &frame)?, c)
}

/// Level-3 fields together with the level-2 metric; `P = P' - g(U, U) / 2`.
pub fn level2_fields<T: Real>(
    smap: &SMap<T>,
    y: &DVector<T>,
    chart: &Chart<T>,
    x: &ChartPoint<T>,
    c: T,
) -> Result<FieldEval<T>> {
    require_level(x, &[Level::L2, Level::L3])?;
    check_point(smap, chart, x)?;
    check_dim(smap.dim(), y.len())?;
    check_c(c)?;
    let frame = Frame::new(chart, &x.a)?;
    let mut eval = level3_from_frame(smap, y, &frame)?;
    let g = assemble_metric(&metric_parts(smap, &frame)?, c)?;
    eval.p = eval.p_prime - quad(&g, &eval.u) * T::lit(0.5);
    eval.g = Some(g);
    Ok(eval)
}

fn check_c<T: Real>(c: T) -> Result<()> {
    if c > T::zero() && c.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "metric constant C must be positive, got {}",
            c
        )))
    }
}

fn quad<T: Real>(g: &DMatrix<T>, u: &DVector<T>) -> T {
    u.dot(&(g * u))
}

/// Smallest `C` bound from Schur complements at the given points, times 2,
/// floored at 1.
pub fn choose_c<T: Real>(smap: &SMap<T>, samples: &[(Chart<T>, ChartPoint<T>)]) -> Result<T> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("choose_c needs at least one sample point".into()));
    }
    let mut worst = T::zero();
    for (chart, x) in samples {
        check_point(smap, chart, x)?;
        let frame = Frame::new(chart, &x.a)?;
        let parts = metric_parts(smap, &frame)?;
        let gamma = (&parts.gamma + parts.gamma.transpose()) * T::lit(0.5);
        let gamma_inv = gamma
            .cholesky()
            .ok_or_else(|| Error::Numerical("Gram block is not positive definite".into()))?
            .inverse();
        let schur = parts.cross.transpose() * gamma_inv * &parts.cross;
        let schur = (&schur + schur.transpose()) * T::lit(0.5);
        let top = schur
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(T::zero(), |a, b| a.max(b));
        worst = worst.max(top);
    }
    Ok((worst * T::lit(2.0)).max(T::one()))
}

/// Level-1 fields: level-3 fields pulled back along the projection dropping
/// `s`, with metric `g~ = g + (det_vol g)^-1 ds^2`.
pub fn level1_fields<T: Real>(
    smap: &SMap<T>,
    y: &DVector<T>,
    chart: &Chart<T>,
    x: &ChartPoint<T>,
    c: T,
) -> Result<FieldEval<T>> {
    require_level(x, &[Level::L1])?;
    check_point(smap, chart, x)?;
    check_dim(smap.dim(), y.len())?;
    check_c(c)?;
    let frame = Frame::new(chart, &x.a)?;
    let base = level3_from_frame(smap, y, &frame)?;
    let g = assemble_metric(&metric_parts(smap, &frame)?, c)?;
    let g_ext = extend_metric(&g, frame.density)?;
    let dim = g.nrows();
    let u = base.u.clone().insert_row(dim, T::zero());
    let v = base.v.clone().insert_row(dim, T::zero());
    let p = base.p_prime - quad(&g_ext, &u) * T::lit(0.5);
    Ok(FieldEval {
        u,
        v,
        f: base.f,
        p_prime: base.p_prime,
        p,
        g: Some(g_ext),
        vol_density: base.vol_density,
    })
}

/// `det_vol g = det(g) / density^2` for a chart-frame metric.
pub fn det_vol<T: Real>(g: &DMatrix<T>, density: T) -> T {
    g.clone().lu().determinant() / (density * density)
}

pub(crate) fn extend_metric<T: Real>(g: &DMatrix<T>, density: T) -> Result<DMatrix<T>> {
    let dv = det_vol(g, density);
    if !(dv > T::zero()) {
        return Err(Error::Numerical(format!(
            "metric determinant is not positive ({:e})",
            dv.as_f64()
        )));
    }
    let dim = g.nrows();
    let mut out = DMatrix::zeros(dim + 1, dim + 1);
    out.view_mut((0, 0), (dim, dim)).copy_from(g);
    out[(dim, dim)] = T::one() / dv;
    Ok(out)
}

/// The embedded velocity `U~(y)` in chart coordinates at any level.
pub fn velocity_field<T: Real>(
    smap: &SMap<T>,
    y: &DVector<T>,
    chart: &Chart<T>,
    x: &ChartPoint<T>,
) -> Result<DVector<T>> {
    check_point(smap, chart, x)?;
    check_dim(smap.dim(), y.len())?;
    let frame = Frame::new(chart, &x.a)?;
    if x.level == Level::L4 {
        return frame.chart_components(&smap.coeffs_at(y));
    }
    let u = level3_from_frame(smap, y, &frame)?.u;
    Ok(match x.level {
        Level::L1 => {
            let d = u.len();
            u.insert_row(d, T::zero())
        }
        _ => u,
    })
}

/// Random chart point: chart at a Haar base point, `a` uniform in the ball
/// of the given radius, angles uniform.
pub fn random_chart_point<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    level: Level,
    radius: T,
) -> (Chart<T>, ChartPoint<T>) {
    let chart = Chart::new(haar_sample(rng, n));
    let a = ball_point(rng, so_dim(n), radius);
    let theta = DVector::from_fn(level.torus_dim(n), |_, _| uniform::<T, _>(rng));
    let s = if level == Level::L1 { uniform(rng) } else { T::zero() };
    let x = ChartPoint { a, theta, s, level };
    (chart, x)
}

/// Options for [`Embedding::build`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingOptions {
    pub seed: u64,
    /// Number of Haar-sampled chart base points reported with the embedding.
    pub charts: usize,
    /// Points used to choose `C`.
    pub c_samples: usize,
}

impl Default for EmbeddingOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            charts: 4,
            c_samples: 64,
        }
    }
}

/// An S-map with its chosen metric constant and chart base points.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<T: Real> {
    smap: SMap<T>,
    c: T,
    charts: Vec<Chart<T>>,
}

impl<T: Real> Embedding<T> {
    /// Builds the embedding of a Euclidean-conservative map.
    pub fn build(b: &SymBilinearMap<T>, opts: &EmbeddingOptions) -> Result<Self> {
        let smap = build_smap(b)?;
        Self::from_smap(smap, opts)
    }

    pub fn from_smap(smap: SMap<T>, opts: &EmbeddingOptions) -> Result<Self> {
        let n = smap.dim();
        if n < 2 {
            return Err(Error::InvalidInput("embedding needs dimension n >= 2".into()));
        }
        if opts.charts == 0 || opts.c_samples == 0 {
            return Err(Error::InvalidInput(
                "embedding needs at least one chart and one sample".into(),
            ));
        }
        let mut rng = rng_from_seed(derive_seed(opts.seed, 0xC4A7));
        let charts: Vec<Chart<T>> = (0..opts.charts).map(|_| Chart::new(haar_sample(&mut rng, n))).collect();
        let samples: Vec<_> = (0..opts.c_samples)
            .map(|i| {
                let chart = charts[i % charts.len()].clone();
                let a = ball_point(&mut rng, so_dim(n), T::lit(CHART_RADIUS));
                let theta = DVector::from_fn(n, |_, _| uniform::<T, _>(&mut rng));
                (
                    chart,
                    ChartPoint {
                        a,
                        theta,
                        s: T::zero(),
                        level: Level::L2,
                    },
                )
            })
            .collect();
        let c = choose_c(&smap, &samples)?;
        Ok(Self { smap, c, charts })
    }

    pub fn smap(&self) -> &SMap<T> {
        &self.smap
    }

    pub fn c(&self) -> T {
        self.c
    }

    pub fn charts(&self) -> &[Chart<T>] {
        &self.charts
    }

    pub fn n(&self) -> usize {
        self.smap.dim()
    }

    /// Fields at a level-1 point.
    pub fn level1(&self, y: &DVector<T>, chart: &Chart<T>, x: &ChartPoint<T>) -> Result<FieldEval<T>> {
        level1_fields(&self.smap, y, chart, x, self.c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificate::{euclideanize, find_certificate, CertificateOptions};
    use crate::gates::{build, random_conservative, GateSpec};
    use crate::sampling::gaussian_vector;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn rotor() -> SMap<f64> {
        build_smap(&build(&GateSpec::Rotor { alpha: 1.0 }).unwrap()).unwrap()
    }

    #[test]
    fn rotor_generators() {
        let s = rotor();
        let expected = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0]) * (2.0 / 3.0);
        assert!((&s.generators()[2] - expected).amax() < 1e-15);
        let y = v(&[1.0, 2.0, 3.0]);
        let sy = s.at(&y);
        assert!((sy[(0, 1)] - 2.0).abs() < 1e-14);
        assert!((sy[(0, 2)] - 2.0 / 3.0).abs() < 1e-14);
        assert!((sy[(1, 2)] + 1.0 / 3.0).abs() < 1e-14);
        assert!((&sy * &y - v(&[6.0, -3.0, 0.0])).amax() < 1e-14);
    }

    #[test]
    fn zero_map_and_precondition() {
        let s = build_smap(&SymBilinearMap::<f64>::zeros(4)).unwrap();
        assert!(s.generators().iter().all(|g| g.amax() == 0.0));
        let rb = build(&GateSpec::RigidBody {
            inertia: [1.0, 2.0, 3.0],
        })
        .unwrap();
        assert!(matches!(build_smap(&rb), Err(Error::Precondition(_))));
    }

    #[test]
    fn smap_identity_and_skewness() {
        let mut rng = rng_from_seed(11);
        let rb = build(&GateSpec::RigidBody {
            inertia: [1.0, 2.0, 3.0],
        })
        .unwrap();
        let g = InnerProduct::diagonal(&[1.0, 2.0, 3.0]);
        let cert = find_certificate(&rb, &CertificateOptions::default().with_candidate(g)).unwrap();
        let mut maps = vec![euclideanize(&rb, &cert).unwrap()];
        for n in 2..6 {
            maps.push(random_conservative(&mut rng, n));
        }
        for b in &maps {
            let s = build_smap(b).unwrap();
            for gen in s.generators() {
                assert_eq!(gen + gen.transpose(), DMatrix::zeros(b.dim(), b.dim()));
            }
            for _ in 0..50 {
                let y = gaussian_vector::<f64, _>(&mut rng, b.dim()) * 3.0;
                let err = (s.at(&y) * &y - b.rhs(&y)).norm();
                assert!(err < 1e-12 * (1.0 + y.norm_squared()), "{err}");
            }
        }
    }

    #[test]
    fn level4_examples() {
        let s = rotor();
        let y = v(&[1.0, 2.0, 3.0]);
        let id = OrthMat::identity(3);
        let e1 = v(&[1.0, 0.0, 0.0]);
        let by = s.bilinear().rhs(&y);
        let at_b = level4_fields(&s, &by, &e1, &id);
        let at_y = level4_fields(&s, &y, &e1, &id);
        assert!((at_b.f - 6.0).abs() < 1e-14);
        assert!((at_y.df_along_u + 6.0).abs() < 1e-14);
        let zero = level4_fields(&s, &DVector::zeros(3), &e1, &id);
        assert_eq!(zero.f, 0.0);
        assert_eq!(zero.u, DMatrix::zeros(3, 3));
        let z = v(&[0.3, -1.0, 2.0]);
        assert!((level4_fields(&s, &y, &z, &id).f - y.dot(&z)).abs() < 1e-14);
    }

    #[test]
    fn level3_gram_identity_and_pressure() {
        let mut rng = rng_from_seed(5);
        let b = random_conservative::<f64, _>(&mut rng, 4);
        let s = build_smap(&b).unwrap();
        for _ in 0..20 {
            let (chart, x) = random_chart_point(&mut rng, 4, Level::L3, 1.0);
            let y = gaussian_vector::<f64, _>(&mut rng, 4);
            let y2 = gaussian_vector::<f64, _>(&mut rng, 4);
            let f1 = level3_fields(&s, &y, &chart, &x).unwrap();
            let f2 = level3_fields(&s, &y2, &chart, &x).unwrap();
            assert!((f1.f.dot(&f2.f) - y.dot(&y2)).abs() < 1e-12);
            assert!((f1.v.dot(&f2.u) - y.dot(&y2)).abs() < 1e-12);
            assert!((f1.p_prime - 0.5 * y.norm_squared()).abs() < 1e-12);
            assert!(f1.vol_density > 0.0 && f1.vol_density <= 1.0 + 1e-12);
        }
        let (chart, x) = random_chart_point(&mut rng, 4, Level::L3, 1.0);
        let zero = level3_fields(&s, &DVector::zeros(4), &chart, &x).unwrap();
        assert_eq!(zero.u.amax(), 0.0);
        assert_eq!(zero.v.amax(), 0.0);
    }

    #[test]
    fn chart_radius_enforced() {
        let s = rotor();
        let chart = Chart::new(OrthMat::identity(3));
        let x = ChartPoint::new(Level::L3, v(&[1.0, 1.0, 0.0]), DVector::zeros(3), 0.0).unwrap();
        assert!(level3_fields(&s, &v(&[1.0, 0.0, 0.0]), &chart, &x).is_err());
    }

    #[test]
    fn angles_wrap() {
        let x = ChartPoint::new(Level::L1, DVector::zeros(3), v(&[1.25, -0.25, 3.0]), -1.5).unwrap();
        assert!((x.theta - v(&[0.25, 0.75, 0.0])).amax() < 1e-15);
        assert!((x.s - 0.5).abs() < 1e-15);
    }

    /// Basis-free formula `g = P^T Gamma P + P^T V^T R + R^T V P + C R^T H R`
    /// with `P` the h-orthogonal coefficient map onto the frame and `R = I - U P`.
    fn projector_metric(parts: &MetricParts<f64>, c: f64) -> DMatrix<f64> {
        let u = &parts.frame_u;
        let h = &parts.h;
        let p = (u.transpose() * h * u).try_inverse().unwrap() * u.transpose() * h;
        let r = DMatrix::identity(u.nrows(), u.nrows()) - u * &p;
        let vt = parts.frame_v.transpose();
        p.transpose() * &parts.gamma * &p
            + p.transpose() * &vt * &r
            + r.transpose() * vt.transpose() * &p
            + r.transpose() * h * &r * c
    }

    #[test]
    fn metric_blocks_match_projector_formula() {
        let mut rng = rng_from_seed(6);
        let b = random_conservative::<f64, _>(&mut rng, 4);
        let s = build_smap(&b).unwrap();
        for _ in 0..10 {
            let (chart, x) = random_chart_point(&mut rng, 4, Level::L2, 1.0);
            let frame = Frame::new(&chart, &x.a).unwrap();
            let parts = metric_parts(&s, &frame).unwrap();
            let nh = parts.complement.transpose() * &parts.h * &parts.complement;
            assert!((nh - DMatrix::identity(6, 6)).amax() < 1e-12);
            assert!((parts.frame_u.transpose() * &parts.h * &parts.complement).amax() < 1e-12);
            let g = assemble_metric(&parts, 2.5).unwrap();
            let reference = projector_metric(&parts, 2.5);
            assert!((&g - &reference).amax() < 1e-10 * reference.amax());
        }
    }

    #[test]
    fn metric_compatibility_and_c_independence() {
        let s = rotor();
        let mut rng = rng_from_seed(7);
        let (chart, x) = random_chart_point(&mut rng, 3, Level::L2, 1.0);
        let c = choose_c(&s, &[(chart.clone(), x.clone())]).unwrap();
        assert!(c >= 1.0);
        let y = gaussian_vector::<f64, _>(&mut rng, 3).normalize();
        let y2 = gaussian_vector::<f64, _>(&mut rng, 3);
        let e = level2_fields(&s, &y, &chart, &x, c).unwrap();
        let g = e.g.clone().unwrap();
        assert!((&g * &e.u - &e.v).amax() < 1e-10);
        assert!((e.u.dot(&(&g * &e.u)) - 1.0).abs() < 1e-10);
        assert!(g.clone().symmetric_eigen().eigenvalues.min() > 0.0);
        let u2 = velocity_field(&s, &y2, &chart, &x).unwrap();
        let g_big = level2_metric(&s, &chart, &x, c + 1.0).unwrap();
        let before = e.u.dot(&(&g * &u2));
        let after = e.u.dot(&(&g_big * &u2));
        assert!((before - after).abs() < 1e-10);
        assert!((before - y.dot(&y2)).abs() < 1e-10);
    }

    #[test]
    fn choose_c_is_deterministic() {
        let s = rotor();
        let pt = (Chart::new(OrthMat::identity(3)), ChartPoint::origin(Level::L2, 3));
        let c1 = choose_c(&s, std::slice::from_ref(&pt)).unwrap();
        let c2 = choose_c(&s, &[pt]).unwrap();
        assert_eq!(c1, c2);
        assert!(choose_c::<f64>(&s, &[]).is_err());
    }

    #[test]
    fn c_doubling_keeps_positive_definite() {
        let mut rng = rng_from_seed(8);
        let b = random_conservative::<f64, _>(&mut rng, 3);
        let s = build_smap(&b).unwrap();
        let emb = Embedding::from_smap(s.clone(), &EmbeddingOptions::default()).unwrap();
        for _ in 0..10 {
            let (chart, x) = random_chart_point(&mut rng, 3, Level::L2, 1.0);
            let lo = level2_metric(&s, &chart, &x, emb.c())
                .unwrap()
                .symmetric_eigen()
                .eigenvalues
                .min();
            let hi = level2_metric(&s, &chart, &x, 2.0 * emb.c())
                .unwrap()
                .symmetric_eigen()
                .eigenvalues
                .min();
            assert!(lo > 0.0 && hi >= lo - 1e-12);
        }
    }

    #[test]
    fn level1_determinant_and_pressure() {
        let s = rotor();
        let mut rng = rng_from_seed(9);
        let c = 2.0;
        for _ in 0..10 {
            let (chart, x) = random_chart_point(&mut rng, 3, Level::L1, 1.0);
            let y = gaussian_vector::<f64, _>(&mut rng, 3);
            let e = level1_fields(&s, &y, &chart, &x, c).unwrap();
            let g = e.g.clone().unwrap();
            assert!((det_vol(&g, e.vol_density) - 1.0).abs() < 1e-10);
            assert!((e.u.dot(&(&g * &e.u)) - y.norm_squared()).abs() < 1e-10);
            assert!(e.p.abs() < 1e-10 * (1.0 + y.norm_squared()));
            // pullback consistency
            let e3 = level3_fields(&s, &y, &chart, &x.at_level(Level::L3, 3)).unwrap();
            assert_eq!(e.u.rows(0, 6).into_owned(), e3.u);
            assert_eq!(e.v.rows(0, 6).into_owned(), e3.v);
            assert_eq!(e.p_prime, e3.p_prime);
        }
        let origin = level1_fields(
            &s,
            &v(&[1.0, 0.0, 0.0]),
            &Chart::new(OrthMat::identity(3)),
            &ChartPoint::origin(Level::L1, 3),
            c,
        )
        .unwrap();
        assert!((det_vol(origin.g.as_ref().unwrap(), origin.vol_density) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn velocity_examples() {
        let s = rotor();
        let mut rng = rng_from_seed(10);
        let (chart, x) = random_chart_point(&mut rng, 3, Level::L1, 0.8);
        assert_eq!(velocity_field(&s, &DVector::zeros(3), &chart, &x).unwrap().amax(), 0.0);
        let y = gaussian_vector::<f64, _>(&mut rng, 3);
        let z = gaussian_vector::<f64, _>(&mut rng, 3);
        let lhs = velocity_field(&s, &(&y + &z), &chart, &x).unwrap();
        let rhs = velocity_field(&s, &y, &chart, &x).unwrap() + velocity_field(&s, &z, &chart, &x).unwrap();
        assert!((lhs - rhs).amax() < 1e-13);

        // steady mode of the rotor: y = (0, 0, w) at the chart origin
        let w = 1.7;
        let q = haar_sample::<f64, _>(&mut rng, 3);
        let chart = Chart::new(q.clone());
        let x = ChartPoint::origin(Level::L3, 3);
        let u = velocity_field(&s, &v(&[0.0, 0.0, w]), &chart, &x).unwrap();
        let so_part = SkewMat::from_coeffs(3, u.rows(0, 3).into_owned()).unwrap().to_matrix() * q.matrix();
        let expected = &s.generators()[2] * w * q.matrix();
        assert!((so_part - expected).amax() < 1e-14);
        let torus = q.matrix().transpose() * v(&[0.0, 0.0, w]);
        assert!((u.rows(3, 3).into_owned() - torus).amax() < 1e-14);
    }

    #[test]
    fn nonvanishing_torus_components() {
        let mut rng = rng_from_seed(12);
        let s = rotor();
        for _ in 0..20 {
            let (chart, x) = random_chart_point(&mut rng, 3, Level::L3, 1.0);
            let y = gaussian_vector::<f64, _>(&mut rng, 3);
            let e = level3_fields(&s, &y, &chart, &x).unwrap();
            assert!((e.f.norm() - y.norm()).abs() < 1e-12);
        }
    }
}
