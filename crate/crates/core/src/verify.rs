//! Numerical verification of every identity in the embedding tower, plus the
//! L^2 Gram round trip back to a conserved inner product.
//!
//! Every check is deterministic in `(seed, sample count)` and returns a
//! [`ResidualReport`]. Residuals are normalized by the homogeneity of the
//! identity in `|y|`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::certificate::{constraint_system, vech};
use crate::embedding::{
    assemble_metric, det_vol, extend_metric, level3_from_frame, level4_fields, metric_parts, random_chart_point,
    ChartPoint, Frame, Level, SMap,
};
use crate::error::{check_dim, Error, Result};
use crate::liegroup::{expm_matrix, haar_sample, so_dim, Chart, OrthMat, SkewMat};
use crate::quadode::{cancellation_residual, InnerProduct, SymBilinearMap};
use crate::sampling::{derive_seed, gaussian, gaussian_vector, rng_from_seed, uniform, SampleSpec};
use crate::scalar::Real;

/// Minimum Monte Carlo sample count for a usable standard error.
pub const MIN_MC_SAMPLES: usize = 1000;

/// Coordinate radius for sampled chart points in finite-difference checks,
/// leaving room for the stencil inside the chart.
const FD_RADIUS: f64 = 0.9;

/// Auxiliary quantity checked alongside the main residual.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportPart {
    pub name: String,
    pub value: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub pass: bool,
}

impl ReportPart {
    /// Passes when `value <= max`.
    pub fn at_most(name: &str, value: f64, max: f64) -> Self {
        Self {
            name: name.into(),
            value: Some(value),
            min: None,
            max: Some(max),
            pass: value <= max,
        }
    }

    /// Passes when `value > min`.
    pub fn above(name: &str, value: f64, min: f64) -> Self {
        Self {
            name: name.into(),
            value: Some(value),
            min: Some(min),
            max: None,
            pass: value > min,
        }
    }

    pub fn within(name: &str, value: f64, min: f64, max: f64) -> Self {
        Self {
            name: name.into(),
            value: Some(value),
            min: Some(min),
            max: Some(max),
            pass: value >= min && value <= max,
        }
    }

    /// Recorded without a value; passes vacuously.
    pub fn skipped(name: &str) -> Self {
        Self {
            name: name.into(),
            value: None,
            min: None,
            max: None,
            pass: true,
        }
    }
}

/// Outcome of one check. `pass` requires `max_residual <= tolerance` and
/// every part to pass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub check: String,
    pub samples: usize,
    pub seed: u64,
    pub max_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub parts: Vec<ReportPart>,
}

impl ResidualReport {
    fn new(check: &str, spec: SampleSpec, max_residual: f64, tolerance: f64, parts: Vec<ReportPart>) -> Self {
        let pass = max_residual <= tolerance && parts.iter().all(|p| p.pass);
        Self {
            check: check.into(),
            samples: spec.count,
            seed: spec.seed,
            max_residual,
            tolerance,
            pass,
            parts,
        }
    }

    pub fn part(&self, name: &str) -> Option<&ReportPart> {
        self.parts.iter().find(|p| p.name == name)
    }
}

fn require_samples(spec: SampleSpec, min: usize) -> Result<()> {
    if spec.count < min {
        return Err(Error::InvalidInput(format!(
            "need at least {min} samples, got {}",
            spec.count
        )));
    }
    Ok(())
}

fn stream(spec: SampleSpec, id: u64) -> rand_chacha::ChaCha8Rng {
    rng_from_seed(derive_seed(spec.seed, id))
}

fn nan_max(a: f64, b: f64) -> f64 {
    if b.is_nan() || a.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

/// Transport identity `F(B(y,y), z) + dF(y, z)(U(y)) = 0` on SO(n), with a
/// central-difference cross-check along `exp(t S(y)) Q`.
pub fn check_transport<T: Real>(smap: &SMap<T>, samples: SampleSpec) -> Result<ResidualReport> {
    require_samples(samples, 1)?;
    let n = smap.dim();
    let mut rng = stream(samples, 1);
    let h = T::lit(1e-5);
    let (mut worst, mut worst_fd) = (0.0f64, 0.0f64);
    for _ in 0..samples.count {
        let y = gaussian_vector::<T, _>(&mut rng, n);
        let z = gaussian_vector::<T, _>(&mut rng, n);
        let q = haar_sample::<T, _>(&mut rng, n);
        let (a, fd) = transport_residual(smap, &y, &z, &q, h);
        worst = nan_max(worst, a);
        worst_fd = nan_max(worst_fd, fd);
    }
    Ok(ResidualReport::new(
        "transport",
        samples,
        worst,
        1e-11,
        vec![ReportPart::at_most("finite_difference", worst_fd, 1e-6)],
    ))
}

/// Normalized analytic and finite-difference transport residuals at one sample.
pub fn transport_residual<T: Real>(smap: &SMap<T>, y: &DVector<T>, z: &DVector<T>, q: &OrthMat<T>, h: T) -> (f64, f64) {
    let by = smap.bilinear().rhs(y);
    let transported = level4_fields(smap, &by, z, q).f;
    let along = level4_fields(smap, y, z, q).df_along_u;
    let ny = y.norm().as_f64();
    let norm = (1.0 + ny * ny) * (1.0 + ny) * z.norm().as_f64();
    if norm == 0.0 || ny == 0.0 {
        return (0.0, 0.0);
    }
    let analytic = (transported + along).as_f64().abs() / norm;

    // F(y, z) along Q(t) = exp(t S(y)) Q; S may be corrupted, so use the raw
    // matrix exponential rather than a checked rotation.
    let s = smap.at(y);
    let f_at = |t: T| {
        let qt = (&s * t).exp() * q.matrix();
        y.dot(&(qt * z))
    };
    let derivative = (f_at(h) - f_at(-h)) / (h + h);
    let fd = (transported + derivative).as_f64().abs() / norm;
    (analytic, fd)
}

/// Level-3 covelocity Euler equation `V(B(y,y)) + U(y) _| dV(y) + dP'(y,y) = 0`.
pub fn check_covelocity_euler<T: Real>(smap: &SMap<T>, samples: SampleSpec) -> Result<ResidualReport> {
    check_covelocity_euler_with(smap, samples, |_y, by| by)
}

/// As [`check_covelocity_euler`], with the `B(y,y)` entering the first term
/// replaced by `rhs(y, B(y,y))`. Used for negative controls.
pub fn check_covelocity_euler_with<T: Real>(
    smap: &SMap<T>,
    samples: SampleSpec,
    rhs: impl Fn(&DVector<T>, DVector<T>) -> DVector<T>,
) -> Result<ResidualReport> {
    require_samples(samples, 1)?;
    let n = smap.dim();
    let mut rng = stream(samples, 2);
    let (mut full, mut simplified, mut gap) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..samples.count {
        let (chart, x) = random_chart_point::<T, _>(&mut rng, n, Level::L3, T::one());
        let y = gaussian_vector::<T, _>(&mut rng, n);
        let frame = Frame::new(&chart, &x.a)?;
        let first = rhs(&y, smap.bilinear().rhs(&y));
        let r = covelocity_residual(smap, &y, &first, &frame)?;
        let norm = 1.0 + y.norm_squared().as_f64();
        full = nan_max(full, r.full / norm);
        simplified = nan_max(simplified, r.simplified / norm);
        gap = nan_max(gap, r.gap / norm);
    }
    Ok(ResidualReport::new(
        "covelocity",
        samples,
        full,
        1e-10,
        vec![
            ReportPart::at_most("without_pressure", simplified, 1e-10),
            ReportPart::at_most("path_difference", gap, 1e-10),
        ],
    ))
}

struct CovelocityResidual {
    full: f64,
    simplified: f64,
    gap: f64,
}

fn covelocity_residual<T: Real>(
    smap: &SMap<T>,
    y: &DVector<T>,
    first: &DVector<T>,
    frame: &Frame<T>,
) -> Result<CovelocityResidual> {
    let n = smap.dim();
    let m = so_dim(n);
    let dim = m + n;
    let fields = level3_from_frame(smap, y, frame)?;
    let v_first = level3_from_frame(smap, first, frame)?.v;

    // dF_i along d/da_k is <y, W_k Q e_i> with W_k the k-th Jacobian column.
    let mut df = DMatrix::<T>::zeros(dim, n);
    for k in 0..m {
        let w = SkewMat::from_coeffs(n, frame.jac.column(k).into_owned())?.to_matrix();
        let row = (w * frame.q.matrix()).transpose() * y;
        for i in 0..n {
            df[(k, i)] = row[i];
        }
    }
    // dV = sum_i dF_i ^ dtheta_i
    let mut omega = DMatrix::<T>::zeros(dim, dim);
    for r in 0..dim {
        for i in 0..n {
            omega[(r, m + i)] += df[(r, i)];
            omega[(m + i, r)] -= df[(r, i)];
        }
    }
    let contraction = omega.transpose() * &fields.u;
    let d_pressure = &df * &fields.f;
    let simplified = &v_first + &contraction;
    let full = &simplified + &d_pressure;
    Ok(CovelocityResidual {
        full: full.amax().as_f64(),
        simplified: simplified.amax().as_f64(),
        gap: (&full - &simplified).amax().as_f64(),
    })
}

/// `g U~(y) = V~(y)` and positive definiteness of the level-2 metric.
pub fn check_metric_compat<T: Real>(smap: &SMap<T>, c: T, samples: SampleSpec) -> Result<ResidualReport> {
    require_samples(samples, 1)?;
    let n = smap.dim();
    let mut rng = stream(samples, 3);
    let (mut worst, mut gram_err) = (0.0f64, 0.0f64);
    let mut min_eig = f64::INFINITY;
    for _ in 0..samples.count {
        let (chart, x) = random_chart_point::<T, _>(&mut rng, n, Level::L2, T::one());
        let y = gaussian_vector::<T, _>(&mut rng, n);
        let frame = Frame::new(&chart, &x.a)?;
        let fields = level3_from_frame(smap, &y, &frame)?;
        let g = assemble_metric(&metric_parts(smap, &frame)?, c)?;
        let ny = y.norm().as_f64();
        worst = nan_max(worst, (&g * &fields.u - &fields.v).amax().as_f64() / (1.0 + ny));
        let guu = fields.u.dot(&(&g * &fields.u)).as_f64();
        gram_err = nan_max(gram_err, (guu - ny * ny).abs() / (1.0 + ny * ny));
        let eig = g.symmetric_eigen().eigenvalues.min().as_f64();
        min_eig = if eig.is_nan() { f64::NAN } else { min_eig.min(eig) };
    }
    Ok(ResidualReport::new(
        "metric",
        samples,
        worst,
        1e-10,
        vec![
            ReportPart::above("min_eigenvalue", min_eig, 0.0),
            ReportPart::at_most("gram", gram_err, 1e-10),
        ],
    ))
}

/// `det` of the level-1 metric relative to the extended volume form is 1.
pub fn check_unit_determinant<T: Real>(smap: &SMap<T>, c: T, samples: SampleSpec) -> Result<ResidualReport> {
    check_unit_determinant_scaled(smap, c, samples, T::one())
}

/// As [`check_unit_determinant`] with the `(s, s)` metric entry multiplied
/// by `ss_scale`. Used for negative controls.
pub fn check_unit_determinant_scaled<T: Real>(
    smap: &SMap<T>,
    c: T,
    samples: SampleSpec,
    ss_scale: T,
) -> Result<ResidualReport> {
    require_samples(samples, 1)?;
    let n = smap.dim();
    let mut rng = stream(samples, 4);
    let mut worst = 0.0f64;
    for _ in 0..samples.count {
        let (chart, x) = random_chart_point::<T, _>(&mut rng, n, Level::L1, T::one());
        let frame = Frame::new(&chart, &x.a)?;
        let g = assemble_metric(&metric_parts(smap, &frame)?, c)?;
        let mut g_ext = extend_metric(&g, frame.density)?;
        let last = g_ext.nrows() - 1;
        g_ext[(last, last)] *= ss_scale;
        worst = nan_max(worst, (det_vol(&g_ext, frame.density) - T::one()).abs().as_f64());
    }
    Ok(ResidualReport::new("determinant", samples, worst, 1e-9, vec![]))
}

/// Smooth test function `f(Q, theta) = p(Q) cos(2 pi k . theta + phase)` with
/// `p` a polynomial of degree at most 2 in the matrix entries.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    pub constant: f64,
    pub linear: DMatrix<f64>,
    /// `c * Q[a][b] * Q[c][d]` as `(a, b, c, d, coefficient)`.
    pub quadratic: Vec<(usize, usize, usize, usize, f64)>,
    pub frequencies: Vec<i64>,
    pub phase: f64,
}

impl TestFunction {
    pub fn constant(n: usize, value: f64) -> Self {
        Self {
            constant: value,
            linear: DMatrix::zeros(n, n),
            quadratic: vec![],
            frequencies: vec![0; n],
            phase: 0.0,
        }
    }

    /// Random function; `spatial_only` forces all frequencies to zero.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, n: usize, spatial_only: bool) -> Self {
        let constant = gaussian(rng);
        let linear = DMatrix::from_fn(n, n, |_, _| gaussian::<f64, _>(rng));
        let quadratic = (0..3)
            .map(|_| {
                (
                    rng.random_range(0..n),
                    rng.random_range(0..n),
                    rng.random_range(0..n),
                    rng.random_range(0..n),
                    gaussian::<f64, _>(rng),
                )
            })
            .collect();
        let frequencies = (0..n)
            .map(|_| if spatial_only { 0 } else { rng.random_range(-2..=2) })
            .collect();
        let phase = uniform::<f64, _>(rng) * 2.0 * PI;
        Self {
            constant,
            linear,
            quadratic,
            frequencies,
            phase,
        }
    }

    fn poly(&self, q: &DMatrix<f64>) -> f64 {
        let mut p = self.constant + self.linear.dot(q);
        for &(a, b, c, d, coef) in &self.quadratic {
            p += coef * q[(a, b)] * q[(c, d)];
        }
        p
    }

    fn poly_derivative(&self, q: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
        let mut dp = self.linear.dot(w);
        for &(a, b, c, d, coef) in &self.quadratic {
            dp += coef * (w[(a, b)] * q[(c, d)] + q[(a, b)] * w[(c, d)]);
        }
        dp
    }

    fn angle(&self, theta: &DVector<f64>) -> f64 {
        let k: f64 = self
            .frequencies
            .iter()
            .zip(theta.iter())
            .map(|(&k, &t)| k as f64 * t)
            .sum();
        2.0 * PI * k + self.phase
    }

    pub fn value(&self, q: &DMatrix<f64>, theta: &DVector<f64>) -> f64 {
        self.poly(q) * self.angle(theta).cos()
    }

    /// `df(X)` for the tangent vector with SO(n) part `q_dot` (ambient) and
    /// torus part `theta_dot`.
    pub fn differential(
        &self,
        q: &DMatrix<f64>,
        theta: &DVector<f64>,
        q_dot: &DMatrix<f64>,
        theta_dot: &DVector<f64>,
    ) -> f64 {
        let angle = self.angle(theta);
        let k_dot: f64 = self
            .frequencies
            .iter()
            .zip(theta_dot.iter())
            .map(|(&k, &t)| k as f64 * t)
            .sum();
        self.poly_derivative(q, q_dot) * angle.cos() - self.poly(q) * angle.sin() * 2.0 * PI * k_dot
    }
}

/// Standard family: a constant, five functions on SO(n) alone, the rest
/// with torus dependence.
pub fn standard_test_functions<R: Rng + ?Sized>(rng: &mut R, n: usize, count: usize) -> Vec<TestFunction> {
    (0..count)
        .map(|i| match i {
            0 => TestFunction::constant(n, 1.0),
            1..=5 => TestFunction::random(rng, n, true),
            _ => TestFunction::random(rng, n, false),
        })
        .collect()
}

/// Monte Carlo mean and standard error of `df(X)` over Haar x uniform
/// torus, for each test function. `field(Q, theta)` gives the ambient
/// SO(n) velocity and torus velocity.
pub fn mc_divergence(
    n: usize,
    field: impl Fn(&DMatrix<f64>, &DVector<f64>) -> (DMatrix<f64>, DVector<f64>),
    functions: &[TestFunction],
    mc: SampleSpec,
) -> Result<Vec<(f64, f64)>> {
    require_samples(mc, MIN_MC_SAMPLES)?;
    let mut rng = stream(mc, 5);
    let mut sums = vec![0.0; functions.len()];
    let mut sq = vec![0.0; functions.len()];
    for _ in 0..mc.count {
        let q = haar_sample::<f64, _>(&mut rng, n).into_matrix();
        let theta = DVector::from_fn(n, |_, _| uniform::<f64, _>(&mut rng));
        let (q_dot, theta_dot) = field(&q, &theta);
        for (i, f) in functions.iter().enumerate() {
            let d = f.differential(&q, &theta, &q_dot, &theta_dot);
            sums[i] += d;
            sq[i] += d * d;
        }
    }
    let count = mc.count as f64;
    Ok(sums
        .iter()
        .zip(&sq)
        .map(|(&s, &s2)| {
            let mean = s / count;
            let var = ((s2 - count * mean * mean) / (count - 1.0)).max(0.0);
            (mean, (var / count).sqrt())
        })
        .collect())
}

/// Largest `|mean| / se` over the estimates (`0/0` counts as 0).
fn max_z_score(estimates: &[(f64, f64)]) -> f64 {
    estimates
        .iter()
        .map(|&(mean, se)| {
            if mean == 0.0 {
                0.0
            } else if se == 0.0 {
                f64::INFINITY
            } else {
                mean.abs() / se
            }
        })
        .fold(0.0, f64::max)
}

/// Options for [`check_divergence`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DivergenceOptions {
    pub test_functions: usize,
    pub mc: SampleSpec,
    /// Points for the flow-Jacobian check.
    pub flow_points: usize,
}

impl Default for DivergenceOptions {
    fn default() -> Self {
        Self {
            test_functions: 20,
            mc: SampleSpec::new(0, 10_000),
            flow_points: 10,
        }
    }
}

/// Divergence-freeness of the level-3 velocity `U~(y)`: Monte Carlo
/// integration by parts against test functions, plus the exact statements
/// that the SO(n) flow preserves the chart Haar density and the torus
/// components do not depend on the angles.
pub fn check_divergence<T: Real>(smap: &SMap<T>, y: &DVector<T>, opts: &DivergenceOptions) -> Result<ResidualReport> {
    let n = smap.dim();
    check_dim(n, y.len())?;
    require_samples(opts.mc, MIN_MC_SAMPLES)?;
    let mut rng = stream(opts.mc, 6);
    let functions = standard_test_functions(&mut rng, n, opts.test_functions);

    let s_y = smap.at(y).map(|v| v.as_f64());
    let y64 = y.map(|v| v.as_f64());
    let estimates = mc_divergence(n, |q, _| (&s_y * q, q.transpose() * &y64), &functions, opts.mc)?;
    let z = max_z_score(&estimates);

    let mut jac_worst = 0.0f64;
    let mut torus_worst = 0.0f64;
    for _ in 0..opts.flow_points {
        let (chart, x) = random_chart_point::<T, _>(&mut rng, n, Level::L3, T::lit(0.5));
        // a non-skew S leaves SO(n); that is a failed check, not an error
        let defect = match flow_jacobian_defect(smap, y, &chart, &x) {
            Err(Error::Numerical(_)) => f64::INFINITY,
            other => other?,
        };
        jac_worst = nan_max(jac_worst, defect);
        let mut moved = x.clone();
        moved.theta = DVector::from_fn(n, |_, _| uniform::<T, _>(&mut rng));
        let f0 = level3_from_frame(smap, y, &Frame::new(&chart, &x.a)?)?.f;
        let f1 = level3_from_frame(smap, y, &Frame::new(&chart, &moved.a)?)?.f;
        torus_worst = torus_worst.max((f0 - f1).amax().as_f64());
    }
    Ok(ResidualReport::new(
        "divergence",
        opts.mc,
        z,
        4.0,
        vec![
            ReportPart::at_most("flow_jacobian", jac_worst, 1e-5),
            ReportPart::at_most("torus_independence", torus_worst, 0.0),
        ],
    ))
}

const GAUSS_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GAUSS_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

/// `|det(D Phi_t) rho(a') / rho(a) - 1|` for the time-`t` flow of `U~(y)` in
/// chart coordinates, by central differences.
pub fn flow_jacobian_defect<T: Real>(
    smap: &SMap<T>,
    y: &DVector<T>,
    chart: &Chart<T>,
    x: &ChartPoint<T>,
) -> Result<f64> {
    let n = smap.dim();
    let m = so_dim(n);
    let s = smap.at(y);
    let t = T::lit(0.25) / (T::one() + smap.coeffs_at(y).norm());
    let step = expm_matrix(&(&s * t))?;
    let flow = |coords: &DVector<T>| -> Result<DVector<T>> {
        let a = coords.rows(0, m).into_owned();
        let q = chart.point_unchecked(&a)?;
        let moved = step.mul(&q);
        let a_new = chart.coords_of(&moved)?;
        let mut theta = coords.rows(m, n).into_owned();
        let half = t * T::lit(0.5);
        for (node, weight) in GAUSS_NODES.iter().zip(GAUSS_WEIGHTS) {
            let tau = half * (T::one() + T::lit(*node));
            let q_tau = expm_matrix(&(&s * tau))?.mul(&q);
            theta += q_tau.matrix().transpose() * y * (half * T::lit(weight));
        }
        let mut out = DVector::zeros(m + n);
        out.rows_mut(0, m).copy_from(&a_new);
        out.rows_mut(m, n).copy_from(&theta);
        Ok(out)
    };
    let x0 = x.at_level(Level::L3, n).coords();
    let h = T::lit(1e-5);
    let dim = m + n;
    let mut jac = DMatrix::zeros(dim, dim);
    for c in 0..dim {
        let mut plus = x0.clone();
        let mut minus = x0.clone();
        plus[c] += h;
        minus[c] -= h;
        let col = (flow(&plus)? - flow(&minus)?) / (h + h);
        jac.set_column(c, &col);
    }
    let image = flow(&x0)?;
    let a_new = image.rows(0, m).into_owned();
    let ratio = chart.haar_density(&a_new) / chart.haar_density(&x.a);
    Ok((jac.determinant() * ratio - T::one()).abs().as_f64())
}

/// Level-1 quantities needed by the velocity-form check.
struct Level1Bundle<T: Real> {
    g: DMatrix<T>,
    u: DVector<T>,
    v: DVector<T>,
    p: T,
    u_rhs: DVector<T>,
}

fn level1_bundle<T: Real>(
    smap: &SMap<T>,
    y: &DVector<T>,
    by: &DVector<T>,
    chart: &Chart<T>,
    coords: &DVector<T>,
    c: T,
) -> Result<Level1Bundle<T>> {
    let n = smap.dim();
    let x = ChartPoint::from_coords(Level::L1, n, coords)?;
    let frame = Frame::new(chart, &x.a)?;
    let fields = level3_from_frame(smap, y, &frame)?;
    let rhs_fields = level3_from_frame(smap, by, &frame)?;
    let g = extend_metric(&assemble_metric(&metric_parts(smap, &frame)?, c)?, frame.density)?;
    let d = fields.u.len();
    let u = fields.u.insert_row(d, T::zero());
    let v = fields.v.insert_row(d, T::zero());
    let u_rhs = rhs_fields.u.insert_row(d, T::zero());
    let p = fields.p_prime - u.dot(&(&g * &u)) * T::lit(0.5);
    Ok(Level1Bundle { g, u, v, p, u_rhs })
}

/// Normalized residuals of the velocity-form Euler equation and of the
/// 1-form identity at one level-1 point, with central differences of step `h`.
pub fn full_euler_residual<T: Real>(
    smap: &SMap<T>,
    c: T,
    y: &DVector<T>,
    chart: &Chart<T>,
    x: &ChartPoint<T>,
    h: T,
) -> Result<(f64, f64)> {
    if !(h > T::lit(1e3) * T::default_epsilon()) {
        return Err(Error::InvalidInput(format!("finite-difference step {h} underflows")));
    }
    let by = smap.bilinear().rhs(y);
    let x0 = x.coords();
    let dim = x0.len();
    let here = level1_bundle(smap, y, &by, chart, &x0, c)?;
    let mut dg = Vec::with_capacity(dim);
    let mut du = DMatrix::zeros(dim, dim); // column b: d/dx_b of U
    let mut dv = DMatrix::zeros(dim, dim); // row b: d/dx_b of V
    let mut dp = DVector::zeros(dim);
    let mut d_guu = DVector::zeros(dim);
    for b in 0..dim {
        let mut plus = x0.clone();
        let mut minus = x0.clone();
        plus[b] += h;
        minus[b] -= h;
        let fp = level1_bundle(smap, y, &by, chart, &plus, c)?;
        let fm = level1_bundle(smap, y, &by, chart, &minus, c)?;
        let two_h = h + h;
        dg.push((&fp.g - &fm.g) / two_h);
        du.set_column(b, &((&fp.u - &fm.u) / two_h));
        dv.set_row(b, &((&fp.v - &fm.v) / two_h).transpose());
        dp[b] = (fp.p - fm.p) / two_h;
        d_guu[b] = (fp.u.dot(&(&fp.g * &fp.u)) - fm.u.dot(&(&fm.g * &fm.u))) / two_h;
    }
    let g_inv = here
        .g
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("level-1 metric is not positive definite".into()))?
        .inverse();
    let u = &here.u;

    // Lowered Christoffel contraction w_d = Gamma_{d,bc} u^b u^c.
    let mut ug = DMatrix::zeros(dim, dim); // sum_b u^b d_b g
    for b in 0..dim {
        ug += &dg[b] * u[b];
    }
    let mut w = &ug * u;
    for d in 0..dim {
        w[d] -= u.dot(&(&dg[d] * u)) * T::lit(0.5);
    }
    let advect = &du * u;
    let residual = &here.u_rhs + &advect + &g_inv * &w + &g_inv * &dp;
    let norm = T::one() + y.norm_squared();
    let euler = (residual.amax() / norm).as_f64();

    // U _| dV against nabla_U V - d(g(U,U)) / 2.
    let interior = dv.transpose() * u - &dv * u;
    let lowered = &g_inv * &here.v;
    let mut christoffel_v = DVector::zeros(dim);
    for b in 0..dim {
        // Gamma_{d,ab} u^a lowered[d] = 1/2 (u^a (d_a g)_{db} + (d_b g)_{da} u^a - u^a (d_d g)_{ab}) lowered[d]
        let mut acc = T::zero();
        acc += lowered.dot(&ug.column(b).into_owned());
        acc += lowered.dot(&(&dg[b] * u));
        for d in 0..dim {
            acc -= lowered[d] * (dg[d].row(b) * u)[(0, 0)];
        }
        christoffel_v[b] = acc * T::lit(0.5);
    }
    let nabla_v = dv.transpose() * u - christoffel_v;
    let dgub = (interior - (nabla_v - d_guu * T::lit(0.5))).amax() / norm;
    Ok((euler, dgub.as_f64()))
}

/// Velocity-form Euler equation `U(B(y,y)) + nabla_U U = -grad P` at level 1
/// with finite-difference Christoffel symbols, the 1-form identity, and the
/// residual ratio between steps `h` and `h/2`.
pub fn check_full_euler<T: Real>(smap: &SMap<T>, c: T, samples: SampleSpec, h: T) -> Result<ResidualReport> {
    require_samples(samples, 1)?;
    let n = smap.dim();
    let mut rng = stream(samples, 7);
    let (mut worst, mut worst_half, mut worst_dgub) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..samples.count {
        let (chart, x) = random_chart_point::<T, _>(&mut rng, n, Level::L1, T::lit(FD_RADIUS));
        let y = gaussian_vector::<T, _>(&mut rng, n);
        let (e, d) = full_euler_residual(smap, c, &y, &chart, &x, h)?;
        let (e_half, _) = full_euler_residual(smap, c, &y, &chart, &x, h * T::lit(0.5))?;
        worst = nan_max(worst, e);
        worst_half = nan_max(worst_half, e_half);
        worst_dgub = nan_max(worst_dgub, d);
    }
    let ratio_part = if worst > 1e-11 {
        ReportPart::within("step_halving_ratio", worst / worst_half, 3.0, 5.0)
    } else {
        // at rounding level there is nothing to converge
        ReportPart::skipped("step_halving_ratio")
    };
    Ok(ResidualReport::new(
        "full_euler",
        samples,
        worst,
        1e-3,
        vec![ReportPart::at_most("one_form_identity", worst_dgub, 1e-3), ratio_part],
    ))
}

/// Monte Carlo L^2 Gram matrix `G_ij = int g~(U~(e_i), U~(e_j)) dvol` under
/// probability Haar measure and unit-volume tori.
#[derive(Debug, Clone, PartialEq)]
pub struct L2Gram<T: Real> {
    pub mean: DMatrix<T>,
    pub standard_error: DMatrix<T>,
    pub samples: Vec<DMatrix<T>>,
}

pub fn l2_gram<T: Real>(smap: &SMap<T>, c: T, mc: SampleSpec) -> Result<L2Gram<T>> {
    require_samples(mc, MIN_MC_SAMPLES)?;
    let n = smap.dim();
    let mut rng = stream(mc, 8);
    let mut samples = Vec::with_capacity(mc.count);
    let x = ChartPoint::origin(Level::L1, n);
    for _ in 0..mc.count {
        let chart = Chart::new(haar_sample::<T, _>(&mut rng, n));
        let frame = Frame::new(&chart, &x.a)?;
        let g = extend_metric(&assemble_metric(&metric_parts(smap, &frame)?, c)?, frame.density)?;
        let parts = metric_parts(smap, &frame)?;
        let d = parts.frame_u.nrows();
        let u = parts.frame_u.clone().insert_row(d, T::zero());
        let pointwise = u.transpose() * g * &u * frame.density;
        samples.push((&pointwise + pointwise.transpose()) * T::lit(0.5));
    }
    let count = T::lit(mc.count as f64);
    let mut mean = DMatrix::zeros(n, n);
    for s in &samples {
        mean += s;
    }
    mean /= count;
    let mut var = DMatrix::zeros(n, n);
    for s in &samples {
        let d = s - &mean;
        var += d.component_mul(&d);
    }
    var /= count - T::one();
    let standard_error = var.map(|v| (v / count).sqrt());
    Ok(L2Gram {
        mean,
        standard_error,
        samples,
    })
}

/// Round trip back to the original coordinates: the lifted Gram matrix
/// `L G L^T` must satisfy the original constraint system within five
/// Monte Carlo standard errors (plus a rounding floor) and be positive
/// definite. Returns the report and the lifted matrix.
pub fn check_l2_gram<T: Real>(
    smap: &SMap<T>,
    c: T,
    original: &SymBilinearMap<T>,
    lift: &DMatrix<T>,
    mc: SampleSpec,
) -> Result<(ResidualReport, DMatrix<T>)> {
    check_dim(smap.dim(), original.dim())?;
    let gram = l2_gram(smap, c, mc)?;
    let lifted = |m: &DMatrix<T>| lift * m * lift.transpose();
    let system = constraint_system(original);
    let rows = system.matrix().nrows();
    let count = mc.count as f64;
    let mut sums = vec![0.0f64; rows];
    let mut sq = vec![0.0f64; rows];
    for s in &gram.samples {
        let r = system.matrix() * vech(&lifted(s));
        for i in 0..rows {
            let v = r[i].as_f64();
            sums[i] += v;
            sq[i] += v * v;
        }
    }
    let g_raw = lifted(&gram.mean);
    let symmetric = (&g_raw - g_raw.transpose()).amax().as_f64();
    let g_lift = (&g_raw + g_raw.transpose()) * T::lit(0.5);
    let floor = 1e-12 * system.matrix().amax().as_f64().max(1.0) * g_lift.amax().as_f64().max(1.0);
    let mut ratio = 0.0f64;
    for i in 0..rows {
        let mean = sums[i] / count;
        let var = ((sq[i] - count * mean * mean) / (count - 1.0)).max(0.0);
        let se = (var / count).sqrt();
        ratio = nan_max(ratio, mean.abs() / (5.0 * se + floor));
    }
    let min_eig = gram.mean.clone().symmetric_eigen().eigenvalues.min().as_f64();
    let mut parts = vec![
        ReportPart::above("min_eigenvalue", min_eig, 0.0),
        ReportPart::at_most("symmetry", symmetric, 1e-14 * g_lift.amax().as_f64().max(1.0)),
    ];
    if let Ok(ip) = InnerProduct::new(g_lift.clone()) {
        let r = cancellation_residual(original, &ip, SampleSpec::new(mc.seed, 100))?.as_f64();
        parts.push(ReportPart::at_most(
            "cancellation_residual",
            r,
            1e-10 * g_lift.amax().as_f64().max(1.0),
        ));
    }
    Ok((ResidualReport::new("l2_gram", mc, ratio, 1.0, parts), g_lift))
}

/// Sample counts and steps for [`run_all`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    pub samples: usize,
    pub covelocity_samples: usize,
    pub euler_samples: usize,
    pub mc_samples: usize,
    pub test_functions: usize,
    pub flow_points: usize,
    pub fd_step: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            samples: 100,
            covelocity_samples: 200,
            euler_samples: 20,
            mc_samples: 10_000,
            test_functions: 20,
            flow_points: 10,
            fd_step: 1e-4,
        }
    }
}

impl VerifyOptions {
    /// Scales every pointwise count from a single base count.
    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self.covelocity_samples = 2 * samples;
        self.euler_samples = (samples / 5).max(1);
        self
    }
}

/// Runs all seven checks in a fixed order: transport, covelocity, metric,
/// determinant, divergence, full_euler, l2_gram. `lift` maps the Gram
/// matrix back to the coordinates of `original` (the certificate's
/// Cholesky factor; the identity for Euclidean models).
pub fn run_all<T: Real>(
    smap: &SMap<T>,
    c: T,
    original: &SymBilinearMap<T>,
    lift: &DMatrix<T>,
    opts: &VerifyOptions,
) -> Result<Vec<ResidualReport>> {
    let base = |stream: u64, count: usize| SampleSpec::new(derive_seed(opts.seed, stream), count);
    let mut y_rng = stream(SampleSpec::new(opts.seed, 0), 9);
    let y = gaussian_vector::<T, _>(&mut y_rng, smap.dim());
    let mut reports = vec![
        check_transport(smap, base(11, opts.samples))?,
        check_covelocity_euler(smap, base(12, opts.covelocity_samples))?,
        check_metric_compat(smap, c, base(13, opts.samples))?,
        check_unit_determinant(smap, c, base(14, opts.samples))?,
        check_divergence(
            smap,
            &y,
            &DivergenceOptions {
                test_functions: opts.test_functions,
                mc: base(15, opts.mc_samples),
                flow_points: opts.flow_points,
            },
        )?,
        check_full_euler(smap, c, base(16, opts.euler_samples), T::lit(opts.fd_step))?,
    ];
    reports.push(check_l2_gram(smap, c, original, lift, base(17, opts.mc_samples))?.0);
    // report the caller's seed, not the derived sub-stream seeds
    for r in &mut reports {
        r.seed = opts.seed;
    }
    Ok(reports)
}
