//! Fixed-step integration of `dy/dt = B(y, y)`, closed-form gate solutions,
//! and particle paths `dQ/dt = S(y(t)) Q` on SO(n).

use nalgebra::DVector;
use thiserror::Error;

use crate::embedding::SMap;
use crate::error::{check_dim, Error, Result};
use crate::gates::GateId;
use crate::liegroup::{expm_matrix, OrthMat};
use crate::quadode::{InnerProduct, SymBilinearMap};
use crate::scalar::Real;

/// Maximum fixed-point iterations per implicit midpoint step.
pub const MIDPOINT_MAX_ITERATIONS: usize = 100;

/// Default relative tolerance of the midpoint fixed-point solve.
pub const DEFAULT_FP_TOL: f64 = 1e-15;

/// Sampled solution with energies `<y, y>_G`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory<T: Real> {
    pub times: Vec<T>,
    pub states: Vec<DVector<T>>,
    pub energies: Vec<T>,
}

impl<T: Real> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn push(&mut self, t: T, y: DVector<T>, g: &InnerProduct<T>) {
        self.energies.push(g.inner(&y, &y));
        self.times.push(t);
        self.states.push(y);
    }

    /// Largest `|E(t) - E(0)| / E(0)` (absolute drift when `E(0) = 0`).
    pub fn energy_drift(&self) -> T {
        let Some(&e0) = self.energies.first() else {
            return T::zero();
        };
        let scale = if e0 == T::zero() { T::one() } else { e0.abs() };
        self.energies
            .iter()
            .map(|&e| (e - e0).abs() / scale)
            .fold(T::zero(), |a, b| a.max(b))
    }

    /// Largest spacing between consecutive samples.
    pub fn max_step(&self) -> T {
        self.times
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(T::zero(), |a, b| a.max(b))
    }

    /// Cubic Lagrange interpolation through the four samples nearest `t`
    /// (lower order when fewer samples exist).
    pub fn interpolate(&self, t: T) -> DVector<T> {
        let len = self.len();
        assert!(len > 0, "interpolating an empty trajectory");
        if len == 1 {
            return self.states[0].clone();
        }
        let idx = self.times.partition_point(|&s| s <= t).clamp(1, len - 1);
        let order = len.min(4);
        let start = (idx as isize - (order as isize) / 2).clamp(0, (len - order) as isize) as usize;
        let nodes = start..start + order;
        let mut out = DVector::zeros(self.states[0].len());
        for i in nodes.clone() {
            let mut w = T::one();
            for j in nodes.clone() {
                if j != i {
                    w *= (t - self.times[j]) / (self.times[i] - self.times[j]);
                }
            }
            out += &self.states[i] * w;
        }
        out
    }
}

/// A failed run together with the steps completed before the failure.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationFailure<T: Real> {
    pub reason: String,
    pub partial: Trajectory<T>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError<T: Real> {
    #[error(transparent)]
    Invalid(#[from] Error),
    #[error("integration failed: {}", .0.reason)]
    Failed(IntegrationFailure<T>),
}

impl<T: Real> DynamicsError<T> {
    pub fn partial(&self) -> Option<&Trajectory<T>> {
        match self {
            DynamicsError::Failed(f) => Some(&f.partial),
            DynamicsError::Invalid(_) => None,
        }
    }
}

pub type DynamicsResult<T, V> = std::result::Result<V, DynamicsError<T>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Rk4,
    Midpoint,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rk4" => Ok(Method::Rk4),
            "midpoint" => Ok(Method::Midpoint),
            other => Err(Error::InvalidInput(format!(
                "unknown method '{other}' (rk4 | midpoint)"
            ))),
        }
    }
}

/// Number of steps and the uniform step covering `[t0, t1]`.
fn grid<T: Real>(span: (T, T), step: T) -> Result<(usize, T)> {
    let (t0, t1) = span;
    if !(step > T::zero()) || !step.is_finite() {
        return Err(Error::InvalidInput(format!("step must be positive, got {step}")));
    }
    if !(t1 >= t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::InvalidInput(format!("invalid time span {t0}:{t1}")));
    }
    if t1 == t0 {
        return Ok((0, step));
    }
    let count = ((t1 - t0) / step).round().to_usize().unwrap_or(0).max(1);
    Ok((count, (t1 - t0) / T::lit(count as f64)))
}

fn check_inputs<T: Real>(b: &SymBilinearMap<T>, g: &InnerProduct<T>, y0: &DVector<T>) -> Result<()> {
    check_dim(b.dim(), y0.len())?;
    check_dim(b.dim(), g.dim())?;
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("initial state is not finite".into()));
    }
    Ok(())
}

fn failure<T: Real>(reason: String, partial: Trajectory<T>) -> DynamicsError<T> {
    DynamicsError::Failed(IntegrationFailure { reason, partial })
}

/// Classical fourth-order Runge-Kutta with a fixed step.
pub fn integrate_rk4<T: Real>(
    b: &SymBilinearMap<T>,
    g: &InnerProduct<T>,
    y0: &DVector<T>,
    span: (T, T),
    step: T,
) -> DynamicsResult<T, Trajectory<T>> {
    check_inputs(b, g, y0)?;
    let (count, h) = grid(span, step)?;
    let mut traj = Trajectory::default();
    traj.push(span.0, y0.clone(), g);
    let mut y = y0.clone();
    let half = h * T::lit(0.5);
    let sixth = h / T::lit(6.0);
    for k in 1..=count {
        let k1 = b.rhs(&y);
        let k2 = b.rhs(&(&y + &k1 * half));
        let k3 = b.rhs(&(&y + &k2 * half));
        let k4 = b.rhs(&(&y + &k3 * h));
        y += (k1 + (k2 + k3) * T::lit(2.0) + k4) * sixth;
        let t = span.0 + h * T::lit(k as f64);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(failure(format!("state became non-finite at t = {t}"), traj));
        }
        traj.push(t, y.clone(), g);
    }
    Ok(traj)
}

/// Implicit midpoint rule, solved by fixed-point iteration on the midpoint
/// state. Conserves every quadratic invariant up to the solve tolerance.
pub fn integrate_midpoint<T: Real>(
    b: &SymBilinearMap<T>,
    g: &InnerProduct<T>,
    y0: &DVector<T>,
    span: (T, T),
    step: T,
    fp_tol: T,
) -> DynamicsResult<T, Trajectory<T>> {
    check_inputs(b, g, y0)?;
    if !(fp_tol > T::zero()) {
        return Err(Error::InvalidInput(format!("fixed-point tolerance must be positive, got {fp_tol}")).into());
    }
    let (count, h) = grid(span, step)?;
    let half = h * T::lit(0.5);
    let floor = T::default_epsilon() * T::lit(4.0);
    let mut traj = Trajectory::default();
    traj.push(span.0, y0.clone(), g);
    let mut y = y0.clone();
    for k in 1..=count {
        let t = span.0 + h * T::lit(k as f64);
        let mut mid = &y + b.rhs(&y) * half;
        let mut converged = false;
        for _ in 0..MIDPOINT_MAX_ITERATIONS {
            let next = &y + b.rhs(&mid) * half;
            let change = (&next - &mid).norm();
            let scale = next.norm();
            mid = next;
            if !change.is_finite() {
                break;
            }
            if change <= fp_tol.max(floor) * scale || change == T::zero() {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(failure(
                format!("midpoint fixed-point iteration did not converge at t = {t}; try a smaller step"),
                traj,
            ));
        }
        y = &mid * T::lit(2.0) - &y;
        traj.push(t, y.clone(), g);
    }
    Ok(traj)
}

/// Dispatches to [`integrate_rk4`] or [`integrate_midpoint`].
pub fn integrate<T: Real>(
    method: Method,
    b: &SymBilinearMap<T>,
    g: &InnerProduct<T>,
    y0: &DVector<T>,
    span: (T, T),
    step: T,
) -> DynamicsResult<T, Trajectory<T>> {
    match method {
        Method::Rk4 => integrate_rk4(b, g, y0, span, step),
        Method::Midpoint => integrate_midpoint(b, g, y0, span, step, T::lit(DEFAULT_FP_TOL)),
    }
}

/// Explicit solutions: rotor `params = (A, omega, theta, alpha)` gives
/// `(A sin(alpha omega t + theta), A cos(alpha omega t + theta), omega)`;
/// pump `params = (A, alpha)` gives `(A sech(A alpha t), A tanh(A alpha t))`.
pub fn closed_form<T: Real>(gate: GateId, params: &[T], t: T) -> Result<DVector<T>> {
    match (gate, params) {
        (GateId::Rotor, &[a, omega, theta, alpha]) => {
            let phase = alpha * omega * t + theta;
            Ok(DVector::from_column_slice(&[a * phase.sin(), a * phase.cos(), omega]))
        }
        (GateId::Pump, &[a, alpha]) => {
            let x = a * alpha * t;
            Ok(DVector::from_column_slice(&[a / x.cosh(), a * x.tanh()]))
        }
        (GateId::Rotor, _) => Err(Error::InvalidInput(
            "rotor closed form takes (A, omega, theta, alpha)".into(),
        )),
        (GateId::Pump, _) => Err(Error::InvalidInput("pump closed form takes (A, alpha)".into())),
        (other, _) => Err(Error::InvalidInput(format!(
            "no closed form for gate '{}'",
            other.name()
        ))),
    }
}

/// Particle path `Q_{k+1} = exp(h S(y(t_k + h/2))) Q_k` on the uniform grid
/// of step `step` over the trajectory's span, with `y` interpolated from the
/// trajectory. Returns one rotation per grid time, starting with `q0`.
pub fn particle_flow<T: Real>(
    smap: &SMap<T>,
    traj: &Trajectory<T>,
    q0: &OrthMat<T>,
    step: T,
) -> Result<Vec<OrthMat<T>>> {
    check_dim(smap.dim(), q0.n())?;
    if traj.is_empty() {
        return Err(Error::InvalidInput("empty trajectory".into()));
    }
    check_dim(smap.dim(), traj.states[0].len())?;
    if traj.max_step() > step * (T::one() + T::lit(1e-9)) {
        return Err(Error::InvalidInput(format!(
            "trajectory step {} is coarser than the particle step {step}",
            traj.max_step()
        )));
    }
    let span = (traj.times[0], traj.times[traj.len() - 1]);
    let (count, h) = grid(span, step)?;
    let mut out = Vec::with_capacity(count + 1);
    let mut q = q0.clone();
    out.push(q.clone());
    for k in 0..count {
        let t_mid = span.0 + h * (T::lit(k as f64) + T::lit(0.5));
        let y = traj.interpolate(t_mid);
        q = expm_matrix(&(smap.at(&y) * h))?.mul(&q);
        out.push(q.clone());
    }
    Ok(out)
}
