//! Example quadratic systems (rotor, pump, amplifier, free rigid body) and
//! combinators for assembling larger conservative systems from them.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::certificate::constraint_system;
use crate::error::{Error, Result};
use crate::quadode::{cancellation_residual, InnerProduct, SymBilinearMap};
use crate::sampling::{gaussian, SampleSpec};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GateId {
    Rotor,
    Pump,
    Amplifier,
    RigidBody,
    Custom,
}

impl GateId {
    pub fn name(self) -> &'static str {
        match self {
            GateId::Rotor => "rotor",
            GateId::Pump => "pump",
            GateId::Amplifier => "amplifier",
            GateId::RigidBody => "rigid_body",
            GateId::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rotor" => Ok(GateId::Rotor),
            "pump" => Ok(GateId::Pump),
            "amplifier" => Ok(GateId::Amplifier),
            "rigid_body" | "rigid-body" => Ok(GateId::RigidBody),
            "custom" => Ok(GateId::Custom),
            other => Err(Error::InvalidInput(format!("unknown gate '{other}'"))),
        }
    }

    pub fn builtin() -> [GateId; 4] {
        [GateId::Rotor, GateId::Pump, GateId::Amplifier, GateId::RigidBody]
    }
}

/// A gate with its parameters: `alpha` for rotor/pump/amplifier, the three
/// moments of inertia for the rigid body.
#[derive(Debug, Clone, PartialEq)]
pub enum GateSpec<T: Real> {
    Rotor { alpha: T },
    Pump { alpha: T },
    Amplifier { alpha: T },
    RigidBody { inertia: [T; 3] },
    Custom(SymBilinearMap<T>),
}

impl<T: Real> GateSpec<T> {
    pub fn id(&self) -> GateId {
        match self {
            GateSpec::Rotor { .. } => GateId::Rotor,
            GateSpec::Pump { .. } => GateId::Pump,
            GateSpec::Amplifier { .. } => GateId::Amplifier,
            GateSpec::RigidBody { .. } => GateId::RigidBody,
            GateSpec::Custom(_) => GateId::Custom,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            GateSpec::Rotor { .. } | GateSpec::RigidBody { .. } => 3,
            GateSpec::Pump { .. } | GateSpec::Amplifier { .. } => 2,
            GateSpec::Custom(b) => b.dim(),
        }
    }

    /// Default parameters (`alpha = 1`, inertia `(1, 2, 3)`).
    pub fn default_for(id: GateId) -> Result<Self> {
        let one = T::one();
        Ok(match id {
            GateId::Rotor => GateSpec::Rotor { alpha: one },
            GateId::Pump => GateSpec::Pump { alpha: one },
            GateId::Amplifier => GateSpec::Amplifier { alpha: one },
            GateId::RigidBody => GateSpec::RigidBody {
                inertia: [T::lit(1.0), T::lit(2.0), T::lit(3.0)],
            },
            GateId::Custom => return Err(Error::InvalidInput("custom gate needs a tensor".into())),
        })
    }

    /// Builds a spec from `key=value` parameters (`alpha`, `i1`, `i2`, `i3`).
    pub fn from_params(id: GateId, params: &[(String, T)]) -> Result<Self> {
        let mut spec = Self::default_for(id)?;
        for (key, value) in params {
            match (&mut spec, key.as_str()) {
                (GateSpec::Rotor { alpha } | GateSpec::Pump { alpha } | GateSpec::Amplifier { alpha }, "alpha") => {
                    *alpha = *value
                }
                (GateSpec::RigidBody { inertia }, "i1" | "I1") => inertia[0] = *value,
                (GateSpec::RigidBody { inertia }, "i2" | "I2") => inertia[1] = *value,
                (GateSpec::RigidBody { inertia }, "i3" | "I3") => inertia[2] = *value,
                _ => {
                    return Err(Error::InvalidInput(format!(
                        "parameter '{key}' does not apply to gate '{}'",
                        id.name()
                    )))
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            GateSpec::RigidBody { inertia } => {
                if inertia.iter().any(|i| !(*i > T::zero()) || !i.is_finite()) {
                    return Err(Error::InvalidInput("moments of inertia must be positive".into()));
                }
            }
            GateSpec::Rotor { alpha } | GateSpec::Pump { alpha } | GateSpec::Amplifier { alpha } => {
                if !alpha.is_finite() {
                    return Err(Error::InvalidInput("alpha must be finite".into()));
                }
            }
            GateSpec::Custom(_) => {}
        }
        Ok(())
    }

    /// The inner product conserved by the gate: Euclidean for rotor, pump and
    /// amplifier; kinetic energy `diag(I)` for the rigid body.
    pub fn conserved_inner_product(&self) -> Option<InnerProduct<T>> {
        match self {
            GateSpec::RigidBody { inertia } => Some(InnerProduct::diagonal(inertia)),
            GateSpec::Custom(_) => None,
            _ => Some(InnerProduct::identity(self.dim())),
        }
    }
}

/// Single-monomial tensor helper: `d/dt y_k += c y_i y_j`.
fn monomials<T: Real>(n: usize, terms: &[(usize, usize, usize, T)]) -> SymBilinearMap<T> {
    let mut raw = vec![T::zero(); n * n * n];
    for &(k, i, j, c) in terms {
        raw[(k * n + i) * n + j] += c;
    }
    SymBilinearMap::symmetrize(n, &raw).expect("gate tensor shape")
}

/// Builds the bilinear map of a gate.
pub fn build<T: Real>(spec: &GateSpec<T>) -> Result<SymBilinearMap<T>> {
    spec.validate()?;
    Ok(match spec {
        GateSpec::Rotor { alpha } => monomials(3, &[(0, 1, 2, *alpha), (1, 0, 2, -*alpha)]),
        GateSpec::Pump { alpha } => monomials(2, &[(0, 0, 1, -*alpha), (1, 0, 0, *alpha)]),
        GateSpec::Amplifier { alpha } => monomials(2, &[(0, 1, 1, -*alpha), (1, 0, 1, *alpha)]),
        GateSpec::RigidBody { inertia } => {
            // d/dt w_i = (I_j - I_k) / I_i w_j w_k, (i, j, k) cyclic
            let terms: Vec<_> = (0..3)
                .map(|i| {
                    let (j, k) = ((i + 1) % 3, (i + 2) % 3);
                    (i, j, k, (inertia[j] - inertia[k]) / inertia[i])
                })
                .collect();
            monomials(3, &terms)
        }
        GateSpec::Custom(b) => b.clone(),
    })
}

/// Block-diagonal sum acting on `R^(na + nb)`.
pub fn direct_sum<T: Real>(a: &SymBilinearMap<T>, b: &SymBilinearMap<T>) -> SymBilinearMap<T> {
    let (na, nb) = (a.dim(), b.dim());
    let n = na + nb;
    SymBilinearMap::from_fn(n, |k, i, j| {
        if k < na && i < na && j < na {
            a.coeff(k, i, j)
        } else if k >= na && i >= na && j >= na {
            b.coeff(k - na, i - na, j - na)
        } else {
            T::zero()
        }
    })
    .expect("direct sum shape")
}

/// Block-diagonal inner product matching [`direct_sum`].
pub fn direct_sum_inner<T: Real>(a: &InnerProduct<T>, b: &InnerProduct<T>) -> InnerProduct<T> {
    let (na, nb) = (a.dim(), b.dim());
    let mut g = DMatrix::zeros(na + nb, na + nb);
    g.view_mut((0, 0), (na, na)).copy_from(a.gram());
    g.view_mut((na, na), (nb, nb)).copy_from(b.gram());
    InnerProduct::new(g).expect("block diagonal of symmetric matrices")
}

/// Coupling term `d/dt y_i += c y_j y_k` in composite coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingTerm<T> {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub coefficient: T,
}

impl<T> CouplingTerm<T> {
    pub fn new(i: usize, j: usize, k: usize, coefficient: T) -> Self {
        Self { i, j, k, coefficient }
    }
}

/// Couples two systems through extra quadratic terms on the direct sum.
///
/// The composite must conserve the designated inner product `g`; otherwise
/// the construction is rejected, naming the first monomial of
/// `<B(y,y), y>_g` that fails to cancel and a coupling term that touches it.
pub fn couple<T: Real>(
    a: &SymBilinearMap<T>,
    b: &SymBilinearMap<T>,
    coupling: &[CouplingTerm<T>],
    g: &InnerProduct<T>,
) -> Result<SymBilinearMap<T>> {
    let base = direct_sum(a, b);
    let n = base.dim();
    if g.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: g.dim(),
        });
    }
    let mut raw: Vec<T> = base.coeffs().to_vec();
    for t in coupling {
        if t.i >= n || t.j >= n || t.k >= n {
            return Err(Error::InvalidInput(format!(
                "coupling term ({}, {}, {}) out of range for dimension {n}",
                t.i, t.j, t.k
            )));
        }
        raw[(t.i * n + t.j) * n + t.k] += t.coefficient;
    }
    let composite = SymBilinearMap::symmetrize(n, &raw)?;

    let system = constraint_system(&composite);
    let values = system.apply(g.gram());
    let scale = system.matrix().amax().max(T::one()) * g.gram().amax().max(T::one());
    let tol = T::lit(1e-10) * scale;
    for (row, value) in values.iter().enumerate() {
        if value.abs() > tol {
            let monomial = system.monomials()[row];
            let sorted_term = |t: &CouplingTerm<T>| {
                let mut m = [t.i, t.j, t.k];
                m.sort_unstable();
                m == monomial
            };
            let term = coupling
                .iter()
                .find(|t| sorted_term(t))
                .or_else(|| {
                    coupling
                        .iter()
                        .find(|t| [t.i, t.j, t.k].iter().any(|x| monomial.contains(x)))
                })
                .map(|t| (t.i, t.j, t.k, t.coefficient.as_f64()));
            return Err(Error::UnbalancedCoupling {
                monomial,
                coefficient: value.as_f64(),
                term,
            });
        }
    }
    let residual = cancellation_residual(&composite, g, SampleSpec::default())?;
    if residual >= T::lit(1e-10) {
        return Err(Error::Numerical(format!(
            "coupled system residual {:e} exceeds 1e-10",
            residual.as_f64()
        )));
    }
    Ok(composite)
}

/// Random map conserving the Euclidean norm: a Gaussian tensor with the
/// fully symmetric part of its cubic form removed.
pub fn random_conservative<T: Real, R: Rng + ?Sized>(rng: &mut R, n: usize) -> SymBilinearMap<T> {
    let raw: Vec<T> = (0..n * n * n).map(|_| gaussian(rng)).collect();
    let b = SymBilinearMap::symmetrize(n, &raw).expect("random tensor shape");
    // Full symmetrization of (k, i, j) -> b[k][i][j] is the orthogonal projector
    // onto cubic forms; subtracting it leaves a map with vanishing cubic form.
    let third = T::lit(1.0 / 3.0);
    let sym = |k: usize, i: usize, j: usize| (b.coeff(k, i, j) + b.coeff(i, j, k) + b.coeff(j, k, i)) * third;
    SymBilinearMap::from_fn(n, |k, i, j| b.coeff(k, i, j) - sym(k, i, j)).expect("projected tensor shape")
}

/// Evaluates `B(y,y)` for a gate directly from its displayed equations;
/// used as an independent reference for [`build`].
pub fn reference_rhs<T: Real>(spec: &GateSpec<T>, y: &DVector<T>) -> Option<DVector<T>> {
    Some(match spec {
        GateSpec::Rotor { alpha } => {
            DVector::from_column_slice(&[*alpha * y[1] * y[2], -*alpha * y[0] * y[2], T::zero()])
        }
        GateSpec::Pump { alpha } => DVector::from_column_slice(&[-*alpha * y[0] * y[1], *alpha * y[0] * y[0]]),
        GateSpec::Amplifier { alpha } => DVector::from_column_slice(&[-*alpha * y[1] * y[1], *alpha * y[0] * y[1]]),
        GateSpec::RigidBody { inertia } => {
            let [i1, i2, i3] = *inertia;
            DVector::from_column_slice(&[
                -(i3 - i2) * y[1] * y[2] / i1,
                -(i1 - i3) * y[2] * y[0] / i2,
                -(i2 - i1) * y[0] * y[1] / i3,
            ])
        }
        GateSpec::Custom(_) => return None,
    })
}
