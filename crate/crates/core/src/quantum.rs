//! Finite-dimensional state-space arithmetic.
//!
//! Composite spaces are ordered tensor products of named factors. Flat basis
//! indices are row-major over the factor digits: the first factor is the most
//! significant digit. All values are immutable after construction and cheap to
//! share across threads (`Arc<HilbertSpace>`).

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Tolerance for the hermiticity flag and normalized-state flag.
pub const EXACT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Factor {
    pub name: String,
    pub dim: usize,
}

/// Ordered tensor product of named subsystems.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HilbertSpace {
    factors: Vec<Factor>,
}

impl HilbertSpace {
    pub fn new<S: Into<String>>(factors: impl IntoIterator<Item = (S, usize)>) -> Result<Self> {
        let factors: Vec<Factor> = factors
            .into_iter()
            .map(|(name, dim)| Factor { name: name.into(), dim })
            .collect();
        if factors.is_empty() {
            return Err(Error::EmptySpace);
        }
        for (i, f) in factors.iter().enumerate() {
            if f.dim == 0 {
                return Err(Error::InvalidParameter(format!("factor `{}` has dimension 0", f.name)));
            }
            if factors[..i].iter().any(|g| g.name == f.name) {
                return Err(Error::DuplicateFactor(f.name.clone()));
            }
        }
        Ok(Self { factors })
    }

    pub fn single(name: impl Into<String>, dim: usize) -> Result<Self> {
        Self::new([(name.into(), dim)])
    }

    pub fn dim(&self) -> usize {
        self.factors.iter().map(|f| f.dim).product()
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn factor_index(&self, name: &str) -> Result<usize> {
        self.factors
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| Error::UnknownFactor(name.to_string()))
    }

    /// Flat index of a basis ket given one digit per factor.
    pub fn index(&self, digits: &[usize]) -> usize {
        assert_eq!(digits.len(), self.factors.len(), "one digit per factor");
        digits.iter().zip(&self.factors).fold(0, |acc, (&d, f)| {
            assert!(d < f.dim, "digit {d} out of range for `{}`", f.name);
            acc * f.dim + d
        })
    }

    /// Inverse of [`HilbertSpace::index`].
    pub fn digits(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.factors.len()];
        for (slot, f) in out.iter_mut().zip(&self.factors).rev() {
            *slot = index % f.dim;
            index /= f.dim;
        }
        out
    }
}

impl fmt::Display for HilbertSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.factors.iter().map(|x| format!("{}({})", x.name, x.dim)).collect();
        write!(f, "{}", parts.join(" ⊗ "))
    }
}

/// Tensor product of spaces in the given order.
pub fn compose(spaces: &[HilbertSpace]) -> Result<HilbertSpace> {
    if spaces.is_empty() {
        return Err(Error::EmptySpace);
    }
    HilbertSpace::new(
        spaces
            .iter()
            .flat_map(|s| s.factors.iter().map(|f| (f.name.clone(), f.dim))),
    )
}

fn same_space(a: &HilbertSpace, b: &HilbertSpace) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::SpaceMismatch(format!("{a} vs {b}")))
    }
}

/// Pure state amplitudes over a composite space.
#[derive(Debug, Clone)]
pub struct StateVector {
    space: Arc<HilbertSpace>,
    amplitudes: CVector,
    normalized: bool,
}

impl StateVector {
    pub fn new(space: Arc<HilbertSpace>, amplitudes: CVector) -> Result<Self> {
        if amplitudes.len() != space.dim() {
            return Err(Error::SpaceMismatch(format!(
                "{} amplitudes for a space of dimension {}",
                amplitudes.len(),
                space.dim()
            )));
        }
        let normalized = (amplitudes.norm_squared() - 1.0).abs() <= EXACT_TOL;
        Ok(Self { space, amplitudes, normalized })
    }

    pub fn basis(space: Arc<HilbertSpace>, digits: &[usize]) -> Self {
        let mut v = CVector::zeros(space.dim());
        v[space.index(digits)] = ONE;
        Self { space, amplitudes: v, normalized: true }
    }

    pub fn zeros(space: Arc<HilbertSpace>) -> Self {
        let v = CVector::zeros(space.dim());
        Self { space, amplitudes: v, normalized: false }
    }

    /// Tensor product `self ⊗ other` on the composed space.
    pub fn tensor(&self, other: &StateVector) -> Result<StateVector> {
        let space = Arc::new(compose(&[(*self.space).clone(), (*other.space).clone()])?);
        let amps = self.amplitudes.kronecker(&other.amplitudes);
        StateVector::new(space, amps)
    }

    pub fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn amplitude(&self, digits: &[usize]) -> C64 {
        self.amplitudes[self.space.index(digits)]
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.norm_squared()
    }

    pub fn normalize(&self) -> Result<StateVector> {
        let n = self.norm();
        if n <= f64::EPSILON {
            return Err(Error::InvalidParameter("cannot normalize the zero vector".into()));
        }
        Ok(Self {
            space: self.space.clone(),
            amplitudes: self.amplitudes.unscale(n),
            normalized: true,
        })
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        same_space(&self.space, &other.space)?;
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }

    pub fn scaled(&self, c: C64) -> StateVector {
        let amps = self.amplitudes.map(|x| x * c);
        StateVector::new(self.space.clone(), amps).expect("same dimension")
    }

    pub fn plus(&self, other: &StateVector) -> Result<StateVector> {
        same_space(&self.space, &other.space)?;
        StateVector::new(self.space.clone(), &self.amplitudes + &other.amplitudes)
    }

    pub fn distance(&self, other: &StateVector) -> Result<f64> {
        same_space(&self.space, &other.space)?;
        Ok((&self.amplitudes - &other.amplitudes).norm())
    }

    pub fn to_density(&self) -> Result<DensityOperator> {
        let psi = self.normalize()?;
        let m = &psi.amplitudes * psi.amplitudes.adjoint();
        DensityOperator::new(self.space.clone(), m)
    }
}

/// Dense operator on a composite space.
#[derive(Debug, Clone)]
pub struct Operator {
    space: Arc<HilbertSpace>,
    matrix: CMatrix,
    hermitian: bool,
}

impl Operator {
    pub fn new(space: Arc<HilbertSpace>, matrix: CMatrix) -> Result<Self> {
        let d = space.dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::SpaceMismatch(format!(
                "{}x{} matrix for a space of dimension {d}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let hermitian = hermiticity_defect(&matrix) <= EXACT_TOL;
        Ok(Self { space, matrix, hermitian })
    }

    pub fn identity(space: Arc<HilbertSpace>) -> Self {
        let d = space.dim();
        Self { space, matrix: CMatrix::identity(d, d), hermitian: true }
    }

    pub fn zeros(space: Arc<HilbertSpace>) -> Self {
        let d = space.dim();
        Self { space, matrix: CMatrix::zeros(d, d), hermitian: true }
    }

    /// Embeds a factor-local operator as `I ⊗ … ⊗ local ⊗ … ⊗ I`.
    pub fn lift(space: Arc<HilbertSpace>, factor: &str, local: &CMatrix) -> Result<Self> {
        let k = space.factor_index(factor)?;
        let fdim = space.factors()[k].dim;
        if local.nrows() != fdim || local.ncols() != fdim {
            return Err(Error::SpaceMismatch(format!(
                "local operator is {}x{}, factor `{factor}` has dimension {fdim}",
                local.nrows(),
                local.ncols()
            )));
        }
        let mut m = CMatrix::identity(1, 1);
        for (i, f) in space.factors().iter().enumerate() {
            let next = if i == k { local.clone() } else { CMatrix::identity(f.dim, f.dim) };
            m = m.kronecker(&next);
        }
        Operator::new(space, m)
    }

    /// `|ket⟩⟨bra|`.
    pub fn outer(ket: &StateVector, bra: &StateVector) -> Result<Self> {
        same_space(&ket.space, &bra.space)?;
        Operator::new(ket.space.clone(), ket.amplitudes() * bra.amplitudes().adjoint())
    }

    pub fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn hermiticity_defect(&self) -> f64 {
        hermiticity_defect(&self.matrix)
    }

    pub fn adjoint(&self) -> Operator {
        Self { space: self.space.clone(), matrix: self.matrix.adjoint(), hermitian: self.hermitian }
    }

    pub fn scaled(&self, c: C64) -> Operator {
        Operator::new(self.space.clone(), self.matrix.map(|x| x * c)).expect("same dimension")
    }

    pub fn plus(&self, other: &Operator) -> Result<Operator> {
        same_space(&self.space, &other.space)?;
        Operator::new(self.space.clone(), &self.matrix + &other.matrix)
    }

    pub fn minus(&self, other: &Operator) -> Result<Operator> {
        same_space(&self.space, &other.space)?;
        Operator::new(self.space.clone(), &self.matrix - &other.matrix)
    }

    /// Operator product `self · other`.
    pub fn times(&self, other: &Operator) -> Result<Operator> {
        same_space(&self.space, &other.space)?;
        Operator::new(self.space.clone(), &self.matrix * &other.matrix)
    }

    pub fn commutator(&self, other: &Operator) -> Result<Operator> {
        self.times(other)?.minus(&other.times(self)?)
    }

    pub fn expectation(&self, psi: &StateVector) -> Result<C64> {
        same_space(&self.space, &psi.space)?;
        Ok(psi.amplitudes.dotc(&(&self.matrix * &psi.amplitudes)))
    }

    /// Induced ∞-norm (maximum absolute row sum).
    pub fn inf_norm(&self) -> f64 {
        self.matrix
            .row_iter()
            .map(|r| r.iter().map(|x| x.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Operator) -> Result<f64> {
        same_space(&self.space, &other.space)?;
        Ok((&self.matrix - &other.matrix).iter().map(|x| x.norm()).fold(0.0, f64::max))
    }
}

fn hermiticity_defect(m: &CMatrix) -> f64 {
    (m - m.adjoint()).iter().map(|x| x.norm()).fold(0.0, f64::max)
}

/// Matrix-vector product.
pub fn apply(op: &Operator, psi: &StateVector) -> Result<StateVector> {
    same_space(&op.space, &psi.space)?;
    StateVector::new(psi.space.clone(), &op.matrix * &psi.amplitudes)
}

/// Result of a projective measurement.
#[derive(Debug, Clone)]
pub struct Measurement {
    pub outcome: usize,
    pub state: StateVector,
    pub probability: f64,
}

/// Samples an outcome with Born probabilities and returns the collapsed state.
pub fn measure_projective<R: Rng + ?Sized>(
    psi: &StateVector,
    projectors: &[Operator],
    rng: &mut R,
) -> Result<Measurement> {
    if projectors.is_empty() {
        return Err(Error::IncompleteProjectors(f64::INFINITY));
    }
    let mut total = Operator::zeros(psi.space.clone());
    for p in projectors {
        total = total.plus(p)?;
    }
    let defect = total.max_abs_diff(&Operator::identity(psi.space.clone()))?;
    if defect > 1e-10 {
        return Err(Error::IncompleteProjectors(defect));
    }
    let psi = psi.normalize()?;
    let probs: Vec<f64> = projectors
        .iter()
        .map(|p| p.expectation(&psi).map(|c| c.re.max(0.0)))
        .collect::<Result<_>>()?;
    let r: f64 = rng.gen::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    let mut outcome = probs.len() - 1;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if r < acc {
            outcome = k;
            break;
        }
    }
    // never return a zero-probability branch because of rounding in the last bucket
    while probs[outcome] <= 0.0 && outcome > 0 {
        outcome -= 1;
    }
    let state = apply(&projectors[outcome], &psi)?.normalize()?;
    Ok(Measurement { outcome, state, probability: probs[outcome] })
}

/// Density operator: Hermitian, unit trace, positive semidefinite.
#[derive(Debug, Clone)]
pub struct DensityOperator {
    space: Arc<HilbertSpace>,
    matrix: CMatrix,
}

impl DensityOperator {
    pub fn new(space: Arc<HilbertSpace>, matrix: CMatrix) -> Result<Self> {
        let d = space.dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::SpaceMismatch("density matrix dimension".into()));
        }
        let herm = hermiticity_defect(&matrix);
        if herm > EXACT_TOL {
            return Err(Error::InvalidDensity(format!("hermiticity defect {herm:.3e}")));
        }
        let tr = matrix.trace();
        if (tr.re - 1.0).abs() > 1e-10 || tr.im.abs() > 1e-10 {
            return Err(Error::InvalidDensity(format!("trace {tr}")));
        }
        let rho = Self { space, matrix };
        let min = rho.eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
        if min < -1e-10 {
            return Err(Error::InvalidDensity(format!("negative eigenvalue {min:.3e}")));
        }
        Ok(rho)
    }

    /// Normalizes a positive semidefinite matrix by its trace; tiny
    /// anti-Hermitian rounding is symmetrized away.
    pub fn from_unnormalized(space: Arc<HilbertSpace>, matrix: CMatrix) -> Result<Self> {
        let tr = matrix.trace().re;
        if tr <= 0.0 {
            return Err(Error::InvalidDensity(format!("non-positive trace {tr}")));
        }
        let m = (&matrix + matrix.adjoint()).unscale(2.0 * tr);
        Self::new(space, m)
    }

    pub fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn purity(&self) -> f64 {
        (&self.matrix * &self.matrix).trace().re
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.matrix.clone().symmetric_eigenvalues().iter().copied().collect()
    }

    /// `⟨ψ|ρ|ψ⟩` for a normalized target.
    pub fn population(&self, target: &StateVector) -> Result<f64> {
        same_space(&self.space, target.space())?;
        let t = target.normalize()?;
        Ok(t.amplitudes.dotc(&(&self.matrix * &t.amplitudes)).re)
    }

    /// Amplitude (square-root) fidelity `√⟨ψ|ρ|ψ⟩`.
    pub fn fidelity_sqrt(&self, target: &StateVector) -> Result<f64> {
        Ok(self.population(target)?.clamp(0.0, 1.0).sqrt())
    }

    /// `U ρ U†`.
    pub fn transformed(&self, u: &Operator) -> Result<DensityOperator> {
        same_space(&self.space, u.space())?;
        let m = u.matrix() * &self.matrix * u.matrix().adjoint();
        DensityOperator::from_unnormalized(self.space.clone(), m)
    }

    pub fn max_abs_diff(&self, other: &DensityOperator) -> Result<f64> {
        same_space(&self.space, &other.space)?;
        Ok((&self.matrix - &other.matrix).iter().map(|x| x.norm()).fold(0.0, f64::max))
    }
}

/// Traces out every factor not named in `keep`; kept factors retain their order.
pub fn partial_trace(rho: &DensityOperator, keep: &[&str]) -> Result<DensityOperator> {
    let space = rho.space();
    let mut kept = Vec::with_capacity(keep.len());
    for name in keep {
        kept.push(space.factor_index(name)?);
    }
    kept.sort_unstable();
    kept.dedup();
    let reduced = HilbertSpace::new(
        kept.iter()
            .map(|&k| (space.factors()[k].name.clone(), space.factors()[k].dim)),
    )?;
    let d = space.dim();
    let split: Vec<(usize, usize)> = (0..d)
        .map(|i| {
            let digits = space.digits(i);
            let (mut ki, mut ti) = (0usize, 0usize);
            for (f, (&dg, fac)) in digits.iter().zip(space.factors()).enumerate() {
                if kept.contains(&f) {
                    ki = ki * fac.dim + dg;
                } else {
                    ti = ti * fac.dim + dg;
                }
            }
            (ki, ti)
        })
        .collect();
    let rd = reduced.dim();
    let mut m = CMatrix::zeros(rd, rd);
    for i in 0..d {
        for j in 0..d {
            if split[i].1 == split[j].1 {
                m[(split[i].0, split[j].0)] += rho.matrix()[(i, j)];
            }
        }
    }
    DensityOperator::from_unnormalized(Arc::new(reduced), m)
}
