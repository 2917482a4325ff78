//! Level schemes, Hamiltonians and dark states of the two atom–cavity systems.
//!
//! Both systems live on `atom ⊗ cav_L ⊗ cav_R`, each cavity mode truncated to
//! `{0, 1}` photons. Rates are in units of κ:
//! `Ωᵢ(t) = C_Ωᵢ · g₀ · s · Ẽ(t)` and `g = C_g · g₀ · s`, with `g₀` the bare
//! coupling magnitude and `s` the spatial-mode value at the atom.

use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pulses::{AliceBranch, CgTable, DrivePulse, MixingAngleTrack, Polarization};
use crate::quadrature::trapezoid;
use crate::quantum::{CMatrix, CVector, HilbertSpace, Operator, StateVector, C64, I, ONE, ZERO};

pub const ATOM: &str = "atom";
pub const CAV_L: &str = "cav_L";
pub const CAV_R: &str = "cav_R";

/// Basis indices of Alice's atom.
pub mod alice_level {
    pub const G0: usize = 0;
    pub const G1: usize = 1;
    pub const E0: usize = 2;
    pub const E1: usize = 3;
    pub const R: usize = 4;
}

/// Basis indices of Bob's atom.
pub mod bob_level {
    pub const G: usize = 0;
    pub const E: usize = 1;
    pub const ZERO: usize = 2;
    pub const ONE: usize = 3;
}

/// Which CG factor scales a transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CgKey {
    Omega0,
    Omega1,
    Omega2,
    G1,
    G2,
}

impl CgKey {
    pub fn value(&self, cg: &CgTable) -> f64 {
        match self {
            CgKey::Omega0 => cg.c_omega0,
            CgKey::Omega1 => cg.c_omega1,
            CgKey::Omega2 => cg.c_omega2,
            CgKey::G1 => cg.c_g1,
            CgKey::G2 => cg.c_g2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Coupling {
    /// Classical drive: `iΩ(σ - σ†)`.
    Drive { cg: CgKey },
    /// Cavity mode: `-ig(a†σ - σ†a)`.
    Cavity { cg: CgKey, polarization: Polarization },
}

/// `σ = |lower⟩⟨upper|` coupled by a drive or a cavity mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transition {
    pub lower: String,
    pub upper: String,
    pub coupling: Coupling,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelScheme {
    pub levels: Vec<String>,
    pub transitions: Vec<Transition>,
}

impl LevelScheme {
    pub fn level_index(&self, label: &str) -> Result<usize> {
        self.levels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown level `{label}`")))
    }

    /// Levels that appear as the upper end of some transition.
    pub fn excited_levels(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .transitions
            .iter()
            .filter_map(|t| self.level_index(&t.upper).ok())
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    fn edge_counts(&self, level: &str) -> (usize, usize) {
        let relevant = self.transitions.iter().filter(|t| t.upper == level);
        relevant.fold((0, 0), |(d, c), t| match t.coupling {
            Coupling::Drive { .. } => (d + 1, c),
            Coupling::Cavity { .. } => (d, c + 1),
        })
    }

    fn check_labels(&self) -> Result<()> {
        for (i, l) in self.levels.iter().enumerate() {
            if self.levels[..i].contains(l) {
                return Err(Error::InvalidParameter(format!("duplicate level `{l}`")));
            }
        }
        for t in &self.transitions {
            self.level_index(&t.lower)?;
            self.level_index(&t.upper)?;
        }
        Ok(())
    }

    fn check_excited(&self, drives: usize, cavities: usize) -> Result<()> {
        for &k in &self.excited_levels() {
            let label = &self.levels[k];
            if self.edge_counts(label) != (drives, cavities) {
                return Err(Error::InvalidParameter(format!(
                    "excited level `{label}` needs {drives} drive and {cavities} cavity edges"
                )));
            }
        }
        Ok(())
    }
}

/// Atom 1: two independent Λ-branches `g₀→e₀→r` (L photon) and `g₁→e₁→r` (R photon).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AliceLevelScheme(pub LevelScheme);

impl Default for AliceLevelScheme {
    fn default() -> Self {
        let t = |lower: &str, upper: &str, coupling| Transition { lower: lower.into(), upper: upper.into(), coupling };
        Self(LevelScheme {
            levels: ["g0", "g1", "e0", "e1", "r"].map(String::from).to_vec(),
            transitions: vec![
                t("g0", "e0", Coupling::Drive { cg: CgKey::Omega0 }),
                t("g1", "e1", Coupling::Drive { cg: CgKey::Omega1 }),
                t("r", "e0", Coupling::Cavity { cg: CgKey::G1, polarization: Polarization::Left }),
                t("r", "e1", Coupling::Cavity { cg: CgKey::G1, polarization: Polarization::Right }),
            ],
        })
    }
}

impl AliceLevelScheme {
    pub fn validate(&self) -> Result<()> {
        self.0.check_labels()?;
        self.0.check_excited(1, 1)
    }
}

/// Atom 2: one excited level driven from `g` decaying to `1` (L photon) or `0` (R photon).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BobLevelScheme(pub LevelScheme);

impl Default for BobLevelScheme {
    fn default() -> Self {
        let t = |lower: &str, upper: &str, coupling| Transition { lower: lower.into(), upper: upper.into(), coupling };
        Self(LevelScheme {
            levels: ["g", "e", "0", "1"].map(String::from).to_vec(),
            transitions: vec![
                t("g", "e", Coupling::Drive { cg: CgKey::Omega2 }),
                t("1", "e", Coupling::Cavity { cg: CgKey::G2, polarization: Polarization::Left }),
                t("0", "e", Coupling::Cavity { cg: CgKey::G2, polarization: Polarization::Right }),
            ],
        })
    }
}

impl BobLevelScheme {
    pub fn validate(&self) -> Result<()> {
        self.0.check_labels()?;
        self.0.check_excited(1, 2)?;
        if self.0.excited_levels().len() != 1 {
            return Err(Error::InvalidParameter("tripod scheme needs exactly one excited level".into()));
        }
        Ok(())
    }
}

/// Physical parameters of one atom–cavity system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemParams {
    pub cg: CgTable,
    /// Cavity field decay rate κ.
    pub kappa: f64,
    /// Spontaneous-emission rate of the excited levels.
    pub gamma: f64,
    /// Bare coupling magnitude `g₀` in units of κ.
    pub coupling: f64,
    /// Spatial-mode value `s = S(r)` at the atom.
    pub spatial: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self { cg: CgTable::default(), kappa: 1.0, gamma: 0.0, coupling: 5.0, spatial: 1.0 }
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        self.cg.validate()?;
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidParameter(format!("kappa = {} must be positive", self.kappa)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma = {} must be non-negative", self.gamma)));
        }
        if !(self.coupling > 0.0 && self.coupling.is_finite()) {
            return Err(Error::InvalidParameter(format!("coupling = {} must be positive", self.coupling)));
        }
        if !(self.spatial > 0.0 && self.spatial <= 1.0) {
            return Err(Error::InvalidParameter(format!("spatial mode value {} outside (0, 1]", self.spatial)));
        }
        Ok(())
    }

    fn scale(&self) -> f64 {
        self.coupling * self.spatial
    }

    pub fn rate(&self, key: CgKey) -> f64 {
        key.value(&self.cg) * self.scale()
    }

    pub fn omega_alice(&self, branch: AliceBranch, e: f64) -> f64 {
        self.cg.drive(branch) * self.scale() * e
    }

    pub fn g_alice(&self) -> f64 {
        self.rate(CgKey::G1)
    }

    pub fn omega_bob(&self, e: f64) -> f64 {
        self.rate(CgKey::Omega2) * e
    }

    pub fn g_bob(&self) -> f64 {
        self.rate(CgKey::G2)
    }

    /// Mixing-angle track of Alice's branch from the physical rates.
    pub fn alice_track(&self, pulse: &DrivePulse, branch: AliceBranch) -> Result<MixingAngleTrack> {
        let omega: Vec<f64> = pulse.samples().iter().map(|&e| self.omega_alice(branch, e)).collect();
        MixingAngleTrack::from_rates(*pulse.grid(), &omega, self.g_alice().abs())
    }

    /// Bob's track: effective coupling `√2·g₂` of the symmetric photon state.
    pub fn bob_track(&self, pulse: &DrivePulse) -> Result<MixingAngleTrack> {
        let omega: Vec<f64> = pulse.samples().iter().map(|&e| self.omega_bob(e)).collect();
        MixingAngleTrack::from_rates(*pulse.grid(), &omega, SQRT_2 * self.g_bob().abs())
    }
}

/// `|cos(2πx/λ)|`: spatial-mode value of a standing wave at position `x`.
pub fn standing_wave_coupling(x: f64, wavelength: f64) -> Result<f64> {
    if !(wavelength > 0.0) {
        return Err(Error::InvalidParameter(format!("wavelength {wavelength} must be positive")));
    }
    Ok((2.0 * PI * x / wavelength).cos().abs())
}

/// Qubit amplitudes `a|0⟩ + b|1⟩`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Qubit {
    pub a: C64,
    pub b: C64,
}

impl Qubit {
    pub fn new(a: C64, b: C64) -> Result<Self> {
        let n = a.norm_sqr() + b.norm_sqr();
        if (n - 1.0).abs() > 1e-10 {
            return Err(Error::NotNormalized(n));
        }
        Ok(Self { a, b })
    }

    /// `cos(θ/2)|0⟩ + e^{iφ} sin(θ/2)|1⟩`.
    pub fn from_bloch(theta: f64, phi: f64) -> Self {
        Self { a: C64::new((theta / 2.0).cos(), 0.0), b: C64::from_polar((theta / 2.0).sin(), phi) }
    }

    pub fn vector(&self) -> CVector {
        CVector::from_vec(vec![self.a, self.b])
    }
}

pub fn alice_space() -> Arc<HilbertSpace> {
    Arc::new(HilbertSpace::new([(ATOM, 5), (CAV_L, 2), (CAV_R, 2)]).expect("static layout"))
}

pub fn bob_space() -> Arc<HilbertSpace> {
    Arc::new(HilbertSpace::new([(ATOM, 4), (CAV_L, 2), (CAV_R, 2)]).expect("static layout"))
}

/// Labelled dissipation channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    #[serde(rename = "cavA-L")]
    AliceL,
    #[serde(rename = "cavA-R")]
    AliceR,
    #[serde(rename = "cavB-L")]
    BobL,
    #[serde(rename = "cavB-R")]
    BobR,
    #[serde(rename = "spontaneous")]
    Spontaneous,
}

impl Channel {
    pub fn label(&self) -> &'static str {
        match self {
            Channel::AliceL => "cavA-L",
            Channel::AliceR => "cavA-R",
            Channel::BobL => "cavB-L",
            Channel::BobR => "cavB-R",
            Channel::Spontaneous => "spontaneous",
        }
    }

    pub fn is_cavity(&self) -> bool {
        !matches!(self, Channel::Spontaneous)
    }

    pub fn polarization(&self) -> Option<Polarization> {
        match self {
            Channel::AliceL | Channel::BobL => Some(Polarization::Left),
            Channel::AliceR | Channel::BobR => Some(Polarization::Right),
            Channel::Spontaneous => None,
        }
    }
}

/// Jump operator `L` (already including `√rate`).
#[derive(Debug, Clone)]
pub struct DecayChannel {
    pub channel: Channel,
    pub operator: Operator,
    /// Terminal jumps end the trajectory (state flagged lost).
    pub terminal: bool,
}

/// `H(Ẽ) = H_static + Ẽ · H_drive` with its decay channels.
#[derive(Debug, Clone)]
pub struct DrivenSystem {
    space: Arc<HilbertSpace>,
    static_part: Operator,
    drive_part: Operator,
    channels: Vec<DecayChannel>,
}

impl DrivenSystem {
    pub fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    pub fn static_part(&self) -> &Operator {
        &self.static_part
    }

    pub fn drive_part(&self) -> &Operator {
        &self.drive_part
    }

    pub fn channels(&self) -> &[DecayChannel] {
        &self.channels
    }

    pub fn hamiltonian(&self, e: f64) -> Operator {
        let m = self.static_part.matrix() + self.drive_part.matrix() * C64::new(e, 0.0);
        Operator::new(self.space.clone(), m).expect("same space")
    }

    /// Annihilation operator of one cavity mode, lifted to the full space.
    pub fn annihilator(&self, polarization: Polarization) -> Operator {
        Operator::lift(self.space.clone(), cavity_factor(polarization), &lowering(2)).expect("cavity factor")
    }
}

fn cavity_factor(p: Polarization) -> &'static str {
    match p {
        Polarization::Left => CAV_L,
        Polarization::Right => CAV_R,
    }
}

fn lowering(dim: usize) -> CMatrix {
    let mut m = CMatrix::zeros(dim, dim);
    for n in 1..dim {
        m[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    m
}

fn ket_bra(dim: usize, i: usize, j: usize) -> CMatrix {
    let mut m = CMatrix::zeros(dim, dim);
    m[(i, j)] = ONE;
    m
}

fn build_system(
    scheme: &LevelScheme,
    space: Arc<HilbertSpace>,
    params: &SystemParams,
    cavity_channels: [Channel; 2],
) -> Result<DrivenSystem> {
    params.validate()?;
    let n = scheme.levels.len();
    let d = space.dim();
    let mut static_m = CMatrix::zeros(d, d);
    let mut drive_m = CMatrix::zeros(d, d);
    for t in &scheme.transitions {
        let sigma_local = ket_bra(n, scheme.level_index(&t.lower)?, scheme.level_index(&t.upper)?);
        let sigma = Operator::lift(space.clone(), ATOM, &sigma_local)?;
        match t.coupling {
            Coupling::Drive { cg } => {
                let rate = params.rate(cg);
                let term = (sigma.matrix() - sigma.matrix().adjoint()) * (I * rate);
                drive_m += term;
            }
            Coupling::Cavity { cg, polarization } => {
                let g = params.rate(cg);
                let a = Operator::lift(space.clone(), cavity_factor(polarization), &lowering(2))?;
                let x = a.matrix().adjoint() * sigma.matrix();
                static_m += (&x - x.adjoint()) * (-I * g);
            }
        }
    }
    let mut channels = Vec::new();
    for (channel, pol) in cavity_channels.into_iter().zip([Polarization::Left, Polarization::Right]) {
        let a = Operator::lift(space.clone(), cavity_factor(pol), &lowering(2))?;
        channels.push(DecayChannel { channel, operator: a.scaled(C64::new(params.kappa.sqrt(), 0.0)), terminal: false });
    }
    if params.gamma > 0.0 {
        for k in scheme.excited_levels() {
            let p = Operator::lift(space.clone(), ATOM, &ket_bra(n, k, k))?;
            channels.push(DecayChannel {
                channel: Channel::Spontaneous,
                operator: p.scaled(C64::new(params.gamma.sqrt(), 0.0)),
                terminal: true,
            });
        }
    }
    Ok(DrivenSystem {
        static_part: Operator::new(space.clone(), static_m)?,
        drive_part: Operator::new(space.clone(), drive_m)?,
        space,
        channels,
    })
}

pub fn alice_system(params: &SystemParams) -> Result<DrivenSystem> {
    let scheme = AliceLevelScheme::default();
    alice_system_with(&scheme, params)
}

pub fn alice_system_with(scheme: &AliceLevelScheme, params: &SystemParams) -> Result<DrivenSystem> {
    scheme.validate()?;
    build_system(&scheme.0, alice_space(), params, [Channel::AliceL, Channel::AliceR])
}

pub fn bob_system(params: &SystemParams) -> Result<DrivenSystem> {
    let scheme = BobLevelScheme::default();
    bob_system_with(&scheme, params)
}

pub fn bob_system_with(scheme: &BobLevelScheme, params: &SystemParams) -> Result<DrivenSystem> {
    scheme.validate()?;
    build_system(&scheme.0, bob_space(), params, [Channel::BobL, Channel::BobR])
}

/// Alice's Hamiltonian at drive envelope `Ẽ₁`.
pub fn build_h1(params: &SystemParams, e1: f64) -> Result<Operator> {
    Ok(alice_system(params)?.hamiltonian(e1))
}

/// Bob's Hamiltonian at drive envelope `Ẽ₂`.
pub fn build_h2(params: &SystemParams, e2: f64) -> Result<Operator> {
    Ok(bob_system(params)?.hamiltonian(e2))
}

fn state_from(space: Arc<HilbertSpace>, entries: &[(&[usize], C64)]) -> StateVector {
    let mut v = CVector::zeros(space.dim());
    for (digits, amp) in entries {
        v[space.index(digits)] += *amp;
    }
    StateVector::new(space, v).expect("dimension matches")
}

fn real(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Normalized dark state of branch `i`: `(g₁|gᵢ,0⟩ + Ωᵢ|r,pol⟩)/√(g₁² + Ωᵢ²)`.
pub fn dark_state_alice(params: &SystemParams, e1: f64, branch: AliceBranch) -> StateVector {
    let g = params.g_alice();
    let omega = params.omega_alice(branch, e1);
    let norm = g.hypot(omega);
    alice_branch_state(branch, g / norm, omega / norm)
}

fn alice_branch_state(branch: AliceBranch, cos: f64, sin: f64) -> StateVector {
    use alice_level::*;
    let (ground, photon): (usize, [usize; 2]) = match branch {
        AliceBranch::Zero => (G0, [1, 0]),
        AliceBranch::One => (G1, [0, 1]),
    };
    state_from(alice_space(), &[(&[ground, 0, 0], real(cos)), (&[R, photon[0], photon[1]], real(sin))])
}

/// `(√2 g₂|g,0⟩ + Ω₂(|0,R⟩ + |1,L⟩)/√2) / √(2g₂² + Ω₂²)`.
pub fn dark_state_bob(params: &SystemParams, e2: f64) -> StateVector {
    let g = SQRT_2 * params.g_bob();
    let omega = params.omega_bob(e2);
    let norm = g.hypot(omega);
    bob_track_state(g / norm, omega / norm)
}

fn bob_track_state(cos: f64, sin: f64) -> StateVector {
    use bob_level::*;
    let half = sin / SQRT_2;
    state_from(
        bob_space(),
        &[(&[G, 0, 0], real(cos)), (&[ZERO, 0, 1], real(half)), (&[ONE, 1, 0], real(half))],
    )
}

/// `a cosθ₀|g₀,0⟩ + b cosθ₁|g₁,0⟩ + |r⟩(a sinθ₀|L⟩ + b sinθ₁|R⟩)` at sample `k`.
pub fn adiabatic_state_alice(
    q: &Qubit,
    track0: &MixingAngleTrack,
    track1: &MixingAngleTrack,
    k: usize,
) -> Result<StateVector> {
    Qubit::new(q.a, q.b)?;
    if track0.grid() != track1.grid() {
        return Err(Error::GridMismatch);
    }
    let (s0, s1) = (track0.angle(k), track1.angle(k));
    let d0 = alice_branch_state(AliceBranch::Zero, s0.cos, s0.sin);
    let d1 = alice_branch_state(AliceBranch::One, s1.cos, s1.sin);
    d0.scaled(q.a).plus(&d1.scaled(q.b))
}

/// `cosθ₂|g,0⟩ + sinθ₂(|0,R⟩ + |1,L⟩)/√2` at sample `k`.
pub fn adiabatic_state_bob(track: &MixingAngleTrack, k: usize) -> StateVector {
    let s = track.angle(k);
    bob_track_state(s.cos, s.sin)
}

/// `(a|g₀⟩ + b|g₁⟩)|0,0⟩`.
pub fn alice_initial_state(q: &Qubit) -> StateVector {
    use alice_level::*;
    state_from(alice_space(), &[(&[G0, 0, 0], q.a), (&[G1, 0, 0], q.b)])
}

/// `|g⟩|0,0⟩`.
pub fn bob_initial_state() -> StateVector {
    StateVector::basis(bob_space(), &[bob_level::G, 0, 0])
}

/// Geometric and dynamical phases accumulated along a dark-state track.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseCheck {
    pub berry: f64,
    pub dynamical: f64,
}

/// `i∫⟨D|∂D⟩` from discrete overlaps and `∫⟨D|H|D⟩` by quadrature.
pub fn phase_check(states: &[StateVector], hamiltonians: &[Operator], dt: f64) -> Result<PhaseCheck> {
    if states.len() != hamiltonians.len() || states.len() < 2 {
        return Err(Error::GridMismatch);
    }
    let mut berry = 0.0;
    for w in states.windows(2) {
        berry -= w[0].inner(&w[1])?.arg();
    }
    let energies = states
        .iter()
        .zip(hamiltonians)
        .map(|(d, h)| h.expectation(d).map(|e| e.re))
        .collect::<Result<Vec<f64>>>()?;
    Ok(PhaseCheck { berry, dynamical: trapezoid(&energies, dt) })
}

pub fn phase_check_alice(params: &SystemParams, pulse: &DrivePulse, branch: AliceBranch) -> Result<PhaseCheck> {
    let sys = alice_system(params)?;
    let states: Vec<StateVector> = pulse.samples().iter().map(|&e| dark_state_alice(params, e, branch)).collect();
    let hs: Vec<Operator> = pulse.samples().iter().map(|&e| sys.hamiltonian(e)).collect();
    phase_check(&states, &hs, pulse.grid().dt())
}

pub fn phase_check_bob(params: &SystemParams, pulse: &DrivePulse) -> Result<PhaseCheck> {
    let sys = bob_system(params)?;
    let states: Vec<StateVector> = pulse.samples().iter().map(|&e| dark_state_bob(params, e)).collect();
    let hs: Vec<Operator> = pulse.samples().iter().map(|&e| sys.hamiltonian(e)).collect();
    phase_check(&states, &hs, pulse.grid().dt())
}

/// Result of the two-pulse Raman preparation of Alice's atom.
#[derive(Debug, Clone)]
pub struct Preparation {
    /// State of the 5-level atom: `a|g₀⟩ + b|g₁⟩`.
    pub atom: StateVector,
    /// Pulse area of the first (state-splitting) Raman pulse.
    pub first_area: f64,
    /// Pulse area of the transfer pulse (π).
    pub second_area: f64,
}

/// Two Raman pulses on `{g₀, 0, g₁}` starting from `|g₀⟩`.
///
/// Step one rotates `|g₀⟩ → a|g₀⟩ + i·b|0⟩`; the π pulse `exp(-iπσₓ/2)` then
/// maps `|0⟩ → -i|g₁⟩`, which the factor `i` compensates.
pub fn prepare_initial_state(q: &Qubit) -> Result<Preparation> {
    let q = Qubit::new(q.a, q.b)?;
    let b1 = I * q.b;
    let mut u1 = CMatrix::identity(3, 3);
    u1[(0, 0)] = q.a;
    u1[(1, 0)] = b1;
    u1[(0, 1)] = -b1.conj();
    u1[(1, 1)] = q.a.conj();
    let mut u2 = CMatrix::identity(3, 3);
    u2[(1, 1)] = ZERO;
    u2[(2, 2)] = ZERO;
    u2[(1, 2)] = -I;
    u2[(2, 1)] = -I;
    let start = CVector::from_vec(vec![ONE, ZERO, ZERO]);
    let out = u2 * (u1 * start);
    let atom_space = Arc::new(HilbertSpace::single(ATOM, 5)?);
    let mut v = CVector::zeros(5);
    v[alice_level::G0] = out[0];
    v[alice_level::G1] = out[2];
    if out[1].norm() > 1e-12 {
        return Err(Error::InvalidParameter("population left in the auxiliary level".into()));
    }
    Ok(Preparation {
        atom: StateVector::new(atom_space, v)?,
        first_area: 2.0 * q.a.norm().clamp(0.0, 1.0).acos(),
        second_area: PI,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pulses::PulseConfig;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn null_residual(h: &Operator, d: &StateVector) -> f64 {
        (h.matrix() * d.amplitudes()).norm()
    }

    #[test]
    fn schemes_validate() {
        AliceLevelScheme::default().validate().unwrap();
        BobLevelScheme::default().validate().unwrap();
        let mut broken = AliceLevelScheme::default();
        broken.0.transitions.pop();
        assert!(broken.validate().is_err());
        let mut unknown = BobLevelScheme::default();
        unknown.0.transitions[0].lower = "x".into();
        assert!(unknown.validate().is_err());
    }

    #[test]
    fn undriven_h1_couples_only_cavity_transitions() {
        let h = build_h1(&SystemParams::default(), 0.0).unwrap();
        let space = alice_space();
        use alice_level::*;
        for i in 0..space.dim() {
            for j in 0..space.dim() {
                if h.matrix()[(i, j)].norm() > 0.0 {
                    let (di, dj) = (space.digits(i), space.digits(j));
                    let mut pair = [di[0], dj[0]];
                    pair.sort_unstable();
                    assert!(pair == [E0, R] || pair == [E1, R], "unexpected coupling {di:?} {dj:?}");
                }
            }
        }
    }

    #[test]
    fn hamiltonians_are_hermitian() {
        let p = SystemParams { spatial: 0.7, ..SystemParams::default() };
        for e in [0.0, 0.3, 1.7, 12.0] {
            assert!(build_h1(&p, e).unwrap().hermiticity_defect() <= 1e-12);
            assert!(build_h2(&p, e).unwrap().hermiticity_defect() <= 1e-12);
        }
    }

    #[test]
    fn dark_states_limits() {
        let p = SystemParams::default();
        let d = dark_state_bob(&p, 0.0);
        assert_abs_diff_eq!(d.amplitude(&[bob_level::G, 0, 0]).re, 1.0, epsilon = 1e-15);
        // Ω₂/g₂ = 100
        let e = 100.0 * p.g_bob() / p.rate(CgKey::Omega2);
        let d = dark_state_bob(&p, e);
        let target = adiabatic_state_bob(
            &MixingAngleTrack::from_rates(crate::pulses::TimeGrid::new(1.0, 2).unwrap(), &[1.0, 1.0, 1.0], 1e-300).unwrap(),
            0,
        );
        let f = d.inner(&target).unwrap().norm_sqr();
        assert!(1.0 - f < 1e-3);
        let d0 = dark_state_alice(&p, 1.3, AliceBranch::Zero);
        let d1 = dark_state_alice(&p, 1.3, AliceBranch::One);
        assert_eq!(d0.inner(&d1).unwrap().norm(), 0.0);
    }

    #[test]
    fn adiabatic_state_examples() {
        let grid = crate::pulses::TimeGrid::new(1.0, 2).unwrap();
        let t0 = MixingAngleTrack::from_rates(grid, &[0.0, 1.0, 1e300], 1.0).unwrap();
        let s = 0.5f64.sqrt();
        let q = Qubit::new(C64::new(0.6, 0.0), C64::new(0.0, 0.8)).unwrap();
        let start = adiabatic_state_alice(&q, &t0, &t0, 0).unwrap();
        assert!(start.distance(&alice_initial_state(&q)).unwrap() < 1e-15);
        let end = adiabatic_state_alice(&q, &t0, &t0, 2).unwrap();
        assert_abs_diff_eq!(end.amplitude(&[alice_level::R, 1, 0]).re, 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(end.amplitude(&[alice_level::R, 0, 1]).im, 0.8, epsilon = 1e-12);
        let one = Qubit::new(ONE, ZERO).unwrap();
        let mid = adiabatic_state_alice(&one, &t0, &t0, 1).unwrap();
        assert_abs_diff_eq!(mid.amplitude(&[alice_level::G0, 0, 0]).re, s, epsilon = 1e-15);
        assert_abs_diff_eq!(mid.amplitude(&[alice_level::R, 1, 0]).re, s, epsilon = 1e-15);
        assert!(adiabatic_state_alice(&Qubit { a: ONE, b: ONE }, &t0, &t0, 0).is_err());

        let b = adiabatic_state_bob(&t0, 1);
        assert_abs_diff_eq!(b.amplitude(&[bob_level::G, 0, 0]).norm_sqr(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(b.amplitude(&[bob_level::ZERO, 0, 1]).norm_sqr(), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(b.amplitude(&[bob_level::ONE, 1, 0]).norm_sqr(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn adiabatic_states_match_dark_states_on_pulse() {
        let p = SystemParams::default();
        let pulse = PulseConfig::default().alice_pulse(&p.cg).unwrap();
        let t0 = p.alice_track(&pulse, AliceBranch::Zero).unwrap();
        let t1 = p.alice_track(&pulse, AliceBranch::One).unwrap();
        let q = Qubit::from_bloch(1.1, 0.4);
        for k in (0..pulse.samples().len()).step_by(250) {
            let e = pulse.samples()[k];
            let want = dark_state_alice(&p, e, AliceBranch::Zero)
                .scaled(q.a)
                .plus(&dark_state_alice(&p, e, AliceBranch::One).scaled(q.b))
                .unwrap();
            let got = adiabatic_state_alice(&q, &t0, &t1, k).unwrap();
            assert!(got.distance(&want).unwrap() < 1e-12);
            let tb = p.bob_track(&pulse).unwrap();
            assert!(adiabatic_state_bob(&tb, k).distance(&dark_state_bob(&p, e)).unwrap() < 1e-12);
        }
    }

    #[test]
    fn phases_vanish_on_default_pulse() {
        let p = SystemParams::default();
        let pulse = PulseConfig::default().alice_pulse(&p.cg).unwrap();
        for branch in [AliceBranch::Zero, AliceBranch::One] {
            let c = phase_check_alice(&p, &pulse, branch).unwrap();
            assert!(c.berry.abs() < 1e-6 && c.dynamical.abs() < 1e-6, "{c:?}");
        }
        let c = phase_check_bob(&p, &pulse).unwrap();
        assert!(c.berry.abs() < 1e-6 && c.dynamical.abs() < 1e-6);
    }

    #[test]
    fn preparation_examples() {
        let s = 0.5f64.sqrt();
        let cases = [
            (ONE, ZERO),
            (ZERO, ONE),
            (C64::new(s, 0.0), C64::new(0.0, s)),
        ];
        for (a, b) in cases {
            let prep = prepare_initial_state(&Qubit::new(a, b).unwrap()).unwrap();
            let v = prep.atom.amplitudes();
            assert!((v[alice_level::G0] - a).norm() < 1e-12);
            assert!((v[alice_level::G1] - b).norm() < 1e-12);
            assert_abs_diff_eq!(prep.atom.norm(), 1.0, epsilon = 1e-12);
            assert_eq!(prep.second_area, PI);
        }
        assert!(prepare_initial_state(&Qubit { a: ONE, b: ONE }).is_err());
    }

    #[test]
    fn initial_sector_never_reaches_two_photons() {
        let check = |h: &Operator, start: Vec<usize>| {
            let space = h.space().clone();
            let mut reached = start;
            let mut k = 0;
            while k < reached.len() {
                let j = reached[k];
                for i in 0..space.dim() {
                    if h.matrix()[(i, j)] != ZERO && !reached.contains(&i) {
                        reached.push(i);
                    }
                }
                k += 1;
            }
            for i in reached {
                let d = space.digits(i);
                assert!(d[1] + d[2] < 2, "reached two-photon state {d:?}");
            }
        };
        let p = SystemParams::default();
        let a = alice_space();
        check(
            &build_h1(&p, 2.0).unwrap(),
            vec![a.index(&[alice_level::G0, 0, 0]), a.index(&[alice_level::G1, 0, 0])],
        );
        check(&build_h2(&p, 2.0).unwrap(), vec![bob_space().index(&[bob_level::G, 0, 0])]);
    }

    #[test]
    fn standing_wave() {
        assert_abs_diff_eq!(standing_wave_coupling(0.0, 1.0).unwrap(), 1.0);
        assert_abs_diff_eq!(standing_wave_coupling(0.25, 1.0).unwrap(), 0.0, epsilon = 1e-15);
        assert!(standing_wave_coupling(0.1, 0.0).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(SystemParams { spatial: 0.0, ..SystemParams::default() }.validate().is_err());
        assert!(SystemParams { spatial: 1.2, ..SystemParams::default() }.validate().is_err());
        assert!(SystemParams { kappa: 0.0, ..SystemParams::default() }.validate().is_err());
        assert!(SystemParams { gamma: -1.0, ..SystemParams::default() }.validate().is_err());
        let with_gamma = SystemParams { gamma: 0.1, ..SystemParams::default() };
        let n = bob_system(&with_gamma).unwrap().channels().len();
        assert_eq!(n, 3);
        assert_eq!(alice_system(&with_gamma).unwrap().channels().len(), 4);
    }

    proptest! {
        #[test]
        fn dark_states_are_nullvectors(e in 0.0f64..20.0, s in 0.05f64..1.0, c in 0.2f64..3.0) {
            let p = SystemParams { spatial: s, coupling: c, ..SystemParams::default() };
            let h1 = build_h1(&p, e).unwrap();
            prop_assert!(h1.hermiticity_defect() <= 1e-12);
            for branch in [AliceBranch::Zero, AliceBranch::One] {
                prop_assert!(null_residual(&h1, &dark_state_alice(&p, e, branch)) < 1e-12 * (1.0 + e * c));
            }
            let h2 = build_h2(&p, e).unwrap();
            prop_assert!(null_residual(&h2, &dark_state_bob(&p, e)) < 1e-12 * (1.0 + e * c));
        }

        #[test]
        fn qubit_from_bloch_is_normalized(theta in 0.0f64..PI, phi in -PI..PI) {
            let q = Qubit::from_bloch(theta, phi);
            prop_assert!(Qubit::new(q.a, q.b).is_ok());
        }
    }
}
