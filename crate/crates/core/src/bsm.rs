//! Linear-optics Bell-state measurement on two polarized photons.
//!
//! Photon modes are indexed by `(rail, polarization, temporal)`. Jones vectors
//! use the `(H, V)` basis with `|L⟩ = (|H⟩ + i|V⟩)/√2` and
//! `|R⟩ = (|H⟩ - i|V⟩)/√2`. Rails 0 and 1 carry Alice's and Bob's photons into
//! the analyzer, rails 2 and 3 are the vacuum ports of the output splitters, the
//! remaining rails absorb losses and the unemitted part of each source.
//!
//! Two-photon states are symmetric amplitude matrices `C` with
//! `|Φ⟩ = Σ C_ij a†_i a†_j |0⟩`; a passive network `U` maps `C ↦ U C Uᵀ`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::atom_cavity::Qubit;
use crate::csvio::{fmt_float, write_csv};
use crate::error::{Error, Result};
use crate::pulses::{inner_product, normalize_mode, overlap, PhotonMode, Polarization};
use crate::quantum::{CMatrix, CVector, DensityOperator, HilbertSpace, C64, I, ONE, ZERO};

pub const ARM_A: usize = 0;
pub const ARM_B: usize = 1;
const PORT_2: usize = 2;
const PORT_3: usize = 3;
pub const LOSS_A: usize = 4;
pub const LOSS_B: usize = 5;
const DETECTOR_LOSS: usize = 6;
pub const UNEMITTED_A: usize = 10;
pub const UNEMITTED_B: usize = 11;
pub const N_RAILS: usize = 12;

/// Detector id → rail.
pub const DETECTOR_RAILS: [(u8, usize); 4] = [(1, ARM_A), (2, PORT_2), (3, PORT_3), (4, ARM_B)];

/// Qubit space of Bob's atom `{|0⟩₂, |1⟩₂}`.
pub fn bob_qubit_space() -> Arc<HilbertSpace> {
    Arc::new(HilbertSpace::single("atom2", 2).expect("static layout"))
}

/// Jones vector of a circular polarization.
pub fn jones(p: Polarization) -> [C64; 2] {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    match p {
        Polarization::Left => [C64::new(s, 0.0), C64::new(0.0, s)],
        Polarization::Right => [C64::new(s, 0.0), C64::new(0.0, -s)],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ElementKind {
    /// Transmits H straight through, exchanges V between the two ports.
    Pbs,
    /// Half-wave plate rotating linear polarization by `rotation_deg`.
    HalfWavePlate { rotation_deg: f64 },
    /// Quarter-wave plate with fast axis at `axis_deg`.
    QuarterWavePlate { axis_deg: f64 },
    /// Polarization-independent splitter with amplitude transmission `t`.
    BeamSplitter { transmission: f64 },
    Detector { id: u8 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpticalElement {
    pub name: String,
    pub kind: ElementKind,
    /// One rail for plates and detectors, two for splitters.
    pub ports: Vec<usize>,
}

fn rotation(theta: f64) -> [[C64; 2]; 2] {
    let (s, c) = theta.sin_cos();
    [[c.into(), (-s).into()], [s.into(), c.into()]]
}

fn mul2(a: [[C64; 2]; 2], b: [[C64; 2]; 2]) -> [[C64; 2]; 2] {
    let mut out = [[ZERO; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

impl OpticalElement {
    fn new(name: &str, kind: ElementKind, ports: &[usize]) -> Self {
        Self { name: name.into(), kind, ports: ports.to_vec() }
    }

    /// 2×2 Jones matrix for wave plates.
    pub fn jones_matrix(&self) -> Option<[[C64; 2]; 2]> {
        match self.kind {
            ElementKind::HalfWavePlate { rotation_deg } => {
                let (s, c) = rotation_deg.to_radians().sin_cos();
                Some([[c.into(), s.into()], [s.into(), (-c).into()]])
            }
            ElementKind::QuarterWavePlate { axis_deg } => {
                let t = axis_deg.to_radians();
                let d = [[ONE, ZERO], [ZERO, I]];
                Some(mul2(mul2(rotation(t), d), rotation(-t)))
            }
            _ => None,
        }
    }

    /// Action on the `2·n_rails` rail–polarization modes (column = input mode).
    pub fn mode_matrix(&self, n_rails: usize) -> CMatrix {
        let d = 2 * n_rails;
        let mut m = CMatrix::identity(d, d);
        let at = |r: usize, p: usize| 2 * r + p;
        match self.kind {
            ElementKind::HalfWavePlate { .. } | ElementKind::QuarterWavePlate { .. } => {
                let j = self.jones_matrix().expect("wave plate");
                let r = self.ports[0];
                for a in 0..2 {
                    for b in 0..2 {
                        m[(at(r, a), at(r, b))] = j[a][b];
                    }
                }
            }
            ElementKind::Pbs => {
                let (p, q) = (self.ports[0], self.ports[1]);
                m[(at(p, 1), at(p, 1))] = ZERO;
                m[(at(q, 1), at(q, 1))] = ZERO;
                m[(at(p, 1), at(q, 1))] = ONE;
                m[(at(q, 1), at(p, 1))] = ONE;
            }
            ElementKind::BeamSplitter { transmission: t } => {
                let (p, q) = (self.ports[0], self.ports[1]);
                let r = (1.0 - t * t).max(0.0).sqrt();
                for pol in 0..2 {
                    m[(at(p, pol), at(p, pol))] = t.into();
                    m[(at(q, pol), at(q, pol))] = t.into();
                    m[(at(p, pol), at(q, pol))] = (-r).into();
                    m[(at(q, pol), at(p, pol))] = r.into();
                }
            }
            ElementKind::Detector { .. } => {}
        }
        m
    }
}

/// Detection imperfections, modeled as beam splitters into loss rails.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionModel {
    /// Detector quantum efficiency η, identical for all four detectors.
    pub efficiency: f64,
    /// Intensity loss on Alice's arm before the analyzer.
    pub arm_loss_a: f64,
    /// Intensity loss on Bob's arm before the analyzer.
    pub arm_loss_b: f64,
    pub number_resolving: bool,
}

impl Default for DetectionModel {
    fn default() -> Self {
        Self { efficiency: 1.0, arm_loss_a: 0.0, arm_loss_b: 0.0, number_resolving: false }
    }
}

impl DetectionModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("efficiency", self.efficiency), ("arm_loss_a", self.arm_loss_a), ("arm_loss_b", self.arm_loss_b)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BsmNetwork {
    elements: Vec<OpticalElement>,
    detection: DetectionModel,
    unitary: CMatrix,
}

impl BsmNetwork {
    pub fn elements(&self) -> &[OpticalElement] {
        &self.elements
    }

    pub fn detection(&self) -> &DetectionModel {
        &self.detection
    }

    /// Composed rail–polarization unitary (`2·N_RAILS` square).
    pub fn unitary(&self) -> &CMatrix {
        &self.unitary
    }

    pub fn detector_at(&self, rail: usize) -> Option<u8> {
        DETECTOR_RAILS.iter().find(|(_, r)| *r == rail).map(|(id, _)| *id)
    }
}

fn analyzer_elements() -> Vec<OpticalElement> {
    use ElementKind::*;
    vec![
        OpticalElement::new("QWP1", QuarterWavePlate { axis_deg: 45.0 }, &[ARM_A]),
        OpticalElement::new("QWP2", QuarterWavePlate { axis_deg: 45.0 }, &[ARM_B]),
        OpticalElement::new("HWP1", HalfWavePlate { rotation_deg: 90.0 }, &[ARM_B]),
        OpticalElement::new("PBS1", Pbs, &[ARM_A, ARM_B]),
        OpticalElement::new("HWP2", HalfWavePlate { rotation_deg: 45.0 }, &[ARM_A]),
        OpticalElement::new("HWP3", HalfWavePlate { rotation_deg: 45.0 }, &[ARM_B]),
        OpticalElement::new("PBS2", Pbs, &[ARM_A, PORT_2]),
        OpticalElement::new("PBS3", Pbs, &[ARM_B, PORT_3]),
    ]
}

/// Assembles the analyzer, verifies the Bell-discrimination contract on the
/// lossless optics, then inserts the loss splitters of `detection`.
pub fn build_bsm_network(detection: &DetectionModel) -> Result<BsmNetwork> {
    detection.validate()?;
    let core = analyzer_elements();
    let report = verify_contract(&core)?;
    report.check()?;

    let mut elements = vec![
        OpticalElement::new(
            "arm-loss-A",
            ElementKind::BeamSplitter { transmission: (1.0 - detection.arm_loss_a).sqrt() },
            &[ARM_A, LOSS_A],
        ),
        OpticalElement::new(
            "arm-loss-B",
            ElementKind::BeamSplitter { transmission: (1.0 - detection.arm_loss_b).sqrt() },
            &[ARM_B, LOSS_B],
        ),
    ];
    elements.extend(core);
    for (k, (id, rail)) in DETECTOR_RAILS.iter().enumerate() {
        elements.push(OpticalElement::new(
            &format!("eta-D{id}"),
            ElementKind::BeamSplitter { transmission: detection.efficiency.sqrt() },
            &[*rail, DETECTOR_LOSS + k],
        ));
        elements.push(OpticalElement::new(&format!("D{id}"), ElementKind::Detector { id: *id }, &[*rail]));
    }
    let mut unitary = CMatrix::identity(2 * N_RAILS, 2 * N_RAILS);
    for e in &elements {
        unitary = e.mode_matrix(N_RAILS) * unitary;
    }
    Ok(BsmNetwork { elements, detection: *detection, unitary })
}

/// Class probabilities for one ideal Bell-class input.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractRow {
    pub input: &'static str,
    pub expected: OutcomeClass,
    pub plus: f64,
    pub minus: f64,
    pub failure: f64,
    /// Probability of each success pattern reached.
    pub patterns: Vec<(DetectorPattern, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractReport {
    pub rows: Vec<ContractRow>,
}

impl ContractReport {
    /// Largest probability found in a class other than the expected one.
    pub fn max_leakage(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| match r.expected {
                OutcomeClass::Plus => r.minus,
                OutcomeClass::Minus => r.plus,
                OutcomeClass::Failure => r.plus + r.minus,
            })
            .fold(0.0, f64::max)
    }

    pub fn check(&self) -> Result<()> {
        let leak = self.max_leakage();
        if leak > 1e-10 {
            return Err(Error::Contract(format!("cross-class leakage {leak:.3e}")));
        }
        for r in &self.rows {
            let hit = match r.expected {
                OutcomeClass::Plus => r.plus,
                OutcomeClass::Minus => r.minus,
                OutcomeClass::Failure => r.failure,
            };
            if (hit - 1.0).abs() > 1e-10 {
                return Err(Error::Contract(format!("{} reaches its class with probability {hit}", r.input)));
            }
            if r.expected != OutcomeClass::Failure {
                for (p, prob) in &r.patterns {
                    if (prob - 0.5).abs() > 1e-10 {
                        return Err(Error::Contract(format!("{} pattern {p} has probability {prob}", r.input)));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Sparse two-photon polynomial over rail–polarization modes, keyed `(i ≤ j)`.
type Polynomial = BTreeMap<(usize, usize), C64>;

fn propagate(poly: &Polynomial, element: &OpticalElement) -> Polynomial {
    let m = element.mode_matrix(N_RAILS);
    let column = |k: usize| -> Vec<(usize, C64)> {
        (0..m.nrows()).filter(|&r| m[(r, k)] != ZERO).map(|r| (r, m[(r, k)])).collect()
    };
    let mut out = Polynomial::new();
    for (&(i, j), &c) in poly {
        for (mi, ui) in column(i) {
            for (nj, uj) in column(j) {
                let key = (mi.min(nj), mi.max(nj));
                *out.entry(key).or_insert(ZERO) += c * ui * uj;
            }
        }
    }
    out.retain(|_, v| v.norm() > 1e-15);
    out
}

fn bell_polynomial(first: [Polarization; 2], second: [Polarization; 2], sign: f64) -> Polynomial {
    let mut poly = Polynomial::new();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for (pa, pb, c) in [(first[0], first[1], s), (second[0], second[1], sign * s)] {
        let (ja, jb) = (jones(pa), jones(pb));
        for a in 0..2 {
            for b in 0..2 {
                let (i, j) = (2 * ARM_A + a, 2 * ARM_B + b);
                *poly.entry((i.min(j), i.max(j))).or_insert(ZERO) += ja[a] * jb[b] * c;
            }
        }
    }
    poly
}

/// Element-by-element propagation of the four circular Bell states.
pub fn verify_contract(elements: &[OpticalElement]) -> Result<ContractReport> {
    use Polarization::{Left as L, Right as R};
    let inputs = [
        ("Psi+", bell_polynomial([L, R], [R, L], 1.0), OutcomeClass::Plus),
        ("Psi-", bell_polynomial([L, R], [R, L], -1.0), OutcomeClass::Minus),
        ("Phi+", bell_polynomial([L, L], [R, R], 1.0), OutcomeClass::Failure),
        ("Phi-", bell_polynomial([L, L], [R, R], -1.0), OutcomeClass::Failure),
    ];
    let mut rows = Vec::new();
    for (name, mut poly, expected) in inputs {
        for e in elements {
            for &p in &e.ports {
                if p >= N_RAILS {
                    return Err(Error::Contract(format!("{} uses rail {p}", e.name)));
                }
            }
            poly = propagate(&poly, e);
        }
        let mut classes = BTreeMap::new();
        let mut patterns: BTreeMap<DetectorPattern, f64> = BTreeMap::new();
        for (&(i, j), c) in &poly {
            let prob = if i == j { 2.0 * c.norm_sqr() } else { c.norm_sqr() };
            let pattern = DetectorPattern::from_rails(&[i / 2, j / 2], false);
            *classes.entry(pattern.class()).or_insert(0.0) += prob;
            if pattern.class() != OutcomeClass::Failure {
                *patterns.entry(pattern).or_insert(0.0) += prob;
            }
        }
        let get = |c| *classes.get(&c).unwrap_or(&0.0);
        rows.push(ContractRow {
            input: name,
            expected,
            plus: get(OutcomeClass::Plus),
            minus: get(OutcomeClass::Minus),
            failure: get(OutcomeClass::Failure),
            patterns: patterns.into_iter().collect(),
        });
    }
    Ok(ContractReport { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OutcomeClass {
    Plus,
    Minus,
    Failure,
}

impl OutcomeClass {
    pub fn label(&self) -> &'static str {
        match self {
            OutcomeClass::Plus => "plus",
            OutcomeClass::Minus => "minus",
            OutcomeClass::Failure => "failure",
        }
    }

    pub fn is_success(&self) -> bool {
        !matches!(self, OutcomeClass::Failure)
    }
}

/// Click counts of D1..D4 (capped at 1 for non-resolving detectors).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DetectorPattern {
    counts: [u8; 4],
}

impl DetectorPattern {
    pub fn from_ids(ids: &[u8], number_resolving: bool) -> Result<Self> {
        let mut counts = [0u8; 4];
        for &id in ids {
            if !(1..=4).contains(&id) {
                return Err(Error::UnknownDetector(id));
            }
            counts[(id - 1) as usize] += 1;
        }
        if !number_resolving {
            counts.iter_mut().for_each(|c| *c = (*c).min(1));
        }
        Ok(Self { counts })
    }

    /// Pattern from the rails hit by photons; non-detector rails are ignored.
    pub fn from_rails(rails: &[usize], number_resolving: bool) -> Self {
        let ids: Vec<u8> = rails
            .iter()
            .filter_map(|r| DETECTOR_RAILS.iter().find(|(_, dr)| dr == r).map(|(id, _)| *id))
            .collect();
        Self::from_ids(&ids, number_resolving).expect("known detector ids")
    }

    pub fn counts(&self) -> [u8; 4] {
        self.counts
    }

    pub fn clicks(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    pub fn class(&self) -> OutcomeClass {
        classify(self)
    }
}

impl fmt::Display for DetectorPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(k, &c)| if c == 1 { format!("D{}", k + 1) } else { format!("D{}x{c}", k + 1) })
            .collect();
        if parts.is_empty() {
            write!(f, "none")
        } else {
            write!(f, "{}", parts.join("+"))
        }
    }
}

/// `{D1,D4}`, `{D2,D3}` → Plus; `{D1,D3}`, `{D2,D4}` → Minus; anything else fails.
pub fn classify(pattern: &DetectorPattern) -> OutcomeClass {
    match pattern.counts {
        [1, 0, 0, 1] | [0, 1, 1, 0] => OutcomeClass::Plus,
        [1, 0, 1, 0] | [0, 1, 0, 1] => OutcomeClass::Minus,
        _ => OutcomeClass::Failure,
    }
}

/// Classifies a multiset of detector ids (non-resolving detectors).
pub fn classify_ids(ids: &[u8]) -> Result<OutcomeClass> {
    Ok(classify(&DetectorPattern::from_ids(ids, false)?))
}

/// Overlap of two normalized modes and the weight of the orthogonal remainder.
pub fn decompose_temporal(f_a: &PhotonMode, f_b: &PhotonMode) -> Result<(f64, f64)> {
    let o = overlap(f_a, f_b)?;
    if o.abs() > 1.0 + 1e-9 {
        return Err(Error::QuadratureFault(o));
    }
    let o = o.clamp(-1.0, 1.0);
    Ok((o, 1.0 - o * o))
}

/// Orthonormal coordinates of a set of temporal modes.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalBasis {
    /// `coords[k]` expresses mode `k` in the basis; its norm equals the mode norm.
    pub coords: Vec<Vec<f64>>,
}

impl TemporalBasis {
    pub fn rank(&self) -> usize {
        self.coords.first().map_or(0, Vec::len)
    }

    /// Gram–Schmidt on the Gram matrix: modes whose residual falls below
    /// `1e-12` of their norm add no new direction.
    pub fn from_gram(gram: &[Vec<f64>]) -> Result<Self> {
        let n = gram.len();
        if gram.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidParameter("Gram matrix not square".into()));
        }
        let mut coords: Vec<Vec<f64>> = Vec::with_capacity(n);
        // sources[j]: mode that introduced basis vector j
        let mut sources: Vec<usize> = Vec::new();
        for k in 0..n {
            let mut c: Vec<f64> = Vec::with_capacity(sources.len() + 1);
            for (j, &s) in sources.iter().enumerate() {
                let mut inner = gram[s][k];
                for m in 0..j {
                    inner -= coords[s][m] * c[m];
                }
                c.push(inner / coords[s][j]);
            }
            let residual = gram[k][k] - c.iter().map(|x| x * x).sum::<f64>();
            if residual > 1e-12 * gram[k][k] {
                c.push(residual.sqrt());
                sources.push(k);
            }
            coords.push(c);
        }
        let rank = sources.len();
        for c in &mut coords {
            c.resize(rank, 0.0);
        }
        Ok(Self { coords })
    }

    /// Basis for raw (unnormalized) modes on a common grid.
    pub fn from_modes(modes: &[&PhotonMode]) -> Result<Self> {
        let gram = modes
            .iter()
            .map(|a| modes.iter().map(|b| inner_product(a, b)).collect::<Result<Vec<f64>>>())
            .collect::<Result<Vec<_>>>()?;
        Self::from_gram(&gram)
    }
}

/// Photon amplitudes feeding the analyzer for one teleportation run.
///
/// Coordinates are in a shared orthonormal temporal basis; their squared
/// norms are the emission probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceModes {
    pub alice_l: Vec<f64>,
    pub alice_r: Vec<f64>,
    pub bob: Vec<f64>,
}

impl SourceModes {
    pub fn rank(&self) -> usize {
        self.bob.len()
    }

    /// Normalized modes with certain emission.
    pub fn ideal() -> Self {
        Self { alice_l: vec![1.0], alice_r: vec![1.0], bob: vec![1.0] }
    }

    /// Raw modes `f_A0`, `f_A1`, `f_B` expressed in their joint basis.
    pub fn from_modes(f_a0: &PhotonMode, f_a1: &PhotonMode, f_b: &PhotonMode) -> Result<Self> {
        let basis = TemporalBasis::from_modes(&[f_b, f_a0, f_a1])?;
        let mut it = basis.coords.into_iter();
        let bob = it.next().expect("three modes");
        let alice_l = it.next().expect("three modes");
        let alice_r = it.next().expect("three modes");
        Ok(Self { alice_l, alice_r, bob })
    }

    /// Same shapes rescaled to certain emission.
    pub fn normalized(&self) -> Result<Self> {
        let unit = |v: &[f64]| -> Result<Vec<f64>> {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n <= 1e-6 {
                return Err(Error::NearZeroMode(n * n));
            }
            Ok(v.iter().map(|x| x / n).collect())
        };
        Ok(Self { alice_l: unit(&self.alice_l)?, alice_r: unit(&self.alice_r)?, bob: unit(&self.bob)? })
    }

    fn check(&self) -> Result<()> {
        let r = self.rank();
        if self.alice_l.len() != r || self.alice_r.len() != r {
            return Err(Error::InvalidParameter("temporal coordinates of different rank".into()));
        }
        for v in [&self.alice_l, &self.alice_r, &self.bob] {
            let p: f64 = v.iter().map(|x| x * x).sum();
            if p > 1.0 + 1e-9 {
                return Err(Error::NotNormalized(p));
            }
        }
        Ok(())
    }
}

/// Normalized modes built from prescribed overlaps, used for audits:
/// `f_A0 = O₀μ + √(1-O₀²)μ⊥`, `f_A1 = O₁μ + √(1-O₁²)μ⊥`, `f_B = μ`.
pub fn modes_with_overlap(o_a0: f64, o_a1: f64) -> SourceModes {
    let perp = |o: f64| (1.0 - o * o).max(0.0).sqrt();
    SourceModes { alice_l: vec![o_a0, perp(o_a0)], alice_r: vec![o_a1, perp(o_a1)], bob: vec![1.0, 0.0] }
}

/// Two photons jointly with Bob's qubit: `Σ_q |q⟩₂ ⊗ Σ C_q[i][j] a†_i a†_j |0⟩`.
#[derive(Debug, Clone)]
pub struct TwoPhotonState {
    temporal: usize,
    branches: [CMatrix; 2],
}

impl TwoPhotonState {
    pub fn n_modes(&self) -> usize {
        2 * N_RAILS * self.temporal
    }

    pub fn temporal_rank(&self) -> usize {
        self.temporal
    }

    pub fn branches(&self) -> &[CMatrix; 2] {
        &self.branches
    }

    fn mode(&self, rail: usize, pol: usize, t: usize) -> usize {
        (2 * rail + pol) * self.temporal + t
    }

    /// Photon mode vector for `polarization ⊗ coords` on a rail.
    fn photon(&self, rail: usize, p: Polarization, coords: &[f64]) -> CVector {
        let mut v = CVector::zeros(self.n_modes());
        let j = jones(p);
        for pol in 0..2 {
            for (t, c) in coords.iter().enumerate() {
                v[self.mode(rail, pol, t)] = j[pol] * *c;
            }
        }
        v
    }

    /// `|r⟩(a|L⟩ + b|R⟩)_A ⊗ (|0⟩₂|R⟩_B + |1⟩₂|L⟩_B)/√2`, with each source's
    /// unemitted amplitude parked on its own rail.
    pub fn teleportation(q: &Qubit, modes: &SourceModes) -> Result<Self> {
        let q = Qubit::new(q.a, q.b)?;
        modes.check()?;
        let temporal = modes.rank().max(1);
        let proto = Self { temporal, branches: [CMatrix::zeros(0, 0), CMatrix::zeros(0, 0)] };
        let missing = |v: &[f64]| (1.0 - v.iter().map(|x| x * x).sum::<f64>()).max(0.0).sqrt();
        let pad = |v: &[f64]| {
            let mut w = v.to_vec();
            w.resize(temporal, 0.0);
            w
        };
        let (al, ar, b) = (pad(&modes.alice_l), pad(&modes.alice_r), pad(&modes.bob));
        let mut unit = vec![0.0; temporal];
        unit[0] = 1.0;
        let alpha = proto.photon(ARM_A, Polarization::Left, &al) * q.a
            + proto.photon(ARM_A, Polarization::Right, &ar) * q.b
            + proto.photon(UNEMITTED_A, Polarization::Left, &unit) * (q.a * missing(&al))
            + proto.photon(UNEMITTED_A, Polarization::Right, &unit) * (q.b * missing(&ar));
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let beta = |p: Polarization| {
            (proto.photon(ARM_B, p, &b) + proto.photon(UNEMITTED_B, p, &unit) * C64::new(missing(&b), 0.0))
                * C64::new(s, 0.0)
        };
        // |0⟩₂ pairs with R, |1⟩₂ with L
        let betas = [beta(Polarization::Right), beta(Polarization::Left)];
        let sym = |x: &CVector, y: &CVector| (x * y.transpose() + y * x.transpose()) * C64::new(0.5, 0.0);
        let state = Self { temporal, branches: [sym(&alpha, &betas[0]), sym(&alpha, &betas[1])] };
        let n = state.norm_sqr();
        if (n - 1.0).abs() > 1e-10 {
            return Err(Error::NotNormalized(n));
        }
        Ok(state)
    }

    /// `Σ_q ⟨Φ_q|Φ_q⟩ = Σ_q 2 Σ|C_q|²`.
    pub fn norm_sqr(&self) -> f64 {
        self.branches.iter().map(|c| 2.0 * c.norm_squared()).sum()
    }

    /// Rail of a flat mode index.
    pub fn rail_of(&self, mode: usize) -> usize {
        mode / (2 * self.temporal)
    }
}

/// Outcome of one detector pattern.
#[derive(Debug, Clone)]
pub struct PatternOutcome {
    pub pattern: DetectorPattern,
    pub class: OutcomeClass,
    pub probability: f64,
    /// Bob's normalized conditional qubit state, `None` when the pattern never occurs.
    pub conditional: Option<DensityOperator>,
    /// Unnormalized conditional operator (trace = probability).
    pub weight: [[C64; 2]; 2],
}

/// Pattern probabilities and Bob's conditional states, ordered by pattern.
pub fn bsm_probabilities(state: &TwoPhotonState, network: &BsmNetwork) -> Result<Vec<PatternOutcome>> {
    let t = state.temporal;
    let m = state.n_modes();
    let u_small = network.unitary();
    if u_small.nrows() * t != m {
        return Err(Error::SpaceMismatch("network and state modes differ".into()));
    }
    let u = u_small.kronecker(&CMatrix::identity(t, t));
    let outs: Vec<CMatrix> = state.branches.iter().map(|c| &u * c * u.transpose()).collect();
    let resolving = network.detection().number_resolving;
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut acc: BTreeMap<DetectorPattern, [[C64; 2]; 2]> = BTreeMap::new();
    for i in 0..m {
        for j in i..m {
            let amp = |c: &CMatrix| if i == j { c[(i, i)] * sqrt2 } else { c[(i, j)] * 2.0 };
            let a = [amp(&outs[0]), amp(&outs[1])];
            if a[0] == ZERO && a[1] == ZERO {
                continue;
            }
            let pattern = DetectorPattern::from_rails(&[state.rail_of(i), state.rail_of(j)], resolving);
            let w = acc.entry(pattern).or_insert([[ZERO; 2]; 2]);
            for p in 0..2 {
                for q in 0..2 {
                    w[p][q] += a[p] * a[q].conj();
                }
            }
        }
    }
    let space = bob_qubit_space();
    let mut out = Vec::with_capacity(acc.len());
    for (pattern, w) in acc {
        let probability = w[0][0].re + w[1][1].re;
        let conditional = if probability > 1e-300 {
            let mat = CMatrix::from_fn(2, 2, |r, c| w[r][c]);
            Some(DensityOperator::from_unnormalized(space.clone(), mat)?)
        } else {
            None
        };
        out.push(PatternOutcome { pattern, class: pattern.class(), probability, conditional, weight: w });
    }
    Ok(out)
}

/// Sum of probabilities per class.
pub fn class_probabilities(outcomes: &[PatternOutcome]) -> BTreeMap<OutcomeClass, f64> {
    let mut m = BTreeMap::new();
    for o in outcomes {
        *m.entry(o.class).or_insert(0.0) += o.probability;
    }
    m
}

/// Pattern table as CSV: pattern, class, probability, conditional fidelity.
pub fn write_patterns_csv<W: Write>(out: W, rows: &[(PatternOutcome, Option<f64>)]) -> Result<()> {
    let body = rows.iter().map(|(o, f)| {
        vec![
            o.pattern.to_string(),
            o.class.label().to_string(),
            fmt_float(o.probability),
            f.map(fmt_float).unwrap_or_default(),
        ]
    });
    write_csv(out, &[], &["pattern", "class", "probability", "fidelity"], body)
}

/// `δ`-free overlap of two raw modes after normalization.
pub fn normalized_overlap(f: &PhotonMode, g: &PhotonMode) -> Result<f64> {
    overlap(&normalize_mode(f)?, &normalize_mode(g)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ideal() -> BsmNetwork {
        build_bsm_network(&DetectionModel::default()).unwrap()
    }

    #[test]
    fn wave_plates_are_unitary() {
        for e in analyzer_elements() {
            let m = e.mode_matrix(N_RAILS);
            let defect = (m.adjoint() * &m - CMatrix::identity(m.nrows(), m.ncols())).norm();
            assert!(defect < 1e-12, "{}", e.name);
        }
        let bs = OpticalElement::new("bs", ElementKind::BeamSplitter { transmission: 0.3 }, &[0, 4]);
        let m = bs.mode_matrix(N_RAILS);
        assert!((m.adjoint() * &m - CMatrix::identity(24, 24)).norm() < 1e-12);
    }

    #[test]
    fn quarter_wave_plate_maps_circular_to_linear() {
        let q = OpticalElement::new("q", ElementKind::QuarterWavePlate { axis_deg: 45.0 }, &[0]);
        let j = q.jones_matrix().unwrap();
        let apply = |v: [C64; 2]| [j[0][0] * v[0] + j[0][1] * v[1], j[1][0] * v[0] + j[1][1] * v[1]];
        let l = apply(jones(Polarization::Left));
        let r = apply(jones(Polarization::Right));
        assert!(l[1].norm() < 1e-12 && (l[0].norm() - 1.0).abs() < 1e-12);
        assert!(r[0].norm() < 1e-12 && (r[1].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn contract_holds() {
        let report = verify_contract(&analyzer_elements()).unwrap();
        report.check().unwrap();
        assert!(report.max_leakage() < 1e-10);
        let plus = &report.rows[0];
        assert_eq!(plus.patterns.len(), 2);
        let names: Vec<String> = plus.patterns.iter().map(|(p, _)| p.to_string()).collect();
        assert_eq!(names, ["D2+D3", "D1+D4"]);
    }

    #[test]
    fn broken_wiring_fails_contract() {
        let mut e = analyzer_elements();
        e.retain(|x| x.name != "HWP1");
        assert!(verify_contract(&e).unwrap().check().is_err());
    }

    #[test]
    fn classification_table() {
        assert_eq!(classify_ids(&[1, 4]).unwrap(), OutcomeClass::Plus);
        assert_eq!(classify_ids(&[3, 2]).unwrap(), OutcomeClass::Plus);
        assert_eq!(classify_ids(&[1, 3]).unwrap(), OutcomeClass::Minus);
        assert_eq!(classify_ids(&[2, 4]).unwrap(), OutcomeClass::Minus);
        assert_eq!(classify_ids(&[1]).unwrap(), OutcomeClass::Failure);
        assert_eq!(classify_ids(&[1, 2]).unwrap(), OutcomeClass::Failure);
        assert_eq!(classify_ids(&[1, 1]).unwrap(), OutcomeClass::Failure);
        assert_eq!(classify_ids(&[]).unwrap(), OutcomeClass::Failure);
        assert_eq!(classify_ids(&[5]), Err(Error::UnknownDetector(5)));
    }

    #[test]
    fn ideal_teleportation_outcomes() {
        let q = Qubit::from_bloch(1.2, 0.7);
        let st = TwoPhotonState::teleportation(&q, &SourceModes::ideal()).unwrap();
        let out = bsm_probabilities(&st, &ideal()).unwrap();
        let total: f64 = out.iter().map(|o| o.probability).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        let classes = class_probabilities(&out);
        assert_abs_diff_eq!(classes[&OutcomeClass::Plus], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(classes[&OutcomeClass::Minus], 0.25, epsilon = 1e-12);
        let plus = CVector::from_vec(vec![q.a, q.b]);
        let minus = CVector::from_vec(vec![q.a, -q.b]);
        for o in out.iter().filter(|o| o.class.is_success()) {
            let rho = o.conditional.as_ref().unwrap();
            let target = if o.class == OutcomeClass::Plus { &plus } else { &minus };
            let f = (target.adjoint() * rho.matrix() * target)[(0, 0)].re;
            assert_abs_diff_eq!(f, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_efficiency_gives_no_clicks() {
        let net = build_bsm_network(&DetectionModel { efficiency: 0.0, ..DetectionModel::default() }).unwrap();
        let st = TwoPhotonState::teleportation(&Qubit::from_bloch(0.3, 0.1), &SourceModes::ideal()).unwrap();
        let out = bsm_probabilities(&st, &net).unwrap();
        let none: f64 = out.iter().filter(|o| o.pattern.clicks() == 0).map(|o| o.probability).sum();
        assert_abs_diff_eq!(none, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn temporal_decomposition() {
        use crate::pulses::TimeGrid;
        let grid = TimeGrid::new(10.0, 1000).unwrap();
        let g = |c: f64| {
            normalize_mode(&PhotonMode::from_samples(grid, grid.times().map(|t| (-(t - c).powi(2)).exp()).collect()).unwrap())
                .unwrap()
        };
        let (o, w) = decompose_temporal(&g(5.0), &g(5.0)).unwrap();
        assert_abs_diff_eq!(o, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(w, 0.0, epsilon = 1e-9);
        let bump = |c: f64| {
            let v = grid.times().map(|t| if (t - c).abs() < 1.0 { (1.0 - (t - c).powi(2)).powi(3) } else { 0.0 });
            normalize_mode(&PhotonMode::from_samples(grid, v.collect()).unwrap()).unwrap()
        };
        let (o, w) = decompose_temporal(&bump(2.0), &bump(8.0)).unwrap();
        assert!(o.abs() < 1e-12 && (w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gram_schmidt_coordinates() {
        let gram = vec![vec![1.0, 0.6, 0.6], vec![0.6, 1.0, 1.0], vec![0.6, 1.0, 1.0]];
        let b = TemporalBasis::from_gram(&gram).unwrap();
        assert_eq!(b.rank(), 2);
        for i in 0..3 {
            for j in 0..3 {
                let ip: f64 = b.coords[i].iter().zip(&b.coords[j]).map(|(x, y)| x * y).sum();
                assert_abs_diff_eq!(ip, gram[i][j], epsilon = 1e-12);
            }
        }
        let gram3 = vec![vec![2.0, 0.5, 0.1], vec![0.5, 1.0, 0.3], vec![0.1, 0.3, 0.7]];
        let b = TemporalBasis::from_gram(&gram3).unwrap();
        assert_eq!(b.rank(), 3);
        for i in 0..3 {
            for j in 0..3 {
                let ip: f64 = b.coords[i].iter().zip(&b.coords[j]).map(|(x, y)| x * y).sum();
                assert_abs_diff_eq!(ip, gram3[i][j], epsilon = 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one(theta in 0.0..std::f64::consts::PI, phi in -std::f64::consts::PI..std::f64::consts::PI, o in 0.0f64..1.0, eta in 0.0f64..1.0, loss in 0.0f64..1.0) {
            let net = build_bsm_network(&DetectionModel { efficiency: eta, arm_loss_a: loss, ..DetectionModel::default() }).unwrap();
            let st = TwoPhotonState::teleportation(&Qubit::from_bloch(theta, phi), &modes_with_overlap(o, 1.0)).unwrap();
            let out = bsm_probabilities(&st, &net).unwrap();
            let total: f64 = out.iter().map(|x| x.probability).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            for x in &out {
                prop_assert!(x.probability >= -1e-15 && x.probability <= 1.0 + 1e-12);
            }
        }

        #[test]
        fn mismatch_symmetry(theta in 0.0..std::f64::consts::PI, phi in -std::f64::consts::PI..std::f64::consts::PI, o in 0.0f64..1.0) {
            let q = Qubit::from_bloch(theta, phi);
            let net = ideal();
            let a = bsm_probabilities(&TwoPhotonState::teleportation(&q, &modes_with_overlap(o, o)).unwrap(), &net).unwrap();
            let swapped = SourceModes { alice_l: vec![1.0, 0.0], alice_r: vec![1.0, 0.0], bob: vec![o, (1.0 - o * o).sqrt()] };
            let b = bsm_probabilities(&TwoPhotonState::teleportation(&q, &swapped).unwrap(), &net).unwrap();
            let pa: BTreeMap<_, _> = a.iter().map(|x| (x.pattern, x.probability)).collect();
            let pb: BTreeMap<_, _> = b.iter().map(|x| (x.pattern, x.probability)).collect();
            for (k, v) in &pa {
                prop_assert!((v - pb.get(k).copied().unwrap_or(0.0)).abs() < 1e-12);
            }
        }
    }
}
