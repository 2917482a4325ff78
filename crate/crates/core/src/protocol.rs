//! End-to-end teleportation: source passage, photon interference, detection,
//! Bob's correction and fidelity bookkeeping.
//!
//! Fidelities use the amplitude convention `F = √⟨ψ|ρ|ψ⟩`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::atom_cavity::{
    alice_initial_state, alice_system, bob_initial_state, bob_system, Qubit, SystemParams,
};
use crate::bsm::{
    build_bsm_network, bsm_probabilities, class_probabilities, modes_with_overlap, write_patterns_csv,
    DetectionModel, OutcomeClass, PatternOutcome, SourceModes, TwoPhotonState,
};
use crate::csvio::{fmt_float, write_csv};
use crate::error::{Error, Result};
use crate::evolution::{
    adiabaticity_report, alice_reference_track, bob_reference_track, evolve_no_jump, evolve_trajectories,
    EvolutionConfig, TrajectoryEnsemble,
};
use crate::pulses::{
    mode_mismatch, normalize_mode, overlap, photon_pulse_shape, AliceBranch, PhotonMode, PulseConfig,
};
use crate::quantum::{CMatrix, CVector, C64};

/// `√(|a|⁴ + |b|⁴ + 2|a|²|b|²O²)`.
pub fn fidelity_formula(a: C64, b: C64, o: f64) -> f64 {
    let (pa, pb) = (a.norm_sqr(), b.norm_sqr());
    (pa * pa + pb * pb + 2.0 * pa * pb * o * o).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolMode {
    #[default]
    Analytic,
    Trajectory,
}

impl ProtocolMode {
    pub fn label(&self) -> &'static str {
        match self {
            ProtocolMode::Analytic => "analytic",
            ProtocolMode::Trajectory => "trajectory",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub qubit: Qubit,
    pub pulses: PulseConfig,
    pub alice: SystemParams,
    pub bob: SystemParams,
    pub detection: DetectionModel,
    pub evolution: EvolutionConfig,
    pub mode: ProtocolMode,
    /// Trajectory-mode sample count.
    pub samples: usize,
    /// Ideal sources: identical modes and certain emission.
    pub force_mode_match: bool,
    /// Delay of Bob's drive peak relative to Alice's, in `1/κ`.
    pub relative_delay: f64,
    /// Run the no-jump integrator for adiabaticity diagnostics.
    pub diagnostics: bool,
    pub seed: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            qubit: Qubit { a: C64::new(s, 0.0), b: C64::new(s, 0.0) },
            pulses: PulseConfig::default(),
            alice: SystemParams::default(),
            bob: SystemParams::default(),
            detection: DetectionModel::default(),
            evolution: EvolutionConfig::default(),
            mode: ProtocolMode::Analytic,
            samples: 100_000,
            force_mode_match: false,
            relative_delay: 0.0,
            diagnostics: true,
            seed: 0,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        Qubit::new(self.qubit.a, self.qubit.b)?;
        self.alice.validate()?;
        self.bob.validate()?;
        self.detection.validate()?;
        if self.mode == ProtocolMode::Trajectory && self.samples == 0 {
            return Err(Error::InvalidParameter("samples must be at least 1".into()));
        }
        Ok(())
    }
}

/// The three emitted modes with their overlaps.
#[derive(Debug, Clone)]
pub struct PhotonModes {
    pub f_a0: PhotonMode,
    pub f_a1: PhotonMode,
    pub f_b: PhotonMode,
    pub delta: f64,
    pub overlap_a0_b: f64,
    pub overlap_a1_b: f64,
}

/// Closed-form modes for the configured drives.
pub fn photon_modes(config: &ProtocolConfig) -> Result<PhotonModes> {
    let cg = config.alice.cg;
    let e1 = config.pulses.alice_pulse(&cg)?;
    let e2 = config.pulses.bob_pulse(&cg, config.relative_delay)?;
    let f_a0 = photon_pulse_shape(&config.alice.alice_track(&e1, AliceBranch::Zero)?, config.alice.kappa)?;
    let f_a1 = photon_pulse_shape(&config.alice.alice_track(&e1, AliceBranch::One)?, config.alice.kappa)?;
    let f_b = photon_pulse_shape(&config.bob.bob_track(&e2)?, config.bob.kappa)?;
    let nb = normalize_mode(&f_b)?;
    Ok(PhotonModes {
        delta: mode_mismatch(&f_a0, &f_a1)?,
        overlap_a0_b: overlap(&normalize_mode(&f_a0)?, &nb)?,
        overlap_a1_b: overlap(&normalize_mode(&f_a1)?, &nb)?,
        f_a0,
        f_a1,
        f_b,
    })
}

/// `Z` on `{|0⟩₂, |1⟩₂}` after a Minus outcome, identity after Plus.
pub fn correction(class: OutcomeClass) -> Option<CMatrix> {
    match class {
        OutcomeClass::Plus => Some(CMatrix::identity(2, 2)),
        OutcomeClass::Minus => Some(CMatrix::from_diagonal(&CVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(-1.0, 0.0)]))),
        OutcomeClass::Failure => None,
    }
}

/// Bob's corrected state for a success pattern.
pub fn corrected_state(outcome: &PatternOutcome) -> Option<CMatrix> {
    let z = correction(outcome.class)?;
    let rho = outcome.conditional.as_ref()?;
    Some(&z * rho.matrix() * z.adjoint())
}

/// `√⟨target|ρ|target⟩`.
pub fn amplitude_fidelity(rho: &CMatrix, q: &Qubit) -> f64 {
    let t = q.vector();
    (t.adjoint() * rho * &t)[(0, 0)].re.max(0.0).sqrt()
}

/// Patterns with the fidelity of Bob's corrected state (success patterns only).
pub fn scored_patterns(outcomes: Vec<PatternOutcome>, q: &Qubit) -> Vec<(PatternOutcome, Option<f64>)> {
    outcomes
        .into_iter()
        .map(|o| {
            let f = corrected_state(&o).map(|rho| amplitude_fidelity(&rho, q));
            (o, f)
        })
        .collect()
}

/// Probability-weighted mean fidelity over success patterns.
fn success_fidelity(scored: &[(PatternOutcome, Option<f64>)]) -> (f64, f64) {
    let mut p = 0.0;
    let mut f = 0.0;
    for (o, fid) in scored {
        if let Some(x) = fid {
            p += o.probability;
            f += o.probability * x;
        }
    }
    (p, if p > 0.0 { f / p } else { 0.0 })
}

fn sample_pattern<'a, R: Rng>(scored: &'a [(PatternOutcome, Option<f64>)], rng: &mut R) -> &'a (PatternOutcome, Option<f64>) {
    let total: f64 = scored.iter().map(|(o, _)| o.probability).sum();
    let mut u = rng.gen::<f64>() * total;
    for s in scored {
        if u < s.0.probability {
            return s;
        }
        u -= s.0.probability;
    }
    scored.last().expect("non-empty pattern table")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryStats {
    pub samples: usize,
    pub both_emitted: usize,
    pub successes: usize,
    /// Successes over all samples.
    pub success_probability: f64,
    pub success_sigma: f64,
    /// Successes over samples in which both sources emitted.
    pub heralded_success: f64,
    pub heralded_sigma: f64,
    pub mean_fidelity: f64,
    pub fidelity_sigma: f64,
    pub alice_emission: f64,
    pub bob_emission: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub p_emit_alice: f64,
    pub p_emit_bob: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adiabaticity_alice: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adiabaticity_bob: Option<f64>,
}

/// Summary of one teleportation run.
#[derive(Debug, Clone)]
pub struct ProtocolReport {
    pub mode: ProtocolMode,
    pub qubit: Qubit,
    /// Single-shot outcome drawn from the pattern distribution.
    pub sampled_outcome: OutcomeClass,
    pub sampled_pattern: String,
    pub p_plus: f64,
    pub p_minus: f64,
    pub p_success: f64,
    pub fidelity: f64,
    pub formula_fidelity: f64,
    pub delta: f64,
    pub overlap_a0_b: f64,
    pub overlap_a1_b: f64,
    /// Mean corrected state of Bob's atom over success patterns.
    pub conditional_state: Option<CMatrix>,
    pub diagnostics: Diagnostics,
    pub patterns: Vec<(PatternOutcome, Option<f64>)>,
    pub trajectory: Option<TrajectoryStats>,
}

/// Flat key–value view of a report for serialization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSummary {
    pub mode: String,
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub sampled_outcome: String,
    pub sampled_pattern: String,
    pub p_plus: f64,
    pub p_minus: f64,
    pub success_probability: f64,
    pub fidelity: f64,
    pub formula_fidelity: f64,
    pub delta: f64,
    pub one_minus_delta: f64,
    pub overlap_a0_b: f64,
    pub overlap_a1_b: f64,
    pub diagnostics: Diagnostics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<TrajectoryStats>,
}

impl ProtocolReport {
    pub fn summary(&self) -> ReportSummary {
        ReportSummary {
            mode: self.mode.label().into(),
            a: [self.qubit.a.re, self.qubit.a.im],
            b: [self.qubit.b.re, self.qubit.b.im],
            sampled_outcome: self.sampled_outcome.label().into(),
            sampled_pattern: self.sampled_pattern.clone(),
            p_plus: self.p_plus,
            p_minus: self.p_minus,
            success_probability: self.p_success,
            fidelity: self.fidelity,
            formula_fidelity: self.formula_fidelity,
            delta: self.delta,
            one_minus_delta: 1.0 - self.delta,
            overlap_a0_b: self.overlap_a0_b,
            overlap_a1_b: self.overlap_a1_b,
            diagnostics: self.diagnostics.clone(),
            trajectory: self.trajectory.clone(),
        }
    }

    pub const CSV_HEADER: [&'static str; 10] = [
        "mode",
        "success_probability",
        "p_plus",
        "p_minus",
        "fidelity",
        "formula_fidelity",
        "one_minus_delta",
        "p_emit_alice",
        "p_emit_bob",
        "sampled_outcome",
    ];

    pub fn csv_row(&self) -> Vec<String> {
        vec![
            self.mode.label().into(),
            fmt_float(self.p_success),
            fmt_float(self.p_plus),
            fmt_float(self.p_minus),
            fmt_float(self.fidelity),
            fmt_float(self.formula_fidelity),
            fmt_float(1.0 - self.delta),
            fmt_float(self.diagnostics.p_emit_alice),
            fmt_float(self.diagnostics.p_emit_bob),
            self.sampled_outcome.label().into(),
        ]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_csv(out, &[], &Self::CSV_HEADER, [self.csv_row()])
    }

    pub fn write_patterns_csv<W: Write>(&self, out: W) -> Result<()> {
        write_patterns_csv(out, &self.patterns)
    }
}

fn adiabaticity(config: &ProtocolConfig) -> Result<(f64, f64)> {
    let cg = config.alice.cg;
    let e1 = config.pulses.alice_pulse(&cg)?;
    let e2 = config.pulses.bob_pulse(&cg, config.relative_delay)?;
    let ev = EvolutionConfig { duration: config.pulses.duration, ..config.evolution };
    let grid = ev.grid()?;
    let ra = evolve_no_jump(&alice_system(&config.alice)?, &e1, &alice_initial_state(&config.qubit), &ev)?;
    let ta = alice_reference_track(&config.alice, &e1, &config.qubit, grid)?;
    let rb = evolve_no_jump(&bob_system(&config.bob)?, &e2, &bob_initial_state(), &ev)?;
    let tb = bob_reference_track(&config.bob, &e2, grid)?;
    Ok((adiabaticity_report(&ra, &ta)?.min_fidelity, adiabaticity_report(&rb, &tb)?.min_fidelity))
}

/// Runs one teleportation in the configured mode.
pub fn run_teleportation(config: &ProtocolConfig) -> Result<ProtocolReport> {
    config.validate()?;
    let q = Qubit::new(config.qubit.a, config.qubit.b)?;
    let modes = photon_modes(config)?;
    let (pa0, pa1, pb) = (
        modes.f_a0.emission_probability(),
        modes.f_a1.emission_probability(),
        modes.f_b.emission_probability(),
    );
    let sources = if config.force_mode_match {
        SourceModes::ideal()
    } else {
        SourceModes::from_modes(&modes.f_a0, &modes.f_a1, &modes.f_b)?
    };
    let network = build_bsm_network(&config.detection)?;
    let outcomes = bsm_probabilities(&TwoPhotonState::teleportation(&q, &sources)?, &network)?;
    let classes = class_probabilities(&outcomes);
    let scored = scored_patterns(outcomes, &q);
    let (p_success, fidelity) = success_fidelity(&scored);

    let mut mean = CMatrix::zeros(2, 2);
    for (o, _) in &scored {
        if let Some(rho) = corrected_state(o) {
            mean += rho * C64::new(o.probability, 0.0);
        }
    }
    let conditional_state = (p_success > 0.0).then(|| mean / C64::new(p_success, 0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (shot, _) = sample_pattern(&scored, &mut rng);
    let o = if config.force_mode_match { 1.0 } else { modes.overlap_a0_b.min(modes.overlap_a1_b) };

    let (adiabaticity_alice, adiabaticity_bob) = if config.diagnostics {
        let (a, b) = adiabaticity(config)?;
        (Some(a), Some(b))
    } else {
        (None, None)
    };
    let (p_emit_alice, p_emit_bob) = if config.force_mode_match {
        (1.0, 1.0)
    } else {
        (q.a.norm_sqr() * pa0 + q.b.norm_sqr() * pa1, pb)
    };

    let trajectory = match config.mode {
        ProtocolMode::Analytic => None,
        ProtocolMode::Trajectory => Some(trajectory_stats(config, &q, &scored, p_emit_alice * p_emit_bob)?),
    };

    Ok(ProtocolReport {
        mode: config.mode,
        qubit: q,
        sampled_outcome: shot.class,
        sampled_pattern: shot.pattern.to_string(),
        p_plus: *classes.get(&OutcomeClass::Plus).unwrap_or(&0.0),
        p_minus: *classes.get(&OutcomeClass::Minus).unwrap_or(&0.0),
        p_success,
        fidelity,
        formula_fidelity: fidelity_formula(q.a, q.b, o),
        delta: if config.force_mode_match { 0.0 } else { modes.delta },
        overlap_a0_b: if config.force_mode_match { 1.0 } else { modes.overlap_a0_b },
        overlap_a1_b: if config.force_mode_match { 1.0 } else { modes.overlap_a1_b },
        conditional_state,
        diagnostics: Diagnostics { p_emit_alice, p_emit_bob, adiabaticity_alice, adiabaticity_bob },
        patterns: scored,
        trajectory,
    })
}

fn emitted(ensemble: &TrajectoryEnsemble) -> Vec<bool> {
    ensemble
        .records
        .iter()
        .map(|r| !r.lost() && r.cavity_jumps().count() == 1)
        .collect()
}

/// Monte-Carlo estimate: trajectories decide whether each source emitted,
/// then a detector outcome is drawn conditioned on both photons existing.
///
/// Success patterns need both photons, so their analytic probabilities
/// divided by `p_both` give the conditional distribution exactly.
fn trajectory_stats(
    config: &ProtocolConfig,
    q: &Qubit,
    scored: &[(PatternOutcome, Option<f64>)],
    p_both: f64,
) -> Result<TrajectoryStats> {
    let n = config.samples;
    let (ea, eb) = if config.force_mode_match {
        (vec![true; n], vec![true; n])
    } else {
        let cg = config.alice.cg;
        let e1 = config.pulses.alice_pulse(&cg)?;
        let e2 = config.pulses.bob_pulse(&cg, config.relative_delay)?;
        let base = EvolutionConfig { duration: config.pulses.duration, trajectories: n, ..config.evolution };
        let alice = evolve_trajectories(
            &alice_system(&config.alice)?,
            &e1,
            &alice_initial_state(q),
            &EvolutionConfig { seed: config.seed.wrapping_mul(2), ..base },
        )?;
        let bob = evolve_trajectories(
            &bob_system(&config.bob)?,
            &e2,
            &bob_initial_state(),
            &EvolutionConfig { seed: config.seed.wrapping_mul(2).wrapping_add(1), ..base },
        )?;
        (emitted(&alice), emitted(&bob))
    };
    if p_both <= 0.0 {
        return Err(Error::InvalidParameter("sources never emit".into()));
    }
    let success: Vec<(f64, f64)> = scored
        .iter()
        .filter_map(|(o, f)| f.map(|f| (o.probability / p_both, f)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9E37_79B9_7F4A_7C15));

    let (mut both, mut successes) = (0usize, 0usize);
    let (mut f_sum, mut f_sq) = (0.0, 0.0);
    for i in 0..n {
        if !(ea[i] && eb[i]) {
            continue;
        }
        both += 1;
        let mut u = rng.gen::<f64>();
        for &(p, f) in &success {
            if u < p {
                successes += 1;
                f_sum += f;
                f_sq += f * f;
                break;
            }
            u -= p;
        }
    }
    let binomial = |k: usize, m: usize| {
        if m == 0 {
            return (0.0, 0.0);
        }
        let p = k as f64 / m as f64;
        (p, (p * (1.0 - p) / m as f64).sqrt())
    };
    let (sp, ss) = binomial(successes, n);
    let (hp, hs) = binomial(successes, both);
    let (mean_fidelity, fidelity_sigma) = if successes > 0 {
        let k = successes as f64;
        let mean = f_sum / k;
        (mean, ((f_sq / k - mean * mean).max(0.0) / k).sqrt())
    } else {
        (0.0, 0.0)
    };
    let frac = |v: &[bool]| v.iter().filter(|x| **x).count() as f64 / n as f64;
    Ok(TrajectoryStats {
        samples: n,
        both_emitted: both,
        successes,
        success_probability: sp,
        success_sigma: ss,
        heralded_success: hp,
        heralded_sigma: hs,
        mean_fidelity,
        fidelity_sigma,
        alice_emission: frac(&ea),
        bob_emission: frac(&eb),
    })
}

/// Eight states at the vertices of a cube inscribed in the Bloch sphere.
pub fn bloch_grid() -> Vec<Qubit> {
    let c = 1.0 / 3.0f64.sqrt();
    let mut out = Vec::with_capacity(8);
    for z in [c, -c] {
        for k in 0..4 {
            let phi = std::f64::consts::FRAC_PI_4 + k as f64 * std::f64::consts::FRAC_PI_2;
            out.push(Qubit::from_bloch(z.acos(), phi));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditRow {
    pub theta: f64,
    pub phi: f64,
    /// Overlap `O` of the mismatched photon with the others.
    pub overlap: f64,
    pub oracle: f64,
    pub formula: f64,
    pub one_minus_delta: f64,
    pub success_probability: f64,
}

impl AuditRow {
    pub fn deviation(&self) -> f64 {
        self.oracle - self.formula
    }

    pub fn bound_holds(&self) -> bool {
        self.oracle >= self.one_minus_delta - 1e-6
    }
}

/// Compares the two-photon calculation with the closed-form fidelity.
///
/// Alice's `L` mode is `Oμ + √(1-O²)μ⊥`, her `R` mode and Bob's mode are `μ`,
/// so `1 - δ = O`. Sources emit with certainty.
pub fn formula_audit(states: &[Qubit], overlaps: &[f64], detection: &DetectionModel) -> Result<Vec<AuditRow>> {
    let network = build_bsm_network(detection)?;
    let mut rows = Vec::with_capacity(states.len() * overlaps.len());
    for q in states {
        let theta = 2.0 * q.a.norm().clamp(0.0, 1.0).acos();
        let phi = q.b.arg() - q.a.arg();
        for &o in overlaps {
            if !(0.0..=1.0).contains(&o) {
                return Err(Error::InvalidParameter(format!("overlap {o} outside [0, 1]")));
            }
            let outcomes = bsm_probabilities(&TwoPhotonState::teleportation(q, &modes_with_overlap(o, 1.0))?, &network)?;
            let (p, f) = success_fidelity(&scored_patterns(outcomes, q));
            rows.push(AuditRow {
                theta,
                phi,
                overlap: o,
                oracle: f,
                formula: fidelity_formula(q.a, q.b, o),
                one_minus_delta: o,
                success_probability: p,
            });
        }
    }
    Ok(rows)
}

pub fn write_audit_csv<W: Write>(out: W, rows: &[AuditRow]) -> Result<()> {
    let max_dev = rows.iter().map(|r| r.deviation().abs()).fold(0.0, f64::max);
    let comments = vec![format!("max_abs_deviation = {}", fmt_float(max_dev))];
    let body = rows.iter().map(|r| {
        vec![
            fmt_float(r.theta),
            fmt_float(r.phi),
            fmt_float(r.overlap),
            fmt_float(r.oracle),
            fmt_float(r.formula),
            fmt_float(r.deviation()),
            fmt_float(r.one_minus_delta),
            fmt_float(r.success_probability),
            r.bound_holds().to_string(),
        ]
    });
    write_csv(
        out,
        &comments,
        &["theta", "phi", "overlap", "oracle", "formula", "deviation", "one_minus_delta", "success_probability", "bound_holds"],
        body,
    )
}
