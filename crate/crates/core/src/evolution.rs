//! Time evolution with cavity decay.
//!
//! The no-jump evolution integrates `dψ/dt = -i H_eff ψ` with
//! `H_eff = H(Ẽ(t)) - (i/2) Σ L†L` by fixed-step RK4. Quantum trajectories use
//! the waiting-time unraveling: a jump happens once `‖ψ‖²` drops below a
//! uniform draw, the channel is picked with weight `‖L ψ‖²`.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atom_cavity::{Channel, DrivenSystem};
use crate::csvio::{fmt_float, write_csv};
use crate::error::{Error, Result};
use crate::pulses::{DrivePulse, PhotonMode, Polarization, TimeGrid};
use crate::quadrature::trapezoid;
use crate::quantum::{CVector, HilbertSpace, StateVector, C64, ZERO};

/// Largest admissible `dt · ‖H_eff‖∞` per step.
pub const STABILITY_LIMIT: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolutionConfig {
    /// Integration window `T` in units of `1/κ`.
    pub duration: f64,
    /// Fixed RK4 steps over the window.
    pub n_steps: usize,
    pub trajectories: usize,
    pub seed: u64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self { duration: 40.0, n_steps: 20_000, trajectories: 10_000, seed: 0 }
    }
}

impl EvolutionConfig {
    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.duration, self.n_steps)
    }
}

/// `H_eff(Ẽ) = S + Ẽ·D` stored as the union of nonzero entries.
#[derive(Debug, Clone)]
struct CompiledGenerator {
    dim: usize,
    entries: Vec<(usize, usize, C64, C64)>,
}

impl CompiledGenerator {
    fn new(system: &DrivenSystem) -> Self {
        let d = system.space().dim();
        let mut s = system.static_part().matrix().clone();
        for c in system.channels() {
            let l = c.operator.matrix();
            s -= (l.adjoint() * l) * C64::new(0.0, 0.5);
        }
        let drive = system.drive_part().matrix();
        let mut entries = Vec::new();
        for i in 0..d {
            for j in 0..d {
                let (a, b) = (s[(i, j)], drive[(i, j)]);
                if a != ZERO || b != ZERO {
                    entries.push((i, j, a, b));
                }
            }
        }
        Self { dim: d, entries }
    }

    /// `out = -i H_eff(e) ψ`.
    fn rhs(&self, e: f64, psi: &[C64], out: &mut [C64]) {
        out.iter_mut().for_each(|x| *x = ZERO);
        for &(i, j, s, d) in &self.entries {
            out[i] += (s + d * e) * psi[j];
        }
        out.iter_mut().for_each(|x| *x = C64::new(x.im, -x.re));
    }

    fn inf_norm(&self, e: f64) -> f64 {
        let mut rows = vec![0.0; self.dim];
        for &(i, _, s, d) in &self.entries {
            rows[i] += (s + d * e).norm();
        }
        rows.into_iter().fold(0.0, f64::max)
    }

    fn annihilates(&self, psi: &[C64]) -> bool {
        let mut sa = vec![ZERO; self.dim];
        let mut da = vec![ZERO; self.dim];
        for &(i, j, s, d) in &self.entries {
            sa[i] += s * psi[j];
            da[i] += d * psi[j];
        }
        sa.iter().chain(&da).all(|x| *x == ZERO)
    }
}

struct Stepper<'a> {
    generator: &'a CompiledGenerator,
    pulse: &'a DrivePulse,
    dt: f64,
    k: [Vec<C64>; 4],
    tmp: Vec<C64>,
}

impl<'a> Stepper<'a> {
    fn new(generator: &'a CompiledGenerator, pulse: &'a DrivePulse, dt: f64) -> Self {
        let d = generator.dim;
        Self {
            generator,
            pulse,
            dt,
            k: [vec![ZERO; d], vec![ZERO; d], vec![ZERO; d], vec![ZERO; d]],
            tmp: vec![ZERO; d],
        }
    }

    /// One RK4 step from `t`, in place.
    fn step(&mut self, t: f64, psi: &mut [C64]) -> Result<()> {
        let dt = self.dt;
        let e = [self.pulse.value_at(t), self.pulse.value_at(t + 0.5 * dt), self.pulse.value_at(t + dt)];
        let guard = e.iter().map(|&x| self.generator.inf_norm(x)).fold(0.0, f64::max) * dt;
        if guard >= STABILITY_LIMIT {
            return Err(Error::StabilityGuard { time: t, value: guard });
        }
        let before: f64 = psi.iter().map(|x| x.norm_sqr()).sum();
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;
        self.generator.rhs(e[0], psi, k1);
        for i in 0..psi.len() {
            tmp[i] = psi[i] + k1[i] * (0.5 * dt);
        }
        self.generator.rhs(e[1], tmp, k2);
        for i in 0..psi.len() {
            tmp[i] = psi[i] + k2[i] * (0.5 * dt);
        }
        self.generator.rhs(e[1], tmp, k3);
        for i in 0..psi.len() {
            tmp[i] = psi[i] + k3[i] * dt;
        }
        self.generator.rhs(e[2], tmp, k4);
        for i in 0..psi.len() {
            psi[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (dt / 6.0);
        }
        let after: f64 = psi.iter().map(|x| x.norm_sqr()).sum();
        if after > before * (1.0 + 1e-10) + 1e-300 {
            return Err(Error::NormIncrease(t + dt));
        }
        Ok(())
    }
}

fn check_inputs(pulse: &DrivePulse, psi0: &StateVector, system: &DrivenSystem, grid: &TimeGrid) -> Result<()> {
    if (pulse.grid().duration() - grid.duration()).abs() > 1e-9 * grid.duration() {
        return Err(Error::GridMismatch);
    }
    if psi0.space() != system.space() {
        return Err(Error::SpaceMismatch(format!("{} vs {}", psi0.space(), system.space())));
    }
    let n = psi0.norm_sqr();
    if (n - 1.0).abs() > 1e-10 {
        return Err(Error::NotNormalized(n));
    }
    Ok(())
}

/// Emitted temporal mode of one dissipation channel.
#[derive(Debug, Clone)]
pub struct ChannelMode {
    pub channel: Channel,
    /// `√κ · c(t)`, unnormalized; its norm is the channel's emission probability.
    pub mode: PhotonMode,
}

/// Deterministic no-jump evolution sampled at every grid point.
#[derive(Debug, Clone)]
pub struct NoJumpResult {
    space: Arc<HilbertSpace>,
    grid: TimeGrid,
    states: Vec<C64>,
    modes: Vec<ChannelMode>,
    spontaneous_loss: f64,
}

impl NoJumpResult {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    /// Unnormalized state at sample `k`.
    pub fn state(&self, k: usize) -> StateVector {
        let d = self.space.dim();
        let v = CVector::from_column_slice(&self.states[k * d..(k + 1) * d]);
        StateVector::new(self.space.clone(), v).expect("stored with matching dimension")
    }

    pub fn final_state(&self) -> StateVector {
        self.state(self.grid.n_steps())
    }

    pub fn norm_sqr(&self, k: usize) -> f64 {
        let d = self.space.dim();
        self.states[k * d..(k + 1) * d].iter().map(|x| x.norm_sqr()).sum()
    }

    pub fn survival(&self) -> f64 {
        self.norm_sqr(self.grid.n_steps())
    }

    pub fn modes(&self) -> &[ChannelMode] {
        &self.modes
    }

    pub fn mode(&self, channel: Channel) -> Option<&ChannelMode> {
        self.modes.iter().find(|m| m.channel == channel)
    }

    /// Probability lost to spontaneous emission over the window.
    pub fn spontaneous_loss(&self) -> f64 {
        self.spontaneous_loss
    }

    pub fn total_emission(&self) -> f64 {
        self.modes.iter().map(|m| m.mode.emission_probability()).sum()
    }

    fn raw(&self, k: usize) -> &[C64] {
        let d = self.space.dim();
        &self.states[k * d..(k + 1) * d]
    }
}

fn integrate_path(
    generator: &CompiledGenerator,
    pulse: &DrivePulse,
    grid: &TimeGrid,
    psi0: &[C64],
) -> Result<Vec<C64>> {
    let d = generator.dim;
    let mut states = Vec::with_capacity(d * grid.len());
    let mut psi = psi0.to_vec();
    states.extend_from_slice(&psi);
    let mut stepper = Stepper::new(generator, pulse, grid.dt());
    for k in 0..grid.n_steps() {
        stepper.step(grid.time(k), &mut psi)?;
        states.extend_from_slice(&psi);
    }
    Ok(states)
}

fn apply_dense(m: &crate::quantum::CMatrix, psi: &[C64]) -> Vec<C64> {
    let d = psi.len();
    (0..d).map(|i| (0..d).map(|j| m[(i, j)] * psi[j]).sum()).collect()
}

/// Integrates the no-jump equation and extracts each cavity channel's emitted mode.
pub fn evolve_no_jump(
    system: &DrivenSystem,
    pulse: &DrivePulse,
    psi0: &StateVector,
    config: &EvolutionConfig,
) -> Result<NoJumpResult> {
    let grid = config.grid()?;
    check_inputs(pulse, psi0, system, &grid)?;
    let generator = CompiledGenerator::new(system);
    let psi: Vec<C64> = psi0.amplitudes().iter().copied().collect();
    let states = integrate_path(&generator, pulse, &grid, &psi)?;
    let d = generator.dim;
    let n = grid.len();

    let mut modes = Vec::new();
    let mut spontaneous_rate = vec![0.0; n];
    for c in system.channels() {
        let l = c.operator.matrix();
        let jumped: Vec<Vec<C64>> = (0..n).map(|k| apply_dense(l, &states[k * d..(k + 1) * d])).collect();
        if !c.channel.is_cavity() {
            for (k, v) in jumped.iter().enumerate() {
                spontaneous_rate[k] += v.iter().map(|x| x.norm_sqr()).sum::<f64>();
            }
            continue;
        }
        // the jumped vectors are parallel in the one-excitation sector: project on the peak direction
        let peak = (0..n)
            .max_by(|&a, &b| norm(&jumped[a]).total_cmp(&norm(&jumped[b])))
            .expect("non-empty grid");
        let scale = norm(&jumped[peak]);
        let samples: Vec<f64> = if scale == 0.0 {
            vec![0.0; n]
        } else {
            let u: Vec<C64> = jumped[peak].iter().map(|x| x / scale).collect();
            jumped
                .iter()
                .map(|v| u.iter().zip(v).map(|(a, b)| a.conj() * b).sum::<C64>().re)
                .collect()
        };
        let mut mode = PhotonMode::from_samples(grid, samples)?;
        if let Some(p) = c.channel.polarization() {
            mode = mode.with_polarization(p);
        }
        modes.push(ChannelMode { channel: c.channel, mode });
    }
    Ok(NoJumpResult {
        space: system.space().clone(),
        grid,
        states,
        modes,
        spontaneous_loss: trapezoid(&spontaneous_rate, grid.dt()),
    })
}

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// `√(Σ f_c²)` over channels: the total emitted mode of a polarization superposition.
pub fn combined_mode(modes: &[ChannelMode]) -> Result<PhotonMode> {
    let first = modes.first().ok_or_else(|| Error::InvalidParameter("no channel modes".into()))?;
    let grid = *first.mode.grid();
    let mut acc = vec![0.0; grid.len()];
    for m in modes {
        if *m.mode.grid() != grid {
            return Err(Error::GridMismatch);
        }
        for (a, f) in acc.iter_mut().zip(m.mode.samples()) {
            *a += f * f;
        }
    }
    PhotonMode::from_samples(grid, acc.into_iter().map(f64::sqrt).collect())
}

/// `√(∫ (f - g)² dt)`.
pub fn l2_distance(f: &PhotonMode, g: &PhotonMode) -> Result<f64> {
    if f.grid() != g.grid() {
        return Err(Error::GridMismatch);
    }
    let sq: Vec<f64> = f.samples().iter().zip(g.samples()).map(|(a, b)| (a - b).powi(2)).collect();
    Ok(trapezoid(&sq, f.grid().dt()).max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub time: f64,
    pub channel: Channel,
}

#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub index: usize,
    pub jumps: Vec<JumpEvent>,
    /// Normalized final state; `None` once a terminal (spontaneous) jump occurred.
    pub final_state: Option<StateVector>,
    /// Probability of no jump over the whole window.
    pub survival: f64,
}

impl TrajectoryRecord {
    pub fn lost(&self) -> bool {
        self.final_state.is_none()
    }

    pub fn cavity_jumps(&self) -> impl Iterator<Item = &JumpEvent> {
        self.jumps.iter().filter(|j| j.channel.is_cavity())
    }

    /// Polarization of the emitted photon, if exactly one cavity jump occurred.
    pub fn emitted_polarization(&self) -> Option<Polarization> {
        let mut it = self.cavity_jumps();
        match (it.next(), it.next()) {
            (Some(j), None) => j.channel.polarization(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryEnsemble {
    pub grid: TimeGrid,
    pub records: Vec<TrajectoryRecord>,
}

impl TrajectoryEnsemble {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Fraction of trajectories with at least one cavity jump.
    pub fn emission_fraction(&self) -> f64 {
        let n = self.records.iter().filter(|r| r.cavity_jumps().next().is_some()).count();
        n as f64 / self.records.len().max(1) as f64
    }

    pub fn jump_times(&self, filter: impl Fn(Channel) -> bool) -> Vec<f64> {
        self.records
            .iter()
            .flat_map(|r| r.jumps.iter())
            .filter(|j| filter(j.channel))
            .map(|j| j.time)
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let rows = self.records.iter().flat_map(|r| {
            r.jumps
                .iter()
                .map(move |j| vec![r.index.to_string(), j.channel.label().to_string(), fmt_float(j.time)])
        });
        let comments = vec![
            format!("trajectories = {}", self.records.len()),
            "time in 1/kappa".to_string(),
        ];
        write_csv(out, &comments, &["trajectory", "channel", "time"], rows)
    }
}

enum Segment {
    Jump { k: usize, time: f64, psi: Vec<C64> },
    End(Vec<C64>),
}

/// Propagates from sample `start` until `‖ψ‖²` falls below `threshold`.
fn run_segment(
    generator: &CompiledGenerator,
    pulse: &DrivePulse,
    grid: &TimeGrid,
    start: usize,
    mut psi: Vec<C64>,
    threshold: f64,
) -> Result<Segment> {
    let mut stepper = Stepper::new(generator, pulse, grid.dt());
    let mut prev = psi.iter().map(|x| x.norm_sqr()).sum::<f64>();
    for k in start..grid.n_steps() {
        stepper.step(grid.time(k), &mut psi)?;
        let now = psi.iter().map(|x| x.norm_sqr()).sum::<f64>();
        if now <= threshold {
            let time = grid.time(k) + grid.dt() * interpolate(prev, now, threshold);
            return Ok(Segment::Jump { k: k + 1, time, psi });
        }
        prev = now;
    }
    Ok(Segment::End(psi))
}

fn interpolate(before: f64, after: f64, threshold: f64) -> f64 {
    if before > after {
        ((before - threshold) / (before - after)).clamp(0.0, 1.0)
    } else {
        1.0
    }
}

/// Nonzero `(row, col, value)` entries of a jump operator.
type SparseEntries = Vec<(usize, usize, C64)>;

/// Runs `config.trajectories` independent trajectories in parallel.
///
/// Trajectory `i` draws from `ChaCha8Rng::seed_from_u64(seed)` on stream `i`,
/// so results do not depend on the thread count. All trajectories share the
/// deterministic path up to their first jump.
pub fn evolve_trajectories(
    system: &DrivenSystem,
    pulse: &DrivePulse,
    psi0: &StateVector,
    config: &EvolutionConfig,
) -> Result<TrajectoryEnsemble> {
    if config.trajectories == 0 {
        return Err(Error::InvalidParameter("trajectories must be at least 1".into()));
    }
    let grid = config.grid()?;
    check_inputs(pulse, psi0, system, &grid)?;
    let generator = CompiledGenerator::new(system);
    let d = generator.dim;
    let psi: Vec<C64> = psi0.amplitudes().iter().copied().collect();
    let shared = integrate_path(&generator, pulse, &grid, &psi)?;
    let norms: Vec<f64> = shared.chunks(d).map(|v| v.iter().map(|x| x.norm_sqr()).sum()).collect();
    let ops: Vec<(Channel, bool, SparseEntries)> = system
        .channels()
        .iter()
        .map(|c| {
            let m = c.operator.matrix();
            let mut e = Vec::new();
            for i in 0..d {
                for j in 0..d {
                    if m[(i, j)] != ZERO {
                        e.push((i, j, m[(i, j)]));
                    }
                }
            }
            (c.channel, c.terminal, e)
        })
        .collect();
    let space = system.space().clone();

    let run_one = |index: usize| -> Result<TrajectoryRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(index as u64);
        let survival = *norms.last().expect("grid has samples");
        let mut jumps = Vec::new();
        let r: f64 = rng.gen();
        // first jump from the shared path: norms are non-increasing
        let first = norms.partition_point(|&n| n > r);
        if first >= norms.len() {
            let v = CVector::from_column_slice(&shared[grid.n_steps() * d..]);
            let state = StateVector::new(space.clone(), v)?.normalize()?;
            return Ok(TrajectoryRecord { index, jumps, final_state: Some(state), survival });
        }
        let time = if first == 0 {
            0.0
        } else {
            grid.time(first - 1) + grid.dt() * interpolate(norms[first - 1], norms[first], r)
        };
        let mut k = first;
        let mut psi = shared[k * d..(k + 1) * d].to_vec();
        let mut t = time;
        loop {
            let weights: Vec<Vec<C64>> = ops
                .iter()
                .map(|(_, _, e)| {
                    let mut out = vec![ZERO; d];
                    for &(i, j, v) in e {
                        out[i] += v * psi[j];
                    }
                    out
                })
                .collect();
            let w: Vec<f64> = weights.iter().map(|v| v.iter().map(|x| x.norm_sqr()).sum()).collect();
            let total: f64 = w.iter().sum();
            if total <= 0.0 {
                return Err(Error::InvalidParameter("jump with vanishing rate".into()));
            }
            let mut pick = rng.gen::<f64>() * total;
            let mut chosen = w.len() - 1;
            for (c, wc) in w.iter().enumerate() {
                if pick < *wc {
                    chosen = c;
                    break;
                }
                pick -= wc;
            }
            let (channel, terminal, _) = &ops[chosen];
            jumps.push(JumpEvent { time: t, channel: *channel });
            if *terminal {
                return Ok(TrajectoryRecord { index, jumps, final_state: None, survival });
            }
            let scale = w[chosen].sqrt();
            psi = weights[chosen].iter().map(|x| x / scale).collect();
            if generator.annihilates(&psi) {
                break;
            }
            let r: f64 = rng.gen();
            match run_segment(&generator, pulse, &grid, k, psi, r)? {
                Segment::Jump { k: nk, time, psi: p } => {
                    k = nk;
                    t = time;
                    psi = p;
                }
                Segment::End(p) => {
                    psi = p;
                    break;
                }
            }
        }
        let state = StateVector::new(space.clone(), CVector::from_vec(psi))?.normalize()?;
        Ok(TrajectoryRecord { index, jumps, final_state: Some(state), survival })
    };

    let records = (0..config.trajectories)
        .into_par_iter()
        .map(run_one)
        .collect::<Result<Vec<_>>>()?;
    Ok(TrajectoryEnsemble { grid, records })
}

/// Overlap of the renormalized no-jump state with a reference track.
#[derive(Debug, Clone, PartialEq)]
pub struct AdiabaticityReport {
    /// `min_t |⟨ref(t)|ψ(t)⟩|²`.
    pub min_fidelity: f64,
    pub at_time: f64,
    pub series: Vec<f64>,
}

/// Compares the no-jump evolution against a reference state per grid point.
pub fn adiabaticity_report(result: &NoJumpResult, reference: &[StateVector]) -> Result<AdiabaticityReport> {
    if reference.len() != result.grid.len() {
        return Err(Error::GridMismatch);
    }
    let mut series = Vec::with_capacity(reference.len());
    for (k, r) in reference.iter().enumerate() {
        if r.space() != &result.space {
            return Err(Error::SpaceMismatch("reference track".into()));
        }
        let psi = result.raw(k);
        let (np, nr) = (norm(psi), r.norm());
        let f = if np == 0.0 || nr == 0.0 {
            0.0
        } else {
            let ov: C64 = r.amplitudes().iter().zip(psi).map(|(a, b)| a.conj() * b).sum();
            ov.norm_sqr() / (np * np * nr * nr)
        };
        series.push(f);
    }
    let (k, &min) = series
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    Ok(AdiabaticityReport { min_fidelity: min, at_time: result.grid.time(k), series })
}

/// No-jump dark-state track `a e^{-κI₀/2} D₀ + b e^{-κI₁/2} D₁` on `grid`.
pub fn alice_reference_track(
    params: &crate::atom_cavity::SystemParams,
    pulse: &DrivePulse,
    q: &crate::atom_cavity::Qubit,
    grid: TimeGrid,
) -> Result<Vec<StateVector>> {
    use crate::atom_cavity::adiabatic_state_alice;
    use crate::pulses::AliceBranch;
    let p = pulse.resampled(grid)?;
    let t0 = params.alice_track(&p, AliceBranch::Zero)?;
    let t1 = params.alice_track(&p, AliceBranch::One)?;
    let i0 = decay_factors(t0.sin(), grid.dt(), params.kappa);
    let i1 = decay_factors(t1.sin(), grid.dt(), params.kappa);
    (0..grid.len())
        .map(|k| {
            let damped = crate::atom_cavity::Qubit { a: q.a * i0[k], b: q.b * i1[k] };
            let one = crate::atom_cavity::Qubit { a: crate::quantum::ONE, b: ZERO };
            let zero = crate::atom_cavity::Qubit { a: ZERO, b: crate::quantum::ONE };
            let s0 = adiabatic_state_alice(&one, &t0, &t1, k)?.scaled(damped.a);
            let s1 = adiabatic_state_alice(&zero, &t0, &t1, k)?.scaled(damped.b);
            s0.plus(&s1)
        })
        .collect()
}

/// Bob's no-jump track `e^{-κI₂/2} D₂` on `grid`.
pub fn bob_reference_track(
    params: &crate::atom_cavity::SystemParams,
    pulse: &DrivePulse,
    grid: TimeGrid,
) -> Result<Vec<StateVector>> {
    let p = pulse.resampled(grid)?;
    let t = params.bob_track(&p)?;
    let f = decay_factors(t.sin(), grid.dt(), params.kappa);
    Ok((0..grid.len())
        .map(|k| crate::atom_cavity::adiabatic_state_bob(&t, k).scaled(f[k].into()))
        .collect())
}

fn decay_factors(sin: &[f64], dt: f64, kappa: f64) -> Vec<f64> {
    let s2: Vec<f64> = sin.iter().map(|s| s * s).collect();
    crate::quadrature::cumulative_trapezoid(&s2, dt)
        .into_iter()
        .map(|i| (-0.5 * kappa * i).exp())
        .collect()
}

/// Per-channel modes as CSV: `t` followed by one column per channel.
pub fn write_modes_csv<W: Write>(out: W, result: &NoJumpResult) -> Result<()> {
    let grid = result.grid;
    let mut header = vec!["t".to_string()];
    header.extend(result.modes.iter().map(|m| format!("f_{}", m.channel.label())));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = (0..grid.len()).map(|k| {
        let mut row = vec![fmt_float(grid.time(k))];
        row.extend(result.modes.iter().map(|m| fmt_float(m.mode.samples()[k])));
        row
    });
    let comments = vec!["unit = sqrt(kappa); time in 1/kappa".to_string()];
    write_csv(out, &comments, &header_refs, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atom_cavity::{alice_initial_state, alice_system, bob_initial_state, bob_system, Qubit, SystemParams};
    use crate::pulses::{AliceBranch, PulseConfig};
    use crate::quantum::ONE;

    fn short() -> EvolutionConfig {
        EvolutionConfig { trajectories: 200, seed: 7, ..EvolutionConfig::default() }
    }

    #[test]
    fn undriven_state_is_stationary() {
        let p = SystemParams::default();
        let grid = TimeGrid::new(40.0, 400).unwrap();
        let zero = DrivePulse::from_samples(grid, vec![0.0; 401]).unwrap();
        let q = Qubit::from_bloch(0.7, 1.1);
        let psi0 = alice_initial_state(&q);
        let r = evolve_no_jump(&alice_system(&p).unwrap(), &zero, &psi0, &short()).unwrap();
        assert!(r.final_state().distance(&psi0).unwrap() < 1e-14);
        for m in r.modes() {
            assert!(m.mode.samples().iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = SystemParams::default();
        let pulse = PulseConfig::default().alice_pulse(&p.cg).unwrap();
        let sys = bob_system(&p).unwrap();
        let half = bob_initial_state().scaled(C64::new(0.5, 0.0));
        assert!(matches!(evolve_no_jump(&sys, &pulse, &half, &short()), Err(Error::NotNormalized(_))));
        let wrong = alice_initial_state(&Qubit::new(ONE, ZERO).unwrap());
        assert!(matches!(evolve_no_jump(&sys, &pulse, &wrong, &short()), Err(Error::SpaceMismatch(_))));
        let coarse = EvolutionConfig { n_steps: 100, ..short() };
        assert!(matches!(
            evolve_no_jump(&sys, &pulse, &bob_initial_state(), &coarse),
            Err(Error::StabilityGuard { .. })
        ));
        let other = EvolutionConfig { duration: 20.0, ..short() };
        assert_eq!(evolve_no_jump(&sys, &pulse, &bob_initial_state(), &other).unwrap_err(), Error::GridMismatch);
    }

    #[test]
    fn norm_decay_matches_emission() {
        let p = SystemParams::default();
        let cfg = PulseConfig::default();
        let pulse = cfg.bob_pulse(&p.cg, 0.0).unwrap();
        let r = evolve_no_jump(&bob_system(&p).unwrap(), &pulse, &bob_initial_state(), &short()).unwrap();
        assert!((1.0 - r.survival() - r.total_emission()).abs() < 1e-6);
        let left = r.mode(Channel::BobL).unwrap().mode.emission_probability();
        let right = r.mode(Channel::BobR).unwrap().mode.emission_probability();
        assert!((left - right).abs() < 1e-12);
    }

    #[test]
    fn alice_branch_zero_matches_closed_form() {
        let p = SystemParams::default();
        let pulse = PulseConfig::default().alice_pulse(&p.cg).unwrap();
        let q = Qubit::new(ONE, ZERO).unwrap();
        let cfg = short();
        let r = evolve_no_jump(&alice_system(&p).unwrap(), &pulse, &alice_initial_state(&q), &cfg).unwrap();
        let track = p.alice_track(&pulse.resampled(cfg.grid().unwrap()).unwrap(), AliceBranch::Zero).unwrap();
        let analytic = crate::pulses::photon_pulse_shape(&track, p.kappa).unwrap();
        let err = l2_distance(&r.mode(Channel::AliceL).unwrap().mode, &analytic).unwrap();
        assert!(err <= 1e-2, "L2 error {err}");
        assert!(r.mode(Channel::AliceR).unwrap().mode.emission_probability() < 1e-20);
    }

    #[test]
    fn zero_kappa_has_no_cavity_jumps() {
        let p = SystemParams { kappa: 1e-300, ..SystemParams::default() };
        let pulse = PulseConfig::default().bob_pulse(&p.cg, 0.0).unwrap();
        let e = evolve_trajectories(&bob_system(&p).unwrap(), &pulse, &bob_initial_state(), &short()).unwrap();
        assert_eq!(e.emission_fraction(), 0.0);
    }

    #[test]
    fn trajectories_are_reproducible_and_thread_independent() {
        let p = SystemParams::default();
        let pulse = PulseConfig::default().bob_pulse(&p.cg, 0.0).unwrap();
        let sys = bob_system(&p).unwrap();
        let a = evolve_trajectories(&sys, &pulse, &bob_initial_state(), &short()).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| evolve_trajectories(&sys, &pulse, &bob_initial_state(), &short()).unwrap());
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        a.write_csv(&mut ca).unwrap();
        b.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
        for r in &a.records {
            assert!(r.cavity_jumps().count() <= 1);
        }
    }

    #[test]
    fn spontaneous_jumps_are_terminal() {
        let p = SystemParams { gamma: 2.0, ..SystemParams::default() };
        let pulse = PulseConfig::default().bob_pulse(&p.cg, 0.0).unwrap();
        let e = evolve_trajectories(&bob_system(&p).unwrap(), &pulse, &bob_initial_state(), &short()).unwrap();
        let lost = e.records.iter().filter(|r| r.lost()).count();
        assert!(lost > 0);
        for r in e.records.iter().filter(|r| r.lost()) {
            assert_eq!(r.jumps.last().unwrap().channel, Channel::Spontaneous);
        }
    }

    #[test]
    fn adiabaticity_regimes() {
        let p = SystemParams::default();
        let cfg = PulseConfig::default();
        let pulse = cfg.bob_pulse(&p.cg, 0.0).unwrap();
        let ev = short();
        let r = evolve_no_jump(&bob_system(&p).unwrap(), &pulse, &bob_initial_state(), &ev).unwrap();
        let track = bob_reference_track(&p, &pulse, ev.grid().unwrap()).unwrap();
        let rep = adiabaticity_report(&r, &track).unwrap();
        assert!(rep.min_fidelity > 0.98, "{}", rep.min_fidelity);

        let fast_cfg = PulseConfig { duration: 0.5, ..PulseConfig::default() };
        let fast = fast_cfg.bob_pulse(&p.cg, 0.0).unwrap();
        let fev = EvolutionConfig { duration: 0.5, n_steps: 2000, ..ev };
        let r = evolve_no_jump(&bob_system(&p).unwrap(), &fast, &bob_initial_state(), &fev).unwrap();
        let track = bob_reference_track(&p, &fast, fev.grid().unwrap()).unwrap();
        assert!(adiabaticity_report(&r, &track).unwrap().min_fidelity < 0.9);
    }
}
