//! Drive envelopes, mixing angles and the emitted-photon temporal modes.
//!
//! Time is measured in units of `1/κ`. The emitted mode for a dark-state
//! passage with mixing angle `θ(t)` is
//!
//! ```text
//! f(t) = √κ · sinθ(t) · exp[-(κ/2) ∫₀ᵗ sin²θ(τ) dτ]
//! ```
//!
//! and its norm `∫₀ᵀ f² dt = 1 - exp(-κ∫₀ᵀ sin²θ dτ)` is the emission probability.

use std::f64::consts::SQRT_2;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::csvio::{fmt_float, write_csv};
use crate::error::{Error, Result};
use crate::quadrature::{cumulative_trapezoid, trapezoid};

/// Drive must fall below this fraction of its peak at `t = 0` and `t = T`.
pub const BOUNDARY_FRACTION: f64 = 1e-3;

/// Uniform sampling of `[0, T]` with `n_steps + 1` points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    duration: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(duration: f64, n_steps: usize) -> Result<Self> {
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::InvalidParameter(format!("duration {duration} must be positive")));
        }
        if n_steps < 2 {
            return Err(Error::InvalidParameter(format!("n_steps {n_steps} must be at least 2")));
        }
        Ok(Self { duration, n_steps })
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.duration / self.n_steps as f64
    }

    /// Number of samples (`n_steps + 1`).
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |k| self.time(k))
    }
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self { duration: 40.0, n_steps: 4000 }
    }
}

/// How the `width` of a Gaussian envelope is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GaussianConvention {
    /// `exp(-(t - t_peak)² / t_w²)`: `t_w` is the 1/e half-width. Reproduces 1-δ = 0.992.
    #[default]
    HalfWidth,
    /// `exp(-(t - t_peak)² / (2 t_w²))`: `t_w` is the standard deviation.
    Sigma,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PulseShape {
    Gaussian { peak: f64, width: f64, amplitude: f64, convention: GaussianConvention },
    Sampled,
}

fn gaussian_value(t: f64, peak: f64, width: f64, amplitude: f64, convention: GaussianConvention) -> f64 {
    let x = (t - peak) / width;
    match convention {
        GaussianConvention::HalfWidth => amplitude * (-x * x).exp(),
        GaussianConvention::Sigma => amplitude * (-0.5 * x * x).exp(),
    }
}

/// Slowly varying drive envelope `Ẽ(t) ≥ 0` sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivePulse {
    grid: TimeGrid,
    samples: Vec<f64>,
    shape: PulseShape,
}

impl DrivePulse {
    pub fn from_samples(grid: TimeGrid, samples: Vec<f64>) -> Result<Self> {
        if samples.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        if samples.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidParameter("drive samples must be finite and non-negative".into()));
        }
        let pulse = Self { grid, samples, shape: PulseShape::Sampled };
        pulse.check_boundary()?;
        Ok(pulse)
    }

    fn check_boundary(&self) -> Result<()> {
        let max = self.peak_value();
        let first = self.samples[0];
        let last = *self.samples.last().expect("grid has samples");
        if max > 0.0 && (first > BOUNDARY_FRACTION * max || last > BOUNDARY_FRACTION * max) {
            return Err(Error::BoundaryViolation(format!(
                "E(0)/max = {:.3e}, E(T)/max = {:.3e}",
                first / max,
                last / max
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn shape(&self) -> PulseShape {
        self.shape
    }

    pub fn peak_value(&self) -> f64 {
        self.samples.iter().copied().fold(0.0, f64::max)
    }

    /// Envelope at an arbitrary time: closed form for analytic shapes,
    /// linear interpolation otherwise.
    pub fn value_at(&self, t: f64) -> f64 {
        match self.shape {
            PulseShape::Gaussian { peak, width, amplitude, convention } => {
                gaussian_value(t, peak, width, amplitude, convention)
            }
            PulseShape::Sampled => {
                let dt = self.grid.dt();
                let x = (t / dt).clamp(0.0, self.grid.n_steps() as f64);
                let k = (x.floor() as usize).min(self.grid.n_steps() - 1);
                let w = x - k as f64;
                self.samples[k] * (1.0 - w) + self.samples[k + 1] * w
            }
        }
    }

    /// Same shape, amplitude multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<DrivePulse> {
        if !(factor > 0.0) {
            return Err(Error::InvalidParameter(format!("scale factor {factor} must be positive")));
        }
        let shape = match self.shape {
            PulseShape::Gaussian { peak, width, amplitude, convention } => {
                PulseShape::Gaussian { peak, width, amplitude: amplitude * factor, convention }
            }
            PulseShape::Sampled => PulseShape::Sampled,
        };
        Ok(Self {
            grid: self.grid,
            samples: self.samples.iter().map(|x| x * factor).collect(),
            shape,
        })
    }

    /// The same envelope sampled on another grid of equal duration.
    pub fn resampled(&self, grid: TimeGrid) -> Result<DrivePulse> {
        if (grid.duration() - self.grid.duration()).abs() > 1e-12 * self.grid.duration() {
            return Err(Error::GridMismatch);
        }
        let samples = grid.times().map(|t| self.value_at(t)).collect();
        Ok(Self { grid, samples, shape: self.shape })
    }
}

/// `Ẽ(t) = E_max · exp(-(t - t_peak)²/t_w²)` (1/e half-width convention).
pub fn gaussian_pulse(grid: TimeGrid, t_peak: f64, t_w: f64, e_max: f64) -> Result<DrivePulse> {
    gaussian_pulse_with(grid, t_peak, t_w, e_max, GaussianConvention::HalfWidth)
}

pub fn gaussian_pulse_with(
    grid: TimeGrid,
    t_peak: f64,
    t_w: f64,
    e_max: f64,
    convention: GaussianConvention,
) -> Result<DrivePulse> {
    if !(t_peak > 0.0 && t_peak < grid.duration()) {
        return Err(Error::InvalidParameter(format!("peak time {t_peak} outside (0, T)")));
    }
    if !(t_w > 0.0) || !(e_max > 0.0) {
        return Err(Error::InvalidParameter("width and amplitude must be positive".into()));
    }
    let samples = grid
        .times()
        .map(|t| gaussian_value(t, t_peak, t_w, e_max, convention))
        .collect();
    let pulse = DrivePulse {
        grid,
        samples,
        shape: PulseShape::Gaussian { peak: t_peak, width: t_w, amplitude: e_max, convention },
    };
    pulse.check_boundary()?;
    Ok(pulse)
}

/// Dimensionless Clebsch–Gordan factors of the drive and cavity transitions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CgTable {
    pub c_omega0: f64,
    pub c_omega1: f64,
    pub c_omega2: f64,
    pub c_g1: f64,
    pub c_g2: f64,
}

impl Default for CgTable {
    /// `C_Ω0 = √(1/3)`, `C_Ω1 = √(1/2)`, `C_g1 = C_g2 = 1` and `C_Ω2` chosen so
    /// that the pulse-matching ratio `√2·C_g2·C_Ω1/(C_g1·C_Ω2)` equals `√(2/3)`.
    fn default() -> Self {
        let c_omega1 = 0.5f64.sqrt();
        Self {
            c_omega0: (1.0f64 / 3.0).sqrt(),
            c_omega1,
            c_omega2: SQRT_2 * c_omega1 / (2.0f64 / 3.0).sqrt(),
            c_g1: 1.0,
            c_g2: 1.0,
        }
    }
}

impl CgTable {
    pub fn validate(&self) -> Result<()> {
        let all = [self.c_omega0, self.c_omega1, self.c_omega2, self.c_g1, self.c_g2];
        if all.iter().any(|c| !c.is_finite() || *c == 0.0) {
            return Err(Error::InvalidParameter(format!("CG coefficients must be finite and nonzero: {all:?}")));
        }
        Ok(())
    }

    /// Ratio `Ẽ₂/Ẽ₁` for which Bob's photon mode equals Alice's branch-1 mode.
    pub fn pulse_matching_ratio(&self) -> f64 {
        SQRT_2 * self.c_g2 * self.c_omega1 / (self.c_g1 * self.c_omega2)
    }

    pub fn drive(&self, branch: AliceBranch) -> f64 {
        match branch {
            AliceBranch::Zero => self.c_omega0,
            AliceBranch::One => self.c_omega1,
        }
    }
}

/// Which of Alice's two Λ-branches (`g₀→e₀→r` or `g₁→e₁→r`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AliceBranch {
    Zero,
    One,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingAngle {
    pub sin: f64,
    pub cos: f64,
}

impl MixingAngle {
    pub fn from_theta(theta: f64) -> Self {
        Self { sin: theta.sin(), cos: theta.cos() }
    }
}

/// Samples of `sinθ(t)`, `cosθ(t)` with `sinθ = Ω/√(G² + Ω²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingAngleTrack {
    grid: TimeGrid,
    sin: Vec<f64>,
    cos: Vec<f64>,
}

impl MixingAngleTrack {
    /// Track for drive rates `omega(t_k)` against an effective coupling `coupling`.
    pub fn from_rates(grid: TimeGrid, omega: &[f64], coupling: f64) -> Result<Self> {
        if omega.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        if !(coupling > 0.0) {
            return Err(Error::InvalidParameter(format!("coupling {coupling} must be positive")));
        }
        let (sin, cos) = omega
            .iter()
            .map(|&w| {
                let r = w.hypot(coupling);
                (w / r, coupling / r)
            })
            .unzip();
        Ok(Self { grid, sin, cos })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn sin(&self) -> &[f64] {
        &self.sin
    }

    pub fn cos(&self) -> &[f64] {
        &self.cos
    }

    pub fn angle(&self, k: usize) -> MixingAngle {
        MixingAngle { sin: self.sin[k], cos: self.cos[k] }
    }

    /// `∫₀ᵀ sin²θ dt`.
    pub fn sin_sq_integral(&self) -> f64 {
        let s2: Vec<f64> = self.sin.iter().map(|s| s * s).collect();
        trapezoid(&s2, self.grid.dt())
    }
}

/// `sinθᵢ = C_Ωᵢ Ẽ / √(C_g1² + C_Ωᵢ² Ẽ²)`.
pub fn mixing_angle_alice(pulse: &DrivePulse, cg: &CgTable, branch: AliceBranch) -> Result<MixingAngleTrack> {
    cg.validate()?;
    let c = cg.drive(branch);
    let omega: Vec<f64> = pulse.samples().iter().map(|e| c * e).collect();
    MixingAngleTrack::from_rates(*pulse.grid(), &omega, cg.c_g1.abs())
}

/// `sinθ₂ = C_Ω2 Ẽ / √(2 C_g2² + C_Ω2² Ẽ²)`.
pub fn mixing_angle_bob(pulse: &DrivePulse, cg: &CgTable) -> Result<MixingAngleTrack> {
    cg.validate()?;
    let omega: Vec<f64> = pulse.samples().iter().map(|e| cg.c_omega2 * e).collect();
    MixingAngleTrack::from_rates(*pulse.grid(), &omega, SQRT_2 * cg.c_g2.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarization {
    #[serde(rename = "L")]
    Left,
    #[serde(rename = "R")]
    Right,
}

impl Polarization {
    pub fn label(&self) -> &'static str {
        match self {
            Polarization::Left => "L",
            Polarization::Right => "R",
        }
    }
}

/// A real temporal mode `f(t)` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonMode {
    grid: TimeGrid,
    samples: Vec<f64>,
    polarization: Option<Polarization>,
    emission_probability: f64,
    normalized: bool,
}

impl PhotonMode {
    /// Wraps raw samples; the emission probability is their quadrature norm.
    pub fn from_samples(grid: TimeGrid, samples: Vec<f64>) -> Result<Self> {
        if samples.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        let sq: Vec<f64> = samples.iter().map(|x| x * x).collect();
        let p = trapezoid(&sq, grid.dt());
        Ok(Self { grid, samples, polarization: None, emission_probability: p, normalized: false })
    }

    pub fn with_polarization(mut self, p: Polarization) -> Self {
        self.polarization = Some(p);
        self
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn polarization(&self) -> Option<Polarization> {
        self.polarization
    }

    /// `∫₀ᵀ f² dt` of the raw mode (kept after normalization).
    pub fn emission_probability(&self) -> f64 {
        self.emission_probability
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm_sqr(&self) -> f64 {
        let sq: Vec<f64> = self.samples.iter().map(|x| x * x).collect();
        trapezoid(&sq, self.grid.dt())
    }
}

/// Closed-form emitted mode for a mixing-angle track. Returned raw (unnormalized).
pub fn photon_pulse_shape(track: &MixingAngleTrack, kappa: f64) -> Result<PhotonMode> {
    if !(kappa > 0.0) {
        return Err(Error::InvalidParameter(format!("kappa {kappa} must be positive")));
    }
    let s2: Vec<f64> = track.sin.iter().map(|s| s * s).collect();
    let cumulative = cumulative_trapezoid(&s2, track.grid.dt());
    let samples = track
        .sin
        .iter()
        .zip(&cumulative)
        .map(|(s, i)| kappa.sqrt() * s * (-0.5 * kappa * i).exp())
        .collect();
    PhotonMode::from_samples(track.grid, samples)
}

pub fn normalize_mode(f: &PhotonMode) -> Result<PhotonMode> {
    let norm = f.norm_sqr();
    if norm <= 1e-6 {
        return Err(Error::NearZeroMode(norm));
    }
    let scale = norm.sqrt().recip();
    Ok(PhotonMode {
        grid: f.grid,
        samples: f.samples.iter().map(|x| x * scale).collect(),
        polarization: f.polarization,
        emission_probability: f.emission_probability,
        normalized: true,
    })
}

/// `∫ f g dt` for arbitrary (not necessarily normalized) modes on one grid.
pub fn inner_product(f: &PhotonMode, g: &PhotonMode) -> Result<f64> {
    if f.grid != g.grid {
        return Err(Error::GridMismatch);
    }
    let prod: Vec<f64> = f.samples.iter().zip(&g.samples).map(|(a, b)| a * b).collect();
    Ok(trapezoid(&prod, f.grid.dt()))
}

/// Overlap `∫ f g dt` of two normalized modes.
pub fn overlap(f: &PhotonMode, g: &PhotonMode) -> Result<f64> {
    if !f.normalized || !g.normalized {
        return Err(Error::InvalidParameter("overlap requires normalized modes".into()));
    }
    inner_product(f, g)
}

/// `δ = 1 - ∫ f_A0 f_A1 dt` after normalizing both modes.
pub fn mode_mismatch(f_a0: &PhotonMode, f_a1: &PhotonMode) -> Result<f64> {
    Ok(1.0 - overlap(&normalize_mode(f_a0)?, &normalize_mode(f_a1)?)?)
}

/// Drive configuration shared by Alice and Bob. Defaults: Gaussian centred
/// at `T/2`, width `√2·T/10`, amplitude `C_g1/C_Ω0`, Bob's amplitude scaled
/// by the matching ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PulseConfig {
    /// `T` in units of `1/κ`.
    pub duration: f64,
    pub n_steps: usize,
    /// Peak time as a fraction of `T`.
    pub peak_fraction: f64,
    /// Width `t_w` as a fraction of `T`.
    pub width_fraction: f64,
    /// Peak of `Ẽ₁`; `None` means `C_g1/C_Ω0`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    /// `Ẽ₂/Ẽ₁`; `None` means the pulse-matching ratio of the CG table.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    pub convention: GaussianConvention,
}

impl Default for PulseConfig {
    fn default() -> Self {
        Self {
            duration: 40.0,
            n_steps: 4000,
            peak_fraction: 0.5,
            width_fraction: SQRT_2 / 10.0,
            amplitude: None,
            ratio: None,
            convention: GaussianConvention::HalfWidth,
        }
    }
}

impl PulseConfig {
    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.duration, self.n_steps)
    }

    pub fn amplitude(&self, cg: &CgTable) -> f64 {
        self.amplitude.unwrap_or(cg.c_g1 / cg.c_omega0)
    }

    pub fn ratio(&self, cg: &CgTable) -> f64 {
        self.ratio.unwrap_or_else(|| cg.pulse_matching_ratio())
    }

    pub fn alice_pulse_on(&self, grid: TimeGrid, cg: &CgTable) -> Result<DrivePulse> {
        gaussian_pulse_with(
            grid,
            self.peak_fraction * self.duration,
            self.width_fraction * self.duration,
            self.amplitude(cg),
            self.convention,
        )
    }

    /// Bob's drive, optionally delayed by `delay` relative to Alice's.
    pub fn bob_pulse_on(&self, grid: TimeGrid, cg: &CgTable, delay: f64) -> Result<DrivePulse> {
        gaussian_pulse_with(
            grid,
            self.peak_fraction * self.duration + delay,
            self.width_fraction * self.duration,
            self.ratio(cg) * self.amplitude(cg),
            self.convention,
        )
    }

    pub fn alice_pulse(&self, cg: &CgTable) -> Result<DrivePulse> {
        self.alice_pulse_on(self.grid()?, cg)
    }

    pub fn bob_pulse(&self, cg: &CgTable, delay: f64) -> Result<DrivePulse> {
        self.bob_pulse_on(self.grid()?, cg, delay)
    }
}

/// The three closed-form modes `f_A0`, `f_A1`, `f_B` (raw).
#[derive(Debug, Clone)]
pub struct ReferenceModes {
    pub f_a0: PhotonMode,
    pub f_a1: PhotonMode,
    pub f_b: PhotonMode,
}

impl ReferenceModes {
    pub fn one_minus_delta(&self) -> Result<f64> {
        Ok(1.0 - mode_mismatch(&self.f_a0, &self.f_a1)?)
    }
}

pub fn reference_modes(config: &PulseConfig, cg: &CgTable, kappa: f64) -> Result<ReferenceModes> {
    let e1 = config.alice_pulse(cg)?;
    let e2 = config.bob_pulse(cg, 0.0)?;
    Ok(ReferenceModes {
        f_a0: photon_pulse_shape(&mixing_angle_alice(&e1, cg, AliceBranch::Zero)?, kappa)?
            .with_polarization(Polarization::Left),
        f_a1: photon_pulse_shape(&mixing_angle_alice(&e1, cg, AliceBranch::One)?, kappa)?
            .with_polarization(Polarization::Right),
        f_b: photon_pulse_shape(&mixing_angle_bob(&e2, cg)?, kappa)?,
    })
}

/// Two-column CSV `(t, value)`; the header names the quantity and its unit.
pub fn write_series_csv<W: Write>(out: W, quantity: &str, unit: &str, grid: &TimeGrid, values: &[f64]) -> Result<()> {
    if values.len() != grid.len() {
        return Err(Error::GridMismatch);
    }
    let comments = vec![
        format!("quantity = {quantity}"),
        format!("unit = {unit}; time in 1/kappa"),
    ];
    let rows = grid
        .times()
        .zip(values)
        .map(|(t, v)| vec![fmt_float(t), fmt_float(*v)]);
    write_csv(out, &comments, &["t", quantity], rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn fig5() -> (DrivePulse, CgTable) {
        let cg = CgTable::default();
        (PulseConfig::default().alice_pulse(&cg).unwrap(), cg)
    }

    #[test]
    fn gaussian_peak_and_symmetry() {
        let grid = TimeGrid::default();
        let p = gaussian_pulse(grid, 20.0, 5.0, 2.5).unwrap();
        assert_abs_diff_eq!(p.value_at(20.0), 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p.samples()[2000], 2.5, epsilon = 1e-15);
        for k in [1usize, 17, 250, 1999] {
            assert_abs_diff_eq!(p.samples()[2000 + k], p.samples()[2000 - k], epsilon = 1e-15);
        }
    }

    #[test]
    fn gaussian_rejects_wide_pulse() {
        let grid = TimeGrid::default();
        assert!(matches!(gaussian_pulse(grid, 20.0, 15.0, 1.0), Err(Error::BoundaryViolation(_))));
        assert!(gaussian_pulse(grid, 0.0, 5.0, 1.0).is_err());
        assert!(gaussian_pulse(grid, 20.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn fig5_pulse_parameters() {
        let (p, cg) = fig5();
        match p.shape() {
            PulseShape::Gaussian { peak, width, amplitude, .. } => {
                assert_abs_diff_eq!(peak, 20.0, epsilon = 1e-12);
                assert_abs_diff_eq!(width, SQRT_2 * 4.0, epsilon = 1e-12);
                assert_abs_diff_eq!(amplitude, cg.c_g1 / cg.c_omega0, epsilon = 1e-12);
            }
            PulseShape::Sampled => panic!("expected Gaussian"),
        }
    }

    #[test]
    fn cg_defaults() {
        let cg = CgTable::default();
        assert_abs_diff_eq!(cg.c_omega0, (1.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(cg.c_omega1, 0.5f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(cg.pulse_matching_ratio(), (2.0f64 / 3.0).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn mixing_angle_special_values() {
        let cg = CgTable::default();
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let zero = DrivePulse::from_samples(grid, vec![0.0; 3]).unwrap();
        let t = mixing_angle_alice(&zero, &cg, AliceBranch::Zero).unwrap();
        assert_eq!(t.angle(1), MixingAngle { sin: 0.0, cos: 1.0 });
        let tb = mixing_angle_bob(&zero, &cg).unwrap();
        assert_eq!(tb.sin()[1], 0.0);

        let omega_eq_g = [0.0, cg.c_g1 / cg.c_omega0 * cg.c_omega0, 0.0];
        let t = MixingAngleTrack::from_rates(grid, &omega_eq_g, cg.c_g1).unwrap();
        assert_abs_diff_eq!(t.sin()[1], 0.5f64.sqrt(), epsilon = 1e-15);

        // Ω₂² = 2 g₂²
        let e = SQRT_2 * cg.c_g2 / cg.c_omega2;
        let p = DrivePulse { grid, samples: vec![0.0, e, 0.0], shape: PulseShape::Sampled };
        assert_abs_diff_eq!(mixing_angle_bob(&p, &cg).unwrap().sin()[1], 0.5f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn bob_track_matches_alice_branch_one_under_pulse_matching() {
        let (e1, cg) = fig5();
        let e2 = e1.scaled(cg.pulse_matching_ratio()).unwrap();
        let a1 = mixing_angle_alice(&e1, &cg, AliceBranch::One).unwrap();
        let b = mixing_angle_bob(&e2, &cg).unwrap();
        for (x, y) in a1.sin().iter().zip(b.sin()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_track_gives_zero_mode() {
        let grid = TimeGrid::new(10.0, 100).unwrap();
        let t = MixingAngleTrack::from_rates(grid, &vec![0.0; 101], 1.0).unwrap();
        let f = photon_pulse_shape(&t, 1.0).unwrap();
        assert!(f.samples().iter().all(|&x| x == 0.0));
        assert_eq!(f.emission_probability(), 0.0);
        assert!(matches!(normalize_mode(&f), Err(Error::NearZeroMode(_))));
        assert!(photon_pulse_shape(&t, 0.0).is_err());
    }

    #[test]
    fn normalization_properties() {
        let (e1, cg) = fig5();
        let raw = photon_pulse_shape(&mixing_angle_alice(&e1, &cg, AliceBranch::Zero).unwrap(), 1.0).unwrap();
        let n = normalize_mode(&raw).unwrap();
        assert_abs_diff_eq!(n.norm_sqr(), 1.0, epsilon = 1e-8);
        let again = normalize_mode(&n).unwrap();
        for (a, b) in n.samples().iter().zip(again.samples()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let tripled = PhotonMode::from_samples(*raw.grid(), raw.samples().iter().map(|x| 3.0 * x).collect()).unwrap();
        let n3 = normalize_mode(&tripled).unwrap();
        for (a, b) in n.samples().iter().zip(n3.samples()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn overlap_self_and_disjoint() {
        let (e1, cg) = fig5();
        let f = normalize_mode(
            &photon_pulse_shape(&mixing_angle_alice(&e1, &cg, AliceBranch::One).unwrap(), 1.0).unwrap(),
        )
        .unwrap();
        assert_abs_diff_eq!(overlap(&f, &f).unwrap(), 1.0, epsilon = 1e-8);

        let grid = TimeGrid::new(10.0, 1000).unwrap();
        let bump = |c: f64| -> Vec<f64> {
            grid.times()
                .map(|t| if (t - c).abs() < 1.0 { (1.0 - (t - c).powi(2)).powi(3) } else { 0.0 })
                .collect()
        };
        let a = normalize_mode(&PhotonMode::from_samples(grid, bump(3.0)).unwrap()).unwrap();
        let b = normalize_mode(&PhotonMode::from_samples(grid, bump(7.0)).unwrap()).unwrap();
        assert_eq!(overlap(&a, &b).unwrap(), 0.0);

        let other = normalize_mode(&PhotonMode::from_samples(TimeGrid::new(10.0, 500).unwrap(), vec![1.0; 501]).unwrap()).unwrap();
        assert_eq!(overlap(&a, &other), Err(Error::GridMismatch));
    }

    #[test]
    fn fig5_mode_overlap() {
        let cg = CgTable::default();
        let modes = reference_modes(&PulseConfig::default(), &cg, 1.0).unwrap();
        let o = modes.one_minus_delta().unwrap();
        assert!((o - 0.992).abs() <= 0.002, "1-δ = {o}");
    }

    #[test]
    fn quadrature_convergence() {
        let cg = CgTable::default();
        let coarse = reference_modes(&PulseConfig::default(), &cg, 1.0).unwrap().one_minus_delta().unwrap();
        let fine_cfg = PulseConfig { n_steps: 8000, ..PulseConfig::default() };
        let fine = reference_modes(&fine_cfg, &cg, 1.0).unwrap().one_minus_delta().unwrap();
        assert!((coarse - fine).abs() < 1e-4);
    }

    #[test]
    fn gaussian_convention_calibration() {
        // the σ reading violates the boundary invariant and misses 0.992 ± 0.002
        let cg = CgTable::default();
        let sigma = PulseConfig { convention: GaussianConvention::Sigma, ..PulseConfig::default() };
        assert!(matches!(sigma.alice_pulse(&cg), Err(Error::BoundaryViolation(_))));
        let grid = sigma.grid().unwrap();
        let e = gaussian_value(0.0, 20.0, 4.0 * SQRT_2, 1.0, GaussianConvention::Sigma);
        assert!(e > BOUNDARY_FRACTION);
        // evaluate the σ-convention overlap without the guard
        let samples: Vec<f64> = grid
            .times()
            .map(|t| gaussian_value(t, 20.0, 4.0 * SQRT_2, sigma.amplitude(&cg), GaussianConvention::Sigma))
            .collect();
        let p = DrivePulse { grid, samples, shape: PulseShape::Sampled };
        let f0 = photon_pulse_shape(&mixing_angle_alice(&p, &cg, AliceBranch::Zero).unwrap(), 1.0).unwrap();
        let f1 = photon_pulse_shape(&mixing_angle_alice(&p, &cg, AliceBranch::One).unwrap(), 1.0).unwrap();
        let sigma_overlap = 1.0 - mode_mismatch(&f0, &f1).unwrap();
        assert!((sigma_overlap - 0.992).abs() > 0.002, "σ overlap {sigma_overlap}");
        assert_eq!(PulseConfig::default().convention, GaussianConvention::HalfWidth);
    }

    #[test]
    fn monotone_mismatch_in_cg_gap() {
        let base = CgTable::default();
        let e1 = PulseConfig::default().alice_pulse(&base).unwrap();
        let mut last = f64::INFINITY;
        for k in 0..10 {
            let c1 = base.c_omega0 * (1.0 + 0.1 * k as f64);
            let cg = CgTable { c_omega1: c1, ..base };
            let f0 = photon_pulse_shape(&mixing_angle_alice(&e1, &cg, AliceBranch::Zero).unwrap(), 1.0).unwrap();
            let f1 = photon_pulse_shape(&mixing_angle_alice(&e1, &cg, AliceBranch::One).unwrap(), 1.0).unwrap();
            let o = 1.0 - mode_mismatch(&f0, &f1).unwrap();
            assert!(o <= last + 1e-12, "overlap increased at step {k}: {o} > {last}");
            last = o;
        }
    }

    #[test]
    fn ratio_insensitivity() {
        let cg = CgTable::default();
        let nominal = cg.pulse_matching_ratio();
        let min_overlap = |ratio: f64| {
            let cfg = PulseConfig { ratio: Some(ratio), ..PulseConfig::default() };
            let m = reference_modes(&cfg, &cg, 1.0).unwrap();
            let fb = normalize_mode(&m.f_b).unwrap();
            let o0 = overlap(&normalize_mode(&m.f_a0).unwrap(), &fb).unwrap();
            let o1 = overlap(&normalize_mode(&m.f_a1).unwrap(), &fb).unwrap();
            o0.min(o1)
        };
        let reference = min_overlap(nominal);
        for f in [0.9, 0.95, 1.05, 1.1] {
            assert!((min_overlap(nominal * f) - reference).abs() < 0.01);
        }
    }

    #[test]
    fn series_csv_layout() {
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let mut buf = Vec::new();
        write_series_csv(&mut buf, "f_A0", "sqrt(kappa)", &grid, &[0.0, 0.5, 0.0]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# schema_version"));
        assert_eq!(lines[3], "t,f_A0");
        assert_eq!(lines[5], "5.00000000000e-1,5.00000000000e-1");
    }

    proptest! {
        #[test]
        fn emission_identity(peak in 0.35f64..0.65, width in 0.06f64..0.12, amp in 0.2f64..4.0, c in 0.2f64..1.5, kappa in 0.5f64..2.0) {
            let grid = TimeGrid::new(40.0, 4000).unwrap();
            let pulse = gaussian_pulse(grid, peak * 40.0, width * 40.0, amp).unwrap();
            let cg = CgTable { c_omega0: c, ..CgTable::default() };
            let track = mixing_angle_alice(&pulse, &cg, AliceBranch::Zero).unwrap();
            let f = photon_pulse_shape(&track, kappa).unwrap();
            let expected = 1.0 - (-kappa * track.sin_sq_integral()).exp();
            prop_assert!((f.emission_probability() - expected).abs() < 1e-8);
        }

        #[test]
        fn spatial_mode_invariance(s in 0.5f64..1.5) {
            let (e1, cg) = fig5();
            let omega: Vec<f64> = e1.samples().iter().map(|e| cg.c_omega0 * e).collect();
            let scaled: Vec<f64> = omega.iter().map(|w| s * w).collect();
            let a = MixingAngleTrack::from_rates(*e1.grid(), &omega, cg.c_g1).unwrap();
            let b = MixingAngleTrack::from_rates(*e1.grid(), &scaled, s * cg.c_g1).unwrap();
            for (x, y) in a.sin().iter().zip(b.sin()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            let fa = photon_pulse_shape(&a, 1.0).unwrap();
            let fb = photon_pulse_shape(&b, 1.0).unwrap();
            for (x, y) in fa.samples().iter().zip(fb.samples()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn track_is_unit(e in 0.0f64..50.0) {
            let grid = TimeGrid::new(1.0, 2).unwrap();
            let t = MixingAngleTrack::from_rates(grid, &[0.0, e, 0.0], 1.0).unwrap();
            let a = t.angle(1);
            prop_assert!((a.sin * a.sin + a.cos * a.cos - 1.0).abs() < 1e-12);
            prop_assert!(a.sin >= 0.0 && a.sin < 1.0);
        }
    }
}
