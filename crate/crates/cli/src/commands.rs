//! The four subcommands. Each writes its artifacts plus `manifest.toml` into
//! the output directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use qteleport_core::csvio::{fmt_float, write_csv};
use qteleport_core::protocol::{bloch_grid, formula_audit, run_teleportation, write_audit_csv, AuditRow};
use qteleport_core::pulses::{reference_modes, write_series_csv, PhotonMode};
use qteleport_core::ProtocolReport;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{RunConfig, SweepSpec};
use crate::error::{CliError, Result};
use crate::svg::{line_chart, Series};

/// Overlap values of the audit grid.
pub const AUDIT_OVERLAPS: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

#[derive(Debug, Serialize)]
pub struct RunManifest<'a> {
    pub command: &'a str,
    pub version: &'a str,
    pub seed: u64,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<String>,
    pub config: &'a RunConfig,
}

/// Output directory that records every file written into it.
pub struct OutputDir {
    dir: PathBuf,
    files: Vec<String>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    pub fn write_with<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path).map_err(|e| io_err(&path, e))?);
        f(&mut w)?;
        w.flush().map_err(|e| io_err(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn finish(mut self, command: &str, config: &RunConfig, started: Instant) -> Result<Vec<String>> {
        let manifest = RunManifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed: config.seed,
            wall_clock_seconds: started.elapsed().as_secs_f64(),
            outputs: self.files.clone(),
            config,
        };
        let text = toml::to_string(&manifest).map_err(|e| CliError::Config(e.to_string()))?;
        self.write_text("manifest.toml", &text)?;
        Ok(self.files)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io { path: path.display().to_string(), source }
}

fn curve(mode: &PhotonMode) -> Vec<(f64, f64)> {
    mode.grid().times().zip(mode.samples().iter().copied()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulsesOutcome {
    pub one_minus_delta: f64,
    pub files: Vec<String>,
}

/// Photon modes `f_A0`, `f_A1`, `f_B` and the overlap `1 - δ`.
pub fn cmd_pulses(config: &RunConfig, out: &Path) -> Result<PulsesOutcome> {
    let started = Instant::now();
    let mut dir = OutputDir::create(out)?;
    let modes = reference_modes(&config.pulses, &config.cg, config.system.kappa)?;
    let one_minus_delta = modes.one_minus_delta()?;
    for (name, quantity, m) in [("f_a0.csv", "f_A0", &modes.f_a0), ("f_a1.csv", "f_A1", &modes.f_a1), ("f_b.csv", "f_B", &modes.f_b)] {
        dir.write_with(name, |w| Ok(write_series_csv(w, quantity, "kappa^(1/2)", m.grid(), m.samples())?))?;
    }
    dir.write_with("overlap.csv", |w| {
        Ok(write_csv(w, &[], &["one_minus_delta"], [vec![fmt_float(one_minus_delta)]])?)
    })?;
    let svg = line_chart(
        &format!("photon modes, 1 - delta = {one_minus_delta:.4}"),
        "t [1/kappa]",
        "f(t)",
        &[
            Series { name: "f_A0", points: curve(&modes.f_a0) },
            Series { name: "f_A1", points: curve(&modes.f_a1) },
            Series { name: "f_B", points: curve(&modes.f_b) },
        ],
    );
    dir.write_text("pulses.svg", &svg)?;
    let files = dir.finish("pulses", config, started)?;
    Ok(PulsesOutcome { one_minus_delta, files })
}

pub struct TeleportOutcome {
    pub report: ProtocolReport,
    pub summary_toml: String,
    pub files: Vec<String>,
}

pub fn cmd_teleport(config: &RunConfig, out: &Path) -> Result<TeleportOutcome> {
    let started = Instant::now();
    let mut dir = OutputDir::create(out)?;
    let report = run_teleportation(&config.protocol()?)?;
    let summary_toml = toml::to_string(&report.summary()).map_err(|e| CliError::Config(e.to_string()))?;
    dir.write_text("report.toml", &summary_toml)?;
    dir.write_with("report.csv", |w| Ok(report.write_csv(w)?))?;
    dir.write_with("patterns.csv", |w| Ok(report.write_patterns_csv(w)?))?;
    let files = dir.finish("teleport", config, started)?;
    Ok(TeleportOutcome { report, summary_toml, files })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub replicate: usize,
    pub seed: u64,
    pub fidelity: f64,
    pub success_probability: f64,
    pub delta: f64,
    pub formula_fidelity: f64,
    pub adiabaticity_alice: Option<f64>,
    pub adiabaticity_bob: Option<f64>,
    pub trajectory_success: Option<(f64, f64)>,
}

pub const SWEEP_HEADER: [&str; 11] = [
    "value",
    "replicate",
    "seed",
    "fidelity",
    "success_probability",
    "delta",
    "formula_fidelity",
    "adiabaticity_alice",
    "adiabaticity_bob",
    "trajectory_success",
    "trajectory_sigma",
];

impl SweepRow {
    fn cells(&self) -> Vec<String> {
        let opt = |x: Option<f64>| x.map(fmt_float).unwrap_or_default();
        vec![
            fmt_float(self.value),
            self.replicate.to_string(),
            self.seed.to_string(),
            fmt_float(self.fidelity),
            fmt_float(self.success_probability),
            fmt_float(self.delta),
            fmt_float(self.formula_fidelity),
            opt(self.adiabaticity_alice),
            opt(self.adiabaticity_bob),
            opt(self.trajectory_success.map(|t| t.0)),
            opt(self.trajectory_success.map(|t| t.1)),
        ]
    }
}

fn sweep_point(config: &RunConfig, spec: &SweepSpec, value: f64, replicate: usize) -> Result<SweepRow> {
    let mut c = config.with_value(&spec.parameter, value)?;
    c.seed = config.seed.wrapping_add(replicate as u64);
    let r = run_teleportation(&c.protocol()?)?;
    Ok(SweepRow {
        value,
        replicate,
        seed: c.seed,
        fidelity: r.fidelity,
        success_probability: r.p_success,
        delta: r.delta,
        formula_fidelity: r.formula_fidelity,
        adiabaticity_alice: r.diagnostics.adiabaticity_alice,
        adiabaticity_bob: r.diagnostics.adiabaticity_bob,
        trajectory_success: r.trajectory.map(|t| (t.success_probability, t.success_sigma)),
    })
}

/// Rows are ordered by value, then replicate, whatever the completion order.
pub fn cmd_sweep(config: &RunConfig, spec: &SweepSpec, jobs: usize, out: &Path) -> Result<Vec<SweepRow>> {
    let started = Instant::now();
    let points = spec.points()?;
    // fail on a bad path before spawning work
    config.with_value(&spec.parameter, points[0])?.protocol()?;
    let tasks: Vec<(f64, usize)> = points
        .iter()
        .flat_map(|v| (0..spec.replications).map(move |r| (*v, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    let rows: Vec<SweepRow> = pool.install(|| {
        tasks
            .par_iter()
            .map(|(v, r)| sweep_point(config, spec, *v, *r))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut recorded = config.clone();
    recorded.sweep = Some(spec.clone());
    let mut dir = OutputDir::create(out)?;
    let comments = vec![
        format!("parameter = {}", spec.parameter),
        "columns: value = swept parameter; replicate, seed = replication index and its seed; fidelity = mean corrected fidelity over success patterns; success_probability = analytic P(Plus)+P(Minus); delta = 1 - overlap(f_A0, f_A1); formula_fidelity = closed form at min overlap; adiabaticity_* = minimum dark-state fidelity along the passage (empty if disabled); trajectory_* = Monte-Carlo success and its binomial sigma (empty in analytic mode)".to_string(),
    ];
    dir.write_with("sweep.csv", |w| {
        Ok(write_csv(w, &comments, &SWEEP_HEADER, rows.iter().map(SweepRow::cells))?)
    })?;
    let first: Vec<&SweepRow> = rows.iter().filter(|r| r.replicate == 0).collect();
    let svg = line_chart(
        &format!("sweep over {}", spec.parameter),
        &spec.parameter,
        "value",
        &[
            Series { name: "fidelity", points: first.iter().map(|r| (r.value, r.fidelity)).collect() },
            Series { name: "P(success)", points: first.iter().map(|r| (r.value, r.success_probability)).collect() },
        ],
    );
    dir.write_text("sweep.svg", &svg)?;
    dir.finish("sweep", &recorded, started)?;
    Ok(rows)
}

pub struct AuditOutcome {
    pub rows: Vec<AuditRow>,
    pub max_abs_deviation: f64,
    pub bound_holds: bool,
}

/// Closed-form fidelity against the two-photon calculation on the Bloch-cube
/// × overlap grid.
pub fn cmd_audit(config: &RunConfig, out: &Path) -> Result<AuditOutcome> {
    let started = Instant::now();
    let mut dir = OutputDir::create(out)?;
    let rows = formula_audit(&bloch_grid(), &AUDIT_OVERLAPS, &config.detection)?;
    dir.write_with("audit.csv", |w| Ok(write_audit_csv(w, &rows)?))?;
    let worst = rows
        .iter()
        .max_by(|a, b| a.deviation().abs().total_cmp(&b.deviation().abs()))
        .expect("non-empty grid");
    let same_state: Vec<&AuditRow> = rows.iter().filter(|r| r.theta == worst.theta && r.phi == worst.phi).collect();
    let svg = line_chart(
        &format!("fidelity vs overlap at theta = {:.3}, phi = {:.3}", worst.theta, worst.phi),
        "overlap O",
        "fidelity",
        &[
            Series { name: "two-photon", points: same_state.iter().map(|r| (r.overlap, r.oracle)).collect() },
            Series { name: "closed form", points: same_state.iter().map(|r| (r.overlap, r.formula)).collect() },
            Series { name: "1 - delta", points: same_state.iter().map(|r| (r.overlap, r.one_minus_delta)).collect() },
        ],
    );
    dir.write_text("audit.svg", &svg)?;
    dir.finish("audit", config, started)?;
    Ok(AuditOutcome {
        max_abs_deviation: worst.deviation().abs(),
        bound_holds: rows.iter().all(AuditRow::bound_holds),
        rows,
    })
}
