//! Run configuration file and `--set path=value` overrides.

use std::path::Path;

use qteleport_core::{
    CgTable, DetectionModel, EvolutionConfig, ProtocolConfig, ProtocolMode, PulseConfig, Qubit, SystemParams, C64,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StateConfig {
    /// `[re, im]` of the `|0⟩` amplitude.
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl Default for StateConfig {
    fn default() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Self { a: [s, 0.0], b: [s, 0.0] }
    }
}

impl StateConfig {
    pub fn qubit(&self) -> Result<Qubit> {
        Ok(Qubit::new(C64::new(self.a[0], self.a[1]), C64::new(self.b[0], self.b[1]))?)
    }
}

/// Shared atom–cavity parameters; `s_A`, `s_B` are the spatial-mode values
/// at Alice's and Bob's atoms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    pub kappa: f64,
    pub gamma: f64,
    pub coupling: f64,
    #[serde(rename = "s_A")]
    pub s_a: f64,
    #[serde(rename = "s_B")]
    pub s_b: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        let p = SystemParams::default();
        Self { kappa: p.kappa, gamma: p.gamma, coupling: p.coupling, s_a: p.spatial, s_b: p.spatial }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunOptions {
    pub mode: ProtocolMode,
    pub samples: usize,
    pub force_mode_match: bool,
    pub relative_delay: f64,
    pub diagnostics: bool,
    /// RK4 steps over the pulse window.
    pub evolution_steps: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        let p = ProtocolConfig::default();
        Self {
            mode: p.mode,
            samples: p.samples,
            force_mode_match: p.force_mode_match,
            relative_delay: p.relative_delay,
            diagnostics: p.diagnostics,
            evolution_steps: p.evolution.n_steps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRange {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

/// One-parameter sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Dotted path into the run configuration, e.g. `detection.efficiency`.
    pub parameter: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<SweepRange>,
    #[serde(default = "one")]
    pub replications: usize,
}

fn one() -> usize {
    1
}

impl SweepSpec {
    /// Explicit values followed by the evenly spaced range, if any.
    pub fn points(&self) -> Result<Vec<f64>> {
        let mut pts = self.values.clone();
        if let Some(r) = self.range {
            match r.count {
                0 => {}
                1 => pts.push(r.start),
                n => pts.extend((0..n).map(|k| r.start + (r.stop - r.start) * k as f64 / (n - 1) as f64)),
            }
        }
        if pts.is_empty() {
            return Err(CliError::Config(format!("sweep over `{}` has no values", self.parameter)));
        }
        if self.replications == 0 {
            return Err(CliError::Config("replications must be at least 1".into()));
        }
        Ok(pts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub state: StateConfig,
    pub pulses: PulseConfig,
    pub cg: CgTable,
    pub system: SystemConfig,
    pub detection: DetectionModel,
    pub run: RunOptions,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Applies `path=value` assignments; the value is read as a TOML literal,
    /// falling back to a bare string.
    pub fn with_overrides<S: AsRef<str>>(&self, sets: &[S]) -> Result<Self> {
        let mut tree = toml::Value::try_from(self).map_err(|e| CliError::Config(e.to_string()))?;
        for s in sets {
            let s = s.as_ref();
            let (path, raw) = s
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override `{s}` is not of the form path=value")))?;
            set_path(&mut tree, path.trim(), parse_literal(raw.trim()))?;
        }
        tree.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))
    }

    /// Copy with one numeric parameter replaced.
    pub fn with_value(&self, path: &str, value: f64) -> Result<Self> {
        let mut tree = toml::Value::try_from(self).map_err(|e| CliError::Config(e.to_string()))?;
        set_path(&mut tree, path, toml::Value::Float(value))?;
        tree.try_into()
            .map_err(|e: toml::de::Error| CliError::Config(format!("parameter `{path}`: {e}")))
    }

    pub fn protocol(&self) -> Result<ProtocolConfig> {
        let side = |s: f64| SystemParams {
            cg: self.cg,
            kappa: self.system.kappa,
            gamma: self.system.gamma,
            coupling: self.system.coupling,
            spatial: s,
        };
        let cfg = ProtocolConfig {
            qubit: self.state.qubit()?,
            pulses: self.pulses,
            alice: side(self.system.s_a),
            bob: side(self.system.s_b),
            detection: self.detection,
            evolution: EvolutionConfig {
                duration: self.pulses.duration,
                n_steps: self.run.evolution_steps,
                ..EvolutionConfig::default()
            },
            mode: self.run.mode,
            samples: self.run.samples,
            force_mode_match: self.run.force_mode_match,
            relative_delay: self.run.relative_delay,
            diagnostics: self.run.diagnostics,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(tree: &mut toml::Value, path: &str, value: toml::Value) -> Result<()> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("malformed parameter path `{path}`")));
    }
    let (last, parents) = keys.split_last().expect("non-empty path");
    let mut node = tree;
    for k in parents {
        let table = node
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{path}`: `{k}` is not inside a section")))?;
        node = table.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| CliError::Config(format!("`{path}` does not name a section")))?;
    let value = match (table.get(*last), value) {
        (Some(toml::Value::Integer(_)), toml::Value::Float(x)) if x.fract() == 0.0 => toml::Value::Integer(x as i64),
        (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
        (_, v) => v,
    };
    table.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn overrides() {
        let c = RunConfig::default()
            .with_overrides(&["detection.efficiency=0.5", "system.s_A=0.4", "run.mode=\"trajectory\"", "pulses.ratio=0.8", "seed=9"])
            .unwrap();
        assert_eq!(c.detection.efficiency, 0.5);
        assert_eq!(c.system.s_a, 0.4);
        assert_eq!(c.run.mode, ProtocolMode::Trajectory);
        assert_eq!(c.pulses.ratio, Some(0.8));
        assert_eq!(c.seed, 9);
        // bare strings are accepted without quotes
        let t = RunConfig::default().with_overrides(&["run.mode=trajectory"]).unwrap();
        assert_eq!(t.run.mode, ProtocolMode::Trajectory);
    }

    #[test]
    fn integer_fields_accept_integral_floats() {
        let c = RunConfig::default().with_value("pulses.n_steps", 2000.0).unwrap();
        assert_eq!(c.pulses.n_steps, 2000);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::default().with_overrides(&["detection.efficency=0.5"]).is_err());
        assert!(RunConfig::default().with_value("nope.x", 1.0).is_err());
        assert!(RunConfig::parse("[pulses]\nwidth = 3\n").is_err());
        assert!(RunConfig::default().with_overrides(&["no_equals_sign"]).is_err());
    }

    #[test]
    fn sweep_points() {
        let s = SweepSpec {
            parameter: "detection.efficiency".into(),
            values: vec![0.1],
            range: Some(SweepRange { start: 0.2, stop: 1.0, count: 5 }),
            replications: 1,
        };
        let p = s.points().unwrap();
        assert_eq!(p.len(), 6);
        assert!((p[5] - 1.0).abs() < 1e-15);
        assert!(SweepSpec { values: vec![], range: None, ..s }.points().is_err());
    }

    #[test]
    fn unnormalized_state_is_rejected() {
        let c = RunConfig::default().with_overrides(&["state.a=[1.0, 0.0]"]).unwrap();
        assert!(c.protocol().is_err());
    }
}
