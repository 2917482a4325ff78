//! Shared fixtures for the benchmark suite.

use qteleport_core::bsm::{modes_with_overlap, SourceModes, TwoPhotonState};
use qteleport_core::pulses::DrivePulse;
use qteleport_core::{ProtocolConfig, PulseConfig, Qubit, SystemParams};

/// Default systems and drives.
pub struct Fixture {
    pub params: SystemParams,
    pub pulses: PulseConfig,
    pub alice_drive: DrivePulse,
    pub bob_drive: DrivePulse,
}

impl Fixture {
    pub fn new() -> Self {
        let params = SystemParams::default();
        let pulses = PulseConfig::default();
        Self {
            alice_drive: pulses.alice_pulse(&params.cg).expect("default pulse"),
            bob_drive: pulses.bob_pulse(&params.cg, 0.0).expect("default pulse"),
            params,
            pulses,
        }
    }

    /// Analytic run without the integrator diagnostics.
    pub fn analytic(&self) -> ProtocolConfig {
        ProtocolConfig { diagnostics: false, ..ProtocolConfig::default() }
    }
}

impl Default for Fixture {
    fn default() -> Self {
        Self::new()
    }
}

/// Two-photon state with a mismatched `L` mode.
pub fn mismatched_state(overlap: f64) -> (SourceModes, TwoPhotonState) {
    let modes = modes_with_overlap(overlap, 1.0);
    let q = Qubit::from_bloch(1.1, 0.3);
    let state = TwoPhotonState::teleportation(&q, &modes).expect("valid modes");
    (modes, state)
}
