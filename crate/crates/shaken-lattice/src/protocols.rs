//! Bundled control protocols.
//!
//! [`reference`] is a fixed, hand-written shaking sequence used by
//! diagnostics and examples that need a nontrivial protocol without a
//! training run. The trained protocols are embedded from files produced by
//! the designer at fixed seeds, so every consumer analyzes exactly the
//! waveforms that were trained, not a re-run.

use crate::dynamics::{ProtocolFile, DEFAULT_OMEGA_S_OVER_OMEGA_R, PROTOCOL_FORMAT_VERSION};

/// Eight moderate segments at the default drive frequency, 512 steps per
/// segment. Not optimized for anything; exercises several bands without
/// tripping the high-momentum rejection rule.
pub fn reference() -> ProtocolFile {
    use std::f64::consts::PI;
    let amplitudes = [
        PI / 6.0,
        PI / 4.0,
        PI / 3.0,
        PI / 6.0,
        PI / 2.0,
        PI / 4.0,
        PI / 12.0,
        PI / 3.0,
    ];
    ProtocolFile {
        format_version: PROTOCOL_FORMAT_VERSION,
        omega_s_over_omega_r: DEFAULT_OMEGA_S_OVER_OMEGA_R,
        n_max: 8,
        q_list: vec![0.0],
        segment_amplitudes: amplitudes.iter().map(|a| format!("{a}")).collect(),
        dt_over_segment: 1.0 / 512.0,
        metadata: serde_json::Map::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_protocol_is_valid() {
        let file = reference();
        file.validate().unwrap();
        assert_eq!(file.steps_per_segment().unwrap(), 512);
        assert_eq!(file.control_protocol().unwrap().segments(), 8);
    }
}
