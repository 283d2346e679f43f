//! Binary trace files.
//!
//! Layout, little-endian: `b"QDTR"`, `u16` version, `u32` header length, the header
//! as UTF-8 JSON, then one `u8` count per sequence.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PhotonTrace, SequenceConfig, SignalMode, TraceError};
use crate::lo::LocalOscillator;
use crate::physics::{Sensor, SignalField};

const MAGIC: &[u8; 4] = b"QDTR";
const VERSION: u16 = 1;
const PREAMBLE: usize = 4 + 2 + 4;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    tau_s: f64,
    sequence_length_s: f64,
    overhead_s: f64,
    mode: SignalMode,
    dc_shift_hz: f64,
    readout_window_s: f64,
    #[serde(default)]
    dephasing: bool,
    lo: LocalOscillator,
    sensor: Sensor,
    seed: u64,
    rng_name: String,
    n_sequences: usize,
    #[serde(default)]
    saturated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    truth: Option<Vec<SignalField>>,
}

pub fn trace_to_bytes(trace: &PhotonTrace) -> Vec<u8> {
    let c = &trace.config;
    let header = Header {
        tau_s: c.tau_s,
        sequence_length_s: c.sequence_length_s,
        overhead_s: c.overhead_s,
        mode: c.signal_mode,
        dc_shift_hz: c.dc_shift_hz,
        readout_window_s: c.readout_window_s,
        dephasing: c.dephasing,
        lo: trace.lo,
        sensor: trace.sensor,
        seed: trace.seed,
        rng_name: trace.rng_name.clone(),
        n_sequences: trace.counts.len(),
        saturated: trace.saturated,
        truth: trace.truth.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + trace.counts.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&trace.counts);
    out
}

pub fn trace_from_bytes(bytes: &[u8]) -> Result<PhotonTrace, TraceError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(TraceError::BadMagic);
    }
    if bytes.len() < PREAMBLE {
        return Err(TraceError::TruncatedData {
            expected: PREAMBLE,
            found: bytes.len(),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(TraceError::VersionMismatch(version));
    }
    let header_len = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
    let header_end = PREAMBLE + header_len;
    if bytes.len() < header_end {
        return Err(TraceError::TruncatedData {
            expected: header_end,
            found: bytes.len(),
        });
    }
    let h: Header = serde_json::from_slice(&bytes[PREAMBLE..header_end])
        .map_err(|e| TraceError::MalformedHeader(e.to_string()))?;
    let config = SequenceConfig {
        tau_s: h.tau_s,
        sequence_length_s: h.sequence_length_s,
        overhead_s: h.overhead_s,
        signal_mode: h.mode,
        dc_shift_hz: h.dc_shift_hz,
        readout_window_s: h.readout_window_s,
        dephasing: h.dephasing,
    };
    config
        .validate()
        .map_err(|e| TraceError::MalformedHeader(e.to_string()))?;
    if (h.lo.sequence_length_s - h.sequence_length_s).abs() > 1e-12 * h.sequence_length_s {
        return Err(TraceError::MalformedHeader(
            "LO and sequence lengths differ".into(),
        ));
    }
    let expected = header_end + h.n_sequences;
    if bytes.len() < expected {
        return Err(TraceError::TruncatedData {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(TraceError::TrailingData(bytes.len() - expected));
    }
    Ok(PhotonTrace {
        counts: bytes[header_end..].to_vec(),
        config,
        lo: h.lo,
        sensor: h.sensor,
        seed: h.seed,
        rng_name: h.rng_name,
        saturated: h.saturated,
        truth: h.truth,
    })
}

pub fn write_trace(trace: &PhotonTrace, path: impl AsRef<Path>) -> Result<(), TraceError> {
    fs::write(path, trace_to_bytes(trace))?;
    Ok(())
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<PhotonTrace, TraceError> {
    trace_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_trace(n: usize) -> PhotonTrace {
        let lo = LocalOscillator::from_resonance(1.5e9, 2e-6);
        let sensor = Sensor::nv(1.5e9);
        let cfg = SequenceConfig::new(1e-6, 2e-6).unwrap();
        let sig = SignalField::new(1e-6, 1.5e9 + 4e3, 0.5).unwrap();
        PhotonTrace::simulate(&[sig], &sensor, &cfg, &lo, n, 11).unwrap()
    }

    #[test]
    fn round_trip() {
        let t = sample_trace(5000);
        let back = trace_from_bytes(&trace_to_bytes(&t)).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn empty_round_trip() {
        let t = sample_trace(0);
        let back = trace_from_bytes(&trace_to_bytes(&t)).unwrap();
        assert_eq!(back.n_sequences(), 0);
        assert_eq!(back, t);
    }

    #[test]
    fn errors() {
        let bytes = trace_to_bytes(&sample_trace(100));
        assert!(matches!(trace_from_bytes(b"QDT"), Err(TraceError::BadMagic)));
        assert!(matches!(trace_from_bytes(b"XDTR0000000000"), Err(TraceError::BadMagic)));

        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(trace_from_bytes(&v2), Err(TraceError::VersionMismatch(2))));

        assert!(matches!(
            trace_from_bytes(&bytes[..bytes.len() - 1]),
            Err(TraceError::TruncatedData { .. })
        ));
        assert!(matches!(trace_from_bytes(&bytes[..12]), Err(TraceError::TruncatedData { .. })));

        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(trace_from_bytes(&long), Err(TraceError::TrailingData(1))));

        let mut bad = bytes.clone();
        bad[PREAMBLE] = b'[';
        assert!(matches!(trace_from_bytes(&bad), Err(TraceError::MalformedHeader(_))));
    }

    #[test]
    fn unknown_header_field_rejected() {
        let json = br#"{"bogus":1}"#;
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&VERSION.to_le_bytes());
        bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
        bytes.extend_from_slice(json);
        assert!(matches!(trace_from_bytes(&bytes), Err(TraceError::MalformedHeader(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.qdtr");
        let t = sample_trace(1000);
        write_trace(&t, &path).unwrap();
        assert_eq!(read_trace(&path).unwrap(), t);
        let header_len = u32::from_le_bytes(fs::read(&path).unwrap()[6..10].try_into().unwrap());
        let size = fs::metadata(&path).unwrap().len() as usize;
        assert_eq!(size, PREAMBLE + header_len as usize + 1000);
    }
}
