//! Bytes on the wire per task: the description crosses the network twice
//! (client to dispatcher, dispatcher to worker), plus a fixed per-task
//! overhead and a header per packet.

use serde::{Deserialize, Serialize};

use super::ProtoError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireCalibration {
    /// Packets per task independent of its size (handshakes, acks, results).
    pub base_packets: f64,
    /// Bytes per task independent of size and packet count.
    pub fixed_overhead: f64,
    /// Maximum segment payload.
    pub mss: f64,
    /// Per-packet header bytes.
    pub header: f64,
}

impl Default for WireCalibration {
    fn default() -> Self {
        WireCalibration { base_packets: 5.0, fixed_overhead: 700.0, mss: 1460.0, header: 40.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireEstimate {
    pub bytes_per_task: f64,
    pub packets_per_task: f64,
}

/// One measured point: task description size and observed per-task traffic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WirePoint {
    pub task_size: f64,
    pub bytes_per_task: f64,
    pub packets_per_task: f64,
}

pub fn estimate_wire_bytes_per_task(task_size: f64, cal: &WireCalibration) -> Result<WireEstimate, ProtoError> {
    if !(cal.mss > 0.0) {
        return Err(ProtoError::InvalidArgument("mss must be positive".into()));
    }
    if !(task_size >= 0.0) {
        return Err(ProtoError::InvalidArgument("task size must be non-negative".into()));
    }
    let packets = cal.base_packets + (2.0 * task_size / cal.mss).ceil();
    Ok(WireEstimate {
        bytes_per_task: 2.0 * task_size + cal.fixed_overhead + cal.header * packets,
        packets_per_task: packets,
    })
}

impl WireCalibration {
    /// Fits `base_packets`, `mss` and `fixed_overhead` to a small point whose
    /// doubled description fits in one segment and a large point spanning
    /// several. The segment count of the large point is rounded to an integer
    /// since the packet model is stepwise.
    pub fn fit(small: WirePoint, large: WirePoint, header: f64) -> Result<Self, ProtoError> {
        if !(large.task_size > small.task_size && small.task_size >= 0.0) {
            return Err(ProtoError::InvalidArgument("need 0 <= small size < large size".into()));
        }
        let segments = (large.packets_per_task - small.packets_per_task).round() + 1.0;
        if segments < 1.0 {
            return Err(ProtoError::InvalidArgument("large point has fewer packets than the small one".into()));
        }
        // centre the ceiling step so the large point lands on `segments` exactly
        let mss = 2.0 * large.task_size / (segments - 0.5);
        if 2.0 * small.task_size > mss {
            return Err(ProtoError::InvalidArgument("small point does not fit in one segment".into()));
        }
        let small_segments = if small.task_size > 0.0 { 1.0 } else { 0.0 };
        let base_packets = small.packets_per_task - small_segments;
        let fixed_overhead = small.bytes_per_task - 2.0 * small.task_size - header * small.packets_per_task;
        Ok(WireCalibration { base_packets, fixed_overhead, mss, header })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overhead_free_is_twice_the_size() {
        let cal = WireCalibration { base_packets: 0.0, fixed_overhead: 0.0, mss: 1460.0, header: 0.0 };
        for s in [0.0, 1.0, 10.0, 10240.0] {
            assert_eq!(estimate_wire_bytes_per_task(s, &cal).unwrap().bytes_per_task, 2.0 * s);
        }
    }

    #[test]
    fn rejects_zero_mss() {
        let cal = WireCalibration { mss: 0.0, ..Default::default() };
        assert!(estimate_wire_bytes_per_task(1.0, &cal).is_err());
    }
}
