//! Binary wire protocol shared by the dispatcher, workers and clients.

mod codec;
mod message;
mod wire_cost;

pub use codec::{
    decode_frame, decode_frame_with_max, encode_frame, encode_frame_into, to_io, write_message, Decoded,
    FrameReader, DEFAULT_MAX_FRAME, HEADER_LEN, LEN_PREFIX,
};
pub use message::*;
pub use wire_cost::{estimate_wire_bytes_per_task, WireCalibration, WireEstimate, WirePoint};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtoError {
    #[error("frame of {len} bytes exceeds the {max}-byte limit")]
    FrameTooLarge { len: usize, max: usize },
    #[error("unknown message kind 0x{0:02x}")]
    UnknownKind(u8),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Splits `tasks` into `TaskBundle` messages of at most `n` specs each,
/// preserving order.
pub fn bundle_tasks(tasks: Vec<TaskSpec>, n: usize, sender_id: u64) -> Result<Vec<WireMessage>, ProtoError> {
    if n == 0 {
        return Err(ProtoError::InvalidArgument("bundle size must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(tasks.len().div_ceil(n));
    let mut it = tasks.into_iter().peekable();
    while it.peek().is_some() {
        let chunk: Vec<TaskSpec> = it.by_ref().take(n).collect();
        out.push(WireMessage::new(sender_id, Body::TaskBundle(chunk)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn specs(n: usize) -> Vec<TaskSpec> {
        (0..n).map(|i| TaskSpec::new(TaskId::derive("t", i as u64, b"x"), "true")).collect()
    }

    fn sizes(msgs: &[WireMessage]) -> Vec<usize> {
        msgs.iter()
            .map(|m| match &m.body {
                Body::TaskBundle(v) => v.len(),
                _ => unreachable!(),
            })
            .collect()
    }

    #[test]
    fn bundle_counts() {
        assert_eq!(sizes(&bundle_tasks(specs(100), 10, 0).unwrap()), vec![10; 10]);
        assert_eq!(sizes(&bundle_tasks(specs(1), 10, 0).unwrap()), vec![1]);
        let mut want = vec![10; 9];
        want.push(5);
        assert_eq!(sizes(&bundle_tasks(specs(95), 10, 0).unwrap()), want);
        assert!(bundle_tasks(specs(3), 0, 0).is_err());
        assert!(bundle_tasks(vec![], 4, 0).unwrap().is_empty());
    }

    #[test]
    fn task_id_text_round_trip() {
        let id = TaskId::random();
        assert_eq!(id.to_hex().parse::<TaskId>().unwrap(), id);
        assert!("abc".parse::<TaskId>().is_err());
        assert_eq!(TaskId::derive("r", 1, b"c"), TaskId::derive("r", 1, b"c"));
        assert_ne!(TaskId::derive("r", 1, b"c"), TaskId::derive("r", 2, b"c"));
    }
}
