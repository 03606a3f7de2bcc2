use manytask_core::proto::*;
use proptest::prelude::*;

#[path = "support/wire.rs"]
mod wire;

use wire::*;

#[test]
fn fixtures_decode_bit_exactly() {
    let dir = fixture_dir();
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("hex") {
            continue;
        }
        let name = path.file_stem().unwrap().to_str().unwrap().to_string();
        let text = std::fs::read_to_string(&path).unwrap();
        let bytes = hex::decode(text.trim()).unwrap();
        let want = expected(&name);
        match decode_frame(&bytes).unwrap() {
            Decoded::Message { msg, rest } => {
                assert_eq!(msg, want, "{name}");
                assert!(rest.is_empty(), "{name}");
            }
            Decoded::NeedMoreBytes => panic!("{name}: incomplete"),
        }
        assert_eq!(encode_frame(&want).unwrap(), bytes, "{name} re-encodes differently");
        seen += 1;
    }
    assert_eq!(seen, FIXTURE_COUNT);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100_000))]

    #[test]
    fn round_trip(sender in any::<u64>(), body in arb_body(), tail in prop::collection::vec(any::<u8>(), 0..8)) {
        let msg = WireMessage::new(sender, body);
        let mut bytes = encode_frame(&msg).unwrap();
        let len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
        prop_assert_eq!(len, bytes.len() - 4);
        prop_assert_eq!(encode_frame(&msg).unwrap(), bytes.clone());
        bytes.extend_from_slice(&tail);
        match decode_frame(&bytes).unwrap() {
            Decoded::Message { msg: got, rest } => {
                prop_assert_eq!(got, msg);
                prop_assert_eq!(rest, &tail[..]);
            }
            Decoded::NeedMoreBytes => prop_assert!(false, "complete frame reported incomplete"),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20_000))]

    #[test]
    fn random_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let _ = decode_frame(&bytes);
    }

    #[test]
    fn mutated_frames_never_panic(body in arb_body(), flips in prop::collection::vec((any::<prop::sample::Index>(), any::<u8>()), 1..6)) {
        let mut bytes = encode_frame(&WireMessage::new(1, body)).unwrap();
        for (i, v) in flips {
            let at = i.index(bytes.len());
            bytes[at] = v;
        }
        match decode_frame(&bytes) {
            Ok(Decoded::Message { rest, .. }) => prop_assert!(rest.len() < bytes.len()),
            Ok(Decoded::NeedMoreBytes) | Err(_) => {}
        }
    }

    #[test]
    fn truncation_needs_more_bytes(body in arb_body(), cut in any::<prop::sample::Index>()) {
        let bytes = encode_frame(&WireMessage::new(1, body)).unwrap();
        let n = cut.index(bytes.len());
        prop_assert_eq!(decode_frame(&bytes[..n]).unwrap(), Decoded::NeedMoreBytes);
    }

    #[test]
    fn bundling_conserves_order(n in 0usize..60, b in 1usize..15) {
        let specs: Vec<TaskSpec> = (0..n).map(|i| TaskSpec::new(TaskId::derive("p", i as u64, b"c"), "true")).collect();
        let msgs = bundle_tasks(specs.clone(), b, 0).unwrap();
        prop_assert_eq!(msgs.len(), n.div_ceil(b));
        let flat: Vec<TaskSpec> = msgs.into_iter().flat_map(|m| match m.body {
            Body::TaskBundle(v) => v,
            _ => unreachable!(),
        }).collect();
        prop_assert_eq!(flat, specs);
    }

    #[test]
    fn wire_estimate_monotone(a in 0.0..1e6f64, d in 0.0..1e6f64) {
        let cal = WireCalibration::default();
        let lo = estimate_wire_bytes_per_task(a, &cal).unwrap();
        let hi = estimate_wire_bytes_per_task(a + d, &cal).unwrap();
        prop_assert!(hi.bytes_per_task >= lo.bytes_per_task);
        prop_assert!(hi.packets_per_task >= lo.packets_per_task);
    }
}

fn measured_points() -> (WirePoint, WirePoint) {
    (
        WirePoint { task_size: 10.0, bytes_per_task: 934.0, packets_per_task: 7.36 },
        WirePoint { task_size: 10240.0, bytes_per_task: 22_300.0, packets_per_task: 28.67 },
    )
}

#[test]
fn fitted_calibration_reproduces_measured_points() {
    let (small, large) = measured_points();
    let cal = WireCalibration::fit(small, large, 40.0).unwrap();
    let s = estimate_wire_bytes_per_task(10.0, &cal).unwrap();
    let l = estimate_wire_bytes_per_task(10240.0, &cal).unwrap();
    assert!((s.bytes_per_task - 934.0).abs() < 1e-6, "{s:?}");
    assert!((s.packets_per_task - 7.36).abs() < 1e-9);
    assert!((l.bytes_per_task - 22_300.0).abs() / 22_300.0 < 0.03, "{l:?}");
    assert!((l.packets_per_task - 28.67).abs() / 28.67 < 0.02, "{l:?}");
    // header overhead difference between the two sizes
    let delta = 40.0 * (l.packets_per_task - s.packets_per_task);
    assert!((delta - 853.0).abs() / 853.0 < 0.02, "{delta}");
}

#[test]
fn default_calibration_shape() {
    let cal = WireCalibration::default();
    let s = estimate_wire_bytes_per_task(10.0, &cal).unwrap();
    assert_eq!(s.packets_per_task, 6.0);
    assert_eq!(s.bytes_per_task, 20.0 + 700.0 + 240.0);
}

#[test]
fn degenerate_fits_rejected() {
    let (small, large) = measured_points();
    assert!(WireCalibration::fit(large, small, 40.0).is_err());
    let wide = WirePoint { task_size: 5000.0, ..small };
    assert!(WireCalibration::fit(wide, large, 40.0).is_err());
}
