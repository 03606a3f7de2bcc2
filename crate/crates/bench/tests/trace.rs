use manytask_bench::{generate_trace, BenchError, IoProfile, TraceParams, WorkloadTrace};
use proptest::prelude::*;

#[test]
fn dock_statistics_match_targets() {
    let t = generate_trace(&TraceParams::dock(), 92_000, 1).unwrap();
    assert_eq!(t.entries.len(), 92_000);
    assert!((t.mean() - 660.0).abs() / 660.0 < 0.05, "mean {}", t.mean());
    assert!((t.sd() - 478.8).abs() / 478.8 < 0.10, "sd {}", t.sd());
    assert!(t.entries.iter().all(|e| (5.8..=4178.0).contains(&e.duration)));
    assert!(t.meta.fit.contains("log-normal"));
}

#[test]
fn mars_batches_micro_tasks() {
    let t = generate_trace(&TraceParams::mars(), 49_000, 2).unwrap();
    assert_eq!(t.micro_tasks(), 7_056_000);
    assert!((t.mean() - 65.4).abs() < 0.1, "mean {}", t.mean());
    // a sum of 144 draws with sd 0.026 has sd 0.312
    assert!((t.sd() - 0.312).abs() < 0.02, "sd {}", t.sd());
}

#[test]
fn constant_trace_is_exact() {
    let t = generate_trace(&TraceParams::Constant { seconds: 17.3 }, 1000, 0).unwrap();
    assert!(t.entries.iter().all(|e| e.duration == 17.3));
    assert_eq!(t.total_work(), t.durations().iter().sum::<f64>());
}

#[test]
fn invalid_params_are_rejected() {
    for p in [
        TraceParams::Constant { seconds: -1.0 },
        TraceParams::Uniform { min: 3.0, max: 1.0 },
        TraceParams::Mars { micro_mean: 0.454, micro_sd: 0.026, batch: 0 },
        TraceParams::Dock { mean: 660.0, sd: 478.8, min: 10.0, max: 5.0 },
    ] {
        assert!(matches!(generate_trace(&p, 10, 0), Err(BenchError::InvalidArgument(_))), "{p:?}");
    }
    assert!(TraceParams::default_for("nope").is_err());
}

#[test]
fn jsonl_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    let t = generate_trace(&TraceParams::dock(), 500, 9)
        .unwrap()
        .with_io(128, IoProfile { read_bytes: 4096, write_bytes: 10 });
    t.write_jsonl(&path).unwrap();
    assert_eq!(WorkloadTrace::read_jsonl(&path).unwrap(), t);

    std::fs::write(&path, "").unwrap();
    assert!(WorkloadTrace::read_jsonl(&path).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn traces_are_deterministic_per_seed(seed in any::<u64>(), n in 0usize..300, kind in 0usize..4) {
        let p = TraceParams::default_for(["dock", "mars", "uniform", "constant"][kind]).unwrap();
        let a = generate_trace(&p, n, seed).unwrap();
        let b = generate_trace(&p, n, seed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.entries.len(), n);
        prop_assert!(a.entries.iter().all(|e| e.duration.is_finite() && e.duration >= 0.0));
        if let TraceParams::Dock { min, max, .. } = p {
            prop_assert!(a.entries.iter().all(|e| e.duration >= min && e.duration <= max));
        }
    }
}
