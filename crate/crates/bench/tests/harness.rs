use manytask_bench::{
    efficiency_bench, efficiency_point, fs_bench, fs_point, throughput_bench, throughput_point, EfficiencyParams,
    FsMode, FsParams, ThroughputParams,
};

#[test]
fn zero_tasks_dispatch_nothing() {
    let r = throughput_bench(&ThroughputParams { n_tasks: 0, ..Default::default() }).unwrap();
    assert!(r.trials.is_empty());
    assert!(r.valid);
}

#[test]
fn small_throughput_run() {
    let r = throughput_bench(&ThroughputParams {
        workers: 4,
        n_tasks: 2000,
        bundle_sizes: vec![1, 10],
        ..Default::default()
    })
    .unwrap();
    assert!(r.valid, "{:?}", r.notes);
    for b in [1, 10] {
        let p = throughput_point(b, 10);
        assert_eq!(r.mean(&p, "completed"), Some(2000.0));
        assert!(r.mean(&p, "throughput").unwrap() > 0.0);
    }
}

#[test]
fn failing_tasks_invalidate_the_benchmark() {
    let r = throughput_bench(&ThroughputParams {
        workers: 2,
        n_tasks: 20,
        command: "false".into(),
        ..Default::default()
    })
    .unwrap();
    assert!(!r.valid);
}

#[test]
fn small_efficiency_run() {
    let r = efficiency_bench(&EfficiencyParams {
        workers: 4,
        task_lengths: vec![0.05, 0.2],
        waves: 2,
        ..Default::default()
    })
    .unwrap();
    assert!(r.valid);
    for t in [0.05, 0.2] {
        let e = r.mean(&efficiency_point(t), "efficiency").unwrap();
        assert!(e > 0.0 && e <= 1.0, "{e}");
    }
    assert!(efficiency_bench(&EfficiencyParams { task_lengths: vec![0.0], ..Default::default() }).is_err());
}

fn fs(mode: FsMode, procs: Vec<usize>, sizes: Vec<u64>) -> FsParams {
    FsParams { mode, procs, data_sizes: sizes, ops_per_actor: 5, trials: 1, target_dir: std::env::temp_dir() }
}

#[test]
fn fs_modes_measure_each_point() {
    let r = fs_bench(&fs(FsMode::Read, vec![1, 2], vec![4096, 1 << 20])).unwrap();
    for p in [1, 2] {
        for s in [4096, 1 << 20] {
            assert!(r.mean(&fs_point(p, s), "aggregate_mbps").unwrap() > 0.0);
            assert_eq!(r.mean(&fs_point(p, s), "errors"), Some(0.0));
        }
    }
    let r = fs_bench(&fs(FsMode::ReadWrite, vec![2], vec![65536])).unwrap();
    assert!(r.mean(&fs_point(2, 65536), "per_actor_mbps").unwrap() > 0.0);
    for mode in [FsMode::InvokeScript, FsMode::MkdirRm] {
        let r = fs_bench(&fs(mode, vec![1, 2], vec![123])).unwrap();
        // metadata modes ignore data sizes
        assert_eq!(r.points(), vec![fs_point(1, 0), fs_point(2, 0)]);
        assert!(r.mean(&fs_point(1, 0), "ops_per_sec").unwrap() > 0.0);
    }
    assert!(fs_bench(&fs(FsMode::Read, vec![0], vec![1])).is_err());
    assert_eq!("mkdir_rm".parse::<FsMode>(), Ok(FsMode::MkdirRm));
}
