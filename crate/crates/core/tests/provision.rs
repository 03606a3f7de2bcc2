use std::fs;
use std::time::{Duration, Instant};

use manytask_core::dispatch::{self, Client, DispatcherConfig, WorkerStatus};
use manytask_core::proto::{TaskId, TaskSpec};
use manytask_core::provision::{
    granted_cores, LocalLaunch, LocalProvider, ProvisionError, Provisioner, ScriptProvider,
};
use manytask_core::worker::{ExecBackend, ExecutorConfig};
use proptest::prelude::*;

fn dispatcher(dir: &std::path::Path) -> dispatch::DispatcherHandle {
    dispatch::start(DispatcherConfig {
        address: "127.0.0.1:0".into(),
        log_dir: dir.join("logs"),
        heartbeat_interval_ms: 200,
        ..Default::default()
    })
    .unwrap()
}

fn in_process(dir: &std::path::Path, block: u32, per_block: u32) -> LocalProvider {
    let template = ExecutorConfig {
        exec: ExecBackend::Builtin,
        heartbeat_interval_ms: 100,
        connect_timeout_ms: Some(5000),
        ..Default::default()
    };
    LocalProvider::new(block, per_block, LocalLaunch::InProcess(template), dir.join("scratch")).unwrap()
}

proptest! {
    #[test]
    fn granted_is_whole_blocks(req in 1u32..100_000, block in 1u32..1024) {
        let g = granted_cores(req, block);
        prop_assert!(g >= req);
        prop_assert_eq!(g % block, 0);
        prop_assert!(g - req < block);
    }
}

#[test]
fn eight_cores_in_blocks_of_four() {
    let t = tempfile::tempdir().unwrap();
    let d = dispatcher(t.path());
    let addr = d.local_addr().to_string();
    let mut p = Provisioner::new(Box::new(in_process(t.path(), 4, 1)), addr.clone());
    let t0 = Instant::now();
    let mut alloc = p.provision(8, None).unwrap();
    assert!(t0.elapsed() < Duration::from_secs(5));
    assert_eq!((alloc.granted_cores, alloc.blocks.len()), (8, 2));
    assert!(alloc.boot_cost > 0.0);
    let st = Client::connect(&addr).unwrap().status("").unwrap();
    assert_eq!(st.workers.len(), 2);
    assert!(st.workers.iter().all(|w| w.cores == 4 && w.status == WorkerStatus::Idle));

    p.release(&mut alloc, true).unwrap();
    assert_eq!(p.live_workers(), 0);
    assert!(alloc.released);
    d.shutdown();
}

#[test]
fn expiry_drains_in_flight_tasks() {
    let t = tempfile::tempdir().unwrap();
    let d = dispatcher(t.path());
    let addr = d.local_addr().to_string();
    let mut p = Provisioner::new(Box::new(in_process(t.path(), 2, 1)), addr.clone());
    let mut alloc = p.provision(2, Some(Duration::from_millis(300))).unwrap();
    let mut c = Client::connect(&addr).unwrap();
    c.hello("exp").unwrap();
    let specs: Vec<TaskSpec> =
        (0..4).map(|i| TaskSpec::new(TaskId::derive("exp", i, b"sleep 0.5"), "sleep 0.5")).collect();
    c.submit("exp", &specs).unwrap();
    p.hold(&mut alloc, || false).unwrap();
    assert_eq!(p.live_workers(), 0);
    let run = c.status("exp").unwrap().run.unwrap();
    // the first two tasks were running at expiry and finished; nothing else started
    assert_eq!(run.done, 2, "{run:?}");
    assert_eq!(run.running + run.dispatched, 0);
    d.shutdown();
}

#[test]
fn failed_script_start_rolls_back() {
    let t = tempfile::tempdir().unwrap();
    let d = dispatcher(t.path());
    let marker = t.path().join("stopped");
    let stop = format!("echo $MANYTASK_BLOCK_INDEX >> {}", marker.display());
    let provider = ScriptProvider::new(4, "test $MANYTASK_BLOCK_INDEX -lt 1", stop);
    let mut p = Provisioner::new(Box::new(provider), d.local_addr().to_string());
    p.registration_timeout = Duration::from_millis(300);
    let err = p.provision(12, None).unwrap_err();
    assert!(matches!(err, ProvisionError::StartFailed { block: 1, .. }), "{err}");
    // block 1 cleans up after its own failure, block 0 is rolled back
    let mut stopped: Vec<String> = fs::read_to_string(&marker).unwrap().lines().map(String::from).collect();
    stopped.sort();
    assert_eq!(stopped, ["0", "1"]);
    assert_eq!(p.live_workers(), 0);
    d.shutdown();
}

#[test]
fn unregistered_block_times_out() {
    let t = tempfile::tempdir().unwrap();
    let d = dispatcher(t.path());
    let marker = t.path().join("stopped");
    let provider = ScriptProvider::new(4, "true", format!("touch {}", marker.display()));
    let mut p = Provisioner::new(Box::new(provider), d.local_addr().to_string());
    p.registration_timeout = Duration::from_millis(300);
    let err = p.provision(4, None).unwrap_err();
    assert!(matches!(err, ProvisionError::RegistrationTimeout { .. }), "{err}");
    assert!(marker.exists());
    d.shutdown();
}
