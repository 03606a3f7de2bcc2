use std::fs;
use std::path::Path;
use std::time::Duration;

use manytask_core::dispatch::{self, Client, DispatcherConfig, DispatcherHandle, RunStatus, WorkerStatus};
use manytask_core::proto::{DispatchMode, InputRef, OutputRef, TaskId, TaskSpec};
use manytask_core::worker::{self, ExecBackend, ExecutorConfig, FaultInjection};
use sha2::{Digest, Sha256};

fn dispatcher(dir: &Path, tweak: impl FnOnce(&mut DispatcherConfig)) -> DispatcherHandle {
    let mut cfg = DispatcherConfig {
        address: "127.0.0.1:0".into(),
        log_dir: dir.join("logs"),
        heartbeat_interval_ms: 200,
        ..Default::default()
    };
    tweak(&mut cfg);
    dispatch::start(cfg).unwrap()
}

fn worker_cfg(d: &DispatcherHandle, scratch: &Path, cores: u32) -> ExecutorConfig {
    ExecutorConfig {
        dispatcher: d.local_addr().to_string(),
        cores,
        scratch_dir: scratch.to_path_buf(),
        exec: ExecBackend::Builtin,
        heartbeat_interval_ms: 100,
        connect_timeout_ms: Some(10_000),
        ..Default::default()
    }
}

fn specs(run: &str, n: usize, cmd: &str) -> Vec<TaskSpec> {
    (0..n).map(|i| TaskSpec::new(TaskId::derive(run, i as u64, cmd.as_bytes()), cmd)).collect()
}

fn run_to_end(d: &DispatcherHandle, run: &str, tasks: &[TaskSpec]) -> RunStatus {
    let mut c = Client::connect(d.local_addr()).unwrap();
    c.hello(run).unwrap();
    c.submit(run, tasks).unwrap();
    c.wait(run, Duration::from_millis(20), Some(Duration::from_secs(60)), |_| {}).unwrap()
}

fn wait_for_workers(d: &DispatcherHandle, n: usize) {
    let mut c = Client::connect(d.local_addr()).unwrap();
    for _ in 0..500 {
        if c.status("").unwrap().workers.iter().filter(|w| w.status != WorkerStatus::Lost).count() >= n {
            return;
        }
        std::thread::sleep(Duration::from_millis(10));
    }
    panic!("workers did not register");
}

#[test]
fn push_workers_finish_a_run() {
    let t = tempfile::tempdir().unwrap();
    let d = dispatcher(t.path(), |c| c.bundle_size = 4);
    let w1 = worker::spawn(worker_cfg(&d, &t.path().join("s1"), 2)).unwrap();
    let w2 = worker::spawn(worker_cfg(&d, &t.path().join("s2"), 2)).unwrap();
    let st = run_to_end(&d, "push", &specs("push", 300, "sleep 0"));
    assert_eq!((st.done, st.failed), (300, 0));
    w1.drain();
    w2.drain();
    let total = w1.join().unwrap().tasks_run + w2.join().unwrap().tasks_run;
    assert_eq!(total, 300);
    d.shutdown();
}

#[test]
fn registration_shows_cores() {
    let t = tempfile::tempdir().unwrap();
    let d = dispatcher(t.path(), |_| {});
    let w = worker::spawn(ExecutorConfig { worker_id: 42, ..worker_cfg(&d, t.path(), 4) }).unwrap();
    wait_for_workers(&d, 1);
    let st = Client::connect(d.local_addr()).unwrap().status("").unwrap();
    assert_eq!(st.workers[0].worker_id, 42);
    assert_eq!(st.workers[0].cores, 4);
    assert_eq!(st.workers[0].status, WorkerStatus::Idle);
    w.drain();
    w.join().unwrap();
    d.shutdown();
}

#[test]
fn pull_with_prefetch() {
    let t = tempfile::tempdir().unwrap();
    let d = dispatcher(t.path(), |c| c.mode = Some(DispatchMode::Pull));
    let cfg = ExecutorConfig { mode: DispatchMode::Pull, prefetch_depth: 1, ..worker_cfg(&d, t.path(), 2) };
    let w = worker::spawn(cfg).unwrap();
    let st = run_to_end(&d, "pull", &specs("pull", 100, "sleep 0.001"));
    assert_eq!(st.done, 100);
    w.drain();
    w.join().unwrap();
    d.shutdown();
}

#[test]
fn push_worker_rejected_by_pull_dispatcher() {
    let t = tempfile::tempdir().unwrap();
    let d = dispatcher(t.path(), |c| c.mode = Some(DispatchMode::Pull));
    let err = worker::run(worker_cfg(&d, t.path(), 1)).unwrap_err();
    assert_eq!(err.kind(), std::io::ErrorKind::PermissionDenied, "{err}");
    d.shutdown();
}

#[test]
fn bundle_runs_at_most_cores_at_once() {
    let t = tempfile::tempdir().unwrap();
    let d = dispatcher(t.path(), |c| c.bundle_size = 10);
    let w = worker::spawn(worker_cfg(&d, t.path(), 2)).unwrap();
    wait_for_workers(&d, 1);
    let tasks = specs("bundle", 10, "sleep 0.02");
    let st = run_to_end(&d, "bundle", &tasks);
    assert_eq!(st.done, 10);
    w.drain();
    w.join().unwrap();
    d.shutdown();

    let log = dispatch::read_runlog(&t.path().join("logs/bundle.runlog")).unwrap();
    let mut spans = Vec::new();
    for e in &log.events {
        if let dispatch::Event::Finished { started, finished, .. } = e {
            spans.push((*started, *finished));
        }
    }
    assert_eq!(spans.len(), 10);
    for &(s, _) in &spans {
        let live = spans.iter().filter(|&&(a, b)| a <= s && s < b).count();
        assert!(live <= 2, "{live} tasks overlapped on a 2-slot worker");
    }
}

#[test]
fn exit_code_is_reported_as_app_error() {
    let t = tempfile::tempdir().unwrap();
    let d = dispatcher(t.path(), |c| c.max_retries = 0);
    let w = worker::spawn(worker_cfg(&d, t.path(), 1)).unwrap();
    let st = run_to_end(&d, "exit7", &specs("exit7", 1, "exit 7"));
    assert_eq!((st.done, st.failed), (0, 1));
    w.drain();
    w.join().unwrap();
    d.shutdown();
    let log = dispatch::read_runlog(&t.path().join("logs/exit7.runlog")).unwrap();
    let failed = log.events.iter().find_map(|e| match e {
        dispatch::Event::FailedAttempt { exit_code, error_class, .. } => Some((*exit_code, *error_class)),
        _ => None,
    });
    assert_eq!(failed, Some((7, manytask_core::ErrorClass::AppError)));
}

#[test]
fn process_backend_stages_inputs_and_outputs() {
    let t = tempfile::tempdir().unwrap();
    let shared = t.path().join("shared");
    fs::create_dir_all(&shared).unwrap();
    let db: Vec<u8> = (0..200_000u32).map(|i| (i * 7 % 251) as u8).collect();
    fs::write(shared.join("db.bin"), &db).unwrap();
    let d = dispatcher(t.path(), |_| {});
    let cfg = ExecutorConfig { exec: ExecBackend::Process, ..worker_cfg(&d, &t.path().join("scratch"), 2) };
    let w = worker::spawn(cfg).unwrap();
    let tasks: Vec<TaskSpec> = (0..20)
        .map(|i| {
            let cmd = format!("sh -c 'cat db.bin > out.bin; echo {i} >> out.bin'");
            let mut s = TaskSpec::new(TaskId::derive("io", i, cmd.as_bytes()), cmd);
            s.inputs.push(InputRef {
                name: "db.bin".into(),
                source: shared.join("db.bin").display().to_string(),
                cacheable: true,
            });
            s.outputs.push(OutputRef { name: "out.bin".into(), dest: shared.join(format!("out/{i}.bin")).display().to_string() });
            s
        })
        .collect();
    let st = run_to_end(&d, "io", &tasks);
    assert_eq!((st.done, st.failed), (20, 0));
    w.drain();
    let summary = w.join().unwrap();
    assert_eq!(summary.source_reads, 1);
    for i in 0..20 {
        let mut expect = db.clone();
        expect.extend_from_slice(format!("{i}\n").as_bytes());
        let got = fs::read(shared.join(format!("out/{i}.bin"))).unwrap();
        assert_eq!(Sha256::digest(&got), Sha256::digest(&expect));
    }
    // task directories are cleaned up
    assert_eq!(fs::read_dir(t.path().join("scratch/tasks")).unwrap().count(), 0);
    d.shutdown();
}

#[test]
fn missing_input_fails_the_task() {
    let t = tempfile::tempdir().unwrap();
    let d = dispatcher(t.path(), |c| c.max_retries = 0);
    let w = worker::spawn(ExecutorConfig { exec: ExecBackend::Process, ..worker_cfg(&d, t.path(), 1) }).unwrap();
    let mut s = TaskSpec::new(TaskId::random(), "true");
    s.inputs.push(InputRef { name: "x".into(), source: "/nonexistent/x".into(), cacheable: true });
    let st = run_to_end(&d, "missing", &[s]);
    assert_eq!(st.failed, 1);
    w.drain();
    w.join().unwrap();
    d.shutdown();
}

#[test]
fn worker_started_first_connects_when_dispatcher_appears() {
    let t = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let cfg = ExecutorConfig {
        dispatcher: addr.clone(),
        scratch_dir: t.path().join("s"),
        exec: ExecBackend::Builtin,
        connect_timeout_ms: Some(20_000),
        ..Default::default()
    };
    let w = worker::spawn(cfg).unwrap();
    std::thread::sleep(Duration::from_millis(400));
    let d = dispatcher(t.path(), |c| c.address = addr.clone());
    let st = run_to_end(&d, "late", &specs("late", 5, "true"));
    assert_eq!(st.done, 5);
    w.drain();
    assert!(w.join().unwrap().sessions >= 1);
    d.shutdown();
}

#[test]
fn shutdown_waits_for_running_tasks() {
    let t = tempfile::tempdir().unwrap();
    let d = dispatcher(t.path(), |_| {});
    let w = worker::spawn(worker_cfg(&d, t.path(), 2)).unwrap();
    wait_for_workers(&d, 1);
    let mut c = Client::connect(d.local_addr()).unwrap();
    c.hello("drain").unwrap();
    c.submit("drain", &specs("drain", 2, "sleep 0.3")).unwrap();
    std::thread::sleep(Duration::from_millis(100));
    w.drain();
    let summary = w.join().unwrap();
    assert_eq!(summary.tasks_run, 2);
    let st = c.wait("drain", Duration::from_millis(20), Some(Duration::from_secs(5)), |_| {}).unwrap();
    assert_eq!(st.done, 2);
    d.shutdown();
}

#[test]
fn results_survive_a_dropped_connection() {
    let t = tempfile::tempdir().unwrap();
    let d = dispatcher(t.path(), |_| {});
    let cfg = ExecutorConfig {
        faults: FaultInjection { drop_connection_after: 10, ..Default::default() },
        ..worker_cfg(&d, t.path(), 2)
    };
    let w = worker::spawn(cfg).unwrap();
    let st = run_to_end(&d, "drop", &specs("drop", 60, "sleep 0.002"));
    assert_eq!((st.done, st.failed), (60, 0));
    w.drain();
    assert!(w.join().unwrap().sessions >= 2);
    d.shutdown();
}

#[test]
fn duplicate_worker_id_replaces_old_session() {
    let t = tempfile::tempdir().unwrap();
    let d = dispatcher(t.path(), |_| {});
    let old = worker::spawn(ExecutorConfig { worker_id: 7, ..worker_cfg(&d, &t.path().join("a"), 1) }).unwrap();
    wait_for_workers(&d, 1);
    let new = worker::spawn(ExecutorConfig { worker_id: 7, ..worker_cfg(&d, &t.path().join("b"), 3) }).unwrap();
    let err = old.join().unwrap_err();
    assert_eq!(err.kind(), std::io::ErrorKind::AddrInUse);
    let st = Client::connect(d.local_addr()).unwrap().status("").unwrap();
    assert_eq!(st.workers.len(), 1);
    assert_eq!(st.workers[0].cores, 3);
    let run = run_to_end(&d, "dup", &specs("dup", 10, "true"));
    assert_eq!(run.done, 10);
    new.drain();
    new.join().unwrap();
    d.shutdown();
}

#[test]
fn stale_handle_worker_is_suspended() {
    let t = tempfile::tempdir().unwrap();
    let d = dispatcher(t.path(), |c| c.suspend_threshold = 3);
    let bad = worker::spawn(ExecutorConfig {
        worker_id: 1,
        faults: FaultInjection { stale_handle_first: 1000, ..Default::default() },
        ..worker_cfg(&d, &t.path().join("bad"), 1)
    })
    .unwrap();
    wait_for_workers(&d, 1);
    let mut c = Client::connect(d.local_addr()).unwrap();
    c.hello("stale").unwrap();
    c.submit("stale", &specs("stale", 20, "true")).unwrap();
    let mut status = c.status("").unwrap();
    for _ in 0..500 {
        if status.workers.iter().any(|w| w.status == WorkerStatus::Suspended) {
            break;
        }
        std::thread::sleep(Duration::from_millis(10));
        status = c.status("").unwrap();
    }
    assert_eq!(status.workers[0].status, WorkerStatus::Suspended);
    let good = worker::spawn(ExecutorConfig { worker_id: 2, ..worker_cfg(&d, &t.path().join("good"), 1) }).unwrap();
    let st = c.wait("stale", Duration::from_millis(20), Some(Duration::from_secs(30)), |_| {}).unwrap();
    assert_eq!((st.done, st.failed), (20, 0));
    bad.drain();
    good.drain();
    bad.join().unwrap();
    good.join().unwrap();
    d.shutdown();
}
