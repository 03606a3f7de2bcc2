use std::collections::{HashMap, HashSet};
use std::sync::Arc;
use std::time::Duration;

use manytask_core::dispatch::{
    self, Client, DispatcherConfig, MetricsAccumulator, Output, RunId, Scheduler, SchedulerConfig, TaskState,
};
use manytask_core::proto::{Body, DispatchMode, ErrorClass, SubmitStatus, TaskId, TaskResult, TaskSpec};
use manytask_core::worker::{self, ExecBackend, ExecutorConfig};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Register { id: u64, cores: u32, pull: bool },
    Lost { id: u64 },
    Submit { n: usize },
    Dispatch,
    Request { id: u64, max: u32 },
    Complete { pick: usize, outcome: u8 },
    Drain { id: u64 },
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (1u64..5, 1u32..4, any::<bool>()).prop_map(|(id, cores, pull)| Op::Register { id, cores, pull }),
        (1u64..5).prop_map(|id| Op::Lost { id }),
        (1usize..12).prop_map(|n| Op::Submit { n }),
        Just(Op::Dispatch),
        (1u64..5, 1u32..6).prop_map(|(id, max)| Op::Request { id, max }),
        (any::<usize>(), 0u8..8).prop_map(|(pick, outcome)| Op::Complete { pick, outcome }),
        (1u64..5).prop_map(|id| Op::Drain { id }),
    ]
}

fn result(task: TaskId, worker: u64, now: u64, class: ErrorClass) -> TaskResult {
    let exit_code = if class == ErrorClass::None { 0 } else { 3 };
    TaskResult {
        task_id: task,
        exit_code,
        error_class: class,
        worker_id: worker,
        dispatched: now,
        started: now,
        finished: now + 1,
        detail: String::new(),
    }
}

/// Tracks which tasks the test believes each worker holds, asserting that
/// a task is never sent while another worker still holds it.
#[derive(Default)]
struct Model {
    held: HashMap<TaskId, u64>,
}

impl Model {
    fn absorb(&mut self, outs: Vec<Output>) -> Result<(), TestCaseError> {
        for o in outs {
            match o {
                Output::Send { worker, body } => {
                    let specs = match body {
                        Body::TaskDispatch(s) => vec![s],
                        Body::TaskBundle(v) => v,
                        Body::Suspend => {
                            self.held.retain(|_, w| *w != worker);
                            continue;
                        }
                        _ => continue,
                    };
                    for s in specs {
                        if let Some(prev) = self.held.insert(s.id, worker) {
                            return Err(TestCaseError::fail(format!("{} sent to {worker} while held by {prev}", s.id)));
                        }
                    }
                }
                Output::Disconnect { worker } => self.held.retain(|_, w| *w != worker),
                Output::Log { .. } => {}
            }
        }
        Ok(())
    }

    fn forget_worker(&mut self, id: u64) {
        self.held.retain(|_, w| *w != id);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 300, ..ProptestConfig::default() })]

    #[test]
    fn scheduler_conserves_tasks(ops in proptest::collection::vec(op(), 1..120), bundle in 1usize..4) {
        let cfg = SchedulerConfig { bundle_size: bundle, suspend_threshold: 2, ..SchedulerConfig::default() };
        let mut s = Scheduler::new(cfg);
        let run: RunId = Arc::from("r");
        s.create_run(run.clone(), 0);
        let mut model = Model::default();
        let mut submitted = 0usize;
        let mut now = 1u64;
        for op in ops {
            now += 10;
            match op {
                Op::Register { id, cores, pull } => {
                    let mode = if pull { DispatchMode::Pull } else { DispatchMode::Push };
                    // re-registration supersedes the old session and requeues its tasks
                    model.forget_worker(id);
                    let _ = s.register_worker(id, cores, mode, 1, now);
                }
                Op::Lost { id } => {
                    model.forget_worker(id);
                    s.worker_lost(id, now);
                }
                Op::Submit { n } => {
                    let specs: Vec<TaskSpec> = (0..n)
                        .map(|i| TaskSpec::new(TaskId::derive("r", (submitted + i) as u64, b"x"), "x"))
                        .collect();
                    let st = s.submit(&run, specs, now);
                    prop_assert!(st.iter().all(|(_, st)| *st == SubmitStatus::Queued));
                    submitted += n;
                }
                Op::Dispatch => s.dispatch(now),
                Op::Request { id, max } => { let _ = s.task_request(id, max, now); }
                Op::Complete { pick, outcome } => {
                    if !model.held.is_empty() {
                        let mut held: Vec<_> = model.held.iter().map(|(t, w)| (*t, *w)).collect();
                        held.sort();
                        let (task, w) = held[pick % held.len()];
                        model.held.remove(&task);
                        let class = match outcome {
                            0 => ErrorClass::AppError,
                            1 => ErrorClass::CommError,
                            2 => ErrorClass::FailFast,
                            _ => ErrorClass::None,
                        };
                        s.complete(w, result(task, w, now, class), now);
                    }
                }
                Op::Drain { id } => s.worker_draining(id),
            }
            model.absorb(s.take_outputs())?;
            s.check_invariants().map_err(TestCaseError::fail)?;
        }
        prop_assert_eq!(s.run("r").unwrap().submitted(), submitted);

        // A healthy worker then finishes everything that is not permanently failed.
        for id in 1..5 {
            s.worker_lost(id, now);
        }
        model.held.clear();
        s.take_outputs();
        s.register_worker(99, 4, DispatchMode::Push, 0, now).unwrap();
        for _ in 0..10_000 {
            now += 10;
            s.dispatch(now);
            model.absorb(s.take_outputs())?;
            let Some((&task, &w)) = model.held.iter().next() else { break };
            model.held.remove(&task);
            s.complete(w, result(task, w, now, ErrorClass::None), now);
            s.take_outputs();
        }
        s.check_invariants().map_err(TestCaseError::fail)?;
        let r = s.run("r").unwrap();
        prop_assert_eq!(r.count(TaskState::Done) + r.count(TaskState::Failed), submitted);
        prop_assert!(submitted == 0 || r.complete());
    }
}

#[test]
fn scheduler_retries_app_errors_once() {
    let mut s = Scheduler::new(SchedulerConfig { max_retries: 1, ..Default::default() });
    let run: RunId = Arc::from("r");
    s.create_run(run.clone(), 0);
    s.register_worker(1, 1, DispatchMode::Push, 0, 0).unwrap();
    let id = TaskId::derive("r", 0, b"false");
    s.submit(&run, vec![TaskSpec::new(id, "false")], 0);
    for attempt in 0..2 {
        s.dispatch(attempt);
        s.take_outputs();
        assert_eq!(s.task(&id).unwrap().state, TaskState::Dispatched);
        s.complete(1, result(id, 1, attempt, ErrorClass::AppError), attempt);
    }
    assert_eq!(s.task(&id).unwrap().state, TaskState::Failed);
    assert!(s.run("r").unwrap().complete());
}

#[test]
fn failfast_pattern_upgrades_app_error() {
    let cfg = SchedulerConfig {
        suspend_threshold: 2,
        failfast_patterns: vec!["Stale NFS".into()],
        ..Default::default()
    };
    let mut s = Scheduler::new(cfg);
    let run: RunId = Arc::from("r");
    s.create_run(run.clone(), 0);
    s.register_worker(1, 1, DispatchMode::Push, 0, 0).unwrap();
    let specs: Vec<_> = (0..3).map(|i| TaskSpec::new(TaskId::derive("r", i, b"x"), "x")).collect();
    s.submit(&run, specs, 0);
    for k in 0..2 {
        s.dispatch(k);
        let sent = s.take_outputs().into_iter().find_map(|o| match o {
            Output::Send { body: Body::TaskDispatch(spec), .. } => Some(spec.id),
            _ => None,
        });
        let task = sent.expect("dispatched");
        let mut r = result(task, 1, k, ErrorClass::AppError);
        r.detail = "open: Stale NFS file handle".into();
        s.complete(1, r, k);
    }
    assert!(s.worker(1).unwrap().suspended);
    let outs = s.take_outputs();
    assert!(outs.iter().any(|o| matches!(o, Output::Send { worker: 1, body: Body::Suspend })));
    // failures under a bad node consume no retry budget
    let r = s.run("r").unwrap();
    assert_eq!(r.count(TaskState::Failed), 0);
    assert_eq!(r.count(TaskState::Queued) + r.count(TaskState::Retrying), 3);
}

fn dispatcher(dir: &std::path::Path, addr: &str) -> dispatch::DispatcherHandle {
    dispatch::start(DispatcherConfig {
        address: addr.into(),
        log_dir: dir.join("logs"),
        heartbeat_interval_ms: 100,
        ..Default::default()
    })
    .unwrap()
}

fn worker_cfg(addr: String, scratch: &std::path::Path) -> ExecutorConfig {
    ExecutorConfig {
        dispatcher: addr,
        cores: 2,
        scratch_dir: scratch.to_path_buf(),
        exec: ExecBackend::Builtin,
        heartbeat_interval_ms: 50,
        connect_timeout_ms: Some(10_000),
        ..Default::default()
    }
}

#[test]
fn restart_resumes_without_rerunning_finished_tasks() {
    restart_case(false);
}

#[test]
fn resume_after_hello_requeues_unfinished_tasks() {
    restart_case(true);
}

fn restart_case(hello_first: bool) {
    let t = tempfile::tempdir().unwrap();
    let d = dispatcher(t.path(), "127.0.0.1:0");
    let addr = d.local_addr().to_string();
    let specs: Vec<TaskSpec> =
        (0..200).map(|i| TaskSpec::new(TaskId::derive("crash", i, b"sleep 0.005"), "sleep 0.005")).collect();
    let mut c = Client::connect(&addr).unwrap();
    c.hello("crash").unwrap();
    c.submit("crash", &specs).unwrap();
    let w = worker::spawn(worker_cfg(addr.clone(), &t.path().join("s"))).unwrap();
    c.wait("crash", Duration::from_millis(5), Some(Duration::from_secs(30)), |_| {}).ok();
    let mut done_before = 0;
    for _ in 0..1000 {
        done_before = c.status("crash").unwrap().run.unwrap().done;
        if done_before >= 50 {
            break;
        }
        std::thread::sleep(Duration::from_millis(5));
    }
    w.kill();
    d.shutdown();
    let _ = w.join();
    drop(c);

    let log = dispatch::read_runlog(&t.path().join("logs/crash.runlog")).unwrap();
    let finished_before: HashSet<TaskId> = log
        .events
        .iter()
        .filter_map(|e| match e {
            dispatch::Event::Finished { task, .. } => Some(*task),
            _ => None,
        })
        .collect();
    assert!(finished_before.len() >= done_before.min(50));

    let d = dispatcher(t.path(), &addr);
    let mut c = Client::connect_retry(&addr, Duration::from_secs(5)).unwrap();
    if hello_first {
        // opens the run from its log without requeueing
        c.hello("crash").unwrap();
    }
    let entries = c.resume("crash").unwrap();
    let already = entries.iter().filter(|(_, s)| *s == SubmitStatus::AlreadyComplete).count();
    assert_eq!(already, finished_before.len());
    let queued = entries.iter().filter(|(_, s)| *s == SubmitStatus::Queued).count();
    assert_eq!(queued, 200 - finished_before.len());
    let w = worker::spawn(worker_cfg(addr.clone(), &t.path().join("s2"))).unwrap();
    let st = c.wait("crash", Duration::from_millis(20), Some(Duration::from_secs(60)), |_| {}).unwrap();
    assert_eq!(st.done, 200);
    w.drain();
    w.join().unwrap();
    d.shutdown();

    let log = dispatch::read_runlog(&t.path().join("logs/crash.runlog")).unwrap();
    let mut finishes: HashMap<TaskId, usize> = HashMap::new();
    let mut resumed = false;
    for e in &log.events {
        match e {
            dispatch::Event::Resumed { .. } => resumed = true,
            dispatch::Event::Finished { task, .. } => {
                *finishes.entry(*task).or_default() += 1;
                if resumed {
                    assert!(!finished_before.contains(task), "{task} ran again after resume");
                }
            }
            _ => {}
        }
    }
    assert!(resumed);
    assert_eq!(finishes.len(), 200);
}

#[test]
fn replayed_metrics_match_live_metrics() {
    let t = tempfile::tempdir().unwrap();
    let d = dispatcher(t.path(), "127.0.0.1:0");
    let addr = d.local_addr().to_string();
    let w = worker::spawn(worker_cfg(addr.clone(), &t.path().join("s"))).unwrap();
    let specs: Vec<TaskSpec> =
        (0..100).map(|i| TaskSpec::new(TaskId::derive("m", i, b"sleep 0.001"), "sleep 0.001")).collect();
    let mut c = Client::connect(&addr).unwrap();
    c.hello("m").unwrap();
    c.submit("m", &specs).unwrap();
    let live = c.wait("m", Duration::from_millis(10), Some(Duration::from_secs(30)), |_| {}).unwrap();
    w.drain();
    w.join().unwrap();
    d.shutdown();

    let log = dispatch::read_runlog(&t.path().join("logs/m.runlog")).unwrap();
    let replayed = MetricsAccumulator::from_events(&log.events).metrics();
    assert_eq!(replayed, live.metrics);
    let offline = dispatch::offline_status(&t.path().join("logs/m.runlog"), "m").unwrap();
    assert!(offline.offline && offline.complete);
    assert_eq!(offline.done, 100);
    assert_eq!(offline.metrics, live.metrics);
}

#[test]
fn submit_to_finished_run_after_restart_skips_done_tasks() {
    let t = tempfile::tempdir().unwrap();
    let d = dispatcher(t.path(), "127.0.0.1:0");
    let addr = d.local_addr().to_string();
    let w = worker::spawn(worker_cfg(addr.clone(), &t.path().join("s"))).unwrap();
    let specs: Vec<TaskSpec> = (0..10).map(|i| TaskSpec::new(TaskId::derive("again", i, b"true"), "true")).collect();
    let mut c = Client::connect(&addr).unwrap();
    c.hello("again").unwrap();
    c.submit("again", &specs).unwrap();
    c.wait("again", Duration::from_millis(10), Some(Duration::from_secs(30)), |_| {}).unwrap();
    w.drain();
    w.join().unwrap();
    d.shutdown();

    let d = dispatcher(t.path(), &addr);
    let mut c = Client::connect_retry(&addr, Duration::from_secs(5)).unwrap();
    c.hello("again").unwrap();
    let entries = c.submit("again", &specs).unwrap();
    assert!(entries.iter().all(|(_, s)| *s == SubmitStatus::AlreadyComplete));
    let st = c.status("again").unwrap().run.unwrap();
    assert!(st.complete);
    d.shutdown();
}

#[test]
fn malformed_frames_get_an_error_ack() {
    use std::io::{Read, Write};
    let t = tempfile::tempdir().unwrap();
    let d = dispatcher(t.path(), "127.0.0.1:0");
    let mut s = std::net::TcpStream::connect(d.local_addr()).unwrap();
    // kind 0x7f is not a message
    s.write_all(&[9, 0, 0, 0, 0x7f, 0, 0, 0, 0, 0, 0, 0, 0]).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    let mut buf = Vec::new();
    let _ = s.read_to_end(&mut buf);
    match manytask_core::proto::decode_frame(&buf).unwrap() {
        manytask_core::proto::Decoded::Message { msg, .. } => {
            assert!(matches!(msg.body, Body::Ack { status: 1, .. }), "{:?}", msg.body)
        }
        other => panic!("no reply: {other:?}"),
    }
    // the dispatcher keeps serving other connections
    Client::connect(d.local_addr()).unwrap().status("").unwrap();
    d.shutdown();
}
