//! Dispatcher state machine: task queue, worker table, failure policy.
//!
//! Pure and single-threaded. Every input method appends the resulting
//! messages and log events to an output buffer that the service drains with
//! [`Scheduler::take_outputs`], so transitions are totally ordered.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::metrics::{MetricsAccumulator, RunMetrics};
use super::runlog::{Event, FailureAction, Replay, SpecRecord};
use crate::proto::{Body, DispatchMode, ErrorClass, SubmitStatus, TaskId, TaskResult, TaskSpec};

pub type WorkerId = u64;
pub type RunId = Arc<str>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    /// Restrict workers to one mode; `None` accepts both.
    pub mode: Option<DispatchMode>,
    pub bundle_size: usize,
    pub max_retries: u32,
    pub suspend_threshold: u32,
    /// Substrings of a result's detail that turn an application error into a
    /// fail-fast error.
    pub failfast_patterns: Vec<String>,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            mode: None,
            bundle_size: 1,
            max_retries: 1,
            suspend_threshold: 3,
            failfast_patterns: vec!["Stale NFS handle".into(), "Stale file handle".into()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    Queued,
    Dispatched,
    Running,
    Done,
    Failed,
    Retrying,
}

impl TaskState {
    fn index(self) -> usize {
        self as usize
    }

    fn waiting(self) -> bool {
        matches!(self, TaskState::Queued | TaskState::Retrying)
    }

    fn in_flight(self) -> bool {
        matches!(self, TaskState::Dispatched | TaskState::Running)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkerStatus {
    Idle,
    Busy,
    Suspended,
    Draining,
    Lost,
}

#[derive(Debug, Clone)]
pub struct TaskRecord {
    pub run: RunId,
    pub spec: Arc<TaskSpec>,
    pub state: TaskState,
    pub attempts: u32,
    pub result: Option<TaskResult>,
    pub submitted_at: u64,
    pub worker: Option<WorkerId>,
    pub dispatched_at: u64,
    /// Worker that last failed this task with a fail-fast error.
    pub avoid: Option<WorkerId>,
    queue_seq: u64,
}

#[derive(Debug, Clone)]
pub struct WorkerState {
    pub worker_id: WorkerId,
    pub cores: u32,
    pub mode: DispatchMode,
    pub prefetch: u32,
    pub in_flight: HashSet<TaskId>,
    pub consecutive_failures: u32,
    pub suspended: bool,
    pub draining: bool,
    pub connected: bool,
    pub registered_at: u64,
    /// Outstanding pull request not yet satisfied.
    pub parked: u32,
    pub completed: u64,
}

impl WorkerState {
    pub fn status(&self) -> WorkerStatus {
        if !self.connected {
            WorkerStatus::Lost
        } else if self.suspended {
            WorkerStatus::Suspended
        } else if self.draining {
            WorkerStatus::Draining
        } else if self.in_flight.is_empty() {
            WorkerStatus::Idle
        } else {
            WorkerStatus::Busy
        }
    }

    fn assignable(&self) -> bool {
        self.connected && !self.suspended && !self.draining
    }

    /// Tasks this worker may hold at once. A push worker holds one bundle per
    /// core; a pull worker holds one task per core plus its prefetch depth.
    fn capacity(&self, bundle_size: usize) -> usize {
        match self.mode {
            DispatchMode::Push => self.cores as usize * bundle_size,
            DispatchMode::Pull => self.cores as usize + self.prefetch as usize,
        }
    }

    fn free(&self, bundle_size: usize) -> usize {
        self.capacity(bundle_size).saturating_sub(self.in_flight.len())
    }
}

#[derive(Debug)]
pub struct RunState {
    pub tasks: Vec<TaskId>,
    counts: [usize; 6],
    pub metrics: MetricsAccumulator,
}

impl RunState {
    fn new() -> Self {
        RunState { tasks: Vec::new(), counts: [0; 6], metrics: MetricsAccumulator::new() }
    }

    pub fn count(&self, s: TaskState) -> usize {
        self.counts[s.index()]
    }

    pub fn submitted(&self) -> usize {
        self.tasks.len()
    }

    pub fn complete(&self) -> bool {
        !self.tasks.is_empty()
            && self.count(TaskState::Done) + self.count(TaskState::Failed) == self.tasks.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    Send { worker: WorkerId, body: Body },
    /// `run: None` appends to every open run log.
    Log { run: Option<RunId>, event: Event },
    /// Close the worker's connection.
    Disconnect { worker: WorkerId },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerInfo {
    pub worker_id: WorkerId,
    pub cores: u32,
    pub mode: DispatchMode,
    pub status: WorkerStatus,
    pub in_flight: usize,
    pub consecutive_failures: u32,
    pub completed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub run_id: String,
    pub submitted: usize,
    pub queued: usize,
    pub dispatched: usize,
    pub running: usize,
    pub done: usize,
    pub failed: usize,
    pub retrying: usize,
    pub complete: bool,
    /// Loaded from the log of a run this dispatcher is not executing.
    #[serde(default)]
    pub offline: bool,
    #[serde(default)]
    pub failed_tasks: Vec<TaskId>,
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatcherStatus {
    pub workers: Vec<WorkerInfo>,
    pub queued: usize,
    pub run: Option<RunStatus>,
}

const MAX_FAILED_LISTED: usize = 1000;
/// Queue entries inspected when the head tasks avoid the chosen worker.
const AVOID_SCAN: usize = 64;

pub struct Scheduler {
    cfg: SchedulerConfig,
    tasks: HashMap<TaskId, TaskRecord>,
    queue: VecDeque<(TaskId, u64)>,
    queue_seq: u64,
    waiting: usize,
    workers: BTreeMap<WorkerId, WorkerState>,
    suspended: HashSet<WorkerId>,
    runs: HashMap<RunId, RunState>,
    out: Vec<Output>,
}

impl Scheduler {
    pub fn new(cfg: SchedulerConfig) -> Self {
        assert!(cfg.bundle_size >= 1, "bundle size must be >= 1");
        Scheduler {
            cfg,
            tasks: HashMap::new(),
            queue: VecDeque::new(),
            queue_seq: 0,
            waiting: 0,
            workers: BTreeMap::new(),
            suspended: HashSet::new(),
            runs: HashMap::new(),
            out: Vec::new(),
        }
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.cfg
    }

    pub fn take_outputs(&mut self) -> Vec<Output> {
        std::mem::take(&mut self.out)
    }

    pub fn task(&self, id: &TaskId) -> Option<&TaskRecord> {
        self.tasks.get(id)
    }

    pub fn worker(&self, id: WorkerId) -> Option<&WorkerState> {
        self.workers.get(&id)
    }

    pub fn workers(&self) -> impl Iterator<Item = &WorkerState> {
        self.workers.values()
    }

    pub fn run(&self, run: &str) -> Option<&RunState> {
        self.runs.get(run)
    }

    pub fn has_run(&self, run: &str) -> bool {
        self.runs.contains_key(run)
    }

    pub fn run_ids(&self) -> impl Iterator<Item = &RunId> {
        self.runs.keys()
    }

    /// Tasks waiting in the queue across all runs.
    pub fn waiting(&self) -> usize {
        self.waiting
    }

    fn log(&mut self, run: &RunId, event: Event) {
        if let Some(r) = self.runs.get_mut(run) {
            r.metrics.observe(&event);
        }
        self.out.push(Output::Log { run: Some(run.clone()), event });
    }

    fn log_all(&mut self, event: Event) {
        for r in self.runs.values_mut() {
            r.metrics.observe(&event);
        }
        self.out.push(Output::Log { run: None, event });
    }

    fn set_state(&mut self, id: &TaskId, state: TaskState) {
        let t = self.tasks.get_mut(id).expect("known task");
        let old = t.state;
        if old == state {
            return;
        }
        t.state = state;
        if old.waiting() {
            self.waiting -= 1;
        }
        if state.waiting() {
            self.waiting += 1;
        }
        let counts = &mut self.runs.get_mut(&t.run).expect("task run").counts;
        counts[old.index()] -= 1;
        counts[state.index()] += 1;
    }

    fn enqueue(&mut self, id: TaskId, front: bool, state: TaskState) {
        self.queue_seq += 1;
        let seq = self.queue_seq;
        self.tasks.get_mut(&id).expect("known task").queue_seq = seq;
        self.set_state(&id, state);
        if front {
            self.queue.push_front((id, seq));
        } else {
            self.queue.push_back((id, seq));
        }
    }

    fn entry_live(&self, (id, seq): &(TaskId, u64)) -> bool {
        self.tasks.get(id).is_some_and(|t| t.queue_seq == *seq && t.state.waiting())
    }

    /// Creates an empty run and records the current workers in its log.
    pub fn create_run(&mut self, run: RunId, now: u64) {
        if self.runs.contains_key(&run) {
            return;
        }
        let mut state = RunState::new();
        let registered: Vec<Event> = self
            .workers
            .values()
            .filter(|w| w.connected)
            .map(|w| Event::WorkerRegistered { t: now, worker: w.worker_id, cores: w.cores })
            .collect();
        for ev in &registered {
            state.metrics.observe(ev);
        }
        self.runs.insert(run.clone(), state);
        for ev in registered {
            self.out.push(Output::Log { run: Some(run.clone()), event: ev });
        }
    }

    fn insert_task(&mut self, run: &RunId, spec: Arc<TaskSpec>, now: u64, state: TaskState, result: Option<TaskResult>) {
        let id = spec.id;
        self.tasks.insert(
            id,
            TaskRecord {
                run: run.clone(),
                spec,
                state,
                attempts: 0,
                result,
                submitted_at: now,
                worker: None,
                dispatched_at: 0,
                avoid: None,
                queue_seq: 0,
            },
        );
        let r = self.runs.get_mut(run).expect("run exists");
        r.tasks.push(id);
        r.counts[state.index()] += 1;
        if state.waiting() {
            self.waiting += 1;
        }
    }

    /// Rebuilds a run from its log. Completed tasks come back as `Done`.
    /// With `requeue`, every other submitted task is queued again; without
    /// it only the completed set is restored, so a later resubmission of
    /// those ids reports `AlreadyComplete`.
    pub fn restore_run(&mut self, run: RunId, replay: &Replay, requeue: bool, now: u64) -> Vec<(TaskId, SubmitStatus)> {
        self.create_run(run.clone(), now);
        let mut replies = Vec::new();
        let mut requeued = 0;
        for spec in &replay.specs {
            if self.tasks.contains_key(&spec.id) {
                replies.push((spec.id, SubmitStatus::Duplicate));
                continue;
            }
            if let Some(res) = replay.done.get(&spec.id) {
                self.insert_task(&run, Arc::new(spec.clone()), now, TaskState::Done, Some(res.clone()));
                self.runs.get_mut(&run).expect("run").metrics.observe(&Event::Finished {
                    t: res.finished,
                    task: spec.id,
                    worker: res.worker_id,
                    started: res.started,
                    finished: res.finished,
                });
                replies.push((spec.id, SubmitStatus::AlreadyComplete));
            } else if requeue {
                self.insert_task(&run, Arc::new(spec.clone()), now, TaskState::Failed, None);
                self.enqueue(spec.id, false, TaskState::Queued);
                requeued += 1;
                replies.push((spec.id, SubmitStatus::Queued));
            }
        }
        if requeue {
            self.log(&run, Event::Resumed { t: now, requeued });
        }
        replies
    }

    /// Resume for a run already in memory: permanently failed tasks are
    /// queued again with a fresh retry budget.
    pub fn resume_live(&mut self, run: &RunId, now: u64) -> Vec<(TaskId, SubmitStatus)> {
        let Some(r) = self.runs.get(run) else { return Vec::new() };
        let ids = r.tasks.clone();
        let mut replies = Vec::with_capacity(ids.len());
        let mut requeued = 0;
        for id in ids {
            let state = self.tasks[&id].state;
            let st = match state {
                TaskState::Done => SubmitStatus::AlreadyComplete,
                TaskState::Failed => {
                    let t = self.tasks.get_mut(&id).expect("task");
                    t.attempts = 0;
                    t.result = None;
                    self.enqueue(id, false, TaskState::Queued);
                    requeued += 1;
                    SubmitStatus::Queued
                }
                _ => SubmitStatus::Duplicate,
            };
            replies.push((id, st));
        }
        self.log(run, Event::Resumed { t: now, requeued });
        replies
    }

    /// Queues `specs` in order under `run`, creating the run if needed.
    pub fn submit(&mut self, run: &RunId, specs: Vec<TaskSpec>, now: u64) -> Vec<(TaskId, SubmitStatus)> {
        self.create_run(run.clone(), now);
        let mut replies = Vec::with_capacity(specs.len());
        for spec in specs {
            let id = spec.id;
            if spec.validate().is_err() {
                replies.push((id, SubmitStatus::Invalid));
                continue;
            }
            if let Some(t) = self.tasks.get(&id) {
                let st = if t.state == TaskState::Done && &t.run == run {
                    SubmitStatus::AlreadyComplete
                } else {
                    SubmitStatus::Duplicate
                };
                replies.push((id, st));
                continue;
            }
            self.log(run, Event::Submitted { t: now, task: id, spec: SpecRecord::from_spec(&spec) });
            self.insert_task(run, Arc::new(spec), now, TaskState::Failed, None);
            self.enqueue(id, false, TaskState::Queued);
            replies.push((id, SubmitStatus::Queued));
        }
        replies
    }

    /// Registers (or re-registers) a worker. On rejection the reason is
    /// returned and nothing changes.
    pub fn register_worker(
        &mut self,
        id: WorkerId,
        cores: u32,
        mode: DispatchMode,
        prefetch: u32,
        now: u64,
    ) -> Result<(), String> {
        if cores == 0 {
            return Err("worker must offer at least one core".into());
        }
        if let Some(m) = self.cfg.mode {
            if m != mode {
                return Err(format!("dispatcher accepts only {m:?} workers"));
            }
        }
        if self.workers.get(&id).is_some_and(|w| w.connected) {
            // the previous session is superseded; its tasks go back to the queue
            self.worker_lost(id, now);
            self.out.push(Output::Disconnect { worker: id });
        }
        let suspended = self.suspended.contains(&id);
        let w = WorkerState {
            worker_id: id,
            cores,
            mode,
            prefetch,
            in_flight: HashSet::new(),
            consecutive_failures: self.workers.get(&id).map_or(0, |w| w.consecutive_failures),
            suspended,
            draining: false,
            connected: true,
            registered_at: now,
            parked: 0,
            completed: self.workers.get(&id).map_or(0, |w| w.completed),
        };
        self.workers.insert(id, w);
        self.out.push(Output::Send { worker: id, body: Body::Ack { status: 0, message: "registered".into() } });
        if suspended {
            self.out.push(Output::Send { worker: id, body: Body::Suspend });
        }
        self.log_all(Event::WorkerRegistered { t: now, worker: id, cores });
        Ok(())
    }

    /// Connection to the worker is gone: its in-flight tasks return to the
    /// head of the queue without consuming an attempt.
    pub fn worker_lost(&mut self, id: WorkerId, now: u64) {
        let Some(w) = self.workers.get_mut(&id) else { return };
        if !w.connected {
            return;
        }
        w.connected = false;
        w.parked = 0;
        let requeued = self.requeue_in_flight(id);
        self.log_all(Event::WorkerLost { t: now, worker: id, requeued });
    }

    fn requeue_in_flight(&mut self, id: WorkerId) -> usize {
        let w = self.workers.get_mut(&id).expect("worker");
        let mut ids: Vec<TaskId> = w.in_flight.drain().collect();
        // oldest dispatch ends up at the very front
        ids.sort_by_key(|t| std::cmp::Reverse(self.tasks[t].dispatched_at));
        for t in &ids {
            let rec = self.tasks.get_mut(t).expect("task");
            rec.worker = None;
            rec.attempts = rec.attempts.saturating_sub(1);
            self.enqueue(*t, true, TaskState::Retrying);
        }
        ids.len()
    }

    /// The worker announced it is shutting down: no new assignments.
    pub fn worker_draining(&mut self, id: WorkerId) {
        if let Some(w) = self.workers.get_mut(&id) {
            w.draining = true;
            w.parked = 0;
        }
    }

    pub fn heartbeat(&mut self, id: WorkerId, running: &[TaskId]) {
        for t in running {
            if let Some(rec) = self.tasks.get(t) {
                if rec.worker == Some(id) && rec.state == TaskState::Dispatched {
                    self.set_state(t, TaskState::Running);
                }
            }
        }
    }

    /// Pull-mode request for up to `max` tasks.
    pub fn task_request(&mut self, id: WorkerId, max: u32, now: u64) -> Result<(), String> {
        let Some(w) = self.workers.get_mut(&id) else {
            return Err(format!("task request from unregistered worker {id}"));
        };
        if w.suspended {
            self.out.push(Output::Send { worker: id, body: Body::Suspend });
            return Ok(());
        }
        if !w.assignable() {
            return Ok(());
        }
        w.parked = max;
        self.serve_pull(id, now);
        Ok(())
    }

    fn serve_pull(&mut self, id: WorkerId, now: u64) {
        let w = &self.workers[&id];
        let want = (w.parked as usize).min(w.free(self.cfg.bundle_size)).min(self.waiting);
        if want == 0 {
            return;
        }
        let alternatives = self.assignable_count() > 1;
        let specs = self.take_tasks(id, want, alternatives, now);
        if specs.is_empty() {
            return;
        }
        self.workers.get_mut(&id).expect("worker").parked = 0;
        self.send_tasks(id, specs);
    }

    fn assignable_count(&self) -> usize {
        self.workers.values().filter(|w| w.assignable()).count()
    }

    /// Pops up to `n` live tasks for `worker`, marking them dispatched.
    fn take_tasks(&mut self, worker: WorkerId, n: usize, alternatives: bool, now: u64) -> Vec<Arc<TaskSpec>> {
        let mut specs = Vec::with_capacity(n);
        let mut skipped = Vec::new();
        while specs.len() < n {
            let Some(entry) = self.queue.pop_front() else { break };
            if !self.entry_live(&entry) {
                continue;
            }
            let id = entry.0;
            if alternatives && self.tasks[&id].avoid == Some(worker) && skipped.len() < AVOID_SCAN {
                skipped.push(entry);
                continue;
            }
            let rec = self.tasks.get_mut(&id).expect("task");
            rec.attempts += 1;
            rec.worker = Some(worker);
            rec.dispatched_at = now;
            let attempt = rec.attempts;
            let run = rec.run.clone();
            specs.push(rec.spec.clone());
            self.set_state(&id, TaskState::Dispatched);
            self.workers.get_mut(&worker).expect("worker").in_flight.insert(id);
            self.log(&run, Event::Dispatched { t: now, task: id, worker, attempt });
        }
        for entry in skipped.into_iter().rev() {
            self.queue.push_front(entry);
        }
        specs
    }

    fn send_tasks(&mut self, worker: WorkerId, specs: Vec<Arc<TaskSpec>>) {
        let body = if specs.len() == 1 && self.cfg.bundle_size == 1 {
            Body::TaskDispatch(Arc::unwrap_or_clone(specs.into_iter().next().expect("one spec")))
        } else {
            Body::TaskBundle(specs.into_iter().map(Arc::unwrap_or_clone).collect())
        };
        self.out.push(Output::Send { worker, body });
    }

    /// Assigns queued tasks: push workers least-loaded first (ties to the
    /// lowest id), then parked pull requests in worker-id order.
    pub fn dispatch(&mut self, now: u64) {
        if self.waiting == 0 {
            return;
        }
        let b = self.cfg.bundle_size;
        let alternatives = self.assignable_count() > 1;
        // workers every remaining task avoids
        let mut excluded: Vec<WorkerId> = Vec::new();
        while self.waiting > 0 {
            let need = b.min(self.waiting);
            let mut best: Option<(WorkerId, usize)> = None;
            for w in self.workers.values() {
                if w.mode != DispatchMode::Push || !w.assignable() || excluded.contains(&w.worker_id) {
                    continue;
                }
                let free = w.free(b);
                if free >= need && best.is_none_or(|(_, f)| free > f) {
                    best = Some((w.worker_id, free));
                }
            }
            let Some((wid, free)) = best else { break };
            let specs = self.take_tasks(wid, b.min(free), alternatives, now);
            if specs.is_empty() {
                excluded.push(wid);
                continue;
            }
            self.send_tasks(wid, specs);
        }
        let parked: Vec<WorkerId> =
            self.workers.values().filter(|w| w.parked > 0 && w.assignable()).map(|w| w.worker_id).collect();
        for id in parked {
            if self.waiting == 0 {
                break;
            }
            self.serve_pull(id, now);
        }
    }

    fn classify(&self, r: &TaskResult) -> ErrorClass {
        if r.error_class == ErrorClass::AppError
            && self.cfg.failfast_patterns.iter().any(|p| !p.is_empty() && r.detail.contains(p.as_str()))
        {
            ErrorClass::FailFast
        } else {
            r.error_class
        }
    }

    /// Applies a worker's result. Results for unknown or finished tasks, or
    /// from a worker the task is no longer assigned to, are ignored; a late
    /// success for a task that was requeued but not yet redispatched is
    /// accepted.
    pub fn complete(&mut self, sender: WorkerId, result: TaskResult, now: u64) -> Option<FailureAction> {
        let id = result.task_id;
        let Some(rec) = self.tasks.get(&id) else {
            log::debug!("result for unknown task {id} from worker {sender}; ignored");
            return None;
        };
        let assigned = rec.worker == Some(sender) && rec.state.in_flight();
        let late_success = rec.state.waiting() && result.error_class == ErrorClass::None;
        if !(assigned || late_success) {
            log::debug!("stale result for {id} ({:?}) from worker {sender}; ignored", rec.state);
            return None;
        }
        let run = rec.run.clone();
        if let Some(w) = self.workers.get_mut(&sender) {
            w.in_flight.remove(&id);
        }
        self.log(&run, Event::Started { t: result.started, task: id, worker: sender });

        if result.error_class == ErrorClass::None {
            if let Some(w) = self.workers.get_mut(&sender) {
                w.consecutive_failures = 0;
                w.completed += 1;
            }
            self.log(
                &run,
                Event::Finished { t: now, task: id, worker: sender, started: result.started, finished: result.finished },
            );
            let rec = self.tasks.get_mut(&id).expect("task");
            rec.worker = None;
            rec.result = Some(result);
            self.set_state(&id, TaskState::Done);
            return None;
        }

        let class = self.classify(&result);
        let (action, permanent) = self.handle_failure(&id, sender, class);
        self.log(
            &run,
            Event::FailedAttempt {
                t: now,
                task: id,
                worker: sender,
                exit_code: result.exit_code,
                error_class: class,
                action,
                permanent,
                detail: result.detail.clone(),
            },
        );
        let rec = self.tasks.get_mut(&id).expect("task");
        rec.result = Some(result);
        if action == FailureAction::SuspendWorkerAndRetry {
            let failures = self.workers[&sender].consecutive_failures;
            self.log_all(Event::WorkerSuspended { t: now, worker: sender, consecutive_failures: failures });
        }
        Some(action)
    }

    /// Decides and applies the failure policy for one failed attempt.
    /// Returns the action and whether the failure is permanent.
    fn handle_failure(&mut self, id: &TaskId, worker: WorkerId, class: ErrorClass) -> (FailureAction, bool) {
        let max_retries = self.cfg.max_retries;
        let rec = self.tasks.get_mut(id).expect("task");
        rec.worker = None;
        match class {
            ErrorClass::None => unreachable!("success handled by caller"),
            ErrorClass::CommError => {
                rec.attempts = rec.attempts.saturating_sub(1);
                self.enqueue(*id, true, TaskState::Retrying);
                (FailureAction::RetrySameQueue, false)
            }
            ErrorClass::AppError => {
                if rec.attempts > max_retries {
                    self.set_state(id, TaskState::Failed);
                    (FailureAction::PropagateToClient, true)
                } else {
                    self.enqueue(*id, false, TaskState::Retrying);
                    (FailureAction::RetrySameQueue, false)
                }
            }
            ErrorClass::FailFast => {
                rec.attempts = rec.attempts.saturating_sub(1);
                rec.avoid = Some(worker);
                self.enqueue(*id, true, TaskState::Retrying);
                let threshold = self.cfg.suspend_threshold;
                let Some(w) = self.workers.get_mut(&worker) else {
                    return (FailureAction::RetrySameQueue, false);
                };
                w.consecutive_failures += 1;
                if w.consecutive_failures >= threshold && !w.suspended {
                    w.suspended = true;
                    w.parked = 0;
                    self.suspended.insert(worker);
                    self.requeue_in_flight(worker);
                    self.out.push(Output::Send { worker, body: Body::Suspend });
                    (FailureAction::SuspendWorkerAndRetry, false)
                } else {
                    (FailureAction::RetrySameQueue, false)
                }
            }
        }
    }

    pub fn run_status(&self, run: &str) -> Option<RunStatus> {
        let r = self.runs.get(run)?;
        let failed_tasks = r
            .tasks
            .iter()
            .filter(|t| self.tasks[*t].state == TaskState::Failed)
            .take(MAX_FAILED_LISTED)
            .copied()
            .collect();
        Some(RunStatus {
            run_id: run.to_string(),
            submitted: r.submitted(),
            queued: r.count(TaskState::Queued),
            dispatched: r.count(TaskState::Dispatched),
            running: r.count(TaskState::Running),
            done: r.count(TaskState::Done),
            failed: r.count(TaskState::Failed),
            retrying: r.count(TaskState::Retrying),
            complete: r.complete(),
            offline: false,
            failed_tasks,
            metrics: r.metrics.metrics(),
        })
    }

    pub fn status(&self, run: Option<&str>) -> DispatcherStatus {
        DispatcherStatus {
            workers: self
                .workers
                .values()
                .map(|w| WorkerInfo {
                    worker_id: w.worker_id,
                    cores: w.cores,
                    mode: w.mode,
                    status: w.status(),
                    in_flight: w.in_flight.len(),
                    consecutive_failures: w.consecutive_failures,
                    completed: w.completed,
                })
                .collect(),
            queued: self.waiting,
            run: run.and_then(|r| self.run_status(r)),
        }
    }

    /// Checks the internal accounting; used by tests.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut assigned: HashMap<TaskId, WorkerId> = HashMap::new();
        for w in self.workers.values() {
            if w.in_flight.len() > w.capacity(self.cfg.bundle_size) {
                return Err(format!("worker {} over capacity", w.worker_id));
            }
            for t in &w.in_flight {
                if assigned.insert(*t, w.worker_id).is_some() {
                    return Err(format!("task {t} held by two workers"));
                }
                let rec = &self.tasks[t];
                if rec.worker != Some(w.worker_id) || !rec.state.in_flight() {
                    return Err(format!("task {t} in flight on {} but record says {:?}", w.worker_id, rec.state));
                }
            }
        }
        let mut waiting = 0;
        for (run_id, r) in &self.runs {
            let mut counts = [0usize; 6];
            for t in &r.tasks {
                let rec = &self.tasks[t];
                counts[rec.state.index()] += 1;
                if rec.state.in_flight() && !assigned.contains_key(t) {
                    return Err(format!("task {t} in flight but on no worker"));
                }
                if rec.state == TaskState::Done && rec.result.as_ref().map(|r| r.error_class) != Some(ErrorClass::None) {
                    return Err(format!("task {t} done without a successful result"));
                }
                if rec.attempts > self.cfg.max_retries + 1 {
                    return Err(format!("task {t} over its attempt budget"));
                }
            }
            if counts != r.counts {
                return Err(format!("run {run_id}: state counts drifted"));
            }
            if counts.iter().sum::<usize>() != r.tasks.len() {
                return Err(format!("run {run_id}: task conservation violated"));
            }
            waiting += counts[TaskState::Queued.index()] + counts[TaskState::Retrying.index()];
        }
        if waiting != self.waiting {
            return Err("waiting count drifted".into());
        }
        let live = self.queue.iter().filter(|e| self.entry_live(e)).count();
        if live != self.waiting {
            return Err(format!("{live} live queue entries for {} waiting tasks", self.waiting));
        }
        Ok(())
    }
}
