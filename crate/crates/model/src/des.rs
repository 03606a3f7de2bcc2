//! Event-driven simulation of a single dispatcher feeding `P` processors.
//!
//! The dispatcher is one server with deterministic service time `1/r` per
//! message; a message carries a bundle of up to `bundle_size` tasks to one
//! idle processor, which runs the bundle sequentially before asking for more.
//! Each task optionally reads from and writes to a shared filesystem whose
//! aggregate bandwidth is divided evenly among the transfers in progress
//! (processor sharing, tracked with a virtual-time clock per pool).

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::DurationDist;
use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Shared-filesystem traffic per task. Bandwidths are aggregate bits/sec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedIo<T> {
    pub bytes_read: T,
    pub bytes_written: T,
    pub aggregate_read_bw: T,
    pub aggregate_write_bw: T,
    /// Fixed latency charged once before each non-empty read or write.
    pub per_op_latency: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig<T> {
    pub processors: usize,
    pub tasks: usize,
    pub durations: DurationDist<T>,
    /// Dispatcher capacity in messages/sec.
    pub dispatch_rate: T,
    pub bundle_size: usize,
    /// Delay between a processor receiving a task and the task starting
    /// (network hop plus process start). The processor is held but not busy.
    pub per_task_latency: T,
    pub shared_io: Option<SharedIo<T>>,
    /// Keep one record per task in the result.
    pub record_tasks: bool,
    /// Sample the number of running tasks every `timeline_interval` seconds.
    pub timeline_interval: Option<T>,
}

impl<T: Scalar> SimConfig<T> {
    pub fn new(processors: usize, tasks: usize, durations: DurationDist<T>, dispatch_rate: T) -> Self {
        SimConfig {
            processors,
            tasks,
            durations,
            dispatch_rate,
            bundle_size: 1,
            per_task_latency: T::zero(),
            shared_io: None,
            record_tasks: false,
            timeline_interval: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.processors == 0 {
            return Err(invalid("processors must be >= 1"));
        }
        if self.tasks == 0 {
            return Err(invalid("tasks must be >= 1"));
        }
        if !(self.dispatch_rate > T::zero() && self.dispatch_rate.is_finite()) {
            return Err(invalid("dispatch rate must be positive and finite"));
        }
        if self.bundle_size == 0 {
            return Err(invalid("bundle size must be >= 1"));
        }
        if !(self.per_task_latency >= T::zero() && self.per_task_latency.is_finite()) {
            return Err(invalid("per-task latency must be non-negative"));
        }
        if let Some(io) = &self.shared_io {
            let nonneg = |v: T| v >= T::zero() && v.is_finite();
            if !(nonneg(io.bytes_read) && nonneg(io.bytes_written) && nonneg(io.per_op_latency)) {
                return Err(invalid("shared io sizes and latency must be non-negative"));
            }
            if !(io.aggregate_read_bw > T::zero() && io.aggregate_write_bw > T::zero()) {
                return Err(invalid("shared io bandwidths must be positive"));
            }
        }
        if let Some(dt) = self.timeline_interval {
            if !(dt > T::zero()) {
                return Err(invalid("timeline interval must be positive"));
            }
        }
        self.durations.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTask<T> {
    pub index: usize,
    pub processor: usize,
    /// Time the dispatcher finished sending the task's message.
    pub dispatched: T,
    pub started: T,
    pub finished: T,
    pub duration: T,
    /// Time spent on shared I/O (latency plus transfer).
    pub io: T,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IoStats<T> {
    pub bytes_read: T,
    pub bytes_written: T,
    /// Time during which at least one read (write) transfer was in progress.
    pub read_active: T,
    pub write_active: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult<T> {
    pub makespan: T,
    /// Compute work over `processors * makespan`; I/O time counts as overhead.
    pub efficiency: T,
    /// Busy time (compute plus I/O) over `processors * makespan`.
    pub utilization: T,
    pub speedup: T,
    /// Sum of task compute durations.
    pub work: T,
    /// Busy time per processor.
    pub busy: Vec<T>,
    /// `(time, running tasks)` samples.
    pub timeline: Vec<(T, usize)>,
    pub tasks: Vec<SimTask<T>>,
    pub io: IoStats<T>,
    pub mean_task_time: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    ReadLatency,
    ReadTransfer,
    Compute,
    WriteLatency,
    WriteTransfer,
    Finish,
}

impl Phase {
    fn next(self) -> Phase {
        match self {
            Phase::ReadLatency => Phase::ReadTransfer,
            Phase::ReadTransfer => Phase::Compute,
            Phase::Compute => Phase::WriteLatency,
            Phase::WriteLatency => Phase::WriteTransfer,
            Phase::WriteTransfer | Phase::Finish => Phase::Finish,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    DispatchDone(usize),
    Begin(usize),
    PhaseDone(usize),
    PoolCheck(usize, u64),
}

struct Event<T> {
    time: T,
    seq: u64,
    kind: Kind,
}

impl<T: Scalar> PartialEq for Event<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<T: Scalar> Eq for Event<T> {}
impl<T: Scalar> PartialOrd for Event<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Scalar> Ord for Event<T> {
    // min-heap on (time, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .partial_cmp(&self.time)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Flow<T> {
    finish: T,
    seq: u64,
    proc: usize,
}

impl<T: Scalar> PartialEq for Flow<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<T: Scalar> Eq for Flow<T> {}
impl<T: Scalar> PartialOrd for Flow<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Scalar> Ord for Flow<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .finish
            .partial_cmp(&self.finish)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Processor-sharing bandwidth pool. `virt` is the number of bytes every
/// active flow has received since the pool was created.
struct Pool<T> {
    rate: T,
    virt: T,
    last: T,
    flows: BinaryHeap<Flow<T>>,
    generation: u64,
    active: T,
    moved: T,
}

impl<T: Scalar> Pool<T> {
    fn new(bits_per_sec: T) -> Self {
        Pool {
            rate: bits_per_sec / T::lit(8.0),
            virt: T::zero(),
            last: T::zero(),
            flows: BinaryHeap::new(),
            generation: 0,
            active: T::zero(),
            moved: T::zero(),
        }
    }

    fn advance(&mut self, now: T) {
        let k = self.flows.len();
        if k > 0 && now > self.last {
            let dt = now - self.last;
            self.virt = self.virt + dt * self.rate / T::count(k);
            self.active = self.active + dt;
        }
        self.last = self.last.max(now);
    }

    fn add(&mut self, now: T, bytes: T, proc: usize, seq: u64) {
        self.advance(now);
        self.flows.push(Flow { finish: self.virt + bytes, seq, proc });
        self.moved = self.moved + bytes;
        self.generation += 1;
    }

    fn next_completion(&self, now: T) -> Option<T> {
        self.flows.peek().map(|f| {
            let left = (f.finish - self.virt).max(T::zero());
            now + left * T::count(self.flows.len()) / self.rate
        })
    }

    fn pop_done(&mut self, now: T) -> Vec<usize> {
        self.advance(now);
        let tol = T::epsilon() * T::lit(1024.0) * self.virt.abs().max(T::one());
        let mut done = Vec::new();
        while let Some(f) = self.flows.peek() {
            if f.finish <= self.virt + tol || done.is_empty() && self.next_completion(now) == Some(now) {
                done.push(self.flows.pop().expect("peeked").proc);
            } else {
                break;
            }
        }
        if !done.is_empty() {
            self.generation += 1;
        }
        done
    }
}

struct Proc<T> {
    next: usize,
    end: usize,
    task: usize,
    begin: T,
    phase: Phase,
    busy: T,
}

struct Sim<'a, T: Scalar> {
    cfg: &'a SimConfig<T>,
    durations: Vec<T>,
    service: T,
    heap: BinaryHeap<Event<T>>,
    seq: u64,
    procs: Vec<Proc<T>>,
    idle: VecDeque<usize>,
    dispatcher_busy: bool,
    next_task: usize,
    finished: usize,
    active: usize,
    makespan: T,
    pools: Vec<Pool<T>>,
    dispatched_at: Vec<T>,
    tasks: Vec<SimTask<T>>,
    timeline: Vec<(T, usize)>,
    next_sample: T,
    task_time: T,
}

impl<'a, T: Scalar> Sim<'a, T> {
    fn push(&mut self, time: T, kind: Kind) {
        self.seq += 1;
        self.heap.push(Event { time, seq: self.seq, kind });
    }

    fn try_dispatch(&mut self, now: T) {
        if self.dispatcher_busy || self.next_task >= self.cfg.tasks {
            return;
        }
        let Some(p) = self.idle.pop_front() else { return };
        let count = self.cfg.bundle_size.min(self.cfg.tasks - self.next_task);
        let proc = &mut self.procs[p];
        proc.next = self.next_task;
        proc.end = self.next_task + count;
        self.next_task += count;
        self.dispatcher_busy = true;
        self.push(now + self.service, Kind::DispatchDone(p));
    }

    fn dispatch_done(&mut self, p: usize, now: T) {
        self.dispatcher_busy = false;
        if self.cfg.record_tasks {
            let (a, b) = (self.procs[p].next, self.procs[p].end);
            for i in a..b {
                self.dispatched_at[i] = now;
            }
        }
        self.schedule_begin(p, now);
        self.try_dispatch(now);
    }

    fn schedule_begin(&mut self, p: usize, now: T) {
        if self.cfg.per_task_latency > T::zero() {
            self.push(now + self.cfg.per_task_latency, Kind::Begin(p));
        } else {
            self.begin(p, now);
        }
    }

    fn begin(&mut self, p: usize, now: T) {
        let proc = &mut self.procs[p];
        proc.task = proc.next;
        proc.next += 1;
        proc.begin = now;
        self.active += 1;
        self.enter(p, Phase::ReadLatency, now);
    }

    fn enter(&mut self, p: usize, phase: Phase, now: T) {
        let mut phase = phase;
        loop {
            self.procs[p].phase = phase;
            match phase {
                Phase::ReadLatency | Phase::WriteLatency => {
                    if let Some(io) = &self.cfg.shared_io {
                        let bytes = if phase == Phase::ReadLatency { io.bytes_read } else { io.bytes_written };
                        if bytes > T::zero() && io.per_op_latency > T::zero() {
                            let at = now + io.per_op_latency;
                            self.push(at, Kind::PhaseDone(p));
                            return;
                        }
                    }
                }
                Phase::ReadTransfer | Phase::WriteTransfer => {
                    if let Some(io) = &self.cfg.shared_io {
                        let (bytes, pool) = if phase == Phase::ReadTransfer {
                            (io.bytes_read, 0)
                        } else {
                            (io.bytes_written, 1)
                        };
                        if bytes > T::zero() {
                            self.seq += 1;
                            let seq = self.seq;
                            self.pools[pool].add(now, bytes, p, seq);
                            self.reschedule_pool(pool, now);
                            return;
                        }
                    }
                }
                Phase::Compute => {
                    let d = self.durations[self.procs[p].task];
                    if d > T::zero() {
                        self.push(now + d, Kind::PhaseDone(p));
                        return;
                    }
                }
                Phase::Finish => {
                    self.finish(p, now);
                    return;
                }
            }
            phase = phase.next();
        }
    }

    fn reschedule_pool(&mut self, pool: usize, now: T) {
        if let Some(at) = self.pools[pool].next_completion(now) {
            let generation = self.pools[pool].generation;
            self.push(at, Kind::PoolCheck(pool, generation));
        }
    }

    fn pool_check(&mut self, pool: usize, generation: u64, now: T) {
        if self.pools[pool].generation != generation {
            return;
        }
        let done = self.pools[pool].pop_done(now);
        self.reschedule_pool(pool, now);
        for p in done {
            let next = self.procs[p].phase.next();
            self.enter(p, next, now);
        }
    }

    fn finish(&mut self, p: usize, now: T) {
        let proc = &mut self.procs[p];
        let elapsed = now - proc.begin;
        proc.busy = proc.busy + elapsed;
        self.task_time = self.task_time + elapsed;
        self.active -= 1;
        self.finished += 1;
        if now > self.makespan {
            self.makespan = now;
        }
        if self.cfg.record_tasks {
            let i = proc.task;
            let duration = self.durations[i];
            self.tasks.push(SimTask {
                index: i,
                processor: p,
                dispatched: self.dispatched_at[i],
                started: proc.begin,
                finished: now,
                duration,
                io: elapsed - duration,
            });
        }
        if self.procs[p].next < self.procs[p].end {
            self.schedule_begin(p, now);
        } else {
            self.idle.push_back(p);
            self.try_dispatch(now);
        }
    }

    fn sample_until(&mut self, now: T) {
        let Some(dt) = self.cfg.timeline_interval else { return };
        while self.next_sample <= now {
            self.timeline.push((self.next_sample, self.active));
            self.next_sample = self.next_sample + dt;
        }
    }
}

/// Runs one simulation. Identical `(config, seed)` pairs give identical results.
pub fn des_run<T: Scalar>(config: &SimConfig<T>, seed: u64) -> Result<SimResult<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let durations = config.durations.sample_n(config.tasks, &mut rng)?;
    simulate(config, durations)
}

/// Runs a simulation over explicit per-task durations (task order preserved).
pub fn des_run_durations<T: Scalar>(config: &SimConfig<T>, durations: Vec<T>) -> Result<SimResult<T>> {
    config.validate()?;
    if durations.len() != config.tasks {
        return Err(invalid(format!(
            "expected {} durations, got {}",
            config.tasks,
            durations.len()
        )));
    }
    if durations.iter().any(|d| !(*d >= T::zero() && d.is_finite())) {
        return Err(invalid("durations must be non-negative and finite"));
    }
    simulate(config, durations)
}

fn simulate<T: Scalar>(config: &SimConfig<T>, durations: Vec<T>) -> Result<SimResult<T>> {
    let p = config.processors;
    let (read_bw, write_bw) = config
        .shared_io
        .as_ref()
        .map(|io| (io.aggregate_read_bw, io.aggregate_write_bw))
        .unwrap_or((T::one(), T::one()));
    let mut sim = Sim {
        cfg: config,
        service: T::one() / config.dispatch_rate,
        heap: BinaryHeap::with_capacity(2 * p + 16),
        seq: 0,
        procs: (0..p)
            .map(|_| Proc {
                next: 0,
                end: 0,
                task: 0,
                begin: T::zero(),
                phase: Phase::Finish,
                busy: T::zero(),
            })
            .collect(),
        idle: (0..p).collect(),
        dispatcher_busy: false,
        next_task: 0,
        finished: 0,
        active: 0,
        makespan: T::zero(),
        pools: vec![Pool::new(read_bw), Pool::new(write_bw)],
        dispatched_at: if config.record_tasks { vec![T::zero(); config.tasks] } else { Vec::new() },
        tasks: Vec::with_capacity(if config.record_tasks { config.tasks } else { 0 }),
        timeline: Vec::new(),
        next_sample: T::zero(),
        task_time: T::zero(),
        durations,
    };

    sim.try_dispatch(T::zero());
    while let Some(ev) = sim.heap.pop() {
        sim.sample_until(ev.time);
        match ev.kind {
            Kind::DispatchDone(p) => sim.dispatch_done(p, ev.time),
            Kind::Begin(p) => sim.begin(p, ev.time),
            Kind::PhaseDone(p) => {
                let next = sim.procs[p].phase.next();
                sim.enter(p, next, ev.time);
            }
            Kind::PoolCheck(pool, generation) => sim.pool_check(pool, generation, ev.time),
        }
    }
    debug_assert_eq!(sim.finished, config.tasks);
    if config.timeline_interval.is_some() {
        let end = sim.makespan;
        sim.timeline.push((end, 0));
    }

    let work = sim.durations.iter().fold(T::zero(), |a, &d| a + d);
    let pf = T::count(p);
    let capacity = pf * sim.makespan;
    let (efficiency, utilization) = if capacity > T::zero() {
        (work / capacity, sim.task_time / capacity)
    } else {
        (T::one(), T::one())
    };
    let mut tasks = sim.tasks;
    tasks.sort_by_key(|t| t.index);
    Ok(SimResult {
        makespan: sim.makespan,
        efficiency,
        utilization,
        speedup: efficiency * pf,
        work,
        busy: sim.procs.iter().map(|p| p.busy).collect(),
        timeline: sim.timeline,
        tasks,
        io: IoStats {
            bytes_read: sim.pools[0].moved,
            bytes_written: sim.pools[1].moved,
            read_active: sim.pools[0].active,
            write_active: sim.pools[1].active,
        },
        mean_task_time: sim.task_time / T::count(config.tasks),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(p: usize, n: usize, t: f64, r: f64) -> SimConfig<f64> {
        SimConfig::new(p, n, DurationDist::constant(t), r)
    }

    #[test]
    fn single_wave_is_perfect_when_dispatch_is_instant() {
        let cfg = constant(16, 16, 10.0, 1e12);
        let res = des_run(&cfg, 0).unwrap();
        assert!((res.efficiency - 1.0).abs() < 1e-9, "{}", res.efficiency);
    }

    #[test]
    fn dispatcher_bound_run_matches_hand_count() {
        // 4 tasks of 1 s, 1 task/sec dispatcher, plenty of processors:
        // starts at 1,2,3,4 and the last ends at 5.
        let cfg = constant(8, 4, 1.0, 1.0);
        let res = des_run(&cfg, 0).unwrap();
        assert!((res.makespan - 5.0).abs() < 1e-12);
        assert!((res.efficiency - 4.0 / 40.0).abs() < 1e-12);
    }

    #[test]
    fn processor_bound_run_matches_hand_count() {
        // 2 processors, 4 tasks of 10 s, dispatcher 10/s: proc0 starts at 0.1
        // and 10.2 (after a 0.1 s re-dispatch), proc1 at 0.2 and 10.3.
        let cfg = constant(2, 4, 10.0, 10.0);
        let res = des_run(&cfg, 0).unwrap();
        assert!((res.makespan - 20.3).abs() < 1e-9, "{}", res.makespan);
    }

    #[test]
    fn bundles_count_as_one_message() {
        // bundle of 4 one-second tasks on a single processor: one 1 s service
        let mut cfg = constant(1, 4, 1.0, 1.0);
        cfg.bundle_size = 4;
        let res = des_run(&cfg, 0).unwrap();
        assert!((res.makespan - 5.0).abs() < 1e-12);
        cfg.bundle_size = 1;
        let res = des_run(&cfg, 0).unwrap();
        assert!((res.makespan - 8.0).abs() < 1e-12);
    }

    #[test]
    fn latency_delays_each_task() {
        let mut cfg = constant(1, 3, 1.0, 1e9);
        cfg.per_task_latency = 0.5;
        let res = des_run(&cfg, 0).unwrap();
        assert!((res.makespan - 4.5).abs() < 1e-6, "{}", res.makespan);
        assert!((res.utilization - res.efficiency).abs() < 1e-12);
    }

    #[test]
    fn shared_bandwidth_splits_evenly() {
        // two simultaneous 100-byte reads over 800 bit/s (100 B/s) take 2 s each
        let mut cfg = constant(2, 2, 0.0, 1e12);
        cfg.shared_io = Some(SharedIo {
            bytes_read: 100.0,
            bytes_written: 0.0,
            aggregate_read_bw: 800.0,
            aggregate_write_bw: 800.0,
            per_op_latency: 0.0,
        });
        cfg.record_tasks = true;
        let res = des_run(&cfg, 0).unwrap();
        for t in &res.tasks {
            assert!((t.io - 2.0).abs() < 1e-6, "{t:?}");
        }
        assert!((res.io.read_active - 2.0).abs() < 1e-6);
    }

    #[test]
    fn records_and_timeline() {
        let mut cfg = constant(2, 6, 1.0, 100.0);
        cfg.record_tasks = true;
        cfg.timeline_interval = Some(0.5);
        let res = des_run(&cfg, 0).unwrap();
        assert_eq!(res.tasks.len(), 6);
        for t in &res.tasks {
            assert!(t.dispatched <= t.started && t.started <= t.finished);
        }
        assert!(res.timeline.iter().all(|&(_, a)| a <= 2));
        assert_eq!(res.timeline.last().unwrap().1, 0);
    }

    #[test]
    fn rejects_invalid_config() {
        assert!(des_run(&constant(0, 1, 1.0, 1.0), 0).is_err());
        assert!(des_run(&constant(1, 0, 1.0, 1.0), 0).is_err());
        assert!(des_run(&constant(1, 1, 1.0, 0.0), 0).is_err());
        let mut cfg = constant(1, 1, 1.0, 1.0);
        cfg.bundle_size = 0;
        assert!(des_run(&cfg, 0).is_err());
    }

    #[test]
    fn explicit_durations_length_checked() {
        let cfg = constant(1, 2, 1.0, 1.0);
        assert!(des_run_durations(&cfg, vec![1.0]).is_err());
        assert!(des_run_durations(&cfg, vec![1.0, 2.0]).is_ok());
    }
}
