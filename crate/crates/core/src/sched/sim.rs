use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{QueuedTask, SchedError, Stage, StageTask, Tier, TwoLevelQueue, WorkerClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedMode {
    Bsp,
    Ssp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    pub mode: SchedMode,
    pub staleness: usize,
    /// Workers per stage, in stage order.
    pub workers_per_stage: [usize; 4],
    pub device_capacity: usize,
    pub host_capacity: usize,
    /// Ticks between dequeue and start for a device-tier task.
    pub device_latency: u64,
    /// Host-tier dequeues cost `device_latency * host_penalty`.
    pub host_penalty: u64,
    /// Idle update workers may run device-class rollout-side tasks.
    pub co_schedule: bool,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            mode: SchedMode::Ssp,
            staleness: 4,
            workers_per_stage: [1; 4],
            device_capacity: 16,
            host_capacity: 64,
            device_latency: 1,
            host_penalty: 5,
            co_schedule: false,
        }
    }
}

impl SchedulerConfig {
    pub fn bsp() -> Self {
        Self {
            mode: SchedMode::Bsp,
            staleness: 0,
            ..Self::default()
        }
    }

    pub fn ssp(staleness: usize) -> Self {
        Self {
            mode: SchedMode::Ssp,
            staleness,
            ..Self::default()
        }
    }

    /// The staleness bound actually enforced.
    pub fn effective_staleness(&self) -> usize {
        match self.mode {
            SchedMode::Bsp => 0,
            SchedMode::Ssp => self.staleness,
        }
    }

    pub fn validate(&self) -> Result<(), SchedError> {
        if self.workers_per_stage.contains(&0) {
            return Err(SchedError::Config("every stage needs at least one worker".into()));
        }
        if self.device_capacity == 0 || self.host_capacity == 0 {
            return Err(SchedError::Config("queue capacities must be >= 1".into()));
        }
        Ok(())
    }
}

/// One row of the event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimEvent {
    pub time: u64,
    pub event: String,
    pub batch: usize,
    pub stage: Stage,
    pub worker: Option<usize>,
    pub staleness: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerStats {
    pub stage: Stage,
    pub class: WorkerClass,
    pub busy: u64,
    pub idle: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub makespan: u64,
    pub workers: Vec<WorkerStats>,
    pub device_idle: u64,
    pub total_idle: u64,
    pub total_busy: u64,
    /// Batches per tick.
    pub throughput: f64,
    /// Count of rollout-side tasks by observed staleness.
    pub staleness_histogram: Vec<usize>,
    pub max_observed_staleness: usize,
    pub mean_staleness: f64,
    pub producer_stalls: usize,
    pub host_dispatches: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub metrics: SimMetrics,
    pub events: Vec<SimEvent>,
}

struct Worker {
    stage: Stage,
    class: WorkerClass,
    busy: u64,
    running: Option<(usize, Stage)>,
}

struct Sim<'a> {
    cfg: &'a SchedulerConfig,
    s: usize,
    tasks: Vec<[StageTask; 4]>,
    done: Vec<[bool; 4]>,
    updates_done: usize,
    queues: Vec<TwoLevelQueue>,
    backlog: Vec<Vec<QueuedTask>>,
    workers: Vec<Worker>,
    heap: BinaryHeap<Reverse<(u64, usize)>>,
    events: Vec<SimEvent>,
    hist: Vec<usize>,
    stalls: usize,
    host_dispatches: usize,
}

fn index_trace(trace: &[StageTask]) -> Result<Vec<[StageTask; 4]>, SchedError> {
    let n = trace.iter().map(|t| t.batch_id + 1).max().unwrap_or(0);
    if n == 0 {
        return Err(SchedError::Malformed("trace is empty".into()));
    }
    let mut slots: Vec<[Option<StageTask>; 4]> = vec![Default::default(); n];
    for t in trace {
        if t.duration == 0 {
            return Err(SchedError::Malformed(format!(
                "batch {} {} has zero duration",
                t.batch_id, t.stage
            )));
        }
        let slot = &mut slots[t.batch_id][t.stage.index()];
        if slot.is_some() {
            return Err(SchedError::Malformed(format!("batch {} {} appears twice", t.batch_id, t.stage)));
        }
        *slot = Some(t.clone());
    }
    slots
        .into_iter()
        .enumerate()
        .map(|(b, s)| {
            let missing = s.iter().position(Option::is_none);
            if let Some(i) = missing {
                return Err(SchedError::Malformed(format!("batch {b} lacks {}", Stage::ALL[i])));
            }
            Ok(s.map(|t| t.expect("checked above")))
        })
        .collect()
}

impl Sim<'_> {
    fn log(&mut self, time: u64, event: &str, batch: usize, stage: Stage, worker: Option<usize>, staleness: Option<usize>) {
        self.events.push(SimEvent {
            time,
            event: event.to_string(),
            batch,
            stage,
            worker,
            staleness,
        });
    }

    fn make_ready(&mut self, time: u64, batch: usize, stage: Stage) {
        let item = QueuedTask {
            task: self.tasks[batch][stage.index()].clone(),
            ready_time: time,
        };
        let q = stage.index();
        match self.queues[q].enqueue(item) {
            Ok(Tier::Device) => self.log(time, "enqueue_device", batch, stage, None, None),
            Ok(Tier::Host) => self.log(time, "enqueue_host", batch, stage, None, None),
            Err(super::Backpressure(item)) => {
                self.stalls += 1;
                self.log(time, "stall", batch, stage, None, None);
                self.backlog[q].push(item);
            }
        }
    }

    fn refill(&mut self, time: u64, q: usize) {
        while !self.backlog[q].is_empty() {
            let item = self.backlog[q].remove(0);
            let (batch, stage) = (item.task.batch_id, item.task.stage);
            match self.queues[q].enqueue(item) {
                Ok(tier) => {
                    let ev = if tier == Tier::Device { "enqueue_device" } else { "enqueue_host" };
                    self.log(time, ev, batch, stage, None, None);
                }
                Err(super::Backpressure(item)) => {
                    self.backlog[q].insert(0, item);
                    break;
                }
            }
        }
    }

    fn rollout_stages_ready(&self, batch: usize) -> bool {
        batch < self.s + 1 || self.updates_done >= batch - self.s
    }

    fn update_ready(&self, batch: usize) -> bool {
        self.done[batch][..3].iter().all(|&d| d) && self.updates_done == batch
    }

    /// Picks the next task for worker `w`, if any.
    fn take_task(&mut self, w: usize) -> Option<(QueuedTask, Tier)> {
        let own = self.workers[w].stage.index();
        if let Some(t) = self.queues[own].dequeue() {
            return Some(t);
        }
        if self.cfg.co_schedule && self.workers[w].stage == Stage::ParameterUpdate {
            let best = (0..3)
                .filter_map(|q| {
                    self.queues[q]
                        .peek()
                        .filter(|(t, _)| t.task.worker_class == WorkerClass::Device)
                        .map(|(t, _)| ((t.ready_time, t.task.batch_id, q), q))
                })
                .min()
                .map(|(_, q)| q)?;
            return self.queues[best].dequeue();
        }
        None
    }

    fn dispatch(&mut self, time: u64) {
        for w in 0..self.workers.len() {
            if self.workers[w].running.is_some() {
                continue;
            }
            let Some((item, tier)) = self.take_task(w) else {
                continue;
            };
            let q = item.task.stage.index();
            self.refill(time, q);
            let (batch, stage) = (item.task.batch_id, item.task.stage);
            let staleness = batch - self.updates_done.min(batch);
            let latency = match tier {
                Tier::Device => self.cfg.device_latency,
                Tier::Host => {
                    self.host_dispatches += 1;
                    self.cfg.device_latency * self.cfg.host_penalty
                }
            };
            let rollout_side = stage != Stage::ParameterUpdate;
            if rollout_side {
                if self.hist.len() <= staleness {
                    self.hist.resize(staleness + 1, 0);
                }
                self.hist[staleness] += 1;
            }
            let ev = if tier == Tier::Device { "dispatch_device" } else { "dispatch_host" };
            self.log(time, ev, batch, stage, Some(w), rollout_side.then_some(staleness));
            self.log(time + latency, "start", batch, stage, Some(w), None);
            self.workers[w].running = Some((batch, stage));
            self.workers[w].busy += item.task.duration;
            self.heap.push(Reverse((time + latency + item.task.duration, w)));
        }
    }

    fn complete(&mut self, time: u64, w: usize) {
        let (batch, stage) = self.workers[w].running.take().expect("finished worker was running");
        self.log(time, "finish", batch, stage, Some(w), None);
        self.done[batch][stage.index()] = true;
        let n = self.tasks.len();
        if stage == Stage::ParameterUpdate {
            self.updates_done += 1;
            let unlocked = batch + 1 + self.s;
            if unlocked < n {
                for st in &Stage::ALL[..3] {
                    self.make_ready(time, unlocked, *st);
                }
            }
            if batch + 1 < n && self.update_ready(batch + 1) {
                self.make_ready(time, batch + 1, Stage::ParameterUpdate);
            }
        } else if self.update_ready(batch) {
            self.make_ready(time, batch, Stage::ParameterUpdate);
        }
    }
}

/// Runs the trace to completion under `cfg`.
pub fn simulate(trace: &[StageTask], cfg: &SchedulerConfig) -> Result<SimResult, SchedError> {
    cfg.validate()?;
    let tasks = index_trace(trace)?;
    let n = tasks.len();
    let mut workers = Vec::new();
    for stage in Stage::ALL {
        let class = tasks[0][stage.index()].worker_class;
        for _ in 0..cfg.workers_per_stage[stage.index()] {
            workers.push(Worker {
                stage,
                class,
                busy: 0,
                running: None,
            });
        }
    }
    let mut sim = Sim {
        cfg,
        s: cfg.effective_staleness(),
        tasks,
        done: vec![[false; 4]; n],
        updates_done: 0,
        queues: (0..4)
            .map(|_| TwoLevelQueue::new(cfg.device_capacity, cfg.host_capacity))
            .collect(),
        backlog: vec![Vec::new(); 4],
        workers,
        heap: BinaryHeap::new(),
        events: Vec::new(),
        hist: Vec::new(),
        stalls: 0,
        host_dispatches: 0,
    };
    for b in 0..n {
        if sim.rollout_stages_ready(b) {
            for st in &Stage::ALL[..3] {
                sim.make_ready(0, b, *st);
            }
        }
    }
    sim.dispatch(0);
    let mut makespan = 0;
    while let Some(Reverse((time, w))) = sim.heap.pop() {
        sim.complete(time, w);
        while let Some(&Reverse((t2, w2))) = sim.heap.peek() {
            if t2 != time {
                break;
            }
            sim.heap.pop();
            sim.complete(t2, w2);
        }
        makespan = time;
        sim.dispatch(time);
    }
    if sim.updates_done != n {
        return Err(SchedError::Malformed(format!(
            "simulation stalled after {} of {n} updates",
            sim.updates_done
        )));
    }

    let workers: Vec<WorkerStats> = sim
        .workers
        .iter()
        .map(|w| WorkerStats {
            stage: w.stage,
            class: w.class,
            busy: w.busy,
            idle: makespan - w.busy,
        })
        .collect();
    let rollout_tasks: usize = sim.hist.iter().sum();
    let weighted: usize = sim.hist.iter().enumerate().map(|(s, c)| s * c).sum();
    let metrics = SimMetrics {
        makespan,
        device_idle: workers.iter().filter(|w| w.class == WorkerClass::Device).map(|w| w.idle).sum(),
        total_idle: workers.iter().map(|w| w.idle).sum(),
        total_busy: workers.iter().map(|w| w.busy).sum(),
        workers,
        throughput: n as f64 / makespan.max(1) as f64,
        max_observed_staleness: sim.hist.len().saturating_sub(1),
        mean_staleness: weighted as f64 / rollout_tasks.max(1) as f64,
        staleness_histogram: sim.hist,
        producer_stalls: sim.stalls,
        host_dispatches: sim.host_dispatches,
    };
    Ok(SimResult {
        metrics,
        events: sim.events,
    })
}

pub fn write_event_log(events: &[SimEvent], path: &Path) -> Result<(), SchedError> {
    let mut w = csv::Writer::from_path(path)?;
    for e in events {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_event_log(path: &Path) -> Result<Vec<SimEvent>, SchedError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub staleness: usize,
    pub makespan: u64,
    pub device_idle: u64,
    /// Device idle-time reduction relative to the bulk-synchronous run.
    pub idle_reduction_pct: f64,
    pub throughput: f64,
    pub max_staleness: usize,
}

/// One bulk-synchronous row followed by one stale-synchronous row per `s`.
pub fn compare_schedulers(
    trace: &[StageTask],
    s_values: &[usize],
    base: &SchedulerConfig,
) -> Result<Vec<ComparisonRow>, SchedError> {
    if s_values.is_empty() {
        return Err(SchedError::Config("need at least one staleness value".into()));
    }
    let row = |label: String, s: usize, m: &SimMetrics, bsp_idle: u64| ComparisonRow {
        label,
        staleness: s,
        makespan: m.makespan,
        device_idle: m.device_idle,
        idle_reduction_pct: if bsp_idle == 0 {
            0.0
        } else {
            100.0 * (bsp_idle as f64 - m.device_idle as f64) / bsp_idle as f64
        },
        throughput: m.throughput,
        max_staleness: m.max_observed_staleness,
    };
    let bsp_cfg = SchedulerConfig {
        mode: SchedMode::Bsp,
        staleness: 0,
        ..base.clone()
    };
    let bsp = simulate(trace, &bsp_cfg)?.metrics;
    let mut rows = vec![row("bsp".into(), 0, &bsp, bsp.device_idle)];
    for &s in s_values {
        let cfg = SchedulerConfig {
            mode: SchedMode::Ssp,
            staleness: s,
            ..base.clone()
        };
        let m = simulate(trace, &cfg)?.metrics;
        rows.push(row(format!("ssp-s{s}"), s, &m, bsp.device_idle));
    }
    Ok(rows)
}
