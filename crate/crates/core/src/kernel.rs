//! Lockstep simulation kernel: the single clock authority.
//!
//! The kernel owns simulated time, fires registered tasks in a fixed order on
//! every tick and paces the loop against the wall clock so the measured
//! real-time factor never exceeds the configured cap. Simulated content never
//! depends on pacing: the cap only inserts sleeps between ticks.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NANOS_PER_SEC: u64 = 1_000_000_000;
pub const DT_FLAVOR_A_NS: u64 = 4_000_000;
pub const DT_FLAVOR_B_NS: u64 = 2_000_000;

/// Nanoseconds since the simulation epoch.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_nanos(nanos: u64) -> Self {
        SimTime(nanos)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000_000)
    }

    pub fn from_secs_f64(secs: f64) -> Self {
        SimTime((secs * NANOS_PER_SEC as f64).round().max(0.0) as u64)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / NANOS_PER_SEC as f64
    }

    pub const fn plus_nanos(self, nanos: u64) -> Self {
        SimTime(self.0 + nanos)
    }

    pub fn saturating_sub(self, other: SimTime) -> u64 {
        self.0.saturating_sub(other.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}s", self.as_secs_f64())
    }
}

/// Payload of the `/clock` broadcast.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClockMsg {
    pub stamp: SimTime,
    pub tick: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskId(pub usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TickTask {
    pub id: TaskId,
    pub period_ns: u64,
    pub phase_ns: u64,
    pub owner: String,
}

impl TickTask {
    pub fn is_due(&self, now: SimTime) -> bool {
        let t = now.as_nanos();
        t >= self.phase_ns && (t - self.phase_ns).is_multiple_of(self.period_ns)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub physics_dt_ns: u64,
    pub rtf_cap: f64,
    pub duration_s: f64,
    pub seed: u64,
    pub paused_at_start: bool,
}

impl RunConfig {
    pub fn with_dt(physics_dt_ns: u64) -> Self {
        RunConfig {
            physics_dt_ns,
            rtf_cap: 15.0,
            duration_s: 250.0,
            seed: 0,
            paused_at_start: false,
        }
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if !(self.rtf_cap > 0.0) {
            return Err(KernelError::InvalidConfig(format!(
                "rtf_cap must be positive, got {}",
                self.rtf_cap
            )));
        }
        if self.physics_dt_ns == 0 {
            return Err(KernelError::InvalidConfig("physics_dt_ns must be positive".into()));
        }
        if !(self.duration_s >= 0.0) || !self.duration_s.is_finite() {
            return Err(KernelError::InvalidConfig(format!(
                "duration_s must be finite and non-negative, got {}",
                self.duration_s
            )));
        }
        Ok(())
    }

    /// Whole ticks covering `duration_s`.
    pub fn duration_ticks(&self) -> u64 {
        let total_ns = (self.duration_s * NANOS_PER_SEC as f64).round() as u64;
        total_ns / self.physics_dt_ns
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub sim_seconds: f64,
    pub wall_seconds: f64,
    pub rtf: f64,
    pub ticks: u64,
    pub per_task_overrun_count: BTreeMap<String, u64>,
}

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("period {period_ns} ns is not a positive multiple of the {dt_ns} ns timestep")]
    InvalidPeriod { period_ns: u64, dt_ns: u64 },
    #[error("phase {phase_ns} ns must be below the period {period_ns} ns and aligned to the timestep")]
    InvalidPhase { phase_ns: u64, period_ns: u64 },
    #[error("tasks cannot be registered once the kernel is running")]
    AlreadyRunning,
    #[error("kernel is paused")]
    Paused,
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error("task {owner}#{task} failed at {at}: {reason}")]
    TaskFailed {
        task: usize,
        owner: String,
        at: SimTime,
        reason: String,
    },
}

pub type TaskFn<W> = Box<dyn FnMut(&mut W, SimTime) -> anyhow::Result<()> + Send>;

/// Pause/resume/step/quit requests shared between the run loop and any
/// controller (control socket, console, tests).
#[derive(Debug, Clone, Default)]
pub struct KernelControl {
    inner: Arc<ControlState>,
}

#[derive(Debug, Default)]
struct ControlState {
    paused: AtomicBool,
    quit: AtomicBool,
    step_credits: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlCommand {
    Pause,
    Resume,
    Step(u64),
    Quit,
}

impl ControlCommand {
    pub fn parse(line: &str) -> Result<Self, String> {
        let mut words = line.split_whitespace();
        let cmd = words.next().ok_or_else(|| "empty command".to_string())?;
        let parsed = match cmd {
            "pause" => ControlCommand::Pause,
            "resume" => ControlCommand::Resume,
            "quit" => ControlCommand::Quit,
            "step" => {
                let n = match words.next() {
                    Some(n) => n.parse::<u64>().map_err(|e| format!("bad step count: {e}"))?,
                    None => 1,
                };
                ControlCommand::Step(n)
            }
            other => return Err(format!("unknown command `{other}`")),
        };
        if words.next().is_some() {
            return Err(format!("trailing arguments after `{cmd}`"));
        }
        Ok(parsed)
    }
}

impl KernelControl {
    pub fn new(paused: bool) -> Self {
        let ctl = KernelControl::default();
        ctl.inner.paused.store(paused, Ordering::SeqCst);
        ctl
    }

    pub fn apply(&self, cmd: ControlCommand) {
        match cmd {
            ControlCommand::Pause => self.inner.paused.store(true, Ordering::SeqCst),
            ControlCommand::Resume => self.inner.paused.store(false, Ordering::SeqCst),
            ControlCommand::Step(n) => {
                self.inner.step_credits.fetch_add(n, Ordering::SeqCst);
            }
            ControlCommand::Quit => self.inner.quit.store(true, Ordering::SeqCst),
        }
    }

    pub fn is_paused(&self) -> bool {
        self.inner.paused.load(Ordering::SeqCst)
    }

    pub fn quit_requested(&self) -> bool {
        self.inner.quit.load(Ordering::SeqCst)
    }

    fn take_step_credit(&self) -> bool {
        self.inner
            .step_credits
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |c| c.checked_sub(1))
            .is_ok()
    }
}

/// Serves newline-delimited `pause` / `resume` / `step N` / `quit` commands on a
/// local TCP socket. Each command is answered with `ok` or `error: ...`.
pub fn serve_control_socket(
    addr: SocketAddr,
    control: KernelControl,
) -> std::io::Result<(SocketAddr, JoinHandle<()>)> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let handle = thread::Builder::new()
        .name("kernel-control".into())
        .spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let Ok(mut writer) = stream.try_clone() else { continue };
                let reader = BufReader::new(stream);
                for line in reader.lines() {
                    let Ok(line) = line else { break };
                    if line.trim().is_empty() {
                        continue;
                    }
                    let reply = match ControlCommand::parse(&line) {
                        Ok(cmd) => {
                            control.apply(cmd);
                            "ok".to_string()
                        }
                        Err(e) => format!("error: {e}"),
                    };
                    if writeln!(writer, "{reply}").is_err() {
                        break;
                    }
                }
                if control.quit_requested() {
                    return;
                }
            }
        })?;
    Ok((local, handle))
}

struct Registered<W> {
    task: TickTask,
    run: TaskFn<W>,
}

pub struct Kernel<W> {
    dt_ns: u64,
    now: SimTime,
    ticks: u64,
    running: bool,
    tasks: Vec<Registered<W>>,
    clock_subscribers: Vec<Sender<ClockMsg>>,
    control: KernelControl,
    overruns: BTreeMap<String, u64>,
    measure_overruns: bool,
}

impl<W> Kernel<W> {
    pub fn new(dt_ns: u64) -> Self {
        assert!(dt_ns > 0, "timestep must be positive");
        Kernel {
            dt_ns,
            now: SimTime::ZERO,
            ticks: 0,
            running: false,
            tasks: Vec::new(),
            clock_subscribers: Vec::new(),
            control: KernelControl::default(),
            overruns: BTreeMap::new(),
            measure_overruns: false,
        }
    }

    pub fn dt_ns(&self) -> u64 {
        self.dt_ns
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn is_running(&self) -> bool {
        self.running
    }

    pub fn control(&self) -> KernelControl {
        self.control.clone()
    }

    pub fn set_control(&mut self, control: KernelControl) {
        self.control = control;
    }

    pub fn tasks(&self) -> impl Iterator<Item = &TickTask> {
        self.tasks.iter().map(|r| &r.task)
    }

    pub fn register_task(
        &mut self,
        period_ns: u64,
        phase_ns: u64,
        owner: impl Into<String>,
        run: impl FnMut(&mut W, SimTime) -> anyhow::Result<()> + Send + 'static,
    ) -> Result<TickTask, KernelError> {
        if self.running {
            return Err(KernelError::AlreadyRunning);
        }
        if period_ns == 0 || !period_ns.is_multiple_of(self.dt_ns) {
            return Err(KernelError::InvalidPeriod {
                period_ns,
                dt_ns: self.dt_ns,
            });
        }
        if phase_ns >= period_ns || !phase_ns.is_multiple_of(self.dt_ns) {
            return Err(KernelError::InvalidPhase {
                phase_ns,
                period_ns,
            });
        }
        let task = TickTask {
            id: TaskId(self.tasks.len()),
            period_ns,
            phase_ns,
            owner: owner.into(),
        };
        self.tasks.push(Registered {
            task: task.clone(),
            run: Box::new(run),
        });
        Ok(task)
    }

    /// Subscribes to the `/clock` topic. Every tick publishes one message.
    pub fn subscribe_clock(&mut self) -> Receiver<ClockMsg> {
        let (tx, rx) = mpsc::channel();
        self.clock_subscribers.push(tx);
        rx
    }

    pub fn start(&mut self) {
        self.running = true;
    }

    /// Advances one timestep and runs every task due at the new time in
    /// registration order. Fails with `Paused` while the kernel is paused.
    pub fn advance_tick(&mut self, world: &mut W) -> Result<SimTime, KernelError> {
        if self.control.is_paused() {
            return Err(KernelError::Paused);
        }
        self.tick_inner(world, None)
    }

    fn tick_inner(&mut self, world: &mut W, budget: Option<Duration>) -> Result<SimTime, KernelError> {
        self.running = true;
        self.now = self.now.plus_nanos(self.dt_ns);
        self.ticks += 1;
        let now = self.now;
        for reg in self.tasks.iter_mut() {
            if !reg.task.is_due(now) {
                continue;
            }
            let started = budget.map(|_| Instant::now());
            (reg.run)(world, now).map_err(|e| KernelError::TaskFailed {
                task: reg.task.id.0,
                owner: reg.task.owner.clone(),
                at: now,
                reason: format!("{e:#}"),
            })?;
            if let (Some(budget), Some(started)) = (budget, started) {
                if started.elapsed() > budget {
                    *self.overruns.entry(reg.task.owner.clone()).or_default() += 1;
                }
            }
        }
        let msg = ClockMsg {
            stamp: now,
            tick: self.ticks,
        };
        self.clock_subscribers.retain(|tx| tx.send(msg).is_ok());
        Ok(now)
    }

    /// Enables per-task overrun accounting: a task overruns when one call
    /// takes longer than the tick's real-time budget (dt / rtf_cap).
    pub fn set_overrun_accounting(&mut self, enabled: bool) {
        self.measure_overruns = enabled;
    }

    /// Runs for `config.duration_s` simulated seconds, paced by `rtf_cap`.
    pub fn run_ftrt(&mut self, world: &mut W, config: &RunConfig) -> Result<RunReport, KernelError> {
        let total = config.duration_ticks();
        let start_tick = self.ticks;
        self.run_paced(world, config, |_, k| k.ticks - start_tick >= total)
    }

    /// Runs until `stop` returns true (checked between ticks) or `quit` is
    /// requested, pacing against the wall clock by `rtf_cap`.
    pub fn run_paced(
        &mut self,
        world: &mut W,
        config: &RunConfig,
        mut stop: impl FnMut(&W, &Kernel<W>) -> bool,
    ) -> Result<RunReport, KernelError> {
        config.validate()?;
        if config.paused_at_start {
            self.control.apply(ControlCommand::Pause);
        }
        self.running = true;
        let start_ticks = self.ticks;
        let wall_start = Instant::now();
        let budget = if self.measure_overruns && config.rtf_cap.is_finite() {
            Some(Duration::from_secs_f64(
                self.dt_ns as f64 / NANOS_PER_SEC as f64 / config.rtf_cap,
            ))
        } else {
            None
        };
        let mut pacer = Pacer::new(config.rtf_cap, self.ticks, self.dt_ns);
        let mut was_paused = false;
        loop {
            if self.control.quit_requested() || stop(world, self) {
                break;
            }
            if self.control.is_paused() {
                if self.control.take_step_credit() {
                    self.tick_inner(world, budget)?;
                } else {
                    thread::sleep(Duration::from_millis(1));
                }
                was_paused = true;
                continue;
            }
            if was_paused {
                // resume: restart pacing so sim time is not bursted to catch up
                pacer = Pacer::new(config.rtf_cap, self.ticks, self.dt_ns);
                was_paused = false;
            }
            self.tick_inner(world, budget)?;
            pacer.throttle(self.ticks, false);
        }
        pacer.throttle(self.ticks, true);
        let ticks = self.ticks - start_ticks;
        let sim_seconds = (ticks * self.dt_ns) as f64 / NANOS_PER_SEC as f64;
        let wall_seconds = wall_start.elapsed().as_secs_f64();
        Ok(RunReport {
            sim_seconds,
            wall_seconds,
            rtf: if wall_seconds > 0.0 {
                sim_seconds / wall_seconds
            } else {
                f64::INFINITY
            },
            ticks,
            per_task_overrun_count: self.overruns.clone(),
        })
    }
}

/// Keeps simulated progress at or below `rtf_cap` times wall progress.
struct Pacer {
    rtf_cap: f64,
    origin_wall: Instant,
    origin_tick: u64,
    dt_ns: u64,
}

impl Pacer {
    const SLACK: Duration = Duration::from_millis(1);

    fn new(rtf_cap: f64, origin_tick: u64, dt_ns: u64) -> Self {
        Pacer {
            rtf_cap,
            origin_wall: Instant::now(),
            origin_tick,
            dt_ns,
        }
    }

    fn throttle(&mut self, tick: u64, exact: bool) {
        if !self.rtf_cap.is_finite() {
            return;
        }
        let sim_ns = (tick - self.origin_tick) * self.dt_ns;
        let target = self.origin_wall + Duration::from_secs_f64(sim_ns as f64 / 1e9 / self.rtf_cap);
        let now = Instant::now();
        if target > now {
            let ahead = target - now;
            if exact || ahead > Self::SLACK {
                thread::sleep(ahead);
            }
        }
    }
}
