//! Throughput benchmark: each cell launches one or two `skystack instance`
//! child processes, each flying the bench mission for a fixed sim duration
//! under the RTF cap, and sums their measured RTFs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use crate::firmware::Flavor;
use crate::fleet::{FleetConfig, NetConfig, Role, Sensors, World};
use crate::ground::MissionRunner;
use crate::kernel::RunConfig;

pub const BENCH_DURATION_S: f64 = 250.0;
pub const BENCH_RTF_CAP: f64 = 15.0;
/// Relative slack on the drone-count trend; capped cells sit on the cap and
/// differ only by timer noise.
pub const DRONE_TREND_SLACK: f64 = 0.02;
pub const SENSOR_TREND_SLACK: f64 = 0.05;

pub const BENCH_MISSION: &str = "takeoff 30\nwait\norbit 0 0 30 50 5\nwait\nsleep 100000\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub flavor: Flavor,
    pub drones: u16,
    pub sensors: Sensors,
    pub sim_seconds: f64,
    pub wall_seconds: f64,
    pub rtf: f64,
    pub ticks: u64,
}

/// Flies the bench mission in this process for exactly `duration_s`.
pub fn run_instance(cfg: FleetConfig, rtf_cap: f64, duration_s: f64) -> anyhow::Result<InstanceReport> {
    let (flavor, drones, sensors) = (cfg.flavor, cfg.drones, cfg.sensors);
    let mut world = World::build(cfg, Role::Single)?;
    world.set_mission(MissionRunner::from_script(BENCH_MISSION)?);
    let mut kernel = world.kernel()?;
    let run = RunConfig {
        rtf_cap,
        duration_s,
        ..RunConfig::with_dt(world.dt_ns)
    };
    let r = world.run(&mut kernel, &run)?;
    if let Some(rep) = world.mission_report() {
        anyhow::bail!("bench mission ended early: {:?}", rep.failure);
    }
    Ok(InstanceReport {
        flavor,
        drones,
        sensors,
        sim_seconds: r.sim_seconds,
        wall_seconds: r.wall_seconds,
        rtf: r.rtf,
        ticks: r.ticks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub flavor: Flavor,
    pub instances: u8,
    pub drones: u16,
    pub sensors: Sensors,
}

impl std::fmt::Display for CellKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "({}, {} inst, {} drones, {})",
            self.flavor.to_string().to_uppercase(),
            self.instances,
            self.drones,
            self.sensors
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub key: CellKey,
    /// Aggregate RTF of each repetition.
    pub runs: Vec<f64>,
    pub error: Option<String>,
}

impl BenchCell {
    pub fn mean(&self) -> Option<f64> {
        if self.error.is_some() || self.runs.is_empty() {
            return None;
        }
        Some(self.runs.iter().sum::<f64>() / self.runs.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchMatrix {
    pub flavors: Vec<Flavor>,
    pub instances: Vec<u8>,
    pub drones: Vec<u16>,
    pub sensors: Vec<Sensors>,
    pub reps: usize,
    pub duration_s: f64,
    pub rtf_cap: f64,
    pub seed: u64,
}

impl Default for BenchMatrix {
    fn default() -> Self {
        BenchMatrix {
            flavors: vec![Flavor::A, Flavor::B],
            instances: vec![1, 2],
            drones: vec![1, 2, 4, 6],
            sensors: Sensors::ALL.to_vec(),
            reps: 3,
            duration_s: BENCH_DURATION_S,
            rtf_cap: BENCH_RTF_CAP,
            seed: 0,
        }
    }
}

impl BenchMatrix {
    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for &flavor in &self.flavors {
            for &instances in &self.instances {
                for &drones in &self.drones {
                    for &sensors in &self.sensors {
                        out.push(CellKey {
                            flavor,
                            instances,
                            drones,
                            sensors,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchTable {
    pub cells: BTreeMap<CellKey, BenchCell>,
}

impl BenchTable {
    pub fn insert(&mut self, cell: BenchCell) {
        self.cells.insert(cell.key, cell);
    }

    pub fn rtf(&self, key: &CellKey) -> Option<f64> {
        self.cells.get(key).and_then(BenchCell::mean)
    }
}

fn instance_command(exe: &Path, key: &CellKey, m: &BenchMatrix, seed: u64) -> Command {
    let mut c = Command::new(exe);
    c.arg("instance")
        .args(["--flavor", &key.flavor.to_string()])
        .args(["--drones", &key.drones.to_string()])
        .args(["--sensors", &key.sensors.to_string()])
        .args(["--duration-s", &m.duration_s.to_string()])
        .args(["--rtf-cap", &m.rtf_cap.to_string()])
        .args(["--seed", &seed.to_string()])
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::null());
    c
}

/// Runs one repetition of a cell: all instances start together and the
/// cell's RTF is the sum of theirs.
pub fn run_cell_once(exe: &Path, key: &CellKey, m: &BenchMatrix, rep: usize) -> Result<f64, String> {
    let mut children = Vec::new();
    for i in 0..key.instances {
        let seed = m.seed + rep as u64 * 16 + i as u64;
        let child = instance_command(exe, key, m, seed)
            .spawn()
            .map_err(|e| format!("spawning {}: {e}", exe.display()))?;
        children.push(child);
    }
    let mut total = 0.0;
    for child in children {
        let out = child.wait_with_output().map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("instance exited with {}", out.status));
        }
        let text = String::from_utf8_lossy(&out.stdout);
        let line = text.lines().last().unwrap_or_default();
        let rep: InstanceReport =
            serde_json::from_str(line).map_err(|e| format!("bad instance report '{line}': {e}"))?;
        if rep.sim_seconds != m.duration_s {
            return Err(format!("instance advanced {} s instead of {} s", rep.sim_seconds, m.duration_s));
        }
        total += rep.rtf;
    }
    Ok(total)
}

/// Runs every cell sequentially; a failing cell is recorded and the
/// harness moves on.
pub fn run_benchmark(exe: &Path, m: &BenchMatrix, mut progress: impl FnMut(&BenchCell)) -> BenchTable {
    let mut table = BenchTable::default();
    for key in m.cells() {
        let mut cell = BenchCell {
            key,
            runs: Vec::new(),
            error: None,
        };
        for rep in 0..m.reps {
            match run_cell_once(exe, &key, m, rep) {
                Ok(rtf) => cell.runs.push(rtf),
                Err(e) => {
                    cell.error = Some(e);
                    break;
                }
            }
        }
        progress(&cell);
        table.insert(cell);
    }
    table
}

/// Rows are (flavor, instances, drones); columns are sensor loads.
pub fn format_table(t: &BenchTable) -> String {
    let mut rows: BTreeMap<(Flavor, u8, u16), BTreeMap<Sensors, String>> = BTreeMap::new();
    for (k, c) in &t.cells {
        let v = match c.mean() {
            Some(r) => format!("{r:.2}x"),
            None => "failed".to_string(),
        };
        rows.entry((k.flavor, k.instances, k.drones)).or_default().insert(k.sensors, v);
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<7} {:<9} {:<7} {:>10} {:>10} {:>10} {:>10}",
        "flavor", "instances", "drones", "neither", "camera", "lidar", "both"
    );
    for ((f, i, d), cols) in rows {
        let get = |s: Sensors| cols.get(&s).cloned().unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:<7} {:<9} {:<7} {:>10} {:>10} {:>10} {:>10}",
            f.to_string().to_uppercase(),
            i,
            d,
            get(Sensors::None),
            get(Sensors::Camera),
            get(Sensors::Lidar),
            get(Sensors::Both)
        );
    }
    out
}

pub fn write_csv(t: &BenchTable, w: impl Write) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["flavor", "instances", "drones", "sensors", "reps", "mean_rtf", "runs", "error"])?;
    for (k, c) in &t.cells {
        let runs: Vec<String> = c.runs.iter().map(|r| format!("{r:.4}")).collect();
        out.write_record([
            k.flavor.to_string(),
            k.instances.to_string(),
            k.drones.to_string(),
            k.sensors.to_string(),
            c.runs.len().to_string(),
            c.mean().map(|m| format!("{m:.4}")).unwrap_or_default(),
            runs.join(";"),
            c.error.clone().unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: String,
    pub better: CellKey,
    pub worse: CellKey,
    pub rtf_better: f64,
    pub rtf_worse: f64,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: {} at {:.2}x exceeds {} at {:.2}x",
            self.rule, self.worse, self.rtf_worse, self.better, self.rtf_better
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub checked: usize,
    pub violations: Vec<Violation>,
}

impl TrendReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// RTF must not rise with drone count, and both sensors must not beat no
/// sensors. Failed cells are skipped.
pub fn verify_trends(t: &BenchTable) -> TrendReport {
    let mut rep = TrendReport::default();
    let mut check = |rule: &str, better: CellKey, worse: CellKey, slack: f64| {
        let (Some(a), Some(b)) = (t.rtf(&better), t.rtf(&worse)) else {
            return;
        };
        rep.checked += 1;
        if b > a * (1.0 + slack) {
            rep.violations.push(Violation {
                rule: rule.to_string(),
                better,
                worse,
                rtf_better: a,
                rtf_worse: b,
            });
        }
    };
    let keys: Vec<CellKey> = t.cells.keys().copied().collect();
    for k in &keys {
        let next = keys
            .iter()
            .filter(|o| o.flavor == k.flavor && o.instances == k.instances && o.sensors == k.sensors && o.drones > k.drones)
            .min_by_key(|o| o.drones);
        if let Some(n) = next {
            check("rtf rises with drone count", *k, *n, DRONE_TREND_SLACK);
        }
        if k.sensors == Sensors::None {
            let both = CellKey {
                sensors: Sensors::Both,
                ..*k
            };
            if t.cells.contains_key(&both) {
                check("both sensors faster than neither", *k, both, SENSOR_TREND_SLACK);
            }
        }
    }
    rep
}

/// The lowest single-instance cell of a flavor.
pub fn slowest_cell(t: &BenchTable, flavor: Flavor) -> Option<(CellKey, f64)> {
    t.cells
        .iter()
        .filter(|(k, _)| k.flavor == flavor && k.instances == 1)
        .filter_map(|(k, c)| c.mean().map(|m| (*k, m)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

pub fn default_exe() -> PathBuf {
    std::env::current_exe().unwrap_or_else(|_| PathBuf::from("skystack"))
}

pub fn bench_fleet(key: &CellKey, seed: u64) -> FleetConfig {
    let mut cfg = FleetConfig::new(key.drones, key.flavor);
    cfg.sensors = key.sensors;
    cfg.seed = seed;
    cfg.net = NetConfig::air_preset();
    cfg
}
