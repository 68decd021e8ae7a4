use std::io::BufRead;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::mpsc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use skystack::bench::{self, BenchMatrix};
use skystack::dynamics::{VehicleKind, VehicleParams, PRESET_NAMES};
use skystack::firmware::Flavor;
use skystack::fleet::{FleetConfig, NetConfig, PeerSync, Role, Sensors, World};
use skystack::ground::{Console, MissionRunner};
use skystack::kernel::{serve_control_socket, RunConfig};
use skystack::netsim::udp::UdpTransport;

#[derive(Parser)]
#[command(name = "skystack", version, about = "Deterministic faster-than-real-time multi-vehicle flight simulation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fly a mission script (or just run the fleet) and exit 0 on success.
    Run(RunArgs),
    /// Interactive console over stdin/stdout.
    Console(ConsoleArgs),
    /// Throughput benchmark across flavors, instances, drones and sensors.
    Bench(BenchArgs),
    /// One benchmark instance; prints a JSON report.
    #[command(hide = true)]
    Instance(InstanceArgs),
    /// Print a vehicle parameter preset as TOML.
    Params { preset: String },
}

#[derive(Clone, Copy, ValueEnum)]
enum FlavorArg {
    A,
    B,
}

impl From<FlavorArg> for Flavor {
    fn from(f: FlavorArg) -> Flavor {
        match f {
            FlavorArg::A => Flavor::A,
            FlavorArg::B => Flavor::B,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RoleArg {
    Single,
    Authority,
    Remote,
}

#[derive(Args, Clone)]
struct FleetArgs {
    #[arg(long, default_value_t = 1)]
    drones: u16,
    #[arg(long, value_enum, default_value = "a")]
    flavor: FlavorArg,
    /// Preset name or parameter file; defaults to the flavor's multicopter.
    #[arg(long)]
    airframe: Option<String>,
    /// Use the flavor's VTOL airframe.
    #[arg(long, conflicts_with = "airframe")]
    vtol: bool,
    #[arg(long, default_value = "none")]
    sensors: Sensors,
    /// `ideal`, `air-preset`, or a TOML net config file.
    #[arg(long, default_value = "air-preset")]
    net: String,
    #[arg(long)]
    no_bridge: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    inference_budget_ms: f64,
}

impl FleetArgs {
    fn config(&self) -> anyhow::Result<FleetConfig> {
        let flavor: Flavor = self.flavor.into();
        let mut cfg = FleetConfig::new(self.drones, flavor);
        if let Some(a) = &self.airframe {
            cfg = cfg.with_airframe(a)?;
        } else if self.vtol {
            cfg = cfg.with_airframe(flavor.default_airframe(VehicleKind::QuadPlaneVtol))?;
        }
        cfg.sensors = self.sensors;
        cfg.net = NetConfig::resolve(&self.net)?;
        if self.no_bridge {
            cfg.net.bridge_enabled = false;
        }
        cfg.seed = self.seed;
        cfg.inference_budget_ms = self.inference_budget_ms;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Clone)]
struct ClockArgs {
    /// Physics timestep; must match the flavor (A: 4 ms, B: 2 ms).
    #[arg(long)]
    dt_ms: Option<f64>,
    #[arg(long, default_value_t = 15.0)]
    rtf_cap: f64,
    /// Upper bound on sim time; 0 runs until the mission ends.
    #[arg(long, default_value_t = 900.0)]
    duration_s: f64,
    #[arg(long)]
    paused: bool,
    /// Serve pause/resume/step/quit on this TCP address.
    #[arg(long)]
    control: Option<SocketAddr>,
}

impl ClockArgs {
    fn run_config(&self, cfg: &FleetConfig) -> anyhow::Result<RunConfig> {
        let dt_ns = match self.dt_ms {
            Some(ms) => (ms * 1e6).round() as u64,
            None => cfg.dt_ns(),
        };
        Ok(RunConfig {
            physics_dt_ns: dt_ns,
            rtf_cap: self.rtf_cap,
            duration_s: self.duration_s,
            seed: cfg.seed,
            paused_at_start: self.paused,
        })
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    fleet: FleetArgs,
    #[command(flatten)]
    clock: ClockArgs,
    #[arg(long)]
    mission: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "single")]
    role: RoleArg,
    /// Local UDP address for distributed roles.
    #[arg(long, default_value = "127.0.0.1:0")]
    bind: String,
    /// Authority address (remote role).
    #[arg(long)]
    peer: Option<String>,
    /// Binary flight log output.
    #[arg(long)]
    log: Option<PathBuf>,
    /// CSV export of the flight log.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// JSON mission report output.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ConsoleArgs {
    #[command(flatten)]
    fleet: FleetArgs,
    #[arg(long, default_value_t = 1.0)]
    rtf_cap: f64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "a,b")]
    flavors: String,
    #[arg(long, default_value = "1,2")]
    instances: String,
    #[arg(long, default_value = "1,2,4,6")]
    drones: String,
    /// Comma list of none, camera, lidar, both; or `all`.
    #[arg(long, default_value = "all")]
    sensors: String,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long, default_value_t = bench::BENCH_DURATION_S)]
    duration_s: f64,
    #[arg(long, default_value_t = bench::BENCH_RTF_CAP)]
    rtf_cap: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InstanceArgs {
    #[arg(long, value_enum, default_value = "a")]
    flavor: FlavorArg,
    #[arg(long, default_value_t = 1)]
    drones: u16,
    #[arg(long, default_value = "none")]
    sensors: Sensors,
    #[arg(long, default_value_t = bench::BENCH_DURATION_S)]
    duration_s: f64,
    #[arg(long, default_value_t = bench::BENCH_RTF_CAP)]
    rtf_cap: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn list<T>(s: &str, parse: impl Fn(&str) -> Option<T>) -> anyhow::Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| parse(t).with_context(|| format!("bad list item '{t}'")))
        .collect()
}

fn cmd_run(a: RunArgs) -> anyhow::Result<ExitCode> {
    let cfg = a.fleet.config()?;
    let run_cfg = a.clock.run_config(&cfg)?;
    let role = match a.role {
        RoleArg::Single => Role::Single,
        RoleArg::Authority => Role::Authority,
        RoleArg::Remote => Role::Remote,
    };
    let peer = a.peer.clone().or_else(|| cfg.net.peer.clone());
    let mut world = World::build(cfg, role)?;
    match role {
        Role::Single => {}
        Role::Authority => {
            let mut t = UdpTransport::bind(&a.bind)?;
            eprintln!("authority listening on {}", t.local_addr()?);
            let from = t.accept()?;
            eprintln!("remote joined from {from}");
            world.sync = Some(PeerSync::new(t, true));
        }
        Role::Remote => {
            let peer = peer.context("remote role needs --peer")?;
            let mut t = UdpTransport::bind(&a.bind)?;
            t.connect(&peer)?;
            world.sync = Some(PeerSync::new(t, false));
        }
    }
    if let Some(path) = &a.mission {
        if role == Role::Remote {
            bail!("the mission runs on the authority");
        }
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        world.set_mission(MissionRunner::from_script(&text)?);
    }
    let mut kernel = world.kernel()?;
    if let Some(addr) = a.clock.control {
        let (local, _) = serve_control_socket(addr, kernel.control())?;
        eprintln!("control socket on {local}");
    }
    let report = world.run(&mut kernel, &run_cfg)?;
    eprintln!(
        "ran {:.3} sim s in {:.3} wall s (rtf {:.2})",
        report.sim_seconds, report.wall_seconds, report.rtf
    );
    if let Some(p) = &a.log {
        world.log.save(p)?;
    }
    if let Some(p) = &a.csv {
        world.log.export_csv(p)?;
    }
    let Some(mission) = world.mission_report().cloned() else {
        if a.mission.is_some() && role != Role::Remote {
            eprintln!("mission did not finish within {} sim s", run_cfg.duration_s);
            return Ok(ExitCode::from(1));
        }
        return Ok(ExitCode::SUCCESS);
    };
    for s in &mission.steps {
        println!(
            "{:>4}  {:<40} {:>9.3} s  {}",
            s.line,
            s.text,
            s.finished_ns as f64 / 1e9,
            if s.ok { "ok" } else { "FAILED" }
        );
    }
    match &mission.failure {
        Some(f) => println!("mission FAILED: {f}"),
        None => println!("mission passed in {:.3} sim s", mission.finished_ns as f64 / 1e9),
    }
    if let Some(p) = &a.report {
        std::fs::write(p, serde_json::to_string_pretty(&mission)?)?;
    }
    Ok(ExitCode::from(mission.exit_code() as u8))
}

fn cmd_console(a: ConsoleArgs) -> anyhow::Result<ExitCode> {
    let cfg = a.fleet.config()?;
    let (in_tx, in_rx) = mpsc::channel();
    let (out_tx, out_rx) = mpsc::channel::<String>();
    std::thread::spawn(move || {
        let stdin = std::io::stdin();
        for line in stdin.lock().lines() {
            let Ok(line) = line else { break };
            if in_tx.send(line).is_err() {
                break;
            }
        }
    });
    let printer = std::thread::spawn(move || {
        for line in out_rx {
            println!("{line}");
        }
    });
    let mut world = World::build(cfg.clone(), Role::Single)?;
    world.set_console(Console::new(in_rx, out_tx));
    let mut kernel = world.kernel()?;
    let run = RunConfig {
        rtf_cap: a.rtf_cap,
        duration_s: 0.0,
        ..RunConfig::with_dt(cfg.dt_ns())
    };
    println!("{} drone(s), flavor {}; type help", cfg.drones, cfg.flavor);
    let result = world.run(&mut kernel, &run);
    drop(world);
    let _ = printer.join();
    result?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(a: BenchArgs) -> anyhow::Result<ExitCode> {
    let sensors = if a.sensors == "all" {
        Sensors::ALL.to_vec()
    } else {
        list(&a.sensors, |s| s.parse().ok())?
    };
    let m = BenchMatrix {
        flavors: list(&a.flavors, Flavor::parse)?,
        instances: list(&a.instances, |s| s.parse().ok().filter(|n| (1..=2).contains(n)))?,
        drones: list(&a.drones, |s| s.parse().ok().filter(|&n| n > 0))?,
        sensors,
        reps: a.reps.max(1),
        duration_s: a.duration_s,
        rtf_cap: a.rtf_cap,
        seed: a.seed,
    };
    let exe = bench::default_exe();
    let table = bench::run_benchmark(&exe, &m, |c| match c.mean() {
        Some(r) => eprintln!("{} {:.2}x", c.key, r),
        None => eprintln!("{} failed: {}", c.key, c.error.as_deref().unwrap_or("?")),
    });
    print!("{}", bench::format_table(&table));
    if let Some(out) = &a.out {
        bench::write_csv(&table, std::fs::File::create(out)?)?;
    }
    let trends = bench::verify_trends(&table);
    for v in &trends.violations {
        println!("trend violated: {v}");
    }
    println!(
        "trends: {} ({} comparisons)",
        if trends.passed() { "pass" } else { "FAIL" },
        trends.checked
    );
    let failed = table.cells.values().filter(|c| c.error.is_some()).count();
    if failed > 0 {
        println!("{failed} cell(s) failed to run");
    }
    Ok(if trends.passed() && failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_instance(a: InstanceArgs) -> anyhow::Result<ExitCode> {
    let key = bench::CellKey {
        flavor: a.flavor.into(),
        instances: 1,
        drones: a.drones,
        sensors: a.sensors,
    };
    let rep = bench::run_instance(bench::bench_fleet(&key, a.seed), a.rtf_cap, a.duration_s)?;
    println!("{}", serde_json::to_string(&rep)?);
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("SKYSTACK_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Console(a) => cmd_console(a),
        Cmd::Bench(a) => cmd_bench(a),
        Cmd::Instance(a) => cmd_instance(a),
        Cmd::Params { preset } => match VehicleParams::preset(&preset) {
            Ok(p) => {
                print!("{}", p.to_toml_string());
                Ok(ExitCode::SUCCESS)
            }
            Err(e) => Err(anyhow::anyhow!("{e}; presets: {}", PRESET_NAMES.join(", "))),
        },
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
