//! Fleet assembly: builds the network topology, the per-vehicle stacks and
//! the ground segment, and registers them with the kernel in pipeline order.
//!
//! Each vehicle gets its own SIM subnet; ground-side nodes live on SIM_0;
//! every radio-capable node also sits on the shared AIR subnet.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{bail, Context};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::action::{ActionServer, ClientEvent, Response};
use crate::companion::Companion;
use crate::dynamics::{self, ActuatorCommand, NoiseConfig, RigidBodyState, TruthSampler, VehicleKind, VehicleParams};
use crate::firmware::messages::{topics as fw_topics, Telemetry};
use crate::firmware::{Autopilot, ControllerGains, Flavor, FlavorConfig, FirmwareNode};
use crate::flightlog::{FlightLog, LogPayload};
use crate::ground::{Console, GroundStation, MissionRunner};
use crate::kernel::{Kernel, RunConfig, RunReport, SimTime};
use crate::netsim::payload::{decode, encode};
use crate::netsim::udp::UdpTransport;
use crate::netsim::{
    default_rules, BridgeEndpoint, BridgeRule, DomainId, LinkSpec, Network, NodeId, NodeSpec, BRIDGE_DOMAIN,
    GROUND_DOMAIN, TELEMETRY_DOMAIN, TELEMETRY_TOPIC,
};
use crate::perception::{topics, CameraModel, CameraPose, LidarModel, WorldModel};
use crate::rng::SeedTree;

pub const GROUND_NODE: NodeId = NodeId(1);
pub const MONITOR_NODE: NodeId = NodeId(2);
pub const GROUND_BRIDGE_NODE: NodeId = NodeId(4);
pub const STATE_LOG_PERIOD_NS: u64 = 100_000_000;
pub const NET_LOG_PERIOD_NS: u64 = 1_000_000_000;

pub fn autopilot_node(v: u16) -> NodeId {
    NodeId(0x100 + v)
}
pub fn companion_node(v: u16) -> NodeId {
    NodeId(0x200 + v)
}
pub fn bridge_node(v: u16) -> NodeId {
    NodeId(0x300 + v)
}
pub fn router_node(v: u16) -> NodeId {
    NodeId(0x400 + v)
}
pub fn sensor_node(v: u16) -> NodeId {
    NodeId(0x500 + v)
}

pub fn home(v: u16) -> Vector3<f64> {
    Vector3::new(0.0, 5.0 * (v as f64 - 1.0), 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sensors {
    None,
    Camera,
    Lidar,
    Both,
}

impl Sensors {
    pub const ALL: [Sensors; 4] = [Sensors::None, Sensors::Camera, Sensors::Lidar, Sensors::Both];

    pub fn camera(self) -> bool {
        matches!(self, Sensors::Camera | Sensors::Both)
    }

    pub fn lidar(self) -> bool {
        matches!(self, Sensors::Lidar | Sensors::Both)
    }
}

impl FromStr for Sensors {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Sensors::None),
            "camera" => Ok(Sensors::Camera),
            "lidar" => Ok(Sensors::Lidar),
            "both" => Ok(Sensors::Both),
            other => Err(format!("unknown sensor set '{other}' (none, camera, lidar, both)")),
        }
    }
}

impl fmt::Display for Sensors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Sensors::None => "none",
            Sensors::Camera => "camera",
            Sensors::Lidar => "lidar",
            Sensors::Both => "both",
        };
        f.write_str(s)
    }
}

fn yes() -> bool {
    true
}

/// Link presets and bridge rules; loadable from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    #[serde(default = "LinkSpec::sim_subnet")]
    pub sim: LinkSpec,
    #[serde(default = "LinkSpec::air_subnet")]
    pub air: LinkSpec,
    #[serde(default = "yes")]
    pub bridge_enabled: bool,
    #[serde(default = "default_rules")]
    pub rules: Vec<BridgeRule>,
    /// Authority address for distributed runs.
    #[serde(default)]
    pub peer: Option<String>,
}

impl NetConfig {
    pub fn air_preset() -> Self {
        NetConfig {
            sim: LinkSpec::sim_subnet(),
            air: LinkSpec::air_subnet(),
            bridge_enabled: true,
            rules: default_rules(),
            peer: None,
        }
    }

    /// No loss, jitter or bandwidth limit anywhere.
    pub fn ideal() -> Self {
        NetConfig {
            air: LinkSpec::sim_subnet(),
            ..Self::air_preset()
        }
    }

    /// `ideal`, `air-preset`, or a path to a TOML file.
    pub fn resolve(name: &str) -> anyhow::Result<Self> {
        match name {
            "ideal" => Ok(Self::ideal()),
            "air-preset" | "air" => Ok(Self::air_preset()),
            path => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading net config {path}"))?;
                let cfg: NetConfig = toml::from_str(&text).with_context(|| format!("parsing net config {path}"))?;
                cfg.sim.validate().map_err(anyhow::Error::msg)?;
                cfg.air.validate().map_err(anyhow::Error::msg)?;
                Ok(cfg)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetConfig {
    pub drones: u16,
    pub flavor: Flavor,
    pub params: VehicleParams,
    pub sensors: Sensors,
    pub net: NetConfig,
    pub seed: u64,
    pub noise: NoiseConfig,
    pub inference_budget_ms: f64,
}

impl FleetConfig {
    /// Multicopter fleet on the flavor's default airframe over the AIR preset.
    pub fn new(drones: u16, flavor: Flavor) -> Self {
        let params = VehicleParams::preset(flavor.default_airframe(VehicleKind::Multicopter)).expect("shipped preset");
        FleetConfig {
            drones,
            flavor,
            params,
            sensors: Sensors::None,
            net: NetConfig::air_preset(),
            seed: 0,
            noise: NoiseConfig::default(),
            inference_budget_ms: 0.0,
        }
    }

    /// Accepts a preset name or a parameter file path.
    pub fn with_airframe(mut self, airframe: &str) -> anyhow::Result<Self> {
        self.params = match VehicleParams::preset(airframe) {
            Ok(p) => p,
            Err(_) if Path::new(airframe).exists() => VehicleParams::load(Path::new(airframe))?,
            Err(e) => return Err(e.into()),
        };
        Ok(self)
    }

    pub fn dt_ns(&self) -> u64 {
        FlavorConfig::new(self.flavor).control_dt_ns
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.drones == 0 || self.drones > 64 {
            bail!("drone count must lie in 1..=64, got {}", self.drones);
        }
        self.params.validate()?;
        if !(self.inference_budget_ms >= 0.0) {
            bail!("inference budget must be non-negative");
        }
        Ok(())
    }
}

/// Which side of a distributed run this process is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    /// Everything in one process.
    Single,
    /// Clock authority: vehicles, sensors, routers and the ground segment.
    Authority,
    /// Companions and their bridge endpoints.
    Remote,
}

impl Role {
    fn hosts_companion_side(self) -> bool {
        matches!(self, Role::Single | Role::Remote)
    }

    fn hosts_sim_side(self) -> bool {
        matches!(self, Role::Single | Role::Authority)
    }
}

pub struct Vehicle {
    pub id: u16,
    pub params: VehicleParams,
    pub state: RigidBodyState,
    pub cmd: ActuatorCommand,
    pub firmware: FirmwareNode,
    sampler: TruthSampler,
}

/// Telemetry viewer standing in for a ground control station.
#[derive(Debug, Default)]
pub struct Monitor {
    pub received: u64,
    pub latest: BTreeMap<u16, Telemetry>,
}

/// Tick barrier with the peer process.
pub struct PeerSync {
    transport: UdpTransport,
    authority: bool,
}

impl PeerSync {
    pub fn new(transport: UdpTransport, authority: bool) -> Self {
        PeerSync { transport, authority }
    }

    fn exchange(&mut self, net: &mut Network, tick: u64, flag: bool) -> anyhow::Result<bool> {
        let out = net.take_remote_outbox();
        self.transport.close_tick(tick, out, self.authority, flag)?;
        let (deliveries, barrier) = self.transport.await_tick(tick, self.authority)?;
        for d in deliveries {
            net.inject_remote(d);
        }
        Ok(barrier.flag)
    }

    pub fn bye(&mut self) {
        let _ = self.transport.bye();
    }
}

pub struct World {
    pub cfg: FleetConfig,
    pub role: Role,
    pub dt_ns: u64,
    pub net: Network,
    pub scene: Arc<WorldModel>,
    pub camera: CameraModel,
    pub lidar: LidarModel,
    pub vehicles: Vec<Vehicle>,
    pub companions: Vec<Companion>,
    pub bridges: Vec<BridgeEndpoint>,
    pub routers: Vec<crate::netsim::TelemetryRouter>,
    pub ground: Option<GroundStation>,
    pub monitor: Option<Monitor>,
    pub log: FlightLog,
    pub sync: Option<PeerSync>,
    pub stop_at: Option<SimTime>,
    pub stop: bool,
}

fn net_err(e: crate::netsim::NetError) -> anyhow::Error {
    anyhow::Error::new(e)
}

impl World {
    pub fn build(cfg: FleetConfig, role: Role) -> anyhow::Result<Self> {
        cfg.validate()?;
        let seeds = SeedTree::new(cfg.seed);
        let flavor_cfg = FlavorConfig::new(cfg.flavor);
        let mut net = Network::new(seeds);
        let n = cfg.drones;
        let mut sims = Vec::new();
        for i in 0..=n {
            sims.push(net.add_subnet(format!("SIM_{i}"), cfg.net.sim.clone()).map_err(net_err)?);
        }
        let air = net.add_subnet("AIR", cfg.net.air.clone()).map_err(net_err)?;
        let scene = Arc::new(WorldModel::city());
        let camera = CameraModel {
            inference_budget_ms: cfg.inference_budget_ms,
            ..CameraModel::default()
        };
        let lidar = LidarModel::default();
        let vehicles_ids: Vec<u16> = (1..=n).collect();

        let ground = GroundStation::new(GROUND_NODE, GROUND_DOMAIN, &vehicles_ids);
        let mut spec = NodeSpec::new(GROUND_NODE, "ground")
            .domain(GROUND_DOMAIN)
            .domain(TELEMETRY_DOMAIN)
            .subnet(sims[0])
            .subnet(air);
        for s in ground.subscriptions() {
            spec = spec.subscribe(&s);
        }
        net.add_node(spec).map_err(net_err)?;
        net.add_node(
            NodeSpec::new(MONITOR_NODE, "monitor")
                .domain(TELEMETRY_DOMAIN)
                .subnet(sims[0])
                .subnet(air)
                .subscribe(TELEMETRY_TOPIC),
        )
        .map_err(net_err)?;

        let mut bridges = Vec::new();
        let add_bridge = |net: &mut Network, node: NodeId, name: String, domain: DomainId, sim| {
            let mut ep = BridgeEndpoint::new(node, domain, cfg.net.rules.clone());
            ep.enabled = cfg.net.bridge_enabled;
            let mut spec = NodeSpec::new(node, name).domain(domain).domain(BRIDGE_DOMAIN).subnet(sim).subnet(air);
            let mut patterns = ep.local_patterns();
            patterns.extend(cfg.net.rules.iter().map(|r| r.pattern.0.clone()));
            patterns.sort();
            patterns.dedup();
            for p in &patterns {
                spec = spec.subscribe(p);
            }
            net.add_node(spec).map_err(net_err)?;
            Ok::<_, anyhow::Error>(ep)
        };
        let ground_bridge = add_bridge(&mut net, GROUND_BRIDGE_NODE, "bridge_ground".into(), GROUND_DOMAIN, sims[0])?;

        let mut vehicles = Vec::new();
        let mut companions = Vec::new();
        let mut routers = Vec::new();
        let mut vehicle_bridges = Vec::new();
        for v in 1..=n {
            let domain = DomainId(v);
            let sim = sims[v as usize];
            let mut spec = NodeSpec::new(autopilot_node(v), format!("autopilot_{v}"))
                .domain(domain)
                .domain(TELEMETRY_DOMAIN)
                .subnet(sim);
            for s in FirmwareNode::subscriptions(cfg.flavor) {
                spec = spec.subscribe(s);
            }
            net.add_node(spec).map_err(net_err)?;

            let server = ActionServer::new(v, companion_node(v), domain, cfg.params.clone(), &flavor_cfg);
            let mut comp = Companion::new(server, scene.clone());
            if cfg.sensors.camera() {
                comp = comp.with_camera(camera, seeds.stream("camera", v));
            }
            if cfg.sensors.lidar() {
                comp = comp.with_lidar(lidar);
            }
            let mut spec = NodeSpec::new(companion_node(v), format!("companion_{v}")).domain(domain).subnet(sim);
            for s in comp.subscriptions() {
                spec = spec.subscribe(&s);
            }
            net.add_node(spec).map_err(net_err)?;

            vehicle_bridges.push(add_bridge(&mut net, bridge_node(v), format!("bridge_{v}"), domain, sim)?);

            net.add_node(
                NodeSpec::new(router_node(v), format!("router_{v}"))
                    .domain(TELEMETRY_DOMAIN)
                    .subnet(sim)
                    .subnet(air)
                    .subscribe(fw_topics::TELEMETRY_RAW),
            )
            .map_err(net_err)?;
            net.add_node(NodeSpec::new(sensor_node(v), format!("sensors_{v}")).domain(domain).subnet(sim))
                .map_err(net_err)?;

            if role.hosts_sim_side() {
                let gains = ControllerGains::for_airframe(&cfg.params);
                let ap = Autopilot::new(cfg.params.clone(), gains, flavor_cfg.clone(), home(v));
                vehicles.push(Vehicle {
                    id: v,
                    params: cfg.params.clone(),
                    state: RigidBodyState::at_rest(home(v)),
                    cmd: ActuatorCommand::idle(),
                    firmware: FirmwareNode::new(v, autopilot_node(v), domain, Some(router_node(v)), ap),
                    sampler: TruthSampler::new(cfg.noise, seeds.stream("truth", v)),
                });
                routers.push(crate::netsim::TelemetryRouter::new(router_node(v), vec![GROUND_NODE, MONITOR_NODE]));
            }
            if role.hosts_companion_side() {
                companions.push(comp);
            }
        }

        let (ground, monitor) = if role.hosts_sim_side() {
            bridges.push(ground_bridge);
            (Some(ground), Some(Monitor::default()))
        } else {
            (None, None)
        };
        if role.hosts_companion_side() {
            bridges.extend(vehicle_bridges);
        }

        let ids: Vec<NodeId> = net.nodes().map(|n| n.id).collect();
        for id in ids {
            let companion_side = (0x200..0x400).contains(&id.0);
            let local = match role {
                Role::Single => true,
                Role::Authority => !companion_side,
                Role::Remote => companion_side,
            };
            net.set_local(id, local);
        }

        Ok(World {
            dt_ns: flavor_cfg.control_dt_ns,
            cfg,
            role,
            net,
            scene,
            camera,
            lidar,
            vehicles,
            companions,
            bridges,
            routers,
            ground,
            monitor,
            log: FlightLog::new(),
            sync: None,
            stop_at: None,
            stop: false,
        })
    }

    pub fn set_mission(&mut self, mission: MissionRunner) {
        if let Some(g) = self.ground.as_mut() {
            g.mission = Some(mission);
        }
    }

    pub fn set_console(&mut self, console: Console) {
        if let Some(g) = self.ground.as_mut() {
            g.console = Some(console);
        }
    }

    pub fn mission_report(&self) -> Option<&crate::ground::MissionReport> {
        self.ground.as_ref()?.mission.as_ref()?.report()
    }

    pub fn final_states(&self) -> Vec<(u16, RigidBodyState)> {
        self.vehicles.iter().map(|v| (v.id, v.state)).collect()
    }

    /// A kernel with every hosted component registered in pipeline order.
    pub fn kernel(&self) -> anyhow::Result<Kernel<World>> {
        let dt = self.dt_ns;
        let mut k: Kernel<World> = Kernel::new(dt);
        k.register_task(dt, 0, "net", |w, now| {
            w.net.drain(now);
            Ok(())
        })?;
        for idx in 0..self.vehicles.len() {
            let owner = format!("vehicle_{}", self.vehicles[idx].id);
            k.register_task(dt, 0, owner, move |w, now| w.step_vehicle(idx, now))?;
        }
        if self.role.hosts_sim_side() {
            if self.cfg.sensors.camera() {
                k.register_task(self.camera.period_ns, 0, "camera", |w, now| w.publish_camera(now))?;
            }
            if self.cfg.sensors.lidar() {
                k.register_task(self.lidar.period_ns, 0, "lidar", |w, now| w.publish_lidar(now))?;
            }
        }
        for idx in 0..self.companions.len() {
            let owner = format!("companion_{}", self.companions[idx].vehicle);
            k.register_task(dt, 0, owner, move |w, now| {
                w.companions[idx].step(&mut w.net, now).map_err(net_err)
            })?;
        }
        if !self.bridges.is_empty() {
            k.register_task(dt, 0, "bridges", |w, now| {
                for b in w.bridges.iter_mut() {
                    b.step(&mut w.net, now).map_err(net_err)?;
                }
                Ok(())
            })?;
        }
        if !self.routers.is_empty() {
            k.register_task(dt, 0, "routers", |w, now| {
                for r in w.routers.iter_mut() {
                    r.step(&mut w.net, now).map_err(net_err)?;
                }
                Ok(())
            })?;
        }
        if self.ground.is_some() {
            k.register_task(dt, 0, "ground", |w, now| {
                let g = w.ground.as_mut().expect("ground hosted");
                g.step(&mut w.net, now).map_err(net_err)
            })?;
            k.register_task(dt, 0, "monitor", |w, _| {
                let m = w.monitor.as_mut().expect("monitor hosted");
                for env in w.net.take_inbox(MONITOR_NODE) {
                    if let Some(t) = decode::<Telemetry>(env.body()) {
                        m.received += 1;
                        m.latest.insert(t.vehicle, t);
                    }
                }
                Ok(())
            })?;
            k.register_task(dt, 0, "log", |w, now| {
                w.log_tick(now);
                Ok(())
            })?;
        }
        k.register_task(dt, 0, "supervisor", |w, now| w.supervise(now))?;
        Ok(k)
    }

    fn step_vehicle(&mut self, idx: usize, now: SimTime) -> anyhow::Result<()> {
        let dt = self.dt_ns as f64 * 1e-9;
        let v = &mut self.vehicles[idx];
        let before = v.firmware.autopilot.mode();
        let est = v.sampler.estimate(&v.state);
        v.cmd = v.firmware.step(&mut self.net, now, &est).map_err(net_err)?;
        v.state = dynamics::step(&v.state, &v.cmd, &v.params, dt)
            .with_context(|| format!("vehicle {} dynamics", v.id))?;
        let after = v.firmware.autopilot.mode();
        if after != before {
            self.log.push(now, v.id, LogPayload::Mode { from: before, to: after });
        }
        Ok(())
    }

    fn publish_camera(&mut self, now: SimTime) -> anyhow::Result<()> {
        for v in &self.vehicles {
            let pose = CameraPose {
                stamp_ns: now.as_nanos(),
                position: v.state.position,
                attitude: v.state.attitude,
            };
            self.net
                .publish(sensor_node(v.id), DomainId(v.id), topics::CAMERA_FRAME, encode(&pose), now)
                .map_err(net_err)?;
        }
        Ok(())
    }

    fn publish_lidar(&mut self, now: SimTime) -> anyhow::Result<()> {
        for v in &self.vehicles {
            let scan = self.lidar.scan(now.as_nanos(), &v.state.position, &v.state.attitude, &self.scene);
            let packed = self.lidar.pack(&scan);
            self.net
                .publish(sensor_node(v.id), DomainId(v.id), topics::LIDAR_POINTS, encode(&packed), now)
                .map_err(net_err)?;
        }
        Ok(())
    }

    fn log_tick(&mut self, now: SimTime) {
        if let Some(g) = self.ground.as_mut() {
            for (at, ev) in g.events.drain(..) {
                let (vehicle, text) = describe(&ev);
                self.log.push(at, vehicle, LogPayload::ActionEvent { text });
            }
        }
        if now.as_nanos().is_multiple_of(STATE_LOG_PERIOD_NS) {
            for v in &self.vehicles {
                let s = &v.state;
                let q = s.attitude.quaternion();
                self.log.push(
                    now,
                    v.id,
                    LogPayload::State {
                        position: s.position.into(),
                        velocity: s.velocity.into(),
                        attitude: [q.w, q.i, q.j, q.k],
                    },
                );
            }
        }
        if now.as_nanos().is_multiple_of(NET_LOG_PERIOD_NS) {
            self.log.push(now, 0, LogPayload::NetStats(self.net.stats().clone()));
        }
    }

    fn supervise(&mut self, now: SimTime) -> anyhow::Result<()> {
        let mut stop = self.stop_at.is_some_and(|t| now >= t);
        if let Some(g) = &self.ground {
            stop |= g.mission_finished();
            stop |= g.console.as_ref().is_some_and(|c| c.quit);
        }
        if let Some(sync) = self.sync.as_mut() {
            let tick = now.as_nanos() / self.dt_ns;
            let peer_flag = sync.exchange(&mut self.net, tick, stop)?;
            if self.role == Role::Remote {
                stop = peer_flag;
            }
        }
        self.stop = stop;
        Ok(())
    }

    /// Runs until the mission finishes, the console quits, the peer says
    /// stop, or `duration_s` of sim time elapses (0 means no limit).
    pub fn run(&mut self, kernel: &mut Kernel<World>, run: &RunConfig) -> anyhow::Result<RunReport> {
        if run.physics_dt_ns != self.dt_ns {
            bail!(
                "flavor {} runs at a {} ms timestep, got {} ms",
                self.cfg.flavor,
                self.dt_ns as f64 / 1e6,
                run.physics_dt_ns as f64 / 1e6
            );
        }
        if run.duration_s > 0.0 && self.role != Role::Remote {
            let ticks = run.duration_ticks();
            self.stop_at = Some(kernel.now().plus_nanos(ticks * self.dt_ns));
        }
        let report = kernel.run_paced(self, run, |w, _| w.stop)?;
        if let Some(s) = self.sync.as_mut() {
            s.bye();
        }
        Ok(report)
    }
}

pub fn describe(ev: &ClientEvent) -> (u16, String) {
    match ev {
        ClientEvent::Response { handle, response } => {
            let text = match response {
                Response::Accepted { goal_id } => format!("accepted goal {goal_id}"),
                Response::Rejected { reason } => format!("rejected: {reason}"),
                Response::Canceled { goal_id } => format!("canceled goal {goal_id}"),
                Response::NotActive => "cancel: not active".to_string(),
                Response::Reposition { accepted, reason } => {
                    if *accepted {
                        "reposition accepted".to_string()
                    } else {
                        format!("reposition rejected: {reason}")
                    }
                }
            };
            (handle.vehicle, text)
        }
        ClientEvent::Feedback { handle, feedback } => {
            let mut text = format!(
                "feedback goal {} {} alt {:.3}",
                feedback.goal_id, feedback.mode, feedback.altitude_m
            );
            if let Some(r) = feedback.radius_m {
                text.push_str(&format!(" radius {r:.3}"));
            }
            (handle.vehicle, text)
        }
        ClientEvent::Result { handle, result } => (
            handle.vehicle,
            format!("result goal {} {} {}", result.goal_id, result.status, result.detail),
        ),
        ClientEvent::NoResponse { handle } => (handle.vehicle, "no response".to_string()),
    }
}

/// One in-process run of `script` with the given fleet.
pub struct MissionRun {
    pub world: World,
    pub report: RunReport,
}

pub fn run_mission(cfg: FleetConfig, script: &str, rtf_cap: f64, max_s: f64) -> anyhow::Result<MissionRun> {
    let mut world = World::build(cfg, Role::Single)?;
    world.set_mission(MissionRunner::from_script(script)?);
    let mut kernel = world.kernel()?;
    let run = RunConfig {
        rtf_cap,
        duration_s: max_s,
        ..RunConfig::with_dt(world.dt_ns)
    };
    let report = world.run(&mut kernel, &run)?;
    Ok(MissionRun { world, report })
}

pub const REFERENCE_MISSION: &str = "\
# takeoff, one orbit lap, land
takeoff 30
wait
orbit 0 0 30 50 5
wait
sleep 60
land
wait
";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::firmware::FlightMode;

    #[test]
    fn topology_respects_hosting() {
        let cfg = FleetConfig::new(2, Flavor::A);
        let single = World::build(cfg.clone(), Role::Single).unwrap();
        assert_eq!((single.vehicles.len(), single.companions.len(), single.bridges.len()), (2, 2, 3));
        let auth = World::build(cfg.clone(), Role::Authority).unwrap();
        assert_eq!((auth.vehicles.len(), auth.companions.len(), auth.bridges.len()), (2, 0, 1));
        assert!(!auth.net.node(companion_node(1)).unwrap().local);
        let remote = World::build(cfg, Role::Remote).unwrap();
        assert_eq!((remote.vehicles.len(), remote.companions.len(), remote.bridges.len()), (0, 2, 2));
        assert!(remote.ground.is_none());
    }

    #[test]
    fn wrong_timestep_is_refused() {
        let mut w = World::build(FleetConfig::new(1, Flavor::B), Role::Single).unwrap();
        let mut k = w.kernel().unwrap();
        assert!(w.run(&mut k, &RunConfig::with_dt(4_000_000)).is_err());
    }

    #[test]
    fn every_sensor_load_schedules_on_both_flavors() {
        for flavor in [Flavor::A, Flavor::B] {
            for sensors in Sensors::ALL {
                let mut cfg = FleetConfig::new(2, flavor);
                cfg.sensors = sensors;
                let mut w = World::build(cfg, Role::Single).unwrap();
                let mut k = w.kernel().unwrap();
                let run = RunConfig {
                    rtf_cap: f64::INFINITY,
                    duration_s: 1.0,
                    ..RunConfig::with_dt(w.dt_ns)
                };
                let rep = w.run(&mut k, &run).unwrap();
                assert_eq!(rep.sim_seconds, 1.0, "{flavor} {sensors}");
            }
        }
    }

    #[test]
    fn takeoff_and_land_closed_loop() {
        for flavor in [Flavor::A, Flavor::B] {
            let run = run_mission(
                FleetConfig::new(1, flavor),
                "takeoff 10\nwait\nassert alt > 9\nland\nwait",
                f64::INFINITY,
                300.0,
            )
            .unwrap();
            let rep = run.world.mission_report().unwrap();
            assert!(rep.passed, "{flavor}: {rep:?}");
            let s = run.world.vehicles[0].state;
            assert!(s.position.z.abs() < 0.1);
            assert_eq!(run.world.vehicles[0].firmware.autopilot.mode(), FlightMode::Disarmed);
        }
    }
}
