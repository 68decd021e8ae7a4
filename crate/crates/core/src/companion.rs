//! Per-vehicle companion computer: the action server with its autopilot
//! link, plus the optional perception pipelines fed by the simulator's
//! sensor topics.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{Isometry3, Vector3};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::{request_topic, state_topic, ActionServer, SharedState};
use crate::ground::aggregator::{Tracks, TRACKS_TOPIC};
use crate::kernel::SimTime;
use crate::netsim::payload::{decode, encode};
use crate::netsim::{DomainId, Envelope, NetError, Network, NodeId};
use crate::perception::{topics, CameraModel, CameraPose, IcpConfig, LidarModel, Odometry, PackedScan, WorldModel};

/// Relative motion estimate published on `/odom_icp`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdomMsg {
    pub stamp_ns: u64,
    /// Motion since the previous scan, mapping the current sensor frame into the previous one.
    pub delta: Isometry3<f64>,
    /// Accumulated pose relative to the first scan.
    pub pose: Isometry3<f64>,
    pub residual_m: f64,
    pub iterations: usize,
    pub degenerate: bool,
}

pub struct CameraPipeline {
    pub model: CameraModel,
    rng: ChaCha8Rng,
    pub frames: u64,
    pub detections: u64,
}

pub struct LidarPipeline {
    pub model: LidarModel,
    odometry: Odometry,
    pub scans: u64,
    pub failures: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CompanionStats {
    pub tracks_received: u64,
    pub peer_states_received: u64,
    pub unhandled: u64,
}

pub struct Companion {
    pub vehicle: u16,
    pub node: NodeId,
    pub domain: DomainId,
    pub server: ActionServer,
    pub world: Arc<WorldModel>,
    pub camera: Option<CameraPipeline>,
    pub lidar: Option<LidarPipeline>,
    pub peers: BTreeMap<u16, SharedState>,
    pub last_tracks: Option<Tracks>,
    pub stats: CompanionStats,
}

impl Companion {
    pub fn new(server: ActionServer, world: Arc<WorldModel>) -> Self {
        Companion {
            vehicle: server.vehicle,
            node: server.node,
            domain: server.domain,
            server,
            world,
            camera: None,
            lidar: None,
            peers: BTreeMap::new(),
            last_tracks: None,
            stats: CompanionStats::default(),
        }
    }

    pub fn with_camera(mut self, model: CameraModel, rng: ChaCha8Rng) -> Self {
        self.camera = Some(CameraPipeline {
            model,
            rng,
            frames: 0,
            detections: 0,
        });
        self
    }

    pub fn with_lidar(mut self, model: LidarModel) -> Self {
        self.lidar = Some(LidarPipeline {
            model,
            odometry: Odometry::new(IcpConfig::default()),
            scans: 0,
            failures: 0,
        });
        self
    }

    /// Topic patterns the companion subscribes to in its vehicle domain.
    pub fn subscriptions(&self) -> Vec<String> {
        let mut subs: Vec<String> = crate::action::VehicleLink::subscriptions(self.server.flavor())
            .iter()
            .map(|s| s.to_string())
            .collect();
        subs.push(request_topic(self.vehicle));
        subs.push("/state_drone_*".into());
        subs.push(TRACKS_TOPIC.into());
        if self.camera.is_some() {
            subs.push(topics::CAMERA_FRAME.into());
        }
        if self.lidar.is_some() {
            subs.push(topics::LIDAR_POINTS.into());
        }
        subs
    }

    pub fn step(&mut self, net: &mut Network, now: SimTime) -> Result<(), NetError> {
        for env in net.take_inbox(self.node) {
            self.dispatch(net, &env, now)?;
        }
        self.server.step(net, now)
    }

    fn dispatch(&mut self, net: &mut Network, env: &Envelope, now: SimTime) -> Result<(), NetError> {
        let topic = env.topic.as_str();
        if topic == topics::CAMERA_FRAME {
            return self.on_camera(net, env, now);
        }
        if topic == topics::LIDAR_POINTS {
            return self.on_lidar(net, env, now);
        }
        if topic == TRACKS_TOPIC {
            if let Some(t) = decode::<Tracks>(env.body()) {
                self.stats.tracks_received += 1;
                self.last_tracks = Some(t);
            }
            return Ok(());
        }
        if topic.starts_with("/state_drone_") && topic != state_topic(self.vehicle) {
            if let Some(s) = decode::<SharedState>(env.body()) {
                self.stats.peer_states_received += 1;
                self.peers.insert(s.vehicle, s);
            }
            return Ok(());
        }
        if self.server.handle(net, env, now)? || self.server.link.ingest(env) {
            return Ok(());
        }
        self.stats.unhandled += 1;
        Ok(())
    }

    fn on_camera(&mut self, net: &mut Network, env: &Envelope, now: SimTime) -> Result<(), NetError> {
        let Some(cam) = self.camera.as_mut() else {
            return Ok(());
        };
        let Some(pose) = decode::<CameraPose>(env.body()) else {
            return Ok(());
        };
        let dets = cam.model.frame(&pose, &self.world, &mut cam.rng);
        cam.frames += 1;
        cam.detections += dets.len() as u64;
        net.publish(self.node, self.domain, topics::DETECTIONS, encode(&dets), now)?;
        Ok(())
    }

    fn on_lidar(&mut self, net: &mut Network, env: &Envelope, now: SimTime) -> Result<(), NetError> {
        let Some(lidar) = self.lidar.as_mut() else {
            return Ok(());
        };
        let Some(packed) = decode::<PackedScan>(env.body()) else {
            return Ok(());
        };
        let cloud = lidar.model.to_cloud(&lidar.model.unpack(&packed));
        lidar.scans += 1;
        match lidar.odometry.register(cloud.points) {
            Ok(Some(r)) => {
                let msg = OdomMsg {
                    stamp_ns: packed.stamp_ns,
                    delta: r.transform,
                    pose: lidar.odometry.pose(),
                    residual_m: r.residual_m,
                    iterations: r.iterations,
                    degenerate: r.degenerate,
                };
                net.publish(self.node, self.domain, topics::ODOM_ICP, encode(&msg), now)?;
            }
            Ok(None) => {}
            Err(e) => {
                lidar.failures += 1;
                tracing::debug!(vehicle = self.vehicle, error = %e, "scan not registered");
            }
        }
        Ok(())
    }

    pub fn odometry_pose(&self) -> Option<Vector3<f64>> {
        self.lidar.as_ref().map(|l| l.odometry.pose().translation.vector)
    }
}
