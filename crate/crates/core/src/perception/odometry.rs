//! Frame-to-frame LiDAR odometry: each scan is aligned to the previous one,
//! seeded with the last measured motion.

use super::icp::{icp, IcpConfig, IcpError, IcpResult};
use nalgebra::{Isometry3, Vector3};

pub struct Odometry {
    cfg: IcpConfig,
    pose: Isometry3<f64>,
    motion: Isometry3<f64>,
    prev: Option<Vec<Vector3<f64>>>,
}

impl Odometry {
    pub fn new(cfg: IcpConfig) -> Self {
        Odometry {
            cfg,
            pose: Isometry3::identity(),
            motion: Isometry3::identity(),
            prev: None,
        }
    }

    /// Sensor pose in the frame of the first scan.
    pub fn pose(&self) -> Isometry3<f64> {
        self.pose
    }

    /// Registers a scan (sensor frame) and returns the motion since the
    /// previous one. The first scan only primes the tracker. On failure the
    /// scan replaces the reference and the motion prior is reset.
    pub fn register(&mut self, scan: Vec<Vector3<f64>>) -> Result<Option<IcpResult>, IcpError> {
        let Some(prev) = self.prev.replace(scan) else {
            return Ok(None);
        };
        let curr = self.prev.as_deref().unwrap_or_default();
        match icp(&prev, curr, self.motion, &self.cfg) {
            Ok(r) => {
                self.motion = r.transform;
                self.pose *= r.transform;
                Ok(Some(r))
            }
            Err(e) => {
                self.motion = Isometry3::identity();
                Err(e)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::fixtures::cloud_at;

    #[test]
    fn first_scan_primes_the_tracker() {
        let mut odo = Odometry::new(IcpConfig::default());
        assert!(odo.register(cloud_at(Vector3::new(10.0, 0.0, -2.0), 0.0)).unwrap().is_none());
        assert_eq!(odo.pose(), Isometry3::identity());
    }

    #[test]
    fn closed_square_drift_is_small() {
        let side = 12.0;
        let per_side = 6;
        let corners = [(0.0, 0.0), (side, 0.0), (side, side), (0.0, side), (0.0, 0.0)];
        let mut poses = Vec::new();
        for w in corners.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            for k in 0..per_side {
                let f = k as f64 / per_side as f64;
                poses.push(Vector3::new(x0 + (x1 - x0) * f + 10.0, y0 + (y1 - y0) * f - 6.0, -2.0));
            }
        }
        poses.push(poses[0]);
        let path = 4.0 * side;
        let mut odo = Odometry::new(IcpConfig::default());
        let mut est = Isometry3::identity();
        for p in &poses {
            if let Some(r) = odo.register(cloud_at(*p, 0.0)).unwrap() {
                est *= r.transform;
            }
        }
        assert!((est.translation.vector - odo.pose().translation.vector).norm() < 1e-9);
        let drift = est.translation.vector.norm();
        assert!(drift < 0.01 * path, "drift {drift} over {path} m");
    }
}
