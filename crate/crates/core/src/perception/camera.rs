//! Pinhole camera producing geometry-derived detections. The camera looks
//! along body x with image u to the right (body y) and v down (body z).

use std::time::{Duration, Instant};

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::world::WorldModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub width: u32,
    pub height: u32,
    pub hfov_deg: f64,
    pub period_ns: u64,
    pub max_detect_range_m: f64,
    pub pixel_noise_px: f64,
    /// Wall time burnt per frame to stand in for inference cost.
    pub inference_budget_ms: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel {
            width: 320,
            height: 240,
            hfov_deg: 100.0,
            // 8 Hz rounded to a period every supported timestep divides
            period_ns: 124_000_000,
            max_detect_range_m: 100.0,
            pixel_noise_px: 1.0,
            inference_budget_ms: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: u32,
    /// (u_min, v_min, u_max, v_max) in pixels.
    pub bbox: [f64; 4],
    pub confidence: f64,
    pub stamp_ns: u64,
}

impl Detection {
    pub fn center(&self) -> (f64, f64) {
        ((self.bbox[0] + self.bbox[2]) / 2.0, (self.bbox[1] + self.bbox[3]) / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub stamp_ns: u64,
    pub position: Vector3<f64>,
    pub attitude: UnitQuaternion<f64>,
}

impl CameraModel {
    pub fn fx(&self) -> f64 {
        (self.width as f64 / 2.0) / (self.hfov_deg.to_radians() / 2.0).tan()
    }

    pub fn fy(&self) -> f64 {
        self.fx()
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    /// Pixel of a camera-frame point, or None behind the image plane.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        if p.x <= 1e-9 {
            return None;
        }
        let (cx, cy) = self.principal_point();
        Some((cx + self.fx() * p.y / p.x, cy + self.fy() * p.z / p.x))
    }

    /// Unit ray in the camera frame through pixel (u, v).
    pub fn unproject(&self, u: f64, v: f64) -> Vector3<f64> {
        let (cx, cy) = self.principal_point();
        Vector3::new(1.0, (u - cx) / self.fx(), (v - cy) / self.fy()).normalize()
    }

    fn in_image(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u <= self.width as f64 && v >= 0.0 && v <= self.height as f64
    }

    /// Detections of every target whose center is in front of the camera
    /// and inside the frustum.
    pub fn frame<R: Rng>(&self, pose: &CameraPose, world: &WorldModel, rng: &mut R) -> Vec<Detection> {
        let started = Instant::now();
        let to_cam = pose.attitude.inverse();
        let noise = (self.pixel_noise_px > 0.0).then(|| Normal::new(0.0, self.pixel_noise_px).expect("sigma"));
        let (w, h) = (self.width as f64, self.height as f64);
        let mut out = Vec::new();
        for t in &world.targets {
            let c = to_cam * (t.center - pose.position);
            let range = c.norm();
            if range > self.max_detect_range_m {
                continue;
            }
            let Some((uc, vc)) = self.project(&c) else {
                continue;
            };
            if !self.in_image(uc, vc) {
                continue;
            }
            let mut bb = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
            for corner in t.corners() {
                let mut p = to_cam * (corner - pose.position);
                // corners straddling the image plane are clamped onto it
                p.x = p.x.max(0.05);
                let (u, v) = self.project(&p).expect("clamped in front");
                bb[0] = bb[0].min(u);
                bb[1] = bb[1].min(v);
                bb[2] = bb[2].max(u);
                bb[3] = bb[3].max(v);
            }
            if let Some(n) = &noise {
                for e in bb.iter_mut() {
                    *e += n.sample(rng);
                }
            }
            let bbox = [bb[0].clamp(0.0, w), bb[1].clamp(0.0, h), bb[2].clamp(0.0, w), bb[3].clamp(0.0, h)];
            if !(bbox[0] < bbox[2] && bbox[1] < bbox[3]) {
                continue;
            }
            out.push(Detection {
                class_id: t.class_id,
                bbox,
                confidence: (1.0 - range / self.max_detect_range_m).clamp(0.05, 0.99),
                stamp_ns: pose.stamp_ns,
            });
        }
        if self.inference_budget_ms > 0.0 {
            let budget = Duration::from_secs_f64(self.inference_budget_ms * 1e-3);
            while started.elapsed() < budget {
                std::hint::spin_loop();
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::world::Target;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn world_with(center: Vector3<f64>, half: f64) -> WorldModel {
        WorldModel {
            boxes: vec![],
            targets: vec![Target {
                class_id: 3,
                center,
                half_extent: Vector3::new(half, half, half),
            }],
        }
    }

    fn pose() -> CameraPose {
        CameraPose {
            stamp_ns: 7,
            position: Vector3::zeros(),
            attitude: UnitQuaternion::identity(),
        }
    }

    fn exact() -> CameraModel {
        CameraModel {
            pixel_noise_px: 0.0,
            ..CameraModel::default()
        }
    }

    #[test]
    fn focal_length_from_fov() {
        let fx = 160.0 / 50f64.to_radians().tan();
        assert!((CameraModel::default().fx() - fx).abs() < 1e-12);
        assert!((fx - 134.25).abs() < 0.01);
    }

    #[test]
    fn on_axis_target_is_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = exact().frame(&pose(), &world_with(Vector3::new(10.0, 0.0, 0.0), 0.5), &mut rng);
        assert_eq!(d.len(), 1);
        let (u, v) = d[0].center();
        assert!((u - 160.0).abs() < 1e-9 && (v - 120.0).abs() < 1e-9);
        assert_eq!(d[0].stamp_ns, 7);
        assert!((d[0].confidence - 0.9).abs() < 1e-12);
    }

    #[test]
    fn offset_point_projects_by_pinhole() {
        let cam = exact();
        let (u, _) = cam.project(&Vector3::new(10.0, 2.0, 0.0)).unwrap();
        let oracle = 160.0 + (160.0 / 50f64.to_radians().tan()) * 0.2;
        assert!((u - oracle).abs() < 1e-9);
        assert!((u - 186.85).abs() < 0.01);
    }

    #[test]
    fn behind_camera_is_culled() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = exact().frame(&pose(), &world_with(Vector3::new(-10.0, 0.0, 0.0), 0.5), &mut rng);
        assert!(d.is_empty());
    }

    #[test]
    fn noisy_bbox_stays_inside_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cam = CameraModel::default();
        for k in 0..200 {
            let y = (k as f64 - 100.0) * 0.14;
            for d in cam.frame(&pose(), &world_with(Vector3::new(10.0, y, 0.0), 2.0), &mut rng) {
                assert!(d.bbox[0] >= 0.0 && d.bbox[2] <= 320.0 && d.bbox[0] < d.bbox[2]);
                assert!(d.bbox[1] >= 0.0 && d.bbox[3] <= 240.0 && d.bbox[1] < d.bbox[3]);
            }
        }
    }

    #[test]
    fn unprojecting_the_center_recovers_the_target() {
        let cam = CameraModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let attitude = UnitQuaternion::from_euler_angles(0.0, -0.4, 0.3);
        let p = CameraPose {
            stamp_ns: 0,
            position: Vector3::new(0.0, 0.0, -20.0),
            attitude,
        };
        let target = Vector3::new(30.0, 12.0, 0.0);
        let world = world_with(target, 0.5);
        let mut max_err: f64 = 0.0;
        for _ in 0..200 {
            let d = cam.frame(&p, &world, &mut rng);
            assert_eq!(d.len(), 1);
            let (u, v) = d[0].center();
            let ray = attitude * cam.unproject(u, v);
            let t = -p.position.z / ray.z;
            let hit = p.position + ray * t;
            max_err = max_err.max((hit - target).norm());
        }
        // a few px of center noise at roughly 36 m slant range
        assert!(max_err < 2.0, "{max_err}");
    }
}
