//! Parametric worlds: a flat ground plane at z = 0 (NED, so the air is
//! z < 0), axis-aligned boxes for buildings and obstacles, and detectable
//! target objects.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Aabb { min, max }
    }

    /// A box standing on the ground: footprint center, footprint size and height.
    pub fn building(cx: f64, cy: f64, size_x: f64, size_y: f64, height: f64) -> Self {
        Aabb {
            min: Vector3::new(cx - size_x / 2.0, cy - size_y / 2.0, -height),
            max: Vector3::new(cx + size_x / 2.0, cy + size_y / 2.0, 0.0),
        }
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|i| self.min[i].is_finite() && self.max[i].is_finite() && self.min[i] < self.max[i])
    }

    /// Slab test; the entry distance along a unit `dir`, or the exit
    /// distance when the origin is inside.
    pub fn ray_hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        for i in 0..3 {
            if dir[i].abs() < 1e-15 {
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[i];
            let mut t0 = (self.min[i] - origin[i]) * inv;
            let mut t1 = (self.max[i] - origin[i]) * inv;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            t_near = t_near.max(t0);
            t_far = t_far.min(t1);
            if t_near > t_far {
                return None;
            }
        }
        if t_far < 0.0 {
            None
        } else if t_near > 0.0 {
            Some(t_near)
        } else {
            Some(t_far)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub class_id: u32,
    pub center: Vector3<f64>,
    pub half_extent: Vector3<f64>,
}

impl Target {
    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let e = self.half_extent;
        let mut out = [Vector3::zeros(); 8];
        for (k, c) in out.iter_mut().enumerate() {
            let sx = if k & 1 == 0 { -1.0 } else { 1.0 };
            let sy = if k & 2 == 0 { -1.0 } else { 1.0 };
            let sz = if k & 4 == 0 { -1.0 } else { 1.0 };
            *c = self.center + Vector3::new(sx * e.x, sy * e.y, sz * e.z);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WorldModel {
    pub boxes: Vec<Aabb>,
    pub targets: Vec<Target>,
}

impl WorldModel {
    pub fn empty() -> Self {
        WorldModel::default()
    }

    /// Eight buildings on a 75 m ring around the origin, outside the
    /// reference orbit, and four ground targets between them.
    pub fn city() -> Self {
        let mut boxes = Vec::new();
        for k in 0..8 {
            let a = k as f64 * std::f64::consts::FRAC_PI_4 + std::f64::consts::PI / 8.0;
            let height = 25.0 + 5.0 * (k % 4) as f64;
            boxes.push(Aabb::building(75.0 * a.cos(), 75.0 * a.sin(), 12.0, 12.0, height));
        }
        let targets = (0..4)
            .map(|k| {
                let a = k as f64 * std::f64::consts::FRAC_PI_2;
                Target {
                    class_id: (k % 2) as u32,
                    center: Vector3::new(65.0 * a.cos(), 65.0 * a.sin(), -1.0),
                    half_extent: Vector3::new(2.0, 1.0, 1.0),
                }
            })
            .collect();
        WorldModel { boxes, targets }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (i, b) in self.boxes.iter().enumerate() {
            if !b.is_valid() {
                return Err(format!("box {i} is degenerate"));
            }
        }
        for (i, t) in self.targets.iter().enumerate() {
            if !(t.half_extent.iter().all(|e| *e >= 0.0) && t.center.iter().all(|c| c.is_finite())) {
                return Err(format!("target {i} is malformed"));
            }
        }
        Ok(())
    }

    /// Nearest hit along a unit direction among the ground and the boxes,
    /// limited to `max_range`.
    pub fn raycast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, max_range: f64) -> Option<f64> {
        let mut best = f64::INFINITY;
        if dir.z > 1e-12 && origin.z < 0.0 {
            best = -origin.z / dir.z;
        }
        for b in &self.boxes {
            if let Some(t) = b.ray_hit(origin, dir) {
                if t < best {
                    best = t;
                }
            }
        }
        (best > 0.0 && best <= max_range).then_some(best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_front_face() {
        let b = Aabb::new(Vector3::new(5.0, -0.5, -1.0), Vector3::new(6.0, 0.5, 0.0));
        let t = b.ray_hit(&Vector3::new(0.5, 0.0, -0.5), &Vector3::x()).unwrap();
        assert!((t - 4.5).abs() < 1e-12);
        assert!(b.ray_hit(&Vector3::new(0.5, 0.0, -0.5), &-Vector3::x()).is_none());
    }

    #[test]
    fn ground_hit_and_parallel_miss() {
        let w = WorldModel::empty();
        let o = Vector3::new(0.0, 0.0, -10.0);
        let down30 = Vector3::new(30f64.to_radians().cos(), 0.0, 30f64.to_radians().sin());
        assert!((w.raycast(&o, &down30, 40.0).unwrap() - 20.0).abs() < 1e-9);
        assert!(w.raycast(&o, &Vector3::x(), 40.0).is_none());
        assert!(w.raycast(&o, &Vector3::z(), 5.0).is_none());
    }

    #[test]
    fn city_is_valid_and_clear_of_the_reference_orbit() {
        let w = WorldModel::city();
        w.validate().unwrap();
        for b in &w.boxes {
            let cx = (b.min.x + b.max.x) / 2.0;
            let cy = (b.min.y + b.max.y) / 2.0;
            assert!((cx * cx + cy * cy).sqrt() - 9.0 > 55.0);
        }
    }
}
