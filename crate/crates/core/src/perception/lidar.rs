//! Ray-cast LiDAR over a fixed azimuth/elevation grid in the body frame.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::world::WorldModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarModel {
    pub azimuth_samples: usize,
    pub elevation_samples: usize,
    pub vfov_deg: f64,
    pub max_range_m: f64,
    pub period_ns: u64,
}

impl Default for LidarModel {
    fn default() -> Self {
        LidarModel {
            azimuth_samples: 240,
            elevation_samples: 40,
            vfov_deg: 60.0,
            max_range_m: 40.0,
            period_ns: 248_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub stamp_ns: u64,
    /// Sensor frame, meters.
    pub points: Vec<Vector3<f64>>,
}

/// One range per ray in grid order (elevation-major); None means no return.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub stamp_ns: u64,
    pub ranges: Vec<Option<f64>>,
}

/// Wire form of a scan: ranges in millimeters, 0 for no return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackedScan {
    pub stamp_ns: u64,
    pub ranges_mm: Vec<u16>,
}

impl LidarModel {
    pub fn rays(&self) -> usize {
        self.azimuth_samples * self.elevation_samples
    }

    /// Elevation of row `j` in radians, from -vfov/2 to +vfov/2 inclusive.
    pub fn elevation(&self, j: usize) -> f64 {
        let half = self.vfov_deg.to_radians() / 2.0;
        if self.elevation_samples < 2 {
            return 0.0;
        }
        -half + 2.0 * half * j as f64 / (self.elevation_samples - 1) as f64
    }

    pub fn azimuth(&self, i: usize) -> f64 {
        std::f64::consts::TAU * i as f64 / self.azimuth_samples as f64
    }

    /// Unit direction of ray (elevation row j, azimuth column i), body frame
    /// with z down so positive elevation points up.
    pub fn direction(&self, j: usize, i: usize) -> Vector3<f64> {
        let (el, az) = (self.elevation(j), self.azimuth(i));
        Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), -el.sin())
    }

    pub fn scan(&self, stamp_ns: u64, position: &Vector3<f64>, attitude: &UnitQuaternion<f64>, world: &WorldModel) -> Scan {
        let mut ranges = Vec::with_capacity(self.rays());
        for j in 0..self.elevation_samples {
            for i in 0..self.azimuth_samples {
                let dir = attitude * self.direction(j, i);
                ranges.push(world.raycast(position, &dir, self.max_range_m));
            }
        }
        Scan { stamp_ns, ranges }
    }

    pub fn to_cloud(&self, scan: &Scan) -> PointCloud {
        let mut points = Vec::new();
        for (k, r) in scan.ranges.iter().enumerate() {
            if let Some(r) = r {
                let (j, i) = (k / self.azimuth_samples, k % self.azimuth_samples);
                points.push(self.direction(j, i) * *r);
            }
        }
        PointCloud {
            stamp_ns: scan.stamp_ns,
            points,
        }
    }

    pub fn pack(&self, scan: &Scan) -> PackedScan {
        PackedScan {
            stamp_ns: scan.stamp_ns,
            ranges_mm: scan
                .ranges
                .iter()
                .map(|r| r.map_or(0, |r| (r * 1000.0).round().clamp(1.0, u16::MAX as f64) as u16))
                .collect(),
        }
    }

    pub fn unpack(&self, packed: &PackedScan) -> Scan {
        Scan {
            stamp_ns: packed.stamp_ns,
            ranges: packed
                .ranges_mm
                .iter()
                .map(|&mm| (mm > 0).then(|| mm as f64 / 1000.0))
                .collect(),
        }
    }
}
