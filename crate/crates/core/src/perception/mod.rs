pub mod camera;
pub mod icp;
pub mod kdtree;
pub mod lidar;
pub mod odometry;
pub mod world;

pub use camera::{CameraModel, CameraPose, Detection};
pub use icp::{icp, IcpConfig, IcpError, IcpResult};
pub use odometry::Odometry;
pub use lidar::{LidarModel, PackedScan, PointCloud, Scan};
pub use world::{Aabb, Target, WorldModel};

pub mod topics {
    pub const CAMERA_FRAME: &str = "/camera_frame";
    pub const DETECTIONS: &str = "/detections";
    pub const LIDAR_POINTS: &str = "/lidar_points";
    pub const ODOM_ICP: &str = "/odom_icp";
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::lidar::LidarModel;
    use super::world::{Aabb, WorldModel};
    use nalgebra::{UnitQuaternion, Vector3};

    /// A walled yard with a few pillars: structure in every direction.
    pub fn yard() -> WorldModel {
        let mut boxes = vec![
            Aabb::new(Vector3::new(-30.0, -30.0, -8.0), Vector3::new(30.0, -29.0, 0.0)),
            Aabb::new(Vector3::new(-30.0, 29.0, -8.0), Vector3::new(30.0, 30.0, 0.0)),
            Aabb::new(Vector3::new(-30.0, -30.0, -8.0), Vector3::new(-29.0, 30.0, 0.0)),
            Aabb::new(Vector3::new(29.0, -30.0, -8.0), Vector3::new(30.0, 30.0, 0.0)),
        ];
        for (x, y) in [(8.0, 6.0), (-12.0, 9.0), (5.0, -14.0), (-7.0, -6.0), (18.0, 18.0)] {
            boxes.push(Aabb::building(x, y, 2.0, 3.0, 5.0 + x.abs() / 4.0));
        }
        WorldModel { boxes, targets: vec![] }
    }

    pub fn cloud_at(pos: Vector3<f64>, yaw: f64) -> Vec<Vector3<f64>> {
        let l = LidarModel::default();
        let att = UnitQuaternion::from_euler_angles(0.0, 0.0, yaw);
        l.to_cloud(&l.scan(0, &pos, &att, &yard())).points
    }
}
