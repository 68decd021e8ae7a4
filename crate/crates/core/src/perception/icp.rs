//! Point-to-point ICP: nearest-neighbour correspondences under a distance
//! gate, closed-form rigid alignment from the SVD of the cross-covariance.

use std::collections::HashMap;

use super::kdtree::KdTree;
use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIN_POINTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Stop when the mean residual changes by less than this (m).
    pub tolerance_m: f64,
    pub gate_m: f64,
    /// Voxel edge for downsampling the moving cloud; 0 disables it.
    pub voxel_m: f64,
    /// Voxel edge for a first pass on both thinned clouds; 0 skips it.
    pub coarse_voxel_m: f64,
    /// Points within this height of the lowest return are treated as
    /// ground and dropped; 0 keeps them.
    pub ground_band_m: f64,
    /// Gate for a last pass once the main pass has settled; 0 skips it.
    pub refine_gate_m: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        IcpConfig {
            max_iterations: 50,
            tolerance_m: 1e-6,
            gate_m: 2.0,
            voxel_m: 0.0,
            coarse_voxel_m: 1.0,
            ground_band_m: 0.3,
            refine_gate_m: 0.5,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum IcpError {
    #[error("need at least {MIN_POINTS} points, got {0}")]
    TooFewPoints(usize),
    #[error("no correspondences within the {0} m gate")]
    NoCorrespondences(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    /// Maps points of the current frame into the previous frame.
    pub transform: Isometry3<f64>,
    pub iterations: usize,
    pub residual_m: f64,
    pub correspondences: usize,
    pub converged: bool,
    /// Geometry does not constrain all six degrees of freedom.
    pub degenerate: bool,
}

/// Rigid transform (R, t) minimising sum |R·src + t − dst|², plus the
/// singular values of the centered point spread of `src`.
pub fn kabsch(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> (Rotation3<f64>, Vector3<f64>, Vector3<f64>) {
    assert_eq!(src.len(), dst.len());
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        let a = s - cs;
        h += a * (d - cd).transpose();
        spread += a * a.transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("u");
    let v_t = svd.v_t.expect("v_t");
    let mut d = Matrix3::identity();
    if (v_t.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = v_t.transpose() * d * u.transpose();
    let rot = Rotation3::from_matrix_unchecked(r);
    let t = cd - rot * cs;
    let sv = spread.svd(false, false).singular_values;
    (rot, t, sv)
}

/// Keeps the first point falling in each voxel, in input order.
pub fn voxel_downsample(points: &[Vector3<f64>], voxel: f64) -> Vec<Vector3<f64>> {
    if voxel <= 0.0 {
        return points.to_vec();
    }
    let mut seen: HashMap<(i64, i64, i64), ()> = HashMap::with_capacity(points.len());
    let mut out = Vec::new();
    for p in points {
        let key = (
            (p.x / voxel).floor() as i64,
            (p.y / voxel).floor() as i64,
            (p.z / voxel).floor() as i64,
        );
        if seen.insert(key, ()).is_none() {
            out.push(*p);
        }
    }
    out
}

pub struct Matcher {
    tree: KdTree,
    points: Vec<Vector3<f64>>,
}

impl Matcher {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        Matcher {
            tree: KdTree::new(points),
            points: points.to_vec(),
        }
    }

    /// Gated nearest neighbours of each query: (query, match) pairs.
    pub fn correspond(&self, queries: &[Vector3<f64>], gate: f64) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
        let gate2 = gate * gate;
        let mut src = Vec::with_capacity(queries.len());
        let mut dst = Vec::with_capacity(queries.len());
        for q in queries {
            if let Some((i, d2)) = self.tree.nearest(q) {
                if d2 <= gate2 {
                    src.push(*q);
                    dst.push(self.points[i]);
                }
            }
        }
        (src, dst)
    }
}

pub fn mean_residual(src: &[Vector3<f64>], dst: &[Vector3<f64>], t: &Isometry3<f64>) -> f64 {
    if src.is_empty() {
        return 0.0;
    }
    src.iter().zip(dst).map(|(s, d)| (t * nalgebra::Point3::from(*s)).coords.metric_distance(d)).sum::<f64>()
        / src.len() as f64
}

/// Drops the slab of returns within `band` of the lowest point (largest z,
/// body frame with z down). Flat ground looks the same from every pose at a
/// given height and would pull the translation towards zero.
pub fn strip_ground(points: &[Vector3<f64>], band: f64) -> Vec<Vector3<f64>> {
    if band <= 0.0 {
        return points.to_vec();
    }
    let floor = points.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max);
    points.iter().filter(|p| p.z < floor - band).copied().collect()
}

/// Aligns `curr` onto `prev`, starting from `init`.
pub fn icp(
    prev: &[Vector3<f64>],
    curr: &[Vector3<f64>],
    init: Isometry3<f64>,
    cfg: &IcpConfig,
) -> Result<IcpResult, IcpError> {
    for c in [prev, curr] {
        if c.len() < MIN_POINTS {
            return Err(IcpError::TooFewPoints(c.len()));
        }
    }
    let prev = &strip_ground(prev, cfg.ground_band_m)[..];
    let curr = &strip_ground(curr, cfg.ground_band_m)[..];
    if prev.len() < MIN_POINTS {
        return Err(IcpError::TooFewPoints(prev.len()));
    }
    if curr.len() < MIN_POINTS {
        return Err(IcpError::TooFewPoints(curr.len()));
    }
    let mut start = init;
    if cfg.coarse_voxel_m > 0.0 {
        // thinning evens out the dense near-field ground rings, which
        // otherwise pin the rotation in a local minimum
        let p = voxel_downsample(prev, cfg.coarse_voxel_m);
        let c = voxel_downsample(curr, cfg.coarse_voxel_m);
        if p.len() >= MIN_POINTS && c.len() >= MIN_POINTS {
            if let Ok(r) = align(&Matcher::new(&p), &c, init, cfg) {
                start = r.transform;
            }
        }
    }
    let matcher = Matcher::new(prev);
    let moving = voxel_downsample(curr, cfg.voxel_m);
    let mut result = align(&matcher, &moving, start, cfg)?;
    if cfg.refine_gate_m > 0.0 && cfg.refine_gate_m < cfg.gate_m {
        let fine = IcpConfig {
            gate_m: cfg.refine_gate_m,
            ..*cfg
        };
        if let Ok(r) = align(&matcher, &moving, result.transform, &fine) {
            result = IcpResult {
                iterations: result.iterations + r.iterations,
                ..r
            };
        }
    }
    if result.degenerate {
        tracing::warn!(points = result.correspondences, "icp geometry is degenerate");
    }
    Ok(result)
}

fn align(
    matcher: &Matcher,
    moving: &[Vector3<f64>],
    init: Isometry3<f64>,
    cfg: &IcpConfig,
) -> Result<IcpResult, IcpError> {
    let mut t = init;
    let mut last_residual = f64::INFINITY;
    let mut result = IcpResult {
        transform: t,
        iterations: 0,
        residual_m: f64::INFINITY,
        correspondences: 0,
        converged: false,
        degenerate: false,
    };
    for it in 1..=cfg.max_iterations {
        let placed: Vec<Vector3<f64>> = moving.iter().map(|p| (t * nalgebra::Point3::from(*p)).coords).collect();
        let (src, dst) = matcher.correspond(&placed, cfg.gate_m);
        if src.len() < 3 {
            if it == 1 {
                return Err(IcpError::NoCorrespondences(cfg.gate_m));
            }
            break;
        }
        let (rot, tr, spread) = kabsch(&src, &dst);
        let step = Isometry3::from_parts(Translation3::from(tr), UnitQuaternion::from_rotation_matrix(&rot));
        t = step * t;
        let residual = mean_residual(&src, &dst, &step);
        result = IcpResult {
            transform: t,
            iterations: it,
            residual_m: residual,
            correspondences: src.len(),
            converged: false,
            degenerate: spread[2] <= 1e-9 * spread[0].max(1e-300),
        };
        if (last_residual - residual).abs() < cfg.tolerance_m {
            result.converged = true;
            break;
        }
        last_residual = residual;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::fixtures::cloud_at;
    use nalgebra::Point3;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn identical_clouds_give_identity() {
        let c = cloud_at(Vector3::new(0.0, 0.0, -2.0), 0.0);
        let r = icp(&c, &c, Isometry3::identity(), &IcpConfig::default()).unwrap();
        assert!(r.transform.translation.vector.norm() < 1e-12);
        assert!(r.transform.rotation.angle() < 1e-12);
        assert!(r.residual_m < 1e-12);
    }

    #[test]
    fn recovers_exact_translation() {
        let prev = cloud_at(Vector3::new(0.0, 0.0, -2.0), 0.0);
        let shift = Vector3::new(0.1, 0.0, 0.0);
        // same points seen from 0.1 m further along x
        let curr: Vec<_> = prev.iter().map(|p| p - shift).collect();
        let r = icp(&prev, &curr, Isometry3::identity(), &IcpConfig::default()).unwrap();
        assert!((r.transform.translation.vector - shift).norm() < 1e-6);
        assert!(r.converged);
    }

    #[test]
    fn recovers_yaw_under_range_noise() {
        let prev = cloud_at(Vector3::new(0.0, 0.0, -2.0), 0.0);
        let yaw = 5f64.to_radians();
        let to_curr = UnitQuaternion::from_euler_angles(0.0, 0.0, -yaw);
        let mut errs = Vec::new();
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = Normal::new(0.0, 0.01).unwrap();
            let curr: Vec<_> = prev.iter().map(|p| (to_curr * p) * (1.0 + n.sample(&mut rng))).collect();
            let r = icp(&prev, &curr, Isometry3::identity(), &IcpConfig::default()).unwrap();
            let (_, _, got) = r.transform.rotation.euler_angles();
            errs.push((got - yaw).abs().to_degrees());
        }
        let worst = errs.iter().cloned().fold(0.0, f64::max);
        assert!(worst < 0.2, "{errs:?}");
    }

    #[test]
    fn ground_slab_is_stripped() {
        let mut pts = vec![Vector3::new(1.0, 0.0, 2.0), Vector3::new(3.0, 1.0, 1.9)];
        pts.push(Vector3::new(5.0, 5.0, -1.0));
        let kept = strip_ground(&pts, 0.3);
        assert_eq!(kept, vec![Vector3::new(5.0, 5.0, -1.0)]);
        assert_eq!(strip_ground(&pts, 0.0).len(), 3);
    }

    #[test]
    fn too_few_points() {
        let c = vec![Vector3::zeros(); 3];
        assert_eq!(
            icp(&c, &c, Isometry3::identity(), &IcpConfig::default()).unwrap_err(),
            IcpError::TooFewPoints(3)
        );
    }

    #[test]
    fn coplanar_cloud_is_flagged() {
        let pts: Vec<_> = (0..20)
            .flat_map(|i| (0..20).map(move |j| Vector3::new(i as f64 * 0.5, j as f64 * 0.5, 0.0)))
            .collect();
        let cfg = IcpConfig {
            ground_band_m: 0.0,
            ..IcpConfig::default()
        };
        let r = icp(&pts, &pts, Isometry3::identity(), &cfg).unwrap();
        assert!(r.degenerate);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        /// With correspondences held fixed, the alignment step never
        /// increases the residual.
        #[test]
        fn alignment_step_never_increases_residual(
            seed in 0u64..1000,
            yaw in -0.3f64..0.3,
            tx in -1.0f64..1.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = Normal::new(0.0, 0.05).unwrap();
            let prev = cloud_at(Vector3::new(0.0, 0.0, -2.0), 0.0);
            let moved = Isometry3::new(Vector3::new(tx, 0.2, 0.0), Vector3::new(0.0, 0.0, yaw));
            let curr: Vec<_> = prev.iter().step_by(7)
                .map(|p| (moved * Point3::from(*p)).coords + Vector3::new(n.sample(&mut rng), n.sample(&mut rng), 0.0))
                .collect();
            let m = Matcher::new(&prev);
            let (src, dst) = m.correspond(&curr, 2.0);
            prop_assume!(src.len() >= 3);
            let before = mean_residual(&src, &dst, &Isometry3::identity());
            let (rot, t, _) = kabsch(&src, &dst);
            let step = Isometry3::from_parts(Translation3::from(t), UnitQuaternion::from_rotation_matrix(&rot));
            let sq = |iso: &Isometry3<f64>| src.iter().zip(&dst)
                .map(|(s, d)| ((iso * Point3::from(*s)).coords - d).norm_squared()).sum::<f64>();
            prop_assert!(sq(&step) <= sq(&Isometry3::identity()) + 1e-9);
            let _ = before;
        }
    }
}
