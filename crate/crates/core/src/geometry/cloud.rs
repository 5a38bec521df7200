use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::transform::{RigidTransform, Transformable, Vec3};
use crate::error::{Error, Result};

/// Points with per-point unit normals. A zero normal marks a point whose
/// orientation could not be estimated.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct OrientedPointCloud {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
}

impl OrientedPointCloud {
    pub fn new(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        if points.len() != normals.len() {
            return Err(Error::Shape(format!(
                "{} points but {} normals",
                points.len(),
                normals.len()
            )));
        }
        Ok(OrientedPointCloud { points, normals })
    }

    /// Cloud without orientation (all normals zero).
    pub fn from_points(points: Vec<Vec3>) -> Self {
        let normals = vec![Vec3::zeros(); points.len()];
        OrientedPointCloud { points, normals }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Axis-aligned bounds `(min, max)`; `None` when empty.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        bounds_of(&self.points)
    }

    pub fn centroid(&self) -> Option<Vec3> {
        (!self.is_empty()).then(|| self.points.iter().sum::<Vec3>() / self.len() as f64)
    }

    /// Flat `[x, y, z, nx, ny, nz]` rows, the layout the encoder consumes.
    pub fn to_rows(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * 6);
        for (p, n) in self.points.iter().zip(&self.normals) {
            out.extend_from_slice(&[p.x, p.y, p.z, n.x, n.y, n.z]);
        }
        out
    }

    /// Reorders points (and their normals).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        OrientedPointCloud {
            points: perm.iter().map(|&i| self.points[i]).collect(),
            normals: perm.iter().map(|&i| self.normals[i]).collect(),
        }
    }

    pub fn extend(&mut self, other: &OrientedPointCloud) {
        self.points.extend_from_slice(&other.points);
        self.normals.extend_from_slice(&other.normals);
    }
}

pub fn bounds_of(points: &[Vec3]) -> Option<(Vec3, Vec3)> {
    let first = points.first()?;
    Some(points.iter().fold((*first, *first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
}

impl Transformable for OrientedPointCloud {
    fn transformed(&self, t: &RigidTransform) -> Self {
        OrientedPointCloud {
            points: self.points.iter().map(|p| t.apply_point(p)).collect(),
            normals: self.normals.iter().map(|n| t.apply_vector(n)).collect(),
        }
    }
}

/// Isotropic similarity `p ↦ (p − center) / scale` mapping a cloud into `[−1, 1]³`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationConstants {
    pub center: [f64; 3],
    pub scale: f64,
}

impl NormalizationConstants {
    pub fn new(center: Vec3, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidInput(format!("normalization scale {scale} must be positive")));
        }
        Ok(NormalizationConstants {
            center: center.into(),
            scale,
        })
    }

    pub fn identity() -> Self {
        NormalizationConstants {
            center: [0.0; 3],
            scale: 1.0,
        }
    }

    pub fn center(&self) -> Vec3 {
        Vec3::from(self.center)
    }

    #[inline]
    pub fn normalize(&self, p: &Vec3) -> Vec3 {
        (p - self.center()) / self.scale
    }

    #[inline]
    pub fn denormalize(&self, p: &Vec3) -> Vec3 {
        p * self.scale + self.center()
    }

    pub fn normalize_cloud(&self, c: &OrientedPointCloud) -> OrientedPointCloud {
        OrientedPointCloud {
            points: c.points.iter().map(|p| self.normalize(p)).collect(),
            normals: c.normals.clone(),
        }
    }

    pub fn denormalize_cloud(&self, c: &OrientedPointCloud) -> OrientedPointCloud {
        OrientedPointCloud {
            points: c.points.iter().map(|p| self.denormalize(p)).collect(),
            normals: c.normals.clone(),
        }
    }

    /// Constants equivalent to applying `self` and then `inner`.
    pub fn then(&self, inner: &NormalizationConstants) -> NormalizationConstants {
        // inner(self(p)) = ((p − c1)/s1 − c2)/s2 = (p − (c1 + s1·c2)) / (s1·s2)
        NormalizationConstants {
            center: (self.center() + inner.center() * self.scale).into(),
            scale: self.scale * inner.scale,
        }
    }
}

/// Default lower bound on the normalization scale for degenerate clouds.
pub const MIN_NORMALIZATION_SCALE: f64 = 1e-6;

/// Maps a cloud into `[−1, 1]³`: center at the bounding-box center, one
/// isotropic scale equal to half the largest box extent.
pub fn normalize_to_unit_box(
    cloud: &OrientedPointCloud,
) -> Result<(OrientedPointCloud, NormalizationConstants)> {
    normalize_to_unit_box_with(cloud, MIN_NORMALIZATION_SCALE)
}

pub fn normalize_to_unit_box_with(
    cloud: &OrientedPointCloud,
    min_scale: f64,
) -> Result<(OrientedPointCloud, NormalizationConstants)> {
    let (lo, hi) = cloud.bounds().ok_or(Error::Empty("point cloud"))?;
    if !(lo.iter().chain(hi.iter()).all(|v| v.is_finite())) {
        return Err(Error::NonFinite("point cloud coordinates".into()));
    }
    let center = (lo + hi) * 0.5;
    let scale = (0.5 * (hi - lo).max()).max(min_scale);
    let k = NormalizationConstants::new(center, scale)?;
    Ok((k.normalize_cloud(cloud), k))
}

/// Exactly `n_target` points: a seeded random subset when the cloud is larger,
/// otherwise every original point plus seeded random duplicates.
pub fn resample_to_fixed_size(
    cloud: &OrientedPointCloud,
    n_target: usize,
    seed: u64,
) -> Result<OrientedPointCloud> {
    if cloud.is_empty() {
        return Err(Error::Empty("point cloud"));
    }
    if n_target == 0 {
        return Err(Error::InvalidInput("resample target must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cloud.len();
    let idx: Vec<usize> = if n >= n_target {
        let mut picked = sample(&mut rng, n, n_target).into_vec();
        picked.sort_unstable();
        picked
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.extend((0..n_target - n).map(|_| rng.random_range(0..n)));
        all
    };
    Ok(cloud.permuted(&idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cloud_of(points: &[[f64; 3]]) -> OrientedPointCloud {
        OrientedPointCloud::from_points(points.iter().map(|p| Vec3::from(*p)).collect())
    }

    #[test]
    fn cube_span_maps_to_unit_box() {
        let c = cloud_of(&[[2.0, 2.0, 2.0], [4.0, 4.0, 4.0], [3.0, 2.5, 4.0]]);
        let (n, k) = normalize_to_unit_box(&c).unwrap();
        assert_eq!(k.center, [3.0, 3.0, 3.0]);
        assert_eq!(k.scale, 1.0);
        assert_eq!(n.points[0], Vec3::new(-1.0, -1.0, -1.0));
        assert_eq!(n.points[1], Vec3::new(1.0, 1.0, 1.0));
    }

    #[test]
    fn single_point_uses_scale_floor() {
        let c = cloud_of(&[[0.5, -2.0, 7.0]]);
        let (n, k) = normalize_to_unit_box(&c).unwrap();
        assert_eq!(k.scale, MIN_NORMALIZATION_SCALE);
        assert_eq!(n.points[0], Vec3::zeros());
    }

    #[test]
    fn empty_cloud_errors() {
        let c = OrientedPointCloud::default();
        assert!(matches!(normalize_to_unit_box(&c), Err(Error::Empty(_))));
        assert!(matches!(resample_to_fixed_size(&c, 4, 0), Err(Error::Empty(_))));
    }

    #[test]
    fn downsample_is_subset() {
        let c = cloud_of(&(0..10).map(|i| [i as f64, 0.0, 0.0]).collect::<Vec<_>>());
        let r = resample_to_fixed_size(&c, 4, 9).unwrap();
        assert_eq!(r.len(), 4);
        let mut xs: Vec<f64> = r.points.iter().map(|p| p.x).collect();
        xs.dedup();
        assert_eq!(xs.len(), 4);
        assert!(r.points.iter().all(|p| c.points.contains(p)));
    }

    #[test]
    fn upsample_keeps_all_originals() {
        let c = cloud_of(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let r = resample_to_fixed_size(&c, 8, 1).unwrap();
        assert_eq!(r.len(), 8);
        assert_eq!(&r.points[..3], &c.points[..]);
        assert!(r.points[3..].iter().all(|p| c.points.contains(p)));
        assert_eq!(r, resample_to_fixed_size(&c, 8, 1).unwrap());
    }

    #[test]
    fn composition_of_constants() {
        let a = NormalizationConstants::new(Vec3::new(1.0, 2.0, 3.0), 2.0).unwrap();
        let b = NormalizationConstants::new(Vec3::new(0.0, 0.0, 0.5), 1.5).unwrap();
        let p = Vec3::new(0.3, -0.7, 4.0);
        let direct = b.normalize(&a.normalize(&p));
        assert!((a.then(&b).normalize(&p) - direct).norm() < 1e-12);
    }

    fn arb_cloud() -> impl Strategy<Value = Vec<[f64; 3]>> {
        prop::collection::vec(prop::array::uniform3(-50.0f64..50.0), 2..40)
    }

    proptest! {
        #[test]
        fn normalize_round_trip(pts in arb_cloud()) {
            let c = cloud_of(&pts);
            let (n, k) = normalize_to_unit_box(&c).unwrap();
            for q in &n.points {
                prop_assert!(q.iter().all(|v| v.abs() <= 1.0 + 1e-12));
            }
            let back = k.denormalize_cloud(&n);
            for (a, b) in back.points.iter().zip(&c.points) {
                prop_assert!((a - b).norm() < 1e-9);
            }
        }

        #[test]
        fn resample_count_and_membership(pts in arb_cloud(), n in 1usize..64, seed in 0u64..1000) {
            let c = cloud_of(&pts);
            let r = resample_to_fixed_size(&c, n, seed).unwrap();
            prop_assert_eq!(r.len(), n);
            prop_assert!(r.points.iter().all(|p| c.points.contains(p)));
            if n >= c.len() {
                prop_assert!(c.points.iter().all(|p| r.points.contains(p)));
            }
        }

        #[test]
        fn rigid_transform_preserves_distances(
            pts in arb_cloud(),
            axis in prop::array::uniform3(-1.0f64..1.0),
            angle in -3.2f64..3.2,
            t in prop::array::uniform3(-10.0f64..10.0),
        ) {
            prop_assume!(Vec3::from(axis).norm() > 1e-3);
            let tf = RigidTransform::from_axis_angle(Vec3::from(axis), angle)
                .compose(&RigidTransform::translation(Vec3::from(t)));
            let c = cloud_of(&pts);
            let m = c.transformed(&tf);
            for i in 0..c.len() {
                for j in 0..c.len() {
                    let d0 = (c.points[i] - c.points[j]).norm();
                    let d1 = (m.points[i] - m.points[j]).norm();
                    prop_assert!((d0 - d1).abs() < 1e-9);
                }
            }
            let back = m.transformed(&tf.inverse());
            for (a, b) in back.points.iter().zip(&c.points) {
                prop_assert!((a - b).norm() < 1e-9);
            }
        }
    }
}
