//! Point-set and mesh comparison metrics.
//!
//! Chamfer distances use squared Euclidean nearest-neighbour distances, the
//! bidirectional form being the sum of the two directional means. F-score
//! compares unsquared distances against the threshold with a strict `<`.
//! Nearest neighbours come from a kd-tree and are exact, so every value here
//! equals the exhaustive computation bit for bit: per-point distances are
//! collected in input order and summed sequentially.

mod kdtree;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bounds_of, Vec3};
use crate::sdf::{sample_surface_points, TriangleMesh};

pub use kdtree::KdTree;

/// F-score threshold used for reporting.
pub const DEFAULT_F_SCORE_TAU: f64 = 0.005;
/// Surface samples drawn per mesh when comparing meshes.
pub const DEFAULT_METRIC_SAMPLES: usize = 10_000;

fn nonempty(points: &[Vec3], what: &'static str) -> Result<()> {
    if points.is_empty() {
        Err(Error::Empty(what))
    } else {
        Ok(())
    }
}

/// Squared distance from each query to its nearest point in `tree`.
fn nearest_sq(queries: &[Vec3], tree: &KdTree) -> Vec<f64> {
    queries
        .par_iter()
        .with_min_len(256)
        .map(|q| tree.nearest(q).expect("tree is non-empty").1)
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean over `anchor` of the squared distance to the nearest point of `target`.
pub fn one_sided_chamfer(anchor: &[Vec3], target: &[Vec3]) -> Result<f64> {
    nonempty(anchor, "anchor point set")?;
    nonempty(target, "target point set")?;
    Ok(mean(&nearest_sq(anchor, &KdTree::new(target))))
}

/// `one_sided(a→b) + one_sided(b→a)`.
pub fn chamfer_distance(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    nonempty(a, "first point set")?;
    nonempty(b, "second point set")?;
    let ab = mean(&nearest_sq(a, &KdTree::new(b)));
    let ba = mean(&nearest_sq(b, &KdTree::new(a)));
    Ok(ab + ba)
}

/// Precision and recall at threshold `tau`.
pub fn precision_recall(gen: &[Vec3], gt: &[Vec3], tau: f64) -> Result<(f64, f64)> {
    nonempty(gen, "generated point set")?;
    nonempty(gt, "reference point set")?;
    if !(tau > 0.0) {
        return Err(Error::InvalidInput(format!("F-score threshold must be positive, got {tau}")));
    }
    let frac = |q: &[Vec3], t: &[Vec3]| {
        let d = nearest_sq(q, &KdTree::new(t));
        d.iter().filter(|&&s| s.sqrt() < tau).count() as f64 / d.len() as f64
    };
    Ok((frac(gen, gt), frac(gt, gen)))
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f_score(gen: &[Vec3], gt: &[Vec3], tau: f64) -> Result<f64> {
    let (p, r) = precision_recall(gen, gt, tau)?;
    Ok(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 })
}

/// Intersection over union of two axis-aligned boxes given as `(min, max)`.
pub fn box_iou(a: (Vec3, Vec3), b: (Vec3, Vec3)) -> f64 {
    let vol = |lo: Vec3, hi: Vec3| (0..3).map(|k| (hi[k] - lo[k]).max(0.0)).product::<f64>();
    let inter = vol(a.0.sup(&b.0), a.1.inf(&b.1));
    let union = vol(a.0, a.1) + vol(b.0, b.1) - inter;
    if union > 0.0 {
        (inter / union).clamp(0.0, 1.0)
    } else if a == b {
        1.0
    } else {
        0.0
    }
}

/// IoU of the vertex bounding boxes of two meshes.
pub fn iou_b(gen: &TriangleMesh, gt: &TriangleMesh) -> Result<f64> {
    let a = bounds_of(&gen.vertices).ok_or(Error::Empty("generated mesh"))?;
    let b = bounds_of(&gt.vertices).ok_or(Error::Empty("reference mesh"))?;
    if gen.is_empty() || gt.is_empty() {
        return Err(Error::Empty("mesh faces"));
    }
    Ok(box_iou(a, b))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub samples: usize,
    pub tau: f64,
    pub seed: u64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            samples: DEFAULT_METRIC_SAMPLES,
            tau: DEFAULT_F_SCORE_TAU,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Bidirectional squared Chamfer distance.
    pub cd: f64,
    pub f_score: f64,
    pub iou_b: f64,
    /// Anchor → generated surface, when an anchor set was supplied.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub one_sided_cd: Option<f64>,
    pub samples: usize,
    pub tau: f64,
    pub convention: String,
}

/// Compares `gen` against `gt` using area-weighted surface samples. With an
/// `anchor` set (e.g. the conditioning partial cloud) the report also holds
/// the one-sided Chamfer distance from the anchor to the generated surface.
pub fn evaluate_meshes(
    gen: &TriangleMesh,
    gt: &TriangleMesh,
    anchor: Option<&[Vec3]>,
    cfg: &MetricConfig,
) -> Result<MetricReport> {
    let a = sample_surface_points(gen, cfg.samples, cfg.seed)?.points;
    let b = sample_surface_points(gt, cfg.samples, cfg.seed)?.points;
    Ok(MetricReport {
        cd: chamfer_distance(&a, &b)?,
        f_score: f_score(&a, &b, cfg.tau)?,
        iou_b: iou_b(gen, gt)?,
        one_sided_cd: anchor.map(|p| one_sided_chamfer(p, &a)).transpose()?,
        samples: cfg.samples,
        tau: cfg.tau,
        convention: "cd = mean sq. NN distance both ways, summed; f-score uses unsquared distance < tau".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_one_sided(a: &[Vec3], b: &[Vec3]) -> f64 {
        let mut s = 0.0;
        for p in a {
            let mut best = f64::INFINITY;
            for q in b {
                best = best.min(kdtree::sq_dist(p, q));
            }
            s += best;
        }
        s / a.len() as f64
    }

    fn random_set(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect()
    }

    #[test]
    fn two_point_examples() {
        let o = [Vec3::zeros()];
        assert_eq!(chamfer_distance(&o, &[Vec3::new(1.0, 0.0, 0.0)]).unwrap(), 2.0);
        assert_eq!(one_sided_chamfer(&o, &[Vec3::new(0.0, 0.0, 2.0)]).unwrap(), 4.0);
        assert!(chamfer_distance(&[], &o).is_err());
        assert!(one_sided_chamfer(&o, &[]).is_err());
    }

    #[test]
    fn small_random_sets_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_set(&mut rng, 5);
        let b = random_set(&mut rng, 7);
        let oracle = brute_one_sided(&a, &b) + brute_one_sided(&b, &a);
        assert!((chamfer_distance(&a, &b).unwrap() - oracle).abs() < 1e-12);
        assert_eq!(one_sided_chamfer(&a, &b).unwrap(), brute_one_sided(&a, &b));
    }

    #[test]
    fn subset_anchor_has_zero_one_sided() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = random_set(&mut rng, 50);
        assert_eq!(one_sided_chamfer(&b[10..20], &b).unwrap(), 0.0);
        assert_eq!(chamfer_distance(&b, &b).unwrap(), 0.0);
    }

    #[test]
    fn f_score_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_set(&mut rng, 30);
        assert_eq!(f_score(&a, &a, 0.005).unwrap(), 1.0);
        let far: Vec<Vec3> = a.iter().map(|p| p + Vec3::new(10.0, 0.0, 0.0)).collect();
        assert_eq!(f_score(&a, &far, 0.005).unwrap(), 0.0);
        // gen = first half of gt: precision 1, recall 0.5
        let gt: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let (p, r) = precision_recall(&gt[..5], &gt, 0.1).unwrap();
        assert_eq!((p, r), (1.0, 0.5));
        assert!((f_score(&gt[..5], &gt, 0.1).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(f_score(&a, &a, 0.0).is_err());
    }

    #[test]
    fn box_iou_cases() {
        let unit = (Vec3::zeros(), Vec3::repeat(1.0));
        assert_eq!(box_iou(unit, unit), 1.0);
        let shifted = (Vec3::new(0.5, 0.0, 0.0), Vec3::new(1.5, 1.0, 1.0));
        assert!((box_iou(unit, shifted) - 1.0 / 3.0).abs() < 1e-15);
        let apart = (Vec3::repeat(2.0), Vec3::repeat(3.0));
        assert_eq!(box_iou(unit, apart), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn chamfer_is_symmetric_and_exact(seed in any::<u64>(), n in 1usize..300, m in 1usize..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_set(&mut rng, n);
            let b = random_set(&mut rng, m);
            prop_assert_eq!(chamfer_distance(&a, &b).unwrap(), chamfer_distance(&b, &a).unwrap());
            prop_assert_eq!(one_sided_chamfer(&a, &b).unwrap(), brute_one_sided(&a, &b));
        }

        #[test]
        fn f_score_rigid_invariant(seed in any::<u64>(), angle in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_set(&mut rng, 80);
            let b: Vec<Vec3> = a.iter().map(|p| p + Vec3::new(rng.random::<f64>() * 0.1, 0.0, 0.0)).collect();
            let t = RigidTransform::from_axis_angle(Vec3::new(0.3, 1.0, -0.2), angle)
                .compose(&RigidTransform::translation(Vec3::new(0.4, -2.0, 1.0)));
            let ta: Vec<Vec3> = a.iter().map(|p| t.apply_point(p)).collect();
            let tb: Vec<Vec3> = b.iter().map(|p| t.apply_point(p)).collect();
            let f0 = f_score(&a, &b, 0.05).unwrap();
            let f1 = f_score(&ta, &tb, 0.05).unwrap();
            prop_assert!((f0 - f1).abs() < 1e-9 || near_threshold(&a, &b, 0.05));
        }

        #[test]
        fn iou_in_unit_interval(lo in prop::array::uniform6(-1.0f64..1.0), ext in prop::array::uniform6(0.01f64..1.0)) {
            let a = (Vec3::new(lo[0], lo[1], lo[2]), Vec3::new(lo[0] + ext[0], lo[1] + ext[1], lo[2] + ext[2]));
            let b = (Vec3::new(lo[3], lo[4], lo[5]), Vec3::new(lo[3] + ext[3], lo[4] + ext[4], lo[5] + ext[5]));
            let v = box_iou(a, b);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(box_iou(a, a), 1.0);
        }
    }

    /// A rigid motion can move a distance across the threshold only by
    /// rounding; such cases are excluded.
    fn near_threshold(a: &[Vec3], b: &[Vec3], tau: f64) -> bool {
        a.iter()
            .chain(b)
            .any(|p| a.iter().chain(b).any(|q| ((p - q).norm() - tau).abs() < 1e-12))
    }
}
