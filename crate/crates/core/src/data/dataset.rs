use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::augment::{corrupt_condition, occlusion_augment, AugmentationConfig, AugmentationFlags, ConditionInput};
use super::frame::{conditioning_cloud, observation_frame, FramingConfig};
use super::render::{align_mesh_to_view, random_views, render_with_pose, RenderConfig, ViewSpec};
use super::shapes::{CanonicalShape, PoseRecord};
use crate::error::{Error, Result};
use crate::geometry::{
    is_valid_depth, CameraIntrinsics, DepthMap, NormalizationConstants, OrientedPointCloud, RigidTransform, Vec3,
};
use crate::image::{GrayImage, Mask};
use crate::io;
use crate::sdf::{AnalyticSdf, TriangleMesh};

pub const MANIFEST_FILE: &str = "manifest.json";
const SAMPLE_FILES: [&str; 7] = [
    "image.png",
    "mask.png",
    "depth.pfm",
    "intrinsics.json",
    "gt.obj",
    "partial.ply",
    "norm.json",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// 1: clean renders. 2: occlusion and conditioning corruptions.
    pub stage: u8,
    pub views_per_shape: usize,
    pub render: RenderConfig,
    pub augment: AugmentationConfig,
    pub framing: FramingConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            stage: 1,
            views_per_shape: 24,
            render: RenderConfig::default(),
            augment: AugmentationConfig::default(),
            framing: FramingConfig::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.stage == 1 || self.stage == 2) {
            return Err(Error::Config {
                key: "dataset.stage".into(),
                message: format!("must be 1 or 2, got {}", self.stage),
            });
        }
        if self.views_per_shape == 0 {
            return Err(Error::Config {
                key: "dataset.views_per_shape".into(),
                message: "must be at least 1".into(),
            });
        }
        if self.render.image_size < 3 {
            return Err(Error::Config {
                key: "render.image_size".into(),
                message: "must be at least 3".into(),
            });
        }
        self.augment.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    /// Sample directory relative to the dataset root.
    pub dir: String,
    pub seed: u64,
    pub shape_id: String,
    pub view_id: usize,
    pub view: ViewSpec,
    pub flags: AugmentationFlags,
    pub pose: PoseRecord,
    pub files: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    /// FNV-1a of the configuration, seed and shape list, hex encoded.
    pub config_hash: String,
    pub config: DatasetConfig,
    pub samples: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn read(root: impl AsRef<Path>) -> Result<Self> {
        io::read_json(root.as_ref().join(MANIFEST_FILE))
    }

    /// Checks that every referenced file exists and that seeds are unique.
    pub fn verify(&self, root: impl AsRef<Path>) -> Result<()> {
        let mut seeds: Vec<u64> = self.samples.iter().map(|s| s.seed).collect();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Format("duplicate sample seeds in manifest".into()));
        }
        for s in &self.samples {
            for f in &s.files {
                let p = root.as_ref().join(&s.dir).join(f);
                if !p.is_file() {
                    return Err(Error::Format(format!("missing sample file {}", p.display())));
                }
            }
        }
        Ok(())
    }
}

/// One observation with its camera-frame target, both in the generation frame.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub id: String,
    pub image: GrayImage,
    /// Visible pixels of the target object.
    pub mask: Mask,
    pub depth: DepthMap,
    pub intrinsics: CameraIntrinsics,
    /// Ground truth aligned to the camera, in the generation frame
    /// (`norm_constants`).
    pub gt_mesh_camera_frame: TriangleMesh,
    pub partial_cloud: OrientedPointCloud,
    pub norm_constants: NormalizationConstants,
    pub flags: AugmentationFlags,
    pub pose: PoseRecord,
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut bytes = Vec::with_capacity(24);
    for v in [seed, a, b] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fnv1a(&bytes)
}

/// Renders `views_per_shape` random views of every shape, writes one sample
/// directory per view and finally `manifest.json`.
pub fn build_dataset(
    shapes: &[Arc<CanonicalShape>],
    cfg: &DatasetConfig,
    out_dir: impl AsRef<Path>,
    seed: u64,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    if shapes.is_empty() {
        return Err(Error::Empty("shape library"));
    }
    let out = out_dir.as_ref();
    std::fs::create_dir_all(out).map_err(|e| Error::from(e).at(out))?;

    let mut jobs = Vec::new();
    for (si, shape) in shapes.iter().enumerate() {
        let views = random_views(cfg.views_per_shape, derive_seed(seed, si as u64, u64::MAX), &cfg.render)?;
        for (vi, view) in views.into_iter().enumerate() {
            jobs.push((shape.clone(), vi, view, derive_seed(seed, si as u64, vi as u64)));
        }
    }
    let samples = jobs
        .par_iter()
        .map(|(shape, vi, view, s)| {
            let sample = render_training_sample(shape, *vi, view, cfg, *s)?;
            let dir = sample.id.clone();
            save_sample(&out.join(&dir), &sample)?;
            Ok(SampleRecord {
                id: sample.id,
                dir,
                seed: *s,
                shape_id: shape.id.clone(),
                view_id: *vi,
                view: *view,
                flags: sample.flags,
                pose: sample.pose,
                files: SAMPLE_FILES.iter().map(|f| f.to_string()).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let ids: Vec<&str> = shapes.iter().map(|s| s.id.as_str()).collect();
    let hash_input = serde_json::to_vec(&(cfg, seed, &ids))?;
    let manifest = DatasetManifest {
        seed,
        config_hash: format!("{:016x}", fnv1a(&hash_input)),
        config: cfg.clone(),
        samples,
    };
    manifest.verify(out)?;
    io::write_json(out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// A small sphere between the camera and the object, offset sideways so it
/// covers part of the silhouette.
fn random_occluder<R: Rng>(pose: &RigidTransform, cfg: &RenderConfig, rng: &mut R) -> AnalyticSdf {
    let depth = cfg.radius * rng.random_range(0.35..0.6);
    let half_angle = (cfg.fov_deg.to_radians() / 2.0).tan() * 0.45;
    let extent = half_angle * depth;
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    let offset = extent * rng.random_range(0.4..0.9);
    let center = Vec3::new(offset * phi.cos(), offset * phi.sin(), depth);
    let radius = extent * rng.random_range(0.25..0.5);
    AnalyticSdf::sphere(radius).translated(pose.apply_point(&center))
}

/// Renders and corrupts one view of `shape` as [`build_dataset`] does, without
/// writing anything.
pub fn render_training_sample(
    shape: &Arc<CanonicalShape>,
    view_id: usize,
    view: &ViewSpec,
    cfg: &DatasetConfig,
    seed: u64,
) -> Result<TrainingSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = cfg.render.intrinsics()?;
    let pose = view.camera_to_world()?;
    let (clean, image, _) = render_with_pose(&shape.sdf, &k, &pose, &cfg.render.trace)?;
    let id = format!("{}_{view_id:03}", shape.id);

    let (mut depth, k_cond, pose, mut image, mut flags) = if cfg.stage == 1 {
        (clean, k, pose, image, AugmentationFlags::default())
    } else {
        let input = ConditionInput {
            depth: &clean,
            intrinsics: &k,
            camera_to_world: &pose,
            look_at_target: Vec3::from(view.target),
            scene: Some(&shape.sdf),
            trace: cfg.render.trace.clone(),
        };
        let c = corrupt_condition(&input, &cfg.augment, rng.random())?;
        let image = if c.flags.lookat_offset.is_some() {
            render_with_pose(&shape.sdf, &k, &c.camera_to_world, &cfg.render.trace)?.1
        } else {
            image
        };
        (c.depth, c.intrinsics, c.camera_to_world, image, c.flags)
    };

    let occlude = cfg.stage == 2 && rng.random::<f64>() < cfg.augment.occlusion_prob;
    let occluder = random_occluder(&pose, &cfg.render, &mut rng);
    if occlude {
        let (fg_depth, fg_image, fg_mask) = render_with_pose(&occluder, &k, &pose, &cfg.render.trace)?;
        let occluded = occlusion_augment(&fg_depth, &fg_mask, &depth)?;
        if occluded.valid_count() >= depth.valid_count() / 4 && conditioning_cloud(&occluded, &k_cond, None).is_ok() {
            for i in 0..image.data.len() {
                let bg = depth.values[i];
                if fg_mask.data[i] && (!is_valid_depth(bg) || fg_depth.values[i] < bg) {
                    image.data[i] = fg_image.data[i];
                }
            }
            depth = occluded;
            flags.occluded = true;
        }
    }

    let mask = Mask::new(depth.width, depth.height, depth.valid_mask())?;
    let partial_camera = conditioning_cloud(&depth, &k_cond, None)?;
    let frame = observation_frame(&partial_camera, &cfg.framing)?;
    let gt = align_mesh_to_view(&shape.mesh, &pose).map_vertices(|v| frame.normalize(v));
    Ok(TrainingSample {
        id,
        image,
        mask,
        depth,
        intrinsics: k_cond,
        gt_mesh_camera_frame: gt,
        partial_cloud: frame.normalize_cloud(&partial_camera),
        norm_constants: frame,
        flags,
        pose: PoseRecord {
            shape_id: shape.id.clone(),
            shape: shape.sdf.clone(),
            camera_to_world: pose,
            frame,
        },
    })
}

fn save_sample(dir: &Path, s: &TrainingSample) -> Result<()> {
    io::write_png(dir.join("image.png"), &s.image)?;
    io::write_mask(dir.join("mask.png"), &s.mask)?;
    io::write_pfm(dir.join("depth.pfm"), &s.depth)?;
    io::write_json(dir.join("intrinsics.json"), &s.intrinsics)?;
    io::write_obj(dir.join("gt.obj"), &s.gt_mesh_camera_frame)?;
    io::write_ply(dir.join("partial.ply"), &s.partial_cloud)?;
    io::write_json(dir.join("norm.json"), &s.norm_constants)
}

/// Reads a sample written by [`build_dataset`].
pub fn load_sample(root: impl AsRef<Path>, record: &SampleRecord) -> Result<TrainingSample> {
    let dir = root.as_ref().join(&record.dir);
    Ok(TrainingSample {
        id: record.id.clone(),
        image: io::read_png(dir.join("image.png"))?,
        mask: io::read_mask(dir.join("mask.png"))?,
        depth: io::read_pfm(dir.join("depth.pfm"))?,
        intrinsics: io::read_json(dir.join("intrinsics.json"))?,
        gt_mesh_camera_frame: io::read_obj(dir.join("gt.obj"))?,
        partial_cloud: io::read_ply(dir.join("partial.ply"))?,
        norm_constants: io::read_json(dir.join("norm.json"))?,
        flags: record.flags.clone(),
        pose: record.pose.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::shapes::{library_sdf, LIBRARY_NAMES};
    use crate::data::PosedShape;

    fn small_library(n: usize) -> Vec<Arc<CanonicalShape>> {
        LIBRARY_NAMES[..n]
            .iter()
            .map(|s| Arc::new(CanonicalShape::with_resolution(*s, library_sdf(s).unwrap(), 32).unwrap()))
            .collect()
    }

    fn small_config(stage: u8) -> DatasetConfig {
        DatasetConfig {
            stage,
            render: RenderConfig {
                image_size: 20,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn dir_bytes(root: &Path, m: &DatasetManifest) -> Vec<Vec<u8>> {
        let mut out = vec![io::read_all(root.join(MANIFEST_FILE)).unwrap()];
        for s in &m.samples {
            for f in &s.files {
                out.push(io::read_all(root.join(&s.dir).join(f)).unwrap());
            }
        }
        out
    }

    #[test]
    fn stage_one_counts_and_reproducibility() {
        let lib = small_library(3);
        let cfg = small_config(1);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let m = build_dataset(&lib, &cfg, a.path(), 11).unwrap();
        assert_eq!(m.samples.len(), 72);
        assert!(m.samples.iter().all(|s| s.flags.is_clean()));
        let m2 = build_dataset(&lib, &cfg, b.path(), 11).unwrap();
        assert_eq!(m, m2);
        assert_eq!(dir_bytes(a.path(), &m), dir_bytes(b.path(), &m2));
        assert_eq!(DatasetManifest::read(a.path()).unwrap(), m);

        let s = load_sample(a.path(), &m.samples[5]).unwrap();
        assert_eq!(s.partial_cloud.len(), s.mask.count() - border_pixels(&s.depth));
        // clean partial points lie on the exact posed surface
        let posed = PosedShape {
            shape: lib[0].clone(),
            camera_to_world: s.pose.camera_to_world,
            frame: s.norm_constants,
        };
        let sdf = posed.sdf();
        let tol = 2.0 * cfg.render.trace.tolerance / s.norm_constants.scale;
        for p in &s.partial_cloud.points {
            assert!(sdf.eval(p).abs() < tol, "{}", sdf.eval(p));
        }
        // partial cloud within the unit-ish box
        let (lo, hi) = s.partial_cloud.bounds().unwrap();
        assert!(lo.amin() >= -1.0 && hi.amax() <= 1.0);
    }

    fn border_pixels(d: &DepthMap) -> usize {
        let mut n = 0;
        for v in 0..d.height {
            for u in 0..d.width {
                let interior = u > 0 && v > 0 && u + 1 < d.width && v + 1 < d.height;
                let ok = interior
                    && [(u - 1, v), (u + 1, v), (u, v - 1), (u, v + 1)]
                        .iter()
                        .all(|(x, y)| d.is_valid(*x, *y));
                if d.is_valid(u, v) && !ok {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn stage_two_occlusion_frequency() {
        let lib = small_library(4);
        let mut cfg = small_config(2);
        cfg.render.image_size = 24;
        cfg.views_per_shape = 100;
        cfg.augment = AugmentationConfig {
            occlusion_prob: 0.5,
            ..AugmentationConfig::none()
        };
        let dir = tempfile::tempdir().unwrap();
        let m = build_dataset(&lib, &cfg, dir.path(), 2).unwrap();
        assert_eq!(m.samples.len(), 400);
        let k = m.samples.iter().filter(|s| s.flags.occluded).count() as f64;
        let sd = (400.0f64 * 0.25).sqrt();
        assert!((k - 200.0).abs() <= 3.0 * sd, "{k}");
    }

    #[test]
    fn invalid_configs_name_their_key() {
        let mut cfg = DatasetConfig::default();
        cfg.stage = 3;
        match cfg.validate() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "dataset.stage"),
            other => panic!("{other:?}"),
        }
        cfg.stage = 2;
        cfg.augment.fov_prob = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }
}
