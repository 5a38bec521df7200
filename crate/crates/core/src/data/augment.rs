use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{is_valid_depth, CameraIntrinsics, DepthMap, RigidTransform, Vec3};
use crate::image::Mask;
use crate::sdf::{raycast, ScalarField, TraceConfig};

/// Probabilities and magnitudes of the conditioning corruptions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    /// Chance a stage-2 sample gets a foreground occluder.
    pub occlusion_prob: f64,
    /// Chance of multiplicative Gaussian depth noise.
    pub depth_noise_prob: f64,
    /// Standard deviation of the depth ratio noise.
    pub depth_noise_sigma: f64,
    /// Chance of the structured "estimated depth" corruption instead.
    pub estimated_depth_prob: f64,
    /// Peak amplitude of the low-frequency multiplicative depth field.
    pub field_amplitude: f64,
    /// Fraction of silhouette pixels turned into flying points.
    pub flying_fraction: f64,
    pub fov_prob: f64,
    pub fov_range: [f64; 2],
    pub lookat_prob: f64,
    /// Look-at target offsets are uniform in `[−r, r]³`.
    pub lookat_range: f64,
    /// Classifier-free guidance condition drop rate.
    pub drop_rate: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            occlusion_prob: 0.3,
            depth_noise_prob: 0.5,
            depth_noise_sigma: 0.03,
            estimated_depth_prob: 0.3,
            field_amplitude: 0.02,
            flying_fraction: 0.005,
            fov_prob: 0.1,
            fov_range: [0.9, 1.1],
            lookat_prob: 0.1,
            lookat_range: 0.1,
            drop_rate: 0.1,
        }
    }
}

impl AugmentationConfig {
    /// Every corruption disabled.
    pub fn none() -> Self {
        AugmentationConfig {
            occlusion_prob: 0.0,
            depth_noise_prob: 0.0,
            estimated_depth_prob: 0.0,
            fov_prob: 0.0,
            lookat_prob: 0.0,
            ..Default::default()
        }
    }

    /// Only multiplicative Gaussian depth noise, applied with probability `prob`.
    pub fn gaussian_only(sigma: f64, prob: f64) -> Self {
        AugmentationConfig {
            depth_noise_prob: prob,
            depth_noise_sigma: sigma,
            ..Self::none()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("occlusion_prob", self.occlusion_prob),
            ("depth_noise_prob", self.depth_noise_prob),
            ("estimated_depth_prob", self.estimated_depth_prob),
            ("fov_prob", self.fov_prob),
            ("lookat_prob", self.lookat_prob),
            ("drop_rate", self.drop_rate),
            ("flying_fraction", self.flying_fraction),
        ];
        for (k, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config {
                    key: format!("augment.{k}"),
                    message: format!("probability {p} outside [0, 1]"),
                });
            }
        }
        let nonneg = [
            ("depth_noise_sigma", self.depth_noise_sigma),
            ("field_amplitude", self.field_amplitude),
            ("lookat_range", self.lookat_range),
        ];
        for (k, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config {
                    key: format!("augment.{k}"),
                    message: format!("must be a finite value ≥ 0, got {v}"),
                });
            }
        }
        let [a, b] = self.fov_range;
        if !(a > 0.0 && a <= b && b.is_finite()) {
            return Err(Error::Config {
                key: "augment.fov_range".into(),
                message: format!("invalid range [{a}, {b}]"),
            });
        }
        Ok(())
    }
}

/// Which corruptions a sample received.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentationFlags {
    pub occluded: bool,
    pub depth_noise: bool,
    pub estimated_depth: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fov_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lookat_offset: Option<[f64; 3]>,
}

impl AugmentationFlags {
    pub fn is_clean(&self) -> bool {
        *self == AugmentationFlags::default()
    }
}

/// Invalidates background pixels hidden by a nearer foreground object.
pub fn occlusion_augment(fg_depth: &DepthMap, fg_mask: &Mask, bg_depth: &DepthMap) -> Result<DepthMap> {
    if fg_depth.width != bg_depth.width
        || fg_depth.height != bg_depth.height
        || fg_mask.width != bg_depth.width
        || fg_mask.height != bg_depth.height
    {
        return Err(Error::Shape(format!(
            "occluder {}×{} / mask {}×{} vs background {}×{}",
            fg_depth.width, fg_depth.height, fg_mask.width, fg_mask.height, bg_depth.width, bg_depth.height
        )));
    }
    let mut out = bg_depth.clone();
    for (i, d) in out.values.iter_mut().enumerate() {
        let f = fg_depth.values[i];
        if fg_mask.data[i] && is_valid_depth(f) && is_valid_depth(*d) && f < *d {
            *d = DepthMap::INVALID;
        }
    }
    Ok(out)
}

/// What [`corrupt_condition`] needs besides the configuration.
pub struct ConditionInput<'a> {
    pub depth: &'a DepthMap,
    pub intrinsics: &'a CameraIntrinsics,
    pub camera_to_world: &'a RigidTransform,
    pub look_at_target: Vec3,
    /// Scene to re-render for look-at offsets; without it that corruption is skipped.
    pub scene: Option<&'a (dyn ScalarField + Sync)>,
    pub trace: TraceConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorruptedCondition {
    pub depth: DepthMap,
    pub intrinsics: CameraIntrinsics,
    pub camera_to_world: RigidTransform,
    pub flags: AugmentationFlags,
}

/// Applies the configured corruptions, each drawn independently from `seed`:
/// a look-at offset (re-rendering the scene), then either the structured
/// estimated-depth corruption or plain multiplicative Gaussian noise, then a
/// focal-length scale. With every probability at zero the input is returned
/// unchanged.
pub fn corrupt_condition(input: &ConditionInput<'_>, cfg: &AugmentationConfig, seed: u64) -> Result<CorruptedCondition> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flags = AugmentationFlags::default();
    let mut depth = input.depth.clone();
    let mut k = *input.intrinsics;
    let mut pose = *input.camera_to_world;

    let lookat = rng.random::<f64>() < cfg.lookat_prob;
    let r = cfg.lookat_range;
    let offset = Vec3::new(
        rng.random_range(-1.0..=1.0) * r,
        rng.random_range(-1.0..=1.0) * r,
        rng.random_range(-1.0..=1.0) * r,
    );
    if let (true, Some(scene)) = (lookat, input.scene) {
        let eye = *pose.translation_vector();
        pose = RigidTransform::look_at(eye, input.look_at_target + offset, Vec3::y())?;
        let hits = raycast(scene, &k, &pose, &input.trace)?;
        depth = DepthMap::new(
            k.width,
            k.height,
            hits.iter().map(|h| h.map_or(DepthMap::INVALID, |h| h.depth)).collect(),
        )?;
        flags.lookat_offset = Some(offset.into());
    }

    let estimated = rng.random::<f64>() < cfg.estimated_depth_prob;
    let noisy = rng.random::<f64>() < cfg.depth_noise_prob;
    let noise_seed: u64 = rng.random();
    if estimated {
        structured_noise(&mut depth, cfg, noise_seed);
        flags.estimated_depth = true;
    } else if noisy {
        gaussian_depth_noise(&mut depth, cfg.depth_noise_sigma, noise_seed);
        flags.depth_noise = true;
    }

    let fov = rng.random::<f64>() < cfg.fov_prob;
    let [lo, hi] = cfg.fov_range;
    let factor = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    if fov {
        k = CameraIntrinsics::new(k.fx * factor, k.fy * factor, k.cx, k.cy, k.width, k.height)?;
        flags.fov_scale = Some(factor);
    }

    Ok(CorruptedCondition {
        depth,
        intrinsics: k,
        camera_to_world: pose,
        flags,
    })
}

/// `d ↦ d·(1 + ε)`, `ε ~ N(0, σ²)` on every valid pixel.
pub fn gaussian_depth_noise(depth: &mut DepthMap, sigma: f64, seed: u64) {
    if sigma == 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, sigma).expect("finite sigma");
    for d in depth.values.iter_mut().filter(|d| is_valid_depth(**d)) {
        *d *= 1.0 + n.sample(&mut rng);
    }
    // a huge negative draw could push depth ≤ 0
    *depth = DepthMap::new(depth.width, depth.height, std::mem::take(&mut depth.values)).expect("same size");
}

/// Gaussian noise times a smooth random field, plus flying points pushed
/// backwards on a fraction of the silhouette pixels.
fn structured_noise(depth: &mut DepthMap, cfg: &AugmentationConfig, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (depth.width, depth.height);
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.5..2.0),
                rng.random_range(0.5..2.0),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let edge: Vec<usize> = (0..w * h)
        .filter(|&i| {
            let (u, v) = (i % w, i / w);
            depth.is_valid(u, v)
                && [(0i64, 1i64), (0, -1), (1, 0), (-1, 0)].iter().any(|(du, dv)| {
                    let (x, y) = (u as i64 + du, v as i64 + dv);
                    x < 0 || y < 0 || x >= w as i64 || y >= h as i64 || !depth.is_valid(x as usize, y as usize)
                })
        })
        .collect();
    let field_seed: u64 = rng.random();
    gaussian_depth_noise(depth, cfg.depth_noise_sigma, field_seed);
    for v in 0..h {
        for u in 0..w {
            let f: f64 = waves
                .iter()
                .map(|(fx, fy, ph)| {
                    (std::f64::consts::TAU * (fx * u as f64 / w as f64 + fy * v as f64 / h as f64) + ph).sin()
                })
                .sum::<f64>()
                / waves.len() as f64;
            let d = &mut depth.values[v * w + u];
            if is_valid_depth(*d) {
                *d *= 1.0 + cfg.field_amplitude * f;
            }
        }
    }
    if !edge.is_empty() && cfg.flying_fraction > 0.0 {
        let n = ((edge.len() as f64 * cfg.flying_fraction).ceil() as usize).min(edge.len());
        for i in rand::seq::index::sample(&mut rng, edge.len(), n).iter() {
            let d = &mut depth.values[edge[i]];
            if is_valid_depth(*d) {
                *d *= 1.0 + rng.random_range(0.05..0.25);
            }
        }
    }
}
