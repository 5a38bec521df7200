//! Inference: single-view posed-object generation and multi-object scene
//! composition in the camera frame of the input.

mod scene;

pub use scene::{
    compose_scene, extract_object_partial, read_scene_bundle, recentering_rotation, render_synthetic_scene, unproject_scene,
    write_scene_bundle, write_scene_output, ObjectInstance, SceneBundle, SceneComposition, SceneLayout,
};

use serde::{Deserialize, Serialize};

use crate::data::{FramingConfig, TrainingSample};
use crate::error::{Error, Result};
use crate::flow::{prepare_image, sample_latents, ConditioningBundle, FlowExample, FlowModel, SamplerConfig};
use crate::geometry::{resample_to_fixed_size, CameraIntrinsics, DepthMap, NormalizationConstants, OrientedPointCloud};
use crate::image::{GrayImage, Mask};
use crate::metrics::{chamfer_distance, one_sided_chamfer};
use crate::sdf::{sample_surface_points, TriangleMesh};
use crate::vae::{LatentTokenSet, Vae};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub framing: FramingConfig,
    /// Decoding lattice resolution over `[−1, 1]³`.
    pub resolution: usize,
    pub sampler: SamplerConfig,
    /// Seed for resampling the partial cloud to the encoder size.
    pub resample_seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            framing: FramingConfig::default(),
            resolution: 64,
            sampler: SamplerConfig::default(),
            resample_seed: 0,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 2 {
            return Err(Error::Config {
                key: "generate.resolution".into(),
                message: format!("must be at least 2, got {}", self.resolution),
            });
        }
        self.framing.constants()?;
        self.sampler.validate()
    }
}

/// Output of one generation.
#[derive(Clone, Debug)]
pub struct GeneratedObject {
    /// Mesh in the camera frame of the input.
    pub mesh: TriangleMesh,
    /// Mesh in the generation frame.
    pub normalized_mesh: TriangleMesh,
    pub frame: NormalizationConstants,
    pub latent: LatentTokenSet,
    /// Conditioning points in the camera frame.
    pub partial: OrientedPointCloud,
}

/// Anchor latent and conditioning image for a partial cloud already in the
/// generation frame.
pub fn condition_from_partial(
    vae: &Vae<f32>,
    flow: &FlowModel<f32>,
    normalized_partial: &OrientedPointCloud,
    image: &GrayImage,
    mask: Option<&Mask>,
    seed: u64,
) -> Result<ConditioningBundle> {
    let pts = resample_to_fixed_size(normalized_partial, vae.config.points, seed)?;
    let z_geo = vae.encode(&pts)?;
    let img = prepare_image(image, mask, flow.config.image_size)?;
    Ok(ConditioningBundle::new(z_geo, img))
}

/// Generates from a partial cloud in the camera frame: frame it, encode the
/// anchor, sample a latent, decode and map back to the camera frame.
pub fn generate_from_partial(
    partial: &OrientedPointCloud,
    image: &GrayImage,
    mask: Option<&Mask>,
    vae: &Vae<f32>,
    flow: &FlowModel<f32>,
    cfg: &GenerationConfig,
) -> Result<GeneratedObject> {
    cfg.validate()?;
    flow.config.check_vae(&vae.config)?;
    if partial.is_empty() {
        return Err(Error::Empty("partial point cloud"));
    }
    let frame = crate::data::observation_frame(partial, &cfg.framing)?;
    let cond = condition_from_partial(vae, flow, &frame.normalize_cloud(partial), image, mask, cfg.resample_seed)?;
    let z = sample_latents(flow, &cond, &cfg.sampler)?;
    let normalized_mesh = vae.latent_to_mesh(&z, cfg.resolution)?;
    if normalized_mesh.is_empty() {
        return Err(Error::Empty("generated surface"));
    }
    Ok(GeneratedObject {
        mesh: normalized_mesh.map_vertices(|v| frame.denormalize(v)),
        normalized_mesh,
        frame,
        latent: z,
        partial: partial.clone(),
    })
}

/// Single-view generation in the camera frame. `mask` selects the object
/// pixels; without it every valid depth pixel is used.
#[allow(clippy::too_many_arguments)]
pub fn generate_posed_object(
    image: &GrayImage,
    depth: &DepthMap,
    k: &CameraIntrinsics,
    mask: Option<&Mask>,
    vae: &Vae<f32>,
    flow: &FlowModel<f32>,
    cfg: &GenerationConfig,
) -> Result<GeneratedObject> {
    let full;
    let mask = match mask {
        Some(m) => m,
        None => {
            full = Mask::new(depth.width, depth.height, depth.valid_mask())?;
            &full
        }
    };
    let inst = extract_object_partial(0, image, depth, k, mask, &cfg.framing)?;
    generate_from_partial(&inst.conditioning, &inst.image, None, vae, flow, cfg)
}

/// Flow training example for a stored sample: the target is the encoding of
/// the ground-truth surface, the anchor the encoding of the partial cloud,
/// both in the sample's generation frame.
pub fn flow_example(
    sample: &TrainingSample,
    vae: &Vae<f32>,
    flow: &FlowModel<f32>,
    seed: u64,
) -> Result<FlowExample> {
    let gt = sample_surface_points(&sample.gt_mesh_camera_frame, vae.config.points, seed)?;
    let z1 = vae.encode(&gt)?;
    let cond = condition_from_partial(
        vae,
        flow,
        &sample.partial_cloud,
        &sample.image,
        Some(&sample.mask),
        seed.wrapping_add(1),
    )?;
    Ok(FlowExample { z1, cond })
}

/// Errors of a generation against its ground truth. Distances are squared,
/// so camera-frame values are the generation-frame ones times `scale²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationErrors {
    /// Chamfer distance between generated and ground-truth surface samples,
    /// in the generation frame.
    pub chamfer: f64,
    /// One-sided Chamfer from the conditioning points to the generated
    /// surface, in the generation frame.
    pub partial_to_surface: f64,
    pub scale: f64,
}

impl GenerationErrors {
    pub fn chamfer_camera(&self) -> f64 {
        self.chamfer * self.scale * self.scale
    }

    pub fn partial_to_surface_camera(&self) -> f64 {
        self.partial_to_surface * self.scale * self.scale
    }
}

/// Compares `generated` with `gt_normalized` (ground truth in the generation
/// frame of `generated`) using `samples` surface points per mesh. The
/// one-sided term samples the generated surface ten times as densely so that
/// sample spacing does not dominate it.
pub fn generation_errors(
    generated: &GeneratedObject,
    gt_normalized: &TriangleMesh,
    samples: usize,
    seed: u64,
) -> Result<GenerationErrors> {
    let gen = sample_surface_points(&generated.normalized_mesh, samples, seed)?;
    let gt = sample_surface_points(gt_normalized, samples, seed.wrapping_add(1))?;
    let dense = sample_surface_points(&generated.normalized_mesh, samples * 10, seed.wrapping_add(2))?;
    let partial = generated.frame.normalize_cloud(&generated.partial);
    Ok(GenerationErrors {
        chamfer: chamfer_distance(&gen.points, &gt.points)?,
        partial_to_surface: one_sided_chamfer(&partial.points, &dense.points)?,
        scale: generated.frame.scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{render_view, RenderConfig, ViewSpec};
    use crate::flow::FlowConfig;
    use crate::sdf::AnalyticSdf;
    use crate::vae::VaeConfig;

    /// Untrained models whose decoder head is scaled up so the decoded field
    /// changes sign inside the box.
    fn tiny_models() -> (Vae<f32>, FlowModel<f32>) {
        let vc = VaeConfig {
            latent_tokens: 4,
            latent_channels: 8,
            points: 64,
            width: 16,
            heads: 2,
            encoder_blocks: 1,
            decoder_blocks: 1,
            bands: 2,
            mlp_ratio: 2,
            query_layers: 1,
        };
        let fc = FlowConfig {
            width: 16,
            heads: 2,
            depth: 1,
            image_size: 16,
            patch: 8,
            ..FlowConfig::desk()
        }
        .for_vae(&vc);
        let mut vae = Vae::new(vc, 1).unwrap();
        let w = vae.params.id("dec.head.w").unwrap();
        vae.params.tensor_mut(w).data.iter_mut().for_each(|v| *v *= 30.0);
        (vae, FlowModel::new(fc, 2).unwrap())
    }

    fn gen_cfg() -> GenerationConfig {
        GenerationConfig {
            resolution: 16,
            sampler: SamplerConfig {
                steps: 3,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn untrained_generation_round_trips_frame() {
        let (vae, flow) = tiny_models();
        let r = render_view(
            &AnalyticSdf::sphere(0.5),
            &ViewSpec::new(30.0, 10.0, 2.5),
            &RenderConfig {
                image_size: 24,
                ..Default::default()
            },
        )
        .unwrap();
        let out = generate_posed_object(&r.image, &r.depth, &r.intrinsics, None, &vae, &flow, &gen_cfg()).unwrap();
        assert!(!out.mesh.is_empty());
        let back = out.mesh.map_vertices(|v| out.frame.normalize(v));
        for (a, b) in back.vertices.iter().zip(&out.normalized_mesh.vertices) {
            assert!((a - b).norm() < 1e-9);
        }
        let again = generate_posed_object(&r.image, &r.depth, &r.intrinsics, None, &vae, &flow, &gen_cfg()).unwrap();
        assert_eq!(crate::io::encode_obj(&again.mesh), crate::io::encode_obj(&out.mesh));
    }

    #[test]
    fn rejects_empty_depth_and_bad_config() {
        let (vae, flow) = tiny_models();
        let k = CameraIntrinsics::from_fov(8, 40.0).unwrap();
        let d = DepthMap::invalid(8, 8);
        let img = GrayImage::filled(8, 8, 1.0);
        assert!(generate_posed_object(&img, &d, &k, None, &vae, &flow, &gen_cfg()).is_err());
        let bad = GenerationConfig {
            resolution: 1,
            ..gen_cfg()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { .. })));
    }
}
