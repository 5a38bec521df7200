use std::path::Path;

use nalgebra::Rotation3;
use rayon::prelude::*;

use super::{generate_from_partial, GenerationConfig};
use crate::data::{observation_frame, render_with_pose, FramingConfig};
use crate::error::{Error, Result};
use crate::flow::{FlowModel, IMAGE_PAD_RATIO};
use crate::geometry::{
    apply_rigid_transform, unproject_depth, unproject_depth_masked, CameraIntrinsics, DepthMap, NormalizationConstants,
    OrientedPointCloud, RigidTransform, Vec3,
};
use crate::image::{crop_to_mask, GrayImage, Mask};
use crate::io;
use crate::sdf::{AnalyticSdf, TraceConfig, TriangleMesh};
use crate::vae::Vae;

/// Scene inputs: one image, its depth and camera, and one mask per object.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneBundle {
    pub image: GrayImage,
    pub depth: DepthMap,
    pub intrinsics: CameraIntrinsics,
    pub masks: Vec<Mask>,
}

/// One segmented object of a scene.
#[derive(Clone, Debug)]
pub struct ObjectInstance {
    pub index: usize,
    pub mask: Mask,
    /// Mask bounding box on a white square with the standard padding.
    pub image: GrayImage,
    /// Every valid masked pixel unprojected in the scene camera frame.
    pub partial_cloud_global: OrientedPointCloud,
    /// Linear pixel index of each point of `partial_cloud_global`.
    pub pixels: Vec<usize>,
    /// Interior points with reliable normals, used for generation.
    pub conditioning: OrientedPointCloud,
    /// Generation frame, relative to the recentred view.
    pub norm_constants: NormalizationConstants,
    /// Rotation about the optical centre from the scene camera to a virtual
    /// camera looking straight at the object.
    pub view_rotation: RigidTransform,
    pub mesh: Option<TriangleMesh>,
}

#[derive(Clone, Debug)]
pub struct SceneLayout {
    pub intrinsics: CameraIntrinsics,
    pub depth: DepthMap,
    pub instances: Vec<ObjectInstance>,
    /// Concatenation of the instance meshes in index order.
    pub mesh: TriangleMesh,
}

#[derive(Clone, Debug)]
pub struct SceneComposition {
    pub layout: SceneLayout,
    /// `(mask index, message)` for every object that could not be generated.
    pub failures: Vec<(usize, String)>,
}

/// Every valid pixel of the scene depth, unprojected.
pub fn unproject_scene(depth: &DepthMap, k: &CameraIntrinsics) -> Result<OrientedPointCloud> {
    let cloud = unproject_depth(depth, k)?;
    if cloud.is_empty() {
        return Err(Error::Empty("valid scene depth"));
    }
    Ok(cloud)
}

/// Cuts one object out of the scene. The conditioning subset drops pixels on
/// the mask border, where normals mix in neighbouring surfaces.
pub fn extract_object_partial(
    index: usize,
    image: &GrayImage,
    depth: &DepthMap,
    k: &CameraIntrinsics,
    mask: &Mask,
    framing: &FramingConfig,
) -> Result<ObjectInstance> {
    if (mask.width, mask.height) != (depth.width, depth.height) {
        return Err(Error::Shape(format!(
            "mask {}×{} vs depth {}×{}",
            mask.width, mask.height, depth.width, depth.height
        )));
    }
    if mask.count() == 0 {
        return Err(Error::Empty("object mask"));
    }
    let (cloud, pixels) = unproject_depth_masked(depth, k, Some(&mask.data))?;
    if cloud.is_empty() {
        return Err(Error::Empty("valid depth under the object mask"));
    }
    let (w, h) = (depth.width, depth.height);
    let inside = |u: usize, v: usize| u < w && v < h && mask.data[v * w + u];
    let keep: Vec<usize> = (0..cloud.len())
        .filter(|&i| {
            let (u, v) = (pixels[i] % w, pixels[i] / w);
            cloud.normals[i].norm() > 0.5
                && u > 0
                && v > 0
                && inside(u - 1, v)
                && inside(u + 1, v)
                && inside(u, v - 1)
                && inside(u, v + 1)
        })
        .collect();
    if keep.is_empty() {
        return Err(Error::Empty("object pixels with reliable normals"));
    }
    let conditioning = cloud.permuted(&keep);
    let norm_constants = observation_frame(&conditioning, framing)?;
    Ok(ObjectInstance {
        index,
        mask: mask.clone(),
        image: crop_to_mask(image, mask, IMAGE_PAD_RATIO)?,
        partial_cloud_global: cloud,
        pixels,
        conditioning,
        norm_constants,
        view_rotation: RigidTransform::identity(),
        mesh: None,
    })
}

/// Rotation about the camera centre that maps the ray through the centre of
/// `cloud`'s bounding box onto the optical axis. A pinhole view of an
/// off-centre object rotated this way is the view a camera aimed at the
/// object would record.
pub fn recentering_rotation(cloud: &OrientedPointCloud) -> Result<RigidTransform> {
    let (lo, hi) = cloud.bounds().ok_or(Error::Empty("point cloud"))?;
    let ray = ((lo + hi) / 2.0).normalize();
    let rot = Rotation3::rotation_between(&ray, &Vec3::z()).unwrap_or_else(Rotation3::identity);
    RigidTransform::new(rot.into_inner(), Vec3::zeros())
}

/// Generates every masked object independently, each in a view recentred on
/// it, and concatenates the results in the scene camera frame. Object `i`
/// samples with seed `sampler.seed + i`.
pub fn compose_scene(
    scene: &SceneBundle,
    vae: &Vae<f32>,
    flow: &FlowModel<f32>,
    cfg: &GenerationConfig,
) -> Result<SceneComposition> {
    cfg.validate()?;
    if scene.masks.is_empty() {
        return Err(Error::Empty("scene masks"));
    }
    let results: Vec<std::result::Result<ObjectInstance, (usize, String)>> = scene
        .masks
        .par_iter()
        .enumerate()
        .map(|(i, mask)| {
            let mut inst = extract_object_partial(i, &scene.image, &scene.depth, &scene.intrinsics, mask, &cfg.framing)
                .map_err(|e| (i, e.to_string()))?;
            let mut c = cfg.clone();
            c.sampler.seed = cfg.sampler.seed.wrapping_add(i as u64);
            let generated = recentering_rotation(&inst.conditioning).and_then(|r| {
                let local = apply_rigid_transform(&inst.conditioning, &r);
                Ok((generate_from_partial(&local, &inst.image, None, vae, flow, &c)?, r))
            });
            match generated {
                Ok((g, r)) => {
                    inst.mesh = Some(apply_rigid_transform(&g.mesh, &r.inverse()));
                    inst.norm_constants = g.frame;
                    inst.view_rotation = r;
                    Ok(inst)
                }
                Err(e) => Err((i, e.to_string())),
            }
        })
        .collect();
    let mut instances = Vec::new();
    let mut failures = Vec::new();
    let mut mesh = TriangleMesh::default();
    for r in results {
        match r {
            Ok(inst) => {
                if let Some(m) = &inst.mesh {
                    mesh.append(m);
                }
                instances.push(inst);
            }
            Err(f) => failures.push(f),
        }
    }
    Ok(SceneComposition {
        layout: SceneLayout {
            intrinsics: scene.intrinsics,
            depth: scene.depth.clone(),
            instances,
            mesh,
        },
        failures,
    })
}

/// Renders a union of shapes and labels each hit pixel with the object
/// closest to it.
pub fn render_synthetic_scene(
    objects: &[AnalyticSdf],
    k: &CameraIntrinsics,
    camera_to_world: &RigidTransform,
    trace: &TraceConfig,
) -> Result<SceneBundle> {
    if objects.is_empty() {
        return Err(Error::Empty("scene objects"));
    }
    let union = AnalyticSdf::union(objects.to_vec());
    let (depth, image, hit) = render_with_pose(&union, k, camera_to_world, trace)?;
    let mut labels = vec![vec![false; hit.data.len()]; objects.len()];
    for (i, &h) in hit.data.iter().enumerate() {
        if h {
            let (u, v) = ((i % k.width) as f64, (i / k.width) as f64);
            let p = camera_to_world.apply_point(&k.unproject(u, v, depth.values[i]));
            labels[union.nearest_child(&p)][i] = true;
        }
    }
    Ok(SceneBundle {
        image,
        depth,
        intrinsics: *k,
        masks: labels
            .into_iter()
            .map(|m| Mask::new(k.width, k.height, m))
            .collect::<Result<_>>()?,
    })
}

/// Writes `depth.pfm`, `intrinsics.json`, `image.png` and `masks/<i>.png`.
pub fn write_scene_bundle(dir: impl AsRef<Path>, scene: &SceneBundle) -> Result<()> {
    let dir = dir.as_ref();
    io::write_pfm(dir.join("depth.pfm"), &scene.depth)?;
    io::write_json(dir.join("intrinsics.json"), &scene.intrinsics)?;
    io::write_png(dir.join("image.png"), &scene.image)?;
    for (i, m) in scene.masks.iter().enumerate() {
        io::write_mask(dir.join("masks").join(format!("{i}.png")), m)?;
    }
    Ok(())
}

/// Reads a bundle written by [`write_scene_bundle`]; masks are numbered from
/// 0 without gaps.
pub fn read_scene_bundle(dir: impl AsRef<Path>) -> Result<SceneBundle> {
    let dir = dir.as_ref();
    let mut masks = Vec::new();
    loop {
        let p = dir.join("masks").join(format!("{}.png", masks.len()));
        if !p.is_file() {
            break;
        }
        masks.push(io::read_mask(p)?);
    }
    if masks.is_empty() {
        return Err(Error::Empty("scene masks").at(dir.join("masks")));
    }
    Ok(SceneBundle {
        image: io::read_png(dir.join("image.png"))?,
        depth: io::read_pfm(dir.join("depth.pfm"))?,
        intrinsics: io::read_json(dir.join("intrinsics.json"))?,
        masks,
    })
}

/// Writes `instance_<i>.obj` for every generated object and `scene.obj`.
pub fn write_scene_output(dir: impl AsRef<Path>, layout: &SceneLayout) -> Result<()> {
    let dir = dir.as_ref();
    for inst in &layout.instances {
        if let Some(m) = &inst.mesh {
            io::write_obj(dir.join(format!("instance_{}.obj", inst.index)), m)?;
        }
    }
    io::write_obj(dir.join("scene.obj"), &layout.mesh)
}
