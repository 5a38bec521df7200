use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthMap, RigidTransform, Transformable, Vec3};
use crate::image::{GrayImage, Mask};
use crate::sdf::{raycast, ScalarField, TraceConfig, TriangleMesh};

/// Camera rig used for synthetic renders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub image_size: usize,
    pub fov_deg: f64,
    /// Distance from the camera to its look-at target.
    pub radius: f64,
    pub trace: TraceConfig,
    /// Elevation range in degrees for random views, `[min, max)`.
    pub elevation_range: [f64; 2],
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            image_size: 64,
            fov_deg: 40.0,
            radius: 2.5,
            trace: TraceConfig::default(),
            elevation_range: [-20.0, 60.0],
        }
    }
}

impl RenderConfig {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::from_fov(self.image_size, self.fov_deg)
    }
}

/// Spherical camera placement around a target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewSpec {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub radius: f64,
    pub target: [f64; 3],
}

impl ViewSpec {
    pub fn new(azimuth_deg: f64, elevation_deg: f64, radius: f64) -> Self {
        ViewSpec {
            azimuth_deg,
            elevation_deg,
            radius,
            target: [0.0; 3],
        }
    }

    pub fn eye(&self) -> Vec3 {
        let (az, el) = (self.azimuth_deg.to_radians(), self.elevation_deg.to_radians());
        Vec3::from(self.target) + Vec3::new(az.sin() * el.cos(), el.sin(), -az.cos() * el.cos()) * self.radius
    }

    /// Camera-to-world pose looking at the target with world +y up.
    pub fn camera_to_world(&self) -> Result<RigidTransform> {
        RigidTransform::look_at(self.eye(), Vec3::from(self.target), Vec3::y())
    }
}

/// One synthetic observation.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView {
    pub view: ViewSpec,
    pub camera_to_world: RigidTransform,
    pub intrinsics: CameraIntrinsics,
    pub depth: DepthMap,
    pub image: GrayImage,
    /// Pixels whose ray hit the surface.
    pub mask: Mask,
}

/// Light direction in the camera frame (towards the light).
fn light_dir() -> Vec3 {
    Vec3::new(-0.4, -0.6, -1.0).normalize()
}

/// Sphere-traces `field` from `view`: depth plus a Lambertian shading of the
/// hits on a white background.
pub fn render_view<F: ScalarField + ?Sized>(field: &F, view: &ViewSpec, cfg: &RenderConfig) -> Result<RenderedView> {
    let k = cfg.intrinsics()?;
    let pose = view.camera_to_world()?;
    render_with_pose(field, &k, &pose, &cfg.trace).map(|(depth, image, mask)| RenderedView {
        view: *view,
        camera_to_world: pose,
        intrinsics: k,
        depth,
        image,
        mask,
    })
}

/// Depth, shaded image, and hit mask for an explicit camera.
pub fn render_with_pose<F: ScalarField + ?Sized>(
    field: &F,
    k: &CameraIntrinsics,
    camera_to_world: &RigidTransform,
    trace: &TraceConfig,
) -> Result<(DepthMap, GrayImage, Mask)> {
    let hits = raycast(field, k, camera_to_world, trace)?;
    let l = camera_to_world.apply_vector(&light_dir());
    let mut depth = Vec::with_capacity(hits.len());
    let mut img = Vec::with_capacity(hits.len());
    let mut mask = Vec::with_capacity(hits.len());
    for h in &hits {
        match h {
            Some(h) => {
                depth.push(h.depth);
                img.push((0.15 + 0.8 * h.world_normal.dot(&l).max(0.0)) as f32);
                mask.push(true);
            }
            None => {
                depth.push(DepthMap::INVALID);
                img.push(1.0);
                mask.push(false);
            }
        }
    }
    Ok((
        DepthMap::new(k.width, k.height, depth)?,
        GrayImage::new(k.width, k.height, img)?,
        Mask::new(k.width, k.height, mask)?,
    ))
}

/// `n_views` renders from random azimuths in `[0, 360)` and elevations in the
/// configured range, drawn from `seed`.
pub fn render_views<F: ScalarField + ?Sized>(
    field: &F,
    n_views: usize,
    seed: u64,
    cfg: &RenderConfig,
) -> Result<Vec<RenderedView>> {
    random_views(n_views, seed, cfg)?
        .iter()
        .map(|v| render_view(field, v, cfg))
        .collect()
}

/// The camera placements [`render_views`] uses.
pub fn random_views(n_views: usize, seed: u64, cfg: &RenderConfig) -> Result<Vec<ViewSpec>> {
    if n_views == 0 {
        return Err(Error::InvalidInput("n_views must be at least 1".into()));
    }
    let [el_lo, el_hi] = cfg.elevation_range;
    if !(el_lo < el_hi && el_lo > -90.0 && el_hi < 90.0) {
        return Err(Error::InvalidInput(format!("elevation range {el_lo}..{el_hi} is invalid")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_views)
        .map(|_| ViewSpec::new(rng.random_range(0.0..360.0), rng.random_range(el_lo..el_hi), cfg.radius))
        .collect())
}

/// Eight views at 45° azimuth steps; elevations cycle through 0°, 30°, 15°,
/// 45° so that opposite azimuths share an elevation.
pub fn ring_views(radius: f64) -> Vec<ViewSpec> {
    const ELEV: [f64; 4] = [0.0, 30.0, 15.0, 45.0];
    (0..8)
        .map(|i| ViewSpec::new(45.0 * i as f64, ELEV[i % 4], radius))
        .collect()
}

/// Expresses a world-frame mesh in the camera frame of `camera_to_world`.
pub fn align_mesh_to_view(mesh: &TriangleMesh, camera_to_world: &RigidTransform) -> TriangleMesh {
    mesh.transformed(&camera_to_world.inverse())
}
