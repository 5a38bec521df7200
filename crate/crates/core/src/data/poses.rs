use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::augment::gaussian_depth_noise;
use super::frame::{conditioning_cloud, observation_frame, FramingConfig};
use super::render::{render_with_pose, RenderConfig, ViewSpec};
use super::shapes::{CanonicalShape, PosedShape};
use crate::error::{Error, Result};
use crate::geometry::{NormalizationConstants, Vec3};
use crate::metrics::chamfer_distance;
use crate::sdf::sample_surface_points;
use crate::vae::{Vae, VaeExample, SDF_TRUNCATION};

/// How [`PoseSampler`] draws views and generation frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseSamplerConfig {
    /// Renders used only to find the frame.
    pub render: RenderConfig,
    pub framing: FramingConfig,
    /// Chance the frame comes from a noisy depth map.
    pub noisy_prob: f64,
    pub noise_sigma: f64,
    /// Relative jitter of the frame centre and scale.
    pub jitter: f64,
}

impl Default for PoseSamplerConfig {
    fn default() -> Self {
        PoseSamplerConfig {
            render: RenderConfig::default(),
            framing: FramingConfig::default(),
            noisy_prob: 0.5,
            noise_sigma: 0.03,
            jitter: 0.02,
        }
    }
}

/// Draws library shapes in random camera frames, normalized the way the
/// generator frames them, for autoencoder training.
#[derive(Clone, Debug)]
pub struct PoseSampler {
    pub shapes: Vec<Arc<CanonicalShape>>,
    pub views: Option<Vec<ViewSpec>>,
    pub config: PoseSamplerConfig,
}

impl PoseSampler {
    /// Random views from the full azimuth/elevation range.
    pub fn new(shapes: Vec<Arc<CanonicalShape>>, config: PoseSamplerConfig) -> Result<Self> {
        if shapes.is_empty() {
            return Err(Error::Empty("pose sampler shapes"));
        }
        Ok(PoseSampler {
            shapes,
            views: None,
            config,
        })
    }

    /// Restricts views to a fixed list.
    pub fn with_views(mut self, views: Vec<ViewSpec>) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::Empty("pose sampler views"));
        }
        self.views = Some(views);
        Ok(self)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<PosedShape> {
        let shape = self.shapes[rng.random_range(0..self.shapes.len())].clone();
        let c = &self.config;
        let view = match &self.views {
            Some(v) => v[rng.random_range(0..v.len())],
            None => {
                let [lo, hi] = c.render.elevation_range;
                ViewSpec::new(rng.random_range(0.0..360.0), rng.random_range(lo..hi), c.render.radius)
            }
        };
        let pose = view.camera_to_world()?;
        let k = c.render.intrinsics()?;
        let (mut depth, _, _) = render_with_pose(&shape.sdf, &k, &pose, &c.render.trace)?;
        if rng.random::<f64>() < c.noisy_prob {
            gaussian_depth_noise(&mut depth, c.noise_sigma, rng.random());
        }
        let frame = observation_frame(&conditioning_cloud(&depth, &k, None)?, &c.framing)?;
        let frame = if c.jitter > 0.0 {
            let n = Normal::new(0.0, c.jitter).expect("finite jitter");
            let shift = Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng)) * frame.scale;
            NormalizationConstants::new(frame.center() + shift, frame.scale * (1.0 + n.sample(rng)).max(0.5))?
        } else {
            frame
        };
        Ok(PosedShape {
            shape,
            camera_to_world: pose,
            frame,
        })
    }

    /// Autoencoder example from a freshly sampled pose.
    pub fn vae_example<R: Rng>(
        &self,
        points: usize,
        queries: usize,
        near_fraction: f64,
        near_sigma: f64,
        rng: &mut R,
    ) -> Result<VaeExample> {
        self.sample(rng)?
            .vae_example(points, queries, near_fraction, near_sigma, rng)
    }
}

/// Autoencoder fidelity on one posed shape, in the normalized frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    /// Chamfer distance between surface samples of the reconstruction and of
    /// the ground truth; infinite when nothing was reconstructed.
    pub chamfer: f64,
    /// Mean absolute error of truncated signed distances at uniform queries.
    pub sdf_error: f64,
}

/// Encodes surface samples of `posed`, decodes a `resolution`³ mesh and
/// compares it with the ground truth using `samples` points per side and
/// `queries` uniform SDF probes.
pub fn reconstruction_report(
    vae: &Vae<f32>,
    posed: &PosedShape,
    resolution: usize,
    samples: usize,
    queries: usize,
    seed: u64,
) -> Result<ReconstructionReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cloud = posed.sample_surface(vae.config.points, rng.random())?;
    let z = vae.encode(&cloud)?;
    let mesh = vae.latent_to_mesh(&z, resolution)?;
    let gt = posed.sample_surface(samples, rng.random())?;
    let chamfer = if mesh.is_empty() {
        f64::INFINITY
    } else {
        let rec = sample_surface_points(&mesh, samples, rng.random())?;
        chamfer_distance(&rec.points, &gt.points)?
    };
    let q: Vec<Vec3> = (0..queries)
        .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let pred = vae.decode_sdf(&z, &q)?;
    let sdf = posed.sdf();
    let t = SDF_TRUNCATION;
    let sdf_error = q
        .iter()
        .zip(&pred)
        .map(|(p, v)| (v.clamp(-t, t) - sdf.eval(p).clamp(-t, t)).abs())
        .sum::<f64>()
        / queries.max(1) as f64;
    Ok(ReconstructionReport { chamfer, sdf_error })
}
