use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::chamfer_distance;
use crate::sdf::{sample_surface_points, TriangleMesh};
use crate::vae::Vae;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Surface samples fed to the encoder.
    pub points: usize,
    /// Surface samples per mesh for the Chamfer score.
    pub samples: usize,
    pub resolution: usize,
    pub seed: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            points: 2048,
            samples: 10_000,
            resolution: 64,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WatertightnessReport {
    pub pass: bool,
    /// Chamfer distance between the mesh and its reconstruction; infinite
    /// when the reconstruction has no surface.
    pub score: f64,
}

/// Round-trips `mesh` through the autoencoder and rejects it when the
/// reconstruction is further than `threshold` in Chamfer distance.
pub fn watertightness_filter(
    mesh: &TriangleMesh,
    vae: &Vae<f32>,
    threshold: f64,
    cfg: &FilterConfig,
) -> Result<WatertightnessReport> {
    if mesh.is_empty() || mesh.area() <= 0.0 {
        return Err(Error::Empty("mesh to filter"));
    }
    let input = sample_surface_points(mesh, cfg.points.max(vae.config.points), cfg.seed)?;
    let recon = vae.reconstruct_mesh(&input, cfg.resolution)?;
    let score = if recon.is_empty() || recon.area() <= 0.0 {
        f64::INFINITY
    } else {
        let a = sample_surface_points(mesh, cfg.samples, cfg.seed.wrapping_add(1))?;
        let b = sample_surface_points(&recon, cfg.samples, cfg.seed.wrapping_add(2))?;
        chamfer_distance(&a.points, &b.points)?
    };
    Ok(WatertightnessReport {
        pass: !(score > threshold),
        score,
    })
}
