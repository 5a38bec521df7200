use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{NormalizationConstants, OrientedPointCloud, RigidTransform, Vec3};
use crate::sdf::{marching_cubes, sample_sdf_grid, sample_surface_points, AnalyticSdf, GridBounds, TriangleMesh};
use crate::vae::{sample_training_queries, VaeExample};

/// Lattice resolution used to mesh library shapes.
pub const CANONICAL_MESH_RESOLUTION: usize = 96;

/// A library shape: closed-form SDF plus its marching-cubes mesh.
#[derive(Clone, Debug)]
pub struct CanonicalShape {
    pub id: String,
    pub sdf: AnalyticSdf,
    pub mesh: TriangleMesh,
}

impl CanonicalShape {
    pub fn new(id: impl Into<String>, sdf: AnalyticSdf) -> Result<Self> {
        Self::with_resolution(id, sdf, CANONICAL_MESH_RESOLUTION)
    }

    pub fn with_resolution(id: impl Into<String>, sdf: AnalyticSdf, resolution: usize) -> Result<Self> {
        sdf.validate()?;
        let grid = sample_sdf_grid(&sdf, GridBounds::cube(1.0), [resolution; 3])?;
        Ok(CanonicalShape {
            id: id.into(),
            mesh: marching_cubes(&grid, 0.0),
            sdf,
        })
    }
}

/// Library entry by name: `sphere`, `box`, `torus`, `capsule`.
pub fn library_sdf(name: &str) -> Option<AnalyticSdf> {
    Some(match name {
        "sphere" => AnalyticSdf::sphere(0.5),
        // tilted so a half turn about the vertical axis changes how it looks
        "box" => AnalyticSdf::cuboid([0.45, 0.2, 0.25])
            .transformed(RigidTransform::from_axis_angle(Vec3::x(), 35f64.to_radians())),
        "torus" => AnalyticSdf::torus(0.4, 0.13),
        "capsule" => AnalyticSdf::capsule(0.3, 0.2),
        _ => return None,
    })
}

pub const LIBRARY_NAMES: [&str; 4] = ["sphere", "box", "torus", "capsule"];

/// The first `n` library shapes (cycling through the names with numbered
/// ids when `n` exceeds the library size).
pub fn standard_library(n: usize) -> Result<Vec<Arc<CanonicalShape>>> {
    (0..n)
        .map(|i| {
            let name = LIBRARY_NAMES[i % LIBRARY_NAMES.len()];
            let id = if i < LIBRARY_NAMES.len() {
                name.to_string()
            } else {
                format!("{name}{}", i / LIBRARY_NAMES.len())
            };
            CanonicalShape::new(id, library_sdf(name).expect("library name")).map(Arc::new)
        })
        .collect()
}

/// A library shape seen by a camera and mapped into a normalized frame:
/// `x ↦ frame.normalize(world_to_camera(x))`.
#[derive(Clone, Debug)]
pub struct PosedShape {
    pub shape: Arc<CanonicalShape>,
    pub camera_to_world: RigidTransform,
    pub frame: NormalizationConstants,
}

impl PosedShape {
    pub fn map_point(&self, p: &Vec3) -> Vec3 {
        self.frame.normalize(&self.camera_to_world.inverse().apply_point(p))
    }

    /// Exact signed distance in the normalized frame.
    pub fn sdf(&self) -> AnalyticSdf {
        let shift = RigidTransform::translation(-self.frame.center()).compose(&self.camera_to_world.inverse());
        self.shape.sdf.clone().transformed(shift).scaled(1.0 / self.frame.scale)
    }

    pub fn mesh(&self) -> TriangleMesh {
        let w2c = self.camera_to_world.inverse();
        self.shape.mesh.map_vertices(|v| self.frame.normalize(&w2c.apply_point(v)))
    }

    pub fn sample_surface(&self, n: usize, seed: u64) -> Result<OrientedPointCloud> {
        let c = sample_surface_points(&self.shape.mesh, n, seed)?;
        let w2c = self.camera_to_world.inverse();
        OrientedPointCloud::new(
            c.points.iter().map(|p| self.frame.normalize(&w2c.apply_point(p))).collect(),
            c.normals.iter().map(|n| w2c.apply_vector(n)).collect(),
        )
    }

    /// Autoencoder example: `points` surface samples as encoder input plus
    /// `queries` labelled with the exact signed distance.
    pub fn vae_example<R: Rng>(
        &self,
        points: usize,
        queries: usize,
        near_fraction: f64,
        near_sigma: f64,
        rng: &mut R,
    ) -> Result<VaeExample> {
        let cloud = self.sample_surface(points, rng.random())?;
        let surf = self.sample_surface(queries, rng.random())?;
        let q = sample_training_queries(&surf.points, queries, near_fraction, near_sigma, rng);
        let sdf = self.sdf();
        let targets = q.iter().map(|p| sdf.eval(p)).collect();
        Ok(VaeExample {
            cloud,
            queries: q,
            targets,
        })
    }
}

/// Serializable description of a posed shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub shape_id: String,
    pub shape: AnalyticSdf,
    pub camera_to_world: RigidTransform,
    pub frame: NormalizationConstants,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn library_shapes_fit_and_close() {
        for s in standard_library(4).unwrap() {
            assert!(s.mesh.is_closed(), "{}", s.id);
            let (lo, hi) = s.mesh.bounds().unwrap();
            assert!(lo.amin() > -0.7 && hi.amax() < 0.7, "{}", s.id);
        }
    }

    #[test]
    fn box_is_not_half_turn_symmetric() {
        let b = library_sdf("box").unwrap();
        let turn = RigidTransform::from_axis_angle(Vec3::y(), std::f64::consts::PI);
        let p = Vec3::new(0.0, 0.3, 0.3);
        assert!((b.eval(&p) - b.eval(&turn.apply_point(&p))).abs() > 0.03);
    }

    #[test]
    fn posed_sdf_vanishes_on_posed_surface() {
        let shape = standard_library(2).unwrap().remove(1);
        let pose = PosedShape {
            shape,
            camera_to_world: RigidTransform::look_at(Vec3::new(1.0, 1.0, -2.0), Vec3::zeros(), Vec3::y()).unwrap(),
            frame: NormalizationConstants::new(Vec3::new(0.1, 0.0, 2.4), 0.7).unwrap(),
        };
        let sdf = pose.sdf();
        let c = pose.sample_surface(200, 3).unwrap();
        for p in &c.points {
            assert!(sdf.eval(p).abs() < 0.02 / 0.7);
        }
        // distances scale with the frame
        let outside = pose.map_point(&Vec3::new(0.0, 2.0, 0.0));
        let world = pose.shape.sdf.eval(&Vec3::new(0.0, 2.0, 0.0));
        assert!((sdf.eval(&outside) - world / 0.7).abs() < 1e-9);
        let ex = pose.vae_example(64, 100, 0.5, 0.05, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!((ex.cloud.len(), ex.queries.len(), ex.targets.len()), (64, 100, 100));
    }
}
