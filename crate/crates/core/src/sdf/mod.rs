//! Analytic signed distance fields, SDF grids, marching cubes, surface
//! sampling, and sphere-traced depth rendering.

mod grid;
mod marching_cubes;
mod mesh;
mod raycast;
mod tables;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, Vec3};

pub use grid::{sample_sdf_grid, GridBounds, SdfGrid};
pub use marching_cubes::marching_cubes;
pub use mesh::{sample_surface_points, TriangleMesh};
pub use raycast::{raycast, raycast_depth, RaycastHit, TraceConfig};

/// Anything that can be evaluated as a scalar field at a batch of points.
pub trait ScalarField {
    fn eval_batch(&self, points: &[Vec3]) -> Vec<f64>;
}

/// Closed-form signed distance: negative inside, positive outside.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticSdf {
    Sphere {
        radius: f64,
    },
    Box {
        half_extents: [f64; 3],
    },
    /// Ring in the xz-plane around the y axis.
    Torus {
        major: f64,
        minor: f64,
    },
    /// Segment along the y axis from −half_length to +half_length, swept by `radius`.
    Capsule {
        half_length: f64,
        radius: f64,
    },
    /// Child placed in the world by `transform` (child-local → world).
    Transformed {
        shape: Box<AnalyticSdf>,
        transform: RigidTransform,
    },
    Union {
        children: Vec<AnalyticSdf>,
    },
    /// Child uniformly scaled about the origin by `factor`.
    Scaled {
        shape: Box<AnalyticSdf>,
        factor: f64,
    },
}

impl AnalyticSdf {
    pub fn sphere(radius: f64) -> Self {
        AnalyticSdf::Sphere { radius }
    }

    pub fn cuboid(half_extents: [f64; 3]) -> Self {
        AnalyticSdf::Box { half_extents }
    }

    pub fn torus(major: f64, minor: f64) -> Self {
        AnalyticSdf::Torus { major, minor }
    }

    pub fn capsule(half_length: f64, radius: f64) -> Self {
        AnalyticSdf::Capsule { half_length, radius }
    }

    pub fn transformed(self, transform: RigidTransform) -> Self {
        AnalyticSdf::Transformed {
            shape: Box::new(self),
            transform,
        }
    }

    pub fn translated(self, t: Vec3) -> Self {
        self.transformed(RigidTransform::translation(t))
    }

    pub fn union(children: Vec<AnalyticSdf>) -> Self {
        AnalyticSdf::Union { children }
    }

    pub fn scaled(self, factor: f64) -> Self {
        AnalyticSdf::Scaled {
            shape: Box::new(self),
            factor,
        }
    }

    /// Checks that every size parameter is positive and finite.
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("{name} must be positive, got {v}")))
            }
        };
        match self {
            AnalyticSdf::Sphere { radius } => pos("sphere radius", *radius),
            AnalyticSdf::Box { half_extents } => half_extents.iter().try_for_each(|&h| pos("box half extent", h)),
            AnalyticSdf::Torus { major, minor } => {
                pos("torus major radius", *major)?;
                pos("torus minor radius", *minor)
            }
            AnalyticSdf::Capsule { half_length, radius } => {
                pos("capsule half length", *half_length)?;
                pos("capsule radius", *radius)
            }
            AnalyticSdf::Transformed { shape, .. } => shape.validate(),
            AnalyticSdf::Scaled { shape, factor } => {
                pos("scale factor", *factor)?;
                shape.validate()
            }
            AnalyticSdf::Union { children } => {
                if children.is_empty() {
                    return Err(Error::Empty("union children"));
                }
                children.iter().try_for_each(AnalyticSdf::validate)
            }
        }
    }

    pub fn eval(&self, p: &Vec3) -> f64 {
        match self {
            AnalyticSdf::Sphere { radius } => p.norm() - radius,
            AnalyticSdf::Box { half_extents } => {
                let q = p.abs() - Vec3::from(*half_extents);
                q.sup(&Vec3::zeros()).norm() + q.max().min(0.0)
            }
            AnalyticSdf::Torus { major, minor } => {
                let ring = (p.x * p.x + p.z * p.z).sqrt() - major;
                (ring * ring + p.y * p.y).sqrt() - minor
            }
            AnalyticSdf::Capsule { half_length, radius } => {
                let y = p.y - p.y.clamp(-half_length, *half_length);
                Vec3::new(p.x, y, p.z).norm() - radius
            }
            AnalyticSdf::Transformed { shape, transform } => {
                let local = transform.inverse().apply_point(p);
                shape.eval(&local)
            }
            AnalyticSdf::Union { children } => children
                .iter()
                .map(|c| c.eval(p))
                .fold(f64::INFINITY, f64::min),
            AnalyticSdf::Scaled { shape, factor } => factor * shape.eval(&(p / *factor)),
        }
    }

    /// Index of the union child closest to `p` (0 for non-union shapes).
    pub fn nearest_child(&self, p: &Vec3) -> usize {
        match self {
            AnalyticSdf::Union { children } => children
                .iter()
                .enumerate()
                .map(|(i, c)| (i, c.eval(p)))
                .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
                .0,
            _ => 0,
        }
    }

    /// Central-difference gradient (unit length up to discretization).
    pub fn gradient(&self, p: &Vec3) -> Vec3 {
        let h = 1e-5;
        let d = |e: Vec3| self.eval(&(p + e * h)) - self.eval(&(p - e * h));
        Vec3::new(d(Vec3::x()), d(Vec3::y()), d(Vec3::z())) / (2.0 * h)
    }
}

impl ScalarField for AnalyticSdf {
    fn eval_batch(&self, points: &[Vec3]) -> Vec<f64> {
        points.iter().map(|p| self.eval(p)).collect()
    }
}

impl<F: Fn(&[Vec3]) -> Vec<f64>> ScalarField for F {
    fn eval_batch(&self, points: &[Vec3]) -> Vec<f64> {
        self(points)
    }
}
