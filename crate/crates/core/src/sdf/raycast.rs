use serde::{Deserialize, Serialize};

use super::ScalarField;
use crate::error::Result;
use crate::geometry::{CameraIntrinsics, DepthMap, RigidTransform, Vec3};

/// Sphere-tracing parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    pub max_steps: usize,
    /// A ray stops once `|f| <` this.
    pub tolerance: f64,
    /// Rays travelling further than this (along the ray) miss.
    pub far: f64,
    /// Multiplier on each step; below 1 for fields that overestimate distance.
    pub step_scale: f64,
    /// Finite-difference step for hit normals.
    pub normal_eps: f64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            max_steps: 256,
            tolerance: 1e-4,
            far: 100.0,
            step_scale: 1.0,
            normal_eps: 1e-4,
        }
    }
}

/// Ray hit in world and camera coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RaycastHit {
    /// Camera-frame z of the hit point.
    pub depth: f64,
    pub world_point: Vec3,
    /// Unit world-frame field gradient at the hit.
    pub world_normal: Vec3,
}

/// Sphere-traces one ray per pixel centre. `camera_to_world` places the
/// camera (+z forward, +x right, +y down) in the field's frame. All live rays
/// advance together so each step is a single batched field evaluation.
/// Returns hits in row-major pixel order.
pub fn raycast<F: ScalarField + ?Sized>(
    field: &F,
    k: &CameraIntrinsics,
    camera_to_world: &RigidTransform,
    cfg: &TraceConfig,
) -> Result<Vec<Option<RaycastHit>>> {
    k.validate()?;
    let n = k.width * k.height;
    let origin = *camera_to_world.translation_vector();
    let mut cam_dirs = Vec::with_capacity(n);
    let mut dirs = Vec::with_capacity(n);
    for v in 0..k.height {
        for u in 0..k.width {
            let d = k.ray_direction(u as f64, v as f64);
            cam_dirs.push(d);
            dirs.push(camera_to_world.apply_vector(&d));
        }
    }
    let mut t = vec![0.0f64; n];
    let mut hit_t: Vec<Option<f64>> = vec![None; n];
    let mut live: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.max_steps {
        if live.is_empty() {
            break;
        }
        let pts: Vec<Vec3> = live.iter().map(|&i| origin + dirs[i] * t[i]).collect();
        let vals = field.eval_batch(&pts);
        let mut next = Vec::with_capacity(live.len());
        for (&i, &d) in live.iter().zip(&vals) {
            if !d.is_finite() {
                continue;
            }
            if d.abs() < cfg.tolerance {
                hit_t[i] = Some(t[i]);
                continue;
            }
            t[i] += d * cfg.step_scale;
            if t[i] < 0.0 {
                t[i] = 0.0;
            }
            if t[i] <= cfg.far {
                next.push(i);
            }
        }
        live = next;
    }

    let hits: Vec<(usize, Vec3)> = hit_t
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.map(|t| (i, origin + dirs[i] * t)))
        .collect();
    let h = cfg.normal_eps;
    let mut probes = Vec::with_capacity(hits.len() * 6);
    for (_, p) in &hits {
        for axis in [Vec3::x(), Vec3::y(), Vec3::z()] {
            probes.push(p + axis * h);
            probes.push(p - axis * h);
        }
    }
    let pv = field.eval_batch(&probes);
    let mut out = vec![None; n];
    for (hi, (i, p)) in hits.into_iter().enumerate() {
        let g = Vec3::from_fn(|a, _| pv[hi * 6 + 2 * a] - pv[hi * 6 + 2 * a + 1]);
        let tr = hit_t[i].unwrap();
        out[i] = Some(RaycastHit {
            depth: tr * cam_dirs[i].z,
            world_point: p,
            world_normal: g.try_normalize(0.0).unwrap_or_else(Vec3::zeros),
        });
    }
    Ok(out)
}

/// Depth map of the hits; misses are invalid.
pub fn raycast_depth<F: ScalarField + ?Sized>(
    field: &F,
    k: &CameraIntrinsics,
    camera_to_world: &RigidTransform,
    cfg: &TraceConfig,
) -> Result<DepthMap> {
    let hits = raycast(field, k, camera_to_world, cfg)?;
    DepthMap::new(
        k.width,
        k.height,
        hits.iter().map(|h| h.map_or(DepthMap::INVALID, |h| h.depth)).collect(),
    )
}
