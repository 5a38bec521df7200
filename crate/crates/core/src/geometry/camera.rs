//! Pinhole intrinsics, metric depth maps, and depth unprojection.
//!
//! Convention: right-handed camera frame, +z forward, image u to the right
//! and v downwards, pixel centers at integer coordinates.

use serde::{Deserialize, Serialize};

use super::cloud::OrientedPointCloud;
use super::transform::Vec3;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Square image with the principal point at the center and the given
    /// horizontal field of view in degrees.
    pub fn from_fov(size: usize, fov_deg: f64) -> Result<Self> {
        let f = 0.5 * size as f64 / (0.5 * fov_deg.to_radians()).tan();
        let c = 0.5 * (size as f64 - 1.0);
        Self::new(f, f, c, c, size, size)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidInput(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64)
        {
            return Err(Error::InvalidInput(format!(
                "principal point ({}, {}) outside {}×{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// `K⁻¹[u, v, 1]ᵀ · d`.
    #[inline]
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx * depth, (v - self.cy) / self.fy * depth, depth)
    }

    /// Pixel coordinates and depth of a camera-frame point; `None` behind the camera.
    #[inline]
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        (p.z > 0.0).then(|| (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Unit direction of the ray through pixel `(u, v)`.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vec3 {
        self.unproject(u, v, 1.0).normalize()
    }
}

/// Per-pixel metric depth, row-major (`v * width + u`). Invalid pixels hold
/// [`DepthMap::INVALID`].
#[derive(Clone, Debug)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

/// Invalid pixels compare equal to each other.
impl PartialEq for DepthMap {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a == b || (a.is_nan() && b.is_nan()))
    }
}

impl DepthMap {
    /// Sentinel for pixels with no depth. Serialized as 0.
    pub const INVALID: f64 = f64::NAN;

    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Shape(format!(
                "depth map {width}×{height} given {} values",
                values.len()
            )));
        }
        let values = values
            .into_iter()
            .map(|d| if is_valid_depth(d) { d } else { Self::INVALID })
            .collect();
        Ok(DepthMap {
            width,
            height,
            values,
        })
    }

    pub fn invalid(width: usize, height: usize) -> Self {
        DepthMap {
            width,
            height,
            values: vec![Self::INVALID; width * height],
        }
    }

    pub fn constant(width: usize, height: usize, d: f64) -> Self {
        DepthMap {
            width,
            height,
            values: vec![d; width * height],
        }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[v * self.width + u]
    }

    #[inline]
    pub fn is_valid(&self, u: usize, v: usize) -> bool {
        is_valid_depth(self.get(u, v))
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|d| is_valid_depth(**d)).count()
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        self.values.iter().map(|d| is_valid_depth(*d)).collect()
    }

    fn check_intrinsics(&self, k: &CameraIntrinsics) -> Result<()> {
        if self.width != k.width || self.height != k.height {
            return Err(Error::Shape(format!(
                "depth map is {}×{} but intrinsics describe {}×{}",
                self.width, self.height, k.width, k.height
            )));
        }
        Ok(())
    }
}

#[inline]
pub fn is_valid_depth(d: f64) -> bool {
    d.is_finite() && d > 0.0
}

/// One point per valid pixel, in row-major pixel order, with normals from
/// [`compute_normals_from_depth`].
pub fn unproject_depth(depth: &DepthMap, k: &CameraIntrinsics) -> Result<OrientedPointCloud> {
    unproject_depth_masked(depth, k, None).map(|(cloud, _)| cloud)
}

/// Like [`unproject_depth`], restricted to pixels where `mask` is set. Also
/// returns the linear pixel index of every emitted point.
pub fn unproject_depth_masked(
    depth: &DepthMap,
    k: &CameraIntrinsics,
    mask: Option<&[bool]>,
) -> Result<(OrientedPointCloud, Vec<usize>)> {
    depth.check_intrinsics(k)?;
    if let Some(m) = mask {
        if m.len() != depth.values.len() {
            return Err(Error::Shape(format!(
                "mask has {} pixels, depth has {}",
                m.len(),
                depth.values.len()
            )));
        }
    }
    let normals = compute_normals_from_depth(depth, k)?;
    let mut points = Vec::new();
    let mut out_normals = Vec::new();
    let mut pixels = Vec::new();
    for v in 0..depth.height {
        for u in 0..depth.width {
            let i = v * depth.width + u;
            let d = depth.values[i];
            if !is_valid_depth(d) || mask.is_some_and(|m| !m[i]) {
                continue;
            }
            points.push(k.unproject(u as f64, v as f64, d));
            out_normals.push(normals[i]);
            pixels.push(i);
        }
    }
    Ok((OrientedPointCloud::new(points, out_normals)?, pixels))
}

/// Below this length the tangent cross product is treated as degenerate.
const MIN_NORMAL_NORM: f64 = 1e-12;

/// Per-pixel unit normals (row-major, one per pixel) from central differences
/// of the unprojected point map along u and v.
///
/// Non-finite depths count as zero. A pixel whose own depth or any of its
/// four neighbors is invalid, pixels on the image border, and pixels whose
/// cross product is near zero or non-finite all get the zero vector. Normals
/// are oriented toward the camera (`n · p ≤ 0`).
pub fn compute_normals_from_depth(depth: &DepthMap, k: &CameraIntrinsics) -> Result<Vec<Vec3>> {
    depth.check_intrinsics(k)?;
    let (w, h) = (depth.width, depth.height);
    let clamped: Vec<f64> = depth
        .values
        .iter()
        .map(|&d| if d.is_finite() { d } else { 0.0 })
        .collect();
    let point = |u: usize, v: usize| k.unproject(u as f64, v as f64, clamped[v * w + u]);
    let ok = |u: usize, v: usize| clamped[v * w + u] > 0.0;
    let mut normals = vec![Vec3::zeros(); w * h];
    if w < 3 || h < 3 {
        return Ok(normals);
    }
    for v in 1..h - 1 {
        for u in 1..w - 1 {
            if !(ok(u, v) && ok(u - 1, v) && ok(u + 1, v) && ok(u, v - 1) && ok(u, v + 1)) {
                continue;
            }
            let tu = point(u + 1, v) - point(u - 1, v);
            let tv = point(u, v + 1) - point(u, v - 1);
            let n = tu.cross(&tv);
            let len = n.norm();
            if !len.is_finite() || len < MIN_NORMAL_NORM {
                continue;
            }
            let mut n = n / len;
            if n.dot(&point(u, v)) > 0.0 {
                n = -n;
            }
            normals[v * w + u] = n;
        }
    }
    Ok(normals)
}
