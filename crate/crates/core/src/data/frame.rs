use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    normalize_to_unit_box, unproject_depth_masked, CameraIntrinsics, DepthMap, NormalizationConstants,
    OrientedPointCloud,
};

/// Extra similarity applied after unit-box normalization of a partial cloud.
///
/// The visible surface only bounds the front of an object; the occluded back
/// extends further along the viewing direction. Shrinking by `scale` and
/// moving the origin `depth_shift` unit-box half-widths forward keeps the
/// whole object inside `[−1, 1]³`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FramingConfig {
    pub scale: f64,
    pub depth_shift: f64,
}

impl Default for FramingConfig {
    fn default() -> Self {
        FramingConfig {
            scale: 1.6,
            depth_shift: 0.6,
        }
    }
}

impl FramingConfig {
    /// Plain unit-box normalization.
    pub fn none() -> Self {
        FramingConfig {
            scale: 1.0,
            depth_shift: 0.0,
        }
    }

    pub fn constants(&self) -> Result<NormalizationConstants> {
        NormalizationConstants::new([0.0, 0.0, self.depth_shift].into(), self.scale)
    }
}

/// Normalization constants of the generation frame for a camera-frame
/// partial cloud.
pub fn observation_frame(partial: &OrientedPointCloud, framing: &FramingConfig) -> Result<NormalizationConstants> {
    let (_, unit) = normalize_to_unit_box(partial)?;
    Ok(unit.then(&framing.constants()?))
}

/// Unprojects the valid (and optionally masked) pixels of `depth`, dropping
/// points whose normal could not be estimated.
pub fn conditioning_cloud(depth: &DepthMap, k: &CameraIntrinsics, mask: Option<&[bool]>) -> Result<OrientedPointCloud> {
    let (cloud, _) = unproject_depth_masked(depth, k, mask)?;
    let keep: Vec<usize> = (0..cloud.len()).filter(|&i| cloud.normals[i].norm() > 0.5).collect();
    if keep.is_empty() {
        return Err(Error::Empty("conditioning points with valid normals"));
    }
    Ok(cloud.permuted(&keep))
}
