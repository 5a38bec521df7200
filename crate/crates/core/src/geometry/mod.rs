//! Camera geometry, rigid motions, and oriented point clouds.

mod camera;
mod cloud;
mod transform;

pub use camera::{
    compute_normals_from_depth, is_valid_depth, unproject_depth, unproject_depth_masked, CameraIntrinsics,
    DepthMap,
};
pub use cloud::{
    bounds_of, normalize_to_unit_box, normalize_to_unit_box_with, resample_to_fixed_size, NormalizationConstants,
    OrientedPointCloud, MIN_NORMALIZATION_SCALE,
};
pub use transform::{apply_rigid_transform, RigidTransform, Transformable, Vec3};
