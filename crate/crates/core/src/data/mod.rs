//! Synthetic training data: library shapes, depth renders, conditioning
//! corruptions, on-disk datasets and the watertightness filter.

mod augment;
mod dataset;
mod filter;
mod frame;
mod poses;
mod render;
mod shapes;

pub use augment::{
    corrupt_condition, gaussian_depth_noise, occlusion_augment, AugmentationConfig, AugmentationFlags,
    ConditionInput, CorruptedCondition,
};
pub use dataset::{
    build_dataset, load_sample, render_training_sample, MANIFEST_FILE, DatasetConfig, DatasetManifest, SampleRecord, TrainingSample,
};
pub use filter::{watertightness_filter, FilterConfig, WatertightnessReport};
pub use poses::{reconstruction_report, PoseSampler, PoseSamplerConfig, ReconstructionReport};
pub use frame::{conditioning_cloud, observation_frame, FramingConfig};
pub use render::{
    align_mesh_to_view, random_views, render_view, render_views, render_with_pose, ring_views, RenderConfig,
    RenderedView, ViewSpec,
};
pub use shapes::{
    library_sdf, standard_library, CanonicalShape, PoseRecord, PosedShape, CANONICAL_MESH_RESOLUTION, LIBRARY_NAMES,
};
