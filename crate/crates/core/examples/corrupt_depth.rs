//! Applies the depth-conditioning corruptions (occlusion, Gaussian noise,
//! structured estimator error, FoV and look-at perturbation) to one render
//! and reports how each changes the conditioning cloud.
//!
//! Usage: `cargo run --release --example corrupt_depth`

use posegen::data::{
    conditioning_cloud, corrupt_condition, occlusion_augment, render_view, AugmentationConfig, ConditionInput,
    RenderConfig, ViewSpec,
};
use posegen::geometry::Vec3;
use posegen::sdf::AnalyticSdf;

fn main() -> posegen::Result<()> {
    let cfg = RenderConfig::default();
    let view = ViewSpec::new(30.0, 20.0, cfg.radius);
    let torus = AnalyticSdf::torus(0.4, 0.13);
    let r = render_view(&torus, &view, &cfg)?;
    let clean = conditioning_cloud(&r.depth, &r.intrinsics, None)?;
    println!("clean: {} conditioning points", clean.len());

    let blocker = AnalyticSdf::sphere(0.25).translated(view.eye() * 0.4);
    let fg = render_view(&blocker, &view, &cfg)?;
    let occluded = occlusion_augment(&fg.depth, &fg.mask, &r.depth)?;
    println!("occluded: {} of {} depth pixels remain", occluded.valid_count(), r.depth.valid_count());

    let input = ConditionInput {
        depth: &r.depth,
        intrinsics: &r.intrinsics,
        camera_to_world: &r.camera_to_world,
        look_at_target: Vec3::zeros(),
        scene: Some(&torus),
        trace: cfg.trace.clone(),
    };
    let always = AugmentationConfig {
        depth_noise_prob: 1.0,
        estimated_depth_prob: 0.5,
        fov_prob: 1.0,
        lookat_prob: 1.0,
        ..AugmentationConfig::default()
    };
    for seed in 0..4 {
        let c = corrupt_condition(&input, &always, seed)?;
        let cloud = conditioning_cloud(&c.depth, &c.intrinsics, None)?;
        let shift = (cloud.centroid().unwrap() - clean.centroid().unwrap()).norm();
        println!("seed {seed}: {:?} -> {} points, centroid moved {shift:.3}", c.flags, cloud.len());
    }
    Ok(())
}
