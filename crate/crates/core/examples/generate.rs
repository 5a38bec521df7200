//! Renders one view of a library shape and generates its complete mesh in
//! that camera's frame with trained models.
//!
//! Usage: `cargo run --release --example generate -- <checkpoint_dir> [shape] [azimuth]`
//! where the checkpoint directory holds `vae/` and `flow/`.

use std::path::PathBuf;

use posegen::data::{library_sdf, render_view, RenderConfig, ViewSpec};
use posegen::flow::FlowModel;
use posegen::metrics::{evaluate_meshes, MetricConfig};
use posegen::pipeline::{generate_posed_object, GenerationConfig};
use posegen::sdf::{marching_cubes, sample_sdf_grid, GridBounds};
use posegen::vae::Vae;

fn main() -> posegen::Result<()> {
    let mut args = std::env::args().skip(1);
    let ckpt = PathBuf::from(args.next().expect("usage: generate <checkpoint_dir> [shape] [azimuth]"));
    let name = args.next().unwrap_or_else(|| "box".into());
    let az: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let (vae, _) = Vae::<f32>::load(&ckpt.join("vae"))?;
    let (flow, _) = FlowModel::<f32>::load(&ckpt.join("flow"))?;

    let sdf = library_sdf(&name).ok_or_else(|| posegen::Error::InvalidInput(format!("unknown shape {name}")))?;
    let cfg = RenderConfig::default();
    let r = render_view(&sdf, &ViewSpec::new(az, 0.0, cfg.radius), &cfg)?;
    let out = generate_posed_object(&r.image, &r.depth, &r.intrinsics, Some(&r.mask), &vae, &flow, &GenerationConfig::default())?;

    // Ground truth in the same camera frame.
    let canonical = marching_cubes(&sample_sdf_grid(&sdf, GridBounds::cube(1.0), [96; 3])?, 0.0);
    let w2c = r.camera_to_world.inverse();
    let gt = canonical.map_vertices(|v| w2c.apply_point(v));
    let report = evaluate_meshes(&out.mesh, &gt, Some(&out.partial.points), &MetricConfig::default())?;
    println!("{name} at azimuth {az}: {}", serde_json::to_string(&report).expect("serializes"));
    posegen::io::write_obj(format!("{name}_{az}.obj"), &out.mesh)?;
    Ok(())
}
