//! Renders a small training dataset (clean or corrupted conditions) and
//! prints the per-sample augmentation flags from the manifest.
//!
//! Usage: `cargo run --release --example render_dataset -- <out_dir> [stage] [views]`

use posegen::data::{build_dataset, standard_library, DatasetConfig};

fn main() -> posegen::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "dataset".into());
    let stage: u8 = args.next().and_then(|s| s.parse().ok()).unwrap_or(2);
    let views: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);

    let cfg = DatasetConfig {
        stage,
        views_per_shape: views,
        ..DatasetConfig::default()
    };
    let manifest = build_dataset(&standard_library(4)?, &cfg, &out, 7)?;
    for s in &manifest.samples {
        let f = &s.flags;
        println!(
            "{:<12} az {:6.1} el {:5.1}  occluded {:5} noise {:5} estimated {:5} fov {:?} lookat {:?}",
            s.id, s.view.azimuth_deg, s.view.elevation_deg, f.occluded, f.depth_noise, f.estimated_depth, f.fov_scale, f.lookat_offset
        );
    }
    println!("{} samples, config hash {}", manifest.samples.len(), manifest.config_hash);
    Ok(())
}
