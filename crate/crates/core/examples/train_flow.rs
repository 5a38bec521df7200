//! Overfits the desk flow model to four shapes seen from eight ring views and
//! generates each training view back from its clean depth.
//!
//! Usage: `cargo run --release --example train_flow -- <vae_dir> [steps] [out_dir]`
//! (train the autoencoder first with the `train_vae` example).

use std::path::PathBuf;
use std::time::Instant;

use posegen::data::{render_training_sample, ring_views, standard_library, DatasetConfig};
use posegen::flow::{train_flow, FlowConfig, FlowModel, FlowTrainConfig, SamplerConfig};
use posegen::nn::OptimConfig;
use posegen::pipeline::{flow_example, generate_posed_object, generation_errors, GenerationConfig};
use posegen::vae::Vae;

fn main() -> posegen::Result<()> {
    let mut args = std::env::args().skip(1);
    let vae_dir = PathBuf::from(args.next().expect("usage: train_flow <vae_dir> [steps] [out_dir]"));
    let steps: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let out = args.next().map(PathBuf::from);

    let (vae, _) = Vae::<f32>::load(&vae_dir)?;
    let cfg = DatasetConfig::default();
    let mut samples = Vec::new();
    for shape in standard_library(4)? {
        for (i, view) in ring_views(cfg.render.radius).iter().enumerate() {
            samples.push(render_training_sample(&shape, i, view, &cfg, i as u64)?);
        }
    }
    let mut flow = FlowModel::<f32>::new(FlowConfig::desk().for_vae(&vae.config), 0)?;
    let examples = samples
        .iter()
        .enumerate()
        .map(|(i, s)| flow_example(s, &vae, &flow, i as u64))
        .collect::<posegen::Result<Vec<_>>>()?;

    let tc = FlowTrainConfig {
        steps,
        batch: 8,
        optim: OptimConfig {
            lr: 1e-3,
            warmup_steps: 100,
            total_steps: steps,
            ..OptimConfig::default()
        },
        log_every: 100,
        ..FlowTrainConfig::default()
    };
    let start = Instant::now();
    let n = examples.len();
    train_flow(
        &mut flow,
        &tc,
        |step, i| Ok(examples[(step as usize * tc.batch + i) % n].clone()),
        |r| println!("{}  ({:.0}s)", r.csv_line(), start.elapsed().as_secs_f64()),
    )?;

    let gen = GenerationConfig {
        sampler: SamplerConfig {
            steps: 25,
            ..SamplerConfig::default()
        },
        ..GenerationConfig::default()
    };
    let (mut cd, mut one) = (0.0, 0.0);
    let eval: Vec<usize> = (0..n).step_by(3).collect();
    for &i in &eval {
        let s = &samples[i];
        let g = generate_posed_object(&s.image, &s.depth, &s.intrinsics, Some(&s.mask), &vae, &flow, &gen)?;
        let e = generation_errors(&g, &s.gt_mesh_camera_frame, 10_000, 5)?;
        println!("{} cd {:.3e} partial {:.3e}", s.id, e.chamfer, e.partial_to_surface);
        cd += e.chamfer / eval.len() as f64;
        one += e.partial_to_surface / eval.len() as f64;
    }
    println!("mean cd {cd:.3e} partial {one:.3e}");
    if let Some(dir) = out {
        flow.save(&dir, steps)?;
    }
    Ok(())
}
