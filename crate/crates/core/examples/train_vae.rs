//! Trains the desk-sized autoencoder on the four library shapes in random
//! camera frames, then reports reconstruction error on unseen views.
//!
//! Usage: `cargo run --release --example train_vae -- [steps] [out_dir]`

use std::path::PathBuf;
use std::time::Instant;

use posegen::data::{reconstruction_report, standard_library, PoseSampler, PoseSamplerConfig};
use posegen::nn::OptimConfig;
use posegen::vae::{train_vae, Vae, VaeConfig, VaeTrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> posegen::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(4000);
    let out = args.next().map(PathBuf::from);

    let sampler = PoseSampler::new(standard_library(4)?, PoseSamplerConfig::default())?;
    let mut vae = Vae::<f32>::new(VaeConfig::desk(), 0)?;
    let cfg = VaeTrainConfig {
        steps,
        batch: 8,
        queries: 1024,
        optim: OptimConfig {
            lr: 2e-3,
            warmup_steps: 100,
            total_steps: steps,
            ..OptimConfig::default()
        },
        log_every: 100,
        ..VaeTrainConfig::default()
    };
    let points = vae.config.points;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    train_vae(
        &mut vae,
        &cfg,
        |_, _| sampler.vae_example(points, cfg.queries, cfg.near_fraction, cfg.near_sigma, &mut rng),
        |r| println!("{}  ({:.0}s)", r.csv_line(), start.elapsed().as_secs_f64()),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(777);
    let (mut cd, mut err) = (0.0, 0.0);
    let n = 8;
    for i in 0..n {
        let posed = sampler.sample(&mut rng)?;
        let r = reconstruction_report(&vae, &posed, 64, 10_000, 10_000, i)?;
        println!("held-out {} cd {:.3e} sdf {:.3e}", posed.shape.id, r.chamfer, r.sdf_error);
        cd += r.chamfer / n as f64;
        err += r.sdf_error / n as f64;
    }
    println!("mean held-out cd {cd:.3e} sdf {err:.3e}");
    if let Some(dir) = out {
        vae.save(&dir, steps)?;
        println!("saved {}", dir.display());
    }
    Ok(())
}
