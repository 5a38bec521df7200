//! Rectified-flow latent generator conditioned on a geometric anchor latent
//! and an image embedding.
//!
//! The velocity network sees the noisy latent `z_t` and the anchor `z_geo`
//! as one token sequence of length `2L`; only the first `L` outputs are
//! read. Sampling integrates the learned velocity from Gaussian noise at
//! `t = 0` to data at `t = 1`, with classifier-free guidance contrasting the
//! fully conditioned and fully dropped branches.

mod image;
mod net;
mod sampler;
mod train;

pub use image::{image_patches, prepare_image, IMAGE_PAD_RATIO};
pub use net::{ConditioningBundle, FlowConfig, FlowModel};
pub use sampler::{initial_noise, sample_latents, OdeSolver, SamplerConfig};
pub use train::{
    draw_flow_noise, fm_loss_value, train_flow, train_step, FlowExample, FlowItem, FlowTrainConfig, StepMetrics,
};

use crate::error::{Error, Result};
use crate::vae::LatentTokenSet;

/// Anything that predicts an `L × C` velocity for a latent state.
pub trait VelocityField {
    fn velocity(&self, z_t: &LatentTokenSet, t: f64, cond: &ConditioningBundle) -> Result<LatentTokenSet>;
}

fn same_shape(a: &LatentTokenSet, b: &LatentTokenSet, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `t·z1 + (1 − t)·z0`.
pub fn interpolate(z0: &LatentTokenSet, z1: &LatentTokenSet, t: f64) -> Result<LatentTokenSet> {
    same_shape(z0, z1, "interpolate")?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidInput(format!("interpolation time {t} outside [0, 1]")));
    }
    let mut out = z0.clone();
    for (o, b) in out.tokens.data.iter_mut().zip(&z1.tokens.data) {
        *o = t * b + (1.0 - t) * *o;
    }
    Ok(out)
}

/// Guided velocity `v_u + s·(v_c − v_u)`; `s = 0` and `s = 1` return the
/// respective branch unchanged.
pub fn cfg_combine(v_uncond: &LatentTokenSet, v_cond: &LatentTokenSet, strength: f64) -> Result<LatentTokenSet> {
    same_shape(v_uncond, v_cond, "cfg_combine")?;
    if strength == 1.0 {
        return Ok(v_cond.clone());
    }
    if strength == 0.0 {
        return Ok(v_uncond.clone());
    }
    let mut out = v_uncond.clone();
    for (o, c) in out.tokens.data.iter_mut().zip(&v_cond.tokens.data) {
        *o += strength * (c - *o);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_latent(l: usize, c: usize, seed: u64) -> LatentTokenSet {
        initial_noise(l, c, seed)
    }

    #[test]
    fn interpolate_examples() {
        let z0 = LatentTokenSet::zeros(3, 4);
        let z1 = LatentTokenSet::filled(3, 4, 2.0);
        assert_eq!(interpolate(&z0, &z1, 0.5).unwrap(), LatentTokenSet::filled(3, 4, 1.0));
        assert!(interpolate(&z0, &z1, 1.5).is_err());
        assert!(interpolate(&z0, &LatentTokenSet::zeros(2, 4), 0.5).is_err());
    }

    #[test]
    fn cfg_examples() {
        let u = LatentTokenSet::zeros(2, 3);
        let c = LatentTokenSet::filled(2, 3, 1.0);
        assert_eq!(cfg_combine(&u, &c, 3.0).unwrap(), LatentTokenSet::filled(2, 3, 3.0));
        assert_eq!(cfg_combine(&u, &c, 0.0).unwrap(), u);
        assert!(cfg_combine(&u, &LatentTokenSet::zeros(3, 3), 1.0).is_err());
    }

    proptest! {
        #[test]
        fn endpoints_are_exact(s0 in any::<u64>(), s1 in any::<u64>()) {
            let z0 = random_latent(4, 5, s0);
            let z1 = random_latent(4, 5, s1);
            prop_assert_eq!(interpolate(&z0, &z1, 0.0).unwrap(), z0.clone());
            prop_assert_eq!(interpolate(&z0, &z1, 1.0).unwrap(), z1.clone());
            prop_assert_eq!(cfg_combine(&z0, &z1, 1.0).unwrap(), z1);
        }

        #[test]
        fn interpolation_is_affine(seed in any::<u64>(), t in 0.0f64..=1.0) {
            let z0 = random_latent(3, 3, seed);
            let z1 = random_latent(3, 3, seed ^ 1);
            let zt = interpolate(&z0, &z1, t).unwrap();
            for i in 0..9 {
                let want = t * z1.tokens.data[i] + (1.0 - t) * z0.tokens.data[i];
                prop_assert!((zt.tokens.data[i] - want).abs() < 1e-12);
            }
        }
    }
}
