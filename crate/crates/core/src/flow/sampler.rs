use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{cfg_combine, ConditioningBundle, VelocityField};
use crate::error::{Error, Result};
use crate::nn::Mat;
use crate::vae::LatentTokenSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OdeSolver {
    Euler,
    Heun,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub steps: usize,
    pub cfg_strength: f64,
    pub seed: u64,
    pub solver: OdeSolver,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            steps: 50,
            cfg_strength: 3.0,
            seed: 0,
            solver: OdeSolver::Euler,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config {
                key: "sampler.steps".into(),
                message: "must be at least 1".into(),
            });
        }
        if !(self.cfg_strength >= 0.0 && self.cfg_strength.is_finite()) {
            return Err(Error::Config {
                key: "sampler.cfg_strength".into(),
                message: format!("must be finite and ≥ 0, got {}", self.cfg_strength),
            });
        }
        Ok(())
    }
}

/// Standard normal `L × C` latent drawn from `seed`.
pub fn initial_noise(l: usize, c: usize, seed: u64) -> LatentTokenSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LatentTokenSet {
        tokens: Mat::from_fn(l, c, |_, _| StandardNormal.sample(&mut rng)),
    }
}

fn guided<V: VelocityField + ?Sized>(
    v: &V,
    z: &LatentTokenSet,
    t: f64,
    cond: &ConditioningBundle,
    strength: f64,
) -> Result<LatentTokenSet> {
    if strength == 1.0 {
        return v.velocity(z, t, cond);
    }
    let vu = v.velocity(z, t, &cond.dropped())?;
    if strength == 0.0 {
        return Ok(vu);
    }
    cfg_combine(&vu, &v.velocity(z, t, cond)?, strength)
}

fn axpy(z: &mut LatentTokenSet, a: f64, v: &LatentTokenSet) {
    for (zi, vi) in z.tokens.data.iter_mut().zip(&v.tokens.data) {
        *zi += a * vi;
    }
}

/// Integrates the guided velocity from `z0 = initial_noise(seed)` at `t = 0`
/// to `t = 1` on a uniform grid of `steps` intervals. The latent shape is
/// taken from `cond.z_geo`.
pub fn sample_latents<V: VelocityField + ?Sized>(
    v: &V,
    cond: &ConditioningBundle,
    sampler: &SamplerConfig,
) -> Result<LatentTokenSet> {
    sampler.validate()?;
    let (l, c) = cond.z_geo.shape();
    let mut z = initial_noise(l, c, sampler.seed);
    let dt = 1.0 / sampler.steps as f64;
    for i in 0..sampler.steps {
        let t = i as f64 * dt;
        let v1 = guided(v, &z, t, cond, sampler.cfg_strength)?;
        v1.check_shape(l, c, "velocity")?;
        match sampler.solver {
            OdeSolver::Euler => axpy(&mut z, dt, &v1),
            OdeSolver::Heun => {
                let mut pred = z.clone();
                axpy(&mut pred, dt, &v1);
                let t2 = ((i + 1) as f64 * dt).min(1.0);
                let v2 = guided(v, &pred, t2, cond, sampler.cfg_strength)?;
                axpy(&mut z, 0.5 * dt, &v1);
                axpy(&mut z, 0.5 * dt, &v2);
            }
        }
        if !z.tokens.all_finite() {
            return Err(Error::NonFinite(format!("sampler state after step {} of {}", i + 1, sampler.steps)));
        }
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::GrayImage;

    /// Constant field pointing from the sampler's starting noise to a target.
    struct ToTarget {
        delta: LatentTokenSet,
    }

    impl VelocityField for ToTarget {
        fn velocity(&self, _: &LatentTokenSet, _: f64, _: &ConditioningBundle) -> Result<LatentTokenSet> {
            Ok(self.delta.clone())
        }
    }

    /// `v = −z`: the exact flow is `z(1) = z0·e⁻¹`.
    struct Decay;

    impl VelocityField for Decay {
        fn velocity(&self, z: &LatentTokenSet, _: f64, _: &ConditioningBundle) -> Result<LatentTokenSet> {
            let mut out = z.clone();
            out.tokens.data.iter_mut().for_each(|v| *v = -*v);
            Ok(out)
        }
    }

    fn cond() -> ConditioningBundle {
        ConditioningBundle::new(LatentTokenSet::zeros(3, 4), GrayImage::filled(4, 4, 1.0))
    }

    #[test]
    fn constant_field_reaches_target() {
        let target = initial_noise(3, 4, 99);
        let z0 = initial_noise(3, 4, 5);
        let mut delta = target.clone();
        for (d, z) in delta.tokens.data.iter_mut().zip(&z0.tokens.data) {
            *d -= z;
        }
        let field = ToTarget { delta };
        for steps in [1, 7, 50] {
            for solver in [OdeSolver::Euler, OdeSolver::Heun] {
                let s = SamplerConfig {
                    steps,
                    cfg_strength: 3.0,
                    seed: 5,
                    solver,
                };
                let z = sample_latents(&field, &cond(), &s).unwrap();
                assert!(z.max_abs_diff(&target) < 1e-12);
            }
        }
    }

    #[test]
    fn solver_orders() {
        let z0 = initial_noise(3, 4, 1);
        let exact: Vec<f64> = z0.tokens.data.iter().map(|v| v * (-1f64).exp()).collect();
        let err = |steps, solver| {
            let s = SamplerConfig {
                steps,
                cfg_strength: 1.0,
                seed: 1,
                solver,
            };
            let z = sample_latents(&Decay, &cond(), &s).unwrap();
            z.tokens.data.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        let (e1, e2) = (err(20, OdeSolver::Euler), err(40, OdeSolver::Euler));
        assert!((e1 / e2 - 2.0).abs() < 0.1, "{}", e1 / e2);
        let (h1, h2) = (err(20, OdeSolver::Heun), err(40, OdeSolver::Heun));
        assert!((h1 / h2 - 4.0).abs() < 0.3, "{}", h1 / h2);
    }

    #[test]
    fn seeded_and_validated() {
        let s = SamplerConfig::default();
        assert_eq!(sample_latents(&Decay, &cond(), &s).unwrap(), sample_latents(&Decay, &cond(), &s).unwrap());
        assert!(sample_latents(&Decay, &cond(), &SamplerConfig { steps: 0, ..s.clone() }).is_err());
        assert!(sample_latents(&Decay, &cond(), &SamplerConfig { cfg_strength: -1.0, ..s }).is_err());
    }
}
