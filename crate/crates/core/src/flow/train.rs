use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sampler::initial_noise;
use super::{interpolate, ConditioningBundle, FlowModel, VelocityField};
use crate::error::{Error, Result};
use crate::nn::{AdamW, Grads, OptimConfig, TrainRecord};
use crate::vae::LatentTokenSet;

/// A training target with its (undropped) conditions.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowExample {
    pub z1: LatentTokenSet,
    pub cond: ConditioningBundle,
}

/// A fully specified loss term: target, noise, time and dropout already drawn.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowItem {
    pub z1: LatentTokenSet,
    pub z0: LatentTokenSet,
    pub t: f64,
    pub cond: ConditioningBundle,
}

/// Draws `t ~ U(0, 1)`, `z0 ~ N(0, I)`, and with probability `drop_rate`
/// drops both conditions.
pub fn draw_flow_noise<R: Rng>(example: &FlowExample, drop_rate: f64, rng: &mut R) -> FlowItem {
    let (l, c) = example.z1.shape();
    let t = rng.random::<f64>();
    let z0 = initial_noise(l, c, rng.random());
    let drop = rng.random::<f64>() < drop_rate;
    FlowItem {
        z1: example.z1.clone(),
        z0,
        t,
        cond: if drop { example.cond.dropped() } else { example.cond.clone() },
    }
}

/// Mean squared difference between `v(z_t, t, c)` and `z1 − z0`.
pub fn fm_loss_value<V: VelocityField + ?Sized>(v: &V, item: &FlowItem) -> Result<f64> {
    let zt = interpolate(&item.z0, &item.z1, item.t)?;
    let pred = v.velocity(&zt, item.t, &item.cond)?;
    pred.check_shape(item.z1.shape().0, item.z1.shape().1, "velocity")?;
    let n = pred.tokens.data.len() as f64;
    let s: f64 = pred
        .tokens
        .data
        .iter()
        .zip(&item.z1.tokens.data)
        .zip(&item.z0.tokens.data)
        .map(|((p, a), b)| (p - (a - b)).powi(2))
        .sum();
    Ok(s / n)
}

impl FlowModel<f32> {
    /// Flow-matching loss with freshly drawn time, noise and dropout.
    pub fn fm_loss<R: Rng>(&self, example: &FlowExample, drop_rate: f64, rng: &mut R) -> Result<(f64, Grads<f32>)> {
        self.loss(&draw_flow_noise(example, drop_rate, rng))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    pub loss: f64,
    pub grad_norm: f64,
    pub clipped_norm: f64,
    pub lr: f64,
}

/// One optimizer step on the mean loss of `batch`.
pub fn train_step(model: &mut FlowModel<f32>, opt: &mut AdamW<f32>, batch: &[FlowItem]) -> Result<StepMetrics> {
    if batch.is_empty() {
        return Err(Error::Empty("flow batch"));
    }
    let mut total = Grads::zeros_like(&model.params);
    let mut loss = 0.0;
    for item in batch {
        let (l, g) = model.loss(item)?;
        loss += l;
        total.add_assign(&g);
    }
    total.scale(1.0 / batch.len() as f32);
    if !total.all_finite() {
        return Err(Error::NonFinite(format!("flow gradients at optimizer step {}", opt.step)));
    }
    let s = opt.step(&mut model.params, &mut total);
    Ok(StepMetrics {
        loss: loss / batch.len() as f64,
        grad_norm: s.grad_norm,
        clipped_norm: s.clipped_norm,
        lr: s.lr,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowTrainConfig {
    pub steps: u64,
    pub batch: usize,
    pub drop_rate: f64,
    pub optim: OptimConfig,
    pub log_every: u64,
    pub seed: u64,
}

impl Default for FlowTrainConfig {
    fn default() -> Self {
        FlowTrainConfig {
            steps: 3000,
            batch: 8,
            drop_rate: 0.1,
            optim: OptimConfig {
                lr: 3e-4,
                warmup_steps: 100,
                total_steps: 3000,
                ..OptimConfig::default()
            },
            log_every: 50,
            seed: 0,
        }
    }
}

impl FlowTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Config {
                key: "flow_train.batch".into(),
                message: "must be positive".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.drop_rate) {
            return Err(Error::Config {
                key: "flow_train.drop_rate".into(),
                message: format!("probability {} outside [0, 1]", self.drop_rate),
            });
        }
        Ok(())
    }
}

/// Runs `cfg.steps` optimizer steps on examples from `next_example(step, i)`.
/// Returns one record per `log_every` window.
pub fn train_flow(
    model: &mut FlowModel<f32>,
    cfg: &FlowTrainConfig,
    mut next_example: impl FnMut(u64, usize) -> Result<FlowExample>,
    mut on_log: impl FnMut(&TrainRecord),
) -> Result<Vec<TrainRecord>> {
    cfg.validate()?;
    let mut opt = AdamW::new(cfg.optim.clone(), &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::new();
    let mut window = (0.0, 0usize);
    for step in 0..cfg.steps {
        let batch = (0..cfg.batch)
            .map(|i| next_example(step, i).map(|ex| draw_flow_noise(&ex, cfg.drop_rate, &mut rng)))
            .collect::<Result<Vec<_>>>()?;
        let m = train_step(model, &mut opt, &batch)?;
        window.0 += m.loss;
        window.1 += 1;
        if (step + 1) % cfg.log_every.max(1) == 0 || step + 1 == cfg.steps {
            let rec = TrainRecord {
                step: step + 1,
                loss: window.0 / window.1 as f64,
                grad_norm: m.grad_norm,
                lr: m.lr,
            };
            on_log(&rec);
            history.push(rec);
            window = (0.0, 0);
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowConfig;
    use crate::image::GrayImage;

    struct Oracle;

    impl VelocityField for Oracle {
        // z_t = t·z1 + (1 − t)·z0 cannot be inverted without both endpoints,
        // so the oracle is told the answer through the anchor slot.
        fn velocity(&self, _: &LatentTokenSet, _: f64, c: &ConditioningBundle) -> Result<LatentTokenSet> {
            Ok(c.z_geo.clone())
        }
    }

    struct Zero;

    impl VelocityField for Zero {
        fn velocity(&self, z: &LatentTokenSet, _: f64, _: &ConditioningBundle) -> Result<LatentTokenSet> {
            let (l, c) = z.shape();
            Ok(LatentTokenSet::zeros(l, c))
        }
    }

    fn tiny() -> FlowConfig {
        FlowConfig {
            latent_tokens: 4,
            latent_channels: 6,
            width: 16,
            heads: 2,
            depth: 1,
            mlp_ratio: 2,
            image_size: 8,
            patch: 4,
            time_bands: 3,
        }
    }

    fn example(seed: u64) -> FlowExample {
        FlowExample {
            z1: initial_noise(4, 6, seed),
            cond: ConditioningBundle::new(initial_noise(4, 6, seed + 1), GrayImage::filled(8, 8, 0.5)),
        }
    }

    #[test]
    fn loss_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seed in 0..5 {
            let mut item = draw_flow_noise(&example(seed), 0.0, &mut rng);
            let mut delta = item.z1.clone();
            for (d, z) in delta.tokens.data.iter_mut().zip(&item.z0.tokens.data) {
                *d -= z;
            }
            item.cond.z_geo = delta;
            assert_eq!(fm_loss_value(&Oracle, &item).unwrap(), 0.0);
        }
        let item = FlowItem {
            z1: LatentTokenSet::filled(4, 6, 1.0),
            z0: LatentTokenSet::zeros(4, 6),
            t: 0.3,
            cond: example(0).cond,
        };
        assert_eq!(fm_loss_value(&Zero, &item).unwrap(), 1.0);
    }

    #[test]
    fn joint_dropout_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ex = example(3);
        let n = 4000;
        let mut dropped = 0;
        for _ in 0..n {
            let it = draw_flow_noise(&ex, 0.1, &mut rng);
            assert_eq!(it.cond.drop_geo, it.cond.drop_img);
            assert!((0.0..1.0).contains(&it.t));
            dropped += it.cond.drop_geo as usize;
        }
        let sd = (n as f64 * 0.1 * 0.9).sqrt();
        assert!((dropped as f64 - 400.0).abs() < 3.0 * sd);
    }

    #[test]
    fn one_step_descends_on_its_batch() {
        let mut wins = 0;
        for seed in 0..100u64 {
            let mut model = FlowModel::<f32>::new(tiny(), seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let batch: Vec<FlowItem> = (0..4).map(|i| draw_flow_noise(&example(seed * 10 + i), 0.1, &mut rng)).collect();
            let mut opt = AdamW::new(
                OptimConfig {
                    lr: 1e-4,
                    ..OptimConfig::default()
                },
                &model.params,
            );
            let before = train_step(&mut model, &mut opt, &batch).unwrap();
            assert!(before.clipped_norm <= 1.0 + 1e-6);
            let after: f64 = batch.iter().map(|it| model.loss(it).unwrap().0).sum::<f64>() / 4.0;
            wins += (after < before.loss) as usize;
        }
        assert!(wins >= 95, "{wins}");
    }

    #[test]
    fn zero_lr_is_a_no_op() {
        let mut model = FlowModel::<f32>::new(tiny(), 1).unwrap();
        let before = model.params.clone();
        let mut opt = AdamW::new(
            OptimConfig {
                lr: 0.0,
                ..OptimConfig::default()
            },
            &model.params,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = vec![draw_flow_noise(&example(1), 0.0, &mut rng)];
        train_step(&mut model, &mut opt, &batch).unwrap();
        for ((_, a), (_, b)) in before.iter().zip(model.params.iter()) {
            assert_eq!(a.data, b.data);
        }
    }

    #[test]
    fn training_reduces_loss_and_logs() {
        let mut model = FlowModel::<f32>::new(tiny(), 3).unwrap();
        let cfg = FlowTrainConfig {
            steps: 150,
            batch: 4,
            drop_rate: 0.1,
            optim: OptimConfig {
                lr: 3e-3,
                total_steps: 150,
                ..OptimConfig::default()
            },
            log_every: 50,
            seed: 4,
        };
        let mut lines = Vec::new();
        let ex = example(7);
        let hist = train_flow(&mut model, &cfg, |_, _| Ok(ex.clone()), |r| lines.push(r.csv_line())).unwrap();
        assert_eq!(hist.len(), 3);
        assert_eq!(lines.len(), 3);
        assert!(hist[2].loss < hist[0].loss, "{hist:?}");
        assert!(train_flow(&mut model, &FlowTrainConfig { batch: 0, ..cfg }, |_, _| Ok(ex.clone()), |_| {}).is_err());
    }
}
