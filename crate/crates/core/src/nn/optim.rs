//! AdamW with a cosine learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::params::{Grads, ParamSet};
use super::tensor::{Mat, Real};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    /// Floor of the cosine schedule as a fraction of `lr`.
    pub min_lr_ratio: f64,
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            warmup_steps: 0,
            total_steps: 1000,
            min_lr_ratio: 0.05,
            clip_norm: 1.0,
        }
    }
}

impl OptimConfig {
    /// Linear warmup followed by cosine decay to `min_lr_ratio·lr` at `total_steps`.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps > 0 && step < self.warmup_steps {
            return self.lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let p = (step.saturating_sub(self.warmup_steps) as f64 / span as f64).min(1.0);
        let floor = self.lr * self.min_lr_ratio;
        floor + 0.5 * (self.lr - floor) * (1.0 + (std::f64::consts::PI * p).cos())
    }
}

#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub config: OptimConfig,
    pub step: u64,
    m: Vec<Mat<T>>,
    v: Vec<Mat<T>>,
}

/// What one optimizer step did.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub grad_norm: f64,
    pub clipped_norm: f64,
    pub lr: f64,
}

impl<T: Real> AdamW<T> {
    pub fn new(config: OptimConfig, params: &ParamSet<T>) -> Self {
        let zeros: Vec<Mat<T>> = params.iter().map(|(_, m)| Mat::zeros(m.rows, m.cols)).collect();
        AdamW {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Clips `grads` to the configured global norm and applies one update.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &mut Grads<T>) -> StepStats {
        let grad_norm = grads.clip_global_norm(self.config.clip_norm);
        let clipped_norm = grads.global_norm();
        let lr = self.config.lr_at(self.step);
        self.step += 1;
        let c = &self.config;
        let b1 = T::c(c.beta1);
        let b2 = T::c(c.beta2);
        let bc1 = T::c(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::c(1.0 - c.beta2.powi(self.step as i32));
        let lr_t = T::c(lr);
        let eps = T::c(c.eps);
        let wd = T::c(lr * c.weight_decay);
        if lr == 0.0 {
            return StepStats {
                grad_norm,
                clipped_norm,
                lr,
            };
        }
        for id in 0..params.len() {
            let g = &grads.tensors[id];
            let p = params.tensor_mut(id);
            let m = &mut self.m[id];
            let v = &mut self.v[id];
            for i in 0..g.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (T::one() - b1) * gi;
                v.data[i] = b2 * v.data[i] + (T::one() - b2) * gi * gi;
                let mh = m.data[i] / bc1;
                let vh = v.data[i] / bc2;
                let pi = &mut p.data[i];
                *pi -= wd * *pi;
                *pi -= lr_t * mh / (vh.sqrt() + eps);
            }
        }
        StepStats {
            grad_norm,
            clipped_norm,
            lr,
        }
    }
}

/// One row of a training metrics log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

impl TrainRecord {
    pub const CSV_HEADER: &'static str = "step,loss,grad_norm,lr";

    pub fn csv_line(&self) -> String {
        format!("{},{:.8e},{:.6e},{:.6e}", self.step, self.loss, self.grad_norm, self.lr)
    }
}
