//! Central finite-difference oracle for checking back-propagated gradients.
//!
//! Independent of the tape: it only perturbs parameter entries and re-evaluates
//! a scalar loss closure.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Grads, ParamSet};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub checked: usize,
    pub tensors_checked: usize,
}

/// Relative error with an absolute floor so gradients that are numerically
/// zero do not divide by zero.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` against central differences of `loss` for up to
/// `per_tensor` randomly chosen entries of every parameter tensor.
pub fn check_gradients(
    params: &ParamSet<f64>,
    analytic: &Grads<f64>,
    per_tensor: usize,
    step: f64,
    floor: f64,
    seed: u64,
    loss: impl Fn(&ParamSet<f64>) -> f64,
) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        checked: 0,
        tensors_checked: 0,
    };
    for id in 0..params.len() {
        let n = params.tensor(id).len();
        let picks = sample(&mut rng, n, per_tensor.min(n));
        for idx in picks.iter() {
            let orig = params.tensor(id).data[idx];
            work.tensor_mut(id).data[idx] = orig + step;
            let up = loss(&work);
            work.tensor_mut(id).data[idx] = orig - step;
            let down = loss(&work);
            work.tensor_mut(id).data[idx] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = relative_error(analytic.tensors[id].data[idx], numeric, floor);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = format!("{}[{idx}]", params.name(id));
            }
            report.checked += 1;
        }
        report.tensors_checked += 1;
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{fourier_features, Attention, Graph, Linear, Mat, Mlp, SelfAttentionBlock};

    fn small_net(seed: u64) -> (ParamSet<f64>, Linear, SelfAttentionBlock, Attention, Mlp, usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let inp = Linear::new(&mut ps, &mut rng, "in", 7, 8, true);
        let blk = SelfAttentionBlock::new(&mut ps, &mut rng, "blk", 8, 2, 2);
        let cross = Attention::new(&mut ps, &mut rng, "cross", 8, 8, 8, 2, 1.0);
        let head = Mlp::new(&mut ps, &mut rng, "head", 8, 6, 3, 1.0);
        let gain = ps.add_normal(&mut rng, "gain", 1, 8, 1.0);
        (ps, inp, blk, cross, head, gain)
    }

    fn forward(
        ps: &ParamSet<f64>,
        parts: &(Linear, SelfAttentionBlock, Attention, Mlp, usize),
        x: &Mat<f64>,
        target: &Mat<f64>,
    ) -> (f64, Grads<f64>) {
        let (inp, blk, cross, head, gain) = parts;
        let mut g = Graph::new(ps);
        let x = g.constant(x.clone());
        let h = inp.forward(&mut g, x);
        let h = g.silu(h);
        let h = blk.forward(&mut g, h);
        let gv = g.param(*gain);
        let h2 = g.mul_row(h, gv);
        let top = g.slice_rows(h2, 0, 2);
        let rest = g.slice_rows(h2, 2, 3);
        let ctx = g.concat_rows(&[rest, top]);
        let c = cross.forward(&mut g, h, ctx);
        let h = g.add(h, c);
        let pooled = g.mean_rows(h);
        let pooled = g.broadcast_rows(pooled, 5);
        let h = g.sub(h, pooled);
        let h = g.tanh(h);
        let a = g.slice_cols(h, 0, 4);
        let b = g.slice_cols(h, 4, 4);
        let h = g.concat_cols(&[b, a]);
        let s = g.matmul_nt(h, h);
        let s = g.softmax_rows(s);
        let h = g.matmul(s, h);
        let y = head.forward(&mut g, h);
        let y = g.scale(y, 1.5);
        let loss = g.mse(y, target.clone());
        let v = g.value(loss).data[0];
        (v, g.backward(loss))
    }

    #[test]
    fn composite_graph_matches_finite_differences() {
        for seed in 0..3 {
            let (ps, inp, blk, cross, head, gain) = small_net(seed);
            let parts = (inp, blk, cross, head, gain);
            let coords: Vec<f64> = (0..5).map(|i| 0.3 * i as f64 - 0.5).collect();
            let x = fourier_features::<f64>(&coords, 1, 3);
            let target = Mat::from_fn(5, 3, |i, j| ((i + 2 * j) as f64).sin());
            let (_, grads) = forward(&ps, &parts, &x, &target);
            let r = check_gradients(&ps, &grads, 6, 1e-6, 1e-5, seed, |p| {
                forward(p, &parts, &x, &target).0
            });
            assert!(r.max_rel_error < 1e-5, "{r:?}");
        }
    }
}
