//! Small CPU training engine: dense matrices, a reverse-mode tape, AdamW,
//! and the handful of layers the shape autoencoder and velocity network need.

pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;
pub mod tensor;

use rand::Rng;

pub use graph::{Graph, Var};
pub use optim::{AdamW, OptimConfig, StepStats, TrainRecord};
pub use params::{CheckpointManifest, Grads, ParamSet};
pub use tensor::{Mat, Real};

/// Affine layer `x·W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: usize,
    pub b: Option<usize>,
}

impl Linear {
    pub fn new<T: Real, R: Rng>(
        ps: &mut ParamSet<T>,
        rng: &mut R,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
    ) -> Self {
        Self::with_gain(ps, rng, name, fan_in, fan_out, bias, 1.0)
    }

    pub fn with_gain<T: Real, R: Rng>(
        ps: &mut ParamSet<T>,
        rng: &mut R,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        gain: f64,
    ) -> Self {
        let w = ps.add_normal(rng, format!("{name}.w"), fan_in, fan_out, gain / (fan_in as f64).sqrt());
        let b = bias.then(|| ps.add_zeros(format!("{name}.b"), 1, fan_out));
        Linear { w, b }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let w = g.param(self.w);
        let y = g.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

/// Two-layer GELU MLP.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<T: Real, R: Rng>(
        ps: &mut ParamSet<T>,
        rng: &mut R,
        name: &str,
        width: usize,
        hidden: usize,
        out: usize,
        out_gain: f64,
    ) -> Self {
        Mlp {
            fc1: Linear::new(ps, rng, &format!("{name}.fc1"), width, hidden, true),
            fc2: Linear::with_gain(ps, rng, &format!("{name}.fc2"), hidden, out, true, out_gain),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let h = self.fc1.forward(g, x);
        let h = g.gelu(h);
        self.fc2.forward(g, h)
    }
}

/// Multi-head attention with input and output projections.
#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng>(
        ps: &mut ParamSet<T>,
        rng: &mut R,
        name: &str,
        q_width: usize,
        kv_width: usize,
        width: usize,
        heads: usize,
        out_gain: f64,
    ) -> Self {
        Attention {
            q: Linear::new(ps, rng, &format!("{name}.q"), q_width, width, false),
            k: Linear::new(ps, rng, &format!("{name}.k"), kv_width, width, false),
            v: Linear::new(ps, rng, &format!("{name}.v"), kv_width, width, false),
            o: Linear::with_gain(ps, rng, &format!("{name}.o"), width, q_width, true, out_gain),
            heads,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, ctx: Var) -> Var {
        let q = self.q.forward(g, x);
        let k = self.k.forward(g, ctx);
        let v = self.v.forward(g, ctx);
        let a = g.attention(q, k, v, self.heads);
        self.o.forward(g, a)
    }
}

/// Pre-norm transformer block: self-attention then MLP, both residual.
#[derive(Clone, Debug)]
pub struct SelfAttentionBlock {
    pub attn: Attention,
    pub mlp: Mlp,
}

impl SelfAttentionBlock {
    pub fn new<T: Real, R: Rng>(
        ps: &mut ParamSet<T>,
        rng: &mut R,
        name: &str,
        width: usize,
        heads: usize,
        mlp_ratio: usize,
    ) -> Self {
        SelfAttentionBlock {
            attn: Attention::new(ps, rng, &format!("{name}.attn"), width, width, width, heads, 0.5),
            mlp: Mlp::new(ps, rng, &format!("{name}.mlp"), width, width * mlp_ratio, width, 0.5),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let h = g.layer_norm(x);
        let a = self.attn.forward(g, h, h);
        let x = g.add(x, a);
        let h = g.layer_norm(x);
        let m = self.mlp.forward(g, h);
        g.add(x, m)
    }
}

/// Sinusoidal features: each input column `c` becomes `[c, sin(f_k·c), cos(f_k·c)]`
/// for `bands` frequencies `f_k = π·2^(k/2)`.
pub fn fourier_features<T: Real>(coords: &[f64], dims: usize, bands: usize) -> Mat<T> {
    assert_eq!(coords.len() % dims, 0);
    let n = coords.len() / dims;
    let width = dims * (1 + 2 * bands);
    let freqs: Vec<f64> = (0..bands)
        .map(|k| std::f64::consts::PI * 2f64.powf(k as f64 * 0.5))
        .collect();
    let mut out = Mat::zeros(n, width);
    for i in 0..n {
        let row = out.row_mut(i);
        for d in 0..dims {
            let c = coords[i * dims + d];
            let base = d * (1 + 2 * bands);
            row[base] = T::c(c);
            for (k, f) in freqs.iter().enumerate() {
                let (s, co) = (f * c).sin_cos();
                row[base + 1 + 2 * k] = T::c(s);
                row[base + 2 + 2 * k] = T::c(co);
            }
        }
    }
    out
}

pub fn fourier_width(dims: usize, bands: usize) -> usize {
    dims * (1 + 2 * bands)
}
