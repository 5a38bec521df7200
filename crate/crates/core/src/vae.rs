//! Set-latent shape autoencoder.
//!
//! The encoder turns an oriented point cloud into `L` latent tokens: each
//! point is featurized with sinusoidal encodings of its position and normal,
//! `L` learned query tokens cross-attend to the point set, and a few
//! self-attention blocks mix the tokens. Attention pools over points with a
//! softmax, so the result does not depend on point order.
//!
//! The decoder answers signed-distance queries. Latent tokens are lifted to
//! the model width and mixed by self-attention; each query's positional
//! encoding then cross-attends to the tokens. Both stages are symmetric in
//! the tokens, so permuting latent rows leaves every prediction unchanged.
//!
//! Training regresses truncated signed distances (targets clamped to
//! ±[`SDF_TRUNCATION`]).

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{OrientedPointCloud, Vec3};
use crate::nn::{
    fourier_features, fourier_width, AdamW, Attention, Grads, Graph, Linear, Mat, Mlp, OptimConfig, ParamSet, Real,
    SelfAttentionBlock, TrainRecord, Var,
};
use crate::sdf::{marching_cubes, sample_sdf_grid, GridBounds, TriangleMesh};

pub const SDF_TRUNCATION: f64 = 0.1;
const DECODE_CHUNK: usize = 4096;

/// `L × C` latent token matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTokenSet {
    pub tokens: Mat<f64>,
}

impl LatentTokenSet {
    pub fn new(tokens: Mat<f64>) -> Result<Self> {
        if !tokens.all_finite() {
            return Err(Error::NonFinite("latent tokens".into()));
        }
        Ok(LatentTokenSet { tokens })
    }

    pub fn zeros(l: usize, c: usize) -> Self {
        LatentTokenSet { tokens: Mat::zeros(l, c) }
    }

    pub fn filled(l: usize, c: usize, v: f64) -> Self {
        LatentTokenSet {
            tokens: Mat::filled(l, c, v),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tokens.shape()
    }

    pub fn permute_rows(&self, perm: &[usize]) -> Self {
        LatentTokenSet {
            tokens: self.tokens.permute_rows(perm),
        }
    }

    pub fn max_abs_diff(&self, other: &LatentTokenSet) -> f64 {
        self.tokens
            .data
            .iter()
            .zip(&other.tokens.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn check_shape(&self, l: usize, c: usize, what: &str) -> Result<()> {
        if self.shape() != (l, c) {
            return Err(Error::Shape(format!("{what} is {:?}, model expects ({l}, {c})", self.shape())));
        }
        Ok(())
    }
}

/// Architecture of the autoencoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeConfig {
    /// `L`.
    pub latent_tokens: usize,
    /// `C`.
    pub latent_channels: usize,
    /// `N_enc`: points per encoded cloud.
    pub points: usize,
    pub width: usize,
    pub heads: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    /// Sinusoidal frequency bands per coordinate.
    pub bands: usize,
    pub mlp_ratio: usize,
    /// Cross-attention + MLP rounds applied to each SDF query.
    pub query_layers: usize,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            latent_tokens: 64,
            latent_channels: 32,
            points: 2048,
            width: 128,
            heads: 4,
            encoder_blocks: 2,
            decoder_blocks: 1,
            bands: 8,
            mlp_ratio: 2,
            query_layers: 1,
        }
    }
}

impl VaeConfig {
    /// Single-core sized model used by the examples and acceptance tests.
    pub fn desk() -> Self {
        VaeConfig {
            latent_tokens: 16,
            latent_channels: 16,
            points: 384,
            width: 64,
            heads: 4,
            encoder_blocks: 1,
            decoder_blocks: 1,
            bands: 8,
            mlp_ratio: 2,
            query_layers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |key: &str, v: usize| {
            if v == 0 {
                Err(Error::Config {
                    key: format!("vae.{key}"),
                    message: "must be positive".into(),
                })
            } else {
                Ok(())
            }
        };
        pos("latent_tokens", self.latent_tokens)?;
        pos("latent_channels", self.latent_channels)?;
        pos("points", self.points)?;
        pos("width", self.width)?;
        pos("heads", self.heads)?;
        pos("mlp_ratio", self.mlp_ratio)?;
        pos("query_layers", self.query_layers)?;
        if self.width % self.heads != 0 {
            return Err(Error::Config {
                key: "vae.heads".into(),
                message: format!("width {} is not divisible by {} heads", self.width, self.heads),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Net {
    point_in: Linear,
    queries: usize,
    enc_cross: Attention,
    enc_cross_mlp: Mlp,
    enc_blocks: Vec<SelfAttentionBlock>,
    to_latent: Linear,
    from_latent: Linear,
    dec_blocks: Vec<SelfAttentionBlock>,
    query_in: Linear,
    dec_layers: Vec<(Attention, Mlp)>,
    head: Linear,
}

/// Autoencoder weights plus configuration.
#[derive(Clone, Debug)]
pub struct Vae<T: Real = f32> {
    pub config: VaeConfig,
    pub params: ParamSet<T>,
    net: Net,
}

impl<T: Real> Vae<T> {
    pub fn new(config: VaeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let net = Self::build(&config, &mut ps, &mut rng);
        Ok(Vae {
            config,
            params: ps,
            net,
        })
    }

    fn build(c: &VaeConfig, ps: &mut ParamSet<T>, rng: &mut ChaCha8Rng) -> Net {
        let w = c.width;
        let fw = fourier_width(3, c.bands);
        Net {
            point_in: Linear::new(ps, rng, "enc.point_in", 2 * fw, w, true),
            queries: ps.add_normal(rng, "enc.queries", c.latent_tokens, w, 1.0),
            enc_cross: Attention::new(ps, rng, "enc.cross", w, w, w, c.heads, 1.0),
            enc_cross_mlp: Mlp::new(ps, rng, "enc.cross_mlp", w, w * c.mlp_ratio, w, 0.5),
            enc_blocks: (0..c.encoder_blocks)
                .map(|i| SelfAttentionBlock::new(ps, rng, &format!("enc.block{i}"), w, c.heads, c.mlp_ratio))
                .collect(),
            to_latent: Linear::new(ps, rng, "enc.to_latent", w, c.latent_channels, true),
            from_latent: Linear::new(ps, rng, "dec.from_latent", c.latent_channels, w, true),
            dec_blocks: (0..c.decoder_blocks)
                .map(|i| SelfAttentionBlock::new(ps, rng, &format!("dec.block{i}"), w, c.heads, c.mlp_ratio))
                .collect(),
            query_in: Linear::new(ps, rng, "dec.query_in", fw, w, true),
            dec_layers: (0..c.query_layers)
                .map(|i| {
                    let suffix = if i == 0 { String::new() } else { i.to_string() };
                    (
                        Attention::new(ps, rng, &format!("dec.cross{suffix}"), w, w, w, c.heads, 1.0),
                        Mlp::new(ps, rng, &format!("dec.mlp{suffix}"), w, w * c.mlp_ratio, w, 0.5),
                    )
                })
                .collect(),
            head: Linear::with_gain(ps, rng, "dec.head", w, 1, true, 0.1),
        }
    }

    /// Same architecture and weights in another precision.
    pub fn cast<U: Real>(&self) -> Vae<U> {
        Vae {
            config: self.config.clone(),
            params: self.params.cast(),
            net: self.net.clone(),
        }
    }

    fn point_features(&self, cloud: &OrientedPointCloud) -> Mat<T> {
        let n = cloud.len();
        let pos: Vec<f64> = cloud.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
        let nrm: Vec<f64> = cloud.normals.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
        let a: Mat<T> = fourier_features(&pos, 3, self.config.bands);
        let b: Mat<T> = fourier_features(&nrm, 3, self.config.bands);
        Mat::from_fn(n, a.cols + b.cols, |r, c| if c < a.cols { a.at(r, c) } else { b.at(r, c - a.cols) })
    }

    fn query_features(&self, queries: &[Vec3]) -> Mat<T> {
        let q: Vec<f64> = queries.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
        fourier_features(&q, 3, self.config.bands)
    }

    fn encode_graph(&self, g: &mut Graph<'_, T>, feats: Var) -> Var {
        let n = &self.net;
        let h = n.point_in.forward(g, feats);
        let h = g.layer_norm(h);
        let q = g.param(n.queries);
        let qn = g.layer_norm(q);
        let a = n.enc_cross.forward(g, qn, h);
        let mut x = g.add(q, a);
        let xn = g.layer_norm(x);
        let m = n.enc_cross_mlp.forward(g, xn);
        x = g.add(x, m);
        for b in &n.enc_blocks {
            x = b.forward(g, x);
        }
        let xn = g.layer_norm(x);
        let z = n.to_latent.forward(g, xn);
        g.layer_norm(z)
    }

    /// Normalized decoder tokens used as attention keys/values.
    fn decoder_tokens(&self, g: &mut Graph<'_, T>, z: Var) -> Var {
        let mut t = self.net.from_latent.forward(g, z);
        for b in &self.net.dec_blocks {
            t = b.forward(g, t);
        }
        g.layer_norm(t)
    }

    fn decode_graph(&self, g: &mut Graph<'_, T>, tokens: Var, qfeat: Var) -> Var {
        let n = &self.net;
        let mut x = n.query_in.forward(g, qfeat);
        for (cross, mlp) in &n.dec_layers {
            let xn = g.layer_norm(x);
            let a = cross.forward(g, xn, tokens);
            x = g.add(x, a);
            let xn = g.layer_norm(x);
            let m = mlp.forward(g, xn);
            x = g.add(x, m);
        }
        let xn = g.layer_norm(x);
        n.head.forward(g, xn)
    }

    fn check_cloud(&self, cloud: &OrientedPointCloud) -> Result<()> {
        if cloud.len() != self.config.points {
            return Err(Error::Shape(format!(
                "encoder expects {} points, got {}",
                self.config.points,
                cloud.len()
            )));
        }
        Ok(())
    }

    /// `L × C` latent of a cloud with exactly `N_enc` points.
    pub fn encode(&self, cloud: &OrientedPointCloud) -> Result<LatentTokenSet> {
        self.check_cloud(cloud)?;
        let mut g = Graph::new(&self.params);
        let f = g.constant(self.point_features(cloud));
        let z = self.encode_graph(&mut g, f);
        LatentTokenSet::new(g.value(z).cast())
    }

    /// Predicted signed distance at every query point.
    pub fn decode_sdf(&self, z: &LatentTokenSet, queries: &[Vec3]) -> Result<Vec<f64>> {
        z.check_shape(self.config.latent_tokens, self.config.latent_channels, "latent")?;
        if queries.iter().any(|q| !q.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite("query points".into()));
        }
        let tokens = {
            let mut g = Graph::new(&self.params);
            let zv = g.constant(z.tokens.cast());
            let t = self.decoder_tokens(&mut g, zv);
            g.value(t).clone()
        };
        let mut out = Vec::with_capacity(queries.len());
        for chunk in queries.chunks(DECODE_CHUNK) {
            let mut g = Graph::new(&self.params);
            let t = g.constant(tokens.clone());
            let qf = g.constant(self.query_features(chunk));
            let s = self.decode_graph(&mut g, t, qf);
            out.extend(g.value(s).data.iter().map(|v| v.f64()));
        }
        Ok(out)
    }

    /// Mean squared error between predictions and targets clamped to
    /// ±[`SDF_TRUNCATION`], with gradients for every parameter.
    pub fn loss(&self, cloud: &OrientedPointCloud, queries: &[Vec3], targets: &[f64]) -> Result<(f64, Grads<T>)> {
        self.check_cloud(cloud)?;
        if queries.len() != targets.len() || queries.is_empty() {
            return Err(Error::Shape(format!(
                "{} queries with {} targets",
                queries.len(),
                targets.len()
            )));
        }
        let mut g = Graph::new(&self.params);
        let f = g.constant(self.point_features(cloud));
        let z = self.encode_graph(&mut g, f);
        let t = self.decoder_tokens(&mut g, z);
        let qf = g.constant(self.query_features(queries));
        let pred = self.decode_graph(&mut g, t, qf);
        let target = Mat::from_vec(
            targets.len(),
            1,
            targets.iter().map(|&v| T::c(v.clamp(-SDF_TRUNCATION, SDF_TRUNCATION))).collect(),
        );
        let loss = g.mse(pred, target);
        let lv = g.value(loss).data[0].f64();
        if !lv.is_finite() {
            let bad_pred = g.value(pred).data.iter().filter(|v| !v.is_finite()).count();
            return Err(Error::NonFinite(format!(
                "autoencoder loss {lv}; {bad_pred} of {} predictions non-finite, latent finite: {}",
                queries.len(),
                g.value(z).all_finite()
            )));
        }
        Ok((lv, g.backward(loss)))
    }

    /// Encodes, decodes a `resolution³` grid over `[−1, 1]³`, and extracts the
    /// zero level set.
    pub fn reconstruct_mesh(&self, cloud: &OrientedPointCloud, resolution: usize) -> Result<TriangleMesh> {
        let z = self.encode(cloud)?;
        self.latent_to_mesh(&z, resolution)
    }

    pub fn latent_to_mesh(&self, z: &LatentTokenSet, resolution: usize) -> Result<TriangleMesh> {
        let field = |pts: &[Vec3]| self.decode_sdf(z, pts).unwrap_or_else(|_| vec![f64::NAN; pts.len()]);
        z.check_shape(self.config.latent_tokens, self.config.latent_channels, "latent")?;
        let grid = sample_sdf_grid(&field, GridBounds::cube(1.0), [resolution; 3])?;
        Ok(marching_cubes(&grid, 0.0))
    }

    pub fn save(&self, dir: &Path, step: u64) -> Result<()> {
        self.params
            .save(dir, "vae", step, &serde_json::to_value(&self.config)?)
            .map_err(|e| e.at(dir))
    }

    /// Loads a checkpoint written by [`Vae::save`].
    pub fn load(dir: &Path) -> Result<(Self, u64)> {
        let (ps, manifest) = ParamSet::<T>::load(dir).map_err(|e| e.at(dir))?;
        if manifest.kind != "vae" {
            return Err(Error::Format(format!("checkpoint kind is {}, expected vae", manifest.kind)).at(dir));
        }
        let config: VaeConfig = serde_json::from_value(manifest.config.clone())?;
        let mut model = Vae::new(config, 0)?;
        model.params.assign_from(&ps).map_err(|e| e.at(dir))?;
        Ok((model, manifest.step))
    }
}

/// One supervised example: an encoder input cloud plus SDF-labelled queries.
#[derive(Clone, Debug)]
pub struct VaeExample {
    pub cloud: OrientedPointCloud,
    pub queries: Vec<Vec3>,
    pub targets: Vec<f64>,
}

/// Training query positions: `near_fraction` of them jitter random surface
/// points by `N(0, sigma²)` per axis, the rest are uniform in `[−1, 1]³`.
pub fn sample_training_queries<R: Rng>(
    surface: &[Vec3],
    n: usize,
    near_fraction: f64,
    sigma: f64,
    rng: &mut R,
) -> Vec<Vec3> {
    let n_near = if surface.is_empty() {
        0
    } else {
        ((n as f64) * near_fraction).round() as usize
    };
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    let mut out = Vec::with_capacity(n);
    for _ in 0..n_near {
        let p = surface[rng.random_range(0..surface.len())];
        out.push(p + Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng)));
    }
    while out.len() < n {
        out.push(Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeTrainConfig {
    pub steps: u64,
    pub batch: usize,
    pub queries: usize,
    pub near_fraction: f64,
    pub near_sigma: f64,
    pub optim: OptimConfig,
    pub log_every: u64,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        VaeTrainConfig {
            steps: 4000,
            batch: 8,
            queries: 1024,
            near_fraction: 0.5,
            near_sigma: 0.05,
            optim: OptimConfig {
                lr: 2e-3,
                warmup_steps: 100,
                total_steps: 4000,
                ..OptimConfig::default()
            },
            log_every: 50,
        }
    }
}

/// Runs `cfg.steps` AdamW steps on batches drawn from `next_example(step, i)`.
/// Every `log_every` steps the mean batch loss is passed to `on_log`.
pub fn train_vae(
    model: &mut Vae<f32>,
    cfg: &VaeTrainConfig,
    mut next_example: impl FnMut(u64, usize) -> Result<VaeExample>,
    mut on_log: impl FnMut(&TrainRecord),
) -> Result<Vec<TrainRecord>> {
    if cfg.batch == 0 {
        return Err(Error::Config {
            key: "vae_train.batch".into(),
            message: "must be positive".into(),
        });
    }
    let mut opt = AdamW::new(cfg.optim.clone(), &model.params);
    let mut history = Vec::new();
    let mut window = (0.0, 0usize);
    for step in 0..cfg.steps {
        let mut total = Grads::zeros_like(&model.params);
        let mut batch_loss = 0.0;
        for i in 0..cfg.batch {
            let ex = next_example(step, i)?;
            let (l, g) = model.loss(&ex.cloud, &ex.queries, &ex.targets)?;
            batch_loss += l;
            total.add_assign(&g);
        }
        total.scale(1.0 / cfg.batch as f32);
        batch_loss /= cfg.batch as f64;
        if !total.all_finite() {
            return Err(Error::NonFinite(format!("autoencoder gradients at step {step}")));
        }
        let stats = opt.step(&mut model.params, &mut total);
        window.0 += batch_loss;
        window.1 += 1;
        if (step + 1) % cfg.log_every.max(1) == 0 || step + 1 == cfg.steps {
            let rec = TrainRecord {
                step: step + 1,
                loss: window.0 / window.1 as f64,
                grad_norm: stats.grad_norm,
                lr: stats.lr,
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
    use crate::nn::gradcheck::check_gradients;
    use rand::seq::SliceRandom;

    fn tiny() -> VaeConfig {
        VaeConfig {
            latent_tokens: 4,
            latent_channels: 8,
            points: 24,
            width: 16,
            heads: 2,
            encoder_blocks: 1,
            decoder_blocks: 1,
            bands: 2,
            mlp_ratio: 2,
            query_layers: 1,
        }
    }

    fn random_cloud(n: usize, seed: u64) -> OrientedPointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec3> = (0..n)
            .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let nrm = pts.iter().map(|p| p.normalize()).collect();
        OrientedPointCloud::new(pts, nrm).unwrap()
    }

    #[test]
    fn shapes_and_errors() {
        let m = Vae::<f32>::new(tiny(), 1).unwrap();
        let z = m.encode(&random_cloud(24, 2)).unwrap();
        assert_eq!(z.shape(), (4, 8));
        assert!(m.encode(&random_cloud(23, 2)).is_err());
        assert!(m.decode_sdf(&LatentTokenSet::zeros(3, 8), &[Vec3::zeros()]).is_err());
        let s = m.decode_sdf(&z, &[Vec3::zeros(), Vec3::zeros(), Vec3::x()]).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[0], s[1]);
    }

    #[test]
    fn latent_rows_are_normalized() {
        let m = Vae::<f64>::new(tiny(), 3).unwrap();
        let z = m.encode(&random_cloud(24, 4)).unwrap();
        for r in 0..4 {
            let row = z.tokens.row(r);
            let mean = row.iter().sum::<f64>() / 8.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn permutation_invariance() {
        let m = Vae::<f32>::new(tiny(), 5).unwrap();
        let c = random_cloud(24, 6);
        let mut perm: Vec<usize> = (0..24).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(7));
        let z = m.encode(&c).unwrap();
        assert!(z.max_abs_diff(&m.encode(&c.permuted(&perm)).unwrap()) < 1e-5);
        let q: Vec<Vec3> = random_cloud(10, 8).points;
        let a = m.decode_sdf(&z, &q).unwrap();
        let b = m.decode_sdf(&z.permute_rows(&[2, 0, 3, 1]), &q).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn loss_arithmetic() {
        let m = Vae::<f64>::new(tiny(), 9).unwrap();
        let c = random_cloud(24, 10);
        let q = random_cloud(6, 11).points;
        let z = m.encode(&c).unwrap();
        let pred = m.decode_sdf(&z, &q).unwrap();
        let (l, _) = m.loss(&c, &q, &pred).unwrap();
        // predictions of an untrained head are well inside the truncation band
        assert!(pred.iter().all(|p| p.abs() < SDF_TRUNCATION));
        assert!(l < 1e-20);
        // zero the head so every prediction is 0; targets far outside clamp to 0.1
        let mut zero = m.clone();
        for name in ["dec.head.w", "dec.head.b"] {
            let id = zero.params.id(name).unwrap();
            zero.params.tensor_mut(id).data.iter_mut().for_each(|v| *v = 0.0);
        }
        let (l, _) = zero.loss(&c, &q, &[5.0; 6]).unwrap();
        assert!((l - 0.01).abs() < 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = Vae::<f64>::new(tiny(), 12).unwrap();
        let c = random_cloud(24, 13);
        let q = random_cloud(12, 14).points;
        let t: Vec<f64> = q.iter().map(|p| p.norm() - 0.6).collect();
        let (_, grads) = m.loss(&c, &q, &t).unwrap();
        let report = check_gradients(&m.params, &grads, 4, 1e-6, 1e-5, 15, |ps| {
            let mut mm = m.clone();
            mm.params = ps.clone();
            mm.loss(&c, &q, &t).unwrap().0
        });
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Vae::<f32>::new(tiny(), 16).unwrap();
        m.save(dir.path(), 42).unwrap();
        let (back, step) = Vae::<f32>::load(dir.path()).unwrap();
        assert_eq!(step, 42);
        let c = random_cloud(24, 17);
        assert_eq!(m.encode(&c).unwrap(), back.encode(&c).unwrap());
    }

    #[test]
    fn untrained_reconstruction_is_valid() {
        let m = Vae::<f32>::new(tiny(), 18).unwrap();
        let c = random_cloud(24, 19);
        let a = m.reconstruct_mesh(&c, 12).unwrap();
        a.validate().unwrap();
        assert_eq!(a, m.reconstruct_mesh(&c, 12).unwrap());
    }

    #[test]
    fn training_queries_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let surf = vec![Vec3::new(5.0, 5.0, 5.0)];
        let q = sample_training_queries(&surf, 100, 0.5, 0.05, &mut rng);
        assert_eq!(q.len(), 100);
        assert_eq!(q.iter().filter(|p| (p.x - 5.0).abs() < 1.0).count(), 50);
        assert!(q[50..].iter().all(|p| p.amax() <= 1.0));
    }
}
