use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::image_patches;
use super::train::FlowItem;
use super::VelocityField;
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::nn::{
    fourier_features, fourier_width, Attention, Grads, Graph, Linear, Mat, Mlp, ParamSet, Real, SelfAttentionBlock,
    Var,
};
use crate::vae::{LatentTokenSet, VaeConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    /// `L`, must match the autoencoder.
    pub latent_tokens: usize,
    /// `C`, must match the autoencoder.
    pub latent_channels: usize,
    pub width: usize,
    pub heads: usize,
    pub depth: usize,
    pub mlp_ratio: usize,
    /// Side of the square conditioning image.
    pub image_size: usize,
    pub patch: usize,
    pub time_bands: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            latent_tokens: 64,
            latent_channels: 32,
            width: 128,
            heads: 4,
            depth: 6,
            mlp_ratio: 2,
            image_size: 32,
            patch: 16,
            time_bands: 8,
        }
    }
}

impl FlowConfig {
    /// Single-core sized network paired with [`VaeConfig::desk`].
    pub fn desk() -> Self {
        FlowConfig {
            latent_tokens: 16,
            latent_channels: 16,
            width: 64,
            depth: 3,
            ..Default::default()
        }
    }

    /// This configuration with the latent shape of `vae`.
    pub fn for_vae(mut self, vae: &VaeConfig) -> Self {
        self.latent_tokens = vae.latent_tokens;
        self.latent_channels = vae.latent_channels;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("latent_tokens", self.latent_tokens),
            ("latent_channels", self.latent_channels),
            ("width", self.width),
            ("heads", self.heads),
            ("mlp_ratio", self.mlp_ratio),
            ("image_size", self.image_size),
            ("patch", self.patch),
        ];
        for (k, v) in fields {
            if v == 0 {
                return Err(Error::Config {
                    key: format!("flow.{k}"),
                    message: "must be positive".into(),
                });
            }
        }
        if self.width % self.heads != 0 {
            return Err(Error::Config {
                key: "flow.heads".into(),
                message: format!("width {} is not divisible by {} heads", self.width, self.heads),
            });
        }
        if self.image_size % self.patch != 0 {
            return Err(Error::Config {
                key: "flow.patch".into(),
                message: format!("image size {} is not a multiple of patch {}", self.image_size, self.patch),
            });
        }
        Ok(())
    }

    /// Errors unless the latent shape equals the autoencoder's.
    pub fn check_vae(&self, vae: &VaeConfig) -> Result<()> {
        if (self.latent_tokens, self.latent_channels) != (vae.latent_tokens, vae.latent_channels) {
            return Err(Error::Config {
                key: "flow.latent_tokens".into(),
                message: format!(
                    "flow latent ({}, {}) does not match autoencoder ({}, {})",
                    self.latent_tokens, self.latent_channels, vae.latent_tokens, vae.latent_channels
                ),
            });
        }
        Ok(())
    }
}

/// Conditions for one velocity evaluation. The image embedding is computed
/// by the network from `image`, an object crop of side `image_size`.
/// Dropped conditions are replaced by learned null embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningBundle {
    pub z_geo: LatentTokenSet,
    pub image: GrayImage,
    pub drop_geo: bool,
    pub drop_img: bool,
}

impl ConditioningBundle {
    pub fn new(z_geo: LatentTokenSet, image: GrayImage) -> Self {
        ConditioningBundle {
            z_geo,
            image,
            drop_geo: false,
            drop_img: false,
        }
    }

    /// Both conditions replaced by their null embeddings.
    pub fn dropped(&self) -> Self {
        ConditioningBundle {
            drop_geo: true,
            drop_img: true,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug)]
struct Block {
    attn: SelfAttentionBlock,
    cross: Attention,
}

#[derive(Clone, Debug)]
struct Net {
    token_in: Linear,
    /// Per-token embedding shared by the noisy and anchor streams, so that
    /// token `i` of both refers to the same autoencoder query.
    token_pos: usize,
    /// Anchor token `i` mixed into noisy token `i`.
    geo_fuse: Linear,
    role_t: usize,
    role_geo: usize,
    null_geo: usize,
    time_mlp: Mlp,
    img_in: Linear,
    img_out: Linear,
    null_img: usize,
    blocks: Vec<Block>,
    head: Linear,
}

/// Velocity network weights plus configuration.
#[derive(Clone, Debug)]
pub struct FlowModel<T: Real = f32> {
    pub config: FlowConfig,
    pub params: ParamSet<T>,
    net: Net,
}

impl<T: Real> FlowModel<T> {
    pub fn new(config: FlowConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let (w, c) = (config.width, config.latent_channels);
        let net = Net {
            token_in: Linear::new(&mut ps, &mut rng, "flow.token_in", c, w, true),
            token_pos: ps.add_normal(&mut rng, "flow.token_pos", config.latent_tokens, w, 0.5),
            geo_fuse: Linear::new(&mut ps, &mut rng, "flow.geo_fuse", c, w, false),
            role_t: ps.add_normal(&mut rng, "flow.role_t", 1, w, 0.5),
            role_geo: ps.add_normal(&mut rng, "flow.role_geo", 1, w, 0.5),
            null_geo: ps.add_normal(&mut rng, "flow.null_geo", config.latent_tokens, c, 1.0),
            time_mlp: Mlp::new(&mut ps, &mut rng, "flow.time", fourier_width(1, config.time_bands), w, w, 1.0),
            img_in: Linear::new(&mut ps, &mut rng, "flow.img_in", config.patch * config.patch, w, true),
            img_out: Linear::new(&mut ps, &mut rng, "flow.img_out", w, w, true),
            null_img: ps.add_normal(&mut rng, "flow.null_img", 1, w, 1.0),
            blocks: (0..config.depth)
                .map(|i| Block {
                    attn: SelfAttentionBlock::new(&mut ps, &mut rng, &format!("flow.block{i}"), w, config.heads, config.mlp_ratio),
                    cross: Attention::new(&mut ps, &mut rng, &format!("flow.block{i}.cross"), w, w, w, config.heads, 0.5),
                })
                .collect(),
            head: Linear::with_gain(&mut ps, &mut rng, "flow.head", w, c, true, 0.5),
        };
        Ok(FlowModel {
            config,
            params: ps,
            net,
        })
    }

    pub fn cast<U: Real>(&self) -> FlowModel<U> {
        FlowModel {
            config: self.config.clone(),
            params: self.params.cast(),
            net: self.net.clone(),
        }
    }

    fn check_inputs(&self, z_t: &LatentTokenSet, t: f64, cond: &ConditioningBundle) -> Result<()> {
        let (l, c) = (self.config.latent_tokens, self.config.latent_channels);
        z_t.check_shape(l, c, "z_t")?;
        cond.z_geo.check_shape(l, c, "z_geo")?;
        let s = self.config.image_size;
        if (cond.image.width, cond.image.height) != (s, s) {
            return Err(Error::Shape(format!(
                "conditioning image is {}×{}, model expects {s}×{s}",
                cond.image.width, cond.image.height
            )));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidInput(format!("flow time {t} outside [0, 1]")));
        }
        Ok(())
    }

    fn image_graph(&self, g: &mut Graph<'_, T>, cond: &ConditioningBundle) -> Result<Var> {
        if cond.drop_img {
            return Ok(g.param(self.net.null_img));
        }
        let p = g.constant(image_patches(&cond.image, self.config.patch)?);
        let h = self.net.img_in.forward(g, p);
        let h = g.gelu(h);
        let h = g.mean_rows(h);
        Ok(self.net.img_out.forward(g, h))
    }

    fn forward_graph(&self, g: &mut Graph<'_, T>, z_t: &LatentTokenSet, t: f64, cond: &ConditioningBundle) -> Result<Var> {
        let n = &self.net;
        let geo = if cond.drop_geo {
            g.param(n.null_geo)
        } else {
            g.constant(cond.z_geo.tokens.cast())
        };
        let pos = g.param(n.token_pos);
        let zt = g.constant(z_t.tokens.cast());
        let a = n.token_in.forward(g, zt);
        let fused = n.geo_fuse.forward(g, geo);
        let a = g.add(a, fused);
        let a = g.add(a, pos);
        let role_t = g.param(n.role_t);
        let a = g.add_row(a, role_t);
        let b = n.token_in.forward(g, geo);
        let b = g.add(b, pos);
        let role_geo = g.param(n.role_geo);
        let b = g.add_row(b, role_geo);
        let mut x = g.concat_rows(&[a, b]);

        let tf = g.constant(fourier_features(&[t], 1, self.config.time_bands));
        let temb = n.time_mlp.forward(g, tf);
        x = g.add_row(x, temb);

        let img = self.image_graph(g, cond)?;
        let img = g.layer_norm(img);
        let tn = g.layer_norm(temb);
        let ctx = g.concat_rows(&[img, tn]);
        for b in &n.blocks {
            x = b.attn.forward(g, x);
            let h = g.layer_norm(x);
            let c = b.cross.forward(g, h, ctx);
            x = g.add(x, c);
        }
        let x = g.layer_norm(x);
        let x = g.slice_rows(x, 0, self.config.latent_tokens);
        Ok(n.head.forward(g, x))
    }

    /// Predicted velocity, shape `(L, C)`.
    pub fn velocity_forward(&self, z_t: &LatentTokenSet, t: f64, cond: &ConditioningBundle) -> Result<LatentTokenSet> {
        self.check_inputs(z_t, t, cond)?;
        let mut g = Graph::new(&self.params);
        let v = self.forward_graph(&mut g, z_t, t, cond)?;
        LatentTokenSet::new(g.value(v).cast())
    }

    /// Image embedding `c_img` (the null embedding when dropped).
    pub fn image_embedding(&self, cond: &ConditioningBundle) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let e = self.image_graph(&mut g, cond)?;
        Ok(g.value(e).data.iter().map(|v| v.f64()).collect())
    }

    /// Squared error between the predicted velocity at `z_t` and `z1 − z0`,
    /// averaged over elements, with gradients.
    pub fn loss(&self, item: &FlowItem) -> Result<(f64, Grads<T>)> {
        let zt = super::interpolate(&item.z0, &item.z1, item.t)?;
        self.check_inputs(&zt, item.t, &item.cond)?;
        let mut g = Graph::new(&self.params);
        let v = self.forward_graph(&mut g, &zt, item.t, &item.cond)?;
        let target: Mat<f64> = Mat::from_fn(item.z1.tokens.rows, item.z1.tokens.cols, |r, c| {
            item.z1.tokens.at(r, c) - item.z0.tokens.at(r, c)
        });
        let loss = g.mse(v, target.cast());
        let lv = g.value(loss).data[0].f64();
        if !lv.is_finite() {
            return Err(Error::NonFinite(format!(
                "flow loss {lv} at t = {:.4}; velocity finite: {}, dropped geo/img: {}/{}",
                item.t,
                g.value(v).all_finite(),
                item.cond.drop_geo,
                item.cond.drop_img
            )));
        }
        Ok((lv, g.backward(loss)))
    }

    pub fn save(&self, dir: &Path, step: u64) -> Result<()> {
        self.params
            .save(dir, "flow", step, &serde_json::to_value(&self.config)?)
            .map_err(|e| e.at(dir))
    }

    /// Loads a checkpoint written by [`FlowModel::save`].
    pub fn load(dir: &Path) -> Result<(Self, u64)> {
        let (ps, manifest) = ParamSet::<T>::load(dir).map_err(|e| e.at(dir))?;
        if manifest.kind != "flow" {
            return Err(Error::Format(format!("checkpoint kind is {}, expected flow", manifest.kind)).at(dir));
        }
        let config: FlowConfig = serde_json::from_value(manifest.config.clone())?;
        let mut model = FlowModel::new(config, 0)?;
        model.params.assign_from(&ps).map_err(|e| e.at(dir))?;
        Ok((model, manifest.step))
    }
}

impl<T: Real> VelocityField for FlowModel<T> {
    fn velocity(&self, z_t: &LatentTokenSet, t: f64, cond: &ConditioningBundle) -> Result<LatentTokenSet> {
        self.velocity_forward(z_t, t, cond)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{fm_loss_value, initial_noise};
    use crate::nn::gradcheck::check_gradients;

    pub(crate) fn tiny() -> FlowConfig {
        FlowConfig {
            latent_tokens: 4,
            latent_channels: 6,
            width: 16,
            heads: 2,
            depth: 2,
            mlp_ratio: 2,
            image_size: 8,
            patch: 4,
            time_bands: 3,
        }
    }

    pub(crate) fn test_image(seed: u64) -> GrayImage {
        GrayImage::new(8, 8, (0..64).map(|i| ((i as u64 * 7 + seed * 13) % 17) as f32 / 17.0).collect()).unwrap()
    }

    fn cond(seed: u64) -> ConditioningBundle {
        ConditioningBundle::new(initial_noise(4, 6, seed), test_image(seed))
    }

    #[test]
    fn output_shape_for_all_drop_patterns() {
        let m = FlowModel::<f32>::new(tiny(), 1).unwrap();
        let z = initial_noise(4, 6, 2);
        for (dg, di) in [(false, false), (true, false), (false, true), (true, true)] {
            let mut c = cond(3);
            c.drop_geo = dg;
            c.drop_img = di;
            assert_eq!(m.velocity_forward(&z, 0.3, &c).unwrap().shape(), (4, 6));
        }
        assert!(m.velocity_forward(&initial_noise(3, 6, 2), 0.3, &cond(3)).is_err());
        let mut bad = cond(3);
        bad.image = GrayImage::filled(9, 9, 1.0);
        assert!(m.velocity_forward(&z, 0.3, &bad).is_err());
    }

    #[test]
    fn dropped_geometry_ignores_anchor() {
        let m = FlowModel::<f32>::new(tiny(), 4).unwrap();
        let z = initial_noise(4, 6, 5);
        let mut a = cond(6);
        let mut b = cond(7);
        b.image = a.image.clone();
        a.drop_geo = true;
        b.drop_geo = true;
        assert_eq!(m.velocity_forward(&z, 0.5, &a).unwrap(), m.velocity_forward(&z, 0.5, &b).unwrap());
        a.drop_geo = false;
        b.drop_geo = false;
        assert_ne!(m.velocity_forward(&z, 0.5, &a).unwrap(), m.velocity_forward(&z, 0.5, &b).unwrap());
        // determinism
        assert_eq!(m.velocity_forward(&z, 0.5, &a).unwrap(), m.velocity_forward(&z, 0.5, &a).unwrap());
    }

    #[test]
    fn graph_loss_matches_direct_evaluation() {
        let m = FlowModel::<f64>::new(tiny(), 8).unwrap();
        let item = FlowItem {
            z1: initial_noise(4, 6, 9),
            z0: initial_noise(4, 6, 10),
            t: 0.37,
            cond: cond(11),
        };
        let (l, _) = m.loss(&item).unwrap();
        assert!((l - fm_loss_value(&m, &item).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut cfg = tiny();
        cfg.width = 16;
        let m = FlowModel::<f64>::new(cfg, 12).unwrap();
        for (k, drop) in [false, true].into_iter().enumerate() {
            let mut c = cond(13 + k as u64);
            c.drop_geo = drop;
            c.drop_img = drop;
            let item = FlowItem {
                z1: initial_noise(4, 6, 14),
                z0: initial_noise(4, 6, 15),
                t: 0.61,
                cond: c,
            };
            let (_, grads) = m.loss(&item).unwrap();
            let report = check_gradients(&m.params, &grads, 4, 1e-6, 1e-5, 16, |ps| {
                let mut mm = m.clone();
                mm.params = ps.clone();
                mm.loss(&item).unwrap().0
            });
            assert!(report.max_rel_error < 1e-4, "{report:?}");
        }
    }

    #[test]
    fn checkpoint_round_trip_and_kind() {
        let dir = tempfile::tempdir().unwrap();
        let m = FlowModel::<f32>::new(tiny(), 17).unwrap();
        m.save(dir.path(), 7).unwrap();
        let (back, step) = FlowModel::<f32>::load(dir.path()).unwrap();
        assert_eq!(step, 7);
        let z = initial_noise(4, 6, 18);
        assert_eq!(m.velocity_forward(&z, 0.2, &cond(19)).unwrap(), back.velocity_forward(&z, 0.2, &cond(19)).unwrap());
        let vae_dir = tempfile::tempdir().unwrap();
        crate::vae::Vae::<f32>::new(VaeConfig::desk(), 0).unwrap().save(vae_dir.path(), 0).unwrap();
        assert!(FlowModel::<f32>::load(vae_dir.path()).is_err());
    }

    #[test]
    fn vae_compatibility() {
        assert!(FlowConfig::desk().check_vae(&VaeConfig::desk()).is_ok());
        assert!(FlowConfig::default().check_vae(&VaeConfig::desk()).is_err());
        assert!(FlowConfig::default().for_vae(&VaeConfig::desk()).check_vae(&VaeConfig::desk()).is_ok());
    }
}
