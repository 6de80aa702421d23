//! Encoder, decoder and critic networks built from strided 1-D convolutions.

mod checkpoint;
mod layers;

use std::collections::BTreeMap;

use arcade_tensor::{conv1d_out_len, conv_transpose1d_base_len, Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use checkpoint::{Checkpoint, CheckpointHeader};
pub use layers::{BnUpdate, Mode};

/// Normal-distribution weight initialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    pub weight_std: f64,
    /// Batch-norm scales are drawn from N(1, gamma_std).
    pub gamma_std: f64,
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec {
            weight_std: 0.02,
            gamma_std: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Packets per sample.
    pub n: usize,
    /// Bytes per packet.
    pub l: usize,
    /// Latent dimension.
    pub d: usize,
    pub channels: [usize; 3],
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub leaky_slope: f64,
    /// Width of the critic's hidden linear layer.
    pub critic_hidden: usize,
    pub bn_momentum: f64,
    pub norm_eps: f64,
    pub init: InitSpec,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n: 2,
            l: 100,
            d: 50,
            channels: [16, 32, 64],
            kernel: 4,
            stride: 2,
            padding: 1,
            leaky_slope: 0.2,
            critic_hidden: 50,
            bn_momentum: 0.1,
            norm_eps: 1e-5,
            init: InitSpec::default(),
        }
    }
}

impl ModelConfig {
    pub fn new(n: usize, d: usize) -> Self {
        ModelConfig {
            n,
            d,
            ..ModelConfig::default()
        }
    }

    /// Input length `n * l`.
    pub fn w(&self) -> usize {
        self.n * self.l
    }

    /// Sequence length entering and leaving each of the three conv stages.
    pub fn stage_lengths(&self) -> [usize; 4] {
        let mut out = [self.w(); 4];
        for i in 1..4 {
            out[i] = conv1d_out_len(out[i - 1], self.kernel, self.stride, self.padding);
        }
        out
    }

    /// Flattened feature count after the last conv stage.
    pub fn flat_features(&self) -> usize {
        self.channels[2] * self.stage_lengths()[3]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n == 0 || self.l == 0 {
            return bad("n and l must be positive".into());
        }
        if self.d == 0 || self.critic_hidden == 0 {
            return bad("latent and critic widths must be positive".into());
        }
        if self.channels.contains(&0) || self.kernel == 0 || self.stride == 0 {
            return bad("channels, kernel and stride must be positive".into());
        }
        if self.w() < 8 {
            return bad(format!(
                "sequence length {} is too short for three stride-2 stages (need at least 8)",
                self.w()
            ));
        }
        let lens = self.stage_lengths();
        for i in 1..4 {
            if lens[i] == 0 {
                return bad(format!("stage {i} output would be empty for length {}", self.w()));
            }
            let base = conv_transpose1d_base_len(lens[i], self.kernel, self.stride, self.padding);
            if lens[i - 1] < base || lens[i - 1] >= base + self.stride {
                return bad(format!(
                    "decoder cannot mirror length {} from {}",
                    lens[i - 1],
                    lens[i]
                ));
            }
        }
        if !(self.leaky_slope >= 0.0 && self.norm_eps > 0.0) {
            return bad("leaky slope must be >= 0 and norm eps > 0".into());
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad("batch-norm momentum must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// Named parameters and non-trainable buffers of one network.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Network {
    pub params: BTreeMap<String, Tensor>,
    pub buffers: BTreeMap<String, Tensor>,
}

impl Network {
    pub fn num_params(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Registers every parameter as a graph leaf.
    pub fn bind<'g>(&self, g: &'g Graph, trainable: bool) -> Bound<'g, '_> {
        let vars = self
            .params
            .iter()
            .map(|(k, t)| (k.clone(), g.leaf(t.clone(), trainable)))
            .collect();
        Bound { net: self, vars }
    }

    /// Folds batch statistics into the running averages.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate], momentum: f64) {
        for u in updates {
            for (suffix, batch) in [("running_mean", &u.mean), ("running_var", &u.var)] {
                let running = self
                    .buffers
                    .get_mut(&format!("{}.{suffix}", u.layer))
                    .expect("batch-norm buffer registered at build time");
                for (r, b) in running.data_mut().iter_mut().zip(batch.data()) {
                    *r = (1.0 - momentum) * *r + momentum * b;
                }
            }
        }
    }
}

/// A network's parameters as variables of one graph.
pub struct Bound<'g, 'n> {
    pub net: &'n Network,
    pub vars: BTreeMap<String, Var<'g>>,
}

impl<'g> Bound<'g, '_> {
    pub fn var(&self, name: &str) -> Var<'g> {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    /// Parameter variables in name order.
    pub fn list(&self) -> Vec<(String, Var<'g>)> {
        self.vars.iter().map(|(k, v)| (k.clone(), *v)).collect()
    }

    fn buffer(&self, name: &str) -> &Tensor {
        self.net
            .buffers
            .get(name)
            .unwrap_or_else(|| panic!("unknown buffer {name}"))
    }
}

/// Encoder, decoder and critic with their configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelHandles {
    pub config: ModelConfig,
    pub seed: u64,
    pub encoder: Network,
    pub decoder: Network,
    pub critic: Network,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub encoder: usize,
    pub decoder: usize,
    pub critic: usize,
}

impl ParamCounts {
    pub fn autoencoder(&self) -> usize {
        self.encoder + self.decoder
    }
}

struct Init<'a> {
    rng: ChaCha8Rng,
    spec: &'a InitSpec,
    net: Network,
}

impl Init<'_> {
    fn normal(&mut self, name: &str, shape: &[usize], mean: f64, std: f64) {
        let dist = Normal::new(mean, std).expect("finite init std");
        let t = Tensor::from_fn(shape, |_| dist.sample(&mut self.rng));
        self.net.params.insert(name.to_string(), t);
    }

    fn weight(&mut self, name: &str, shape: &[usize]) {
        self.normal(name, shape, 0.0, self.spec.weight_std);
    }

    fn constant(&mut self, name: &str, shape: &[usize], value: f64) {
        self.net.params.insert(name.to_string(), Tensor::full(shape, value));
    }

    fn batch_norm(&mut self, name: &str, features: usize) {
        self.normal(&format!("{name}.gamma"), &[features], 1.0, self.spec.gamma_std);
        self.constant(&format!("{name}.beta"), &[features], 0.0);
        self.net
            .buffers
            .insert(format!("{name}.running_mean"), Tensor::zeros(&[features]));
        self.net
            .buffers
            .insert(format!("{name}.running_var"), Tensor::ones(&[features]));
    }

    fn layer_norm(&mut self, name: &str, shape: &[usize]) {
        self.constant(&format!("{name}.gamma"), shape, 1.0);
        self.constant(&format!("{name}.beta"), shape, 0.0);
    }
}

fn sub_seed(seed: u64, tag: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(tag)
}

/// Builds freshly initialized networks; identical `(cfg, seed)` give
/// identical parameters.
pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<ModelHandles> {
    cfg.validate()?;
    let [c1, c2, c3] = cfg.channels;
    let lens = cfg.stage_lengths();
    let k = cfg.kernel;
    let flat = cfg.flat_features();
    let start = |tag| Init {
        rng: ChaCha8Rng::seed_from_u64(sub_seed(seed, tag)),
        spec: &cfg.init,
        net: Network::default(),
    };

    let mut e = start(1);
    for (i, (ci, co)) in [(1, c1), (c1, c2), (c2, c3)].into_iter().enumerate() {
        e.weight(&format!("conv{i}.weight"), &[co, ci, k]);
        e.batch_norm(&format!("bn{i}"), co);
    }
    e.weight("fc.weight", &[cfg.d, flat]);

    let mut d = start(2);
    d.weight("fc.weight", &[flat, cfg.d]);
    d.batch_norm("bn_fc", flat);
    for (i, (ci, co)) in [(c3, c2), (c2, c1), (c1, 1)].into_iter().enumerate() {
        d.weight(&format!("deconv{i}.weight"), &[ci, co, k]);
        if i < 2 {
            d.batch_norm(&format!("bn{i}"), co);
        }
    }

    let mut c = start(3);
    for (i, (ci, co)) in [(1, c1), (c1, c2), (c2, c3)].into_iter().enumerate() {
        c.weight(&format!("conv{i}.weight"), &[co, ci, k]);
        c.layer_norm(&format!("ln{i}"), &[co, lens[i + 1]]);
    }
    c.weight("fc0.weight", &[cfg.critic_hidden, flat]);
    c.constant("fc0.bias", &[cfg.critic_hidden], 0.0);
    c.layer_norm("ln_fc", &[cfg.critic_hidden]);
    c.weight("fc1.weight", &[1, cfg.critic_hidden]);
    c.constant("fc1.bias", &[1], 0.0);

    Ok(ModelHandles {
        config: cfg.clone(),
        seed,
        encoder: e.net,
        decoder: d.net,
        critic: c.net,
    })
}

/// Encoder: `x [B, w]` to latents `[B, d]`.
pub fn encoder_forward<'g>(cfg: &ModelConfig, p: &Bound<'g, '_>, x: Var<'g>, mode: &mut Mode) -> Var<'g> {
    let b = x.shape()[0];
    let mut h = x.reshape(&[b, 1, cfg.w()]);
    for i in 0..3 {
        h = h.conv1d(p.var(&format!("conv{i}.weight")), cfg.stride, cfg.padding);
        h = layers::batch_norm(p, &format!("bn{i}"), h, cfg, mode);
        h = h.leaky_relu(cfg.leaky_slope);
    }
    let h = h.reshape(&[b, cfg.flat_features()]);
    layers::linear(h, p.var("fc.weight"), None)
}

/// Decoder: latents `[B, d]` to reconstructions `[B, w]` in `(0, 1)`.
pub fn decoder_forward<'g>(cfg: &ModelConfig, p: &Bound<'g, '_>, z: Var<'g>, mode: &mut Mode) -> Var<'g> {
    let b = z.shape()[0];
    let lens = cfg.stage_lengths();
    let mut h = layers::linear(z, p.var("fc.weight"), None);
    h = layers::batch_norm(p, "bn_fc", h, cfg, mode).relu();
    h = h.reshape(&[b, cfg.channels[2], lens[3]]);
    for i in 0..3 {
        let out_len = lens[2 - i];
        h = h.conv_transpose1d(p.var(&format!("deconv{i}.weight")), cfg.stride, cfg.padding, out_len);
        if i < 2 {
            h = layers::batch_norm(p, &format!("bn{i}"), h, cfg, mode).relu();
        }
    }
    h.sigmoid().reshape(&[b, cfg.w()])
}

/// Critic: `x [B, w]` to scores `[B]`. Uses layer normalization only, so each
/// score depends on its own sample alone.
pub fn critic_forward<'g>(cfg: &ModelConfig, p: &Bound<'g, '_>, x: Var<'g>) -> Var<'g> {
    let b = x.shape()[0];
    let mut h = x.reshape(&[b, 1, cfg.w()]);
    for i in 0..3 {
        h = h.conv1d(p.var(&format!("conv{i}.weight")), cfg.stride, cfg.padding);
        h = layers::layer_norm(p, &format!("ln{i}"), h, cfg.norm_eps);
        h = h.leaky_relu(cfg.leaky_slope);
    }
    let h = h.reshape(&[b, cfg.flat_features()]);
    let h = layers::linear(h, p.var("fc0.weight"), Some(p.var("fc0.bias")));
    let h = layers::layer_norm(p, "ln_fc", h, cfg.norm_eps).leaky_relu(cfg.leaky_slope);
    layers::linear(h, p.var("fc1.weight"), Some(p.var("fc1.bias"))).reshape(&[b])
}

/// Inference batch size used by the convenience methods.
const EVAL_CHUNK: usize = 256;

impl ModelHandles {
    pub fn param_counts(&self) -> ParamCounts {
        ParamCounts {
            encoder: self.encoder.num_params(),
            decoder: self.decoder.num_params(),
            critic: self.critic.num_params(),
        }
    }

    fn check_len(&self, values: usize) -> Result<usize> {
        let w = self.config.w();
        if values % w != 0 || values == 0 {
            return Err(Error::Length {
                expected: w,
                got: if values < w { values } else { values % w },
            });
        }
        Ok(values / w)
    }

    fn batch_eval(&self, xs: &[f32], width: usize, rows_per_pass: usize, f: impl Fn(&Graph, Var<'_>) -> Tensor) -> Result<Vec<f64>> {
        let w = self.config.w();
        let count = self.check_len(xs.len())?;
        let mut out = Vec::with_capacity(count * width);
        for chunk in xs.chunks(rows_per_pass.max(1) * w) {
            let g = Graph::new();
            let rows = chunk.len() / w;
            let x = g.constant(Tensor::new(&[rows, w], chunk.iter().map(|&v| f64::from(v)).collect()));
            let y = g.no_grad(|| f(&g, x));
            out.extend_from_slice(y.data());
        }
        Ok(out)
    }

    /// Latents of a batch of samples (concatenated, each of length `w`),
    /// with batch normalization in inference mode.
    pub fn encode_batch(&self, xs: &[f32]) -> Result<Vec<f64>> {
        self.batch_eval(xs, self.config.d, EVAL_CHUNK, |g, x| {
            let e = self.encoder.bind(g, false);
            encoder_forward(&self.config, &e, x, &mut Mode::Eval).value().as_ref().clone()
        })
    }

    pub fn encode(&self, x: &[f32]) -> Result<Vec<f64>> {
        self.check_single(x)?;
        self.encode_batch(x)
    }

    /// Reconstructions `D(E(x))` of a batch, concatenated.
    pub fn reconstruct_batch(&self, xs: &[f32]) -> Result<Vec<f64>> {
        self.reconstruct_chunked(xs, EVAL_CHUNK)
    }

    /// As [`reconstruct_batch`](Self::reconstruct_batch), running the
    /// networks on `batch_size` samples at a time.
    pub fn reconstruct_chunked(&self, xs: &[f32], batch_size: usize) -> Result<Vec<f64>> {
        self.batch_eval(xs, self.config.w(), batch_size, |g, x| {
            let e = self.encoder.bind(g, false);
            let d = self.decoder.bind(g, false);
            let z = encoder_forward(&self.config, &e, x, &mut Mode::Eval);
            decoder_forward(&self.config, &d, z, &mut Mode::Eval).value().as_ref().clone()
        })
    }

    pub fn reconstruct(&self, x: &[f32]) -> Result<Vec<f64>> {
        self.check_single(x)?;
        self.reconstruct_batch(x)
    }

    pub fn critic_scores(&self, xs: &[f32]) -> Result<Vec<f64>> {
        self.batch_eval(xs, 1, EVAL_CHUNK, |g, x| {
            let c = self.critic.bind(g, false);
            critic_forward(&self.config, &c, x).value().as_ref().clone()
        })
    }

    pub fn critic_score(&self, x: &[f32]) -> Result<f64> {
        self.check_single(x)?;
        Ok(self.critic_scores(x)?[0])
    }

    fn check_single(&self, x: &[f32]) -> Result<()> {
        if x.len() != self.config.w() {
            return Err(Error::Length {
                expected: self.config.w(),
                got: x.len(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_size_counts() {
        let m = build_model(&ModelConfig::new(2, 50), 0).unwrap();
        let c = m.param_counts();
        assert_eq!((c.encoder, c.decoder, c.critic), (90_528, 93_600, 100_105));
        assert_eq!(c.autoencoder(), 184_128);
    }

    #[test]
    fn short_inputs_are_rejected() {
        let mut cfg = ModelConfig::new(1, 2);
        cfg.l = 7;
        assert!(matches!(build_model(&cfg, 0), Err(Error::Config(_))));
        cfg.l = 8;
        assert!(build_model(&cfg, 0).is_ok());
    }

    #[test]
    fn odd_lengths_round_trip() {
        for n in 1..=6 {
            let m = build_model(&ModelConfig::new(n, 4), 3).unwrap();
            let x = vec![0.5f32; m.config.w()];
            assert_eq!(m.reconstruct(&x).unwrap().len(), 100 * n);
        }
        assert_eq!(ModelConfig::new(5, 4).stage_lengths(), [500, 250, 125, 62]);
    }

    #[test]
    fn seeded_build_is_deterministic() {
        let cfg = ModelConfig::new(2, 8);
        assert_eq!(build_model(&cfg, 5).unwrap(), build_model(&cfg, 5).unwrap());
        assert_ne!(build_model(&cfg, 5).unwrap(), build_model(&cfg, 6).unwrap());
    }

    #[test]
    fn outputs_are_finite_and_bounded() {
        let m = build_model(&ModelConfig::new(2, 8), 1).unwrap();
        let zeros = vec![0.0f32; 200];
        let z = m.encode(&zeros).unwrap();
        assert_eq!(z.len(), 8);
        assert!(z.iter().all(|v| v.is_finite()));
        let r = m.reconstruct(&zeros).unwrap();
        assert!(r.iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(m.critic_score(&zeros).unwrap().is_finite());
        assert!(matches!(m.encode(&[0.0; 10]), Err(Error::Length { .. })));
    }

    #[test]
    fn zero_last_critic_layer_scores_zero() {
        let mut m = build_model(&ModelConfig::new(1, 4), 2).unwrap();
        m.critic.params.get_mut("fc1.weight").unwrap().data_mut().fill(0.0);
        let x: Vec<f32> = (0..100).map(|i| i as f32 / 100.0).collect();
        assert_eq!(m.critic_score(&x).unwrap(), 0.0);
    }

    #[test]
    fn critic_is_batch_independent() {
        let m = build_model(&ModelConfig::new(1, 4), 2).unwrap();
        let xs: Vec<f32> = (0..300).map(|i| ((i * 37) % 256) as f32 / 255.0).collect();
        let batch = m.critic_scores(&xs).unwrap();
        for (i, s) in batch.iter().enumerate() {
            let single = m.critic_score(&xs[i * 100..(i + 1) * 100]).unwrap();
            assert!((single - s).abs() < 1e-12);
        }
    }
}
