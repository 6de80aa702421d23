//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use arcade::ingest::{open_capture, preprocess, IngestConfig, SampleSet};
use arcade::losses::{self, SsimConfig};
use arcade::model::{self, build_model, Mode, ModelConfig, ModelHandles};
use arcade_tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Runs one golden capture through the library; returns (actual, expected) bytes.
pub fn golden_case(name: &str) -> (Vec<u8>, Vec<u8>) {
    let dir = golden_dir();
    let cfg: IngestConfig = toml::from_str(&std::fs::read_to_string(dir.join(format!("{name}.toml"))).unwrap()).unwrap();
    let reader = open_capture(dir.join(format!("{name}.pcap"))).unwrap();
    let (samples, _) = preprocess(reader, &cfg).unwrap();
    let set = SampleSet::from_samples(cfg.n, cfg.l, &samples).unwrap();
    let expected = std::fs::read(dir.join(format!("{name}.arcd"))).unwrap();
    (set.to_bytes(), expected)
}

/// MSSIM by explicit window enumeration with its own Gaussian kernel.
pub fn brute_mssim(x: &[f64], y: &[f64], n: usize, side: usize) -> f64 {
    let (k, sigma, c1, c2) = (3usize, 1.5f64, 0.01f64, 0.03f64);
    let mut kernel = [[0.0f64; 3]; 3];
    let mut total = 0.0;
    for (a, row) in kernel.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            let (da, db) = (a as f64 - 1.0, b as f64 - 1.0);
            *v = (-(da * da + db * db) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    let l = side * side;
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        let px = &x[i * l..(i + 1) * l];
        let py = &y[i * l..(i + 1) * l];
        for r in 0..=side - k {
            for c in 0..=side - k {
                let at = |img: &[f64], a: usize, b: usize| img[(r + a) * side + c + b];
                let (mut mx, mut my) = (0.0, 0.0);
                for a in 0..k {
                    for b in 0..k {
                        let w = kernel[a][b] / total;
                        mx += w * at(px, a, b);
                        my += w * at(py, a, b);
                    }
                }
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for a in 0..k {
                    for b in 0..k {
                        let w = kernel[a][b] / total;
                        vx += w * (at(px, a, b) - mx).powi(2);
                        vy += w * (at(py, a, b) - my).powi(2);
                        cxy += w * (at(px, a, b) - mx) * (at(py, a, b) - my);
                    }
                }
                sum += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    sum / count as f64
}

/// Largest deviation of the library MSSIM from the brute-force one over
/// `pairs` random 10x10 images.
pub fn mssim_oracle_gap(pairs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SsimConfig::default();
    let mut worst: f64 = 0.0;
    for i in 0..pairs {
        let x: Vec<f64> = (0..100).map(|_| rng.gen()).collect();
        // mix of unrelated and correlated pairs
        let y: Vec<f64> = if i % 2 == 0 {
            (0..100).map(|_| rng.gen()).collect()
        } else {
            x.iter().map(|v| (v + rng.gen_range(-0.1..0.1)).clamp(0.0, 1.0)).collect()
        };
        let got = losses::mssim(&x, &y, 1, 100, &cfg).unwrap();
        worst = worst.max((got - brute_mssim(&x, &y, 1, 10)).abs());
    }
    worst
}

/// Gradient penalty of the linear critic `C(v) = w . v` against `(|w| - 1)^2`.
pub fn linear_penalty_gap(w: &[f64], batch: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = w.len();
    let x = Tensor::from_fn(&[batch, dim], |_| rng.gen());
    let xt = Tensor::from_fn(&[batch, dim], |_| rng.gen());
    let eps: Vec<f64> = (0..batch).map(|_| rng.gen()).collect();
    let g = Graph::new();
    let wv = g.param(Tensor::new(&[dim, 1], w.to_vec()));
    let gp = losses::gradient_penalty(&g, |v| v.matmul(wv).reshape(&[batch]), &x, &xt, &eps).unwrap();
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    (gp.item() - (norm - 1.0).powi(2)).abs()
}

/// Area under the ROC polyline, integrated with trapezoids over the
/// distinct thresholds.
pub fn trapezoid_auroc(scores: &[f64], is_anomaly: &[bool]) -> f64 {
    let pos = is_anomaly.iter().filter(|a| **a).count() as f64;
    let neg = is_anomaly.len() as f64 - pos;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let (mut tp, mut fp) = (0.0, 0.0);
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if is_anomaly[idx[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let (tpr, fpr) = (tp / pos, fp / neg);
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    area
}

/// Random labelled score set with both classes and deliberate ties.
pub fn random_score_set(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    let len = rng.gen_range(4..40);
    let mut labels: Vec<bool> = (0..len).map(|_| rng.gen_bool(0.4)).collect();
    labels[0] = true;
    labels[1] = false;
    let levels = rng.gen_range(3..12);
    let scores = (0..len).map(|_| rng.gen_range(0..levels) as f64 * 0.25).collect();
    (scores, labels)
}

// ----------------------------------------------------------- gradient checks

pub const LAMBDA_C: f64 = 10.0;
pub const LAMBDA_G: f64 = 0.5;

pub fn tiny_model(seed: u64) -> ModelHandles {
    let cfg = ModelConfig {
        n: 1,
        l: 16,
        d: 3,
        channels: [2, 2, 2],
        critic_hidden: 3,
        init: model::InitSpec {
            weight_std: 0.4,
            gamma_std: 0.2,
        },
        ..ModelConfig::default()
    };
    build_model(&cfg, seed).unwrap()
}

pub struct Batch {
    pub x: Tensor,
    pub eps: Vec<f64>,
}

pub fn tiny_batch(seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = 6;
    Batch {
        x: Tensor::from_fn(&[b, 16], |_| rng.gen()),
        eps: (0..b).map(|_| rng.gen()).collect(),
    }
}

fn bound_all<'g>(m: &'g ModelHandles, g: &'g Graph) -> (model::Bound<'g, 'g>, model::Bound<'g, 'g>, model::Bound<'g, 'g>) {
    (m.encoder.bind(g, true), m.decoder.bind(g, true), m.critic.bind(g, true))
}

fn reconstruct<'g>(m: &ModelHandles, e: &model::Bound<'g, '_>, d: &model::Bound<'g, '_>, x: Var<'g>) -> Var<'g> {
    let z = model::encoder_forward(&m.config, e, x, &mut Mode::train());
    model::decoder_forward(&m.config, d, z, &mut Mode::train())
}

/// `L_G` and its gradient with respect to every parameter, keyed `net.param`.
pub fn generator_loss_and_grads(m: &ModelHandles, batch: &Batch, with_grads: bool) -> (f64, BTreeMap<String, Tensor>) {
    let g = Graph::new();
    let (e, d, c) = bound_all(m, &g);
    let x = g.constant(batch.x.clone());
    let xt = reconstruct(m, &e, &d, x);
    let ms = losses::mssim_graph(x, xt, m.config.n, m.config.l, &SsimConfig::default()).unwrap();
    let c_fake = model::critic_forward(&m.config, &c, xt);
    let loss = losses::generator_loss(ms, c_fake, LAMBDA_G);
    (loss.item(), if with_grads { grads(&g, loss, &[("encoder", &e), ("decoder", &d), ("critic", &c)]) } else { BTreeMap::new() })
}

/// `L_C` (gradient penalty included) and its gradient with respect to the
/// critic parameters.
pub fn critic_loss_and_grads(m: &ModelHandles, batch: &Batch, with_grads: bool) -> (f64, BTreeMap<String, Tensor>) {
    let g = Graph::new();
    let (e, d, c) = bound_all(m, &g);
    let x = g.constant(batch.x.clone());
    let xt_value = reconstruct(m, &e, &d, x).value().as_ref().clone();
    let xt = g.constant(xt_value.clone());
    let c_real = model::critic_forward(&m.config, &c, x);
    let c_fake = model::critic_forward(&m.config, &c, xt);
    let gp = losses::gradient_penalty(&g, |v| model::critic_forward(&m.config, &c, v), &batch.x, &xt_value, &batch.eps).unwrap();
    let loss = losses::critic_loss(c_real, c_fake, gp, LAMBDA_C);
    (loss.item(), if with_grads { grads(&g, loss, &[("critic", &c)]) } else { BTreeMap::new() })
}

fn grads<'g>(g: &'g Graph, out: Var<'g>, nets: &[(&str, &model::Bound<'g, '_>)]) -> BTreeMap<String, Tensor> {
    let mut names = Vec::new();
    let mut vars = Vec::new();
    for (net, b) in nets {
        for (k, v) in b.list() {
            names.push(format!("{net}.{k}"));
            vars.push(v);
        }
    }
    names
        .into_iter()
        .zip(g.grad(out, &vars, false))
        .map(|(k, v)| (k, v.value().as_ref().clone()))
        .collect()
}

fn param_mut<'a>(m: &'a mut ModelHandles, key: &str) -> &'a mut Tensor {
    let (net, name) = key.split_once('.').unwrap();
    let net = match net {
        "encoder" => &mut m.encoder,
        "decoder" => &mut m.decoder,
        _ => &mut m.critic,
    };
    net.params.get_mut(name).unwrap()
}

/// Per-tensor relative error `|a - n| / max(|a|, |n|)` between analytic and
/// central-difference gradients. Tensors whose gradients are both below
/// `1e-10` in norm are compared absolutely.
pub fn finite_difference_errors<F>(m: &ModelHandles, batch: &Batch, loss: F) -> Vec<(String, f64)>
where
    F: Fn(&ModelHandles, &Batch, bool) -> (f64, BTreeMap<String, Tensor>),
{
    let h = 1e-6;
    let (_, analytic) = loss(m, batch, true);
    let mut out = Vec::new();
    for (key, a) in &analytic {
        let mut numeric = Vec::with_capacity(a.numel());
        for i in 0..a.numel() {
            let mut plus = m.clone();
            param_mut(&mut plus, key).data_mut()[i] += h;
            let mut minus = m.clone();
            param_mut(&mut minus, key).data_mut()[i] -= h;
            numeric.push((loss(&plus, batch, false).0 - loss(&minus, batch, false).0) / (2.0 * h));
        }
        let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
        let diff = norm(&mut a.data().iter().zip(&numeric).map(|(x, y)| x - y));
        let scale = norm(&mut a.data().iter().copied()).max(norm(&mut numeric.iter().copied()));
        out.push((key.clone(), if scale < 1e-10 { diff } else { diff / scale }));
    }
    out
}
