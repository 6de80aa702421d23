//! Alternating critic / autoencoder optimization on normal traffic.

use std::collections::BTreeMap;
use std::path::Path;

use arcade_tensor::{Adam, Graph, Tensor, Var};
use log::{debug, info};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Label, SampleSet};
use crate::losses::{self, AdversarialConfig, SsimConfig};
use crate::model::{self, Checkpoint, Mode, ModelHandles};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adversarial: AdversarialConfig,
    pub ssim: SsimConfig,
    pub lr_phase1: f64,
    pub lr_phase2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs_phase1: usize,
    pub epochs_phase2: usize,
    pub seed: u64,
    pub shuffle: bool,
    /// Skip critic updates entirely (plain MSSIM autoencoder).
    pub train_critic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            adversarial: AdversarialConfig::default(),
            ssim: SsimConfig::default(),
            lr_phase1: 1e-4,
            lr_phase2: 1e-5,
            beta1: 0.0,
            beta2: 0.9,
            adam_eps: 1e-8,
            epochs_phase1: 100,
            epochs_phase2: 50,
            seed: 0,
            shuffle: true,
            train_critic: true,
        }
    }
}

impl TrainConfig {
    pub fn total_epochs(&self) -> usize {
        self.epochs_phase1 + self.epochs_phase2
    }

    pub fn validate(&self) -> Result<()> {
        self.adversarial.validate()?;
        self.ssim.validate()?;
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2".into()));
        }
        let nonneg = [self.lr_phase1, self.lr_phase2, self.beta1, self.beta2, self.adam_eps];
        if nonneg.iter().any(|v| !(*v >= 0.0)) || self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(Error::Config("learning rates and Adam moments must be in range".into()));
        }
        Ok(())
    }
}

/// Learning rate of `epoch`: phase-1 rate for the first `epochs_phase1`
/// epochs, then the phase-2 rate.
pub fn lr_schedule(cfg: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch >= cfg.total_epochs() {
        return Err(Error::Config(format!(
            "epoch {epoch} is past the schedule of {} epochs",
            cfg.total_epochs()
        )));
    }
    Ok(if epoch < cfg.epochs_phase1 {
        cfg.lr_phase1
    } else {
        cfg.lr_phase2
    })
}

/// Smallest number of principal components explaining at least 95% of the
/// variance of `samples`.
pub fn latent_dim_from_pca(samples: &SampleSet) -> Result<usize> {
    explained_variance_dim(samples, 0.95)
}

pub fn explained_variance_dim(samples: &SampleSet, fraction: f64) -> Result<usize> {
    let (rows, w) = (samples.len(), samples.width());
    if rows < 2 {
        return Err(Error::Config("PCA needs at least 2 samples".into()));
    }
    let mut mean = vec![0.0f64; w];
    for i in 0..rows {
        for (m, &v) in mean.iter_mut().zip(samples.sample(i)) {
            *m += f64::from(v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    let centered = DMatrix::from_fn(rows, w, |r, c| f64::from(samples.sample(r)[c]) - mean[c]);
    let cov = centered.tr_mul(&centered) / (rows as f64 - 1.0);
    let mut eig: Vec<f64> = SymmetricEigen::new(cov)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0))
        .collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = eig.iter().sum();
    if total <= 0.0 {
        return Ok(1);
    }
    let target = fraction * total * (1.0 - 1e-9);
    let mut acc = 0.0;
    for (i, v) in eig.iter().enumerate() {
        acc += v;
        if acc >= target {
            return Ok(i + 1);
        }
    }
    Ok(eig.len())
}

/// Mean losses of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// `mean(C(x) - C(x_tilde)) + lambda_c * gp`.
    pub critic_loss: f64,
    /// `mean(MSSIM + lambda_g * C(x_tilde))`.
    pub generator_loss: f64,
    pub mssim: f64,
    pub gradient_penalty: f64,
}

/// Everything needed to continue a run where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub critic_opt: Adam,
    pub ae_opt: Adam,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> TrainState {
        TrainState {
            epoch: 0,
            critic_opt: Adam::new(cfg.beta1, cfg.beta2, cfg.adam_eps),
            ae_opt: Adam::new(cfg.beta1, cfg.beta2, cfg.adam_eps),
            history: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub critic_loss: f64,
    pub generator_loss: f64,
    pub mssim: f64,
    pub gradient_penalty: f64,
}

fn epoch_rng(seed: u64, epoch: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream);
    rng
}

fn named_grads<'g>(g: &'g Graph, out: Var<'g>, vars: &[(String, Var<'g>)]) -> Vec<(String, Tensor)> {
    let wrt: Vec<Var<'g>> = vars.iter().map(|(_, v)| *v).collect();
    let grads = g.grad(out, &wrt, false);
    vars.iter()
        .zip(grads)
        .map(|((k, _), gv)| (k.clone(), gv.value().as_ref().clone()))
        .collect()
}

/// One Adam step over several networks, keyed `"{prefix}.{param}"`.
fn adam_step(opt: &mut Adam, lr: f64, groups: Vec<(&str, &mut BTreeMap<String, Tensor>, Vec<(String, Tensor)>)>) {
    let mut items = Vec::new();
    let mut storage = Vec::new();
    for (prefix, params, grads) in groups {
        let mut grads: BTreeMap<String, Tensor> = grads.into_iter().collect();
        for (k, p) in params.iter_mut() {
            let g = grads.remove(k).expect("gradient for every parameter");
            storage.push((format!("{prefix}.{k}"), g));
            items.push(p);
        }
    }
    opt.step(
        lr,
        storage
            .iter()
            .zip(items)
            .map(|((name, g), p)| (name.as_str(), p, g)),
    );
}

/// One critic update followed by one autoencoder update on batch `x [B, w]`
/// with per-sample interpolation weights `eps`.
pub fn train_step(
    model: &mut ModelHandles,
    state: &mut TrainState,
    cfg: &TrainConfig,
    x: Tensor,
    eps: &[f64],
    lr: f64,
) -> Result<StepStats> {
    let mcfg = model.config.clone();
    let (lambda_c, lambda_g) = (cfg.adversarial.lambda_c, cfg.adversarial.lambda_g);
    let g = Graph::new();
    let xv = g.constant(x.clone());
    let mut enc_mode = Mode::train();
    let mut dec_mode = Mode::train();
    let enc = model.encoder.bind(&g, true);
    let dec = model.decoder.bind(&g, true);
    let z = model::encoder_forward(&mcfg, &enc, xv, &mut enc_mode);
    let xt = model::decoder_forward(&mcfg, &dec, z, &mut dec_mode);
    let mut stats = StepStats::default();

    if cfg.train_critic {
        let crit = model.critic.bind(&g, true);
        let c_real = model::critic_forward(&mcfg, &crit, xv);
        let c_fake = model::critic_forward(&mcfg, &crit, xt.detach());
        let xt_value = xt.value();
        let gp = losses::gradient_penalty(&g, |v| model::critic_forward(&mcfg, &crit, v), &x, &xt_value, eps)?;
        let objective = losses::critic_objective(c_real, c_fake, gp, lambda_c);
        stats.critic_loss = losses::critic_loss(c_real, c_fake, gp, lambda_c).item();
        stats.gradient_penalty = gp.item();
        let grads = named_grads(&g, objective, &crit.list());
        drop(crit);
        adam_step(&mut state.critic_opt, lr, vec![("critic", &mut model.critic.params, grads)]);
    }

    let ms = losses::mssim_graph(xv, xt, mcfg.n, mcfg.l, &cfg.ssim)?;
    let objective = if lambda_g != 0.0 {
        let crit = model.critic.bind(&g, false);
        let c_fake = model::critic_forward(&mcfg, &crit, xt);
        losses::generator_objective(ms, c_fake, lambda_g)
    } else {
        -ms.mean()
    };
    stats.generator_loss = -objective.item();
    stats.mssim = ms.mean().item();
    let enc_vars = enc.list();
    let split = enc_vars.len();
    let mut grads = named_grads(&g, objective, &[enc_vars, dec.list()].concat());
    let dec_grads = grads.split_off(split);
    let enc_grads = grads;
    drop((enc, dec));
    adam_step(
        &mut state.ae_opt,
        lr,
        vec![
            ("encoder", &mut model.encoder.params, enc_grads),
            ("decoder", &mut model.decoder.params, dec_grads),
        ],
    );
    model.encoder.apply_bn_updates(enc_mode.updates(), mcfg.bn_momentum);
    model.decoder.apply_bn_updates(dec_mode.updates(), mcfg.bn_momentum);
    Ok(stats)
}

fn check_normal_only(data: &SampleSet) -> Result<()> {
    if let Some(labels) = &data.labels {
        if let Some(i) = labels.iter().position(|l| *l != Label::Normal) {
            return Err(Error::Training(format!(
                "training set contains an anomaly-labelled sample at index {i}; train on normal traffic only"
            )));
        }
    }
    Ok(())
}

/// Trains from scratch; see [`train_from`].
pub fn train<F>(data: &SampleSet, model: &mut ModelHandles, cfg: &TrainConfig, on_epoch: F) -> Result<TrainState>
where
    F: FnMut(&EpochRecord, &ModelHandles) -> Result<()>,
{
    train_from(data, model, cfg, TrainState::new(cfg), cfg.total_epochs(), on_epoch)
}

/// Continues `state` until `until_epoch` completed epochs. Each epoch
/// shuffles with an RNG derived from `(seed, epoch)`, so stopping and
/// resuming reproduces an uninterrupted run exactly. The last partial batch
/// is dropped. `on_epoch` runs after every epoch; an error from it aborts.
pub fn train_from<F>(
    data: &SampleSet,
    model: &mut ModelHandles,
    cfg: &TrainConfig,
    mut state: TrainState,
    until_epoch: usize,
    mut on_epoch: F,
) -> Result<TrainState>
where
    F: FnMut(&EpochRecord, &ModelHandles) -> Result<()>,
{
    cfg.validate()?;
    model.config.validate()?;
    check_normal_only(data)?;
    let w = model.config.w();
    if data.width() != w || data.n != model.config.n {
        return Err(Error::Length {
            expected: w,
            got: data.width(),
        });
    }
    let m = cfg.batch_size;
    let batches = data.len() / m;
    if batches == 0 {
        return Err(Error::Training(format!(
            "{} samples do not fill a single batch of {m}",
            data.len()
        )));
    }
    let until_epoch = until_epoch.min(cfg.total_epochs());

    while state.epoch < until_epoch {
        let epoch = state.epoch;
        let lr = lr_schedule(cfg, epoch)?;
        let mut order: Vec<usize> = (0..data.len()).collect();
        if cfg.shuffle {
            order.shuffle(&mut epoch_rng(cfg.seed, epoch, 0));
        }
        let mut eps_rng = epoch_rng(cfg.seed, epoch, 1);
        let mut sums = StepStats::default();
        for (b, idx) in order.chunks_exact(m).enumerate() {
            let mut x = Vec::with_capacity(m * w);
            for &i in idx {
                x.extend(data.sample(i).iter().map(|&v| f64::from(v)));
            }
            let eps: Vec<f64> = (0..m).map(|_| eps_rng.gen::<f64>()).collect();
            let s = train_step(model, &mut state, cfg, Tensor::new(&[m, w], x), &eps, lr)?;
            let values = [s.critic_loss, s.generator_loss, s.mssim, s.gradient_penalty];
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch}, batch {b}: critic {}, generator {}, mssim {}, penalty {}",
                    s.critic_loss, s.generator_loss, s.mssim, s.gradient_penalty
                )));
            }
            sums.critic_loss += s.critic_loss;
            sums.generator_loss += s.generator_loss;
            sums.mssim += s.mssim;
            sums.gradient_penalty += s.gradient_penalty;
            debug!("epoch {epoch} batch {b}: {s:?}");
        }
        let k = batches as f64;
        let record = EpochRecord {
            epoch,
            lr,
            critic_loss: sums.critic_loss / k,
            generator_loss: sums.generator_loss / k,
            mssim: sums.mssim / k,
            gradient_penalty: sums.gradient_penalty / k,
        };
        info!(
            "epoch {epoch}: lr {lr:e} critic {:.5} generator {:.5} mssim {:.5}",
            record.critic_loss, record.generator_loss, record.mssim
        );
        state.history.push(record);
        state.epoch += 1;
        on_epoch(&record, model)?;
    }
    Ok(state)
}

/// Writes `epoch, lr, L_C, L_G, MSSIM, GP` rows.
pub fn write_history_csv(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(e.to_string()))?;
    w.write_record(["epoch", "lr", "L_C", "L_G", "MSSIM", "GP"])
        .map_err(|e| Error::Serde(e.to_string()))?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.lr.to_string(),
            r.critic_loss.to_string(),
            r.generator_loss.to_string(),
            r.mssim.to_string(),
            r.gradient_penalty.to_string(),
        ])
        .map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn adam_tensors(prefix: &str, opt: &Adam, out: &mut BTreeMap<String, Tensor>) {
    for (k, (m, v)) in opt.moments() {
        out.insert(format!("{prefix}.m.{k}"), m.clone());
        out.insert(format!("{prefix}.v.{k}"), v.clone());
    }
}

fn adam_from(prefix: &str, ck: &Checkpoint, steps: u64, cfg: &TrainConfig) -> Adam {
    let mut moments = BTreeMap::new();
    let m_prefix = format!("{prefix}.m.");
    for (k, m) in ck.tensors.range(m_prefix.clone()..) {
        let Some(name) = k.strip_prefix(&m_prefix) else { break };
        if let Some(v) = ck.tensors.get(&format!("{prefix}.v.{name}")) {
            moments.insert(name.to_string(), (m.clone(), v.clone()));
        }
    }
    Adam::restore(cfg.beta1, cfg.beta2, cfg.adam_eps, steps, moments)
}

/// Checkpoint holding the model, the training configuration and the full
/// optimizer state.
pub fn training_checkpoint(model: &ModelHandles, state: &TrainState, cfg: &TrainConfig) -> Result<Checkpoint> {
    let metadata = serde_json::json!({
        "train_config": cfg,
        "epoch": state.epoch,
        "critic_steps": state.critic_opt.steps(),
        "ae_steps": state.ae_opt.steps(),
        "history": state.history,
    });
    let mut ck = Checkpoint::from_model(model, metadata);
    adam_tensors("optim.critic", &state.critic_opt, &mut ck.tensors);
    adam_tensors("optim.ae", &state.ae_opt, &mut ck.tensors);
    Ok(ck)
}

/// Inverse of [`training_checkpoint`].
pub fn resume(ck: &Checkpoint) -> Result<(ModelHandles, TrainState, TrainConfig)> {
    let meta = &ck.metadata;
    let cfg: TrainConfig = serde_json::from_value(meta["train_config"].clone())?;
    let field = |k: &str| {
        meta[k]
            .as_u64()
            .ok_or_else(|| Error::Checkpoint(format!("metadata lacks {k}")))
    };
    let history: Vec<EpochRecord> = serde_json::from_value(meta["history"].clone())?;
    let state = TrainState {
        epoch: field("epoch")? as usize,
        critic_opt: adam_from("optim.critic", ck, field("critic_steps")?, &cfg),
        ae_opt: adam_from("optim.ae", ck, field("ae_steps")?, &cfg),
        history,
    };
    Ok((ck.to_model()?, state, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelConfig};

    fn tiny() -> (ModelConfig, TrainConfig) {
        let mut m = ModelConfig::new(1, 4);
        m.l = 16;
        m.channels = [2, 2, 2];
        m.critic_hidden = 3;
        let mut t = TrainConfig {
            batch_size: 4,
            epochs_phase1: 2,
            epochs_phase2: 1,
            seed: 3,
            ..TrainConfig::default()
        };
        t.ssim.window = 3;
        (m, t)
    }

    fn data(count: usize, w: usize) -> SampleSet {
        let mut s = SampleSet::new(1, w);
        for i in 0..count {
            let v: Vec<f32> = (0..w).map(|j| ((i * 31 + j * 7) % 256) as f32 / 255.0).collect();
            s.push(&v, Some(Label::Normal)).unwrap();
        }
        s
    }

    #[test]
    fn schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(&cfg, 0).unwrap(), 1e-4);
        assert_eq!(lr_schedule(&cfg, 99).unwrap(), 1e-4);
        assert_eq!(lr_schedule(&cfg, 100).unwrap(), 1e-5);
        assert_eq!(lr_schedule(&cfg, 149).unwrap(), 1e-5);
        assert!(lr_schedule(&cfg, 150).is_err());
    }

    #[test]
    fn one_update_each_per_batch() {
        let (mc, tc) = tiny();
        let mut model = build_model(&mc, 1).unwrap();
        let state = train(&data(10, 16), &mut model, &tc, |_, _| Ok(())).unwrap();
        // 10 samples, batch 4: two full batches per epoch, three epochs
        assert_eq!(state.critic_opt.steps(), 6);
        assert_eq!(state.ae_opt.steps(), 6);
        let lrs: Vec<f64> = state.history.iter().map(|r| r.lr).collect();
        assert_eq!(lrs, vec![1e-4, 1e-4, 1e-5]);
    }

    #[test]
    fn anomalies_are_refused() {
        let (mc, tc) = tiny();
        let mut model = build_model(&mc, 1).unwrap();
        let mut d = data(8, 16);
        d.labels.as_mut().unwrap()[5] = Label::Anomaly(2);
        let err = train(&d, &mut model, &tc, |_, _| Ok(())).unwrap_err();
        assert!(matches!(err, Error::Training(_)));
    }

    #[test]
    fn generator_step_leaves_critic_alone() {
        // the critic update precedes the generator update and does not depend
        // on lambda_g, so only a leak from the generator step could make the
        // critics differ
        let (mc, tc) = tiny();
        let x = Tensor::from_fn(&[4, 16], |i| (i % 9) as f64 / 9.0);
        let eps = [0.1, 0.5, 0.7, 0.9];
        let run = |lambda_g: f64| {
            let mut cfg = tc.clone();
            cfg.adversarial.lambda_g = lambda_g;
            let mut model = build_model(&mc, 1).unwrap();
            let mut state = TrainState::new(&cfg);
            train_step(&mut model, &mut state, &cfg, x.clone(), &eps, 1e-3).unwrap();
            model
        };
        let (a, b) = (run(0.01), run(0.5));
        assert_eq!(a.critic, b.critic);
        assert_ne!(a.decoder, b.decoder);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (mc, tc) = tiny();
        let d = data(9, 16);
        let mut full = build_model(&mc, 4).unwrap();
        let full_state = train(&d, &mut full, &tc, |_, _| Ok(())).unwrap();

        let mut part = build_model(&mc, 4).unwrap();
        let state = train_from(&d, &mut part, &tc, TrainState::new(&tc), 1, |_, _| Ok(())).unwrap();
        let ck = training_checkpoint(&part, &state, &tc).unwrap();
        let mut bytes = Vec::new();
        ck.write_to(&mut bytes).unwrap();
        let (mut model, state, cfg) = resume(&Checkpoint::read_from(&bytes[..]).unwrap()).unwrap();
        let state = train_from(&d, &mut model, &cfg, state, cfg.total_epochs(), |_, _| Ok(())).unwrap();
        assert_eq!(model, full);
        assert_eq!(state, full_state);
    }

    #[test]
    fn pca_subspace_and_isotropic() {
        // rows on span{e0, e1, e2}
        let mut s = SampleSet::new(1, 6);
        for i in 0..50 {
            let a = (i as f32 * 0.37).sin();
            let b = (i as f32 * 0.91).cos();
            let c = ((i * 7) % 11) as f32 / 11.0;
            s.push(&[a, b, c, 0.0, 0.0, 0.0], None).unwrap();
        }
        assert_eq!(latent_dim_from_pca(&s).unwrap(), 3);
        assert!(latent_dim_from_pca(&s.select(&[0])).is_err());
    }
}
