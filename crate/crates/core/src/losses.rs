//! Reconstruction distances and adversarial objectives.
//!
//! Scalar helpers work on plain slices; the `*_graph` variants build
//! differentiable expressions over `[B, w]` batches.

use arcade_tensor::{Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How `c1`/`c2` enter the SSIM formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SsimConstants {
    /// Use `c1`, `c2` as given.
    Literal,
    /// Use `(c1 * range)^2`, `(c2 * range)^2` with a dynamic range of 1.
    Squared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsimConfig {
    pub c1: f64,
    pub c2: f64,
    pub constants: SsimConstants,
    /// Side of the square Gaussian window.
    pub window: usize,
    pub sigma: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            c1: 0.01,
            c2: 0.03,
            constants: SsimConstants::Literal,
            window: 3,
            sigma: 1.5,
        }
    }
}

impl SsimConfig {
    /// Stabilizing constants actually used.
    pub fn effective_constants(&self) -> (f64, f64) {
        match self.constants {
            SsimConstants::Literal => (self.c1, self.c2),
            SsimConstants::Squared => (self.c1 * self.c1, self.c2 * self.c2),
        }
    }

    /// Normalized Gaussian window, row-major `window x window`.
    pub fn window_weights(&self) -> Vec<f64> {
        let k = self.window;
        let c = (k as f64 - 1.0) / 2.0;
        let g: Vec<f64> = (0..k)
            .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let mut w: Vec<f64> = (0..k * k).map(|i| g[i / k] * g[i % k]).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        w
    }

    /// Image side for packets of `l` bytes; `l` must be a perfect square at
    /// least as large as the window.
    pub fn image_side(&self, l: usize) -> Result<usize> {
        let side = (l as f64).sqrt().round() as usize;
        if side * side != l {
            return Err(Error::Config(format!("packet length {l} is not a perfect square")));
        }
        if self.window == 0 || side < self.window {
            return Err(Error::Config(format!(
                "window {} does not fit a {side}x{side} image",
                self.window
            )));
        }
        Ok(side)
    }

    /// Number of valid window positions per packet image.
    pub fn window_count(&self, l: usize) -> Result<usize> {
        let side = self.image_side(l)?;
        Ok((side - self.window + 1).pow(2))
    }

    pub fn validate(&self) -> Result<()> {
        let (c1, c2) = self.effective_constants();
        if !(c1 > 0.0 && c2 > 0.0) {
            return Err(Error::Config("SSIM constants must be positive".into()));
        }
        if !(self.sigma > 0.0) || self.window == 0 {
            return Err(Error::Config("SSIM window must be non-empty with sigma > 0".into()));
        }
        Ok(())
    }

    /// `[l, M]` matrix whose column `j` holds the window weights placed at
    /// window position `j`.
    fn window_matrix(&self, l: usize) -> Result<Tensor> {
        let side = self.image_side(l)?;
        let k = self.window;
        let span = side - k + 1;
        let m = span * span;
        let w = self.window_weights();
        let mut mat = Tensor::zeros(&[l, m]);
        let data = mat.data_mut();
        for j in 0..m {
            let (r0, c0) = (j / span, j % span);
            for a in 0..k {
                for b in 0..k {
                    data[((r0 + a) * side + c0 + b) * m + j] = w[a * k + b];
                }
            }
        }
        Ok(mat)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarialConfig {
    /// Gradient-penalty weight.
    pub lambda_c: f64,
    /// Weight of the critic score in the autoencoder objective.
    pub lambda_g: f64,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        AdversarialConfig {
            lambda_c: 10.0,
            lambda_g: 0.01,
        }
    }
}

impl AdversarialConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_c >= 0.0 && self.lambda_g >= 0.0) {
            return Err(Error::Config("adversarial coefficients must be >= 0".into()));
        }
        Ok(())
    }
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Length {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

/// Sum of squared differences.
pub fn l2_loss(x: &[f64], y: &[f64]) -> Result<f64> {
    same_len(x, y)?;
    Ok(x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Per-sample L2 of `[B, w]` batches, shape `[B]`.
pub fn l2_graph<'g>(x: Var<'g>, y: Var<'g>) -> Var<'g> {
    let b = x.shape()[0];
    (x - y).square().sum_to(&[b, 1]).reshape(&[b])
}

/// SSIM of two `window x window` patches under Gaussian weighting.
pub fn ssim_patch(p: &[f64], q: &[f64], cfg: &SsimConfig) -> Result<f64> {
    same_len(p, q)?;
    let w = cfg.window_weights();
    same_len(&w, p)?;
    let (c1, c2) = cfg.effective_constants();
    let mu_p: f64 = w.iter().zip(p).map(|(w, v)| w * v).sum();
    let mu_q: f64 = w.iter().zip(q).map(|(w, v)| w * v).sum();
    let mut var_p = 0.0;
    let mut var_q = 0.0;
    let mut cov = 0.0;
    for i in 0..w.len() {
        let (dp, dq) = (p[i] - mu_p, q[i] - mu_q);
        var_p += w[i] * dp * dp;
        var_q += w[i] * dq * dq;
        cov += w[i] * dp * dq;
    }
    Ok((2.0 * mu_p * mu_q + c1) * (2.0 * cov + c2) / ((mu_p * mu_p + mu_q * mu_q + c1) * (var_p + var_q + c2)))
}

/// Mean SSIM over every valid window of every packet image of one sample.
pub fn mssim(x: &[f64], y: &[f64], n: usize, l: usize, cfg: &SsimConfig) -> Result<f64> {
    same_len(x, y)?;
    if x.len() != n * l {
        return Err(Error::Length {
            expected: n * l,
            got: x.len(),
        });
    }
    let g = Graph::new();
    let xs = g.constant(Tensor::new(&[1, n * l], x.to_vec()));
    let ys = g.constant(Tensor::new(&[1, n * l], y.to_vec()));
    Ok(mssim_graph(xs, ys, n, l, cfg)?.item())
}

/// Per-sample MSSIM of `[B, n * l]` batches, shape `[B]`.
pub fn mssim_graph<'g>(x: Var<'g>, y: Var<'g>, n: usize, l: usize, cfg: &SsimConfig) -> Result<Var<'g>> {
    cfg.validate()?;
    let shape = x.shape();
    if shape.len() != 2 || shape[1] != n * l || y.shape() != shape {
        return Err(Error::Config(format!(
            "mssim expects two [B, {}] batches, got {:?} and {:?}",
            n * l,
            shape,
            y.shape()
        )));
    }
    let b = shape[0];
    let g = x.graph();
    let wm = g.constant(cfg.window_matrix(l)?);
    let m = wm.shape()[1];
    let (c1, c2) = cfg.effective_constants();
    let xp = x.reshape(&[b * n, l]);
    let yp = y.reshape(&[b * n, l]);
    let mu_x = xp.matmul(wm);
    let mu_y = yp.matmul(wm);
    let mu_xx = mu_x.square();
    let mu_yy = mu_y.square();
    let mu_xy = mu_x * mu_y;
    let var_x = xp.square().matmul(wm) - mu_xx;
    let var_y = yp.square().matmul(wm) - mu_yy;
    let cov = (xp * yp).matmul(wm) - mu_xy;
    let num = mu_xy.scale(2.0).add_scalar(c1) * cov.scale(2.0).add_scalar(c2);
    let den = (mu_xx + mu_yy).add_scalar(c1) * (var_x + var_y).add_scalar(c2);
    let map = num / den;
    Ok(map.reshape(&[b, n * m]).mean_to(&[b, 1]).reshape(&[b]))
}

/// `mean_b (||grad C(x_hat_b)|| - 1)^2` at `x_hat = eps * x + (1 - eps) * x_tilde`,
/// one `eps` per batch element. The result stays differentiable with
/// respect to whatever parameters `critic` closes over.
pub fn gradient_penalty<'g, F>(g: &'g Graph, critic: F, x: &Tensor, x_tilde: &Tensor, eps: &[f64]) -> Result<Var<'g>>
where
    F: Fn(Var<'g>) -> Var<'g>,
{
    if x.shape() != x_tilde.shape() {
        return Err(Error::Config(format!(
            "penalty inputs differ in shape: {:?} vs {:?}",
            x.shape(),
            x_tilde.shape()
        )));
    }
    let b = x.shape()[0];
    if eps.len() != b {
        return Err(Error::Length {
            expected: b,
            got: eps.len(),
        });
    }
    let per = x.numel() / b.max(1);
    let mut data = Vec::with_capacity(x.numel());
    for (i, (xr, tr)) in x.data().chunks(per).zip(x_tilde.data().chunks(per)).enumerate() {
        let e = eps[i];
        data.extend(xr.iter().zip(tr).map(|(a, t)| e * a + (1.0 - e) * t));
    }
    let x_hat = g.leaf(Tensor::new(x.shape(), data), true);
    let scores = critic(x_hat);
    let grad = g.grad(scores.sum(), &[x_hat], true)[0];
    let mut norm_shape = vec![1; x.ndim()];
    norm_shape[0] = b;
    let norm = grad.square().sum_to(&norm_shape).sqrt();
    Ok(norm.add_scalar(-1.0).square().mean())
}

/// `mean(C(x) - C(x_tilde)) + lambda_c * gp`.
pub fn critic_loss<'g>(c_real: Var<'g>, c_fake: Var<'g>, gp: Var<'g>, lambda_c: f64) -> Var<'g> {
    (c_real - c_fake).mean() + gp.scale(lambda_c)
}

/// Quantity the critic optimizer minimizes: raise the score gap while keeping
/// the gradient penalty small.
pub fn critic_objective<'g>(c_real: Var<'g>, c_fake: Var<'g>, gp: Var<'g>, lambda_c: f64) -> Var<'g> {
    gp.scale(lambda_c) - (c_real - c_fake).mean()
}

/// `mean(MSSIM(x, x_tilde) + lambda_g * C(x_tilde))`, from per-sample terms.
pub fn generator_loss<'g>(mssim: Var<'g>, c_fake: Var<'g>, lambda_g: f64) -> Var<'g> {
    (mssim + c_fake.scale(lambda_g)).mean()
}

/// Quantity the autoencoder optimizer minimizes (`-generator_loss`).
pub fn generator_objective<'g>(mssim: Var<'g>, c_fake: Var<'g>, lambda_g: f64) -> Var<'g> {
    -generator_loss(mssim, c_fake, lambda_g)
}
