use arcade_tensor::{Tensor, Var};

use super::{Bound, ModelConfig};

/// Batch statistics of one batch-norm layer, to be folded into its running
/// averages after the step.
#[derive(Debug, Clone, PartialEq)]
pub struct BnUpdate {
    pub layer: String,
    pub mean: Tensor,
    /// Unbiased variance.
    pub var: Tensor,
}

/// Batch-normalization behaviour for one forward pass.
#[derive(Debug)]
pub enum Mode {
    /// Normalize with batch statistics and record them.
    Train(Vec<BnUpdate>),
    /// Normalize with running statistics.
    Eval,
}

impl Mode {
    pub fn train() -> Mode {
        Mode::Train(Vec::new())
    }

    pub fn updates(&self) -> &[BnUpdate] {
        match self {
            Mode::Train(u) => u,
            Mode::Eval => &[],
        }
    }
}

/// `x [B, in] @ w[out, in]^T (+ b)`.
pub(super) fn linear<'g>(x: Var<'g>, w: Var<'g>, bias: Option<Var<'g>>) -> Var<'g> {
    let y = x.matmul(w.t());
    match bias {
        Some(b) => {
            let shape = y.shape();
            y + b.reshape(&[1, shape[1]]).broadcast_to(&shape)
        }
        None => y,
    }
}

/// Per-feature normalization over the batch (and length, for `[B, C, L]`).
pub(super) fn batch_norm<'g>(p: &Bound<'g, '_>, name: &str, x: Var<'g>, cfg: &ModelConfig, mode: &mut Mode) -> Var<'g> {
    let shape = x.shape();
    let c = shape[1];
    let stat_shape: Vec<usize> = match shape.len() {
        2 => vec![1, c],
        3 => vec![1, c, 1],
        r => panic!("batch norm expects rank 2 or 3, got {r}"),
    };
    let per_feature = shape.iter().product::<usize>() / c;
    let (mean, var) = match mode {
        Mode::Train(updates) => {
            let mean = x.mean_to(&stat_shape);
            let centered = x - mean.broadcast_to(&shape);
            let var = centered.square().mean_to(&stat_shape);
            let unbias = if per_feature > 1 {
                per_feature as f64 / (per_feature - 1) as f64
            } else {
                1.0
            };
            updates.push(BnUpdate {
                layer: name.to_string(),
                mean: mean.value().as_ref().clone().reshape(&[c]),
                var: var.value().map(|v| v * unbias).reshape(&[c]),
            });
            (mean, var)
        }
        Mode::Eval => {
            let g = x.graph();
            let rm = p.buffer(&format!("{name}.running_mean")).clone().reshape(&stat_shape);
            let rv = p.buffer(&format!("{name}.running_var")).clone().reshape(&stat_shape);
            (g.constant(rm), g.constant(rv))
        }
    };
    let inv = var.add_scalar(cfg.norm_eps).powf(-0.5);
    let gamma = p.var(&format!("{name}.gamma")).reshape(&stat_shape);
    let beta = p.var(&format!("{name}.beta")).reshape(&stat_shape);
    let scale = (gamma * inv).broadcast_to(&shape);
    (x - mean.broadcast_to(&shape)) * scale + beta.broadcast_to(&shape)
}

/// Per-sample normalization over all non-batch axes, with elementwise affine.
pub(super) fn layer_norm<'g>(p: &Bound<'g, '_>, name: &str, x: Var<'g>, eps: f64) -> Var<'g> {
    let shape = x.shape();
    let mut stat_shape = vec![1; shape.len()];
    stat_shape[0] = shape[0];
    let mut affine_shape = shape.clone();
    affine_shape[0] = 1;
    let mean = x.mean_to(&stat_shape).broadcast_to(&shape);
    let centered = x - mean;
    let var = centered.square().mean_to(&stat_shape);
    let inv = var.add_scalar(eps).powf(-0.5).broadcast_to(&shape);
    let gamma = p.var(&format!("{name}.gamma")).reshape(&affine_shape).broadcast_to(&shape);
    let beta = p.var(&format!("{name}.beta")).reshape(&affine_shape).broadcast_to(&shape);
    centered * inv * gamma + beta
}
