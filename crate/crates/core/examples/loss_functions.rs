//! The distance and adversarial terms on small hand-made inputs.
//!
//!     cargo run --release --example loss_functions

use arcade::losses::{self, SsimConfig};
use arcade_tensor::{Graph, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = SsimConfig::default();
    let x: Vec<f64> = (0..100).map(|i| ((i * 37) % 256) as f64 / 255.0).collect();
    let noisy: Vec<f64> = x.iter().enumerate().map(|(i, v)| (v + if i % 2 == 0 { 0.05 } else { -0.05 }).clamp(0.0, 1.0)).collect();
    println!("{} windows per 10x10 packet image", cfg.window_count(100)?);
    println!("MSSIM(x, x)      = {:.6}", losses::mssim(&x, &x, 1, 100, &cfg)?);
    println!("MSSIM(x, noisy)  = {:.6}", losses::mssim(&x, &noisy, 1, 100, &cfg)?);
    println!("MSSIM(0, 1)      = {:.6}", losses::mssim(&[0.0; 100], &[1.0; 100], 1, 100, &cfg)?);
    println!("L2(x, noisy)     = {:.6}", losses::l2_loss(&x, &noisy)?);

    // a linear critic has the same input gradient everywhere
    let g = Graph::new();
    let w = g.constant(Tensor::new(&[2, 1], vec![3.0, 4.0]));
    let a = Tensor::new(&[3, 2], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    let b = Tensor::zeros(&[3, 2]);
    let gp = losses::gradient_penalty(&g, |v| v.matmul(w).reshape(&[3]), &a, &b, &[0.1, 0.5, 0.9])?;
    println!("penalty of C(v) = 3 v0 + 4 v1: {} (expected (5 - 1)^2 = 16)", gp.item());
    Ok(())
}
