use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Global L2 norm over the gradients of `params`.
pub fn grad_norm(params: &[&mut Tensor]) -> f64 {
    params
        .iter()
        .filter_map(|p| p.grad())
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Plain SGD update `p <- p - lr * g`, with the gradient rescaled so its
/// global norm does not exceed `clip_norm`. Gradients are cleared afterwards.
pub fn sgd_step(params: &mut [&mut Tensor], lr: f64, clip_norm: Option<f64>) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Optimizer(format!("learning rate must be positive, got {lr}")));
    }
    if let Some(c) = clip_norm {
        if !(c > 0.0) {
            return Err(Error::Optimizer(format!("clip norm must be positive, got {c}")));
        }
    }
    if let Some(i) = params.iter().position(|p| p.grad().is_none()) {
        return Err(Error::Optimizer(format!("parameter {i} has no gradient")));
    }
    let norm = grad_norm(params);
    let scale = match clip_norm {
        Some(c) if norm > c => c / norm,
        _ => 1.0,
    };
    for p in params.iter_mut() {
        let g = p.grad().expect("checked above").to_vec();
        p.values_mut().iter_mut().zip(&g).for_each(|(v, gv)| *v -= lr * scale * gv);
        p.clear_grad();
    }
    Ok(())
}
