use super::{Result, Tensor, TensorError};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    /// Max relative error per input, in the order the inputs were given.
    pub max_rel_error: Vec<f64>,
    pub eps: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl GradReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().copied().fold(0.0, f64::max)
    }
}

/// Checks `∂loss/∂param` for every coordinate of `params` against
/// `(f(x+eps) − f(x−eps)) / 2eps`. Relative error uses the denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(mut build: F, params: &[Tensor], eps: f64, tolerance: f64) -> Result<GradReport>
where
    F: FnMut() -> Result<Tensor>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(TensorError::Contract(format!("eps {eps} outside [1e-7, 1e-3]")));
    }
    let first = build()?.item();
    let second = build()?.item();
    if first.to_bits() != second.to_bits() {
        return Err(TensorError::NonDeterministic { first, second });
    }

    for p in params {
        p.zero_grad();
    }
    build()?.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    let mut max_rel_error = Vec::with_capacity(params.len());
    for (p, ga) in params.iter().zip(&analytic) {
        let mut worst: f64 = 0.0;
        for i in 0..p.numel() {
            let orig = p.data()[i];
            p.update_data(|d| d[i] = orig + eps);
            let up = build()?.item();
            p.update_data(|d| d[i] = orig - eps);
            let down = build()?.item();
            p.update_data(|d| d[i] = orig);
            let numeric = (up - down) / (2.0 * eps);
            let denom = ga[i].abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((ga[i] - numeric).abs() / denom);
        }
        max_rel_error.push(worst);
    }
    let pass = max_rel_error.iter().all(|&e| e <= tolerance);
    Ok(GradReport {
        max_rel_error,
        eps,
        tolerance,
        pass,
    })
}
