use crate::error::{Error, Result};

/// Poly decay: `base · (1 − iter/max_iter)^power`.
pub fn poly_lr(base: f64, iter: u64, max_iter: u64, power: f64) -> Result<f64> {
    if max_iter == 0 || iter > max_iter {
        return Err(Error::invalid("poly_lr", format!("iteration {iter} outside 0..={max_iter}")));
    }
    Ok(base * (1.0 - iter as f64 / max_iter as f64).powf(power))
}

/// Power used by the poly schedule in training.
pub const POLY_POWER: f64 = 0.9;
