use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Linear warmup from 0 to `base` over `warmup` steps, then cosine decay to
/// `min` at `total`.
pub fn lr_at(step: usize, total: usize, warmup: usize, base: f64, min: f64) -> Result<f64> {
    if step > total {
        return Err(Error::Contract(format!("step {step} beyond the last step {total}")));
    }
    if warmup > total {
        return Err(Error::Contract(format!("warmup {warmup} longer than {total} steps")));
    }
    if step < warmup {
        return Ok(base * step as f64 / warmup as f64);
    }
    if total == warmup {
        return Ok(base);
    }
    let t = (step - warmup) as f64 / (total - warmup) as f64;
    Ok(min + (base - min) * (1.0 + (PI * t).cos()) / 2.0)
}
