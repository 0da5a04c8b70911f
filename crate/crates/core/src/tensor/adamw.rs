use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Hyperparameters of the decoupled-weight-decay Adam update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamWState<T> {
    pub fn for_params(params: &[Tensor<T>]) -> Self {
        AdamWState {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
        }
    }
}

impl AdamW {
    /// One in-place update. `names` labels each parameter for error reports.
    ///
    /// Decay is applied as `w *= 1 - lr * wd` before the bias-corrected Adam
    /// step. Nothing is modified when any gradient is non-finite.
    pub fn step<T: Scalar>(
        &self,
        params: &mut [Tensor<T>],
        grads: &[Tensor<T>],
        names: &[String],
        state: &mut AdamWState<T>,
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != state.m.len() {
            return Err(Error::Shape(format!(
                "{} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                state.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
                return Err(Error::Shape(format!(
                    "parameter {} {:?} vs gradient {:?}",
                    label(names, i),
                    p.shape(),
                    g.shape()
                )));
            }
            if !g.is_finite() {
                return Err(Error::NumericFault { name: format!("grad of {}", label(names, i)) });
            }
        }

        state.step += 1;
        let t = state.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - self.beta1), T::of(1.0 - self.beta2));
        let decay = T::of(1.0 - lr * weight_decay);
        let step_size = T::of(lr / bc1);
        let inv_sqrt_bc2 = T::of(1.0 / bc2.sqrt());
        let eps = T::of(self.eps);

        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = state.m[i].data_mut();
            let v = state.v[i].data_mut();
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = b1 * m[j] + one_b1 * gj;
                v[j] = b2 * v[j] + one_b2 * gj * gj;
                *w = *w * decay - step_size * m[j] / (v[j].sqrt() * inv_sqrt_bc2 + eps);
            }
        }
        Ok(())
    }
}

fn label(names: &[String], i: usize) -> String {
    names.get(i).cloned().unwrap_or_else(|| format!("#{i}"))
}
