//! Plain SGD and Adam parameter updates.

use std::collections::HashMap;

use crate::{Result, Scalar, Tensor, TensorError};

/// One SGD step: `param -= lr * grad`.
pub fn sgd_step<F: Scalar>(name: &str, param: &mut Tensor<F>, grad: &Tensor<F>, lr: F) -> Result<()> {
    check_update(name, param, grad)?;
    for (p, g) in param.data_mut().iter_mut().zip(grad.data()) {
        *p = *p - lr * *g;
    }
    Ok(())
}

/// Adam with bias correction; state is keyed by parameter name.
pub struct Adam<F: Scalar> {
    lr: F,
    beta1: F,
    beta2: F,
    eps: F,
    step: u64,
    first: HashMap<String, Tensor<F>>,
    second: HashMap<String, Tensor<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(lr: F) -> Self {
        Adam {
            lr,
            beta1: F::from_f64(0.9),
            beta2: F::from_f64(0.999),
            eps: F::from_f64(1e-8),
            step: 0,
            first: HashMap::new(),
            second: HashMap::new(),
        }
    }

    /// Advance the shared step counter; call once per optimizer step, before
    /// updating that step's parameters.
    pub fn next_step(&mut self) {
        self.step += 1;
    }

    pub fn update(&mut self, name: &str, param: &mut Tensor<F>, grad: &Tensor<F>) -> Result<()> {
        check_update(name, param, grad)?;
        debug_assert!(self.step > 0, "call next_step before update");
        let m = self
            .first
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(param.shape()));
        let v = self
            .second
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(param.shape()));

        let one = F::ONE;
        let bias1 = one - pow(self.beta1, self.step);
        let bias2 = one - pow(self.beta2, self.step);
        for i in 0..param.numel() {
            let g = grad.data()[i];
            let mi = self.beta1 * m.data()[i] + (one - self.beta1) * g;
            let vi = self.beta2 * v.data()[i] + (one - self.beta2) * g * g;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi / bias1;
            let v_hat = vi / bias2;
            param.data_mut()[i] = param.data()[i] - self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

fn pow<F: Scalar>(base: F, exp: u64) -> F {
    let mut acc = F::ONE;
    for _ in 0..exp {
        acc = acc * base;
    }
    acc
}

fn check_update<F: Scalar>(name: &str, param: &Tensor<F>, grad: &Tensor<F>) -> Result<()> {
    if param.shape() != grad.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "optimizer_step",
            lhs: param.shape().to_vec(),
            rhs: grad.shape().to_vec(),
        });
    }
    if !grad.is_all_finite() {
        return Err(TensorError::NonFiniteGradient {
            name: name.to_string(),
        });
    }
    Ok(())
}
