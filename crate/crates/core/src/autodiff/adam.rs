//! Adam optimizer with bias correction.

use alloc::vec;
use alloc::vec::Vec;

use super::Tensor;
use crate::fmath;

/// First/second moment state for one parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamMoments {
    pub fn new(numel: usize) -> Self {
        Self {
            m: vec![0.0; numel],
            v: vec![0.0; numel],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update applied in place to `param` given `grad`.
pub fn adam_step(
    param: &mut [f64],
    grad: &[f64],
    state: &mut AdamMoments,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    debug_assert_eq!(param.len(), grad.len());
    state.t += 1;
    let bc1 = 1.0 - fmath::powi(beta1, state.t as i32);
    let bc2 = 1.0 - fmath::powi(beta2, state.t as i32);
    for i in 0..param.len() {
        let g = grad[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        param[i] -= lr * m_hat / (fmath::sqrt(v_hat) + eps);
    }
}

/// Optimizer bound to an ordered parameter list.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    states: Vec<AdamMoments>,
}

impl Adam {
    pub fn new(lr: f64, params: &[Tensor]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            states: params.iter().map(|p| AdamMoments::new(p.numel())).collect(),
        }
    }

    /// Apply one step using each parameter's accumulated gradient (missing
    /// gradients count as zero). Gradients are left untouched; callers clear
    /// them when starting the next accumulation.
    pub fn step(&mut self, params: &[Tensor]) {
        debug_assert_eq!(params.len(), self.states.len());
        for (param, state) in params.iter().zip(self.states.iter_mut()) {
            let grad = param.grad().unwrap_or_else(|| vec![0.0; param.numel()]);
            let (lr, b1, b2, eps) = (self.lr, self.beta1, self.beta2, self.eps);
            param.update_value(|value| {
                adam_step(value, &grad, state, lr, b1, b2, eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::backward;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = vec![1.0, -2.0, 3.0];
        let before = p.clone();
        let mut st = AdamMoments::new(3);
        adam_step(&mut p, &[0.0, 0.0, 0.0], &mut st, 0.1, 0.9, 0.999, 1e-8);
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_against_gradient_sign_by_lr() {
        let mut p = vec![0.0, 0.0];
        let mut st = AdamMoments::new(2);
        let lr = 0.05;
        adam_step(&mut p, &[3.0, -0.2], &mut st, lr, 0.9, 0.999, 1e-8);
        // Bias-corrected first step is about -lr * sign(g).
        assert!((p[0] + lr).abs() < 1e-6, "{p:?}");
        assert!((p[1] - lr).abs() < 1e-6, "{p:?}");
    }

    #[test]
    fn quadratic_bowl_converges() {
        let w = Tensor::leaf(&[4], vec![0.5, -0.5, 0.5, -0.5], true).unwrap();
        let mut opt = Adam::new(0.1, core::slice::from_ref(&w));
        for _ in 0..200 {
            w.zero_grad();
            let loss = w.square().sum_all();
            backward(&loss).unwrap();
            opt.step(core::slice::from_ref(&w));
        }
        let norm: f64 = w.data().iter().map(|v| v * v).sum::<f64>();
        assert!(crate::fmath::sqrt(norm) < 1e-2, "|w| = {}", norm);
    }
}
