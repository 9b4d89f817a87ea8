//! Adam with bias correction, and global-norm gradient clipping.

use super::params::{Dims, ParamTensors};
use crate::scalar::Scalar;

pub const DEFAULT_LR: f64 = 1e-3;
pub const DEFAULT_MAX_NORM: f64 = 1.0;

/// Rescales `grads` so their global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_gradients<F: Scalar>(grads: &mut ParamTensors<F>, max_norm: F) -> F {
    let norm = grads.norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<F> {
    pub m: ParamTensors<F>,
    pub v: ParamTensors<F>,
    pub step: u64,
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
}

impl<F: Scalar> OptimizerState<F> {
    pub fn new(dims: Dims, lr: F) -> Self {
        Self {
            m: ParamTensors::zeros(dims),
            v: ParamTensors::zeros(dims),
            step: 0,
            lr,
            beta1: F::lit(0.9),
            beta2: F::lit(0.999),
            eps: F::lit(1e-8),
        }
    }
}

pub fn adam_step<F: Scalar>(params: &mut ParamTensors<F>, grads: &ParamTensors<F>, opt: &mut OptimizerState<F>) {
    opt.step += 1;
    let t = i32::try_from(opt.step).unwrap_or(i32::MAX);
    let bc1 = F::one() - opt.beta1.powi(t);
    let bc2 = F::one() - opt.beta2.powi(t);
    let (b1, b2, lr, eps) = (opt.beta1, opt.beta2, opt.lr, opt.eps);
    let groups = params.groups_mut().into_iter().zip(grads.groups()).zip(opt.m.groups_mut()).zip(opt.v.groups_mut());
    for (((p, g), m), v) in groups {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (F::one() - b1) * g[i];
            v[i] = b2 * v[i] + (F::one() - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TINY: Dims = Dims { input: 2, hidden: 2, output: 1 };

    fn filled(v: f64) -> ParamTensors<f64> {
        let mut p = ParamTensors::zeros(TINY);
        for g in p.groups_mut() {
            g.iter_mut().for_each(|x| *x = v);
        }
        p
    }

    #[test]
    fn clip_leaves_small_gradients() {
        let mut g = ParamTensors::<f64>::zeros(TINY);
        g.w1[0] = 0.3;
        g.b2[0] = 0.4;
        let before = g.clone();
        assert!((clip_gradients(&mut g, 1.0) - 0.5).abs() < 1e-15);
        assert_eq!(g, before);
    }

    #[test]
    fn clip_rescales_large_gradients() {
        let mut g = ParamTensors::<f64>::zeros(TINY);
        g.w1[1] = 1.2;
        g.vthr_raw = 1.6;
        clip_gradients(&mut g, 1.0);
        assert!((g.norm() - 1.0).abs() < 1e-15);
        assert!((g.w1[1] - 0.6).abs() < 1e-15 && (g.vthr_raw - 0.8).abs() < 1e-15);
    }

    #[test]
    fn clip_zero_gradients_unchanged() {
        let mut g = ParamTensors::<f64>::zeros(TINY);
        assert_eq!(clip_gradients(&mut g, 1.0), 0.0);
        assert_eq!(g, ParamTensors::zeros(TINY));
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = filled(0.7);
        let mut opt = OptimizerState::new(TINY, 1e-3);
        adam_step(&mut p, &ParamTensors::zeros(TINY), &mut opt);
        assert_eq!(p, filled(0.7));
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = filled(0.0);
        let mut g = filled(0.25);
        g.b1[0] = -3.0;
        let mut opt = OptimizerState::new(TINY, 1e-3);
        adam_step(&mut p, &g, &mut opt);
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        assert!((p.w1[0] + 1e-3 * 0.25 / (0.25 + 1e-8)).abs() < 1e-18);
        assert!((p.b1[0] - 1e-3 * 3.0 / (3.0 + 1e-8)).abs() < 1e-18);
    }

    #[test]
    fn parameters_update_independently() {
        let mut g = ParamTensors::<f64>::zeros(TINY);
        g.w2[0] = 0.5;
        let mut both = filled(1.0);
        let mut opt = OptimizerState::new(TINY, 1e-2);
        adam_step(&mut both, &g, &mut opt);
        assert!(both.w2[0] < 1.0);
        assert_eq!(both.w2[1], 1.0);
        assert_eq!(both.w1, vec![1.0; 4]);
    }

    proptest! {
        #[test]
        fn clipping_is_idempotent(vals in prop::collection::vec(-5.0f64..5.0, 11), max in 0.1f64..3.0) {
            let mut g = ParamTensors::<f64>::zeros(TINY);
            for (i, v) in vals.iter().enumerate() { g.set_flat(i, *v); }
            clip_gradients(&mut g, max);
            let once = g.clone();
            clip_gradients(&mut g, max);
            for i in 0..g.len() {
                prop_assert!((g.get_flat(i) - once.get_flat(i)).abs() <= 1e-12 * once.get_flat(i).abs().max(1.0));
            }
            prop_assert!(g.norm() <= max * (1.0 + 1e-12));
        }
    }
}
