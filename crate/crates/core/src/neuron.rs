//! Discrete-time leaky integrate-and-fire layer with soft reset.
//!
//! One step computes `u' = beta * u + I - s_prev * v_thr`, then emits
//! `s = [u' >= v_thr]`. The subtraction uses the previous step's spikes, so a
//! spike at step `t` lowers the membrane at `t + 1`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default fast-sigmoid slope.
pub const DEFAULT_SLOPE: f64 = 25.0;
/// Lower bound on the constrained threshold.
pub const VTHR_FLOOR: f64 = 0.01;
/// Soft-spike value at threshold in relaxed mode.
pub const RELAXED_OFFSET: f64 = 0.5;

fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

fn softplus<F: Scalar>(x: F) -> F {
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}

/// Layer-wise LIF parameters, stored as unconstrained carriers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifParams<F> {
    pub beta_raw: F,
    pub vthr_raw: F,
    /// Surrogate slope. Never trained.
    pub k: F,
    pub learnable: bool,
}

/// Constrained parameter values with their derivatives w.r.t. the raw carriers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constrained<F> {
    pub beta: F,
    pub vthr: F,
    pub dbeta_draw: F,
    pub dvthr_draw: F,
}

impl<F: Scalar> LifParams<F> {
    /// Builds parameters whose constrained values are `beta` and `vthr`.
    pub fn new(beta: F, vthr: F, learnable: bool) -> Result<Self> {
        if !(beta > F::zero() && beta < F::one()) {
            return Err(Error::InvalidArgument(format!("beta {beta} must lie in (0, 1)")));
        }
        let excess = vthr - F::lit(VTHR_FLOOR);
        if !(excess > F::zero()) || !vthr.is_finite() {
            return Err(Error::InvalidArgument(format!("threshold {vthr} must exceed {VTHR_FLOOR}")));
        }
        // Inverse softplus: x + ln(1 - e^-x).
        let vthr_raw = excess + (-(-excess).exp_m1()).ln();
        Ok(Self { beta_raw: (beta / (F::one() - beta)).ln(), vthr_raw, k: F::lit(DEFAULT_SLOPE), learnable })
    }

    pub fn with_slope(mut self, k: F) -> Self {
        self.k = k;
        self
    }

    /// Logistic squash for beta, `floor + softplus` for the threshold.
    pub fn constrain(&self) -> Constrained<F> {
        let beta = sigmoid(self.beta_raw);
        Constrained {
            beta,
            vthr: F::lit(VTHR_FLOOR) + softplus(self.vthr_raw),
            dbeta_draw: beta * (F::one() - beta),
            dvthr_draw: sigmoid(self.vthr_raw),
        }
    }
}

impl Default for LifParams<f32> {
    fn default() -> Self {
        Self::new(0.9, 1.0, false).expect("valid defaults")
    }
}

/// Membrane potentials and previous-step spikes of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LifLayerState<F> {
    pub u: Vec<F>,
    pub s_prev: Vec<F>,
}

impl<F: Scalar> LifLayerState<F> {
    pub fn new(width: usize) -> Self {
        Self { u: vec![F::zero(); width], s_prev: vec![F::zero(); width] }
    }

    pub fn reset(&mut self) {
        self.u.iter_mut().for_each(|u| *u = F::zero());
        self.s_prev.iter_mut().for_each(|s| *s = F::zero());
    }

    pub fn width(&self) -> usize {
        self.u.len()
    }
}

/// Spike nonlinearity applied to the distance above threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpikeFn {
    /// Exact Heaviside with `H(0) = 1`. Used for all training and inference.
    Heaviside,
    /// `x / (1 + k|x|) + 0.5`, whose derivative is the fast-sigmoid surrogate.
    /// Verification only.
    Relaxed,
}

impl SpikeFn {
    #[inline]
    pub fn emit<F: Scalar>(self, x: F, k: F) -> F {
        match self {
            SpikeFn::Heaviside => {
                if x >= F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            SpikeFn::Relaxed => relaxed_spike(x, k),
        }
    }
}

/// `g(x) = x / (1 + k|x|) + c`; `g'(x)` equals [`surrogate_grad`] at distance `x`.
#[inline]
pub fn relaxed_spike<F: Scalar>(x: F, k: F) -> F {
    x / (F::one() + k * x.abs()) + F::lit(RELAXED_OFFSET)
}

/// Fast-sigmoid surrogate `1 / (1 + k|u - v_thr|)^2`.
#[inline]
pub fn surrogate_grad<F: Scalar>(u: F, v_thr: F, k: F) -> F {
    let d = F::one() + k * (u - v_thr).abs();
    F::one() / (d * d)
}

/// Advances one step in place, writing spikes to `out`. No validation.
#[inline]
pub(crate) fn advance<F: Scalar>(u: &mut [F], s_prev: &mut [F], input: &[F], beta: F, vthr: F, k: F, spike: SpikeFn) {
    for ((u, s), &i) in u.iter_mut().zip(s_prev.iter_mut()).zip(input) {
        *u = beta * *u + i - *s * vthr;
        *s = spike.emit(*u - vthr, k);
    }
}

fn check_input<F: Scalar>(state: &LifLayerState<F>, input: &[F]) -> Result<()> {
    if input.len() != state.width() {
        return Err(Error::Shape(format!("input width {} for a layer of {}", input.len(), state.width())));
    }
    if input.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("input current"));
    }
    Ok(())
}

/// One binary LIF step. Returns the emitted spikes.
pub fn lif_step<F: Scalar>(state: &mut LifLayerState<F>, input: &[F], params: &LifParams<F>) -> Result<Vec<u8>> {
    check_input(state, input)?;
    let c = params.constrain();
    advance(&mut state.u, &mut state.s_prev, input, c.beta, c.vthr, params.k, SpikeFn::Heaviside);
    Ok(state.s_prev.iter().map(|&s| u8::from(s > F::zero())).collect())
}

/// One relaxed LIF step for gradient verification. Returns soft spikes.
pub fn lif_step_relaxed<F: Scalar>(state: &mut LifLayerState<F>, input: &[F], params: &LifParams<F>) -> Result<Vec<F>> {
    check_input(state, input)?;
    let c = params.constrain();
    advance(&mut state.u, &mut state.s_prev, input, c.beta, c.vthr, params.k, SpikeFn::Relaxed);
    Ok(state.s_prev.clone())
}
