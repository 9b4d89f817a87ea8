//! Spike-rate accounting, the quadratic budget penalty, and the clipped
//! proportional controller that sets its weight.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::encoding::SpikeTensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetConfig {
    pub r_target: f64,
    pub eta: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Number of recent batches averaged to drive the controller.
    pub window: usize,
}

impl BudgetConfig {
    /// Frame (Poisson-coded) data.
    pub const FRAME: BudgetConfig =
        BudgetConfig { r_target: 0.10, eta: 0.2, lambda_min: 0.0, lambda_max: 5.0, window: 5 };
    /// Event-camera data.
    pub const EVENT: BudgetConfig =
        BudgetConfig { r_target: 0.02, eta: 0.2, lambda_min: 0.0, lambda_max: 5.0, window: 5 };

    pub fn validate(&self) -> Result<()> {
        let ok = self.r_target > 0.0
            && self.r_target < 1.0
            && self.eta > 0.0
            && self.lambda_min >= 0.0
            && self.lambda_min < self.lambda_max
            && self.lambda_max.is_finite()
            && self.window >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid budget config {self:?}")))
        }
    }
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self::FRAME
    }
}

/// Fraction of `(timestep, sample, unit)` cells that fired.
pub fn spike_rate(spikes: &SpikeTensor) -> Result<f64> {
    if spikes.is_empty() {
        return Err(Error::EmptyTensor);
    }
    Ok(spikes.count() as f64 / spikes.as_slice().len() as f64)
}

/// `lambda * (r - target)^2` and its derivative with respect to `r`.
pub fn budget_penalty(r_spike: f64, r_target: f64, lambda_rate: f64) -> (f64, f64) {
    let gap = r_spike - r_target;
    (lambda_rate * gap * gap, 2.0 * lambda_rate * gap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetControllerState {
    pub lambda_rate: f64,
    pub rate_window: VecDeque<f64>,
}

impl BudgetControllerState {
    /// Starts at `lambda_min`, with no penalty until rates are observed.
    pub fn new(cfg: &BudgetConfig) -> Self {
        Self { lambda_rate: cfg.lambda_min, rate_window: VecDeque::with_capacity(cfg.window) }
    }

    /// Mean of the rates currently in the window.
    pub fn window_mean(&self) -> Option<f64> {
        // Shifted by the oldest entry so a constant window averages to that
        // constant exactly.
        let first = *self.rate_window.front()?;
        let shift = self.rate_window.iter().map(|r| r - first).sum::<f64>();
        Some(first + shift / self.rate_window.len() as f64)
    }

    /// Records a batch rate without touching lambda.
    pub fn observe(&mut self, cfg: &BudgetConfig, r_batch: f64) -> f64 {
        debug_assert!((0.0..=1.0).contains(&r_batch), "rate {r_batch}");
        if self.rate_window.len() == cfg.window {
            self.rate_window.pop_front();
        }
        self.rate_window.push_back(r_batch);
        self.window_mean().expect("window holds the new rate")
    }
}

/// Pushes `r_batch` into the window and moves lambda by
/// `eta * (mean - target)`, clipped to `[lambda_min, lambda_max]`.
pub fn controller_update(state: &mut BudgetControllerState, cfg: &BudgetConfig, r_batch: f64) -> f64 {
    let mean = state.observe(cfg, r_batch);
    state.lambda_rate = (state.lambda_rate + cfg.eta * (mean - cfg.r_target)).clamp(cfg.lambda_min, cfg.lambda_max);
    state.lambda_rate
}

/// One optimizer step's budget bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetLogEntry {
    pub step: u64,
    pub r_batch: f64,
    pub r_mean: f64,
    pub lambda_rate: f64,
    pub penalty: f64,
    pub loss: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(eta: f64, target: f64) -> BudgetConfig {
        BudgetConfig { r_target: target, eta, ..BudgetConfig::FRAME }
    }

    #[test]
    fn rate_counts() {
        let z = SpikeTensor::zeros(5, 1, 4);
        assert_eq!(spike_rate(&z).unwrap(), 0.0);
        let ones = SpikeTensor::from_vec(2, 3, 2, vec![1; 12]).unwrap();
        assert_eq!(spike_rate(&ones).unwrap(), 1.0);
        let mut six = SpikeTensor::zeros(5, 1, 4);
        for (t, n) in [(0, 0), (0, 3), (1, 1), (2, 2), (4, 0), (4, 1)] {
            six.set(t, 0, n, true);
        }
        assert!((spike_rate(&six).unwrap() - 0.30).abs() < 1e-15);
        assert!(matches!(spike_rate(&SpikeTensor::zeros(0, 1, 4)), Err(Error::EmptyTensor)));
    }

    #[test]
    fn penalty_closed_forms() {
        assert_eq!(budget_penalty(0.1, 0.1, 3.0), (0.0, 0.0));
        let (p, d) = budget_penalty(0.2, 0.1, 2.0);
        assert!((p - 0.02).abs() < 1e-15 && (d - 0.4).abs() < 1e-15);
        let (_, d) = budget_penalty(0.05, 0.1, 2.0);
        assert!((d + 0.2).abs() < 1e-15);
    }

    #[test]
    fn controller_closed_forms() {
        let c = cfg(0.2, 0.10);
        let mut st = BudgetControllerState { lambda_rate: 0.5, rate_window: VecDeque::new() };
        assert!((controller_update(&mut st, &c, 0.15) - 0.51).abs() < 1e-15);

        let mut st = BudgetControllerState::new(&c);
        assert_eq!(st.lambda_rate, 0.0);
        assert_eq!(controller_update(&mut st, &c, 0.02), 0.0);

        let mut st = BudgetControllerState { lambda_rate: 1.7, rate_window: VecDeque::new() };
        assert_eq!(controller_update(&mut st, &c, 0.10), 1.7);
    }

    #[test]
    fn controller_uses_window_mean() {
        let c = BudgetConfig { window: 2, ..cfg(1.0, 0.1) };
        let mut st = BudgetControllerState::new(&c);
        controller_update(&mut st, &c, 0.3); // mean 0.3 -> +0.2
        controller_update(&mut st, &c, 0.1); // mean 0.2 -> +0.1
        controller_update(&mut st, &c, 0.0); // window (0.1, 0.0), mean 0.05 -> -0.05
        assert!((st.lambda_rate - 0.25).abs() < 1e-12);
        assert_eq!(st.rate_window.len(), 2);
    }

    #[test]
    fn presets_validate() {
        BudgetConfig::FRAME.validate().unwrap();
        BudgetConfig::EVENT.validate().unwrap();
        assert!(BudgetConfig { r_target: 1.0, ..BudgetConfig::FRAME }.validate().is_err());
        assert!(BudgetConfig { lambda_min: 5.0, ..BudgetConfig::FRAME }.validate().is_err());
        assert!(BudgetConfig { window: 0, ..BudgetConfig::FRAME }.validate().is_err());
    }

    proptest! {
        #[test]
        fn lambda_stays_in_bounds(rates in prop::collection::vec(0.0f64..=1.0, 1..300),
                                  eta in 0.01f64..10.0, target in 0.01f64..0.99) {
            let c = cfg(eta, target);
            let mut st = BudgetControllerState::new(&c);
            for r in rates {
                let l = controller_update(&mut st, &c, r);
                prop_assert!((c.lambda_min..=c.lambda_max).contains(&l));
            }
        }

        #[test]
        fn fixed_point_at_target(lambda in 0.0f64..5.0, steps in 1usize..50, target in 0.01f64..0.99) {
            let c = cfg(0.2, target);
            let mut st = BudgetControllerState { lambda_rate: lambda, rate_window: VecDeque::new() };
            for _ in 0..steps {
                prop_assert_eq!(controller_update(&mut st, &c, target), lambda);
            }
        }

        #[test]
        fn response_is_monotone(hist in prop::collection::vec(0.0f64..=1.0, 0..8),
                                lambda in 0.0f64..5.0, a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let c = cfg(0.3, 0.1);
            let mut st = BudgetControllerState { lambda_rate: lambda, rate_window: VecDeque::new() };
            for r in hist { st.observe(&c, r); }
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let mut s1 = st.clone();
            let mut s2 = st;
            prop_assert!(controller_update(&mut s1, &c, lo) <= controller_update(&mut s2, &c, hi));
        }

        #[test]
        fn derivative_sign_follows_gap(r in 0.0f64..=1.0, t in 0.01f64..0.99, lambda in 1e-3f64..5.0) {
            let (_, d) = budget_penalty(r, t, lambda);
            prop_assert_eq!(d.partial_cmp(&0.0), (r - t).partial_cmp(&0.0));
        }
    }
}
