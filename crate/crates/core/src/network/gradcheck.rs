//! Finite-difference check of the BPTT gradients.
//!
//! Runs the network in relaxed mode at 64-bit precision, where the forward
//! pass is differentiable and its exact derivative coincides with the
//! surrogate used by [`FcSnn::backward`]. The reference gradient is a central
//! difference of the total loss computed from forward passes alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{task_loss, Dims, FcSnn, ParamTensors, GROUP_NAMES};
use crate::budget::budget_penalty;
use crate::encoding::SpikeTensor;
use crate::error::Result;
use crate::neuron::{LifParams, SpikeFn};

/// Upper bounds for the random problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradcheckSize {
    pub max_input: usize,
    pub max_hidden: usize,
    pub max_output: usize,
    pub max_timesteps: usize,
    pub max_batch: usize,
}

impl Default for GradcheckSize {
    fn default() -> Self {
        Self { max_input: 8, max_hidden: 12, max_output: 4, max_timesteps: 5, max_batch: 3 }
    }
}

/// One randomly drawn verification problem.
#[derive(Debug, Clone)]
pub struct Problem {
    pub net: FcSnn<f64>,
    pub input: SpikeTensor,
    pub labels: Vec<usize>,
    pub lambda: f64,
    pub target: f64,
}

impl Problem {
    pub fn random<R: Rng + ?Sized>(size: GradcheckSize, rng: &mut R) -> Self {
        let dims = Dims {
            input: rng.random_range(2..=size.max_input.max(2)),
            hidden: rng.random_range(2..=size.max_hidden.max(2)),
            output: rng.random_range(2..=size.max_output.max(2)),
        };
        let t_len = rng.random_range(1..=size.max_timesteps.max(1));
        let batch = rng.random_range(1..=size.max_batch.max(1));
        let lif = LifParams::new(rng.random_range(0.5..0.95), rng.random_range(0.5..1.5), true).expect("valid ranges");
        let mut net = FcSnn::new(dims, lif, rng);
        // Larger weights keep membranes crossing the threshold region.
        let p = net.params_mut();
        for g in [&mut p.w1, &mut p.b1, &mut p.w2, &mut p.b2] {
            g.iter_mut().for_each(|v| *v = rng.random_range(-1.5..1.5));
        }
        let bits = (0..t_len * batch * dims.input).map(|_| u8::from(rng.random_bool(0.5))).collect();
        let input = SpikeTensor::from_vec(t_len, batch, dims.input, bits).expect("binary");
        let labels = (0..batch).map(|_| rng.random_range(0..dims.output)).collect();
        Self { net, input, labels, lambda: rng.random_range(0.0..5.0), target: rng.random_range(0.05..0.6) }
    }

    /// Total loss of the relaxed forward pass.
    pub fn loss(&self, net: &FcSnn<f64>) -> Result<f64> {
        let rec = net.forward_with(&self.input, SpikeFn::Relaxed)?;
        let (task, _) = task_loss(&rec.logits, &self.labels, net.active_classes())?;
        let (penalty, _) = budget_penalty(rec.mean_spike(), self.target, self.lambda);
        Ok(task + penalty)
    }

    /// Analytic gradient from BPTT.
    pub fn analytic(&self) -> Result<ParamTensors<f64>> {
        let rec = self.net.forward_with(&self.input, SpikeFn::Relaxed)?;
        let (_, coeff) = budget_penalty(rec.mean_spike(), self.target, self.lambda);
        Ok(self.net.backward(&rec, &self.labels, coeff)?.grads)
    }

    /// Central-difference gradient with step `h`.
    pub fn numeric(&self, h: f64) -> Result<ParamTensors<f64>> {
        let mut out = ParamTensors::zeros(self.net.dims());
        let mut probe = self.net.clone();
        for i in 0..out.len() {
            let x = self.net.params().get_flat(i);
            probe.params_mut().set_flat(i, x + h);
            let up = self.loss(&probe)?;
            probe.params_mut().set_flat(i, x - h);
            let down = self.loss(&probe)?;
            probe.params_mut().set_flat(i, x);
            out.set_flat(i, (up - down) / (2.0 * h));
        }
        Ok(out)
    }
}

/// Relative error with an absolute floor so exact zeros compare cleanly.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub problems: usize,
    /// Worst relative error per parameter group, in declaration order.
    pub per_group: [f64; 6],
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }

    pub fn groups(&self) -> impl Iterator<Item = (&'static str, f64)> + '_ {
        GROUP_NAMES.iter().copied().zip(self.per_group.iter().copied())
    }
}

pub const FD_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// Checks `problems` random networks drawn from `seed`.
pub fn run_gradcheck(size: GradcheckSize, problems: usize, seed: u64) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_group = [0.0f64; 6];
    for _ in 0..problems {
        let problem = Problem::random(size, &mut rng);
        let analytic = problem.analytic()?;
        let numeric = problem.numeric(FD_STEP)?;
        for (g, (a, n)) in analytic.groups().iter().zip(numeric.groups()).enumerate() {
            for (&x, &y) in a.iter().zip(n) {
                per_group[g] = per_group[g].max(relative_error(x, y));
            }
        }
    }
    let max_rel_err = per_group.iter().copied().fold(0.0, f64::max);
    Ok(GradcheckReport { problems, per_group, max_rel_err, tolerance: TOLERANCE })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_gradcheck_passes() {
        let report = run_gradcheck(GradcheckSize::default(), 5, 1).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn perturbing_the_analytic_gradient_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let problem = Problem::random(GradcheckSize::default(), &mut rng);
        let mut a = problem.analytic().unwrap();
        let n = problem.numeric(FD_STEP).unwrap();
        a.vthr_raw *= 1.01;
        assert!(relative_error(a.vthr_raw, n.vthr_raw) > TOLERANCE);
    }
}
