//! Fully-connected spiking network: `Linear -> LIF -> Linear`, unrolled over
//! `T` timesteps, trained with backpropagation through time.
//!
//! The readout is the time-mean of the output layer's pre-activations. The
//! head is a single shared layer whose classes are enabled by a mask as tasks
//! arrive.

mod checkpoint;
pub mod gradcheck;
mod loss;
mod optim;
mod params;

pub use checkpoint::{read_checkpoint, write_checkpoint, ByteReader, Checkpoint, RngState};
pub use loss::{predict, task_loss};
pub use optim::{adam_step, clip_gradients, OptimizerState, DEFAULT_LR, DEFAULT_MAX_NORM};
pub use params::{Dims, ParamTensors, GROUP_NAMES};

use rand::Rng;

use crate::encoding::SpikeTensor;
use crate::error::{Error, Result};
use crate::neuron::{self, LifParams, SpikeFn};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct FcSnn<F> {
    dims: Dims,
    params: ParamTensors<F>,
    k: F,
    learnable: bool,
    active: Vec<bool>,
    version: u64,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardRecord<'a, F> {
    input: &'a SpikeTensor,
    mode: SpikeFn,
    version: u64,
    timesteps: usize,
    batch: usize,
    hidden: usize,
    /// `batch x output`.
    pub logits: Vec<F>,
    /// Membrane after integration, `(t, b, h)`.
    membrane: Vec<F>,
    /// Emitted spikes, `(t, b, h)`. Binary in Heaviside mode.
    spikes: Vec<F>,
}

impl<F: Scalar> ForwardRecord<'_, F> {
    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn mode(&self) -> SpikeFn {
        self.mode
    }

    /// Hidden-layer spikes as a binary tensor. Fails in relaxed mode.
    pub fn hidden_spikes(&self) -> Result<SpikeTensor> {
        let data = self
            .spikes
            .iter()
            .enumerate()
            .map(|(index, &s)| {
                if s == F::zero() {
                    Ok(0)
                } else if s == F::one() {
                    Ok(1)
                } else {
                    Err(Error::NonBinarySpike { index, value: u8::MAX })
                }
            })
            .collect::<Result<Vec<u8>>>()?;
        SpikeTensor::from_vec(self.timesteps, self.batch, self.hidden, data)
    }

    /// Mean spike value over `(t, b, h)`; equals the spike rate in Heaviside mode.
    pub fn mean_spike(&self) -> F {
        let n = F::from_usize(self.spikes.len()).expect("size fits");
        self.spikes.iter().copied().sum::<F>() / n
    }

    pub fn spike_count(&self) -> usize {
        self.spikes.iter().filter(|&&s| s != F::zero()).count()
    }
}

/// Result of a backward pass.
#[derive(Debug, Clone)]
pub struct Backward<F> {
    pub task_loss: F,
    pub grads: ParamTensors<F>,
}

impl<F: Scalar> FcSnn<F> {
    /// Uniform `+-1/sqrt(fan_in)` initialization for weights and biases.
    pub fn new<R: Rng + ?Sized>(dims: Dims, lif: LifParams<F>, rng: &mut R) -> Self {
        let mut params = ParamTensors::zeros(dims);
        let bound1 = 1.0 / (dims.input as f64).sqrt();
        let bound2 = 1.0 / (dims.hidden as f64).sqrt();
        let mut fill = |v: &mut [F], bound: f64| {
            for x in v {
                *x = F::lit(rng.random_range(-bound..bound));
            }
        };
        fill(&mut params.w1, bound1);
        fill(&mut params.b1, bound1);
        fill(&mut params.w2, bound2);
        fill(&mut params.b2, bound2);
        params.beta_raw = lif.beta_raw;
        params.vthr_raw = lif.vthr_raw;
        Self::from_params(dims, params, lif.k, lif.learnable).expect("shapes match dims")
    }

    pub fn from_params(dims: Dims, params: ParamTensors<F>, k: F, learnable: bool) -> Result<Self> {
        let expected = ParamTensors::<F>::zeros(dims);
        for ((name, got), want) in GROUP_NAMES.iter().zip(params.groups()).zip(expected.groups()) {
            if got.len() != want.len() {
                return Err(Error::Shape(format!("{name} has {} entries, expected {}", got.len(), want.len())));
            }
        }
        Ok(Self { dims, params, k, learnable, active: vec![true; dims.output], version: 0 })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn params(&self) -> &ParamTensors<F> {
        &self.params
    }

    /// Mutable parameter access. Invalidates outstanding forward records.
    pub fn params_mut(&mut self) -> &mut ParamTensors<F> {
        self.version += 1;
        &mut self.params
    }

    pub fn lif(&self) -> LifParams<F> {
        LifParams {
            beta_raw: self.params.beta_raw,
            vthr_raw: self.params.vthr_raw,
            k: self.k,
            learnable: self.learnable,
        }
    }

    pub fn learnable(&self) -> bool {
        self.learnable
    }

    pub fn set_learnable(&mut self, learnable: bool) {
        self.learnable = learnable;
    }

    pub fn active_classes(&self) -> &[bool] {
        &self.active
    }

    /// Replaces the active-class mask.
    pub fn set_active(&mut self, mask: Vec<bool>) -> Result<()> {
        if mask.len() != self.dims.output {
            return Err(Error::Shape(format!("mask of {} for {} classes", mask.len(), self.dims.output)));
        }
        self.active = mask;
        Ok(())
    }

    /// Enables `classes` in the head in addition to those already active.
    pub fn activate(&mut self, classes: &[usize]) -> Result<()> {
        for &c in classes {
            if c >= self.dims.output {
                return Err(Error::LabelOutOfRange { label: c, num_classes: self.dims.output });
            }
            self.active[c] = true;
        }
        Ok(())
    }

    pub fn apply_adam(&mut self, grads: &ParamTensors<F>, opt: &mut OptimizerState<F>) {
        adam_step(self.params_mut(), grads, opt);
    }

    pub fn forward<'a>(&self, input: &'a SpikeTensor) -> Result<ForwardRecord<'a, F>> {
        self.forward_with(input, SpikeFn::Heaviside)
    }

    /// Runs the network over all timesteps of `input` (shape `(T, B, input)`),
    /// starting every sample from a reset LIF state.
    pub fn forward_with<'a>(&self, input: &'a SpikeTensor, mode: SpikeFn) -> Result<ForwardRecord<'a, F>> {
        let Dims { input: n_in, hidden, output } = self.dims;
        if input.units() != n_in {
            return Err(Error::Shape(format!("input has {} units, network expects {n_in}", input.units())));
        }
        let (t_len, batch) = (input.timesteps(), input.batch());
        if t_len == 0 || batch == 0 {
            return Err(Error::EmptyTensor);
        }
        let lif = self.lif().constrain();
        let inv_t = F::one() / F::from_usize(t_len).expect("T fits");
        let p = &self.params;

        let mut membrane = vec![F::zero(); t_len * batch * hidden];
        let mut spikes = vec![F::zero(); t_len * batch * hidden];
        let mut logits = vec![F::zero(); batch * output];
        let mut u = vec![F::zero(); hidden];
        let mut s = vec![F::zero(); hidden];
        let mut current = vec![F::zero(); hidden];
        let mut spike_sum = vec![F::zero(); hidden];

        for b in 0..batch {
            u.iter_mut().for_each(|v| *v = F::zero());
            s.iter_mut().for_each(|v| *v = F::zero());
            spike_sum.iter_mut().for_each(|v| *v = F::zero());
            for t in 0..t_len {
                current.copy_from_slice(&p.b1);
                for i in input.active(t, b) {
                    let row = &p.w1[i * hidden..(i + 1) * hidden];
                    current.iter_mut().zip(row).for_each(|(c, &w)| *c += w);
                }
                neuron::advance(&mut u, &mut s, &current, lif.beta, lif.vthr, self.k, mode);
                let at = (t * batch + b) * hidden;
                membrane[at..at + hidden].copy_from_slice(&u);
                spikes[at..at + hidden].copy_from_slice(&s);
                spike_sum.iter_mut().zip(&s).for_each(|(a, &v)| *a += v);
            }
            // mean_t (W2^T s_t + b2) = W2^T mean_t(s_t) + b2
            let out = &mut logits[b * output..(b + 1) * output];
            out.copy_from_slice(&p.b2);
            for (h, &count) in spike_sum.iter().enumerate() {
                if count != F::zero() {
                    let rate = count * inv_t;
                    let row = &p.w2[h * output..(h + 1) * output];
                    out.iter_mut().zip(row).for_each(|(o, &w)| *o += rate * w);
                }
            }
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("logits"));
        }
        Ok(ForwardRecord {
            input,
            mode,
            version: self.version,
            timesteps: t_len,
            batch,
            hidden,
            logits,
            membrane,
            spikes,
        })
    }

    /// Reverse-time gradient of `task_loss + penalty(r)` where `budget_coeff`
    /// is `d penalty / d r` and `r` is the hidden spike rate of the batch.
    ///
    /// The spike derivative is the fast-sigmoid surrogate. Gradients flow
    /// through the leak, through the reset subtraction, and into the raw LIF
    /// carriers (zeroed when the LIF parameters are frozen).
    pub fn backward(&self, record: &ForwardRecord<'_, F>, labels: &[usize], budget_coeff: F) -> Result<Backward<F>> {
        if record.version != self.version {
            return Err(Error::StaleRecord);
        }
        let Dims { hidden, output, .. } = self.dims;
        let (t_len, batch) = (record.timesteps, record.batch);
        if labels.len() != batch {
            return Err(Error::Shape(format!("{} labels for a batch of {batch}", labels.len())));
        }
        let (loss, dlogits) = task_loss(&record.logits, labels, &self.active)?;

        let lif = self.lif().constrain();
        let (beta, vthr, k) = (lif.beta, lif.vthr, self.k);
        let inv_t = F::one() / F::from_usize(t_len).expect("T fits");
        let population = F::from_usize(hidden * t_len * batch).expect("size fits");
        let rate_grad = budget_coeff / population;
        let p = &self.params;

        let mut g = ParamTensors::zeros(self.dims);
        let mut dbeta = F::zero();
        let mut dvthr = F::zero();
        let mut from_out = vec![F::zero(); hidden];
        let mut spike_sum = vec![F::zero(); hidden];
        let mut du_next = vec![F::zero(); hidden];
        let mut du = vec![F::zero(); hidden];

        for b in 0..batch {
            let dl = &dlogits[b * output..(b + 1) * output];
            g.b2.iter_mut().zip(dl).for_each(|(a, &d)| *a += d);
            // Every timestep sees the same d logits / d o_t = dl / T.
            for (h, f) in from_out.iter_mut().enumerate() {
                let row = &p.w2[h * output..(h + 1) * output];
                *f = row.iter().zip(dl).map(|(&w, &d)| w * d).sum::<F>() * inv_t + rate_grad;
            }
            spike_sum.iter_mut().for_each(|v| *v = F::zero());
            du_next.iter_mut().for_each(|v| *v = F::zero());

            for t in (0..t_len).rev() {
                let at = (t * batch + b) * hidden;
                let u_t = &record.membrane[at..at + hidden];
                let s_t = &record.spikes[at..at + hidden];
                let prev = (t > 0).then(|| {
                    let pat = ((t - 1) * batch + b) * hidden;
                    (&record.membrane[pat..pat + hidden], &record.spikes[pat..pat + hidden])
                });
                for h in 0..hidden {
                    spike_sum[h] += s_t[h];
                    let ds = from_out[h] - vthr * du_next[h];
                    let ds_du = ds * neuron::surrogate_grad(u_t[h], vthr, k);
                    let d = ds_du + beta * du_next[h];
                    dvthr -= ds_du;
                    if let Some((u_prev, s_prev)) = prev {
                        dvthr -= s_prev[h] * d;
                        dbeta += u_prev[h] * d;
                    }
                    du[h] = d;
                }
                g.b1.iter_mut().zip(&du).for_each(|(a, &d)| *a += d);
                for i in record.input.active(t, b) {
                    let row = &mut g.w1[i * hidden..(i + 1) * hidden];
                    row.iter_mut().zip(&du).for_each(|(a, &d)| *a += d);
                }
                std::mem::swap(&mut du, &mut du_next);
            }
            for (h, &count) in spike_sum.iter().enumerate() {
                if count != F::zero() {
                    let rate = count * inv_t;
                    let row = &mut g.w2[h * output..(h + 1) * output];
                    row.iter_mut().zip(dl).for_each(|(a, &d)| *a += rate * d);
                }
            }
        }
        if self.learnable {
            g.beta_raw = dbeta * lif.dbeta_draw;
            g.vthr_raw = dvthr * lif.dvthr_draw;
        }
        Ok(Backward { task_loss: loss, grads: g })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> FcSnn<f64> {
        let dims = Dims { input: 3, hidden: 2, output: 2 };
        let params = ParamTensors {
            w1: vec![0.6, -0.2, 0.5, 0.9, -0.4, 0.3],
            b1: vec![0.1, 0.05],
            w2: vec![1.0, -1.0, 0.5, 2.0],
            b2: vec![0.2, -0.1],
            beta_raw: LifParams::new(0.8, 1.0, false).unwrap().beta_raw,
            vthr_raw: LifParams::new(0.8, 1.0, false).unwrap().vthr_raw,
        };
        FcSnn::from_params(dims, params, 25.0, false).unwrap()
    }

    fn tensor(t: usize, b: usize, n: usize, bits: &[u8]) -> SpikeTensor {
        SpikeTensor::from_vec(t, b, n, bits.to_vec()).unwrap()
    }

    #[test]
    fn zero_input_gives_bias_logits() {
        let mut net = tiny();
        net.params_mut().b1 = vec![0.0, 0.0];
        let x = SpikeTensor::zeros(4, 2, 3);
        let rec = net.forward(&x).unwrap();
        assert_eq!(rec.spike_count(), 0);
        assert_eq!(rec.logits, vec![0.2, -0.1, 0.2, -0.1]);
    }

    #[test]
    fn hand_traced_three_steps() {
        let net = tiny();
        // x_0 = (1,0,1), x_1 = (0,1,0), x_2 = (1,1,1)
        let x = tensor(3, 1, 3, &[1, 0, 1, 0, 1, 0, 1, 1, 1]);
        let rec = net.forward(&x).unwrap();
        // Unit 0: I = (0.6+(-0.4)+0.1, 0.5+0.1, 0.6+0.5-0.4+0.1) = (0.3, 0.6, 0.8)
        //   u = 0.3 -> 0.84 -> 1.472 (spike at t=2)
        // Unit 1: I = (-0.2+0.3+0.05, 0.9+0.05, -0.2+0.9+0.3+0.05) = (0.15, 0.95, 1.05)
        //   u = 0.15 -> 1.07 (spike) -> 0.856 + 1.05 - 1.0 = 0.906
        let expect_u = [[0.3, 0.15], [0.84, 1.07], [1.472, 0.906]];
        let expect_s = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        for t in 0..3 {
            for h in 0..2 {
                assert!((rec.membrane[t * 2 + h] - expect_u[t][h]).abs() < 1e-12, "u[{t}][{h}]");
                assert_eq!(rec.spikes[t * 2 + h], expect_s[t][h]);
            }
        }
        // Each unit fired once: mean rate 1/3 each.
        let l0 = 0.2 + (1.0 + 0.5) / 3.0;
        let l1 = -0.1 + (-1.0 + 2.0) / 3.0;
        assert!((rec.logits[0] - l0).abs() < 1e-12 && (rec.logits[1] - l1).abs() < 1e-12);
    }

    #[test]
    fn batch_elements_are_independent() {
        let net = tiny();
        let one = tensor(3, 1, 3, &[1, 0, 1, 0, 1, 0, 1, 1, 1]);
        let rep = SpikeTensor::stack(&[&one, &one, &one]).unwrap();
        let single = net.forward(&one).unwrap();
        let rec = net.forward(&rep).unwrap();
        for b in 0..3 {
            assert_eq!(&rec.logits[2 * b..2 * b + 2], single.logits.as_slice());
        }
    }

    #[test]
    fn frozen_lif_has_zero_lif_gradients() {
        let net = tiny();
        let x = tensor(3, 1, 3, &[1, 0, 1, 0, 1, 0, 1, 1, 1]);
        let rec = net.forward(&x).unwrap();
        let bw = net.backward(&rec, &[0], 0.3).unwrap();
        assert_eq!(bw.grads.beta_raw, 0.0);
        assert_eq!(bw.grads.vthr_raw, 0.0);
        assert!(bw.grads.w1.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn silent_input_gives_zero_w1_gradient() {
        let mut net = tiny();
        net.set_learnable(true);
        let x = SpikeTensor::zeros(3, 2, 3);
        let rec = net.forward(&x).unwrap();
        let bw = net.backward(&rec, &[0, 1], 0.0).unwrap();
        assert!(bw.grads.w1.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_record_is_rejected() {
        let mut net = tiny();
        let x = tensor(3, 1, 3, &[1, 0, 1, 0, 1, 0, 1, 1, 1]);
        let copy = x.clone();
        let rec = net.clone().forward(&copy).unwrap();
        net.params_mut().b2[0] = 0.0;
        assert!(matches!(net.backward(&rec, &[0], 0.0), Err(Error::StaleRecord)));
        let mut opt = OptimizerState::new(net.dims(), 1e-3);
        let rec = net.forward(&x).unwrap();
        let bw = net.backward(&rec, &[0], 0.0).unwrap();
        let mut net2 = net.clone();
        net2.apply_adam(&bw.grads, &mut opt);
        assert!(matches!(net2.backward(&rec, &[0], 0.0), Err(Error::StaleRecord)));
    }

    #[test]
    fn shape_errors() {
        let net = tiny();
        assert!(net.forward(&SpikeTensor::zeros(2, 1, 4)).is_err());
        let x = SpikeTensor::zeros(2, 2, 3);
        let rec = net.forward(&x).unwrap();
        assert!(net.backward(&rec, &[0], 0.0).is_err());
    }

    #[test]
    fn masked_head_never_predicts_unseen_class() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = FcSnn::<f32>::new(Dims { input: 20, hidden: 16, output: 6 }, LifParams::default(), &mut rng);
        net.params_mut().b2 = vec![-5.0, -5.0, 10.0, 10.0, 10.0, 10.0];
        net.set_active(vec![true, true, false, false, false, false]).unwrap();
        let bits: Vec<u8> = (0..5 * 8 * 20).map(|_| rng.random_range(0..=1)).collect();
        let x = SpikeTensor::from_vec(5, 8, 20, bits).unwrap();
        let rec = net.forward(&x).unwrap();
        for row in rec.logits.chunks(6) {
            assert!(predict(row, net.active_classes()).unwrap() < 2);
        }
    }

    #[test]
    fn forward_and_backward_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut net = FcSnn::<f32>::new(Dims { input: 30, hidden: 12, output: 4 }, LifParams::default(), &mut rng);
        net.set_learnable(true);
        let bits: Vec<u8> = (0..6 * 4 * 30).map(|_| rng.random_range(0..=1)).collect();
        let x = SpikeTensor::from_vec(6, 4, 30, bits).unwrap();
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(a.logits, b.logits);
        assert_eq!(a.spikes, b.spikes);
        let ga = net.backward(&a, &[0, 1, 2, 3], 0.2).unwrap();
        let gb = net.backward(&b, &[0, 1, 2, 3], 0.2).unwrap();
        assert_eq!(ga.grads, gb.grads);
    }
}
