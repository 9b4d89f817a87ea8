use crate::scalar::Scalar;

/// Layer sizes of the `Linear -> LIF -> Linear` network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl Dims {
    pub const MNIST: Dims = Dims { input: 784, hidden: 128, output: 10 };
}

/// All trainable tensors in declaration order. Also used for gradients and
/// optimizer moments, which share the layout.
///
/// `w1` is `input x hidden` and `w2` is `hidden x output`, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensors<F> {
    pub w1: Vec<F>,
    pub b1: Vec<F>,
    pub w2: Vec<F>,
    pub b2: Vec<F>,
    pub beta_raw: F,
    pub vthr_raw: F,
}

pub const GROUP_NAMES: [&str; 6] = ["w1", "b1", "w2", "b2", "beta_raw", "vthr_raw"];

impl<F: Scalar> ParamTensors<F> {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            w1: vec![F::zero(); dims.input * dims.hidden],
            b1: vec![F::zero(); dims.hidden],
            w2: vec![F::zero(); dims.hidden * dims.output],
            b2: vec![F::zero(); dims.output],
            beta_raw: F::zero(),
            vthr_raw: F::zero(),
        }
    }

    pub fn groups(&self) -> [&[F]; 6] {
        [
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
            std::slice::from_ref(&self.beta_raw),
            std::slice::from_ref(&self.vthr_raw),
        ]
    }

    pub fn groups_mut(&mut self) -> [&mut [F]; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            std::slice::from_mut(&mut self.beta_raw),
            std::slice::from_mut(&mut self.vthr_raw),
        ]
    }

    pub fn len(&self) -> usize {
        self.groups().iter().map(|g| g.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Global L2 norm over every group.
    pub fn norm(&self) -> F {
        self.groups().iter().flat_map(|g| g.iter()).map(|&v| v * v).sum::<F>().sqrt()
    }

    pub fn scale(&mut self, factor: F) {
        for g in self.groups_mut() {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.groups().iter().all(|g| g.iter().all(|v| v.is_finite()))
    }

    /// Flat view across groups, in declaration order.
    pub fn get_flat(&self, mut index: usize) -> F {
        for g in self.groups() {
            if index < g.len() {
                return g[index];
            }
            index -= g.len();
        }
        panic!("flat parameter index out of range");
    }

    pub fn set_flat(&mut self, mut index: usize, value: F) {
        for g in self.groups_mut() {
            if index < g.len() {
                g[index] = value;
                return;
            }
            index -= g.len();
        }
        panic!("flat parameter index out of range");
    }
}
