use crate::error::{Error, Result};
use crate::numerics::rng::SeededRng;
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    /// Whether weight decay applies (matrices yes, biases and norms no).
    pub decay: bool,
}

/// Named trainable tensors owned by one model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

/// Tape handles for every parameter of a store, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Binding(Vec<Var>);

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }
    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor, decay: bool) -> ParamId {
        self.params.push(Param { name: name.into(), tensor, decay });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: usize) -> &Tensor {
        &self.params[id].tensor
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Records every parameter as a leaf. With `trainable = false` the
    /// leaves are constants and no gradient bookkeeping happens.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Binding {
        Binding(
            self.params
                .iter()
                .map(|p| {
                    let mut t = p.tensor.clone();
                    t.requires_grad = trainable;
                    tape.leaf(t)
                })
                .collect(),
        )
    }

    /// Gradients after `tape.backward`, zero where none flowed.
    pub fn grads(&self, tape: &Tape, binding: &Binding) -> Vec<Tensor> {
        self.params.iter().zip(binding.vars()).map(|(p, &v)| tape.grad(v).unwrap_or_else(|| Tensor::zeros(p.tensor.shape()))).collect()
    }

    /// All parameters concatenated into one vector.
    pub fn flatten(&self) -> Tensor {
        let data: Vec<f64> = self.params.iter().flat_map(|p| p.tensor.data().iter().copied()).collect();
        Tensor::vector(&data)
    }

    pub fn flatten_grads(grads: &[Tensor]) -> Tensor {
        let data: Vec<f64> = grads.iter().flat_map(|g| g.data().iter().copied()).collect();
        Tensor::vector(&data)
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn assign_flat(&mut self, flat: &Tensor) -> Result<()> {
        if flat.numel() != self.numel() {
            return Err(Error::shape("assign_flat", format!("{} values for {} params", flat.numel(), self.numel())));
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.tensor.numel();
            p.tensor.data_mut().copy_from_slice(&flat.data()[off..off + n]);
            off += n;
        }
        Ok(())
    }
}

/// Truncated normal at two standard deviations.
pub fn trunc_normal(shape: &[usize], std: f64, rng: &mut SeededRng) -> Tensor {
    let n = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    while data.len() < n {
        let z = rng.normal();
        if z.abs() <= 2.0 {
            data.push(z * std);
        }
    }
    Tensor::new(shape, data).expect("shape matches")
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut SeededRng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_range(-bound, bound)).collect();
    Tensor::new(shape, data).expect("shape matches")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// trunc-normal(0.02) weights, zero bias
    Gpt,
    /// uniform Kaiming-style weights and bias
    Kaiming,
    Zero,
}

/// Affine map `x W + b` with `W: [inp, out]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inp: usize,
    pub out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, inp: usize, out: usize, init: Init, rng: &mut SeededRng) -> Self {
        let (w, b) = match init {
            Init::Gpt => (trunc_normal(&[inp, out], 0.02, rng), Tensor::zeros(&[out])),
            Init::Kaiming => (kaiming_uniform(&[inp, out], inp, rng), kaiming_uniform(&[out], inp, rng)),
            Init::Zero => (Tensor::zeros(&[inp, out]), Tensor::zeros(&[out])),
        };
        let weight = store.add(format!("{name}.weight"), w, true);
        let bias = store.add(format!("{name}.bias"), b, false);
        Linear { weight, bias, inp, out }
    }

    pub fn forward(&self, tape: &mut Tape, bind: &Binding, x: Var) -> Result<Var> {
        let y = tape.matmul(x, bind.var(self.weight))?;
        tape.add_row(y, bind.var(self.bias))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Gelu => tape.gelu(x),
        }
    }
}

/// Stack of linear layers with an activation between them.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// `widths = [in, hidden.., out]`.
    pub fn new(store: &mut ParamStore, name: &str, widths: &[usize], activation: Activation, init: Init, rng: &mut SeededRng) -> Self {
        let layers = widths.windows(2).enumerate().map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], init, rng)).collect();
        Mlp { layers, activation }
    }

    pub fn forward(&self, tape: &mut Tape, bind: &Binding, mut x: Var) -> Result<Var> {
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(tape, bind, x)?;
            if i < last {
                x = self.activation.apply(tape, x)?;
            }
        }
        Ok(x)
    }

    pub fn last(&self) -> &Linear {
        self.layers.last().expect("mlp has layers")
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(&[width], 1.0), false);
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[width]), false);
        LayerNorm { gamma, beta }
    }

    pub fn forward(&self, tape: &mut Tape, bind: &Binding, x: Var) -> Result<Var> {
        tape.layernorm(x, bind.var(self.gamma), bind.var(self.beta))
    }
}
