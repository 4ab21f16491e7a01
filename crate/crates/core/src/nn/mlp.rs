use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tape::{GradTape, Var};
use crate::nn::tensor::Tensor2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
}

/// Affine layer `y = act(x W + b)` with `W: in x out`, `b: 1 x out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Tensor2,
    pub bias: Tensor2,
    pub activation: Activation,
}

impl Dense {
    pub fn new(weight: Tensor2, bias: Tensor2, activation: Activation) -> Result<Self> {
        if bias.rows() != 1 || bias.cols() != weight.cols() {
            return Err(Error::dim(
                "Dense::new",
                format!("1x{} bias", weight.cols()),
                format!("{}x{}", bias.rows(), bias.cols()),
            ));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and bias.
    pub fn init<R: Rng + ?Sized>(
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut weight = Tensor2::zeros(fan_in, fan_out);
        for v in weight.data_mut() {
            *v = rng.random_range(-bound..=bound);
        }
        let mut bias = Tensor2::zeros(1, fan_out);
        for v in bias.data_mut() {
            *v = rng.random_range(-bound..=bound);
        }
        Self {
            weight,
            bias,
            activation,
        }
    }

    pub fn input_width(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_width(&self) -> usize {
        self.weight.cols()
    }
}

/// Feed-forward network with explicit gradient storage.
///
/// `forward` records the network's parameters as leaves on the tape and
/// remembers them; `collect_grads` pulls their gradients back after the
/// tape's backward sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Dense>,
    #[serde(skip)]
    grads: Vec<(Tensor2, Tensor2)>,
    #[serde(skip)]
    bindings: Vec<(Var, Var)>,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl Mlp {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("network needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_width() != pair[1].input_width() {
                return Err(Error::config(format!(
                    "layer {i} outputs {} features but layer {} expects {}",
                    pair[0].output_width(),
                    i + 1,
                    pair[1].input_width()
                )));
            }
        }
        let grads = layers
            .iter()
            .map(|l| {
                (
                    Tensor2::zeros(l.weight.rows(), l.weight.cols()),
                    Tensor2::zeros(1, l.bias.cols()),
                )
            })
            .collect();
        Ok(Self {
            layers,
            grads,
            bindings: Vec::new(),
        })
    }

    /// Builds `widths.len() - 1` layers; hidden layers use `hidden`, the last
    /// one `output`.
    pub fn new<R: Rng + ?Sized>(
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::config(format!(
                "network widths {widths:?} need at least two nonzero entries"
            )));
        }
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                Dense::init(widths[i], widths[i + 1], act, rng)
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input_width()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].output_width()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.data().len())
            .sum()
    }

    fn ensure_grads(&mut self) {
        if self.grads.len() != self.layers.len() {
            self.grads = self
                .layers
                .iter()
                .map(|l| {
                    (
                        Tensor2::zeros(l.weight.rows(), l.weight.cols()),
                        Tensor2::zeros(1, l.bias.cols()),
                    )
                })
                .collect();
        }
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_width() {
            return Err(Error::dim("forward_mlp", self.input_width(), cols));
        }
        Ok(())
    }

    /// Differentiable forward pass on `tape`.
    pub fn forward(&mut self, tape: &mut GradTape, x: Var) -> Result<Var> {
        self.check_input(tape.value(x).cols())?;
        let mut h = x;
        for layer in &self.layers {
            let w = tape.leaf(layer.weight.clone());
            let b = tape.leaf(layer.bias.clone());
            self.bindings.push((w, b));
            h = tape.matmul(h, w)?;
            h = tape.add_bias(h, b)?;
            if layer.activation == Activation::Relu {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Forward pass without recording anything.
    pub fn predict(&self, x: &Tensor2) -> Result<Tensor2> {
        self.check_input(x.cols())?;
        let mut h = x.clone();
        for layer in &self.layers {
            let mut next = h.matmul(&layer.weight)?;
            let bias = layer.bias.row(0);
            for r in 0..next.rows() {
                for (v, b) in next.row_mut(r).iter_mut().zip(bias) {
                    *v += b;
                    if layer.activation == Activation::Relu && *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            h = next;
        }
        Ok(h)
    }

    /// Adds the tape gradients of every forward pass recorded since the last
    /// call into this network's gradient buffers.
    pub fn collect_grads(&mut self, tape: &GradTape) {
        self.ensure_grads();
        let n = self.layers.len();
        let bindings = std::mem::take(&mut self.bindings);
        for (i, (w, b)) in bindings.into_iter().enumerate() {
            let (gw, gb) = &mut self.grads[i % n];
            if let Some(g) = tape.grad(w) {
                gw.add_assign(g);
            }
            if let Some(g) = tape.grad(b) {
                gb.add_assign(g);
            }
        }
    }

    /// Drops bindings from forward passes that will not be backpropagated.
    pub fn discard_bindings(&mut self) {
        self.bindings.clear();
    }

    pub fn zero_grad(&mut self) {
        self.ensure_grads();
        for (gw, gb) in &mut self.grads {
            gw.data_mut().fill(0.0);
            gb.data_mut().fill(0.0);
        }
    }

    pub fn grads(&self) -> &[(Tensor2, Tensor2)] {
        &self.grads
    }

    /// All parameters flattened, layer by layer, weights before bias.
    pub fn param_vector(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.data().iter().chain(l.bias.data()).copied())
            .collect()
    }

    pub fn set_param_vector(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::dim(
                "set_param_vector",
                self.num_params(),
                params.len(),
            ));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            for v in l.weight.data_mut().iter_mut().chain(l.bias.data_mut()) {
                *v = params[offset];
                offset += 1;
            }
        }
        Ok(())
    }

    /// Gradients flattened in the same order as [`Mlp::param_vector`].
    pub fn grad_vector(&self) -> Vec<f64> {
        self.grads
            .iter()
            .flat_map(|(gw, gb)| gw.data().iter().chain(gb.data()).copied())
            .collect()
    }

    pub(crate) fn params_and_grads_mut(
        &mut self,
    ) -> impl Iterator<Item = (&mut Tensor2, &mut Tensor2)> {
        self.ensure_grads();
        self.layers
            .iter_mut()
            .zip(self.grads.iter_mut())
            .flat_map(|(l, (gw, gb))| [(&mut l.weight, gw), (&mut l.bias, gb)])
    }
}
