use rand::Rng;

use crate::autodiff::{Activation, Parameter, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Affine map `x W + b` on row-vector batches; `W` is `[in x out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Affine {
    pub fn init<R: Rng + ?Sized>(prefix: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = glorot_bound(fan_in, fan_out);
        Self {
            weight: Parameter::new(format!("{prefix}.weight"), Tensor::uniform([fan_in, fan_out], bound, rng)),
            bias: Parameter::new(format!("{prefix}.bias"), Tensor::zeros([fan_out])),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn apply<'g>(&self, x: Var<'g>) -> Result<Var<'g>> {
        let g = x.graph();
        x.matmul(g.param(&self.weight))?.add_row(g.param(&self.bias))
    }

    pub fn parameters(&self) -> [&Parameter; 2] {
        [&self.weight, &self.bias]
    }

    pub fn parameters_mut(&mut self) -> [&mut Parameter; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// The per-layer forcing term `f(x) = act(x W + b)` with square `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcingFunction {
    pub affine: Affine,
    pub activation: Activation,
}

impl ForcingFunction {
    pub fn init<R: Rng + ?Sized>(prefix: &str, width: usize, activation: Activation, rng: &mut R) -> Self {
        Self {
            affine: Affine::init(prefix, width, width, rng),
            activation,
        }
    }

    pub fn from_parts(prefix: &str, weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        let d = weight.shape().first().copied().unwrap_or(0);
        if weight.shape() != [d, d] || bias.shape() != [d] {
            return Err(Error::Dimension {
                op: "forcing function",
                left: weight.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        Ok(Self {
            affine: Affine {
                weight: Parameter::new(format!("{prefix}.weight"), weight),
                bias: Parameter::new(format!("{prefix}.bias"), bias),
            },
            activation,
        })
    }

    /// All-zero weights and bias.
    pub fn zeroed(prefix: &str, width: usize, activation: Activation) -> Self {
        Self::from_parts(prefix, Tensor::zeros([width, width]), Tensor::zeros([width]), activation)
            .expect("square zero parameters")
    }

    pub fn width(&self) -> usize {
        self.affine.fan_in()
    }

    pub fn apply<'g>(&self, x: Var<'g>) -> Result<Var<'g>> {
        Ok(self.affine.apply(x)?.activate(self.activation))
    }

    pub fn parameters(&self) -> [&Parameter; 2] {
        self.affine.parameters()
    }

    pub fn parameters_mut(&mut self) -> [&mut Parameter; 2] {
        self.affine.parameters_mut()
    }
}
