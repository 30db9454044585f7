use std::collections::HashSet;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Graph, Parameter, Var};
use crate::dynamics::Linear;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::forcing::{Affine, ForcingFunction};
use super::steps::{self, LayerHistory, StateVector};

/// Block family of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", content = "order", rename_all = "snake_case")]
pub enum Architecture {
    /// No skip connections: `x(l+1) = f(x(l))`.
    Plain,
    /// `C^k` block (`k = 1` is the residual network).
    Smooth(usize),
    /// Additive dense block with a `k`-layer window.
    Dense(usize),
}

impl Architecture {
    /// Number of state parts `k`.
    pub fn order(self) -> usize {
        match self {
            Architecture::Plain => 1,
            Architecture::Smooth(k) | Architecture::Dense(k) => k,
        }
    }

    pub fn family(self) -> &'static str {
        match self {
            Architecture::Plain => "plain",
            Architecture::Smooth(_) => "ck",
            Architecture::Dense(_) => "dense",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Architecture::Plain => write!(f, "C0"),
            Architecture::Smooth(k) => write!(f, "C{k}"),
            Architecture::Dense(k) => write!(f, "add-dense{k}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Direct,
    StateSpace,
}

/// What the classification head reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// Final activation `x(L) = q_1(L)`, head `[d x C]`.
    Position,
    /// Whole state `[q_1; ...; q_k]`, head `[k d x C]`.
    FullState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub architecture: Architecture,
    pub depth: usize,
    pub width: usize,
    pub input_dim: usize,
    pub num_classes: usize,
    pub dl: f64,
    pub activation: Activation,
    pub readout: Readout,
    pub seed: u64,
}

impl NetworkConfig {
    pub fn new(architecture: Architecture, depth: usize, width: usize, input_dim: usize, num_classes: usize) -> Self {
        Self {
            architecture,
            depth,
            width,
            input_dim,
            num_classes,
            dl: 1.0,
            activation: Activation::Tanh,
            readout: Readout::Position,
            seed: 0,
        }
    }

    pub fn with_dl(mut self, dl: f64) -> Self {
        self.dl = dl;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_readout(mut self, readout: Readout) -> Self {
        self.readout = readout;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.architecture.order();
        if k == 0 {
            return Err(Error::contract("order k must be >= 1"));
        }
        if k > 16 {
            return Err(Error::contract(format!("order k = {k} is beyond the supported range (<= 16)")));
        }
        if self.width == 0 || self.input_dim == 0 {
            return Err(Error::contract("width and input_dim must be >= 1"));
        }
        if self.num_classes < 2 {
            return Err(Error::contract("need at least two classes"));
        }
        if !(self.dl > 0.0 && self.dl.is_finite()) {
            return Err(Error::contract(format!("dl must be positive and finite, got {}", self.dl)));
        }
        Ok(())
    }

    fn head_inputs(&self) -> usize {
        match self.readout {
            Readout::Position => self.width,
            Readout::FullState => self.width * self.architecture.order(),
        }
    }
}

/// Per-layer states (layers `0..=L`) and unscaled forcing outputs
/// `f(l)(x(l))` (layers `0..L`) of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<StateVector<Tensor>>,
    pub forcing: Vec<Tensor>,
}

impl Trajectory {
    pub fn positions(&self) -> Vec<Tensor> {
        self.states.iter().map(|s| s.position().clone()).collect()
    }
}

pub struct ForwardOutput<'g> {
    pub logits: Var<'g>,
    pub trajectory: Option<Trajectory>,
}

/// Input embedding, `L` blocks and a softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    pub embed: Affine,
    pub blocks: Vec<ForcingFunction>,
    pub head: Affine,
}

struct Recorder {
    states: Vec<StateVector<Tensor>>,
    forcing: Vec<Tensor>,
}

impl Recorder {
    fn states(&mut self, q: &StateVector<Var<'_>>) {
        self.states.push(StateVector::new(q.parts().iter().map(Var::value).collect()));
    }
}

impl Network {
    /// Fresh network with Glorot-uniform weights and zero biases drawn from
    /// `config.seed`.
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let embed = Affine::init("embed", config.input_dim, config.width, &mut rng);
        let blocks = (0..config.depth)
            .map(|l| ForcingFunction::init(&format!("block{l}"), config.width, config.activation, &mut rng))
            .collect();
        let head = Affine::init("head", config.head_inputs(), config.num_classes, &mut rng);
        Self::from_parts(config, embed, blocks, head)
    }

    pub fn from_parts(config: NetworkConfig, embed: Affine, blocks: Vec<ForcingFunction>, head: Affine) -> Result<Self> {
        config.validate()?;
        let net = Self {
            config,
            embed,
            blocks,
            head,
        };
        let c = &net.config;
        if net.blocks.len() != c.depth {
            return Err(Error::contract(format!("{} blocks for depth {}", net.blocks.len(), c.depth)));
        }
        if (net.embed.fan_in(), net.embed.fan_out()) != (c.input_dim, c.width)
            || (net.head.fan_in(), net.head.fan_out()) != (c.head_inputs(), c.num_classes)
            || net.blocks.iter().any(|b| b.width() != c.width)
        {
            return Err(Error::contract("parameter shapes do not match the configuration"));
        }
        let mut seen = HashSet::new();
        for p in net.parameters() {
            if !seen.insert(p.name.as_str()) {
                return Err(Error::contract(format!("duplicate parameter name `{}`", p.name)));
            }
        }
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Embedding, blocks in layer order, head.
    pub fn parameters(&self) -> Vec<&Parameter> {
        let mut out: Vec<&Parameter> = self.embed.parameters().to_vec();
        for b in &self.blocks {
            out.extend(b.parameters());
        }
        out.extend(self.head.parameters());
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out: Vec<&mut Parameter> = Vec::new();
        out.extend(self.embed.parameters_mut());
        for b in &mut self.blocks {
            out.extend(b.parameters_mut());
        }
        out.extend(self.head.parameters_mut());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.value.numel()).sum()
    }

    /// Embedding, `L` block updates and readout on a `B x input_dim` batch.
    pub fn forward<'g>(&self, g: &'g Graph, inputs: &Tensor, mode: Mode, record: bool) -> Result<ForwardOutput<'g>> {
        let c = &self.config;
        if inputs.shape().len() != 2 || inputs.cols() != c.input_dim {
            return Err(Error::Dimension {
                op: "network input",
                left: inputs.shape().to_vec(),
                right: vec![c.input_dim],
            });
        }
        let x0 = self.embed.apply(g.constant(inputs.clone()))?;
        let mut rec = record.then(|| Recorder {
            states: Vec::with_capacity(c.depth + 1),
            forcing: Vec::with_capacity(c.depth),
        });
        let k = c.architecture.order();
        let dl = c.dl;

        let final_state = match (c.architecture, mode) {
            (Architecture::Plain, _) => {
                let mut x = x0;
                for f in &self.blocks {
                    if let Some(r) = rec.as_mut() {
                        r.states.push(StateVector::new(vec![x.value()]));
                    }
                    let next = steps::c0_step(f, x)?;
                    if let Some(r) = rec.as_mut() {
                        r.forcing.push(next.value());
                    }
                    x = next;
                }
                StateVector::new(vec![x])
            }
            (Architecture::Smooth(_), Mode::Direct) => {
                let mut history = LayerHistory::ghost(x0, k);
                for f in &self.blocks {
                    if let Some(r) = rec.as_mut() {
                        r.states(&history.states()?);
                        r.forcing.push(f.apply(history.lags()[0])?.value());
                    }
                    let next = if k == 1 {
                        steps::c1_step(f, history.lags()[0], dl)?
                    } else {
                        steps::ck_direct_step(f, &history, k, dl)?
                    };
                    history.push(next);
                }
                history.states()?
            }
            (Architecture::Smooth(_), Mode::StateSpace) => {
                let mut q = steps::initialize_state(x0, k)?;
                for f in &self.blocks {
                    if let Some(r) = rec.as_mut() {
                        r.states(&q);
                        r.forcing.push(f.apply(*q.position())?.value());
                    }
                    q = steps::ck_state_step(f, &q, k, dl)?;
                }
                q
            }
            (Architecture::Dense(_), Mode::Direct) => {
                let mut history = LayerHistory::ghost(x0, k);
                let mut cache: Vec<Var<'g>> = Vec::with_capacity(k);
                for f in &self.blocks {
                    if let Some(r) = rec.as_mut() {
                        r.states(&history.states()?);
                    }
                    let out = f.apply(history.lags()[0])?;
                    if let Some(r) = rec.as_mut() {
                        r.forcing.push(out.value());
                    }
                    cache.insert(0, out);
                    cache.truncate(k);
                    let next = steps::dense_direct_update(&cache, &history, dl)?;
                    history.push(next);
                }
                history.states()?
            }
            (Architecture::Dense(_), Mode::StateSpace) => {
                let mut q = steps::initialize_state(x0, k)?;
                for l in 0..c.depth {
                    let window: Vec<&ForcingFunction> = (0..k.min(l + 1)).map(|j| &self.blocks[l - j]).collect();
                    if let Some(r) = rec.as_mut() {
                        r.states(&q);
                        r.forcing.push(window[0].apply(*q.position())?.value());
                    }
                    q = steps::dense_state_step(&window, &q, dl)?;
                }
                q
            }
        };
        if let Some(r) = rec.as_mut() {
            r.states(&final_state);
        }

        let features = match c.readout {
            Readout::Position => *final_state.position(),
            Readout::FullState => Var::concat_cols(final_state.parts())?,
        };
        debug_assert_eq!(features.width(), c.head_inputs());
        let logits = self.head.apply(features)?;
        Ok(ForwardOutput {
            logits,
            trajectory: rec.map(|r| Trajectory {
                states: r.states,
                forcing: r.forcing,
            }),
        })
    }

    /// Logits on a fresh graph.
    pub fn predict(&self, inputs: &Tensor, mode: Mode) -> Result<Tensor> {
        let g = Graph::new();
        Ok(self.forward(&g, inputs, mode, false)?.logits.value())
    }

    pub fn trajectory(&self, inputs: &Tensor, mode: Mode) -> Result<Trajectory> {
        let g = Graph::new();
        let out = self.forward(&g, inputs, mode, true)?;
        Ok(out.trajectory.expect("recording requested"))
    }
}
