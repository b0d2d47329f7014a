//! Fully connected networks `T_L ∘ σ ∘ … ∘ σ ∘ T_1` with `T_i(z) = W_i z + b_i`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::graph::{sigmoid, Graph, NodeId};
use super::tensor::{matmul, Tensor};
use super::EngineError;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    Linear,
}

impl Activation {
    /// Upper bound on the activation's Lipschitz constant.
    pub fn slope_bound(self) -> f64 {
        match self {
            Activation::Relu | Activation::Tanh | Activation::Linear => 1.0,
            Activation::LeakyRelu(a) => a.abs().max(1.0),
            Activation::Sigmoid => 0.25,
        }
    }

    fn is_relu_family(self) -> bool {
        matches!(self, Activation::Relu | Activation::LeakyRelu(_))
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => {
                if v > 0.0 {
                    v
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(a) => {
                if v > 0.0 {
                    v
                } else {
                    a * v
                }
            }
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => sigmoid(v),
            Activation::Linear => v,
        }
    }

    fn apply_graph(self, g: &mut Graph, x: NodeId) -> NodeId {
        match self {
            Activation::Relu => g.relu(x),
            Activation::LeakyRelu(a) => g.leaky_relu(x, a),
            Activation::Tanh => g.tanh(x),
            Activation::Sigmoid => g.sigmoid(x),
            Activation::Linear => x,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Relu => write!(f, "relu"),
            Activation::LeakyRelu(a) => write!(f, "leaky_relu({a})"),
            Activation::Tanh => write!(f, "tanh"),
            Activation::Sigmoid => write!(f, "sigmoid"),
            Activation::Linear => write!(f, "linear"),
        }
    }
}

impl FromStr for Activation {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "linear" => Ok(Activation::Linear),
            _ => s
                .strip_prefix("leaky_relu(")
                .and_then(|r| r.strip_suffix(')'))
                .and_then(|a| a.parse::<f64>().ok())
                .map(Activation::LeakyRelu)
                .ok_or_else(|| EngineError::InvalidSpec(format!("unknown activation {s:?}"))),
        }
    }
}

impl Serialize for Activation {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Activation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Init {
    /// He-normal for relu-family layers, Xavier-uniform otherwise; zero biases.
    #[default]
    Auto,
    /// Identity weights (square layers only) and zero biases.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub dims: Vec<usize>,
    /// One activation per layer (`dims.len() - 1` entries).
    pub activations: Vec<Activation>,
    pub init: Init,
}

impl MlpSpec {
    /// Hidden layers share `hidden`; the output layer uses `output`.
    pub fn new(dims: &[usize], hidden: Activation, output: Activation) -> Self {
        let layers = dims.len().saturating_sub(1);
        let mut activations = vec![hidden; layers.saturating_sub(1)];
        if layers > 0 {
            activations.push(output);
        }
        Self {
            dims: dims.to_vec(),
            activations,
            init: Init::Auto,
        }
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }
}

/// Number of trainable parameters `Σ_i (N_i·N_{i−1} + N_i)`.
pub fn parameter_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    dims: Vec<usize>,
    activations: Vec<Activation>,
    /// `W_i` is `N_i × N_{i−1}`.
    weights: Vec<Tensor>,
    /// `b_i` is `1 × N_i`.
    biases: Vec<Tensor>,
}

/// Parameter leaves of a network inside one [`Graph`].
#[derive(Debug, Clone)]
pub struct BoundMlp {
    activations: Vec<Activation>,
    in_dim: usize,
    pub weights: Vec<NodeId>,
    pub biases: Vec<NodeId>,
}

impl BoundMlp {
    /// Parameter nodes in [`Network::params`] order.
    pub fn params(&self) -> Vec<NodeId> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(&w, &b)| [w, b])
            .collect()
    }

    pub fn forward(&self, g: &mut Graph, input: NodeId) -> Result<NodeId, EngineError> {
        let [_, cols] = g.value(input).shape();
        if cols != self.in_dim {
            return Err(EngineError::Shape(format!(
                "network expects {} inputs, batch has {cols}",
                self.in_dim
            )));
        }
        let mut h = input;
        for ((&w, &b), &act) in self.weights.iter().zip(&self.biases).zip(&self.activations) {
            let z = g.matmul(h, w, false, true);
            let z = g.add_row(z, b);
            h = act.apply_graph(g, z);
        }
        Ok(h)
    }
}

impl Network {
    pub fn build(spec: &MlpSpec, rng: &mut Rng) -> Result<Self, EngineError> {
        if spec.dims.len() < 2 {
            return Err(EngineError::InvalidSpec(
                "a network needs at least one layer (two dims)".into(),
            ));
        }
        if let Some(i) = spec.dims.iter().position(|&d| d == 0) {
            return Err(EngineError::InvalidSpec(format!("dim {i} is zero")));
        }
        if spec.activations.len() != spec.dims.len() - 1 {
            return Err(EngineError::InvalidSpec(format!(
                "{} layers need {} activations, got {}",
                spec.dims.len() - 1,
                spec.dims.len() - 1,
                spec.activations.len()
            )));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (w, &act) in spec.dims.windows(2).zip(&spec.activations) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weight = match spec.init {
                Init::Identity => {
                    if fan_in != fan_out {
                        return Err(EngineError::InvalidSpec(
                            "identity init needs square layers".into(),
                        ));
                    }
                    Tensor::identity(fan_in)
                }
                Init::Auto if act.is_relu_family() => {
                    let std = (2.0 / fan_in as f64).sqrt();
                    let data = (0..fan_in * fan_out).map(|_| std * rng.normal()).collect();
                    Tensor::new(fan_out, fan_in, data)?
                }
                Init::Auto => {
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let data = (0..fan_in * fan_out)
                        .map(|_| rng.uniform_range(-a, a))
                        .collect();
                    Tensor::new(fan_out, fan_in, data)?
                }
            };
            weights.push(weight);
            biases.push(Tensor::zeros(1, fan_out));
        }
        Ok(Self {
            dims: spec.dims.clone(),
            activations: spec.activations.clone(),
            weights,
            biases,
        })
    }

    /// Assembles a network from explicit layers, validating every shape.
    pub fn from_parts(
        dims: Vec<usize>,
        activations: Vec<Activation>,
        weights: Vec<Tensor>,
        biases: Vec<Tensor>,
    ) -> Result<Self, EngineError> {
        let layers = dims.len().saturating_sub(1);
        if layers == 0 || dims.contains(&0) {
            return Err(EngineError::InvalidSpec("bad layer dims".into()));
        }
        if activations.len() != layers || weights.len() != layers || biases.len() != layers {
            return Err(EngineError::Shape(format!(
                "{layers} layers but {} activations, {} weights, {} biases",
                activations.len(),
                weights.len(),
                biases.len()
            )));
        }
        for (i, w) in dims.windows(2).enumerate() {
            if weights[i].shape() != [w[1], w[0]] {
                return Err(EngineError::Shape(format!(
                    "layer {i} weight is {:?}, expected [{}, {}]",
                    weights[i].shape(),
                    w[1],
                    w[0]
                )));
            }
            if biases[i].shape() != [1, w[1]] {
                return Err(EngineError::Shape(format!(
                    "layer {i} bias is {:?}, expected [1, {}]",
                    biases[i].shape(),
                    w[1]
                )));
            }
        }
        Ok(Self {
            dims,
            activations,
            weights,
            biases,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("non-empty dims")
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn parameter_count(&self) -> usize {
        parameter_count(&self.dims)
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn biases(&self) -> &[Tensor] {
        &self.biases
    }

    /// Parameters in the order `W_1, b_1, W_2, b_2, …`.
    pub fn params(&self) -> Vec<&Tensor> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn param_shapes(&self) -> Vec<[usize; 2]> {
        self.params().iter().map(|t| t.shape()).collect()
    }

    /// Overwrites all parameters, in [`Network::params`] order.
    pub fn set_params(&mut self, values: &[Tensor]) -> Result<(), EngineError> {
        let shapes = self.param_shapes();
        if values.len() != shapes.len() || values.iter().zip(&shapes).any(|(v, s)| v.shape() != *s)
        {
            return Err(EngineError::Shape("parameter set does not match network".into()));
        }
        for (p, v) in self.params_mut().into_iter().zip(values) {
            *p = v.clone();
        }
        Ok(())
    }

    /// Registers the parameters as leaves of `g`.
    pub fn bind(&self, g: &mut Graph) -> BoundMlp {
        BoundMlp {
            activations: self.activations.clone(),
            in_dim: self.input_dim(),
            weights: self.weights.iter().map(|w| g.leaf(w.clone())).collect(),
            biases: self.biases.iter().map(|b| g.leaf(b.clone())).collect(),
        }
    }

    /// Forward pass without recording. Bit-identical to the recorded pass.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor, EngineError> {
        if batch.cols() != self.input_dim() {
            return Err(EngineError::Shape(format!(
                "network expects {} inputs, batch has {}",
                self.input_dim(),
                batch.cols()
            )));
        }
        if !batch.all_finite() {
            return Err(EngineError::NonFinite("network input".into()));
        }
        let mut h = batch.clone();
        for ((w, b), &act) in self.weights.iter().zip(&self.biases).zip(&self.activations) {
            let mut z = matmul(&h, w, false, true);
            let cols = z.cols();
            for row in z.data_mut().chunks_mut(cols) {
                for (o, bv) in row.iter_mut().zip(b.data()) {
                    *o = act.apply(*o + bv);
                }
            }
            h = z;
        }
        if !h.all_finite() {
            return Err(EngineError::NonFinite("network output".into()));
        }
        Ok(h)
    }

    /// Pre-activation values of every layer for `batch`; used to keep finite
    /// difference checks away from activation kinks.
    pub fn pre_activations(&self, batch: &Tensor) -> Result<Vec<Tensor>, EngineError> {
        let mut h = batch.clone();
        let mut out = Vec::new();
        for ((w, b), &act) in self.weights.iter().zip(&self.biases).zip(&self.activations) {
            let mut z = matmul(&h, w, false, true);
            let cols = z.cols();
            for row in z.data_mut().chunks_mut(cols) {
                for (o, bv) in row.iter_mut().zip(b.data()) {
                    *o += bv;
                }
            }
            h = z.map(|v| act.apply(v));
            out.push(z);
        }
        Ok(out)
    }
}
