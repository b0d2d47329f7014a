//! JSON checkpoints for networks.
//!
//! Every document carries `version` and `kind`. Floats are written in the
//! shortest decimal form that parses back to the same bits, so
//! `load(save(x))` is bit-exact.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::mlp::{Activation, Network};
use super::optim::Ema;
use super::tensor::Tensor;
use super::EngineError;

pub const CHECKPOINT_VERSION: u64 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint version {found} is not supported (reader expects version {expected})")]
    VersionMismatch { found: u64, expected: u64 },
    #[error("checkpoint kind {found:?} where {expected:?} was expected")]
    WrongKind { expected: String, found: String },
    #[error("inconsistent shapes in checkpoint: {0}")]
    Shape(String),
}

impl From<EngineError> for CheckpointError {
    fn from(e: EngineError) -> Self {
        CheckpointError::Shape(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaRecord {
    pub decay: f64,
    /// Shadow weights, same layout as [`MlpRecord::weights`].
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Serialized form of a [`Network`] (and optionally its EMA shadow).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpRecord {
    pub dims: Vec<usize>,
    pub activations: Vec<Activation>,
    /// Row-major `W_i`, one array per layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ema: Option<EmaRecord>,
}

fn layer_tensors(
    dims: &[usize],
    weights: &[Vec<f64>],
    biases: &[Vec<f64>],
) -> Result<(Vec<Tensor>, Vec<Tensor>), CheckpointError> {
    if dims.len() < 2 || weights.len() != dims.len() - 1 || biases.len() != dims.len() - 1 {
        return Err(CheckpointError::Shape(format!(
            "{} dims but {} weight and {} bias arrays",
            dims.len(),
            weights.len(),
            biases.len()
        )));
    }
    let mut ws = Vec::new();
    let mut bs = Vec::new();
    for (i, d) in dims.windows(2).enumerate() {
        ws.push(Tensor::new(d[1], d[0], weights[i].clone())?);
        bs.push(Tensor::new(1, d[1], biases[i].clone())?);
    }
    Ok((ws, bs))
}

impl MlpRecord {
    pub fn from_network(net: &Network, ema: Option<&Ema>) -> Self {
        let flat = |ts: &[Tensor]| ts.iter().map(|t| t.data().to_vec()).collect::<Vec<_>>();
        let ema = ema.map(|e| {
            let shadow = e.shadow();
            EmaRecord {
                decay: e.decay(),
                weights: shadow.iter().step_by(2).map(|t| t.data().to_vec()).collect(),
                biases: shadow.iter().skip(1).step_by(2).map(|t| t.data().to_vec()).collect(),
            }
        });
        Self {
            dims: net.dims().to_vec(),
            activations: net.activations().to_vec(),
            weights: flat(net.weights()),
            biases: flat(net.biases()),
            ema,
        }
    }

    pub fn to_network(&self) -> Result<(Network, Option<Ema>), CheckpointError> {
        let (ws, bs) = layer_tensors(&self.dims, &self.weights, &self.biases)?;
        let net = Network::from_parts(self.dims.clone(), self.activations.clone(), ws, bs)?;
        let ema = match &self.ema {
            None => None,
            Some(rec) => {
                let (ws, bs) = layer_tensors(&self.dims, &rec.weights, &rec.biases)?;
                let shadow = ws.into_iter().zip(bs).flat_map(|(w, b)| [w, b]).collect();
                Some(Ema::from_shadow(rec.decay, shadow).map_err(CheckpointError::from)?)
            }
        };
        Ok((net, ema))
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    version: u64,
    kind: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

pub fn to_json<T: Serialize>(kind: &str, body: &T) -> String {
    serde_json::to_string_pretty(&Envelope {
        version: CHECKPOINT_VERSION,
        kind,
        body,
    })
    .expect("checkpoint bodies are plain data")
}

pub fn write_document<T: Serialize>(path: &Path, kind: &str, body: &T) -> Result<(), CheckpointError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CheckpointError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    fs::write(path, to_json(kind, body)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses a document, checks its version and returns `(kind, document)`.
pub fn parse_document(text: &str) -> Result<(String, Value), CheckpointError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    let version = doc
        .get("version")
        .and_then(Value::as_u64)
        .ok_or_else(|| CheckpointError::Malformed("missing integer `version`".into()))?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let kind = doc
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| CheckpointError::Malformed("missing string `kind`".into()))?
        .to_string();
    Ok((kind, doc))
}

pub fn read_document(path: &Path) -> Result<(String, Value), CheckpointError> {
    let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_document(&text)
}

/// Decodes the body of a document already known to be of `expected` kind.
pub fn decode_body<T: DeserializeOwned>(kind: &str, doc: Value, expected: &str) -> Result<T, CheckpointError> {
    if kind != expected {
        return Err(CheckpointError::WrongKind {
            expected: expected.into(),
            found: kind.into(),
        });
    }
    serde_json::from_value(doc).map_err(|e| CheckpointError::Malformed(e.to_string()))
}

pub fn save_mlp(net: &Network, ema: Option<&Ema>, path: &Path) -> Result<(), CheckpointError> {
    write_document(path, "mlp", &MlpRecord::from_network(net, ema))
}

pub fn load_mlp(path: &Path) -> Result<(Network, Option<Ema>), CheckpointError> {
    let (kind, doc) = read_document(path)?;
    let rec: MlpRecord = decode_body(&kind, doc, "mlp")?;
    rec.to_network()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::mlp::MlpSpec;
    use crate::rng::Rng;

    fn net() -> Network {
        let spec = MlpSpec::new(&[3, 7, 2], Activation::LeakyRelu(0.2), Activation::Tanh);
        Network::build(&spec, &mut Rng::new(21)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        let n = net();
        let ema = Ema::new(0.999, &n.params()).unwrap();
        save_mlp(&n, Some(&ema), &path).unwrap();
        let (back, back_ema) = load_mlp(&path).unwrap();
        assert_eq!(back, n);
        assert_eq!(back_ema.unwrap(), ema);
        let mut rng = Rng::new(1);
        let x = Tensor::new(100, 3, rng.normal_vec(300)).unwrap();
        let a = n.forward(&x).unwrap();
        let b = back.forward(&x).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn truncated_file_is_malformed() {
        let text = to_json("mlp", &MlpRecord::from_network(&net(), None));
        let cut = &text[..text.len() / 2];
        assert!(matches!(parse_document(cut), Err(CheckpointError::Malformed(_))));
    }

    #[test]
    fn future_version_is_rejected_with_both_versions() {
        let text = to_json("mlp", &MlpRecord::from_network(&net(), None)).replacen("\"version\": 1", "\"version\": 2", 1);
        let err = parse_document(&text).unwrap_err();
        assert!(matches!(err, CheckpointError::VersionMismatch { found: 2, expected: 1 }));
        let msg = err.to_string();
        assert!(msg.contains('2') && msg.contains('1'));
    }

    #[test]
    fn inconsistent_shapes_are_reported() {
        let mut rec = MlpRecord::from_network(&net(), None);
        rec.weights[0].pop();
        assert!(matches!(rec.to_network(), Err(CheckpointError::Shape(_))));
    }
}
