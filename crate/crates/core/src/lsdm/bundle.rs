use std::path::Path;

use serde::{Deserialize, Serialize};

use super::autoencoder::{AutoencoderPair, StepOneConfig, StepOneHistory};
use super::step_two::{LatentGenerator, StepTwoConfig, StepTwoHistory};
use super::LsdmError;
use crate::engine::checkpoint::{decode_body, read_document, write_document, CheckpointError, MlpRecord};
use crate::engine::Tensor;
use crate::rng::Rng;

pub const BUNDLE_KIND: &str = "bundle";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub seed: u64,
    pub step_one: Option<StepOneConfig>,
    pub step_one_history: Option<StepOneHistory>,
    pub step_two: StepTwoConfig,
    pub step_two_history: StepTwoHistory,
}

/// Trained autoencoder plus latent generator (EMA weights); samples are
/// `D(H(x, η))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorBundle {
    pub ae: AutoencoderPair,
    pub generator: LatentGenerator,
    pub meta: BundleMeta,
}

/// Repeats each row of `x` `count` times and draws one `η` per output row.
fn expand(x: &Tensor, count: usize, noise_dim: usize, rng: &mut Rng) -> Result<(Tensor, Tensor), LsdmError> {
    let idx: Vec<usize> = (0..x.rows()).flat_map(|r| std::iter::repeat_n(r, count)).collect();
    let rows = idx.len();
    let eta = Tensor::new(rows, noise_dim, rng.normal_vec(rows * noise_dim))?;
    Ok((x.select_rows(&idx), eta))
}

/// `H(x, η_k)` for `k = 1..count` per row of `x`, grouped by row.
pub fn generate_latent(bundle: &GeneratorBundle, x: &Tensor, count: usize, rng: &mut Rng) -> Result<Tensor, LsdmError> {
    let (xr, eta) = expand(x, count, bundle.generator.noise_dim, rng)?;
    bundle.generator.forward(&xr, &eta)
}

/// `D(H(x, η_k))`, `η_k ~ N(0, I_d)` i.i.d., `count` samples per row of `x`.
pub fn generate_conditional(bundle: &GeneratorBundle, x: &Tensor, count: usize, rng: &mut Rng) -> Result<Tensor, LsdmError> {
    bundle.ae.decode(&generate_latent(bundle, x, count, rng)?)
}

#[derive(Serialize, Deserialize)]
struct BundleRecord {
    encoder: MlpRecord,
    decoder: MlpRecord,
    generator: MlpRecord,
    noise_dim: usize,
    x_scale: f64,
    meta: BundleMeta,
}

pub fn save_bundle(bundle: &GeneratorBundle, path: &Path) -> Result<(), CheckpointError> {
    let rec = BundleRecord {
        encoder: MlpRecord::from_network(&bundle.ae.encoder, None),
        decoder: MlpRecord::from_network(&bundle.ae.decoder, None),
        generator: MlpRecord::from_network(&bundle.generator.net, None),
        noise_dim: bundle.generator.noise_dim,
        x_scale: bundle.generator.x_scale,
        meta: bundle.meta.clone(),
    };
    write_document(path, BUNDLE_KIND, &rec)
}

pub fn load_bundle(path: &Path) -> Result<GeneratorBundle, CheckpointError> {
    let (kind, doc) = read_document(path)?;
    bundle_from_document(&kind, doc)
}

pub(crate) fn bundle_from_document(kind: &str, doc: serde_json::Value) -> Result<GeneratorBundle, CheckpointError> {
    let rec: BundleRecord = decode_body(kind, doc, BUNDLE_KIND)?;
    let (encoder, _) = rec.encoder.to_network()?;
    let (decoder, _) = rec.decoder.to_network()?;
    let (net, _) = rec.generator.to_network()?;
    if net.input_dim() < rec.noise_dim || net.output_dim() != encoder.output_dim() {
        return Err(CheckpointError::Shape("generator does not fit the autoencoder".into()));
    }
    let ae = AutoencoderPair::from_networks(encoder, decoder).map_err(|e| CheckpointError::Shape(e.to_string()))?;
    Ok(GeneratorBundle {
        ae,
        generator: LatentGenerator {
            net,
            noise_dim: rec.noise_dim,
            x_scale: rec.x_scale,
        },
        meta: rec.meta,
    })
}
