use std::path::Path;

use super::{HarnessError, MetricsRecord};
use crate::diffusion::{save_score_net, TrainedScore, SCORE_KIND};
use crate::engine::checkpoint::{decode_body, read_document, save_mlp, CheckpointError, MlpRecord};
use crate::engine::{Ema, Network};
use crate::lsdm::{save_bundle, GeneratorBundle, BUNDLE_KIND};

/// Any object the checkpoint format can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Mlp(Network, Option<Ema>),
    Score(TrainedScore),
    Bundle(GeneratorBundle),
}

impl Checkpoint {
    pub fn kind(&self) -> &'static str {
        match self {
            Checkpoint::Mlp(..) => "mlp",
            Checkpoint::Score(_) => SCORE_KIND,
            Checkpoint::Bundle(_) => BUNDLE_KIND,
        }
    }
}

pub fn save_checkpoint(object: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    match object {
        Checkpoint::Mlp(net, ema) => save_mlp(net, ema.as_ref(), path),
        Checkpoint::Score(s) => save_score_net(s, path),
        Checkpoint::Bundle(b) => save_bundle(b, path),
    }
}

/// Reads any checkpoint, dispatching on its `kind`.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let (kind, doc) = read_document(path)?;
    match kind.as_str() {
        "mlp" => {
            let rec: MlpRecord = decode_body(&kind, doc, "mlp")?;
            let (net, ema) = rec.to_network()?;
            Ok(Checkpoint::Mlp(net, ema))
        }
        SCORE_KIND => Ok(Checkpoint::Score(crate::diffusion::score_from_document(&kind, doc)?)),
        BUNDLE_KIND => Ok(Checkpoint::Bundle(crate::lsdm::bundle_from_document(&kind, doc)?)),
        other => Err(CheckpointError::Malformed(format!("unknown checkpoint kind {other:?}"))),
    }
}

pub fn write_metrics_csv(records: &[MetricsRecord], path: &Path) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}
