use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::engine::{Coverage, NodeQuant, QuantModel, QuantParams};
use crate::error::{Error, Result};
use crate::model::ModelGraph;
use crate::tensor::{read_tensor_file, write_tensor_file, AnyTensor};

pub const QUANT_FILE: &str = "quant.json";

#[derive(Serialize, Deserialize)]
struct Dump {
    layers: Vec<QuantParams>,
    coverage: Coverage,
    #[serde(default)]
    summary: serde_json::Value,
    artifact: QuantModel,
}

fn weight_path(dir: &Path, name: &str) -> PathBuf {
    dir.join("weights").join(format!("{name}.tqt"))
}

/// Writes `quant.json` plus one `weights/<layer>.tqt` i8 tensor per weighted layer.
pub fn save_quant(dir: &Path, graph: &ModelGraph, qm: &QuantModel, summary: serde_json::Value) -> Result<PathBuf> {
    std::fs::create_dir_all(dir.join("weights"))?;
    for nq in &qm.nodes {
        if let NodeQuant::Conv(c) = nq {
            let w = c
                .weights
                .as_ref()
                .ok_or_else(|| Error::Artifact(format!("layer `{}` has no quantized weights", c.name)))?;
            write_tensor_file(w, weight_path(dir, &c.name))?;
        }
    }
    let dump = Dump { layers: qm.params(graph), coverage: qm.coverage(graph), summary, artifact: qm.clone() };
    let path = dir.join(QUANT_FILE);
    let text = serde_json::to_string_pretty(&dump).map_err(|e| Error::Artifact(e.to_string()))?;
    std::fs::write(&path, text)?;
    Ok(path)
}

/// Loads an artifact written by [`save_quant`]; `path` may be the JSON file or its directory.
pub fn load_quant(path: &Path, graph: &ModelGraph) -> Result<QuantModel> {
    let (dir, file) = if path.is_dir() {
        (path.to_path_buf(), path.join(QUANT_FILE))
    } else {
        (path.parent().unwrap_or(Path::new(".")).to_path_buf(), path.to_path_buf())
    };
    let text = std::fs::read_to_string(&file)
        .map_err(|e| Error::Artifact(format!("cannot read {}: {e}", file.display())))?;
    let dump: Dump = serde_json::from_str(&text).map_err(|e| Error::Artifact(format!("{}: {e}", file.display())))?;
    let mut qm = dump.artifact;
    for nq in &mut qm.nodes {
        if let NodeQuant::Conv(c) = nq {
            let p = weight_path(&dir, &c.name);
            let t = read_tensor_file(&p).map_err(|e| Error::Artifact(format!("{}: {e}", p.display())))?;
            let AnyTensor::I8(w) = t else {
                return Err(Error::Artifact(format!("{} is not an i8 tensor", p.display())));
            };
            let expected = graph.layers.get(c.layer).and_then(|l| l.weight.as_ref()).map(|w| w.shape().to_vec());
            if expected.as_deref() != Some(w.shape()) {
                return Err(Error::Artifact(format!("weights of `{}` do not match the model", c.name)));
            }
            c.weights = Some(w);
        }
    }
    qm.prepare(graph)?;
    Ok(qm)
}
