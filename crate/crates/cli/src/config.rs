//! Run configuration: pipeline defaults, overlaid by a JSON file, overlaid
//! by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use stressseq::models::Pipeline;
use stressseq::trainer::TrainConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Class directories to read; `None` reads the default three.
    pub classes: Option<Vec<String>>,
    #[serde(flatten)]
    pub train: TrainConfig,
}

/// Key-by-key overlay; nested objects merge recursively.
pub fn merge(base: &mut Value, overlay: &Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

/// Keys of `overlay` that `base` does not define, as dotted paths.
fn unknown_keys(base: &Value, overlay: &Value, prefix: &str, out: &mut Vec<String>) {
    if let (Value::Object(b), Value::Object(o)) = (base, overlay) {
        for (k, v) in o {
            let path = format!("{prefix}{k}");
            match b.get(k) {
                None => out.push(path),
                Some(bv) if bv.is_object() => unknown_keys(bv, v, &format!("{path}."), out),
                Some(_) => {}
            }
        }
    }
}

fn defaults(pipeline: Pipeline) -> Value {
    let mut v = serde_json::to_value(TrainConfig::for_pipeline(pipeline)).expect("config serializes");
    let extra = serde_json::json!({ "data_dir": null, "out_dir": null, "classes": null });
    merge(&mut v, &extra);
    v
}

fn pipeline_of(layer: &Value) -> Result<Option<Pipeline>, CliError> {
    match layer.get("pipeline") {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v.clone())
            .map(Some)
            .map_err(|_| CliError::Usage(format!("unknown pipeline {v}"))),
    }
}

/// Resolve defaults < `file` < `flags`. Defaults are those of the pipeline
/// chosen by the highest layer that names one.
pub fn resolve(file: Option<&Value>, flags: &Value) -> Result<RunConfig, CliError> {
    let empty = Value::Object(Map::new());
    let file = file.unwrap_or(&empty);
    if !file.is_object() {
        return Err(CliError::Usage("config file must hold a JSON object".into()));
    }
    let pipeline = match pipeline_of(flags)? {
        Some(p) => p,
        None => pipeline_of(file)?.unwrap_or(Pipeline::SpatioTemporal),
    };
    let mut resolved = defaults(pipeline);
    let mut unknown = Vec::new();
    unknown_keys(&resolved, file, "", &mut unknown);
    if !unknown.is_empty() {
        return Err(CliError::Usage(format!("unknown config keys: {}", unknown.join(", "))));
    }
    merge(&mut resolved, file);
    merge(&mut resolved, flags);
    for key in ["data_dir", "out_dir"] {
        if resolved[key].is_null() {
            return Err(CliError::Usage(format!("{key} must be given by flag or config file")));
        }
    }
    let cfg: RunConfig = serde_json::from_value(resolved).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
    cfg.train.validate()?;
    Ok(cfg)
}

/// Parse a JSON config file.
pub fn read_file(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

impl RunConfig {
    /// Paths the run reads must exist.
    pub fn check_paths(&self) -> Result<(), CliError> {
        if !self.data_dir.is_dir() {
            return Err(CliError::Usage(format!("data directory {} does not exist", self.data_dir.display())));
        }
        if let Some(w) = &self.train.backbone.weights_path {
            if !w.is_file() {
                return Err(CliError::Usage(format!("weights file {} does not exist", w.display())));
            }
        }
        Ok(())
    }
}
