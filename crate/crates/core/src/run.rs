//! Run metadata stored in checkpoints next to the model config.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureParams;
use crate::meta::Method;
use crate::model::SeldModel;
use crate::nn::checkpoint::Checkpoint;

const RUN_MARK: &str = "\n# run\n";

/// How a checkpoint was produced and which features it expects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunInfo {
    pub stage: String,
    pub method: Method,
    pub bypass_attenuation: bool,
    pub seed: u64,
    pub features: FeatureParams,
}

pub fn save_model(model: &SeldModel, info: &RunInfo, path: &Path) -> Result<()> {
    let run = toml::to_string(info).map_err(|e| Error::Format(e.to_string()))?;
    model.to_checkpoint(&run).save(path)
}

pub fn load_model(path: &Path) -> Result<(SeldModel, RunInfo)> {
    let ck = Checkpoint::load(path).map_err(|e| match e {
        Error::Io(io) => Error::Data(format!("{}: {io}", path.display())),
        e => e,
    })?;
    let run = ck
        .config
        .split(RUN_MARK)
        .nth(1)
        .ok_or_else(|| Error::Format(format!("{}: checkpoint has no run section", path.display())))?;
    let info: RunInfo = toml::from_str(run).map_err(|e| Error::Format(format!("{}: run section: {e}", path.display())))?;
    Ok((SeldModel::from_checkpoint(&ck)?, info))
}
