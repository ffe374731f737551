//! The recurrent depth network, its losses and the training loop.
//!
//! The network maps an RGB frame (scaled to `[0, 1]`) plus the recurrent
//! state of five conv-LSTM layers to a full-resolution label map in
//! `(0, 1)`. A trained model lives in a directory holding `model.gwck`
//! (weights) and `model.json` (architecture and label mapping).

pub mod arch;
pub mod loss;
pub mod network;
pub mod train;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use arch::{ArchitectureConfig, LayerOp, LayerSpec};
pub use loss::{
    berhu_loss, gdl_loss, l2_loss, sequence_loss, FrameLoss, LossConfig, LossKind, LossTarget,
};
pub use network::{
    forward_sequence, forward_step, forward_step_on_tape, image_to_tensor, init_params, stack_images, ModelParams,
    RecordedParams,
    SequenceStates, FORGET_BIAS, INIT_STD,
};
pub use train::{
    eval_depth_l2, predict_labels, train, train_with, write_loss_log, TrainConfig, TrainOutcome, TrainRecord,
};

use crate::depth_data::DepthLabelConfig;
use crate::{Error, Result, FORMAT_VERSION};

pub const WEIGHTS_FILE: &str = "model.gwck";
pub const DESCRIPTION_FILE: &str = "model.json";

#[derive(Debug, Serialize, Deserialize)]
struct ModelDescription {
    version: u32,
    arch: ArchitectureConfig,
    labels: DepthLabelConfig,
}

/// A trained network and the label mapping its outputs use.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub params: ModelParams<f32>,
    pub labels: DepthLabelConfig,
}

impl TrainedModel {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        geoframe_nn::checkpoint::save(&self.params.store, dir.join(WEIGHTS_FILE))?;
        let desc = ModelDescription {
            version: FORMAT_VERSION,
            arch: self.params.arch.clone(),
            labels: self.labels,
        };
        fs::write(
            dir.join(DESCRIPTION_FILE),
            serde_json::to_string_pretty(&desc)?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let desc: ModelDescription =
            serde_json::from_str(&fs::read_to_string(dir.join(DESCRIPTION_FILE))?)?;
        if desc.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported model version {}",
                desc.version
            )));
        }
        desc.labels.validate()?;
        let store = geoframe_nn::checkpoint::load(dir.join(WEIGHTS_FILE))?;
        let params =
            ModelParams::from_store(desc.arch, store).map_err(|e| Error::Format(e.to_string()))?;
        Ok(TrainedModel {
            params,
            labels: desc.labels,
        })
    }
}
