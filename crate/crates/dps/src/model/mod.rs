//! The compact decoder-only transformer: configuration, parameters,
//! forward pass with per-head output gating, checkpoint IO, and training.

pub mod checkpoint;
pub mod config;
pub mod forward;
pub mod params;
pub mod train;

pub use checkpoint::{fingerprint, load_checkpoint, save_checkpoint};
pub use config::{HeadId, ModelConfig, SuppressionMap};
pub use forward::{forward, forward_hidden, forward_logits, nll, nll_sequence, LogitRows};
pub use params::Params;
pub use train::{train, TrainConfig};

/// Model parameters plus the architecture they instantiate.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub config: ModelConfig,
    pub params: Params,
}

impl ModelCheckpoint {
    /// Fresh seeded initialization.
    pub fn init(config: ModelConfig) -> crate::error::Result<Self> {
        config.validate()?;
        let params = Params::init(&config);
        Ok(ModelCheckpoint { config, params })
    }
}
