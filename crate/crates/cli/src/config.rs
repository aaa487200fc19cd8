//! TOML run configuration.
//!
//! Three tables mirror [`TrainConfig`]: `[model]`, `[optimizer]` and `[run]`.
//! Every key is optional and falls back to its default; unknown keys are
//! errors.
//!
//! ```toml
//! [model]
//! kind = "mlp"          # mlp | attention
//! p = 11
//! k = 3
//! width = 160           # neurons, or heads per layer
//! init_scale = 0.1      # MLP Gaussian init std
//! d_model = 32          # attention only
//! d_head = 8
//! layers = 1            # 1 or 2
//! residual = false
//! layer_norm = false
//! positional = true
//! tied_unembed = false
//!
//! [optimizer]
//! kind = "adamw"        # sgd | adamw
//! lr = 5e-3
//! beta1 = 0.9
//! beta2 = 0.98
//! weight_decay = 0.0
//! eps = 1e-8
//! warmup = 10
//!
//! [run]
//! steps = 20000
//! batch_size = 1024
//! lambda = 0.005
//! train_fraction = 1.0
//! seed = 0
//! eval_interval = 100
//! track_margin = false
//! ```

use std::path::Path;

use fourier_circuits::training::TrainConfig;
use fourier_circuits::{Error, Result};

/// Parses and validates a configuration. Errors carry line and column.
pub fn parse(text: &str) -> Result<TrainConfig> {
    let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path)?;
    parse(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Canonical TOML for a configuration, written next to run outputs.
pub fn echo(cfg: &TrainConfig) -> String {
    toml::to_string(cfg).expect("config is always serialisable")
}
