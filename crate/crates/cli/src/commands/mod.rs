pub mod eval;
pub mod layer_scan;
pub mod parse;
pub mod train;
pub mod transfer;

use clap::Args;
use depprobe::train::LossWeights;
use depprobe::TrainConfig;
use serde::Serialize;

/// Optimisation flags shared by `train` and `layer-scan`.
#[derive(Args, Clone, Debug, Serialize)]
pub struct OptimFlags {
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 30)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Epochs without dev improvement before the learning rate drops and training stops.
    #[arg(long, default_value_t = 3)]
    pub patience: usize,
    #[arg(long, default_value_t = 0.1)]
    pub plateau_factor: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub plateau_threshold: f64,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
}

impl OptimFlags {
    pub fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            plateau_factor: self.plateau_factor,
            plateau_threshold: self.plateau_threshold,
            early_stop_patience: self.patience,
            max_epochs: self.max_epochs,
            batch_size: self.batch_size,
            weight_decay: self.weight_decay,
            seed,
            loss_weights: LossWeights::default(),
        }
    }
}
