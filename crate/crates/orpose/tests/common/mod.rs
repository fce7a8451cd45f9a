#![allow(dead_code)]

use std::path::Path;

use orpose::config::ExperimentConfig;

/// A config small enough to run every stage in a few seconds.
pub const TINY: &str = r#"
version = 1
seeds = [0]

[data]
source_count = 40
preview_count = 8
target_adapt_count = 32
target_eval_count = 16
sweep_count = 8

[pretrain]
epochs = 2

[prior]
prediction_negatives = 20

[prior.train]
epochs = 3

[adapt]
epochs = 2
iterations_per_epoch = 2
batch_size = 4
"#;

pub fn tiny(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(TINY).unwrap();
    cfg.out = out.to_path_buf();
    cfg
}

pub fn quiet() -> impl FnMut(&str) {
    |_: &str| {}
}
