//! Fixtures shared by the integration test targets.
#![allow(dead_code)]

use ctssg::experiment::{DataSpec, ExperimentConfig};
use ctssg::synth::{LabelSpec, PatternKind, SynthConfig};

/// Two-label 12x8x8 experiment that trains in well under a second.
pub fn tiny_config(run_name: &str, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk_default(run_name, seed);
    cfg.encoder.slices = 12;
    cfg.encoder.slice_height = 8;
    cfg.encoder.slice_width = 8;
    cfg.encoder.latent_dim = 8;
    cfg.encoder.labels = 2;
    cfg.encoder.filter_size = 2;
    cfg.synth = SynthConfig {
        slices: 12,
        slice_height: 8,
        slice_width: 8,
        triplet_size: 3,
        labels: vec![
            LabelSpec {
                name: "blob".to_string(),
                pattern: PatternKind::Blob,
                z_band: [0, 2],
                amplitude: 0.35,
                prevalence: 0.5,
                region: None,
            },
            LabelSpec {
                name: "flicker".to_string(),
                pattern: PatternKind::AlternatingIntensity,
                z_band: [2, 4],
                amplitude: 0.3,
                prevalence: 0.5,
                region: None,
            },
        ],
        correlation: None,
        background_level: 0.3,
        noise_floor: 0.04,
        seed,
    };
    cfg.data = DataSpec { train_count: 8, val_count: 4 };
    cfg.train.max_steps = 6;
    cfg.train.eval_every = 6;
    cfg.train.warmup_steps = 2;
    cfg
}
