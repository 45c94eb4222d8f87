#![allow(dead_code)]

pub mod gradcheck;
pub mod oracles;

use burnscar::raster::{generate_synthetic_dataset, BitemporalSample, Split, SyntheticConfig};

pub fn synthetic(seed: u64, counts: (usize, usize, usize), noise: f64) -> Vec<BitemporalSample> {
    let config = SyntheticConfig {
        noise,
        ..SyntheticConfig::default()
    };
    generate_synthetic_dataset(seed, &config, counts).unwrap()
}

pub fn split(samples: &[BitemporalSample], split: Split) -> Vec<BitemporalSample> {
    samples.iter().filter(|s| s.split == split).cloned().collect()
}
