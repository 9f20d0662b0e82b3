#![allow(dead_code)]

use munit::data_synth::{render, rgb_to_tensor, sample_scene, sample_style};
use munit::trainer::TrainConfig;
use munit::Domain;
use tensorkit::{Rng, Tensor};

/// `n` freshly rendered images of `domain`.
pub fn synth_images(domain: Domain, n: usize, size: usize, seed: u64) -> Vec<Tensor<f32>> {
    let mut rng = Rng::with_stream(seed, 0x7E57 + domain.index() as u64);
    (0..n)
        .map(|_| {
            let scene = sample_scene(&mut rng);
            let style = sample_style(domain, &mut rng);
            rgb_to_tensor(&render(&scene, &style, size).unwrap())
        })
        .collect()
}

pub fn synth_pair(n: usize, size: usize, seed: u64) -> [Vec<Tensor<f32>>; 2] {
    [
        synth_images(Domain::One, n, size, seed),
        synth_images(Domain::Two, n, size, seed),
    ]
}

/// Default architecture shrunk so that a step takes milliseconds.
pub fn small_config() -> TrainConfig {
    TrainConfig {
        image_size: 16,
        base_channels: 4,
        n_res: 1,
        style_dim: 2,
        mlp_dim: 8,
        d_layers: 2,
        total_steps: 10,
        ..TrainConfig::default()
    }
}
