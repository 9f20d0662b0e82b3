use serde::{Deserialize, Serialize};

use crate::error::{MunitError, Result};
use crate::kv::KvConfig;
use crate::kv_fields;
use crate::losses::LossWeights;
use crate::model::ArchConfig;

/// Everything that determines a training run besides the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub image_size: usize,
    pub style_dim: usize,
    pub base_channels: usize,
    pub n_res: usize,
    pub n_downsample: usize,
    pub d_scales: usize,
    pub d_layers: usize,
    pub mlp_dim: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub lambda_x: f64,
    pub lambda_c: f64,
    pub lambda_s: f64,
    pub lambda_cyc: f64,
    pub lambda_perc: f64,
    /// Adversarial objective name, see [`crate::losses::gan_objectives`].
    pub gan: String,
    /// Translator variant name, see [`crate::model::translators`].
    pub translator: String,
    pub total_steps: u64,
    pub lr_halving_period: u64,
    /// Steps between intermediate checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
    pub seed: u64,
    /// Random horizontal mirroring of training images.
    pub flip: bool,
    /// Image directories; empty means `<data>/domain1` and `<data>/domain2`.
    pub domain1: String,
    pub domain2: String,
    /// Feature network checkpoint for the perceptual loss; required when
    /// `lambda_perc > 0`.
    pub perceptual_net: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let arch = ArchConfig::default();
        let w = LossWeights::default();
        Self {
            image_size: arch.image_size,
            style_dim: arch.style_dim,
            base_channels: arch.base_channels,
            n_res: arch.n_res,
            n_downsample: arch.n_downsample,
            d_scales: arch.d_scales,
            d_layers: arch.d_layers,
            mlp_dim: arch.mlp_dim,
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            lambda_x: w.lambda_x,
            lambda_c: w.lambda_c,
            lambda_s: w.lambda_s,
            lambda_cyc: w.lambda_cyc,
            lambda_perc: w.lambda_perc,
            gan: "lsgan".into(),
            translator: "munit".into(),
            total_steps: 20_000,
            lr_halving_period: 10_000,
            checkpoint_every: 0,
            seed: 0,
            flip: true,
            domain1: String::new(),
            domain2: String::new(),
            perceptual_net: String::new(),
        }
    }
}

kv_fields!(TrainConfig {
    image_size,
    style_dim,
    base_channels,
    n_res,
    n_downsample,
    d_scales,
    d_layers,
    mlp_dim,
    lr,
    beta1,
    beta2,
    adam_eps,
    lambda_x,
    lambda_c,
    lambda_s,
    lambda_cyc,
    lambda_perc,
    gan,
    translator,
    total_steps,
    lr_halving_period,
    checkpoint_every,
    seed,
    flip,
    domain1,
    domain2,
    perceptual_net,
});

impl KvConfig for TrainConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.kv_set(key, value)
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        self.kv_pairs()
    }

    fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(MunitError::Config(m));
        if self.total_steps == 0 {
            return fail("total_steps must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if self.lr_halving_period == 0 {
            return fail("lr_halving_period must be positive".into());
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !self.image_size.is_multiple_of(1 << self.n_downsample) {
            return fail(format!(
                "image_size {} not divisible by 2^n_downsample",
                self.image_size
            ));
        }
        self.weights().validate().map_err(|e| MunitError::Config(e.to_string()))?;
        self.arch().validate().map_err(|e| MunitError::Config(e.to_string()))
    }
}

impl TrainConfig {
    pub fn arch(&self) -> ArchConfig {
        ArchConfig {
            image_size: self.image_size,
            base_channels: self.base_channels,
            n_downsample: self.n_downsample,
            n_res: self.n_res,
            style_dim: self.style_dim,
            mlp_dim: self.mlp_dim,
            d_layers: self.d_layers,
            d_scales: self.d_scales,
            ..ArchConfig::default()
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_x: self.lambda_x,
            lambda_c: self.lambda_c,
            lambda_s: self.lambda_s,
            lambda_cyc: self.lambda_cyc,
            lambda_perc: self.lambda_perc,
        }
    }

    pub fn adam(&self, lr: f64) -> tensorkit::Adam {
        tensorkit::Adam {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_echo() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        assert_eq!(TrainConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn invariants_enforced() {
        assert!(TrainConfig::from_text("total_steps=0").is_err());
        assert!(TrainConfig::from_text("lr=0").is_err());
        assert!(TrainConfig::from_text("image_size=30").is_err());
        assert!(TrainConfig::from_text("lambda_x=-1").is_err());
        assert!(TrainConfig::from_text("learning_rate=1").is_err());
    }
}
