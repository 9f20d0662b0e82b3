use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Shape hyperparameters shared by both domains.
///
/// Defaults are the desk-scale configuration: widths are a quarter of the
/// full-size network, two residual blocks, two discriminator scales.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub image_size: usize,
    pub in_channels: usize,
    pub base_channels: usize,
    pub n_downsample: usize,
    pub n_res: usize,
    pub style_dim: usize,
    /// Stride-2 layers the style encoder adds after the shared downsampling depth.
    pub style_extra_down: usize,
    pub mlp_dim: usize,
    /// Stride-2 layers per discriminator scale.
    pub d_layers: usize,
    pub d_scales: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            in_channels: 3,
            base_channels: 16,
            n_downsample: 2,
            n_res: 2,
            style_dim: 8,
            style_extra_down: 2,
            mlp_dim: 64,
            d_layers: 3,
            d_scales: 2,
        }
    }
}

impl ArchConfig {
    /// Channel width of the content code.
    pub fn content_channels(&self) -> usize {
        self.base_channels << self.n_downsample
    }

    /// Spatial extent of the content code.
    pub fn content_size(&self) -> usize {
        self.image_size >> self.n_downsample
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_size", self.image_size),
            ("in_channels", self.in_channels),
            ("base_channels", self.base_channels),
            ("style_dim", self.style_dim),
            ("mlp_dim", self.mlp_dim),
            ("d_layers", self.d_layers),
            ("d_scales", self.d_scales),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(invalid(format!("{name} must be positive")));
            }
        }
        let down = 1usize << self.n_downsample;
        if !self.image_size.is_multiple_of(down) || self.image_size / down < 2 {
            return Err(invalid(format!(
                "image_size {} must be divisible by 2^n_downsample = {down} with a content code of at least 2x2",
                self.image_size
            )));
        }
        let style_down = 1usize << (self.n_downsample + self.style_extra_down);
        if self.image_size < style_down {
            return Err(invalid(format!(
                "image_size {} too small for {} style-encoder downsamplings",
                self.image_size,
                self.n_downsample + self.style_extra_down
            )));
        }
        let coarsest = self.image_size >> (self.d_scales - 1);
        if coarsest < 1 << self.d_layers {
            return Err(invalid(format!(
                "coarsest discriminator input {coarsest}x{coarsest} is smaller than the {}-layer receptive minimum",
                self.d_layers
            )));
        }
        Ok(())
    }
}
