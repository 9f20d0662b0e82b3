use tensorkit::{Graph, ParamStore, Rng, Tensor, Var};

use super::munit::{repeat_rows, Munit};
use super::{ArchConfig, Discriminate, Trainable, Translator};
use crate::domain::Domain;
use crate::error::Result;

/// Deterministic-cycle ablation: the networks of [`Munit`] with every style
/// code replaced by the constant zero vector.
///
/// Style encoders are bypassed and the prior is a point mass, so the
/// translation from each input is a single image. Trained with the image
/// cycle loss and without style reconstruction.
#[derive(Clone, Debug)]
pub struct CycleAblation {
    inner: Munit<f32>,
}

impl CycleAblation {
    pub fn new(inner: Munit<f32>) -> Self {
        Self { inner }
    }

    pub fn inner(&self) -> &Munit<f32> {
        &self.inner
    }

    fn constant_style(&self, n: usize) -> Tensor<f32> {
        repeat_rows(&vec![0.0; self.inner.arch().style_dim], n)
    }
}

impl Translator<f32> for CycleAblation {
    fn name(&self) -> &str {
        "cycle_ablation"
    }

    fn image_size(&self) -> usize {
        self.inner.arch().image_size
    }

    fn style_dim(&self) -> usize {
        self.inner.arch().style_dim
    }

    fn encode_content(&self, g: &mut Graph<f32>, domain: Domain, x: Var) -> Result<Var> {
        self.inner.encode_content(g, domain, x)
    }

    fn encode_style(&self, g: &mut Graph<f32>, _domain: Domain, x: Var) -> Result<Var> {
        let n = g.shape(x)[0];
        Ok(g.constant(self.constant_style(n)))
    }

    fn decode(&self, g: &mut Graph<f32>, domain: Domain, c: Var, _s: Var) -> Result<Var> {
        let n = g.shape(c)[0];
        let s = g.constant(self.constant_style(n));
        self.inner.decode(g, domain, c, s)
    }

    fn sample_style(&self, _domain: Domain, n: usize, _rng: &mut Rng) -> Tensor<f32> {
        self.constant_style(n)
    }
}

impl Discriminate<f32> for CycleAblation {
    fn discriminate(&self, g: &mut Graph<f32>, domain: Domain, x: Var) -> Result<Vec<Var>> {
        self.inner.discriminate(g, domain, x)
    }
}

impl Trainable for CycleAblation {
    fn arch(&self) -> &ArchConfig {
        self.inner.arch()
    }

    fn params(&self) -> &ParamStore<f32> {
        self.inner.store()
    }

    fn params_mut(&mut self) -> &mut ParamStore<f32> {
        self.inner.store_mut()
    }
}
