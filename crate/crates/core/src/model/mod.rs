//! Encoders, decoders and discriminators, and the translator interface shared
//! by the learned model, its ablation and the synthetic-data oracle.

mod ablation;
mod arch;
mod layers;
mod munit;

pub use ablation::CycleAblation;
pub use arch::ArchConfig;
pub use layers::{Act, Layer, Net, Norm};
pub(crate) use layers::Builder;
pub use munit::{DomainNets, Munit};

use tensorkit::{Element, Graph, ParamStore, Rng, Tensor, Var};

use crate::domain::Domain;
use crate::error::Result;
use crate::registry::Registry;

/// Standard normal prior over style codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StylePrior {
    pub dim: usize,
}

impl StylePrior {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    /// `n` i.i.d. draws as an `[n, dim]` tensor.
    pub fn sample<T: Element>(&self, n: usize, rng: &mut Rng) -> Tensor<T> {
        Tensor::from_fn([n, self.dim], |_| T::lit(rng.normal()))
    }
}

/// Content/style factorized translator. Every operation appends to a graph,
/// so the same code path serves training, evaluation and gradient checks.
///
/// Content codes are `[N, C, h, w]`, style codes `[N, style_dim]`, images
/// `[N, 3, S, S]` in `[-1, 1]`.
pub trait Translator<T: Element = f32>: Send + Sync {
    fn name(&self) -> &str;

    fn image_size(&self) -> usize;

    fn style_dim(&self) -> usize;

    fn encode_content(&self, g: &mut Graph<T>, domain: Domain, x: Var) -> Result<Var>;

    fn encode_style(&self, g: &mut Graph<T>, domain: Domain, x: Var) -> Result<Var>;

    fn decode(&self, g: &mut Graph<T>, domain: Domain, c: Var, s: Var) -> Result<Var>;

    /// Draws `n` style codes valid as decoder input for `domain`.
    fn sample_style(&self, _domain: Domain, n: usize, rng: &mut Rng) -> Tensor<T> {
        StylePrior::new(self.style_dim()).sample(n, rng)
    }

    fn encode(&self, g: &mut Graph<T>, domain: Domain, x: Var) -> Result<(Var, Var)> {
        Ok((self.encode_content(g, domain, x)?, self.encode_style(g, domain, x)?))
    }

    /// Decodes the content of `x` (from `source`) in the other domain with
    /// style `s_target`.
    fn translate(&self, g: &mut Graph<T>, source: Domain, x: Var, s_target: Var) -> Result<Var> {
        let c = self.encode_content(g, source, x)?;
        self.decode(g, source.other(), c, s_target)
    }

    /// Translation whose style is encoded from a reference image of the target
    /// domain.
    fn translate_guided(&self, g: &mut Graph<T>, source: Domain, x_content: Var, x_style: Var) -> Result<Var> {
        let s = self.encode_style(g, source.other(), x_style)?;
        self.translate(g, source, x_content, s)
    }
}

/// Multi-scale patch discriminators, one set per domain.
pub trait Discriminate<T: Element = f32>: Send + Sync {
    /// One score map per scale; scale `k` sees the image average-pooled `k` times.
    fn discriminate(&self, g: &mut Graph<T>, domain: Domain, x: Var) -> Result<Vec<Var>>;
}

/// A translator with learnable parameters that the trainer can optimize.
pub trait Trainable: Translator<f32> + Discriminate<f32> {
    fn arch(&self) -> &ArchConfig;

    fn params(&self) -> &ParamStore<f32>;

    fn params_mut(&mut self) -> &mut ParamStore<f32>;
}

pub type TranslatorBuilder = fn(&ArchConfig, u64) -> Result<Box<dyn Trainable>>;

/// Trainable translator variants by name.
pub fn translators() -> Registry<TranslatorBuilder> {
    Registry::new("translator")
        .register("munit", build_munit as TranslatorBuilder)
        .register("cycle_ablation", build_ablation)
}

fn build_munit(arch: &ArchConfig, seed: u64) -> Result<Box<dyn Trainable>> {
    Ok(Box::new(Munit::new(arch, seed)?))
}

fn build_ablation(arch: &ArchConfig, seed: u64) -> Result<Box<dyn Trainable>> {
    Ok(Box::new(CycleAblation::new(Munit::new(arch, seed)?)))
}

/// Runs `f` in a fresh untracked graph and returns the value of its output.
pub fn infer<T: Element>(f: impl FnOnce(&mut Graph<T>) -> Result<Var>) -> Result<Tensor<T>> {
    let mut g = Graph::inference();
    let out = f(&mut g)?;
    Ok(g.value(out).clone())
}

/// Like [`infer`] for functions returning two outputs.
pub fn infer2<T: Element>(
    f: impl FnOnce(&mut Graph<T>) -> Result<(Var, Var)>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut g = Graph::inference();
    let (a, b) = f(&mut g)?;
    Ok((g.value(a).clone(), g.value(b).clone()))
}
