use std::fmt;

use tensorkit::{Element, Graph, PadMode, ParamId, ParamStore, Rng, Tensor, Var};

use crate::error::{invalid, Result};

pub(crate) const NORM_EPS: f64 = 1e-5;
pub(crate) const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Norm {
    None,
    Instance,
    /// Adaptive instance normalization fed by slot `n` of the style MLP output.
    AdaIn(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Act {
    None,
    Relu,
    LeakyRelu,
    Tanh,
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub k: usize,
    pub stride: usize,
    pub out: usize,
    /// Nearest-neighbour 2x upsampling before the convolution.
    pub upsample: bool,
    pub norm: Norm,
    pub act: Act,
}

#[derive(Clone, Debug)]
pub enum Layer {
    Conv(Conv),
    /// Two 3x3 convolutions with a skip connection; the second has no activation.
    Res(Conv, Conv),
    Gap,
    Fc {
        w: ParamId,
        b: ParamId,
        out: usize,
        act: Act,
    },
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layer::Conv(c) if c.upsample => write!(f, "u{}", c.out),
            Layer::Conv(c) if c.stride == 1 => write!(f, "c{}s1-{}", c.k, c.out),
            Layer::Conv(c) => write!(f, "d{}", c.out),
            Layer::Res(c, _) => write!(f, "R{}", c.out),
            Layer::Gap => write!(f, "GAP"),
            Layer::Fc { out, .. } => write!(f, "fc{out}"),
        }
    }
}

/// Sequential stack of layers.
#[derive(Clone, Debug, Default)]
pub struct Net {
    pub layers: Vec<Layer>,
}

impl Net {
    /// Comma-separated layer string, e.g. `c7s1-16, d32, d64, R64, R64`.
    pub fn describe(&self) -> String {
        self.layers.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
    }

    /// Normalization applied after every convolution, in order.
    pub fn conv_norms(&self) -> Vec<Norm> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => out.push(c.norm),
                Layer::Res(a, b) => out.extend([a.norm, b.norm]),
                _ => {}
            }
        }
        out
    }

    pub fn forward<T: Element>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        mut x: Var,
        adain: &[(Var, Var)],
    ) -> Result<Var> {
        for layer in &self.layers {
            x = match layer {
                Layer::Conv(c) => conv_block(g, store, x, c, adain)?,
                Layer::Res(a, b) => {
                    let h = conv_block(g, store, x, a, adain)?;
                    let h = conv_block(g, store, h, b, adain)?;
                    g.add(x, h)?
                }
                Layer::Gap => g.global_avg_pool(x)?,
                Layer::Fc { w, b, act, .. } => {
                    let (w, b) = (g.param(store, *w), g.param(store, *b));
                    let y = g.linear(x, w, Some(b))?;
                    activate(g, y, *act)
                }
            };
        }
        Ok(x)
    }
}

fn conv_block<T: Element>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    x: Var,
    c: &Conv,
    adain: &[(Var, Var)],
) -> Result<Var> {
    let x = if c.upsample { g.upsample_nearest(x, 2)? } else { x };
    let (w, b) = (g.param(store, c.w), g.param(store, c.b));
    let y = g.conv2d(x, w, Some(b), c.stride, (c.k - 1) / 2, PadMode::Reflect)?;
    let y = match c.norm {
        Norm::None => y,
        Norm::Instance => g.instance_norm(y, NORM_EPS)?,
        Norm::AdaIn(slot) => {
            let &(gamma, beta) = adain
                .get(slot)
                .ok_or_else(|| invalid(format!("missing AdaIN parameters for slot {slot}")))?;
            g.adain(y, gamma, beta, NORM_EPS)?
        }
    };
    Ok(activate(g, y, c.act))
}

fn activate<T: Element>(g: &mut Graph<T>, x: Var, act: Act) -> Var {
    match act {
        Act::None => x,
        Act::Relu => g.relu(x),
        Act::LeakyRelu => g.leaky_relu(x, LEAKY_SLOPE),
        Act::Tanh => g.tanh(x),
    }
}

/// Allocates named parameters with fan-in scaled normal weights and zero biases.
pub(crate) struct Builder<'a, T: Element> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut Rng,
    pub group: &'static str,
    pub prefix: String,
}

impl<T: Element> Builder<'_, T> {
    fn normal(&mut self, shape: &[usize], std: f64) -> Tensor<T> {
        let rng = &mut *self.rng;
        Tensor::from_fn(shape.to_vec(), |_| T::lit(rng.normal() * std))
    }

    fn name(&self, local: &str) -> String {
        format!("{}.{local}", self.prefix)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &mut self,
        local: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        norm: Norm,
        act: Act,
        upsample: bool,
    ) -> Conv {
        let std = (2.0 / (cin * k * k) as f64).sqrt();
        let w = self.normal(&[cout, cin, k, k], std);
        let w = self.store.add(self.name(&format!("{local}.w")), self.group, w);
        let b = self.store.add(self.name(&format!("{local}.b")), self.group, Tensor::zeros([cout]));
        Conv {
            w,
            b,
            k,
            stride,
            out: cout,
            upsample,
            norm,
            act,
        }
    }

    pub fn fc(&mut self, local: &str, cin: usize, cout: usize, act: Act) -> Layer {
        let std = (2.0 / cin as f64).sqrt();
        let w = self.normal(&[cout, cin], std);
        let w = self.store.add(self.name(&format!("{local}.w")), self.group, w);
        let b = self.store.add(self.name(&format!("{local}.b")), self.group, Tensor::zeros([cout]));
        Layer::Fc { w, b, out: cout, act }
    }

    /// Linear layer with small weights and a caller-supplied bias.
    pub fn fc_with_bias(&mut self, local: &str, cin: usize, bias: Vec<T>, std: f64) -> Result<Layer> {
        let cout = bias.len();
        let w = self.normal(&[cout, cin], std);
        let w = self.store.add(self.name(&format!("{local}.w")), self.group, w);
        let b = self.store.add(self.name(&format!("{local}.b")), self.group, Tensor::new([cout], bias)?);
        Ok(Layer::Fc {
            w,
            b,
            out: cout,
            act: Act::None,
        })
    }
}
