use tensorkit::{Element, Graph, ParamStore, Rng, Tensor, Var};

use super::arch::ArchConfig;
use super::layers::{Act, Builder, Layer, Net, Norm};
use super::{Discriminate, Trainable, Translator};
use crate::domain::Domain;
use crate::error::{invalid, Result};

const INIT_STREAM: u64 = 0x1417;
const MLP_OUT_STD: f64 = 0.01;

/// The networks of one domain.
#[derive(Clone, Debug)]
pub struct DomainNets {
    pub content: Net,
    pub style: Net,
    pub mlp: Net,
    pub decoder: Net,
    /// Channel count of each AdaIN slot, front to back.
    pub adain_channels: Vec<usize>,
    /// One network per discriminator scale.
    pub dis: Vec<Net>,
}

/// Content encoders, style encoders, AdaIN decoders and multi-scale
/// discriminators for both domains, with their parameters.
///
/// Generator-side parameters (encoders, MLPs, decoders) are in group `"gen"`,
/// discriminator parameters in group `"dis"`.
#[derive(Clone, Debug)]
pub struct Munit<T: Element = f32> {
    arch: ArchConfig,
    nets: [DomainNets; 2],
    store: ParamStore<T>,
}

impl<T: Element> Munit<T> {
    pub fn new(arch: &ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut store = ParamStore::new();
        let mut rng = Rng::with_stream(seed, INIT_STREAM);
        let nets = [
            build_domain(arch, Domain::One, &mut store, &mut rng)?,
            build_domain(arch, Domain::Two, &mut store, &mut rng)?,
        ];
        Ok(Self {
            arch: arch.clone(),
            nets,
            store,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn nets(&self, domain: Domain) -> &DomainNets {
        &self.nets[domain.index()]
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    /// Same networks with parameters converted to `U`.
    pub fn cast<U: Element>(&self) -> Munit<U> {
        Munit {
            arch: self.arch.clone(),
            nets: self.nets.clone(),
            store: self.store.cast(),
        }
    }

    /// Total number of AdaIN scalars the style MLP emits.
    pub fn adain_param_count(&self, domain: Domain) -> usize {
        self.nets(domain).adain_channels.iter().map(|c| 2 * c).sum()
    }

    /// Per-slot `(gamma, beta)` produced by the style MLP. The MLP output is laid
    /// out slot by slot from the first AdaIN layer to the last, each slot
    /// holding its gammas followed by its betas.
    pub fn mlp_adain_params(&self, g: &mut Graph<T>, domain: Domain, s: Var) -> Result<Vec<(Var, Var)>> {
        self.check_style(g, s)?;
        let nets = self.nets(domain);
        let p = nets.mlp.forward(g, &self.store, s, &[])?;
        let mut out = Vec::with_capacity(nets.adain_channels.len());
        let mut off = 0;
        for &ch in &nets.adain_channels {
            let gamma = g.slice_cols(p, off, ch)?;
            let beta = g.slice_cols(p, off + ch, ch)?;
            out.push((gamma, beta));
            off += 2 * ch;
        }
        Ok(out)
    }

    fn check_image(&self, g: &Graph<T>, x: Var) -> Result<()> {
        let s = g.shape(x);
        let a = &self.arch;
        if s.len() != 4 || s[1] != a.in_channels || s[2] != a.image_size || s[3] != a.image_size {
            return Err(invalid(format!(
                "expected images [N, {}, {}, {}], got {s:?}",
                a.in_channels, a.image_size, a.image_size
            )));
        }
        Ok(())
    }

    fn check_style(&self, g: &Graph<T>, s: Var) -> Result<()> {
        let shape = g.shape(s);
        if shape.len() != 2 || shape[1] != self.arch.style_dim {
            return Err(invalid(format!(
                "style_dim mismatch: expected [N, {}], got {shape:?}",
                self.arch.style_dim
            )));
        }
        Ok(())
    }

    fn check_content(&self, g: &Graph<T>, c: Var) -> Result<()> {
        let s = g.shape(c);
        let (ch, sz) = (self.arch.content_channels(), self.arch.content_size());
        if s.len() != 4 || s[1] != ch || s[2] != sz || s[3] != sz {
            return Err(invalid(format!("expected content codes [N, {ch}, {sz}, {sz}], got {s:?}")));
        }
        Ok(())
    }
}

fn build_domain<T: Element>(
    arch: &ArchConfig,
    domain: Domain,
    store: &mut ParamStore<T>,
    rng: &mut Rng,
) -> Result<DomainNets> {
    let b = arch.base_channels;
    let top = arch.content_channels();
    let n = domain.number();
    let mut gen = Builder {
        store,
        rng,
        group: "gen",
        prefix: format!("gen{n}.content"),
    };

    let mut content = Net::default();
    content.layers.push(Layer::Conv(gen.conv("c0", arch.in_channels, b, 7, 1, Norm::Instance, Act::Relu, false)));
    for i in 0..arch.n_downsample {
        let (cin, cout) = (b << i, b << (i + 1));
        let conv = gen.conv(&format!("down{i}"), cin, cout, 4, 2, Norm::Instance, Act::Relu, false);
        content.layers.push(Layer::Conv(conv));
    }
    for r in 0..arch.n_res {
        let c1 = gen.conv(&format!("res{r}.0"), top, top, 3, 1, Norm::Instance, Act::Relu, false);
        let c2 = gen.conv(&format!("res{r}.1"), top, top, 3, 1, Norm::Instance, Act::None, false);
        content.layers.push(Layer::Res(c1, c2));
    }

    gen.prefix = format!("gen{n}.style");
    let mut style = Net::default();
    style.layers.push(Layer::Conv(gen.conv("c0", arch.in_channels, b, 7, 1, Norm::None, Act::Relu, false)));
    let mut ch = b;
    for i in 0..arch.n_downsample + arch.style_extra_down {
        let cout = (b << (i + 1)).min(top);
        style.layers.push(Layer::Conv(gen.conv(&format!("down{i}"), ch, cout, 4, 2, Norm::None, Act::Relu, false)));
        ch = cout;
    }
    style.layers.push(Layer::Gap);
    style.layers.push(gen.fc("fc", ch, arch.style_dim, Act::None));

    gen.prefix = format!("gen{n}.decoder");
    let mut decoder = Net::default();
    let mut adain_channels = Vec::new();
    for r in 0..arch.n_res {
        let s0 = adain_channels.len();
        adain_channels.extend([top, top]);
        let c1 = gen.conv(&format!("res{r}.0"), top, top, 3, 1, Norm::AdaIn(s0), Act::Relu, false);
        let c2 = gen.conv(&format!("res{r}.1"), top, top, 3, 1, Norm::AdaIn(s0 + 1), Act::None, false);
        decoder.layers.push(Layer::Res(c1, c2));
    }
    for i in (0..arch.n_downsample).rev() {
        let (cin, cout) = (b << (i + 1), b << i);
        decoder.layers.push(Layer::Conv(gen.conv(&format!("up{i}"), cin, cout, 5, 1, Norm::None, Act::Relu, true)));
    }
    decoder.layers.push(Layer::Conv(gen.conv("out", b, arch.in_channels, 7, 1, Norm::None, Act::Tanh, false)));

    gen.prefix = format!("gen{n}.mlp");
    let mut mlp = Net::default();
    mlp.layers.push(gen.fc("fc0", arch.style_dim, arch.mlp_dim, Act::Relu));
    mlp.layers.push(gen.fc("fc1", arch.mlp_dim, arch.mlp_dim, Act::Relu));
    let mut bias = Vec::new();
    for &c in &adain_channels {
        bias.extend(std::iter::repeat_n(T::one(), c));
        bias.extend(std::iter::repeat_n(T::zero(), c));
    }
    mlp.layers.push(gen.fc_with_bias("fc2", arch.mlp_dim, bias, MLP_OUT_STD)?);

    let mut dis_builder = Builder {
        store: gen.store,
        rng: gen.rng,
        group: "dis",
        prefix: String::new(),
    };
    let mut dis = Vec::with_capacity(arch.d_scales);
    for s in 0..arch.d_scales {
        dis_builder.prefix = format!("dis{n}.scale{s}");
        let mut net = Net::default();
        let mut cin = arch.in_channels;
        for l in 0..arch.d_layers {
            let cout = b << l;
            net.layers.push(Layer::Conv(dis_builder.conv(
                &format!("down{l}"),
                cin,
                cout,
                4,
                2,
                Norm::None,
                Act::LeakyRelu,
                false,
            )));
            cin = cout;
        }
        net.layers.push(Layer::Conv(dis_builder.conv("score", cin, 1, 1, 1, Norm::None, Act::None, false)));
        dis.push(net);
    }

    Ok(DomainNets {
        content,
        style,
        mlp,
        decoder,
        adain_channels,
        dis,
    })
}

impl<T: Element> Translator<T> for Munit<T> {
    fn name(&self) -> &str {
        "munit"
    }

    fn image_size(&self) -> usize {
        self.arch.image_size
    }

    fn style_dim(&self) -> usize {
        self.arch.style_dim
    }

    fn encode_content(&self, g: &mut Graph<T>, domain: Domain, x: Var) -> Result<Var> {
        self.check_image(g, x)?;
        self.nets(domain).content.forward(g, &self.store, x, &[])
    }

    fn encode_style(&self, g: &mut Graph<T>, domain: Domain, x: Var) -> Result<Var> {
        self.check_image(g, x)?;
        self.nets(domain).style.forward(g, &self.store, x, &[])
    }

    fn decode(&self, g: &mut Graph<T>, domain: Domain, c: Var, s: Var) -> Result<Var> {
        self.check_content(g, c)?;
        let adain = self.mlp_adain_params(g, domain, s)?;
        if g.shape(c)[0] != g.shape(s)[0] {
            return Err(invalid(format!(
                "batch mismatch: content {:?}, style {:?}",
                g.shape(c),
                g.shape(s)
            )));
        }
        self.nets(domain).decoder.forward(g, &self.store, c, &adain)
    }
}

impl<T: Element> Discriminate<T> for Munit<T> {
    fn discriminate(&self, g: &mut Graph<T>, domain: Domain, x: Var) -> Result<Vec<Var>> {
        self.check_image(g, x)?;
        let mut maps = Vec::with_capacity(self.arch.d_scales);
        let mut input = x;
        for (k, net) in self.nets(domain).dis.iter().enumerate() {
            if k > 0 {
                input = g.avg_pool(input, 2)?;
            }
            maps.push(net.forward(g, &self.store, input, &[])?);
        }
        Ok(maps)
    }
}

impl Trainable for Munit<f32> {
    fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    fn params(&self) -> &ParamStore<f32> {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.store
    }
}

/// Writes `values` into an `[n, dim]` style tensor, repeating `values` per row.
pub(crate) fn repeat_rows<T: Element>(values: &[T], n: usize) -> Tensor<T> {
    let dim = values.len();
    Tensor::from_fn([n, dim], |i| values[i % dim])
}
