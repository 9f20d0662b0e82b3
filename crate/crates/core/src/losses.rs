//! Training objectives: bidirectional reconstruction, adversarial terms,
//! style-augmented cycle consistency and the domain-invariant perceptual loss.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use tensorkit::{Element, Graph, Var};

use crate::domain::Domain;
use crate::error::{invalid, MunitError, Result};
use crate::model::{Discriminate, Translator};
use crate::registry::Registry;

const NORM_EPS: f64 = 1e-5;

/// Weights of the generator objective. Adversarial terms have weight 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_x: f64,
    pub lambda_c: f64,
    pub lambda_s: f64,
    pub lambda_cyc: f64,
    pub lambda_perc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_x: 10.0,
            lambda_c: 1.0,
            lambda_s: 1.0,
            lambda_cyc: 0.0,
            lambda_perc: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("lambda_x", self.lambda_x),
            ("lambda_c", self.lambda_c),
            ("lambda_s", self.lambda_s),
            ("lambda_cyc", self.lambda_cyc),
            ("lambda_perc", self.lambda_perc),
        ];
        for (name, v) in all {
            if !v.is_finite() || v < 0.0 {
                return Err(invalid(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// `(term, weight)` for every term of the generator total. Cycle and
    /// perceptual terms appear only when their weight is positive.
    pub fn coefficients(&self) -> Vec<(&'static str, f64)> {
        let mut out = vec![
            (term::GAN_1, 1.0),
            (term::GAN_2, 1.0),
            (term::RECON_X1, self.lambda_x),
            (term::RECON_X2, self.lambda_x),
            (term::RECON_C1, self.lambda_c),
            (term::RECON_C2, self.lambda_c),
            (term::RECON_S1, self.lambda_s),
            (term::RECON_S2, self.lambda_s),
        ];
        if self.lambda_cyc > 0.0 {
            out.extend([(term::CYC_1, self.lambda_cyc), (term::CYC_2, self.lambda_cyc)]);
        }
        if self.lambda_perc > 0.0 {
            out.extend([(term::PERC_1, self.lambda_perc), (term::PERC_2, self.lambda_perc)]);
        }
        out
    }
}

/// Loss term names used in reports and training logs.
///
/// Digits name the domain the term is measured in: `gan_2` scores translations
/// into domain 2, `recon_c1` is the content code of a domain-1 image recovered
/// after translation, `recon_s2` the domain-2 style recovered from that
/// translation, `cyc_1` a domain-1 image after a round trip.
pub mod term {
    pub const GAN_1: &str = "gan_1";
    pub const GAN_2: &str = "gan_2";
    pub const RECON_X1: &str = "recon_x1";
    pub const RECON_X2: &str = "recon_x2";
    pub const RECON_C1: &str = "recon_c1";
    pub const RECON_C2: &str = "recon_c2";
    pub const RECON_S1: &str = "recon_s1";
    pub const RECON_S2: &str = "recon_s2";
    pub const CYC_1: &str = "cyc_1";
    pub const CYC_2: &str = "cyc_2";
    pub const PERC_1: &str = "perc_1";
    pub const PERC_2: &str = "perc_2";
    pub const DIS_1: &str = "dis_1";
    pub const DIS_2: &str = "dis_2";

    pub fn gan(d: crate::Domain) -> &'static str {
        [GAN_1, GAN_2][d.index()]
    }
    pub fn recon_x(d: crate::Domain) -> &'static str {
        [RECON_X1, RECON_X2][d.index()]
    }
    pub fn recon_c(d: crate::Domain) -> &'static str {
        [RECON_C1, RECON_C2][d.index()]
    }
    pub fn recon_s(d: crate::Domain) -> &'static str {
        [RECON_S1, RECON_S2][d.index()]
    }
    pub fn cyc(d: crate::Domain) -> &'static str {
        [CYC_1, CYC_2][d.index()]
    }
    pub fn perc(d: crate::Domain) -> &'static str {
        [PERC_1, PERC_2][d.index()]
    }
    pub fn dis(d: crate::Domain) -> &'static str {
        [DIS_1, DIS_2][d.index()]
    }
}

/// Named scalar loss values of one training step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub terms: BTreeMap<String, f64>,
    pub gen_total: f64,
    pub dis_total: f64,
}

impl LossReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.terms.get(name).copied()
    }
}

/// Weighted generator objective over named term values.
pub fn total_generator_loss(terms: &BTreeMap<String, f64>, weights: &LossWeights) -> Result<f64> {
    weights
        .coefficients()
        .into_iter()
        .map(|(name, w)| {
            terms
                .get(name)
                .map(|v| w * v)
                .ok_or_else(|| invalid(format!("missing loss term `{name}`")))
        })
        .sum()
}

/// Adversarial objective over per-scale score maps. Per-scale losses are
/// averaged.
pub trait GanObjective<T: Element>: Send + Sync {
    fn name(&self) -> &'static str;

    fn d_loss(&self, g: &mut Graph<T>, real: &[Var], fake: &[Var]) -> Result<Var>;

    fn g_loss(&self, g: &mut Graph<T>, fake: &[Var]) -> Result<Var>;
}

/// Least-squares objective with targets 0 (fake) and 1 (real).
pub struct LsGan;

/// Cross-entropy objective on logits. The generator side uses the
/// non-saturating form `-log D(fake)`.
pub struct BceGan;

fn check_maps(real: &[Var], fake: &[Var]) -> Result<()> {
    if fake.is_empty() || (!real.is_empty() && real.len() != fake.len()) {
        return Err(invalid(format!(
            "score map lists must be non-empty and equal length (real {}, fake {})",
            real.len(),
            fake.len()
        )));
    }
    Ok(())
}

fn scale_mean<T: Element>(g: &mut Graph<T>, per_scale: Vec<Var>) -> Result<Var> {
    let w = 1.0 / per_scale.len() as f64;
    let terms: Vec<(Var, f64)> = per_scale.into_iter().map(|v| (v, w)).collect();
    Ok(g.weighted_sum(&terms)?)
}

impl<T: Element> GanObjective<T> for LsGan {
    fn name(&self) -> &'static str {
        "lsgan"
    }

    fn d_loss(&self, g: &mut Graph<T>, real: &[Var], fake: &[Var]) -> Result<Var> {
        if real.is_empty() {
            return Err(invalid("empty real score map list"));
        }
        check_maps(real, fake)?;
        let mut per_scale = Vec::with_capacity(real.len());
        for (&r, &f) in real.iter().zip(fake) {
            let lr = g.mse_target(r, 1.0)?;
            let lf = g.mse_target(f, 0.0)?;
            per_scale.push(g.add(lr, lf)?);
        }
        scale_mean(g, per_scale)
    }

    fn g_loss(&self, g: &mut Graph<T>, fake: &[Var]) -> Result<Var> {
        check_maps(&[], fake)?;
        let per_scale = fake.iter().map(|&f| g.mse_target(f, 1.0)).collect::<Result<_, _>>()?;
        scale_mean(g, per_scale)
    }
}

impl<T: Element> GanObjective<T> for BceGan {
    fn name(&self) -> &'static str {
        "bce"
    }

    fn d_loss(&self, g: &mut Graph<T>, real: &[Var], fake: &[Var]) -> Result<Var> {
        if real.is_empty() {
            return Err(invalid("empty real score map list"));
        }
        check_maps(real, fake)?;
        let mut per_scale = Vec::with_capacity(real.len());
        for (&r, &f) in real.iter().zip(fake) {
            let lr = g.bce_with_logits(r, 1.0)?;
            let lf = g.bce_with_logits(f, 0.0)?;
            per_scale.push(g.add(lr, lf)?);
        }
        scale_mean(g, per_scale)
    }

    fn g_loss(&self, g: &mut Graph<T>, fake: &[Var]) -> Result<Var> {
        check_maps(&[], fake)?;
        let per_scale = fake.iter().map(|&f| g.bce_with_logits(f, 1.0)).collect::<Result<_, _>>()?;
        scale_mean(g, per_scale)
    }
}

pub type GanBuilder<T> = fn() -> Box<dyn GanObjective<T>>;

/// Adversarial objectives by name.
pub fn gan_objectives<T: Element>() -> Registry<GanBuilder<T>> {
    Registry::new("gan objective")
        .register("lsgan", (|| Box::new(LsGan)) as GanBuilder<T>)
        .register("bce", || Box::new(BceGan))
}

fn batch_size<T: Element>(g: &Graph<T>, x: Var) -> Result<usize> {
    match g.shape(x).first() {
        Some(&n) if n > 0 => Ok(n),
        _ => Err(invalid(format!("empty batch {:?}", g.shape(x)))),
    }
}

/// Mean absolute error between `x` and its reconstruction through the
/// encoder and decoder of `domain`.
pub fn image_recon_loss<T: Element>(
    g: &mut Graph<T>,
    model: &dyn Translator<T>,
    domain: Domain,
    x: Var,
) -> Result<Var> {
    batch_size(g, x)?;
    let (c, s) = model.encode(g, domain, x)?;
    let rec = model.decode(g, domain, c, s)?;
    Ok(g.mean_abs_diff(rec, x)?)
}

/// `(content_term, style_term)`: codes recovered after decoding the content
/// of `x` with `styles` in the other domain and encoding again.
pub fn latent_recon_loss<T: Element>(
    g: &mut Graph<T>,
    model: &dyn Translator<T>,
    source: Domain,
    x: Var,
    styles: Var,
) -> Result<(Var, Var)> {
    batch_size(g, x)?;
    let c = model.encode_content(g, source, x)?;
    let fake = model.decode(g, source.other(), c, styles)?;
    let (c_rec, s_rec) = model.encode(g, source.other(), fake)?;
    Ok((g.mean_abs_diff(c_rec, c)?, g.mean_abs_diff(s_rec, styles)?))
}

/// Round trip of `x` through the other domain with sampled `styles`, decoded
/// back with the style encoded from `x`.
pub fn style_cycle_loss<T: Element>(
    g: &mut Graph<T>,
    model: &dyn Translator<T>,
    source: Domain,
    x: Var,
    styles: Var,
) -> Result<Var> {
    batch_size(g, x)?;
    let (c, s) = model.encode(g, source, x)?;
    let fake = model.decode(g, source.other(), c, styles)?;
    let c_back = model.encode_content(g, source.other(), fake)?;
    let back = model.decode(g, source, c_back, s)?;
    Ok(g.mean_abs_diff(back, x)?)
}

/// Convolutional feature extractor used by the perceptual loss.
pub trait FeatureNet<T: Element>: Send + Sync {
    /// Feature maps `[N, C, h, w]`.
    fn features(&self, g: &mut Graph<T>, x: Var) -> Result<Var>;

    fn is_trained(&self) -> bool;
}

/// Mean squared distance between instance-normalized features of `x_out` and
/// `x_ref`. Normalizing each feature channel discards its mean and scale, which
/// carry most of the domain-specific appearance.
pub fn perceptual_loss_din<T: Element>(
    g: &mut Graph<T>,
    net: &dyn FeatureNet<T>,
    x_out: Var,
    x_ref: Var,
) -> Result<Var> {
    if !net.is_trained() {
        return Err(invalid("perceptual feature extractor is untrained"));
    }
    let fo = net.features(g, x_out)?;
    let fr = net.features(g, x_ref)?;
    let fo = g.instance_norm(fo, NORM_EPS)?;
    let fr = g.instance_norm(fr, NORM_EPS)?;
    Ok(g.mean_sq_diff(fo, fr)?)
}

/// Inputs of one generator update.
pub struct GenInputs<'a, T: Element> {
    pub x: [Var; 2],
    /// Styles sampled for translations into each domain.
    pub prior: [Var; 2],
    pub weights: &'a LossWeights,
    pub gan: &'a dyn GanObjective<T>,
    pub dis: Option<&'a dyn Discriminate<T>>,
    pub perceptual: Option<&'a dyn FeatureNet<T>>,
}

/// All generator terms from one shared forward pass, plus their weighted total.
///
/// Adversarial terms are produced only when a discriminator is supplied, so
/// the oracle can be scored on the remaining terms.
pub fn generator_terms<T: Element>(
    g: &mut Graph<T>,
    model: &dyn Translator<T>,
    inp: &GenInputs<'_, T>,
) -> Result<Vec<(&'static str, Var)>> {
    let mut out = Vec::new();
    let mut codes = Vec::with_capacity(2);
    for d in Domain::BOTH {
        let x = inp.x[d.index()];
        batch_size(g, x)?;
        let (c, s) = model.encode(g, d, x)?;
        let rec = model.decode(g, d, c, s)?;
        out.push((term::recon_x(d), g.mean_abs_diff(rec, x)?));
        codes.push((c, s));
    }
    for src in Domain::BOTH {
        let dst = src.other();
        let x = inp.x[src.index()];
        let (c, s) = codes[src.index()];
        let styles = inp.prior[dst.index()];
        let fake = model.decode(g, dst, c, styles)?;
        let (c_rec, s_rec) = model.encode(g, dst, fake)?;
        out.push((term::recon_c(src), g.mean_abs_diff(c_rec, c)?));
        out.push((term::recon_s(dst), g.mean_abs_diff(s_rec, styles)?));
        if let Some(dis) = inp.dis {
            let maps = dis.discriminate(g, dst, fake)?;
            out.push((term::gan(dst), inp.gan.g_loss(g, &maps)?));
        }
        if inp.weights.lambda_cyc > 0.0 {
            let back = model.decode(g, src, c_rec, s)?;
            out.push((term::cyc(src), g.mean_abs_diff(back, x)?));
        }
        if inp.weights.lambda_perc > 0.0 {
            let net = inp
                .perceptual
                .ok_or_else(|| invalid("lambda_perc > 0 requires a perceptual feature network"))?;
            out.push((term::perc(src), perceptual_loss_din(g, net, fake, x)?));
        }
    }
    Ok(out)
}

/// Weighted sum of named graph terms.
pub fn weighted_total<T: Element>(
    g: &mut Graph<T>,
    terms: &[(&'static str, Var)],
    weights: &LossWeights,
) -> Result<Var> {
    let mut parts = Vec::new();
    for (name, w) in weights.coefficients() {
        let v = terms
            .iter()
            .find(|(n, _)| *n == name)
            .map(|&(_, v)| v)
            .ok_or_else(|| invalid(format!("missing loss term `{name}`")))?;
        parts.push((v, w));
    }
    Ok(g.weighted_sum(&parts)?)
}

/// Discriminator losses on real images and detached translations.
pub fn discriminator_terms<T: Element>(
    g: &mut Graph<T>,
    dis: &dyn Discriminate<T>,
    gan: &dyn GanObjective<T>,
    real: [Var; 2],
    fake: [Var; 2],
) -> Result<Vec<(&'static str, Var)>> {
    let mut out = Vec::with_capacity(2);
    for d in Domain::BOTH {
        let r = dis.discriminate(g, d, real[d.index()])?;
        let f = dis.discriminate(g, d, fake[d.index()])?;
        out.push((term::dis(d), gan.d_loss(g, &r, &f)?));
    }
    Ok(out)
}

/// Reads term values, failing on the first non-finite one.
pub fn read_terms<T: Element>(
    g: &Graph<T>,
    terms: &[(&'static str, Var)],
    step: u64,
) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for &(name, v) in terms {
        let value = g.item(v)?.as_f64();
        if !value.is_finite() {
            return Err(MunitError::NonFiniteLoss {
                term: name.to_string(),
                step,
            });
        }
        out.insert(name.to_string(), value);
    }
    Ok(out)
}
