use tensorkit::{Element, Graph, Rng, Tensor};

use super::stats::{auc, energy_test, ks_critical, ks_standard_normal};
use super::{Probe, ProbeContext, ProbeReport, Rule};
use crate::data_synth::{render, rgb_to_tensor, sample_scene, sample_style, OracleTranslator};
use crate::error::{invalid, Result};
use crate::losses::{image_recon_loss, latent_recon_loss, style_cycle_loss};
use crate::metrics::{evaluate, ClassifierConfig, MetricConfig, ModeClassifier};
use crate::model::{infer, translators, Trainable, Translator};
use crate::Domain;

const BATCH: usize = 50;
const CONTROL_SEED: u64 = 0xBAD5EED;
const ORACLE_STREAM: u64 = 0x0AC1;
const LATENT_STREAM: u64 = 0x1A7E;
const JOINT_STREAM: u64 = 0x7013;
const CYCLE_STREAM: u64 = 0xC1C1;

/// Freshly initialized model with the architecture of `model`.
fn untrained(model: &dyn Trainable) -> Result<Box<dyn Trainable>> {
    (translators().get("munit")?)(model.arch(), CONTROL_SEED)
}

fn stack(images: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    Ok(Tensor::stack_batch(images)?)
}

fn rows(t: &Tensor<f32>) -> Vec<Vec<f64>> {
    let n = t.shape()[0];
    let per = t.numel() / n.max(1);
    t.data()
        .chunks_exact(per)
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect()
}

type Rows = Vec<Vec<f64>>;

/// Flattened content and style codes of `images`, one row per image.
fn encode_rows(
    model: &dyn Translator<f32>,
    domain: Domain,
    images: &[Tensor<f32>],
) -> Result<(Rows, Rows)> {
    let (mut content, mut style) = (Vec::new(), Vec::new());
    for chunk in images.chunks(BATCH) {
        let x = stack(chunk)?;
        let mut g = Graph::inference();
        let xv = g.constant(x);
        let (c, s) = model.encode(&mut g, domain, xv)?;
        content.extend(rows(g.value(c)));
        style.extend(rows(g.value(s)));
    }
    Ok((content, style))
}

fn mean_abs<T: Element>(g: &mut Graph<T>, a: tensorkit::Var, b: tensorkit::Var) -> Result<f64> {
    let d = g.mean_abs_diff(a, b)?;
    Ok(g.item(d)?.as_f64())
}

fn synth_images(domain: Domain, n: usize, size: usize, rng: &mut Rng) -> Result<Vec<Tensor<f32>>> {
    (0..n)
        .map(|_| {
            let scene = sample_scene(rng);
            let style = sample_style(domain, rng);
            Ok(rgb_to_tensor(&render(&scene, &style, size)?))
        })
        .collect()
}

/// Images of `domain` from the test split when present, else freshly
/// rendered ones.
fn probe_images(ctx: &ProbeContext<'_>, domain: Domain, n: usize, size: usize, rng: &mut Rng) -> Result<Vec<Tensor<f32>>> {
    match ctx.test {
        Some(sets) if sets[domain.index()].len() >= n => Ok(sets[domain.index()].images[..n].to_vec()),
        _ => synth_images(domain, n, size, rng),
    }
}

/// The renderer and its exact inverse attain zero on every reconstruction
/// and cycle objective; an untrained network does not.
#[derive(Default)]
pub struct OracleMinimum;

impl Probe for OracleMinimum {
    fn name(&self) -> &'static str {
        "oracle_minimum"
    }

    fn run(&self, ctx: &ProbeContext<'_>) -> Result<ProbeReport> {
        let cfg = ctx.config;
        let size = ctx.model.map_or(32, |m| m.image_size());
        let oracle = OracleTranslator::new(size)?;
        let mut report = ProbeReport::new(self.name(), "oracle");
        report.param("images_per_domain", cfg.oracle_images as f64);
        report.param("tolerance", 1e-6);
        let mut rng = Rng::with_stream(cfg.seed, ORACLE_STREAM);
        let mut control_x = Vec::new();
        for d in Domain::BOTH {
            let images = probe_images(ctx, d, cfg.oracle_images, size, &mut rng)?;
            let x = stack(&images)?.cast::<f64>();
            let n = images.len();
            let styles = <OracleTranslator as Translator<f64>>::sample_style(&oracle, d.other(), n, &mut rng);
            let mut g = Graph::<f64>::inference();
            let xv = g.constant(x);
            let sv = g.constant(styles);
            let rx = image_recon_loss(&mut g, &oracle, d, xv)?;
            let (rc, rs) = latent_recon_loss(&mut g, &oracle, d, xv, sv)?;
            let cyc = style_cycle_loss(&mut g, &oracle, d, xv, sv)?;
            let k = d.number();
            for (name, v) in [("recon_x", rx), ("recon_c", rc), ("recon_s", rs), ("cyc", cyc)] {
                let value = g.item(v)?;
                report.hard(format!("{name}{k}"), value, Rule::AtMost, 1e-6);
            }
            control_x.push(images);
        }
        let arch = match ctx.model {
            Some(m) => m.arch().clone(),
            None => crate::model::ArchConfig {
                image_size: size,
                ..Default::default()
            },
        };
        let control = (translators().get("munit")?)(&arch, CONTROL_SEED)?;
        for (d, images) in Domain::BOTH.into_iter().zip(&control_x) {
            let x = stack(&images[..images.len().min(BATCH)])?;
            let mut g = Graph::inference();
            let xv = g.constant(x);
            let rx = image_recon_loss(&mut g, control.as_ref(), d, xv)?;
            let value = g.item(rx)? as f64;
            report.hard(format!("untrained.recon_x{}", d.number()), value, Rule::AtLeast, 1e-3);
        }
        Ok(report)
    }
}

fn ks_dims(styles: &[Vec<f64>]) -> Result<Vec<f64>> {
    let dim = styles.first().map_or(0, Vec::len);
    (0..dim)
        .map(|k| ks_standard_normal(&styles.iter().map(|r| r[k]).collect::<Vec<_>>()))
        .collect()
}

fn passing(stats: &[f64], crit: f64) -> f64 {
    stats.iter().filter(|&&d| d < crit).count() as f64
}

/// Encoded styles against their Gaussian prior (per-dimension KS) and the
/// content codes of the two domains against each other (energy distance).
#[derive(Default)]
pub struct LatentMatching;

impl Probe for LatentMatching {
    fn name(&self) -> &'static str {
        "latent_matching"
    }

    fn run(&self, ctx: &ProbeContext<'_>) -> Result<ProbeReport> {
        let cfg = ctx.config;
        let model = ctx.model(self.name())?;
        let sets = ctx.test(self.name())?;
        let n = cfg.latent_samples;
        if let Some(s) = sets.iter().find(|s| s.len() < n) {
            return Err(invalid(format!(
                "latent_matching needs {n} test images per domain, domain {} has {}",
                s.domain,
                s.len()
            )));
        }
        let crit = ks_critical(n, cfg.ks_alpha);
        let mut report = ProbeReport::new(self.name(), model.name());
        report.param("samples_per_domain", n as f64);
        report.param("ks_alpha", cfg.ks_alpha);
        report.param("ks_critical", crit);
        report.param("energy_points", cfg.energy_points as f64);
        report.param("energy_permutations", cfg.energy_permutations as f64);
        let mut rng = Rng::with_stream(cfg.seed, LATENT_STREAM);
        let dim = model.style_dim();

        let prior = model.sample_style(Domain::One, n, &mut rng);
        let prior_ks = ks_dims(&rows(&prior))?;
        report.hard("prior.ks_dims_passing", passing(&prior_ks, crit), Rule::AtLeast, dim as f64);

        let control = untrained(model)?;
        let mut codes = Vec::new();
        let mut control_codes = Vec::new();
        for d in Domain::BOTH {
            let images = &sets[d.index()].images[..n];
            let (content, styles) = encode_rows(model, d, images)?;
            let stats = ks_dims(&styles)?;
            for (k, s) in stats.iter().enumerate() {
                report.info(format!("domain{}.ks.dim{k}", d.number()), *s);
            }
            report.soft(
                format!("domain{}.ks_dims_passing", d.number()),
                passing(&stats, crit),
                Rule::AtLeast,
                cfg.ks_min_dims as f64,
            );
            let (c_content, c_styles) = encode_rows(control.as_ref(), d, images)?;
            let c_stats = ks_dims(&c_styles)?;
            report.hard(
                format!("untrained.domain{}.ks_dims_passing", d.number()),
                passing(&c_stats, crit),
                Rule::AtMost,
                0.0,
            );
            codes.push(content);
            control_codes.push(c_content);
        }

        let m = cfg.energy_points.min(n / 2);
        let same = energy_test(&codes[0][..m], &codes[0][m..2 * m], cfg.energy_permutations, &mut rng)?;
        report.info("same_domain_halves.energy", same.distance);
        report.hard("same_domain_halves.energy_p_value", same.p_value, Rule::AtLeast, cfg.ks_alpha);
        let cross = energy_test(&codes[0][..m], &codes[1][..m], cfg.energy_permutations, &mut rng)?;
        report.info("content.energy", cross.distance);
        report.soft("content.energy_p_value", cross.p_value, Rule::AtLeast, cfg.ks_alpha);
        let neg = energy_test(
            &control_codes[0][..m],
            &control_codes[1][..m],
            cfg.energy_permutations,
            &mut rng,
        )?;
        report.info("untrained.content.energy", neg.distance);
        report.hard("untrained.content.energy_p_value", neg.p_value, Rule::AtMost, cfg.ks_alpha);
        Ok(report)
    }
}

/// Stacks two `[N, C, H, W]` batches along channels.
pub fn concat_channels(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (n, ca, h, w) = a.dims4("concat_channels")?;
    let (nb, cb, hb, wb) = b.dims4("concat_channels")?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(invalid(format!("cannot concatenate {:?} and {:?}", a.shape(), b.shape())));
    }
    let (pa, pb) = (ca * h * w, cb * h * w);
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    for i in 0..n {
        data.extend_from_slice(&a.data()[i * pa..(i + 1) * pa]);
        data.extend_from_slice(&b.data()[i * pb..(i + 1) * pb]);
    }
    Ok(Tensor::new([n, ca + cb, h, w], data)?)
}

/// `(x, translation)` pairs out of `source` with prior styles, as 6-channel
/// images ordered (domain 1, domain 2).
fn joint_pairs(
    model: &dyn Translator<f32>,
    source: Domain,
    images: &[Tensor<f32>],
    rng: &mut Rng,
) -> Result<Vec<Tensor<f32>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(BATCH) {
        let x = stack(chunk)?;
        let s = model.sample_style(source.other(), chunk.len(), rng);
        let y = infer(|g| {
            let xv = g.constant(x.clone());
            let sv = g.constant(s);
            model.translate(g, source, xv, sv)
        })?;
        let joint = match source {
            Domain::One => concat_channels(&x, &y)?,
            Domain::Two => concat_channels(&y, &x)?,
        };
        for i in 0..chunk.len() {
            out.push(joint.batch_item(i)?);
        }
    }
    Ok(out)
}

/// Held-out AUC of a small classifier trained to tell population `a` from
/// population `b`; each population is split in half for training and
/// evaluation.
fn two_sample_auc(a: &[Tensor<f32>], b: &[Tensor<f32>], epochs: usize, seed: u64) -> Result<f64> {
    let (ha, hb) = (a.len() / 2, b.len() / 2);
    let mut images = a[..ha].to_vec();
    images.extend_from_slice(&b[..hb]);
    let labels: Vec<usize> = (0..ha).map(|_| 0).chain((0..hb).map(|_| 1)).collect();
    let cfg = ClassifierConfig {
        base_channels: 8,
        epochs,
        holdout: 0.0,
        seed,
        ..ClassifierConfig::default()
    };
    let clf = ModeClassifier::train(&images, &labels, 2, &cfg)?;
    let score = |set: &[Tensor<f32>]| -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for chunk in set.chunks(BATCH) {
            out.extend(clf.probs(&stack(chunk)?)?.into_iter().map(|p| p[1]));
        }
        Ok(out)
    };
    auc(&score(&b[hb..])?, &score(&a[ha..])?)
}

/// Classifier two-sample test between `(x1, x1->2)` and `(x2->1, x2)` pairs.
#[derive(Default)]
pub struct JointMatching;

impl Probe for JointMatching {
    fn name(&self) -> &'static str {
        "joint_matching"
    }

    fn run(&self, ctx: &ProbeContext<'_>) -> Result<ProbeReport> {
        let cfg = ctx.config;
        let model = ctx.model(self.name())?;
        let sets = ctx.test(self.name())?;
        let n = cfg.joint_pairs.min(sets[0].len()).min(sets[1].len());
        if n < 4 {
            return Err(invalid("joint_matching needs at least 4 test images per domain"));
        }
        let mut report = ProbeReport::new(self.name(), model.name());
        report.param("pairs_per_population", n as f64);
        report.param("classifier_epochs", cfg.joint_epochs as f64);
        let mut rng = Rng::with_stream(cfg.seed, JOINT_STREAM);
        let one = &sets[0].images[..n];
        let two = &sets[1].images[..n];

        let a = joint_pairs(model, Domain::One, one, &mut rng)?;
        let b = joint_pairs(model, Domain::Two, two, &mut rng)?;
        let calib = two_sample_auc(&a[..n / 2], &a[n / 2..], cfg.joint_epochs, cfg.seed)?;
        report.hard("calibration.auc_deviation", (calib - 0.5).abs(), Rule::AtMost, 0.15);
        report.info("calibration.auc", calib);

        let control = untrained(model)?;
        let ca = joint_pairs(control.as_ref(), Domain::One, one, &mut rng)?;
        let cb = joint_pairs(control.as_ref(), Domain::Two, two, &mut rng)?;
        let neg = two_sample_auc(&ca, &cb, cfg.joint_epochs, cfg.seed)?;
        report.hard("untrained.auc", neg, Rule::AtLeast, 0.9);

        let trained = two_sample_auc(&a, &b, cfg.joint_epochs, cfg.seed)?;
        report.soft("auc", trained, Rule::AtMost, cfg.joint_auc_max);
        Ok(report)
    }
}

/// Errors of one style-augmented round trip `x -> other domain -> x`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CycleErrors {
    /// Mean absolute error of the recovered image.
    pub image_l1: f64,
    /// Mean Euclidean error of the recovered target style.
    pub style_l2: f64,
    /// Within-domain reconstruction error of the same inputs.
    pub recon_x: f64,
    /// Content code drift through the other domain.
    pub recon_c: f64,
    /// Mean absolute error of the recovered target style.
    pub recon_s: f64,
}

/// Translates `x` out of `source` with `styles`, then back with the style
/// encoded from `x`; compares the result with `(x, styles)`.
pub fn style_cycle_errors<T: Element>(
    model: &dyn Translator<T>,
    source: Domain,
    x: &Tensor<T>,
    styles: &Tensor<T>,
) -> Result<CycleErrors> {
    let mut g = Graph::<T>::inference();
    let xv = g.constant(x.clone());
    let sv = g.constant(styles.clone());
    let (c, s_own) = model.encode(&mut g, source, xv)?;
    let rec = model.decode(&mut g, source, c, s_own)?;
    let fake = model.decode(&mut g, source.other(), c, sv)?;
    let (c_back, s_back) = model.encode(&mut g, source.other(), fake)?;
    let back = model.decode(&mut g, source, c_back, s_own)?;
    let dim = styles.shape()[1];
    let style_l2 = {
        let (sb, st) = (g.value(s_back).data(), styles.data());
        let n = st.len() / dim;
        (0..n)
            .map(|i| {
                (0..dim)
                    .map(|k| (sb[i * dim + k].as_f64() - st[i * dim + k].as_f64()).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum::<f64>()
            / n as f64
    };
    Ok(CycleErrors {
        image_l1: mean_abs(&mut g, back, xv)?,
        style_l2,
        recon_x: mean_abs(&mut g, rec, xv)?,
        recon_c: mean_abs(&mut g, c_back, c)?,
        recon_s: mean_abs(&mut g, s_back, sv)?,
    })
}

fn cycle_over<T: Element>(
    model: &dyn Translator<T>,
    source: Domain,
    images: &[Tensor<f32>],
    rng: &mut Rng,
) -> Result<CycleErrors> {
    let mut total = CycleErrors::default();
    for chunk in images.chunks(BATCH) {
        let x = stack(chunk)?.cast::<T>();
        let s = model.sample_style(source.other(), chunk.len(), rng);
        let e = style_cycle_errors(model, source, &x, &s)?;
        let w = chunk.len() as f64 / images.len() as f64;
        total.image_l1 += w * e.image_l1;
        total.style_l2 += w * e.style_l2;
        total.recon_x += w * e.recon_x;
        total.recon_c += w * e.recon_c;
        total.recon_s += w * e.recon_s;
    }
    Ok(total)
}

fn push_cycle(report: &mut ProbeReport, prefix: &str, e: &CycleErrors) {
    report.info(format!("{prefix}style_l2"), e.style_l2);
    report.info(format!("{prefix}recon_x"), e.recon_x);
    report.info(format!("{prefix}recon_c"), e.recon_c);
    report.info(format!("{prefix}recon_s"), e.recon_s);
}

/// Style-augmented round trips recover the input image and the target style.
#[derive(Default)]
pub struct StyleCycle;

impl Probe for StyleCycle {
    fn name(&self) -> &'static str {
        "style_cycle"
    }

    fn run(&self, ctx: &ProbeContext<'_>) -> Result<ProbeReport> {
        let cfg = ctx.config;
        let model = ctx.model(self.name())?;
        let sets = ctx.test(self.name())?;
        let n = cfg.cycle_images.min(sets[0].len()).min(sets[1].len());
        if n == 0 {
            return Err(invalid("style_cycle needs test images"));
        }
        let mut report = ProbeReport::new(self.name(), model.name());
        report.param("images_per_domain", n as f64);
        report.param("ratio", cfg.cycle_ratio);
        let oracle = OracleTranslator::new(model.image_size())?;
        let control = untrained(model)?;
        for d in Domain::BOTH {
            let k = d.number();
            let images = &sets[d.index()].images[..n];
            let mut rng = Rng::with_stream(cfg.seed, CYCLE_STREAM).split(d.index() as u64);
            let e = cycle_over::<f32>(model, d, images, &mut rng)?;
            report.soft(format!("domain{k}.image_l1"), e.image_l1, Rule::AtMost, cfg.cycle_ratio * e.recon_x);
            push_cycle(&mut report, &format!("domain{k}."), &e);

            let o = cycle_over::<f64>(&oracle, d, images, &mut rng)?;
            report.hard(format!("oracle.domain{k}.image_l1"), o.image_l1, Rule::AtMost, 1e-6);
            report.hard(format!("oracle.domain{k}.style_l2"), o.style_l2, Rule::AtMost, 1e-6);

            let c = cycle_over::<f32>(control.as_ref(), d, images, &mut rng)?;
            report.hard(format!("untrained.domain{k}.image_l1"), c.image_l1, Rule::AtLeast, 1e-3);
            push_cycle(&mut report, &format!("untrained.domain{k}."), &c);
        }
        Ok(report)
    }
}

/// Diversity and CIS of the full model against the deterministic-cycle
/// ablation on the same inputs.
#[derive(Default)]
pub struct CycleCollapse;

impl Probe for CycleCollapse {
    fn name(&self) -> &'static str {
        "cycle_collapse"
    }

    fn run(&self, ctx: &ProbeContext<'_>) -> Result<ProbeReport> {
        let cfg = ctx.config;
        let model = ctx.model(self.name())?;
        let mut report = ProbeReport::new(self.name(), model.name());
        report.param("inputs", cfg.metric_inputs as f64);
        report.param("samples_per_input", cfg.metric_samples as f64);
        report.param("diversity_inputs", cfg.diversity_inputs as f64);
        report.param("pairs_per_input", cfg.diversity_pairs as f64);
        if let Some(why) = &ctx.ablation_failure {
            report.inconclusive(format!("ablation training failed: {why}"));
            return Ok(report);
        }
        let ablation = ctx.ablation.ok_or_else(|| super::missing(self.name(), "a trained ablation"))?;
        let classifier = ctx
            .classifier
            .ok_or_else(|| super::missing(self.name(), "a mode classifier"))?;
        let sets = ctx.test(self.name())?;
        let metric = MetricConfig {
            source: Domain::One,
            inputs: cfg.metric_inputs,
            samples_per_input: cfg.metric_samples,
            diversity_inputs: cfg.diversity_inputs,
            pairs_per_input: cfg.diversity_pairs,
            seed: cfg.seed,
            ..MetricConfig::default()
        };
        let full = evaluate(model, classifier, &sets[0].images, &metric)?;
        let abl = evaluate(ablation, classifier, &sets[0].images, &metric)?;
        report.param("classifier_accuracy", full.classifier_accuracy);
        report.info("munit.diversity", full.diversity);
        report.info("munit.cis", full.cis);
        report.info("munit.is", full.is);
        report.info("ablation.is", abl.is);
        report.soft(
            "ablation.diversity",
            abl.diversity,
            Rule::AtMost,
            cfg.collapse_ratio * full.diversity,
        );
        report.soft("ablation.cis", abl.cis, Rule::AtMost, cfg.ablation_cis_max);
        report.soft("cis_margin", full.cis - abl.cis, Rule::AtLeast, cfg.cis_margin);
        Ok(report)
    }
}
