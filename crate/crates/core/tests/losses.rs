mod common;

use std::collections::BTreeMap;

use munit::data_synth::OracleTranslator;
use munit::losses::{
    discriminator_terms, gan_objectives, generator_terms, image_recon_loss, latent_recon_loss, read_terms,
    style_cycle_loss, term, total_generator_loss, weighted_total, BceGan, GanObjective, GenInputs, LossWeights,
    LsGan,
};
use munit::model::{ArchConfig, Munit, Translator};
use munit::Domain;
use tensorkit::gradcheck::GradCheck;
use tensorkit::{Graph, Rng, Tensor, TensorError, Var};

fn batch<T: tensorkit::Element>(images: &[Tensor<f32>]) -> Tensor<T> {
    Tensor::stack_batch(images).unwrap().cast()
}

fn tiny_arch() -> ArchConfig {
    ArchConfig {
        image_size: 16,
        base_channels: 2,
        n_res: 1,
        style_dim: 2,
        mlp_dim: 4,
        d_layers: 2,
        ..ArchConfig::default()
    }
}

fn maps(g: &mut Graph<f64>, values: &[f64]) -> Vec<Var> {
    let shapes: [&[usize]; 2] = [&[2, 1, 4, 4], &[2, 1, 2, 2]];
    shapes
        .iter()
        .zip(values)
        .map(|(s, &v)| g.constant(Tensor::full(s.to_vec(), v)))
        .collect()
}

#[test]
fn oracle_scores_zero_on_reconstruction_terms() {
    let oracle = OracleTranslator::new(32).unwrap();
    let [a, b] = common::synth_pair(6, 32, 3);
    let mut rng = Rng::new(11);
    let mut g = Graph::<f64>::new();
    let x = [g.constant(batch(&a)), g.constant(batch(&b))];
    let prior = [
        g.constant(Translator::<f64>::sample_style(&oracle, Domain::One, 6, &mut rng)),
        g.constant(Translator::<f64>::sample_style(&oracle, Domain::Two, 6, &mut rng)),
    ];
    let weights = LossWeights {
        lambda_cyc: 10.0,
        ..LossWeights::default()
    };
    let gan = LsGan;
    let terms = generator_terms(
        &mut g,
        &oracle,
        &GenInputs {
            x,
            prior,
            weights: &weights,
            gan: &gan,
            dis: None,
            perceptual: None,
        },
    )
    .unwrap();
    let values = read_terms(&g, &terms, 0).unwrap();
    assert_eq!(values.len(), 8);
    for (name, v) in &values {
        assert!(v.abs() <= 1e-6, "{name} = {v}");
    }
}

#[test]
fn oracle_individual_losses_vanish() {
    let oracle = OracleTranslator::new(32).unwrap();
    let a = common::synth_images(Domain::Two, 4, 32, 5);
    let mut rng = Rng::new(2);
    let mut g = Graph::<f64>::new();
    let x = g.constant(batch(&a));
    let s = g.constant(Translator::<f64>::sample_style(&oracle, Domain::One, 4, &mut rng));
    let rec = image_recon_loss(&mut g, &oracle, Domain::Two, x).unwrap();
    let (lc, ls) = latent_recon_loss(&mut g, &oracle, Domain::Two, x, s).unwrap();
    let cyc = style_cycle_loss(&mut g, &oracle, Domain::Two, x, s).unwrap();
    for v in [rec, lc, ls, cyc] {
        assert!(g.item(v).unwrap().abs() <= 1e-6);
    }
}

#[test]
fn random_init_losses_are_positive_and_batch_independent() {
    let model = Munit::<f64>::new(&tiny_arch(), 4).unwrap();
    let a = common::synth_images(Domain::One, 2, 16, 9);
    let mut rng = Rng::new(3);
    let s: Tensor<f64> = model.sample_style(Domain::Two, 1, &mut rng);
    let eval = |imgs: Vec<Tensor<f32>>, styles: Tensor<f64>| {
        let mut g = Graph::<f64>::new();
        let x = g.constant(batch(&imgs));
        let sv = g.constant(styles);
        let rec = image_recon_loss(&mut g, &model, Domain::One, x).unwrap();
        let (lc, ls) = latent_recon_loss(&mut g, &model, Domain::One, x, sv).unwrap();
        let cyc = style_cycle_loss(&mut g, &model, Domain::One, x, sv).unwrap();
        [rec, lc, ls, cyc].map(|v| g.item(v).unwrap())
    };
    let single = eval(vec![a[0].clone()], s.clone());
    let doubled = eval(
        vec![a[0].clone(), a[0].clone()],
        Tensor::stack_batch(&[s.clone(), s.clone()]).unwrap(),
    );
    for (x, y) in single.iter().zip(&doubled) {
        assert!(*x > 0.0);
        assert!((x - y).abs() < 1e-12, "{x} vs {y}");
    }
}

#[test]
fn lsgan_hand_values() {
    let mut g = Graph::<f64>::new();
    let (real1, fake0) = (maps(&mut g, &[1.0, 1.0]), maps(&mut g, &[0.0, 0.0]));
    let (fake1, half) = (maps(&mut g, &[1.0, 1.0]), maps(&mut g, &[0.5, 0.5]));
    let d = LsGan.d_loss(&mut g, &real1, &fake0).unwrap();
    let g0 = LsGan.g_loss(&mut g, &fake0).unwrap();
    let g1 = LsGan.g_loss(&mut g, &fake1).unwrap();
    let dh = LsGan.d_loss(&mut g, &half, &half).unwrap();
    assert_eq!(g.item(d).unwrap(), 0.0);
    assert_eq!(g.item(g0).unwrap(), 1.0);
    assert_eq!(g.item(g1).unwrap(), 0.0);
    assert!((g.item(dh).unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn bce_hand_values() {
    let mut g = Graph::<f64>::new();
    let zero = maps(&mut g, &[0.0, 0.0]);
    let d = BceGan.d_loss(&mut g, &zero, &zero).unwrap();
    let gl = BceGan.g_loss(&mut g, &zero).unwrap();
    let ln2 = std::f64::consts::LN_2;
    assert!((g.item(d).unwrap() - 2.0 * ln2).abs() < 1e-12);
    assert!((g.item(gl).unwrap() - ln2).abs() < 1e-12);
    let confident = maps(&mut g, &[30.0, 30.0]);
    let gc = BceGan.g_loss(&mut g, &confident).unwrap();
    assert!(g.item(gc).unwrap() < 1e-12);
}

#[test]
fn gan_objective_rejects_mismatched_maps() {
    let mut g = Graph::<f64>::new();
    let two = maps(&mut g, &[1.0, 1.0]);
    assert!(LsGan.d_loss(&mut g, &two[..1], &two).is_err());
    assert!(LsGan.g_loss(&mut g, &[]).is_err());
}

#[test]
fn objective_registry() {
    let reg = gan_objectives::<f32>();
    assert_eq!(reg.get("lsgan").unwrap()().name(), "lsgan");
    assert_eq!(reg.get("bce").unwrap()().name(), "bce");
    assert!(reg.get("wgan").is_err());
}

fn all_ones() -> BTreeMap<String, f64> {
    LossWeights {
        lambda_cyc: 1.0,
        lambda_perc: 1.0,
        ..LossWeights::default()
    }
    .coefficients()
    .into_iter()
    .map(|(n, _)| (n.to_string(), 1.0))
    .collect()
}

#[test]
fn total_with_unit_terms() {
    let terms = all_ones();
    let w = LossWeights::default();
    assert_eq!(total_generator_loss(&terms, &w).unwrap(), 26.0);
    let zero = LossWeights {
        lambda_x: 0.0,
        lambda_c: 0.0,
        lambda_s: 0.0,
        ..LossWeights::default()
    };
    assert_eq!(total_generator_loss(&terms, &zero).unwrap(), 2.0);
    let with_cyc = LossWeights {
        lambda_cyc: 10.0,
        ..w
    };
    assert_eq!(total_generator_loss(&terms, &with_cyc).unwrap(), 46.0);
}

#[test]
fn default_weights() {
    let w = LossWeights::default();
    assert_eq!((w.lambda_x, w.lambda_c, w.lambda_s), (10.0, 1.0, 1.0));
    assert_eq!(w.coefficients().len(), 8);
    assert!(LossWeights { lambda_s: -1.0, ..w }.validate().is_err());
    assert!(LossWeights { lambda_x: f64::NAN, ..w }.validate().is_err());
}

#[test]
fn missing_term_is_an_error() {
    let mut terms = all_ones();
    terms.remove(term::RECON_S2);
    assert!(total_generator_loss(&terms, &LossWeights::default()).is_err());
}

#[test]
fn graph_total_matches_scalar_total() {
    let mut g = Graph::<f64>::new();
    let names = LossWeights::default().coefficients();
    let terms: Vec<(&'static str, Var)> = names
        .iter()
        .enumerate()
        .map(|(i, &(n, _))| (n, g.constant(Tensor::scalar(0.5 + i as f64))))
        .collect();
    let w = LossWeights::default();
    let total = weighted_total(&mut g, &terms, &w).unwrap();
    let scalar = total_generator_loss(&read_terms(&g, &terms, 0).unwrap(), &w).unwrap();
    assert!((g.item(total).unwrap() - scalar).abs() < 1e-12);
}

#[test]
fn non_finite_term_is_named() {
    let mut g = Graph::<f64>::new();
    let terms = [(term::RECON_C1, g.constant(Tensor::scalar(f64::INFINITY)))];
    let err = read_terms(&g, &terms, 7).unwrap_err();
    assert!(err.to_string().contains("recon_c1"));
}

fn as_tensor_err(e: munit::MunitError) -> TensorError {
    TensorError::InvalidArgument {
        op: "objective",
        reason: e.to_string(),
    }
}

#[test]
fn full_objectives_gradcheck() {
    let arch = tiny_arch();
    let base = Munit::<f64>::new(&arch, 21).unwrap();
    let [a, b] = common::synth_pair(2, 16, 4);
    let (xa, xb) = (batch::<f64>(&a), batch::<f64>(&b));
    let mut rng = Rng::new(8);
    let prior = [
        base.sample_style(Domain::One, 2, &mut rng),
        base.sample_style(Domain::Two, 2, &mut rng),
    ];
    let weights = LossWeights {
        lambda_cyc: 1.0,
        ..LossWeights::default()
    };
    // L1 terms and ReLUs have kinks; a wide stencil straddles them.
    let check = GradCheck {
        eps: 1e-5,
        floor: 1e-6,
        max_coords: 2,
    };
    let objective = |g: &mut Graph<f64>, store: &tensorkit::ParamStore<f64>, dis_side: bool| -> munit::Result<Var> {
        let mut model = base.clone();
        *model.store_mut() = store.clone();
        let x = [g.constant(xa.clone()), g.constant(xb.clone())];
        let p = [g.constant(prior[0].clone()), g.constant(prior[1].clone())];
        let gan = LsGan;
        if dis_side {
            let fake = [
                model.translate(g, Domain::Two, x[1], p[0])?,
                model.translate(g, Domain::One, x[0], p[1])?,
            ];
            let terms = discriminator_terms(g, &model, &gan, x, fake)?;
            Ok(g.add(terms[0].1, terms[1].1)?)
        } else {
            let inp = GenInputs {
                x,
                prior: p,
                weights: &weights,
                gan: &gan,
                dis: Some(&model),
                perceptual: None,
            };
            let terms = generator_terms(g, &model, &inp)?;
            weighted_total(g, &terms, &weights)
        }
    };
    for dis_side in [false, true] {
        let report = check
            .params(base.store(), &mut rng, |g, store| {
                objective(g, store, dis_side).map_err(as_tensor_err)
            })
            .unwrap();
        assert!(report.coords > 50);
        assert!(report.max_rel_err <= 1e-3, "dis_side={dis_side}: {report:?}");
    }
}
