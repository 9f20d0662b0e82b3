mod common;

use std::sync::OnceLock;

use munit::data_synth::{sample_scene, sample_style, Labeled, LabeledSet, ModeLabel, MODES};
use munit::metrics::{
    cis, cis_from_posteriors, diversity_distance, evaluate, feature_distance_histograms, feature_distances,
    is_from_posteriors, map_indexed, real_pair_distance, same_domain_pairs, same_scene_pairs, train_mode_classifier,
    ClassifierConfig, InputPosteriors, MetricConfig, ModeClassifier,
};
use munit::model::{translators, ArchConfig};
use munit::Domain;
use proptest::prelude::*;
use tensorkit::Rng;

const LN_2: f64 = std::f64::consts::LN_2;

fn labeled_set(domain: Domain, n: usize, seed: u64, label: ModeLabel) -> LabeledSet {
    let mut rng = Rng::new(seed);
    let labels = (0..n)
        .map(|i| {
            let scene = sample_scene(&mut rng);
            let style = sample_style(domain, &mut rng);
            Labeled {
                filename: format!("{i:05}.png"),
                mode: label.mode(&scene, &style),
                scene,
                style,
            }
        })
        .collect();
    LabeledSet::render(domain, labels, 32).unwrap()
}

fn quick_config() -> ClassifierConfig {
    ClassifierConfig {
        base_channels: 8,
        epochs: 4,
        ..ClassifierConfig::default()
    }
}

/// Hue classifier on domain 2, shared by every test in this binary.
fn classifier() -> &'static ModeClassifier {
    static CELL: OnceLock<ModeClassifier> = OnceLock::new();
    CELL.get_or_init(|| {
        let set = labeled_set(Domain::Two, 600, 1, ModeLabel::Hue);
        train_mode_classifier(&set, &ClassifierConfig::default()).unwrap()
    })
}

fn small_metric_config() -> MetricConfig {
    MetricConfig {
        inputs: 6,
        samples_per_input: 8,
        diversity_inputs: 4,
        pairs_per_input: 3,
        ..MetricConfig::default()
    }
}

fn one_hot(k: usize, i: usize) -> Vec<f64> {
    (0..k).map(|j| if j == i { 1.0 } else { 0.0 }).collect()
}

#[test]
fn two_opposite_samples_give_ln2() {
    let inp = [InputPosteriors::uniform(vec![vec![1.0, 0.0], vec![0.0, 1.0]])];
    assert!((cis_from_posteriors(&inp).unwrap() - LN_2).abs() < 1e-12);
}

#[test]
fn deterministic_distinct_inputs_have_zero_cis_but_ln2_is() {
    let inp = [
        InputPosteriors::uniform(vec![vec![1.0, 0.0]; 3]),
        InputPosteriors::uniform(vec![vec![0.0, 1.0]; 3]),
    ];
    assert!(cis_from_posteriors(&inp).unwrap().abs() < 1e-12);
    assert!((is_from_posteriors(&inp).unwrap() - LN_2).abs() < 1e-12);
}

#[test]
fn uniform_one_hot_outputs_give_ln_k() {
    let k = 5;
    let rows: Vec<Vec<f64>> = (0..k).map(|i| one_hot(k, i)).collect();
    let inp = vec![InputPosteriors::uniform(rows); 3];
    assert!((is_from_posteriors(&inp).unwrap() - (k as f64).ln()).abs() < 1e-12);
    let constant = [InputPosteriors::uniform(vec![one_hot(k, 2); 4])];
    assert!(is_from_posteriors(&constant).unwrap().abs() < 1e-12);
}

/// Exact scores of a discrete generator: input `i` emits outcome `o` with
/// probability `counts[i][o] / sum`, outcome `o` has posterior `post[o]`.
fn brute_force(counts: &[Vec<u32>], post: &[Vec<f64>]) -> (f64, f64) {
    let k = post[0].len();
    let q: Vec<Vec<f64>> = counts
        .iter()
        .map(|c| {
            let s: u32 = c.iter().sum();
            c.iter().map(|&v| v as f64 / s as f64).collect()
        })
        .collect();
    let mix = |w: &[f64]| -> Vec<f64> {
        (0..k).map(|y| w.iter().zip(post).map(|(wo, r)| wo * r[y]).sum()).collect()
    };
    let expected_kl = |w: &[f64], m: &[f64]| -> f64 {
        let mut t = 0.0;
        for (wo, r) in w.iter().zip(post) {
            for y in 0..k {
                if r[y] > 0.0 {
                    t += wo * r[y] * (r[y] / m[y]).ln();
                }
            }
        }
        t
    };
    let n = q.len() as f64;
    let cis: f64 = q.iter().map(|w| expected_kl(w, &mix(w))).sum::<f64>() / n;
    let pooled: Vec<f64> = (0..k)
        .map(|y| q.iter().map(|w| mix(w)[y]).sum::<f64>() / n)
        .collect();
    let is: f64 = q.iter().map(|w| expected_kl(w, &pooled)).sum::<f64>() / n;
    (cis, is)
}

fn expand(counts: &[Vec<u32>], post: &[Vec<f64>]) -> Vec<InputPosteriors> {
    counts
        .iter()
        .map(|c| {
            let rows = c
                .iter()
                .enumerate()
                .flat_map(|(o, &n)| std::iter::repeat_n(post[o].clone(), n as usize))
                .collect();
            InputPosteriors::uniform(rows)
        })
        .collect()
}

fn posterior_strategy(outcomes: usize, k: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.0f64..1.0, k), outcomes).prop_map(|rows| {
        rows.into_iter()
            .map(|r| {
                let s: f64 = r.iter().sum::<f64>() + 1e-3;
                r.iter().map(|v| (v + 1e-3 / r.len() as f64) / s).collect()
            })
            .collect()
    })
}

fn counts_strategy(inputs: usize, outcomes: usize) -> impl Strategy<Value = Vec<Vec<u32>>> {
    prop::collection::vec(prop::collection::vec(0u32..6, outcomes), inputs).prop_filter("each input emits something", |c| {
        c.iter().all(|row| row.iter().sum::<u32>() > 0)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn estimators_match_brute_force(
        (counts, post) in (1usize..5, 1usize..6).prop_flat_map(|(n, m)| (counts_strategy(n, m), posterior_strategy(m, 4)))
    ) {
        let (cis_exact, is_exact) = brute_force(&counts, &post);
        let inp = expand(&counts, &post);
        prop_assert!((cis_from_posteriors(&inp).unwrap() - cis_exact).abs() <= 1e-6);
        prop_assert!((is_from_posteriors(&inp).unwrap() - is_exact).abs() <= 1e-6);
        let weighted: Vec<InputPosteriors> = counts
            .iter()
            .map(|c| InputPosteriors { probs: post.clone(), weights: c.iter().map(|&v| v as f64).collect() })
            .collect();
        prop_assert!((cis_from_posteriors(&weighted).unwrap() - cis_exact).abs() <= 1e-6);
        prop_assert!((is_from_posteriors(&weighted).unwrap() - is_exact).abs() <= 1e-6);
    }

    #[test]
    fn scores_ignore_sample_and_input_order(
        counts in counts_strategy(3, 4),
        post in posterior_strategy(4, 3),
        seed in any::<u64>(),
    ) {
        let inp = expand(&counts, &post);
        let mut rng = Rng::new(seed);
        let mut shuffled = inp.clone();
        for p in shuffled.iter_mut() {
            rng.shuffle(&mut p.probs);
        }
        shuffled.reverse();
        let (c0, c1) = (cis_from_posteriors(&inp).unwrap(), cis_from_posteriors(&shuffled).unwrap());
        let (i0, i1) = (is_from_posteriors(&inp).unwrap(), is_from_posteriors(&shuffled).unwrap());
        prop_assert!((c0 - c1).abs() < 1e-12);
        prop_assert!((i0 - i1).abs() < 1e-12);
        prop_assert!(c0 >= -1e-12 && c0 <= i0 + 1e-12);
    }
}

#[test]
fn empty_inputs_are_errors() {
    assert!(cis_from_posteriors(&[]).is_err());
    assert!(is_from_posteriors(&[InputPosteriors::uniform(vec![])]).is_err());
}

#[test]
fn classifier_passes_gate_and_normalizes() {
    let c = classifier();
    let acc = c.accuracy().unwrap();
    assert!(acc > 0.95, "accuracy {acc}");
    c.check_gate().unwrap();
    let test = labeled_set(Domain::Two, 64, 77, ModeLabel::Hue);
    let x = tensorkit::Tensor::stack_batch(&test.images).unwrap();
    for row in c.probs(&x).unwrap() {
        assert_eq!(row.len(), MODES);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
    let right = c
        .predict(&x)
        .unwrap()
        .iter()
        .zip(&test.labels)
        .filter(|(p, l)| **p == l.mode)
        .count();
    assert!(right as f64 / 64.0 > 0.9);
}

#[test]
fn permuted_labels_give_chance_accuracy() {
    let set = labeled_set(Domain::Two, 600, 2, ModeLabel::Hue);
    let mut rng = Rng::new(5);
    let mut labels: Vec<usize> = set.labels.iter().map(|l| l.mode).collect();
    rng.shuffle(&mut labels);
    let cfg = ClassifierConfig {
        holdout: 0.4,
        ..quick_config()
    };
    let c = ModeClassifier::train(&set.images, &labels, MODES, &cfg).unwrap();
    let acc = c.accuracy().unwrap();
    assert!((0.1..=0.4).contains(&acc), "accuracy {acc}");
    assert!(c.check_gate().is_err());
}

#[test]
fn style_blind_translator_has_zero_cis_and_diversity() {
    let arch = ArchConfig::default();
    let ablation = translators().get("cycle_ablation").unwrap()(&arch, 3).unwrap();
    let inputs = common::synth_images(Domain::One, 6, 32, 12);
    let cfg = small_metric_config();
    let report = evaluate(ablation.as_ref(), classifier(), &inputs, &cfg).unwrap();
    assert_eq!(report.cis, 0.0);
    assert_eq!(report.diversity, 0.0);
    assert_eq!(report.inputs, 6);
}

#[test]
fn styled_translator_is_diverse_and_thread_count_invariant() {
    let arch = ArchConfig::default();
    let munit = translators().get("munit").unwrap()(&arch, 3).unwrap();
    let inputs = common::synth_images(Domain::One, 4, 32, 13);
    let one = MetricConfig {
        workers: 1,
        ..small_metric_config()
    };
    let three = MetricConfig { workers: 3, ..one.clone() };
    let d1 = diversity_distance(munit.as_ref(), &inputs, 3, classifier(), &one).unwrap();
    let d3 = diversity_distance(munit.as_ref(), &inputs, 3, classifier(), &three).unwrap();
    assert!(d1 > 0.0);
    assert_eq!(d1, d3);
    let c1 = cis(munit.as_ref(), classifier(), &inputs, 4, &one).unwrap();
    let c3 = cis(munit.as_ref(), classifier(), &inputs, 4, &three).unwrap();
    assert_eq!(c1, c3);
    assert!(c1 >= 0.0);
    let real = real_pair_distance(classifier(), &common::synth_images(Domain::Two, 20, 32, 14)).unwrap();
    assert!(real > 0.0);
}

#[test]
fn single_sample_per_input_is_rejected() {
    let arch = ArchConfig::default();
    let munit = translators().get("munit").unwrap()(&arch, 3).unwrap();
    let inputs = common::synth_images(Domain::One, 2, 32, 13);
    assert!(cis(munit.as_ref(), classifier(), &inputs, 1, &small_metric_config()).is_err());
}

#[test]
fn identical_pairs_have_zero_feature_distance() {
    let imgs = common::synth_images(Domain::One, 5, 32, 21);
    let pairs: Vec<_> = imgs.iter().map(|x| (x.clone(), x.clone())).collect();
    for use_in in [true, false] {
        let d = feature_distances(classifier(), &pairs, use_in).unwrap();
        assert!(d.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn histograms_cover_every_pair() {
    let ss = same_scene_pairs(40, 32, 0).unwrap();
    let sd = same_domain_pairs(40, 32, 0).unwrap();
    let h = feature_distance_histograms(classifier(), &ss, &sd, true, 10).unwrap();
    assert!(h.use_in);
    assert_eq!(h.bins.len(), 10);
    assert_eq!(h.bins.iter().map(|b| b.same_scene).sum::<usize>(), 40);
    assert_eq!(h.bins.iter().map(|b| b.same_domain).sum::<usize>(), 40);
    assert!(h.same_scene_median >= 0.0 && h.same_domain_median > 0.0);
}

#[test]
fn map_indexed_keeps_order() {
    let out = map_indexed(17, 4, |i| Ok(i * i)).unwrap();
    assert_eq!(out, (0..17).map(|i| i * i).collect::<Vec<_>>());
    assert!(map_indexed(5, 2, |i| if i == 3 { Err(munit::MunitError::Invalid("x".into())) } else { Ok(i) }).is_err());
}
