//! Evaluation of multimodal translation: conditional and unconditional
//! inception scores over a locally trained mode classifier, a perceptual
//! diversity distance, and feature-distance histograms of paired renders.

mod classifier;
mod diversity;
mod histogram;
mod scores;

use serde::{Deserialize, Serialize};
use tensorkit::{Rng, Tensor};

pub use classifier::{argmax, ClassifierConfig, ModeClassifier, ACCURACY_GATE, CLASSIFIER_VERSION};
pub use diversity::{embedding_distance, mean_pair_distance, normalized_embeddings};
pub use histogram::{
    feature_distance_histograms, feature_distances, instance_normalize, median, same_domain_pairs,
    same_scene_pairs, write_histogram_pair, DistanceHistograms, HistogramBin, ImagePair,
};
pub use scores::{cis_from_posteriors, is_from_posteriors, kl, InputPosteriors, PROB_FLOOR};

use crate::data_synth::{LabeledSet, MODES};
use crate::error::{invalid, MunitError, Result};
use crate::kv::KvConfig;
use crate::kv_fields;
use crate::losses::FeatureNet;
use crate::model::{infer, Translator};
use crate::Domain;

const SCORE_STREAM: u64 = 0x5C0E;
const DIVERSITY_STREAM: u64 = 0xD1FF;

/// Worker count from `MUNIT_WORKERS`, else the available parallelism.
pub fn default_workers() -> usize {
    std::env::var("MUNIT_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `f` over `0..n` on `workers` threads. Results keep index order, so
/// the outcome does not depend on the worker count.
pub fn map_indexed<R: Send>(n: usize, workers: usize, f: impl Fn(usize) -> Result<R> + Sync) -> Result<Vec<R>> {
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        return (0..n).map(f).collect();
    }
    let per = n.div_ceil(workers);
    let f = &f;
    let chunks: Vec<Result<Vec<R>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| scope.spawn(move || (w * per..((w + 1) * per).min(n)).map(f).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("metric worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(n);
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Evaluation protocol sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub source: Domain,
    pub inputs: usize,
    pub samples_per_input: usize,
    pub diversity_inputs: usize,
    pub pairs_per_input: usize,
    pub seed: u64,
    #[serde(skip, default = "default_workers")]
    pub workers: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            source: Domain::One,
            inputs: 50,
            samples_per_input: 20,
            diversity_inputs: 100,
            pairs_per_input: 19,
            seed: 0,
            workers: default_workers(),
        }
    }
}

kv_fields!(MetricConfig {
    source,
    inputs,
    samples_per_input,
    diversity_inputs,
    pairs_per_input,
    seed,
});

impl KvConfig for MetricConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.kv_set(key, value)
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        self.kv_pairs()
    }

    fn validate(&self) -> Result<()> {
        if self.inputs == 0 || self.diversity_inputs == 0 {
            return Err(MunitError::Config("inputs and diversity_inputs must be positive".into()));
        }
        if self.samples_per_input < 2 {
            return Err(MunitError::Config("samples_per_input must be at least 2".into()));
        }
        if self.pairs_per_input == 0 {
            return Err(MunitError::Config("pairs_per_input must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mode classifier over the labels of one labeled domain.
pub fn train_mode_classifier(set: &LabeledSet, cfg: &ClassifierConfig) -> Result<ModeClassifier> {
    let labels: Vec<usize> = set.labels.iter().map(|l| l.mode).collect();
    ModeClassifier::train(&set.images, &labels, MODES, cfg)
}

/// `n` translations of one input with styles drawn from the target prior.
pub fn sample_translations(
    model: &dyn Translator<f32>,
    source: Domain,
    x: &Tensor<f32>,
    n: usize,
    rng: &mut Rng,
) -> Result<Tensor<f32>> {
    let batch = Tensor::stack_batch(&vec![x.clone(); n])?;
    let s = model.sample_style(source.other(), n, rng);
    infer(|g| {
        let xv = g.constant(batch);
        let sv = g.constant(s);
        model.translate(g, source, xv, sv)
    })
}

/// Classifier posteriors of `samples` prior-style translations of every
/// input. Input `i` uses its own random stream.
pub fn translation_posteriors(
    model: &dyn Translator<f32>,
    classifier: &ModeClassifier,
    inputs: &[Tensor<f32>],
    samples: usize,
    cfg: &MetricConfig,
) -> Result<Vec<InputPosteriors>> {
    classifier.check_gate()?;
    if samples < 2 {
        return Err(invalid(format!("need at least 2 samples per input, got {samples}")));
    }
    if inputs.is_empty() {
        return Err(invalid("no inputs"));
    }
    let base = Rng::with_stream(cfg.seed, SCORE_STREAM);
    map_indexed(inputs.len(), cfg.workers, |i| {
        let mut rng = base.split(i as u64);
        let y = sample_translations(model, cfg.source, &inputs[i], samples, &mut rng)?;
        Ok(InputPosteriors::uniform(classifier.probs(&y)?))
    })
}

pub fn cis(
    model: &dyn Translator<f32>,
    classifier: &ModeClassifier,
    inputs: &[Tensor<f32>],
    samples: usize,
    cfg: &MetricConfig,
) -> Result<f64> {
    cis_from_posteriors(&translation_posteriors(model, classifier, inputs, samples, cfg)?)
}

pub fn is_score(
    model: &dyn Translator<f32>,
    classifier: &ModeClassifier,
    inputs: &[Tensor<f32>],
    samples: usize,
    cfg: &MetricConfig,
) -> Result<f64> {
    is_from_posteriors(&translation_posteriors(model, classifier, inputs, samples, cfg)?)
}

/// Mean over inputs of the mean embedded distance between `pairs` pairs of
/// independently styled translations of that input.
pub fn diversity_distance(
    model: &dyn Translator<f32>,
    inputs: &[Tensor<f32>],
    pairs: usize,
    embedder: &ModeClassifier,
    cfg: &MetricConfig,
) -> Result<f64> {
    if pairs < 1 {
        return Err(invalid("need at least one pair per input"));
    }
    if inputs.is_empty() {
        return Err(invalid("no inputs"));
    }
    if !embedder.is_trained() {
        return Err(invalid("diversity embedder is untrained"));
    }
    let base = Rng::with_stream(cfg.seed, DIVERSITY_STREAM);
    let per_input = map_indexed(inputs.len(), cfg.workers, |i| {
        let mut rng = base.split(i as u64);
        let y = sample_translations(model, cfg.source, &inputs[i], 2 * pairs, &mut rng)?;
        let e = normalized_embeddings(embedder, &y)?;
        let c = embedder.feature_channels();
        Ok(e.chunks_exact(2).map(|p| embedding_distance(&p[0], &p[1], c)).sum::<f64>() / pairs as f64)
    })?;
    Ok(per_input.iter().sum::<f64>() / inputs.len() as f64)
}

/// Mean embedded distance between consecutive distinct real images, the
/// reference level for [`diversity_distance`].
pub fn real_pair_distance(embedder: &ModeClassifier, images: &[Tensor<f32>]) -> Result<f64> {
    if images.len() < 2 {
        return Err(invalid("need at least two real images"));
    }
    let n = images.len() / 2;
    let a = Tensor::stack_batch(&images[..n])?;
    let b = Tensor::stack_batch(&images[n..2 * n])?;
    mean_pair_distance(embedder, &a, &b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    pub source: Domain,
    pub cis: f64,
    pub is: f64,
    pub diversity: f64,
    pub inputs: usize,
    pub samples_per_input: usize,
    pub diversity_inputs: usize,
    pub pairs_per_input: usize,
    pub classifier_accuracy: f64,
}

/// CIS, IS and diversity of translations out of `cfg.source`. The classifier
/// scores target-domain modes and its trunk embeds the diversity pairs.
pub fn evaluate(
    model: &dyn Translator<f32>,
    classifier: &ModeClassifier,
    inputs: &[Tensor<f32>],
    cfg: &MetricConfig,
) -> Result<MetricReport> {
    let n = cfg.inputs.min(inputs.len());
    let post = translation_posteriors(model, classifier, &inputs[..n], cfg.samples_per_input, cfg)?;
    let nd = cfg.diversity_inputs.min(inputs.len());
    let diversity = diversity_distance(model, &inputs[..nd], cfg.pairs_per_input, classifier, cfg)?;
    let report = MetricReport {
        model: model.name().to_string(),
        source: cfg.source,
        cis: cis_from_posteriors(&post)?,
        is: is_from_posteriors(&post)?,
        diversity,
        inputs: n,
        samples_per_input: cfg.samples_per_input,
        diversity_inputs: nd,
        pairs_per_input: cfg.pairs_per_input,
        classifier_accuracy: classifier.accuracy().unwrap_or(0.0),
    };
    if ![report.cis, report.is, report.diversity].iter().all(|v| v.is_finite()) {
        return Err(invalid("non-finite metric"));
    }
    Ok(report)
}
