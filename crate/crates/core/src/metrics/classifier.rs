use std::path::Path;

use serde::{Deserialize, Serialize};
use tensorkit::{adam_step, softmax_rows, Adam, AdamState, Graph, ParamStore, Rng, Tensor, Var};

use crate::error::{invalid, MunitError, Result};
use crate::losses::FeatureNet;
use crate::model::{Act, Builder, Layer, Net, Norm};
use crate::trainer::{read_blob, read_pair, write_blob, write_pair, BlobEntry};

pub const CLASSIFIER_VERSION: &str = "munit-classifier-v1";
/// Held-out accuracy required before scores built on a classifier are trusted.
pub const ACCURACY_GATE: f64 = 0.95;
const INIT_STREAM: u64 = 0xC1A5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub base_channels: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Fraction of the labeled images held out for the accuracy estimate.
    pub holdout: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            epochs: 6,
            batch: 32,
            lr: 2e-3,
            holdout: 0.2,
            seed: 0,
        }
    }
}

/// Small convolutional classifier over `k` modes.
///
/// The convolutional trunk (`c3s1-b, d2b, d4b` with ReLU, no normalization)
/// doubles as the feature extractor for perceptual distances; the head is
/// global average pooling and one linear layer.
#[derive(Clone, Debug)]
pub struct ModeClassifier {
    k: usize,
    base_channels: usize,
    in_channels: usize,
    trunk: Net,
    head: Net,
    store: ParamStore<f32>,
    accuracy: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct ClassifierManifest {
    version: String,
    k: usize,
    base_channels: usize,
    in_channels: usize,
    accuracy: Option<f64>,
    entries: Vec<BlobEntry>,
}

impl ModeClassifier {
    pub fn new(k: usize, in_channels: usize, base_channels: usize, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(invalid(format!("a classifier needs at least 2 classes, got {k}")));
        }
        let mut store = ParamStore::new();
        let mut rng = Rng::with_stream(seed, INIT_STREAM);
        let mut b = Builder {
            store: &mut store,
            rng: &mut rng,
            group: "cls",
            prefix: "cls.trunk".into(),
        };
        let c = base_channels;
        let trunk = Net {
            layers: vec![
                Layer::Conv(b.conv("c0", in_channels, c, 3, 1, Norm::None, Act::Relu, false)),
                Layer::Conv(b.conv("down0", c, 2 * c, 4, 2, Norm::None, Act::Relu, false)),
                Layer::Conv(b.conv("down1", 2 * c, 4 * c, 4, 2, Norm::None, Act::Relu, false)),
            ],
        };
        b.prefix = "cls.head".into();
        let head = Net {
            layers: vec![Layer::Gap, b.fc("fc", 4 * c, k, Act::None)],
        };
        Ok(Self {
            k,
            base_channels,
            in_channels,
            trunk,
            head,
            store,
            accuracy: None,
        })
    }

    /// Channel count of the trunk features.
    pub fn feature_channels(&self) -> usize {
        4 * self.base_channels
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    /// Held-out accuracy measured at the end of training.
    pub fn accuracy(&self) -> Option<f64> {
        self.accuracy
    }

    /// Fails unless held-out accuracy reached [`ACCURACY_GATE`].
    pub fn check_gate(&self) -> Result<()> {
        match self.accuracy {
            Some(a) if a > ACCURACY_GATE => Ok(()),
            Some(a) => Err(invalid(format!(
                "classifier held-out accuracy {a:.4} does not exceed the {ACCURACY_GATE} gate"
            ))),
            None => Err(invalid("classifier is untrained")),
        }
    }

    fn logits(&self, g: &mut Graph<f32>, x: Var) -> Result<Var> {
        let f = self.trunk.forward(g, &self.store, x, &[])?;
        self.head.forward(g, &self.store, f, &[])
    }

    /// Class probabilities, one row per image.
    pub fn probs(&self, x: &Tensor<f32>) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::inference();
        let xv = g.constant(x.clone());
        let l = self.logits(&mut g, xv)?;
        let p = softmax_rows(g.value(l).data(), self.k);
        Ok(p.chunks_exact(self.k)
            .map(|r| r.iter().map(|&v| v as f64).collect())
            .collect())
    }

    pub fn predict(&self, x: &Tensor<f32>) -> Result<Vec<usize>> {
        Ok(self.probs(x)?.iter().map(|r| argmax(r)).collect())
    }

    /// Trunk feature maps of a batch.
    pub fn feature_maps(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::inference();
        let xv = g.constant(x.clone());
        let f = self.trunk.forward(&mut g, &self.store, xv, &[])?;
        Ok(g.value(f).clone())
    }

    /// Trains on `(images, labels)` with a seeded holdout split and records the
    /// held-out accuracy. The parameters are frozen afterwards.
    pub fn train(images: &[Tensor<f32>], labels: &[usize], k: usize, cfg: &ClassifierConfig) -> Result<Self> {
        if images.len() != labels.len() || images.is_empty() {
            return Err(invalid("classifier training needs one label per image"));
        }
        let mut present = labels.to_vec();
        present.sort();
        present.dedup();
        if present.len() < 2 {
            return Err(invalid("classifier training data has fewer than 2 classes"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(invalid(format!("label {bad} out of range for {k} classes")));
        }
        let in_channels = images[0].shape()[1];
        let mut model = Self::new(k, in_channels, cfg.base_channels, cfg.seed)?;
        let mut rng = Rng::with_stream(cfg.seed, INIT_STREAM + 1);
        let mut order: Vec<usize> = (0..images.len()).collect();
        rng.shuffle(&mut order);
        let n_hold = ((images.len() as f64 * cfg.holdout).round() as usize).min(images.len() - 1);
        let (held, train) = order.split_at(n_hold);
        let mut train = train.to_vec();
        let ids: Vec<_> = model.store.ids().collect();
        let mut opt = AdamState::new(&model.store, ids);
        let hp = Adam {
            lr: cfg.lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        for _ in 0..cfg.epochs {
            rng.shuffle(&mut train);
            for chunk in train.chunks(cfg.batch.max(1)) {
                let x = Tensor::stack_batch(&chunk.iter().map(|&i| images[i].clone()).collect::<Vec<_>>())?;
                let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                let mut g = Graph::new();
                let xv = g.constant(x);
                let l = model.logits(&mut g, xv)?;
                let loss = g.cross_entropy(l, &y)?;
                model.store.zero_grad();
                g.backward_into(loss, &mut model.store)?;
                adam_step(&mut model.store, &mut opt, &hp)?;
            }
        }
        let eval: &[usize] = if held.is_empty() { &train } else { held };
        let mut correct = 0usize;
        for chunk in eval.chunks(64) {
            let x = Tensor::stack_batch(&chunk.iter().map(|&i| images[i].clone()).collect::<Vec<_>>())?;
            let pred = model.predict(&x)?;
            correct += chunk.iter().zip(&pred).filter(|(&i, &p)| labels[i] == p).count();
        }
        model.accuracy = Some(correct as f64 / eval.len() as f64);
        model.store.set_frozen(true);
        Ok(model)
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        let (entries, bytes) = write_blob(
            self.store
                .entries()
                .iter()
                .map(|e| (e.name.clone(), e.tensor.shape(), e.tensor.data())),
        );
        let manifest = ClassifierManifest {
            version: CLASSIFIER_VERSION.into(),
            k: self.k,
            base_channels: self.base_channels,
            in_channels: self.in_channels,
            accuracy: self.accuracy,
            entries,
        };
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| MunitError::json("classifier manifest", e))?;
        write_pair(stem, json, &bytes)
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let (json, bytes, path) = read_pair(stem)?;
        let m: ClassifierManifest =
            serde_json::from_str(&json).map_err(|e| MunitError::json(path.display().to_string(), e))?;
        if m.version != CLASSIFIER_VERSION {
            return Err(MunitError::Checkpoint {
                path,
                reason: format!("version `{}` is not `{CLASSIFIER_VERSION}`", m.version),
            });
        }
        let tensors = read_blob(&m.entries, &bytes, &path)?;
        let mut model = Self::new(m.k, m.in_channels, m.base_channels, 0)?;
        if tensors.len() != model.store.len() {
            return Err(MunitError::Checkpoint {
                path,
                reason: "entry count does not match the classifier".into(),
            });
        }
        let ids: Vec<_> = model.store.ids().collect();
        for (id, (t, e)) in ids.into_iter().zip(tensors.iter().zip(&m.entries)) {
            if model.store.get(id).shape() != t.shape() || model.store.entry(id).name != e.name {
                return Err(MunitError::Checkpoint {
                    path,
                    reason: format!("entry `{}` does not match the classifier", e.name),
                });
            }
            model.store.get_mut(id).data_mut().copy_from_slice(t.data());
        }
        model.accuracy = m.accuracy;
        model.store.set_frozen(true);
        Ok(model)
    }
}

impl FeatureNet<f32> for ModeClassifier {
    fn features(&self, g: &mut Graph<f32>, x: Var) -> Result<Var> {
        self.trunk.forward(g, &self.store, x, &[])
    }

    fn is_trained(&self) -> bool {
        self.accuracy.is_some()
    }
}

pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}
