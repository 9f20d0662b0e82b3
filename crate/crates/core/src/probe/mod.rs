//! Empirical checks of the optimality properties of the translation
//! framework on trained toy models and on the synthetic data's exact inverse.
//!
//! Each probe reports its raw statistics next to the thresholds applied.
//! Hard checks cover controls whose outcome is known in advance (the exact
//! oracle, prior samples, untrained networks); checks on trained models are
//! soft and only reported, since toy training only approximates optimality.

mod probes;
pub mod stats;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use probes::{
    concat_channels, style_cycle_errors, CycleCollapse, CycleErrors, JointMatching, LatentMatching, OracleMinimum,
    StyleCycle,
};
pub use stats::{auc, energy_test, ks_critical, ks_standard_normal, EnergyTest};

use crate::data_synth::LabeledSet;
use crate::error::{MunitError, Result};
use crate::kv::KvConfig;
use crate::kv_fields;
use crate::metrics::ModeClassifier;
use crate::model::Trainable;
use crate::registry::Registry;
use crate::trainer::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    AtMost,
    AtLeast,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::AtMost => "<=",
            Rule::AtLeast => ">=",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strength {
    /// Known outcome; a failure fails the probe.
    Hard,
    /// Training outcome; reported only.
    Soft,
}

/// One statistic with the threshold it was held to, if any.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rule: Option<Rule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strength: Option<Strength>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pass: Option<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    /// Every hard check passed.
    Pass,
    /// Some hard check failed.
    Fail,
    /// The probe could not be carried out, e.g. a training run diverged.
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub probe: String,
    pub subject: String,
    pub status: Status,
    /// Whether every soft check passed.
    pub soft_pass: bool,
    /// Sample sizes and other settings used.
    pub parameters: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

impl ProbeReport {
    pub fn new(probe: &str, subject: &str) -> Self {
        Self {
            probe: probe.into(),
            subject: subject.into(),
            status: Status::Pass,
            soft_pass: true,
            parameters: BTreeMap::new(),
            checks: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn param(&mut self, name: &str, value: impl Into<f64>) {
        self.parameters.insert(name.into(), value.into());
    }

    pub fn info(&mut self, name: impl Into<String>, value: f64) {
        self.checks.push(Check {
            name: name.into(),
            value,
            rule: None,
            threshold: None,
            strength: None,
            pass: None,
        });
    }

    fn check(&mut self, name: impl Into<String>, value: f64, rule: Rule, threshold: f64, strength: Strength) -> bool {
        let pass = value.is_finite()
            && match rule {
                Rule::AtMost => value <= threshold,
                Rule::AtLeast => value >= threshold,
            };
        match (strength, pass) {
            (Strength::Hard, false) if self.status == Status::Pass => self.status = Status::Fail,
            (Strength::Soft, false) => self.soft_pass = false,
            _ => {}
        }
        self.checks.push(Check {
            name: name.into(),
            value,
            rule: Some(rule),
            threshold: Some(threshold),
            strength: Some(strength),
            pass: Some(pass),
        });
        pass
    }

    pub fn hard(&mut self, name: impl Into<String>, value: f64, rule: Rule, threshold: f64) -> bool {
        self.check(name, value, rule, threshold, Strength::Hard)
    }

    pub fn soft(&mut self, name: impl Into<String>, value: f64, rule: Rule, threshold: f64) -> bool {
        self.check(name, value, rule, threshold, Strength::Soft)
    }

    pub fn inconclusive(&mut self, note: impl Into<String>) {
        self.status = Status::Inconclusive;
        self.notes.push(note.into());
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.get(name).map(|c| c.value)
    }
}

/// Sample sizes and thresholds of every probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub seed: u64,
    pub oracle_images: usize,
    pub latent_samples: usize,
    pub ks_alpha: f64,
    /// Style dimensions per domain that must pass KS on a trained model.
    pub ks_min_dims: usize,
    pub energy_points: usize,
    pub energy_permutations: usize,
    pub joint_pairs: usize,
    pub joint_epochs: usize,
    pub joint_auc_max: f64,
    pub cycle_images: usize,
    /// Style-cycle image error allowed as a multiple of reconstruction error.
    pub cycle_ratio: f64,
    pub metric_inputs: usize,
    pub metric_samples: usize,
    pub diversity_inputs: usize,
    pub diversity_pairs: usize,
    /// Largest ablation diversity as a fraction of the full model's.
    pub collapse_ratio: f64,
    pub ablation_cis_max: f64,
    pub cis_margin: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            oracle_images: 200,
            latent_samples: 500,
            ks_alpha: 0.01,
            ks_min_dims: 4,
            energy_points: 250,
            energy_permutations: 200,
            joint_pairs: 300,
            joint_epochs: 6,
            joint_auc_max: 0.65,
            cycle_images: 200,
            cycle_ratio: 2.0,
            metric_inputs: 50,
            metric_samples: 20,
            diversity_inputs: 100,
            diversity_pairs: 19,
            collapse_ratio: 0.1,
            ablation_cis_max: 0.05,
            cis_margin: 0.2,
        }
    }
}

kv_fields!(ProbeConfig {
    seed,
    oracle_images,
    latent_samples,
    ks_alpha,
    ks_min_dims,
    energy_points,
    energy_permutations,
    joint_pairs,
    joint_epochs,
    joint_auc_max,
    cycle_images,
    cycle_ratio,
    metric_inputs,
    metric_samples,
    diversity_inputs,
    diversity_pairs,
    collapse_ratio,
    ablation_cis_max,
    cis_margin,
});

impl KvConfig for ProbeConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.kv_set(key, value)
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        self.kv_pairs()
    }

    fn validate(&self) -> Result<()> {
        if !(self.ks_alpha > 0.0 && self.ks_alpha < 1.0) {
            return Err(MunitError::Config("ks_alpha must lie in (0, 1)".into()));
        }
        if self.oracle_images == 0 || self.cycle_images == 0 || self.joint_pairs < 4 {
            return Err(MunitError::Config("probe sample sizes are too small".into()));
        }
        if self.energy_points < 4 || self.metric_samples < 2 || self.diversity_pairs == 0 {
            return Err(MunitError::Config("probe sample sizes are too small".into()));
        }
        Ok(())
    }
}

/// Training config of the deterministic-cycle ablation matching `base`:
/// constant styles and an image-level cycle term weighted like image
/// reconstruction.
pub fn ablation_config(base: &TrainConfig) -> TrainConfig {
    TrainConfig {
        translator: "cycle_ablation".into(),
        lambda_cyc: base.lambda_x,
        ..base.clone()
    }
}

/// What a probe may look at. Probes only borrow; nothing is mutated.
pub struct ProbeContext<'a> {
    pub config: &'a ProbeConfig,
    /// Trained model under test.
    pub model: Option<&'a dyn Trainable>,
    /// Deterministic-cycle ablation trained on the same data.
    pub ablation: Option<&'a dyn Trainable>,
    /// Why the ablation is missing, when its training failed.
    pub ablation_failure: Option<String>,
    /// Test split of both domains.
    pub test: Option<&'a [LabeledSet; 2]>,
    /// Target-domain mode classifier, also the diversity embedder.
    pub classifier: Option<&'a ModeClassifier>,
}

impl<'a> ProbeContext<'a> {
    pub fn new(config: &'a ProbeConfig) -> Self {
        Self {
            config,
            model: None,
            ablation: None,
            ablation_failure: None,
            test: None,
            classifier: None,
        }
    }

    pub(crate) fn model(&self, probe: &str) -> Result<&'a dyn Trainable> {
        self.model.ok_or_else(|| missing(probe, "a trained model"))
    }

    pub(crate) fn test(&self, probe: &str) -> Result<&'a [LabeledSet; 2]> {
        self.test.ok_or_else(|| missing(probe, "the test split"))
    }
}

pub(crate) fn missing(probe: &str, what: &str) -> MunitError {
    MunitError::Invalid(format!("probe `{probe}` needs {what}"))
}

pub trait Probe: Send + Sync {
    fn name(&self) -> &'static str;

    fn run(&self, ctx: &ProbeContext<'_>) -> Result<ProbeReport>;
}

pub type ProbeBuilder = fn() -> Box<dyn Probe>;

pub fn probes() -> Registry<ProbeBuilder> {
    fn boxed<P: Probe + Default + 'static>() -> Box<dyn Probe> {
        Box::new(P::default())
    }
    Registry::new("probe")
        .register("oracle_minimum", boxed::<OracleMinimum> as ProbeBuilder)
        .register("latent_matching", boxed::<LatentMatching>)
        .register("joint_matching", boxed::<JointMatching>)
        .register("style_cycle", boxed::<StyleCycle>)
        .register("cycle_collapse", boxed::<CycleCollapse>)
}

/// Runs the named probe, or every probe for `"all"`.
pub fn run_probes(which: &str, ctx: &ProbeContext<'_>) -> Result<Vec<ProbeReport>> {
    let registry = probes();
    let names: Vec<&str> = if which == "all" {
        registry.names()
    } else {
        registry.get(which)?;
        vec![which]
    };
    names
        .into_iter()
        .map(|name| {
            log::info!("probe {name}");
            (registry.get(name)?)().run(ctx)
        })
        .collect()
}
