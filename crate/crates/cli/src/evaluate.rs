use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use munit::data_synth::{domain_dir, LabeledSet, Split};
use munit::kv::KvConfig;
use munit::metrics::{
    default_workers, evaluate as evaluate_metrics, real_pair_distance, train_mode_classifier, ClassifierConfig,
    MetricConfig, ModeClassifier,
};
use munit::model::Trainable;
use munit::probe::{ablation_config, run_probes, ProbeConfig, ProbeContext, Status};
use munit::trainer::{load_training_images, Trainer};
use munit::{Domain, MunitError};
use serde_json::{json, Value};

use crate::commands::{domain, echo, guard, load_config, load_model};
use crate::{Evaluate, Probe};

const CLASSIFIER_STEM: &str = "classifier";

fn load_split(data: &Path, split: Split, d: Domain, size: usize) -> Result<LabeledSet> {
    let dir = domain_dir(data, split, d);
    LabeledSet::load(&dir, d, size).with_context(|| format!("loading {}", dir.display()))
}

/// Loads `<dir>/classifier` or trains one on the target domain's training
/// split and caches it there.
fn classifier(data: &Path, target: Domain, size: usize, dir: Option<&Path>, seed: u64) -> Result<ModeClassifier> {
    let stem = dir.map(|d| d.join(CLASSIFIER_STEM));
    if let Some(stem) = &stem {
        if stem.with_extension("json").exists() {
            log::info!("using cached classifier {}", stem.display());
            return Ok(ModeClassifier::load(stem)?);
        }
    }
    let set = load_split(data, Split::Train, target, size)?;
    log::info!("training the mode classifier on {} domain-{target} images", set.len());
    let cfg = ClassifierConfig {
        seed,
        ..ClassifierConfig::default()
    };
    let clf = train_mode_classifier(&set, &cfg)?;
    if let Some(stem) = &stem {
        std::fs::create_dir_all(stem.parent().expect("stem has a parent"))?;
        clf.save(stem)?;
    }
    Ok(clf)
}

pub fn evaluate(a: Evaluate) -> Result<Value> {
    let mut cfg: MetricConfig = load_config(a.config.as_deref())?;
    cfg.source = domain(a.domain)?;
    if let Some(seed) = a.common.seed {
        cfg.seed = seed;
    }
    cfg.workers = default_workers();
    cfg.validate()?;
    let report_path = a.out.as_ref().map(|o| o.join("metrics.json"));
    if let Some(p) = &report_path {
        guard(p, &a.common)?;
    }
    let model = load_model(&a.ckpt)?;
    let size = model.image_size();
    let clf = classifier(&a.data, cfg.source.other(), size, a.out.as_deref(), cfg.seed)?;
    clf.check_gate()?;
    let inputs = load_split(&a.data, Split::Test, cfg.source, size)?;
    let report = evaluate_metrics(model.as_ref(), &clf, &inputs.images, &cfg)?;
    let target = load_split(&a.data, Split::Test, cfg.source.other(), size)?;
    let real = real_pair_distance(&clf, &target.images)?;
    let value = json!({ "config": echo(&cfg), "report": report, "real_pair_distance": real });
    if let Some(p) = &report_path {
        std::fs::write(p, serde_json::to_string_pretty(&value)?)?;
    }
    Ok(value)
}

/// Loads the ablation from `explicit`, the workspace cache, or trains it
/// into the workspace. A diverged run yields `Err(message)`.
fn ablation(
    explicit: Option<&Path>,
    workspace: Option<&Path>,
    base: &Trainer,
    data: &Path,
) -> Result<std::result::Result<Box<dyn Trainable>, String>> {
    if let Some(stem) = explicit {
        return Ok(Ok(load_model(stem)?));
    }
    let Some(ws) = workspace else {
        bail!("cycle_collapse needs --ablation or a --out workspace to train one in");
    };
    let out = ws.join("ablation");
    let stem = out.join("ckpt_final");
    if stem.with_extension("json").exists() {
        return Ok(Ok(load_model(&stem)?));
    }
    let cfg = ablation_config(base.config());
    log::info!("training the ablation for {} steps into {}", cfg.total_steps, out.display());
    let images = load_training_images(&cfg, Some(data))?;
    let mut trainer = Trainer::new(cfg)?;
    let mut streams = trainer.streams(images)?;
    match trainer.run(&mut streams, &out) {
        Ok(()) => Ok(Ok(trainer.into_model())),
        Err(e @ MunitError::NonFiniteLoss { .. }) => Ok(Err(e.to_string())),
        Err(e) => Err(e.into()),
    }
}

pub fn probe(a: Probe) -> Result<Value> {
    let mut cfg: ProbeConfig = load_config(a.config.as_deref())?;
    if let Some(seed) = a.common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    if a.which != "all" {
        munit::probe::probes().get(&a.which)?;
    }
    let report_path: Option<PathBuf> = a.out.as_ref().map(|o| o.join(format!("probe_{}.json", a.which)));
    if let Some(p) = &report_path {
        guard(p, &a.common)?;
    }
    let needs = |name: &str| a.which == "all" || a.which == name;
    let trainer = match &a.ckpt {
        Some(stem) => Some(Trainer::load(stem).with_context(|| format!("loading checkpoint {}", stem.display()))?),
        None => None,
    };
    let size = trainer.as_ref().map_or(32, |t| t.model().image_size());
    let test = match &a.data {
        Some(data) => Some([
            load_split(data, Split::Test, Domain::One, size)?,
            load_split(data, Split::Test, Domain::Two, size)?,
        ]),
        None => None,
    };
    let mut ctx = ProbeContext::new(&cfg);
    ctx.model = trainer.as_ref().map(|t| t.model());
    ctx.test = test.as_ref();
    let clf;
    let abl;
    if needs("cycle_collapse") {
        let (Some(t), Some(data)) = (&trainer, &a.data) else {
            bail!("cycle_collapse needs --ckpt and --data");
        };
        clf = classifier(data, Domain::Two, size, a.out.as_deref(), cfg.seed)?;
        clf.check_gate()?;
        ctx.classifier = Some(&clf);
        abl = ablation(a.ablation.as_deref(), a.out.as_deref(), t, data)?;
        match &abl {
            Ok(m) => ctx.ablation = Some(m.as_ref()),
            Err(why) => ctx.ablation_failure = Some(why.clone()),
        }
    }
    let reports = run_probes(&a.which, &ctx)?;
    let value = json!({ "config": echo(&cfg), "reports": reports });
    if let Some(p) = &report_path {
        std::fs::create_dir_all(p.parent().expect("report has a parent"))?;
        std::fs::write(p, serde_json::to_string_pretty(&value)?)?;
    }
    if let Some(r) = reports.iter().find(|r| r.status == Status::Fail) {
        println!("{}", serde_json::to_string_pretty(&value)?);
        bail!("probe {} failed a hard check", r.probe);
    }
    Ok(value)
}
