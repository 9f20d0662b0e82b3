use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use munit::data_synth::{generate_dataset, load_image, save_image, DatasetConfig};
use munit::kv::KvConfig;
use munit::model::{infer, Trainable};
use munit::trainer::{load_training_images, TrainConfig, Trainer};
use munit::Domain;
use serde_json::{json, Value};
use tensorkit::{Rng, Tensor};

use crate::{Command, Common, GenData, GradCheck, Sample, Train, Translate};

const GRADCHECK_TOL: f64 = 1e-3;

pub fn run(command: Command) -> Result<Value> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Translate(a) => translate(a),
        Command::Sample(a) => sample(a),
        Command::Evaluate(a) => crate::evaluate::evaluate(a),
        Command::Probe(a) => crate::evaluate::probe(a),
        Command::GradCheck(a) => grad_check(a),
    }
}

/// Fails if `path` exists and `--force` was not given.
pub fn guard(path: &Path, common: &Common) -> Result<()> {
    if path.exists() && !common.force {
        bail!("{} already exists; pass --force to overwrite", path.display());
    }
    Ok(())
}

pub fn echo<C: KvConfig>(cfg: &C) -> Value {
    let map: BTreeMap<&str, String> = cfg.pairs().into_iter().collect();
    json!(map)
}

pub fn load_config<C: KvConfig>(path: Option<&Path>) -> Result<C> {
    match path {
        Some(p) => C::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(C::default()),
    }
}

pub fn domain(n: u8) -> Result<Domain> {
    Ok(Domain::from_number(n as usize)?)
}

pub fn load_model(ckpt: &Path) -> Result<Box<dyn Trainable>> {
    let t = Trainer::load(ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    Ok(t.into_model())
}

fn gen_data(a: GenData) -> Result<Value> {
    let mut cfg: DatasetConfig = load_config(a.config.as_deref())?;
    if let Some(seed) = a.common.seed {
        cfg.seed = seed;
    }
    guard(&a.out.join(munit::data_synth::MANIFEST_FILE), &a.common)?;
    log::info!("rendering {} + {} images per domain into {}", cfg.n_train, cfg.n_test, a.out.display());
    let manifest = generate_dataset(&cfg, &a.out)?;
    Ok(json!({ "config": echo(&cfg), "out": a.out, "manifest": manifest }))
}

fn train(a: Train) -> Result<Value> {
    let final_stem = a.out.join("ckpt_final");
    guard(&final_stem.with_extension("json"), &a.common)?;
    let mut trainer = match &a.ckpt {
        Some(stem) => {
            if a.config.is_some() || a.common.seed.is_some() {
                bail!("--ckpt resumes with the checkpoint's config; --config and --seed are not accepted");
            }
            Trainer::load(stem).with_context(|| format!("loading checkpoint {}", stem.display()))?
        }
        None => {
            let mut cfg: TrainConfig = load_config(a.config.as_deref())?;
            if let Some(seed) = a.common.seed {
                cfg.seed = seed;
            }
            cfg.validate()?;
            Trainer::new(cfg)?
        }
    };
    let images = load_training_images(trainer.config(), a.data.as_deref())?;
    let mut streams = trainer.streams(images)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    std::fs::write(a.out.join("train.cfg"), trainer.config().to_text())?;
    log::info!(
        "training {} from step {} to {}",
        trainer.config().translator,
        trainer.step(),
        trainer.config().total_steps
    );
    let started = std::time::Instant::now();
    trainer.run(&mut streams, &a.out)?;
    Ok(json!({
        "config": echo(trainer.config()),
        "steps": trainer.step(),
        "seconds": started.elapsed().as_secs_f64(),
        "checkpoint": final_stem,
    }))
}

fn numbered(out: &Path, i: usize, n: usize) -> PathBuf {
    if n == 1 {
        return out.to_path_buf();
    }
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}_{i}.png"))
}

fn style_rows(s: &Tensor<f32>) -> Vec<Vec<f32>> {
    let d = s.shape()[1];
    s.data().chunks(d).map(<[f32]>::to_vec).collect()
}

fn translate(a: Translate) -> Result<Value> {
    let source = domain(a.domain)?;
    if a.n == 0 {
        bail!("--n must be at least 1");
    }
    if a.style_from.is_some() && a.n != 1 {
        bail!("--style-from yields one style; --n must be 1");
    }
    let outs: Vec<PathBuf> = (0..a.n).map(|i| numbered(&a.out, i, a.n)).collect();
    for o in &outs {
        guard(o, &a.common)?;
    }
    let model = load_model(&a.ckpt)?;
    let size = model.image_size();
    let x = load_image(&a.input, Some(size))?;
    let seed = a.common.seed.unwrap_or(0);
    let (y, s) = match &a.style_from {
        Some(r) => {
            let reference = load_image(r, Some(size))?;
            let s = infer(|g| {
                let rv = g.constant(reference.clone());
                model.encode_style(g, source.other(), rv)
            })?;
            let y = infer(|g| {
                let xv = g.constant(x.clone());
                let rv = g.constant(reference);
                model.translate_guided(g, source, xv, rv)
            })?;
            (y, s)
        }
        None => {
            let mut rng = Rng::new(seed);
            let s = model.sample_style(source.other(), a.n, &mut rng);
            let batch = Tensor::stack_batch(&vec![x; a.n])?;
            let y = infer(|g| {
                let xv = g.constant(batch);
                let sv = g.constant(s.clone());
                model.translate(g, source, xv, sv)
            })?;
            (y, s)
        }
    };
    for (i, o) in outs.iter().enumerate() {
        save_image(&y, i, o)?;
    }
    Ok(json!({
        "source": source,
        "seed": seed,
        "style_from": a.style_from,
        "outputs": outs,
        "styles": style_rows(&s),
    }))
}

fn sample(a: Sample) -> Result<Value> {
    let source = domain(a.domain)?;
    if a.n == 0 {
        bail!("--n must be at least 1");
    }
    let outs: Vec<PathBuf> = (0..a.n).map(|i| a.out.join(format!("sample_{i:03}.png"))).collect();
    for o in &outs {
        guard(o, &a.common)?;
    }
    let model = load_model(&a.ckpt)?;
    let x = load_image(&a.input, Some(model.image_size()))?;
    let seed = a.common.seed.unwrap_or(0);
    let mut rng = Rng::new(seed);
    let y = munit::metrics::sample_translations(model.as_ref(), source, &x, a.n, &mut rng)?;
    let s = model.sample_style(source.other(), a.n, &mut Rng::new(seed));
    std::fs::create_dir_all(&a.out)?;
    for (i, o) in outs.iter().enumerate() {
        save_image(&y, i, o)?;
    }
    Ok(json!({ "source": source, "seed": seed, "outputs": outs, "styles": style_rows(&s) }))
}

fn grad_check(a: GradCheck) -> Result<Value> {
    if a.n == 0 {
        bail!("--n must be at least 1");
    }
    let started = std::time::Instant::now();
    let checks = tensorkit::gradcheck::kernel_suite(a.n)?;
    let rows: Vec<Value> = checks
        .iter()
        .map(|c| {
            json!({
                "kernel": c.kernel,
                "seeds": c.seeds,
                "coords": c.report.coords,
                "max_rel_err": c.report.max_rel_err,
                "max_abs_err": c.report.max_abs_err,
                "pass": c.report.max_rel_err <= GRADCHECK_TOL,
            })
        })
        .collect();
    let failed: Vec<&str> = checks
        .iter()
        .filter(|c| c.report.max_rel_err > GRADCHECK_TOL)
        .map(|c| c.kernel)
        .collect();
    if !failed.is_empty() {
        bail!("gradient check above {GRADCHECK_TOL}: {}", failed.join(", "));
    }
    Ok(json!({ "tolerance": GRADCHECK_TOL, "seconds": started.elapsed().as_secs_f64(), "kernels": rows }))
}
