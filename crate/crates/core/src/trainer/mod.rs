//! Alternating discriminator and generator updates, learning-rate schedule,
//! checkpoints and the training log.

mod checkpoint;
mod config;
mod data;

pub use checkpoint::{read_blob, write_blob, BlobEntry, CheckpointManifest, CHECKPOINT_VERSION};
pub(crate) use checkpoint::{read_pair, write_pair};
pub use config::TrainConfig;
pub use data::{flip_horizontal, DataStream};

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use tensorkit::{adam_step, Adam, AdamState, Graph, Rng, Tensor};

use crate::data_synth::load_domain_images;
use crate::domain::Domain;
use crate::error::{invalid, MunitError, Result};
use crate::kv::KvConfig;
use crate::losses::{
    discriminator_terms, gan_objectives, generator_terms, read_terms, weighted_total, FeatureNet, GanObjective,
    GenInputs, LossReport, LossWeights,
};
use crate::metrics::ModeClassifier;
use crate::model::{infer, translators, Trainable};

const MASTER_STREAM: u64 = 0x7EA1;
const LOG_FILE: &str = "log.csv";

/// `initial_lr * 0.5^floor(step / period)`.
pub fn lr_schedule(step: u64, initial_lr: f64, period: u64) -> Result<f64> {
    if period == 0 {
        return Err(invalid("lr halving period must be positive"));
    }
    Ok(initial_lr * 0.5f64.powf((step / period) as f64))
}

/// Adam moments of the generator-side and discriminator parameter groups.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizers {
    pub gen: AdamState<f32>,
    pub dis: AdamState<f32>,
}

impl Optimizers {
    pub fn new(model: &dyn Trainable) -> Self {
        let store = model.params();
        Self {
            gen: AdamState::new(store, store.group_ids("gen")),
            dis: AdamState::new(store, store.group_ids("dis")),
        }
    }
}

/// Fixed settings of a step.
pub struct StepContext<'a> {
    pub weights: &'a LossWeights,
    pub gan: &'a dyn GanObjective<f32>,
    pub perceptual: Option<&'a dyn FeatureNet<f32>>,
    pub adam: Adam,
    pub step: u64,
}

/// One discriminator update followed by one generator update.
///
/// Styles for both translation directions are drawn from the model's prior
/// once and shared by both updates. The discriminator sees translations
/// regenerated in an untracked graph, so its loss cannot reach generator
/// parameters; each update steps only its own parameter group.
pub fn training_step(
    model: &mut dyn Trainable,
    opt: &mut Optimizers,
    batch: [&Tensor<f32>; 2],
    ctx: &StepContext<'_>,
    rng: &mut Rng,
) -> Result<LossReport> {
    let n = batch[0].shape()[0];
    let prior = [
        model.sample_style(Domain::One, n, rng),
        model.sample_style(Domain::Two, n, rng),
    ];

    let fakes: Vec<Tensor<f32>> = Domain::BOTH
        .iter()
        .map(|&dst| {
            let src = dst.other();
            infer(|g| {
                let x = g.constant(batch[src.index()].clone());
                let s = g.constant(prior[dst.index()].clone());
                model.translate(g, src, x, s)
            })
        })
        .collect::<Result<_>>()?;

    let mut g = Graph::new();
    let real = [g.constant(batch[0].clone()), g.constant(batch[1].clone())];
    let fake = [g.constant(fakes[0].clone()), g.constant(fakes[1].clone())];
    let d_terms = discriminator_terms(&mut g, model, ctx.gan, real, fake)?;
    let mut terms = read_terms(&g, &d_terms, ctx.step)?;
    let d_total = g.weighted_sum(&d_terms.iter().map(|&(_, v)| (v, 1.0)).collect::<Vec<_>>())?;
    let dis_total = g.item(d_total)? as f64;
    model.params_mut().zero_grad();
    g.backward_into(d_total, model.params_mut())?;
    adam_step(model.params_mut(), &mut opt.dis, &ctx.adam)?;
    drop(g);

    let mut g = Graph::new();
    let x = [g.constant(batch[0].clone()), g.constant(batch[1].clone())];
    let prior = [g.constant(prior[0].clone()), g.constant(prior[1].clone())];
    let inputs = GenInputs {
        x,
        prior,
        weights: ctx.weights,
        gan: ctx.gan,
        dis: Some(&*model),
        perceptual: ctx.perceptual,
    };
    let g_terms = generator_terms(&mut g, &*model, &inputs)?;
    terms.extend(read_terms(&g, &g_terms, ctx.step)?);
    let g_total = weighted_total(&mut g, &g_terms, ctx.weights)?;
    let gen_total = g.item(g_total)? as f64;
    if !gen_total.is_finite() {
        return Err(MunitError::NonFiniteLoss {
            term: "gen_total".into(),
            step: ctx.step,
        });
    }
    model.params_mut().zero_grad();
    g.backward_into(g_total, model.params_mut())?;
    adam_step(model.params_mut(), &mut opt.gen, &ctx.adam)?;

    Ok(LossReport {
        terms,
        gen_total,
        dis_total,
    })
}

/// A model with its optimizer state, master random stream and step counter.
pub struct Trainer {
    config: TrainConfig,
    model: Box<dyn Trainable>,
    opt: Optimizers,
    rng: Rng,
    step: u64,
    gan: Box<dyn GanObjective<f32>>,
    perceptual: Option<ModeClassifier>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = (translators().get(&config.translator)?)(&config.arch(), config.seed)?;
        let opt = Optimizers::new(model.as_ref());
        let rng = Rng::with_stream(config.seed, MASTER_STREAM);
        Self::assemble(config, model, opt, rng, 0)
    }

    fn assemble(
        config: TrainConfig,
        model: Box<dyn Trainable>,
        opt: Optimizers,
        rng: Rng,
        step: u64,
    ) -> Result<Self> {
        let gan = (gan_objectives::<f32>().get(&config.gan)?)();
        let perceptual = if config.lambda_perc > 0.0 {
            if config.perceptual_net.is_empty() {
                return Err(MunitError::Config("lambda_perc > 0 requires perceptual_net".into()));
            }
            Some(ModeClassifier::load(Path::new(&config.perceptual_net))?)
        } else {
            None
        };
        Ok(Self {
            config,
            model,
            opt,
            rng,
            step,
            gan,
            perceptual,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &dyn Trainable {
        self.model.as_ref()
    }

    pub fn model_mut(&mut self) -> &mut dyn Trainable {
        self.model.as_mut()
    }

    pub fn into_model(self) -> Box<dyn Trainable> {
        self.model
    }

    pub fn optimizers(&self) -> &Optimizers {
        &self.opt
    }

    pub fn rng(&self) -> &Rng {
        &self.rng
    }

    /// Number of completed steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Continues training until `total_steps` is reached.
    pub fn set_total_steps(&mut self, total: u64) {
        self.config.total_steps = total;
    }

    /// Runs one step on the images the streams assign to the current step.
    pub fn step_once(&mut self, streams: &mut [DataStream; 2]) -> Result<LossReport> {
        let mut batch = Vec::with_capacity(2);
        for stream in streams.iter_mut() {
            let x = stream.image_at(self.step);
            let flip = self.config.flip && self.rng.bernoulli(0.5);
            batch.push(if flip { flip_horizontal(x) } else { x.clone() });
        }
        let lr = lr_schedule(self.step, self.config.lr, self.config.lr_halving_period)?;
        let weights = self.config.weights();
        let ctx = StepContext {
            weights: &weights,
            gan: self.gan.as_ref(),
            perceptual: self.perceptual.as_ref().map(|p| p as &dyn FeatureNet<f32>),
            adam: self.config.adam(lr),
            step: self.step,
        };
        let report = training_step(self.model.as_mut(), &mut self.opt, [&batch[0], &batch[1]], &ctx, &mut self.rng)?;
        self.step += 1;
        Ok(report)
    }

    /// Data streams for this run's seed.
    pub fn streams(&self, images: [Vec<Tensor<f32>>; 2]) -> Result<[DataStream; 2]> {
        let [a, b] = images;
        Ok([
            DataStream::new(a, Domain::One, self.config.seed)?,
            DataStream::new(b, Domain::Two, self.config.seed)?,
        ])
    }

    /// Trains up to `total_steps`, appending one row per step to
    /// `<out>/log.csv` and writing checkpoints `<out>/ckpt_<step>` every
    /// `checkpoint_every` steps and `<out>/ckpt_final` at the end.
    pub fn run(&mut self, streams: &mut [DataStream; 2], out: &Path) -> Result<()> {
        std::fs::create_dir_all(out).map_err(|e| MunitError::io(out, e))?;
        let mut log = TrainLog::open(&out.join(LOG_FILE))?;
        let started = std::time::Instant::now();
        let first = self.step;
        while self.step < self.config.total_steps {
            let lr = lr_schedule(self.step, self.config.lr, self.config.lr_halving_period)?;
            let report = self.step_once(streams)?;
            log.append(self.step, lr, &report)?;
            let every = self.config.checkpoint_every;
            if every > 0 && self.step.is_multiple_of(every) && self.step < self.config.total_steps {
                self.save(&out.join(format!("ckpt_{}", self.step)))?;
            }
            if self.step.is_multiple_of(500) || self.step == self.config.total_steps {
                let rate = started.elapsed().as_secs_f64() / (self.step - first) as f64;
                log::info!(
                    "step {}/{} gen {:.4} dis {:.4} recon_x1 {:.4} recon_x2 {:.4} ({:.3}s/step)",
                    self.step,
                    self.config.total_steps,
                    report.gen_total,
                    report.dis_total,
                    report.get("recon_x1").unwrap_or(f64::NAN),
                    report.get("recon_x2").unwrap_or(f64::NAN),
                    rate
                );
            }
        }
        self.save(&out.join("ckpt_final"))
    }

    /// Writes `<stem>.json` and `<stem>.bin`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        checkpoint::save(stem, self)
    }

    /// Restores a trainer exactly as it was saved.
    pub fn load(stem: &Path) -> Result<Self> {
        let (config, model, opt, rng, step) = checkpoint::load(stem)?;
        Self::assemble(config, model, opt, rng, step)
    }
}

/// Loads both training domains of a run: the configured directories, or
/// `<data>/domain1` and `<data>/domain2`.
pub fn load_training_images(config: &TrainConfig, data: Option<&Path>) -> Result<[Vec<Tensor<f32>>; 2]> {
    let dir = |explicit: &str, d: Domain| -> Result<PathBuf> {
        if !explicit.is_empty() {
            Ok(PathBuf::from(explicit))
        } else if let Some(data) = data {
            Ok(data.join(format!("domain{}", d.number())))
        } else {
            Err(MunitError::Config(format!("no image directory for domain {d}")))
        }
    };
    let a = load_domain_images(&dir(&config.domain1, Domain::One)?, config.image_size)?;
    let b = load_domain_images(&dir(&config.domain2, Domain::Two)?, config.image_size)?;
    Ok([a, b])
}

/// Full training run: loads data before the first step, then trains and
/// writes the log and checkpoints under `out`.
pub fn train(config: TrainConfig, data: Option<&Path>, out: &Path) -> Result<Trainer> {
    let images = load_training_images(&config, data)?;
    let mut trainer = Trainer::new(config)?;
    let mut streams = trainer.streams(images)?;
    std::fs::create_dir_all(out).map_err(|e| MunitError::io(out, e))?;
    let cfg_path = out.join("train.cfg");
    std::fs::write(&cfg_path, trainer.config.to_text()).map_err(|e| MunitError::io(&cfg_path, e))?;
    trainer.run(&mut streams, out)?;
    Ok(trainer)
}

/// Wide-format CSV: `step,lr,<term columns in name order>,gen_total,dis_total`.
struct TrainLog {
    path: PathBuf,
    file: File,
    header: Option<Vec<String>>,
}

impl TrainLog {
    fn open(path: &Path) -> Result<Self> {
        let exists = path.exists();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| MunitError::io(path, e))?;
        let header = if exists {
            let text = std::fs::read_to_string(path).map_err(|e| MunitError::io(path, e))?;
            text.lines().next().map(|l| l.split(',').map(str::to_string).collect())
        } else {
            None
        };
        Ok(Self {
            path: path.to_path_buf(),
            file,
            header,
        })
    }

    fn append(&mut self, step: u64, lr: f64, report: &LossReport) -> Result<()> {
        let columns: Vec<String> = ["step", "lr"]
            .into_iter()
            .map(str::to_string)
            .chain(report.terms.keys().cloned())
            .chain(["gen_total".to_string(), "dis_total".to_string()])
            .collect();
        let mut text = String::new();
        match &self.header {
            None => {
                text.push_str(&columns.join(","));
                text.push('\n');
                self.header = Some(columns);
            }
            Some(h) if *h != columns => {
                return Err(invalid(format!(
                    "{}: log columns changed from {h:?} to {columns:?}",
                    self.path.display()
                )))
            }
            Some(_) => {}
        }
        let mut row = vec![step.to_string(), lr.to_string()];
        row.extend(report.terms.values().map(f64::to_string));
        row.push(report.gen_total.to_string());
        row.push(report.dis_total.to_string());
        text.push_str(&row.join(","));
        text.push('\n');
        self.file
            .write_all(text.as_bytes())
            .map_err(|e| MunitError::io(&self.path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_halves_per_period() {
        assert_eq!(lr_schedule(0, 1e-4, 100_000).unwrap(), 1e-4);
        assert_eq!(lr_schedule(99_999, 1e-4, 100_000).unwrap(), 1e-4);
        assert_eq!(lr_schedule(100_000, 1e-4, 100_000).unwrap(), 5e-5);
        assert_eq!(lr_schedule(250_000, 1e-4, 100_000).unwrap(), 2.5e-5);
        assert!(lr_schedule(5, 1e-4, 0).is_err());
    }
}
