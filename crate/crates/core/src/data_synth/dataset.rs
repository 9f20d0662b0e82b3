use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tensorkit::{Rng, Tensor};

use super::io::{load_image, save_rgb};
use super::render::render;
use super::scene::{ModeLabel, SceneSpec, Shape, Style1, Style2, StyleSpec, GRID, RADII, ROTATIONS_DEG};
use crate::domain::Domain;
use crate::error::{invalid, MunitError, Result};
use crate::kv::KvConfig;
use crate::kv_fields;

const SYNTH_STREAM: u64 = 0x5157;
pub const DATASET_FORMAT: &str = "munit-synth-v1";
pub const LABELS_FILE: &str = "labels.csv";
pub const MANIFEST_FILE: &str = "dataset.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn index(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }
}

/// `<root>/domainN` for training images, `<root>/test/domainN` for test images.
pub fn domain_dir(root: &Path, split: Split, domain: Domain) -> PathBuf {
    let name = format!("domain{}", domain.number());
    match split {
        Split::Train => root.join(name),
        Split::Test => root.join("test").join(name),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Images per domain in the training split.
    pub n_train: usize,
    /// Images per domain in the test split.
    pub n_test: usize,
    pub image_size: usize,
    pub seed: u64,
    pub mode_label: ModeLabel,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_test: 500,
            image_size: 32,
            seed: 0,
            mode_label: ModeLabel::Hue,
        }
    }
}

kv_fields!(DatasetConfig {
    n_train,
    n_test,
    image_size,
    seed,
    mode_label,
});

impl KvConfig for DatasetConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.kv_set(key, value)
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        self.kv_pairs()
    }

    fn validate(&self) -> Result<()> {
        if self.n_train == 0 {
            return Err(MunitError::Config("n_train must be at least 1".into()));
        }
        if self.image_size < 8 {
            return Err(MunitError::Config("image_size must be at least 8".into()));
        }
        Ok(())
    }
}

/// One labeled image: ground-truth content and style plus the mode label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Labeled {
    pub filename: String,
    pub scene: SceneSpec,
    pub style: StyleSpec,
    pub mode: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row1 {
    filename: String,
    shape: Shape,
    cx: u8,
    cy: u8,
    rot: u32,
    scale: u8,
    thickness: u8,
    gray: u8,
    mode: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row2 {
    filename: String,
    shape: Shape,
    cx: u8,
    cy: u8,
    rot: u32,
    scale: u8,
    hue: u8,
    sat: u8,
    tint: u8,
    mode: usize,
}

fn rot_index(deg: u32) -> Result<u8> {
    ROTATIONS_DEG
        .iter()
        .position(|&d| d == deg)
        .map(|i| i as u8)
        .ok_or_else(|| invalid(format!("rotation {deg} is not one of {ROTATIONS_DEG:?}")))
}

/// Draws a scene with a uniformly chosen shape, then uniform position,
/// rotation and scale.
pub fn sample_scene(rng: &mut Rng) -> SceneSpec {
    let shape = Shape::ALL[rng.below(Shape::ALL.len())];
    let cx = rng.below(GRID.len()) as u8;
    let cy = rng.below(GRID.len()) as u8;
    let rot = rng.below(shape.rotations()) as u8;
    let scale = rng.below(RADII.len()) as u8;
    SceneSpec {
        shape,
        cx,
        cy,
        rot,
        scale,
    }
}

pub fn sample_style(domain: Domain, rng: &mut Rng) -> StyleSpec {
    let all = StyleSpec::all(domain);
    all[rng.below(all.len())]
}

/// Summary written next to the images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub seed: u64,
    pub config: DatasetConfig,
    /// Images per domain: `[domain1, domain2]`.
    pub train: [usize; 2],
    pub test: [usize; 2],
}

/// Renders both splits of both domains under `out`.
///
/// Every image draws its scene and style from its own stream keyed by
/// `(seed, split, domain, index)`, so the two domains are independent samples
/// and regeneration is byte-identical.
pub fn generate_dataset(cfg: &DatasetConfig, out: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    for split in [Split::Train, Split::Test] {
        let n = match split {
            Split::Train => cfg.n_train,
            Split::Test => cfg.n_test,
        };
        for domain in Domain::BOTH {
            let dir = domain_dir(out, split, domain);
            std::fs::create_dir_all(&dir).map_err(|e| MunitError::io(&dir, e))?;
            let stream = Rng::with_stream(cfg.seed, SYNTH_STREAM + 2 * split.index() + domain.index() as u64);
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let mut rng = stream.split(i as u64);
                let scene = sample_scene(&mut rng);
                let style = sample_style(domain, &mut rng);
                let filename = format!("{i:05}.png");
                save_rgb(&render(&scene, &style, cfg.image_size)?, &dir.join(&filename))?;
                labels.push(Labeled {
                    filename,
                    scene,
                    style,
                    mode: cfg.mode_label.mode(&scene, &style),
                });
            }
            write_labels(&dir.join(LABELS_FILE), &labels)?;
        }
    }
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        seed: cfg.seed,
        config: cfg.clone(),
        train: [cfg.n_train; 2],
        test: [cfg.n_test; 2],
    };
    let path = out.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| MunitError::json("dataset manifest", e))?;
    std::fs::write(&path, json).map_err(|e| MunitError::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| MunitError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| MunitError::json(path.display().to_string(), e))
}

fn csv_err(path: &Path, e: csv::Error) -> MunitError {
    MunitError::Dataset(format!("{}: {e}", path.display()))
}

pub fn write_labels(path: &Path, labels: &[Labeled]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for l in labels {
        let s = &l.scene;
        let rot = s.rotation_deg();
        let res = match l.style {
            StyleSpec::One(st) => w.serialize(Row1 {
                filename: l.filename.clone(),
                shape: s.shape,
                cx: s.cx,
                cy: s.cy,
                rot,
                scale: s.scale,
                thickness: st.thickness,
                gray: st.gray,
                mode: l.mode,
            }),
            StyleSpec::Two(st) => w.serialize(Row2 {
                filename: l.filename.clone(),
                shape: s.shape,
                cx: s.cx,
                cy: s.cy,
                rot,
                scale: s.scale,
                hue: st.hue,
                sat: st.sat,
                tint: st.tint,
                mode: l.mode,
            }),
        };
        res.map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| MunitError::io(path, e))
}

/// Reads a domain directory's label file. Only metrics and probes call this;
/// training never sees labels.
pub fn read_labels(path: &Path, domain: Domain) -> Result<Vec<Labeled>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    match domain {
        Domain::One => {
            for row in r.deserialize::<Row1>() {
                let row = row.map_err(|e| csv_err(path, e))?;
                let scene = SceneSpec::new(row.shape, row.cx, row.cy, rot_index(row.rot)?, row.scale)?;
                let style = StyleSpec::One(Style1 {
                    thickness: row.thickness,
                    gray: row.gray,
                });
                style.validate()?;
                out.push(Labeled {
                    filename: row.filename,
                    scene,
                    style,
                    mode: row.mode,
                });
            }
        }
        Domain::Two => {
            for row in r.deserialize::<Row2>() {
                let row = row.map_err(|e| csv_err(path, e))?;
                let scene = SceneSpec::new(row.shape, row.cx, row.cy, rot_index(row.rot)?, row.scale)?;
                let style = StyleSpec::Two(Style2 {
                    hue: row.hue,
                    sat: row.sat,
                    tint: row.tint,
                });
                style.validate()?;
                out.push(Labeled {
                    filename: row.filename,
                    scene,
                    style,
                    mode: row.mode,
                });
            }
        }
    }
    Ok(out)
}

/// Images of one domain directory with their labels, in label-file order.
pub struct LabeledSet {
    pub domain: Domain,
    pub images: Vec<Tensor<f32>>,
    pub labels: Vec<Labeled>,
}

impl LabeledSet {
    pub fn load(dir: &Path, domain: Domain, size: usize) -> Result<Self> {
        let labels = read_labels(&dir.join(LABELS_FILE), domain)?;
        let images = labels
            .iter()
            .map(|l| load_image(&dir.join(&l.filename), Some(size)))
            .collect::<Result<_>>()?;
        Ok(Self {
            domain,
            images,
            labels,
        })
    }

    /// Renders a set directly from labels, without touching the disk.
    pub fn render(domain: Domain, labels: Vec<Labeled>, size: usize) -> Result<Self> {
        let images = labels
            .iter()
            .map(|l| Ok(super::io::rgb_to_tensor(&render(&l.scene, &l.style, size)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            domain,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// First `n` items.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            domain: self.domain,
            images: self.images.iter().take(n).cloned().collect(),
            labels: self.labels.iter().take(n).cloned().collect(),
        }
    }
}
