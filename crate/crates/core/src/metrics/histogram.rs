use std::io::Write;
use std::path::Path;

use serde::Serialize;
use tensorkit::{Rng, Tensor};

use super::classifier::ModeClassifier;
use crate::data_synth::{render, rgb_to_tensor, sample_scene, sample_style, SceneSpec};
use crate::error::{invalid, MunitError, Result};
use crate::Domain;

const IN_EPS: f64 = 1e-5;
const PAIR_STREAM: u64 = 0xC0DE;

/// Two images to compare.
pub type ImagePair = (Tensor<f32>, Tensor<f32>);

/// Same scene rendered in both domains with random styles.
pub fn same_scene_pairs(n: usize, size: usize, seed: u64) -> Result<Vec<ImagePair>> {
    let mut rng = Rng::with_stream(seed, PAIR_STREAM);
    (0..n)
        .map(|_| {
            let scene = sample_scene(&mut rng);
            let a = render(&scene, &sample_style(Domain::One, &mut rng), size)?;
            let b = render(&scene, &sample_style(Domain::Two, &mut rng), size)?;
            Ok((rgb_to_tensor(&a), rgb_to_tensor(&b)))
        })
        .collect()
}

/// Two different scenes rendered in the same domain, alternating domains.
pub fn same_domain_pairs(n: usize, size: usize, seed: u64) -> Result<Vec<ImagePair>> {
    let mut rng = Rng::with_stream(seed, PAIR_STREAM + 1);
    (0..n)
        .map(|i| {
            let domain = Domain::BOTH[i % 2];
            let a = sample_scene(&mut rng);
            let mut b: SceneSpec = sample_scene(&mut rng);
            while b == a {
                b = sample_scene(&mut rng);
            }
            let ia = render(&a, &sample_style(domain, &mut rng), size)?;
            let ib = render(&b, &sample_style(domain, &mut rng), size)?;
            Ok((rgb_to_tensor(&ia), rgb_to_tensor(&ib)))
        })
        .collect()
}

/// Standardizes every channel of every item over its spatial extent.
pub fn instance_normalize(f: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (_, _, h, w) = f.dims4("instance_normalize")?;
    let plane = h * w;
    let mut out = f.clone();
    for chunk in out.data_mut().chunks_exact_mut(plane) {
        let mean = chunk.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
        let var = chunk.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / plane as f64;
        let inv = 1.0 / (var + IN_EPS).sqrt();
        for v in chunk.iter_mut() {
            *v = ((*v as f64 - mean) * inv) as f32;
        }
    }
    Ok(out)
}

/// Mean squared difference between the embedder's trunk features of each
/// pair, optionally instance-normalized first.
pub fn feature_distances(embedder: &ModeClassifier, pairs: &[ImagePair], use_in: bool) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(invalid("empty pair set"));
    }
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(64) {
        let a = Tensor::stack_batch(&chunk.iter().map(|p| p.0.clone()).collect::<Vec<_>>())?;
        let b = Tensor::stack_batch(&chunk.iter().map(|p| p.1.clone()).collect::<Vec<_>>())?;
        let (mut fa, mut fb) = (embedder.feature_maps(&a)?, embedder.feature_maps(&b)?);
        if use_in {
            fa = instance_normalize(&fa)?;
            fb = instance_normalize(&fb)?;
        }
        let per = fa.numel() / chunk.len();
        for (x, y) in fa.data().chunks_exact(per).zip(fb.data().chunks_exact(per)) {
            let d = x.iter().zip(y).map(|(&p, &q)| (p as f64 - q as f64).powi(2)).sum::<f64>();
            out.push(d / per as f64);
        }
    }
    Ok(out)
}

pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(invalid("median of an empty set"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistogramBin {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub same_scene: usize,
    pub same_domain: usize,
}

/// Distance distributions of the two pair populations under one feature
/// setting.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistanceHistograms {
    pub use_in: bool,
    pub same_scene_median: f64,
    pub same_domain_median: f64,
    pub pairs: [usize; 2],
    pub bins: Vec<HistogramBin>,
    #[serde(skip)]
    pub same_scene: Vec<f64>,
    #[serde(skip)]
    pub same_domain: Vec<f64>,
}

impl DistanceHistograms {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        for b in &self.bins {
            w.serialize(b).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| MunitError::io(path, e))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> MunitError {
    MunitError::Dataset(format!("{}: {e}", path.display()))
}

pub fn feature_distance_histograms(
    embedder: &ModeClassifier,
    same_scene: &[ImagePair],
    same_domain: &[ImagePair],
    use_in: bool,
    bins: usize,
) -> Result<DistanceHistograms> {
    let a = feature_distances(embedder, same_scene, use_in)?;
    let b = feature_distances(embedder, same_domain, use_in)?;
    let hi = a.iter().chain(&b).copied().fold(0.0, f64::max);
    let bins = bins.max(1);
    let width = if hi > 0.0 { hi / bins as f64 } else { 1.0 };
    let index = |v: f64| ((v / width) as usize).min(bins - 1);
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            bin_lo: i as f64 * width,
            bin_hi: (i + 1) as f64 * width,
            same_scene: 0,
            same_domain: 0,
        })
        .collect();
    a.iter().for_each(|&v| out[index(v)].same_scene += 1);
    b.iter().for_each(|&v| out[index(v)].same_domain += 1);
    Ok(DistanceHistograms {
        use_in,
        same_scene_median: median(&a)?,
        same_domain_median: median(&b)?,
        pairs: [a.len(), b.len()],
        bins: out,
        same_scene: a,
        same_domain: b,
    })
}

/// Writes both histograms as CSV plus a JSON summary into `dir`.
pub fn write_histogram_pair(dir: &Path, with_in: &DistanceHistograms, without_in: &DistanceHistograms) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| MunitError::io(dir, e))?;
    with_in.write_csv(&dir.join("feature_distance_in.csv"))?;
    without_in.write_csv(&dir.join("feature_distance_raw.csv"))?;
    let mut f = std::fs::File::create(dir.join("feature_distance.json")).map_err(|e| MunitError::io(dir, e))?;
    let json = serde_json::to_string_pretty(&[with_in, without_in]).map_err(|e| MunitError::json("histograms", e))?;
    writeln!(f, "{json}").map_err(|e| MunitError::io(dir, e))
}
