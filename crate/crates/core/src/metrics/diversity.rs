use tensorkit::{Element, Tensor};

use super::classifier::ModeClassifier;
use crate::error::{invalid, Result};
use crate::losses::FeatureNet;

const NORM_FLOOR: f64 = 1e-10;

/// Feature maps with every spatial position's channel vector scaled to unit
/// length, one `Vec` per image.
pub fn normalized_embeddings(embedder: &ModeClassifier, x: &Tensor<f32>) -> Result<Vec<Vec<f64>>> {
    if !embedder.is_trained() {
        return Err(invalid("diversity embedder is untrained"));
    }
    let f = embedder.feature_maps(x)?;
    let (n, c, h, w) = f.dims4("embedding")?;
    let plane = h * w;
    let data = f.data();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let base = i * c * plane;
        let mut e = vec![0.0; c * plane];
        for p in 0..plane {
            let norm = (0..c)
                .map(|ch| data[base + ch * plane + p].as_f64().powi(2))
                .sum::<f64>()
                .sqrt()
                .max(NORM_FLOOR);
            for ch in 0..c {
                e[p * c + ch] = data[base + ch * plane + p].as_f64() / norm;
            }
        }
        out.push(e);
    }
    Ok(out)
}

/// Mean over spatial positions of the squared distance between normalized
/// feature vectors. `c` is the channel count.
pub fn embedding_distance(a: &[f64], b: &[f64], c: usize) -> f64 {
    let positions = a.len() / c;
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / positions as f64
}

/// Mean distance of each `(a, b)` pair of images.
pub fn mean_pair_distance(embedder: &ModeClassifier, a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    let ea = normalized_embeddings(embedder, a)?;
    let eb = normalized_embeddings(embedder, b)?;
    if ea.len() != eb.len() || ea.is_empty() {
        return Err(invalid("pair batches must be non-empty and equal length"));
    }
    let c = embedder.feature_channels();
    Ok(ea.iter().zip(&eb).map(|(x, y)| embedding_distance(x, y, c)).sum::<f64>() / ea.len() as f64)
}
