use tensorkit::{Rng, Tensor};

use crate::domain::Domain;
use crate::error::{MunitError, Result};

const ORDER_STREAM: u64 = 0xDA7A;

/// Unlabeled images of one domain visited in a fresh random order every epoch.
///
/// The order of epoch `e` depends only on `(seed, domain, e)`, so the image fed
/// at any step is a pure function of the step index and the two domains are
/// shuffled independently.
pub struct DataStream {
    images: Vec<Tensor<f32>>,
    base: Rng,
    epoch: u64,
    order: Vec<usize>,
}

impl DataStream {
    pub fn new(images: Vec<Tensor<f32>>, domain: Domain, seed: u64) -> Result<Self> {
        if images.is_empty() {
            return Err(MunitError::Dataset(format!("domain {domain} has no images")));
        }
        if let Some(i) = images.iter().position(|x| !x.all_finite()) {
            return Err(MunitError::Dataset(format!("domain {domain} image {i} has non-finite pixels")));
        }
        let base = Rng::with_stream(seed, ORDER_STREAM + domain.index() as u64);
        let mut s = Self {
            images,
            base,
            epoch: 0,
            order: Vec::new(),
        };
        s.reorder(0);
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    fn reorder(&mut self, epoch: u64) {
        let mut order: Vec<usize> = (0..self.images.len()).collect();
        self.base.split(epoch).shuffle(&mut order);
        self.order = order;
        self.epoch = epoch;
    }

    /// Image index used at `step` (batch size 1).
    pub fn index_at(&mut self, step: u64) -> usize {
        let n = self.images.len() as u64;
        let epoch = step / n;
        if epoch != self.epoch {
            self.reorder(epoch);
        }
        self.order[(step % n) as usize]
    }

    pub fn image_at(&mut self, step: u64) -> &Tensor<f32> {
        let i = self.index_at(step);
        &self.images[i]
    }
}

/// Mirrors an `[N, C, H, W]` image left to right.
pub fn flip_horizontal(x: &Tensor<f32>) -> Tensor<f32> {
    let s = x.shape();
    let w = s[s.len() - 1];
    let data = x.data();
    Tensor::new(
        s.to_vec(),
        data.chunks_exact(w)
            .flat_map(|row| row.iter().rev().copied())
            .collect(),
    )
    .expect("shape preserved")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images(n: usize) -> Vec<Tensor<f32>> {
        (0..n).map(|i| Tensor::full([1, 1, 2, 2], i as f32)).collect()
    }

    #[test]
    fn each_epoch_visits_every_image_once() {
        let mut s = DataStream::new(images(7), Domain::One, 3).unwrap();
        for epoch in 0..3u64 {
            let mut seen: Vec<usize> = (0..7).map(|k| s.index_at(epoch * 7 + k)).collect();
            seen.sort();
            assert_eq!(seen, (0..7).collect::<Vec<_>>());
        }
    }

    #[test]
    fn order_is_a_function_of_step_and_domain() {
        let mut a = DataStream::new(images(9), Domain::One, 3).unwrap();
        let mut b = DataStream::new(images(9), Domain::One, 3).unwrap();
        let forward: Vec<usize> = (0..30).map(|t| a.index_at(t)).collect();
        let backward: Vec<usize> = (0..30).rev().map(|t| b.index_at(t)).collect();
        assert_eq!(forward, backward.into_iter().rev().collect::<Vec<_>>());
        let mut c = DataStream::new(images(9), Domain::Two, 3).unwrap();
        let other: Vec<usize> = (0..30).map(|t| c.index_at(t)).collect();
        assert_ne!(forward, other);
    }

    #[test]
    fn flip_reverses_rows() {
        let x = Tensor::new([1, 1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(flip_horizontal(&x).data(), &[3.0, 2.0, 1.0, 6.0, 5.0, 4.0]);
        assert!(DataStream::new(Vec::new(), Domain::One, 0).is_err());
    }
}
