use crate::error::{invalid, Result};

/// Probabilities below this are raised to it inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Class posteriors of the translations of one input, each with a weight.
/// Weights are normalized per input; Monte Carlo samples use equal weights,
/// exact enumeration uses the outcome probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct InputPosteriors {
    pub probs: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl InputPosteriors {
    pub fn uniform(probs: Vec<Vec<f64>>) -> Self {
        let weights = vec![1.0; probs.len()];
        Self { probs, weights }
    }

    fn normalized_weights(&self) -> Result<Vec<f64>> {
        let total: f64 = self.weights.iter().sum();
        if self.probs.is_empty() || self.weights.len() != self.probs.len() || total.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(invalid("each input needs at least one weighted posterior"));
        }
        Ok(self.weights.iter().map(|w| w / total).collect())
    }

    /// Weighted mean posterior of this input.
    pub fn marginal(&self) -> Result<Vec<f64>> {
        let w = self.normalized_weights()?;
        let k = self.probs[0].len();
        let mut m = vec![0.0; k];
        for (p, wi) in self.probs.iter().zip(&w) {
            if p.len() != k {
                return Err(invalid("posteriors of one input differ in length"));
            }
            for (mi, pi) in m.iter_mut().zip(p) {
                *mi += wi * pi;
            }
        }
        Ok(m)
    }

    fn mean_kl_to(&self, q: &[f64]) -> Result<f64> {
        let w = self.normalized_weights()?;
        Ok(self.probs.iter().zip(&w).map(|(p, wi)| wi * kl(p, q)).sum())
    }
}

/// `KL(p || q)` in nats with both sides floored at [`PROB_FLOOR`]; terms with
/// `p = 0` contribute nothing. Clamped at 0: a marginal that equals `p` up to
/// rounding can otherwise give about -1e-16.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi.max(PROB_FLOOR).ln() - qi.max(PROB_FLOOR).ln()))
        .sum::<f64>()
        .max(0.0)
}

fn check(inputs: &[InputPosteriors]) -> Result<()> {
    if inputs.is_empty() {
        return Err(invalid("no inputs"));
    }
    Ok(())
}

/// Conditional score: mean over inputs of the expected KL between each
/// translation's posterior and that input's own marginal posterior. Zero for
/// translators that produce one output per input.
pub fn cis_from_posteriors(inputs: &[InputPosteriors]) -> Result<f64> {
    check(inputs)?;
    let mut total = 0.0;
    for inp in inputs {
        total += inp.mean_kl_to(&inp.marginal()?)?;
    }
    Ok(total / inputs.len() as f64)
}

/// Unconditional score: as [`cis_from_posteriors`] with the marginal pooled
/// over all inputs (inputs weighted equally).
pub fn is_from_posteriors(inputs: &[InputPosteriors]) -> Result<f64> {
    check(inputs)?;
    let marginals = inputs.iter().map(InputPosteriors::marginal).collect::<Result<Vec<_>>>()?;
    let k = marginals[0].len();
    let mut pooled = vec![0.0; k];
    for m in &marginals {
        if m.len() != k {
            return Err(invalid("inputs differ in class count"));
        }
        for (a, b) in pooled.iter_mut().zip(m) {
            *a += b / inputs.len() as f64;
        }
    }
    let mut total = 0.0;
    for inp in inputs {
        total += inp.mean_kl_to(&pooled)?;
    }
    Ok(total / inputs.len() as f64)
}
