use serde::{Deserialize, Serialize};

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::param::{ParamId, ParamStore};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers for one optimizer partition.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub ids: Vec<ParamId>,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Element> AdamState<T> {
    pub fn new(store: &ParamStore<T>, ids: Vec<ParamId>) -> Self {
        let zeros = |id: &ParamId| vec![T::zero(); store.get(*id).numel()];
        Self {
            m: ids.iter().map(zeros).collect(),
            v: ids.iter().map(zeros).collect(),
            ids,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of a single buffer. `step` is the 1-based
/// index of this update.
pub fn adam_update<T: Element>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    step: u64,
    hp: &Adam,
) -> Result<()> {
    if param.len() != grad.len() || m.len() != param.len() || v.len() != param.len() {
        return Err(TensorError::ShapeMismatch {
            op: "adam_step",
            left: vec![param.len()],
            right: vec![grad.len()],
        });
    }
    let (b1, b2) = (T::lit(hp.beta1), T::lit(hp.beta2));
    let bc1 = 1.0 - hp.beta1.powi(step as i32);
    let bc2 = 1.0 - hp.beta2.powi(step as i32);
    let lr_t = T::lit(hp.lr / bc1);
    let inv_bc2 = T::lit(1.0 / bc2);
    let eps = T::lit(hp.eps);
    for (((p, &g), mi), vi) in param.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
        *mi = b1 * *mi + (T::one() - b1) * g;
        *vi = b2 * *vi + (T::one() - b2) * g * g;
        *p -= lr_t * *mi / ((*vi * inv_bc2).sqrt() + eps);
    }
    Ok(())
}

/// Applies one Adam step to every parameter tracked by `state`, reading the
/// gradients accumulated in `store`. Parameters without a gradient buffer are
/// treated as having zero gradient.
pub fn adam_step<T: Element>(store: &mut ParamStore<T>, state: &mut AdamState<T>, hp: &Adam) -> Result<()> {
    state.step += 1;
    for (k, &id) in state.ids.iter().enumerate() {
        let tensor = store.get_mut(id);
        let (data, grad) = tensor.data_and_grad_mut();
        let zeros;
        let grad = match grad {
            Some(g) => g,
            None => {
                zeros = vec![T::zero(); data.len()];
                &zeros
            }
        };
        adam_update(data, grad, &mut state.m[k], &mut state.v[k], state.step, hp)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let hp = Adam {
            lr: 0.01,
            eps: 0.0,
            ..Adam::default()
        };
        let mut p = vec![1.0f64, 1.0, 1.0];
        let g = vec![0.3, -2.0, 1e-3];
        let (mut m, mut v) = (vec![0.0; 3], vec![0.0; 3]);
        adam_update(&mut p, &g, &mut m, &mut v, 1, &hp).unwrap();
        for (pi, gi) in p.iter().zip(&g) {
            assert!((pi - (1.0 - 0.01 * gi.signum())).abs() < 1e-12);
        }
    }

    #[test]
    fn paper_lr_first_delta() {
        let hp = Adam::default();
        let mut p = vec![0.0f64];
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        adam_update(&mut p, &[1.0], &mut m, &mut v, 1, &hp).unwrap();
        assert!((p[0] + 1e-4).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_leaves_params_and_moments() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", "gen", crate::Tensor::full([4], 0.5));
        let mut st = AdamState::new(&store, vec![id]);
        adam_step(&mut store, &mut st, &Adam::default()).unwrap();
        assert_eq!(store.get(id).data(), &[0.5; 4]);
        assert_eq!(st.m[0], vec![0.0; 4]);
        assert_eq!(st.v[0], vec![0.0; 4]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn mismatched_buffers_rejected() {
        let mut p = vec![0.0f32; 2];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        assert!(adam_update(&mut p, &[1.0], &mut m, &mut v, 1, &Adam::default()).is_err());
    }
}
