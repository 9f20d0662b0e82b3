use crate::element::Element;
use crate::error::{Result, TensorError};

/// Dense row-major n-dimensional array.
///
/// Images use NCHW layout. `grad`, when present, always has the same length as
/// `data`; it is populated by [`crate::Graph::backward_into`] and cleared by
/// [`Tensor::zero_grad`].
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![value; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        Self {
            shape,
            data: (0..numel).map(&mut f).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::full(Vec::<usize>::new(), value)
    }

    /// Marks the tensor as a differentiable leaf and allocates a zeroed gradient.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self.grad = Some(vec![T::zero(); self.data.len()]);
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub(crate) fn accumulate_grad(&mut self, delta: &[T]) {
        let len = self.data.len();
        let g = self.grad.get_or_insert_with(|| vec![T::zero(); len]);
        for (a, &d) in g.iter_mut().zip(delta) {
            *a += d;
        }
    }

    /// Simultaneous mutable access to values and gradient, used by optimizers.
    pub fn data_and_grad_mut(&mut self) -> (&mut [T], Option<&[T]>) {
        (&mut self.data, self.grad.as_deref())
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: self.shape.clone(),
            });
        }
        Ok(self.data[0])
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// `(n, c, h, w)` for rank-4 tensors.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(TensorError::Rank {
                op,
                expected: 4,
                shape: self.shape.clone(),
            }),
        }
    }

    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(TensorError::Rank {
                op,
                expected: 2,
                shape: self.shape.clone(),
            }),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, op: &'static str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(TensorError::NonFinite { op })
        }
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
            requires_grad: self.requires_grad,
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|&v| U::lit(v.as_f64())).collect()),
        }
    }

    /// Copy of sample `i` along the leading (batch) axis, keeping rank.
    pub fn batch_item(&self, i: usize) -> Result<Self> {
        let n = *self.shape.first().ok_or(TensorError::Rank {
            op: "batch_item",
            expected: 1,
            shape: self.shape.clone(),
        })?;
        if i >= n {
            return Err(TensorError::invalid(
                "batch_item",
                format!("index {i} out of range for batch of {n}"),
            ));
        }
        let per = self.data.len() / n;
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Tensor::new(shape, self.data[i * per..(i + 1) * per].to_vec())
    }

    /// Concatenates tensors along the leading axis; trailing extents must agree.
    pub fn stack_batch(items: &[Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| TensorError::invalid("stack_batch", "no tensors"))?;
        let tail = &first.shape[1..];
        let mut data = Vec::new();
        let mut n = 0;
        for t in items {
            if &t.shape[1..] != tail {
                return Err(TensorError::ShapeMismatch {
                    op: "stack_batch",
                    left: first.shape.clone(),
                    right: t.shape.clone(),
                });
            }
            n += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = n;
        Tensor::new(shape, data)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::lit(self.data.len().max(1) as f64)
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<T> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op: "max_abs_diff",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max))
    }

    pub fn mean_abs_diff(&self, other: &Tensor<T>) -> Result<T> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op: "mean_abs_diff",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let s: T = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .sum();
        Ok(s / T::lit(self.data.len().max(1) as f64))
    }
}
