use super::tensor::{Matrix, Real};
use crate::error::{Error, Result};

/// Handle to a tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// A named trainable tensor with its gradient accumulator.
///
/// `shape` is the logical shape persisted in checkpoints; inside the graph the
/// tensor is viewed as a matrix with `shape[0]` rows (1 for rank 0 or 1) and
/// the remaining dimensions flattened into columns.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> ParamTensor<T> {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<T>) -> Self {
        let numel = shape.iter().product::<usize>();
        assert_eq!(values.len(), numel, "param value count");
        Self {
            name: name.into(),
            shape,
            grad: vec![T::zero(); values.len()],
            values,
        }
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn matrix_shape(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            _ => (self.shape[0], self.shape[1..].iter().product()),
        }
    }

    pub fn as_matrix(&self) -> Matrix<T> {
        let (r, c) = self.matrix_shape();
        Matrix::from_vec(r, c, self.values.clone())
    }
}

/// Ordered collection of trainable tensors. Insertion order is the canonical
/// order for checkpoints and optimizer state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    tensors: Vec<ParamTensor<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<T>) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.tensors.push(ParamTensor::new(name, shape, values));
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.tensors
            .iter()
            .position(|t| t.name == name)
            .map(ParamId)
    }

    pub fn require(&self, name: &str) -> Result<ParamId> {
        self.find(name)
            .ok_or_else(|| Error::Validation(format!("checkpoint lacks parameter {name:?}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor<T>> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor<T>> {
        self.tensors.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(ParamTensor::numel).sum()
    }

    /// Concatenation of all parameter values in canonical order.
    pub fn flatten(&self) -> Vec<T> {
        self.tensors
            .iter()
            .flat_map(|t| t.values.iter().copied())
            .collect()
    }

    pub fn flatten_grads(&self) -> Vec<T> {
        self.tensors
            .iter()
            .flat_map(|t| t.grad.iter().copied())
            .collect()
    }

    pub fn assign_flat(&mut self, flat: &[T]) {
        assert_eq!(flat.len(), self.num_scalars());
        let mut offset = 0;
        for t in &mut self.tensors {
            let n = t.numel();
            t.values.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Adds `grads` (indexed like the set) into the accumulators.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (t, g) in self.tensors.iter_mut().zip(&grads.0) {
            if let Some(g) = g {
                for (a, &b) in t.grad.iter_mut().zip(g) {
                    *a = *a + b;
                }
            }
        }
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| {
                    ParamTensor::new(
                        t.name.clone(),
                        t.shape.clone(),
                        t.values
                            .iter()
                            .map(|v| U::from_f64(v.to_f64_lossless()).expect("cast"))
                            .collect(),
                    )
                })
                .collect(),
        }
    }

    /// True when both sets have the same names and shapes in the same order.
    pub fn same_layout<U: Real>(&self, other: &ParamSet<U>) -> bool {
        self.len() == other.len()
            && self
                .tensors
                .iter()
                .zip(other.iter())
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }
}

/// Per-parameter gradients produced by one backward pass; `None` for
/// parameters the graph never touched.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T>(pub Vec<Option<Vec<T>>>);

impl<T: Real> Gradients<T> {
    pub fn empty(n: usize) -> Self {
        Self(vec![None; n])
    }

    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.0[id.0].as_deref()
    }

    /// In-order summation; callers reduce per-video gradients in a fixed order
    /// so the result is bitwise reproducible.
    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            match (a.as_mut(), b) {
                (Some(a), Some(b)) => {
                    for (x, &y) in a.iter_mut().zip(b) {
                        *x = *x + y;
                    }
                }
                (None, Some(b)) => *a = Some(b.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in self.0.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x = *x * s);
        }
    }

    pub fn flatten(&self, params: &ParamSet<T>) -> Vec<T> {
        self.0
            .iter()
            .zip(params.iter())
            .flat_map(|(g, p)| match g {
                Some(g) => g.clone(),
                None => vec![T::zero(); p.numel()],
            })
            .collect()
    }
}
