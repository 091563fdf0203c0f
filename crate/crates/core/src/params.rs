//! Uniform access to the named tensors inside a parameter struct, shared by
//! the optimizer and the checkpoint writer.

use crate::tensor::{Matrix, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub trait ParamSet {
    /// Every tensor, in a fixed order, with a unique dotted name.
    fn tensors(&self) -> Vec<TensorRef<'_>>;

    /// Mutable views in the same order as [`ParamSet::tensors`].
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// Sum of squares over every component.
    fn squared_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|x| x * x)
            .sum()
    }

    fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }

    fn zero(&mut self) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// `self += other`, tensor by tensor. Panics if the two sets are not
    /// shape-congruent.
    fn add_assign(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let src = other.tensors();
        let dst = self.tensors_mut();
        assert_eq!(src.len(), dst.len(), "add_assign: tensor count mismatch");
        for (d, s) in dst.into_iter().zip(src) {
            assert_eq!(d.len(), s.data.len(), "add_assign: size mismatch in {}", s.name);
            for (a, b) in d.iter_mut().zip(s.data) {
                *a += b;
            }
        }
    }
}

pub(crate) fn mat_ref<'a>(prefix: &str, name: &str, m: &'a Matrix) -> TensorRef<'a> {
    TensorRef {
        name: join(prefix, name),
        shape: vec![m.rows(), m.cols()],
        data: m.as_slice(),
    }
}

pub(crate) fn vec_ref<'a>(prefix: &str, name: &str, v: &'a Vector) -> TensorRef<'a> {
    TensorRef {
        name: join(prefix, name),
        shape: vec![v.len()],
        data: v.as_slice(),
    }
}

pub(crate) fn prefixed<'a>(prefix: &str, ts: Vec<TensorRef<'a>>) -> Vec<TensorRef<'a>> {
    ts.into_iter()
        .map(|mut t| {
            t.name = join(prefix, &t.name);
            t
        })
        .collect()
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
