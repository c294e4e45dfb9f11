//! Named parameter slots shared by models and optimizers.

use rand::Rng;

use crate::numerics::Matrix;
use crate::scalar::Scalar;

/// Flat registry of trainable arrays. Slot indices are stable for the life
/// of the set, so tapes, gradients, and optimizer state all line up.
#[derive(Debug, Clone)]
pub struct ParamSet<T> {
    slots: Vec<Matrix<T>>,
    names: Vec<String>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            slots: Vec::new(),
            names: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix<T>) -> usize {
        self.slots.push(value);
        self.names.push(name.into());
        self.slots.len() - 1
    }

    /// Uniform init in `(-1/sqrt(d), 1/sqrt(d))` with `d` the layer input
    /// dimension (the init rule used by every learned model here).
    pub fn add_uniform_fanin(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> usize {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let m = Matrix::from_fn(rows, cols, |_, _| {
            T::from_f64(rng.random_range(-bound..bound))
        });
        self.add(name, m)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn value(&self, slot: usize) -> &Matrix<T> {
        &self.slots[slot]
    }

    pub fn value_mut(&mut self, slot: usize) -> &mut Matrix<T> {
        &mut self.slots[slot]
    }

    pub fn name(&self, slot: usize) -> &str {
        &self.names[slot]
    }

    pub fn slots(&self) -> &[Matrix<T>] {
        &self.slots
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix<T>)> {
        self.names.iter().map(String::as_str).zip(self.slots.iter())
    }

    /// Total number of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.slots.iter().map(Matrix::len).sum()
    }

    /// Flatten all slots into one vector, slot-major then row-major.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.n_scalars());
        for s in &self.slots {
            out.extend_from_slice(s.data());
        }
        out
    }

    /// Inverse of [`ParamSet::flatten`]; shapes must already match.
    pub fn unflatten_into(&mut self, flat: &[T]) {
        let mut offset = 0;
        for s in &mut self.slots {
            let n = s.len();
            s.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        debug_assert_eq!(offset, flat.len());
    }

    pub fn all_finite(&self) -> bool {
        self.slots.iter().all(Matrix::is_finite)
    }
}
