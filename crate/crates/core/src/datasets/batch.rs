use ndtensor::RngState;

use super::{ItemAttributeTable, WindowSet, PAD};

/// Yields index batches over `0..n`, covering every index once per epoch.
/// The final partial batch is emitted.
#[derive(Debug, Clone)]
pub struct BatchIterator {
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl BatchIterator {
    /// Panics when `batch_size` is zero.
    pub fn new(n: usize, batch_size: usize, shuffle: Option<&mut RngState>) -> Self {
        assert!(batch_size >= 1, "batch_size must be at least 1");
        let mut order: Vec<usize> = (0..n).collect();
        if let Some(rng) = shuffle {
            rng.shuffle(&mut order);
        }
        Self {
            order,
            batch_size,
            pos: 0,
        }
    }
}

impl Iterator for BatchIterator {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let out = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(out)
    }
}

/// A batch of windows, batch-major: step `t` of row `b` is `inputs[b * steps + t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub size: usize,
    pub steps: usize,
    /// Input item indices; `None` marks padding.
    pub inputs: Vec<Option<usize>>,
    /// Attribute sets of the inputs, same layout as `inputs`.
    pub input_attrs: Vec<Vec<u32>>,
    pub targets: Vec<usize>,
    /// Multi-hot target attribute matrix, `size x n_attrs` row-major.
    pub target_attrs: Vec<f64>,
    pub target_attr_sets: Vec<Vec<u32>>,
}

impl SequenceBatch {
    pub fn from_windows(set: &WindowSet, indices: &[usize], table: &ItemAttributeTable) -> Self {
        let steps = set.window() - 1;
        let n_attrs = table.n_attrs();
        let mut b = SequenceBatch {
            size: indices.len(),
            steps,
            inputs: Vec::with_capacity(indices.len() * steps),
            input_attrs: Vec::with_capacity(indices.len() * steps),
            targets: Vec::with_capacity(indices.len()),
            target_attrs: vec![0.0; indices.len() * n_attrs],
            target_attr_sets: Vec::with_capacity(indices.len()),
        };
        for (row, &i) in indices.iter().enumerate() {
            let w = set.get(i);
            for &item in w.inputs() {
                if item == PAD {
                    b.inputs.push(None);
                    b.input_attrs.push(Vec::new());
                } else {
                    b.inputs.push(Some(item as usize));
                    b.input_attrs.push(table.attrs(item as usize).to_vec());
                }
            }
            let t = w.target() as usize;
            b.targets.push(t);
            for &a in table.attrs(t) {
                b.target_attrs[row * n_attrs + a as usize] = 1.0;
            }
            b.target_attr_sets.push(table.attrs(t).to_vec());
        }
        b
    }

    /// Input item ids at step `t` across the batch.
    pub fn step_items(&self, t: usize) -> Vec<Option<usize>> {
        (0..self.size).map(|b| self.inputs[b * self.steps + t]).collect()
    }

    /// Attribute sets at step `t` across the batch.
    pub fn step_attrs(&self, t: usize) -> Vec<&[u32]> {
        (0..self.size).map(|b| self.input_attrs[b * self.steps + t].as_slice()).collect()
    }
}
