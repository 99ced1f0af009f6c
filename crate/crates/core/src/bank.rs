//! Fixed-capacity FIFO memory bank of teacher embeddings.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Unit-norm tolerance enforced on enqueue in debug builds.
const NORM_TOL: f64 = 1e-6;

/// Ring buffer of `capacity` rows of width `dim`. The oldest row is always
/// the next one overwritten.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorBank {
    capacity: usize,
    dim: usize,
    storage: Vec<f64>,
    head: usize,
    count: usize,
    inserted: u64,
}

impl AnchorBank {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "bank capacity and dim must be positive, got {capacity} × {dim}"
            )));
        }
        Ok(AnchorBank {
            capacity,
            dim,
            storage: vec![0.0; capacity * dim],
            head: 0,
            count: 0,
            inserted: 0,
        })
    }

    pub(crate) fn from_parts(
        capacity: usize,
        dim: usize,
        storage: Vec<f64>,
        head: usize,
        count: usize,
        inserted: u64,
    ) -> Result<Self> {
        if capacity == 0 || dim == 0 || storage.len() != capacity * dim || head >= capacity || count > capacity {
            return Err(Error::Checkpoint("inconsistent anchor bank layout".into()));
        }
        Ok(AnchorBank {
            capacity,
            dim,
            storage,
            head,
            count,
            inserted,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn is_full(&self) -> bool {
        self.count == self.capacity
    }

    /// Total rows ever enqueued.
    pub fn total_inserted(&self) -> u64 {
        self.inserted
    }

    pub(crate) fn raw(&self) -> (&[f64], usize) {
        (&self.storage, self.head)
    }

    /// Appends the rows of `batch` (`[b × dim]`, or a single `[dim]` vector).
    /// Values are copied; no graph linkage is kept.
    pub fn enqueue(&mut self, batch: &Tensor) -> Result<()> {
        let rows = match batch.shape() {
            [d] if *d == self.dim => 1,
            [b, d] if *d == self.dim => *b,
            other => return Err(Error::dim("enqueue", other, &[self.dim])),
        };
        self.enqueue_rows(batch.values(), rows)
    }

    pub fn enqueue_rows(&mut self, values: &[f64], rows: usize) -> Result<()> {
        if values.len() != rows * self.dim {
            return Err(Error::dim("enqueue", &[rows, values.len() / rows.max(1)], &[self.dim]));
        }
        if cfg!(debug_assertions) {
            for (i, row) in values.chunks_exact(self.dim).enumerate() {
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > NORM_TOL {
                    return Err(Error::Contract(format!(
                        "bank row {i} has norm {norm}; anchors must be L2-normalized"
                    )));
                }
            }
        }
        for row in values.chunks_exact(self.dim) {
            let at = self.head * self.dim;
            self.storage[at..at + self.dim].copy_from_slice(row);
            self.head = (self.head + 1) % self.capacity;
            self.count = (self.count + 1).min(self.capacity);
            self.inserted += 1;
        }
        Ok(())
    }

    /// Valid rows, oldest first, as a detached `[count × dim]` tensor.
    pub fn snapshot(&self) -> Result<Tensor> {
        if self.count == 0 {
            return Err(Error::EmptyBank);
        }
        let mut out = Vec::with_capacity(self.count * self.dim);
        let oldest = (self.head + self.capacity - self.count) % self.capacity;
        for k in 0..self.count {
            let at = ((oldest + k) % self.capacity) * self.dim;
            out.extend_from_slice(&self.storage[at..at + self.dim]);
        }
        Tensor::matrix(self.count, self.dim, out)
    }
}
