//! The deployment support buffer: K stored embeddings for each learnt task.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::index;

use crate::binio::{self, Reader, Writer};
use crate::{rng, Error, Result};

const MAGIC: &[u8; 4] = b"DBUF";
pub const BUFFER_VERSION: u32 = 1;
/// magic + version + N + K + dim.
pub const HEADER_BYTES: usize = 4 + 4 * 4;

/// Pick `k` rows of `collected` uniformly without replacement.
pub fn selective_sample(collected: ArrayView2<f32>, k: usize, seed: u64) -> Result<Array2<f32>> {
    let n = collected.nrows();
    if n < k {
        return Err(Error::Insufficient(format!("need {k} embeddings, have {n}")));
    }
    let mut picked = index::sample(&mut rng::stream(seed, "selective-sample"), n, k).into_vec();
    // keep the chosen items in collection order
    picked.sort_unstable();
    Ok(collected.select(ndarray::Axis(0), &picked))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportBuffer {
    k: usize,
    dim: usize,
    /// Row `i` belongs to class `i / k`.
    entries: Array2<f32>,
}

impl SupportBuffer {
    pub fn new(k: usize, dim: usize) -> Self {
        assert!(k > 0, "k must be positive");
        Self { k, dim, entries: Array2::zeros((0, dim)) }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.entries.nrows() / self.k
    }

    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.nrows() == 0
    }

    pub fn entries(&self) -> ArrayView2<'_, f32> {
        self.entries.view()
    }

    pub fn class(&self, class_id: usize) -> ArrayView2<'_, f32> {
        self.entries.slice(ndarray::s![class_id * self.k..(class_id + 1) * self.k, ..])
    }

    pub fn class_ids(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).map(|i| i / self.k)
    }

    /// A new buffer with `sampled` appended as class `class_id`, which must
    /// be the next free id.
    pub fn merge(&self, class_id: usize, sampled: ArrayView2<f32>) -> Result<SupportBuffer> {
        if class_id != self.n_classes() {
            return Err(Error::validation(format!(
                "class id {class_id} is not contiguous; next id is {}",
                self.n_classes()
            )));
        }
        if sampled.nrows() != self.k || sampled.ncols() != self.dim {
            return Err(Error::Shape(format!(
                "expected {}x{} samples, got {}x{}",
                self.k,
                self.dim,
                sampled.nrows(),
                sampled.ncols()
            )));
        }
        if u16::try_from(class_id).is_err() {
            return Err(Error::validation("class id exceeds 16 bits"));
        }
        let entries = ndarray::concatenate![ndarray::Axis(0), self.entries, sampled];
        Ok(Self { k: self.k, dim: self.dim, entries })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.magic(MAGIC)
            .u32(BUFFER_VERSION)
            .u32(self.n_classes() as u32)
            .u32(self.k as u32)
            .u32(self.dim as u32);
        for (cid, row) in self.class_ids().zip(self.entries.rows()) {
            w.u16(cid as u16).f32s(row.iter());
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(MAGIC)?;
        binio::check_version(BUFFER_VERSION, r.u32()?)?;
        let n = r.u32()? as usize;
        let k = r.u32()? as usize;
        let dim = r.u32()? as usize;
        if k == 0 {
            return Err(Error::Parse("buffer with k = 0".into()));
        }
        let mut data = Vec::with_capacity(n * k * dim);
        for i in 0..n * k {
            let cid = r.u16()? as usize;
            if cid != i / k {
                return Err(Error::Parse(format!("record {i} has class {cid}, expected {}", i / k)));
            }
            data.extend(r.f32s(dim)?);
        }
        r.finish()?;
        let entries = Array2::from_shape_vec((n * k, dim), data).expect("sized above");
        Ok(Self { k, dim, entries })
    }

    /// Exact serialized length.
    pub fn size_bytes(&self) -> usize {
        HEADER_BYTES + self.len() * (2 + 4 * self.dim)
    }

    pub fn size_kb(&self) -> f64 {
        self.size_bytes() as f64 / 1024.0
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&binio::read_file(path)?)
    }
}
