//! Sparse COO tensors of binary or count observations, with the sampling,
//! splitting and batching used by training and evaluation.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Gamma, Poisson, StandardNormal};

use crate::error::{arg_err, Error, Result};
use crate::math;

/// What the observed values mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ValueKind {
    Binary,
    Count,
}

impl ValueKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ValueKind::Binary => "binary",
            ValueKind::Count => "count",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "binary" => Some(ValueKind::Binary),
            "count" => Some(ValueKind::Count),
            _ => None,
        }
    }
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Observed entries of an order-`D` tensor in coordinate format.
///
/// Immutable once built: coordinates are in range, index tuples are unique
/// and values agree with the [`ValueKind`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseTensor {
    shape: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<u64>,
    kind: ValueKind,
}

impl SparseTensor {
    /// Validates and builds a tensor. `indices` is row-major `N × D`.
    pub fn new(shape: Vec<usize>, indices: Vec<usize>, values: Vec<u64>, kind: ValueKind) -> Result<Self> {
        let d = shape.len();
        if d == 0 || shape.iter().any(|&s| s == 0) {
            return arg_err("tensor shape must be non-empty with positive sizes");
        }
        if indices.len() != values.len() * d {
            return Err(Error::Dimension(alloc::format!(
                "{} coordinates for {} entries of an order-{d} tensor",
                indices.len(),
                values.len()
            )));
        }
        for row in indices.chunks_exact(d) {
            for (mode, (&i, &size)) in row.iter().zip(&shape).enumerate() {
                if i >= size {
                    return Err(Error::IndexOutOfRange { mode, index: i, size });
                }
            }
        }
        if kind == ValueKind::Binary {
            if let Some((n, &v)) = values.iter().enumerate().find(|(_, &v)| v > 1) {
                return Err(Error::InvalidValue { entry: n, value: v as i64, kind: "binary" });
            }
        }
        let mut seen = BTreeSet::new();
        for (n, row) in indices.chunks_exact(d).enumerate() {
            if !seen.insert(row) {
                return Err(Error::DuplicateIndex(n));
            }
        }
        Ok(SparseTensor { shape, indices, values, kind })
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.shape.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn kind(&self) -> ValueKind {
        self.kind
    }

    /// Row-major `N × D` coordinates.
    #[inline]
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    #[inline]
    pub fn index(&self, n: usize) -> &[usize] {
        let d = self.order();
        &self.indices[n * d..(n + 1) * d]
    }

    #[inline]
    pub fn values(&self) -> &[u64] {
        &self.values
    }

    /// Total number of cells, if it fits in a `u64`.
    pub fn num_cells(&self) -> Option<u64> {
        self.shape.iter().try_fold(1u64, |acc, &s| acc.checked_mul(s as u64))
    }

    /// Keeps the listed entries, in the given order.
    pub fn subset(&self, entries: &[usize]) -> SparseTensor {
        let d = self.order();
        let mut indices = Vec::with_capacity(entries.len() * d);
        let mut values = Vec::with_capacity(entries.len());
        for &n in entries {
            indices.extend_from_slice(self.index(n));
            values.push(self.values[n]);
        }
        SparseTensor { shape: self.shape.clone(), indices, values, kind: self.kind }
    }

    /// The whole tensor as a single batch with scale 1.
    pub fn full_batch(&self) -> EntryBatch {
        EntryBatch { order: self.order(), indices: self.indices.clone(), values: self.values.clone(), scale: 1.0 }
    }

    fn linear_index(&self, row: &[usize]) -> u64 {
        row.iter().zip(&self.shape).fold(0u64, |acc, (&i, &s)| acc * s as u64 + i as u64)
    }

    fn unravel(&self, mut lin: u64, out: &mut [usize]) {
        for (slot, &s) in out.iter_mut().zip(&self.shape).rev() {
            *slot = (lin % s as u64) as usize;
            lin /= s as u64;
        }
    }
}

/// A minibatch of entries; `scale = N / s` reweights batch sums to the full data.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryBatch {
    pub order: usize,
    pub indices: Vec<usize>,
    pub values: Vec<u64>,
    pub scale: f64,
}

impl EntryBatch {
    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, n: usize) -> &[usize] {
        &self.indices[n * self.order..(n + 1) * self.order]
    }

    pub fn values_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }
}

/// How to carve a held-out set from a tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
    /// Binary data only: the held-out set gets equal numbers of ones and zeros.
    pub balanced_negatives: bool,
}

/// Adds `n₁` zero-valued entries drawn uniformly without replacement from the
/// unobserved cells of a positives-only binary tensor.
pub fn balanced_negative_sample(t: &SparseTensor, seed: u64) -> Result<SparseTensor> {
    if t.kind != ValueKind::Binary || t.values.iter().any(|&v| v != 1) {
        return arg_err("balanced negative sampling expects a binary tensor holding only ones");
    }
    let n1 = t.len() as u64;
    let cells = t.num_cells().ok_or_else(|| Error::InvalidArgument(String::from("tensor has too many cells")))?;
    let free = cells - n1;
    if free < n1 {
        return arg_err(alloc::format!("only {free} unobserved cells for {n1} negatives"));
    }
    let d = t.order();
    let observed: BTreeSet<u64> = t.indices.chunks_exact(d).map(|r| t.linear_index(r)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<u64> = if free <= 2 * n1 {
        // Dense complement: enumerate and take a partial shuffle.
        let mut pool: Vec<u64> = (0..cells).filter(|c| !observed.contains(c)).collect();
        let (head, _) = pool.partial_shuffle(&mut rng, n1 as usize);
        head.to_vec()
    } else {
        let mut taken = BTreeSet::new();
        let mut out = Vec::with_capacity(n1 as usize);
        while (out.len() as u64) < n1 {
            let c = rng.random_range(0..cells);
            if !observed.contains(&c) && taken.insert(c) {
                out.push(c);
            }
        }
        out
    };
    let mut indices = t.indices.clone();
    let mut values = t.values.clone();
    let mut buf = vec![0usize; d];
    for c in chosen {
        t.unravel(c, &mut buf);
        indices.extend_from_slice(&buf);
        values.push(0);
    }
    Ok(SparseTensor { shape: t.shape.clone(), indices, values, kind: t.kind })
}

/// Splits into `(train, test)` with `round(N · fraction)` held-out entries.
/// Both parts keep the original entry order.
pub fn train_test_split(t: &SparseTensor, spec: &SplitSpec) -> Result<(SparseTensor, SparseTensor)> {
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return arg_err(alloc::format!("test fraction must lie in (0, 1), got {}", spec.test_fraction));
    }
    let n = t.len();
    let k = libm::round(n as f64 * spec.test_fraction) as usize;
    if k < 1 || k >= n {
        return arg_err(alloc::format!("split of {n} entries at {} leaves an empty part", spec.test_fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut is_test = vec![false; n];
    if spec.balanced_negatives {
        if t.kind != ValueKind::Binary {
            return arg_err("balanced splits need binary data");
        }
        let mut pos: Vec<usize> = (0..n).filter(|&i| t.values[i] == 1).collect();
        let mut neg: Vec<usize> = (0..n).filter(|&i| t.values[i] == 0).collect();
        let kp = k / 2;
        let kn = k - kp;
        if pos.len() <= kp || neg.len() <= kn {
            return arg_err("not enough entries of each class for a balanced split");
        }
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        for &i in pos[..kp].iter().chain(&neg[..kn]) {
            is_test[i] = true;
        }
    } else {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        for &i in &perm[..k] {
            is_test[i] = true;
        }
    }
    let test: Vec<usize> = (0..n).filter(|&i| is_test[i]).collect();
    let train: Vec<usize> = (0..n).filter(|&i| !is_test[i]).collect();
    Ok((t.subset(&train), t.subset(&test)))
}

/// One shuffled pass over a tensor in batches of at most `batch_size`.
#[derive(Debug, Clone)]
pub struct Minibatches<'a> {
    tensor: &'a SparseTensor,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

/// Shuffles the entries with `epoch_seed` and yields batches; the last one may
/// be short and carries `scale = N / s` for its actual length.
pub fn minibatches(t: &SparseTensor, batch_size: usize, epoch_seed: u64) -> Minibatches<'_> {
    let mut order: Vec<usize> = (0..t.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    Minibatches { tensor: t, order, batch_size: batch_size.max(1), pos: 0 }
}

impl Iterator for Minibatches<'_> {
    type Item = EntryBatch;

    fn next(&mut self) -> Option<EntryBatch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let picked = &self.order[self.pos..end];
        self.pos = end;
        let d = self.tensor.order();
        let mut indices = Vec::with_capacity(picked.len() * d);
        let mut values = Vec::with_capacity(picked.len());
        for &n in picked {
            indices.extend_from_slice(self.tensor.index(n));
            values.push(self.tensor.values[n]);
        }
        let scale = self.tensor.len() as f64 / picked.len() as f64;
        Some(EntryBatch { order: d, indices, values, scale })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

impl ExactSizeIterator for Minibatches<'_> {}

/// A generated tensor together with the latent function that produced it.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub tensor: SparseTensor,
    /// Ground-truth `f` for every entry, aligned with `tensor`.
    pub latent: Vec<f64>,
}

/// Recipe for a fully observed synthetic tensor: standard-normal factors, a
/// rank-`R` CP contraction rescaled to standard deviation `signal`, then
/// Bernoulli(σ(f)) or NB(ζ, σ(f)) observations.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub shape: Vec<usize>,
    pub rank: usize,
    /// Standard deviation of the latent function (1 gives unit variance).
    pub signal: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(shape: Vec<usize>, rank: usize, seed: u64) -> Self {
        SynthSpec { shape, rank, signal: 1.0, seed }
    }

    fn latent(&self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        if self.rank == 0 {
            return arg_err("synthetic rank must be at least 1");
        }
        if self.shape.is_empty() || self.shape.contains(&0) {
            return arg_err("synthetic shape must be non-empty with positive sizes");
        }
        let r = self.rank;
        let factors: Vec<Vec<f64>> = self
            .shape
            .iter()
            .map(|&s| (0..s * r).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let norm = self.signal / libm::sqrt(r as f64);
        let cells: usize = self.shape.iter().product();
        let mut idx = vec![0usize; self.shape.len()];
        let mut out = Vec::with_capacity(cells);
        for _ in 0..cells {
            let mut f = 0.0;
            for c in 0..r {
                let mut prod = 1.0;
                for (d, &i) in idx.iter().enumerate() {
                    prod *= factors[d][i * r + c];
                }
                f += prod;
            }
            out.push(norm * f);
            increment(&mut idx, &self.shape);
        }
        Ok(out)
    }

    pub fn binary(&self) -> Result<Synthetic> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let latent = self.latent(&mut rng)?;
        observe(&self.shape, latent, ValueKind::Binary, 0.0, &mut rng)
    }

    pub fn count(&self, zeta: f64) -> Result<Synthetic> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let latent = self.latent(&mut rng)?;
        observe(&self.shape, latent, ValueKind::Count, zeta, &mut rng)
    }
}

pub fn synth_binary(shape: &[usize], rank: usize, seed: u64) -> Result<Synthetic> {
    SynthSpec::new(shape.to_vec(), rank, seed).binary()
}

pub fn synth_count(shape: &[usize], rank: usize, zeta: f64, seed: u64) -> Result<Synthetic> {
    SynthSpec::new(shape.to_vec(), rank, seed).count(zeta)
}

/// Samples a fully observed tensor (cells in row-major order) from a given
/// latent function.
pub fn observe<R: Rng + ?Sized>(
    shape: &[usize],
    latent: Vec<f64>,
    kind: ValueKind,
    zeta: f64,
    rng: &mut R,
) -> Result<Synthetic> {
    let cells: usize = shape.iter().product();
    if latent.len() != cells {
        return Err(Error::Dimension(alloc::format!("{} latent values for {cells} cells", latent.len())));
    }
    if kind == ValueKind::Count && !(zeta > 0.0) {
        return arg_err("negative-binomial ζ must be positive");
    }
    let mut values = Vec::with_capacity(cells);
    for &f in &latent {
        let v = match kind {
            ValueKind::Binary => {
                let b = Bernoulli::new(math::sigmoid(f)).map_err(|e| Error::InvalidArgument(alloc::format!("{e}")))?;
                u64::from(b.sample(rng))
            }
            ValueKind::Count => {
                // NB(ζ, p) as a gamma–Poisson mixture with odds p/(1−p) = e^f.
                let g = Gamma::new(zeta, math::exp(f)).map_err(|e| Error::InvalidArgument(alloc::format!("{e}")))?;
                let lambda: f64 = g.sample(rng);
                if lambda > 0.0 {
                    let p = Poisson::new(lambda).map_err(|e| Error::InvalidArgument(alloc::format!("{e}")))?;
                    let x: f64 = p.sample(rng);
                    x as u64
                } else {
                    0
                }
            }
        };
        values.push(v);
    }
    let mut indices = Vec::with_capacity(cells * shape.len());
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..cells {
        indices.extend_from_slice(&idx);
        increment(&mut idx, shape);
    }
    let tensor = SparseTensor::new(shape.to_vec(), indices, values, kind)?;
    Ok(Synthetic { tensor, latent })
}

fn increment(idx: &mut [usize], shape: &[usize]) {
    for (i, &s) in idx.iter_mut().zip(shape).rev() {
        *i += 1;
        if *i < s {
            return;
        }
        *i = 0;
    }
}
