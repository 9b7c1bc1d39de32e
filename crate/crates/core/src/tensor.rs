//! Dense row-major f32 tensors and the deterministic RNG that seeds them.
//!
//! The canonical 5-D layout is N x C x T x H x W (batch, channels, frames,
//! height, width), last index fastest. Every module in the crate stores
//! activations, weights and gradients in this one representation.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Counter-based deterministic generator (splitmix64 over seed + counter).
///
/// Identical seed and call sequence produce identical values on every
/// platform. Owned by the caller and passed explicitly; there is no global
/// RNG state anywhere in the crate.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    counter: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, counter: 0 }
    }

    /// Derive an independent stream, e.g. one per video or per fold.
    /// Does not advance this generator.
    pub fn substream(&self, stream: u64) -> Rng {
        Rng {
            seed: mix64(self.seed ^ stream.wrapping_mul(0xA24BAED4963EE407)),
            counter: 0,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(
            self.seed
                .wrapping_add(self.counter.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        )
    }

    /// Uniform f32 in [0, 1) with 24 bits of precision.
    pub fn next_f32(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 / (1u32 << 24) as f32
    }

    /// Uniform f32 in [lo, hi). Requires lo < hi.
    pub fn uniform(&mut self, lo: f32, hi: f32) -> f32 {
        debug_assert!(lo < hi);
        let frac = (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        let v = (lo as f64 + (hi as f64 - lo as f64) * frac) as f32;
        // f32 rounding can land exactly on hi; step back one ulp to keep the
        // half-open contract.
        if v >= hi {
            prev_f32(hi)
        } else {
            v
        }
    }

    /// Uniform integer in [0, n). Requires n >= 1.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n >= 1);
        (self.next_u64() % n as u64) as usize
    }

    /// Bernoulli draw with probability p.
    pub fn coin(&mut self, p: f32) -> bool {
        self.next_f32() < p
    }

    /// Fisher-Yates shuffle with this generator.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Largest f32 strictly below x (x finite, not -inf).
fn prev_f32(x: f32) -> f32 {
    let bits = x.to_bits();
    if x > 0.0 {
        f32::from_bits(bits - 1)
    } else if x == 0.0 {
        -f32::MIN_POSITIVE
    } else {
        f32::from_bits(bits + 1)
    }
}

/// Binary elementwise operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElemOp {
    Add,
    Sub,
    Mul,
}

/// Dense strided multi-dimensional array of f32, row-major, contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// All-zero tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Result<Tensor> {
        let n = checked_len(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        })
    }

    /// Tensor filled with a constant.
    pub fn filled(shape: &[usize], value: f32) -> Result<Tensor> {
        let n = checked_len(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        })
    }

    /// Wrap an existing buffer. The buffer length must match the shape product.
    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        let n = checked_len(shape)?;
        if data.len() != n {
            return Err(Error::InvalidShape(format!(
                "shape {:?} expects {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Uniform random tensor in [lo, hi); same seed gives a bit-identical
    /// tensor. Elements are drawn sequentially in row-major order.
    pub fn fill_uniform(shape: &[usize], lo: f32, hi: f32, rng: &mut Rng) -> Result<Tensor> {
        if !(lo < hi) {
            return Err(Error::InvalidRange(format!("lo {} must be < hi {}", lo, hi)));
        }
        let n = checked_len(shape)?;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(rng.uniform(lo, hi));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Number of elements (== product of extents).
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same buffer under a new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n = checked_len(shape)?;
        if n != self.data.len() {
            return Err(Error::InvalidShape(format!(
                "cannot reshape {:?} ({} values) to {:?} ({} values)",
                self.shape,
                self.data.len(),
                shape,
                n
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Value-by-value combination of two same-shaped tensors.
    /// Evaluation order is element order (left to right).
    pub fn elementwise(a: &Tensor, b: &Tensor, op: ElemOp) -> Result<Tensor> {
        if a.shape != b.shape {
            return Err(Error::ShapeMismatch(format!(
                "elementwise {:?} vs {:?}",
                a.shape, b.shape
            )));
        }
        let data = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| match op {
                ElemOp::Add => x + y,
                ElemOp::Sub => x - y,
                ElemOp::Mul => x * y,
            })
            .collect();
        Ok(Tensor {
            shape: a.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        Tensor::elementwise(self, other, ElemOp::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        Tensor::elementwise(self, other, ElemOp::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        Tensor::elementwise(self, other, ElemOp::Mul)
    }

    pub fn scale(&self, factor: f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// Serialize in the STT1 format: magic "STT1", u8 version, u8 rank,
    /// rank x u64 LE extents, then f32 LE values row-major. Bit-exact.
    pub fn write_stt<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(b"STT1")?;
        w.write_all(&[1u8, self.rank() as u8])?;
        for &e in &self.shape {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for &v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_stt<R: Read>(r: &mut R) -> Result<Tensor> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"STT1" {
            return Err(Error::Format(format!("bad STT1 magic {:?}", magic)));
        }
        let mut head = [0u8; 2];
        r.read_exact(&mut head)?;
        if head[0] != 1 {
            return Err(Error::Format(format!("unsupported STT1 version {}", head[0])));
        }
        let rank = head[1] as usize;
        if rank == 0 {
            return Err(Error::Format("STT1 rank 0".into()));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let n = checked_len(&shape).map_err(|_| Error::Format(format!("bad extents {:?}", shape)))?;
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Tensor {
            shape,
            data,
        })
    }

    /// Write atomically (temp file in the same directory, then rename).
    pub fn save_stt(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_stt(&mut buf)?;
        atomic_write(path, &buf)
    }

    pub fn load_stt(path: &Path) -> Result<Tensor> {
        let bytes = std::fs::read(path)?;
        Tensor::read_stt(&mut bytes.as_slice())
    }
}

impl fmt::Display for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)
    }
}

fn checked_len(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidShape("empty shape list".into()));
    }
    let mut n: usize = 1;
    for &e in shape {
        if e == 0 {
            return Err(Error::InvalidShape(format!("zero extent in {:?}", shape)));
        }
        n = n.checked_mul(e).ok_or_else(|| {
            Error::InvalidShape(format!("shape {:?} overflows element count", shape))
        })?;
    }
    Ok(n)
}

/// Write bytes to `path` atomically: temp file in the parent directory,
/// flushed, then renamed over the target.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp_dir = dir.unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(tmp_dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path)
        .map_err(|e| Error::Io(e.error))?;
    Ok(())
}
