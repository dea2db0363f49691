//! Dense row-major arrays and the `R4VT` tensor blob format.

use std::fmt::Debug;
use std::io::{Read, Write};
use std::path::Path;

use num_traits::Float;
use thiserror::Error;

/// Floating-point element type usable by the numerical kernels.
pub trait Scalar: Float + Debug + Default + Send + Sync + std::iter::Sum + 'static {
    fn from_f32(x: f32) -> Self;
    fn from_f64(x: f64) -> Self;
    fn widen(self) -> f64;
    fn narrow(self) -> f32;
}

impl Scalar for f32 {
    fn from_f32(x: f32) -> Self {
        x
    }
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn widen(self) -> f64 {
        self as f64
    }
    fn narrow(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    fn from_f32(x: f32) -> Self {
        x as f64
    }
    fn from_f64(x: f64) -> Self {
        x
    }
    fn widen(self) -> f64 {
        self
    }
    fn narrow(self) -> f32 {
        self as f32
    }
}

/// Row-major n-dimensional array.
#[derive(Debug, Clone, PartialEq)]
pub struct Array<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

/// The stored tensor type: 32-bit floats.
pub type Tensor = Array<f32>;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("data length {len} does not match dims {dims:?}")]
    Length { dims: Vec<usize>, len: usize },
    #[error("invalid tensor blob: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn numel(dims: &[usize]) -> usize {
    dims.iter().product()
}

impl<T: Copy + Default> Array<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self, TensorError> {
        if numel(&dims) != data.len() {
            return Err(TensorError::Length { dims, len: data.len() });
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = numel(&dims);
        Self { dims, data: vec![T::default(); n] }
    }

    pub fn filled(dims: Vec<usize>, v: T) -> Self {
        let n = numel(&dims);
        Self { dims, data: vec![v; n] }
    }

    pub fn from_vec(data: Vec<T>) -> Self {
        Self { dims: vec![data.len()], data }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, dims: Vec<usize>) -> Result<Self, TensorError> {
        if numel(&dims) != self.data.len() {
            return Err(TensorError::Length { dims, len: self.data.len() });
        }
        self.dims = dims;
        Ok(self)
    }

    /// Number of leading-axis entries (samples, for a batch).
    pub fn rows(&self) -> usize {
        self.dims.first().copied().unwrap_or(1)
    }

    /// Dims of one leading-axis entry.
    pub fn row_dims(&self) -> &[usize] {
        if self.dims.is_empty() {
            &[]
        } else {
            &self.dims[1..]
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        let stride = numel(self.row_dims());
        &self.data[i * stride..(i + 1) * stride]
    }

    /// Gathers leading-axis entries `idx` into a new batch.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let stride = numel(self.row_dims());
        let mut data = Vec::with_capacity(idx.len() * stride);
        for &i in idx {
            data.extend_from_slice(&self.data[i * stride..(i + 1) * stride]);
        }
        let mut dims = self.dims.clone();
        dims[0] = idx.len();
        Self { dims, data }
    }

    /// Stacks equally-shaped samples into a batch with a new leading axis.
    pub fn stack(rows: &[Self]) -> Result<Self, TensorError> {
        let sample = rows.first().map(|r| r.dims.clone()).unwrap_or_default();
        let mut data = Vec::with_capacity(rows.len() * numel(&sample));
        for r in rows {
            if r.dims != sample {
                return Err(TensorError::Length { dims: sample, len: r.data.len() });
            }
            data.extend_from_slice(&r.data);
        }
        let mut dims = vec![rows.len()];
        dims.extend(sample);
        Ok(Self { dims, data })
    }
}

impl<T: Scalar> Array<T> {
    pub fn cast<U: Scalar>(&self) -> Array<U> {
        Array { dims: self.dims.clone(), data: self.data.iter().map(|&x| U::from_f64(x.widen())).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

const MAGIC: &[u8; 4] = b"R4VT";
const DTYPE_F32: u8 = 1;

/// Serializes a tensor: `R4VT`, dtype byte, rank byte, rank x u32 LE dims, f32 LE payload.
pub fn encode_blob(t: &Tensor) -> Result<Vec<u8>, TensorError> {
    if t.dims.len() > u8::MAX as usize {
        return Err(TensorError::Format(format!("rank {} too large", t.dims.len())));
    }
    let mut out = Vec::with_capacity(6 + 4 * t.dims.len() + 4 * t.data.len());
    out.extend_from_slice(MAGIC);
    out.push(DTYPE_F32);
    out.push(t.dims.len() as u8);
    for &d in &t.dims {
        let d = u32::try_from(d).map_err(|_| TensorError::Format(format!("dim {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &x in &t.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_blob(bytes: &[u8]) -> Result<Tensor, TensorError> {
    let bad = |m: &str| TensorError::Format(m.to_string());
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err(bad("missing R4VT magic"));
    }
    if bytes[4] != DTYPE_F32 {
        return Err(TensorError::Format(format!("unsupported dtype code {}", bytes[4])));
    }
    let rank = bytes[5] as usize;
    let header = 6 + 4 * rank;
    if bytes.len() < header {
        return Err(bad("truncated dims"));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| {
            let o = 6 + 4 * i;
            u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize
        })
        .collect();
    let n = numel(&dims);
    if bytes.len() != header + 4 * n {
        return Err(TensorError::Format(format!(
            "payload is {} bytes, dims {:?} need {}",
            bytes.len() - header,
            dims,
            4 * n
        )));
    }
    let data = bytes[header..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Tensor { dims, data })
}

pub fn write_blob(path: &Path, t: &Tensor) -> Result<(), TensorError> {
    let bytes = encode_blob(t)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_blob(path: &Path) -> Result<Tensor, TensorError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_blob(&bytes)
}
