//! Dense 4-axis `f64` tensors in NCHW order.
//!
//! Only what the filtering operator and the CLI need: zero-padded spatial
//! shifts, cyclic channel rotation, element-wise arithmetic, seeded random
//! fill, and the `DTEN` binary file format.
//!
//! `DTEN` layout (all integers little-endian):
//!
//! | bytes | content                         |
//! |-------|---------------------------------|
//! | 4     | magic `b"DTEN"`                 |
//! | 4     | `u32` version, always 1         |
//! | 1     | dtype: 0 = `f32`, 1 = `f64`     |
//! | 1     | ndim, always 4                  |
//! | 32    | 4 × `u64` extents (n, c, h, w)  |
//! | ...   | row-major payload, `w` fastest  |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_xoshiro::SplitMix64;
use thiserror::Error;

pub const DTEN_MAGIC: [u8; 4] = *b"DTEN";
pub const DTEN_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 1 + 1 + 4 * 8;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("tensor extents must all be >= 1, got {0:?}")]
    ZeroExtent([usize; 4]),
    #[error("data length {len} does not match extents {dims:?}")]
    LengthMismatch { dims: [usize; 4], len: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: [usize; 4], right: [usize; 4] },
    #[error("bad magic bytes {0:?}, expected \"DTEN\"")]
    BadMagic([u8; 4]),
    #[error("unsupported DTEN version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("unsupported ndim {0}, only 4 is supported")]
    UnsupportedNdim(u8),
    #[error("truncated header: {found} of {HEADER_LEN} bytes")]
    TruncatedHeader { found: usize },
    #[error("truncated payload: expected {expected} elements, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("declared extents {0:?} overflow the address space")]
    Overflow([u64; 4]),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// On-disk element type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self, TensorError> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            other => Err(TensorError::UnsupportedDtype(other)),
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Integer spatial offset. `shift2d` moves content down by `gi` rows and
/// right by `gj` columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ShiftVector {
    pub gi: isize,
    pub gj: isize,
}

impl ShiftVector {
    pub const fn new(gi: isize, gj: isize) -> Self {
        Self { gi, gj }
    }

    /// The `k·k` offsets `{-(k-1)/2 ..= (k-1)/2}²`, row offset outermost.
    pub fn grid(k: usize) -> Vec<ShiftVector> {
        let r = (k / 2) as isize;
        let mut out = Vec::with_capacity(k * k);
        for gi in -r..=r {
            for gj in -r..=r {
                out.push(ShiftVector::new(gi, gj));
            }
        }
        out
    }

    pub fn scaled(self, rate: usize) -> Self {
        let r = rate as isize;
        Self::new(self.gi * r, self.gj * r)
    }
}

impl std::ops::Neg for ShiftVector {
    type Output = Self;

    fn neg(self) -> Self {
        Self::new(-self.gi, -self.gj)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl Tensor {
    pub fn from_vec(dims: [usize; 4], data: Vec<f64>) -> Result<Self, TensorError> {
        if dims.contains(&0) {
            return Err(TensorError::ZeroExtent(dims));
        }
        if data.len() != dims.iter().product::<usize>() {
            return Err(TensorError::LengthMismatch { dims, len: data.len() });
        }
        Ok(Self { dims, data })
    }

    /// # Panics
    /// If any extent is zero.
    pub fn filled(dims: [usize; 4], value: f64) -> Self {
        assert!(dims.iter().all(|&e| e > 0), "tensor extents must be >= 1: {dims:?}");
        Self { dims, data: vec![value; dims.iter().product()] }
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn zeros_like(&self) -> Self {
        Self { dims: self.dims, data: vec![0.0; self.data.len()] }
    }

    /// Uniform values in `[lo, hi)` drawn from a SplitMix64 stream seeded with `seed`.
    pub fn random_uniform(dims: [usize; 4], lo: f64, hi: f64, seed: u64) -> Self {
        let mut rng = SplitMix64::seed_from_u64(seed);
        let mut t = Self::zeros(dims);
        for v in &mut t.data {
            *v = rng.random_range(lo..hi);
        }
        t
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    pub fn height(&self) -> usize {
        self.dims[2]
    }

    pub fn width(&self) -> usize {
        self.dims[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let [_, cs, hs, ws] = self.dims;
        ((n * cs + c) * hs + y) * ws + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, y: usize, x: usize) -> &mut f64 {
        let i = self.offset(n, c, y, x);
        &mut self.data[i]
    }

    fn plane_len(&self) -> usize {
        self.dims[2] * self.dims[3]
    }

    /// The `h × w` plane of batch item `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let p = self.plane_len();
        let start = (n * self.dims[1] + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let p = self.plane_len();
        let start = (n * self.dims[1] + c) * p;
        &mut self.data[start..start + p]
    }

    pub fn check_same_dims(&self, other: &Tensor) -> Result<(), TensorError> {
        if self.dims != other.dims {
            return Err(TensorError::ShapeMismatch { left: self.dims, right: other.dims });
        }
        Ok(())
    }

    /// `out[n,c,y,x] = self[n,c,y-gi,x-gj]`, zero where the source is out of bounds.
    pub fn shift2d(&self, v: ShiftVector) -> Tensor {
        let mut out = self.zeros_like();
        out.add_shifted(self, v, 1.0);
        out
    }

    /// `self += weight · shift2d(src, v)` without materialising the shifted copy.
    ///
    /// # Panics
    /// If `src` and `self` differ in shape.
    pub fn add_shifted(&mut self, src: &Tensor, v: ShiftVector, weight: f64) {
        assert_eq!(self.dims, src.dims, "add_shifted shape mismatch");
        let [n, c, h, w] = self.dims;
        let (h, w) = (h as isize, w as isize);
        let (gi, gj) = (v.gi, v.gj);
        if gi.abs() >= h || gj.abs() >= w {
            return;
        }
        let x0 = gj.max(0) as usize;
        let x1 = (w + gj.min(0)) as usize;
        let y0 = gi.max(0) as usize;
        let y1 = (h + gi.min(0)) as usize;
        let wu = w as usize;
        for plane in 0..n * c {
            let base = plane * (h as usize) * wu;
            for y in y0..y1 {
                let sy = (y as isize - gi) as usize;
                let dst_row = base + y * wu;
                let src_row = base + sy * wu;
                let sx0 = (x0 as isize - gj) as usize;
                let len = x1 - x0;
                let dst = &mut self.data[dst_row + x0..dst_row + x0 + len];
                let s = &src.data[src_row + sx0..src_row + sx0 + len];
                if weight == 1.0 {
                    for (d, &s) in dst.iter_mut().zip(s) {
                        *d += s;
                    }
                } else {
                    for (d, &s) in dst.iter_mut().zip(s) {
                        *d += weight * s;
                    }
                }
            }
        }
    }

    /// Cyclic channel rotation: `out[n,c] = self[n,(c+s) mod C]`.
    pub fn channel_rotate(&self, s: isize) -> Tensor {
        let mut out = self.zeros_like();
        let ch = self.dims[1];
        let shift = s.rem_euclid(ch as isize) as usize;
        for n in 0..self.dims[0] {
            for c in 0..ch {
                out.plane_mut(n, c).copy_from_slice(self.plane(n, (c + shift) % ch));
            }
        }
        out
    }

    fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, TensorError> {
        self.check_same_dims(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor { dims: self.dims, data })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, a: f64) -> Tensor {
        Tensor { dims: self.dims, data: self.data.iter().map(|&v| a * v).collect() }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64, TensorError> {
        self.check_same_dims(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    pub fn write_to<W: Write>(&self, mut w: W, dtype: Dtype) -> Result<(), TensorError> {
        let mut header = Vec::with_capacity(HEADER_LEN);
        header.extend_from_slice(&DTEN_MAGIC);
        header.extend_from_slice(&DTEN_VERSION.to_le_bytes());
        header.push(dtype.code());
        header.push(4);
        for &d in &self.dims {
            header.extend_from_slice(&(d as u64).to_le_bytes());
        }
        w.write_all(&header)?;
        let mut payload = Vec::with_capacity(self.data.len() * dtype.size());
        match dtype {
            Dtype::F32 => self.data.iter().for_each(|&v| payload.extend_from_slice(&(v as f32).to_le_bytes())),
            Dtype::F64 => self.data.iter().for_each(|&v| payload.extend_from_slice(&v.to_le_bytes())),
        }
        w.write_all(&payload)?;
        w.flush()?;
        Ok(())
    }

    /// Reads a `DTEN` stream. `f32` payloads are widened to `f64`.
    pub fn read_from<R: Read>(mut r: R) -> Result<Tensor, TensorError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_dten_bytes(&bytes)
    }

    pub fn from_dten_bytes(bytes: &[u8]) -> Result<Tensor, TensorError> {
        if bytes.len() >= 4 && bytes[..4] != DTEN_MAGIC {
            return Err(TensorError::BadMagic(bytes[..4].try_into().unwrap()));
        }
        if bytes.len() < HEADER_LEN {
            return Err(TensorError::TruncatedHeader { found: bytes.len() });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != DTEN_VERSION {
            return Err(TensorError::UnsupportedVersion(version));
        }
        let dtype = Dtype::from_code(bytes[8])?;
        if bytes[9] != 4 {
            return Err(TensorError::UnsupportedNdim(bytes[9]));
        }
        let mut raw = [0u64; 4];
        for (i, d) in raw.iter_mut().enumerate() {
            let at = 10 + 8 * i;
            *d = u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        }
        let mut dims = [0usize; 4];
        let mut count: usize = 1;
        for (d, &r) in dims.iter_mut().zip(&raw) {
            *d = usize::try_from(r).map_err(|_| TensorError::Overflow(raw))?;
            count = count.checked_mul(*d).ok_or(TensorError::Overflow(raw))?;
        }
        if count == 0 {
            return Err(TensorError::ZeroExtent(dims));
        }
        let payload = &bytes[HEADER_LEN..];
        let size = dtype.size();
        let expected_bytes = count.checked_mul(size).ok_or(TensorError::Overflow(raw))?;
        if payload.len() < expected_bytes {
            return Err(TensorError::TruncatedPayload { expected: count, found: payload.len() / size });
        }
        if payload.len() > expected_bytes {
            return Err(TensorError::TrailingBytes(payload.len() - expected_bytes));
        }
        let data = match dtype {
            Dtype::F32 => payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect(),
            Dtype::F64 => payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect(),
        };
        Ok(Tensor { dims, data })
    }

    pub fn save(&self, path: impl AsRef<Path>, dtype: Dtype) -> Result<(), TensorError> {
        self.write_to(BufWriter::new(File::create(path)?), dtype)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Tensor, TensorError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t22() -> Tensor {
        Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()
    }

    #[test]
    fn shift_identity() {
        let t = Tensor::random_uniform([2, 3, 4, 5], -1.0, 1.0, 3);
        assert_eq!(t.shift2d(ShiftVector::new(0, 0)), t);
    }

    #[test]
    fn shift_down_one_row() {
        assert_eq!(t22().shift2d(ShiftVector::new(1, 0)).data(), &[0.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn shift_left_one_col() {
        assert_eq!(t22().shift2d(ShiftVector::new(0, -1)).data(), &[2.0, 0.0, 4.0, 0.0]);
    }

    #[test]
    fn shift_out_of_range_is_zero() {
        let s = t22().shift2d(ShiftVector::new(5, -7));
        assert!(s.data().iter().all(|&v| v == 0.0));
        let s = t22().shift2d(ShiftVector::new(0, 2));
        assert!(s.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grid_has_k_squared_symmetric_offsets() {
        assert_eq!(ShiftVector::grid(1), vec![ShiftVector::new(0, 0)]);
        let g = ShiftVector::grid(3);
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], ShiftVector::new(-1, -1));
        assert_eq!(g[8], ShiftVector::new(1, 1));
        assert_eq!(ShiftVector::grid(5).len(), 25);
    }

    #[test]
    fn channel_rotation_examples() {
        let t = Tensor::from_vec([1, 2, 1, 1], vec![10.0, 20.0]).unwrap();
        assert_eq!(t.channel_rotate(0), t);
        assert_eq!(t.channel_rotate(2), t);
        assert_eq!(t.channel_rotate(1).data(), &[20.0, 10.0]);
        assert_eq!(t.channel_rotate(-1).data(), &[20.0, 10.0]);
    }

    #[test]
    fn from_vec_rejects_bad_shapes() {
        assert!(matches!(Tensor::from_vec([1, 0, 2, 2], vec![]), Err(TensorError::ZeroExtent(_))));
        assert!(matches!(
            Tensor::from_vec([1, 1, 2, 2], vec![0.0; 3]),
            Err(TensorError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn elementwise_ops_check_shape() {
        let a = Tensor::zeros([1, 1, 2, 2]);
        let b = Tensor::zeros([1, 1, 2, 3]);
        assert!(matches!(a.mul(&b), Err(TensorError::ShapeMismatch { .. })));
        let p = t22().mul(&t22()).unwrap();
        assert_eq!(p.data(), &[1.0, 4.0, 9.0, 16.0]);
        assert_eq!(t22().scale(2.0).sum(), 20.0);
    }

    #[test]
    fn random_fill_is_reproducible() {
        let a = Tensor::random_uniform([1, 2, 3, 4], -1.0, 1.0, 42);
        let b = Tensor::random_uniform([1, 2, 3, 4], -1.0, 1.0, 42);
        let c = Tensor::random_uniform([1, 2, 3, 4], -1.0, 1.0, 43);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.data().iter().all(|v| (-1.0..1.0).contains(v)));
    }

    #[test]
    fn dten_bad_magic() {
        let mut bytes = Vec::new();
        t22().write_to(&mut bytes, Dtype::F64).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(Tensor::from_dten_bytes(&bytes), Err(TensorError::BadMagic(m)) if &m == b"XXXX"));
    }

    #[test]
    fn dten_truncated_payload() {
        let t = Tensor::from_vec([1, 1, 2, 5], (0..10).map(f64::from).collect()).unwrap();
        let mut bytes = Vec::new();
        t.write_to(&mut bytes, Dtype::F64).unwrap();
        bytes.truncate(bytes.len() - 8);
        assert!(matches!(
            Tensor::from_dten_bytes(&bytes),
            Err(TensorError::TruncatedPayload { expected: 10, found: 9 })
        ));
    }

    #[test]
    fn dten_unsupported_dtype_and_header() {
        let mut bytes = Vec::new();
        t22().write_to(&mut bytes, Dtype::F32).unwrap();
        assert_eq!(bytes[8], 0);
        bytes[8] = 7;
        assert!(matches!(Tensor::from_dten_bytes(&bytes), Err(TensorError::UnsupportedDtype(7))));
        assert!(matches!(Tensor::from_dten_bytes(b"DTEN\x01"), Err(TensorError::TruncatedHeader { found: 5 })));
    }

    #[test]
    fn dten_header_layout() {
        let mut bytes = Vec::new();
        Tensor::zeros([2, 3, 4, 5]).write_to(&mut bytes, Dtype::F64).unwrap();
        assert_eq!(&bytes[..4], b"DTEN");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(bytes[8], 1);
        assert_eq!(bytes[9], 4);
        assert_eq!(&bytes[10..18], &2u64.to_le_bytes());
        assert_eq!(&bytes[34..42], &5u64.to_le_bytes());
        assert_eq!(bytes.len(), 42 + 120 * 8);
    }

    fn arb_tensor() -> impl Strategy<Value = Tensor> {
        (1usize..3, 1usize..5, 1usize..7, 1usize..7).prop_flat_map(|(n, c, h, w)| {
            proptest::collection::vec(-100.0f64..100.0, n * c * h * w)
                .prop_map(move |data| Tensor::from_vec([n, c, h, w], data).unwrap())
        })
    }

    proptest! {
        #[test]
        fn shift_round_trip_keeps_interior(t in arb_tensor(), a in -3isize..4, b in -3isize..4) {
            let back = t.shift2d(ShiftVector::new(a, b)).shift2d(ShiftVector::new(-a, -b));
            let [n, c, h, w] = t.dims();
            for ni in 0..n { for ci in 0..c { for y in 0..h { for x in 0..w {
                let sy = y as isize + a;
                let sx = x as isize + b;
                let stayed = sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize;
                let expect = if stayed { t.at(ni, ci, y, x) } else { 0.0 };
                prop_assert_eq!(back.at(ni, ci, y, x), expect);
            }}}}
        }

        #[test]
        fn shift_never_adds_mass(t in arb_tensor(), a in -4isize..5, b in -4isize..5) {
            let abs = Tensor::from_vec(t.dims(), t.data().iter().map(|v| v.abs()).collect()).unwrap();
            let s = abs.shift2d(ShiftVector::new(a, b));
            prop_assert!(s.sum() <= abs.sum() + 1e-9);
        }

        #[test]
        fn channel_rotate_inverse(t in arb_tensor(), s in 0usize..6) {
            let c = t.channels();
            let s = s.min(c) as isize;
            prop_assert_eq!(t.channel_rotate(s).channel_rotate(c as isize - s), t);
        }

        #[test]
        fn dten_round_trip_bits(t in arb_tensor()) {
            let mut buf = Vec::new();
            t.write_to(&mut buf, Dtype::F64).unwrap();
            let back = Tensor::read_from(buf.as_slice()).unwrap();
            prop_assert_eq!(back.dims(), t.dims());
            for (a, b) in back.data().iter().zip(t.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }

            let narrowed = Tensor::from_vec(t.dims(), t.data().iter().map(|&v| v as f32 as f64).collect()).unwrap();
            let mut buf = Vec::new();
            narrowed.write_to(&mut buf, Dtype::F32).unwrap();
            let back = Tensor::read_from(buf.as_slice()).unwrap();
            for (a, b) in back.data().iter().zip(narrowed.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
