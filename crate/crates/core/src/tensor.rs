//! Dense 5-axis tensor `(batch, z, h, w, channel)` of `f64`.
//!
//! Storage is row-major with the channel axis fastest, so element
//! `(b, k, i, j, ch)` lives at `((((b*z + k)*h + i)*w + j)*c + ch)`.
//! The `.npy` files written by this crate depend on that layout.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape5 {
    pub n: usize,
    pub z: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape5 {
    pub const fn new(n: usize, z: usize, h: usize, w: usize, c: usize) -> Self {
        Self { n, z, h, w, c }
    }

    pub fn from_slice(dims: &[usize]) -> Result<Self> {
        match dims {
            &[n, z, h, w, c] => Ok(Self::new(n, z, h, w, c)),
            _ => Err(Error::invalid(
                "Shape5::from_slice",
                format!("expected 5 extents, got {dims:?}"),
            )),
        }
    }

    pub fn dims(&self) -> [usize; 5] {
        [self.n, self.z, self.h, self.w, self.c]
    }

    pub fn len(&self) -> usize {
        self.n * self.z * self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spatial(&self) -> [usize; 3] {
        [self.z, self.h, self.w]
    }

    pub fn voxels(&self) -> usize {
        self.z * self.h * self.w
    }

    pub fn with_channels(&self, c: usize) -> Self {
        Self { c, ..*self }
    }

    pub fn with_spatial(&self, [z, h, w]: [usize; 3]) -> Self {
        Self { z, h, w, ..*self }
    }

    #[inline]
    pub fn offset(&self, b: usize, k: usize, i: usize, j: usize, ch: usize) -> usize {
        (((b * self.z + k) * self.h + i) * self.w + j) * self.c + ch
    }

    fn validate(&self, op: &'static str) -> Result<()> {
        if self.dims().iter().any(|&d| d == 0) {
            return Err(Error::invalid(op, format!("zero extent in {self}")));
        }
        Ok(())
    }
}

impl fmt::Display for Shape5 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {}, {})", self.n, self.z, self.h, self.w, self.c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Max,
}

impl ElementwiseOp {
    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            ElementwiseOp::Add => a + b,
            ElementwiseOp::Sub => a - b,
            ElementwiseOp::Mul => a * b,
            ElementwiseOp::Max => a.max(b),
        }
    }
}

/// Immutable once built; clones share the buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor5 {
    shape: Shape5,
    data: Arc<Vec<f64>>,
}

impl Tensor5 {
    pub fn from_vec(shape: Shape5, data: Vec<f64>) -> Result<Self> {
        shape.validate("Tensor5::from_vec")?;
        if data.len() != shape.len() {
            return Err(Error::invalid(
                "Tensor5::from_vec",
                format!("buffer of {} values for shape {shape}", data.len()),
            ));
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
        })
    }

    /// Panics on a bad shape; for internal callers that already own a
    /// correctly sized buffer.
    pub(crate) fn from_parts(shape: Shape5, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        Self {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn full(shape: Shape5, value: f64) -> Self {
        Self::from_parts(shape, vec![value; shape.len()])
    }

    pub fn zeros(shape: Shape5) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones_like(&self) -> Self {
        Self::full(self.shape, 1.0)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.shape)
    }

    pub fn from_fn(shape: Shape5, mut f: impl FnMut(usize, usize, usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for b in 0..shape.n {
            for k in 0..shape.z {
                for i in 0..shape.h {
                    for j in 0..shape.w {
                        for ch in 0..shape.c {
                            data.push(f(b, k, i, j, ch));
                        }
                    }
                }
            }
        }
        Self::from_parts(shape, data)
    }

    pub fn uniform(shape: Shape5, lo: f64, hi: f64, rng: &mut Rng) -> Self {
        let data = (0..shape.len()).map(|_| rng.uniform_range(lo, hi)).collect();
        Self::from_parts(shape, data)
    }

    pub fn normal(shape: Shape5, std: f64, rng: &mut Rng) -> Self {
        let data = (0..shape.len()).map(|_| std * rng.normal()).collect();
        Self::from_parts(shape, data)
    }

    pub fn shape(&self) -> Shape5 {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Copy-on-write access to the buffer.
    pub fn data_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<f64> {
        Arc::try_unwrap(self.data).unwrap_or_else(|arc| (*arc).clone())
    }

    pub fn reshape(&self, shape: Shape5) -> Result<Self> {
        shape.validate("Tensor5::reshape")?;
        if shape.len() != self.shape.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape,
            });
        }
        Ok(Self {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    #[inline]
    pub fn get(&self, b: usize, k: usize, i: usize, j: usize, ch: usize) -> f64 {
        self.data[self.shape.offset(b, k, i, j, ch)]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Tensor5, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_shape("zip_map", other)?;
        Ok(self.zip_map_unchecked(other, f))
    }

    pub(crate) fn zip_map_unchecked(&self, other: &Tensor5, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::from_parts(self.shape, data)
    }

    pub fn check_same_shape(&self, op: &'static str, other: &Tensor5) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape,
                right: other.shape,
            });
        }
        Ok(())
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor5) -> Result<f64> {
        self.check_same_shape("dot", other)?;
        Ok(self.data.iter().zip(other.data.iter()).map(|(a, b)| a * b).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// In-place `self += other`, same shape required.
    pub(crate) fn accumulate(&mut self, other: &Tensor5) {
        assert_eq!(self.shape, other.shape, "accumulate: shape mismatch");
        for (a, b) in self.data_mut().iter_mut().zip(other.data.iter()) {
            *a += b;
        }
    }

    /// Single channel `ch` as an `(n, z, h, w, 1)` tensor.
    pub fn channel(&self, ch: usize) -> Tensor5 {
        let c = self.shape.c;
        assert!(ch < c, "channel {ch} out of range for {}", self.shape);
        let data = self.data.iter().skip(ch).step_by(c).copied().collect();
        Self::from_parts(self.shape.with_channels(1), data)
    }

    /// Inverse of [`Tensor5::channel`]: interleave single-channel tensors.
    pub fn stack_channels(parts: &[Tensor5]) -> Result<Tensor5> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("stack_channels", "no channels given"))?;
        let base = first.shape;
        for p in parts {
            if p.shape != base || p.shape.c != 1 {
                return Err(Error::ShapeMismatch {
                    op: "stack_channels",
                    left: base,
                    right: p.shape,
                });
            }
        }
        let c = parts.len();
        let mut data = vec![0.0; base.len() * c];
        for (ch, p) in parts.iter().enumerate() {
            for (v, &x) in p.data.iter().enumerate() {
                data[v * c + ch] = x;
            }
        }
        Ok(Self::from_parts(base.with_channels(c), data))
    }

    pub fn batch_item(&self, b: usize) -> Tensor5 {
        assert!(b < self.shape.n);
        let per = self.shape.len() / self.shape.n;
        let data = self.data[b * per..(b + 1) * per].to_vec();
        Self::from_parts(Shape5 { n: 1, ..self.shape }, data)
    }

    pub fn concat_batch(items: &[Tensor5]) -> Result<Tensor5> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("concat_batch", "no tensors given"))?;
        let per = Shape5 { n: 1, ..first.shape };
        let mut data = Vec::new();
        let mut n = 0;
        for t in items {
            if (Shape5 { n: 1, ..t.shape }) != per {
                return Err(Error::ShapeMismatch {
                    op: "concat_batch",
                    left: first.shape,
                    right: t.shape,
                });
            }
            data.extend_from_slice(&t.data);
            n += t.shape.n;
        }
        Ok(Self::from_parts(Shape5 { n, ..per }, data))
    }
}

pub fn elementwise(op: ElementwiseOp, a: &Tensor5, b: &Tensor5) -> Result<Tensor5> {
    a.check_same_shape("elementwise", b)?;
    Ok(a.zip_map_unchecked(b, |x, y| op.apply(x, y)))
}

pub fn add(a: &Tensor5, b: &Tensor5) -> Result<Tensor5> {
    elementwise(ElementwiseOp::Add, a, b)
}

pub fn sub(a: &Tensor5, b: &Tensor5) -> Result<Tensor5> {
    elementwise(ElementwiseOp::Sub, a, b)
}

pub fn mul(a: &Tensor5, b: &Tensor5) -> Result<Tensor5> {
    elementwise(ElementwiseOp::Mul, a, b)
}

pub fn max(a: &Tensor5, b: &Tensor5) -> Result<Tensor5> {
    elementwise(ElementwiseOp::Max, a, b)
}

/// Per-channel spatial mean, output shape `(n, 1, 1, 1, c)`.
///
/// Deviations are accumulated relative to the first voxel, so a channel that
/// holds a single value everywhere yields exactly that value.
pub fn reduce_mean_spatial(u: &Tensor5) -> Tensor5 {
    let s = u.shape();
    let voxels = s.voxels();
    let mut out = vec![0.0; s.n * s.c];
    let mut acc = vec![0.0; s.c];
    for b in 0..s.n {
        let block = &u.data()[b * voxels * s.c..(b + 1) * voxels * s.c];
        let first = &block[..s.c];
        acc.iter_mut().for_each(|a| *a = 0.0);
        for vox in block.chunks_exact(s.c) {
            for ((a, &x), &x0) in acc.iter_mut().zip(vox).zip(first) {
                *a += x - x0;
            }
        }
        for ch in 0..s.c {
            out[b * s.c + ch] = first[ch] + acc[ch] / voxels as f64;
        }
    }
    Tensor5::from_parts(Shape5::new(s.n, 1, 1, 1, s.c), out)
}

/// Adjoint of [`reduce_mean_spatial`]: spread `(n,1,1,1,c)` gradients back over
/// `shape`'s voxels.
pub fn reduce_mean_spatial_backward(grad: &Tensor5, shape: Shape5) -> Tensor5 {
    let voxels = shape.voxels();
    let inv = 1.0 / voxels as f64;
    let g = grad.data();
    let mut out = Vec::with_capacity(shape.len());
    for b in 0..shape.n {
        for _ in 0..voxels {
            out.extend(g[b * shape.c..(b + 1) * shape.c].iter().map(|v| v * inv));
        }
    }
    Tensor5::from_parts(shape, out)
}

/// Source index pair and weight for one output position of a linear
/// resampling along one axis.
#[derive(Clone, Copy, Debug)]
struct Tap {
    lo: usize,
    hi: usize,
    t: f64,
}

/// Half-pixel (align-corners-false) source coordinates. Positions past the
/// outermost sample centres are linearly extrapolated from the two nearest
/// samples instead of clamped, so affine signals are reproduced everywhere.
fn axis_taps(input: usize, output: usize) -> Vec<Tap> {
    if input == 1 {
        return vec![Tap { lo: 0, hi: 0, t: 0.0 }; output];
    }
    let ratio = input as f64 / output as f64;
    (0..output)
        .map(|d| {
            let src = (d as f64 + 0.5) * ratio - 0.5;
            let lo = (src.floor().max(0.0) as usize).min(input - 2);
            Tap {
                lo,
                hi: lo + 1,
                t: src - lo as f64,
            }
        })
        .collect()
}

/// Linear resampling along one spatial axis (1 = z, 2 = h, 3 = w).
fn resample_axis(x: &Tensor5, axis: usize, target: usize) -> Tensor5 {
    let s = x.shape();
    let dims = s.dims();
    if dims[axis] == target {
        return x.clone();
    }
    let taps = axis_taps(dims[axis], target);
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    let src = x.data();
    let mut out = vec![0.0; outer * target * inner];
    for o in 0..outer {
        let src_base = o * dims[axis] * inner;
        let dst_base = o * target * inner;
        for (d, tap) in taps.iter().enumerate() {
            let lo = &src[src_base + tap.lo * inner..src_base + (tap.lo + 1) * inner];
            let hi = &src[src_base + tap.hi * inner..src_base + (tap.hi + 1) * inner];
            let dst = &mut out[dst_base + d * inner..dst_base + (d + 1) * inner];
            for ((y, &a), &b) in dst.iter_mut().zip(lo).zip(hi) {
                *y = (1.0 - tap.t) * a + tap.t * b;
            }
        }
    }
    let mut new_dims = dims;
    new_dims[axis] = target;
    Tensor5::from_parts(Shape5::from_slice(&new_dims).unwrap(), out)
}

fn resample_axis_adjoint(g: &Tensor5, axis: usize, source: usize) -> Tensor5 {
    let s = g.shape();
    let dims = s.dims();
    if dims[axis] == source {
        return g.clone();
    }
    let taps = axis_taps(source, dims[axis]);
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    let gd = g.data();
    let mut out = vec![0.0; outer * source * inner];
    for o in 0..outer {
        let g_base = o * dims[axis] * inner;
        let dst_base = o * source * inner;
        for (d, tap) in taps.iter().enumerate() {
            let grow = &gd[g_base + d * inner..g_base + (d + 1) * inner];
            for (q, &gv) in grow.iter().enumerate() {
                out[dst_base + tap.lo * inner + q] += (1.0 - tap.t) * gv;
                out[dst_base + tap.hi * inner + q] += tap.t * gv;
            }
        }
    }
    let mut new_dims = dims;
    new_dims[axis] = source;
    Tensor5::from_parts(Shape5::from_slice(&new_dims).unwrap(), out)
}

/// Channel-wise trilinear resampling to spatial extents `target`.
///
/// Same-shape resampling returns the input unchanged.
pub fn resample_trilinear(x: &Tensor5, target: [usize; 3]) -> Result<Tensor5> {
    if target.iter().any(|&t| t == 0) {
        return Err(Error::invalid(
            "resample_trilinear",
            format!("target extents must be >= 1, got {target:?}"),
        ));
    }
    let y = resample_axis(x, 1, target[0]);
    let y = resample_axis(&y, 2, target[1]);
    Ok(resample_axis(&y, 3, target[2]))
}

/// Adjoint of [`resample_trilinear`] mapping a gradient at the target
/// resolution back to the `source` spatial extents.
pub fn resample_trilinear_backward(grad: &Tensor5, source: [usize; 3]) -> Tensor5 {
    let g = resample_axis_adjoint(grad, 3, source[2]);
    let g = resample_axis_adjoint(&g, 2, source[1]);
    resample_axis_adjoint(&g, 1, source[0])
}
