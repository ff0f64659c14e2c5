//! 3D convolution and transposed convolution.
//!
//! Kernels are stored as `Tensor5` with shape `(kz, kh, kw, c_in, c_out)`.
//! Convolution is cross-correlation with zero padding. The transposed
//! convolution is implemented as the adjoint of the convolution, sharing the
//! same three loop kernels (forward, input-gradient, weight-gradient).

use rayon::prelude::*;

use super::LayerGrad;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Shape5, Tensor5};

/// `floor((i + 2p - k) / s) + 1`, or `None` when no full window fits.
pub fn conv_output_extent(i: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    if s == 0 || i + 2 * p < k {
        return None;
    }
    Some((i + 2 * p - k) / s + 1)
}

/// `s (i - 1) + k - 2p + op`, or `None` when that is below 1 or `op >= s`.
pub fn deconv_output_extent(i: usize, k: usize, s: usize, p: usize, op: usize) -> Option<usize> {
    if s == 0 || i == 0 || op >= s {
        return None;
    }
    let o = (s * (i - 1) + k + op) as isize - 2 * p as isize;
    (o >= 1).then_some(o as usize)
}

/// Swap the `c_in` / `c_out` axes of a kernel. A transposed convolution with
/// kernel `K` is the adjoint of the convolution with `transpose_kernel_channels(K)`.
pub fn transpose_kernel_channels(kernel: &Tensor5) -> Tensor5 {
    let s = kernel.shape();
    let (cin, cout) = (s.w, s.c);
    let src = kernel.data();
    let mut out = vec![0.0; src.len()];
    for (off, block) in src.chunks_exact(cin * cout).enumerate() {
        let dst = &mut out[off * cin * cout..(off + 1) * cin * cout];
        for ci in 0..cin {
            for co in 0..cout {
                dst[co * cin + ci] = block[ci * cout + co];
            }
        }
    }
    Tensor5::from_parts(Shape5::new(s.n, s.z, s.h, s.c, s.w), out)
}

fn check_kernel(op: &'static str, kernel: &Tensor5, bias: Option<&[f64]>, stride: [usize; 3]) -> Result<()> {
    if stride.iter().any(|&s| s == 0) {
        return Err(Error::invalid(op, "stride must be positive"));
    }
    if !kernel.all_finite() {
        return Err(Error::invalid(op, "kernel has non-finite weights"));
    }
    if let Some(b) = bias {
        if b.len() != kernel.shape().c {
            return Err(Error::invalid(
                op,
                format!("bias has {} entries for {} output channels", b.len(), kernel.shape().c),
            ));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv3dParams {
    pub kernel: Tensor5,
    pub bias: Option<Vec<f64>>,
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl Conv3dParams {
    pub fn new(kernel: Tensor5, bias: Option<Vec<f64>>, stride: [usize; 3], padding: [usize; 3]) -> Result<Self> {
        check_kernel("Conv3dParams", &kernel, bias.as_deref(), stride)?;
        Ok(Self {
            kernel,
            bias,
            stride,
            padding,
        })
    }

    /// He-normal weights, zero bias when `with_bias`.
    pub fn init(
        ksize: [usize; 3],
        c_in: usize,
        c_out: usize,
        stride: [usize; 3],
        padding: [usize; 3],
        with_bias: bool,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = ksize.iter().product::<usize>() * c_in;
        let kernel = super::he_normal(Shape5::new(ksize[0], ksize[1], ksize[2], c_in, c_out), fan_in, rng);
        Self {
            kernel,
            bias: with_bias.then(|| vec![0.0; c_out]),
            stride,
            padding,
        }
    }

    pub fn kernel_size(&self) -> [usize; 3] {
        let s = self.kernel.shape();
        [s.n, s.z, s.h]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape().w
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape().c
    }

    pub fn output_spatial(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let k = self.kernel_size();
        let mut out = [0; 3];
        for ax in 0..3 {
            out[ax] = conv_output_extent(input[ax], k[ax], self.stride[ax], self.padding[ax]).ok_or_else(|| {
                Error::invalid(
                    "conv3d",
                    format!(
                        "non-positive output extent on axis {ax} (i={}, k={}, s={}, p={})",
                        input[ax], k[ax], self.stride[ax], self.padding[ax]
                    ),
                )
            })?;
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Deconv3dParams {
    pub kernel: Tensor5,
    pub bias: Option<Vec<f64>>,
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub output_padding: [usize; 3],
}

impl Deconv3dParams {
    pub fn new(
        kernel: Tensor5,
        bias: Option<Vec<f64>>,
        stride: [usize; 3],
        padding: [usize; 3],
        output_padding: [usize; 3],
    ) -> Result<Self> {
        check_kernel("Deconv3dParams", &kernel, bias.as_deref(), stride)?;
        if (0..3).any(|ax| output_padding[ax] >= stride[ax]) {
            return Err(Error::invalid("Deconv3dParams", "output padding must be below the stride"));
        }
        Ok(Self {
            kernel,
            bias,
            stride,
            padding,
            output_padding,
        })
    }

    pub fn init(
        ksize: [usize; 3],
        c_in: usize,
        c_out: usize,
        stride: [usize; 3],
        padding: [usize; 3],
        output_padding: [usize; 3],
        with_bias: bool,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = ksize.iter().product::<usize>() * c_in;
        let kernel = super::he_normal(Shape5::new(ksize[0], ksize[1], ksize[2], c_in, c_out), fan_in, rng);
        Self {
            kernel,
            bias: with_bias.then(|| vec![0.0; c_out]),
            stride,
            padding,
            output_padding,
        }
    }

    pub fn kernel_size(&self) -> [usize; 3] {
        let s = self.kernel.shape();
        [s.n, s.z, s.h]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape().w
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape().c
    }

    pub fn output_spatial(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let k = self.kernel_size();
        let mut out = [0; 3];
        for ax in 0..3 {
            out[ax] = deconv_output_extent(input[ax], k[ax], self.stride[ax], self.padding[ax], self.output_padding[ax])
                .ok_or_else(|| {
                    Error::invalid(
                        "deconv3d",
                        format!(
                            "non-positive output extent on axis {ax} (i={}, k={}, s={}, p={}, op={})",
                            input[ax], k[ax], self.stride[ax], self.padding[ax], self.output_padding[ax]
                        ),
                    )
                })?;
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Tensor5,
    pub kernel: Tensor5,
    pub bias: Option<Vec<f64>>,
}

/// Geometry of a plain convolution from `src` (c_in) to `dst` (c_out).
#[derive(Clone, Copy, Debug)]
struct Geom {
    n: usize,
    src: [usize; 3],
    dst: [usize; 3],
    k: [usize; 3],
    s: [usize; 3],
    p: [usize; 3],
    cin: usize,
    cout: usize,
}

impl Geom {
    fn src_len(&self) -> usize {
        self.n * self.src.iter().product::<usize>() * self.cin
    }

    fn dst_len(&self) -> usize {
        self.n * self.dst.iter().product::<usize>() * self.cout
    }

    /// Source coordinate for destination `o` and tap `k` on axis `ax`.
    #[inline]
    fn src_coord(&self, ax: usize, o: usize, k: usize) -> Option<usize> {
        let v = (o * self.s[ax] + k) as isize - self.p[ax] as isize;
        (v >= 0 && (v as usize) < self.src[ax]).then_some(v as usize)
    }

    /// Destination coordinate reached from source `i` through tap `k`.
    #[inline]
    fn dst_coord(&self, ax: usize, i: usize, k: usize) -> Option<usize> {
        let t = (i + self.p[ax]) as isize - k as isize;
        if t < 0 || t as usize % self.s[ax] != 0 {
            return None;
        }
        let o = t as usize / self.s[ax];
        (o < self.dst[ax]).then_some(o)
    }
}

fn conv_forward_raw(x: &[f64], kernel: &[f64], g: &Geom) -> Vec<f64> {
    let [_, dh, dw] = g.dst;
    let [sz, sh, sw] = g.src;
    let [kz_n, ky_n, kx_n] = g.k;
    let (cin, cout) = (g.cin, g.cout);
    let mut out = vec![0.0; g.dst_len()];
    out.par_chunks_mut(dh * dw * cout).enumerate().for_each(|(slab, chunk)| {
        let b = slab / g.dst[0];
        let oz = slab % g.dst[0];
        for oy in 0..dh {
            for ox in 0..dw {
                let o = &mut chunk[(oy * dw + ox) * cout..(oy * dw + ox + 1) * cout];
                for kz in 0..kz_n {
                    let Some(iz) = g.src_coord(0, oz, kz) else { continue };
                    for ky in 0..ky_n {
                        let Some(iy) = g.src_coord(1, oy, ky) else { continue };
                        for kx in 0..kx_n {
                            let Some(ix) = g.src_coord(2, ox, kx) else { continue };
                            let xoff = (((b * sz + iz) * sh + iy) * sw + ix) * cin;
                            let woff = ((kz * ky_n + ky) * kx_n + kx) * cin * cout;
                            let xs = &x[xoff..xoff + cin];
                            for (ci, &xv) in xs.iter().enumerate() {
                                let wr = &kernel[woff + ci * cout..woff + (ci + 1) * cout];
                                for (acc, &wv) in o.iter_mut().zip(wr) {
                                    *acc += xv * wv;
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

fn conv_input_grad_raw(dy: &[f64], kernel: &[f64], g: &Geom) -> Vec<f64> {
    let [_, sh, sw] = g.src;
    let [dz, dh, dw] = g.dst;
    let [kz_n, ky_n, kx_n] = g.k;
    let (cin, cout) = (g.cin, g.cout);
    let mut dx = vec![0.0; g.src_len()];
    dx.par_chunks_mut(sh * sw * cin).enumerate().for_each(|(slab, chunk)| {
        let b = slab / g.src[0];
        let iz = slab % g.src[0];
        for iy in 0..sh {
            for ix in 0..sw {
                let d = &mut chunk[(iy * sw + ix) * cin..(iy * sw + ix + 1) * cin];
                for kz in 0..kz_n {
                    let Some(oz) = g.dst_coord(0, iz, kz) else { continue };
                    for ky in 0..ky_n {
                        let Some(oy) = g.dst_coord(1, iy, ky) else { continue };
                        for kx in 0..kx_n {
                            let Some(ox) = g.dst_coord(2, ix, kx) else { continue };
                            let yoff = (((b * dz + oz) * dh + oy) * dw + ox) * cout;
                            let woff = ((kz * ky_n + ky) * kx_n + kx) * cin * cout;
                            let dys = &dy[yoff..yoff + cout];
                            for (ci, dv) in d.iter_mut().enumerate() {
                                let wr = &kernel[woff + ci * cout..woff + (ci + 1) * cout];
                                let mut acc = 0.0;
                                for (&gv, &wv) in dys.iter().zip(wr) {
                                    acc += gv * wv;
                                }
                                *dv += acc;
                            }
                        }
                    }
                }
            }
        }
    });
    dx
}

fn conv_kernel_grad_raw(x: &[f64], dy: &[f64], g: &Geom) -> Vec<f64> {
    let [sz, sh, sw] = g.src;
    let [dz, dh, dw] = g.dst;
    let [_, ky_n, kx_n] = g.k;
    let (cin, cout) = (g.cin, g.cout);
    let mut dk = vec![0.0; g.k.iter().product::<usize>() * cin * cout];
    dk.par_chunks_mut(cin * cout).enumerate().for_each(|(tap, block)| {
        let kz = tap / (ky_n * kx_n);
        let ky = (tap / kx_n) % ky_n;
        let kx = tap % kx_n;
        for b in 0..g.n {
            for oz in 0..dz {
                let Some(iz) = g.src_coord(0, oz, kz) else { continue };
                for oy in 0..dh {
                    let Some(iy) = g.src_coord(1, oy, ky) else { continue };
                    for ox in 0..dw {
                        let Some(ix) = g.src_coord(2, ox, kx) else { continue };
                        let xoff = (((b * sz + iz) * sh + iy) * sw + ix) * cin;
                        let yoff = (((b * dz + oz) * dh + oy) * dw + ox) * cout;
                        let dys = &dy[yoff..yoff + cout];
                        for ci in 0..cin {
                            let xv = x[xoff + ci];
                            let row = &mut block[ci * cout..(ci + 1) * cout];
                            for (acc, &gv) in row.iter_mut().zip(dys) {
                                *acc += xv * gv;
                            }
                        }
                    }
                }
            }
        }
    });
    dk
}

fn channel_sums(t: &[f64], c: usize) -> Vec<f64> {
    let mut out = vec![0.0; c];
    for vox in t.chunks_exact(c) {
        for (o, &v) in out.iter_mut().zip(vox) {
            *o += v;
        }
    }
    out
}

fn add_bias(y: &mut [f64], bias: &[f64]) {
    for vox in y.chunks_exact_mut(bias.len()) {
        for (v, &b) in vox.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

pub fn conv3d_forward(x: &Tensor5, p: &Conv3dParams) -> Result<LayerGrad<ConvGrads>> {
    let xs = x.shape();
    if xs.c != p.in_channels() {
        return Err(Error::invalid(
            "conv3d",
            format!("input has {} channels, kernel expects {}", xs.c, p.in_channels()),
        ));
    }
    let dst = p.output_spatial(xs.spatial())?;
    let g = Geom {
        n: xs.n,
        src: xs.spatial(),
        dst,
        k: p.kernel_size(),
        s: p.stride,
        p: p.padding,
        cin: p.in_channels(),
        cout: p.out_channels(),
    };
    let mut y = conv_forward_raw(x.data(), p.kernel.data(), &g);
    if let Some(b) = &p.bias {
        add_bias(&mut y, b);
    }
    let out_shape = xs.with_spatial(dst).with_channels(g.cout);
    let x = x.clone();
    let kernel = p.kernel.clone();
    let has_bias = p.bias.is_some();
    Ok(LayerGrad::new(Tensor5::from_parts(out_shape, y), move |dy| {
        let dx = conv_input_grad_raw(dy.data(), kernel.data(), &g);
        let dk = conv_kernel_grad_raw(x.data(), dy.data(), &g);
        ConvGrads {
            input: Tensor5::from_parts(x.shape(), dx),
            kernel: Tensor5::from_parts(kernel.shape(), dk),
            bias: has_bias.then(|| channel_sums(dy.data(), g.cout)),
        }
    }))
}

pub fn deconv3d_forward(x: &Tensor5, p: &Deconv3dParams) -> Result<LayerGrad<ConvGrads>> {
    let xs = x.shape();
    if xs.c != p.in_channels() {
        return Err(Error::invalid(
            "deconv3d",
            format!("input has {} channels, kernel expects {}", xs.c, p.in_channels()),
        ));
    }
    let dst = p.output_spatial(xs.spatial())?;
    // Geometry of the convolution this layer is the adjoint of: it maps the
    // deconv output (c_out) back down to the deconv input (c_in).
    let g = Geom {
        n: xs.n,
        src: dst,
        dst: xs.spatial(),
        k: p.kernel_size(),
        s: p.stride,
        p: p.padding,
        cin: p.out_channels(),
        cout: p.in_channels(),
    };
    let adj_kernel = transpose_kernel_channels(&p.kernel);
    let mut y = conv_input_grad_raw(x.data(), adj_kernel.data(), &g);
    if let Some(b) = &p.bias {
        add_bias(&mut y, b);
    }
    let out_shape = xs.with_spatial(dst).with_channels(p.out_channels());
    let x = x.clone();
    let kernel_shape = p.kernel.shape();
    let has_bias = p.bias.is_some();
    Ok(LayerGrad::new(Tensor5::from_parts(out_shape, y), move |dy| {
        let dx = conv_forward_raw(dy.data(), adj_kernel.data(), &g);
        let dk_adj = conv_kernel_grad_raw(dy.data(), x.data(), &g);
        let dk_adj = Tensor5::from_parts(
            Shape5::new(kernel_shape.n, kernel_shape.z, kernel_shape.h, kernel_shape.c, kernel_shape.w),
            dk_adj,
        );
        ConvGrads {
            input: Tensor5::from_parts(x.shape(), dx),
            kernel: transpose_kernel_channels(&dk_adj),
            bias: has_bias.then(|| channel_sums(dy.data(), g.cin)),
        }
    }))
}
