//! Attention guided filter.
//!
//! The filtered map `O` (low resolution) is explained locally as a linear
//! function of the guidance `I` downsampled to `O`'s grid. Every cubic window
//! `w_k` of radius `r` fits `(a_k, b_k)` by attention-weighted ridge
//! regression
//!
//! ```text
//! min  sum_{i in w_k} T_i^2 (a_k I_i + b_k - O_i)^2 + eps a_k^2
//! ```
//!
//! whose solution, with `q = T^2` and window sums `S = sum q`,
//! `SI = sum q I`, `SO = sum q O`, `SII = sum q I^2`, `SIO = sum q I O` and
//! `N = |w_k|`, is
//!
//! ```text
//! a_k = (SIO/S - SI/S * SO/S) / (SII/S - (SI/S)^2 + eps N / S)
//! b_k = SO/S - a_k SI/S
//! ```
//!
//! Coefficients are averaged over every window covering a voxel, upsampled
//! to `I`'s grid and applied as `A_h * I + B_h`. Windows are clipped at the
//! volume border and only count in-volume voxels.

use crate::error::{Error, Result};
use crate::nn::{conv3d_forward, relu, sigmoid, Conv3dParams, ConvGrads, LayerGrad};
use crate::rng::Rng;
use crate::tensor::{resample_trilinear, resample_trilinear_backward, Shape5, Tensor5};

/// Window weight sums below this fall back to `a = 0`, `b = mean(O)`.
pub const DEGENERATE_WEIGHT: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct AgParams {
    pub radius: usize,
    pub eps: f64,
    /// 1x1x1 transform of the filtered map `O`.
    pub conv_o: Conv3dParams,
    /// 1x1x1 transform of the downsampled guidance `I_l`.
    pub conv_i: Conv3dParams,
    /// 1x1x1 collapse to the single attention channel.
    pub conv_attn: Conv3dParams,
    /// Optional 1x1x1 map from `I`'s channels to `O`'s.
    pub align: Option<Conv3dParams>,
}

fn is_pointwise(p: &Conv3dParams) -> bool {
    p.kernel_size() == [1, 1, 1] && p.stride == [1, 1, 1] && p.padding == [0, 0, 0]
}

impl AgParams {
    pub fn new(
        radius: usize,
        eps: f64,
        conv_o: Conv3dParams,
        conv_i: Conv3dParams,
        conv_attn: Conv3dParams,
        align: Option<Conv3dParams>,
    ) -> Result<Self> {
        if radius == 0 {
            return Err(Error::invalid("ag_block", "radius must be >= 1"));
        }
        if !(eps > 0.0) {
            return Err(Error::invalid("ag_block", format!("eps must be positive, got {eps}")));
        }
        let convs = [Some(&conv_o), Some(&conv_i), Some(&conv_attn), align.as_ref()];
        if convs.iter().flatten().any(|c| !is_pointwise(c)) {
            return Err(Error::invalid("ag_block", "attention and alignment convolutions must be 1x1x1"));
        }
        if conv_attn.out_channels() != 1 {
            return Err(Error::invalid("ag_block", "attention map must have exactly one channel"));
        }
        if conv_o.out_channels() != conv_attn.in_channels() || conv_i.out_channels() != conv_attn.in_channels() {
            return Err(Error::invalid("ag_block", "attention transform widths disagree"));
        }
        if conv_i.in_channels() != conv_o.in_channels() {
            return Err(Error::invalid("ag_block", "I_l and O transforms expect different channel counts"));
        }
        if let Some(a) = &align {
            if a.out_channels() != conv_o.in_channels() {
                return Err(Error::invalid("ag_block", "alignment output does not match O's channels"));
            }
        }
        Ok(Self {
            radius,
            eps,
            conv_o,
            conv_i,
            conv_attn,
            align,
        })
    }

    /// He-normal 1x1x1 transforms with `inter` hidden channels; an alignment
    /// conv is created only when `guide_channels != channels`.
    pub fn init(channels: usize, guide_channels: usize, inter: usize, radius: usize, eps: f64, rng: &mut Rng) -> Result<Self> {
        let pw = |cin, cout, rng: &mut Rng| Conv3dParams::init([1; 3], cin, cout, [1; 3], [0; 3], true, rng);
        let conv_o = pw(channels, inter, rng);
        let conv_i = pw(channels, inter, rng);
        let conv_attn = pw(inter, 1, rng);
        let align = (guide_channels != channels).then(|| pw(guide_channels, channels, rng));
        Self::new(radius, eps, conv_o, conv_i, conv_attn, align)
    }
}

/// `min(r, floor(min extent / 2))`, at least 1.
pub fn effective_radius(r: usize, spatial: [usize; 3]) -> usize {
    let min_extent = spatial.iter().copied().min().unwrap_or(1);
    r.min(min_extent / 2).max(1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgCoefficients {
    pub a: Tensor5,
    pub b: Tensor5,
}

/// Clipped moving sum of radius `r` along one spatial axis (1 = z, 2 = h, 3 = w).
fn box_axis(x: &[f64], dims: [usize; 5], axis: usize, r: usize) -> Vec<f64> {
    let len = dims[axis];
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    let mut out = vec![0.0; x.len()];
    let mut prefix = vec![0.0; (len + 1) * inner];
    for o in 0..outer {
        let base = o * len * inner;
        for q in 0..inner {
            prefix[q] = 0.0;
        }
        for v in 0..len {
            for q in 0..inner {
                prefix[(v + 1) * inner + q] = prefix[v * inner + q] + x[base + v * inner + q];
            }
        }
        for v in 0..len {
            let lo = v.saturating_sub(r);
            let hi = (v + r + 1).min(len);
            for q in 0..inner {
                out[base + v * inner + q] = prefix[hi * inner + q] - prefix[lo * inner + q];
            }
        }
    }
    out
}

/// Sum over the cubic window of radius `r` around every voxel, clipped to the
/// volume; per batch item and channel. Linear time via one prefix-sum pass per
/// axis. The map is self-adjoint, so it also serves as its own backward.
pub fn box_sum(x: &Tensor5, r: usize) -> Tensor5 {
    let dims = x.shape().dims();
    let y = box_axis(x.data(), dims, 1, r);
    let y = box_axis(&y, dims, 2, r);
    Tensor5::from_parts(x.shape(), box_axis(&y, dims, 3, r))
}

/// Number of in-volume voxels in every clipped window.
fn window_counts(shape: Shape5, r: usize) -> Tensor5 {
    let axis = |len: usize, v: usize| ((v + r + 1).min(len) - v.saturating_sub(r)) as f64;
    Tensor5::from_fn(shape, |_, k, i, j, _| axis(shape.z, k) * axis(shape.h, i) * axis(shape.w, j))
}

/// Repeat a single-channel tensor across `c` channels.
fn broadcast_channels(t: &Tensor5, c: usize) -> Tensor5 {
    let data = t.data().iter().flat_map(|&v| std::iter::repeat_n(v, c)).collect();
    Tensor5::from_parts(t.shape().with_channels(c), data)
}

fn sum_channels(t: &Tensor5) -> Tensor5 {
    let c = t.shape().c;
    let data = t.data().chunks_exact(c).map(|v| v.iter().sum()).collect();
    Tensor5::from_parts(t.shape().with_channels(1), data)
}

fn check_fit_inputs(i_l: &Tensor5, o: &Tensor5, t: &Tensor5) -> Result<()> {
    i_l.check_same_shape("ag_fit", o)?;
    if t.shape() != o.shape().with_channels(1) {
        return Err(Error::ShapeMismatch {
            op: "ag_fit (attention)",
            left: o.shape().with_channels(1),
            right: t.shape(),
        });
    }
    Ok(())
}

/// Window statistics and per-window solutions, kept for the backward pass.
struct Fit {
    r: usize,
    eps: f64,
    q: Tensor5,
    i_l: Tensor5,
    o: Tensor5,
    count: Tensor5,
    s: Tensor5,
    si: Tensor5,
    so: Tensor5,
    sii: Tensor5,
    sio: Tensor5,
    a: Tensor5,
    b: Tensor5,
}

impl Fit {
    fn new(i_l: &Tensor5, o: &Tensor5, t: &Tensor5, r: usize, eps: f64) -> Self {
        let c = o.shape().c;
        let q = broadcast_channels(&t.map(|v| v * v), c);
        let qi = q.zip_map_unchecked(i_l, |a, b| a * b);
        let qo = q.zip_map_unchecked(o, |a, b| a * b);
        let s = box_sum(&q, r);
        let si = box_sum(&qi, r);
        let so = box_sum(&qo, r);
        let sii = box_sum(&qi.zip_map_unchecked(i_l, |a, b| a * b), r);
        let sio = box_sum(&qi.zip_map_unchecked(o, |a, b| a * b), r);
        let count = window_counts(o.shape(), r);
        let plain_o = box_sum(o, r);
        let len = o.shape().len();
        let mut a = vec![0.0; len];
        let mut b = vec![0.0; len];
        for idx in 0..len {
            let sw = s.data()[idx];
            let n = count.data()[idx];
            if sw < DEGENERATE_WEIGHT {
                a[idx] = 0.0;
                b[idx] = plain_o.data()[idx] / n;
                continue;
            }
            let mi = si.data()[idx] / sw;
            let mo = so.data()[idx] / sw;
            let cov = sio.data()[idx] / sw - mi * mo;
            let var = sii.data()[idx] / sw - mi * mi;
            let ak = cov / (var + eps * (n / sw));
            a[idx] = ak;
            b[idx] = mo - ak * mi;
        }
        Self {
            r,
            eps,
            q,
            i_l: i_l.clone(),
            o: o.clone(),
            count,
            s,
            si,
            so,
            sii,
            sio,
            a: Tensor5::from_parts(o.shape(), a),
            b: Tensor5::from_parts(o.shape(), b),
        }
    }

    fn averaged(&self) -> AgCoefficients {
        let avg = |t: &Tensor5| box_sum(t, self.r).zip_map_unchecked(&self.count, |v, n| v / n);
        AgCoefficients {
            a: avg(&self.a),
            b: avg(&self.b),
        }
    }

    /// Gradients w.r.t. `(I_l, O, T^2 summed over channels)` given gradients
    /// of the averaged coefficients.
    fn backward(&self, d_a_avg: &Tensor5, d_b_avg: &Tensor5) -> (Tensor5, Tensor5, Tensor5) {
        let r = self.r;
        let per_window = |g: &Tensor5| box_sum(&g.zip_map_unchecked(&self.count, |v, n| v / n), r);
        let ga = per_window(d_a_avg);
        let gb = per_window(d_b_avg);
        let len = self.o.shape().len();
        let mut g_s = vec![0.0; len];
        let mut g_si = vec![0.0; len];
        let mut g_so = vec![0.0; len];
        let mut g_sii = vec![0.0; len];
        let mut g_sio = vec![0.0; len];
        let mut g_plain_o = vec![0.0; len];
        for idx in 0..len {
            let sw = self.s.data()[idx];
            let n = self.count.data()[idx];
            let gbk = gb.data()[idx];
            if sw < DEGENERATE_WEIGHT {
                g_plain_o[idx] = gbk / n;
                continue;
            }
            let (si, so, sii, sio) = (self.si.data()[idx], self.so.data()[idx], self.sii.data()[idx], self.sio.data()[idx]);
            let mi = si / sw;
            let mo = so / sw;
            let cov = sio / sw - mi * mo;
            let var = sii / sw - mi * mi;
            let den = var + self.eps * (n / sw);
            let ak = cov / den;

            // b = mo - a mi
            let mut g_mo = gbk;
            let g_a = ga.data()[idx] - gbk * mi;
            let mut g_mi = -gbk * ak;
            // a = cov / den
            let g_cov = g_a / den;
            let g_den = -g_a * ak / den;
            // den = var + eps n / S
            let g_var = g_den;
            let mut gs = -g_den * self.eps * n / (sw * sw);
            // var = SII/S - mi^2
            g_sii[idx] = g_var / sw;
            gs -= g_var * sii / (sw * sw);
            g_mi -= 2.0 * mi * g_var;
            // cov = SIO/S - mi mo
            g_sio[idx] = g_cov / sw;
            gs -= g_cov * sio / (sw * sw);
            g_mi -= mo * g_cov;
            g_mo -= mi * g_cov;
            // mi = SI/S, mo = SO/S
            g_si[idx] = g_mi / sw;
            g_so[idx] = g_mo / sw;
            gs -= (g_mi * si + g_mo * so) / (sw * sw);
            g_s[idx] = gs;
        }
        let shape = self.o.shape();
        let back = |v: Vec<f64>| box_sum(&Tensor5::from_parts(shape, v), r);
        let (gs, gsi, gso, gsii, gsio, gpo) = (back(g_s), back(g_si), back(g_so), back(g_sii), back(g_sio), back(g_plain_o));
        let mut d_i = vec![0.0; len];
        let mut d_o = vec![0.0; len];
        let mut d_q = vec![0.0; len];
        for idx in 0..len {
            let (iv, ov, qv) = (self.i_l.data()[idx], self.o.data()[idx], self.q.data()[idx]);
            let (a_s, a_si, a_so, a_sii, a_sio) = (gs.data()[idx], gsi.data()[idx], gso.data()[idx], gsii.data()[idx], gsio.data()[idx]);
            d_q[idx] = a_s + iv * a_si + ov * a_so + iv * iv * a_sii + iv * ov * a_sio;
            d_i[idx] = qv * (a_si + 2.0 * iv * a_sii + ov * a_sio);
            d_o[idx] = qv * (a_so + iv * a_sio) + gpo.data()[idx];
        }
        (
            Tensor5::from_parts(shape, d_i),
            Tensor5::from_parts(shape, d_o),
            sum_channels(&Tensor5::from_parts(shape, d_q)),
        )
    }
}

/// Per-window ridge solutions `(a_k, b_k)` before covering-window averaging.
pub fn window_coefficients(i_l: &Tensor5, o: &Tensor5, t: &Tensor5, r: usize, eps: f64) -> Result<AgCoefficients> {
    check_fit_inputs(i_l, o, t)?;
    let fit = Fit::new(i_l, o, t, r, eps);
    Ok(AgCoefficients { a: fit.a, b: fit.b })
}

/// Attention-weighted fit followed by averaging over covering windows,
/// giving the low-resolution coefficient maps `(A_l, B_l)`.
pub fn ag_fit(i_l: &Tensor5, o: &Tensor5, t: &Tensor5, r: usize, eps: f64) -> Result<AgCoefficients> {
    check_fit_inputs(i_l, o, t)?;
    if r == 0 {
        return Err(Error::invalid("ag_fit", "radius must be >= 1"));
    }
    if !(eps > 0.0) {
        return Err(Error::invalid("ag_fit", "eps must be positive"));
    }
    Ok(Fit::new(i_l, o, t, r, eps).averaged())
}

#[derive(Clone, Debug)]
pub struct KernelGrads {
    pub kernel: Tensor5,
    pub bias: Option<Vec<f64>>,
}

impl From<ConvGrads> for KernelGrads {
    fn from(g: ConvGrads) -> Self {
        Self {
            kernel: g.kernel,
            bias: g.bias,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AttentionGrads {
    pub filtered: Tensor5,
    pub guide_low: Tensor5,
    pub conv_o: KernelGrads,
    pub conv_i: KernelGrads,
    pub conv_attn: KernelGrads,
}

/// `T = sigmoid(conv_attn(relu(conv_o(O) + conv_i(I_l))))`, one channel.
pub fn attention_map(o: &Tensor5, i_l: &Tensor5, p: &AgParams) -> Result<LayerGrad<AttentionGrads>> {
    if o.shape().spatial() != i_l.shape().spatial() || o.shape().n != i_l.shape().n {
        return Err(Error::ShapeMismatch {
            op: "attention_map",
            left: o.shape(),
            right: i_l.shape(),
        });
    }
    let to = conv3d_forward(o, &p.conv_o)?;
    let ti = conv3d_forward(i_l, &p.conv_i)?;
    let summed = crate::tensor::add(&to.output, &ti.output)?;
    let act = relu(&summed);
    let collapsed = conv3d_forward(&act.output, &p.conv_attn)?;
    let t = sigmoid(&collapsed.output);
    let out = t.output.clone();
    Ok(LayerGrad::new(out, move |dt| {
        let d_collapsed = t.backward(dt);
        let g_attn = collapsed.backward(&d_collapsed);
        let d_sum = act.backward(&g_attn.input);
        let g_o = to.backward(&d_sum);
        let g_i = ti.backward(&d_sum);
        AttentionGrads {
            filtered: g_o.input.clone(),
            guide_low: g_i.input.clone(),
            conv_o: g_o.into(),
            conv_i: g_i.into(),
            conv_attn: g_attn.into(),
        }
    }))
}

#[derive(Clone, Debug)]
pub struct AgGrads {
    /// Gradient w.r.t. the high-resolution guidance `I`.
    pub guide: Tensor5,
    /// Gradient w.r.t. the filtered map `O`.
    pub filtered: Tensor5,
    pub conv_o: KernelGrads,
    pub conv_i: KernelGrads,
    pub conv_attn: KernelGrads,
    pub align: Option<KernelGrads>,
}

/// Full block: guidance `i` at high resolution, filtered map `o` at a
/// resolution that divides `i`'s. Output has `i`'s spatial shape and `o`'s
/// channels.
pub fn ag_forward(i: &Tensor5, o: &Tensor5, p: &AgParams) -> Result<LayerGrad<AgGrads>> {
    let (is, os) = (i.shape(), o.shape());
    if is.n != os.n {
        return Err(Error::ShapeMismatch {
            op: "ag_forward",
            left: is,
            right: os,
        });
    }
    for ax in 0..3 {
        let (hi, lo) = (is.spatial()[ax], os.spatial()[ax]);
        if hi < lo || hi % lo != 0 {
            return Err(Error::invalid(
                "ag_forward",
                format!("guidance extents {:?} are not an integer multiple of {:?}", is.spatial(), os.spatial()),
            ));
        }
    }
    let aligned = match &p.align {
        Some(conv) => Some(conv3d_forward(i, conv)?),
        None => None,
    };
    let guide = aligned.as_ref().map_or_else(|| i.clone(), |lg| lg.output.clone());
    if guide.shape().c != os.c {
        return Err(Error::invalid(
            "ag_forward",
            format!("guidance has {} channels, filtered map {} and no alignment conv", guide.shape().c, os.c),
        ));
    }
    let r = effective_radius(p.radius, os.spatial());
    let i_l = resample_trilinear(&guide, os.spatial())?;
    let att = attention_map(o, &i_l, p)?;
    let fit = Fit::new(&i_l, o, &att.output, r, p.eps);
    let coeffs = fit.averaged();
    let a_h = resample_trilinear(&coeffs.a, is.spatial())?;
    let b_h = resample_trilinear(&coeffs.b, is.spatial())?;
    let out = guide
        .zip_map_unchecked(&a_h, |g, a| a * g)
        .zip_map_unchecked(&b_h, |v, b| v + b);
    let low = os.spatial();
    Ok(LayerGrad::new(out, move |dy| {
        let mut d_guide = dy.zip_map_unchecked(&a_h, |g, a| g * a);
        let d_a_h = dy.zip_map_unchecked(&guide, |g, x| g * x);
        let d_a_l = resample_trilinear_backward(&d_a_h, low);
        let d_b_l = resample_trilinear_backward(dy, low);
        let (mut d_i_l, mut d_o, d_q) = fit.backward(&d_a_l, &d_b_l);
        let d_t = d_q.zip_map_unchecked(&att.output, |g, t| 2.0 * t * g);
        let ga = att.backward(&d_t);
        d_i_l.accumulate(&ga.guide_low);
        d_o.accumulate(&ga.filtered);
        d_guide.accumulate(&resample_trilinear_backward(&d_i_l, guide.shape().spatial()));
        let (d_input, align) = match &aligned {
            Some(lg) => {
                let g = lg.backward(&d_guide);
                (g.input.clone(), Some(g.into()))
            }
            None => (d_guide, None),
        };
        AgGrads {
            guide: d_input,
            filtered: d_o,
            conv_o: ga.conv_o,
            conv_i: ga.conv_i,
            conv_attn: ga.conv_attn,
            align,
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_params(c: usize, radius: usize, eps: f64) -> AgParams {
        let mut rng = Rng::new(0);
        let mut p = AgParams::init(c, c, c, radius, eps, &mut rng).unwrap();
        for conv in [&mut p.conv_o, &mut p.conv_i, &mut p.conv_attn] {
            conv.kernel = conv.kernel.zeros_like();
        }
        p
    }

    #[test]
    fn box_sum_counts() {
        let x = Tensor5::full(Shape5::new(1, 5, 5, 5, 1), 1.0);
        let y = box_sum(&x, 1);
        assert_eq!(y.get(0, 2, 2, 2, 0), 27.0);
        assert_eq!(y.get(0, 0, 0, 0, 0), 8.0);
        assert_eq!(y.get(0, 0, 2, 4, 0), 12.0);
        let big = box_sum(&x, 9);
        assert!(big.data().iter().all(|&v| v == 125.0));
    }

    #[test]
    fn effective_radius_clamps() {
        assert_eq!(effective_radius(16, [32, 32, 32]), 16);
        assert_eq!(effective_radius(16, [4, 8, 8]), 2);
        assert_eq!(effective_radius(3, [1, 8, 8]), 1);
    }

    #[test]
    fn self_guidance_is_identity() {
        let mut rng = Rng::new(3);
        let i = Tensor5::uniform(Shape5::new(1, 6, 6, 6, 2), -1.0, 1.0, &mut rng);
        let t = Tensor5::full(i.shape().with_channels(1), 1.0);
        let c = ag_fit(&i, &i, &t, 2, 1e-12).unwrap();
        assert!(c.a.data().iter().all(|&a| (a - 1.0).abs() < 1e-8));
        assert!(c.b.data().iter().all(|&b| b.abs() < 1e-8));
    }

    #[test]
    fn constant_guidance_gives_zero_slope() {
        let mut rng = Rng::new(4);
        let o = Tensor5::uniform(Shape5::new(1, 5, 5, 5, 1), -1.0, 1.0, &mut rng);
        let i = Tensor5::full(o.shape(), 0.7);
        let t = Tensor5::full(o.shape(), 1.0);
        let w = window_coefficients(&i, &o, &t, 1, 0.01).unwrap();
        let mean = box_sum(&o, 1).zip_map_unchecked(&box_sum(&o.ones_like(), 1), |s, n| s / n);
        for (b, m) in w.b.data().iter().zip(mean.data()) {
            assert!((b - m).abs() < 1e-12);
        }
        let c = ag_fit(&i, &o, &t, 1, 0.01).unwrap();
        assert!(c.a.data().iter().all(|&a| a.abs() < 1e-12));
    }

    #[test]
    fn degenerate_weights_fall_back_to_mean() {
        let mut rng = Rng::new(5);
        let o = Tensor5::uniform(Shape5::new(1, 4, 4, 4, 1), -1.0, 1.0, &mut rng);
        let i = Tensor5::uniform(o.shape(), -1.0, 1.0, &mut rng);
        let t = Tensor5::zeros(o.shape());
        let w = window_coefficients(&i, &o, &t, 1, 0.01).unwrap();
        let mean = box_sum(&o, 1).zip_map_unchecked(&box_sum(&o.ones_like(), 1), |s, n| s / n);
        assert!(w.a.data().iter().all(|&a| a == 0.0));
        assert_eq!(w.b, mean);
    }

    #[test]
    fn zero_weight_attention_is_half() {
        let mut rng = Rng::new(6);
        let p = zero_params(3, 2, 0.01);
        let o = Tensor5::uniform(Shape5::new(1, 4, 4, 4, 3), -1.0, 1.0, &mut rng);
        let i = Tensor5::uniform(o.shape(), -1.0, 1.0, &mut rng);
        let t = attention_map(&o, &i, &p).unwrap().output;
        assert_eq!(t.shape().c, 1);
        assert!(t.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn downsampled_self_guidance_reproduces_guide() {
        let mut rng = Rng::new(7);
        let i = Tensor5::uniform(Shape5::new(1, 8, 8, 8, 2), -1.0, 1.0, &mut rng);
        let o = resample_trilinear(&i, [4, 4, 4]).unwrap();
        let p = zero_params(2, 2, 1e-13);
        let out = ag_forward(&i, &o, &p).unwrap().output;
        let err = out.data().iter().zip(i.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn constant_guide_gives_constant_output() {
        let mut rng = Rng::new(8);
        let i = Tensor5::full(Shape5::new(1, 8, 8, 8, 1), 2.0);
        let o = Tensor5::full(Shape5::new(1, 4, 4, 4, 1), -0.3);
        let p = zero_params(1, 2, 0.01);
        let out = ag_forward(&i, &o, &p).unwrap().output;
        assert!(out.data().iter().all(|&v| (v + 0.3).abs() < 1e-12));
        let o2 = Tensor5::uniform(o.shape(), -1.0, 1.0, &mut rng);
        let out2 = ag_forward(&i, &o2, &p).unwrap().output;
        let n = window_counts(o2.shape(), 2);
        let window_mean = box_sum(&o2, 2).zip_map_unchecked(&n, |s, n| s / n);
        let averaged = box_sum(&window_mean, 2).zip_map_unchecked(&n, |s, n| s / n);
        let up = resample_trilinear(&averaged, [8; 3]).unwrap();
        let err = out2.data().iter().zip(up.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = zero_params(2, 2, 0.01);
        let i = Tensor5::zeros(Shape5::new(1, 6, 6, 6, 2));
        let o = Tensor5::zeros(Shape5::new(1, 4, 4, 4, 2));
        assert!(ag_forward(&i, &o, &p).is_err());
        let i3 = Tensor5::zeros(Shape5::new(1, 8, 8, 8, 3));
        assert!(ag_forward(&i3, &o, &p).is_err());
        let mut rng = Rng::new(1);
        let aligned = AgParams::init(2, 3, 2, 2, 0.01, &mut rng).unwrap();
        assert!(ag_forward(&i3, &o, &aligned).is_ok());
        assert!(AgParams::init(2, 2, 2, 0, 0.01, &mut rng).is_err());
        assert!(AgParams::init(2, 2, 2, 1, 0.0, &mut rng).is_err());
    }
}
