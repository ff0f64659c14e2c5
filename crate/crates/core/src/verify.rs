//! Finite-difference gradient checking and brute-force reference
//! implementations.
//!
//! The references here are deliberately naive: explicit loops straight from
//! the defining formulas, sharing no code with the fast paths they check.

use crate::tensor::{Shape5, Tensor5};

/// Central-difference step for a coordinate of magnitude `x`.
pub fn fd_step(x: f64) -> f64 {
    1e-5 * x.abs().max(1.0)
}

/// Central differences of `f` at `x` along the coordinates `indices`.
pub fn central_differences(f: impl FnMut(&[f64]) -> f64, x: &[f64], indices: &[usize]) -> Vec<f64> {
    central_differences_scaled(f, x, indices, 1.0)
}

/// As [`central_differences`] with the step multiplied by `scale`.
pub fn central_differences_scaled(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], indices: &[usize], scale: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    indices
        .iter()
        .map(|&idx| {
            let h = scale * fd_step(x[idx]);
            probe[idx] = x[idx] + h;
            let up = f(&probe);
            probe[idx] = x[idx] - h;
            let down = f(&probe);
            probe[idx] = x[idx];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max_i |a_i - n_i| / max_i max(|a_i|, |n_i|)`; zero when both vanish.
///
/// Normalising by the largest gradient entry keeps entries whose true
/// derivative is ~0 from dominating through finite-difference round-off.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    diff / scale
}

/// Up to `count` distinct indices in `0..len`, evenly strided with a seeded
/// offset, covering everything when `len <= count`.
pub fn sample_indices(len: usize, count: usize, rng: &mut crate::Rng) -> Vec<usize> {
    if len <= count {
        return (0..len).collect();
    }
    let mut all: Vec<usize> = (0..len).collect();
    rng.shuffle(&mut all);
    all.truncate(count);
    all.sort_unstable();
    all
}

pub mod oracles {
    use super::*;

    /// Direct six-loop cross-correlation with zero padding.
    pub fn conv3d(x: &Tensor5, kernel: &Tensor5, bias: Option<&[f64]>, stride: [usize; 3], pad: [usize; 3]) -> Tensor5 {
        let xs = x.shape();
        let ks = kernel.shape();
        let k = [ks.n, ks.z, ks.h];
        let out = |ax: usize, i: usize| (i + 2 * pad[ax] - k[ax]) / stride[ax] + 1;
        let dst = [out(0, xs.z), out(1, xs.h), out(2, xs.w)];
        Tensor5::from_fn(Shape5::new(xs.n, dst[0], dst[1], dst[2], ks.c), |b, oz, oy, ox, co| {
            let mut acc = bias.map_or(0.0, |bb| bb[co]);
            for kz in 0..k[0] {
                for ky in 0..k[1] {
                    for kx in 0..k[2] {
                        let iz = (oz * stride[0] + kz) as isize - pad[0] as isize;
                        let iy = (oy * stride[1] + ky) as isize - pad[1] as isize;
                        let ix = (ox * stride[2] + kx) as isize - pad[2] as isize;
                        if iz < 0 || iy < 0 || ix < 0 || iz >= xs.z as isize || iy >= xs.h as isize || ix >= xs.w as isize {
                            continue;
                        }
                        for ci in 0..xs.c {
                            acc += x.get(b, iz as usize, iy as usize, ix as usize, ci) * kernel.get(kz, ky, kx, ci, co);
                        }
                    }
                }
            }
            acc
        })
    }

    /// Windowed sum by visiting every voxel of every clipped window.
    pub fn window_sum(x: &Tensor5, r: usize) -> Tensor5 {
        let s = x.shape();
        let r = r as isize;
        Tensor5::from_fn(s, |b, k, i, j, ch| {
            let mut acc = 0.0;
            for dz in -r..=r {
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (z, y, xx) = (k as isize + dz, i as isize + dy, j as isize + dx);
                        if z < 0 || y < 0 || xx < 0 || z >= s.z as isize || y >= s.h as isize || xx >= s.w as isize {
                            continue;
                        }
                        acc += x.get(b, z as usize, y as usize, xx as usize, ch);
                    }
                }
            }
            acc
        })
    }

    fn window(center: [usize; 3], r: usize, extent: [usize; 3]) -> impl Iterator<Item = [usize; 3]> {
        let lo = |ax: usize| center[ax].saturating_sub(r);
        let hi = |ax: usize| (center[ax] + r + 1).min(extent[ax]);
        let (z0, z1, y0, y1, x0, x1) = (lo(0), hi(0), lo(1), hi(1), lo(2), hi(2));
        (z0..z1).flat_map(move |z| (y0..y1).flat_map(move |y| (x0..x1).map(move |x| [z, y, x])))
    }

    /// Per-window minimiser of `sum q (a I + b - O)^2 + eps N a^2` from the
    /// 2x2 normal equations, solved by Cramer's rule. Returns `(a, b)`
    /// tensors shaped like `o`.
    pub fn window_normal_equations(i_l: &Tensor5, o: &Tensor5, t: &Tensor5, r: usize, eps: f64) -> (Tensor5, Tensor5) {
        let s = o.shape();
        let ext = s.spatial();
        let mut a = vec![0.0; s.len()];
        let mut bcoef = vec![0.0; s.len()];
        for b in 0..s.n {
            for k in 0..s.z {
                for i in 0..s.h {
                    for j in 0..s.w {
                        for ch in 0..s.c {
                            let (mut sq, mut sqi, mut sqo, mut sqii, mut sqio, mut n, mut so) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                            for [z, y, x] in window([k, i, j], r, ext) {
                                let q = t.get(b, z, y, x, 0).powi(2);
                                let iv = i_l.get(b, z, y, x, ch);
                                let ov = o.get(b, z, y, x, ch);
                                sq += q;
                                sqi += q * iv;
                                sqo += q * ov;
                                sqii += q * iv * iv;
                                sqio += q * iv * ov;
                                so += ov;
                                n += 1.0;
                            }
                            let idx = s.offset(b, k, i, j, ch);
                            if sq < crate::ag::DEGENERATE_WEIGHT {
                                a[idx] = 0.0;
                                bcoef[idx] = so / n;
                                continue;
                            }
                            // [sqii + eps n, sqi; sqi, sq] [a; b] = [sqio; sqo]
                            let m00 = sqii + eps * n;
                            let det = m00 * sq - sqi * sqi;
                            a[idx] = (sqio * sq - sqi * sqo) / det;
                            bcoef[idx] = (m00 * sqo - sqi * sqio) / det;
                        }
                    }
                }
            }
        }
        (Tensor5::from_parts(s, a), Tensor5::from_parts(s, bcoef))
    }

    /// Mean of `coef` over every window that covers each voxel.
    pub fn covering_average(coef: &Tensor5, r: usize) -> Tensor5 {
        let s = coef.shape();
        let ext = s.spatial();
        Tensor5::from_fn(s, |b, k, i, j, ch| {
            // windows w_c containing (k,i,j) are exactly those centred within r
            let mut acc = 0.0;
            let mut n = 0.0;
            for [z, y, x] in window([k, i, j], r, ext) {
                acc += coef.get(b, z, y, x, ch);
                n += 1.0;
            }
            acc / n
        })
    }

    /// Classical (unweighted) guided filter coefficients built from box means,
    /// averaged over covering windows.
    pub fn unweighted_guided_filter(i_l: &Tensor5, o: &Tensor5, r: usize, eps: f64) -> (Tensor5, Tensor5) {
        use crate::ag::box_sum;
        let n = box_sum(&o.ones_like(), r);
        let mean = |t: &Tensor5| box_sum(t, r).zip_map(&n, |s, c| s / c).unwrap();
        let mean_i = mean(i_l);
        let mean_o = mean(o);
        let corr_io = mean(&i_l.zip_map(o, |a, b| a * b).unwrap());
        let corr_ii = mean(&i_l.zip_map(i_l, |a, b| a * b).unwrap());
        let s = o.shape();
        let mut a = vec![0.0; s.len()];
        let mut b = vec![0.0; s.len()];
        for idx in 0..s.len() {
            let (mi, mo) = (mean_i.data()[idx], mean_o.data()[idx]);
            let var = corr_ii.data()[idx] - mi * mi;
            let cov = corr_io.data()[idx] - mi * mo;
            a[idx] = cov / (var + eps);
            b[idx] = mo - a[idx] * mi;
        }
        (
            mean(&Tensor5::from_parts(s, a)),
            mean(&Tensor5::from_parts(s, b)),
        )
    }

    fn sigmoid(v: f64) -> f64 {
        1.0 / (1.0 + (-v).exp())
    }

    /// Squeeze-and-excitation written out per sample with plain arrays.
    pub fn se_block(u: &Tensor5, w1: &Tensor5, b1: &[f64], w2: &Tensor5, b2: &[f64]) -> Tensor5 {
        let s = u.shape();
        let hidden = b1.len();
        let mut gates = vec![vec![0.0; s.c]; s.n];
        for (b, gate) in gates.iter_mut().enumerate() {
            let mut z = vec![0.0; s.c];
            for (ch, zc) in z.iter_mut().enumerate() {
                let mut acc = 0.0;
                for k in 0..s.z {
                    for i in 0..s.h {
                        for j in 0..s.w {
                            acc += u.get(b, k, i, j, ch);
                        }
                    }
                }
                *zc = acc / (s.z * s.h * s.w) as f64;
            }
            let mut h = vec![0.0; hidden];
            for (m, hm) in h.iter_mut().enumerate() {
                let mut acc = b1[m];
                for (ch, zc) in z.iter().enumerate() {
                    acc += zc * w1.get(0, 0, 0, ch, m);
                }
                *hm = acc.max(0.0);
            }
            for (ch, g) in gate.iter_mut().enumerate() {
                let mut acc = b2[ch];
                for (m, hm) in h.iter().enumerate() {
                    acc += hm * w2.get(0, 0, 0, m, ch);
                }
                *g = sigmoid(acc);
            }
        }
        Tensor5::from_fn(s, |b, k, i, j, ch| gates[b][ch] * u.get(b, k, i, j, ch))
    }

    /// Attention map from pointwise transforms, per voxel.
    #[allow(clippy::too_many_arguments)]
    pub fn attention_map(
        o: &Tensor5,
        i_l: &Tensor5,
        wo: &Tensor5,
        bo: &[f64],
        wi: &Tensor5,
        bi: &[f64],
        wa: &Tensor5,
        ba: f64,
    ) -> Tensor5 {
        let s = o.shape();
        let inter = bo.len();
        Tensor5::from_fn(s.with_channels(1), |b, k, i, j, _| {
            let mut acc = ba;
            for m in 0..inter {
                let mut h = bo[m] + bi[m];
                for ch in 0..s.c {
                    h += o.get(b, k, i, j, ch) * wo.get(0, 0, 0, ch, m);
                    h += i_l.get(b, k, i, j, ch) * wi.get(0, 0, 0, ch, m);
                }
                acc += h.max(0.0) * wa.get(0, 0, 0, m, 0);
            }
            sigmoid(acc)
        })
    }

    /// Exact Euclidean distances between every pair of surface voxels; returns
    /// `(hd95 over pooled directed distances, hd100)`.
    pub fn hausdorff_all_pairs(pred: &[[usize; 3]], truth: &[[usize; 3]], spacing: [f64; 3]) -> (f64, f64) {
        let dist = |a: [usize; 3], b: [usize; 3]| {
            (0..3)
                .map(|ax| ((a[ax] as f64 - b[ax] as f64) * spacing[ax]).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let directed = |from: &[[usize; 3]], to: &[[usize; 3]]| -> Vec<f64> {
            from.iter()
                .map(|&p| to.iter().map(|&q| dist(p, q)).fold(f64::INFINITY, f64::min))
                .collect()
        };
        let mut pooled = directed(pred, truth);
        pooled.extend(directed(truth, pred));
        pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pos = 0.95 * (pooled.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let p95 = pooled[lo] + (pooled[hi] - pooled[lo]) * (pos - lo as f64);
        (p95, *pooled.last().unwrap())
    }
}
