//! Squeeze-and-excitation channel recalibration.
//!
//! `z = mean_spatial(u)`, `s = sigmoid(fc2(relu(fc1(z))))`, `out = s * u`
//! with the gate broadcast over every voxel of its channel.

use crate::error::{Error, Result};
use crate::nn::{dense, relu, sigmoid, DenseParams, LayerGrad};
use crate::rng::Rng;
use crate::tensor::{reduce_mean_spatial, reduce_mean_spatial_backward, Shape5, Tensor5};

#[derive(Clone, Debug, PartialEq)]
pub struct SeParams {
    pub reduction: usize,
    pub fc1: DenseParams,
    pub fc2: DenseParams,
}

/// Reduction actually used for `channels`: `m` clamped to the channel count.
pub fn effective_reduction(channels: usize, m: usize) -> usize {
    m.min(channels).max(1)
}

impl SeParams {
    pub fn new(reduction: usize, fc1: DenseParams, fc2: DenseParams) -> Result<Self> {
        let c = fc1.in_width();
        if reduction == 0 || c % reduction != 0 {
            return Err(Error::invalid(
                "se_block",
                format!("{c} channels not divisible by reduction {reduction}"),
            ));
        }
        let hidden = c / reduction;
        if fc1.out_width() != hidden || fc2.in_width() != hidden || fc2.out_width() != c {
            return Err(Error::invalid(
                "se_block",
                format!(
                    "gate widths {}->{}->{}->{} do not match c={c}, c/m={hidden}",
                    fc1.in_width(),
                    fc1.out_width(),
                    fc2.in_width(),
                    fc2.out_width()
                ),
            ));
        }
        Ok(Self { reduction, fc1, fc2 })
    }

    /// He-normal gates for `channels` with reduction `m` (clamped to the
    /// channel count).
    pub fn init(channels: usize, m: usize, rng: &mut Rng) -> Result<Self> {
        let m = effective_reduction(channels, m);
        if channels % m != 0 {
            return Err(Error::invalid(
                "se_block",
                format!("{channels} channels not divisible by reduction {m}"),
            ));
        }
        let hidden = channels / m;
        let fc1 = DenseParams::init(channels, hidden, rng);
        let fc2 = DenseParams::init(hidden, channels, rng);
        Self::new(m, fc1, fc2)
    }

    pub fn channels(&self) -> usize {
        self.fc1.in_width()
    }
}

#[derive(Clone, Debug)]
pub struct SeGrads {
    pub input: Tensor5,
    pub fc1_weight: Tensor5,
    pub fc1_bias: Vec<f64>,
    pub fc2_weight: Tensor5,
    pub fc2_bias: Vec<f64>,
}

/// Gate values `s`, shape `(n, 1, 1, 1, c)`.
pub fn se_gates(u: &Tensor5, p: &SeParams) -> Result<Tensor5> {
    Ok(gate_chain(u, p)?.3.output)
}

#[allow(clippy::type_complexity)]
fn gate_chain(
    u: &Tensor5,
    p: &SeParams,
) -> Result<(
    LayerGrad<crate::nn::DenseGrads>,
    LayerGrad<Tensor5>,
    LayerGrad<crate::nn::DenseGrads>,
    LayerGrad<Tensor5>,
)> {
    let c = u.shape().c;
    if c != p.channels() {
        return Err(Error::invalid(
            "se_block",
            format!("input has {c} channels, gate expects {}", p.channels()),
        ));
    }
    if c % p.reduction != 0 {
        return Err(Error::invalid(
            "se_block",
            format!("{c} channels not divisible by reduction {}", p.reduction),
        ));
    }
    let z = reduce_mean_spatial(u);
    let h1 = dense(&z, &p.fc1)?;
    let a1 = relu(&h1.output);
    let h2 = dense(&a1.output, &p.fc2)?;
    let s = sigmoid(&h2.output);
    Ok((h1, a1, h2, s))
}

fn scale_channels(u: &Tensor5, s: &Tensor5) -> Tensor5 {
    let sh = u.shape();
    let per = sh.voxels() * sh.c;
    let mut out = Vec::with_capacity(sh.len());
    for b in 0..sh.n {
        let gates = &s.data()[b * sh.c..(b + 1) * sh.c];
        for vox in u.data()[b * per..(b + 1) * per].chunks_exact(sh.c) {
            out.extend(vox.iter().zip(gates).map(|(x, g)| x * g));
        }
    }
    Tensor5::from_parts(sh, out)
}

pub fn se_forward(u: &Tensor5, p: &SeParams) -> Result<LayerGrad<SeGrads>> {
    let (h1, a1, h2, s) = gate_chain(u, p)?;
    let out = scale_channels(u, &s.output);
    let u = u.clone();
    Ok(LayerGrad::new(out, move |dy| {
        let sh = u.shape();
        let gates = &s.output;
        let mut du = scale_channels(dy, gates);
        // d s[b, ch] = sum over voxels of dy * u
        let mut ds = vec![0.0; sh.n * sh.c];
        let per = sh.voxels() * sh.c;
        for b in 0..sh.n {
            let acc = &mut ds[b * sh.c..(b + 1) * sh.c];
            let range = b * per..(b + 1) * per;
            for (gv, uv) in dy.data()[range.clone()].chunks_exact(sh.c).zip(u.data()[range].chunks_exact(sh.c)) {
                for ch in 0..sh.c {
                    acc[ch] += gv[ch] * uv[ch];
                }
            }
        }
        let ds = Tensor5::from_parts(Shape5::new(sh.n, 1, 1, 1, sh.c), ds);
        let dh2 = s.backward(&ds);
        let g2 = h2.backward(&dh2);
        let dh1 = a1.backward(&g2.input);
        let g1 = h1.backward(&dh1);
        du.accumulate(&reduce_mean_spatial_backward(&g1.input, sh));
        SeGrads {
            input: du,
            fc1_weight: g1.weight,
            fc1_bias: g1.bias,
            fc2_weight: g2.weight,
            fc2_bias: g2.bias,
        }
    }))
}
