use super::LayerGrad;
use crate::tensor::Tensor5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    /// Softmax across the channel axis of every voxel.
    SoftmaxChannel,
}

pub fn activation(x: &Tensor5, kind: Activation) -> LayerGrad<Tensor5> {
    match kind {
        Activation::Relu => relu(x),
        Activation::Sigmoid => sigmoid(x),
        Activation::SoftmaxChannel => softmax_channel(x),
    }
}

pub fn relu(x: &Tensor5) -> LayerGrad<Tensor5> {
    let y = x.map(|v| v.max(0.0));
    let x = x.clone();
    LayerGrad::new(y, move |dy| x.zip_map_unchecked(dy, |v, g| if v > 0.0 { g } else { 0.0 }))
}

#[inline]
pub(crate) fn sigmoid_scalar(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn sigmoid(x: &Tensor5) -> LayerGrad<Tensor5> {
    let y = x.map(sigmoid_scalar);
    let saved = y.clone();
    LayerGrad::new(y, move |dy| saved.zip_map_unchecked(dy, |s, g| g * s * (1.0 - s)))
}

pub fn softmax_channel(x: &Tensor5) -> LayerGrad<Tensor5> {
    let c = x.shape().c;
    let mut y = Vec::with_capacity(x.shape().len());
    for vox in x.data().chunks_exact(c) {
        let m = vox.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = y.len();
        let mut total = 0.0;
        for &v in vox {
            let e = (v - m).exp();
            total += e;
            y.push(e);
        }
        for e in &mut y[start..] {
            *e /= total;
        }
    }
    let y = Tensor5::from_parts(x.shape(), y);
    let saved = y.clone();
    LayerGrad::new(y, move |dy| softmax_backward(&saved, dy))
}

/// `dx_i = p_i (g_i - sum_j p_j g_j)` per voxel.
pub(crate) fn softmax_backward(p: &Tensor5, dy: &Tensor5) -> Tensor5 {
    let c = p.shape().c;
    let mut dx = Vec::with_capacity(p.shape().len());
    for (pv, gv) in p.data().chunks_exact(c).zip(dy.data().chunks_exact(c)) {
        let inner: f64 = pv.iter().zip(gv).map(|(a, b)| a * b).sum();
        dx.extend(pv.iter().zip(gv).map(|(a, b)| a * (b - inner)));
    }
    Tensor5::from_parts(p.shape(), dx)
}
