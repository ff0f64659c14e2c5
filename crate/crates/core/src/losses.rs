//! Weighted soft Dice loss with a squared denominator.
//!
//! Per class `D_c = 2 sum(p g) / (sum(p^2) + sum(g^2) + s)` over every voxel
//! of channel `c` across the batch, and `loss = -sum_c w_c D_c / sum_c w_c`.

use crate::error::{Error, Result};
use crate::nn::softmax_channel;
use crate::tensor::Tensor5;

/// Smoothing added to each class denominator.
pub const DICE_SMOOTH: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassWeights(pub [f64; 4]);

impl ClassWeights {
    pub fn new(w: [f64; 4]) -> Result<Self> {
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || w.iter().all(|&v| v == 0.0) {
            return Err(Error::invalid(
                "class_weights",
                format!("weights must be finite, non-negative and not all zero: {w:?}"),
            ));
        }
        Ok(Self(w))
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl Default for ClassWeights {
    fn default() -> Self {
        Self([0.1, 1.0, 1.0, 1.0])
    }
}

/// Every voxel of `g` must be a 0/1 vector summing to 1.
pub fn check_one_hot(g: &Tensor5) -> Result<()> {
    let c = g.shape().c;
    for (vox, row) in g.data().chunks_exact(c).enumerate() {
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || zeros != c - 1 {
            return Err(Error::invalid(
                "soft_dice",
                format!("target is not one-hot at voxel {vox}: {row:?}"),
            ));
        }
    }
    Ok(())
}

/// Per-class sums `(sum p g, sum p^2, sum g^2)`.
#[derive(Clone, Debug, PartialEq)]
struct DiceSums {
    inter: Vec<f64>,
    p2: Vec<f64>,
    g2: Vec<f64>,
}

fn dice_sums(p: &Tensor5, g: &Tensor5) -> Result<DiceSums> {
    p.check_same_shape("soft_dice", g)?;
    if p.shape().c != 4 {
        return Err(Error::invalid("soft_dice", format!("expected 4 class channels, got {}", p.shape().c)));
    }
    check_one_hot(g)?;
    let c = p.shape().c;
    let mut s = DiceSums {
        inter: vec![0.0; c],
        p2: vec![0.0; c],
        g2: vec![0.0; c],
    };
    for (pr, gr) in p.data().chunks_exact(c).zip(g.data().chunks_exact(c)) {
        for ch in 0..c {
            s.inter[ch] += pr[ch] * gr[ch];
            s.p2[ch] += pr[ch] * pr[ch];
            s.g2[ch] += gr[ch] * gr[ch];
        }
    }
    Ok(s)
}

pub fn soft_dice_per_class(p: &Tensor5, g: &Tensor5) -> Result<[f64; 4]> {
    let s = dice_sums(p, g)?;
    Ok(std::array::from_fn(|c| 2.0 * s.inter[c] / (s.p2[c] + s.g2[c] + DICE_SMOOTH)))
}

/// Loss and its closed-form gradient w.r.t. the probabilities:
/// `dD_c/dp_j = 2 (g_j U - 2 p_j I) / U^2` with `U` the smoothed denominator.
pub fn dice_loss(p: &Tensor5, g: &Tensor5, w: &ClassWeights) -> Result<(f64, Tensor5)> {
    let s = dice_sums(p, g)?;
    let total = w.total();
    let mut loss = 0.0;
    let mut coef_g = [0.0; 4];
    let mut coef_p = [0.0; 4];
    for c in 0..4 {
        let u = s.p2[c] + s.g2[c] + DICE_SMOOTH;
        loss -= w.0[c] * 2.0 * s.inter[c] / u;
        let scale = -w.0[c] / total;
        coef_g[c] = scale * 2.0 / u;
        coef_p[c] = scale * -4.0 * s.inter[c] / (u * u);
    }
    let mut grad = vec![0.0; p.data().len()];
    for ((gr, pr), gt) in grad.chunks_exact_mut(4).zip(p.data().chunks_exact(4)).zip(g.data().chunks_exact(4)) {
        for c in 0..4 {
            gr[c] = coef_g[c] * gt[c] + coef_p[c] * pr[c];
        }
    }
    Ok((loss / total, Tensor5::from_vec(p.shape(), grad)?))
}

/// Same loss differentiated by reverse accumulation through the primitive
/// steps (products, sums, quotient, weighting) rather than the closed form.
pub fn dice_loss_composed(p: &Tensor5, g: &Tensor5, w: &ClassWeights) -> Result<(f64, Tensor5)> {
    let s = dice_sums(p, g)?;
    let total = w.total();
    // forward: U = P2 + G2 + s, N = 2 I, D = N / U, L = -sum w D / W
    let u: Vec<f64> = (0..4).map(|c| s.p2[c] + s.g2[c] + DICE_SMOOTH).collect();
    let n: Vec<f64> = s.inter.iter().map(|i| 2.0 * i).collect();
    let d: Vec<f64> = (0..4).map(|c| n[c] / u[c]).collect();
    let loss = -(0..4).map(|c| w.0[c] * d[c]).sum::<f64>() / total;
    // backward
    let mut d_inter = [0.0; 4];
    let mut d_p2 = [0.0; 4];
    for c in 0..4 {
        let d_d = -w.0[c] / total;
        let d_n = d_d / u[c];
        let d_u = -d_d * d[c] / u[c];
        d_inter[c] = 2.0 * d_n;
        d_p2[c] = d_u;
    }
    let mut grad = p.zeros_like();
    {
        let out = grad.data_mut();
        for (idx, (pv, gv)) in p.data().iter().zip(g.data()).enumerate() {
            let c = idx % 4;
            out[idx] += gv * d_inter[c];
            out[idx] += 2.0 * pv * d_p2[c];
        }
    }
    Ok((loss, grad))
}

/// Loss on softmax probabilities of `logits`, with the gradient w.r.t. the
/// logits.
pub fn dice_loss_logits(logits: &Tensor5, g: &Tensor5, w: &ClassWeights) -> Result<(f64, Tensor5)> {
    let sm = softmax_channel(logits);
    let (loss, dp) = dice_loss(&sm.output, g, w)?;
    Ok((loss, sm.backward(&dp)))
}
