use super::LayerGrad;
use crate::error::{Error, Result};
use crate::tensor::Tensor5;

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
}

impl InstanceNormParams {
    pub fn new(gamma: Vec<f64>, beta: Vec<f64>, eps: f64) -> Result<Self> {
        if gamma.len() != beta.len() {
            return Err(Error::invalid("instance_norm", "gamma and beta lengths differ"));
        }
        if !(eps > 0.0) {
            return Err(Error::invalid("instance_norm", format!("eps must be positive, got {eps}")));
        }
        Ok(Self { gamma, beta, eps })
    }

    /// gamma = 1, beta = 0.
    pub fn identity(channels: usize, eps: f64) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            eps,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NormGrads {
    pub input: Tensor5,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Normalises every (batch item, channel) over its spatial voxels using the
/// population variance.
///
/// A single-voxel map has no spatial statistics; normalising it would send
/// every input to `beta`. Such maps get only the affine part,
/// `gamma * x + beta`.
pub fn instance_norm(x: &Tensor5, p: &InstanceNormParams) -> Result<LayerGrad<NormGrads>> {
    let s = x.shape();
    let c = s.c;
    if p.gamma.len() != c {
        return Err(Error::invalid(
            "instance_norm",
            format!("{} affine channels for a {c}-channel input", p.gamma.len()),
        ));
    }
    if !(p.eps > 0.0) {
        return Err(Error::invalid("instance_norm", "eps must be positive"));
    }
    let m = s.voxels();
    let mf = m as f64;
    let single = m == 1;
    let mut xhat = vec![0.0; s.len()];
    let mut inv_std = vec![0.0; s.n * c];
    for b in 0..s.n {
        let block = &x.data()[b * m * c..(b + 1) * m * c];
        let mut mean = vec![0.0; c];
        for vox in block.chunks_exact(c) {
            for (a, v) in mean.iter_mut().zip(vox) {
                *a += v;
            }
        }
        mean.iter_mut().for_each(|a| *a = if single { 0.0 } else { *a / mf });
        let mut var = vec![0.0; c];
        for vox in block.chunks_exact(c) {
            for ch in 0..c {
                let d = vox[ch] - mean[ch];
                var[ch] += d * d;
            }
        }
        for ch in 0..c {
            inv_std[b * c + ch] = if single { 1.0 } else { 1.0 / (var[ch] / mf + p.eps).sqrt() };
        }
        let dst = &mut xhat[b * m * c..(b + 1) * m * c];
        for (dv, vox) in dst.chunks_exact_mut(c).zip(block.chunks_exact(c)) {
            for ch in 0..c {
                dv[ch] = (vox[ch] - mean[ch]) * inv_std[b * c + ch];
            }
        }
    }
    let y: Vec<f64> = xhat
        .chunks_exact(c)
        .flat_map(|v| (0..c).map(move |ch| (ch, v[ch])))
        .map(|(ch, v)| p.gamma[ch] * v + p.beta[ch])
        .collect();
    let xhat = Tensor5::from_parts(s, xhat);
    let gamma = p.gamma.clone();
    Ok(LayerGrad::new(Tensor5::from_parts(s, y), move |dy| {
        let mut dx = vec![0.0; s.len()];
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for b in 0..s.n {
            let range = b * m * c..(b + 1) * m * c;
            let g = &dy.data()[range.clone()];
            let xh = &xhat.data()[range.clone()];
            let mut sum_g = vec![0.0; c];
            let mut sum_gx = vec![0.0; c];
            for (gv, xv) in g.chunks_exact(c).zip(xh.chunks_exact(c)) {
                for ch in 0..c {
                    sum_g[ch] += gv[ch];
                    sum_gx[ch] += gv[ch] * xv[ch];
                }
            }
            for ch in 0..c {
                dgamma[ch] += sum_gx[ch];
                dbeta[ch] += sum_g[ch];
            }
            let dst = &mut dx[range];
            for ((dv, gv), xv) in dst.chunks_exact_mut(c).zip(g.chunks_exact(c)).zip(xh.chunks_exact(c)) {
                for ch in 0..c {
                    let scale = gamma[ch] * inv_std[b * c + ch];
                    dv[ch] = if single {
                        scale * gv[ch]
                    } else {
                        scale * (gv[ch] - sum_g[ch] / mf - xv[ch] * sum_gx[ch] / mf)
                    };
                }
            }
        }
        NormGrads {
            input: Tensor5::from_parts(s, dx),
            gamma: dgamma,
            beta: dbeta,
        }
    }))
}
