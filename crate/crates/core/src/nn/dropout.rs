use super::LayerGrad;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor5;

/// Inverted dropout: in training each element is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`; inference is the
/// identity. One uniform draw is consumed per element when training with a
/// positive rate.
pub fn dropout(x: &Tensor5, rate: f64, rng: &mut Rng, training: bool) -> Result<LayerGrad<Tensor5>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid("dropout", format!("rate must lie in [0, 1), got {rate}")));
    }
    if !training || rate == 0.0 {
        return Ok(LayerGrad::new(x.clone(), |dy| dy.clone()));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..x.shape().len())
        .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
        .collect();
    let mask = Tensor5::from_parts(x.shape(), mask);
    let y = x.zip_map_unchecked(&mask, |a, m| a * m);
    Ok(LayerGrad::new(y, move |dy| dy.zip_map_unchecked(&mask, |g, m| g * m)))
}
