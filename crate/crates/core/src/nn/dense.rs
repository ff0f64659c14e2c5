use super::LayerGrad;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Shape5, Tensor5};

/// Fully connected layer `y = x W + b` applied to the channel vector of every
/// voxel. The weight is stored as a `(1, 1, 1, c_in, c_out)` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams {
    pub weight: Tensor5,
    pub bias: Vec<f64>,
}

impl DenseParams {
    pub fn new(weight: Tensor5, bias: Vec<f64>) -> Result<Self> {
        let s = weight.shape();
        if (s.n, s.z, s.h) != (1, 1, 1) {
            return Err(Error::invalid("DenseParams", format!("weight must be (1,1,1,in,out), got {s}")));
        }
        if bias.len() != s.c {
            return Err(Error::invalid(
                "DenseParams",
                format!("bias has {} entries for {} outputs", bias.len(), s.c),
            ));
        }
        if !weight.all_finite() || bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("DenseParams", "non-finite entries"));
        }
        Ok(Self { weight, bias })
    }

    pub fn init(c_in: usize, c_out: usize, rng: &mut Rng) -> Self {
        Self {
            weight: super::he_normal(Shape5::new(1, 1, 1, c_in, c_out), c_in, rng),
            bias: vec![0.0; c_out],
        }
    }

    pub fn in_width(&self) -> usize {
        self.weight.shape().w
    }

    pub fn out_width(&self) -> usize {
        self.weight.shape().c
    }
}

#[derive(Clone, Debug)]
pub struct DenseGrads {
    pub input: Tensor5,
    pub weight: Tensor5,
    pub bias: Vec<f64>,
}

pub fn dense(x: &Tensor5, p: &DenseParams) -> Result<LayerGrad<DenseGrads>> {
    let (cin, cout) = (p.in_width(), p.out_width());
    if x.shape().c != cin {
        return Err(Error::invalid(
            "dense",
            format!("input width {} does not match weight width {cin}", x.shape().c),
        ));
    }
    let w = p.weight.clone();
    let mut y = Vec::with_capacity(x.shape().len() / cin * cout);
    for xv in x.data().chunks_exact(cin) {
        for co in 0..cout {
            let mut acc = p.bias[co];
            for ci in 0..cin {
                acc += xv[ci] * w.data()[ci * cout + co];
            }
            y.push(acc);
        }
    }
    let out = Tensor5::from_parts(x.shape().with_channels(cout), y);
    let x = x.clone();
    Ok(LayerGrad::new(out, move |dy| {
        let wd = w.data();
        let mut dx = Vec::with_capacity(x.shape().len());
        let mut dw = vec![0.0; cin * cout];
        let mut db = vec![0.0; cout];
        for (xv, gv) in x.data().chunks_exact(cin).zip(dy.data().chunks_exact(cout)) {
            for ci in 0..cin {
                let mut acc = 0.0;
                for co in 0..cout {
                    acc += gv[co] * wd[ci * cout + co];
                    dw[ci * cout + co] += xv[ci] * gv[co];
                }
                dx.push(acc);
            }
            for (b, g) in db.iter_mut().zip(gv) {
                *b += g;
            }
        }
        DenseGrads {
            input: Tensor5::from_parts(x.shape(), dx),
            weight: Tensor5::from_parts(w.shape(), dw),
            bias: db,
        }
    }))
}
