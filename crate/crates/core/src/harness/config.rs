//! Flat `key = value` training configuration with `#` comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::ClassWeights;
use crate::net::NetConfig;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd { momentum: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub net: NetConfig,
    pub optimizer: Optimizer,
    pub lr: f64,
    pub lr_decayed: f64,
    /// First step that uses `lr_decayed`.
    pub decay_step: usize,
    pub max_steps: usize,
    pub checkpoint_interval: usize,
    pub seed: u64,
    pub class_weights: ClassWeights,
    pub batch_size: usize,
    /// Patch stride for tiling training and inference volumes.
    pub stride: [usize; 3],
    /// Trailing cases (sorted by id) held out for per-epoch validation.
    pub val_cases: usize,
    /// Voxel spacing for Hausdorff distances.
    pub spacing: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        let net = NetConfig::default();
        Self {
            stride: net.patch,
            net,
            optimizer: Optimizer::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            lr: 1e-4,
            lr_decayed: 3e-5,
            decay_step: 250_000,
            max_steps: 350_000,
            checkpoint_interval: 1000,
            seed: 0,
            class_weights: ClassWeights::default(),
            batch_size: 1,
            val_cases: 0,
            spacing: [1.0; 3],
        }
    }
}

fn list<T: std::str::FromStr, const N: usize>(key: &str, v: &str) -> Result<[T; N]> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(Error::Config(format!("{key}: expected {N} comma-separated values, got {v:?}")));
    }
    let parsed: Vec<T> = parts
        .iter()
        .map(|p| p.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {p:?}"))))
        .collect::<Result<_>>()?;
    parsed
        .try_into()
        .map_err(|_| Error::Config(format!("{key}: wrong arity")))
}

fn scalar<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    /// Parses `text`; keys not present keep their defaults. `stride` defaults
    /// to the patch shape.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            if kv.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {}", n + 1, k.trim())));
            }
        }
        let mut c = Self::default();
        let mut stride = None;
        let (mut beta1, mut beta2, mut adam_eps, mut momentum) = (0.9, 0.999, 1e-8, 0.9);
        let mut optimizer = "adam".to_string();
        for (k, v) in &kv {
            let v = v.as_str();
            match k.as_str() {
                "base_width" => c.net.base_width = scalar(k, v)?,
                "depths" => c.net.depths = scalar(k, v)?,
                "se_reduction" => c.net.se_reduction = scalar(k, v)?,
                "ag_radius" => c.net.ag_radius = scalar(k, v)?,
                "ag_eps" => c.net.ag_eps = scalar(k, v)?,
                "dropout" => c.net.dropout = scalar(k, v)?,
                "norm_eps" => c.net.norm_eps = scalar(k, v)?,
                "patch" => c.net.patch = list(k, v)?,
                "stride" => stride = Some(list(k, v)?),
                "optimizer" => optimizer = v.to_string(),
                "beta1" => beta1 = scalar(k, v)?,
                "beta2" => beta2 = scalar(k, v)?,
                "adam_eps" => adam_eps = scalar(k, v)?,
                "momentum" => momentum = scalar(k, v)?,
                "lr" => c.lr = scalar(k, v)?,
                "lr_decayed" => c.lr_decayed = scalar(k, v)?,
                "decay_step" => c.decay_step = scalar(k, v)?,
                "max_steps" => c.max_steps = scalar(k, v)?,
                "checkpoint_interval" => c.checkpoint_interval = scalar(k, v)?,
                "seed" => c.seed = scalar(k, v)?,
                "class_weights" => c.class_weights = ClassWeights::new(list(k, v)?)?,
                "batch_size" => c.batch_size = scalar(k, v)?,
                "val_cases" => c.val_cases = scalar(k, v)?,
                "spacing" => c.spacing = list(k, v)?,
                other => return Err(Error::Config(format!("unknown key {other:?}"))),
            }
        }
        c.stride = stride.unwrap_or(c.net.patch);
        c.optimizer = match optimizer.as_str() {
            "adam" => Optimizer::Adam {
                beta1,
                beta2,
                eps: adam_eps,
            },
            "sgd" => Optimizer::Sgd { momentum },
            other => return Err(Error::Config(format!("optimizer must be adam or sgd, got {other:?}"))),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0) || !(self.lr_decayed > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.decay_step > self.max_steps {
            return bad(format!("decay_step {} exceeds max_steps {}", self.decay_step, self.max_steps));
        }
        if self.checkpoint_interval == 0 || self.batch_size == 0 {
            return bad("checkpoint_interval and batch_size must be positive".into());
        }
        if (0..3).any(|ax| self.stride[ax] == 0 || self.stride[ax] > self.net.patch[ax]) {
            return bad(format!("stride {:?} must lie in 1..=patch {:?}", self.stride, self.net.patch));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0)) {
            return bad(format!("spacing must be positive, got {:?}", self.spacing));
        }
        match self.optimizer {
            Optimizer::Adam { beta1, beta2, eps } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                    return bad("adam needs beta1, beta2 in [0, 1) and eps > 0".into());
                }
            }
            Optimizer::Sgd { momentum } => {
                if !(0.0..1.0).contains(&momentum) {
                    return bad("momentum must lie in [0, 1)".into());
                }
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.decay_step {
            self.lr
        } else {
            self.lr_decayed
        }
    }

    /// Canonical text form; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let n = &self.net;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("base_width", n.base_width.to_string());
        kv("depths", n.depths.to_string());
        kv("se_reduction", n.se_reduction.to_string());
        kv("ag_radius", n.ag_radius.to_string());
        kv("ag_eps", n.ag_eps.to_string());
        kv("dropout", n.dropout.to_string());
        kv("norm_eps", n.norm_eps.to_string());
        kv("patch", join(&n.patch));
        kv("stride", join(&self.stride));
        match self.optimizer {
            Optimizer::Adam { beta1, beta2, eps } => {
                kv("optimizer", "adam".into());
                kv("beta1", beta1.to_string());
                kv("beta2", beta2.to_string());
                kv("adam_eps", eps.to_string());
            }
            Optimizer::Sgd { momentum } => {
                kv("optimizer", "sgd".into());
                kv("momentum", momentum.to_string());
            }
        }
        kv("lr", self.lr.to_string());
        kv("lr_decayed", self.lr_decayed.to_string());
        kv("decay_step", self.decay_step.to_string());
        kv("max_steps", self.max_steps.to_string());
        kv("checkpoint_interval", self.checkpoint_interval.to_string());
        kv("seed", self.seed.to_string());
        kv("class_weights", join(&self.class_weights.0));
        kv("batch_size", self.batch_size.to_string());
        kv("val_cases", self.val_cases.to_string());
        kv("spacing", join(&self.spacing));
        s
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
