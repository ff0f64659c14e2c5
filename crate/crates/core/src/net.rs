//! Encoder/decoder segmentation network.
//!
//! Five encoders with squeeze-and-excitation (the first four end in a strided
//! downsampling conv), four decoders that upsample, fuse the matching skip
//! through an attention guided filter, then refine with residual convs, and a
//! 1x1x1 head with a channel softmax.
//!
//! Parameters live in a flat [`NetParams`] map keyed by stable names such as
//! `enc2.conv1.kernel` or `dec3.ag.conv_attn.bias`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::ag::{ag_forward, AgGrads, AgParams};
use crate::data::{channel_to_label, SegVolume, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::nn::{
    conv3d_forward, deconv3d_forward, dropout, instance_norm, relu, softmax_channel, Conv3dParams, ConvGrads,
    Deconv3dParams, DenseParams, InstanceNormParams, LayerGrad, NormGrads,
};
use crate::npy;
use crate::rng::Rng;
use crate::se::{effective_reduction, se_forward, SeGrads, SeParams};
use crate::tensor::{add, Shape5, Tensor5};

pub const ENCODERS: usize = 5;
pub const DECODERS: usize = 4;

pub type NetParams = BTreeMap<String, Tensor5>;

#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub base_width: usize,
    /// Convs per encoder and decoder block.
    pub depths: usize,
    pub se_reduction: usize,
    pub ag_radius: usize,
    pub ag_eps: f64,
    pub dropout: f64,
    pub norm_eps: f64,
    pub patch: [usize; 3],
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            in_channels: 4,
            num_classes: NUM_CLASSES,
            base_width: 16,
            depths: 2,
            se_reduction: 4,
            ag_radius: 16,
            ag_eps: 1e-2,
            dropout: 0.5,
            norm_eps: 1e-5,
            patch: [64, 128, 128],
        }
    }
}

impl NetConfig {
    pub fn width(&self, level: usize) -> usize {
        self.base_width << (level - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.in_channels != 4 {
            return bad(format!("in_channels must be 4, got {}", self.in_channels));
        }
        if self.num_classes != NUM_CLASSES {
            return bad(format!("num_classes must be 4, got {}", self.num_classes));
        }
        if self.base_width == 0 || self.depths == 0 {
            return bad("base_width and depths must be positive".into());
        }
        if self.patch.iter().any(|&e| e == 0 || e % 16 != 0) {
            return bad(format!("patch {:?} must be positive multiples of 16", self.patch));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.ag_radius == 0 || !(self.ag_eps > 0.0) || !(self.norm_eps > 0.0) {
            return bad("ag_radius, ag_eps and norm_eps must be positive".into());
        }
        if self.se_reduction == 0 {
            return bad("se_reduction must be positive".into());
        }
        for e in 1..=ENCODERS {
            let c = self.width(e);
            let m = effective_reduction(c, self.se_reduction);
            if c % m != 0 {
                return bad(format!("encoder {e}: {c} channels not divisible by se_reduction {m}"));
            }
        }
        Ok(())
    }
}

const HEAD_INIT_STD: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    He(usize),
    /// He-normal magnitudes, for layers fed only non-negative inputs.
    HeAbs(usize),
    Normal(f64),
    Zeros,
    Ones,
}

/// Every parameter in initialisation order.
fn layout(cfg: &NetConfig) -> Vec<(String, Shape5, Init)> {
    let mut out = Vec::new();
    let k3 = |cin, cout| Shape5::new(3, 3, 3, cin, cout);
    let vec_shape = |c| Shape5::new(1, 1, 1, 1, c);
    let conv_norm = |out: &mut Vec<_>, prefix: String, cin: usize, cout: usize| {
        out.push((format!("{prefix}.kernel"), k3(cin, cout), Init::He(27 * cin)));
        out.push((format!("{prefix}.gamma"), vec_shape(cout), Init::Ones));
        out.push((format!("{prefix}.beta"), vec_shape(cout), Init::Zeros));
    };
    for e in 1..=ENCODERS {
        let c = cfg.width(e);
        let cin = if e == 1 { cfg.in_channels } else { c };
        for d in 0..cfg.depths {
            conv_norm(&mut out, format!("enc{e}.conv{d}"), if d == 0 { cin } else { c }, c);
        }
        let hidden = c / effective_reduction(c, cfg.se_reduction);
        // the squeeze sees post-relu features, so non-negative fc1 weights
        // start every hidden unit active
        for (name, a, b, init) in [("fc1", c, hidden, Init::HeAbs(c)), ("fc2", hidden, c, Init::He(hidden))] {
            out.push((format!("enc{e}.se.{name}.weight"), Shape5::new(1, 1, 1, a, b), init));
            out.push((format!("enc{e}.se.{name}.bias"), vec_shape(b), Init::Zeros));
        }
        if e < ENCODERS {
            conv_norm(&mut out, format!("enc{e}.down"), c, 2 * c);
        }
    }
    for l in (1..=DECODERS).rev() {
        let c = cfg.width(l);
        conv_norm(&mut out, format!("dec{l}.up"), 2 * c, c);
        for (name, cin, cout) in [("conv_o", c, c), ("conv_i", c, c), ("conv_attn", c, 1)] {
            out.push((format!("dec{l}.ag.{name}.kernel"), Shape5::new(1, 1, 1, cin, cout), Init::He(cin)));
            out.push((format!("dec{l}.ag.{name}.bias"), vec_shape(cout), Init::Zeros));
        }
        for d in 0..cfg.depths {
            conv_norm(&mut out, format!("dec{l}.conv{d}"), c, c);
        }
    }
    let c1 = cfg.width(1);
    // small head weights keep the initial softmax near uniform; He scale on
    // non-negative features gives each class a large constant logit offset
    out.push(("head.kernel".into(), Shape5::new(1, 1, 1, c1, cfg.num_classes), Init::Normal(HEAD_INIT_STD)));
    out.push(("head.bias".into(), vec_shape(cfg.num_classes), Init::Zeros));
    out
}

/// Expected shape of every parameter.
pub fn param_shapes(cfg: &NetConfig) -> BTreeMap<String, Shape5> {
    layout(cfg).into_iter().map(|(n, s, _)| (n, s)).collect()
}

pub fn param_count(params: &NetParams) -> usize {
    params.values().map(|t| t.shape().len()).sum()
}

/// Deterministic initialisation: convolution and dense weights draw He-normal
/// values from `rng` in a fixed order, the head draws small normal values, norm
/// scales start at 1, biases and shifts at 0.
pub fn build(cfg: &NetConfig, rng: &mut Rng) -> Result<NetParams> {
    cfg.validate()?;
    Ok(layout(cfg)
        .into_iter()
        .map(|(name, shape, init)| {
            let t = match init {
                Init::He(fan_in) => crate::nn::he_normal(shape, fan_in, rng),
                Init::HeAbs(fan_in) => crate::nn::he_normal(shape, fan_in, rng).map(f64::abs),
                Init::Normal(std) => Tensor5::normal(shape, std, rng),
                Init::Zeros => Tensor5::zeros(shape),
                Init::Ones => Tensor5::full(shape, 1.0),
            };
            (name, t)
        })
        .collect())
}

/// Checks that `params` holds exactly the configured names and shapes.
pub fn check_params(cfg: &NetConfig, params: &NetParams) -> Result<()> {
    let expect = param_shapes(cfg);
    for (name, shape) in &expect {
        match params.get(name) {
            None => return Err(Error::Config(format!("missing parameter {name}"))),
            Some(t) if t.shape() != *shape => {
                return Err(Error::Config(format!("parameter {name} has shape {}, expected {shape}", t.shape())))
            }
            Some(t) if !t.all_finite() => return Err(Error::Config(format!("parameter {name} is not finite"))),
            _ => {}
        }
    }
    if let Some(extra) = params.keys().find(|k| !expect.contains_key(*k)) {
        return Err(Error::Config(format!("unexpected parameter {extra}")));
    }
    Ok(())
}

fn get<'a>(params: &'a NetParams, name: &str) -> Result<&'a Tensor5> {
    params
        .get(name)
        .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
}

fn conv_at(params: &NetParams, prefix: &str, stride: usize, pad: usize) -> Result<Conv3dParams> {
    let bias = params.get(&format!("{prefix}.bias")).map(|b| b.data().to_vec());
    Conv3dParams::new(get(params, &format!("{prefix}.kernel"))?.clone(), bias, [stride; 3], [pad; 3])
}

fn norm_at(params: &NetParams, prefix: &str, eps: f64) -> Result<InstanceNormParams> {
    InstanceNormParams::new(
        get(params, &format!("{prefix}.gamma"))?.data().to_vec(),
        get(params, &format!("{prefix}.beta"))?.data().to_vec(),
        eps,
    )
}

fn se_at(params: &NetParams, prefix: &str, cfg: &NetConfig, c: usize) -> Result<SeParams> {
    let dense = |name: &str| -> Result<DenseParams> {
        DenseParams::new(
            get(params, &format!("{prefix}.{name}.weight"))?.clone(),
            get(params, &format!("{prefix}.{name}.bias"))?.data().to_vec(),
        )
    };
    SeParams::new(effective_reduction(c, cfg.se_reduction), dense("fc1")?, dense("fc2")?)
}

fn ag_at(params: &NetParams, prefix: &str, cfg: &NetConfig) -> Result<AgParams> {
    let pw = |name: &str| conv_at(params, &format!("{prefix}.{name}"), 1, 0);
    AgParams::new(cfg.ag_radius, cfg.ag_eps, pw("conv_o")?, pw("conv_i")?, pw("conv_attn")?, None)
}

fn vec_tensor(v: Vec<f64>) -> Tensor5 {
    Tensor5::from_parts(Shape5::new(1, 1, 1, 1, v.len()), v)
}

type Grads = BTreeMap<String, Tensor5>;

fn put_conv(g: &mut Grads, prefix: &str, cg: ConvGrads) {
    g.insert(format!("{prefix}.kernel"), cg.kernel);
    if let Some(b) = cg.bias {
        g.insert(format!("{prefix}.bias"), vec_tensor(b));
    }
}

/// conv -> instance norm -> relu -> optional dropout, with an optional
/// identity shortcut around the whole unit.
struct ConvUnit {
    prefix: String,
    conv: LayerGrad<ConvGrads>,
    norm: LayerGrad<NormGrads>,
    act: LayerGrad<Tensor5>,
    drop: Option<LayerGrad<Tensor5>>,
    residual: bool,
}

impl ConvUnit {
    #[allow(clippy::too_many_arguments)]
    fn run(
        x: &Tensor5,
        params: &NetParams,
        prefix: String,
        stride: usize,
        cfg: &NetConfig,
        drop_rate: Option<f64>,
        residual: bool,
        training: bool,
        rng: &mut Rng,
    ) -> Result<(Tensor5, Self)> {
        let conv = conv3d_forward(x, &conv_at(params, &prefix, stride, 1)?)?;
        let norm = instance_norm(&conv.output, &norm_at(params, &prefix, cfg.norm_eps)?)?;
        let act = relu(&norm.output);
        let drop = match drop_rate {
            Some(rate) => Some(dropout(&act.output, rate, rng, training)?),
            None => None,
        };
        let branch = drop.as_ref().map_or(&act.output, |d| &d.output);
        let y = if residual { add(x, branch)? } else { branch.clone() };
        Ok((
            y,
            Self {
                prefix,
                conv,
                norm,
                act,
                drop,
                residual,
            },
        ))
    }

    fn backward(&self, dy: &Tensor5, g: &mut Grads) -> Tensor5 {
        let d_act = match &self.drop {
            Some(d) => d.backward(dy),
            None => dy.clone(),
        };
        let d_norm = self.act.backward(&d_act);
        let ng = self.norm.backward(&d_norm);
        g.insert(format!("{}.gamma", self.prefix), vec_tensor(ng.gamma));
        g.insert(format!("{}.beta", self.prefix), vec_tensor(ng.beta));
        let cg = self.conv.backward(&ng.input);
        let mut dx = cg.input.clone();
        put_conv(g, &self.prefix, cg);
        if self.residual {
            dx.accumulate(dy);
        }
        dx
    }
}

struct EncoderTape {
    level: usize,
    convs: Vec<ConvUnit>,
    se: LayerGrad<SeGrads>,
    down: Option<ConvUnit>,
}

struct DecoderTape {
    level: usize,
    up: ConvUnit,
    ag: LayerGrad<AgGrads>,
    convs: Vec<ConvUnit>,
}

#[derive(Clone, Debug)]
pub struct NetGrads {
    pub input: Tensor5,
    pub params: Grads,
}

/// Diagnostic switches for [`forward_with`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Replace the skip feature of this encoder level with zeros.
    pub zero_skip: Option<usize>,
}

/// Probabilities `(n, z, h, w, 4)` and a backward map from their gradient.
pub fn forward(
    x: &Tensor5,
    params: &NetParams,
    cfg: &NetConfig,
    training: bool,
    rng: &mut Rng,
) -> Result<LayerGrad<NetGrads>> {
    forward_with(x, params, cfg, training, rng, ForwardOptions::default())
}

pub fn forward_with(
    x: &Tensor5,
    params: &NetParams,
    cfg: &NetConfig,
    training: bool,
    rng: &mut Rng,
    opts: ForwardOptions,
) -> Result<LayerGrad<NetGrads>> {
    cfg.validate()?;
    let s = x.shape();
    if s.c != cfg.in_channels || s.spatial() != cfg.patch {
        return Err(Error::ShapeMismatch {
            op: "net_forward",
            left: s,
            right: s.with_spatial(cfg.patch).with_channels(cfg.in_channels),
        });
    }
    let drop = Some(cfg.dropout);

    let mut h = x.clone();
    let mut encoders = Vec::with_capacity(ENCODERS);
    let mut skips = Vec::with_capacity(DECODERS);
    for e in 1..=ENCODERS {
        let mut convs = Vec::with_capacity(cfg.depths);
        for d in 0..cfg.depths {
            let (y, unit) = ConvUnit::run(&h, params, format!("enc{e}.conv{d}"), 1, cfg, drop, d > 0, training, rng)?;
            h = y;
            convs.push(unit);
        }
        let se = se_forward(&h, &se_at(params, &format!("enc{e}.se"), cfg, cfg.width(e))?)?;
        h = se.output.clone();
        let down = if e < ENCODERS {
            let skip = if opts.zero_skip == Some(e) { h.zeros_like() } else { h.clone() };
            skips.push(skip);
            let (y, unit) = ConvUnit::run(&h, params, format!("enc{e}.down"), 2, cfg, None, false, training, rng)?;
            h = y;
            Some(unit)
        } else {
            None
        };
        encoders.push(EncoderTape { level: e, convs, se, down });
    }

    let mut decoders = Vec::with_capacity(DECODERS);
    for l in (1..=DECODERS).rev() {
        let prefix = format!("dec{l}.up");
        let deconv = Deconv3dParams::new(get(params, &format!("{prefix}.kernel"))?.clone(), None, [2; 3], [1; 3], [1; 3])?;
        let conv = deconv3d_forward(&h, &deconv)?;
        let norm = instance_norm(&conv.output, &norm_at(params, &prefix, cfg.norm_eps)?)?;
        let act = relu(&norm.output);
        let up = ConvUnit {
            prefix,
            conv,
            norm,
            act,
            drop: None,
            residual: false,
        };
        let ag = ag_forward(&skips[l - 1], &up.act.output, &ag_at(params, &format!("dec{l}.ag"), cfg)?)?;
        h = ag.output.clone();
        let mut convs = Vec::with_capacity(cfg.depths);
        for d in 0..cfg.depths {
            let (y, unit) = ConvUnit::run(&h, params, format!("dec{l}.conv{d}"), 1, cfg, drop, true, training, rng)?;
            h = y;
            convs.push(unit);
        }
        decoders.push(DecoderTape { level: l, up, ag, convs });
    }

    let head = conv3d_forward(&h, &conv_at(params, "head", 1, 0)?)?;
    let probs = softmax_channel(&head.output);
    let out = probs.output.clone();
    let zero_skip = opts.zero_skip;

    Ok(LayerGrad::new(out, move |dp| {
        let mut g = Grads::new();
        let d_logits = probs.backward(dp);
        let hg = head.backward(&d_logits);
        let mut dh = hg.input.clone();
        put_conv(&mut g, "head", hg);

        let mut d_skips: Vec<Option<Tensor5>> = vec![None; DECODERS];
        for dec in decoders.iter().rev() {
            let l = dec.level;
            for unit in dec.convs.iter().rev() {
                dh = unit.backward(&dh, &mut g);
            }
            let agg = dec.ag.backward(&dh);
            for (name, kg) in [("conv_o", agg.conv_o), ("conv_i", agg.conv_i), ("conv_attn", agg.conv_attn)] {
                let prefix = format!("dec{l}.ag.{name}");
                g.insert(format!("{prefix}.kernel"), kg.kernel);
                if let Some(b) = kg.bias {
                    g.insert(format!("{prefix}.bias"), vec_tensor(b));
                }
            }
            if zero_skip != Some(l) {
                d_skips[l - 1] = Some(agg.guide);
            }
            // the upsampling unit has no shortcut, so its input gradient feeds
            // the next deeper stage
            let d_up = dec.up.act.backward(&agg.filtered);
            let ng = dec.up.norm.backward(&d_up);
            g.insert(format!("{}.gamma", dec.up.prefix), vec_tensor(ng.gamma));
            g.insert(format!("{}.beta", dec.up.prefix), vec_tensor(ng.beta));
            let cg = dec.up.conv.backward(&ng.input);
            dh = cg.input.clone();
            put_conv(&mut g, &dec.up.prefix, cg);
        }

        for enc in encoders.iter().rev() {
            let e = enc.level;
            if let Some(down) = &enc.down {
                dh = down.backward(&dh, &mut g);
                if let Some(ds) = &d_skips[e - 1] {
                    dh.accumulate(ds);
                }
            }
            let sg = enc.se.backward(&dh);
            let prefix = format!("enc{e}.se");
            g.insert(format!("{prefix}.fc1.weight"), sg.fc1_weight);
            g.insert(format!("{prefix}.fc1.bias"), vec_tensor(sg.fc1_bias));
            g.insert(format!("{prefix}.fc2.weight"), sg.fc2_weight);
            g.insert(format!("{prefix}.fc2.bias"), vec_tensor(sg.fc2_bias));
            dh = sg.input;
            for unit in enc.convs.iter().rev() {
                dh = unit.backward(&dh, &mut g);
            }
        }
        NetGrads { input: dh, params: g }
    }))
}

/// Per-voxel argmax (ties go to the lower channel) mapped to labels
/// `{0, 1, 2, 4}`. Uses the first batch item.
pub fn predict_labels(probs: &Tensor5) -> Result<SegVolume> {
    let s = probs.shape();
    if s.c != NUM_CLASSES {
        return Err(Error::invalid("predict_labels", format!("expected 4 channels, got {s}")));
    }
    let per = s.voxels() * s.c;
    let labels = probs.data()[..per]
        .chunks_exact(s.c)
        .map(|row| {
            let mut best = 0;
            for ch in 1..s.c {
                if row[ch] > row[best] {
                    best = ch;
                }
            }
            channel_to_label(best)
        })
        .collect();
    SegVolume::new(s.spatial(), labels)
}

/// Writes one `.npy` per parameter plus `manifest.txt` with lines
/// `name=<key> shape=<a,b,c,d,e> file=<file>` in key order.
pub fn save_params(dir: &Path, params: &NetParams) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for (name, t) in params {
        let file = format!("{name}.npy");
        npy::save_tensor(&dir.join(&file), t)?;
        let dims: Vec<String> = t.shape().dims().iter().map(|d| d.to_string()).collect();
        manifest.push_str(&format!("name={name} shape={} file={file}\n", dims.join(",")));
    }
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

pub fn load_params(dir: &Path) -> Result<NetParams> {
    let path = dir.join("manifest.txt");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut params = NetParams::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let mut fields = BTreeMap::new();
        for part in line.split_whitespace() {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad manifest entry {part:?}")))?;
            fields.insert(k, v);
        }
        let field = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::Config(format!("manifest line missing {k}: {line:?}")))
        };
        let name = field("name")?;
        let dims = field("shape")?
            .split(',')
            .map(|d| d.parse::<usize>().map_err(|_| Error::Config(format!("bad shape in {line:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let t = npy::load_tensor(&dir.join(field("file")?))?;
        if t.shape().dims().as_slice() != dims.as_slice() {
            return Err(Error::Config(format!("{name}: file shape {} disagrees with manifest", t.shape())));
        }
        if params.insert(name.to_string(), t).is_some() {
            return Err(Error::Config(format!("duplicate parameter {name}")));
        }
    }
    Ok(params)
}
