//! Case volumes, preprocessing, patch tiling and the synthetic phantom.
//!
//! Scalar volumes are `Tensor5`s of shape `(1, z, h, w, 1)`; on disk they are
//! 3-D `.npy` arrays. Label volumes use the alphabet `{0, 1, 2, 4}` and map to
//! dense channels `{0, 1, 2, 3}` only at this boundary.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::npy::{self, NpyArray};
use crate::rng::Rng;
use crate::tensor::{Shape5, Tensor5};

pub const NUM_CLASSES: usize = 4;

/// Label value for each dense class channel.
pub const CHANNEL_LABELS: [u8; NUM_CLASSES] = [0, 1, 2, 4];

pub fn label_to_channel(label: u8) -> Option<usize> {
    CHANNEL_LABELS.iter().position(|&l| l == label)
}

pub fn channel_to_label(channel: usize) -> u8 {
    CHANNEL_LABELS[channel]
}

/// Integer label volume restricted to `{0, 1, 2, 4}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegVolume {
    shape: [usize; 3],
    data: Vec<u8>,
}

impl SegVolume {
    /// Rejects wrong lengths and reports the first unknown label with its
    /// location.
    pub fn new(shape: [usize; 3], data: Vec<u8>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::invalid(
                "seg_volume",
                format!("{} labels for shape {:?}", data.len(), shape),
            ));
        }
        if let Some(idx) = data.iter().position(|&v| label_to_channel(v).is_none()) {
            let (hw, w) = (shape[1] * shape[2], shape[2]);
            return Err(Error::UnknownLabel {
                value: data[idx],
                z: idx / hw,
                h: (idx % hw) / w,
                w: idx % w,
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 3]) -> Self {
        Self {
            shape,
            data: vec![0; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, z: usize, h: usize, w: usize) -> u8 {
        self.data[(z * self.shape[1] + h) * self.shape[2] + w]
    }

    /// `(1, z, h, w, 4)` one-hot encoding over dense channels.
    pub fn one_hot(&self) -> Tensor5 {
        let [z, h, w] = self.shape;
        let mut out = vec![0.0; self.data.len() * NUM_CLASSES];
        for (vox, &l) in self.data.iter().enumerate() {
            out[vox * NUM_CLASSES + label_to_channel(l).expect("validated")] = 1.0;
        }
        Tensor5::from_parts(Shape5::new(1, z, h, w, NUM_CLASSES), out)
    }

    pub fn to_npy(&self) -> NpyArray {
        NpyArray::u8(self.shape.to_vec(), self.data.clone())
    }

    pub fn from_npy(a: &NpyArray) -> Result<Self> {
        let shape = spatial_shape("seg_volume", &a.shape)?;
        Self::new(shape, a.to_u8()?)
    }
}

fn spatial_shape(op: &'static str, dims: &[usize]) -> Result<[usize; 3]> {
    match *dims {
        [z, h, w] => Ok([z, h, w]),
        _ => Err(Error::invalid(op, format!("expected a 3-D volume, got shape {dims:?}"))),
    }
}

/// 3-D `.npy` array to a `(1, z, h, w, 1)` tensor.
pub fn volume_from_npy(a: &NpyArray) -> Result<Tensor5> {
    let [z, h, w] = spatial_shape("volume", &a.shape)?;
    Tensor5::from_vec(Shape5::new(1, z, h, w, 1), a.to_f64())
}

pub fn volume_to_npy(v: &Tensor5) -> NpyArray {
    let [z, h, w] = v.shape().spatial();
    NpyArray::f64(vec![z, h, w], v.data().to_vec())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    T1,
    T1ce,
    T2,
    Flair,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::T1, Modality::T1ce, Modality::T2, Modality::Flair];

    /// File stem inside a case directory.
    pub fn name(self) -> &'static str {
        match self {
            Modality::T1 => "t1",
            Modality::T1ce => "t1ce",
            Modality::T2 => "t2",
            Modality::Flair => "flair",
        }
    }
}

/// One subject: four modality volumes in fixed order plus optional labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Case {
    pub id: String,
    pub modalities: [Option<Tensor5>; 4],
    pub labels: Option<SegVolume>,
}

impl Case {
    pub fn new(id: impl Into<String>, modalities: [Tensor5; 4], labels: Option<SegVolume>) -> Result<Self> {
        let case = Self {
            id: id.into(),
            modalities: modalities.map(Some),
            labels,
        };
        case.spatial()?;
        Ok(case)
    }

    /// Common spatial shape; fails on a missing modality or any mismatch.
    pub fn spatial(&self) -> Result<[usize; 3]> {
        let mut shape = None;
        for (m, vol) in Modality::ALL.iter().zip(&self.modalities) {
            let vol = vol
                .as_ref()
                .ok_or_else(|| Error::invalid("case", format!("{}: missing modality {}", self.id, m.name())))?;
            let s = vol.shape();
            if s.n != 1 || s.c != 1 {
                return Err(Error::invalid("case", format!("{}: {} is not a scalar volume", self.id, m.name())));
            }
            match shape {
                None => shape = Some(s.spatial()),
                Some(prev) if prev != s.spatial() => {
                    return Err(Error::invalid(
                        "case",
                        format!("{}: {} has shape {:?}, expected {:?}", self.id, m.name(), s.spatial(), prev),
                    ))
                }
                _ => {}
            }
        }
        let shape = shape.expect("four modalities");
        if let Some(l) = &self.labels {
            if l.shape() != shape {
                return Err(Error::invalid(
                    "case",
                    format!("{}: labels {:?} vs modalities {:?}", self.id, l.shape(), shape),
                ));
            }
        }
        Ok(shape)
    }

    /// Reads `t1.npy`, `t1ce.npy`, `t2.npy`, `flair.npy` and, if present,
    /// `seg.npy`. The case id is the directory name.
    pub fn read(dir: &Path) -> Result<Self> {
        let id = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut modalities: [Option<Tensor5>; 4] = Default::default();
        for (slot, m) in modalities.iter_mut().zip(Modality::ALL) {
            let path = dir.join(format!("{}.npy", m.name()));
            if !path.exists() {
                return Err(Error::invalid("case", format!("{id}: missing modality {}", m.name())));
            }
            *slot = Some(volume_from_npy(&npy::load(&path)?)?);
        }
        let seg = dir.join("seg.npy");
        let labels = if seg.exists() {
            Some(SegVolume::from_npy(&npy::load(&seg)?)?)
        } else {
            None
        };
        let case = Self { id, modalities, labels };
        case.spatial()?;
        Ok(case)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        self.spatial()?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (m, vol) in Modality::ALL.iter().zip(&self.modalities) {
            let vol = vol.as_ref().expect("checked by spatial");
            npy::save(&dir.join(format!("{}.npy", m.name())), &volume_to_npy(vol))?;
        }
        if let Some(l) = &self.labels {
            npy::save(&dir.join("seg.npy"), &l.to_npy())?;
        }
        Ok(())
    }
}

/// Case directories (sorted by name) under `root`.
pub fn list_cases(root: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if path.is_dir() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Z-score over nonzero voxels; zeros stay zero. A spread below `1e-8`
/// yields all zeros.
pub fn normalize(x: &Tensor5) -> Tensor5 {
    let nonzero: Vec<f64> = x.data().iter().copied().filter(|&v| v != 0.0).collect();
    if nonzero.is_empty() {
        return x.zeros_like();
    }
    let n = nonzero.len() as f64;
    let mean = nonzero.iter().sum::<f64>() / n;
    let var = nonzero.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-8 {
        return x.zeros_like();
    }
    x.map(|v| if v == 0.0 { 0.0 } else { (v - mean) / std })
}

/// `(1, z, h, w, 4)` in T1, T1-CE, T2, FLAIR order.
pub fn stack_modalities(case: &Case) -> Result<Tensor5> {
    case.spatial()?;
    let vols: Vec<Tensor5> = case.modalities.iter().map(|m| m.clone().expect("checked")).collect();
    Tensor5::stack_channels(&vols)
}

/// Inverse of [`stack_modalities`] on a single-sample 4-channel tensor.
pub fn split_modalities(x: &Tensor5) -> Result<[Tensor5; 4]> {
    let s = x.shape();
    if s.n != 1 || s.c != 4 {
        return Err(Error::invalid("split_modalities", format!("expected (1, z, h, w, 4), got {s}")));
    }
    Ok([x.channel(0), x.channel(1), x.channel(2), x.channel(3)])
}

/// Normalises every modality of a case.
pub fn preprocess_case(case: &Case) -> Result<Case> {
    case.spatial()?;
    Ok(Case {
        id: case.id.clone(),
        modalities: case.modalities.clone().map(|m| m.map(|v| normalize(&v))),
        labels: case.labels.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchSpec {
    pub patch: [usize; 3],
    pub stride: [usize; 3],
}

impl PatchSpec {
    /// Patch extents must be multiples of 16; strides in `1..=patch`.
    pub fn new(patch: [usize; 3], stride: [usize; 3]) -> Result<Self> {
        for ax in 0..3 {
            if patch[ax] == 0 || patch[ax] % 16 != 0 {
                return Err(Error::invalid(
                    "patch_spec",
                    format!("patch extent {} is not a positive multiple of 16", patch[ax]),
                ));
            }
            if stride[ax] == 0 || stride[ax] > patch[ax] {
                return Err(Error::invalid(
                    "patch_spec",
                    format!("stride {} must lie in 1..={}", stride[ax], patch[ax]),
                ));
            }
        }
        Ok(Self { patch, stride })
    }

    /// Non-overlapping tiling.
    pub fn tiled(patch: [usize; 3]) -> Result<Self> {
        Self::new(patch, patch)
    }

    fn starts(&self, ax: usize, extent: usize) -> Vec<usize> {
        let (p, s) = (self.patch[ax], self.stride[ax]);
        let count = 1 + extent.saturating_sub(p).div_ceil(s);
        (0..count).map(|k| k * s).collect()
    }

    /// Patch origins in z-major order.
    pub fn origins(&self, spatial: [usize; 3]) -> Vec<[usize; 3]> {
        let (zs, hs, ws) = (self.starts(0, spatial[0]), self.starts(1, spatial[1]), self.starts(2, spatial[2]));
        let mut out = Vec::with_capacity(zs.len() * hs.len() * ws.len());
        for &z in &zs {
            for &h in &hs {
                for &w in &ws {
                    out.push([z, h, w]);
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub origin: [usize; 3],
    pub image: Tensor5,
    /// One-hot `(1, pz, ph, pw, 4)`; padding is background.
    pub label: Option<Tensor5>,
}

fn crop_padded(x: &Tensor5, origin: [usize; 3], patch: [usize; 3], pad_channel: Option<usize>) -> Tensor5 {
    let s = x.shape();
    let [z0, h0, w0] = origin;
    Tensor5::from_fn(s.with_spatial(patch), |_, k, i, j, ch| {
        let (z, h, w) = (z0 + k, h0 + i, w0 + j);
        if z < s.z && h < s.h && w < s.w {
            x.get(0, z, h, w, ch)
        } else if pad_channel == Some(ch) {
            1.0
        } else {
            0.0
        }
    })
}

/// Sliding-window patches of a `(1, z, h, w, c)` tensor with zero padding at
/// the far borders.
pub fn extract_patches(x: &Tensor5, labels: Option<&SegVolume>, spec: &PatchSpec) -> Result<Vec<Patch>> {
    let s = x.shape();
    if s.n != 1 {
        return Err(Error::invalid("extract_patches", format!("expected a single sample, got {s}")));
    }
    let one_hot = match labels {
        Some(l) if l.shape() != s.spatial() => {
            return Err(Error::invalid(
                "extract_patches",
                format!("labels {:?} vs image {:?}", l.shape(), s.spatial()),
            ))
        }
        Some(l) => Some(l.one_hot()),
        None => None,
    };
    Ok(spec
        .origins(s.spatial())
        .into_iter()
        .map(|origin| Patch {
            origin,
            image: crop_padded(x, origin, spec.patch, None),
            label: one_hot.as_ref().map(|oh| crop_padded(oh, origin, spec.patch, Some(0))),
        })
        .collect())
}

/// Reassembles patches in [`extract_patches`] order, averaging overlaps.
pub fn stitch_patches(patches: &[Tensor5], shape: Shape5, spec: &PatchSpec) -> Result<Tensor5> {
    let origins = spec.origins(shape.spatial());
    if shape.n != 1 || patches.len() != origins.len() {
        return Err(Error::invalid(
            "stitch_patches",
            format!("{} patches for {} tiles of {shape}", patches.len(), origins.len()),
        ));
    }
    let mut sum = vec![0.0; shape.len()];
    let mut count = vec![0u32; shape.voxels()];
    for (p, origin) in patches.iter().zip(&origins) {
        let expect = shape.with_spatial(spec.patch);
        if p.shape() != expect {
            return Err(Error::ShapeMismatch {
                op: "stitch_patches",
                left: p.shape(),
                right: expect,
            });
        }
        for k in 0..spec.patch[0] {
            for i in 0..spec.patch[1] {
                for j in 0..spec.patch[2] {
                    let (z, h, w) = (origin[0] + k, origin[1] + i, origin[2] + j);
                    if z >= shape.z || h >= shape.h || w >= shape.w {
                        continue;
                    }
                    let vox = (z * shape.h + h) * shape.w + w;
                    count[vox] += 1;
                    for ch in 0..shape.c {
                        sum[vox * shape.c + ch] += p.get(0, k, i, j, ch);
                    }
                }
            }
        }
    }
    for (vox, &n) in count.iter().enumerate() {
        for v in &mut sum[vox * shape.c..(vox + 1) * shape.c] {
            *v /= n as f64;
        }
    }
    Ok(Tensor5::from_parts(shape, sum))
}

/// Mean intensity per modality for (healthy brain, necrosis, edema, enhancing).
const PHANTOM_MEANS: [[f64; 4]; 4] = [
    // brain, label 1, label 2, label 4
    [0.60, 0.25, 0.45, 0.55], // T1
    [0.60, 0.30, 0.50, 1.00], // T1-CE
    [0.50, 0.75, 0.90, 0.65], // T2
    [0.40, 0.60, 0.95, 0.70], // FLAIR
];

/// Noise standard deviation at difficulty 1.
const PHANTOM_NOISE: f64 = 0.25;

struct Ellipsoid {
    center: [f64; 3],
    radii: [f64; 3],
}

impl Ellipsoid {
    fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).map(|ax| ((p[ax] - self.center[ax]) / self.radii[ax]).powi(2)).sum::<f64>() <= 1.0
    }

    /// Random ellipsoid whose centre lies within `jitter` of `parent`'s
    /// centre (scaled by `parent`'s radii) and whose radii are `scale` times
    /// `parent`'s, each axis perturbed independently.
    fn nested(parent: &Ellipsoid, scale: (f64, f64), jitter: f64, rng: &mut Rng) -> Self {
        let s = rng.uniform_range(scale.0, scale.1);
        let mut radii = [0.0; 3];
        let mut center = [0.0; 3];
        for ax in 0..3 {
            radii[ax] = parent.radii[ax] * s * rng.uniform_range(0.9, 1.1);
            let slack = (parent.radii[ax] - radii[ax]).max(0.0) * jitter;
            center[ax] = parent.center[ax] + rng.uniform_range(-slack, slack);
        }
        Self { center, radii }
    }
}

/// Synthetic brain with nested whole-tumour (2), core (1) and enhancing (4)
/// ellipsoids. Labels are assigned by intersection, so nesting always holds.
/// Noise of std `0.25 * difficulty` is added inside the brain only.
pub fn generate_phantom(id: impl Into<String>, rng: &mut Rng, shape: [usize; 3], difficulty: f64) -> Result<Case> {
    if shape.iter().any(|&e| e < 16) {
        return Err(Error::invalid("generate_phantom", format!("shape {shape:?} is below the 16^3 minimum")));
    }
    if !(0.0..=1.0).contains(&difficulty) {
        return Err(Error::invalid("generate_phantom", format!("difficulty {difficulty} outside [0, 1]")));
    }
    let ext = shape.map(|e| e as f64);
    let mid = ext.map(|e| (e - 1.0) / 2.0);
    let brain = Ellipsoid {
        center: mid.map(|c| c + rng.uniform_range(-0.5, 0.5)),
        radii: ext.map(|e| e * rng.uniform_range(0.40, 0.46)),
    };
    let min_ext = ext.iter().copied().fold(f64::INFINITY, f64::min);
    let wt_r = min_ext * rng.uniform_range(0.20, 0.28);
    let mut wt_center = [0.0; 3];
    for ax in 0..3 {
        let slack = (brain.radii[ax] - wt_r).max(0.0) * 0.4;
        wt_center[ax] = brain.center[ax] + rng.uniform_range(-slack, slack);
    }
    let wt = Ellipsoid {
        center: wt_center,
        radii: [0; 3].map(|_| wt_r * rng.uniform_range(0.85, 1.15)),
    };
    let tc = Ellipsoid::nested(&wt, (0.60, 0.75), 0.5, rng);
    let et = Ellipsoid::nested(&tc, (0.55, 0.70), 0.5, rng);

    let [z, h, w] = shape;
    let len = z * h * w;
    let mut labels = vec![0u8; len];
    let mut region = vec![None; len];
    for k in 0..z {
        for i in 0..h {
            for j in 0..w {
                let p = [k as f64, i as f64, j as f64];
                let idx = (k * h + i) * w + j;
                if !brain.contains(p) {
                    continue;
                }
                let (in_wt, in_tc, in_et) = (wt.contains(p), tc.contains(p), et.contains(p));
                let (label, slot) = if in_wt && in_tc && in_et {
                    (4, 3)
                } else if in_wt && in_tc {
                    (1, 1)
                } else if in_wt {
                    (2, 2)
                } else {
                    (0, 0)
                };
                labels[idx] = label;
                region[idx] = Some(slot);
            }
        }
    }
    let sigma = PHANTOM_NOISE * difficulty;
    let vol_shape = Shape5::new(1, z, h, w, 1);
    let modalities = PHANTOM_MEANS.map(|means| {
        let data = region
            .iter()
            .map(|r| match r {
                Some(slot) => means[*slot] + sigma * rng.normal(),
                None => 0.0,
            })
            .collect();
        Tensor5::from_parts(vol_shape, data)
    });
    Case::new(id, modalities, Some(SegVolume::new(shape, labels)?))
}
