//! Overlap and surface-distance metrics over nested tumour regions.
//!
//! Undefined values (empty denominators, empty masks for Hausdorff) are
//! `None`, never NaN.

use std::fmt::Write as _;

use crate::data::SegVolume;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Region {
    /// Labels {1, 2, 4}.
    WT,
    /// Labels {1, 4}.
    TC,
    /// Label 4.
    ET,
}

impl Region {
    /// Report order.
    pub const REPORT_ORDER: [Region; 3] = [Region::ET, Region::WT, Region::TC];

    pub fn name(self) -> &'static str {
        match self {
            Region::WT => "WT",
            Region::TC => "TC",
            Region::ET => "ET",
        }
    }

    pub fn contains_label(self, label: u8) -> bool {
        match self {
            Region::WT => matches!(label, 1 | 2 | 4),
            Region::TC => matches!(label, 1 | 4),
            Region::ET => label == 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionMask {
    pub region: Region,
    pub shape: [usize; 3],
    pub mask: Vec<bool>,
}

impl RegionMask {
    pub fn new(region: Region, shape: [usize; 3], mask: Vec<bool>) -> Result<Self> {
        if mask.len() != shape.iter().product::<usize>() {
            return Err(Error::invalid("region_mask", format!("{} voxels for shape {shape:?}", mask.len())));
        }
        Ok(Self { region, shape, mask })
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn get(&self, z: usize, h: usize, w: usize) -> bool {
        self.mask[(z * self.shape[1] + h) * self.shape[2] + w]
    }

    /// True when every voxel of `self` is also in `other`.
    pub fn is_subset_of(&self, other: &RegionMask) -> bool {
        self.shape == other.shape && self.mask.iter().zip(&other.mask).all(|(&a, &b)| !a || b)
    }
}

pub fn region_mask(labels: &SegVolume, region: Region) -> RegionMask {
    RegionMask {
        region,
        shape: labels.shape(),
        mask: labels.data().iter().map(|&l| region.contains_label(l)).collect(),
    }
}

/// `[WT, TC, ET]`.
pub fn derive_regions(labels: &SegVolume) -> [RegionMask; 3] {
    [Region::WT, Region::TC, Region::ET].map(|r| region_mask(labels, r))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn confusion(pred: &RegionMask, truth: &RegionMask) -> Result<ConfusionCounts> {
    if pred.shape != truth.shape {
        return Err(Error::invalid(
            "confusion",
            format!("shape mismatch {:?} vs {:?}", pred.shape, truth.shape),
        ));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.mask.iter().zip(&truth.mask) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricKind {
    Dice,
    Sensitivity,
    Specificity,
}

/// Dice is 1 when both masks are empty; sensitivity needs a positive truth
/// voxel and specificity a negative one.
pub fn metric(kind: MetricKind, c: &ConfusionCounts) -> Option<f64> {
    let (num, den) = match kind {
        MetricKind::Dice => {
            if c.tp + c.fp + c.fn_ == 0 {
                return Some(1.0);
            }
            (2 * c.tp, c.fn_ + c.fp + 2 * c.tp)
        }
        MetricKind::Sensitivity => (c.tp, c.tp + c.fn_),
        MetricKind::Specificity => (c.tn, c.tn + c.fp),
    };
    (den > 0).then(|| num as f64 / den as f64)
}

/// Positive voxels with at least one face neighbour that is negative or
/// outside the volume.
pub fn surface_voxels(m: &RegionMask) -> Vec<[usize; 3]> {
    let [z, h, w] = m.shape;
    let mut out = Vec::new();
    for k in 0..z {
        for i in 0..h {
            for j in 0..w {
                if !m.get(k, i, j) {
                    continue;
                }
                let border = k == 0 || i == 0 || j == 0 || k + 1 == z || i + 1 == h || j + 1 == w;
                if border
                    || !m.get(k - 1, i, j)
                    || !m.get(k + 1, i, j)
                    || !m.get(k, i - 1, j)
                    || !m.get(k, i + 1, j)
                    || !m.get(k, i, j - 1)
                    || !m.get(k, i, j + 1)
                {
                    out.push([k, i, j]);
                }
            }
        }
    }
    out
}

/// One lower-envelope pass: `out[p] = min_q (sp (p - q))^2 + f[q]`.
fn envelope_1d(f: &[f64], sp: f64, out: &mut [f64], v: &mut Vec<usize>, zb: &mut Vec<f64>) {
    v.clear();
    zb.clear();
    let pos = |q: usize| q as f64 * sp;
    for (q, &fq) in f.iter().enumerate() {
        if !fq.is_finite() {
            continue;
        }
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    break;
                }
                Some(&last) => {
                    let (xq, xv) = (pos(q), pos(last));
                    let s = ((fq + xq * xq) - (f[last] + xv * xv)) / (2.0 * (xq - xv));
                    if s <= *zb.last().unwrap() {
                        v.pop();
                        zb.pop();
                        continue;
                    }
                    zb.push(s);
                    v.push(q);
                    break;
                }
            }
        }
        if v.len() == 1 && zb.is_empty() {
            zb.push(f64::NEG_INFINITY);
        }
    }
    if v.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        let xp = pos(p);
        while k + 1 < v.len() && zb[k + 1] < xp {
            k += 1;
        }
        let d = xp - pos(v[k]);
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance to the nearest site, separable over axes.
pub fn squared_distance_transform(shape: [usize; 3], sites: &[[usize; 3]], spacing: [f64; 3]) -> Vec<f64> {
    let [z, h, w] = shape;
    let mut d = vec![f64::INFINITY; z * h * w];
    for s in sites {
        d[(s[0] * h + s[1]) * w + s[2]] = 0.0;
    }
    let strides = [h * w, w, 1];
    let mut line = Vec::new();
    let mut out = Vec::new();
    let (mut v, mut zb) = (Vec::new(), Vec::new());
    for ax in (0..3).rev() {
        let len = shape[ax];
        line.resize(len, 0.0);
        out.resize(len, 0.0);
        let others: Vec<usize> = (0..3).filter(|&a| a != ax).collect();
        for a in 0..shape[others[0]] {
            for b in 0..shape[others[1]] {
                let base = a * strides[others[0]] + b * strides[others[1]];
                for t in 0..len {
                    line[t] = d[base + t * strides[ax]];
                }
                envelope_1d(&line, spacing[ax], &mut out, &mut v, &mut zb);
                for t in 0..len {
                    d[base + t * strides[ax]] = out[t];
                }
            }
        }
    }
    d
}

/// Directed surface distances pooled from both directions.
fn pooled_surface_distances(pred: &RegionMask, truth: &RegionMask, spacing: [f64; 3]) -> Result<Option<Vec<f64>>> {
    if pred.shape != truth.shape {
        return Err(Error::invalid(
            "hausdorff",
            format!("shape mismatch {:?} vs {:?}", pred.shape, truth.shape),
        ));
    }
    if spacing.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::invalid("hausdorff", format!("spacing must be positive, got {spacing:?}")));
    }
    let (sp, st) = (surface_voxels(pred), surface_voxels(truth));
    if sp.is_empty() || st.is_empty() {
        return Ok(None);
    }
    let [_, h, w] = pred.shape;
    let idx = |v: &[usize; 3]| (v[0] * h + v[1]) * w + v[2];
    let to_truth = squared_distance_transform(pred.shape, &st, spacing);
    let to_pred = squared_distance_transform(pred.shape, &sp, spacing);
    let mut pooled: Vec<f64> = sp.iter().map(|v| to_truth[idx(v)].sqrt()).collect();
    pooled.extend(st.iter().map(|v| to_pred[idx(v)].sqrt()));
    pooled.sort_by(f64::total_cmp);
    Ok(Some(pooled))
}

/// Inclusive linear-interpolated percentile of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// 95th percentile of the pooled directed surface distances.
pub fn hausdorff95(pred: &RegionMask, truth: &RegionMask, spacing: [f64; 3]) -> Result<Option<f64>> {
    Ok(pooled_surface_distances(pred, truth, spacing)?.map(|d| percentile(&d, 0.95)))
}

/// Classical symmetric Hausdorff distance between the surfaces.
pub fn hausdorff100(pred: &RegionMask, truth: &RegionMask, spacing: [f64; 3]) -> Result<Option<f64>> {
    Ok(pooled_surface_distances(pred, truth, spacing)?.map(|d| *d.last().unwrap()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionScores {
    pub case_id: String,
    pub region: Region,
    pub dice: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub hd95: Option<f64>,
}

/// Scores for every region of one case, in report order.
pub fn score_case(case_id: &str, pred: &SegVolume, truth: &SegVolume, spacing: [f64; 3]) -> Result<Vec<RegionScores>> {
    if pred.shape() != truth.shape() {
        return Err(Error::invalid(
            "evaluate",
            format!("{case_id}: prediction {:?} vs truth {:?}", pred.shape(), truth.shape()),
        ));
    }
    Region::REPORT_ORDER
        .iter()
        .map(|&r| {
            let (p, t) = (region_mask(pred, r), region_mask(truth, r));
            let c = confusion(&p, &t)?;
            Ok(RegionScores {
                case_id: case_id.to_string(),
                region: r,
                dice: metric(MetricKind::Dice, &c),
                sensitivity: metric(MetricKind::Sensitivity, &c),
                specificity: metric(MetricKind::Specificity, &c),
                hd95: hausdorff95(&p, &t, spacing)?,
            })
        })
        .collect()
}

pub(crate) fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x}"))
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    Some(percentile(&s, 0.5))
}

/// Means of dice, sensitivity, specificity and hd95 over the rows of
/// `region`, skipping undefined entries.
pub fn region_means(rows: &[RegionScores], region: Region) -> [Option<f64>; 4] {
    let col = |get: fn(&RegionScores) -> Option<f64>| -> Option<f64> {
        mean(&rows.iter().filter(|r| r.region == region).filter_map(get).collect::<Vec<_>>())
    };
    [col(|r| r.dice), col(|r| r.sensitivity), col(|r| r.specificity), col(|r| r.hd95)]
}

/// CSV table of per-case rows followed by a mean/median block per region.
/// Undefined entries are skipped when aggregating.
pub fn format_report(rows: &[RegionScores]) -> String {
    let mut out = String::from("case_id,region,dice,sensitivity,specificity,hd95\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.case_id,
            r.region.name(),
            cell(r.dice),
            cell(r.sensitivity),
            cell(r.specificity),
            cell(r.hd95)
        );
    }
    out.push_str("\nstatistic,region,dice,sensitivity,specificity,hd95\n");
    type Agg = fn(&[f64]) -> Option<f64>;
    for (name, f) in [("mean", mean as Agg), ("median", median as Agg)] {
        for region in Region::REPORT_ORDER {
            let col = |get: fn(&RegionScores) -> Option<f64>| -> Vec<f64> {
                rows.iter().filter(|r| r.region == region).filter_map(get).collect()
            };
            let _ = writeln!(
                out,
                "{name},{},{},{},{},{}",
                region.name(),
                cell(f(&col(|r| r.dice))),
                cell(f(&col(|r| r.sensitivity))),
                cell(f(&col(|r| r.specificity))),
                cell(f(&col(|r| r.hd95)))
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(shape: [usize; 3], on: &[[usize; 3]]) -> RegionMask {
        let mut m = vec![false; shape.iter().product()];
        for v in on {
            m[(v[0] * shape[1] + v[1]) * shape[2] + v[2]] = true;
        }
        RegionMask::new(Region::WT, shape, m).unwrap()
    }

    #[test]
    fn metric_arithmetic() {
        let c = ConfusionCounts { tp: 8, fp: 2, fn_: 2, tn: 0 };
        assert_eq!(metric(MetricKind::Dice, &c), Some(0.8));
        assert_eq!(metric(MetricKind::Specificity, &c), Some(0.0));
        let empty = ConfusionCounts { tn: 5, ..Default::default() };
        assert_eq!(metric(MetricKind::Dice, &empty), Some(1.0));
        assert_eq!(metric(MetricKind::Sensitivity, &empty), None);
    }

    #[test]
    fn singleton_distance() {
        let a = mask([8, 8, 8], &[[1, 1, 1]]);
        let b = mask([8, 8, 8], &[[1, 4, 5]]);
        assert_eq!(hausdorff95(&a, &b, [1.0; 3]).unwrap(), Some(5.0));
        assert_eq!(hausdorff100(&a, &b, [1.0; 3]).unwrap(), Some(5.0));
        let e = mask([8, 8, 8], &[]);
        assert_eq!(hausdorff95(&a, &e, [1.0; 3]).unwrap(), None);
    }

    #[test]
    fn edt_anisotropic_line() {
        let d = squared_distance_transform([1, 1, 5], &[[0, 0, 0], [0, 0, 4]], [1.0, 1.0, 2.0]);
        assert_eq!(d, vec![0.0, 4.0, 16.0, 4.0, 0.0]);
        let none = squared_distance_transform([1, 2, 2], &[], [1.0; 3]);
        assert!(none.iter().all(|v| v.is_infinite()));
    }

    #[test]
    fn surface_of_cube() {
        let mut on = Vec::new();
        for k in 1..4 {
            for i in 1..4 {
                for j in 1..4 {
                    on.push([k, i, j]);
                }
            }
        }
        let m = mask([5, 5, 5], &on);
        assert_eq!(surface_voxels(&m).len(), 26);
        let full = mask([3, 3, 3], &{
            let mut v = Vec::new();
            for k in 0..3 {
                for i in 0..3 {
                    for j in 0..3 {
                        v.push([k, i, j]);
                    }
                }
            }
            v
        });
        // border counts as outside
        assert_eq!(surface_voxels(&full).len(), 26);
    }

    #[test]
    fn report_layout() {
        let rows = vec![
            RegionScores {
                case_id: "a".into(),
                region: Region::ET,
                dice: Some(0.5),
                sensitivity: None,
                specificity: Some(1.0),
                hd95: Some(2.0),
            },
            RegionScores {
                case_id: "b".into(),
                region: Region::ET,
                dice: Some(1.0),
                sensitivity: None,
                specificity: Some(1.0),
                hd95: None,
            },
        ];
        let r = format_report(&rows);
        assert!(r.contains("a,ET,0.5,undefined,1,2\n"));
        assert!(r.contains("mean,ET,0.75,undefined,1,2\n"));
        assert!(r.contains("median,WT,undefined,undefined,undefined,undefined\n"));
    }
}
