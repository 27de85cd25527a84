//! Evaluation: pixel-wise overlap, pairwise member similarity, and
//! lesion-wise (connected component) precision and recall.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Dims, ProbMap};

/// Pixel-wise confusion counts and the ratios derived from them.
///
/// Ratios with a zero denominator are 1 when both masks are empty and 0
/// otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelMetrics {
    pub dice: f64,
    pub recall: f64,
    pub precision: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl PixelMetrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let both_empty = tp + fp + fn_ == 0;
        let ratio = |num: usize, den: usize| {
            if den > 0 {
                num as f64 / den as f64
            } else if both_empty {
                1.0
            } else {
                0.0
            }
        };
        PixelMetrics {
            dice: ratio(2 * tp, 2 * tp + fp + fn_),
            recall: ratio(tp, tp + fn_),
            precision: ratio(tp, tp + fp),
            tp,
            fp,
            fn_,
            tn,
        }
    }
}

pub fn pixel_metrics(pred: &BinaryMask, gt: &BinaryMask) -> Result<PixelMetrics> {
    gt.dims().ensure_same(pred.dims())?;
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &g) in pred.bits().iter().zip(gt.bits()) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(PixelMetrics::from_counts(tp, fp, fn_, tn))
}

/// Soft Dice agreement `2 sum(a b) / (sum(a) + sum(b))`.
///
/// Returns `None` when both fields sum to zero.
pub fn pairwise_similarity(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    if a.len() != b.len() {
        return Err(Error::InvalidValue(format!(
            "fields have {} and {} entries",
            a.len(),
            b.len()
        )));
    }
    let mut dot = 0.0;
    let mut sa = 0.0;
    let mut sb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        sa += x;
        sb += y;
    }
    let den = sa + sb;
    Ok(if den > 0.0 { Some(2.0 * dot / den) } else { None })
}

/// Mean pairwise similarity of member predictions, restricted to true
/// positives (`f * y`), false positives (`f * (1 - y)`), and all positives (`f`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub tp_similarity: f64,
    pub fp_similarity: f64,
    pub allpos_similarity: f64,
    pub pairs: usize,
    /// Pairs skipped because both masked fields were empty.
    pub tp_undefined: usize,
    pub fp_undefined: usize,
    pub allpos_undefined: usize,
}

/// Running mean that ignores undefined pair values.
#[derive(Debug, Default, Clone, Copy)]
struct PairMean {
    sum: f64,
    count: usize,
    undefined: usize,
}

impl PairMean {
    fn push(&mut self, v: Option<f64>) {
        match v {
            Some(x) => {
                self.sum += x;
                self.count += 1;
            }
            None => self.undefined += 1,
        }
    }

    /// Mean over defined pairs; when every pair is undefined the members agree
    /// vacuously and the similarity is 1.
    fn mean(&self) -> f64 {
        if self.count > 0 {
            self.sum / self.count as f64
        } else {
            1.0
        }
    }
}

pub fn diversity_report(members: &[ProbMap], gt: &BinaryMask) -> Result<DiversityReport> {
    if members.len() < 2 {
        return Err(Error::param("members", format!("need at least 2, got {}", members.len())));
    }
    for m in members {
        gt.dims().ensure_same(m.dims())?;
    }
    let y = gt.to_reals();
    let masked: Vec<(Vec<f64>, Vec<f64>)> = members
        .iter()
        .map(|m| {
            let tp = m.values().iter().zip(&y).map(|(f, y)| f * y).collect();
            let fp = m.values().iter().zip(&y).map(|(f, y)| f * (1.0 - y)).collect();
            (tp, fp)
        })
        .collect();
    let (mut tp, mut fp, mut all) = (PairMean::default(), PairMean::default(), PairMean::default());
    let mut pairs = 0;
    for i in 0..members.len() {
        for j in i + 1..members.len() {
            tp.push(pairwise_similarity(&masked[i].0, &masked[j].0)?);
            fp.push(pairwise_similarity(&masked[i].1, &masked[j].1)?);
            all.push(pairwise_similarity(members[i].values(), members[j].values())?);
            pairs += 1;
        }
    }
    Ok(DiversityReport {
        tp_similarity: tp.mean(),
        fp_similarity: fp.mean(),
        allpos_similarity: all.mean(),
        pairs,
        tp_undefined: tp.undefined,
        fp_undefined: fp.undefined,
        allpos_undefined: all.undefined,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl Connectivity {
    pub fn from_count(n: u32) -> Result<Self> {
        match n {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            _ => Err(Error::param("connectivity", format!("{n} is not 4 or 8"))),
        }
    }
}

/// Component labels: 0 for background, `1..=count` for foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels {
    pub dims: Dims,
    pub labels: Vec<u32>,
    pub count: usize,
}

impl Labels {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.count + 1];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let next = parent[x as usize];
        parent[x as usize] = parent[next as usize];
        x = next;
    }
    x
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

/// Two-pass union-find labelling. Labels are assigned in raster order of
/// each component's first pixel.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> Labels {
    let dims = mask.dims();
    let (w, h) = (dims.width, dims.height);
    let bits = mask.bits();
    let mut provisional = vec![0u32; dims.len()];
    let mut parent: Vec<u32> = vec![0];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if !bits[i] {
                continue;
            }
            let mut neighbours = [0u32; 4];
            let mut n = 0;
            let mut look = |rr: usize, cc: usize| {
                let l = provisional[rr * w + cc];
                if l != 0 {
                    neighbours[n] = l;
                    n += 1;
                }
            };
            if c > 0 {
                look(r, c - 1);
            }
            if r > 0 {
                look(r - 1, c);
                if connectivity == Connectivity::Eight {
                    if c > 0 {
                        look(r - 1, c - 1);
                    }
                    if c + 1 < w {
                        look(r - 1, c + 1);
                    }
                }
            }
            if n == 0 {
                let l = parent.len() as u32;
                parent.push(l);
                provisional[i] = l;
            } else {
                let first = neighbours[0];
                provisional[i] = first;
                for &other in &neighbours[1..n] {
                    union(&mut parent, first, other);
                }
            }
        }
    }
    let mut remap = vec![0u32; parent.len()];
    let mut count = 0u32;
    let mut labels = vec![0u32; dims.len()];
    for (i, &p) in provisional.iter().enumerate() {
        if p == 0 {
            continue;
        }
        let root = find(&mut parent, p);
        if remap[root as usize] == 0 {
            count += 1;
            remap[root as usize] = count;
        }
        labels[i] = remap[root as usize];
    }
    Labels {
        dims,
        labels,
        count: count as usize,
    }
}

/// Lesion-wise counts. A gold lesion is detected, and a predicted lesion is
/// true, when it shares at least one pixel with the other mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LesionMetrics {
    pub l_recall: f64,
    pub l_precision: f64,
    /// Gold lesions overlapped by the prediction.
    pub ltp: usize,
    /// Predicted lesions overlapping the gold standard.
    pub true_pred: usize,
    pub gl: usize,
    pub pl: usize,
}

impl LesionMetrics {
    /// Mean of lesion-wise recall and precision.
    pub fn accuracy(&self) -> f64 {
        0.5 * (self.l_recall + self.l_precision)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LesionOptions {
    pub connectivity: Connectivity,
    /// Components smaller than this many pixels are ignored.
    pub min_size: usize,
}

impl Default for LesionOptions {
    fn default() -> Self {
        LesionOptions {
            connectivity: Connectivity::Eight,
            min_size: 1,
        }
    }
}

/// Returns a per-label flag: does this (large enough) component touch `other`?
fn overlaps(labels: &Labels, other: &[bool], min_size: usize) -> (usize, usize) {
    let sizes = labels.sizes();
    let mut hit = vec![false; labels.count + 1];
    for (&l, &o) in labels.labels.iter().zip(other) {
        if l != 0 && o {
            hit[l as usize] = true;
        }
    }
    let kept: Vec<usize> = (1..=labels.count).filter(|&l| sizes[l] >= min_size).collect();
    let hits = kept.iter().filter(|&&l| hit[l]).count();
    (kept.len(), hits)
}

pub fn lesion_metrics(
    pred: &BinaryMask,
    gt: &BinaryMask,
    options: LesionOptions,
) -> Result<LesionMetrics> {
    gt.dims().ensure_same(pred.dims())?;
    let gl_labels = connected_components(gt, options.connectivity);
    let pl_labels = connected_components(pred, options.connectivity);
    let (gl, ltp) = overlaps(&gl_labels, pred.bits(), options.min_size);
    let (pl, true_pred) = overlaps(&pl_labels, gt.bits(), options.min_size);
    let l_recall = if gl > 0 {
        ltp as f64 / gl as f64
    } else if pl == 0 {
        1.0
    } else {
        0.0
    };
    // No predicted lesions means no false lesions: precision is vacuously 1.
    let l_precision = if pl > 0 {
        true_pred as f64 / pl as f64
    } else {
        1.0
    };
    Ok(LesionMetrics {
        l_recall,
        l_precision,
        ltp,
        true_pred,
        gl,
        pl,
    })
}
