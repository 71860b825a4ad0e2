//! Camouflaged-object-detection metrics: MAE, weighted F-measure, mean
//! E-measure and S-measure.
//!
//! All arithmetic is in `f64` regardless of the engine precision.

pub mod edt;
mod report;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use report::{evaluate_dataset, evaluate_pairs, ImageMetrics, MetricReport};

/// Denominator guard.
pub const DELTA: f64 = 1e-12;
/// `β²` of the weighted F-measure.
pub const BETA2: f64 = 1.0;
/// Object/region balance of the S-measure.
pub const ALPHA: f64 = 0.5;
/// Number of binarization thresholds of the E-measure.
pub const EM_THRESHOLDS: usize = 256;

/// A prediction in `[0, 1]` and a binary ground truth of equal size,
/// row-major `h × w`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskPair {
    h: usize,
    w: usize,
    pred: Vec<f64>,
    gt: Vec<bool>,
}

impl MaskPair {
    pub fn new(h: usize, w: usize, pred: Vec<f64>, gt: Vec<bool>) -> Result<Self> {
        if h == 0 || w == 0 || pred.len() != h * w || gt.len() != h * w {
            return Err(Error::invalid_arg(
                "MaskPair",
                format!(
                    "{h}x{w} needs {} values, got pred {} and gt {}",
                    h * w,
                    pred.len(),
                    gt.len()
                ),
            ));
        }
        if let Some(v) = pred.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid_arg("MaskPair", format!("prediction value {v} outside [0, 1]")));
        }
        Ok(MaskPair { h, w, pred, gt })
    }

    /// Ground truth from real values, thresholded at 0.5.
    pub fn from_soft_gt(h: usize, w: usize, pred: Vec<f64>, gt: &[f64]) -> Result<Self> {
        MaskPair::new(h, w, pred, gt.iter().map(|&g| g > 0.5).collect())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn pred(&self) -> &[f64] {
        &self.pred
    }

    pub fn gt(&self) -> &[bool] {
        &self.gt
    }

    pub fn transposed(&self) -> MaskPair {
        let (h, w) = (self.h, self.w);
        let idx = |i: usize| (i % h) * w + i / h;
        MaskPair {
            h: w,
            w: h,
            pred: (0..h * w).map(|i| self.pred[idx(i)]).collect(),
            gt: (0..h * w).map(|i| self.gt[idx(i)]).collect(),
        }
    }

    fn gt_f(&self, i: usize) -> f64 {
        self.gt[i] as u8 as f64
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub mae: f64,
    pub wfm: f64,
    pub em: f64,
    pub sm: f64,
}

pub fn mae(p: &MaskPair) -> f64 {
    let s: f64 = (0..p.pred.len()).map(|i| (p.pred[i] - p.gt_f(i)).abs()).sum();
    s / p.pred.len() as f64
}

/// Normalized 7×7 Gaussian with σ = 5.
fn gaussian_7x7() -> [[f64; 7]; 7] {
    let mut k = [[0.0; 7]; 7];
    let mut sum = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (y, x) = (i as f64 - 3.0, j as f64 - 3.0);
            *v = (-(x * x + y * y) / (2.0 * 25.0)).exp();
            sum += *v;
        }
    }
    for v in k.iter_mut().flatten() {
        *v /= sum;
    }
    k
}

/// Weighted F-measure, or `None` when the ground truth has no foreground.
///
/// Background errors are replaced by the error of the nearest foreground
/// pixel (the largest one when several are equally near), smoothed with a
/// Gaussian, capped by the raw error on the foreground and weighted by
/// distance on the background.
pub fn weighted_fmeasure(p: &MaskPair) -> Option<f64> {
    let (h, w) = (p.h, p.w);
    if !p.gt.iter().any(|&g| g) {
        return None;
    }
    let err: Vec<f64> = (0..h * w).map(|i| (p.pred[i] - p.gt_f(i)).abs()).collect();
    let d2 = edt::squared_edt(&p.gt, h, w);
    let mut et = err.clone();
    for i in 0..h * w {
        if !p.gt[i] {
            let mut e = f64::NEG_INFINITY;
            edt::for_each_nearest(&p.gt, h, w, (i / w, i % w), d2[i], |j| e = e.max(err[j]));
            et[i] = e;
        }
    }
    let k = gaussian_7x7();
    let mut ea = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ky, row) in k.iter().enumerate() {
                let yy = y as isize + ky as isize - 3;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                for (kx, kv) in row.iter().enumerate() {
                    let xx = x as isize + kx as isize - 3;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    acc += kv * et[yy as usize * w + xx as usize];
                }
            }
            ea[y * w + x] = acc;
        }
    }
    let (mut fg_err, mut fp, mut n_fg) = (0.0, 0.0, 0usize);
    for i in 0..h * w {
        if p.gt[i] {
            fg_err += err[i].min(ea[i]);
            n_fg += 1;
        } else {
            let d = (d2[i] as f64).sqrt();
            let b = 2.0 - ((0.5f64).ln() / 5.0 * d).exp();
            fp += err[i] * b;
        }
    }
    let tp = n_fg as f64 - fg_err;
    let recall = 1.0 - fg_err / n_fg as f64;
    let precision = tp / (tp + fp + DELTA);
    Some((1.0 + BETA2) * recall * precision / (recall + BETA2 * precision + DELTA))
}

/// Threshold slot of a prediction: the number of thresholds `k / 256`,
/// `k = 0..256`, that it strictly exceeds.
fn threshold_slot(v: f64) -> usize {
    ((v * EM_THRESHOLDS as f64).ceil().max(0.0) as usize).min(EM_THRESHOLDS)
}

/// Mean enhanced-alignment measure over 256 thresholds.
pub fn mean_emeasure(p: &MaskPair) -> f64 {
    let n = p.pred.len();
    let nf = n as f64;
    // hist[s][g]: pixels with slot s and ground truth g.
    let mut hist = vec![[0usize; 2]; EM_THRESHOLDS + 1];
    for i in 0..n {
        hist[threshold_slot(p.pred[i])][p.gt[i] as usize] += 1;
    }
    let n_gt = p.gt.iter().filter(|&&g| g).count();
    // Pixels binarized to 1 at threshold k are those with slot > k.
    let mut above = [0usize; 2];
    let mut total = 0.0;
    for k in (0..EM_THRESHOLDS).rev() {
        above[0] += hist[k + 1][0];
        above[1] += hist[k + 1][1];
        let on = above[0] + above[1];
        let score = if n_gt == 0 {
            (n - on) as f64
        } else if n_gt == n {
            on as f64
        } else {
            let mg = n_gt as f64 / nf;
            let mb = on as f64 / nf;
            // (gt, bin) combinations and their counts.
            let cells = [
                (0.0, 0.0, (n - n_gt) - above[0]),
                (0.0, 1.0, above[0]),
                (1.0, 0.0, n_gt - above[1]),
                (1.0, 1.0, above[1]),
            ];
            cells
                .iter()
                .map(|&(g, b, c)| {
                    let (pg, pb) = (g - mg, b - mb);
                    let xi = 2.0 * pg * pb / (pg * pg + pb * pb + DELTA);
                    (1.0 + xi).powi(2) / 4.0 * c as f64
                })
                .sum()
        };
        total += score / nf;
    }
    total / EM_THRESHOLDS as f64
}

/// Mean and unbiased standard deviation; the deviation is 0 for fewer
/// than two samples.
fn mean_std(vals: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let n = vals.clone().count();
    if n == 0 {
        return (0.0, 0.0, 0);
    }
    let m = vals.clone().sum::<f64>() / n as f64;
    let s = if n > 1 {
        (vals.map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    (m, s, n)
}

fn object_score(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let (x, sigma, n) = mean_std(vals);
    if n == 0 {
        return 0.0;
    }
    2.0 * x / (x * x + 1.0 + 2.0 * sigma + DELTA)
}

/// SSIM-style similarity of one rectangle `[y0, y1) × [x0, x1)`.
fn region_ssim(p: &MaskPair, (y0, y1): (usize, usize), (x0, x1): (usize, usize)) -> f64 {
    let n = (y1 - y0) * (x1 - x0);
    if n == 0 {
        return 0.0;
    }
    let idx = || (y0..y1).flat_map(move |y| (x0..x1).map(move |x| y * p.w + x));
    let nf = n as f64;
    let mx = idx().map(|i| p.pred[i]).sum::<f64>() / nf;
    let my = idx().map(|i| p.gt_f(i)).sum::<f64>() / nf;
    let denom = if n > 1 { nf - 1.0 } else { 1.0 };
    let (mut sx, mut sy, mut sxy) = (0.0, 0.0, 0.0);
    if n > 1 {
        for i in idx() {
            let (dx, dy) = (p.pred[i] - mx, p.gt_f(i) - my);
            sx += dx * dx;
            sy += dy * dy;
            sxy += dx * dy;
        }
    }
    let (sx, sy, sxy) = (sx / denom, sy / denom, sxy / denom);
    let alpha = 4.0 * mx * my * sxy;
    let beta = (mx * mx + my * my) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + DELTA)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Ground-truth centroid as split indices `(row, col)`: the rounded mean
/// foreground coordinate plus one, so the centroid falls in the top-left part.
fn centroid_split(p: &MaskPair) -> (usize, usize) {
    let (mut sy, mut sx, mut n) = (0.0, 0.0, 0usize);
    for (i, &g) in p.gt.iter().enumerate() {
        if g {
            sy += (i / p.w) as f64;
            sx += (i % p.w) as f64;
            n += 1;
        }
    }
    let r = |s: f64| (s / n as f64).round_ties_even() as usize + 1;
    (r(sy).min(p.h), r(sx).min(p.w))
}

/// Structure measure `α·S_o + (1-α)·S_r`, clamped to `[0, 1]`.
pub fn smeasure(p: &MaskPair) -> f64 {
    let n = p.pred.len() as f64;
    let mu = p.gt.iter().filter(|&&g| g).count() as f64 / n;
    let mean_pred = p.pred.iter().sum::<f64>() / n;
    if mu == 0.0 {
        return 1.0 - mean_pred;
    }
    if mu == 1.0 {
        return mean_pred;
    }
    let fg = object_score(p.gt.iter().zip(&p.pred).filter(|(g, _)| **g).map(|(_, &v)| v));
    let bg = object_score(p.gt.iter().zip(&p.pred).filter(|(g, _)| !**g).map(|(_, &v)| 1.0 - v));
    let so = mu * fg + (1.0 - mu) * bg;

    let (cy, cx) = centroid_split(p);
    let (h, w) = (p.h, p.w);
    let area = (h * w) as f64;
    let parts = [
        ((0, cy), (0, cx)),
        ((0, cy), (cx, w)),
        ((cy, h), (0, cx)),
        ((cy, h), (cx, w)),
    ];
    let sr: f64 = parts
        .iter()
        .map(|&(ys, xs)| {
            let weight = ((ys.1 - ys.0) * (xs.1 - xs.0)) as f64 / area;
            weight * region_ssim(p, ys, xs)
        })
        .sum();
    (ALPHA * so + (1.0 - ALPHA) * sr).clamp(0.0, 1.0)
}

/// All four metrics of one pair; `wfm` is 0 when it is undefined.
pub fn evaluate_pair(p: &MaskPair) -> (MetricValues, bool) {
    let wfm = weighted_fmeasure(p);
    (
        MetricValues {
            mae: mae(p),
            wfm: wfm.unwrap_or(0.0),
            em: mean_emeasure(p),
            sm: smeasure(p),
        },
        wfm.is_none(),
    )
}
