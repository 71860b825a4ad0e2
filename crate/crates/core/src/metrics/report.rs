use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate_pair, MaskPair, MetricValues};
use crate::data::{images_by_stem, io};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub name: String,
    #[serde(flatten)]
    pub values: MetricValues,
    /// The ground truth has no foreground, so `wfm` is undefined (reported as 0).
    pub wfm_undefined: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<ImageMetrics>,
    pub mean: MetricValues,
    pub count: usize,
    /// Files without a counterpart in the other directory.
    pub missing: Vec<String>,
}

/// Neumaier-compensated sum.
fn compensated_sum(vals: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for v in vals {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Score named pairs in parallel; rows come back sorted by name.
pub fn evaluate_pairs(pairs: Vec<(String, MaskPair)>) -> MetricReport {
    let mut rows: Vec<ImageMetrics> = pairs
        .into_par_iter()
        .map(|(name, p)| {
            let (values, wfm_undefined) = evaluate_pair(&p);
            ImageMetrics {
                name,
                values,
                wfm_undefined,
            }
        })
        .collect();
    rows.sort_by(|a, b| a.name.cmp(&b.name));
    let n = rows.len();
    let mean_of = |f: fn(&MetricValues) -> f64| {
        if n == 0 {
            0.0
        } else {
            compensated_sum(rows.iter().map(|r| f(&r.values))) / n as f64
        }
    };
    let mean = MetricValues {
        mae: mean_of(|v| v.mae),
        wfm: mean_of(|v| v.wfm),
        em: mean_of(|v| v.em),
        sm: mean_of(|v| v.sm),
    };
    MetricReport {
        rows,
        mean,
        count: n,
        missing: Vec::new(),
    }
}

fn load_pair(pred: &Path, gt: &Path) -> Result<MaskPair> {
    let g = io::read_gray(gt)?;
    let s = g.shape();
    let p = io::read_gray(pred)?.resized(s.h, s.w);
    let to64 = |t: &crate::Tensor| t.data().iter().map(|&v| (v as f64).clamp(0.0, 1.0)).collect::<Vec<f64>>();
    MaskPair::from_soft_gt(s.h, s.w, to64(&p), &to64(&g))
}

/// Score every prediction in `pred_dir` against the same-named mask in
/// `gt_dir`. Names present on one side only are listed in `missing`.
pub fn evaluate_dataset(pred_dir: impl AsRef<Path>, gt_dir: impl AsRef<Path>) -> Result<MetricReport> {
    let preds = images_by_stem(pred_dir.as_ref())?;
    let gts = images_by_stem(gt_dir.as_ref())?;
    let mut missing = Vec::new();
    let mut jobs = Vec::new();
    for (name, gp) in &gts {
        match preds.iter().find(|(n, _)| n == name) {
            Some((_, pp)) => jobs.push((name.clone(), pp.clone(), gp.clone())),
            None => missing.push(format!("{name} (no prediction)")),
        }
    }
    for (name, _) in &preds {
        if !gts.iter().any(|(n, _)| n == name) {
            missing.push(format!("{name} (no ground truth)"));
        }
    }
    let pairs = jobs
        .into_par_iter()
        .map(|(name, pp, gp)| Ok((name, load_pair(&pp, &gp)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut report = evaluate_pairs(pairs);
    missing.sort();
    report.missing = missing;
    Ok(report)
}

impl MetricReport {
    /// Tab-separated table with a final `MEAN` row, 6 decimals.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("filename\tmae\twfm\tem\tsm\n");
        let mut row = |name: &str, v: &MetricValues, flag: &str| {
            let _ = writeln!(out, "{name}\t{:.6}\t{:.6}{flag}\t{:.6}\t{:.6}", v.mae, v.wfm, v.em, v.sm);
        };
        for r in &self.rows {
            row(&r.name, &r.values, if r.wfm_undefined { "*" } else { "" });
        }
        row("MEAN", &self.mean, "");
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Dataset(e.to_string()))
    }

    pub fn undefined_wfm_count(&self) -> usize {
        self.rows.iter().filter(|r| r.wfm_undefined).count()
    }
}
