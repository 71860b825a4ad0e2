//! Random flip, rotation and crop, applied identically to all three maps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentSpec {
    pub flip_p: f64,
    /// Rotation drawn uniformly from `±max_rotation_deg`.
    pub max_rotation_deg: f64,
    /// Crop side as a fraction of the image, drawn from `[min_crop, 1]`.
    pub min_crop: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            flip_p: 0.5,
            max_rotation_deg: 15.0,
            min_crop: 0.75,
        }
    }
}

/// Output pixel centre -> source coordinate.
#[derive(Clone, Copy, Debug)]
struct Warp {
    flip: bool,
    cos: f64,
    sin: f64,
    scale: f64,
    off: (f64, f64),
    size: (f64, f64),
}

impl Warp {
    fn source(&self, y: usize, x: usize) -> (f64, f64) {
        let (h, w) = self.size;
        // Crop window.
        let cy = self.off.0 + (y as f64 + 0.5) * self.scale;
        let cx = self.off.1 + (x as f64 + 0.5) * self.scale;
        // Rotation about the image centre.
        let (dy, dx) = (cy - h / 2.0, cx - w / 2.0);
        let ry = self.sin * dx + self.cos * dy + h / 2.0;
        let mut rx = self.cos * dx - self.sin * dy + w / 2.0;
        if self.flip {
            rx = w - rx;
        }
        (ry - 0.5, rx - 0.5)
    }

    fn apply(&self, t: &Tensor, nearest: bool) -> Tensor {
        let s = t.shape();
        let clamp = |v: f64, n: usize| v.clamp(0.0, (n - 1) as f64);
        Tensor::from_fn(s, |n, c, y, x| {
            let (sy, sx) = self.source(y, x);
            let (sy, sx) = (clamp(sy, s.h), clamp(sx, s.w));
            if nearest {
                return t.at(n, c, sy.round() as usize, sx.round() as usize);
            }
            let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(s.h - 1), (x0 + 1).min(s.w - 1));
            let (fy, fx) = ((sy - y0 as f64) as Real, (sx - x0 as f64) as Real);
            let top = t.at(n, c, y0, x0) * (1.0 - fx) + t.at(n, c, y0, x1) * fx;
            let bot = t.at(n, c, y1, x0) * (1.0 - fx) + t.at(n, c, y1, x1) * fx;
            top * (1.0 - fy) + bot * fy
        })
    }

    fn sample(&self, s: &Sample) -> Sample {
        Sample {
            id: s.id.clone(),
            rgb: self.apply(&s.rgb, false),
            depth: self.apply(&s.depth, false),
            gt: self.apply(&s.gt, true),
        }
    }
}

/// Draw one geometric transform and apply it to the sample. The output has
/// the input size and a binary mask.
pub fn augment(sample: &Sample, spec: &AugmentSpec, rng: &mut impl Rng) -> Sample {
    let (h, w) = sample.size();
    let flip = rng.gen_bool(spec.flip_p.clamp(0.0, 1.0));
    let theta = if spec.max_rotation_deg > 0.0 {
        rng.gen_range(-spec.max_rotation_deg..=spec.max_rotation_deg).to_radians()
    } else {
        0.0
    };
    let scale = if spec.min_crop < 1.0 {
        rng.gen_range(spec.min_crop..=1.0)
    } else {
        1.0
    };
    let span = 1.0 - scale;
    let (oy, ox) = (rng.gen_range(0.0..=1.0) * span * h as f64, rng.gen_range(0.0..=1.0) * span * w as f64);
    Warp {
        flip,
        cos: theta.cos(),
        sin: theta.sin(),
        scale,
        off: (oy, ox),
        size: (h as f64, w as f64),
    }
    .sample(sample)
}

pub fn flip_horizontal(sample: &Sample) -> Sample {
    let (h, w) = sample.size();
    Warp {
        flip: true,
        cos: 1.0,
        sin: 0.0,
        scale: 1.0,
        off: (0.0, 0.0),
        size: (h as f64, w as f64),
    }
    .sample(sample)
}
