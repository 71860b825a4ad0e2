//! Synthetic camouflage: an object whose colour texture is drawn from the
//! background's distribution but whose depth stands out.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{io, save_sample, DatasetManifest, Sample, Split};
use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

/// Allowed foreground fraction of the mask.
pub const FG_FRACTION: (f64, f64) = (0.05, 0.4);
/// Largest mean RGB difference between object and background.
pub const RGB_CONTRAST_MAX: f64 = 0.1;
/// Smallest mean depth difference between object and background.
pub const DEPTH_CONTRAST_MIN: f64 = 0.3;

const MAX_ATTEMPTS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthStats {
    pub fg_fraction: f64,
    /// Mean over channels of `|mean_fg - mean_bg|`.
    pub rgb_contrast: f64,
    pub depth_contrast: f64,
}

fn region_means(t: &Tensor, c: usize, mask: &[bool]) -> (f64, f64) {
    let s = t.shape();
    let plane = &t.data()[c * s.plane()..(c + 1) * s.plane()];
    let (mut fg, mut bg, mut nf) = (0.0, 0.0, 0usize);
    for (&v, &m) in plane.iter().zip(mask) {
        if m {
            fg += v as f64;
            nf += 1;
        } else {
            bg += v as f64;
        }
    }
    let nb = mask.len() - nf;
    (fg / nf.max(1) as f64, bg / nb.max(1) as f64)
}

impl SynthStats {
    pub fn of(s: &Sample) -> Self {
        let mask: Vec<bool> = s.gt.data().iter().map(|&v| v > 0.5).collect();
        let fg_fraction = mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64;
        let rgb_contrast = (0..3)
            .map(|c| {
                let (f, b) = region_means(&s.rgb, c, &mask);
                (f - b).abs()
            })
            .sum::<f64>()
            / 3.0;
        let (f, b) = region_means(&s.depth, 0, &mask);
        SynthStats {
            fg_fraction,
            rgb_contrast,
            depth_contrast: (f - b).abs(),
        }
    }

    pub fn satisfied(&self) -> bool {
        (FG_FRACTION.0..=FG_FRACTION.1).contains(&self.fg_fraction)
            && self.rgb_contrast <= RGB_CONTRAST_MAX
            && self.depth_contrast >= DEPTH_CONTRAST_MIN
    }
}

/// Smooth noise in roughly `[-1, 1]`: a random `(cells+1)²` lattice,
/// bilinearly interpolated.
fn lattice_noise(rng: &mut impl Rng, size: usize, cells: usize) -> Vec<f64> {
    let g = cells + 1;
    let lattice: Vec<f64> = (0..g * g).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let step = cells as f64 / size as f64;
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        let fy = (y as f64 + 0.5) * step;
        let (y0, ty) = (fy as usize, fy.fract());
        for x in 0..size {
            let fx = (x as f64 + 0.5) * step;
            let (x0, tx) = (fx as usize, fx.fract());
            let at = |yy: usize, xx: usize| lattice[yy * g + xx];
            let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
            let bot = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

/// Two octaves of lattice noise.
fn texture(rng: &mut impl Rng, size: usize) -> Vec<f64> {
    let coarse = lattice_noise(rng, size, 4);
    let fine = lattice_noise(rng, size, (size / 4).max(2));
    coarse.iter().zip(&fine).map(|(a, b)| 0.6 * a + 0.4 * b).collect()
}

/// Star-shaped blob: an ellipse with a wobbling radius.
fn blob(rng: &mut impl Rng, size: usize) -> Vec<bool> {
    let n = size as f64;
    let (cy, cx) = (rng.gen_range(0.3..0.7) * n, rng.gen_range(0.3..0.7) * n);
    let (ry, rx) = (rng.gen_range(0.14..0.3) * n, rng.gen_range(0.14..0.3) * n);
    let rot = rng.gen_range(0.0..PI);
    let lobes = rng.gen_range(2..6) as f64;
    let (amp, phase) = (rng.gen_range(0.0..0.2), rng.gen_range(0.0..2.0 * PI));
    let mut mask = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
            let (u, v) = (dx * rot.cos() + dy * rot.sin(), -dx * rot.sin() + dy * rot.cos());
            let r = ((u / rx).powi(2) + (v / ry).powi(2)).sqrt();
            let ang = v.atan2(u);
            mask.push(r <= 1.0 + amp * (lobes * ang + phase).sin());
        }
    }
    mask
}

fn attempt(rng: &mut impl Rng, size: usize, id: &str) -> Result<Sample> {
    let mask = blob(rng, size);
    let base: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.3..0.7));
    let bg_tex = texture(rng, size);
    let fg_tex = texture(rng, size);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.8..1.2));
    let rgb = Tensor::from_fn(Shape::new(1, 3, size, size), |_, c, y, x| {
        let i = y * size + x;
        let t = if mask[i] { fg_tex[i] } else { bg_tex[i] };
        (base[c] + 0.18 * tint[c] * t).clamp(0.0, 1.0) as Real
    });
    let depth_noise = lattice_noise(rng, size, 4);
    let (near, far) = (rng.gen_range(0.7..0.85), rng.gen_range(0.15..0.3));
    let tilt = rng.gen_range(-0.08..0.08);
    let depth = Tensor::from_fn(Shape::new(1, 1, size, size), |_, _, y, x| {
        let i = y * size + x;
        let ramp = tilt * (y as f64 / size as f64 - 0.5);
        let v = if mask[i] { near } else { far } + ramp + 0.04 * depth_noise[i];
        v.clamp(0.0, 1.0) as Real
    });
    let gt = Tensor::from_fn(Shape::new(1, 1, size, size), |_, _, y, x| mask[y * size + x] as u8 as Real);
    Sample::new(id, io::quantize(&rgb), io::quantize(&depth), gt)
}

/// Sample `index` of the synthetic set for `seed`. Every sample comes from
/// its own stream, so it does not depend on how many others are drawn.
pub fn synth_sample(size: usize, index: usize, seed: u64) -> Result<Sample> {
    if size == 0 || size % 32 != 0 {
        return Err(Error::Dataset(format!("synthetic size {size} is not a positive multiple of 32")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let id = format!("synth_{index:04}");
    for _ in 0..MAX_ATTEMPTS {
        let s = attempt(&mut rng, size, &id)?;
        if SynthStats::of(&s).satisfied() {
            return Ok(s);
        }
    }
    Err(Error::Dataset(format!("{id}: no draw met the contrast contract")))
}

pub fn synth_samples(count: usize, size: usize, seed: u64) -> Result<Vec<Sample>> {
    (0..count).map(|i| synth_sample(size, i, seed)).collect()
}

/// Write a synthetic dataset under `root` and its manifest.
pub fn synth_generate(root: &Path, count: usize, size: usize, seed: u64, split: Split) -> Result<DatasetManifest> {
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        entries.push(save_sample(root, &synth_sample(size, i, seed)?)?);
    }
    let m = DatasetManifest {
        root: root.to_path_buf(),
        split,
        entries,
    };
    m.write()?;
    Ok(m)
}
