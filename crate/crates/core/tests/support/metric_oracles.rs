//! Direct-from-definition metric implementations on 2-D grids. Brute-force
//! nearest-neighbour search, explicit thresholds and explicit sub-matrices;
//! nothing is shared with the library.
#![allow(dead_code)]

pub type Grid = Vec<Vec<f64>>;

const EPS: f64 = 1e-12;

pub fn grid(h: usize, w: usize, flat: &[f64]) -> Grid {
    (0..h).map(|y| flat[y * w..(y + 1) * w].to_vec()).collect()
}

fn dims(g: &Grid) -> (usize, usize) {
    (g.len(), g[0].len())
}

fn mean(vals: &[f64]) -> f64 {
    vals.iter().sum::<f64>() / vals.len() as f64
}

pub fn mae(pred: &Grid, gt: &Grid) -> f64 {
    let (h, w) = dims(gt);
    let mut s = 0.0;
    for y in 0..h {
        for x in 0..w {
            s += (pred[y][x] - gt[y][x]).abs();
        }
    }
    s / (h * w) as f64
}

/// `None` for an empty ground truth.
pub fn wfm(pred: &Grid, gt: &Grid) -> Option<f64> {
    let (h, w) = dims(gt);
    let fg: Vec<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .filter(|&(y, x)| gt[y][x] == 1.0)
        .collect();
    if fg.is_empty() {
        return None;
    }
    let e: Grid = (0..h).map(|y| (0..w).map(|x| (pred[y][x] - gt[y][x]).abs()).collect()).collect();
    // Propagated error and distance to the foreground.
    let mut et = e.clone();
    let mut dist = vec![vec![0.0; w]; h];
    for y in 0..h {
        for x in 0..w {
            if gt[y][x] == 1.0 {
                continue;
            }
            let d2 = |&(fy, fx): &(usize, usize)| {
                let (dy, dx) = (fy as i64 - y as i64, fx as i64 - x as i64);
                dy * dy + dx * dx
            };
            let best = fg.iter().map(d2).min().unwrap();
            et[y][x] = fg
                .iter()
                .filter(|p| d2(p) == best)
                .map(|&(fy, fx)| e[fy][fx])
                .fold(f64::MIN, f64::max);
            dist[y][x] = (best as f64).sqrt();
        }
    }
    let mut kernel = [[0.0f64; 7]; 7];
    let mut ksum = 0.0;
    for i in 0..7 {
        for j in 0..7 {
            let r2 = ((i as f64 - 3.0).powi(2) + (j as f64 - 3.0).powi(2)) as f64;
            kernel[i][j] = (-r2 / 50.0).exp();
            ksum += kernel[i][j];
        }
    }
    let mut ew = vec![vec![0.0; w]; h];
    for y in 0..h {
        for x in 0..w {
            let mut ea = 0.0;
            for i in 0..7 {
                for j in 0..7 {
                    let (yy, xx) = (y as i64 + i as i64 - 3, x as i64 + j as i64 - 3);
                    if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                        ea += kernel[i][j] / ksum * et[yy as usize][xx as usize];
                    }
                }
            }
            let min_e = if gt[y][x] == 1.0 && ea < e[y][x] { ea } else { e[y][x] };
            let b = if gt[y][x] == 1.0 {
                1.0
            } else {
                2.0 - (0.5f64.ln() / 5.0 * dist[y][x]).exp()
            };
            ew[y][x] = min_e * b;
        }
    }
    let (mut tp, mut fp, mut fg_ew) = (0.0, 0.0, Vec::new());
    for y in 0..h {
        for x in 0..w {
            if gt[y][x] == 1.0 {
                tp += 1.0 - ew[y][x];
                fg_ew.push(ew[y][x]);
            } else {
                fp += ew[y][x];
            }
        }
    }
    let r = 1.0 - mean(&fg_ew);
    let p = tp / (tp + fp + EPS);
    Some(2.0 * r * p / (r + p + EPS))
}

/// One threshold at a time: a pixel is on when `pred > k / 256`.
pub fn em(pred: &Grid, gt: &Grid) -> f64 {
    let (h, w) = dims(gt);
    let n = (h * w) as f64;
    let g_all: Vec<f64> = gt.iter().flatten().copied().collect();
    let g_mean = mean(&g_all);
    let mut total = 0.0;
    for k in 0..256 {
        let t = k as f64 / 256.0;
        let bin: Grid = pred.iter().map(|row| row.iter().map(|&v| (v > t) as u8 as f64).collect()).collect();
        let b_all: Vec<f64> = bin.iter().flatten().copied().collect();
        let b_mean = mean(&b_all);
        let mut s = 0.0;
        for y in 0..h {
            for x in 0..w {
                s += if g_mean == 0.0 {
                    1.0 - bin[y][x]
                } else if g_mean == 1.0 {
                    bin[y][x]
                } else {
                    let a = gt[y][x] - g_mean;
                    let b = bin[y][x] - b_mean;
                    let xi = 2.0 * a * b / (a * a + b * b + EPS);
                    (1.0 + xi) * (1.0 + xi) / 4.0
                };
            }
        }
        total += s / n;
    }
    total / 256.0
}

fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn object(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let m = mean(v);
    2.0 * m / (m * m + 1.0 + 2.0 * sample_std(v) + EPS)
}

fn ssim(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len();
    if n == 0 {
        return 0.0;
    }
    let (mx, my) = (mean(p), mean(g));
    let d = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let (mut sx, mut sy, mut sxy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        sx += (p[i] - mx).powi(2) / d;
        sy += (g[i] - my).powi(2) / d;
        sxy += (p[i] - mx) * (g[i] - my) / d;
    }
    let a = 4.0 * mx * my * sxy;
    let b = (mx * mx + my * my) * (sx + sy);
    if a != 0.0 {
        a / (b + EPS)
    } else if b == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn block(m: &Grid, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Vec<f64> {
    rows.flat_map(|y| cols.clone().map(move |x| m[y][x])).collect()
}

pub fn sm(pred: &Grid, gt: &Grid) -> f64 {
    let (h, w) = dims(gt);
    let all_p: Vec<f64> = pred.iter().flatten().copied().collect();
    let all_g: Vec<f64> = gt.iter().flatten().copied().collect();
    let mu = mean(&all_g);
    if mu == 0.0 {
        return 1.0 - mean(&all_p);
    }
    if mu == 1.0 {
        return mean(&all_p);
    }
    let fg: Vec<f64> = all_p.iter().zip(&all_g).filter(|(_, &g)| g == 1.0).map(|(&p, _)| p).collect();
    let bg: Vec<f64> = all_p.iter().zip(&all_g).filter(|(_, &g)| g == 0.0).map(|(&p, _)| 1.0 - p).collect();
    let so = mu * object(&fg) + (1.0 - mu) * object(&bg);

    let (mut ys, mut xs) = (Vec::new(), Vec::new());
    for y in 0..h {
        for x in 0..w {
            if gt[y][x] == 1.0 {
                ys.push(y as f64);
                xs.push(x as f64);
            }
        }
    }
    let cy = (mean(&ys).round_ties_even() as usize + 1).min(h);
    let cx = (mean(&xs).round_ties_even() as usize + 1).min(w);
    let area = (h * w) as f64;
    let mut sr = 0.0;
    for (r, c) in [(0..cy, 0..cx), (0..cy, cx..w), (cy..h, 0..cx), (cy..h, cx..w)] {
        let wgt = (r.len() * c.len()) as f64 / area;
        sr += wgt * ssim(&block(pred, r.clone(), c.clone()), &block(gt, r, c));
    }
    (0.5 * so + 0.5 * sr).clamp(0.0, 1.0)
}

/// Every 3×3 binary mask, as a row-major bit pattern.
pub fn binary_3x3(bits: u32) -> Vec<f64> {
    (0..9).map(|i| ((bits >> i) & 1) as f64).collect()
}
