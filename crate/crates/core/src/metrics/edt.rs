//! Exact squared Euclidean distance transform (Felzenszwalb–Huttenlocher
//! lower envelope of parabolas, with exact rational breakpoints).

/// Stand-in for "no site on this line"; stays above any real squared distance.
const FAR: i64 = 1 << 50;

#[derive(Clone, Copy)]
enum Bound {
    NegInf,
    At(i128, i128),
    PosInf,
}

impl Bound {
    /// `num / den <= self` for `den > 0`.
    fn ge(self, num: i128, den: i128) -> bool {
        match self {
            Bound::NegInf => false,
            Bound::PosInf => true,
            Bound::At(n, d) => num * d <= n * den,
        }
    }

    /// `self < q`.
    fn lt(self, q: i128) -> bool {
        match self {
            Bound::NegInf => true,
            Bound::PosInf => false,
            Bound::At(n, d) => n < q * d,
        }
    }
}

/// `out[q] = min_p (q - p)² + f[p]`.
fn transform_1d(f: &[i64], out: &mut [i64], v: &mut [usize], z: &mut [Bound]) {
    let n = f.len();
    let key = |p: usize| f[p] as i128 + (p * p) as i128;
    let mut k = 0;
    v[0] = 0;
    z[0] = Bound::NegInf;
    z[1] = Bound::PosInf;
    for q in 1..n {
        let (num, den) = loop {
            let p = v[k];
            let num = key(q) - key(p);
            let den = 2 * (q - p) as i128;
            if k > 0 && z[k].ge(num, den) {
                k -= 1;
            } else {
                break (num, den);
            }
        };
        k += 1;
        v[k] = q;
        z[k] = Bound::At(num, den);
        z[k + 1] = Bound::PosInf;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1].lt(q as i128) {
            k += 1;
        }
        let d = q.abs_diff(v[k]) as i64;
        *o = d * d + f[v[k]];
    }
}

/// Squared distance from every pixel to the nearest `true` pixel of a
/// row-major `h × w` mask. Pixels of a mask without any `true` entry get a
/// value of at least `1 << 50`.
pub fn squared_edt(mask: &[bool], h: usize, w: usize) -> Vec<i64> {
    assert_eq!(mask.len(), h * w);
    let mut g: Vec<i64> = mask.iter().map(|&m| if m { 0 } else { FAR }).collect();
    let n = h.max(w);
    let (mut col, mut out) = (vec![0i64; n], vec![0i64; n]);
    let (mut v, mut z) = (vec![0usize; n], vec![Bound::NegInf; n + 1]);
    for x in 0..w {
        for y in 0..h {
            col[y] = g[y * w + x];
        }
        transform_1d(&col[..h], &mut out[..h], &mut v, &mut z);
        for y in 0..h {
            g[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        let row = &mut g[y * w..(y + 1) * w];
        col[..w].copy_from_slice(row);
        transform_1d(&col[..w], &mut out[..w], &mut v, &mut z);
        row.copy_from_slice(&out[..w]);
    }
    g
}

fn isqrt(v: i64) -> i64 {
    let mut r = (v as f64).sqrt() as i64;
    while r * r > v {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= v {
        r += 1;
    }
    r
}

/// For a pixel at squared distance `d2` from the mask, visit every mask pixel
/// at exactly that distance.
pub fn for_each_nearest(
    mask: &[bool],
    h: usize,
    w: usize,
    (y, x): (usize, usize),
    d2: i64,
    mut f: impl FnMut(usize),
) {
    let (y, x) = (y as i64, x as i64);
    for dy in 0..=isqrt(d2) {
        let rem = d2 - dy * dy;
        let dx = isqrt(rem);
        if dx * dx != rem {
            continue;
        }
        for (sy, sx) in [(1, 1), (1, -1), (-1, 1), (-1, -1)] {
            if (dy == 0 && sy < 0) || (dx == 0 && sx < 0) {
                continue;
            }
            let (ny, nx) = (y + sy * dy, x + sx * dx);
            if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                continue;
            }
            let i = ny as usize * w + nx as usize;
            if mask[i] {
                f(i);
            }
        }
    }
}
