//! Replay of the augmentation stream for one sample: flips, rotation about
//! the image centre, a lattice-driven elastic distortion, then brightness,
//! contrast, saturation and hue jitter.

use super::*;
use rand::SeedableRng;

pub const SEED: u64 = 42;
pub const ID: &str = "aug";
pub const EPOCH: u64 = 0;
pub const SIZE: usize = 64;
const GRID: usize = 8;
const MAGNITUDE: i64 = 1;

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 14695981039346656037;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(1099511628211);
    }
    h
}

fn stream() -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (i, word) in [SEED, fnv1a(ID), EPOCH].iter().enumerate() {
        key[8 * i..8 * i + 8].copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Mirror without repeating the edge sample.
fn mirror(mut v: f64, n: usize) -> f64 {
    let last = (n - 1) as f64;
    while v < 0.0 || v > last {
        v = if v < 0.0 { -v } else { 2.0 * last - v };
    }
    v
}

type Plane = Vec<Vec<f64>>;

fn bilinear(p: &Plane, x: f64, y: f64) -> f64 {
    let (h, w) = (p.len(), p[0].len());
    let x0 = (x.floor() as usize).min(w - 1);
    let y0 = (y.floor() as usize).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    (1.0 - fx) * (1.0 - fy) * p[y0][x0]
        + fx * (1.0 - fy) * p[y0][x1]
        + (1.0 - fx) * fy * p[y1][x0]
        + fx * fy * p[y1][x1]
}

fn nearest(p: &Plane, x: f64, y: f64) -> f64 {
    let (h, w) = (p.len(), p[0].len());
    p[(y.round() as usize).min(h - 1)][(x.round() as usize).min(w - 1)]
}

fn warp(image: &mut [Plane], mask: &mut Plane, map: impl Fn(f64, f64) -> (f64, f64)) {
    let (h, w) = (mask.len(), mask[0].len());
    let old_img = image.to_vec();
    let old_mask = mask.clone();
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = map(x as f64, y as f64);
            let (sx, sy) = (mirror(sx, w), mirror(sy, h));
            for (c, plane) in image.iter_mut().enumerate() {
                plane[y][x] = bilinear(&old_img[c], sx, sy);
            }
            mask[y][x] = nearest(&old_mask, sx, sy);
        }
    }
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let maxc = r.max(g).max(b);
    let minc = r.min(g).min(b);
    if maxc == minc {
        return (0.0, 0.0, maxc);
    }
    let s = (maxc - minc) / maxc;
    let rc = (maxc - r) / (maxc - minc);
    let gc = (maxc - g) / (maxc - minc);
    let bc = (maxc - b) / (maxc - minc);
    let h = if r == maxc {
        bc - gc
    } else if g == maxc {
        2.0 + rc - bc
    } else {
        4.0 + gc - rc
    };
    ((h / 6.0).rem_euclid(1.0), s, maxc)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    if s == 0.0 {
        return (v, v, v);
    }
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match (i as i64).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

fn mix(x: f64, anchor: f64, f: f64) -> f64 {
    (anchor + f * (x - anchor)).clamp(0.0, 1.0)
}

/// Seeded RGB image and a mask of a few random thick strokes.
pub fn inputs() -> (Arr, Arr) {
    let mut r = rng(108);
    let image = uniform(&mut r, [1, 3, SIZE, SIZE], 0.0, 1.0);
    let mut mask = Arr::zeros([1, 1, SIZE, SIZE]);
    for _ in 0..4 {
        let (cx, cy, rad) = (
            unit(&mut r) * SIZE as f64,
            unit(&mut r) * SIZE as f64,
            3.0 + 6.0 * unit(&mut r),
        );
        for y in 0..SIZE {
            for x in 0..SIZE {
                if ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt() < rad {
                    mask.put(0, 0, y, x, 1.0);
                }
            }
        }
    }
    (image, mask)
}

pub fn fixture() -> Vec<u8> {
    let (image, mask) = inputs();
    let n = SIZE;
    let mut planes: Vec<Plane> = (0..3)
        .map(|c| {
            (0..n)
                .map(|y| (0..n).map(|x| image.get(0, c, y, x)).collect())
                .collect()
        })
        .collect();
    let mut m: Plane = (0..n)
        .map(|y| (0..n).map(|x| mask.get(0, 0, y, x)).collect())
        .collect();

    let mut r = stream();
    let flip_h = unit(&mut r) < 0.5;
    let flip_v = unit(&mut r) < 0.5;
    let angle = 15.0 * (2.0 * unit(&mut r) - 1.0);
    let mut nodes = vec![vec![(0.0, 0.0); GRID + 1]; GRID + 1];
    for row in nodes.iter_mut().take(GRID).skip(1) {
        for node in row.iter_mut().take(GRID).skip(1) {
            let dx = (unit(&mut r) * (2 * MAGNITUDE + 1) as f64).floor() as i64 - MAGNITUDE;
            let dy = (unit(&mut r) * (2 * MAGNITUDE + 1) as f64).floor() as i64 - MAGNITUDE;
            *node = (dx as f64, dy as f64);
        }
    }
    let bright = 1.0 + 0.3 * (2.0 * unit(&mut r) - 1.0);
    let contrast = 1.0 + 0.3 * (2.0 * unit(&mut r) - 1.0);
    let sat = 1.0 + 0.02 * (2.0 * unit(&mut r) - 1.0);
    let hue = 0.02 * (2.0 * unit(&mut r) - 1.0);

    for p in planes.iter_mut().chain(std::iter::once(&mut m)) {
        if flip_h {
            p.iter_mut().for_each(|row| row.reverse());
        }
        if flip_v {
            p.reverse();
        }
    }

    let c0 = (n - 1) as f64 / 2.0;
    let theta = angle * std::f64::consts::PI / 180.0;
    warp(&mut planes, &mut m, |x, y| {
        let (u, v) = (x - c0, y - c0);
        (
            theta.cos() * u + theta.sin() * v + c0,
            -theta.sin() * u + theta.cos() * v + c0,
        )
    });

    let spacing = (n - 1) as f64 / GRID as f64;
    warp(&mut planes, &mut m, |x, y| {
        let (fx, fy) = (x / spacing, y / spacing);
        let i = (fx.floor() as usize).min(GRID - 1);
        let j = (fy.floor() as usize).min(GRID - 1);
        let (tx, ty) = (fx - i as f64, fy - j as f64);
        let corner =
            |a: usize, b: usize, k: usize| if k == 0 { nodes[b][a].0 } else { nodes[b][a].1 };
        let field = |k| {
            (1.0 - tx) * (1.0 - ty) * corner(i, j, k)
                + tx * (1.0 - ty) * corner(i + 1, j, k)
                + (1.0 - tx) * ty * corner(i, j + 1, k)
                + tx * ty * corner(i + 1, j + 1, k)
        };
        (x + field(0), y + field(1))
    });

    for p in planes.iter_mut() {
        p.iter_mut()
            .flatten()
            .for_each(|v| *v = mix(*v, 0.0, bright));
    }
    let mut total = 0.0;
    for y in 0..n {
        for x in 0..n {
            total += luma(planes[0][y][x], planes[1][y][x], planes[2][y][x]);
        }
    }
    let mean = total / (n * n) as f64;
    for p in planes.iter_mut() {
        p.iter_mut()
            .flatten()
            .for_each(|v| *v = mix(*v, mean, contrast));
    }
    for y in 0..n {
        for x in 0..n {
            let l = luma(planes[0][y][x], planes[1][y][x], planes[2][y][x]);
            for p in planes.iter_mut() {
                p[y][x] = mix(p[y][x], l, sat);
            }
            let (h, s, v) = rgb_to_hsv(planes[0][y][x], planes[1][y][x], planes[2][y][x]);
            let (rr, gg, bb) = hsv_to_rgb((h + hue).rem_euclid(1.0), s, v);
            for (p, val) in planes.iter_mut().zip([rr, gg, bb]) {
                p[y][x] = val.clamp(0.0, 1.0);
            }
        }
    }

    let mut out_img = Arr::zeros([1, 3, n, n]);
    let mut out_mask = Arr::zeros([1, 1, n, n]);
    for y in 0..n {
        for x in 0..n {
            for c in 0..3 {
                out_img.put(0, c, y, x, planes[c][y][x]);
            }
            out_mask.put(0, 0, y, x, m[y][x]);
        }
    }
    encode_m2uf(&[
        Entry::arr("image", &image),
        Entry::arr("mask", &mask),
        Entry::vec(
            "draws",
            &[
                flip_h as u8 as f64,
                flip_v as u8 as f64,
                angle,
                bright,
                contrast,
                sat,
                hue,
            ],
        ),
        Entry::arr("aug_image", &out_img),
        Entry::arr("aug_mask", &out_mask),
    ])
}
