//! Random augmentation: flips, rotation, elastic grid distortion and color
//! jitter.
//!
//! Each sample's random stream is a ChaCha8 generator keyed by
//! `(seed, FNV-1a(id), epoch)`, so any sample can be replayed alone. Every
//! draw is one `f64` in `[0, 1)`, taken in this fixed order whatever the
//! configuration:
//!
//! 1. horizontal flip, 2. vertical flip, 3. rotation angle,
//! 4. elastic offsets: for each interior grid node in row-major order, dx
//!    then dy, 5. brightness, 6. contrast, 7. saturation, 8. hue.
//!
//! Geometry is computed in `f64` with reflected borders; the image is
//! sampled bilinearly and the mask by nearest neighbour so it stays binary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Angles are uniform in `[-rotation_deg, rotation_deg]`.
    pub rotation_deg: f64,
    pub flip_h_prob: f64,
    pub flip_v_prob: f64,
    pub c_brightness: f64,
    pub c_contrast: f64,
    pub c_saturation: f64,
    pub c_hue: f64,
    /// Number of grid cells per side.
    pub elastic_grid: usize,
    /// Node offsets are integers in `[-magnitude, magnitude]` pixels.
    pub elastic_magnitude: u32,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation_deg: 15.0,
            flip_h_prob: 0.5,
            flip_v_prob: 0.5,
            c_brightness: 0.3,
            c_contrast: 0.3,
            c_saturation: 0.02,
            c_hue: 0.02,
            elastic_grid: 8,
            elastic_magnitude: 1,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Every transform switched off.
    pub fn disabled() -> Self {
        Self {
            rotation_deg: 0.0,
            flip_h_prob: 0.0,
            flip_v_prob: 0.0,
            c_brightness: 0.0,
            c_contrast: 0.0,
            c_saturation: 0.0,
            c_hue: 0.0,
            elastic_grid: 8,
            elastic_magnitude: 0,
            seed: 0,
        }
    }
}

fn fnv1a64(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// The random stream of one sample in one epoch.
pub fn sample_stream(seed: u64, id: &str, epoch: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&fnv1a64(id).to_le_bytes());
    key[16..24].copy_from_slice(&epoch.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Concrete transform parameters for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentDraws {
    pub flip_h: bool,
    pub flip_v: bool,
    pub angle_deg: f64,
    /// `(dx, dy)` per interior node, row-major.
    pub offsets: Vec<(i64, i64)>,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue_shift: f64,
}

impl AugmentDraws {
    pub fn draw(cfg: &AugmentConfig, rng: &mut impl Rng) -> Self {
        let mut u = || rng.random::<f64>();
        let flip_h = u() < cfg.flip_h_prob;
        let flip_v = u() < cfg.flip_v_prob;
        let angle_deg = cfg.rotation_deg * (2.0 * u() - 1.0);
        let interior = cfg.elastic_grid.saturating_sub(1).pow(2);
        let m = cfg.elastic_magnitude as i64;
        let mut offset = || (u() * (2 * m + 1) as f64).floor() as i64 - m;
        let offsets = (0..interior).map(|_| (offset(), offset())).collect();
        let mut factor = |c: f64| 1.0 + c * (2.0 * u() - 1.0);
        let brightness = factor(cfg.c_brightness);
        let contrast = factor(cfg.c_contrast);
        let saturation = factor(cfg.c_saturation);
        let hue_shift = cfg.c_hue * (2.0 * u() - 1.0);
        Self {
            flip_h,
            flip_v,
            angle_deg,
            offsets,
            brightness,
            contrast,
            saturation,
            hue_shift,
        }
    }
}

/// Augments `sample` with its stream for `epoch`.
pub fn augment(sample: &Sample, cfg: &AugmentConfig, epoch: u64) -> Result<Sample> {
    let draws = AugmentDraws::draw(cfg, &mut sample_stream(cfg.seed, &sample.id, epoch));
    apply(sample, cfg, &draws)
}

struct Planes {
    h: usize,
    w: usize,
    data: Vec<Vec<f64>>,
}

impl Planes {
    fn from_tensor(t: &Tensor<f32>) -> Self {
        Self {
            h: t.height(),
            w: t.width(),
            data: (0..t.channels())
                .map(|c| t.plane(0, c).iter().map(|v| *v as f64).collect())
                .collect(),
        }
    }

    fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_fn([1, self.data.len(), self.h, self.w], |_, c, y, x| {
            self.data[c][y * self.w + x] as f32
        })
    }
}

fn reflect(v: f64, n: usize) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let period = 2.0 * (n - 1) as f64;
    let r = v.rem_euclid(period);
    if r > (n - 1) as f64 {
        period - r
    } else {
        r
    }
}

/// Backward-maps every output pixel through `src`: the image bilinearly,
/// the mask by nearest neighbour.
fn resample(image: &mut Planes, mask: &mut Planes, src: impl Fn(f64, f64) -> (f64, f64)) {
    let (h, w) = (image.h, image.w);
    let mut img_out = vec![vec![0.0; h * w]; image.data.len()];
    let mut mask_out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = src(x as f64, y as f64);
            let (sx, sy) = (reflect(sx, w), reflect(sy, h));
            let x0 = (sx.floor() as usize).min(w - 1);
            let y0 = (sy.floor() as usize).min(h - 1);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (tx, ty) = (sx - x0 as f64, sy - y0 as f64);
            for (out, p) in img_out.iter_mut().zip(&image.data) {
                let a = p[y0 * w + x0] + tx * (p[y0 * w + x1] - p[y0 * w + x0]);
                let b = p[y1 * w + x0] + tx * (p[y1 * w + x1] - p[y1 * w + x0]);
                out[y * w + x] = a + ty * (b - a);
            }
            let nx = (sx.round() as usize).min(w - 1);
            let ny = (sy.round() as usize).min(h - 1);
            mask_out[y * w + x] = mask.data[0][ny * w + nx];
        }
    }
    image.data = img_out;
    mask.data[0] = mask_out;
}

fn flip(p: &mut Planes, horizontal: bool) {
    let (h, w) = (p.h, p.w);
    for plane in &mut p.data {
        if horizontal {
            plane.chunks_mut(w).for_each(|row| row.reverse());
        } else {
            for y in 0..h / 2 {
                for x in 0..w {
                    plane.swap(y * w + x, (h - 1 - y) * w + x);
                }
            }
        }
    }
}

fn rotate(image: &mut Planes, mask: &mut Planes, angle_deg: f64) {
    let (cx, cy) = ((image.w - 1) as f64 / 2.0, (image.h - 1) as f64 / 2.0);
    let (s, c) = angle_deg.to_radians().sin_cos();
    resample(image, mask, |x, y| {
        let (dx, dy) = (x - cx, y - cy);
        (c * dx + s * dy + cx, -s * dx + c * dy + cy)
    });
}

/// Displacement field from a `(g+1) × (g+1)` node lattice: border nodes
/// stay put, interior nodes carry the drawn offsets, and pixels in between
/// interpolate bilinearly.
fn elastic(image: &mut Planes, mask: &mut Planes, g: usize, offsets: &[(i64, i64)]) {
    let (h, w) = (image.h, image.w);
    let node = |i: usize, j: usize| -> (f64, f64) {
        if i == 0 || j == 0 || i == g || j == g {
            (0.0, 0.0)
        } else {
            let (dx, dy) = offsets[(j - 1) * (g - 1) + (i - 1)];
            (dx as f64, dy as f64)
        }
    };
    let cell = |v: f64, n: usize| -> (usize, f64) {
        let f = if n > 1 {
            v * g as f64 / (n - 1) as f64
        } else {
            0.0
        };
        let i = (f.floor() as usize).min(g - 1);
        (i, f - i as f64)
    };
    resample(image, mask, |x, y| {
        let (i, tx) = cell(x, w);
        let (j, ty) = cell(y, h);
        let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
        let (a, b, c, d) = (
            node(i, j),
            node(i + 1, j),
            node(i, j + 1),
            node(i + 1, j + 1),
        );
        let dx = lerp(lerp(a.0, b.0, tx), lerp(c.0, d.0, tx), ty);
        let dy = lerp(lerp(a.1, b.1, tx), lerp(c.1, d.1, tx), ty);
        (x + dx, y + dy)
    });
}

fn gray(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

fn blend(x: f64, reference: f64, f: f64) -> f64 {
    (f * x + (1.0 - f) * reference).clamp(0.0, 1.0)
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let s = if max > 0.0 { d / max } else { 0.0 };
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match (sector as i64).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

fn jitter(p: &mut Planes, d: &AugmentDraws) {
    let n = p.h * p.w;
    for plane in &mut p.data {
        plane
            .iter_mut()
            .for_each(|v| *v = blend(*v, 0.0, d.brightness));
    }
    if p.data.len() != 3 {
        let mean = p.data[0].iter().sum::<f64>() / n as f64;
        p.data[0]
            .iter_mut()
            .for_each(|v| *v = blend(*v, mean, d.contrast));
        return;
    }
    let mean = (0..n)
        .map(|i| gray(p.data[0][i], p.data[1][i], p.data[2][i]))
        .sum::<f64>()
        / n as f64;
    for plane in &mut p.data {
        plane
            .iter_mut()
            .for_each(|v| *v = blend(*v, mean, d.contrast));
    }
    for i in 0..n {
        let g = gray(p.data[0][i], p.data[1][i], p.data[2][i]);
        for c in 0..3 {
            p.data[c][i] = blend(p.data[c][i], g, d.saturation);
        }
    }
    if d.hue_shift != 0.0 {
        for i in 0..n {
            let (h, s, v) = rgb_to_hsv(p.data[0][i], p.data[1][i], p.data[2][i]);
            let (r, g, b) = hsv_to_rgb((h + d.hue_shift).rem_euclid(1.0), s, v);
            p.data[0][i] = r.clamp(0.0, 1.0);
            p.data[1][i] = g.clamp(0.0, 1.0);
            p.data[2][i] = b.clamp(0.0, 1.0);
        }
    }
}

/// Applies explicit draws.
pub fn apply(sample: &Sample, cfg: &AugmentConfig, d: &AugmentDraws) -> Result<Sample> {
    let mut image = Planes::from_tensor(&sample.image);
    let mut mask = Planes::from_tensor(&sample.mask);
    if d.flip_h {
        flip(&mut image, true);
        flip(&mut mask, true);
    }
    if d.flip_v {
        flip(&mut image, false);
        flip(&mut mask, false);
    }
    if d.angle_deg != 0.0 {
        rotate(&mut image, &mut mask, d.angle_deg);
    }
    if cfg.elastic_grid >= 2 && d.offsets.iter().any(|o| *o != (0, 0)) {
        elastic(&mut image, &mut mask, cfg.elastic_grid, &d.offsets);
    }
    jitter(&mut image, d);
    Sample::new(sample.id.clone(), image.to_tensor(), mask.to_tensor())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_sample;

    #[test]
    fn disabled_is_identity() {
        let s = synthetic_sample("a", 32, 48, 3);
        assert_eq!(augment(&s, &AugmentConfig::disabled(), 5).unwrap(), s);
    }

    #[test]
    fn double_flip_is_identity() {
        let s = synthetic_sample("a", 16, 32, 1);
        let cfg = AugmentConfig::disabled();
        let mut d = AugmentDraws::draw(&cfg, &mut sample_stream(0, "a", 0));
        d.flip_h = true;
        let once = apply(&s, &cfg, &d).unwrap();
        assert_ne!(once, s);
        assert_eq!(apply(&once, &cfg, &d).unwrap(), s);
    }

    #[test]
    fn streams_replay_and_differ() {
        let s = synthetic_sample("img", 32, 32, 7);
        let cfg = AugmentConfig {
            seed: 42,
            ..AugmentConfig::default()
        };
        let a = augment(&s, &cfg, 0).unwrap();
        assert_eq!(a, augment(&s, &cfg, 0).unwrap());
        assert_ne!(a, augment(&s, &cfg, 1).unwrap());
        assert!(a.mask.data().iter().all(|v| *v == 0.0 || *v == 1.0));
        assert!(a.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn draws_are_in_range() {
        let cfg = AugmentConfig::default();
        for e in 0..50 {
            let d = AugmentDraws::draw(&cfg, &mut sample_stream(1, "x", e));
            assert!(d.angle_deg.abs() <= 15.0);
            assert_eq!(d.offsets.len(), 49);
            assert!(d.offsets.iter().all(|(x, y)| x.abs() <= 1 && y.abs() <= 1));
            assert!((0.7..=1.3).contains(&d.brightness));
            assert!((0.98..=1.02).contains(&d.saturation));
            assert!(d.hue_shift.abs() <= 0.02);
        }
    }

    #[test]
    fn hsv_round_trip() {
        for (r, g, b) in [
            (0.2, 0.5, 0.9),
            (1.0, 0.0, 0.0),
            (0.3, 0.3, 0.3),
            (0.9, 0.8, 0.1),
        ] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 1e-12 && (g - g2).abs() < 1e-12 && (b - b2).abs() < 1e-12);
        }
    }

    #[test]
    fn reflect_borders() {
        assert_eq!(reflect(-1.0, 5), 1.0);
        assert_eq!(reflect(5.0, 5), 3.0);
        assert_eq!(reflect(2.5, 5), 2.5);
        assert_eq!(reflect(-3.0, 1), 0.0);
    }
}
