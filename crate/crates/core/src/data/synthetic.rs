//! Seeded fundus-like images with curved vessels, for tests and demos.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Sample;
use crate::error::Result;
use crate::io::{write_image, write_prob_map};
use crate::tensor::Tensor;

struct Vessel {
    vertical: bool,
    offset: f64,
    amplitude: f64,
    period: f64,
    phase: f64,
    half_width: f64,
}

/// An `h × w` sample: an orange-red background with a soft vignette and
/// noise, crossed by a few dark sinusoidal vessels that make up the mask.
pub fn synthetic_sample(id: &str, h: usize, w: usize, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_vessels = 3 + (h.max(w) / 64).min(6);
    let vessels: Vec<Vessel> = (0..n_vessels)
        .map(|i| {
            let vertical = i % 2 == 1;
            let span = if vertical { w } else { h } as f64;
            Vessel {
                vertical,
                offset: rng.random_range(0.15..0.85) * span,
                amplitude: rng.random_range(0.03..0.15) * span,
                period: rng.random_range(0.6..1.6) * span.max(16.0),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
                half_width: rng.random_range(0.8..1.8),
            }
        })
        .collect();
    let in_vessel = |y: f64, x: f64| {
        vessels.iter().any(|v| {
            let (along, across) = if v.vertical { (y, x) } else { (x, y) };
            let centre =
                v.offset + v.amplitude * (std::f64::consts::TAU * along / v.period + v.phase).sin();
            (across - centre).abs() <= v.half_width
        })
    };
    let mask = Tensor::from_fn([1, 1, h, w], |_, _, y, x| {
        in_vessel(y as f64, x as f64) as u8 as f32
    });
    let noise: Vec<f64> = (0..h * w).map(|_| rng.random_range(-0.03..0.03)).collect();
    let base = [0.62, 0.28, 0.12];
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let rmax = (cy * cy + cx * cx).sqrt().max(1.0);
    let image = Tensor::from_fn([1, 3, h, w], |_, c, y, x| {
        let r = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt() / rmax;
        let mut v = base[c] * (1.0 - 0.35 * r * r) + noise[y * w + x];
        if mask.at(0, 0, y, x) == 1.0 {
            v *= 0.55;
        }
        v.clamp(0.0, 1.0) as f32
    });
    Sample {
        id: id.to_string(),
        image,
        mask,
    }
}

/// Writes a custom-layout dataset of synthetic samples under `dir`:
/// `images/`, `labels/`, `train.txt` and `test.txt`. Ids are `s00`, `s01`, ….
pub fn synthetic_dataset(
    dir: &Path,
    n_train: usize,
    n_test: usize,
    h: usize,
    w: usize,
    seed: u64,
) -> Result<Vec<Sample>> {
    std::fs::create_dir_all(dir.join("images"))?;
    std::fs::create_dir_all(dir.join("labels"))?;
    let mut samples = Vec::new();
    let mut train = String::new();
    let mut test = String::new();
    for i in 0..n_train + n_test {
        let id = format!("s{i:02}");
        let s = synthetic_sample(&id, h, w, seed.wrapping_add(i as u64));
        write_image(dir.join("images").join(format!("{id}.png")), &s.image)?;
        write_prob_map(dir.join("labels").join(format!("{id}.png")), &s.mask)?;
        if i < n_train { &mut train } else { &mut test }.push_str(&format!("{id}\n"));
        samples.push(s);
    }
    std::fs::write(dir.join("train.txt"), train)?;
    std::fs::write(dir.join("test.txt"), test)?;
    Ok(samples)
}
