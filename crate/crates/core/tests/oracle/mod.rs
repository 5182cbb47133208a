//! Reference implementations used to generate the golden fixtures.
//!
//! Everything here is written straight from the operator definitions as
//! plain nested loops in f64 and shares no code with the engine. Inputs
//! are drawn from seeded ChaCha8 streams and rounded to f32 so both sides
//! start from identical values.

#![allow(dead_code)]

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod aug;
pub mod mini;

#[derive(Clone, Debug, PartialEq)]
pub struct Arr {
    pub dims: [usize; 4],
    pub data: Vec<f64>,
}

impl Arr {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let [_, cc, hh, ww] = self.dims;
        ((n * cc + c) * hh + y) * ww + x
    }

    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(n, c, y, x)]
    }

    pub fn put(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(n, c, y, x);
        self.data[i] = v;
    }
}

/// Uniform `f64` in `[0, 1)` from the top 53 bits of one `u64` draw.
pub fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform values in `[lo, hi)`, rounded to f32 precision.
pub fn uniform(r: &mut ChaCha8Rng, dims: [usize; 4], lo: f64, hi: f64) -> Arr {
    let n = dims.iter().product();
    Arr {
        dims,
        data: (0..n)
            .map(|_| (lo + (hi - lo) * unit(r)) as f32 as f64)
            .collect(),
    }
}

/// Cross-correlation with zero padding; kernel dims `(c_out, c_in/groups, k, k)`.
pub fn conv(x: &Arr, w: &Arr, stride: usize, pad: usize, groups: usize) -> Arr {
    let [n, cin, h, wd] = x.dims;
    let [cout, cpg, k, _] = w.dims;
    assert_eq!(cpg * groups, cin);
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let out_per_group = cout / groups;
    let mut y = Arr::zeros([n, cout, ho, wo]);
    for b in 0..n {
        for co in 0..cout {
            let g = co / out_per_group;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..cpg {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.get(b, g * cpg + ci, iy as usize, ix as usize)
                                    * w.get(co, ci, ky, kx);
                            }
                        }
                    }
                    y.put(b, co, oy, ox, acc);
                }
            }
        }
    }
    y
}

pub fn bn_infer(x: &Arr, gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64], eps: f64) -> Arr {
    let mut y = x.clone();
    let [n, c, h, w] = x.dims;
    for b in 0..n {
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let v = (x.get(b, ch, i, j) - mean[ch]) / (var[ch] + eps).sqrt();
                    y.put(b, ch, i, j, gamma[ch] * v + beta[ch]);
                }
            }
        }
    }
    y
}

/// Batch statistics normalisation. Returns the output, the batch means and
/// the unbiased batch variances.
pub fn bn_train(x: &Arr, gamma: &[f64], beta: &[f64], eps: f64) -> (Arr, Vec<f64>, Vec<f64>) {
    let [n, c, h, w] = x.dims;
    let m = (n * h * w) as f64;
    let mut means = vec![0.0; c];
    let mut vars = vec![0.0; c];
    let mut y = x.clone();
    for ch in 0..c {
        let mut s = 0.0;
        for b in 0..n {
            for i in 0..h {
                for j in 0..w {
                    s += x.get(b, ch, i, j);
                }
            }
        }
        let mu = s / m;
        let mut ss = 0.0;
        for b in 0..n {
            for i in 0..h {
                for j in 0..w {
                    ss += (x.get(b, ch, i, j) - mu).powi(2);
                }
            }
        }
        let biased = ss / m;
        for b in 0..n {
            for i in 0..h {
                for j in 0..w {
                    let v = (x.get(b, ch, i, j) - mu) / (biased + eps).sqrt();
                    y.put(b, ch, i, j, gamma[ch] * v + beta[ch]);
                }
            }
        }
        means[ch] = mu;
        vars[ch] = ss / (m - 1.0);
    }
    (y, means, vars)
}

pub fn relu6(x: &Arr) -> Arr {
    Arr {
        dims: x.dims,
        data: x.data.iter().map(|v| v.max(0.0).min(6.0)).collect(),
    }
}

pub fn sigmoid(x: &Arr) -> Arr {
    Arr {
        dims: x.dims,
        data: x.data.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect(),
    }
}

/// ×2 bilinear upsampling, half-pixel centres, edge clamp.
pub fn upsample2(x: &Arr) -> Arr {
    let [n, c, h, w] = x.dims;
    let mut y = Arr::zeros([n, c, 2 * h, 2 * w]);
    let src = |o: usize, len: usize| -> (usize, usize, f64) {
        let s = ((o as f64 + 0.5) * 0.5 - 0.5).clamp(0.0, (len - 1) as f64);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(len - 1);
        (lo, hi, s - lo as f64)
    };
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..2 * h {
                let (y0, y1, wy) = src(oy, h);
                for ox in 0..2 * w {
                    let (x0, x1, wx) = src(ox, w);
                    let v = (1.0 - wy) * (1.0 - wx) * x.get(b, ch, y0, x0)
                        + (1.0 - wy) * wx * x.get(b, ch, y0, x1)
                        + wy * (1.0 - wx) * x.get(b, ch, y1, x0)
                        + wy * wx * x.get(b, ch, y1, x1);
                    y.put(b, ch, oy, ox, v);
                }
            }
        }
    }
    y
}

pub fn concat(a: &Arr, b: &Arr) -> Arr {
    let [n, ca, h, w] = a.dims;
    let cb = b.dims[1];
    let mut y = Arr::zeros([n, ca + cb, h, w]);
    for i in 0..n {
        for c in 0..ca + cb {
            for yy in 0..h {
                for xx in 0..w {
                    let v = if c < ca {
                        a.get(i, c, yy, xx)
                    } else {
                        b.get(i, c - ca, yy, xx)
                    };
                    y.put(i, c, yy, xx, v);
                }
            }
        }
    }
    y
}

pub fn add(a: &Arr, b: &Arr) -> Arr {
    Arr {
        dims: a.dims,
        data: a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect(),
    }
}

/// One fixture tensor before serialisation.
pub struct Entry {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

impl Entry {
    pub fn arr(name: &str, a: &Arr) -> Self {
        Self {
            name: name.into(),
            dims: a.dims.to_vec(),
            values: a.data.clone(),
        }
    }

    pub fn vec(name: &str, v: &[f64]) -> Self {
        Self {
            name: name.into(),
            dims: vec![v.len()],
            values: v.to_vec(),
        }
    }
}

/// `"M2UF"`, u32 version 1, u32 count, then per tensor: u32 name length,
/// name, u8 rank, u32 dims, f32 values; all little-endian.
pub fn encode_m2uf(entries: &[Entry]) -> Vec<u8> {
    let mut out = b"M2UF".to_vec();
    out.extend(1u32.to_le_bytes());
    out.extend((entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend((e.name.len() as u32).to_le_bytes());
        out.extend(e.name.as_bytes());
        out.push(e.dims.len() as u8);
        for d in &e.dims {
            out.extend((*d as u32).to_le_bytes());
        }
        for v in &e.values {
            out.extend((*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn conv_s2() -> Vec<u8> {
    let mut r = rng(101);
    let x = uniform(&mut r, [2, 3, 9, 11], -1.0, 1.0);
    let w = uniform(&mut r, [4, 3, 3, 3], -0.5, 0.5);
    let y = conv(&x, &w, 2, 1, 1);
    encode_m2uf(&[
        Entry::arr("x", &x),
        Entry::arr("w", &w),
        Entry::vec("config", &[2.0, 1.0, 1.0]),
        Entry::arr("y", &y),
    ])
}

pub fn dwconv_s2() -> Vec<u8> {
    let mut r = rng(102);
    let x = uniform(&mut r, [2, 6, 10, 10], -1.0, 1.0);
    let w = uniform(&mut r, [6, 1, 3, 3], -0.5, 0.5);
    let y = conv(&x, &w, 2, 1, 6);
    encode_m2uf(&[
        Entry::arr("x", &x),
        Entry::arr("w", &w),
        Entry::vec("config", &[2.0, 1.0, 6.0]),
        Entry::arr("y", &y),
    ])
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

pub fn bn_train_case() -> Vec<u8> {
    let mut r = rng(103);
    let x = uniform(&mut r, [3, 4, 5, 6], -2.0, 3.0);
    let gamma = uniform(&mut r, [1, 1, 1, 4], 0.5, 1.5).data;
    let beta = uniform(&mut r, [1, 1, 1, 4], -0.5, 0.5).data;
    let (y, mean, var) = bn_train(&x, &gamma, &beta, BN_EPS);
    let rm: Vec<f64> = mean.iter().map(|m| BN_MOMENTUM * m).collect();
    let rv: Vec<f64> = var
        .iter()
        .map(|v| (1.0 - BN_MOMENTUM) + BN_MOMENTUM * v)
        .collect();
    encode_m2uf(&[
        Entry::arr("x", &x),
        Entry::vec("gamma", &gamma),
        Entry::vec("beta", &beta),
        Entry::arr("y", &y),
        Entry::vec("running_mean", &rm),
        Entry::vec("running_var", &rv),
    ])
}

pub fn bilerp() -> Vec<u8> {
    let mut r = rng(104);
    let x = uniform(&mut r, [1, 2, 5, 7], -1.0, 1.0);
    encode_m2uf(&[Entry::arr("x", &x), Entry::arr("y", &upsample2(&x))])
}

pub fn sigmoid_case() -> Vec<u8> {
    let mut r = rng(105);
    let mut x = uniform(&mut r, [1, 1, 4, 8], -8.0, 8.0);
    x.data[..6].copy_from_slice(&[-100.0, -30.0, 0.0, 30.0, 100.0, 1e-3]);
    encode_m2uf(&[Entry::arr("x", &x), Entry::arr("y", &sigmoid(&x))])
}

/// Seeded scores and labels for the PR-curve fixture.
pub fn pr_inputs() -> (Vec<f32>, Vec<f32>) {
    let mut r = rng(106);
    let n = 4096;
    let gt: Vec<f32> = (0..n)
        .map(|_| if unit(&mut r) < 0.2 { 1.0 } else { 0.0 })
        .collect();
    let prob = gt
        .iter()
        .map(|g| (0.3 * *g as f64 + 0.7 * unit(&mut r)) as f32)
        .collect();
    (prob, gt)
}

/// `threshold,precision,recall,dice` at thresholds `i / 256`, `i = 1..=255`.
pub fn pr_csv() -> String {
    let (prob, gt) = pr_inputs();
    let mut out = String::from("threshold,precision,recall,dice\n");
    for i in 1..=255 {
        let t = i as f64 / 256.0;
        let (mut tp, mut fp, mut fnn) = (0u64, 0u64, 0u64);
        for (p, g) in prob.iter().zip(&gt) {
            let pred = *p as f64 >= t;
            let truth = *g == 1.0;
            if pred && truth {
                tp += 1;
            } else if pred {
                fp += 1;
            } else if truth {
                fnn += 1;
            }
        }
        let precision = if tp + fp == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fnn == 0 {
            1.0
        } else {
            tp as f64 / (tp + fnn) as f64
        };
        let den = 2 * tp + fp + fnn;
        let dice = if den == 0 {
            1.0
        } else {
            2.0 * tp as f64 / den as f64
        };
        out.push_str(&format!("{t},{precision},{recall},{dice}\n"));
    }
    out
}

/// Every fixture file name with its generated bytes.
pub fn all_fixtures() -> Vec<(&'static str, Vec<u8>)> {
    vec![
        ("conv_s2.bin", conv_s2()),
        ("dwconv_s2.bin", dwconv_s2()),
        ("bn_train.bin", bn_train_case()),
        ("bilerp.bin", bilerp()),
        ("sigmoid.bin", sigmoid_case()),
        ("m2u_mini.bin", mini::fixture()),
        ("aug_s42.bin", aug::fixture()),
        ("pr.csv", pr_csv().into_bytes()),
    ]
}
