//! Replays every golden fixture through the engine.

use std::collections::HashMap;
use std::path::Path;

use m2unet::arch::{mini_spec, ModelGraph};
use m2unet::data::{augment, AugmentConfig, Sample};
use m2unet::io::{read_fixture, NamedTensor};
use m2unet::metrics::{default_thresholds, pr_curve, read_pr_csv};
use m2unet::ops::{
    batchnorm_train, bilinear_upsample_x2, conv2d, sigmoid, BatchNormParams, ConvWeights,
};
use m2unet::Tensor;

use super::oracle;

pub const TOLERANCE: f64 = 1e-4;

type Named = HashMap<String, NamedTensor>;

fn load(dir: &Path, file: &str) -> Named {
    read_fixture(dir.join(file))
        .unwrap_or_else(|e| panic!("{file}: {e}"))
        .into_iter()
        .map(|t| (t.name.clone(), t))
        .collect()
}

fn tensor(m: &Named, name: &str) -> Tensor<f32> {
    m[name].to_tensor().unwrap()
}

fn diff(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter()
        .zip(b)
        .map(|(x, y)| (*x as f64 - *y as f64).abs())
        .fold(0.0, f64::max)
}

fn conv_case(dir: &Path, file: &str) -> f64 {
    let m = load(dir, file);
    let cfg = &m["config"].data;
    let w = ConvWeights::new(
        tensor(&m, "w"),
        cfg[2] as usize,
        cfg[0] as usize,
        cfg[1] as usize,
    )
    .unwrap();
    let y = conv2d(&tensor(&m, "x"), &w).unwrap();
    assert_eq!(y.shape().to_vec(), m["y"].dims);
    diff(y.data(), &m["y"].data)
}

fn bn_case(dir: &Path) -> f64 {
    let m = load(dir, "bn_train.bin");
    let x = tensor(&m, "x");
    let mut p = BatchNormParams::new(x.channels());
    p.gamma = m["gamma"].data.clone();
    p.beta = m["beta"].data.clone();
    let (y, _) = batchnorm_train(&x, &mut p).unwrap();
    diff(y.data(), &m["y"].data)
        .max(diff(&p.running_mean, &m["running_mean"].data))
        .max(diff(&p.running_var, &m["running_var"].data))
}

fn unary_case(dir: &Path, file: &str, f: impl Fn(&Tensor<f32>) -> Tensor<f32>) -> f64 {
    let m = load(dir, file);
    let y = f(&tensor(&m, "x"));
    assert_eq!(y.shape().to_vec(), m["y"].dims);
    diff(y.data(), &m["y"].data)
}

fn mini_case(dir: &Path) -> f64 {
    let m = load(dir, "m2u_mini.bin");
    let input = tensor(&m, "input");
    let mut g =
        ModelGraph::<f32>::from_spec(mini_spec(), [3, input.height(), input.width()]).unwrap();
    let weights: Vec<NamedTensor> = m.values().cloned().collect();
    g.install(&weights, |n| n != "input" && n != "prob")
        .unwrap();
    let prob = g.forward(&input).unwrap();
    assert_eq!(prob.shape().to_vec(), m["prob"].dims);
    diff(prob.data(), &m["prob"].data)
}

fn aug_case(dir: &Path) -> f64 {
    let m = load(dir, "aug_s42.bin");
    let s = Sample::new(oracle::aug::ID, tensor(&m, "image"), tensor(&m, "mask")).unwrap();
    let cfg = AugmentConfig {
        seed: oracle::aug::SEED,
        ..AugmentConfig::default()
    };
    let out = augment(&s, &cfg, oracle::aug::EPOCH).unwrap();
    diff(out.image.data(), &m["aug_image"].data).max(diff(out.mask.data(), &m["aug_mask"].data))
}

fn pr_case(dir: &Path) -> f64 {
    let expected = read_pr_csv(dir.join("pr.csv")).unwrap();
    let (prob, gt) = oracle::pr_inputs();
    let curve = pr_curve(&prob, &gt, &default_thresholds()).unwrap();
    assert_eq!(curve.points.len(), expected.len());
    curve
        .points
        .iter()
        .zip(&expected)
        .map(|(a, b)| {
            (a.threshold - b.threshold)
                .abs()
                .max((a.precision - b.precision).abs())
                .max((a.recall - b.recall).abs())
                .max((a.dice - b.dice).abs())
        })
        .fold(0.0, f64::max)
}

/// `(fixture, max |engine − reference|)` for every fixture.
pub fn report(dir: &Path) -> Vec<(&'static str, f64)> {
    vec![
        ("conv_s2", conv_case(dir, "conv_s2.bin")),
        ("dwconv_s2", conv_case(dir, "dwconv_s2.bin")),
        ("bn_train", bn_case(dir)),
        (
            "bilerp",
            unary_case(dir, "bilerp.bin", |x| bilinear_upsample_x2(x).unwrap()),
        ),
        ("sigmoid", unary_case(dir, "sigmoid.bin", sigmoid)),
        ("m2u_mini", mini_case(dir)),
        ("aug_s42", aug_case(dir)),
        ("pr", pr_case(dir)),
    ]
}
