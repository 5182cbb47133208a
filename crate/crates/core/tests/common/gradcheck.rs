//! Central-difference gradient checks in f64.
//!
//! Each operator is reduced to a scalar `⟨r, op(x)⟩` with a fixed random
//! `r`, so the analytic side is the operator's vector-Jacobian product with
//! `r`. Errors are norm-wise: `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.

use m2unet::arch::{mini_spec, ModelGraph};
use m2unet::loss::{bce_grad, bce_loss, jbce_grad, jbce_loss, soft_jaccard, soft_jaccard_grad};
use m2unet::ops::{
    add_residual, batchnorm_infer, batchnorm_infer_backward, batchnorm_train,
    batchnorm_train_backward, bilinear_upsample_x2, bilinear_upsample_x2_backward, concat_backward,
    concat_channels, conv2d, conv2d_backward, relu6, relu6_backward, sigmoid, sigmoid_backward,
    BatchNormParams, BnMode, ConvWeights,
};
use m2unet::train::init_scratch;
use m2unet::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const OPERATOR_TOL: f64 = 1e-5;
pub const GRAPH_TOL: f64 = 1e-4;
const H: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub rel_err: f64,
    pub tol: f64,
}

impl Check {
    pub fn ok(&self) -> bool {
        self.rel_err < self.tol
    }
}

pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let d: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&d) / scale
    }
}

/// Central differences of `f` around `x`.
pub fn numeric(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut v = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = v[i];
            v[i] = orig + H;
            let up = f(&v);
            v[i] = orig - H;
            let down = f(&v);
            v[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_vec(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

fn rand_tensor(r: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::new(shape, rand_vec(r, shape.iter().product(), lo, hi)).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn with_data(shape: [usize; 4], v: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, v.to_vec()).unwrap()
}

fn check(name: &str, analytic: &[f64], numeric: Vec<f64>, tol: f64) -> Check {
    Check {
        name: name.to_string(),
        rel_err: rel_err(analytic, &numeric),
        tol,
    }
}

fn conv_checks(
    name: &str,
    seed: u64,
    x_shape: [usize; 4],
    k_shape: [usize; 4],
    groups: usize,
    stride: usize,
) -> Vec<Check> {
    let mut r = rng(seed);
    let x = rand_tensor(&mut r, x_shape, -1.0, 1.0);
    let k = rand_tensor(&mut r, k_shape, -1.0, 1.0);
    let pad = k_shape[2] / 2;
    let w = ConvWeights::new(k.clone(), groups, stride, pad).unwrap();
    let y = conv2d(&x, &w).unwrap();
    let rr = rand_tensor(&mut r, y.shape(), -1.0, 1.0);
    let (dx, dk) = conv2d_backward(&x, &w, &rr).unwrap();
    let fx = |v: &[f64]| {
        dot(
            rr.data(),
            conv2d(&with_data(x_shape, v), &w).unwrap().data(),
        )
    };
    let fk = |v: &[f64]| {
        let w = ConvWeights::new(with_data(k_shape, v), groups, stride, pad).unwrap();
        dot(rr.data(), conv2d(&x, &w).unwrap().data())
    };
    vec![
        check(
            &format!("{name} dx"),
            dx.data(),
            numeric(x.data(), fx),
            OPERATOR_TOL,
        ),
        check(
            &format!("{name} dkernel"),
            dk.data(),
            numeric(k.data(), fk),
            OPERATOR_TOL,
        ),
    ]
}

fn bn_params(r: &mut ChaCha8Rng, c: usize) -> BatchNormParams<f64> {
    let mut p = BatchNormParams::new(c);
    p.gamma = rand_vec(r, c, 0.5, 1.5);
    p.beta = rand_vec(r, c, -0.5, 0.5);
    p.running_mean = rand_vec(r, c, -0.5, 0.5);
    p.running_var = rand_vec(r, c, 0.5, 1.5);
    p
}

fn bn_checks() -> Vec<Check> {
    let mut r = rng(11);
    let shape = [2, 3, 4, 5];
    let x = rand_tensor(&mut r, shape, -2.0, 2.0);
    let p = bn_params(&mut r, 3);
    let rr = rand_tensor(&mut r, shape, -1.0, 1.0);
    let mut out = Vec::new();

    let train = |x: &Tensor<f64>, p: &BatchNormParams<f64>| {
        let mut q = p.clone();
        batchnorm_train(x, &mut q).unwrap()
    };
    let (_, saved) = train(&x, &p);
    let (dx, dg, db) = batchnorm_train_backward(&saved, &p.gamma, &rr).unwrap();
    out.push(check(
        "batchnorm train dx",
        dx.data(),
        numeric(x.data(), |v| {
            dot(rr.data(), train(&with_data(shape, v), &p).0.data())
        }),
        OPERATOR_TOL,
    ));
    out.push(check(
        "batchnorm train dgamma",
        &dg,
        numeric(&p.gamma, |v| {
            let mut q = p.clone();
            q.gamma = v.to_vec();
            dot(rr.data(), train(&x, &q).0.data())
        }),
        OPERATOR_TOL,
    ));
    out.push(check(
        "batchnorm train dbeta",
        &db,
        numeric(&p.beta, |v| {
            let mut q = p.clone();
            q.beta = v.to_vec();
            dot(rr.data(), train(&x, &q).0.data())
        }),
        OPERATOR_TOL,
    ));

    let (dx, dg, db) = batchnorm_infer_backward(&x, &p, &rr).unwrap();
    out.push(check(
        "batchnorm infer dx",
        dx.data(),
        numeric(x.data(), |v| {
            dot(
                rr.data(),
                batchnorm_infer(&with_data(shape, v), &p).unwrap().data(),
            )
        }),
        OPERATOR_TOL,
    ));
    out.push(check(
        "batchnorm infer dgamma",
        &dg,
        numeric(&p.gamma, |v| {
            let mut q = p.clone();
            q.gamma = v.to_vec();
            dot(rr.data(), batchnorm_infer(&x, &q).unwrap().data())
        }),
        OPERATOR_TOL,
    ));
    out.push(check(
        "batchnorm infer dbeta",
        &db,
        numeric(&p.beta, |v| {
            let mut q = p.clone();
            q.beta = v.to_vec();
            dot(rr.data(), batchnorm_infer(&x, &q).unwrap().data())
        }),
        OPERATOR_TOL,
    ));
    out
}

fn pointwise_checks() -> Vec<Check> {
    let mut r = rng(12);
    let shape = [1, 2, 4, 6];
    let n: usize = shape.iter().product();
    // keep clear of the kinks at 0 and 6
    let x: Vec<f64> = (0..n)
        .map(|_| loop {
            let v = r.random_range(-2.0..8.0);
            if (v as f64).abs() > 0.05 && (v - 6.0f64).abs() > 0.05 {
                break v;
            }
        })
        .collect();
    let x = with_data(shape, &x);
    let rr = rand_tensor(&mut r, shape, -1.0, 1.0);
    let relu = relu6_backward(&x, &rr);
    let s = rand_tensor(&mut r, shape, -6.0, 6.0);
    let sig = sigmoid_backward(&sigmoid(&s), &rr);
    vec![
        check(
            "relu6",
            relu.data(),
            numeric(x.data(), |v| {
                dot(rr.data(), relu6(&with_data(shape, v)).data())
            }),
            OPERATOR_TOL,
        ),
        check(
            "sigmoid",
            sig.data(),
            numeric(s.data(), |v| {
                dot(rr.data(), sigmoid(&with_data(shape, v)).data())
            }),
            OPERATOR_TOL,
        ),
    ]
}

fn structural_checks() -> Vec<Check> {
    let mut r = rng(13);
    let shape = [2, 2, 3, 5];
    let x = rand_tensor(&mut r, shape, -1.0, 1.0);
    let up_shape = [2, 2, 6, 10];
    let ru = rand_tensor(&mut r, up_shape, -1.0, 1.0);
    let du = bilinear_upsample_x2_backward(shape, &ru).unwrap();

    let b_shape = [2, 3, 3, 5];
    let b = rand_tensor(&mut r, b_shape, -1.0, 1.0);
    let rc = rand_tensor(&mut r, [2, 5, 3, 5], -1.0, 1.0);
    let (da, db) = concat_backward(&rc, 2).unwrap();

    let y = rand_tensor(&mut r, shape, -1.0, 1.0);
    let ra = rand_tensor(&mut r, shape, -1.0, 1.0);
    vec![
        check(
            "upsample",
            du.data(),
            numeric(x.data(), |v| {
                dot(
                    ru.data(),
                    bilinear_upsample_x2(&with_data(shape, v)).unwrap().data(),
                )
            }),
            OPERATOR_TOL,
        ),
        check(
            "concat first",
            da.data(),
            numeric(x.data(), |v| {
                dot(
                    rc.data(),
                    concat_channels(&with_data(shape, v), &b).unwrap().data(),
                )
            }),
            OPERATOR_TOL,
        ),
        check(
            "concat second",
            db.data(),
            numeric(b.data(), |v| {
                dot(
                    rc.data(),
                    concat_channels(&x, &with_data(b_shape, v)).unwrap().data(),
                )
            }),
            OPERATOR_TOL,
        ),
        check(
            "add residual",
            ra.data(),
            numeric(x.data(), |v| {
                dot(
                    ra.data(),
                    add_residual(&with_data(shape, v), &y).unwrap().data(),
                )
            }),
            OPERATOR_TOL,
        ),
    ]
}

fn loss_checks() -> Vec<Check> {
    let mut r = rng(14);
    let n = 40;
    let p = rand_vec(&mut r, n, 0.05, 0.95);
    let gt: Vec<f64> = (0..n).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
    vec![
        check(
            "bce",
            &bce_grad(&p, &gt).unwrap(),
            numeric(&p, |v| bce_loss(v, &gt).unwrap()),
            OPERATOR_TOL,
        ),
        check(
            "soft jaccard",
            &soft_jaccard_grad(&p, &gt).unwrap(),
            numeric(&p, |v| soft_jaccard(v, &gt).unwrap()),
            OPERATOR_TOL,
        ),
        check(
            "jbce",
            &jbce_grad(&p, &gt, 0.3).unwrap(),
            numeric(&p, |v| jbce_loss(v, &gt, 0.3).unwrap()),
            OPERATOR_TOL,
        ),
    ]
}

/// Every single-operator check.
pub fn operator_checks() -> Vec<Check> {
    let mut out = Vec::new();
    out.extend(conv_checks("conv 3x3", 1, [2, 3, 6, 7], [4, 3, 3, 3], 1, 1));
    out.extend(conv_checks(
        "conv 3x3 stride 2",
        2,
        [2, 3, 7, 8],
        [4, 3, 3, 3],
        1,
        2,
    ));
    out.extend(conv_checks("conv 1x1", 3, [2, 5, 4, 4], [3, 5, 1, 1], 1, 1));
    out.extend(conv_checks(
        "depthwise 3x3",
        4,
        [2, 4, 6, 6],
        [4, 1, 3, 3],
        4,
        1,
    ));
    out.extend(conv_checks(
        "depthwise 3x3 stride 2",
        5,
        [2, 4, 7, 6],
        [4, 1, 3, 3],
        4,
        2,
    ));
    out.extend(bn_checks());
    out.extend(pointwise_checks());
    out.extend(structural_checks());
    out.extend(loss_checks());
    out
}

/// The miniature network end to end: batch 2 at 16×16, batch statistics,
/// jbce with `w = 0.3`, every trainable tensor and the input.
pub fn graph_check() -> Check {
    let mut r = rng(15);
    let mut g = ModelGraph::<f64>::from_spec(mini_spec(), [3, 16, 16]).unwrap();
    init_scratch(&mut g, 21);
    for u in g.units_mut() {
        let c = u.bn.channels();
        u.bn.gamma = rand_vec(&mut r, c, 0.5, 1.5);
        u.bn.beta = rand_vec(&mut r, c, -0.2, 0.2);
    }
    let shape = [2, 3, 16, 16];
    let image = rand_tensor(&mut r, shape, 0.0, 1.0);
    let gt: Vec<f64> = (0..2 * 16 * 16)
        .map(|_| if r.random::<f64>() < 0.3 { 1.0 } else { 0.0 })
        .collect();
    let w = 0.3;
    let loss = |g: &ModelGraph<f64>, img: &Tensor<f64>| {
        let pass = g.forward_recorded(img, BnMode::Train).unwrap();
        jbce_loss(pass.prob.data(), &gt, w).unwrap()
    };

    let pass = g.forward_recorded(&image, BnMode::Train).unwrap();
    let dp = Tensor::new(
        pass.prob.shape(),
        jbce_grad(pass.prob.data(), &gt, w).unwrap(),
    )
    .unwrap();
    let grads = g.backward(&pass, dp).unwrap();

    let mut analytic: Vec<f64> = grads.tensors().into_iter().flatten().copied().collect();
    let mut numer = Vec::with_capacity(analytic.len());
    let sizes: Vec<usize> = g.trainable().iter().map(|t| t.len()).collect();
    for (t, &len) in sizes.iter().enumerate() {
        for i in 0..len {
            let orig = g.trainable()[t][i];
            g.trainable_mut()[t][i] = orig + H;
            let up = loss(&g, &image);
            g.trainable_mut()[t][i] = orig - H;
            let down = loss(&g, &image);
            g.trainable_mut()[t][i] = orig;
            numer.push((up - down) / (2.0 * H));
        }
    }
    analytic.extend_from_slice(grads.input.as_ref().expect("input gradient").data());
    numer.extend(numeric(image.data(), |v| loss(&g, &with_data(shape, v))));
    check("mini network end to end", &analytic, numer, GRAPH_TOL)
}

pub fn full_suite() -> Vec<Check> {
    let mut out = operator_checks();
    out.push(graph_check());
    out
}
