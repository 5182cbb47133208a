use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const BN_DEFAULT_EPS: f64 = 1e-5;
pub const BN_DEFAULT_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalisation state. Only `gamma` and `beta` are
/// trainable; the running statistics are buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams<T = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: T,
    pub momentum: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

/// What the train-mode backward pass needs from the forward pass.
#[derive(Clone, Debug)]
pub struct BnSaved<T> {
    pub x_hat: Tensor<T>,
    pub inv_std: Vec<T>,
}

impl<T: Scalar> BatchNormParams<T> {
    /// Identity transform: gamma 1, beta 0, running mean 0, running var 1.
    pub fn new(channels: usize) -> Self {
        Self::with_hyper(channels, T::of(BN_DEFAULT_EPS), T::of(BN_DEFAULT_MOMENTUM))
    }

    pub fn with_hyper(channels: usize, eps: T, momentum: T) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps,
            momentum,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Trainable parameters: gamma and beta.
    pub fn param_count(&self) -> u64 {
        2 * self.channels() as u64
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        if self.beta.len() != c || self.running_mean.len() != c || self.running_var.len() != c {
            return Err(Error::invalid("batch norm vectors differ in length"));
        }
        if self.running_var.iter().any(|v| *v < T::zero()) {
            return Err(Error::invalid("negative running variance"));
        }
        if !(self.momentum > T::zero() && self.momentum < T::one()) {
            return Err(Error::invalid(format!(
                "batch norm momentum must be in (0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> BatchNormParams<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::of(x.as_f64())).collect();
        BatchNormParams {
            gamma: conv(&self.gamma),
            beta: conv(&self.beta),
            running_mean: conv(&self.running_mean),
            running_var: conv(&self.running_var),
            eps: U::of(self.eps.as_f64()),
            momentum: U::of(self.momentum.as_f64()),
        }
    }
}

fn check_channels<T: Scalar>(x: &Tensor<T>, p: &BatchNormParams<T>) -> Result<()> {
    if x.channels() != p.channels() {
        return Err(Error::invalid(format!(
            "batch norm has {} channels, input has {}",
            p.channels(),
            x.channels()
        )));
    }
    Ok(())
}

fn inv_std<T: Scalar>(var: T, eps: T, channel: usize) -> Result<T> {
    let denom = var + eps;
    if !(denom > T::zero()) {
        return Err(Error::Numeric(format!(
            "batch norm channel {channel}: variance + eps = {denom} is not positive"
        )));
    }
    Ok(T::one() / denom.sqrt())
}

/// Applies `f(channel, plane)` to every `(n, c)` plane in parallel.
fn for_each_plane<T: Scalar>(t: &mut Tensor<T>, f: impl Fn(usize, &mut [T]) + Sync) {
    let c = t.channels();
    let p = t.plane_len().max(1);
    t.data_mut()
        .par_chunks_mut(p)
        .enumerate()
        .for_each(|(idx, plane)| f(idx % c, plane));
}

/// Inference mode: normalise with the running statistics.
pub fn batchnorm_infer<T: Scalar>(x: &Tensor<T>, p: &BatchNormParams<T>) -> Result<Tensor<T>> {
    check_channels(x, p)?;
    let mut scale = Vec::with_capacity(p.channels());
    let mut shift = Vec::with_capacity(p.channels());
    for c in 0..p.channels() {
        let s = p.gamma[c] * inv_std(p.running_var[c], p.eps, c)?;
        scale.push(s);
        shift.push(p.beta[c] - s * p.running_mean[c]);
    }
    let mut y = x.clone();
    for_each_plane(&mut y, |c, plane| {
        for v in plane.iter_mut() {
            *v = *v * scale[c] + shift[c];
        }
    });
    y.ensure_finite("batchnorm")?;
    Ok(y)
}

/// Training mode: normalise with batch statistics (biased variance) and
/// update the running statistics (unbiased variance) with `p.momentum`.
pub fn batchnorm_train<T: Scalar>(
    x: &Tensor<T>,
    p: &mut BatchNormParams<T>,
) -> Result<(Tensor<T>, BnSaved<T>)> {
    check_channels(x, p)?;
    let [n, c, _, _] = x.shape();
    let count = n * x.plane_len();
    if count < 2 {
        return Err(Error::invalid(format!(
            "batch norm in train mode needs more than one value per channel, got {count}"
        )));
    }
    let mut means = Vec::with_capacity(c);
    let mut inv = Vec::with_capacity(c);
    for ci in 0..c {
        let mut sum = 0.0f64;
        for ni in 0..n {
            sum += x.plane(ni, ci).iter().map(|v| v.as_f64()).sum::<f64>();
        }
        let mean = sum / count as f64;
        let mut sq = 0.0f64;
        for ni in 0..n {
            sq += x
                .plane(ni, ci)
                .iter()
                .map(|v| {
                    let d = v.as_f64() - mean;
                    d * d
                })
                .sum::<f64>();
        }
        let var = sq / count as f64;
        let unbiased = sq / (count - 1) as f64;
        inv.push(inv_std(T::of(var), p.eps, ci)?);
        means.push(T::of(mean));
        let m = p.momentum;
        p.running_mean[ci] = (T::one() - m) * p.running_mean[ci] + m * T::of(mean);
        p.running_var[ci] = (T::one() - m) * p.running_var[ci] + m * T::of(unbiased);
    }
    let mut x_hat = x.clone();
    for_each_plane(&mut x_hat, |ci, plane| {
        for v in plane.iter_mut() {
            *v = (*v - means[ci]) * inv[ci];
        }
    });
    let mut y = x_hat.clone();
    let (gamma, beta) = (&p.gamma, &p.beta);
    for_each_plane(&mut y, |ci, plane| {
        for v in plane.iter_mut() {
            *v = gamma[ci] * *v + beta[ci];
        }
    });
    y.ensure_finite("batchnorm")?;
    Ok((
        y,
        BnSaved {
            x_hat,
            inv_std: inv,
        },
    ))
}

pub fn batchnorm<T: Scalar>(
    x: &Tensor<T>,
    p: &mut BatchNormParams<T>,
    mode: BnMode,
) -> Result<Tensor<T>> {
    match mode {
        BnMode::Infer => batchnorm_infer(x, p),
        BnMode::Train => batchnorm_train(x, p).map(|(y, _)| y),
    }
}

fn per_channel_sums<T: Scalar>(a: &Tensor<T>, b: Option<&Tensor<T>>) -> Vec<T> {
    let [n, c, _, _] = a.shape();
    (0..c)
        .map(|ci| {
            let mut acc = T::zero();
            for ni in 0..n {
                match b {
                    None => acc += a.plane(ni, ci).iter().copied().sum::<T>(),
                    Some(b) => {
                        for (x, y) in a.plane(ni, ci).iter().zip(b.plane(ni, ci)) {
                            acc += *x * *y;
                        }
                    }
                }
            }
            acc
        })
        .collect()
}

/// Returns `(dx, dgamma, dbeta)` for a train-mode forward pass.
pub fn batchnorm_train_backward<T: Scalar>(
    saved: &BnSaved<T>,
    gamma: &[T],
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    if grad_out.shape() != saved.x_hat.shape() {
        return Err(Error::invalid("batch norm gradient shape mismatch"));
    }
    let count = T::of((grad_out.n() * grad_out.plane_len()) as f64);
    let dbeta = per_channel_sums(grad_out, None);
    let dgamma = per_channel_sums(grad_out, Some(&saved.x_hat));
    let mut dx = grad_out.clone();
    let c = dx.channels();
    let p = dx.plane_len();
    let x_hat = saved.x_hat.data();
    dx.data_mut()
        .par_chunks_mut(p.max(1))
        .enumerate()
        .for_each(|(idx, plane)| {
            let ci = idx % c;
            let k = gamma[ci] * saved.inv_std[ci] / count;
            let xh = &x_hat[idx * p..(idx + 1) * p];
            for (d, &xv) in plane.iter_mut().zip(xh) {
                *d = k * (count * *d - dbeta[ci] - xv * dgamma[ci]);
            }
        });
    Ok((dx, dgamma, dbeta))
}

/// Returns `(dx, dgamma, dbeta)` for an inference-mode forward pass.
pub fn batchnorm_infer_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &BatchNormParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    check_channels(x, p)?;
    if grad_out.shape() != x.shape() {
        return Err(Error::invalid("batch norm gradient shape mismatch"));
    }
    let inv: Vec<T> = (0..p.channels())
        .map(|c| inv_std(p.running_var[c], p.eps, c))
        .collect::<Result<_>>()?;
    let x_hat = Tensor::from_fn(x.shape(), |n, c, y, xx| {
        (x.at(n, c, y, xx) - p.running_mean[c]) * inv[c]
    });
    let dbeta = per_channel_sums(grad_out, None);
    let dgamma = per_channel_sums(grad_out, Some(&x_hat));
    let mut dx = grad_out.clone();
    for_each_plane(&mut dx, |c, plane| {
        let k = p.gamma[c] * inv[c];
        for v in plane.iter_mut() {
            *v *= k;
        }
    });
    Ok((dx, dgamma, dbeta))
}
