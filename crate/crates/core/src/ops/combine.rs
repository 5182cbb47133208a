use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Channel concatenation, `a`'s channels first.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [na, ca, ha, wa] = a.shape();
    let [nb, cb, hb, wb] = b.shape();
    if (na, ha, wa) != (nb, hb, wb) {
        return Err(Error::invalid(format!(
            "cannot concatenate {:?} with {:?}: batch or spatial size differs",
            a.shape(),
            b.shape()
        )));
    }
    let p = ha * wa;
    let mut data = Vec::with_capacity(na * (ca + cb) * p);
    for n in 0..na {
        data.extend_from_slice(&a.data()[n * ca * p..(n + 1) * ca * p]);
        data.extend_from_slice(&b.data()[n * cb * p..(n + 1) * cb * p]);
    }
    Tensor::new([na, ca + cb, ha, wa], data)
}

/// Splits a concatenated gradient back into the parts for `a` (first
/// `a_channels` channels) and `b`.
pub fn concat_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    a_channels: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let [n, c, h, w] = grad_out.shape();
    if a_channels > c {
        return Err(Error::invalid(format!(
            "cannot split {c} channels at {a_channels}"
        )));
    }
    let p = h * w;
    let cb = c - a_channels;
    let mut ga = Vec::with_capacity(n * a_channels * p);
    let mut gb = Vec::with_capacity(n * cb * p);
    for ni in 0..n {
        let base = ni * c * p;
        ga.extend_from_slice(&grad_out.data()[base..base + a_channels * p]);
        gb.extend_from_slice(&grad_out.data()[base + a_channels * p..base + c * p]);
    }
    Ok((
        Tensor::new([n, a_channels, h, w], ga)?,
        Tensor::new([n, cb, h, w], gb)?,
    ))
}

/// Elementwise sum of identically shaped tensors.
pub fn add_residual<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "residual shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| *x + *y)
        .collect();
    Tensor::new(a.shape(), data)
}
