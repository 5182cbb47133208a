use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Interpolation taps `(i0, i1, t)` for each output index of a ×2 upsample
/// along an axis of length `n`: output = `in[i0] + t·(in[i1] − in[i0])`.
///
/// Half-pixel centres: the source coordinate of output `d` is
/// `(d + 0.5) / 2 − 0.5`, clamped to `[0, n − 1]`.
pub fn upsample_axis_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|d| {
            let src = ((d as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let t = (src - i0 as f64).max(0.0);
            if t == 0.0 || i0 + 1 == n {
                (i0, i0, 0.0)
            } else {
                (i0, i0 + 1, t)
            }
        })
        .collect()
}

/// Parameter-free bilinear ×2 upsampling.
pub fn bilinear_upsample_x2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape();
    if h == 0 || w == 0 {
        return Err(Error::invalid(format!(
            "cannot upsample an empty {h}x{w} map"
        )));
    }
    let (ho, wo) = (2 * h, 2 * w);
    let ty: Vec<_> = upsample_axis_taps(h)
        .into_iter()
        .map(|(a, b, t)| (a, b, T::of(t)))
        .collect();
    let tx: Vec<_> = upsample_axis_taps(w)
        .into_iter()
        .map(|(a, b, t)| (a, b, T::of(t)))
        .collect();
    let mut out = Tensor::zeros([n, c, ho, wo]);
    out.data_mut()
        .par_chunks_mut(ho * wo)
        .enumerate()
        .for_each(|(idx, plane)| {
            let src = x.plane(idx / c, idx % c);
            let mut r0 = vec![T::zero(); wo];
            let mut r1 = vec![T::zero(); wo];
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                let (a, b) = (&src[y0 * w..(y0 + 1) * w], &src[y1 * w..(y1 + 1) * w]);
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    r0[ox] = a[x0] + fx * (a[x1] - a[x0]);
                    r1[ox] = b[x0] + fx * (b[x1] - b[x0]);
                }
                let row = &mut plane[oy * wo..(oy + 1) * wo];
                for ox in 0..wo {
                    row[ox] = r0[ox] + fy * (r1[ox] - r0[ox]);
                }
            }
        });
    Ok(out)
}

/// Vector-Jacobian product of [`bilinear_upsample_x2`] for an input of
/// shape `in_shape`.
pub fn bilinear_upsample_x2_backward<T: Scalar>(
    in_shape: [usize; 4],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = in_shape;
    if grad_out.shape() != [n, c, 2 * h, 2 * w] {
        return Err(Error::invalid(format!(
            "upsample gradient has shape {:?}, expected {:?}",
            grad_out.shape(),
            [n, c, 2 * h, 2 * w]
        )));
    }
    let ty = upsample_axis_taps(h);
    let tx = upsample_axis_taps(w);
    let wo = 2 * w;
    let mut dx = Tensor::zeros(in_shape);
    dx.data_mut()
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(idx, dplane)| {
            let g = grad_out.plane(idx / c, idx % c);
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                let fy = T::of(fy);
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let fx = T::of(fx);
                    let gv = g[oy * wo + ox];
                    let (gy0, gy1) = (gv * (T::one() - fy), gv * fy);
                    dplane[y0 * w + x0] += gy0 * (T::one() - fx);
                    dplane[y0 * w + x1] += gy0 * fx;
                    dplane[y1 * w + x0] += gy1 * (T::one() - fx);
                    dplane[y1 * w + x1] += gy1 * fx;
                }
            }
        });
    Ok(dx)
}
