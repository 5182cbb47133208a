use rayon::prelude::*;

use super::CostTally;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Bias-free grouped 2-D convolution weights. The kernel is stored as
/// `(c_out, c_in / groups, k, k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvWeights<T = f32> {
    pub kernel: Tensor<T>,
    pub groups: usize,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> ConvWeights<T> {
    pub fn new(kernel: Tensor<T>, groups: usize, stride: usize, padding: usize) -> Result<Self> {
        let [c_out, _, kh, kw] = kernel.shape();
        if groups == 0 || c_out % groups != 0 {
            return Err(Error::invalid(format!(
                "{c_out} output channels cannot be split into {groups} groups"
            )));
        }
        if kh != kw || kh == 0 {
            return Err(Error::invalid(format!(
                "kernel must be square, got {kh}x{kw}"
            )));
        }
        if !(1..=2).contains(&stride) {
            return Err(Error::invalid(format!(
                "stride must be 1 or 2, got {stride}"
            )));
        }
        Ok(Self {
            kernel,
            groups,
            stride,
            padding,
        })
    }

    /// Zero kernel of the given geometry.
    pub fn zeros(
        c_out: usize,
        c_in: usize,
        k: usize,
        groups: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if groups == 0 || c_in % groups != 0 {
            return Err(Error::invalid(format!(
                "{c_in} input channels cannot be split into {groups} groups"
            )));
        }
        Self::new(
            Tensor::zeros([c_out, c_in / groups, k, k]),
            groups,
            stride,
            padding,
        )
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn in_per_group(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn in_channels(&self) -> usize {
        self.groups * self.in_per_group()
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel.shape()[2]
    }

    pub fn is_depthwise(&self) -> bool {
        self.in_per_group() == 1 && self.groups == self.in_channels() && self.groups > 1
    }

    pub fn param_count(&self) -> u64 {
        self.kernel.len() as u64
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.kernel_size();
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < k || pw < k {
            return Err(Error::invalid(format!(
                "{h}x{w} input with padding {} is smaller than the {k}x{k} kernel",
                self.padding
            )));
        }
        Ok(((ph - k) / self.stride + 1, (pw - k) / self.stride + 1))
    }

    /// Cost of applying these weights to one `h × w` image.
    pub fn cost(&self, h: usize, w: usize) -> Result<CostTally> {
        let (ho, wo) = self.output_hw(h, w)?;
        let k = self.kernel_size();
        let madds = self.out_channels() * ho * wo * k * k * self.in_per_group();
        Ok(CostTally::new(madds as u64, self.param_count()))
    }
}

/// Range of output columns `ox` whose input column `ox*s + kw - p` is inside
/// `[0, w)`.
#[inline]
fn valid_out_range(
    kw: usize,
    stride: usize,
    pad: usize,
    w_in: usize,
    w_out: usize,
) -> (usize, usize) {
    let lo = if pad > kw {
        (pad - kw).div_ceil(stride)
    } else {
        0
    };
    if w_in + pad < kw + 1 {
        return (0, 0);
    }
    let hi = ((w_in - 1 + pad - kw) / stride + 1).min(w_out);
    (lo.min(hi), hi)
}

#[inline]
fn in_row(oy: usize, kh: usize, stride: usize, pad: usize, h_in: usize) -> Option<usize> {
    let iy = oy * stride + kh;
    if iy < pad || iy - pad >= h_in {
        None
    } else {
        Some(iy - pad)
    }
}

fn check_input<T: Scalar>(x: &Tensor<T>, w: &ConvWeights<T>) -> Result<(usize, usize)> {
    if x.channels() != w.in_channels() {
        return Err(Error::invalid(format!(
            "convolution expects {} input channels ({} groups x {}), got {}",
            w.in_channels(),
            w.groups,
            w.in_per_group(),
            x.channels()
        )));
    }
    w.output_hw(x.height(), x.width())
}

// Rows of output accumulated together so the running sums stay in cache.
const TILE_ELEMS: usize = 4096;

/// Direct grouped convolution with zero padding.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, w: &ConvWeights<T>) -> Result<Tensor<T>> {
    let (ho, wo) = check_input(x, w)?;
    let [n, _, h, wd] = x.shape();
    let c_out = w.out_channels();
    let cin_pg = w.in_per_group();
    let cout_pg = c_out / w.groups;
    let (k, s, p) = (w.kernel_size(), w.stride, w.padding);
    let kernel = w.kernel.data();
    let mut out = Tensor::zeros([n, c_out, ho, wo]);
    if out.is_empty() {
        return Ok(out);
    }
    let ranges: Vec<(usize, usize)> = (0..k).map(|kw| valid_out_range(kw, s, p, wd, wo)).collect();
    let tile_rows = (TILE_ELEMS / wo.max(1)).max(1);

    out.data_mut()
        .par_chunks_mut(ho * wo)
        .enumerate()
        .for_each(|(idx, plane)| {
            let (ni, co) = (idx / c_out, idx % c_out);
            let g = co / cout_pg;
            for row0 in (0..ho).step_by(tile_rows) {
                let row1 = (row0 + tile_rows).min(ho);
                for cl in 0..cin_pg {
                    let xin = x.plane(ni, g * cin_pg + cl);
                    let wbase = (co * cin_pg + cl) * k * k;
                    for kh in 0..k {
                        for (kw, &(lo, hi)) in ranges.iter().enumerate() {
                            let wv = kernel[wbase + kh * k + kw];
                            for oy in row0..row1 {
                                let Some(iy) = in_row(oy, kh, s, p, h) else {
                                    continue;
                                };
                                let src = &xin[iy * wd..(iy + 1) * wd];
                                let dst = &mut plane[oy * wo + lo..oy * wo + hi];
                                let first = lo * s + kw - p;
                                if s == 1 {
                                    for (o, &v) in
                                        dst.iter_mut().zip(&src[first..first + (hi - lo)])
                                    {
                                        *o += wv * v;
                                    }
                                } else {
                                    for (o, &v) in
                                        dst.iter_mut().zip(src[first..].iter().step_by(s))
                                    {
                                        *o += wv * v;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    out.ensure_finite("conv2d")?;
    Ok(out)
}

/// Depthwise convolution: one filter per input channel.
pub fn depthwise_conv2d<T: Scalar>(x: &Tensor<T>, w: &ConvWeights<T>) -> Result<Tensor<T>> {
    if w.in_per_group() != 1 || w.groups != x.channels() || w.out_channels() != x.channels() {
        return Err(Error::invalid(format!(
            "depthwise convolution needs groups == channels == {}, got groups {} with kernel {:?}",
            x.channels(),
            w.groups,
            w.kernel.shape()
        )));
    }
    conv2d(x, w)
}

/// Gradients of [`conv2d`] with respect to the input and the kernel.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &ConvWeights<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (ho, wo) = check_input(x, w)?;
    let [n, c_in, h, wd] = x.shape();
    let c_out = w.out_channels();
    if grad_out.shape() != [n, c_out, ho, wo] {
        return Err(Error::invalid(format!(
            "conv2d gradient has shape {:?}, expected {:?}",
            grad_out.shape(),
            [n, c_out, ho, wo]
        )));
    }
    let cin_pg = w.in_per_group();
    let cout_pg = c_out / w.groups;
    let (k, s, p) = (w.kernel_size(), w.stride, w.padding);
    let kernel = w.kernel.data();
    let ranges: Vec<(usize, usize)> = (0..k).map(|kw| valid_out_range(kw, s, p, wd, wo)).collect();

    // Kernel gradient, one output channel per task.
    let mut dkernel = Tensor::zeros(w.kernel.shape());
    dkernel
        .data_mut()
        .par_chunks_mut(cin_pg * k * k)
        .enumerate()
        .for_each(|(co, dk)| {
            let g = co / cout_pg;
            for ni in 0..n {
                let gout = grad_out.plane(ni, co);
                for cl in 0..cin_pg {
                    let xin = x.plane(ni, g * cin_pg + cl);
                    for kh in 0..k {
                        for (kw, &(lo, hi)) in ranges.iter().enumerate() {
                            let mut acc = T::zero();
                            for oy in 0..ho {
                                let Some(iy) = in_row(oy, kh, s, p, h) else {
                                    continue;
                                };
                                let grow = &gout[oy * wo + lo..oy * wo + hi];
                                let xrow = &xin[iy * wd..(iy + 1) * wd];
                                let first = lo * s + kw - p;
                                for (gv, xv) in grow.iter().zip(xrow[first..].iter().step_by(s)) {
                                    acc += *gv * *xv;
                                }
                            }
                            dk[(cl * k + kh) * k + kw] += acc;
                        }
                    }
                }
            }
        });

    // Input gradient, one input plane per task.
    let mut dx = Tensor::zeros(x.shape());
    dx.data_mut()
        .par_chunks_mut(h * wd)
        .enumerate()
        .for_each(|(idx, dplane)| {
            let (ni, ci) = (idx / c_in, idx % c_in);
            let (g, cl) = (ci / cin_pg, ci % cin_pg);
            for co in g * cout_pg..(g + 1) * cout_pg {
                let gout = grad_out.plane(ni, co);
                let wbase = (co * cin_pg + cl) * k * k;
                for kh in 0..k {
                    for (kw, &(lo, hi)) in ranges.iter().enumerate() {
                        let wv = kernel[wbase + kh * k + kw];
                        for oy in 0..ho {
                            let Some(iy) = in_row(oy, kh, s, p, h) else {
                                continue;
                            };
                            let grow = &gout[oy * wo + lo..oy * wo + hi];
                            let drow = &mut dplane[iy * wd..(iy + 1) * wd];
                            let first = lo * s + kw - p;
                            for (d, gv) in drow[first..].iter_mut().step_by(s).zip(grow) {
                                *d += wv * *gv;
                            }
                        }
                    }
                }
            }
        });
    Ok((dx, dkernel))
}
