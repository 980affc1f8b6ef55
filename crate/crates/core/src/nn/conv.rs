//! Spatial operators on `[batch, channels, height, width]` tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    Valid,
    /// Output extent `ceil(input / stride)`; the extra row/column of padding,
    /// if any, goes after the input.
    Same,
}

/// Output extent and leading padding for one spatial axis.
pub fn conv_extent(input: usize, kernel: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    if stride == 0 || kernel == 0 {
        return Err(Error::shape("kernel and stride must be positive"));
    }
    match padding {
        Padding::Valid => {
            if kernel > input {
                return Err(Error::shape(format!("kernel {kernel} larger than input {input}")));
            }
            Ok(((input - kernel) / stride + 1, 0))
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            if kernel > input + total {
                return Err(Error::shape(format!("kernel {kernel} larger than padded input")));
            }
            Ok((out, total / 2))
        }
    }
}

fn dims4(t: &Tensor, what: &str) -> Result<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::shape(format!("{what} must be rank 4, got {:?}", t.shape()))),
    }
}

struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    pad_y: usize,
    pad_x: usize,
    stride: usize,
}

impl ConvGeom {
    fn new(input: &Tensor, filters: &Tensor, stride: usize, padding: Padding) -> Result<Self> {
        let [n, c, h, w] = dims4(input, "conv input")?;
        let [o, ci, kh, kw] = dims4(filters, "conv filters")?;
        if ci != c {
            return Err(Error::shape(format!("filters expect {ci} input channels, input has {c}")));
        }
        let (oh, pad_y) = conv_extent(h, kh, stride, padding)?;
        let (ow, pad_x) = conv_extent(w, kw, stride, padding)?;
        Ok(ConvGeom { n, c, h, w, o, kh, kw, oh, ow, pad_y, pad_x, stride })
    }

    /// Input coordinate for output position `p` and kernel offset `k`, if
    /// it lands inside the unpadded input.
    #[inline]
    fn src(&self, p: usize, k: usize, pad: usize, extent: usize) -> Option<usize> {
        (p * self.stride + k).checked_sub(pad).filter(|&i| i < extent)
    }
}

/// Cross-correlation summed over input channels (no kernel flip). Each output
/// accumulates over input channel, then kernel row, then kernel column.
pub fn conv2d_forward(input: &Tensor, filters: &Tensor, stride: usize, padding: Padding) -> Result<Tensor> {
    let g = ConvGeom::new(input, filters, stride, padding)?;
    let (x, wt) = (input.data(), filters.data());
    let mut out = vec![0.0; g.n * g.o * g.oh * g.ow];
    for n in 0..g.n {
        for o in 0..g.o {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut sum = 0.0;
                    for c in 0..g.c {
                        for ky in 0..g.kh {
                            let Some(iy) = g.src(oy, ky, g.pad_y, g.h) else { continue };
                            for kx in 0..g.kw {
                                let Some(ix) = g.src(ox, kx, g.pad_x, g.w) else { continue };
                                sum += x[((n * g.c + c) * g.h + iy) * g.w + ix]
                                    * wt[((o * g.c + c) * g.kh + ky) * g.kw + kx];
                            }
                        }
                    }
                    out[((n * g.o + o) * g.oh + oy) * g.ow + ox] = sum;
                }
            }
        }
    }
    Tensor::new(vec![g.n, g.o, g.oh, g.ow], out)
}

/// Gradients of [`conv2d_forward`] with respect to input and filters.
pub fn conv2d_backward(
    input: &Tensor,
    filters: &Tensor,
    upstream: &Tensor,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor, Tensor)> {
    let g = ConvGeom::new(input, filters, stride, padding)?;
    if upstream.shape() != [g.n, g.o, g.oh, g.ow] {
        return Err(Error::shape(format!("conv upstream {:?} mismatched", upstream.shape())));
    }
    let (x, wt, up) = (input.data(), filters.data(), upstream.data());
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; wt.len()];
    for n in 0..g.n {
        for o in 0..g.o {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let u = up[((n * g.o + o) * g.oh + oy) * g.ow + ox];
                    if u == 0.0 {
                        continue;
                    }
                    for c in 0..g.c {
                        for ky in 0..g.kh {
                            let Some(iy) = g.src(oy, ky, g.pad_y, g.h) else { continue };
                            for kx in 0..g.kw {
                                let Some(ix) = g.src(ox, kx, g.pad_x, g.w) else { continue };
                                let xi = ((n * g.c + c) * g.h + iy) * g.w + ix;
                                let wi = ((o * g.c + c) * g.kh + ky) * g.kw + kx;
                                gx[xi] += u * wt[wi];
                                gw[wi] += u * x[xi];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), gx)?,
        Tensor::new(filters.shape().to_vec(), gw)?,
    ))
}

/// Window maxima. `argmax` holds, per output entry, the flat input index of
/// the winner; ties go to the lowest flat index.
pub fn maxpool2d_forward(input: &Tensor, kernel: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let [n, c, h, w] = dims4(input, "maxpool input")?;
    let (oh, _) = conv_extent(h, kernel, stride, Padding::Valid)?;
    let (ow, _) = conv_extent(w, kernel, stride, Padding::Valid)?;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(out.capacity());
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_i = base + oy * stride * w + ox * stride;
                let mut best = x[best_i];
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let i = base + (oy * stride + ky) * w + ox * stride + kx;
                        // row-major scan visits flat indices in increasing order,
                        // so strict > keeps the lowest index on ties
                        if x[i] > best {
                            best = x[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, arg))
}

pub fn maxpool2d_backward(upstream: &Tensor, argmax: &[usize], input_shape: &[usize]) -> Result<Tensor> {
    if upstream.len() != argmax.len() {
        return Err(Error::State("maxpool indices do not match upstream".into()));
    }
    let total: usize = input_shape.iter().product();
    let mut g = vec![0.0; total];
    for (&i, &u) in argmax.iter().zip(upstream.data()) {
        if i >= total {
            return Err(Error::State(format!("stale maxpool index {i}")));
        }
        g[i] += u;
    }
    Tensor::new(input_shape.to_vec(), g)
}
