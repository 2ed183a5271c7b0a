//! Stride-1 dilated convolution kernels.
//!
//! Work is split into independent output planes, so the parallel and the
//! sequential paths run the same arithmetic in the same order and produce
//! bit-identical results.

use super::{Shape, Tensor, TensorError};

/// How a kernel distributes its independent output planes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Falls back to sequential execution when the `parallel` feature is off.
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

fn for_each_chunk<F>(data: &mut [f64], chunk: usize, exec: Exec, f: F)
where
    F: Fn(usize, &mut [f64]) + Send + Sync,
{
    if chunk == 0 {
        return;
    }
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            data.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
        }
        _ => data
            .chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c)),
    }
}

/// Validated geometry of one convolution call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub input: Shape,
    pub kernel: Shape,
    pub output: Shape,
    pub dilation: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(
        input: Shape,
        kernel: Shape,
        bias_len: usize,
        dilation: usize,
        padding: usize,
    ) -> Result<Self, TensorError> {
        // kernel is [outC, inC, kH, kW]
        if kernel.channels != input.channels {
            return Err(TensorError::ChannelMismatch {
                expected: kernel.channels,
                actual: input.channels,
            });
        }
        if kernel.height.is_multiple_of(2) || kernel.width.is_multiple_of(2) {
            return Err(TensorError::EvenKernel(kernel.height, kernel.width));
        }
        if dilation == 0 {
            return Err(TensorError::ZeroDilation);
        }
        if bias_len != kernel.batch {
            return Err(TensorError::BiasMismatch {
                expected: kernel.batch,
                actual: bias_len,
            });
        }
        let span_h = dilation * (kernel.height - 1);
        let span_w = dilation * (kernel.width - 1);
        let out_h = (input.height + 2 * padding).saturating_sub(span_h);
        let out_w = (input.width + 2 * padding).saturating_sub(span_w);
        if out_h == 0 || out_w == 0 {
            return Err(TensorError::EmptyOutput { input, kernel });
        }
        Ok(Self {
            input,
            kernel,
            output: Shape::new(input.batch, kernel.batch, out_h, out_w),
            dilation,
            padding,
        })
    }

    /// Padding that keeps the spatial size for an odd kernel.
    pub const fn same_padding(kernel: usize, dilation: usize) -> usize {
        dilation * (kernel - 1) / 2
    }

    #[inline]
    fn offsets(&self, ky: usize, kx: usize) -> (isize, isize) {
        let p = self.padding as isize;
        let d = self.dilation as isize;
        (ky as isize * d - p, kx as isize * d - p)
    }

    /// Output rows/cols whose shifted input position is in bounds.
    #[inline]
    fn valid(&self, dy: isize, dx: isize) -> Option<(usize, usize, usize, usize)> {
        let range = |shift: isize, out: usize, inp: usize| {
            let lo = (-shift).max(0) as usize;
            let hi = (inp as isize - shift).min(out as isize);
            if hi <= lo as isize {
                None
            } else {
                Some((lo, hi as usize))
            }
        };
        let (y0, y1) = range(dy, self.output.height, self.input.height)?;
        let (x0, x1) = range(dx, self.output.width, self.input.width)?;
        Some((y0, y1, x0, x1))
    }

    #[inline]
    fn weight_index(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> usize {
        ((oc * self.kernel.channels + ic) * self.kernel.height + ky) * self.kernel.width + kx
    }
}

pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

pub fn conv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &[f64],
    dilation: usize,
    padding: usize,
    exec: Exec,
) -> Result<Tensor, TensorError> {
    let g = ConvGeometry::new(input.shape(), weight.shape(), bias.len(), dilation, padding)?;
    let mut out = Tensor::zeros(g.output);
    let (in_w, out_w) = (g.input.width, g.output.width);
    let (in_plane, out_plane) = (g.input.plane(), g.output.plane());
    let in_data = input.data();
    let w_data = weight.data();
    for_each_chunk(out.data_mut(), out_plane, exec, |idx, dst| {
        let (n, oc) = (idx / g.output.channels, idx % g.output.channels);
        dst.fill(bias[oc]);
        for ic in 0..g.input.channels {
            let base = (n * g.input.channels + ic) * in_plane;
            let src = &in_data[base..base + in_plane];
            for ky in 0..g.kernel.height {
                for kx in 0..g.kernel.width {
                    let w = w_data[g.weight_index(oc, ic, ky, kx)];
                    let (dy, dx) = g.offsets(ky, kx);
                    let Some((y0, y1, x0, x1)) = g.valid(dy, dx) else {
                        continue;
                    };
                    for y in y0..y1 {
                        let iy = (y as isize + dy) as usize;
                        let ix0 = (x0 as isize + dx) as usize;
                        let s = &src[iy * in_w + ix0..iy * in_w + ix0 + (x1 - x0)];
                        let d = &mut dst[y * out_w + x0..y * out_w + x1];
                        for (o, i) in d.iter_mut().zip(s) {
                            *o += w * i;
                        }
                    }
                }
            }
        }
    });
    Ok(out)
}

pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    dilation: usize,
    padding: usize,
    exec: Exec,
) -> Result<ConvGrads, TensorError> {
    let g = ConvGeometry::new(
        input.shape(),
        weight.shape(),
        weight.shape().batch,
        dilation,
        padding,
    )?;
    if grad_out.shape() != g.output {
        return Err(TensorError::Incompatible(g.output, grad_out.shape()));
    }
    let (in_w, out_w) = (g.input.width, g.output.width);
    let (in_plane, out_plane) = (g.input.plane(), g.output.plane());
    let in_data = input.data();
    let w_data = weight.data();
    let go = grad_out.data();

    let mut grad_input = Tensor::zeros(g.input);
    for_each_chunk(grad_input.data_mut(), in_plane, exec, |idx, dst| {
        let (n, ic) = (idx / g.input.channels, idx % g.input.channels);
        for oc in 0..g.output.channels {
            let base = (n * g.output.channels + oc) * out_plane;
            let src = &go[base..base + out_plane];
            for ky in 0..g.kernel.height {
                for kx in 0..g.kernel.width {
                    let w = w_data[g.weight_index(oc, ic, ky, kx)];
                    let (dy, dx) = g.offsets(ky, kx);
                    let Some((y0, y1, x0, x1)) = g.valid(dy, dx) else {
                        continue;
                    };
                    for y in y0..y1 {
                        let iy = (y as isize + dy) as usize;
                        let ix0 = (x0 as isize + dx) as usize;
                        let d = &mut dst[iy * in_w + ix0..iy * in_w + ix0 + (x1 - x0)];
                        let s = &src[y * out_w + x0..y * out_w + x1];
                        for (o, i) in d.iter_mut().zip(s) {
                            *o += w * i;
                        }
                    }
                }
            }
        }
    });

    let mut grad_weight = Tensor::zeros(g.kernel);
    let per_oc = g.kernel.channels * g.kernel.height * g.kernel.width;
    for_each_chunk(grad_weight.data_mut(), per_oc, exec, |oc, dst| {
        for ic in 0..g.kernel.channels {
            for ky in 0..g.kernel.height {
                for kx in 0..g.kernel.width {
                    let (dy, dx) = g.offsets(ky, kx);
                    let Some((y0, y1, x0, x1)) = g.valid(dy, dx) else {
                        continue;
                    };
                    let mut acc = 0.0;
                    for n in 0..g.input.batch {
                        let ob = (n * g.output.channels + oc) * out_plane;
                        let ib = (n * g.input.channels + ic) * in_plane;
                        for y in y0..y1 {
                            let iy = (y as isize + dy) as usize;
                            let ix0 = (x0 as isize + dx) as usize;
                            let a = &go[ob + y * out_w + x0..ob + y * out_w + x1];
                            let b =
                                &in_data[ib + iy * in_w + ix0..ib + iy * in_w + ix0 + (x1 - x0)];
                            acc += a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
                        }
                    }
                    dst[(ic * g.kernel.height + ky) * g.kernel.width + kx] = acc;
                }
            }
        }
    });

    let bias = (0..g.output.channels)
        .map(|oc| {
            (0..g.output.batch)
                .map(|n| grad_out.plane(n, oc).iter().sum::<f64>())
                .sum()
        })
        .collect();

    Ok(ConvGrads {
        input: grad_input,
        weight: grad_weight,
        bias,
    })
}
