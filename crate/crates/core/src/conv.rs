//! Direct 2-D convolution kernels over `NHWC` grids.

use crate::error::{Error, Result};
use crate::grid::{Grid4, Shape};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `(k - 1) / 2` on every side; output extent is `ceil(H / stride)`.
    Same,
    /// No padding; output extent is `(H - k) / stride + 1`.
    Valid,
}

/// Resolved geometry of one convolution call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub input: Shape,
    pub output: Shape,
}

impl ConvGeometry {
    /// `kernel` is laid out as `k x k x C_in x C_out`.
    pub fn new(input: Shape, kernel: Shape, stride: usize, padding: Padding) -> Result<Self> {
        let k = kernel.n;
        if kernel.h != k || k.is_multiple_of(2) {
            return Err(Error::shape(format!(
                "kernel {kernel} must be square with odd extent (input {input})"
            )));
        }
        if kernel.w != input.c {
            return Err(Error::shape(format!(
                "kernel {kernel} expects {} input channels but input is {input}",
                kernel.w
            )));
        }
        if stride == 0 {
            return Err(Error::invalid("convolution stride must be positive"));
        }
        let pad = match padding {
            Padding::Same => (k - 1) / 2,
            Padding::Valid => 0,
        };
        if input.h + 2 * pad < k || input.w + 2 * pad < k {
            return Err(Error::shape(format!(
                "kernel {kernel} larger than padded input {input}"
            )));
        }
        let out_h = (input.h + 2 * pad - k) / stride + 1;
        let out_w = (input.w + 2 * pad - k) / stride + 1;
        Ok(Self {
            k,
            stride,
            pad,
            input,
            output: Shape::new(input.n, out_h, out_w, kernel.c),
        })
    }

    #[inline]
    fn source(&self, o: usize, kk: usize, extent: usize) -> Option<usize> {
        let i = (o * self.stride + kk) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < extent).then_some(i as usize)
    }
}

pub fn conv2d_forward(input: &Grid4, kernel: &Grid4, geom: &ConvGeometry) -> Grid4 {
    let g = geom;
    let (cin, cout) = (g.input.c, g.output.c);
    let x = input.data();
    let kw = kernel.data();
    let mut out = Grid4::zeros(g.output);
    let y = out.data_mut();
    for n in 0..g.output.n {
        for oy in 0..g.output.h {
            for ox in 0..g.output.w {
                let o = g.output.index(n, oy, ox, 0);
                let acc = &mut y[o..o + cout];
                for ky in 0..g.k {
                    let Some(iy) = g.source(oy, ky, g.input.h) else {
                        continue;
                    };
                    for kx in 0..g.k {
                        let Some(ix) = g.source(ox, kx, g.input.w) else {
                            continue;
                        };
                        let xi = g.input.index(n, iy, ix, 0);
                        let kb = (ky * g.k + kx) * cin * cout;
                        for ci in 0..cin {
                            let xv = x[xi + ci];
                            let row = &kw[kb + ci * cout..kb + (ci + 1) * cout];
                            for (a, &w) in acc.iter_mut().zip(row) {
                                *a += xv * w;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates input and/or kernel gradients given the output gradient `dy`.
pub fn conv2d_backward(
    input: &[f64],
    kernel: &[f64],
    geom: &ConvGeometry,
    dy: &[f64],
    mut dx: Option<&mut [f64]>,
    mut dk: Option<&mut [f64]>,
) {
    let g = geom;
    let (cin, cout) = (g.input.c, g.output.c);
    for n in 0..g.output.n {
        for oy in 0..g.output.h {
            for ox in 0..g.output.w {
                let o = g.output.index(n, oy, ox, 0);
                let gy = &dy[o..o + cout];
                for ky in 0..g.k {
                    let Some(iy) = g.source(oy, ky, g.input.h) else {
                        continue;
                    };
                    for kx in 0..g.k {
                        let Some(ix) = g.source(ox, kx, g.input.w) else {
                            continue;
                        };
                        let xi = g.input.index(n, iy, ix, 0);
                        let kb = (ky * g.k + kx) * cin * cout;
                        for ci in 0..cin {
                            let r = kb + ci * cout..kb + (ci + 1) * cout;
                            if let Some(dx) = dx.as_deref_mut() {
                                let row = &kernel[r.clone()];
                                let s: f64 = row.iter().zip(gy).map(|(w, d)| w * d).sum();
                                dx[xi + ci] += s;
                            }
                            if let Some(dk) = dk.as_deref_mut() {
                                let xv = input[xi + ci];
                                for (a, &d) in dk[r].iter_mut().zip(gy) {
                                    *a += xv * d;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}
