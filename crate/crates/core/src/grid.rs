//! Dense rank-4 activation grids and integer label maps.
//!
//! Activations are stored row-major in `N x H x W x C` order, channels
//! innermost. Convolution kernels reuse the same container with the axes
//! reinterpreted as `k x k x C_in x C_out`.

use std::fmt;

use crate::error::{Error, Result};

/// Label value marking pixels that take no part in losses or metrics.
pub const IGNORE_LABEL: u8 = 255;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    /// Panics if any extent is zero; use [`Shape::try_new`] for untrusted input.
    pub fn new(n: usize, h: usize, w: usize, c: usize) -> Self {
        Self::try_new(n, h, w, c).expect("shape extents must be >= 1")
    }

    pub fn try_new(n: usize, h: usize, w: usize, c: usize) -> Result<Self> {
        if n == 0 || h == 0 || w == 0 || c == 0 {
            return Err(Error::shape(format!("zero extent in {n}x{h}x{w}x{c}")));
        }
        Ok(Self { n, h, w, c })
    }

    pub fn scalar() -> Self {
        Self::new(1, 1, 1, 1)
    }

    /// Per-channel vector shape `1 x 1 x 1 x C`.
    pub fn channels(c: usize) -> Self {
        Self::new(1, 1, 1, c)
    }

    pub fn len(&self) -> usize {
        self.n * self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of spatial positions per sample.
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Number of values per sample.
    pub fn sample_len(&self) -> usize {
        self.h * self.w * self.c
    }

    #[inline]
    pub fn index(&self, n: usize, y: usize, x: usize, c: usize) -> usize {
        ((n * self.h + y) * self.w + x) * self.c + c
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.h, self.w, self.c]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.h, self.w, self.c)
    }
}

/// Dense `N x H x W x C` array of `f64` with an optional gradient slot.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid4 {
    shape: Shape,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Grid4 {
    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
            grad: None,
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(format!(
                "{} values supplied for shape {shape} ({} expected)",
                data.len(),
                shape.len()
            )));
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    pub fn scalar(value: f64) -> Self {
        Self::filled(Shape::scalar(), value)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for y in 0..shape.h {
                for x in 0..shape.w {
                    for c in 0..shape.c {
                        data.push(f(n, y, x, c));
                    }
                }
            }
        }
        Self {
            shape,
            data,
            grad: None,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, n: usize, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.shape.index(n, y, x, c)]
    }

    pub fn set(&mut self, n: usize, y: usize, x: usize, c: usize, value: f64) {
        let i = self.shape.index(n, y, x, c);
        self.data[i] = value;
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f64]> {
        self.grad.as_deref_mut()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::shape(format!(
                "gradient of length {} for grid {}",
                grad.len(),
                self.shape
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        match &mut self.grad {
            Some(g) => g.iter_mut().for_each(|v| *v = 0.0),
            None => self.grad = Some(vec![0.0; self.data.len()]),
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Copy of the values with the gradient slot dropped.
    pub fn detached(&self) -> Self {
        Self {
            shape: self.shape,
            data: self.data.clone(),
            grad: None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Samples `[start, start + len)` along the batch axis.
    pub fn slice_n(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.shape.n {
            return Err(Error::shape(format!(
                "batch slice {start}..{} out of range for {}",
                start + len,
                self.shape
            )));
        }
        let per = self.shape.sample_len();
        let shape = Shape { n: len, ..self.shape };
        Ok(Self {
            shape,
            data: self.data[start * per..(start + len) * per].to_vec(),
            grad: None,
        })
    }

    pub fn sample(&self, n: usize) -> Result<Self> {
        self.slice_n(n, 1)
    }

    /// Concatenates grids along the batch axis.
    pub fn concat_n(parts: &[&Grid4]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero grids"))?;
        let mut n = 0;
        let mut data = Vec::new();
        for p in parts {
            let s = p.shape;
            if (s.h, s.w, s.c) != (first.shape.h, first.shape.w, first.shape.c) {
                return Err(Error::shape(format!(
                    "cannot concatenate {} with {}",
                    first.shape, s
                )));
            }
            n += s.n;
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            shape: Shape { n, ..first.shape },
            data,
            grad: None,
        })
    }

    /// Per-channel values when this grid is a `1 x 1 x 1 x C` vector.
    pub fn channel_values(&self) -> &[f64] {
        &self.data
    }
}

/// Integer class map of shape `N x H x W`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    n: usize,
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(n: usize, h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if n == 0 || h == 0 || w == 0 || data.len() != n * h * w {
            return Err(Error::shape(format!(
                "label map {n}x{h}x{w} with {} values",
                data.len()
            )));
        }
        Ok(Self { n, h, w, data })
    }

    pub fn filled(n: usize, h: usize, w: usize, value: u8) -> Self {
        Self {
            n,
            h,
            w,
            data: vec![value; n * h * w],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n, self.h, self.w)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, n: usize, y: usize, x: usize) -> u8 {
        self.data[(n * self.h + y) * self.w + x]
    }

    pub fn concat(parts: &[&LabelMap]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero label maps"))?;
        let mut n = 0;
        let mut data = Vec::new();
        for p in parts {
            if (p.h, p.w) != (first.h, first.w) {
                return Err(Error::shape(format!(
                    "label maps {}x{} and {}x{}",
                    first.h, first.w, p.h, p.w
                )));
            }
            n += p.n;
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            n,
            h: first.h,
            w: first.w,
            data,
        })
    }

    pub fn sample(&self, n: usize) -> Result<Self> {
        self.sample_range(n, 1)
    }

    /// Samples `start..start + len`.
    pub fn sample_range(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.n {
            return Err(Error::shape(format!("samples {start}..{} of {}", start + len, self.n)));
        }
        let per = self.h * self.w;
        Ok(Self {
            n: len,
            h: self.h,
            w: self.w,
            data: self.data[start * per..(start + len) * per].to_vec(),
        })
    }
}
