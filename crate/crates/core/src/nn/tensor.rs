use std::fmt;

use crate::error::{Error, Result};

/// Dense real tensor with logical shape `height x width x channels x batch`.
///
/// Storage is batch-major with channels innermost, so a single spatial
/// position of one example is a contiguous run of `channels` values.
#[derive(Clone, PartialEq)]
pub struct RealTensor {
    h: usize,
    w: usize,
    c: usize,
    b: usize,
    data: Vec<f64>,
}

impl RealTensor {
    pub fn zeros(h: usize, w: usize, c: usize, b: usize) -> Self {
        assert!(
            h >= 1 && w >= 1 && c >= 1 && b >= 1,
            "tensor dimensions must be positive"
        );
        Self {
            h,
            w,
            c,
            b,
            data: vec![0.0; h * w * c * b],
        }
    }

    pub fn from_vec(h: usize, w: usize, c: usize, b: usize, data: Vec<f64>) -> Result<Self> {
        if h == 0 || w == 0 || c == 0 || b == 0 || data.len() != h * w * c * b {
            return Err(Error::dim(
                "tensor",
                format!("{} values for shape {h}x{w}x{c}x{b}", data.len()),
            ));
        }
        Ok(Self { h, w, c, b, data })
    }

    pub fn from_fn(
        h: usize,
        w: usize,
        c: usize,
        b: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Self {
        let mut t = Self::zeros(h, w, c, b);
        for n in 0..b {
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        let i = t.offset(y, x, ch, n);
                        t.data[i] = f(y, x, ch, n);
                    }
                }
            }
        }
        t
    }

    /// `(height, width, channels, batch)`
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.h, self.w, self.c, self.b)
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn batch(&self) -> usize {
        self.b
    }

    /// Spatial positions across the whole batch.
    pub fn positions(&self) -> usize {
        self.h * self.w * self.b
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn offset(&self, y: usize, x: usize, ch: usize, n: usize) -> usize {
        ((n * self.h + y) * self.w + x) * self.c + ch
    }

    pub fn get(&self, y: usize, x: usize, ch: usize, n: usize) -> f64 {
        self.data[self.offset(y, x, ch, n)]
    }

    pub fn set(&mut self, y: usize, x: usize, ch: usize, n: usize, v: f64) {
        let i = self.offset(y, x, ch, n);
        self.data[i] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &RealTensor) -> bool {
        self.shape() == other.shape()
    }

    fn check_shape(&self, other: &RealTensor, op: &'static str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::dim(op, format!("{:?} vs {:?}", self.shape(), other.shape())))
        }
    }

    pub fn sub(&self, other: &RealTensor) -> Result<RealTensor> {
        self.check_shape(other, "tensor sub")?;
        let mut out = self.clone();
        out.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a -= b);
        Ok(out)
    }

    pub fn add(&self, other: &RealTensor) -> Result<RealTensor> {
        self.check_shape(other, "tensor add")?;
        let mut out = self.clone();
        out.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &RealTensor) -> Result<()> {
        self.check_shape(other, "tensor add_assign")?;
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn scale(&self, s: f64) -> RealTensor {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|a| *a *= s);
        out
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &RealTensor) -> Result<f64> {
        self.check_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Example `n` as a batch-of-one tensor.
    pub fn example(&self, n: usize) -> RealTensor {
        let len = self.h * self.w * self.c;
        RealTensor {
            h: self.h,
            w: self.w,
            c: self.c,
            b: 1,
            data: self.data[n * len..(n + 1) * len].to_vec(),
        }
    }

    /// New batch made of the listed examples, in order.
    pub fn gather(&self, indices: &[usize]) -> Result<RealTensor> {
        let len = self.h * self.w * self.c;
        if indices.is_empty() || indices.iter().any(|&i| i >= self.b) {
            return Err(Error::dim(
                "gather",
                format!("indices out of range for batch {}", self.b),
            ));
        }
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(&self.data[i * len..(i + 1) * len]);
        }
        Ok(RealTensor {
            h: self.h,
            w: self.w,
            c: self.c,
            b: indices.len(),
            data,
        })
    }

    /// Concatenate along the batch dimension.
    pub fn stack(items: &[&RealTensor]) -> Result<RealTensor> {
        let first = items.first().ok_or_else(|| Error::dim("stack", "no tensors"))?;
        let (h, w, c, _) = first.shape();
        let mut data = Vec::with_capacity(items.iter().map(|t| t.len()).sum());
        let mut b = 0;
        for t in items {
            if (t.h, t.w, t.c) != (h, w, c) {
                return Err(Error::dim("stack", format!("{:?} vs {:?}", t.shape(), first.shape())));
            }
            data.extend_from_slice(&t.data);
            b += t.b;
        }
        Ok(RealTensor { h, w, c, b, data })
    }
}

impl fmt::Debug for RealTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RealTensor {}x{}x{}x{}", self.h, self.w, self.c, self.b)
    }
}
