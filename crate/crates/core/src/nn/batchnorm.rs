use super::RealTensor;
use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the old running statistic in each update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel batch normalization over batch and spatial positions.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormLayer {
    pub gain: Vec<f64>,
    pub shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub epsilon: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: (usize, usize, usize, usize),
}

#[derive(Debug, Clone)]
pub struct BnGrads {
    pub input: RealTensor,
    pub gain: Vec<f64>,
    pub shift: Vec<f64>,
}

impl BatchNormLayer {
    pub fn new(channels: usize) -> Self {
        Self {
            gain: vec![1.0; channels],
            shift: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            epsilon: BN_EPSILON,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gain.len()
    }

    /// Train mode normalizes with batch statistics and updates the running
    /// statistics; eval mode applies the frozen affine map.
    pub fn forward(&mut self, x: &RealTensor, mode: Mode) -> Result<(RealTensor, Option<BnCache>)> {
        let c = self.channels();
        if x.channels() != c {
            return Err(Error::dim(
                "batchnorm",
                format!("{} channels, layer has {c}", x.channels()),
            ));
        }
        match mode {
            Mode::Eval => Ok((self.infer(x), None)),
            Mode::Train => {
                let count = x.positions();
                if count < 2 {
                    return Err(Error::InvalidArgument(
                        "train-mode batch norm needs at least two samples per channel".into(),
                    ));
                }
                let (mean, var) = channel_moments(x);
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();
                let mut xhat = vec![0.0; x.len()];
                let mut out = RealTensor::zeros(x.height(), x.width(), c, x.batch());
                let src = x.as_slice();
                let dst = out.as_mut_slice();
                for r in 0..count {
                    for ch in 0..c {
                        let i = r * c + ch;
                        let xh = (src[i] - mean[ch]) * inv_std[ch];
                        xhat[i] = xh;
                        dst[i] = self.gain[ch] * xh + self.shift[ch];
                    }
                }
                let unbias = count as f64 / (count as f64 - 1.0);
                for ch in 0..c {
                    self.running_mean[ch] = self.momentum * self.running_mean[ch] + (1.0 - self.momentum) * mean[ch];
                    self.running_var[ch] =
                        self.momentum * self.running_var[ch] + (1.0 - self.momentum) * var[ch] * unbias;
                }
                Ok((
                    out,
                    Some(BnCache {
                        xhat,
                        inv_std,
                        shape: x.shape(),
                    }),
                ))
            }
        }
    }

    /// Eval-mode forward; does not touch the running statistics.
    pub fn infer(&self, x: &RealTensor) -> RealTensor {
        let c = self.channels();
        let (scale, offset) = self.eval_affine();
        let mut out = x.clone();
        for (i, v) in out.as_mut_slice().iter_mut().enumerate() {
            let ch = i % c;
            *v = scale[ch] * *v + offset[ch];
        }
        out
    }

    /// Per-channel `(scale, offset)` of the eval-mode map `y = scale x + offset`.
    pub fn eval_affine(&self) -> (Vec<f64>, Vec<f64>) {
        let scale: Vec<f64> = self
            .gain
            .iter()
            .zip(&self.running_var)
            .map(|(g, v)| g / (v + self.epsilon).sqrt())
            .collect();
        let offset = scale
            .iter()
            .zip(&self.running_mean)
            .zip(&self.shift)
            .map(|((s, m), b)| b - s * m)
            .collect();
        (scale, offset)
    }

    pub fn backward(&self, cache: Option<&BnCache>, grad_out: &RealTensor) -> Result<BnGrads> {
        let cache = cache.ok_or(Error::MissingCache)?;
        if grad_out.shape() != cache.shape {
            return Err(Error::dim(
                "batchnorm backward",
                format!("grad {:?} vs cached {:?}", grad_out.shape(), cache.shape),
            ));
        }
        let c = self.channels();
        let count = grad_out.positions();
        let g = grad_out.as_slice();
        let mut shift = vec![0.0; c];
        let mut gain = vec![0.0; c];
        for r in 0..count {
            for ch in 0..c {
                let i = r * c + ch;
                shift[ch] += g[i];
                gain[ch] += g[i] * cache.xhat[i];
            }
        }
        // dx = gamma * inv_std / n * (n dy - sum(dy) - xhat * sum(dy xhat))
        let n = count as f64;
        let mut input = RealTensor::zeros(cache.shape.0, cache.shape.1, c, cache.shape.3);
        let dst = input.as_mut_slice();
        for r in 0..count {
            for ch in 0..c {
                let i = r * c + ch;
                let k = self.gain[ch] * cache.inv_std[ch] / n;
                dst[i] = k * (n * g[i] - shift[ch] - cache.xhat[i] * gain[ch]);
            }
        }
        Ok(BnGrads { input, gain, shift })
    }
}

/// Per-channel mean and biased variance over batch and spatial positions.
pub(crate) fn channel_moments(x: &RealTensor) -> (Vec<f64>, Vec<f64>) {
    let c = x.channels();
    let count = x.positions();
    let src = x.as_slice();
    let mut mean = vec![0.0; c];
    for r in 0..count {
        for ch in 0..c {
            mean[ch] += src[r * c + ch];
        }
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    let mut var = vec![0.0; c];
    for r in 0..count {
        for ch in 0..c {
            let d = src[r * c + ch] - mean[ch];
            var[ch] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= count as f64);
    (mean, var)
}
