use rand::Rng;

use super::RealTensor;
use crate::error::{Error, Result};

const TAPS: usize = 9;

/// 3x3 convolution, stride 1, zero "same" padding.
///
/// Weights are laid out `out_ch x 3 x 3 x in_ch`, which is also the row layout
/// of the im2col patch matrix, so forward and backward are plain GEMMs.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Forward state kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    patches: Vec<f64>,
    in_shape: (usize, usize, usize, usize),
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: RealTensor,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        assert!(in_ch >= 1 && out_ch >= 1);
        Self {
            in_ch,
            out_ch,
            weights: vec![0.0; out_ch * TAPS * in_ch],
            bias: vec![0.0; out_ch],
        }
    }

    /// Fan-in scaled uniform weights (He), zero bias.
    pub fn init<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        let mut layer = Self::zeros(in_ch, out_ch);
        let bound = (6.0 / (TAPS * in_ch) as f64).sqrt();
        for w in &mut layer.weights {
            *w = rng.gen_range(-bound..bound);
        }
        layer
    }

    pub fn patch_len(&self) -> usize {
        TAPS * self.in_ch
    }

    #[inline]
    pub fn weight_index(&self, co: usize, ky: usize, kx: usize, ci: usize) -> usize {
        ((co * 3 + ky) * 3 + kx) * self.in_ch + ci
    }

    fn im2col(&self, x: &RealTensor) -> Vec<f64> {
        let (h, w, c, b) = x.shape();
        let plen = self.patch_len();
        let mut patches = vec![0.0; x.positions() * plen];
        let src = x.as_slice();
        for n in 0..b {
            for y in 0..h {
                for xx in 0..w {
                    let row = ((n * h + y) * w + xx) * plen;
                    for ky in 0..3 {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let sx = xx as isize + kx as isize - 1;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            let s = x.offset(sy as usize, sx as usize, 0, n);
                            let d = row + (ky * 3 + kx) * c;
                            patches[d..d + c].copy_from_slice(&src[s..s + c]);
                        }
                    }
                }
            }
        }
        patches
    }

    fn col2im(&self, grad_patches: &[f64], shape: (usize, usize, usize, usize)) -> RealTensor {
        let (h, w, c, b) = shape;
        let plen = self.patch_len();
        let mut out = RealTensor::zeros(h, w, c, b);
        for n in 0..b {
            for y in 0..h {
                for xx in 0..w {
                    let row = ((n * h + y) * w + xx) * plen;
                    for ky in 0..3 {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let sx = xx as isize + kx as isize - 1;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            let d = out.offset(sy as usize, sx as usize, 0, n);
                            let s = row + (ky * 3 + kx) * c;
                            let dst = &mut out.as_mut_slice()[d..d + c];
                            for (o, g) in dst.iter_mut().zip(&grad_patches[s..s + c]) {
                                *o += g;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn check_input(&self, x: &RealTensor) -> Result<()> {
        if x.channels() != self.in_ch {
            return Err(Error::dim(
                "conv2d",
                format!("input has {} channels, layer expects {}", x.channels(), self.in_ch),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, x: &RealTensor) -> Result<(RealTensor, ConvCache)> {
        self.check_input(x)?;
        let patches = self.im2col(x);
        let out = self.apply_patches(&patches, x.shape());
        Ok((
            out,
            ConvCache {
                patches,
                in_shape: x.shape(),
            },
        ))
    }

    /// Forward without keeping the patch matrix.
    pub fn infer(&self, x: &RealTensor) -> Result<RealTensor> {
        self.check_input(x)?;
        let patches = self.im2col(x);
        Ok(self.apply_patches(&patches, x.shape()))
    }

    fn apply_patches(&self, patches: &[f64], (h, w, _, b): (usize, usize, usize, usize)) -> RealTensor {
        let rows = h * w * b;
        let plen = self.patch_len();
        let cout = self.out_ch;
        let mut out = RealTensor::zeros(h, w, cout, b);
        {
            let y = out.as_mut_slice();
            for r in 0..rows {
                y[r * cout..(r + 1) * cout].copy_from_slice(&self.bias);
            }
            // Y (rows x cout) += patches (rows x plen) * W^T (plen x cout)
            unsafe {
                matrixmultiply::dgemm(
                    rows,
                    plen,
                    cout,
                    1.0,
                    patches.as_ptr(),
                    plen as isize,
                    1,
                    self.weights.as_ptr(),
                    1,
                    plen as isize,
                    1.0,
                    y.as_mut_ptr(),
                    cout as isize,
                    1,
                );
            }
        }
        out
    }

    pub fn backward(&self, cache: &ConvCache, grad_out: &RealTensor) -> Result<ConvGrads> {
        let (h, w, _, b) = cache.in_shape;
        if grad_out.shape() != (h, w, self.out_ch, b) {
            return Err(Error::dim(
                "conv2d backward",
                format!("grad {:?} for input {:?}", grad_out.shape(), cache.in_shape),
            ));
        }
        let rows = h * w * b;
        let plen = self.patch_len();
        let cout = self.out_ch;
        let g = grad_out.as_slice();

        let mut bias = vec![0.0; cout];
        for r in 0..rows {
            for (acc, v) in bias.iter_mut().zip(&g[r * cout..(r + 1) * cout]) {
                *acc += v;
            }
        }

        let mut weights = vec![0.0; cout * plen];
        let mut grad_patches = vec![0.0; rows * plen];
        unsafe {
            // dW (cout x plen) = G^T (cout x rows) * patches (rows x plen)
            matrixmultiply::dgemm(
                cout,
                rows,
                plen,
                1.0,
                g.as_ptr(),
                1,
                cout as isize,
                cache.patches.as_ptr(),
                plen as isize,
                1,
                0.0,
                weights.as_mut_ptr(),
                plen as isize,
                1,
            );
            // dPatches (rows x plen) = G (rows x cout) * W (cout x plen)
            matrixmultiply::dgemm(
                rows,
                cout,
                plen,
                1.0,
                g.as_ptr(),
                cout as isize,
                1,
                self.weights.as_ptr(),
                plen as isize,
                1,
                0.0,
                grad_patches.as_mut_ptr(),
                plen as isize,
                1,
            );
        }
        let input = self.col2im(&grad_patches, cache.in_shape);
        Ok(ConvGrads { input, weights, bias })
    }
}
