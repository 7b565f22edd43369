//! Cascaded denoising residual network: `D` identical blocks, each predicting
//! the noise left in its input and subtracting it.

mod io;
mod train;

pub use io::{
    activations_bytes, activations_from_bytes, checkpoint_bytes, checkpoint_from_bytes, load_activations,
    load_checkpoint, save_activations, save_checkpoint, CHECKPOINT_VERSION,
};
pub use train::{train, LossHistory, TrainConfig, TrainingSet};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::denoise_observation;
use crate::linalg::CMatrix;
use crate::nn::{relu_backward, relu_forward, BatchNormLayer, BnCache, ConvCache, ConvLayer, Mode, RealTensor};
use crate::protocol::{Observation, ReflectionSchedule};
use crate::rng::{substream, Domain};

/// Real and imaginary planes.
pub const IO_CHANNELS: usize = 2;

/// `F`: channel 0 holds the real part, channel 1 the imaginary part.
pub fn to_real_channels(x: &CMatrix) -> RealTensor {
    RealTensor::from_fn(x.rows(), x.cols(), IO_CHANNELS, 1, |r, c, ch, _| {
        let v = x[(r, c)];
        if ch == 0 {
            v.re
        } else {
            v.im
        }
    })
}

pub fn from_real_channels(a: &RealTensor) -> Result<CMatrix> {
    if a.channels() != IO_CHANNELS || a.batch() != 1 {
        return Err(Error::dim(
            "from_real_channels",
            format!("need h x w x 2 x 1, got {:?}", a.shape()),
        ));
    }
    Ok(CMatrix::from_fn(a.height(), a.width(), |r, c| {
        Complex64::new(a.get(r, c, 0, 0), a.get(r, c, 1, 0))
    }))
}

/// Network shape. `n` is the IRS element count, so inputs are `m x (n + 1) x 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CdrnArch {
    pub m: usize,
    pub n: usize,
    pub blocks: usize,
    pub layers: usize,
    pub filters: usize,
}

impl CdrnArch {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::Config("network input dimensions must be positive".into()));
        }
        if self.blocks == 0 {
            return Err(Error::Config("at least one denoising block is required".into()));
        }
        if self.layers < 2 {
            return Err(Error::Config("each block needs at least two layers".into()));
        }
        if self.filters == 0 {
            return Err(Error::Config("filter count must be positive".into()));
        }
        Ok(())
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        (self.m, self.n + 1, IO_CHANNELS)
    }
}

/// Conv+BN+ReLU for every layer but the last, which is a bare 2-filter conv.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoisingBlock {
    pub convs: Vec<ConvLayer>,
    pub norms: Vec<BatchNormLayer>,
}

#[derive(Debug)]
struct HiddenCache {
    conv: ConvCache,
    bn: Option<BnCache>,
    pre_act: RealTensor,
}

#[derive(Debug)]
pub struct BlockCache {
    hidden: Vec<HiddenCache>,
    last: ConvCache,
}

/// Result of one block: `next = input - residual`.
#[derive(Debug)]
pub struct BlockOutput {
    pub next: RealTensor,
    pub residual: RealTensor,
    pub cache: Option<BlockCache>,
}

impl DenoisingBlock {
    fn layer_channels(arch: &CdrnArch) -> Vec<(usize, usize)> {
        (0..arch.layers)
            .map(|i| {
                let cin = if i == 0 { IO_CHANNELS } else { arch.filters };
                let cout = if i + 1 == arch.layers {
                    IO_CHANNELS
                } else {
                    arch.filters
                };
                (cin, cout)
            })
            .collect()
    }

    pub fn zeros(arch: &CdrnArch) -> Self {
        let convs = Self::layer_channels(arch)
            .into_iter()
            .map(|(i, o)| ConvLayer::zeros(i, o))
            .collect();
        let mut norms: Vec<BatchNormLayer> = (1..arch.layers).map(|_| BatchNormLayer::new(arch.filters)).collect();
        for bn in &mut norms {
            bn.gain.iter_mut().for_each(|g| *g = 0.0);
        }
        Self { convs, norms }
    }

    /// He-uniform hidden layers; the output conv starts at zero so every
    /// block begins as the identity.
    pub fn init<R: rand::Rng + ?Sized>(arch: &CdrnArch, rng: &mut R) -> Self {
        let mut convs: Vec<ConvLayer> = Self::layer_channels(arch)
            .into_iter()
            .map(|(i, o)| ConvLayer::init(i, o, rng))
            .collect();
        let last = convs.last_mut().expect("block has layers");
        *last = ConvLayer::zeros(last.in_ch, last.out_ch);
        let norms = (1..arch.layers).map(|_| BatchNormLayer::new(arch.filters)).collect();
        Self { convs, norms }
    }

    /// Train mode keeps the caches needed by `backward` and updates BN running stats.
    pub fn forward(&mut self, a: &RealTensor, mode: Mode) -> Result<BlockOutput> {
        if a.channels() != IO_CHANNELS {
            return Err(Error::dim("block_forward", format!("input {:?}", a.shape())));
        }
        let train = mode == Mode::Train;
        let mut hidden = Vec::with_capacity(self.norms.len());
        let mut x = a.clone();
        for (conv, bn) in self.convs.iter().zip(self.norms.iter_mut()) {
            let (z, conv_cache) = if train {
                let (z, c) = conv.forward(&x)?;
                (z, Some(c))
            } else {
                (conv.infer(&x)?, None)
            };
            let (pre_act, bn_cache) = bn.forward(&z, mode)?;
            x = relu_forward(&pre_act);
            if let Some(conv) = conv_cache {
                hidden.push(HiddenCache {
                    conv,
                    bn: bn_cache,
                    pre_act,
                });
            }
        }
        let last = self.convs.last().expect("block has layers");
        let (residual, cache) = if train {
            let (r, c) = last.forward(&x)?;
            (r, Some(BlockCache { hidden, last: c }))
        } else {
            (last.infer(&x)?, None)
        };
        let next = a.sub(&residual)?;
        Ok(BlockOutput { next, residual, cache })
    }

    /// Eval-mode forward; leaves the block untouched.
    pub fn infer(&self, a: &RealTensor) -> Result<(RealTensor, RealTensor)> {
        if a.channels() != IO_CHANNELS {
            return Err(Error::dim("block_forward", format!("input {:?}", a.shape())));
        }
        let mut x = a.clone();
        for (conv, bn) in self.convs.iter().zip(&self.norms) {
            x = relu_forward(&bn.infer(&conv.infer(&x)?));
        }
        let residual = self.convs.last().expect("block has layers").infer(&x)?;
        Ok((a.sub(&residual)?, residual))
    }

    /// Given `dL/d next`, returns `dL/d input` and pushes parameter gradients
    /// onto `grads` in [`DenoisingBlock::params`] order.
    fn backward(&self, cache: &BlockCache, grad_next: &RealTensor, grads: &mut Vec<Vec<f64>>) -> Result<RealTensor> {
        let mut per_layer: Vec<[Vec<f64>; 4]> = Vec::with_capacity(self.convs.len());
        let last = self.convs.last().expect("block has layers");
        let g_last = last.backward(&cache.last, &grad_next.scale(-1.0))?;
        let mut g = g_last.input;
        let last_grads = [g_last.weights, g_last.bias, Vec::new(), Vec::new()];
        for (i, hc) in cache.hidden.iter().enumerate().rev() {
            let g_pre = relu_backward(&hc.pre_act, &g)?;
            let gb = self.norms[i].backward(hc.bn.as_ref(), &g_pre)?;
            let gc = self.convs[i].backward(&hc.conv, &gb.input)?;
            g = gc.input;
            per_layer.push([gc.weights, gc.bias, gb.gain, gb.shift]);
        }
        per_layer.reverse();
        for [w, b, gain, shift] in per_layer {
            grads.extend([w, b, gain, shift]);
        }
        let [w, b, _, _] = last_grads;
        grads.extend([w, b]);
        grad_next.add(&g)
    }

    /// Trainable tensors: per hidden layer conv weights, conv bias, BN gain,
    /// BN shift; then the last conv's weights and bias.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for (conv, bn) in self.convs.iter().zip(&self.norms) {
            out.extend([conv.weights.as_slice(), &conv.bias, &bn.gain, &bn.shift]);
        }
        let last = self.convs.last().expect("block has layers");
        out.extend([last.weights.as_slice(), &last.bias]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let hidden = self.norms.len();
        let (head, tail) = self.convs.split_at_mut(hidden);
        let mut out: Vec<&mut [f64]> = Vec::new();
        for (conv, bn) in head.iter_mut().zip(self.norms.iter_mut()) {
            out.push(&mut conv.weights);
            out.push(&mut conv.bias);
            out.push(&mut bn.gain);
            out.push(&mut bn.shift);
        }
        let last = &mut tail[0];
        out.push(&mut last.weights);
        out.push(&mut last.bias);
        out
    }
}

/// Every intermediate of a full forward pass.
#[derive(Debug)]
pub struct ForwardPass {
    pub output: RealTensor,
    pub residuals: Vec<RealTensor>,
    pub caches: Vec<BlockCache>,
}

impl ForwardPass {
    /// Smallest `|x|` over every ReLU input of a train-mode pass.
    pub fn min_abs_pre_activation(&self) -> f64 {
        self.caches
            .iter()
            .flat_map(|c| c.hidden.iter())
            .flat_map(|h| h.pre_act.as_slice().iter())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

/// `h(A) = g(s A) / s` where `g` is the block cascade and `s` the input
/// scale, a power of two so the rescaling is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct CdrnModel {
    pub arch: CdrnArch,
    pub blocks: Vec<DenoisingBlock>,
    input_scale: f64,
}

impl CdrnModel {
    /// All-zero parameters: the identity map.
    pub fn zeros(arch: CdrnArch) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            arch,
            blocks: (0..arch.blocks).map(|_| DenoisingBlock::zeros(&arch)).collect(),
            input_scale: 1.0,
        })
    }

    pub fn init(arch: CdrnArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = substream(seed, Domain::Init, 0);
        let blocks = (0..arch.blocks)
            .map(|_| DenoisingBlock::init(&arch, &mut rng))
            .collect();
        Ok(Self {
            arch,
            blocks,
            input_scale: 1.0,
        })
    }

    /// Every layer He-uniform, the output convs included; for tests that
    /// need a network far from the identity.
    pub fn random(arch: CdrnArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = substream(seed, Domain::Init, 1);
        let blocks = (0..arch.blocks)
            .map(|_| {
                let convs = DenoisingBlock::layer_channels(&arch)
                    .into_iter()
                    .map(|(i, o)| ConvLayer::init(i, o, &mut rng))
                    .collect();
                let norms = (1..arch.layers).map(|_| BatchNormLayer::new(arch.filters)).collect();
                DenoisingBlock { convs, norms }
            })
            .collect();
        Ok(Self {
            arch,
            blocks,
            input_scale: 1.0,
        })
    }

    pub fn input_scale(&self) -> f64 {
        self.input_scale
    }

    pub fn set_input_scale(&mut self, scale: f64) -> Result<()> {
        if !(scale > 0.0 && scale.is_finite()) || scale.log2().fract() != 0.0 {
            return Err(Error::InvalidArgument(format!(
                "input scale {scale} is not a power of two"
            )));
        }
        self.input_scale = scale;
        Ok(())
    }

    /// Power of two nearest `1 / rms(inputs)`.
    pub fn fit_input_scale(&mut self, inputs: &RealTensor) -> Result<()> {
        let rms = (inputs.sum_sq() / inputs.len().max(1) as f64).sqrt();
        if !(rms > 0.0 && rms.is_finite()) {
            return Err(Error::InvalidArgument(format!("input rms {rms}")));
        }
        self.set_input_scale((-rms.log2()).round().exp2())
    }

    fn check_input(&self, a: &RealTensor) -> Result<()> {
        let (h, w, c) = self.arch.input_shape();
        if (a.height(), a.width(), a.channels()) != (h, w, c) {
            return Err(Error::dim(
                "cdrn_forward",
                format!("input {:?}, network expects {h}x{w}x{c}", a.shape()),
            ));
        }
        Ok(())
    }

    pub fn forward(&mut self, a: &RealTensor, mode: Mode) -> Result<ForwardPass> {
        self.check_input(a)?;
        let s = self.input_scale;
        let mut x = a.scale(s);
        let mut residuals = Vec::with_capacity(self.blocks.len());
        let mut caches = Vec::new();
        for block in &mut self.blocks {
            let out = block.forward(&x, mode)?;
            x = out.next;
            residuals.push(out.residual.scale(1.0 / s));
            caches.extend(out.cache);
        }
        Ok(ForwardPass {
            output: x.scale(1.0 / s),
            residuals,
            caches,
        })
    }

    /// Eval-mode output and per-block residuals.
    pub fn infer(&self, a: &RealTensor) -> Result<(RealTensor, Vec<RealTensor>)> {
        let acts = self.activations(a)?;
        let residuals = acts.windows(2).map(|p| p[0].sub(&p[1])).collect::<Result<Vec<_>>>()?;
        Ok((acts.last().cloned().expect("input is always present"), residuals))
    }

    /// `A, A_1, ..., A_D` in eval mode.
    pub fn activations(&self, a: &RealTensor) -> Result<Vec<RealTensor>> {
        self.check_input(a)?;
        let s = self.input_scale;
        let mut x = a.scale(s);
        let mut acts = vec![a.clone()];
        for block in &self.blocks {
            x = block.infer(&x)?.0;
            acts.push(x.scale(1.0 / s));
        }
        Ok(acts)
    }

    /// Parameter gradients from a train-mode pass, given `dL/d output`.
    pub fn backward(&self, pass: &ForwardPass, grad_out: &RealTensor) -> Result<Vec<Vec<f64>>> {
        if pass.caches.len() != self.blocks.len() {
            return Err(Error::MissingCache);
        }
        let mut per_block = Vec::with_capacity(self.blocks.len());
        let mut g = grad_out.scale(1.0 / self.input_scale);
        for (block, cache) in self.blocks.iter().zip(&pass.caches).rev() {
            let mut grads = Vec::new();
            g = block.backward(cache, &g, &mut grads)?;
            per_block.push(grads);
        }
        per_block.reverse();
        Ok(per_block.into_iter().flatten().collect())
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.blocks.iter().flat_map(|b| b.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.blocks.iter_mut().flat_map(|b| b.params_mut()).collect()
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.params().iter().map(|p| p.len()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_sizes().iter().sum()
    }
}

/// Eval-mode network output and block residuals; the model is not modified.
pub fn cdrn_forward(a: &RealTensor, model: &CdrnModel) -> Result<(RealTensor, Vec<RealTensor>)> {
    model.infer(a)
}

/// `J = 1/(2B) sum_i ||out_i - label_i||^2` and its gradient with respect to `out`.
pub fn batch_loss(output: &RealTensor, labels: &RealTensor) -> Result<(f64, RealTensor)> {
    let diff = output.sub(labels)?;
    let b = output.batch() as f64;
    Ok((diff.sum_sq() / (2.0 * b), diff.scale(1.0 / b)))
}

/// Train-mode loss of `model` on a batch; updates BN running statistics.
pub fn cdrn_loss(model: &mut CdrnModel, inputs: &RealTensor, labels: &RealTensor) -> Result<f64> {
    let pass = model.forward(inputs, Mode::Train)?;
    Ok(batch_loss(&pass.output, labels)?.0)
}

/// LS observation refined by the network in eval mode.
pub fn cdrn_estimate(obs: &Observation, sched: &ReflectionSchedule, model: &CdrnModel) -> Result<CMatrix> {
    let coarse = denoise_observation(obs, sched)?;
    let (out, _) = model.infer(&to_real_channels(&coarse))?;
    from_real_channels(&out)
}

/// `A, A_1, ..., A_D` for one coarse estimate.
pub fn export_block_activations(x_tilde: &CMatrix, model: &CdrnModel) -> Result<Vec<RealTensor>> {
    model.activations(&to_real_channels(x_tilde))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::cscg;
    use rand::Rng;

    fn mini() -> CdrnArch {
        CdrnArch {
            m: 3,
            n: 3,
            blocks: 2,
            layers: 3,
            filters: 8,
        }
    }

    fn random_input(arch: &CdrnArch, batch: usize, seed: u64) -> RealTensor {
        let mut rng = substream(seed, Domain::Scratch, 0);
        let (h, w, c) = arch.input_shape();
        RealTensor::from_fn(h, w, c, batch, |_, _, _, _| rng.gen_range(-1.0..1.0))
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> CMatrix {
        let mut rng = substream(seed, Domain::Scratch, 1);
        CMatrix::from_fn(rows, cols, |_, _| cscg(&mut rng, 1.0))
    }

    #[test]
    fn real_channel_mapping() {
        let real = CMatrix::from_fn(2, 3, |r, c| Complex64::new((r * 3 + c) as f64, 0.0));
        let t = to_real_channels(&real);
        assert_eq!(t.shape(), (2, 3, 2, 1));
        assert!((0..2).all(|r| (0..3).all(|c| t.get(r, c, 1, 0) == 0.0)));

        let j = CMatrix::from_fn(2, 2, |r, c| {
            if r == c {
                Complex64::i()
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let t = to_real_channels(&j);
        for r in 0..2 {
            for c in 0..2 {
                assert_eq!(t.get(r, c, 0, 0), 0.0);
                assert_eq!(t.get(r, c, 1, 0), if r == c { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(from_real_channels(&t).unwrap(), j);

        for seed in 0..20 {
            let x = random_matrix(4, 9, seed);
            assert_eq!(from_real_channels(&to_real_channels(&x)).unwrap(), x);
        }
        assert!(from_real_channels(&RealTensor::zeros(2, 2, 3, 1)).is_err());
    }

    #[test]
    fn zero_model_is_identity() {
        let arch = mini();
        let mut model = CdrnModel::zeros(arch).unwrap();
        let a = random_input(&arch, 3, 1);
        let (out, res) = model.infer(&a).unwrap();
        assert_eq!(out, a);
        assert!(res.iter().all(|r| r.sum_sq() == 0.0));
        let pass = model.forward(&a, Mode::Train).unwrap();
        assert_eq!(pass.output, a);
        let block = &mut model.blocks[0];
        let out = block.forward(&a, Mode::Eval).unwrap();
        assert_eq!(out.next, a);
    }

    #[test]
    fn block_identities() {
        let arch = mini();
        let mut model = CdrnModel::random(arch, 3).unwrap();
        let a = random_input(&arch, 2, 2);
        let out = model.blocks[0].forward(&a, Mode::Train).unwrap();
        assert_eq!(out.next.shape(), a.shape());
        assert_eq!(a.sub(&out.residual).unwrap(), out.next);
        assert!(out.next.add(&out.residual).unwrap().max_abs_diff(&a).unwrap() < 1e-15);
        assert!(model.blocks[0]
            .forward(&RealTensor::zeros(3, 4, 1, 1), Mode::Eval)
            .is_err());
    }

    #[test]
    fn residual_decomposition() {
        for seed in 0..5 {
            let arch = CdrnArch {
                m: 4,
                n: 8,
                blocks: 3,
                layers: 4,
                filters: 16,
            };
            let model = CdrnModel::random(arch, seed).unwrap();
            let a = random_input(&arch, 2, seed + 10);
            let (out, residuals) = cdrn_forward(&a, &model).unwrap();
            let mut recon = a.clone();
            for r in &residuals {
                recon = recon.sub(r).unwrap();
            }
            assert!(out.max_abs_diff(&recon).unwrap() < 1e-12);
        }
    }

    #[test]
    fn single_block_model_matches_block() {
        let arch = CdrnArch { blocks: 1, ..mini() };
        let model = CdrnModel::random(arch, 4).unwrap();
        let a = random_input(&arch, 1, 5);
        let (out, res) = model.infer(&a).unwrap();
        let (next, residual) = model.blocks[0].infer(&a).unwrap();
        assert_eq!(out, next);
        assert!(res[0].max_abs_diff(&residual).unwrap() < 1e-15);
    }

    #[test]
    fn loss_values() {
        let arch = mini();
        let mut model = CdrnModel::zeros(arch).unwrap();
        let a = random_input(&arch, 2, 6);
        assert_eq!(cdrn_loss(&mut model, &a, &a).unwrap(), 0.0);
        let ones = RealTensor::from_fn(2, 4, 2, 1, |_, _, _, _| 1.0);
        let (j, _) = batch_loss(&ones, &RealTensor::zeros(2, 4, 2, 1)).unwrap();
        assert_eq!(j, 8.0);
    }

    #[test]
    fn full_model_gradient() {
        let worst = crate::selftest::model_gradient_error(3).unwrap();
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn estimate_with_identity_network_is_ls() {
        use crate::estimators::ls_estimate;
        use crate::protocol::build_dft_schedule;
        let sched = build_dft_schedule(3, 4).unwrap();
        let obs = Observation {
            x: random_matrix(3, 4, 9),
            noise_var_z: 0.1,
        };
        let model = CdrnModel::zeros(mini()).unwrap();
        assert_eq!(
            cdrn_estimate(&obs, &sched, &model).unwrap(),
            ls_estimate(&obs, &sched).unwrap()
        );

        let model = CdrnModel::random(mini(), 1).unwrap();
        let first = cdrn_estimate(&obs, &sched, &model).unwrap();
        assert_eq!(first, cdrn_estimate(&obs, &sched, &model).unwrap());

        let acts = export_block_activations(&ls_estimate(&obs, &sched).unwrap(), &model).unwrap();
        assert_eq!(acts.len(), 3);
        assert!(acts.iter().all(|t| t.shape() == (3, 4, 2, 1)));
        assert_eq!(from_real_channels(acts.last().unwrap()).unwrap(), first);
    }
}
