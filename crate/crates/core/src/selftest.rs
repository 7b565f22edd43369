//! Numerical self-checks shared by the `selftest` subcommand and the test suites.

use rand::Rng;

use crate::cdrn::{batch_loss, cdrn_forward, cdrn_loss, CdrnArch, CdrnModel};
use crate::channel::{realize_channels, ChannelModel, SystemConfig};
use crate::error::Result;
use crate::linalg::CMatrix;
use crate::nn::{
    finite_difference_check, relu_backward, relu_forward, BatchNormLayer, ConvLayer, GradCheck, Mode, RealTensor,
};
use crate::protocol::{build_dft_schedule, build_pilot_book, run_training_phase};
use crate::rng::{substream, Domain, SimRng};

/// Outcome of one check: the measured error against its bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub bound: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.value < self.bound
    }
}

fn rng(seed: u64, index: u64) -> SimRng {
    substream(seed, Domain::Selftest, index)
}

fn uniform_tensor(h: usize, w: usize, c: usize, b: usize, rng: &mut SimRng) -> RealTensor {
    RealTensor::from_fn(h, w, c, b, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

fn dot(a: &RealTensor, b: &RealTensor) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

/// `max |P P^H - C I|` for the DFT schedule.
pub fn schedule_identity_error(n: usize, c: usize) -> Result<f64> {
    let p = build_dft_schedule(n, c)?;
    let gram = p.matrix().matmul(&p.matrix().conj_transpose())?;
    let target = CMatrix::identity(n + 1).scale(c as f64);
    gram.max_abs_diff(&target)
}

/// Largest `|X_k - H_k P|` over users of a noise-free estimation phase.
pub fn protocol_exactness_error(seed: u64, m: usize, n: usize, k: usize) -> Result<f64> {
    let c = n + 1;
    let cfg = SystemConfig {
        m,
        n,
        k,
        c,
        l: k,
        pilot_power: 1.0,
        noise_var_v: 1.0,
        seed,
    };
    let mut r = rng(seed, 1);
    let chan = realize_channels(&cfg, &ChannelModel::default(), &mut r)?;
    let sched = build_dft_schedule(n, c)?;
    let pilots = build_pilot_book(k, k, 1.0)?;
    let obs = run_training_phase(&chan, &sched, &pilots, 0.0, &mut r)?;
    let mut worst = 0.0f64;
    for (o, h) in obs.iter().zip(&chan.h) {
        let expect = h.matmul(sched.matrix())?;
        worst = worst.max(o.x.max_abs_diff(&expect)?);
    }
    Ok(worst)
}

/// Conv layer on a 4x4x2 batch of two, all gradients.
pub fn conv_gradient_error(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 2);
    let layer = ConvLayer::init(2, 3, &mut r);
    let x = uniform_tensor(4, 4, 2, 2, &mut r);
    let g = uniform_tensor(4, 4, 3, 2, &mut r);
    let (_, cache) = layer.forward(&x)?;
    let grads = layer.backward(&cache, &g)?;
    let check = GradCheck::default();
    let loss = |l: &ConvLayer, x: &RealTensor| dot(&l.infer(x).expect("shapes fixed"), &g);
    let ex = finite_difference_check(
        |p: &[f64]| {
            loss(
                &layer,
                &RealTensor::from_vec(4, 4, 2, 2, p.to_vec()).expect("same shape"),
            )
        },
        x.as_slice(),
        grads.input.as_slice(),
        &check,
    );
    let ew = finite_difference_check(
        |p: &[f64]| {
            loss(
                &ConvLayer {
                    weights: p.to_vec(),
                    ..layer.clone()
                },
                &x,
            )
        },
        &layer.weights,
        &grads.weights,
        &check,
    );
    let eb = finite_difference_check(
        |p: &[f64]| {
            loss(
                &ConvLayer {
                    bias: p.to_vec(),
                    ..layer.clone()
                },
                &x,
            )
        },
        &layer.bias,
        &grads.bias,
        &check,
    );
    Ok(ex.max(ew).max(eb))
}

/// Train-mode batch norm on a 3x3x2 batch of four.
pub fn batchnorm_gradient_error(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 3);
    let mut bn = BatchNormLayer::new(2);
    bn.gain = vec![r.gen_range(0.5..1.5), r.gen_range(0.5..1.5)];
    bn.shift = vec![r.gen_range(-0.5..0.5), r.gen_range(-0.5..0.5)];
    let x = uniform_tensor(3, 3, 2, 4, &mut r);
    let g = uniform_tensor(3, 3, 2, 4, &mut r);
    let (_, cache) = bn.clone().forward(&x, Mode::Train)?;
    let grads = bn.backward(cache.as_ref(), &g)?;
    let check = GradCheck::default();
    let loss = |bn: &BatchNormLayer, x: &RealTensor| {
        let (y, _) = bn.clone().forward(x, Mode::Train).expect("valid batch");
        dot(&y, &g)
    };
    let ex = finite_difference_check(
        |p: &[f64]| loss(&bn, &RealTensor::from_vec(3, 3, 2, 4, p.to_vec()).expect("same shape")),
        x.as_slice(),
        grads.input.as_slice(),
        &check,
    );
    let eg = finite_difference_check(
        |p: &[f64]| {
            loss(
                &BatchNormLayer {
                    gain: p.to_vec(),
                    ..bn.clone()
                },
                &x,
            )
        },
        &bn.gain,
        &grads.gain,
        &check,
    );
    let es = finite_difference_check(
        |p: &[f64]| {
            loss(
                &BatchNormLayer {
                    shift: p.to_vec(),
                    ..bn.clone()
                },
                &x,
            )
        },
        &bn.shift,
        &grads.shift,
        &check,
    );
    Ok(ex.max(eg).max(es))
}

/// ReLU away from the kink (`|x| >= 1e-3`).
pub fn relu_gradient_error(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 4);
    let vals: Vec<f64> = (0..200)
        .map(|_| r.gen_range(-1.0..1.0))
        .filter(|v: &f64| v.abs() >= 1e-3)
        .collect();
    let x = RealTensor::from_vec(1, vals.len(), 1, 1, vals.clone())?;
    let g = uniform_tensor(1, vals.len(), 1, 1, &mut r);
    let grads = relu_backward(&x, &g)?;
    Ok(finite_difference_check(
        |p: &[f64]| {
            dot(
                &relu_forward(&RealTensor::from_vec(1, p.len(), 1, 1, p.to_vec()).expect("same shape")),
                &g,
            )
        },
        &vals,
        grads.as_slice(),
        &GradCheck::default(),
    ))
}

/// conv -> BN -> ReLU with respect to the input, kinks kept out of reach.
pub fn stack_gradient_error(seed: u64) -> Result<f64> {
    for attempt in 0..100 {
        let mut r = rng(seed, 100 + attempt);
        let conv = ConvLayer::init(2, 4, &mut r);
        let bn = BatchNormLayer::new(4);
        let x = uniform_tensor(3, 4, 2, 3, &mut r);
        let g = uniform_tensor(3, 4, 4, 3, &mut r);
        let (z, cc) = conv.forward(&x)?;
        let mut bn_t = bn.clone();
        let (pre, bc) = bn_t.forward(&z, Mode::Train)?;
        if pre.as_slice().iter().any(|v| v.abs() < 1e-3) {
            continue;
        }
        let g_pre = relu_backward(&pre, &g)?;
        let gb = bn.backward(bc.as_ref(), &g_pre)?;
        let gx = conv.backward(&cc, &gb.input)?.input;
        return Ok(finite_difference_check(
            |p: &[f64]| {
                let x = RealTensor::from_vec(3, 4, 2, 3, p.to_vec()).expect("same shape");
                let z = conv.infer(&x).expect("shape");
                let (y, _) = bn.clone().forward(&z, Mode::Train).expect("batch");
                dot(&relu_forward(&y), &g)
            },
            x.as_slice(),
            gx.as_slice(),
            &GradCheck::default(),
        ));
    }
    Err(crate::Error::InvalidArgument(
        "no kink-free conv/BN/ReLU instance found".into(),
    ))
}

/// Miniature network used for the whole-model checks.
pub const MINI_ARCH: CdrnArch = CdrnArch {
    m: 3,
    n: 3,
    blocks: 2,
    layers: 3,
    filters: 8,
};

/// Loss gradient of the miniature network for every parameter tensor.
///
/// Instances are reseeded until no ReLU input lies within `1e-4` of zero,
/// so the finite differences never straddle a kink.
pub fn model_gradient_error(seed: u64) -> Result<f64> {
    let arch = MINI_ARCH;
    let (h, w, c) = arch.input_shape();
    for attempt in 0..200 {
        let mut r = rng(seed, 1000 + attempt);
        let mut model = CdrnModel::random(arch, seed.wrapping_add(attempt))?;
        model.set_input_scale(2.0)?;
        for block in &mut model.blocks {
            for bn in &mut block.norms {
                bn.gain.iter_mut().for_each(|g| *g = r.gen_range(0.5..1.5));
                bn.shift.iter_mut().for_each(|b| *b = r.gen_range(-0.3..0.3));
            }
        }
        let a = uniform_tensor(h, w, c, 2, &mut r);
        let labels = uniform_tensor(h, w, c, 2, &mut r);
        let pass = model.clone().forward(&a, Mode::Train)?;
        if pass.min_abs_pre_activation() < 1e-4 {
            continue;
        }
        let (_, g) = batch_loss(&pass.output, &labels)?;
        let grads = model.backward(&pass, &g)?;
        // Conv biases feeding BN have an exactly zero gradient; the floor keeps
        // roundoff in the differenced loss (~1e-9) from dominating those entries.
        let check = GradCheck {
            step: 1e-6,
            floor: 1e-4,
        };
        let mut worst = 0.0f64;
        for (t, grad) in grads.iter().enumerate() {
            let point = model.params()[t].to_vec();
            worst = worst.max(finite_difference_check(
                |p: &[f64]| {
                    let mut m = model.clone();
                    m.params_mut()[t].copy_from_slice(p);
                    cdrn_loss(&mut m, &a, &labels).expect("valid batch")
                },
                &point,
                grad,
                &check,
            ));
        }
        return Ok(worst);
    }
    Err(crate::Error::InvalidArgument(
        "no kink-free network instance found".into(),
    ))
}

/// `max |output - (A - sum residuals)|` for a randomly initialized network.
pub fn residual_decomposition_error(seed: u64, arch: CdrnArch) -> Result<f64> {
    let mut model = CdrnModel::random(arch, seed)?;
    model.set_input_scale(4.0)?;
    let mut r = rng(seed, 5);
    for block in &mut model.blocks {
        for bn in &mut block.norms {
            bn.running_mean.iter_mut().for_each(|m| *m = r.gen_range(-0.5..0.5));
            bn.running_var.iter_mut().for_each(|v| *v = r.gen_range(0.5..2.0));
        }
    }
    let (h, w, c) = arch.input_shape();
    let a = uniform_tensor(h, w, c, 4, &mut r);
    let (out, residuals) = cdrn_forward(&a, &model)?;
    let mut recon = a;
    for res in &residuals {
        recon = recon.sub(res)?;
    }
    out.max_abs_diff(&recon)
}

/// Every check, in a fixed order.
pub fn run_selftest(seed: u64) -> Result<Vec<Check>> {
    Ok(vec![
        Check {
            name: "dft schedule identity",
            value: schedule_identity_error(32, 33)?,
            bound: 1e-9,
        },
        Check {
            name: "noise-free protocol",
            value: protocol_exactness_error(seed, 4, 8, 6)?,
            bound: 1e-10,
        },
        Check {
            name: "conv gradient",
            value: conv_gradient_error(seed)?,
            bound: 1e-5,
        },
        Check {
            name: "batch-norm gradient",
            value: batchnorm_gradient_error(seed)?,
            bound: 1e-5,
        },
        Check {
            name: "relu gradient",
            value: relu_gradient_error(seed)?,
            bound: 1e-6,
        },
        Check {
            name: "conv/bn/relu stack gradient",
            value: stack_gradient_error(seed)?,
            bound: 1e-4,
        },
        Check {
            name: "network loss gradient",
            value: model_gradient_error(seed)?,
            bound: 1e-4,
        },
        Check {
            name: "residual decomposition",
            value: residual_decomposition_error(
                seed,
                CdrnArch {
                    m: 4,
                    n: 8,
                    blocks: 3,
                    layers: 4,
                    filters: 16,
                },
            )?,
            bound: 1e-12,
        },
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for check in run_selftest(7).unwrap() {
            assert!(check.passed(), "{check:?}");
        }
    }
}
