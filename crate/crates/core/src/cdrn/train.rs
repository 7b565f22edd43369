use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{batch_loss, CdrnModel, IO_CHANNELS};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, Mode, OptimizerState, RealTensor};
use crate::rng::{substream, Domain};

/// Paired network inputs (coarse estimates) and labels (true channels),
/// stacked along the batch dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub inputs: RealTensor,
    pub labels: RealTensor,
}

impl TrainingSet {
    pub fn new(inputs: RealTensor, labels: RealTensor) -> Result<Self> {
        if !inputs.same_shape(&labels) || inputs.channels() != IO_CHANNELS {
            return Err(Error::dim(
                "training set",
                format!("inputs {:?}, labels {:?}", inputs.shape(), labels.shape()),
            ));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Passes over the training split.
    pub epochs: usize,
    #[serde(default)]
    pub optimizer: AdamConfig,
    /// Fraction of the set held back for per-epoch validation loss.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 30,
            optimizer: AdamConfig::default(),
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
        }
        self.optimizer.validate()
    }
}

/// Per-epoch mean training loss and eval-mode validation loss.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossHistory {
    pub train: Vec<f64>,
    pub validation: Vec<f64>,
    pub steps: usize,
}

/// Minibatch Adam over `config.epochs` shuffled passes, after fitting the
/// input scale to the training split.
pub fn train(model: &mut CdrnModel, set: &TrainingSet, config: &TrainConfig, seed: u64) -> Result<LossHistory> {
    config.validate()?;
    let (h, w, _) = model.arch.input_shape();
    if (set.inputs.height(), set.inputs.width()) != (h, w) {
        return Err(Error::dim(
            "train",
            format!("set {:?} for network input {h}x{w}", set.inputs.shape()),
        ));
    }
    let mut history = LossHistory::default();
    if config.epochs == 0 {
        return Ok(history);
    }

    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(&mut substream(seed, Domain::Shuffle, 0));
    let n_val = (set.len() as f64 * config.validation_fraction).floor() as usize;
    let (val_idx, train_idx) = order.split_at(n_val);
    if train_idx.is_empty() {
        return Err(Error::Config("validation split leaves no training examples".into()));
    }
    let mut train_idx = train_idx.to_vec();
    let val = if val_idx.is_empty() {
        None
    } else {
        Some((set.inputs.gather(val_idx)?, set.labels.gather(val_idx)?))
    };

    model.fit_input_scale(&set.inputs.gather(&train_idx)?)?;
    let mut opt = OptimizerState::new(config.optimizer, &model.param_sizes());
    for epoch in 0..config.epochs {
        train_idx.shuffle(&mut substream(seed, Domain::Shuffle, epoch as u64 + 1));
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in train_idx.chunks(config.batch_size) {
            let x = set.inputs.gather(chunk)?;
            let y = set.labels.gather(chunk)?;
            let pass = model.forward(&x, Mode::Train)?;
            let (loss, grad) = batch_loss(&pass.output, &y)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: history.steps,
                    loss,
                });
            }
            let grads = model.backward(&pass, &grad)?;
            drop(pass);
            let grad_refs: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
            opt.step(&mut model.params_mut(), &grad_refs)?;
            history.steps += 1;
            total += loss;
            batches += 1;
        }
        history.train.push(total / batches as f64);
        if let Some((vx, vy)) = &val {
            let (out, _) = model.infer(vx)?;
            let (loss, _) = batch_loss(&out, vy)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: history.steps,
                    loss,
                });
            }
            history.validation.push(loss);
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdrn::CdrnArch;
    use rand::Rng;

    fn tiny_set(count: usize, seed: u64) -> TrainingSet {
        let mut rng = substream(seed, Domain::Scratch, 0);
        let labels = RealTensor::from_fn(3, 4, 2, count, |_, _, _, _| rng.gen_range(-1.0..1.0));
        let mut inputs = labels.clone();
        inputs
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v += 0.3 * rng.gen_range(-1.0..1.0));
        TrainingSet::new(inputs, labels).unwrap()
    }

    fn arch() -> CdrnArch {
        CdrnArch {
            m: 3,
            n: 3,
            blocks: 2,
            layers: 3,
            filters: 8,
        }
    }

    #[test]
    fn overfits_tiny_set() {
        let set = tiny_set(4, 1);
        let mut model = CdrnModel::init(arch(), 2).unwrap();
        let cfg = TrainConfig {
            batch_size: 4,
            epochs: 50,
            validation_fraction: 0.0,
            ..TrainConfig::default()
        };
        let hist = train(&mut model, &set, &cfg, 3).unwrap();
        assert_eq!(hist.steps, 50);
        let first = hist.train[0];
        let last = *hist.train.last().unwrap();
        assert!(last <= 0.5 * first, "{first} -> {last}");
    }

    #[test]
    fn deterministic_and_noop() {
        let set = tiny_set(20, 4);
        let cfg = TrainConfig {
            batch_size: 8,
            epochs: 3,
            validation_fraction: 0.25,
            ..TrainConfig::default()
        };
        let run = || {
            let mut model = CdrnModel::init(arch(), 5).unwrap();
            let hist = train(&mut model, &set, &cfg, 6).unwrap();
            (model, hist)
        };
        let (ma, ha) = run();
        let (mb, hb) = run();
        assert_eq!(ha, hb);
        assert_eq!(ma, mb);
        assert_eq!(ha.validation.len(), 3);

        let mut model = CdrnModel::init(arch(), 5).unwrap();
        let before = model.clone();
        let hist = train(&mut model, &set, &TrainConfig { epochs: 0, ..cfg }, 6).unwrap();
        assert_eq!(model, before);
        assert!(hist.train.is_empty());
    }

    #[test]
    fn divergence_is_reported() {
        let mut set = tiny_set(4, 7);
        set.labels.as_mut_slice()[0] = f64::NAN;
        let mut model = CdrnModel::init(arch(), 1).unwrap();
        let cfg = TrainConfig {
            batch_size: 4,
            epochs: 1,
            validation_fraction: 0.0,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&mut model, &set, &cfg, 1), Err(Error::Diverged { .. })));
    }
}
