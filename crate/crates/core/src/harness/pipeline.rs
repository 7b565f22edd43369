use std::fs;
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::dataset::{generate_dataset, Dataset, TrainingSnr};
use super::sweep::{checkpoint_name, NetworkBank, SweepResult, SweepRow};
use crate::cdrn::{save_activations, save_checkpoint, train, CdrnModel, LossHistory, TrainingSet};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorId, Nmse, Slice};
use crate::nn::RealTensor;

/// One trained network and where it was written.
#[derive(Debug, Clone)]
pub struct TrainedNetwork {
    pub snr_db: f64,
    pub user: Option<usize>,
    pub model: CdrnModel,
    pub history: LossHistory,
    pub checkpoint: PathBuf,
}

fn users(cfg: &ExperimentConfig) -> Vec<Option<usize>> {
    if cfg.training.per_user {
        (0..cfg.system.k).map(Some).collect()
    } else {
        vec![None]
    }
}

fn write_history(path: &Path, history: &LossHistory) -> Result<()> {
    let mut text = String::from("epoch,train_loss,validation_loss\n");
    for (e, t) in history.train.iter().enumerate() {
        let v = history.validation.get(e).map(|v| format!("{v:e}")).unwrap_or_default();
        text.push_str(&format!("{},{t:e},{v}\n", e + 1));
    }
    fs::write(path, text)?;
    Ok(())
}

/// Trains the networks the sweep grid needs and writes their checkpoints and
/// loss curves into `out`. In blind mode a single network serves every point.
pub fn train_networks(
    cfg: &ExperimentConfig,
    out: &Path,
    mut progress: impl FnMut(&TrainedNetwork),
) -> Result<(NetworkBank, Vec<TrainedNetwork>)> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let mut bank = NetworkBank::new();
    let mut trained: Vec<TrainedNetwork> = Vec::new();
    for &snr_db in &cfg.sweep.snr_db {
        let mut models = Vec::new();
        for user in users(cfg) {
            let name = checkpoint_name(cfg, snr_db, user);
            let checkpoint = out.join(&name);
            if let Some(done) = trained.iter().find(|t| t.checkpoint == checkpoint) {
                models.push(done.model.clone());
                continue;
            }
            let data = generate_dataset(cfg, TrainingSnr::from_config(cfg, snr_db), user)?;
            let mut model = CdrnModel::init(cfg.arch(), cfg.seeds.master)?;
            let history = train(&mut model, &data.train, &cfg.train_config(), cfg.seeds.master)?;
            save_checkpoint(&model, &checkpoint)?;
            write_history(&checkpoint.with_extension("loss.csv"), &history)?;
            let net = TrainedNetwork {
                snr_db,
                user,
                model: model.clone(),
                history,
                checkpoint,
            };
            progress(&net);
            trained.push(net);
            models.push(model);
        }
        bank.insert(snr_db, models);
    }
    Ok((bank, trained))
}

/// Squared error and energy of `est` against `truth` over a column range,
/// summed across the batch.
fn tensor_slice_sums(est: &RealTensor, truth: &RealTensor, slice: Slice) -> Result<(f64, f64)> {
    if !est.same_shape(truth) {
        return Err(Error::dim(
            "tensor nmse",
            format!("{:?} vs {:?}", est.shape(), truth.shape()),
        ));
    }
    let (h, w, c, b) = truth.shape();
    let cols = slice.columns(w);
    let (mut err, mut energy) = (0.0, 0.0);
    for n in 0..b {
        for y in 0..h {
            for x in cols.clone() {
                for ch in 0..c {
                    let t = truth.get(y, x, ch, n);
                    let d = est.get(y, x, ch, n) - t;
                    err += d * d;
                    energy += t * t;
                }
            }
        }
    }
    Ok((err, energy))
}

fn heldout_rows(snr_db: f64, id: EstimatorId, est: &RealTensor, set: &TrainingSet) -> Result<Vec<SweepRow>> {
    Slice::ALL
        .into_iter()
        .map(|slice| {
            let (err, energy) = tensor_slice_sums(est, &set.labels, slice)?;
            Ok(SweepRow {
                snr_db,
                estimator_id: id,
                slice,
                nmse_db: Nmse::from_sums(err, energy)?.db,
                trials: set.len(),
                wall_time: 0.0,
            })
        })
        .collect()
}

/// LS and CDRN NMSE on the held-out pairs of every SNR point.
pub fn evaluate_heldout(cfg: &ExperimentConfig, bank: &NetworkBank) -> Result<SweepResult> {
    let mut result = SweepResult::default();
    for &snr_db in &cfg.sweep.snr_db {
        let start = std::time::Instant::now();
        let nets = bank.get(snr_db).ok_or_else(|| Error::MissingCheckpoint {
            snr_db,
            path: PathBuf::from(checkpoint_name(cfg, snr_db, None)),
        })?;
        let mut rows = Vec::new();
        for (idx, user) in users(cfg).into_iter().enumerate() {
            let Dataset { heldout, .. } = generate_dataset(cfg, TrainingSnr::Fixed(snr_db), user)?;
            let (out, _) = nets[idx].infer(&heldout.inputs)?;
            rows.extend(heldout_rows(snr_db, EstimatorId::Ls, &heldout.inputs, &heldout)?);
            rows.extend(heldout_rows(snr_db, EstimatorId::Cdrn, &out, &heldout)?);
        }
        let elapsed = start.elapsed().as_secs_f64();
        for mut r in rows {
            r.wall_time = elapsed;
            result.rows.push(r);
        }
    }
    Ok(result)
}

/// Mean `||A_d - H||^2` over the held-out set for `d = 0..=D` (`A_0` is the input).
pub fn block_error_energies(model: &CdrnModel, set: &TrainingSet) -> Result<Vec<f64>> {
    let acts = model.activations(&set.inputs)?;
    acts.iter()
        .map(|a| Ok(a.sub(&set.labels)?.sum_sq() / set.len() as f64))
        .collect()
}

/// Writes `A, A_1, ..., A_D` of held-out pair `index` for each SNR point.
pub fn dump_activations(cfg: &ExperimentConfig, bank: &NetworkBank, out: &Path, index: usize) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    for &snr_db in &cfg.sweep.snr_db {
        let nets = bank.get(snr_db).ok_or_else(|| Error::MissingCheckpoint {
            snr_db,
            path: PathBuf::from(checkpoint_name(cfg, snr_db, None)),
        })?;
        let user = users(cfg)[0];
        let data = generate_dataset(cfg, TrainingSnr::Fixed(snr_db), user)?;
        if index >= data.heldout.len() {
            return Err(Error::InvalidArgument(format!(
                "held-out index {index} out of range ({} pairs)",
                data.heldout.len()
            )));
        }
        let mut acts = nets[0].activations(&data.heldout.inputs.example(index))?;
        acts.push(data.heldout.labels.example(index));
        let path = out.join(format!("activations_snr{snr_db}.bin"));
        save_activations(&acts, &path)?;
        written.push(path);
    }
    Ok(written)
}
