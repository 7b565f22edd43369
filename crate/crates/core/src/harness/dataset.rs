use rand::Rng;

use super::config::{db_to_linear, ExperimentConfig, SnrMode};
use crate::cdrn::{to_real_channels, TrainingSet};
use crate::channel::{realize_channels, ChannelRealization};
use crate::error::{Error, Result};
use crate::estimators::{denoise_observation, estimate_correlation, CorrelationEstimate};
use crate::nn::RealTensor;
use crate::protocol::{build_dft_schedule, build_pilot_book, run_training_phase};
use crate::rng::{substream, Domain};

/// Which SNR the pairs are simulated at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainingSnr {
    Fixed(f64),
    UniformDb { low_db: f64, high_db: f64 },
}

impl TrainingSnr {
    pub fn from_config(cfg: &ExperimentConfig, snr_db: f64) -> Self {
        match cfg.training.snr_mode {
            SnrMode::PerSnr => TrainingSnr::Fixed(snr_db),
            SnrMode::Blind { low_db, high_db } => TrainingSnr::UniformDb { low_db, high_db },
        }
    }
}

/// Training pairs plus a held-out set drawn from a disjoint seed domain.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: TrainingSet,
    pub heldout: TrainingSet,
}

/// Channel realization `index` of a seed domain; noise for the same
/// realization is drawn afterwards from the returned generator.
fn realization(cfg: &ExperimentConfig, domain: Domain, index: u64) -> Result<(ChannelRealization, crate::rng::SimRng)> {
    let mut rng = substream(cfg.seeds.master, domain, index);
    let sys = cfg.system_at(1.0)?;
    let chan = realize_channels(&sys, &cfg.channel, &mut rng)?;
    Ok((chan, rng))
}

/// Realizations needed for `count` pairs when each contributes `per` users.
fn realizations_for(count: usize, per: usize) -> usize {
    count.div_ceil(per)
}

/// `count` pairs `(F(X_tilde), F(H))` from `domain`. With `user = None`
/// every user of a realization contributes one pair.
fn simulate_pairs(
    cfg: &ExperimentConfig,
    snr: TrainingSnr,
    domain: Domain,
    count: usize,
    user: Option<usize>,
) -> Result<TrainingSet> {
    let sys = &cfg.system;
    if let Some(k) = user {
        if k >= sys.k {
            return Err(Error::InvalidArgument(format!(
                "user {k} out of range for K = {}",
                sys.k
            )));
        }
    }
    if let TrainingSnr::Fixed(db) = snr {
        let lin = db_to_linear(db);
        if !(lin > 0.0 && lin.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "SNR {db} dB is not a positive finite ratio"
            )));
        }
    }
    let sched = build_dft_schedule(sys.n, sys.c)?;
    let pilots = build_pilot_book(sys.k, sys.l, sys.pilot_power)?;
    let per = if user.is_some() { 1 } else { sys.k };
    let (h, w) = (sys.m, sys.n + 1);
    let len = h * w * 2;
    let mut inputs = Vec::with_capacity(count * len);
    let mut labels = Vec::with_capacity(count * len);
    'outer: for r in 0..realizations_for(count, per) {
        let (chan, mut rng) = realization(cfg, domain, r as u64)?;
        let snr_db = match snr {
            TrainingSnr::Fixed(db) => db,
            TrainingSnr::UniformDb { low_db, high_db } => {
                if low_db == high_db {
                    low_db
                } else {
                    rng.gen_range(low_db..high_db)
                }
            }
        };
        let sys_at = cfg.system_at(db_to_linear(snr_db))?;
        let obs = run_training_phase(&chan, &sched, &pilots, sys_at.noise_var_v, &mut rng)?;
        let users: Vec<usize> = match user {
            Some(k) => vec![k],
            None => (0..sys.k).collect(),
        };
        for k in users {
            let coarse = denoise_observation(&obs[k], &sched)?;
            inputs.extend_from_slice(to_real_channels(&coarse).as_slice());
            labels.extend_from_slice(to_real_channels(&chan.h[k]).as_slice());
            if inputs.len() == count * len {
                break 'outer;
            }
        }
    }
    TrainingSet::new(
        RealTensor::from_vec(h, w, 2, count, inputs)?,
        RealTensor::from_vec(h, w, 2, count, labels)?,
    )
}

/// Training pairs from the dataset domain and held-out pairs from a disjoint one.
pub fn generate_dataset(cfg: &ExperimentConfig, snr: TrainingSnr, user: Option<usize>) -> Result<Dataset> {
    let train = simulate_pairs(cfg, snr, Domain::Dataset, cfg.training.samples, user)?;
    let heldout = simulate_pairs(cfg, snr, Domain::HeldOut, cfg.training.heldout_samples.max(1), user)?;
    Ok(Dataset { train, heldout })
}

/// Per-user `R_H` from the channels underlying the training pairs.
pub fn channel_correlations(cfg: &ExperimentConfig) -> Result<Vec<CorrelationEstimate>> {
    let k = cfg.system.k;
    let per = if cfg.training.per_user { 1 } else { k };
    let count = realizations_for(cfg.training.samples, per);
    let mut per_user: Vec<Vec<_>> = vec![Vec::with_capacity(count); k];
    for r in 0..count {
        let (chan, _) = realization(cfg, Domain::Dataset, r as u64)?;
        for (list, h) in per_user.iter_mut().zip(chan.h) {
            list.push(h);
        }
    }
    per_user.iter().map(|hs| estimate_correlation(hs)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdrn::from_real_channels;

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::desk();
        cfg.training.samples = 6;
        cfg.training.heldout_samples = 3;
        cfg
    }

    #[test]
    fn single_pair_carries_the_drawn_channel() {
        let mut cfg = small();
        cfg.training.samples = 1;
        let ds = generate_dataset(&cfg, TrainingSnr::Fixed(10.0), None).unwrap();
        assert_eq!(ds.train.len(), 1);
        let (chan, _) = realization(&cfg, Domain::Dataset, 0).unwrap();
        assert_eq!(from_real_channels(&ds.train.labels).unwrap(), chan.h[0]);
    }

    #[test]
    fn noise_free_limit() {
        let cfg = small();
        let ds = generate_dataset(&cfg, TrainingSnr::Fixed(300.0), None).unwrap();
        let diff = ds.train.inputs.max_abs_diff(&ds.train.labels).unwrap();
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn invalid_snr_and_determinism() {
        let cfg = small();
        assert!(generate_dataset(&cfg, TrainingSnr::Fixed(f64::NEG_INFINITY), None).is_err());
        let a = generate_dataset(&cfg, TrainingSnr::Fixed(10.0), None).unwrap();
        let b = generate_dataset(&cfg, TrainingSnr::Fixed(10.0), None).unwrap();
        assert_eq!(a.train, b.train);
        assert_ne!(a.train.labels, a.heldout.labels.gather(&[0, 1, 2, 0, 1, 2]).unwrap());
        let user = generate_dataset(&cfg, TrainingSnr::Fixed(10.0), Some(1)).unwrap();
        assert_eq!(user.train.len(), 6);
        assert!(generate_dataset(&cfg, TrainingSnr::Fixed(10.0), Some(5)).is_err());
    }

    #[test]
    fn residual_matches_ls_noise_covariance() {
        // X_tilde - H = Z P^dagger; with P P^H = C I each entry has variance sigma_z^2 / C
        let mut cfg = small();
        cfg.training.samples = 20_000;
        let ds = generate_dataset(&cfg, TrainingSnr::Fixed(10.0), None).unwrap();
        let diff = ds.train.inputs.sub(&ds.train.labels).unwrap();
        let entries = diff.len() as f64 / 2.0;
        let per_entry = diff.sum_sq() / entries;
        let expect = 0.1 / cfg.system.c as f64;
        assert!((per_entry / expect - 1.0).abs() < 0.02, "{per_entry} vs {expect}");
    }
}
