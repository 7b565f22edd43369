use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use super::config::{db_to_linear, ExperimentConfig, SnrMode};
use crate::cdrn::{from_real_channels, load_checkpoint, to_real_channels, CdrnModel};
use crate::channel::realize_channels;
use crate::error::{Error, Result};
use crate::estimators::{slice_error, CorrelationEstimate, EstimatorId, LmmseFilter, LsFilter, Nmse, Slice};
use crate::linalg::CMatrix;
use crate::nn::RealTensor;
use crate::protocol::{build_binary_schedule, build_dft_schedule, build_pilot_book, run_training_phase};
use crate::rng::{substream, Domain};

/// Separates the binary-schedule noise streams from the DFT ones.
const BINARY_STREAM: u64 = 1 << 47;

/// File name of the network serving `snr_db` (and `user`, for per-user training).
pub fn checkpoint_name(cfg: &ExperimentConfig, snr_db: f64, user: Option<usize>) -> String {
    let stem = match cfg.training.snr_mode {
        SnrMode::PerSnr => format!("cdrn_snr{snr_db}"),
        SnrMode::Blind { .. } => "cdrn_blind".to_string(),
    };
    match user {
        Some(k) => format!("{stem}_user{k}.ckpt"),
        None => format!("{stem}.ckpt"),
    }
}

/// Trained networks keyed by SNR point.
#[derive(Debug, Clone, Default)]
pub struct NetworkBank {
    entries: Vec<(f64, Vec<CdrnModel>)>,
}

impl NetworkBank {
    pub fn new() -> Self {
        Self::default()
    }

    /// `models` holds one shared network or one per user.
    pub fn insert(&mut self, snr_db: f64, models: Vec<CdrnModel>) {
        self.entries.retain(|(s, _)| *s != snr_db);
        self.entries.push((snr_db, models));
    }

    pub fn get(&self, snr_db: f64) -> Option<&[CdrnModel]> {
        self.entries
            .iter()
            .find(|(s, _)| *s == snr_db)
            .map(|(_, m)| m.as_slice())
    }

    /// Loads every checkpoint the sweep grid needs from `dir`.
    pub fn load(cfg: &ExperimentConfig, dir: &Path) -> Result<Self> {
        let mut bank = Self::new();
        let users: Vec<Option<usize>> = if cfg.training.per_user {
            (0..cfg.system.k).map(Some).collect()
        } else {
            vec![None]
        };
        for &snr in &cfg.sweep.snr_db {
            let mut models = Vec::with_capacity(users.len());
            for &user in &users {
                let path = dir.join(checkpoint_name(cfg, snr, user));
                if !path.exists() {
                    return Err(Error::MissingCheckpoint { snr_db: snr, path });
                }
                let model = load_checkpoint(&path)?;
                if model.arch.input_shape() != cfg.arch().input_shape() {
                    return Err(Error::Format(format!(
                        "{} was trained for a different system size",
                        path.display()
                    )));
                }
                models.push(model);
            }
            bank.insert(snr, models);
        }
        Ok(bank)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub snr_db: f64,
    pub estimator_id: EstimatorId,
    pub slice: Slice,
    pub nmse_db: f64,
    pub trials: usize,
    /// Seconds spent on this SNR point, all estimators together.
    pub wall_time: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

/// Fixed 10-significant-digit rendering.
pub fn sig10(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return format!("{:.9}", 0.0);
    }
    let mag = v.abs().log10().floor() as i32;
    if mag < -4 {
        return format!("{v:.9e}");
    }
    let decimals = (9 - mag).max(0) as usize;
    format!("{v:.decimals$}")
}

impl SweepResult {
    pub fn get(&self, snr_db: f64, id: EstimatorId, slice: Slice) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.snr_db == snr_db && r.estimator_id == id && r.slice == slice)
    }

    pub fn nmse_db(&self, snr_db: f64, id: EstimatorId, slice: Slice) -> Option<f64> {
        self.get(snr_db, id, slice).map(|r| r.nmse_db)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["snr_db", "estimator_id", "slice", "nmse_db", "trials", "wall_time"])
            .map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                sig10(r.snr_db),
                r.estimator_id.to_string(),
                r.slice.as_str().to_string(),
                sig10(r.nmse_db),
                r.trials.to_string(),
                sig10(r.wall_time),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// CSV lines with the timing column removed, for reproducibility checks.
    pub fn timeless_lines(&self) -> Result<Vec<String>> {
        Ok(self
            .to_csv()?
            .lines()
            .map(|l| l.rsplit_once(',').map(|(head, _)| head.to_string()).unwrap_or_default())
            .collect())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?)?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Squared-error and truth-energy sums per estimator and slice.
#[derive(Debug, Clone, Copy, Default)]
struct Sums {
    /// `[estimator][direct, cascaded][error, energy]`
    acc: [[[f64; 2]; 2]; 4],
}

impl Sums {
    fn add(&mut self, id: EstimatorId, truth: &CMatrix, est: &CMatrix) -> Result<()> {
        let e = &mut self.acc[id as usize];
        for (i, slice) in [Slice::Direct, Slice::Cascaded].into_iter().enumerate() {
            let (err, energy) = slice_error(truth, est, slice)?;
            e[i][0] += err;
            e[i][1] += energy;
        }
        Ok(())
    }

    fn merge(&mut self, other: &Sums) {
        for (a, b) in self.acc.iter_mut().zip(&other.acc) {
            for (x, y) in a.iter_mut().zip(b) {
                x[0] += y[0];
                x[1] += y[1];
            }
        }
    }

    fn nmse(&self, id: EstimatorId, slice: Slice) -> Result<Nmse> {
        let e = &self.acc[id as usize];
        let (err, energy) = match slice {
            Slice::Direct => (e[0][0], e[0][1]),
            Slice::Cascaded => (e[1][0], e[1][1]),
            Slice::Full => (e[0][0] + e[1][0], e[0][1] + e[1][1]),
        };
        Nmse::from_sums(err, energy)
    }
}

/// Everything fixed across the trials of one SNR point.
struct PointSetup<'a> {
    cfg: &'a ExperimentConfig,
    snr_db: f64,
    ls: LsFilter,
    lmmse: Vec<LmmseFilter>,
    blmmse: Vec<LmmseFilter>,
    networks: Option<&'a [CdrnModel]>,
}

impl PointSetup<'_> {
    fn run_chunk(&self, trials: std::ops::Range<usize>) -> Result<Sums> {
        let cfg = self.cfg;
        let sys = cfg.system_at(db_to_linear(self.snr_db))?;
        let dft = build_dft_schedule(sys.n, sys.c)?;
        let binary = build_binary_schedule(sys.n);
        let pilots = build_pilot_book(sys.k, sys.l, sys.pilot_power)?;
        let mut sums = Sums::default();
        let mut truths = Vec::new();
        let mut coarse = Vec::new();
        for t in trials {
            let mut rng = substream(cfg.seeds.master, Domain::Sweep, t as u64);
            let chan = realize_channels(&sys, &cfg.channel, &mut rng)?;
            let obs = run_training_phase(&chan, &dft, &pilots, sys.noise_var_v, &mut rng)?;
            let obs_b = if cfg.uses(EstimatorId::BLmmse) {
                let mut rng = substream(cfg.seeds.master, Domain::Sweep, BINARY_STREAM | t as u64);
                Some(run_training_phase(&chan, &binary, &pilots, sys.noise_var_v, &mut rng)?)
            } else {
                None
            };
            for k in 0..sys.k {
                let truth = &chan.h[k];
                let ls = self.ls.apply(&obs[k].x)?;
                if cfg.uses(EstimatorId::Lmmse) {
                    sums.add(EstimatorId::Lmmse, truth, &self.lmmse[k].apply(&obs[k].x)?)?;
                }
                if let Some(ob) = &obs_b {
                    sums.add(EstimatorId::BLmmse, truth, &self.blmmse[k].apply(&ob[k].x)?)?;
                }
                if cfg.uses(EstimatorId::Ls) {
                    sums.add(EstimatorId::Ls, truth, &ls)?;
                }
                if self.networks.is_some() {
                    coarse.push((k, to_real_channels(&ls)));
                    truths.push(truth.clone());
                }
            }
        }
        if let Some(nets) = self.networks {
            for (idx, net) in nets.iter().enumerate() {
                let members: Vec<usize> = (0..coarse.len())
                    .filter(|&i| nets.len() == 1 || coarse[i].0 == idx)
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let refs: Vec<&RealTensor> = members.iter().map(|&i| &coarse[i].1).collect();
                let (out, _) = net.infer(&RealTensor::stack(&refs)?)?;
                for (j, &i) in members.iter().enumerate() {
                    let est = from_real_channels(&out.example(j))?;
                    sums.add(EstimatorId::Cdrn, &truths[i], &est)?;
                }
            }
        }
        Ok(sums)
    }
}

/// Monte Carlo NMSE of every configured estimator at every SNR point.
///
/// Trials are split into fixed-size chunks that run in parallel and are
/// reduced in chunk order, so the result does not depend on the worker count.
pub fn run_sweep(cfg: &ExperimentConfig, networks: &NetworkBank) -> Result<SweepResult> {
    cfg.validate()?;
    let sys = &cfg.system;
    let dft = build_dft_schedule(sys.n, sys.c)?;
    let binary = build_binary_schedule(sys.n);
    let needs_corr = cfg.uses(EstimatorId::Lmmse) || cfg.uses(EstimatorId::BLmmse);
    let corr: Vec<CorrelationEstimate> = if needs_corr {
        super::dataset::channel_correlations(cfg)?
    } else {
        Vec::new()
    };
    let mut result = SweepResult::default();
    for &snr_db in &cfg.sweep.snr_db {
        let start = Instant::now();
        let sys_at = cfg.system_at(db_to_linear(snr_db))?;
        let nz = sys_at.noise_var_z();
        let filters = |sched| -> Result<Vec<LmmseFilter>> {
            corr.iter().map(|r| LmmseFilter::new(sched, r, sys.m, nz)).collect()
        };
        let nets = if cfg.uses(EstimatorId::Cdrn) {
            let nets = networks.get(snr_db).ok_or_else(|| Error::MissingCheckpoint {
                snr_db,
                path: PathBuf::from(checkpoint_name(cfg, snr_db, None)),
            })?;
            Some(nets)
        } else {
            None
        };
        let setup = PointSetup {
            cfg,
            snr_db,
            ls: LsFilter::new(&dft)?,
            lmmse: if cfg.uses(EstimatorId::Lmmse) {
                filters(&dft)?
            } else {
                Vec::new()
            },
            blmmse: if cfg.uses(EstimatorId::BLmmse) {
                filters(&binary)?
            } else {
                Vec::new()
            },
            networks: nets,
        };
        let trials = cfg.sweep.trials;
        let chunk = cfg.sweep.chunk;
        let ranges: Vec<_> = (0..trials.div_ceil(chunk))
            .map(|i| i * chunk..((i + 1) * chunk).min(trials))
            .collect();
        let partial: Vec<Sums> = ranges
            .into_par_iter()
            .map(|r| setup.run_chunk(r))
            .collect::<Result<_>>()?;
        let mut total = Sums::default();
        for p in &partial {
            total.merge(p);
        }
        let wall_time = start.elapsed().as_secs_f64();
        for id in EstimatorId::ALL {
            if !cfg.uses(id) {
                continue;
            }
            for slice in Slice::ALL {
                result.rows.push(SweepRow {
                    snr_db,
                    estimator_id: id,
                    slice,
                    nmse_db: total.nmse(id, slice)?.db,
                    trials,
                    wall_time,
                });
            }
        }
    }
    Ok(result)
}
