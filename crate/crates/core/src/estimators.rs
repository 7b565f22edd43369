//! LS and LMMSE estimators, the correlation estimate LMMSE needs, and NMSE.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hermitian_solve, CMatrix};
use crate::protocol::{Observation, ReflectionSchedule};

/// NMSE reported for a perfect estimate.
pub const NMSE_FLOOR_DB: f64 = -300.0;

/// Stable estimator identifiers used in CSV output and on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorId {
    Ls,
    Lmmse,
    BLmmse,
    Cdrn,
}

impl EstimatorId {
    pub const ALL: [EstimatorId; 4] = [
        EstimatorId::Ls,
        EstimatorId::Lmmse,
        EstimatorId::BLmmse,
        EstimatorId::Cdrn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorId::Ls => "ls",
            EstimatorId::Lmmse => "lmmse",
            EstimatorId::BLmmse => "b-lmmse",
            EstimatorId::Cdrn => "cdrn",
        }
    }
}

impl fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown estimator '{s}'")))
    }
}

/// Which columns of `H_k` a metric looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slice {
    Full,
    /// Column 0, `d_k`.
    Direct,
    /// Columns `1..=N`, `B_k`.
    Cascaded,
}

impl Slice {
    pub const ALL: [Slice; 3] = [Slice::Direct, Slice::Cascaded, Slice::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            Slice::Full => "full",
            Slice::Direct => "direct",
            Slice::Cascaded => "cascaded",
        }
    }

    /// Half-open column range inside a matrix with `cols` columns.
    pub fn columns(self, cols: usize) -> std::ops::Range<usize> {
        match self {
            Slice::Full => 0..cols,
            Slice::Direct => 0..1,
            Slice::Cascaded => 1..cols,
        }
    }

    pub fn select(self, h: &CMatrix) -> Result<CMatrix> {
        let r = self.columns(h.cols());
        h.columns(r.start, r.end)
    }
}

impl fmt::Display for Slice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Slice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Slice::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown slice '{s}'")))
    }
}

/// A labelled estimate of one user's composite channel.
#[derive(Debug, Clone)]
pub struct EstimateReport {
    pub estimator: EstimatorId,
    pub h_hat: CMatrix,
    pub slice: Slice,
}

impl EstimateReport {
    /// The selected columns of the estimate.
    pub fn view(&self) -> Result<CMatrix> {
        self.slice.select(&self.h_hat)
    }
}

/// Sample estimate of `E(H^H H)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationEstimate {
    pub r_h: CMatrix,
    pub sample_count: usize,
}

pub fn estimate_correlation(realizations: &[CMatrix]) -> Result<CorrelationEstimate> {
    let first = realizations
        .first()
        .ok_or_else(|| Error::InvalidArgument("correlation estimate needs at least one sample".into()))?;
    let n = first.cols();
    let mut acc = CMatrix::zeros(n, n);
    for h in realizations {
        acc.add_assign(&h.conj_transpose().matmul(h)?)?;
    }
    let s = realizations.len() as f64;
    let r = acc.scale(1.0 / s);
    let r_h = r.add(&r.conj_transpose())?.scale(0.5);
    Ok(CorrelationEstimate {
        r_h,
        sample_count: realizations.len(),
    })
}

/// `X P^dagger` with `P^dagger` computed once per schedule.
#[derive(Debug, Clone)]
pub struct LsFilter {
    pinv: CMatrix,
}

impl LsFilter {
    pub fn new(sched: &ReflectionSchedule) -> Result<Self> {
        Ok(Self {
            pinv: sched.matrix().right_pseudoinverse()?,
        })
    }

    pub fn apply(&self, x: &CMatrix) -> Result<CMatrix> {
        x.matmul(&self.pinv)
    }
}

pub fn ls_estimate(obs: &Observation, sched: &ReflectionSchedule) -> Result<CMatrix> {
    LsFilter::new(sched)?.apply(&obs.x)
}

/// The coarse LS observation `X_tilde = X P^dagger = H + Z P^dagger` fed to the denoiser.
pub fn denoise_observation(obs: &Observation, sched: &ReflectionSchedule) -> Result<CMatrix> {
    ls_estimate(obs, sched)
}

/// Right-hand factor `(P^H R P + M s^2 I)^{-1} P^H R` of the LMMSE estimator.
#[derive(Debug, Clone)]
pub struct LmmseFilter {
    w: CMatrix,
}

impl LmmseFilter {
    pub fn new(sched: &ReflectionSchedule, corr: &CorrelationEstimate, m: usize, noise_var_z: f64) -> Result<Self> {
        let p = sched.matrix();
        let ph = p.conj_transpose();
        let n1 = p.rows();
        if corr.r_h.shape() != (n1, n1) {
            return Err(Error::dim(
                "lmmse",
                format!("correlation {:?} vs schedule with {n1} rows", corr.r_h.shape()),
            ));
        }
        let ph_r = ph.matmul(&corr.r_h)?;
        let mut a = ph_r.matmul(p)?;
        let load = m as f64 * noise_var_z;
        for i in 0..a.rows() {
            a[(i, i)] += load;
        }
        let a = a.add(&a.conj_transpose())?.scale(0.5);
        Ok(Self {
            w: hermitian_solve(&a, &ph_r)?,
        })
    }

    pub fn apply(&self, x: &CMatrix) -> Result<CMatrix> {
        x.matmul(&self.w)
    }
}

pub fn lmmse_estimate(
    obs: &Observation,
    sched: &ReflectionSchedule,
    corr: &CorrelationEstimate,
    m: usize,
) -> Result<CMatrix> {
    LmmseFilter::new(sched, corr, m, obs.noise_var_z)?.apply(&obs.x)
}

/// NMSE in dB, with a flag when the ratio hit the floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nmse {
    pub db: f64,
    pub floored: bool,
}

impl Nmse {
    pub fn from_sums(error: f64, truth: f64) -> Result<Self> {
        if !(truth > 0.0) {
            return Err(Error::InvalidArgument("NMSE undefined for an all-zero truth".into()));
        }
        let db = 10.0 * (error / truth).log10();
        if db.is_finite() && db > NMSE_FLOOR_DB {
            Ok(Nmse { db, floored: false })
        } else if error.is_nan() {
            Err(Error::InvalidArgument("NMSE of a non-finite estimate".into()))
        } else {
            Ok(Nmse {
                db: NMSE_FLOOR_DB,
                floored: true,
            })
        }
    }
}

/// Squared error of the selected columns.
pub fn slice_error(truth: &CMatrix, estimate: &CMatrix, slice: Slice) -> Result<(f64, f64)> {
    if truth.shape() != estimate.shape() {
        return Err(Error::dim(
            "nmse",
            format!("{:?} vs {:?}", truth.shape(), estimate.shape()),
        ));
    }
    let cols = slice.columns(truth.cols());
    let mut err = 0.0;
    let mut energy = 0.0;
    for i in 0..truth.rows() {
        for j in cols.clone() {
            err += (estimate[(i, j)] - truth[(i, j)]).norm_sqr();
            energy += truth[(i, j)].norm_sqr();
        }
    }
    Ok((err, energy))
}

/// `10 log10( sum ||H_hat - H||^2 / sum ||H||^2 )` over the selected columns.
pub fn nmse(truth: &[CMatrix], estimates: &[CMatrix], slice: Slice) -> Result<Nmse> {
    if truth.is_empty() || truth.len() != estimates.len() {
        return Err(Error::InvalidArgument(format!(
            "nmse needs equal non-empty lists, got {} and {}",
            truth.len(),
            estimates.len()
        )));
    }
    let mut err = 0.0;
    let mut energy = 0.0;
    for (t, e) in truth.iter().zip(estimates) {
        let (a, b) = slice_error(t, e, slice)?;
        err += a;
        energy += b;
    }
    Nmse::from_sums(err, energy)
}
