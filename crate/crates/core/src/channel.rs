//! Rician links with distance-dependent path loss and the composite
//! `H_k = [d_k, G diag(f_k)]` channel the estimators try to recover.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::rng::cscg;

/// Dimensions and powers of one IRS-assisted uplink.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// BS antennas.
    pub m: usize,
    /// IRS elements.
    pub n: usize,
    /// Single-antenna users.
    pub k: usize,
    /// Sub-frames (reflection patterns) per estimation phase.
    pub c: usize,
    /// Pilot length per sub-frame.
    pub l: usize,
    /// Per-symbol pilot power.
    pub pilot_power: f64,
    /// Per-antenna BS noise variance before despreading.
    pub noise_var_v: f64,
    pub seed: u64,
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.m == 0 || self.n == 0 || self.k == 0 || self.c == 0 || self.l == 0 {
            return bad(format!("all counts must be >= 1: {self:?}"));
        }
        if self.c < self.n + 1 {
            return bad(format!("need C >= N+1 sub-frames, got C={} N={}", self.c, self.n));
        }
        if self.l < self.k {
            return bad(format!("need pilot length L >= K, got L={} K={}", self.l, self.k));
        }
        if !(self.pilot_power > 0.0) || !(self.noise_var_v > 0.0) {
            return bad("pilot power and noise variance must be positive".into());
        }
        Ok(())
    }

    /// Post-despreading noise variance `sigma_v^2 / (P L)`.
    pub fn noise_var_z(&self) -> f64 {
        self.noise_var_v / (self.pilot_power * self.l as f64)
    }
}

/// Large-scale parameters of a single link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkParams {
    /// Link distance in metres.
    pub distance: f64,
    pub exponent: f64,
    /// Linear Rician factor.
    pub rician_factor: f64,
    /// Linear path loss at `ref_distance`.
    pub ref_loss: f64,
    pub ref_distance: f64,
}

/// -15 dB at 10 m.
pub const REF_LOSS: f64 = 0.031_622_776_601_683_79;
pub const REF_DISTANCE: f64 = 10.0;

impl LinkParams {
    pub fn new(distance: f64, exponent: f64, rician_factor: f64) -> Self {
        Self {
            distance,
            exponent,
            rician_factor,
            ref_loss: REF_LOSS,
            ref_distance: REF_DISTANCE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.distance > 0.0
            && self.ref_distance > 0.0
            && self.exponent >= 0.0
            && self.rician_factor >= 0.0
            && self.ref_loss > 0.0
            && [
                self.distance,
                self.exponent,
                self.rician_factor,
                self.ref_loss,
                self.ref_distance,
            ]
            .iter()
            .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid link parameters {self:?}")))
        }
    }

    /// `alpha_0 (d / d_0)^(-gamma)`, linear.
    pub fn path_loss(&self) -> f64 {
        self.ref_loss * (self.distance / self.ref_distance).powf(-self.exponent)
    }
}

/// The three link classes of the system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Links {
    /// User to BS (direct).
    pub ub: LinkParams,
    /// IRS to BS.
    pub ib: LinkParams,
    /// User to IRS.
    pub ui: LinkParams,
}

impl Default for Links {
    fn default() -> Self {
        Self {
            ub: LinkParams::new(100.0, 3.6, 0.0),
            ib: LinkParams::new(90.0, 2.3, 10.0),
            ui: LinkParams::new(16.0, 2.0, 0.0),
        }
    }
}

impl Links {
    pub fn validate(&self) -> Result<()> {
        self.ub.validate()?;
        self.ib.validate()?;
        self.ui.validate()
    }
}

/// How the IRS-BS line-of-sight component is oriented.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum LosGeometry {
    /// Arrival and departure angles drawn uniformly for every realization.
    #[default]
    RandomPerRealization,
    /// Static deployment with fixed angles (radians).
    Fixed { arrival: f64, departure: f64 },
}

/// Overall gain applied to every realization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelScaling {
    /// Absolute path loss, channels carry their physical gain.
    None,
    /// Rescale so that `E ||H_k||_F^2 = 1`; relative link strengths are kept.
    #[default]
    UnitEnergy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ChannelModel {
    pub links: Links,
    #[serde(default)]
    pub ib_los: LosGeometry,
    #[serde(default)]
    pub scaling: ChannelScaling,
}

impl ChannelModel {
    /// Expected `||H_k||_F^2` before scaling.
    pub fn expected_energy(&self, m: usize, n: usize) -> f64 {
        let m = m as f64;
        m * self.links.ub.path_loss() + m * n as f64 * self.links.ib.path_loss() * self.links.ui.path_loss()
    }

    /// Amplitude factor applied to `G` and `d_k`.
    pub fn amplitude_scale(&self, m: usize, n: usize) -> f64 {
        match self.scaling {
            ChannelScaling::None => 1.0,
            ChannelScaling::UnitEnergy => 1.0 / self.expected_energy(m, n).sqrt(),
        }
    }
}

/// Half-wavelength uniform linear array response, unit-modulus entries.
pub fn ula_steering(len: usize, angle: f64) -> Vec<Complex64> {
    (0..len)
        .map(|i| Complex64::from_polar(1.0, PI * i as f64 * angle.sin()))
        .collect()
}

/// Rank-one LOS matrix `a(arrival) b(departure)^H` with unit-modulus entries.
pub fn los_matrix(rows: usize, cols: usize, arrival: f64, departure: f64) -> CMatrix {
    let a = ula_steering(rows, arrival);
    let b = ula_steering(cols, departure);
    CMatrix::from_fn(rows, cols, |i, j| a[i] * b[j].conj())
}

/// One Rician draw split into its weighted LOS and NLOS parts.
#[derive(Debug, Clone)]
pub struct RicianDraw {
    pub los: CMatrix,
    pub nlos: CMatrix,
}

impl RicianDraw {
    pub fn total(&self) -> CMatrix {
        self.los.add(&self.nlos).expect("parts share a shape")
    }
}

pub fn sample_rician_parts<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    beta: f64,
    los: Option<(f64, f64)>,
    rng: &mut R,
) -> RicianDraw {
    assert!(beta >= 0.0, "Rician factor must be non-negative");
    let (arrival, departure) =
        los.unwrap_or_else(|| (rng.gen_range(-PI / 2.0..PI / 2.0), rng.gen_range(-PI / 2.0..PI / 2.0)));
    let los_weight = (beta / (beta + 1.0)).sqrt();
    let nlos_weight = (1.0 / (beta + 1.0)).sqrt();
    let los = los_matrix(rows, cols, arrival, departure).scale(los_weight);
    let nlos = CMatrix::from_fn(rows, cols, |_, _| cscg(rng, 1.0) * nlos_weight);
    RicianDraw { los, nlos }
}

/// `sqrt(beta/(beta+1)) LOS + sqrt(1/(beta+1)) NLOS` with unit mean power per entry.
pub fn sample_rician<R: Rng + ?Sized>(rows: usize, cols: usize, beta: f64, rng: &mut R) -> CMatrix {
    sample_rician_parts(rows, cols, beta, None, rng).total()
}

/// One draw of every link plus the derived composite channels.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    /// IRS to BS, M x N.
    pub g: CMatrix,
    /// User to IRS, N x 1 each.
    pub f: Vec<CMatrix>,
    /// User to BS, M x 1 each.
    pub d: Vec<CMatrix>,
    /// Cascaded `G diag(f_k)`, M x N each.
    pub b: Vec<CMatrix>,
    /// `[d_k, B_k]`, M x (N+1) each.
    pub h: Vec<CMatrix>,
}

impl ChannelRealization {
    pub fn assemble(g: CMatrix, f: Vec<CMatrix>, d: Vec<CMatrix>) -> Result<Self> {
        let (m, n) = g.shape();
        if f.len() != d.len() || f.is_empty() {
            return Err(Error::dim(
                "assemble",
                format!("{} f vectors, {} d vectors", f.len(), d.len()),
            ));
        }
        let mut b = Vec::with_capacity(f.len());
        let mut h = Vec::with_capacity(f.len());
        for (fk, dk) in f.iter().zip(&d) {
            if fk.shape() != (n, 1) || dk.shape() != (m, 1) {
                return Err(Error::dim("assemble", "link vector shape"));
            }
            let bk = CMatrix::from_fn(m, n, |i, j| g[(i, j)] * fk[(j, 0)]);
            let hk = CMatrix::from_fn(m, n + 1, |i, j| if j == 0 { dk[(i, 0)] } else { bk[(i, j - 1)] });
            b.push(bk);
            h.push(hk);
        }
        Ok(Self { g, f, d, b, h })
    }

    pub fn users(&self) -> usize {
        self.h.len()
    }
}

/// Draw `G`, then `(f_k, d_k)` for each user, each scaled by the square root of its path loss.
pub fn realize_channels<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    model: &ChannelModel,
    rng: &mut R,
) -> Result<ChannelRealization> {
    cfg.validate()?;
    model.links.validate()?;
    let links = &model.links;
    let scale = model.amplitude_scale(cfg.m, cfg.n);
    let fixed = match model.ib_los {
        LosGeometry::RandomPerRealization => None,
        LosGeometry::Fixed { arrival, departure } => Some((arrival, departure)),
    };
    let g = sample_rician_parts(cfg.m, cfg.n, links.ib.rician_factor, fixed, rng)
        .total()
        .scale(links.ib.path_loss().sqrt() * scale);
    let mut f = Vec::with_capacity(cfg.k);
    let mut d = Vec::with_capacity(cfg.k);
    for _ in 0..cfg.k {
        f.push(sample_rician(cfg.n, 1, links.ui.rician_factor, rng).scale(links.ui.path_loss().sqrt()));
        d.push(sample_rician(cfg.m, 1, links.ub.rician_factor, rng).scale(links.ub.path_loss().sqrt() * scale));
    }
    ChannelRealization::assemble(g, f, d)
}
