//! Uplink training phase: IRS reflection schedules, orthogonal pilots,
//! per-sub-frame reception and despreading into `X_k = H_k P + Z_k`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::rng::cscg;

/// The `(N+1) x C` training matrix. Column `c` is `p_c = [1, r_c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionSchedule {
    p: CMatrix,
}

impl ReflectionSchedule {
    pub fn from_matrix(p: CMatrix) -> Result<Self> {
        if p.rows() > p.cols() {
            return Err(Error::dim("schedule", "fewer sub-frames than unknown columns"));
        }
        if (0..p.cols()).any(|c| p[(0, c)] != Complex64::new(1.0, 0.0)) {
            return Err(Error::InvalidArgument(
                "direct-link row of a schedule must be all ones".into(),
            ));
        }
        Ok(Self { p })
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.p
    }

    /// N
    pub fn elements(&self) -> usize {
        self.p.rows() - 1
    }

    /// C
    pub fn subframes(&self) -> usize {
        self.p.cols()
    }

    /// `p_c`, an `(N+1) x 1` column.
    pub fn phase_vector(&self, c: usize) -> CMatrix {
        self.p.column(c)
    }

    /// IRS reflection coefficients `r_c` for sub-frame `c`.
    pub fn irs_coefficients(&self, c: usize) -> Vec<Complex64> {
        (1..self.p.rows()).map(|n| self.p[(n, c)]).collect()
    }
}

/// `P[n][c] = W_C^(n c)` with `W_C = exp(j 2 pi / C)`.
pub fn build_dft_schedule(n: usize, c: usize) -> Result<ReflectionSchedule> {
    if c < n + 1 {
        return Err(Error::InvalidArgument(format!(
            "DFT schedule needs C >= N+1, got N={n} C={c}"
        )));
    }
    let p = CMatrix::from_fn(n + 1, c, |row, col| {
        // reduce the exponent first so large N*C stays exact
        let e = (row * col) % c;
        Complex64::from_polar(1.0, 2.0 * PI * e as f64 / c as f64)
    });
    ReflectionSchedule::from_matrix(p)
}

/// One element on per sub-frame plus an all-off sub-frame for the direct link.
pub fn build_binary_schedule(n: usize) -> ReflectionSchedule {
    let p = CMatrix::from_fn(n + 1, n + 1, |row, col| {
        if row == 0 || row == col {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    ReflectionSchedule { p }
}

/// `K` mutually orthogonal length-`L` pilot sequences, one per column.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotBook {
    u: CMatrix,
    power: f64,
}

impl PilotBook {
    pub fn matrix(&self) -> &CMatrix {
        &self.u
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn len(&self) -> usize {
        self.u.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn users(&self) -> usize {
        self.u.cols()
    }

    pub fn sequence(&self, k: usize) -> CMatrix {
        self.u.column(k)
    }
}

/// First `K` columns of the `L x L` DFT matrix, scaled by `sqrt(power)`.
pub fn build_pilot_book(k: usize, l: usize, power: f64) -> Result<PilotBook> {
    if k == 0 || l < k {
        return Err(Error::InvalidArgument(format!(
            "pilot book needs 1 <= K <= L, got K={k} L={l}"
        )));
    }
    if !(power > 0.0) {
        return Err(Error::InvalidArgument("pilot power must be positive".into()));
    }
    let amp = power.sqrt();
    let u = CMatrix::from_fn(l, k, |i, j| {
        let e = (i * j) % l;
        Complex64::from_polar(amp, 2.0 * PI * e as f64 / l as f64)
    });
    Ok(PilotBook { u, power })
}

/// Received block `S_c = sum_k H_k p_c u_k^H + V_c`, an `M x L` matrix.
pub fn simulate_subframe<R: Rng + ?Sized>(
    chan: &ChannelRealization,
    p_c: &CMatrix,
    pilots: &PilotBook,
    noise_var_v: f64,
    rng: &mut R,
) -> Result<CMatrix> {
    if chan.users() > pilots.users() {
        return Err(Error::dim("simulate_subframe", "more users than pilot sequences"));
    }
    let m = chan.h[0].rows();
    let l = pilots.len();
    let mut s = CMatrix::zeros(m, l);
    for (k, hk) in chan.h.iter().enumerate() {
        let response = hk.matmul(p_c)?;
        for i in 0..m {
            for t in 0..l {
                s[(i, t)] += response[(i, 0)] * pilots.u[(t, k)].conj();
            }
        }
    }
    if noise_var_v > 0.0 {
        for z in s.as_mut_slice() {
            *z += cscg(rng, noise_var_v);
        }
    }
    Ok(s)
}

/// `x_{c,k} = S_c u_k / (P L)`.
pub fn despread(s_c: &CMatrix, u_k: &CMatrix, power: f64, l: usize) -> Result<CMatrix> {
    Ok(s_c.matmul(u_k)?.scale(1.0 / (power * l as f64)))
}

/// Despread observations of one user over all `C` sub-frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// `M x C`
    pub x: CMatrix,
    pub noise_var_z: f64,
}

pub fn assemble_observation(x_list: &[CMatrix], expected: usize, noise_var_z: f64) -> Result<Observation> {
    if x_list.len() != expected {
        return Err(Error::dim(
            "assemble_observation",
            format!("{} sub-frame vectors, expected {expected}", x_list.len()),
        ));
    }
    Ok(Observation {
        x: CMatrix::hstack(x_list)?,
        noise_var_z,
    })
}

/// Run one full estimation phase and despread it for every user.
pub fn run_training_phase<R: Rng + ?Sized>(
    chan: &ChannelRealization,
    sched: &ReflectionSchedule,
    pilots: &PilotBook,
    noise_var_v: f64,
    rng: &mut R,
) -> Result<Vec<Observation>> {
    let users = chan.users();
    let c = sched.subframes();
    let l = pilots.len();
    let mut per_user: Vec<Vec<CMatrix>> = vec![Vec::with_capacity(c); users];
    for sub in 0..c {
        let s = simulate_subframe(chan, &sched.phase_vector(sub), pilots, noise_var_v, rng)?;
        for (k, list) in per_user.iter_mut().enumerate() {
            list.push(despread(&s, &pilots.sequence(k), pilots.power(), l)?);
        }
    }
    let noise_var_z = noise_var_v / (pilots.power() * l as f64);
    per_user
        .iter()
        .map(|xs| assemble_observation(xs, c, noise_var_z))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{realize_channels, ChannelModel, SystemConfig};
    use crate::rng::{substream, Domain};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn cfg(k: usize) -> SystemConfig {
        SystemConfig {
            m: 3,
            n: 4,
            k,
            c: 6,
            l: 3,
            pilot_power: 1.5,
            noise_var_v: 0.2,
            seed: 0,
        }
    }

    #[test]
    fn dft_schedule_two_by_two() {
        let s = build_dft_schedule(1, 2).unwrap();
        let expected = CMatrix::from_rows(&[vec![c(1., 0.), c(1., 0.)], vec![c(1., 0.), c(-1., 0.)]]).unwrap();
        assert!(s.matrix().max_abs_diff(&expected).unwrap() < 1e-15);
        assert!(build_dft_schedule(4, 4).is_err());
    }

    #[test]
    fn dft_schedule_gram_and_unit_modulus() {
        for (n, cc) in [(1, 2), (3, 5), (8, 9), (8, 12), (32, 33)] {
            let s = build_dft_schedule(n, cc).unwrap();
            let p = s.matrix();
            let gram = p.matmul(&p.conj_transpose()).unwrap();
            let err = gram.max_abs_diff(&CMatrix::identity(n + 1).scale(cc as f64)).unwrap();
            assert!(err < 1e-9, "({n},{cc}): {err}");
            assert!(p.as_slice().iter().all(|z| (z.norm() - 1.0).abs() < 1e-14));
            assert!((0..cc).all(|j| p[(0, j)] == c(1., 0.)));
            assert_eq!(s.irs_coefficients(1).len(), n);
        }
    }

    #[test]
    fn binary_schedule() {
        let s = build_binary_schedule(2);
        let expected = CMatrix::from_rows(&[
            vec![c(1., 0.), c(1., 0.), c(1., 0.)],
            vec![c(0., 0.), c(1., 0.), c(0., 0.)],
            vec![c(0., 0.), c(0., 0.), c(1., 0.)],
        ])
        .unwrap();
        assert_eq!(s.matrix(), &expected);

        let n = 8;
        let s = build_binary_schedule(n);
        assert!(s.matrix().right_pseudoinverse().is_ok());
        let p = s.matrix();
        let energy = p.matmul(&p.conj_transpose()).unwrap().trace().re;
        assert_eq!(energy, (n + 1 + n) as f64);
        assert!(energy < ((n + 1) * (n + 1)) as f64);
        for row in 1..=n {
            for col in 0..=n {
                let z = p[(row, col)];
                assert!(z == c(0., 0.) || z == c(1., 0.));
            }
        }
    }

    #[test]
    fn pilot_book_cases() {
        let b = build_pilot_book(2, 2, 1.0).unwrap();
        let expected = CMatrix::from_rows(&[vec![c(1., 0.), c(1., 0.)], vec![c(1., 0.), c(-1., 0.)]]).unwrap();
        assert!(b.matrix().max_abs_diff(&expected).unwrap() < 1e-15);

        let b = build_pilot_book(5, 7, 0.3).unwrap();
        let gram = b.matrix().conj_transpose().matmul(b.matrix()).unwrap();
        assert!(gram.max_abs_diff(&CMatrix::identity(5).scale(0.3 * 7.0)).unwrap() < 1e-9);

        let single = build_pilot_book(1, 4, 2.0).unwrap();
        assert!(single
            .matrix()
            .as_slice()
            .iter()
            .all(|z| (z.norm() - 2f64.sqrt()).abs() < 1e-15));

        assert!(build_pilot_book(3, 2, 1.0).is_err());
    }

    #[test]
    fn noise_free_single_user_subframe() {
        let cfg = cfg(1);
        let mut rng = substream(1, Domain::Scratch, 0);
        let chan = realize_channels(&cfg, &ChannelModel::default(), &mut rng).unwrap();
        let sched = build_dft_schedule(cfg.n, cfg.c).unwrap();
        let pilots = build_pilot_book(1, cfg.l, cfg.pilot_power).unwrap();
        let p_c = sched.phase_vector(2);
        let s = simulate_subframe(&chan, &p_c, &pilots, 0.0, &mut rng).unwrap();
        let expected = chan.h[0]
            .matmul(&p_c)
            .unwrap()
            .matmul(&pilots.sequence(0).conj_transpose())
            .unwrap();
        assert!(s.max_abs_diff(&expected).unwrap() < 1e-15);
    }

    #[test]
    fn noise_free_superposition_and_despread() {
        let cfg = cfg(2);
        let mut rng = substream(2, Domain::Scratch, 0);
        let chan = realize_channels(&cfg, &ChannelModel::default(), &mut rng).unwrap();
        let sched = build_dft_schedule(cfg.n, cfg.c).unwrap();
        let pilots = build_pilot_book(2, cfg.l, cfg.pilot_power).unwrap();
        let p_c = sched.phase_vector(1);
        let s = simulate_subframe(&chan, &p_c, &pilots, 0.0, &mut rng).unwrap();
        let mut expected = CMatrix::zeros(cfg.m, cfg.l);
        for k in 0..2 {
            let term = chan.h[k]
                .matmul(&p_c)
                .unwrap()
                .matmul(&pilots.sequence(k).conj_transpose())
                .unwrap();
            expected.add_assign(&term).unwrap();
        }
        assert!(s.max_abs_diff(&expected).unwrap() < 1e-14);
        for k in 0..2 {
            let x = despread(&s, &pilots.sequence(k), pilots.power(), cfg.l).unwrap();
            assert!(x.max_abs_diff(&chan.h[k].matmul(&p_c).unwrap()).unwrap() < 1e-10);
        }
    }

    #[test]
    fn unit_normalizer_despread_is_plain_product() {
        let mut rng = substream(3, Domain::Scratch, 0);
        let s = CMatrix::from_fn(2, 1, |_, _| cscg(&mut rng, 1.0));
        let u = CMatrix::from_rows(&[vec![c(0., 1.)]]).unwrap();
        assert_eq!(despread(&s, &u, 1.0, 1).unwrap(), s.matmul(&u).unwrap());
    }

    #[test]
    fn end_to_end_noise_free_identity() {
        let cfg = cfg(3);
        let mut rng = substream(4, Domain::Scratch, 0);
        let chan = realize_channels(&cfg, &ChannelModel::default(), &mut rng).unwrap();
        let sched = build_dft_schedule(cfg.n, cfg.c).unwrap();
        let pilots = build_pilot_book(cfg.k, cfg.l, cfg.pilot_power).unwrap();
        let obs = run_training_phase(&chan, &sched, &pilots, 0.0, &mut rng).unwrap();
        for (k, o) in obs.iter().enumerate() {
            let expected = chan.h[k].matmul(sched.matrix()).unwrap();
            assert!(o.x.max_abs_diff(&expected).unwrap() < 1e-10);
        }
    }

    #[test]
    fn assemble_checks_count() {
        let v = CMatrix::zeros(2, 1);
        let o = assemble_observation(&[v.clone()], 1, 0.1).unwrap();
        assert_eq!(o.x, v);
        assert!(assemble_observation(&[v.clone(), v], 3, 0.1).is_err());
    }

    #[test]
    fn subframe_noise_variance() {
        let cfg = SystemConfig { k: 1, ..cfg(1) };
        let mut rng = substream(5, Domain::Scratch, 0);
        let chan = realize_channels(&cfg, &ChannelModel::default(), &mut rng).unwrap();
        let zero = ChannelRealization::assemble(
            chan.g.scale(0.0),
            vec![chan.f[0].scale(0.0)],
            vec![chan.d[0].scale(0.0)],
        )
        .unwrap();
        let pilots = build_pilot_book(1, 10, 1.0).unwrap();
        let p_c = build_dft_schedule(cfg.n, cfg.c).unwrap().phase_vector(0);
        let mut acc = 0.0;
        let mut count = 0usize;
        while count < 1_000_000 {
            let s = simulate_subframe(&zero, &p_c, &pilots, 0.7, &mut rng).unwrap();
            acc += s.fro_norm_sq();
            count += s.as_slice().len();
        }
        let var = acc / count as f64;
        assert!((var / 0.7 - 1.0).abs() < 0.01, "{var}");
    }
}
