//! Acceptance criteria 1-10. Runs as a plain binary (`harness = false`) so
//! every criterion prints exactly one PASS/FAIL line; the process fails if
//! any criterion does.

use std::fs;
use std::path::Path;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use irs_cdrn::cdrn::{checkpoint_bytes, CdrnArch, CdrnModel};
use irs_cdrn::channel::{realize_channels, sample_rician_parts, SystemConfig};
use irs_cdrn::estimators::{EstimatorId, LsFilter, Slice};
use irs_cdrn::harness::{
    block_error_energies, db_to_linear, generate_dataset, run_sweep, train_networks, ExperimentConfig, SweepResult,
    TrainingSnr,
};
use irs_cdrn::protocol::{build_dft_schedule, build_pilot_book, run_training_phase};
use irs_cdrn::rng::{substream, Domain};
use irs_cdrn::selftest;

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: &str, pass: bool, detail: String, started: Instant) {
        if !pass {
            self.failures += 1;
        }
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!(
            "{verdict} criterion {id}: {detail} [{:.1} s]",
            started.elapsed().as_secs_f64()
        );
    }

    fn error(&mut self, id: &str, err: irs_cdrn::Error, started: Instant) {
        self.line(id, false, format!("error: {err}"), started);
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

fn criterion_1() -> irs_cdrn::Result<(bool, String)> {
    let err = selftest::schedule_identity_error(32, 33)?;
    Ok((err < 1e-9, format!("max |P P^H - 33 I| = {err:.3e} (< 1e-9)")))
}

fn criterion_2() -> irs_cdrn::Result<(bool, String)> {
    let mut worst = 0.0f64;
    for seed in 0..5 {
        worst = worst.max(selftest::protocol_exactness_error(seed, 4, 8, 6)?);
    }
    Ok((
        worst < 1e-10,
        format!("K = 6, max |X_k - H_k P| = {worst:.3e} (< 1e-10)"),
    ))
}

fn desk_system(snr_db: f64) -> irs_cdrn::Result<(ExperimentConfig, SystemConfig)> {
    let cfg = ExperimentConfig::desk();
    let sys = cfg.system_at(db_to_linear(snr_db))?;
    Ok((cfg, sys))
}

fn criterion_3() -> irs_cdrn::Result<(bool, String)> {
    let (cfg, sys) = desk_system(10.0)?;
    let sched = build_dft_schedule(sys.n, sys.c)?;
    let pilots = build_pilot_book(sys.k, sys.l, sys.pilot_power)?;
    let trials = 100_000u64;
    let (mut acc, mut count) = (0.0, 0usize);
    for t in 0..trials {
        let mut rng = substream(31, Domain::Scratch, t);
        let chan = realize_channels(&sys, &cfg.channel, &mut rng)?;
        let obs = run_training_phase(&chan, &sched, &pilots, sys.noise_var_v, &mut rng)?;
        for (o, h) in obs.iter().zip(&chan.h) {
            let z = o.x.sub(&h.matmul(sched.matrix())?)?;
            acc += z.fro_norm_sq();
            count += z.rows() * z.cols();
        }
    }
    let empirical = acc / count as f64;
    let expect = sys.noise_var_v / (sys.pilot_power * sys.l as f64);
    let e = rel(empirical, expect);
    Ok((
        e < 0.02,
        format!("despread variance {empirical:.6} vs sigma_v^2/(P L) = {expect:.6}, rel err {e:.4} (< 0.02)"),
    ))
}

/// Inverse of a small Hermitian positive definite matrix by Gauss-Jordan
/// elimination, written out here so the oracle shares no code with the crate.
fn gauss_jordan_inverse(a: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
    let n = a.len();
    let mut aug: Vec<Vec<Complex64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| Complex64::new(if i == j { 1.0 } else { 0.0 }, 0.0)));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| aug[x][col].norm().total_cmp(&aug[y][col].norm()))
            .unwrap();
        aug.swap(col, pivot);
        let inv = 1.0 / aug[col][col];
        for v in aug[col].iter_mut() {
            *v *= inv;
        }
        for r in 0..n {
            if r != col {
                let f = aug[r][col];
                for c in 0..2 * n {
                    let sub = f * aug[col][c];
                    aug[r][c] -= sub;
                }
            }
        }
    }
    aug.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Brute-force `E ||H - X P^dagger||^2` with `X = H P + Z`, `Z` drawn
/// directly with per-entry variance `sigma_z^2`.
fn ls_mse_oracle(m: usize, n1: usize, c: usize, noise_var_z: f64, trials: usize) -> f64 {
    let w = |k: usize| Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * k as f64 / c as f64);
    let p: Vec<Vec<Complex64>> = (0..n1).map(|i| (0..c).map(|j| w((i * j) % c)).collect()).collect();
    let gram: Vec<Vec<Complex64>> = (0..n1)
        .map(|i| {
            (0..n1)
                .map(|j| (0..c).map(|t| p[i][t] * p[j][t].conj()).sum())
                .collect()
        })
        .collect();
    let gram_inv = gauss_jordan_inverse(&gram);
    // P^dagger = P^H (P P^H)^-1, C x (N+1)
    let pinv: Vec<Vec<Complex64>> = (0..c)
        .map(|t| {
            (0..n1)
                .map(|j| (0..n1).map(|i| p[i][t].conj() * gram_inv[i][j]).sum())
                .collect()
        })
        .collect();
    let mut rng = ChaCha20Rng::seed_from_u64(0x5eed_0bac1e);
    let sd = (noise_var_z / 2.0).sqrt();
    let cn = |rng: &mut ChaCha20Rng, sd: f64| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re * sd, im * sd)
    };
    let mut total = 0.0;
    for _ in 0..trials {
        let h: Vec<Vec<Complex64>> = (0..m)
            .map(|_| (0..n1).map(|_| cn(&mut rng, 0.5f64.sqrt())).collect())
            .collect();
        let x: Vec<Vec<Complex64>> = (0..m)
            .map(|r| {
                (0..c)
                    .map(|t| (0..n1).map(|i| h[r][i] * p[i][t]).sum::<Complex64>() + cn(&mut rng, sd))
                    .collect()
            })
            .collect();
        for r in 0..m {
            for j in 0..n1 {
                let est: Complex64 = (0..c).map(|t| x[r][t] * pinv[t][j]).sum();
                total += (est - h[r][j]).norm_sqr();
            }
        }
    }
    total / trials as f64
}

fn criterion_4() -> irs_cdrn::Result<(bool, String)> {
    let (cfg, sys) = desk_system(10.0)?;
    let sched = build_dft_schedule(sys.n, sys.c)?;
    let pilots = build_pilot_book(sys.k, sys.l, sys.pilot_power)?;
    let ls = LsFilter::new(&sched)?;
    let trials = 100_000u64;
    let mut acc = 0.0;
    for t in 0..trials {
        let mut rng = substream(41, Domain::Scratch, t);
        let chan = realize_channels(&sys, &cfg.channel, &mut rng)?;
        let obs = run_training_phase(&chan, &sched, &pilots, sys.noise_var_v, &mut rng)?;
        acc += ls.apply(&obs[0].x)?.sub(&chan.h[0])?.fro_norm_sq();
    }
    let empirical = acc / trials as f64;
    let sz = sys.noise_var_z();
    let (m, n1, c) = (sys.m as f64, (sys.n + 1) as f64, sys.c as f64);
    let oracle = ls_mse_oracle(sys.m, sys.n + 1, sys.c, sz, trials as usize);
    let analytic = m * sz * n1 / c;
    let published = m * sz / (n1 * c);
    let e = rel(empirical, oracle);
    Ok((
        e < 0.02,
        format!(
            "empirical {empirical:.5}, brute-force oracle {oracle:.5} (rel err {e:.4} < 0.02); \
             analytic M s^2 (N+1)/C = {analytic:.5}; published M s^2/((N+1) C) = {published:.6}"
        ),
    ))
}

fn criterion_5() -> irs_cdrn::Result<(bool, String)> {
    let mut parts = Vec::new();
    let mut worst = 0.0f64;
    for seed in [1u64, 2, 3] {
        let vals = [
            ("conv", selftest::conv_gradient_error(seed)?),
            ("bn", selftest::batchnorm_gradient_error(seed)?),
            ("relu", selftest::relu_gradient_error(seed)?),
            ("stack", selftest::stack_gradient_error(seed)?),
            ("model", selftest::model_gradient_error(seed)?),
        ];
        for (name, v) in vals {
            worst = worst.max(v);
            if seed == 1 {
                parts.push(format!("{name} {v:.1e}"));
            }
        }
    }
    Ok((
        worst < 1e-4,
        format!(
            "max rel err {worst:.3e} over 3 seeds (< 1e-4); seed 1: {}",
            parts.join(", ")
        ),
    ))
}

fn criterion_6() -> irs_cdrn::Result<(bool, String)> {
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let arch = CdrnArch {
            m: 4,
            n: 8,
            blocks: 3,
            layers: 5,
            filters: 16,
        };
        worst = worst.max(selftest::residual_decomposition_error(seed, arch)?);
    }
    Ok((
        worst < 1e-12,
        format!("max |out - (A - sum r_d)| = {worst:.3e} (< 1e-12)"),
    ))
}

fn criterion_7() -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for beta in [0.0, 10.0] {
        let (rows, draws) = (1000usize, 1000u64);
        let (mut los, mut nlos, mut total) = (0.0, 0.0, 0.0);
        for i in 0..draws {
            let mut rng = substream(71, Domain::Scratch, i + 10_000 * beta as u64);
            let d = sample_rician_parts(rows, 1, beta, None, &mut rng);
            los += d.los.fro_norm_sq();
            nlos += d.nlos.fro_norm_sq();
            total += d.total().fro_norm_sq();
        }
        let samples = (rows as u64 * draws) as f64;
        let power = total / samples;
        let los_share = los / (los + nlos);
        let nlos_share = nlos / (los + nlos);
        let (t_los, t_nlos) = (beta / (beta + 1.0), 1.0 / (beta + 1.0));
        let split_ok = |got: f64, want: f64| if want == 0.0 { got == 0.0 } else { rel(got, want) < 0.02 };
        let pass = rel(power, 1.0) < 0.01 && split_ok(los_share, t_los) && split_ok(nlos_share, t_nlos);
        ok &= pass;
        parts.push(format!(
            "beta {beta}: power {power:.4}, LOS {los_share:.4}/{t_los:.4}, NLOS {nlos_share:.4}/{t_nlos:.4}"
        ));
    }
    (ok, format!("{} (1e6 samples each)", parts.join("; ")))
}

struct DeskRun {
    result: SweepResult,
    checkpoints: Vec<(String, Vec<u8>)>,
    model: CdrnModel,
}

fn desk_run(cfg: &ExperimentConfig, out: &Path) -> irs_cdrn::Result<DeskRun> {
    let (bank, trained) = train_networks(cfg, out, |_| {})?;
    let result = run_sweep(cfg, &bank)?;
    result.write_csv(&out.join("sweep.csv"))?;
    let mut checkpoints = Vec::new();
    for net in &trained {
        let name = net.checkpoint.file_name().unwrap().to_string_lossy().into_owned();
        checkpoints.push((name, fs::read(&net.checkpoint)?));
    }
    Ok(DeskRun {
        result,
        checkpoints,
        model: trained[0].model.clone(),
    })
}

fn criterion_8(cfg: &ExperimentConfig, run: &DeskRun) -> (bool, String) {
    let snr = cfg.sweep.snr_db[0];
    let get = |id, slice| run.result.nmse_db(snr, id, slice).unwrap_or(f64::NAN);
    let (ls_d, ls_c) = (
        get(EstimatorId::Ls, Slice::Direct),
        get(EstimatorId::Ls, Slice::Cascaded),
    );
    let (lm_d, lm_c) = (
        get(EstimatorId::Lmmse, Slice::Direct),
        get(EstimatorId::Lmmse, Slice::Cascaded),
    );
    let (cd_d, cd_c) = (
        get(EstimatorId::Cdrn, Slice::Direct),
        get(EstimatorId::Cdrn, Slice::Cascaded),
    );
    let (bl_d, bl_c) = (
        get(EstimatorId::BLmmse, Slice::Direct),
        get(EstimatorId::BLmmse, Slice::Cascaded),
    );
    let checks = [
        ("a", lm_d <= ls_d && lm_c <= ls_c),
        ("b", cd_c <= ls_c - 3.0),
        ("c", cd_c <= lm_c + 0.5),
        ("d", (cd_d - lm_d).abs() <= 1.0),
        ("e", bl_d >= lm_d && bl_c >= lm_c),
    ];
    let verdicts: Vec<String> = checks
        .iter()
        .map(|(n, p)| format!("8{n} {}", if *p { "ok" } else { "FAILED" }))
        .collect();
    (
        checks.iter().all(|c| c.1),
        format!(
            "{}; direct/cascaded dB: ls {ls_d:.3}/{ls_c:.3}, lmmse {lm_d:.3}/{lm_c:.3}, \
             cdrn {cd_d:.3}/{cd_c:.3}, b-lmmse {bl_d:.3}/{bl_c:.3}",
            verdicts.join(", ")
        ),
    )
}

fn criterion_9(cfg: &ExperimentConfig, model: &CdrnModel) -> irs_cdrn::Result<(bool, String)> {
    let snr = cfg.sweep.snr_db[0];
    let data = generate_dataset(cfg, TrainingSnr::Fixed(snr), None)?;
    let energies = block_error_energies(model, &data.heldout)?;
    let ok = energies.windows(2).all(|w| w[1] <= w[0]);
    let shown: Vec<String> = energies.iter().map(|e| format!("{e:.5}")).collect();
    Ok((
        ok,
        format!(
            "mean ||A_d - H||^2 for d = 0..{} over {} held-out pairs: [{}]",
            energies.len() - 1,
            data.heldout.len(),
            shown.join(", ")
        ),
    ))
}

fn criterion_10(a: &DeskRun, b: &DeskRun) -> irs_cdrn::Result<(bool, String)> {
    let rows_equal = a.result.timeless_lines()? == b.result.timeless_lines()?;
    let ckpt_equal = a.checkpoints == b.checkpoints;
    let model_bytes_equal = checkpoint_bytes(&a.model) == checkpoint_bytes(&b.model);
    Ok((
        rows_equal && ckpt_equal && model_bytes_equal,
        format!(
            "{} CSV rows identical: {rows_equal}; {} checkpoint file(s) byte-identical: {ckpt_equal}",
            a.result.rows.len(),
            a.checkpoints.len()
        ),
    ))
}

fn main() {
    let mut report = Report { failures: 0 };
    let quick: [(&str, fn() -> irs_cdrn::Result<(bool, String)>); 6] = [
        ("1", criterion_1),
        ("2", criterion_2),
        ("3", criterion_3),
        ("4", criterion_4),
        ("5", criterion_5),
        ("6", criterion_6),
    ];
    for (id, f) in quick {
        let t = Instant::now();
        match f() {
            Ok((pass, detail)) => report.line(id, pass, detail, t),
            Err(e) => report.error(id, e, t),
        }
    }
    let t = Instant::now();
    let (pass, detail) = criterion_7();
    report.line("7", pass, detail, t);

    let cfg = ExperimentConfig::desk();
    let dir = tempfile::tempdir().expect("temporary directory");
    let t = Instant::now();
    let first = desk_run(&cfg, &dir.path().join("run-a"));
    match &first {
        Ok(run) => {
            let (pass, detail) = criterion_8(&cfg, run);
            report.line("8", pass, detail, t);
            let t = Instant::now();
            match criterion_9(&cfg, &run.model) {
                Ok((pass, detail)) => report.line("9", pass, detail, t),
                Err(e) => report.error("9", e, t),
            }
        }
        Err(e) => {
            report.line("8", false, format!("error: {e}"), t);
            report.line("9", false, "no trained model".into(), t);
        }
    }
    let t = Instant::now();
    match (first, desk_run(&cfg, &dir.path().join("run-b"))) {
        (Ok(a), Ok(b)) => match criterion_10(&a, &b) {
            Ok((pass, detail)) => report.line("10", pass, detail, t),
            Err(e) => report.error("10", e, t),
        },
        (_, Err(e)) => report.error("10", e, t),
        (Err(_), _) => report.line("10", false, "first run failed".into(), t),
    }

    if report.failures > 0 {
        println!("{} acceptance criteria failed", report.failures);
        std::process::exit(1);
    }
    println!("all 10 acceptance criteria passed");
}
