//! LS, LMMSE and binary-schedule LMMSE on the desk profile, with the LS
//! error compared against `M sigma_z^2 (N+1) / C`.

use irs_cdrn::channel::realize_channels;
use irs_cdrn::estimators::{estimate_correlation, slice_error, LmmseFilter, LsFilter, Nmse, Slice};
use irs_cdrn::harness::{db_to_linear, ExperimentConfig};
use irs_cdrn::protocol::{build_binary_schedule, build_dft_schedule, build_pilot_book, run_training_phase};
use irs_cdrn::rng::{substream, Domain};

fn main() -> irs_cdrn::Result<()> {
    let cfg = ExperimentConfig::desk();
    let snr_db = 10.0;
    let sys = cfg.system_at(db_to_linear(snr_db))?;
    let pilots = build_pilot_book(sys.k, sys.l, sys.pilot_power)?;
    let dft = build_dft_schedule(sys.n, sys.c)?;
    let binary = build_binary_schedule(sys.n);

    let mut samples = Vec::new();
    for i in 0..2000 {
        let chan = realize_channels(&sys, &cfg.channel, &mut substream(7, Domain::Correlation, i))?;
        samples.push(chan.h[0].clone());
    }
    let corr = estimate_correlation(&samples)?;
    let sz = sys.noise_var_z();
    let ls = LsFilter::new(&dft)?;
    let lmmse = LmmseFilter::new(&dft, &corr, sys.m, sz)?;
    let b_lmmse = LmmseFilter::new(&binary, &corr, sys.m, sz)?;

    let trials = 3000;
    let mut sums = [[(0.0, 0.0); 2]; 3];
    let mut ls_sq = 0.0;
    for t in 0..trials {
        let mut rng = substream(7, Domain::Scratch, t);
        let chan = realize_channels(&sys, &cfg.channel, &mut rng)?;
        let obs = &run_training_phase(&chan, &dft, &pilots, sys.noise_var_v, &mut rng)?[0];
        let obs_b = &run_training_phase(&chan, &binary, &pilots, sys.noise_var_v, &mut rng)?[0];
        let h = &chan.h[0];
        let ests = [ls.apply(&obs.x)?, lmmse.apply(&obs.x)?, b_lmmse.apply(&obs_b.x)?];
        ls_sq += ests[0].sub(h)?.fro_norm_sq();
        for (acc, est) in sums.iter_mut().zip(&ests) {
            for (s, slice) in acc.iter_mut().zip([Slice::Direct, Slice::Cascaded]) {
                let (e, g) = slice_error(h, est, slice)?;
                s.0 += e;
                s.1 += g;
            }
        }
    }
    for (name, acc) in ["ls", "lmmse", "b-lmmse"].iter().zip(&sums) {
        println!(
            "{name:<8} direct {:>7.3} dB  cascaded {:>7.3} dB",
            Nmse::from_sums(acc[0].0, acc[0].1)?.db,
            Nmse::from_sums(acc[1].0, acc[1].1)?.db
        );
    }
    let analytic = sys.m as f64 * sz * (sys.n + 1) as f64 / sys.c as f64;
    println!(
        "LS mean squared error {:.5}, M sigma_z^2 (N+1)/C = {analytic:.5}",
        ls_sq / trials as f64
    );
    Ok(())
}
