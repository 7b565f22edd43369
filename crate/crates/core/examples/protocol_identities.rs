//! DFT reflection schedule, pilot spreading and despreading on a noise-free
//! estimation phase, then the despread noise level with noise switched on.

use irs_cdrn::channel::{realize_channels, ChannelModel, SystemConfig};
use irs_cdrn::linalg::CMatrix;
use irs_cdrn::protocol::{build_dft_schedule, build_pilot_book, run_training_phase};
use irs_cdrn::rng::{substream, Domain};

fn main() -> irs_cdrn::Result<()> {
    let (n, c) = (32, 33);
    let sched = build_dft_schedule(n, c)?;
    let p = sched.matrix();
    let gram = p.matmul(&p.conj_transpose())?;
    let err = gram.max_abs_diff(&CMatrix::identity(n + 1).scale(c as f64))?;
    println!("N = {n}, C = {c}: max |P P^H - C I| = {err:.2e}");

    let sys = SystemConfig {
        m: 4,
        n: 8,
        k: 6,
        c: 9,
        l: 6,
        pilot_power: 2.0,
        noise_var_v: 0.5,
        seed: 1,
    };
    let mut rng = substream(sys.seed, Domain::Scratch, 0);
    let chan = realize_channels(&sys, &ChannelModel::default(), &mut rng)?;
    let sched = build_dft_schedule(sys.n, sys.c)?;
    let pilots = build_pilot_book(sys.k, sys.l, sys.pilot_power)?;

    let clean = run_training_phase(&chan, &sched, &pilots, 0.0, &mut rng)?;
    for (k, (obs, h)) in clean.iter().zip(&chan.h).enumerate() {
        let expect = h.matmul(sched.matrix())?;
        println!("user {k}: max |X_k - H_k P| = {:.2e}", obs.x.max_abs_diff(&expect)?);
    }

    let trials = 2000;
    let mut acc = 0.0;
    let mut count = 0usize;
    for _ in 0..trials {
        let noisy = run_training_phase(&chan, &sched, &pilots, sys.noise_var_v, &mut rng)?;
        for (obs, h) in noisy.iter().zip(&chan.h) {
            let z = obs.x.sub(&h.matmul(sched.matrix())?)?;
            acc += z.fro_norm_sq();
            count += z.rows() * z.cols();
        }
    }
    println!(
        "despread noise variance {:.5} (sigma_v^2 / (P L) = {:.5})",
        acc / count as f64,
        sys.noise_var_z()
    );
    Ok(())
}
