//! Rician draws: mean power and LOS/NLOS split, then the path-loss scaled
//! composite channel `H = [d, G diag(f)]` of the desk profile.

use irs_cdrn::channel::{realize_channels, sample_rician_parts};
use irs_cdrn::harness::ExperimentConfig;
use irs_cdrn::rng::{substream, Domain};

fn main() -> irs_cdrn::Result<()> {
    let samples = 200_000;
    for beta in [0.0, 1.0, 10.0] {
        let mut rng = substream(3, Domain::Scratch, beta as u64);
        let (mut total, mut los) = (0.0, 0.0);
        for _ in 0..samples {
            let draw = sample_rician_parts(1, 1, beta, None, &mut rng);
            total += draw.total().fro_norm_sq();
            los += draw.los.fro_norm_sq();
        }
        println!(
            "beta = {beta:>4}: E|h|^2 = {:.4}, LOS share {:.4} (expected {:.4})",
            total / samples as f64,
            los / total,
            beta / (beta + 1.0)
        );
    }

    let cfg = ExperimentConfig::desk();
    let sys = cfg.system_at(10.0)?;
    let mut rng = substream(cfg.seeds.master, Domain::Scratch, 99);
    let trials = 5000;
    let (mut direct, mut cascaded) = (0.0, 0.0);
    for _ in 0..trials {
        let chan = realize_channels(&sys, &cfg.channel, &mut rng)?;
        for h in &chan.h {
            direct += h.column(0).fro_norm_sq();
            cascaded += h.columns(1, h.cols())?.fro_norm_sq();
        }
    }
    let per = (trials * sys.k) as f64;
    println!(
        "desk profile: E||d||^2 = {:.4}, E||G diag(f)||^2 = {:.4}, total {:.4}",
        direct / per,
        cascaded / per,
        (direct + cascaded) / per
    );
    Ok(())
}
