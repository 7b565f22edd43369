//! End-to-end NMSE sweep over SNR for every estimator, with one network
//! trained per SNR point. Pass a config path to run another profile.

use irs_cdrn::harness::{run_sweep, train_networks, ExperimentConfig};

fn main() -> irs_cdrn::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => ExperimentConfig::load(path.as_ref())?,
        None => {
            let mut cfg = ExperimentConfig::desk();
            cfg.sweep.snr_db = vec![0.0, 10.0, 20.0];
            cfg.sweep.trials = 2000;
            cfg.training.samples = 1500;
            cfg.training.filters = 32;
            cfg.training.epochs = 3;
            cfg
        }
    };
    let out = std::env::temp_dir().join("irs_cdrn_sweep");
    let (bank, _) = train_networks(&cfg, &out, |net| println!("trained {} dB network", net.snr_db))?;
    let result = run_sweep(&cfg, &bank)?;
    print!("{}", result.to_csv()?);
    Ok(())
}
