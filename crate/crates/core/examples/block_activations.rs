//! Progressive denoising through the blocks: mean `||A_d - H||^2` over the
//! held-out pairs, and an activation dump for one of them.

use irs_cdrn::cdrn::{load_activations, train, CdrnModel};
use irs_cdrn::harness::{
    block_error_energies, dump_activations, generate_dataset, ExperimentConfig, NetworkBank, TrainingSnr,
};

fn main() -> irs_cdrn::Result<()> {
    let mut cfg = ExperimentConfig::desk();
    cfg.training.samples = 1500;
    cfg.training.filters = 32;
    cfg.training.epochs = 4;
    let snr_db = cfg.sweep.snr_db[0];

    let data = generate_dataset(&cfg, TrainingSnr::Fixed(snr_db), None)?;
    let mut model = CdrnModel::init(cfg.arch(), cfg.seeds.master)?;
    train(&mut model, &data.train, &cfg.train_config(), cfg.seeds.master)?;
    for (d, e) in block_error_energies(&model, &data.heldout)?.iter().enumerate() {
        println!("after block {d}: mean ||A_d - H||^2 = {e:.5}");
    }

    let mut bank = NetworkBank::new();
    bank.insert(snr_db, vec![model]);
    let out = std::env::temp_dir().join("irs_cdrn_activations");
    for path in dump_activations(&cfg, &bank, &out, 0)? {
        let tensors = load_activations(&path)?;
        println!(
            "{}: {} tensors of shape {:?}",
            path.display(),
            tensors.len(),
            tensors[0].shape()
        );
    }
    Ok(())
}
