//! Trains a reduced desk-profile network at 10 dB, writes and reloads the
//! checkpoint, and compares it with LS on the held-out pairs.

use irs_cdrn::cdrn::{load_checkpoint, save_checkpoint, train, CdrnModel};
use irs_cdrn::harness::{generate_dataset, ExperimentConfig, TrainingSnr};

fn main() -> irs_cdrn::Result<()> {
    let mut cfg = ExperimentConfig::desk();
    cfg.training.samples = 1500;
    cfg.training.heldout_samples = 200;
    cfg.training.filters = 32;
    cfg.training.epochs = 4;

    let data = generate_dataset(&cfg, TrainingSnr::Fixed(10.0), None)?;
    let mut model = CdrnModel::init(cfg.arch(), cfg.seeds.master)?;
    println!("{} parameters", model.param_count());
    let history = train(&mut model, &data.train, &cfg.train_config(), cfg.seeds.master)?;
    for (e, (t, v)) in history.train.iter().zip(&history.validation).enumerate() {
        println!("epoch {:>2}: train {t:.5}  validation {v:.5}", e + 1);
    }

    let path = std::env::temp_dir().join("irs_cdrn_example.ckpt");
    save_checkpoint(&model, &path)?;
    let reloaded = load_checkpoint(&path)?;
    println!(
        "checkpoint {} reloads identically: {}",
        path.display(),
        reloaded == model
    );

    let held = &data.heldout;
    let (out, _) = reloaded.infer(&held.inputs)?;
    let ls = held.inputs.sub(&held.labels)?.sum_sq();
    let net = out.sub(&held.labels)?.sum_sq();
    println!(
        "held-out squared error: LS {ls:.4}, network {net:.4} ({:.2} dB)",
        10.0 * (net / ls).log10()
    );
    Ok(())
}
