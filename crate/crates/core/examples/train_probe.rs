//! Scratch probe: training speed and steering score at various budgets.

use frameshield::i2v::{train_toy_model, ModelConfig, TrainSettings};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let vae_steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let bb_steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(600);
    let cfg = ModelConfig::default();
    let settings = TrainSettings {
        vae_steps,
        backbone_steps: bb_steps,
        ..TrainSettings::default()
    };
    let t0 = std::time::Instant::now();
    let (_model, outcome) = train_toy_model(cfg, &settings).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    let last_vae = outcome.vae_loss_curve.last().map(|x| x.1).unwrap_or(f64::NAN);
    let last_bb = outcome
        .backbone_loss_curve
        .last()
        .map(|x| x.1)
        .unwrap_or(f64::NAN);
    println!(
        "time: {dt:.1}s  vae_loss: {last_vae:.5}  bb_loss: {last_bb:.5}  recon: {:.5}  steering: {:.2}",
        outcome.val_recon_mse, outcome.steering_score
    );
}
