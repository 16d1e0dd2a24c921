//! Scratch probe: does the caption steer generation after training?

use frameshield::i2v::{sample, train_toy_model, ModelConfig, TrainSettings};
use frameshield::rng::DetRng;
use frameshield::toyworld::{caption, intensity_centroid, render_scene, Motion, Scene, Video};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let vae_steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(600);
    let bb_steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let cfg_scale: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(3.0);
    let cfg = ModelConfig::default();
    let settings = TrainSettings {
        vae_steps,
        backbone_steps: bb_steps,
        ..TrainSettings::default()
    };
    let t0 = std::time::Instant::now();
    let (model, outcome) = train_toy_model(cfg, &settings).unwrap();
    println!(
        "train {:.0}s vae {:.4} bb {:.4} recon {:.4} steering {:.2}",
        t0.elapsed().as_secs_f64(),
        outcome.vae_loss_curve.last().unwrap().1,
        outcome.backbone_loss_curve.last().unwrap().1,
        outcome.val_recon_mse,
        outcome.steering_score
    );

    let mut rng = DetRng::new(777, "steer-probe");
    for i in 0..6 {
        let mut scene = Scene::sample(&mut rng, (1.0, 2.0));
        scene.motion = Motion::Right;
        let video = render_scene(&scene, 9, 32, 32).unwrap();
        let image = video.frame(0);
        let mut right = scene;
        right.motion = Motion::Right;
        let mut left = scene;
        left.motion = Motion::Left;
        let ids_r = model.encode_prompt_words(&caption(&right)).unwrap();
        let ids_l = model.encode_prompt_words(&caption(&left)).unwrap();
        let out_r = sample(&model, &image, &ids_r, 8, cfg_scale, 100 + i).unwrap();
        let out_l = sample(&model, &image, &ids_l, 8, cfg_scale, 100 + i).unwrap();
        let dx = |v: &Video| {
            let a = intensity_centroid(&v.frame(0)).unwrap_or((0.0, 0.0));
            let b = intensity_centroid(&v.frame(v.frames() - 1)).unwrap_or((0.0, 0.0));
            b.0 - a.0
        };
        let diff: f64 = out_r
            .video
            .data
            .iter()
            .zip(out_l.video.data.iter())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / out_r.video.data.len() as f64;
        println!(
            "scene {i}: dx_right {:+.2}  dx_left {:+.2}  mean|v_r - v_l| {:.4}",
            dx(&out_r.video),
            dx(&out_l.video),
            diff
        );
    }
}
