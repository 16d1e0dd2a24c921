//! Toy-model training: reconstruction for the autoencoder, then
//! flow-matching regression for the backbone on (scene video, caption)
//! pairs with condition dropout for classifier-free guidance.

use std::collections::BTreeMap;

use ndarray::ArrayD;

use super::{sample, I2vModel, ModelConfig, PseudoVideo};
use crate::error::{Error, Result};
use crate::rng::DetRng;
use crate::tape::optim::Adam;
use crate::tape::Graph;
use crate::toyworld::{caption, intensity_centroid, render_scene, Motion, Scene, Video};

#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub vae_steps: usize,
    pub backbone_steps: usize,
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub vae_lr: f64,
    pub backbone_lr: f64,
    pub batch: usize,
    /// Probability of replacing the text condition with the null embedding.
    pub text_dropout: f64,
    /// Probability of zeroing the structural conditioning latent, which
    /// forces the semantic stream to carry content on its own.
    pub cond_dropout: f64,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            vae_steps: 900,
            backbone_steps: 2600,
            train_scenes: 48,
            val_scenes: 10,
            vae_lr: 2e-3,
            backbone_lr: 1.5e-3,
            batch: 2,
            text_dropout: 0.1,
            cond_dropout: 0.15,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub vae_loss_curve: Vec<(usize, f64)>,
    pub backbone_loss_curve: Vec<(usize, f64)>,
    /// Reconstruction MSE on held-out scenes.
    pub val_recon_mse: f64,
    /// Fraction of validation scenes where a "moving right" caption and a
    /// "moving left" caption (same image, same noise) displace the generated
    /// centroid in opposite, correctly-signed directions.
    pub steering_score: f64,
}

fn sample_training_scene(rng: &mut DetRng) -> Scene {
    Scene::sample(rng, (0.75, 2.0))
}

fn render_pool(cfg: &ModelConfig, scenes: &[Scene]) -> Result<Vec<Video>> {
    scenes
        .iter()
        .map(|s| render_scene(s, cfg.frames, cfg.canvas, cfg.canvas))
        .collect()
}

/// Train a fresh model. Deterministic in `(cfg, settings)`.
pub fn train_toy_model(cfg: ModelConfig, settings: &TrainSettings) -> Result<(I2vModel, TrainOutcome)> {
    let mut model = I2vModel::init(cfg.clone(), settings.seed)?;

    let mut scene_rng = DetRng::new(settings.seed, "train-scenes");
    let train_scenes: Vec<Scene> = (0..settings.train_scenes)
        .map(|_| sample_training_scene(&mut scene_rng))
        .collect();
    let mut val_rng = DetRng::new(settings.seed, "val-scenes");
    let val_scenes: Vec<Scene> = (0..settings.val_scenes)
        .map(|_| sample_training_scene(&mut val_rng))
        .collect();

    let train_videos = render_pool(&cfg, &train_scenes)?;
    let val_videos = render_pool(&cfg, &val_scenes)?;

    // ---- stage 1: autoencoder by reconstruction ----
    let mut vae_curve = Vec::new();
    {
        let mut opt = Adam::new(settings.vae_lr);
        let mut pick = DetRng::new(settings.seed, "vae-batch");
        for step in 0..settings.vae_steps {
            let mut g = Graph::new();
            let bound = model.bind(&mut g, true);
            let mut losses = Vec::new();
            for _ in 0..settings.batch {
                let idx = pick.index(train_videos.len());
                let v = g.constant(train_videos[idx].to_model_layout());
                let z = model.encode_graph(&mut g, &bound, v);
                let rec = model.decode_graph(&mut g, &bound, z);
                losses.push(g.mse(rec, v));
            }
            let mut loss = losses[0];
            for l in &losses[1..] {
                loss = g.add(loss, *l);
            }
            let loss = g.mul_scalar(loss, 1.0 / settings.batch as f64);
            let lv = g.scalar(loss);
            if !lv.is_finite() {
                return Err(Error::NonFinite(format!(
                    "autoencoder loss diverged at step {step}"
                )));
            }
            vae_curve.push((step, lv));
            let grads = g.backward(loss);
            let mut named = BTreeMap::new();
            for name in bound.names() {
                if let Some(gr) = grads.get(bound.id(name)) {
                    named.insert(name.clone(), gr.clone());
                }
            }
            opt.step(&mut model.params, &named);
        }
    }

    // ---- latent normalization from the trained encoder ----
    {
        let mut sq_sum = 0.0;
        let mut count = 0usize;
        for v in &train_videos {
            let z = model.encode_video(v)?;
            sq_sum += z.data.iter().map(|x| x * x).sum::<f64>();
            count += z.data.len();
        }
        let std = (sq_sum / count.max(1) as f64).sqrt().max(1e-6);
        model
            .params
            .insert("latent.scale".into(), ArrayD::from_elem(ndarray::IxDyn(&[1]), std));
    }

    // ---- stage 2: backbone by flow matching ----
    // precompute flow-space targets and conditioning per scene
    let mut x0_flow = Vec::with_capacity(train_videos.len());
    let mut cond_flow = Vec::with_capacity(train_videos.len());
    let mut prompts = Vec::with_capacity(train_videos.len());
    for (scene, video) in train_scenes.iter().zip(&train_videos) {
        let z = model.encode_video(video)?;
        x0_flow.push(model.to_flow(&z.to_model_layout()));
        let pv = PseudoVideo::conditioning(&video.frame(0), cfg.frames);
        let zc = model.encode_pseudo_video(&pv)?;
        cond_flow.push(model.to_flow(&zc.to_model_layout()));
        prompts.push(model.encode_prompt_words(&caption(scene))?);
    }

    let trainable = |name: &str| {
        name.starts_with("bb.") || name.starts_with("txt.") || name.starts_with("img.")
    };
    let mut bb_curve = Vec::new();
    {
        let mut opt = Adam::new(settings.backbone_lr);
        let mut pick = DetRng::new(settings.seed, "bb-batch");
        let mut noise_rng = DetRng::new(settings.seed, "bb-noise");
        let mut drop_rng = DetRng::new(settings.seed, "cfg-dropout");
        let shape = x0_flow[0].shape().to_vec();
        for step in 0..settings.backbone_steps {
            let mut g = Graph::new();
            let bound = model.bind(&mut g, true);
            let mut losses = Vec::new();
            for _ in 0..settings.batch {
                let idx = pick.index(x0_flow.len());
                // bias draws toward the noise end, where layout (and the
                // text's motion influence) is decided
                let tau = noise_rng.uniform(0.0, 1.0).powf(0.6).clamp(0.02, 1.0);
                let noise = super::gaussian(&mut noise_rng, &shape);
                let x_tau = &x0_flow[idx] * (1.0 - tau) + &noise * tau;
                let v_target = &noise - &x0_flow[idx];

                let x = g.constant(x_tau);
                let vt = g.constant(v_target);
                let drop_text = drop_rng.bernoulli(settings.text_dropout);
                let drop_cond = drop_rng.bernoulli(settings.cond_dropout);
                let cond = if drop_cond {
                    g.constant(ArrayD::zeros(ndarray::IxDyn(&shape)))
                } else {
                    g.constant(cond_flow[idx].clone())
                };
                let img_tokens = {
                    let frame = g.constant(train_videos[idx].frame(0));
                    model.image_tokens_graph(&mut g, &bound, frame)
                };
                let e_txt = if drop_text {
                    model.null_text_graph(&mut g, &bound)
                } else {
                    model.text_tokens_graph(&mut g, &bound, &prompts[idx])
                };
                let v_pred = model.velocity_graph(&mut g, &bound, x, cond, img_tokens, e_txt, tau);
                losses.push(g.mse(v_pred, vt));
            }
            let mut loss = losses[0];
            for l in &losses[1..] {
                loss = g.add(loss, *l);
            }
            let loss = g.mul_scalar(loss, 1.0 / settings.batch as f64);
            let lv = g.scalar(loss);
            if !lv.is_finite() {
                return Err(Error::NonFinite(format!(
                    "flow-matching loss diverged at step {step}"
                )));
            }
            bb_curve.push((step, lv));
            let grads = g.backward(loss);
            let mut named = BTreeMap::new();
            for name in bound.names() {
                if trainable(name) {
                    if let Some(gr) = grads.get(bound.id(name)) {
                        named.insert(name.clone(), gr.clone());
                    }
                }
            }
            opt.step(&mut model.params, &named);
        }
    }

    // ---- validation ----
    let mut recon = 0.0;
    for v in &val_videos {
        let z = model.encode_video(v)?;
        let r = model.decode_latents(&z)?;
        let diff = &r.data - &v.data;
        recon += diff.iter().map(|x| x * x).sum::<f64>() / diff.len() as f64;
    }
    let val_recon_mse = recon / val_videos.len().max(1) as f64;
    let steering_score = steering_score(&model, &val_scenes, &val_videos)?;

    Ok((
        model,
        TrainOutcome {
            vae_loss_curve: vae_curve,
            backbone_loss_curve: bb_curve,
            val_recon_mse,
            steering_score,
        },
    ))
}

/// Measure how reliably captions steer motion: for each scene, generate from
/// its first frame with the motion token forced to `right` and to `left`
/// (same noise), and require the centroid displacements to be positive and
/// negative respectively.
pub fn steering_score(model: &I2vModel, scenes: &[Scene], videos: &[Video]) -> Result<f64> {
    if scenes.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for (i, (scene, video)) in scenes.iter().zip(videos).enumerate() {
        let image = video.frame(0);
        let mut right = *scene;
        right.motion = Motion::Right;
        let mut left = *scene;
        left.motion = Motion::Left;
        let ids_r = model.encode_prompt_words(&caption(&right))?;
        let ids_l = model.encode_prompt_words(&caption(&left))?;
        let seed = 9000 + i as u64;
        let out_r = sample(
            model,
            &image,
            &ids_r,
            model.cfg.sampler_steps,
            model.cfg.cfg_scale,
            seed,
        )?;
        let out_l = sample(
            model,
            &image,
            &ids_l,
            model.cfg.sampler_steps,
            model.cfg.cfg_scale,
            seed,
        )?;
        let dx = |v: &Video| -> f64 {
            let first = intensity_centroid(&v.frame(0));
            let last = intensity_centroid(&v.frame(v.frames() - 1));
            match (first, last) {
                (Some(a), Some(b)) => b.0 - a.0,
                _ => 0.0,
            }
        };
        let dr = dx(&out_r.video);
        let dl = dx(&out_l.video);
        if dr > 0.0 && dl < 0.0 {
            hits += 1;
        }
    }
    Ok(hits as f64 / scenes.len() as f64)
}
