//! Attack baselines: random noise within the same budget, an encoder-level
//! squared-distance attack with a zero-padded target, and a reduced
//! single-frame diffusion-level attack that backpropagates through sampling.

use ndarray::ArrayD;

use super::{
    clamp_to_unit_box, init_delta, pgd_step, AttackConfig, IterRecord, OptLog, Perturbation,
};
use crate::error::{Error, Result};
use crate::i2v::{sampler, I2vModel, PseudoVideo};
use crate::rng::DetRng;
use crate::tape::Graph;

/// Uniform perturbation bounded by the same L-infinity budget.
pub fn baseline_random_noise(image: &ArrayD<f64>, epsilon: f64, seed: u64) -> Perturbation {
    let mut rng = DetRng::new(seed, "random-baseline");
    let mut v = vec![0.0f64; image.len()];
    rng.fill_uniform(&mut v, -epsilon, epsilon);
    let mut delta = ArrayD::from_shape_vec(ndarray::IxDyn(image.shape()), v).unwrap();
    clamp_to_unit_box(&mut delta, image);
    Perturbation {
        delta,
        budget: epsilon,
    }
}

/// Encoder-level attack: PGD on the squared latent distance
/// `||E([I + delta, 0, ..]) - z_tgt||_2^2` with the target image padded by
/// zero frames (so later target slices carry almost no energy).
pub fn baseline_photoguard_e(
    model: &I2vModel,
    image: &ArrayD<f64>,
    target_image: &ArrayD<f64>,
    cfg: &AttackConfig,
) -> Result<(Perturbation, OptLog)> {
    cfg.validate(model.cfg.depth)?;
    let z_target = model
        .encode_pseudo_video(&PseudoVideo::conditioning(target_image, model.cfg.frames))?
        .to_model_layout();
    let mut delta = init_delta(image, cfg);
    let mut log = OptLog::default();

    for iter in 0..cfg.iters {
        let mut g = Graph::new();
        let bound = model.bind(&mut g, false);
        let dnode = g.input(delta.clone());
        let inode = g.constant(image.clone());
        let adv = g.add(inode, dnode);
        let pv = model.pseudo_video_graph(&mut g, adv, model.cfg.frames, false);
        let z_adv = model.encode_graph(&mut g, &bound, pv);
        let z_tgt = g.constant(z_target.clone());
        let loss = super::loss_st_graph(&mut g, z_adv, z_tgt, true);
        let lv = g.scalar(loss);
        if !lv.is_finite() {
            return Err(Error::NonFinite(format!(
                "encoder baseline loss at iteration {iter}"
            )));
        }
        let grads = g.backward(loss);
        let grad = grads.get_or_zeros(dnode, delta.shape());
        let grad_norm = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
        delta = pgd_step(&delta, &grad, image, cfg)?;
        log.records.push(IterRecord {
            iter,
            l_st: lv,
            l_sem: None,
            l_total: lv,
            grad_norm,
            max_delta: delta.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        });
    }

    Ok((
        Perturbation {
            delta,
            budget: cfg.epsilon,
        },
        log,
    ))
}

/// Diffusion-level attack, reduced formulation: a single frame and a short
/// sampler, with gradients propagated through the whole generation chain
/// `decode(sample(encode(I + delta)))` toward the target image.
pub fn baseline_photoguard_d(
    model: &I2vModel,
    image: &ArrayD<f64>,
    target_image: &ArrayD<f64>,
    prompt: &[usize],
    cfg: &AttackConfig,
) -> Result<(Perturbation, OptLog)> {
    cfg.validate(model.cfg.depth)?;
    let ids = model.pad_text_ids(prompt)?;
    let steps = cfg.pg_d_steps.max(1);
    let side = model.cfg.latent_side();
    let noise_shape = [model.cfg.latent_channels, 1, side, side];
    let init_noise = crate::i2v::gaussian(&mut DetRng::new(cfg.seed, "pg-d-noise"), &noise_shape);
    let target_frame = {
        let (c, h, w) = (
            target_image.shape()[0],
            target_image.shape()[1],
            target_image.shape()[2],
        );
        target_image
            .clone()
            .into_shape_with_order(ndarray::IxDyn(&[c, 1, h, w]))
            .unwrap()
    };

    let mut delta = init_delta(image, cfg);
    let mut log = OptLog::default();

    for iter in 0..cfg.iters {
        let mut g = Graph::new();
        let bound = model.bind(&mut g, false);
        let dnode = g.input(delta.clone());
        let inode = g.constant(image.clone());
        let adv = g.add(inode, dnode);
        let generated = sampler::generate_graph(
            model,
            &mut g,
            &bound,
            adv,
            &ids,
            1,
            steps,
            model.cfg.cfg_scale,
            &init_noise,
        );
        let tgt = g.constant(target_frame.clone());
        let diff = g.sub(generated, tgt);
        let sq = g.square(diff);
        let loss = g.sum(sq);
        let lv = g.scalar(loss);
        if !lv.is_finite() {
            return Err(Error::NonFinite(format!(
                "diffusion baseline loss at iteration {iter}"
            )));
        }
        let grads = g.backward(loss);
        let grad = grads.get_or_zeros(dnode, delta.shape());
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "diffusion baseline gradient at iteration {iter}"
            )));
        }
        let grad_norm = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
        delta = pgd_step(&delta, &grad, image, cfg)?;
        log.records.push(IterRecord {
            iter,
            l_st: lv,
            l_sem: None,
            l_total: lv,
            grad_norm,
            max_delta: delta.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        });
    }

    Ok((
        Perturbation {
            delta,
            budget: cfg.epsilon,
        },
        log,
    ))
}
