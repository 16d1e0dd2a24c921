//! Deterministic Euler sampler over the rectified-flow parameterization.
//!
//! States run from pure noise at `tau = 1` to clean at `tau = 0` on a
//! uniform grid of `S` steps (`S + 1` cached states). Classifier-free
//! guidance blends the conditional velocity with a learned null-text branch:
//! `v = v_uncond + g * (v_cond - v_uncond)`.

use ndarray::ArrayD;

use super::{Bound, CollapseTrajectory, I2vModel, LatentTensor, PseudoVideo};
use crate::error::Result;
use crate::rng::DetRng;
use crate::tape::{Graph, NodeId};
use crate::toyworld::Video;

/// Decoded frames plus the cached denoising trajectory.
pub struct SampleOutput {
    pub video: Video,
    pub trajectory: CollapseTrajectory,
}

/// Generate a video from an image and a prompt.
///
/// Deterministic in `(image, prompt, steps, cfg_scale, seed)`; the returned
/// trajectory reproduces bit-identically for equal inputs.
pub fn sample(
    model: &I2vModel,
    image: &ArrayD<f64>,
    prompt_ids: &[usize],
    steps: usize,
    cfg_scale: f64,
    seed: u64,
) -> Result<SampleOutput> {
    let t_frames = model.cfg.frames;
    let padded = model.pad_text_ids(prompt_ids)?;

    // conditioning: structural latent from the zero-padded pseudo-video,
    // semantic tokens from the image and text encoders
    let pv = PseudoVideo::conditioning(image, t_frames);
    let z_cond = model.encode_pseudo_video(&pv)?;
    let cond_flow = model.to_flow(&z_cond.to_model_layout());
    let e_img = model.encode_image_semantic(image)?;
    let e_txt = model.encode_text(&padded)?;

    let t_lat = model.cfg.t_latent(t_frames);
    let side = model.cfg.latent_side();
    let shape = [model.cfg.latent_channels, t_lat, side, side];

    let mut rng = DetRng::new(seed, "init-noise");
    let mut x = super::gaussian(&mut rng, &shape);

    let mut states = Vec::with_capacity(steps + 1);
    let mut step_times = Vec::with_capacity(steps + 1);
    states.push(x.clone());
    step_times.push(1.0);

    for i in 0..steps {
        let tau = 1.0 - i as f64 / steps as f64;
        let tau_next = 1.0 - (i + 1) as f64 / steps as f64;
        let v = velocity_cfg(model, &x, &cond_flow, &e_img, &e_txt, tau, cfg_scale)?;
        x = &x + &(v * (tau_next - tau));
        states.push(x.clone());
        step_times.push(tau_next);
    }

    let z_final = LatentTensor::from_model_layout(
        &model.from_flow(&x),
        model.cfg.temporal_stride,
    );
    let video = model.decode_latents(&z_final)?;
    let prompt_id = padded
        .iter()
        .map(|id| id.to_string())
        .collect::<Vec<_>>()
        .join("-");
    Ok(SampleOutput {
        video,
        trajectory: CollapseTrajectory {
            states,
            step_times,
            cond_latent: cond_flow,
            seed,
            prompt_id,
        },
    })
}

/// CFG-combined velocity at one state (host-level, no gradients kept).
pub fn velocity_cfg(
    model: &I2vModel,
    x: &ArrayD<f64>,
    cond_flow: &ArrayD<f64>,
    e_img: &ArrayD<f64>,
    e_txt: &ArrayD<f64>,
    tau: f64,
    cfg_scale: f64,
) -> Result<ArrayD<f64>> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, false);
    let xn = g.constant(x.clone());
    let cn = g.constant(cond_flow.clone());
    let ein = g.constant(e_img.clone());
    let etn = g.constant(e_txt.clone());
    let v = velocity_cfg_graph(model, &mut g, &bound, xn, cn, ein, etn, tau, cfg_scale);
    Ok(g.value(v).clone())
}

/// CFG-combined velocity as a graph node (used where gradients must flow
/// through sampling).
#[allow(clippy::too_many_arguments)]
pub fn velocity_cfg_graph(
    model: &I2vModel,
    g: &mut Graph,
    bound: &Bound,
    x: NodeId,
    cond_flow: NodeId,
    e_img: NodeId,
    e_txt: NodeId,
    tau: f64,
    cfg_scale: f64,
) -> NodeId {
    let v_cond = model.velocity_graph(g, bound, x, cond_flow, e_img, e_txt, tau);
    if cfg_scale == 1.0 {
        return v_cond;
    }
    let null_txt = model.null_text_graph(g, bound);
    let v_uncond = model.velocity_graph(g, bound, x, cond_flow, e_img, null_txt, tau);
    // v_u + g (v_c - v_u)
    let diff = g.sub(v_cond, v_uncond);
    let scaled = g.mul_scalar(diff, cfg_scale);
    g.add(v_uncond, scaled)
}

/// Full generation as one differentiable graph: encode conditioning from an
/// image node, run `steps` Euler steps from the given initial noise, decode.
/// Returns the decoded video node `[C, T, H, W]`.
#[allow(clippy::too_many_arguments)]
pub fn generate_graph(
    model: &I2vModel,
    g: &mut Graph,
    bound: &Bound,
    image: NodeId,
    prompt_ids: &[usize],
    t_frames: usize,
    steps: usize,
    cfg_scale: f64,
    init_noise: &ArrayD<f64>,
) -> NodeId {
    let scale = model.latent_scale();
    let pv = model.pseudo_video_graph(g, image, t_frames, false);
    let z_cond = model.encode_graph(g, bound, pv);
    let cond_flow = g.mul_scalar(z_cond, 1.0 / scale);
    let e_img = model.image_tokens_graph(g, bound, image);
    let e_txt = model.text_tokens_graph(g, bound, prompt_ids);

    let mut x = g.constant(init_noise.clone());
    for i in 0..steps {
        let tau = 1.0 - i as f64 / steps as f64;
        let tau_next = 1.0 - (i + 1) as f64 / steps as f64;
        let v = velocity_cfg_graph(model, g, bound, x, cond_flow, e_img, e_txt, tau, cfg_scale);
        let dv = g.mul_scalar(v, tau_next - tau);
        x = g.add(x, dv);
    }
    let z = g.mul_scalar(x, scale);
    model.decode_graph(g, bound, z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::i2v::ModelConfig;
    use crate::toyworld::{render_scene, Color, Motion, Scene, ShapeKind};

    fn model() -> I2vModel {
        I2vModel::init(ModelConfig::default(), 31).unwrap()
    }

    fn image() -> ArrayD<f64> {
        let s = Scene {
            shape: ShapeKind::Circle,
            color: Color::Green,
            motion: Motion::Right,
            speed: 1.0,
            seed: 44,
        };
        render_scene(&s, 1, 32, 32).unwrap().frame(0)
    }

    #[test]
    fn trajectory_has_steps_plus_one_states() {
        let m = model();
        let out = sample(&m, &image(), &[2, 8], 8, 3.0, 123).unwrap();
        assert_eq!(out.trajectory.len(), 9);
        assert_eq!(out.trajectory.step_times.len(), 9);
        assert_eq!(out.trajectory.step_times[0], 1.0);
        assert_eq!(*out.trajectory.step_times.last().unwrap(), 0.0);
        for w in out.trajectory.step_times.windows(2) {
            assert!(w[1] < w[0], "step times must decrease");
        }
        assert_eq!(out.video.frames(), 9);
    }

    #[test]
    fn sampling_is_bit_deterministic() {
        let m = model();
        let a = sample(&m, &image(), &[2, 8], 4, 3.0, 7).unwrap();
        let b = sample(&m, &image(), &[2, 8], 4, 3.0, 7).unwrap();
        for (sa, sb) in a.trajectory.states.iter().zip(b.trajectory.states.iter()) {
            for (x, y) in sa.iter().zip(sb.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        for (x, y) in a.video.data.iter().zip(b.video.data.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn supported_cfg_scales_run() {
        let m = model();
        for g in [1.0, 3.0, 5.0] {
            let out = sample(&m, &image(), &[2], 2, g, 1).unwrap();
            assert!(out.video.data.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn different_seeds_differ() {
        let m = model();
        let a = sample(&m, &image(), &[2], 2, 3.0, 1).unwrap();
        let b = sample(&m, &image(), &[2], 2, 3.0, 2).unwrap();
        assert_ne!(a.trajectory.states[0], b.trajectory.states[0]);
    }

    #[test]
    fn trajectory_round_trips_through_container() {
        let m = model();
        let out = sample(&m, &image(), &[2, 8], 3, 3.0, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.fsac");
        out.trajectory.save(&path).unwrap();
        let back = CollapseTrajectory::load(&path).unwrap();
        assert_eq!(back.len(), out.trajectory.len());
        assert_eq!(back.seed, 9);
        assert_eq!(back.step_times, out.trajectory.step_times);
        for (a, b) in back.states.iter().zip(out.trajectory.states.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn predict_clean_at_tau_zero_is_identity() {
        let m = model();
        let x = crate::i2v::gaussian(&mut crate::rng::DetRng::new(3, "pc"), &[4, 3, 8, 8]);
        let c = crate::i2v::gaussian(&mut crate::rng::DetRng::new(4, "pc"), &[4, 3, 8, 8]);
        let ei = m.encode_image_semantic(&image()).unwrap();
        let et = m.encode_text(&[2]).unwrap();
        let out = m.predict_clean_latent(&x, &c, &ei, &et, 0.0).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn predict_clean_matches_final_euler_step() {
        // at the final step (tau = 1/S -> 0) the Euler update and the
        // one-shot clean estimate are the same expression
        let m = model();
        let steps = 4;
        let out = sample(&m, &image(), &[2, 8], steps, 1.0, 5).unwrap();
        let x_last = &out.trajectory.states[steps - 1];
        let tau = out.trajectory.step_times[steps - 1];
        let ei = m.encode_image_semantic(&image()).unwrap();
        let et = m.encode_text(&m.pad_text_ids(&[2, 8]).unwrap()).unwrap();
        let pred = m
            .predict_clean_latent(x_last, &out.trajectory.cond_latent, &ei, &et, tau)
            .unwrap();
        let final_state = &out.trajectory.states[steps];
        for (a, b) in pred.iter().zip(final_state.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
