//! Joint spatial-temporal + semantic immunization and its baselines.
//!
//! The attack optimizes an imperceptible perturbation `delta` on the input
//! image with projected gradient descent so that downstream generation
//! degrades:
//!
//! - the **spatial-temporal loss** pulls every latent slice of the
//!   zero-padded adversarial encoding toward a fully-populated (dense)
//!   target encoding, which supplies gradient signal to all slices instead
//!   of letting it vanish after the first;
//! - the **semantic loss** matches early-backbone features of the
//!   adversarial conditioning against features cached from a collapse run
//!   (clean image + mismatched prompt), so the image embedding learns to
//!   cancel the corrective pull of an aligned prompt.
//!
//! Both attack losses use unsquared per-slice L2 norms; the PhotoGuard-style
//! baselines use squared norms as their own formulations state. The two are
//! never mixed.

mod baselines;

pub use baselines::{baseline_photoguard_d, baseline_photoguard_e, baseline_random_noise};

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::container::ArrayContainer;
use crate::error::{Error, Result};
use crate::i2v::{sample, CollapseTrajectory, I2vModel, LatentTensor, PseudoVideo};
use crate::rng::DetRng;
use crate::tape::{Graph, NodeId};

/// PGD attack hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// L-infinity budget in pixel units.
    pub epsilon: f64,
    /// PGD step size.
    pub alpha: f64,
    /// PGD iterations.
    pub iters: usize,
    pub lambda_st: f64,
    pub lambda_sem: f64,
    /// Backbone prefix depth for the semantic features.
    pub k: usize,
    /// Fraction of the earliest sampler steps eligible for the semantic
    /// time draw.
    pub attack_window: f64,
    /// Denoising steps of the reduced single-frame pipeline (diffusion-level
    /// baseline only).
    pub pg_d_steps: usize,
    pub seed: u64,
    /// Keep `image + delta` inside `[0, 1]` after every step.
    pub clamp_to_unit: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epsilon: 32.0 / 255.0,
            alpha: 0.005,
            iters: 200,
            lambda_st: 1.0,
            lambda_sem: 0.125,
            k: 3,
            attack_window: 0.4,
            pg_d_steps: 4,
            seed: 0,
            clamp_to_unit: true,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self, model_depth: usize) -> Result<()> {
        if self.epsilon <= 0.0 {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.alpha <= 0.0 {
            return Err(Error::Config("alpha must be positive".into()));
        }
        if !(self.attack_window > 0.0 && self.attack_window <= 1.0) {
            return Err(Error::Config("attack_window must be in (0, 1]".into()));
        }
        if self.k < 1 || self.k > model_depth {
            return Err(Error::Config(format!(
                "k = {} out of range 1..={model_depth}",
                self.k
            )));
        }
        Ok(())
    }

    /// Number of earliest trajectory states eligible for the semantic draw.
    pub fn eligible_states(&self, sampler_steps: usize) -> usize {
        ((self.attack_window * sampler_steps as f64).floor() as usize).max(1)
    }
}

/// A budget-bounded pixel perturbation.
#[derive(Debug, Clone)]
pub struct Perturbation {
    /// `[C, H, W]`.
    pub delta: ArrayD<f64>,
    pub budget: f64,
}

impl Perturbation {
    pub fn apply(&self, image: &ArrayD<f64>) -> ArrayD<f64> {
        image + &self.delta
    }

    pub fn max_abs(&self) -> f64 {
        self.delta.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>, config_snapshot: &str) -> Result<()> {
        let mut c = ArrayContainer::new();
        c.insert("delta", self.delta.clone());
        c.set_meta("budget", format!("{:.17e}", self.budget));
        c.set_meta("attack_config", config_snapshot.to_string());
        c.set_meta("kind", "perturbation");
        c.save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let c = ArrayContainer::load(path)?;
        Ok(Self {
            delta: c.get("delta")?.clone(),
            budget: c
                .meta("budget")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Container("perturbation missing budget".into()))?,
        })
    }
}

/// One PGD iteration record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub l_st: f64,
    pub l_sem: Option<f64>,
    pub l_total: f64,
    pub grad_norm: f64,
    pub max_delta: f64,
}

/// Line-delimited optimization log.
#[derive(Debug, Clone, Default)]
pub struct OptLog {
    pub records: Vec<IterRecord>,
}

impl OptLog {
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("serialize iter record"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            records.push(
                serde_json::from_str(line)
                    .map_err(|e| Error::Artifact(format!("bad log line: {e}")))?,
            );
        }
        Ok(Self { records })
    }
}

/// Sum over slices of the Euclidean norm `||z_t^a - z_t^b||_2` (unsquared).
pub fn loss_spatial_temporal(z_a: &LatentTensor, z_b: &LatentTensor) -> Result<f64> {
    if z_a.data.shape() != z_b.data.shape() {
        return Err(Error::Shape(format!(
            "latent shapes differ: {:?} vs {:?}",
            z_a.data.shape(),
            z_b.data.shape()
        )));
    }
    let mut total = 0.0;
    for t in 0..z_a.t_slices() {
        let d = z_a.slice(t) - z_b.slice(t);
        total += d.iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    Ok(total)
}

/// Graph form of the slice-wise alignment loss over model-layout latents
/// `[C', T', H', W']`. `squared` selects the PhotoGuard-style squared norm.
pub fn loss_st_graph(g: &mut Graph, z_adv: NodeId, z_tgt: NodeId, squared: bool) -> NodeId {
    let t_lat = g.value(z_adv).shape()[1];
    let diff = g.sub(z_adv, z_tgt);
    if squared {
        let sq = g.square(diff);
        return g.sum(sq);
    }
    let mut total = None;
    for t in 0..t_lat {
        let sl = g.slice_axis(diff, 1, t, 1);
        let n = g.l2_norm(sl);
        total = Some(match total {
            None => n,
            Some(acc) => g.add(acc, n),
        });
    }
    total.expect("latent has at least one slice")
}

/// Encode the dense (fully-populated) target for an image.
pub fn build_dense_target(model: &I2vModel, target_image: &ArrayD<f64>) -> Result<LatentTensor> {
    let pv = PseudoVideo::dense(target_image, model.cfg.frames);
    model.encode_pseudo_video(&pv)
}

/// Per-slice feature alignment against a fixed collapse-branch activation:
/// `sum_t ||h_bad(t) - h_adv(t)||_2`. `h_bad` carries no gradient.
pub fn loss_sem_graph(g: &mut Graph, h_adv: NodeId, h_bad: NodeId) -> NodeId {
    let h_bad = g.detach(h_bad);
    let t_lat = g.value(h_adv).shape()[0];
    let diff = g.sub(h_bad, h_adv);
    let mut total = None;
    for t in 0..t_lat {
        let sl = g.slice_axis(diff, 0, t, 1);
        let n = g.l2_norm(sl);
        total = Some(match total {
            None => n,
            Some(acc) => g.add(acc, n),
        });
    }
    total.expect("features have at least one slice")
}

/// Host-level semantic loss for one cached trajectory state.
///
/// `state_idx` must fall inside the attack window (earliest states).
#[allow(clippy::too_many_arguments)]
pub fn loss_semantic(
    model: &I2vModel,
    trajectory: &CollapseTrajectory,
    state_idx: usize,
    e_img_adv: &ArrayD<f64>,
    e_img_src: &ArrayD<f64>,
    e_txt_good: &ArrayD<f64>,
    e_txt_bad: &ArrayD<f64>,
    cfg: &AttackConfig,
) -> Result<f64> {
    cfg.validate(model.cfg.depth)?;
    let steps = trajectory.len() - 1;
    let eligible = cfg.eligible_states(steps);
    if state_idx >= eligible {
        return Err(Error::Config(format!(
            "state {state_idx} (tau = {}) outside the attack window (first {eligible} states)",
            trajectory.step_times[state_idx]
        )));
    }
    let x = &trajectory.states[state_idx];
    let tau = trajectory.step_times[state_idx];
    let h_adv =
        model.backbone_prefix(x, &trajectory.cond_latent, e_img_adv, e_txt_good, tau, cfg.k)?;
    let h_bad =
        model.backbone_prefix(x, &trajectory.cond_latent, e_img_src, e_txt_bad, tau, cfg.k)?;
    let mut total = 0.0;
    for t in 0..h_adv.h.shape()[0] {
        let a = h_adv.h.index_axis(ndarray::Axis(0), t);
        let b = h_bad.h.index_axis(ndarray::Axis(0), t);
        total += a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| (y - x) * (y - x))
            .sum::<f64>()
            .sqrt();
    }
    Ok(total)
}

/// Weighted objective. Errors on non-finite values.
pub fn total_loss(cfg: &AttackConfig, l_st: f64, l_sem: f64) -> Result<f64> {
    let total = cfg.lambda_st * l_st + cfg.lambda_sem * l_sem;
    if !total.is_finite() {
        return Err(Error::NonFinite(format!(
            "total loss (l_st = {l_st}, l_sem = {l_sem})"
        )));
    }
    Ok(total)
}

/// One PGD update: descend, clip into the L-infinity ball, then (optionally)
/// into the unit pixel box around `image`.
pub fn pgd_step(
    delta: &ArrayD<f64>,
    grad: &ArrayD<f64>,
    image: &ArrayD<f64>,
    cfg: &AttackConfig,
) -> Result<ArrayD<f64>> {
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient in pgd_step".into()));
    }
    let mut next = delta - &(grad * cfg.alpha);
    next.mapv_inplace(|v| v.clamp(-cfg.epsilon, cfg.epsilon));
    if cfg.clamp_to_unit {
        clamp_to_unit_box(&mut next, image);
    }
    Ok(next)
}

/// Project `delta` so `image + delta` stays in `[0, 1]`.
pub fn clamp_to_unit_box(delta: &mut ArrayD<f64>, image: &ArrayD<f64>) {
    ndarray::Zip::from(delta).and(image).for_each(|d, &i| {
        *d = d.clamp(-i, 1.0 - i);
    });
}

/// Uniform random init inside the budget, projected into the pixel box.
pub fn init_delta(image: &ArrayD<f64>, cfg: &AttackConfig) -> ArrayD<f64> {
    let mut rng = DetRng::new(cfg.seed, "delta-init");
    let mut v = vec![0.0f64; image.len()];
    rng.fill_uniform(&mut v, -cfg.epsilon, cfg.epsilon);
    let mut delta = ArrayD::from_shape_vec(IxDyn(image.shape()), v).unwrap();
    if cfg.clamp_to_unit {
        clamp_to_unit_box(&mut delta, image);
    }
    delta
}

/// Everything the joint attack precomputes once, before the PGD loop.
pub struct AttackContext {
    pub z_target: ArrayD<f64>,
    pub trajectory: CollapseTrajectory,
    /// Collapse-branch features per eligible state, `[T', tokens, D]` each.
    pub h_bad: Vec<ArrayD<f64>>,
    pub e_txt_good: ArrayD<f64>,
}

impl AttackContext {
    pub fn prepare(
        model: &I2vModel,
        image: &ArrayD<f64>,
        target_image: &ArrayD<f64>,
        good_prompt: &[usize],
        bad_prompt: &[usize],
        cfg: &AttackConfig,
    ) -> Result<Self> {
        let good_ids = model.pad_text_ids(good_prompt)?;
        let bad_ids = model.pad_text_ids(bad_prompt)?;
        // dense temporal target
        let z_target = build_dense_target(model, target_image)?.to_model_layout();
        // collapse trajectory: clean image driven by the mismatched prompt
        let out = sample(
            model,
            image,
            &bad_ids,
            model.cfg.sampler_steps,
            model.cfg.cfg_scale,
            cfg.seed,
        )?;
        let trajectory = out.trajectory;
        let e_img_src = model.encode_image_semantic(image)?;
        let e_txt_good = model.encode_text(&good_ids)?;
        let e_txt_bad = model.encode_text(&bad_ids)?;
        // fixed collapse-branch activations for every eligible state
        let eligible = cfg.eligible_states(model.cfg.sampler_steps);
        let mut h_bad = Vec::with_capacity(eligible);
        for idx in 0..eligible {
            let f = model.backbone_prefix(
                &trajectory.states[idx],
                &trajectory.cond_latent,
                &e_img_src,
                &e_txt_bad,
                trajectory.step_times[idx],
                cfg.k,
            )?;
            h_bad.push(f.h);
        }
        Ok(Self {
            z_target,
            trajectory,
            h_bad,
            e_txt_good,
        })
    }
}

/// The joint dual-stream immunization loop.
///
/// Uniform init in the budget, dense-target encoding, one collapse
/// trajectory cached up front (never refreshed), then `iters` PGD steps on
/// `lambda_st * L_ST + lambda_sem * L_Sem` with projection after every
/// update. Returns the perturbation and the per-iteration log.
pub fn immunize(
    model: &I2vModel,
    image: &ArrayD<f64>,
    target_image: &ArrayD<f64>,
    good_prompt: &[usize],
    bad_prompt: &[usize],
    cfg: &AttackConfig,
) -> Result<(Perturbation, OptLog)> {
    cfg.validate(model.cfg.depth)?;
    let ctx = AttackContext::prepare(model, image, target_image, good_prompt, bad_prompt, cfg)?;
    let mut delta = init_delta(image, cfg);
    let mut log = OptLog::default();
    let mut tau_rng = DetRng::new(cfg.seed, "tau-sample");
    let eligible = ctx.h_bad.len();
    let use_sem = cfg.lambda_sem != 0.0;
    let use_st = cfg.lambda_st != 0.0;

    for iter in 0..cfg.iters {
        let mut g = Graph::new();
        let bound = model.bind(&mut g, false);
        let dnode = g.input(delta.clone());
        let inode = g.constant(image.clone());
        let adv = g.add(inode, dnode);

        let mut l_st_node = None;
        if use_st {
            let pv = model.pseudo_video_graph(&mut g, adv, model.cfg.frames, false);
            let z_adv = model.encode_graph(&mut g, &bound, pv);
            let z_tgt = g.constant(ctx.z_target.clone());
            l_st_node = Some(loss_st_graph(&mut g, z_adv, z_tgt, false));
        }

        // one state draw per iteration
        let state_idx = tau_rng.index(eligible);
        let mut l_sem_node = None;
        if use_sem {
            let tau = ctx.trajectory.step_times[state_idx];
            let x = g.constant(ctx.trajectory.states[state_idx].clone());
            let cond = g.constant(ctx.trajectory.cond_latent.clone());
            let e_img_adv = model.image_tokens_graph(&mut g, &bound, adv);
            let e_txt_good = g.constant(ctx.e_txt_good.clone());
            let h_adv =
                model.prefix_graph(&mut g, &bound, x, cond, e_img_adv, e_txt_good, tau, cfg.k);
            let h_bad = g.constant(ctx.h_bad[state_idx].clone());
            l_sem_node = Some(loss_sem_graph(&mut g, h_adv, h_bad));
        }

        let total_node = match (l_st_node, l_sem_node) {
            (Some(st), Some(sem)) => {
                let a = g.mul_scalar(st, cfg.lambda_st);
                let b = g.mul_scalar(sem, cfg.lambda_sem);
                g.add(a, b)
            }
            (Some(st), None) => g.mul_scalar(st, cfg.lambda_st),
            (None, Some(sem)) => g.mul_scalar(sem, cfg.lambda_sem),
            (None, None) => {
                return Err(Error::Config(
                    "both loss weights are zero; nothing to optimize".into(),
                ))
            }
        };

        let l_st = l_st_node.map(|n| g.scalar(n)).unwrap_or(0.0);
        let l_sem = l_sem_node.map(|n| g.scalar(n));
        let l_total = g.scalar(total_node);
        if !l_total.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective at iteration {iter} (l_st = {l_st}, l_sem = {l_sem:?}, state = {state_idx})"
            )));
        }

        let grads = g.backward(total_node);
        let grad = grads.get_or_zeros(dnode, delta.shape());
        let grad_norm = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
        delta = pgd_step(&delta, &grad, image, cfg)?;

        log.records.push(IterRecord {
            iter,
            l_st,
            l_sem,
            l_total,
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::i2v::ModelConfig;
    use ndarray::IxDyn;

    pub(crate) fn small_model(seed: u64) -> I2vModel {
        let cfg = ModelConfig {
            frames: 5,
            canvas: 16,
            latent_channels: 3,
            dim: 16,
            depth: 2,
            heads: 2,
            mlp_hidden: 24,
            sampler_steps: 4,
            cfg_scale: 2.0,
            ..ModelConfig::default()
        };
        I2vModel::init(cfg, seed).unwrap()
    }

    pub(crate) fn test_image(canvas: usize, seed: u64) -> ArrayD<f64> {
        let mut rng = DetRng::new(seed, "imm-test-image");
        let mut v = vec![0.0; 3 * canvas * canvas];
        rng.fill_uniform(&mut v, 0.05, 0.95);
        ArrayD::from_shape_vec(IxDyn(&[3, canvas, canvas]), v).unwrap()
    }

    fn latent(vals: Vec<f64>, shape: &[usize]) -> LatentTensor {
        LatentTensor {
            data: ArrayD::from_shape_vec(IxDyn(shape), vals).unwrap(),
            stride: 4,
        }
    }

    /// Independent elementwise recomputation (plain vectors, no shared
    /// reductions): per-slice sqrt of sum of squares, summed over slices.
    pub(crate) fn st_oracle(a: &LatentTensor, b: &LatentTensor) -> f64 {
        let t = a.t_slices();
        let per = a.data.len() / t;
        let av: Vec<f64> = a.data.iter().copied().collect();
        let bv: Vec<f64> = b.data.iter().copied().collect();
        let mut total = 0.0;
        for s in 0..t {
            let mut acc = 0.0;
            for i in 0..per {
                let d = av[s * per + i] - bv[s * per + i];
                acc += d * d;
            }
            total += acc.sqrt();
        }
        total
    }

    #[test]
    fn st_loss_identity_is_zero() {
        let z = latent(vec![0.3; 8], &[2, 1, 2, 2]);
        assert_eq!(loss_spatial_temporal(&z, &z).unwrap(), 0.0);
    }

    #[test]
    fn st_loss_all_ones_two_slices_is_four() {
        // two slices of 1x2x2 all-ones differences: 2 * sqrt(4) = 4
        let a = latent(vec![1.0; 8], &[2, 1, 2, 2]);
        let b = latent(vec![0.0; 8], &[2, 1, 2, 2]);
        assert!((loss_spatial_temporal(&a, &b).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn st_loss_is_positively_homogeneous() {
        let a = latent((0..12).map(|i| i as f64 * 0.1).collect(), &[3, 1, 2, 2]);
        let b = latent(vec![0.0; 12], &[3, 1, 2, 2]);
        let l1 = loss_spatial_temporal(&a, &b).unwrap();
        let a3 = latent((0..12).map(|i| i as f64 * 0.3).collect(), &[3, 1, 2, 2]);
        let l3 = loss_spatial_temporal(&a3, &b).unwrap();
        assert!((l3 - 3.0 * l1).abs() < 1e-9);
    }

    #[test]
    fn st_loss_matches_oracle_on_random_instances() {
        let mut rng = DetRng::new(5, "st-oracle");
        for case in 0..100 {
            let t = 1 + rng.index(4);
            let c = 1 + rng.index(3);
            let h = 1 + rng.index(3);
            let w = 1 + rng.index(3);
            let n = t * c * h * w;
            let mut av = vec![0.0; n];
            let mut bv = vec![0.0; n];
            rng.fill_uniform(&mut av, -2.0, 2.0);
            rng.fill_uniform(&mut bv, -2.0, 2.0);
            let a = latent(av, &[t, c, h, w]);
            let b = latent(bv, &[t, c, h, w]);
            let got = loss_spatial_temporal(&a, &b).unwrap();
            let want = st_oracle(&a, &b);
            let rel = (got - want).abs() / want.abs().max(1e-12);
            assert!(rel < 1e-6, "case {case}: {got} vs {want}");
        }
    }

    #[test]
    fn st_loss_shape_mismatch_is_error() {
        let a = latent(vec![0.0; 8], &[2, 1, 2, 2]);
        let b = latent(vec![0.0; 4], &[1, 1, 2, 2]);
        assert!(loss_spatial_temporal(&a, &b).is_err());
    }

    #[test]
    fn graph_st_loss_agrees_with_host() {
        let mut rng = DetRng::new(6, "st-graph");
        let mut av = vec![0.0; 24];
        let mut bv = vec![0.0; 24];
        rng.fill_uniform(&mut av, -1.0, 1.0);
        rng.fill_uniform(&mut bv, -1.0, 1.0);
        let a = latent(av, &[2, 3, 2, 2]);
        let b = latent(bv, &[2, 3, 2, 2]);
        let mut g = Graph::new();
        let an = g.constant(a.to_model_layout());
        let bn = g.constant(b.to_model_layout());
        let l = loss_st_graph(&mut g, an, bn, false);
        let host = loss_spatial_temporal(&a, &b).unwrap();
        assert!((g.scalar(l) - host).abs() < 1e-12);
    }

    #[test]
    fn total_loss_weighting() {
        let cfg = AttackConfig {
            lambda_st: 1.0,
            lambda_sem: 0.0,
            ..AttackConfig::default()
        };
        assert_eq!(total_loss(&cfg, 2.5, 100.0).unwrap(), 2.5);
        let cfg2 = AttackConfig {
            lambda_st: 2.0,
            lambda_sem: 0.25,
            ..AttackConfig::default()
        };
        let l1 = total_loss(&cfg2, 1.0, 4.0).unwrap();
        let cfg3 = AttackConfig {
            lambda_st: 4.0,
            lambda_sem: 0.5,
            ..AttackConfig::default()
        };
        assert!((total_loss(&cfg3, 1.0, 4.0).unwrap() - 2.0 * l1).abs() < 1e-12);
        assert!(total_loss(&cfg2, f64::NAN, 0.0).is_err());
    }

    #[test]
    fn paper_scale_defaults() {
        let cfg = AttackConfig::default();
        assert!((cfg.epsilon - 32.0 / 255.0).abs() < 1e-12);
        assert!((cfg.alpha - 0.005).abs() < 1e-12);
        assert!((cfg.lambda_st - 1.0).abs() < 1e-12);
        assert!((cfg.lambda_sem - 0.125).abs() < 1e-12);
        assert_eq!(cfg.k, 3);
        assert!((cfg.attack_window - 0.4).abs() < 1e-12);
        // the window over 25 steps selects the first 10 states
        assert_eq!(cfg.eligible_states(25), 10);
    }

    #[test]
    fn pgd_zero_gradient_keeps_delta() {
        let cfg = AttackConfig::default();
        let image = test_image(16, 0);
        let delta = ArrayD::from_elem(IxDyn(&[3, 16, 16]), 0.01);
        let grad = ArrayD::zeros(IxDyn(&[3, 16, 16]));
        let next = pgd_step(&delta, &grad, &image, &cfg).unwrap();
        assert_eq!(next, delta);
    }

    #[test]
    fn pgd_projects_to_budget_boundary() {
        let cfg = AttackConfig {
            epsilon: 0.1,
            alpha: 1.0,
            clamp_to_unit: false,
            ..AttackConfig::default()
        };
        let image = test_image(16, 1);
        let delta = ArrayD::from_elem(IxDyn(&[3, 16, 16]), 0.1);
        let grad = ArrayD::from_elem(IxDyn(&[3, 16, 16]), -1.0);
        let next = pgd_step(&delta, &grad, &image, &cfg).unwrap();
        assert!(next.iter().all(|&v| v <= 0.1 + 1e-15));
    }

    #[test]
    fn pgd_nonfinite_gradient_is_error() {
        let cfg = AttackConfig::default();
        let image = test_image(16, 2);
        let delta = ArrayD::zeros(IxDyn(&[3, 16, 16]));
        let mut grad = ArrayD::zeros(IxDyn(&[3, 16, 16]));
        grad[[0, 0, 0]] = f64::NAN;
        assert!(matches!(
            pgd_step(&delta, &grad, &image, &cfg),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn zero_iterations_returns_projected_init_with_empty_log() {
        let model = small_model(3);
        let image = test_image(16, 3);
        let target = test_image(16, 4);
        let cfg = AttackConfig {
            iters: 0,
            k: 2,
            seed: 11,
            ..AttackConfig::default()
        };
        let (p, log) = immunize(&model, &image, &target, &[2, 8], &[4, 9], &cfg).unwrap();
        assert!(log.records.is_empty());
        assert!(p.max_abs() <= cfg.epsilon + 1e-15);
        let adv = p.apply(&image);
        assert!(adv.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let expected = init_delta(&image, &cfg);
        assert_eq!(p.delta, expected);
    }

    #[test]
    fn immunize_is_deterministic_per_seed() {
        let model = small_model(5);
        let image = test_image(16, 6);
        let target = test_image(16, 7);
        let cfg = AttackConfig {
            iters: 3,
            k: 2,
            seed: 21,
            ..AttackConfig::default()
        };
        let (p1, l1) = immunize(&model, &image, &target, &[2, 8], &[4, 9], &cfg).unwrap();
        let (p2, l2) = immunize(&model, &image, &target, &[2, 8], &[4, 9], &cfg).unwrap();
        for (a, b) in p1.delta.iter().zip(p2.delta.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(l1.records.len(), l2.records.len());
        assert_eq!(
            l1.records[2].l_total.to_bits(),
            l2.records[2].l_total.to_bits()
        );
    }

    #[test]
    fn budget_and_box_hold_at_every_iteration() {
        let model = small_model(8);
        let image = test_image(16, 9);
        let target = test_image(16, 10);
        let cfg = AttackConfig {
            iters: 6,
            alpha: 0.05,
            k: 2,
            seed: 5,
            ..AttackConfig::default()
        };
        let (p, log) = immunize(&model, &image, &target, &[2, 8], &[4, 9], &cfg).unwrap();
        for r in &log.records {
            assert!(r.max_delta <= cfg.epsilon + 1e-15, "iter {}", r.iter);
            assert!(r.l_total.is_finite());
            assert!(r.l_sem.is_some());
        }
        let adv = p.apply(&image);
        assert!(adv.iter().all(|&v| (-1e-15..=1.0 + 1e-15).contains(&v)));
    }

    #[test]
    fn semantic_branch_gradient_is_isolated() {
        // the collapse branch is a fixed target: no gradient may flow into
        // its inputs
        let model = small_model(12);
        let image = test_image(16, 13);
        let cfg = AttackConfig {
            k: 2,
            ..AttackConfig::default()
        };
        let ids_good = model.pad_text_ids(&[2, 8]).unwrap();
        let ids_bad = model.pad_text_ids(&[4, 9]).unwrap();
        let out = sample(&model, &image, &ids_bad, 4, 2.0, 3).unwrap();
        let traj = out.trajectory;
        let e_txt_good = model.encode_text(&ids_good).unwrap();
        let e_txt_bad = model.encode_text(&ids_bad).unwrap();

        let mut g = Graph::new();
        let bound = model.bind(&mut g, false);
        let adv_img = g.input(image.clone());
        let src_img = g.input(image.clone());
        let x = g.constant(traj.states[0].clone());
        let cond = g.constant(traj.cond_latent.clone());
        let e_adv = model.image_tokens_graph(&mut g, &bound, adv_img);
        let e_src = model.image_tokens_graph(&mut g, &bound, src_img);
        let etg = g.constant(e_txt_good.clone());
        let etb = g.constant(e_txt_bad.clone());
        let h_adv = model.prefix_graph(&mut g, &bound, x, cond, e_adv, etg, 1.0, cfg.k);
        let h_bad = model.prefix_graph(&mut g, &bound, x, cond, e_src, etb, 1.0, cfg.k);
        let loss = loss_sem_graph(&mut g, h_adv, h_bad);
        let grads = g.backward(loss);
        assert!(grads.get(adv_img).is_some(), "adversarial branch must flow");
        assert!(
            grads.get(src_img).is_none(),
            "collapse branch must be isolated"
        );
    }

    #[test]
    fn loss_semantic_identical_branches_is_zero() {
        let model = small_model(14);
        let image = test_image(16, 15);
        let cfg = AttackConfig {
            k: 2,
            ..AttackConfig::default()
        };
        let ids = model.pad_text_ids(&[2, 8]).unwrap();
        let out = sample(&model, &image, &ids, 4, 2.0, 3).unwrap();
        let e_img = model.encode_image_semantic(&image).unwrap();
        let e_txt = model.encode_text(&ids).unwrap();
        let l = loss_semantic(&model, &out.trajectory, 0, &e_img, &e_img, &e_txt, &e_txt, &cfg)
            .unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn loss_semantic_outside_window_is_rejected() {
        let model = small_model(16);
        let image = test_image(16, 17);
        let cfg = AttackConfig {
            k: 2,
            attack_window: 0.4,
            ..AttackConfig::default()
        };
        let ids = model.pad_text_ids(&[2]).unwrap();
        let out = sample(&model, &image, &ids, 4, 2.0, 3).unwrap();
        let e_img = model.encode_image_semantic(&image).unwrap();
        let e_txt = model.encode_text(&ids).unwrap();
        // 4 steps * 0.4 -> only the first state is eligible
        let err = loss_semantic(&model, &out.trajectory, 1, &e_img, &e_img, &e_txt, &e_txt, &cfg);
        assert!(err.is_err());
    }

    #[test]
    fn random_baseline_respects_budget_and_box() {
        let image = test_image(16, 20);
        let p = baseline_random_noise(&image, 0.1, 3);
        assert!(p.max_abs() <= 0.1 + 1e-15);
        let adv = p.apply(&image);
        assert!(adv.iter().all(|&v| (0.0..=1.0).contains(&v)));
        // zero budget -> zero perturbation
        let p0 = baseline_random_noise(&image, 0.0, 3);
        assert!(p0.delta.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn random_baseline_mean_is_near_zero() {
        let image = ArrayD::from_elem(IxDyn(&[3, 16, 16]), 0.5);
        let eps = 0.1;
        let mut means = Vec::new();
        for seed in 0..50 {
            let p = baseline_random_noise(&image, eps, seed);
            means.push(p.delta.iter().sum::<f64>() / p.delta.len() as f64);
        }
        let grand = means.iter().sum::<f64>() / means.len() as f64;
        // sigma of the grand mean: eps/sqrt(3) / sqrt(n * 768)
        let sigma = eps / 3.0f64.sqrt() / ((50.0 * 768.0) as f64).sqrt();
        assert!(grand.abs() < 3.0 * sigma, "grand mean {grand}, 3 sigma {}", 3.0 * sigma);
    }

    #[test]
    fn encoder_baseline_identical_images_start_at_zero_loss() {
        let model = small_model(22);
        let image = test_image(16, 23);
        let cfg = AttackConfig {
            iters: 1,
            k: 2,
            clamp_to_unit: false,
            seed: 31,
            ..AttackConfig::default()
        };
        // delta init is random, so evaluate the loss of a zero delta by
        // checking the objective value directly
        let z_tgt = model
            .encode_pseudo_video(&PseudoVideo::conditioning(&image, model.cfg.frames))
            .unwrap();
        let z_adv = model
            .encode_pseudo_video(&PseudoVideo::conditioning(&image, model.cfg.frames))
            .unwrap();
        let d = &z_adv.data - &z_tgt.data;
        let sq: f64 = d.iter().map(|x| x * x).sum();
        assert_eq!(sq, 0.0);
        // and the full baseline still runs
        let (p, log) = baseline_photoguard_e(&model, &image, &image, &cfg).unwrap();
        assert_eq!(log.records.len(), 1);
        assert!(p.max_abs() <= cfg.epsilon + 1e-15);
    }

    #[test]
    fn encoder_baseline_is_deterministic() {
        let model = small_model(24);
        let image = test_image(16, 25);
        let target = test_image(16, 26);
        let cfg = AttackConfig {
            iters: 3,
            k: 2,
            seed: 41,
            ..AttackConfig::default()
        };
        let (p1, _) = baseline_photoguard_e(&model, &image, &target, &cfg).unwrap();
        let (p2, _) = baseline_photoguard_e(&model, &image, &target, &cfg).unwrap();
        for (a, b) in p1.delta.iter().zip(p2.delta.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn diffusion_baseline_runs_and_is_deterministic() {
        let model = small_model(28);
        let image = test_image(16, 29);
        let target = test_image(16, 30);
        let cfg = AttackConfig {
            iters: 2,
            k: 2,
            pg_d_steps: 2,
            seed: 51,
            ..AttackConfig::default()
        };
        let (p1, l1) = baseline_photoguard_d(&model, &image, &target, &[2, 8], &cfg).unwrap();
        let (p2, _) = baseline_photoguard_d(&model, &image, &target, &[2, 8], &cfg).unwrap();
        assert_eq!(l1.records.len(), 2);
        for (a, b) in p1.delta.iter().zip(p2.delta.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(p1.max_abs() <= cfg.epsilon + 1e-15);
    }

    #[test]
    fn opt_log_jsonl_round_trips() {
        let log = OptLog {
            records: vec![
                IterRecord {
                    iter: 0,
                    l_st: 1.5,
                    l_sem: Some(0.25),
                    l_total: 1.53125,
                    grad_norm: 0.9,
                    max_delta: 0.12,
                },
                IterRecord {
                    iter: 1,
                    l_st: 1.2,
                    l_sem: None,
                    l_total: 1.2,
                    grad_norm: 0.7,
                    max_delta: 0.125,
                },
            ],
        };
        let text = log.to_jsonl();
        let back = OptLog::from_jsonl(&text).unwrap();
        assert_eq!(back.records.len(), 2);
        assert_eq!(back.records[0].l_sem, Some(0.25));
        assert_eq!(back.records[1].l_sem, None);
    }

    #[test]
    fn perturbation_container_round_trip() {
        let p = Perturbation {
            delta: test_image(16, 33) * 0.01,
            budget: 0.1,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("delta.fsac");
        p.save(&path, "{\"epsilon\":0.1}").unwrap();
        let back = Perturbation::load(&path).unwrap();
        assert_eq!(back.budget, 0.1);
        for (a, b) in p.delta.iter().zip(back.delta.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
