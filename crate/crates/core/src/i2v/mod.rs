//! The toy dual-stream image-to-video generator.
//!
//! Two conditioning pathways, mirroring the architecture family under study:
//!
//! - **spatial-temporal**: the input image is expanded into a zero-padded
//!   pseudo-video and encoded by a causal 3-D video autoencoder into latent
//!   slices that structurally condition denoising (channel-concatenated with
//!   the noisy latent);
//! - **semantic**: an image encoder and a lookup-table text encoder produce
//!   token embeddings, injected into every backbone block through additive
//!   cross-attention (text response + image response).
//!
//! Generation is deterministic Euler sampling of a rectified-flow velocity
//! field with classifier-free guidance. All randomness is keyed, all forward
//! passes are pure functions of the weights.

mod backbone;
mod imgenc;
pub mod sampler;
mod text;
pub mod train;
mod vae;

pub use backbone::CrossAttnTrace;
pub use sampler::{sample, SampleOutput};
pub use train::{train_toy_model, TrainOutcome, TrainSettings};

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::container::ArrayContainer;
use crate::error::{Error, Result};
use crate::rng::DetRng;
use crate::tape::optim::ParamSet;
use crate::tape::{Graph, NodeId};

/// Dimensions and sampler defaults for the toy generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Video length T. `(frames - 1)` must be divisible by `temporal_stride`.
    pub frames: usize,
    /// Square canvas side; must be divisible by 4.
    pub canvas: usize,
    pub in_channels: usize,
    pub latent_channels: usize,
    /// Temporal compression of the causal encoder (2 or 4).
    pub temporal_stride: usize,
    /// Backbone model width.
    pub dim: usize,
    /// Backbone block count.
    pub depth: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    /// Fixed text length (captions are padded to this).
    pub text_len: usize,
    pub sampler_steps: usize,
    pub cfg_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            frames: 9,
            canvas: 32,
            in_channels: 3,
            latent_channels: 4,
            temporal_stride: 4,
            dim: 32,
            depth: 4,
            heads: 2,
            mlp_hidden: 64,
            text_len: 6,
            sampler_steps: 8,
            cfg_scale: 3.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.canvas % 16 != 0 {
            return Err(Error::Config("canvas must be a positive multiple of 16".into()));
        }
        if !matches!(self.temporal_stride, 2 | 4) {
            return Err(Error::Config("temporal_stride must be 2 or 4".into()));
        }
        if self.frames == 0 || (self.frames - 1) % self.temporal_stride != 0 {
            return Err(Error::Config(format!(
                "frames - 1 = {} must be divisible by temporal stride {}",
                self.frames as i64 - 1,
                self.temporal_stride
            )));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::Config("dim must be divisible by heads".into()));
        }
        if self.sampler_steps < 1 {
            return Err(Error::Config("sampler_steps must be >= 1".into()));
        }
        Ok(())
    }

    /// Latent slice count for a `t`-frame input: `1 + (t - 1) / stride`.
    pub fn t_latent(&self, t_frames: usize) -> usize {
        1 + (t_frames - 1) / self.temporal_stride
    }

    /// Latent spatial side (two stride-2 stages).
    pub fn latent_side(&self) -> usize {
        self.canvas / 4
    }

    /// Latest input-frame index that can influence latent slice `t`
    /// (slice `t` covers frames `<= t * stride`).
    pub fn coverage_boundary(&self, slice: usize) -> usize {
        slice * self.temporal_stride
    }

    pub fn tokens_per_slice(&self) -> usize {
        self.latent_side() * self.latent_side()
    }

    /// Semantic image token count (final conv grid cells).
    pub fn img_token_count(&self) -> usize {
        imgenc::token_count(self.canvas)
    }
}

/// A frame sequence destined for the video encoder: either a conditioning
/// input `[I, 0, .., 0]` or a fully-populated target `[I, I, .., I]`.
#[derive(Debug, Clone)]
pub struct PseudoVideo {
    /// `[T, C, H, W]` in `[0, 1]`.
    pub frames: ArrayD<f64>,
    pub populated: Vec<bool>,
}

impl PseudoVideo {
    /// Zero-padded conditioning input: frame 0 is the image, the rest zeros.
    pub fn conditioning(image: &ArrayD<f64>, t_frames: usize) -> Self {
        let (c, h, w) = image_dims(image);
        let mut frames = ArrayD::<f64>::zeros(IxDyn(&[t_frames, c, h, w]));
        frames.index_axis_mut(ndarray::Axis(0), 0).assign(image);
        let mut populated = vec![false; t_frames];
        populated[0] = true;
        Self { frames, populated }
    }

    /// Fully-populated target: the image replicated across every frame.
    pub fn dense(image: &ArrayD<f64>, t_frames: usize) -> Self {
        let (c, h, w) = image_dims(image);
        let mut frames = ArrayD::<f64>::zeros(IxDyn(&[t_frames, c, h, w]));
        for t in 0..t_frames {
            frames.index_axis_mut(ndarray::Axis(0), t).assign(image);
        }
        Self {
            frames,
            populated: vec![true; t_frames],
        }
    }

    pub fn t_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    /// Model-layout copy `[C, T, H, W]`.
    pub fn to_model_layout(&self) -> ArrayD<f64> {
        self.frames
            .view()
            .permuted_axes(IxDyn(&[1, 0, 2, 3]))
            .as_standard_layout()
            .to_owned()
    }
}

fn image_dims(image: &ArrayD<f64>) -> (usize, usize, usize) {
    assert_eq!(image.ndim(), 3, "image must be [C, H, W]");
    (image.shape()[0], image.shape()[1], image.shape()[2])
}

/// Encoder output: temporal slices of the video latent.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    /// `[T', C', H', W']`.
    pub data: ArrayD<f64>,
    /// Temporal compression the encoder applied.
    pub stride: usize,
}

impl LatentTensor {
    pub fn from_model_layout(model: &ArrayD<f64>, stride: usize) -> Self {
        let data = model
            .view()
            .permuted_axes(IxDyn(&[1, 0, 2, 3]))
            .as_standard_layout()
            .to_owned();
        Self { data, stride }
    }

    /// Model-layout copy `[C', T', H', W']`.
    pub fn to_model_layout(&self) -> ArrayD<f64> {
        self.data
            .view()
            .permuted_axes(IxDyn(&[1, 0, 2, 3]))
            .as_standard_layout()
            .to_owned()
    }

    pub fn t_slices(&self) -> usize {
        self.data.shape()[0]
    }

    /// Owned copy of slice `t` as `[C', H', W']`.
    pub fn slice(&self, t: usize) -> ArrayD<f64> {
        self.data
            .index_axis(ndarray::Axis(0), t)
            .as_standard_layout()
            .to_owned()
    }
}

/// Image and text token embeddings for the semantic stream.
#[derive(Debug, Clone)]
pub struct SemanticEmbeddings {
    /// `[M, D]`.
    pub image_tokens: ArrayD<f64>,
    /// `[L, D]`.
    pub text_tokens: ArrayD<f64>,
}

/// Cached sampler states from a denoising run, ordered from pure noise
/// (`tau = 1`) toward clean (`tau = 0`).
#[derive(Debug, Clone)]
pub struct CollapseTrajectory {
    /// Noisy flow-space latents, one per state, `[C', T', H', W']`.
    pub states: Vec<ArrayD<f64>>,
    /// The tau of each state; strictly decreasing from 1.0 to 0.0.
    pub step_times: Vec<f64>,
    /// Conditioning latent (flow space) the run was driven by.
    pub cond_latent: ArrayD<f64>,
    pub seed: u64,
    pub prompt_id: String,
}

impl CollapseTrajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut c = ArrayContainer::new();
        for (i, s) in self.states.iter().enumerate() {
            c.insert(format!("x_{i:03}"), s.clone());
        }
        c.insert(
            "step_times",
            ArrayD::from_shape_vec(IxDyn(&[self.step_times.len()]), self.step_times.clone())
                .unwrap(),
        );
        c.insert("cond_latent", self.cond_latent.clone());
        c.set_meta("seed", self.seed.to_string());
        c.set_meta("prompt", self.prompt_id.clone());
        c.set_meta("kind", "trajectory");
        c.save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let c = ArrayContainer::load(path)?;
        let times = c.get("step_times")?;
        let n = times.len();
        let mut states = Vec::with_capacity(n);
        for i in 0..n {
            states.push(c.get(&format!("x_{i:03}"))?.clone());
        }
        Ok(Self {
            states,
            step_times: times.iter().copied().collect(),
            cond_latent: c.get("cond_latent")?.clone(),
            seed: c
                .meta("seed")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Container("trajectory missing seed".into()))?,
            prompt_id: c.meta("prompt").unwrap_or_default().to_string(),
        })
    }
}

/// Hidden state after the first `k` backbone blocks.
#[derive(Debug, Clone)]
pub struct BackboneFeatures {
    /// `[T', tokens_per_slice, D]`.
    pub h: ArrayD<f64>,
    pub k: usize,
}

/// The toy generator: config + named weights.
#[derive(Debug, Clone)]
pub struct I2vModel {
    pub cfg: ModelConfig,
    pub params: ParamSet,
}

/// Bound parameter nodes for one graph.
pub struct Bound {
    ids: std::collections::BTreeMap<String, NodeId>,
}

impl Bound {
    pub fn id(&self, name: &str) -> NodeId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter '{name}'"))
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.ids.keys()
    }
}

impl I2vModel {
    /// Fresh random weights.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        let mut rng = DetRng::new(seed, "model-init");
        vae::init_params(&cfg, &mut params, &mut rng);
        imgenc::init_params(&cfg, &mut params, &mut rng);
        text::init_params(&cfg, &mut params, &mut rng);
        backbone::init_params(&cfg, &mut params, &mut rng);
        params.insert("latent.scale".into(), ArrayD::from_elem(IxDyn(&[1]), 1.0));
        Ok(Self { cfg, params })
    }

    /// Insert every parameter into `g`, as inputs when `trainable`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let mut ids = std::collections::BTreeMap::new();
        for (name, value) in &self.params {
            let id = if trainable {
                g.input(value.clone())
            } else {
                g.constant(value.clone())
            };
            ids.insert(name.clone(), id);
        }
        Bound { ids }
    }

    /// Latent normalization used by the flow/backbone domain.
    pub fn latent_scale(&self) -> f64 {
        self.params["latent.scale"][[0]]
    }

    /// Raw encoder latent -> flow-space latent.
    pub fn to_flow(&self, z: &ArrayD<f64>) -> ArrayD<f64> {
        z / self.latent_scale()
    }

    /// Flow-space latent -> raw encoder latent.
    pub fn from_flow(&self, x: &ArrayD<f64>) -> ArrayD<f64> {
        x * self.latent_scale()
    }

    // ---- graph-level building blocks (used by attacks and training) ----

    /// Encoder over a model-layout `[C, T, H, W]` node -> `[C', T', H', W']`.
    pub fn encode_graph(&self, g: &mut Graph, bound: &Bound, video: NodeId) -> NodeId {
        vae::encode(&self.cfg, g, bound, video)
    }

    /// Decoder over a model-layout latent node -> `[C, T, H, W]` in `[0, 1]`.
    pub fn decode_graph(&self, g: &mut Graph, bound: &Bound, latent: NodeId) -> NodeId {
        vae::decode(&self.cfg, g, bound, latent)
    }

    /// Assemble a pseudo-video node from an image node `[C, H, W]`.
    pub fn pseudo_video_graph(
        &self,
        g: &mut Graph,
        image: NodeId,
        t_frames: usize,
        dense: bool,
    ) -> NodeId {
        let (c, h, w) = {
            let s = g.value(image).shape();
            (s[0], s[1], s[2])
        };
        let one = g.reshape(image, &[c, 1, h, w]);
        if dense {
            let copies = vec![one; t_frames];
            g.concat(&copies, 1)
        } else if t_frames == 1 {
            one
        } else {
            let zeros = g.constant(ArrayD::zeros(IxDyn(&[c, t_frames - 1, h, w])));
            g.concat(&[one, zeros], 1)
        }
    }

    /// Semantic image tokens `[M, D]` from an image node `[C, H, W]`.
    pub fn image_tokens_graph(&self, g: &mut Graph, bound: &Bound, image: NodeId) -> NodeId {
        imgenc::encode(&self.cfg, g, bound, image)
    }

    /// Text tokens `[L, D]` from ids (padded/validated by the caller).
    pub fn text_tokens_graph(&self, g: &mut Graph, bound: &Bound, ids: &[usize]) -> NodeId {
        text::encode(&self.cfg, g, bound, ids)
    }

    /// The learned unconditional (null) text embedding.
    pub fn null_text_graph(&self, _g: &mut Graph, bound: &Bound) -> NodeId {
        bound.id("txt.null")
    }

    /// Backbone velocity prediction (full depth).
    #[allow(clippy::too_many_arguments)]
    pub fn velocity_graph(
        &self,
        g: &mut Graph,
        bound: &Bound,
        x_flow: NodeId,
        cond_flow: NodeId,
        e_img: NodeId,
        e_txt: NodeId,
        tau: f64,
    ) -> NodeId {
        backbone::forward(&self.cfg, g, bound, x_flow, cond_flow, e_img, e_txt, tau, None, None)
    }

    /// Hidden state after the first `k` blocks, `[T', tokens, D]`.
    #[allow(clippy::too_many_arguments)]
    pub fn prefix_graph(
        &self,
        g: &mut Graph,
        bound: &Bound,
        x_flow: NodeId,
        cond_flow: NodeId,
        e_img: NodeId,
        e_txt: NodeId,
        tau: f64,
        k: usize,
    ) -> NodeId {
        backbone::forward(
            &self.cfg,
            g,
            bound,
            x_flow,
            cond_flow,
            e_img,
            e_txt,
            tau,
            Some(k),
            None,
        )
    }

    // ---- host-level operations ----

    /// Encode a pseudo-video into latent slices.
    pub fn encode_pseudo_video(&self, pv: &PseudoVideo) -> Result<LatentTensor> {
        self.check_frames(pv.t_frames())?;
        let (c, h, w) = (
            pv.frames.shape()[1],
            pv.frames.shape()[2],
            pv.frames.shape()[3],
        );
        if c != self.cfg.in_channels || h != self.cfg.canvas || w != self.cfg.canvas {
            return Err(Error::Shape(format!(
                "pseudo-video frames are {c}x{h}x{w}, model expects {}x{}x{}",
                self.cfg.in_channels, self.cfg.canvas, self.cfg.canvas
            )));
        }
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let video = g.constant(pv.to_model_layout());
        let z = self.encode_graph(&mut g, &bound, video);
        Ok(LatentTensor::from_model_layout(
            g.value(z),
            self.cfg.temporal_stride,
        ))
    }

    /// Encode a full video `[T, C, H, W]` (training-style input).
    pub fn encode_video(&self, video: &crate::toyworld::Video) -> Result<LatentTensor> {
        self.check_frames(video.frames())?;
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let v = g.constant(video.to_model_layout());
        let z = self.encode_graph(&mut g, &bound, v);
        Ok(LatentTensor::from_model_layout(
            g.value(z),
            self.cfg.temporal_stride,
        ))
    }

    /// Decode latent slices into frames in `[0, 1]`.
    pub fn decode_latents(&self, z: &LatentTensor) -> Result<crate::toyworld::Video> {
        let s = z.data.shape();
        if s[1] != self.cfg.latent_channels || s[2] != self.cfg.latent_side() {
            return Err(Error::Shape(format!(
                "latent is {:?}, model expects [T', {}, {}, {}]",
                s,
                self.cfg.latent_channels,
                self.cfg.latent_side(),
                self.cfg.latent_side()
            )));
        }
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let zn = g.constant(z.to_model_layout());
        let out = self.decode_graph(&mut g, &bound, zn);
        Ok(crate::toyworld::Video::from_model_layout(g.value(out)))
    }

    /// Semantic image token embeddings `[M, D]`.
    pub fn encode_image_semantic(&self, image: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        let (c, h, w) = image_dims(image);
        if c != self.cfg.in_channels || h != self.cfg.canvas || w != self.cfg.canvas {
            return Err(Error::Shape(format!(
                "image is {c}x{h}x{w}, model expects {}x{}x{}",
                self.cfg.in_channels, self.cfg.canvas, self.cfg.canvas
            )));
        }
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let img = g.constant(image.clone());
        let tok = self.image_tokens_graph(&mut g, &bound, img);
        Ok(g.value(tok).clone())
    }

    /// Text token embeddings `[L, D]`. Empty prompts embed as all-padding.
    pub fn encode_text(&self, ids: &[usize]) -> Result<ArrayD<f64>> {
        let padded = self.pad_text_ids(ids)?;
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let tok = self.text_tokens_graph(&mut g, &bound, &padded);
        Ok(g.value(tok).clone())
    }

    /// Pre-mix lookup rows (embedding + positional), for inspection.
    pub fn text_pre_mix(&self, ids: &[usize]) -> Result<ArrayD<f64>> {
        let padded = self.pad_text_ids(ids)?;
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let tok = text::pre_mix(&self.cfg, &mut g, &bound, &padded);
        Ok(g.value(tok).clone())
    }

    /// Validate and pad token ids to the model's fixed text length.
    pub fn pad_text_ids(&self, ids: &[usize]) -> Result<Vec<usize>> {
        let vocab = crate::toyworld::vocab::size();
        for &id in ids {
            if id >= vocab {
                return Err(Error::UnknownToken(id));
            }
        }
        if ids.len() > self.cfg.text_len {
            return Err(Error::Config(format!(
                "prompt has {} tokens, model caps at {}",
                ids.len(),
                self.cfg.text_len
            )));
        }
        let mut padded = ids.to_vec();
        padded.resize(self.cfg.text_len, crate::toyworld::vocab::PAD);
        Ok(padded)
    }

    /// Encode prompt words (vocabulary lookup + padding).
    pub fn encode_prompt_words(&self, words: &[String]) -> Result<Vec<usize>> {
        let ids = crate::toyworld::vocab::encode(words).ok_or_else(|| {
            Error::Validation(format!("prompt contains out-of-vocabulary words: {words:?}"))
        })?;
        self.pad_text_ids(&ids)
    }

    /// Hidden state after the first `k` backbone blocks under the given
    /// conditioning. `x_noisy` and `cond` are flow-space latents.
    pub fn backbone_prefix(
        &self,
        x_noisy: &ArrayD<f64>,
        cond: &ArrayD<f64>,
        e_img: &ArrayD<f64>,
        e_txt: &ArrayD<f64>,
        tau: f64,
        k: usize,
    ) -> Result<BackboneFeatures> {
        if k < 1 || k > self.cfg.depth {
            return Err(Error::Config(format!(
                "prefix depth k = {k} out of range 1..={}",
                self.cfg.depth
            )));
        }
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let x = g.constant(x_noisy.clone());
        let c = g.constant(cond.clone());
        let ei = g.constant(e_img.clone());
        let et = g.constant(e_txt.clone());
        let h = self.prefix_graph(&mut g, &bound, x, c, ei, et, tau, k);
        Ok(BackboneFeatures {
            h: g.value(h).clone(),
            k,
        })
    }

    /// Per-block cross-attention traces for the additive-conditioning checks.
    pub fn prefix_traced(
        &self,
        x_noisy: &ArrayD<f64>,
        cond: &ArrayD<f64>,
        e_img: &ArrayD<f64>,
        e_txt: &ArrayD<f64>,
        tau: f64,
        k: usize,
    ) -> Result<Vec<CrossAttnTrace>> {
        if k < 1 || k > self.cfg.depth {
            return Err(Error::Config(format!(
                "prefix depth k = {k} out of range 1..={}",
                self.cfg.depth
            )));
        }
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let x = g.constant(x_noisy.clone());
        let c = g.constant(cond.clone());
        let ei = g.constant(e_img.clone());
        let et = g.constant(e_txt.clone());
        let mut traces = Vec::new();
        backbone::forward(
            &self.cfg,
            &mut g,
            &bound,
            x,
            c,
            ei,
            et,
            tau,
            Some(k),
            Some(&mut traces),
        );
        Ok(traces)
    }

    /// One-shot estimate of the clean latent from a noisy flow state.
    ///
    /// With `x_tau = (1 - tau) x0 + tau x1` and velocity `v = x1 - x0`, the
    /// estimate is `x0_hat = x_tau - tau * v(x_tau, tau)`. `tau = 0` returns
    /// the state unchanged (no remaining noise).
    pub fn predict_clean_latent(
        &self,
        x_tau: &ArrayD<f64>,
        cond_flow: &ArrayD<f64>,
        e_img: &ArrayD<f64>,
        e_txt: &ArrayD<f64>,
        tau: f64,
    ) -> Result<ArrayD<f64>> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::Config(format!("tau = {tau} outside [0, 1]")));
        }
        if tau == 0.0 {
            return Ok(x_tau.clone());
        }
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let x = g.constant(x_tau.clone());
        let c = g.constant(cond_flow.clone());
        let ei = g.constant(e_img.clone());
        let et = g.constant(e_txt.clone());
        let v = self.velocity_graph(&mut g, &bound, x, c, ei, et, tau);
        let scaled = g.mul_scalar(v, -tau);
        let xhat = g.add(x, scaled);
        Ok(g.value(xhat).clone())
    }

    fn check_frames(&self, t: usize) -> Result<()> {
        if t >= 1 && (t == 1 || (t - 1) % self.cfg.temporal_stride == 0) {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "frame count {t} incompatible with temporal stride {} (need (T-1) % s == 0)",
                self.cfg.temporal_stride
            )))
        }
    }

    // ---- persistence ----

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut c = ArrayContainer::new();
        for (name, value) in &self.params {
            c.insert(name.clone(), value.clone());
        }
        c.set_meta(
            "model_config",
            serde_json::to_string(&self.cfg).map_err(|e| Error::Artifact(e.to_string()))?,
        );
        c.set_meta("kind", "weights");
        c.save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let c = ArrayContainer::load(path)?;
        let cfg_json = c
            .meta("model_config")
            .ok_or_else(|| Error::Container("weights missing model_config".into()))?;
        let cfg: ModelConfig =
            serde_json::from_str(cfg_json).map_err(|e| Error::Container(e.to_string()))?;
        cfg.validate()?;
        Ok(Self {
            cfg,
            params: c.arrays,
        })
    }
}

/// Fill an array with unit Gaussians from a keyed stream.
pub(crate) fn gaussian(rng: &mut DetRng, shape: &[usize]) -> ArrayD<f64> {
    let mut v = vec![0.0f64; shape.iter().product()];
    rng.fill_normal(&mut v);
    ArrayD::from_shape_vec(IxDyn(shape), v).unwrap()
}

/// He-style init for conv kernels / linear maps.
pub(crate) fn init_weight(rng: &mut DetRng, shape: &[usize], fan_in: usize) -> ArrayD<f64> {
    let std = (2.0 / fan_in as f64).sqrt();
    gaussian(rng, shape) * std
}
