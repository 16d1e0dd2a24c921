//! Automated degradation metrics over pluggable feature extractors, plus the
//! pairwise judge protocol.
//!
//! The extractors are deterministic training-free proxies standing in for
//! pretrained perceptual backbones; each sits behind the
//! [`FeatureExtractor`] interface so a learned embedder can be substituted
//! without touching metric code.

pub mod judge;

pub use judge::{
    judge_pair, winrate_table, Criterion, HttpJudgeBackend, JudgeBackend, JudgeRequest,
    JudgeVerdict, MockJudgeBackend, PairOutcome, Slot, WinRateTable,
};

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::diagnostics::cosine_similarity;
use crate::error::{Error, Result};
use crate::rng::DetRng;
use crate::toyworld::{vocab, Video, BACKGROUND};

/// Deterministic image embedder: same image, same vector.
pub trait FeatureExtractor: Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    /// Embed a `[C, H, W]` frame.
    fn embed(&self, frame: &ArrayD<f64>) -> Vec<f64>;
}

/// Patch statistics pushed through a fixed random projection. The default
/// structural extractor.
pub struct PatchStatsExtractor {
    dim: usize,
    projection: Vec<Vec<f64>>,
    grid: usize,
}

impl PatchStatsExtractor {
    pub fn new(seed: u64, dim: usize, grid: usize) -> Self {
        let feat_len = grid * grid * 5;
        let mut rng = DetRng::new(seed, "patch-stats-projection");
        let mut projection = Vec::with_capacity(dim);
        for _ in 0..dim {
            let mut row = vec![0.0; feat_len];
            rng.fill_normal(&mut row);
            let scale = 1.0 / (feat_len as f64).sqrt();
            for v in &mut row {
                *v *= scale;
            }
            projection.push(row);
        }
        Self {
            dim,
            projection,
            grid,
        }
    }

    fn patch_features(&self, frame: &ArrayD<f64>) -> Vec<f64> {
        let (c, h, w) = (frame.shape()[0], frame.shape()[1], frame.shape()[2]);
        let g = self.grid;
        let (ph, pw) = (h / g, w / g);
        let mut feats = Vec::with_capacity(g * g * 5);
        for gy in 0..g {
            for gx in 0..g {
                let (y0, x0) = (gy * ph, gx * pw);
                let mut mean = [0.0f64; 3];
                let mut energy = 0.0;
                let mut grad = 0.0;
                let n = (ph * pw) as f64;
                for y in y0..y0 + ph {
                    for x in x0..x0 + pw {
                        for ci in 0..c.min(3) {
                            mean[ci] += frame[[ci, y, x]];
                        }
                        let lum = |yy: usize, xx: usize| -> f64 {
                            (0..c.min(3)).map(|ci| frame[[ci, yy, xx]]).sum::<f64>()
                        };
                        let v = lum(y, x);
                        energy += v * v;
                        if x + 1 < w {
                            grad += (lum(y, x + 1) - v).abs();
                        }
                        if y + 1 < h {
                            grad += (lum(y + 1, x) - v).abs();
                        }
                    }
                }
                feats.push(mean[0] / n);
                feats.push(mean[1] / n);
                feats.push(mean[2] / n);
                feats.push((energy / n).sqrt());
                feats.push(grad / n);
            }
        }
        feats
    }
}

impl FeatureExtractor for PatchStatsExtractor {
    fn name(&self) -> &str {
        "patch-stats-v1"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, frame: &ArrayD<f64>) -> Vec<f64> {
        let feats = self.patch_features(frame);
        self.projection
            .iter()
            .map(|row| row.iter().zip(&feats).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Shared text/image embedding space for the alignment metric: six color
/// dimensions plus three shape dimensions. Text tokens map to indicator
/// coordinates; images map by soft color matching over foreground pixels
/// and a bounding-box fill-ratio shape descriptor.
pub struct SemanticProxySpace;

/// Fill ratios of the rendered shapes inside their bounding boxes.
const SHAPE_FILL_PROTOS: [(usize, f64); 3] = [(0, 1.0), (1, 0.785), (2, 0.5)];

impl SemanticProxySpace {
    pub const DIM: usize = 9;

    pub fn embed_text(words: &[String]) -> Result<Vec<f64>> {
        if words.is_empty() {
            return Err(Error::Validation("empty prompt".into()));
        }
        let mut v = vec![0.0; Self::DIM];
        for w in words {
            if vocab::id_of(w).is_none() {
                return Err(Error::Validation(format!("token '{w}' not in vocabulary")));
            }
            match w.as_str() {
                "red" => v[0] = 1.0,
                "green" => v[1] = 1.0,
                "blue" => v[2] = 1.0,
                "yellow" => v[3] = 1.0,
                "magenta" => v[4] = 1.0,
                "cyan" => v[5] = 1.0,
                "square" => v[6] = 1.0,
                "circle" => v[7] = 1.0,
                "triangle" => v[8] = 1.0,
                _ => {}
            }
        }
        Ok(v)
    }

    pub fn embed_image(frame: &ArrayD<f64>) -> Vec<f64> {
        let (c, h, w) = (frame.shape()[0], frame.shape()[1], frame.shape()[2]);
        let mut v = vec![0.0; Self::DIM];
        // foreground mask: pixels away from the背景 level
        let mut fg = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let dev: f64 = (0..c.min(3))
                    .map(|ci| (frame[[ci, y, x]] - BACKGROUND).abs())
                    .sum();
                if dev > 0.3 {
                    fg.push((y, x));
                }
            }
        }
        if fg.is_empty() {
            return v;
        }
        let mut mean = [0.0f64; 3];
        let (mut ylo, mut yhi, mut xlo, mut xhi) = (h, 0usize, w, 0usize);
        for &(y, x) in &fg {
            for ci in 0..c.min(3) {
                mean[ci] += frame[[ci, y, x]];
            }
            ylo = ylo.min(y);
            yhi = yhi.max(y);
            xlo = xlo.min(x);
            xhi = xhi.max(x);
        }
        for m in &mut mean {
            *m /= fg.len() as f64;
        }
        // soft color match
        let colors = crate::toyworld::Color::ALL;
        let mut weights = Vec::with_capacity(6);
        for col in colors {
            let rgb = col.rgb();
            let d2: f64 = (0..3).map(|i| (mean[i] - rgb[i]).powi(2)).sum();
            weights.push((-d2 / 0.05).exp());
        }
        let wsum: f64 = weights.iter().sum();
        if wsum > 0.0 {
            for (i, wv) in weights.iter().enumerate() {
                v[i] = wv / wsum;
            }
        }
        // shape by bounding-box fill ratio
        let bbox_area = ((yhi - ylo + 1) * (xhi - xlo + 1)) as f64;
        let fill = fg.len() as f64 / bbox_area;
        let mut sw = Vec::with_capacity(3);
        for (_, proto) in SHAPE_FILL_PROTOS {
            sw.push((-((fill - proto) / 0.12).powi(2)).exp());
        }
        let ssum: f64 = sw.iter().sum();
        if ssum > 0.0 {
            for (i, s) in sw.iter().enumerate() {
                v[6 + i] = s / ssum;
            }
        }
        v
    }
}

/// Frame interpolator interface for the motion-smoothness proxy.
pub trait Interpolator: Sync {
    fn name(&self) -> &str;
    /// Predict the middle frame from its neighbours.
    fn interpolate(&self, prev: &ArrayD<f64>, next: &ArrayD<f64>) -> ArrayD<f64>;
}

/// Average of the two neighbours; exact on affine-in-time sequences.
pub struct LinearInterpolator;

impl Interpolator for LinearInterpolator {
    fn name(&self) -> &str {
        "linear-average"
    }

    fn interpolate(&self, prev: &ArrayD<f64>, next: &ArrayD<f64>) -> ArrayD<f64> {
        (prev + next) * 0.5
    }
}

/// Aesthetic proxy interface.
pub trait AestheticScorer: Sync {
    fn name(&self) -> &str;
    fn score(&self, frame: &ArrayD<f64>) -> f64;
}

/// Contrast + edge-coherence statistic mapped to a 0..10 scale.
/// All-black (or any constant) frames score the documented floor of 0.
pub struct EdgeContrastScorer;

impl AestheticScorer for EdgeContrastScorer {
    fn name(&self) -> &str {
        "edge-contrast-v1"
    }

    fn score(&self, frame: &ArrayD<f64>) -> f64 {
        let (c, h, w) = (frame.shape()[0], frame.shape()[1], frame.shape()[2]);
        let lum = |y: usize, x: usize| -> f64 {
            (0..c.min(3)).map(|ci| frame[[ci, y, x]]).sum::<f64>() / c.min(3) as f64
        };
        let n = (h * w) as f64;
        let mean: f64 = (0..h).map(|y| (0..w).map(|x| lum(y, x)).sum::<f64>()).sum::<f64>() / n;
        let var: f64 = (0..h)
            .map(|y| (0..w).map(|x| (lum(y, x) - mean).powi(2)).sum::<f64>())
            .sum::<f64>()
            / n;
        let contrast = var.sqrt();

        // edge coherence: fraction of strong gradients aligned with their
        // neighbours' orientation
        let mut strong = 0.0;
        let mut coherent = 0.0;
        for y in 1..h.saturating_sub(1) {
            for x in 1..w.saturating_sub(1) {
                let gx = lum(y, x + 1) - lum(y, x - 1);
                let gy = lum(y + 1, x) - lum(y - 1, x);
                let mag = (gx * gx + gy * gy).sqrt();
                if mag > 0.1 {
                    strong += 1.0;
                    let gx2 = lum(y, (x + 2).min(w - 1)) - lum(y, x);
                    let gy2 = lum((y + 1).min(h - 1), x) - lum(y.saturating_sub(1), x);
                    let dot = gx * gx2 + gy * gy2;
                    if dot > 0.0 {
                        coherent += 1.0;
                    }
                }
            }
        }
        let coherence = if strong > 0.0 { coherent / strong } else { 0.0 };
        (6.0 * contrast.min(1.0) + 4.0 * coherence).clamp(0.0, 10.0)
    }
}

/// Aggregated per-video metric values. PIC/TA/SC live in the cosine range
/// `[-1, 1]`; percent fields scale by 100 for reporting. All five are
/// reported on a lower-is-better axis: a successful attack drives them down.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub video_id: String,
    pub pic: f64,
    pub ta: f64,
    pub sc: f64,
    pub ms: f64,
    pub as_: f64,
    pub pic_pct: f64,
    pub sc_pct: f64,
    pub ms_pct: f64,
    pub extractors: Vec<String>,
    pub direction: String,
}

impl MetricsReport {
    pub fn new(video_id: &str, pic: f64, ta: f64, sc: f64, ms: f64, as_: f64, extractors: Vec<String>) -> Self {
        Self {
            video_id: video_id.to_string(),
            pic,
            ta,
            sc,
            ms,
            as_,
            pic_pct: pic * 100.0,
            sc_pct: sc * 100.0,
            ms_pct: ms * 100.0,
            extractors,
            direction: "lower is better".to_string(),
        }
    }
}

/// Mean cosine similarity between the conditioning image and every frame.
pub fn metric_pic(input_image: &ArrayD<f64>, video: &Video, fx: &dyn FeatureExtractor) -> Result<f64> {
    if video.frames() == 0 {
        return Err(Error::Validation("empty video".into()));
    }
    let ref_emb = fx.embed(input_image);
    let mut total = 0.0;
    for t in 0..video.frames() {
        let e = fx.embed(&video.frame(t));
        total += cosine_similarity(&ref_emb, &e);
    }
    Ok(total / video.frames() as f64)
}

/// Mean per-frame cosine similarity between the prompt and frame embeddings
/// in the shared proxy space.
pub fn metric_ta(prompt_words: &[String], video: &Video) -> Result<f64> {
    if video.frames() == 0 {
        return Err(Error::Validation("empty video".into()));
    }
    let text = SemanticProxySpace::embed_text(prompt_words)?;
    let mut total = 0.0;
    for t in 0..video.frames() {
        let e = SemanticProxySpace::embed_image(&video.frame(t));
        total += cosine_similarity(&text, &e);
    }
    Ok(total / video.frames() as f64)
}

/// Mean cosine similarity across consecutive frame pairs.
pub fn metric_sc(video: &Video, fx: &dyn FeatureExtractor) -> Result<f64> {
    if video.frames() < 2 {
        return Err(Error::Validation("subject consistency needs >= 2 frames".into()));
    }
    let embs: Vec<Vec<f64>> = (0..video.frames()).map(|t| fx.embed(&video.frame(t))).collect();
    let mut total = 0.0;
    for pair in embs.windows(2) {
        total += cosine_similarity(&pair[0], &pair[1]);
    }
    Ok(total / (video.frames() - 1) as f64)
}

/// Motion smoothness: `1 - normalized mean absolute interpolation error` of
/// each interior frame against its prediction from the neighbours. Exact
/// (1.0) for affine-in-time sequences under the linear interpolator.
pub fn metric_ms(video: &Video, interp: &dyn Interpolator) -> Result<f64> {
    if video.frames() < 3 {
        return Err(Error::Validation("motion smoothness needs >= 3 frames".into()));
    }
    let mut err = 0.0;
    let mut count = 0usize;
    for t in 1..video.frames() - 1 {
        let pred = interp.interpolate(&video.frame(t - 1), &video.frame(t + 1));
        let actual = video.frame(t);
        err += (&actual - &pred).iter().map(|v| v.abs()).sum::<f64>();
        count += actual.len();
    }
    let nmae = (err / count as f64).clamp(0.0, 1.0);
    Ok(1.0 - nmae)
}

/// Mean per-frame aesthetic proxy score.
pub fn metric_as(video: &Video, scorer: &dyn AestheticScorer) -> Result<f64> {
    if video.frames() == 0 {
        return Err(Error::Validation("empty video".into()));
    }
    let total: f64 = (0..video.frames()).map(|t| scorer.score(&video.frame(t))).sum();
    Ok(total / video.frames() as f64)
}

/// Compute all five metrics for one generated video.
pub fn evaluate_video(
    video_id: &str,
    input_image: &ArrayD<f64>,
    prompt_words: &[String],
    video: &Video,
    fx: &dyn FeatureExtractor,
) -> Result<MetricsReport> {
    let interp = LinearInterpolator;
    let scorer = EdgeContrastScorer;
    Ok(MetricsReport::new(
        video_id,
        metric_pic(input_image, video, fx)?,
        metric_ta(prompt_words, video)?,
        metric_sc(video, fx)?,
        metric_ms(video, &interp)?,
        metric_as(video, &scorer)?,
        vec![
            fx.name().to_string(),
            "semantic-proxy-v1".to_string(),
            interp.name().to_string(),
            scorer.name().to_string(),
        ],
    ))
}
