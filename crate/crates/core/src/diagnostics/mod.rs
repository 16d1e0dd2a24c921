//! Failure-mode measurements: per-slice latent deviation curves, per-slice
//! input-gradient magnitudes, and semantic-distance trajectory slopes.

mod plot;

pub use plot::render_line_plot;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::i2v::{CollapseTrajectory, I2vModel, LatentTensor};
use crate::metrics::FeatureExtractor;
use crate::tape::Graph;

/// A per-slice measurement (one value per latent slice).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SliceCurve {
    pub values: Vec<f64>,
    pub label: String,
    /// Free-form snapshot of the configuration that produced the curve.
    pub config: String,
}

impl SliceCurve {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Validation("empty slice curve".into()));
        }
        if self.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation(format!(
                "slice curve '{}' has non-finite or negative values",
                self.label
            )));
        }
        Ok(())
    }

    /// min / max over slices (the balance measure of the deviation curves).
    pub fn min_max_ratio(&self) -> f64 {
        let min = self.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = self.values.iter().cloned().fold(0.0f64, f64::max);
        if max > 0.0 {
            min / max
        } else {
            0.0
        }
    }

    /// Coefficient of variation (stddev / mean) across slices.
    pub fn coefficient_of_variation(&self) -> f64 {
        let n = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        if mean == 0.0 {
            return 0.0;
        }
        let var = self.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        var.sqrt() / mean
    }
}

/// Semantic distances to a reference run per sampler step, with the fitted
/// least-squares slope.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryDivergence {
    pub distances: Vec<f64>,
    pub slope: f64,
    pub ref_label: String,
    pub cmp_label: String,
}

/// Per-slice deviation `d_t = ||z_t^a - z_t^b||_2`.
pub fn latent_deviation_curve(
    z_a: &LatentTensor,
    z_b: &LatentTensor,
    label: &str,
) -> Result<SliceCurve> {
    if z_a.data.shape() != z_b.data.shape() {
        return Err(Error::Shape(format!(
            "latent shapes differ: {:?} vs {:?}",
            z_a.data.shape(),
            z_b.data.shape()
        )));
    }
    let mut values = Vec::with_capacity(z_a.t_slices());
    for t in 0..z_a.t_slices() {
        let d = z_a.slice(t) - z_b.slice(t);
        values.push(d.iter().map(|x| x * x).sum::<f64>().sqrt());
    }
    Ok(SliceCurve {
        values,
        label: label.to_string(),
        config: String::new(),
    })
}

/// Which per-slice objective the gradient curve differentiates. The
/// unsquared norm is the deviation itself; the squared form is what the
/// encoder-level baseline optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceObjective {
    Norm,
    SquaredNorm,
}

/// Per-slice gradient magnitude `g_t = ||grad_I d_t||_2`, computed with one
/// independent backward pass per slice. The norm's subgradient at an exact
/// zero deviation is taken as zero.
pub fn gradient_magnitude_curve(
    model: &I2vModel,
    image: &ArrayD<f64>,
    target: &LatentTensor,
    objective: SliceObjective,
    label: &str,
) -> Result<SliceCurve> {
    let t_slices = target.t_slices();
    let tgt_model = target.to_model_layout();
    let mut values = Vec::with_capacity(t_slices);
    for t in 0..t_slices {
        let mut g = Graph::new();
        let bound = model.bind(&mut g, false);
        let inode = g.input(image.clone());
        let pv = model.pseudo_video_graph(&mut g, inode, model.cfg.frames, false);
        let z = model.encode_graph(&mut g, &bound, pv);
        let tgt = g.constant(tgt_model.clone());
        let diff = g.sub(z, tgt);
        let sl = g.slice_axis(diff, 1, t, 1);
        let d_t = match objective {
            SliceObjective::Norm => g.l2_norm(sl),
            SliceObjective::SquaredNorm => {
                let sq = g.square(sl);
                g.sum(sq)
            }
        };
        let grads = g.backward(d_t);
        let gi = grads.get_or_zeros(inode, image.shape());
        let norm = gi.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite(format!("gradient of slice {t}")));
        }
        values.push(norm);
    }
    Ok(SliceCurve {
        values,
        label: label.to_string(),
        config: format!("{objective:?}"),
    })
}

/// Ordinary least-squares slope of `y` over index `0..n`.
pub fn ols_slope(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    if y.len() < 2 {
        return 0.0;
    }
    let mean_x = (n - 1.0) / 2.0;
    let mean_y = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &v) in y.iter().enumerate() {
        let dx = i as f64 - mean_x;
        num += dx * (v - mean_y);
        den += dx * dx;
    }
    num / den
}

/// Track two runs through denoising: at each pre-step state, estimate the
/// clean latent of both, decode, embed, and record the cosine distance.
/// The slope is fitted over the step index.
pub fn trajectory_divergence(
    model: &I2vModel,
    ref_run: &RunHandle,
    cmp_run: &RunHandle,
    extractor: &dyn FeatureExtractor,
) -> Result<TrajectoryDivergence> {
    let (rt, ct) = (&ref_run.trajectory, &cmp_run.trajectory);
    if rt.len() != ct.len() {
        return Err(Error::Config(format!(
            "trajectory lengths differ: {} vs {}",
            rt.len(),
            ct.len()
        )));
    }
    let steps = rt.len() - 1;
    let mut distances = Vec::with_capacity(steps);
    for i in 0..steps {
        let tau = rt.step_times[i];
        let ref_hat = model.predict_clean_latent(
            &rt.states[i],
            &rt.cond_latent,
            &ref_run.e_img,
            &ref_run.e_txt,
            tau,
        )?;
        let cmp_hat = model.predict_clean_latent(
            &ct.states[i],
            &ct.cond_latent,
            &cmp_run.e_img,
            &cmp_run.e_txt,
            tau,
        )?;
        let ref_frames = model.decode_latents(&LatentTensor::from_model_layout(
            &model.from_flow(&ref_hat),
            model.cfg.temporal_stride,
        ))?;
        let cmp_frames = model.decode_latents(&LatentTensor::from_model_layout(
            &model.from_flow(&cmp_hat),
            model.cfg.temporal_stride,
        ))?;
        let ea = extractor.embed(&ref_frames.frame(0));
        let eb = extractor.embed(&cmp_frames.frame(0));
        distances.push(1.0 - cosine_similarity(&ea, &eb));
    }
    Ok(TrajectoryDivergence {
        slope: ols_slope(&distances),
        distances,
        ref_label: ref_run.label.clone(),
        cmp_label: cmp_run.label.clone(),
    })
}

/// A sampling run plus the conditioning it was generated under.
pub struct RunHandle {
    pub trajectory: CollapseTrajectory,
    pub e_img: ArrayD<f64>,
    pub e_txt: ArrayD<f64>,
    pub label: String,
}

impl RunHandle {
    pub fn new(
        model: &I2vModel,
        image: &ArrayD<f64>,
        prompt_ids: &[usize],
        steps: usize,
        cfg_scale: f64,
        seed: u64,
        label: &str,
    ) -> Result<Self> {
        let padded = model.pad_text_ids(prompt_ids)?;
        let out = crate::i2v::sample(model, image, &padded, steps, cfg_scale, seed)?;
        Ok(Self {
            trajectory: out.trajectory,
            e_img: model.encode_image_semantic(image)?,
            e_txt: model.encode_text(&padded)?,
            label: label.to_string(),
        })
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// Write curves as CSV (`index,value,label`) plus an optional PNG plot.
/// Duplicate labels get a disambiguating `#n` suffix.
pub fn export_curves(
    curves: &[SliceCurve],
    csv_path: impl AsRef<std::path::Path>,
    plot_path: Option<&std::path::Path>,
) -> Result<()> {
    if curves.is_empty() {
        return Err(Error::Validation("nothing to export".into()));
    }
    let mut seen = std::collections::BTreeMap::<String, usize>::new();
    let mut labeled: Vec<(String, &SliceCurve)> = Vec::new();
    for c in curves {
        let count = seen.entry(c.label.clone()).or_insert(0);
        let label = if *count == 0 {
            c.label.clone()
        } else {
            format!("{}#{}", c.label, *count)
        };
        *count += 1;
        labeled.push((label, c));
    }
    if let Some(parent) = csv_path.as_ref().parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(csv_path.as_ref())
        .map_err(|e| Error::Artifact(format!("csv open: {e}")))?;
    w.write_record(["index", "value", "label"])
        .map_err(|e| Error::Artifact(format!("csv write: {e}")))?;
    for (label, c) in &labeled {
        for (i, v) in c.values.iter().enumerate() {
            w.write_record([i.to_string(), format!("{v:.17e}"), label.clone()])
                .map_err(|e| Error::Artifact(format!("csv write: {e}")))?;
        }
    }
    w.flush()?;
    if let Some(pp) = plot_path {
        let series: Vec<(String, Vec<f64>)> = labeled
            .iter()
            .map(|(l, c)| (l.clone(), c.values.clone()))
            .collect();
        render_line_plot(&series, pp)?;
    }
    Ok(())
}

/// Parse curves back from the CSV written by [`export_curves`].
pub fn import_curves(csv_path: impl AsRef<std::path::Path>) -> Result<Vec<SliceCurve>> {
    let mut r = csv::Reader::from_path(csv_path.as_ref())
        .map_err(|e| Error::Artifact(format!("csv open: {e}")))?;
    let mut order: Vec<String> = Vec::new();
    let mut map: std::collections::BTreeMap<String, Vec<(usize, f64)>> = Default::default();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Artifact(format!("csv read: {e}")))?;
        let idx: usize = rec[0]
            .parse()
            .map_err(|_| Error::Artifact("bad index".into()))?;
        let val: f64 = rec[1]
            .parse()
            .map_err(|_| Error::Artifact("bad value".into()))?;
        let label = rec[2].to_string();
        if !map.contains_key(&label) {
            order.push(label.clone());
        }
        map.entry(label).or_default().push((idx, val));
    }
    Ok(order
        .into_iter()
        .map(|label| {
            let mut pts = map.remove(&label).unwrap();
            pts.sort_by_key(|(i, _)| *i);
            SliceCurve {
                values: pts.into_iter().map(|(_, v)| v).collect(),
                label,
                config: String::new(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    fn latent(vals: Vec<f64>, shape: &[usize]) -> LatentTensor {
        LatentTensor {
            data: ArrayD::from_shape_vec(IxDyn(shape), vals).unwrap(),
            stride: 4,
        }
    }

    #[test]
    fn deviation_of_identical_latents_is_zero() {
        let z = latent(vec![0.5; 12], &[3, 1, 2, 2]);
        let c = latent_deviation_curve(&z, &z, "same").unwrap();
        assert_eq!(c.values, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn deviation_matches_hand_computed_norms() {
        // slice 0 diff = [3, 4] -> 5; slice 1 diff = [0, 0] -> 0
        let a = latent(vec![3.0, 4.0, 1.0, 1.0], &[2, 1, 1, 2]);
        let b = latent(vec![0.0, 0.0, 1.0, 1.0], &[2, 1, 1, 2]);
        let c = latent_deviation_curve(&a, &b, "hand").unwrap();
        assert!((c.values[0] - 5.0).abs() < 1e-12);
        assert_eq!(c.values[1], 0.0);
        // symmetric
        let c2 = latent_deviation_curve(&b, &a, "hand").unwrap();
        assert_eq!(c.values, c2.values);
    }

    #[test]
    fn deviation_shape_mismatch_is_error() {
        let a = latent(vec![0.0; 4], &[2, 1, 1, 2]);
        let b = latent(vec![0.0; 2], &[1, 1, 1, 2]);
        assert!(latent_deviation_curve(&a, &b, "x").is_err());
    }

    #[test]
    fn slope_matches_closed_form_on_linear_series() {
        // y = 3 + 0.25 i exactly
        let y: Vec<f64> = (0..7).map(|i| 3.0 + 0.25 * i as f64).collect();
        assert!((ols_slope(&y) - 0.25).abs() < 1e-9);
        // closed-form oracle on a quadratic: slope = cov(x,y)/var(x)
        let y2: Vec<f64> = (0..9).map(|i| (i * i) as f64 * 0.1 - 0.3).collect();
        let n = y2.len() as f64;
        let mx = (n - 1.0) / 2.0;
        let my = y2.iter().sum::<f64>() / n;
        let num: f64 = y2
            .iter()
            .enumerate()
            .map(|(i, v)| (i as f64 - mx) * (v - my))
            .sum();
        let den: f64 = (0..y2.len()).map(|i| (i as f64 - mx).powi(2)).sum();
        assert!((ols_slope(&y2) - num / den).abs() < 1e-9);
    }

    #[test]
    fn cv_and_min_max_ratio() {
        let flat = SliceCurve {
            values: vec![2.0, 2.0, 2.0],
            label: "flat".into(),
            config: String::new(),
        };
        assert_eq!(flat.coefficient_of_variation(), 0.0);
        assert_eq!(flat.min_max_ratio(), 1.0);
        let steep = SliceCurve {
            values: vec![4.0, 1.0, 0.1],
            label: "steep".into(),
            config: String::new(),
        };
        assert!(steep.coefficient_of_variation() > 0.5);
        assert!(steep.min_max_ratio() < 0.1);
    }

    #[test]
    fn export_round_trip_preserves_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curves.csv");
        let curves = vec![
            SliceCurve {
                values: vec![1.0, 0.5, 0.25],
                label: "a".into(),
                config: String::new(),
            },
            SliceCurve {
                values: vec![0.1, 0.2],
                label: "b".into(),
                config: String::new(),
            },
        ];
        export_curves(&curves, &path, None).unwrap();
        let back = import_curves(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].values, curves[0].values);
        assert_eq!(back[1].values, curves[1].values);
    }

    #[test]
    fn export_empty_list_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = export_curves(&[], dir.path().join("x.csv"), None).unwrap_err();
        assert!(err.to_string().contains("nothing to export"));
    }

    #[test]
    fn duplicate_labels_get_suffixes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.csv");
        let c = SliceCurve {
            values: vec![1.0],
            label: "same".into(),
            config: String::new(),
        };
        export_curves(&[c.clone(), c], &path, None).unwrap();
        let back = import_curves(&path).unwrap();
        let labels: Vec<_> = back.iter().map(|c| c.label.clone()).collect();
        assert_eq!(labels, vec!["same".to_string(), "same#1".to_string()]);
    }

    #[test]
    fn plot_renders_a_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plot.png");
        let curves = vec![SliceCurve {
            values: vec![1.0, 0.7, 0.2, 0.4],
            label: "d".into(),
            config: String::new(),
        }];
        export_curves(&curves, dir.path().join("c.csv"), Some(&path)).unwrap();
        assert!(path.exists());
        let img = image::open(&path).unwrap();
        assert!(img.width() > 100);
    }
}
