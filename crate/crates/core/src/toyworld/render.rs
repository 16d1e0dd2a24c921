//! Rasterizer for moving-shape scenes. 2x supersampled edges, pure f64.

use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use super::{Motion, Scene, ShapeKind};
use crate::error::{Error, Result};
use crate::rng::DetRng;

/// Canvas background intensity (all channels).
pub const BACKGROUND: f64 = 0.08;

/// A frame sequence in `[T, C, H, W]` layout, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub data: ArrayD<f64>,
}

impl Video {
    pub fn new(data: ArrayD<f64>) -> Self {
        assert_eq!(data.ndim(), 4, "video must be [T, C, H, W]");
        Self { data }
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[3]
    }

    /// Owned copy of frame `t` as `[C, H, W]`.
    pub fn frame(&self, t: usize) -> ArrayD<f64> {
        self.data
            .index_axis(ndarray::Axis(0), t)
            .as_standard_layout()
            .to_owned()
    }

    /// Repack to the model's `[C, T, H, W]` layout.
    pub fn to_model_layout(&self) -> ArrayD<f64> {
        self.data
            .view()
            .permuted_axes(IxDyn(&[1, 0, 2, 3]))
            .as_standard_layout()
            .to_owned()
    }

    /// Inverse of [`Video::to_model_layout`].
    pub fn from_model_layout(model: &ArrayD<f64>) -> Self {
        let data = model
            .view()
            .permuted_axes(IxDyn(&[1, 0, 2, 3]))
            .as_standard_layout()
            .to_owned();
        Self::new(data)
    }

    /// Persist as zero-padded `frame_0000.png` files (8-bit RGB).
    pub fn save_png_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        assert_eq!(self.channels(), 3, "png export expects RGB");
        let (h, w) = (self.height(), self.width());
        for t in 0..self.frames() {
            let mut img = image::RgbImage::new(w as u32, h as u32);
            for y in 0..h {
                for x in 0..w {
                    let px = [
                        quantize(self.data[[t, 0, y, x]]),
                        quantize(self.data[[t, 1, y, x]]),
                        quantize(self.data[[t, 2, y, x]]),
                    ];
                    img.put_pixel(x as u32, y as u32, image::Rgb(px));
                }
            }
            let path = dir.join(format!("frame_{t:04}.png"));
            img.save(&path)
                .map_err(|e| Error::Artifact(format!("png write {}: {e}", path.display())))?;
        }
        Ok(())
    }

    /// Load a `frame_0000.png`-style directory written by `save_png_dir`.
    pub fn load_png_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut frames = Vec::new();
        for t in 0.. {
            let path = dir.join(format!("frame_{t:04}.png"));
            if !path.exists() {
                break;
            }
            let img = image::open(&path)
                .map_err(|e| Error::Artifact(format!("png read {}: {e}", path.display())))?
                .into_rgb8();
            let (w, h) = (img.width() as usize, img.height() as usize);
            let mut frame = ArrayD::<f64>::zeros(IxDyn(&[3, h, w]));
            for y in 0..h {
                for x in 0..w {
                    let px = img.get_pixel(x as u32, y as u32);
                    for c in 0..3 {
                        frame[[c, y, x]] = px.0[c] as f64 / 255.0;
                    }
                }
            }
            frames.push(frame);
        }
        if frames.is_empty() {
            return Err(Error::Artifact(format!(
                "no frame_0000.png under {}",
                dir.display()
            )));
        }
        let (c, h, w) = (frames[0].shape()[0], frames[0].shape()[1], frames[0].shape()[2]);
        let mut data = ArrayD::<f64>::zeros(IxDyn(&[frames.len(), c, h, w]));
        for (t, f) in frames.iter().enumerate() {
            data.index_axis_mut(ndarray::Axis(0), t).assign(f);
        }
        Ok(Self::new(data))
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Intensity-weighted centroid of a `[C, H, W]` frame (weights are the
/// summed absolute deviation from the background). Returns `(x, y)` in pixel
/// coordinates, or `None` for an all-background frame.
pub fn intensity_centroid(frame: &ArrayD<f64>) -> Option<(f64, f64)> {
    let (c, h, w) = (frame.shape()[0], frame.shape()[1], frame.shape()[2]);
    let mut total = 0.0;
    let mut sx = 0.0;
    let mut sy = 0.0;
    for y in 0..h {
        for x in 0..w {
            let mut wgt = 0.0;
            for ci in 0..c {
                wgt += (frame[[ci, y, x]] - BACKGROUND).abs();
            }
            total += wgt;
            sx += wgt * x as f64;
            sy += wgt * y as f64;
        }
    }
    (total > 1e-9).then(|| (sx / total, sy / total))
}

struct Layout {
    half_extent: f64,
    path: PathLaw,
}

enum PathLaw {
    Linear { start: (f64, f64), dir: (f64, f64) },
    Circular { center: (f64, f64), radius: f64, phase: f64 },
}

impl Layout {
    fn center_at(&self, t: usize, speed: f64) -> (f64, f64) {
        match &self.path {
            PathLaw::Linear { start, dir } => (
                start.0 + dir.0 * speed * t as f64,
                start.1 + dir.1 * speed * t as f64,
            ),
            PathLaw::Circular {
                center,
                radius,
                phase,
            } => {
                let omega = if *radius > 0.0 { speed / radius } else { 0.0 };
                let a = phase + omega * t as f64;
                (center.0 + radius * a.cos(), center.1 + radius * a.sin())
            }
        }
    }
}

fn plan_layout(scene: &Scene, t_frames: usize, h: usize, w: usize) -> Result<Layout> {
    let mut rng = DetRng::new(scene.seed, "scene-layout");
    let side = h.min(w) as f64;
    let half_extent = rng.uniform(side / 8.0, side / 5.5);
    let m = 0.5 + half_extent; // closest the center may come to any edge
    let travel = scene.speed * (t_frames.saturating_sub(1)) as f64;

    let span = |lo: f64, hi: f64, u: f64| lo + u * (hi - lo);
    let (ux, uy) = (rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0));

    let path = match scene.motion {
        Motion::Right | Motion::Left | Motion::Up | Motion::Down => {
            let dir = match scene.motion {
                Motion::Right => (1.0, 0.0),
                Motion::Left => (-1.0, 0.0),
                Motion::Up => (0.0, -1.0),
                Motion::Down => (0.0, 1.0),
                Motion::Circular => unreachable!(),
            };
            // shrink the admissible start region by the full travel
            let (mut xlo, mut xhi) = (m, w as f64 - m);
            let (mut ylo, mut yhi) = (m, h as f64 - m);
            match scene.motion {
                Motion::Right => xhi -= travel,
                Motion::Left => xlo += travel,
                Motion::Up => ylo += travel,
                Motion::Down => yhi -= travel,
                Motion::Circular => unreachable!(),
            }
            if xlo > xhi || ylo > yhi {
                return Err(Error::Validation(format!(
                    "shape exits canvas: speed {} over {} frames does not fit a {}x{} canvas",
                    scene.speed, t_frames, w, h
                )));
            }
            PathLaw::Linear {
                start: (span(xlo, xhi, ux), span(ylo, yhi, uy)),
                dir,
            }
        }
        Motion::Circular => {
            let center = (w as f64 / 2.0, h as f64 / 2.0);
            let avail = (side / 2.0 - m).max(0.0);
            if avail < 1.0 {
                return Err(Error::Validation(format!(
                    "shape exits canvas: no room for a circular path on {}x{}",
                    w, h
                )));
            }
            PathLaw::Circular {
                center,
                radius: span(avail * 0.5, avail, ux),
                phase: uy * std::f64::consts::TAU,
            }
        }
    };
    Ok(Layout { half_extent, path })
}

fn covered(shape: ShapeKind, cx: f64, cy: f64, r: f64, px: f64, py: f64) -> bool {
    let (dx, dy) = (px - cx, py - cy);
    match shape {
        ShapeKind::Square => dx.abs() <= r && dy.abs() <= r,
        ShapeKind::Circle => dx * dx + dy * dy <= r * r,
        ShapeKind::Triangle => {
            // isoceles, apex up: (0,-r), (-r,r), (r,r) in local coords
            let v = [(0.0, -r), (-r, r), (r, r)];
            let sign = |a: (f64, f64), b: (f64, f64), p: (f64, f64)| {
                (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
            };
            let p = (dx, dy);
            let d0 = sign(v[0], v[1], p);
            let d1 = sign(v[1], v[2], p);
            let d2 = sign(v[2], v[0], p);
            let has_neg = d0 < 0.0 || d1 < 0.0 || d2 < 0.0;
            let has_pos = d0 > 0.0 || d1 > 0.0 || d2 > 0.0;
            !(has_neg && has_pos)
        }
    }
}

/// Render `t_frames` frames of a scene onto an `h x w` RGB canvas.
///
/// Frame `t` places the shape at its motion-law position. Edges are
/// anti-aliased by averaging a 2x2 subsample grid per pixel. Fails if the
/// shape would leave the canvas on any frame.
pub fn render_scene(scene: &Scene, t_frames: usize, h: usize, w: usize) -> Result<Video> {
    if t_frames < 1 {
        return Err(Error::Config("render_scene: need at least 1 frame".into()));
    }
    if h < 16 || w < 16 {
        return Err(Error::Config("render_scene: canvas must be >= 16x16".into()));
    }
    if scene.speed < 0.0 {
        return Err(Error::Config("render_scene: negative speed".into()));
    }
    let layout = plan_layout(scene, t_frames, h, w)?;
    let r = layout.half_extent;
    let rgb = scene.color.rgb();

    let mut data = ArrayD::<f64>::from_elem(IxDyn(&[t_frames, 3, h, w]), BACKGROUND);
    for t in 0..t_frames {
        let (cx, cy) = layout.center_at(t, scene.speed);
        if cx - r < 0.0 || cx + r > w as f64 || cy - r < 0.0 || cy + r > h as f64 {
            return Err(Error::Validation(format!(
                "shape exits canvas at frame {t} (center {cx:.2},{cy:.2}, extent {r:.2})"
            )));
        }
        for y in 0..h {
            for x in 0..w {
                let mut cov = 0.0;
                for (sy, sx) in [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)] {
                    if covered(scene.shape, cx, cy, r, x as f64 + sx, y as f64 + sy) {
                        cov += 0.25;
                    }
                }
                if cov > 0.0 {
                    for c in 0..3 {
                        data[[t, c, y, x]] = BACKGROUND + cov * (rgb[c] - BACKGROUND);
                    }
                }
            }
        }
    }
    Ok(Video::new(data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toyworld::{Color, Motion, Scene, ShapeKind};

    fn scene(motion: Motion, speed: f64, seed: u64) -> Scene {
        Scene {
            shape: ShapeKind::Square,
            color: Color::Red,
            motion,
            speed,
            seed,
        }
    }

    #[test]
    fn zero_speed_gives_identical_frames() {
        let v = render_scene(&scene(Motion::Right, 0.0, 3), 5, 32, 32).unwrap();
        let f0 = v.frame(0);
        for t in 1..5 {
            assert_eq!(v.frame(t), f0);
        }
    }

    #[test]
    fn rightward_motion_moves_centroid_exactly_speed_per_frame() {
        let v = render_scene(&scene(Motion::Right, 2.0, 7), 3, 32, 32).unwrap();
        let c0 = intensity_centroid(&v.frame(0)).unwrap();
        let c1 = intensity_centroid(&v.frame(1)).unwrap();
        let c2 = intensity_centroid(&v.frame(2)).unwrap();
        assert!((c1.0 - c0.0 - 2.0).abs() < 1e-9, "dx {}", c1.0 - c0.0);
        assert!((c2.0 - c1.0 - 2.0).abs() < 1e-9);
        assert!((c1.1 - c0.1).abs() < 1e-9);
    }

    #[test]
    fn rendering_is_bitwise_deterministic() {
        let s = scene(Motion::Circular, 1.5, 99);
        let a = render_scene(&s, 9, 32, 32).unwrap();
        let b = render_scene(&s, 9, 32, 32).unwrap();
        assert_eq!(a.data, b.data);
        for (x, y) in a.data.iter().zip(b.data.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn excessive_speed_is_rejected() {
        let err = render_scene(&scene(Motion::Right, 10.0, 1), 9, 32, 32);
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn values_stay_in_unit_range() {
        let v = render_scene(&scene(Motion::Down, 1.0, 5), 9, 32, 32).unwrap();
        assert!(v.data.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn png_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let v = render_scene(&scene(Motion::Left, 1.0, 2), 3, 32, 32).unwrap();
        v.save_png_dir(dir.path()).unwrap();
        let back = Video::load_png_dir(dir.path()).unwrap();
        assert_eq!(back.frames(), 3);
        for (a, b) in v.data.iter().zip(back.data.iter()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn caption_motion_matches_measured_displacement() {
        // round-trip invariant: rendered displacement agrees with the motion token
        for (motion, seed) in [
            (Motion::Right, 1u64),
            (Motion::Left, 2),
            (Motion::Up, 3),
            (Motion::Down, 4),
        ] {
            let s = scene(motion, 1.5, seed);
            let v = render_scene(&s, 9, 32, 32).unwrap();
            let c0 = intensity_centroid(&v.frame(0)).unwrap();
            let c8 = intensity_centroid(&v.frame(8)).unwrap();
            let (dx, dy) = (c8.0 - c0.0, c8.1 - c0.1);
            match motion {
                Motion::Right => assert!(dx > 0.0 && dx.abs() > dy.abs()),
                Motion::Left => assert!(dx < 0.0 && dx.abs() > dy.abs()),
                Motion::Up => assert!(dy < 0.0 && dy.abs() > dx.abs()),
                Motion::Down => assert!(dy > 0.0 && dy.abs() > dx.abs()),
                Motion::Circular => unreachable!(),
            }
        }
        // circular: centroid positions sweep an arc, so the pointwise radius
        // from the canvas center stays near-constant while the angle advances
        let s = scene(Motion::Circular, 1.5, 5);
        let v = render_scene(&s, 9, 32, 32).unwrap();
        let center = (16.0, 16.0);
        let mut angles = Vec::new();
        for t in 0..9 {
            let c = intensity_centroid(&v.frame(t)).unwrap();
            angles.push((c.1 - center.1).atan2(c.0 - center.0));
        }
        let mut total_turn = 0.0;
        for w in angles.windows(2) {
            let mut d = w[1] - w[0];
            while d > std::f64::consts::PI {
                d -= std::f64::consts::TAU;
            }
            while d < -std::f64::consts::PI {
                d += std::f64::consts::TAU;
            }
            total_turn += d.abs();
        }
        assert!(total_turn > 0.3, "circular path should advance in angle");
    }
}
