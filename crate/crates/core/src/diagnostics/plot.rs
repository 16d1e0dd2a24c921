//! Minimal PNG line plots for curve exports. Fixed palette, light grid,
//! no text rendering (labels live in the CSV next to the plot).

use std::path::Path;

use crate::error::{Error, Result};

const W: u32 = 640;
const H: u32 = 400;
const MARGIN: f64 = 40.0;

const PALETTE: [[u8; 3]; 6] = [
    [52, 120, 219],
    [231, 76, 60],
    [84, 130, 53],
    [191, 144, 0],
    [142, 68, 173],
    [22, 160, 133],
];

pub fn render_line_plot(series: &[(String, Vec<f64>)], path: &Path) -> Result<()> {
    if series.is_empty() {
        return Err(Error::Validation("nothing to plot".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut max_len = 0usize;
    for (_, ys) in series {
        for &y in ys {
            lo = lo.min(y);
            hi = hi.max(y);
        }
        max_len = max_len.max(ys.len());
    }
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::NonFinite("plot values".into()));
    }
    if (hi - lo).abs() < 1e-12 {
        hi = lo + 1.0;
    }

    let mut img = image::RgbImage::from_pixel(W, H, image::Rgb([255, 255, 255]));
    // light grid
    for gy in 0..5 {
        let y = (MARGIN + (H as f64 - 2.0 * MARGIN) * gy as f64 / 4.0) as u32;
        for x in (MARGIN as u32)..(W - MARGIN as u32) {
            img.put_pixel(x, y, image::Rgb([230, 230, 230]));
        }
    }

    let to_px = |i: usize, y: f64, n: usize| -> (f64, f64) {
        let x = MARGIN
            + (W as f64 - 2.0 * MARGIN) * if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
        let yy = H as f64 - MARGIN - (H as f64 - 2.0 * MARGIN) * (y - lo) / (hi - lo);
        (x, yy)
    };

    for (si, (_, ys)) in series.iter().enumerate() {
        let color = image::Rgb(PALETTE[si % PALETTE.len()]);
        for w in ys.windows(2).enumerate() {
            let (i, pair) = w;
            let (x0, y0) = to_px(i, pair[0], ys.len());
            let (x1, y1) = to_px(i + 1, pair[1], ys.len());
            draw_segment(&mut img, x0, y0, x1, y1, color);
        }
        for (i, &y) in ys.iter().enumerate() {
            let (x, yy) = to_px(i, y, ys.len());
            draw_dot(&mut img, x, yy, color);
        }
    }

    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    img.save(path)
        .map_err(|e| Error::Artifact(format!("plot write {}: {e}", path.display())))?;
    Ok(())
}

fn draw_segment(img: &mut image::RgbImage, x0: f64, y0: f64, x1: f64, y1: f64, c: image::Rgb<u8>) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = x0 + (x1 - x0) * t;
        let y = y0 + (y1 - y0) * t;
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, c);
        }
    }
}

fn draw_dot(img: &mut image::RgbImage, x: f64, y: f64, c: image::Rgb<u8>) {
    for dy in -1i32..=1 {
        for dx in -1i32..=1 {
            let xx = x as i32 + dx;
            let yy = y as i32 + dy;
            if xx >= 0 && yy >= 0 && (xx as u32) < img.width() && (yy as u32) < img.height() {
                img.put_pixel(xx as u32, yy as u32, c);
            }
        }
    }
}
