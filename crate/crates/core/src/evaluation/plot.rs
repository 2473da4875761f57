//! Minimal PNG charts drawn pixel by pixel (no text).

use std::path::Path;

use image::{Rgb, RgbImage};

use super::metrics::RocCurve;
use crate::error::{Error, Result};

const SIZE: u32 = 320;
const MARGIN: u32 = 24;
const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
];

fn canvas() -> RgbImage {
    let mut img = RgbImage::from_pixel(SIZE, SIZE, Rgb([255, 255, 255]));
    let axis = Rgb([0, 0, 0]);
    for t in MARGIN..=SIZE - MARGIN {
        img.put_pixel(MARGIN, t, axis);
        img.put_pixel(t, SIZE - MARGIN, axis);
    }
    img
}

/// Maps unit coordinates to pixels inside the plot area.
fn to_px(x: f64, y: f64) -> (i64, i64) {
    let span = (SIZE - 2 * MARGIN) as f64;
    (
        MARGIN as i64 + (x.clamp(0.0, 1.0) * span).round() as i64,
        (SIZE - MARGIN) as i64 - (y.clamp(0.0, 1.0) * span).round() as i64,
    )
}

fn line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), color: Rgb<u8>) {
    let (x0, y0) = to_px(a.0, a.1);
    let (x1, y1) = to_px(b.0, b.1);
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
    for s in 0..=steps {
        let x = x0 + (x1 - x0) * s / steps;
        let y = y0 + (y1 - y0) * s / steps;
        if (0..SIZE as i64).contains(&x) && (0..SIZE as i64).contains(&y) {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// ROC curves (FPR on x, TPR on y) with the chance diagonal in grey.
pub fn plot_roc(curves: &[&RocCurve], path: &Path) -> Result<()> {
    let mut img = canvas();
    line(&mut img, (0.0, 0.0), (1.0, 1.0), Rgb([190, 190, 190]));
    for (k, curve) in curves.iter().enumerate() {
        let color = Rgb(PALETTE[k % PALETTE.len()]);
        for w in curve.points.windows(2) {
            line(&mut img, (w[0].fpr, w[0].tpr), (w[1].fpr, w[1].tpr), color);
        }
    }
    save(&img, path)
}

/// Grouped bars, one group per entry, values in [0, 1]; bar `j` of every
/// group shares colour `j`.
pub fn plot_bars(groups: &[Vec<f64>], path: &Path) -> Result<()> {
    let mut img = canvas();
    let per_group = groups.iter().map(Vec::len).max().unwrap_or(0).max(1);
    let slots = groups.len() * (per_group + 1) + 1;
    let width = 1.0 / slots as f64;
    for (g, values) in groups.iter().enumerate() {
        for (j, &v) in values.iter().enumerate() {
            let left = (1 + g * (per_group + 1) + j) as f64 * width;
            let (x0, y0) = to_px(left, v);
            let (x1, y1) = to_px(left + width, 0.0);
            for x in x0..x1 {
                for y in y0..y1 {
                    img.put_pixel(x as u32, y as u32, Rgb(PALETTE[j % PALETTE.len()]));
                }
            }
        }
    }
    save(&img, path)
}
