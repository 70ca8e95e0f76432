//! PNG artifacts: sample grids and loss-curve plots.

use std::path::Path;

use anyhow::{Context, Result};
use image::{Rgb, RgbImage};
use topogan_core::gan::GanHistory;
use topogan_core::img::Rgb8Image;

const TILE: u32 = 64;
const GAP: u32 = 2;

fn blit(canvas: &mut RgbImage, img: &Rgb8Image, x0: u32, y0: u32) {
    for y in 0..img.height.min(TILE as usize) {
        for x in 0..img.width.min(TILE as usize) {
            let p = img.pixel(x, y);
            canvas.put_pixel(x0 + x as u32, y0 + y as u32, Rgb(p));
        }
    }
}

/// Grid with one column per class and `rows` samples down each column.
pub fn sample_grid(columns: &[(String, Vec<Rgb8Image>)], rows: usize, path: &Path) -> Result<()> {
    let cols = columns.len().max(1) as u32;
    let w = cols * (TILE + GAP) + GAP;
    let h = rows as u32 * (TILE + GAP) + GAP;
    let mut canvas = RgbImage::from_pixel(w, h, Rgb([245, 245, 245]));
    for (ci, (_, samples)) in columns.iter().enumerate() {
        for (ri, img) in samples.iter().take(rows).enumerate() {
            let x0 = GAP + ci as u32 * (TILE + GAP);
            let y0 = GAP + ri as u32 * (TILE + GAP);
            blit(&mut canvas, img, x0, y0);
        }
    }
    canvas.save(path).with_context(|| format!("write {path:?}"))?;
    Ok(())
}

/// One row per class: alternating (original, synthesized) tile pairs.
pub fn pair_grid(rows: &[(String, Vec<(Rgb8Image, Rgb8Image)>)], path: &Path) -> Result<()> {
    let pairs = rows.iter().map(|(_, p)| p.len()).max().unwrap_or(1) as u32;
    let w = pairs * (2 * TILE + 3 * GAP) + GAP;
    let h = rows.len().max(1) as u32 * (TILE + GAP) + GAP;
    let mut canvas = RgbImage::from_pixel(w, h, Rgb([245, 245, 245]));
    for (ri, (_, row)) in rows.iter().enumerate() {
        let y0 = GAP + ri as u32 * (TILE + GAP);
        for (pi, (real, synth)) in row.iter().enumerate() {
            let x0 = GAP + pi as u32 * (2 * TILE + 3 * GAP);
            blit(&mut canvas, real, x0, y0);
            blit(&mut canvas, synth, x0 + TILE + GAP, y0);
        }
    }
    canvas.save(path).with_context(|| format!("write {path:?}"))?;
    Ok(())
}

const CURVE_COLORS: [[u8; 3]; 8] = [
    [214, 39, 40],
    [31, 119, 180],
    [44, 160, 44],
    [255, 127, 14],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [23, 190, 207],
];

/// Discriminator (solid) and generator (dimmed) loss curves per class.
pub fn loss_plot(histories: &[(usize, &GanHistory)], path: &Path) -> Result<()> {
    let (w, h) = (720u32, 420u32);
    let margin = 40u32;
    let mut canvas = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    // Axes.
    for x in margin..w - margin / 2 {
        canvas.put_pixel(x, h - margin, Rgb([0, 0, 0]));
    }
    for y in margin / 2..=h - margin {
        canvas.put_pixel(margin, y, Rgb([0, 0, 0]));
    }

    let max_len = histories.iter().map(|(_, g)| g.len()).max().unwrap_or(1);
    let mut max_loss = 0.0f64;
    for (_, g) in histories {
        for v in g.d_loss.iter().chain(&g.g_loss) {
            if v.is_finite() {
                max_loss = max_loss.max(*v);
            }
        }
    }
    let max_loss = max_loss.max(1e-9);

    let plot_w = (w - margin - margin / 2) as f64;
    let plot_h = (h - margin - margin / 2) as f64;
    let to_xy = |i: usize, v: f64| -> (i64, i64) {
        let x = margin as f64 + plot_w * i as f64 / (max_len.max(2) - 1) as f64;
        let y = (h - margin) as f64 - plot_h * (v / max_loss).clamp(0.0, 1.0);
        (x as i64, y as i64)
    };
    for (label, g) in histories {
        let color = CURVE_COLORS[label % CURVE_COLORS.len()];
        let dim = [
            color[0] / 2 + 90,
            color[1] / 2 + 90,
            color[2] / 2 + 90,
        ];
        draw_series(&mut canvas, &g.d_loss, color, &to_xy);
        draw_series(&mut canvas, &g.g_loss, dim, &to_xy);
    }
    canvas.save(path).with_context(|| format!("write {path:?}"))?;
    Ok(())
}

fn draw_series(
    canvas: &mut RgbImage,
    values: &[f64],
    color: [u8; 3],
    to_xy: &impl Fn(usize, f64) -> (i64, i64),
) {
    for i in 1..values.len() {
        let (x0, y0) = to_xy(i - 1, values[i - 1]);
        let (x1, y1) = to_xy(i, values[i]);
        draw_line(canvas, x0, y0, x1, y1, color);
    }
    if values.len() == 1 {
        let (x, y) = to_xy(0, values[0]);
        put(canvas, x, y, color);
    }
}

fn draw_line(canvas: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, color: [u8; 3]) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
    for s in 0..=steps {
        let x = x0 + (x1 - x0) * s / steps;
        let y = y0 + (y1 - y0) * s / steps;
        put(canvas, x, y, color);
    }
}

fn put(canvas: &mut RgbImage, x: i64, y: i64, color: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as u32) < canvas.width() && (y as u32) < canvas.height() {
        canvas.put_pixel(x as u32, y as u32, Rgb(color));
    }
}
