//! Metrics files and the grouped bar chart comparing models.

use std::path::Path;

use crackfpn_core::metrics::MetricsReport;
use image::{Rgb, RgbImage};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::write_atomic;

#[derive(Serialize)]
struct Row<'a> {
    image_id: &'a str,
    iou: f64,
    dice_loss: f64,
    crack_pixels_label: u64,
    crack_pixels_pred: u64,
    images: usize,
}

/// One row per image ordered by id, then an `AGGREGATE` row with the means,
/// summed pixel counts and the image count.
pub fn metrics_csv(report: &MetricsReport) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for m in &report.images {
        w.serialize(Row {
            image_id: &m.image_id,
            iou: m.iou,
            dice_loss: m.dice_loss,
            crack_pixels_label: m.crack_pixels_label,
            crack_pixels_pred: m.crack_pixels_pred,
            images: 1,
        })
        .expect("in-memory write");
    }
    w.serialize(Row {
        image_id: "AGGREGATE",
        iou: report.miou,
        dice_loss: report.mean_dice_loss,
        crack_pixels_label: report.images.iter().map(|m| m.crack_pixels_label).sum(),
        crack_pixels_pred: report.images.iter().map(|m| m.crack_pixels_pred).sum(),
        images: report.count,
    })
    .expect("in-memory write");
    w.into_inner().expect("in-memory flush")
}

pub fn write_report(report: &MetricsReport, out_dir: &Path) -> Result<()> {
    write_atomic(&out_dir.join("metrics.csv"), &metrics_csv(report))?;
    let json = serde_json::to_vec_pretty(report).expect("report serializes");
    write_atomic(&out_dir.join("metrics.json"), &json)
}

pub fn read_report(path: &Path) -> Result<MetricsReport> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::input(path, e.to_string()))
}

const MIOU_COLOR: Rgb<u8> = Rgb([52, 101, 164]);
const DICE_COLOR: Rgb<u8> = Rgb([230, 126, 34]);
const INK: Rgb<u8> = Rgb([40, 40, 40]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);

/// 3×5 glyphs for digits and the decimal point, one row per `u8`.
fn glyph(c: char) -> [u8; 5] {
    match c {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        '.' => [0, 0, 0, 0, 2],
        _ => [0; 5],
    }
}

fn text(img: &mut RgbImage, x: i64, y: i64, s: &str, scale: i64, color: Rgb<u8>) {
    for (k, c) in s.chars().enumerate() {
        for (row, bits) in glyph(c).iter().enumerate() {
            for col in 0..3 {
                if bits >> (2 - col) & 1 == 0 {
                    continue;
                }
                for dy in 0..scale {
                    for dx in 0..scale {
                        let px = x + (k as i64 * 4 + col) * scale + dx;
                        let py = y + row as i64 * scale + dy;
                        if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height() {
                            img.put_pixel(px as u32, py as u32, color);
                        }
                    }
                }
            }
        }
    }
}

fn fill(img: &mut RgbImage, x0: u32, y0: u32, x1: u32, y1: u32, color: Rgb<u8>) {
    for y in y0..y1.min(img.height()) {
        for x in x0..x1.min(img.width()) {
            img.put_pixel(x, y, color);
        }
    }
}

/// Grouped bars per model: mIoU (blue) then mean Dice Loss (orange), each
/// labelled with its value; models are numbered 1.. in the given order.
pub fn bar_chart(models: &[(f64, f64)]) -> RgbImage {
    let (plot_h, top, left, group) = (240u32, 40u32, 40u32, 110u32);
    let width = left + group * models.len().max(1) as u32 + 20;
    let height = top + plot_h + 40;
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let y_of = |v: f64| top + plot_h - (v.clamp(0.0, 1.0) * plot_h as f64).round() as u32;
    for tick in 0..=10 {
        let y = y_of(tick as f64 / 10.0);
        fill(&mut img, left, y, width - 10, y + 1, GRID);
        if tick % 2 == 0 {
            text(&mut img, 4, y as i64 - 5, &format!("{:.1}", tick as f64 / 10.0), 2, INK);
        }
    }
    for (i, &(miou, dice)) in models.iter().enumerate() {
        let x = left + 15 + group * i as u32;
        for (k, (v, color)) in [(miou, MIOU_COLOR), (dice, DICE_COLOR)].into_iter().enumerate() {
            let bx = x + k as u32 * 42;
            fill(&mut img, bx, y_of(v), bx + 36, top + plot_h, color);
            text(&mut img, bx as i64, y_of(v) as i64 - 14, &format!("{v:.2}"), 2, INK);
        }
        text(&mut img, x as i64 + 34, (top + plot_h + 12) as i64, &format!("{}", i + 1), 2, INK);
    }
    fill(&mut img, left, top + plot_h, width - 10, top + plot_h + 2, INK);
    fill(&mut img, left, top, left + 2, top + plot_h, INK);
    img
}

pub fn write_chart(models: &[(f64, f64)], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    bar_chart(models)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}
