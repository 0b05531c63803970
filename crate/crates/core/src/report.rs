//! CSV tables and simple raster plots, each plot accompanied by a plain-text
//! `.dat` file with the plotted numbers.

use std::fmt::Write as _;
use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

/// Serde adapter writing non-finite floats as the strings `inf`, `-inf` and
/// `nan`, which JSON cannot represent as numbers.
pub mod nonfinite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a number: {other:?}"))),
            },
        }
    }
}

/// RFC 4180 field quoting.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn csv_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    let line = |fields: Vec<String>| fields.iter().map(|f| csv_field(f)).collect::<Vec<_>>().join(",");
    out.push_str(&line(header.iter().map(|s| s.to_string()).collect()));
    out.push_str("\r\n");
    for r in rows {
        out.push_str(&line(r.clone()));
        out.push_str("\r\n");
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One rate-distortion operating point.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RdPoint {
    pub lambda: f64,
    pub bits: u32,
    pub bpp: f64,
    #[serde(with = "nonfinite")]
    pub psnr: f64,
    pub ms_ssim: f64,
    pub artifact: String,
}

/// Rows sorted by bpp ascending.
pub fn rd_table(points: &[RdPoint]) -> String {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
    let rows: Vec<Vec<String>> = pts
        .iter()
        .map(|p| {
            vec![
                format!("{}", p.lambda),
                p.bits.to_string(),
                format!("{}", p.bpp),
                crate::losses::format_metric(p.psnr),
                format!("{}", p.ms_ssim),
                p.artifact.clone(),
            ]
        })
        .collect();
    csv_table(&["lambda", "bits", "bpp", "psnr", "ms_ssim", "artifact"], &rows)
}

pub fn param_table(dist: &[(String, usize)]) -> String {
    let total: usize = dist.iter().map(|(_, n)| n).sum();
    let mut rows: Vec<Vec<String>> = dist
        .iter()
        .map(|(l, n)| vec![l.clone(), n.to_string(), format!("{:.4}", *n as f64 / total.max(1) as f64)])
        .collect();
    rows.push(vec!["total".into(), total.to_string(), "1.0000".into()]);
    csv_table(&["stage_label", "param_count", "share"], &rows)
}

const W: u32 = 640;
const H: u32 = 400;
const MARGIN: u32 = 40;
const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
const BLUE: Rgb<u8> = Rgb([31, 119, 180]);

fn canvas() -> RgbImage {
    let mut img = RgbImage::from_pixel(W, H, WHITE);
    for i in 0..=4 {
        let y = MARGIN + i * (H - 2 * MARGIN) / 4;
        for x in MARGIN..W - MARGIN {
            img.put_pixel(x, y, GRID);
        }
    }
    for x in MARGIN..W - MARGIN {
        img.put_pixel(x, H - MARGIN, BLACK);
    }
    for y in MARGIN..=H - MARGIN {
        img.put_pixel(MARGIN, y, BLACK);
    }
    img
}

fn line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), color: Rgb<u8>) {
    let n = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for i in 0..=n {
        let t = i as f64 / n as f64;
        let (x, y) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        if x >= 0.0 && y >= 0.0 && (x as u32) < W && (y as u32) < H {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

fn span(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().copied().filter(|x| x.is_finite()).fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().filter(|x| x.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

/// Line plot of `(x, y)` sorted by `x`, written as `<stem>.png` and
/// `<stem>.dat`.
pub fn line_plot(stem: &Path, x_label: &str, y_label: &str, points: &[(f64, f64)]) -> Result<()> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut dat = format!("# {x_label} {y_label}\n");
    for (x, y) in &pts {
        let _ = writeln!(dat, "{x} {}", crate::losses::format_metric(*y));
    }
    write_text(&stem.with_extension("dat"), &dat)?;

    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let ((x0, x1), (y0, y1)) = (span(&xs), span(&ys));
    let px = |x: f64| MARGIN as f64 + (x - x0) / (x1 - x0) * (W - 2 * MARGIN) as f64;
    let py = |y: f64| (H - MARGIN) as f64 - (y - y0) / (y1 - y0) * (H - 2 * MARGIN) as f64;
    let mut img = canvas();
    let finite: Vec<(f64, f64)> = pts.iter().copied().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
    for w in finite.windows(2) {
        line(&mut img, (px(w[0].0), py(w[0].1)), (px(w[1].0), py(w[1].1)), BLUE);
    }
    for &(x, y) in &finite {
        let (cx, cy) = (px(x), py(y));
        for dx in -3..=3 {
            for dy in -3..=3 {
                line(&mut img, (cx + dx as f64, cy + dy as f64), (cx + dx as f64, cy + dy as f64), BLUE);
            }
        }
    }
    save_png(&img, &stem.with_extension("png"))
}

/// Bar chart written as `<stem>.png` and `<stem>.dat` (`stage_label
/// param_count`).
pub fn bar_chart(stem: &Path, bars: &[(String, usize)]) -> Result<()> {
    let mut dat = String::from("# stage_label param_count\n");
    for (l, n) in bars {
        let _ = writeln!(dat, "{l} {n}");
    }
    write_text(&stem.with_extension("dat"), &dat)?;

    let mut img = canvas();
    let max = bars.iter().map(|b| b.1).max().unwrap_or(1).max(1) as f64;
    let slot = (W - 2 * MARGIN) as f64 / bars.len().max(1) as f64;
    for (i, (_, n)) in bars.iter().enumerate() {
        let h = *n as f64 / max * (H - 2 * MARGIN) as f64;
        let left = MARGIN as f64 + i as f64 * slot + 0.15 * slot;
        let right = left + 0.7 * slot;
        let mut x = left;
        while x <= right {
            line(&mut img, (x, (H - MARGIN) as f64 - 1.0), (x, (H - MARGIN) as f64 - h), BLUE);
            x += 1.0;
        }
    }
    save_png(&img, &stem.with_extension("png"))
}
