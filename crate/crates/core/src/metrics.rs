//! Full-reference quality metrics: PSNR and single-scale SSIM.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize, Serializer};

use crate::color::rgb_to_ycbcr;
use crate::error::{Error, Result};
use crate::image::{ColorSpace, PlanarImage};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsimMode {
    /// SSIM per RGB channel, averaged.
    #[default]
    RgbMean,
    /// SSIM on the BT.601 luma plane only.
    Luma,
}

fn check_pair(a: &PlanarImage, b: &PlanarImage) -> Result<()> {
    if !a.same_dims(b) || a.channels() != b.channels() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )));
    }
    Ok(())
}

pub fn mse(a: &PlanarImage, b: &PlanarImage) -> Result<f64> {
    check_pair(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// `10 log10(1 / MSE)` over every sample, peak value 1. Identical images
/// give `+inf`.
pub fn psnr(a: &PlanarImage, b: &PlanarImage) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / m).log10())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable Gaussian filter, valid region only.
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let oh = h + 1 - SSIM_WINDOW;
    let ow = w + 1 - SSIM_WINDOW;
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        let line = &src[r * w..(r + 1) * w];
        for c in 0..ow {
            rows[r * ow + c] = k.iter().zip(&line[c..c + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                acc += kv * rows[(r + t) * ow + c];
            }
            out[r * ow + c] = acc;
        }
    }
    out
}

/// Mean SSIM of one plane pair.
pub fn ssim_plane(a: &[f32], b: &[f32], h: usize, w: usize) -> f64 {
    let k = gaussian_window();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let x: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let mx = filter_valid(&x, h, w, &k);
    let my = filter_valid(&y, h, w, &k);
    let sxx = filter_valid(&xx, h, w, &k);
    let syy = filter_valid(&yy, h, w, &k);
    let sxy = filter_valid(&xy, h, w, &k);
    let n = mx.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ux, uy) = (mx[i], my[i]);
        let vx = sxx[i] - ux * ux;
        let vy = syy[i] - uy * uy;
        let cov = sxy[i] - ux * uy;
        let num = (2.0 * ux * uy + c1) * (2.0 * cov + c2);
        let den = (ux * ux + uy * uy + c1) * (vx + vy + c2);
        total += num / den;
    }
    total / n as f64
}

/// Single-scale SSIM (11x11 Gaussian window, sigma 1.5, K1 0.01, K2 0.03,
/// L 1) over the valid region.
pub fn ssim(a: &PlanarImage, b: &PlanarImage) -> Result<f64> {
    ssim_with_mode(a, b, SsimMode::RgbMean)
}

pub fn ssim_with_mode(a: &PlanarImage, b: &PlanarImage, mode: SsimMode) -> Result<f64> {
    check_pair(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h.min(w) < SSIM_WINDOW {
        return Err(Error::TooSmall {
            height: h,
            width: w,
            min: SSIM_WINDOW,
        });
    }
    match mode {
        SsimMode::Luma if a.space() == ColorSpace::Rgb => {
            let ya = rgb_to_ycbcr(a)?;
            let yb = rgb_to_ycbcr(b)?;
            Ok(ssim_plane(ya.plane(0), yb.plane(0), h, w))
        }
        _ => {
            let c = a.channels();
            let sum: f64 = (0..c).map(|ch| ssim_plane(a.plane(ch), b.plane(ch), h, w)).sum();
            Ok(sum / c as f64)
        }
    }
}

fn serialize_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(&format_db(*v))
    }
}

fn format_db(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v.is_finite() {
        format!("{v:.4}")
    } else {
        "nan".into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub name: String,
    #[serde(serialize_with = "serialize_db")]
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    #[serde(serialize_with = "serialize_db")]
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
    pub count: usize,
}

impl MetricsReport {
    pub fn from_rows(rows: Vec<MetricsRow>) -> Self {
        let count = rows.len();
        let (mean_psnr_db, mean_ssim) = if count == 0 {
            (f64::NAN, f64::NAN)
        } else {
            (
                rows.iter().map(|r| r.psnr_db).sum::<f64>() / count as f64,
                rows.iter().map(|r| r.ssim).sum::<f64>() / count as f64,
            )
        };
        Self {
            rows,
            mean_psnr_db,
            mean_ssim,
            count,
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            s.push_str(&format!("{}\t{}\t{:.4}\n", r.name, format_db(r.psnr_db), r.ssim));
        }
        s.push_str(&format!("mean\t{}\t{:.4}\n", format_db(self.mean_psnr_db), self.mean_ssim));
        s
    }

    /// Writes `<stem>.tsv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tsv = dir.join(format!("{stem}.tsv"));
        std::fs::write(&tsv, self.to_tsv()).map_err(|e| Error::io(&tsv, e))?;
        let json = dir.join(format!("{stem}.json"));
        let mut f = std::fs::File::create(&json).map_err(|e| Error::io(&json, e))?;
        serde_json::to_writer_pretty(&mut f, self)
            .map_err(|e| Error::io(&json, std::io::Error::other(e)))?;
        f.write_all(b"\n").map_err(|e| Error::io(&json, e))
    }
}
