//! RGB <-> HSV and RGB <-> YCbCr conversions, and luma/chroma split/merge.
//!
//! HSV uses the hexcone model with hue scaled to `[0, 1)`. YCbCr is full-range
//! BT.601 with zero-centred chroma:
//!
//! ```text
//! Y  = 0.299 R + 0.587 G + 0.114 B
//! Cb = (B - Y) / 1.772
//! Cr = (R - Y) / 1.402
//! ```
//!
//! Per-pixel arithmetic runs in `f64` and is rounded once to `f32` on store.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ColorSpace, PlanarImage};

pub const KR: f64 = 0.299;
pub const KG: f64 = 0.587;
pub const KB: f64 = 0.114;
const CB_SCALE: f64 = 2.0 * (1.0 - KB);
const CR_SCALE: f64 = 2.0 * (1.0 - KR);

/// Clamping must move a value by more than this to raise the gamut flag.
pub const GAMUT_TOLERANCE: f64 = 1e-6;

/// Which space carries the luminance plane the network works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LumaSpace {
    Hsv,
    Ycbcr,
}

impl LumaSpace {
    pub fn color_space(self) -> ColorSpace {
        match self {
            LumaSpace::Hsv => ColorSpace::Hsv,
            LumaSpace::Ycbcr => ColorSpace::Ycbcr,
        }
    }
}

impl std::str::FromStr for LumaSpace {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "hsv" => Ok(LumaSpace::Hsv),
            "ycbcr" => Ok(LumaSpace::Ycbcr),
            other => Err(format!("unknown luminance space '{other}' (expected hsv or ycbcr)")),
        }
    }
}

/// Space the enhancement network operates in: a luminance plane, or all three
/// RGB planes for the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkingSpace {
    Hsv,
    #[default]
    Ycbcr,
    Rgb,
}

impl WorkingSpace {
    pub fn luma(self) -> Option<LumaSpace> {
        match self {
            WorkingSpace::Hsv => Some(LumaSpace::Hsv),
            WorkingSpace::Ycbcr => Some(LumaSpace::Ycbcr),
            WorkingSpace::Rgb => None,
        }
    }

    pub fn in_channels(self) -> usize {
        match self {
            WorkingSpace::Rgb => 3,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WorkingSpace::Hsv => "hsv",
            WorkingSpace::Ycbcr => "ycbcr",
            WorkingSpace::Rgb => "rgb",
        }
    }
}

impl std::str::FromStr for WorkingSpace {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "hsv" => Ok(WorkingSpace::Hsv),
            "ycbcr" => Ok(WorkingSpace::Ycbcr),
            "rgb" => Ok(WorkingSpace::Rgb),
            other => Err(format!("unknown space '{other}' (expected hsv, ycbcr or rgb)")),
        }
    }
}

pub fn rgb_pixel_to_hsv(r: f64, g: f64, b: f64) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta <= 0.0 || s == 0.0 {
        return [0.0, 0.0, v];
    }
    let sector = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let mut h = sector / 6.0;
    if h >= 1.0 {
        h -= 1.0;
    }
    [h, s, v]
}

pub fn hsv_pixel_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    if s <= 0.0 {
        return [v, v, v];
    }
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = (h6.floor() as i64).clamp(0, 5);
    let f = h6 - sector as f64;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

pub fn rgb_pixel_to_ycbcr(r: f64, g: f64, b: f64) -> [f64; 3] {
    let y = KR * r + KG * g + KB * b;
    [y, (b - y) / CB_SCALE, (r - y) / CR_SCALE]
}

/// Inverse YCbCr without clamping.
pub fn ycbcr_pixel_to_rgb(y: f64, cb: f64, cr: f64) -> [f64; 3] {
    let r = y + CR_SCALE * cr;
    let b = y + CB_SCALE * cb;
    let g = (y - KR * r - KB * b) / KG;
    [r, g, b]
}

fn map_pixels(
    img: &PlanarImage,
    space: ColorSpace,
    f: impl Fn(f64, f64, f64) -> [f64; 3],
) -> PlanarImage {
    let n = img.pixel_count();
    let src = img.data();
    let mut out = vec![0.0f32; 3 * n];
    for i in 0..n {
        let px = f(src[i] as f64, src[n + i] as f64, src[2 * n + i] as f64);
        out[i] = px[0] as f32;
        out[n + i] = px[1] as f32;
        out[2 * n + i] = px[2] as f32;
    }
    PlanarImage::new(img.height(), img.width(), 3, space, out).expect("same geometry")
}

pub fn rgb_to_hsv(img: &PlanarImage) -> Result<PlanarImage> {
    img.require_space(ColorSpace::Rgb)?;
    let mut out = map_pixels(img, ColorSpace::Hsv, rgb_pixel_to_hsv);
    // Hue just below 1.0 in f64 can round up to exactly 1.0 in f32.
    for h in out.plane_mut(0) {
        if *h >= 1.0 {
            *h = 0.0;
        }
    }
    Ok(out)
}

pub fn hsv_to_rgb(img: &PlanarImage) -> Result<PlanarImage> {
    img.require_space(ColorSpace::Hsv)?;
    Ok(map_pixels(img, ColorSpace::Rgb, |h, s, v| {
        hsv_pixel_to_rgb(h, s, v).map(|c| c.clamp(0.0, 1.0))
    }))
}

pub fn rgb_to_ycbcr(img: &PlanarImage) -> Result<PlanarImage> {
    img.require_space(ColorSpace::Rgb)?;
    Ok(map_pixels(img, ColorSpace::Ycbcr, rgb_pixel_to_ycbcr))
}

/// Inverse YCbCr clamped to `[0, 1]`. The flag reports whether clamping
/// moved any sample by more than [`GAMUT_TOLERANCE`].
pub fn ycbcr_to_rgb(img: &PlanarImage) -> Result<(PlanarImage, bool)> {
    img.require_space(ColorSpace::Ycbcr)?;
    let clamped = std::cell::Cell::new(false);
    let out = map_pixels(img, ColorSpace::Rgb, |y, cb, cr| {
        ycbcr_pixel_to_rgb(y, cb, cr).map(|c| {
            let k = c.clamp(0.0, 1.0);
            if (k - c).abs() > GAMUT_TOLERANCE {
                clamped.set(true);
            }
            k
        })
    });
    Ok((out, clamped.get()))
}

/// A luminance plane together with the two chroma planes it was split from.
#[derive(Debug, Clone, PartialEq)]
pub struct LumaChromaPair {
    pub luma: PlanarImage,
    pub chroma: PlanarImage,
}

impl LumaChromaPair {
    pub fn space(&self) -> ColorSpace {
        self.chroma.space()
    }

    /// Reassembles the three-plane image in the chroma's color space.
    pub fn to_space_image(&self) -> Result<PlanarImage> {
        if !self.luma.same_dims(&self.chroma) {
            return Err(Error::DimensionMismatch(format!(
                "luma is {}x{}, chroma is {}x{}",
                self.luma.height(),
                self.luma.width(),
                self.chroma.height(),
                self.chroma.width()
            )));
        }
        if self.luma.channels() != 1 || self.chroma.channels() != 2 {
            return Err(Error::DimensionMismatch(format!(
                "expected 1 luma and 2 chroma planes, got {} and {}",
                self.luma.channels(),
                self.chroma.channels()
            )));
        }
        let (a, b) = (self.chroma.plane(0), self.chroma.plane(1));
        let l = self.luma.data();
        let data: Vec<f32> = match self.space() {
            ColorSpace::Hsv => [a, b, l].concat(),
            ColorSpace::Ycbcr => [l, a, b].concat(),
            other => {
                return Err(Error::WrongSpace {
                    expected: ColorSpace::Ycbcr,
                    found: other,
                })
            }
        };
        PlanarImage::new(
            self.luma.height(),
            self.luma.width(),
            3,
            self.space(),
            data,
        )
    }
}

/// Converts RGB to `space` and separates the luminance plane (V or Y).
pub fn split_luma(img: &PlanarImage, space: LumaSpace) -> Result<LumaChromaPair> {
    img.require_space(ColorSpace::Rgb)?;
    let (h, w) = (img.height(), img.width());
    let (converted, luma_plane, chroma_planes) = match space {
        LumaSpace::Hsv => (rgb_to_hsv(img)?, 2, [0, 1]),
        LumaSpace::Ycbcr => (rgb_to_ycbcr(img)?, 0, [1, 2]),
    };
    let luma = PlanarImage::new(h, w, 1, ColorSpace::Gray, converted.plane(luma_plane).to_vec())?;
    let chroma = PlanarImage::new(
        h,
        w,
        2,
        space.color_space(),
        [converted.plane(chroma_planes[0]), converted.plane(chroma_planes[1])].concat(),
    )?;
    Ok(LumaChromaPair { luma, chroma })
}

/// Recombines a (possibly enhanced) luma plane with its chroma and converts
/// back to RGB. The flag is the YCbCr gamut flag; always false for HSV.
pub fn merge_luma(pair: &LumaChromaPair) -> Result<(PlanarImage, bool)> {
    let full = pair.to_space_image()?;
    match full.space() {
        ColorSpace::Hsv => Ok((hsv_to_rgb(&full)?, false)),
        _ => ycbcr_to_rgb(&full),
    }
}
