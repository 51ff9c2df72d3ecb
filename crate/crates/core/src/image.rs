//! Planar float images and 8-bit PNG I/O.
//!
//! Every image in the crate is a [`PlanarImage`]: `f32` samples stored plane
//! by plane (all of channel 0, then channel 1, ...), tagged with the color
//! space the planes are expressed in.

use std::path::Path;

use image::{DynamicImage, ImageReader, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    Rgb,
    Hsv,
    Ycbcr,
    Gray,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanarImage {
    height: usize,
    width: usize,
    channels: usize,
    space: ColorSpace,
    data: Vec<f32>,
}

impl PlanarImage {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        space: ColorSpace,
        data: Vec<f32>,
    ) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::DimensionMismatch(format!(
                "{height}x{width}x{channels} image needs {} samples, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if space == ColorSpace::Gray && channels != 1 {
            return Err(Error::DimensionMismatch(format!(
                "gray image must have 1 channel, got {channels}"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            space,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, space: ColorSpace, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            space,
            data: vec![value; height * width * channels],
        }
    }

    /// Builds a 3-plane RGB image from per-pixel closures over `(row, col)`.
    pub fn from_fn_rgb(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let n = height * width;
        let mut data = vec![0.0; 3 * n];
        for r in 0..height {
            for c in 0..width {
                let px = f(r, c);
                let i = r * width + c;
                data[i] = px[0];
                data[n + i] = px[1];
                data[2 * n + i] = px[2];
            }
        }
        Self {
            height,
            width,
            channels: 3,
            space: ColorSpace::Rgb,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn space(&self) -> ColorSpace {
        self.space
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.pixel_count();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.pixel_count();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_dims(&self, other: &PlanarImage) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub(crate) fn require_space(&self, expected: ColorSpace) -> Result<()> {
        if self.space != expected {
            return Err(Error::WrongSpace {
                expected,
                found: self.space,
            });
        }
        Ok(())
    }

    /// Mean over all samples, accumulated in `f64`.
    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// The image after an 8-bit save/load round trip.
    pub fn quantized(&self) -> PlanarImage {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = quantize(*v) as f32 / 255.0;
        }
        out
    }

    /// Channelwise bilinear resampling with corner-aligned endpoints.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> PlanarImage {
        assert!(height >= 1 && width >= 1, "target size must be at least 1x1");
        if height == self.height && width == self.width {
            return self.clone();
        }
        let ys: Vec<(usize, usize, f32)> = sample_positions(self.height, height);
        let xs: Vec<(usize, usize, f32)> = sample_positions(self.width, width);
        let mut data = Vec::with_capacity(height * width * self.channels);
        for c in 0..self.channels {
            let src = self.plane(c);
            for &(y0, y1, fy) in &ys {
                let row0 = &src[y0 * self.width..(y0 + 1) * self.width];
                let row1 = &src[y1 * self.width..(y1 + 1) * self.width];
                for &(x0, x1, fx) in &xs {
                    let top = row0[x0] + (row0[x1] - row0[x0]) * fx;
                    let bottom = row1[x0] + (row1[x1] - row1[x0]) * fx;
                    data.push(top + (bottom - top) * fy);
                }
            }
        }
        PlanarImage {
            height,
            width,
            channels: self.channels,
            space: self.space,
            data,
        }
    }
}

fn sample_positions(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    (0..dst)
        .map(|i| {
            if dst == 1 || src == 1 {
                return (0, 0, 0.0);
            }
            let pos = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, (pos - lo as f64) as f32)
        })
        .collect()
}

/// `round(clamp(v, 0, 1) * 255)` with halves rounded away from zero.
pub fn quantize(v: f32) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0).round() as u8
}

/// Decodes an 8-bit RGB or grayscale image into an RGB [`PlanarImage`].
///
/// Grayscale files are promoted to three identical planes and alpha is
/// dropped. Anything wider than 8 bits per sample is rejected.
pub fn load_image(path: impl AsRef<Path>) -> Result<PlanarImage> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let decode_err = |reason: String| Error::Decode {
        path: path.to_path_buf(),
        reason,
    };
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|e| decode_err(e.to_string()))?;
    let rgb = match decoded {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_) => decoded.to_rgb8(),
        other => {
            return Err(decode_err(format!(
                "unsupported sample format {:?}, only 8-bit images are accepted",
                other.color()
            )))
        }
    };
    Ok(from_rgb8(&rgb))
}

pub(crate) fn from_rgb8(rgb: &RgbImage) -> PlanarImage {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let n = w * h;
    let mut data = vec![0.0f32; 3 * n];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * n + i] = px[c] as f32 / 255.0;
        }
    }
    PlanarImage {
        height: h,
        width: w,
        channels: 3,
        space: ColorSpace::Rgb,
        data,
    }
}

/// Encodes an RGB image as an 8-bit PNG, clamping out-of-range values.
pub fn save_image(img: &PlanarImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    img.require_space(ColorSpace::Rgb)?;
    let n = img.pixel_count();
    let mut buf = Vec::with_capacity(3 * n);
    for i in 0..n {
        for c in 0..3 {
            buf.push(quantize(img.data[c * n + i]));
        }
    }
    let out = RgbImage::from_raw(img.width as u32, img.height as u32, buf)
        .expect("buffer length matches dimensions");
    out.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::io(path, std::io::Error::other(other.to_string())),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_rgb(path: &Path, w: u32, h: u32, px: &[[u8; 3]]) {
        let raw: Vec<u8> = px.iter().flatten().copied().collect();
        RgbImage::from_raw(w, h, raw).unwrap().save(path).unwrap();
    }

    #[test]
    fn load_white_black_and_primaries() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("white.png");
        write_rgb(&p, 1, 1, &[[255, 255, 255]]);
        let img = load_image(&p).unwrap();
        assert_eq!((img.height(), img.width(), img.channels()), (1, 1, 3));
        assert!(img.data().iter().all(|&v| v == 1.0));

        let p = dir.path().join("black.png");
        write_rgb(&p, 1, 1, &[[0, 0, 0]]);
        assert!(load_image(&p).unwrap().data().iter().all(|&v| v == 0.0));

        let p = dir.path().join("rg.png");
        write_rgb(&p, 2, 1, &[[255, 0, 0], [0, 255, 0]]);
        let img = load_image(&p).unwrap();
        assert_eq!(img.plane(0), &[1.0, 0.0]);
        assert_eq!(img.plane(1), &[0.0, 1.0]);
        assert_eq!(img.plane(2), &[0.0, 0.0]);
    }

    #[test]
    fn grayscale_is_promoted() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        image::GrayImage::from_raw(2, 1, vec![51, 204])
            .unwrap()
            .save(&p)
            .unwrap();
        let img = load_image(&p).unwrap();
        for c in 0..3 {
            assert_eq!(img.plane(c), &[51.0 / 255.0, 204.0 / 255.0]);
        }
    }

    #[test]
    fn sixteen_bit_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("deep.png");
        image::ImageBuffer::<image::Rgb<u16>, _>::from_raw(1, 1, vec![1u16, 2, 3])
            .unwrap()
            .save(&p)
            .unwrap();
        match load_image(&p) {
            Err(Error::Decode { path, .. }) => assert_eq!(path, p),
            other => panic!("expected decode error, got {other:?}"),
        }
    }

    #[test]
    fn missing_and_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nope.png");
        assert!(matches!(load_image(&p), Err(Error::FileNotFound(_))));
        let p = dir.path().join("junk.png");
        std::fs::write(&p, b"\x89PNG\r\n\x1a\nthis is not a png").unwrap();
        let err = load_image(&p).unwrap_err();
        assert!(matches!(err, Error::Decode { .. }));
        assert!(err.to_string().contains("junk.png"));
    }

    #[test]
    fn save_quantizes_and_clamps() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(1.7), 255);
        assert_eq!(quantize(-0.3), 0);
        assert_eq!(quantize(1.0), 255);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.png");
        let img = PlanarImage::new(1, 3, 3, ColorSpace::Rgb, vec![1.0, 0.5, 1.7, 1.0, 0.5, 1.7, 1.0, 0.5, 1.7]).unwrap();
        save_image(&img, &p).unwrap();
        let back = image::open(&p).unwrap().to_rgb8();
        assert_eq!(back.get_pixel(0, 0).0, [255, 255, 255]);
        assert_eq!(back.get_pixel(1, 0).0, [128, 128, 128]);
        assert_eq!(back.get_pixel(2, 0).0, [255, 255, 255]);
    }

    #[test]
    fn save_rejects_non_rgb_and_bad_path() {
        let gray = PlanarImage::filled(1, 1, 1, ColorSpace::Gray, 0.5);
        assert!(matches!(
            save_image(&gray, "/tmp/x.png"),
            Err(Error::WrongSpace { .. })
        ));
        let rgb = PlanarImage::filled(1, 1, 3, ColorSpace::Rgb, 0.5);
        assert!(matches!(
            save_image(&rgb, "/nonexistent-dir/sub/x.png"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn resize_cases() {
        let img = PlanarImage::new(2, 1, 1, ColorSpace::Gray, vec![0.0, 1.0]).unwrap();
        let up = img.resize_bilinear(3, 1);
        assert_eq!(up.data(), &[0.0, 0.5, 1.0]);
        assert_eq!(img.resize_bilinear(2, 1), img);

        let c = PlanarImage::filled(5, 7, 3, ColorSpace::Rgb, 0.3);
        let r = c.resize_bilinear(11, 4);
        assert_eq!((r.height(), r.width()), (11, 4));
        assert!(r.data().iter().all(|&v| (v - 0.3).abs() < 1e-7));
        let one = c.resize_bilinear(1, 1);
        assert_eq!(one.data(), &[0.3, 0.3, 0.3]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn png_round_trip(w in 1usize..6, h in 1usize..6, seed in any::<u64>()) {
                use rand::{Rng, SeedableRng};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let dir = tempfile::tempdir().unwrap();
                let p = dir.path().join("rt.png");

                // Float data: within half a quantization step after the round trip.
                let data: Vec<f32> = (0..3 * w * h).map(|_| rng.random::<f32>()).collect();
                let img = PlanarImage::new(h, w, 3, ColorSpace::Rgb, data).unwrap();
                save_image(&img, &p).unwrap();
                let back = load_image(&p).unwrap();
                for (a, b) in img.data().iter().zip(back.data()) {
                    prop_assert!((a - b).abs() <= 1.0 / 510.0 + 1e-7);
                }

                // Integer-valued data: bit exact.
                save_image(&back, &p).unwrap();
                let again = load_image(&p).unwrap();
                prop_assert_eq!(back.data(), again.data());
            }
        }
    }
}
