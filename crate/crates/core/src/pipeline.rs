//! End-to-end enhancement, evaluation and luminance inspection.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::color::{merge_luma, split_luma, LumaChromaPair, LumaSpace, WorkingSpace};
use crate::dataset::DatasetSplit;
use crate::error::{Error, Result};
use crate::image::{load_image, save_image, ColorSpace, PlanarImage};
use crate::metrics::{psnr, ssim_with_mode, MetricsReport, MetricsRow, SsimMode};
use crate::sci::{infer, SciWeights};

#[derive(Debug, Clone, PartialEq)]
pub struct Enhanced {
    pub image: PlanarImage,
    /// Set when the YCbCr inverse had to clamp a sample out of gamut.
    pub gamut_clamped: bool,
}

/// Enhances an RGB image: split off the luminance plane, run one block on
/// it, recombine with the untouched chroma. `Rgb` runs on all three planes.
pub fn enhance_image(rgb: &PlanarImage, space: WorkingSpace, w: &SciWeights) -> Result<Enhanced> {
    rgb.require_space(ColorSpace::Rgb)?;
    if w.in_channels != space.in_channels() {
        return Err(Error::ModeMismatch {
            weights: w.in_channels,
            mode: space.name().to_string(),
            needed: space.in_channels(),
        });
    }
    match space.luma() {
        None => Ok(Enhanced {
            image: infer(rgb, w)?,
            gamut_clamped: false,
        }),
        Some(luma_space) => {
            let pair = split_luma(rgb, luma_space)?;
            let luma = infer(&pair.luma, w)?;
            let (image, gamut_clamped) = merge_luma(&LumaChromaPair { luma, chroma: pair.chroma })?;
            Ok(Enhanced { image, gamut_clamped })
        }
    }
}

/// Anything that maps an RGB image to an enhanced RGB image of the same size.
pub trait Enhancer: Sync {
    fn enhance(&self, rgb: &PlanarImage) -> Result<PlanarImage>;
}

pub struct SciEnhancer {
    pub weights: SciWeights,
    pub space: WorkingSpace,
}

impl SciEnhancer {
    pub fn new(weights: SciWeights, space: WorkingSpace) -> Result<Self> {
        if weights.in_channels != space.in_channels() {
            return Err(Error::ModeMismatch {
                weights: weights.in_channels,
                mode: space.name().to_string(),
                needed: space.in_channels(),
            });
        }
        Ok(Self { weights, space })
    }
}

impl Enhancer for SciEnhancer {
    fn enhance(&self, rgb: &PlanarImage) -> Result<PlanarImage> {
        let out = enhance_image(rgb, self.space, &self.weights)?;
        if out.gamut_clamped {
            log::debug!("enhanced image clamped to the RGB gamut");
        }
        Ok(out.image)
    }
}

/// PNG files directly inside `dir`, sorted by name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::MissingDirectory(dir.to_path_buf()));
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && png {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Enhances one file, or every PNG in a directory, writing same-named PNGs
/// into `out_dir`. Unreadable inputs are skipped with a warning; returns the
/// written paths in input order.
pub fn enhance_path(input: &Path, out_dir: &Path, enhancer: &dyn Enhancer) -> Result<Vec<PathBuf>> {
    let inputs = if input.is_dir() {
        list_pngs(input)?
    } else if input.is_file() {
        vec![input.to_path_buf()]
    } else {
        return Err(Error::FileNotFound(input.to_path_buf()));
    };
    if inputs.is_empty() {
        return Err(Error::EmptySplit("input"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let results: Vec<Result<PathBuf>> = inputs
        .par_iter()
        .map(|p| {
            let img = load_image(p)?;
            let out = enhancer.enhance(&img)?;
            let dest = out_dir.join(p.file_name().expect("listed files have names"));
            save_image(&out, &dest)?;
            Ok(dest)
        })
        .collect();
    let mut written = Vec::new();
    for (p, r) in inputs.iter().zip(results) {
        match r {
            Ok(dest) => written.push(dest),
            Err(e @ Error::ModeMismatch { .. }) => return Err(e),
            Err(e) => log::warn!("skipping {}: {e}", p.display()),
        }
    }
    if written.is_empty() {
        return Err(Error::AllImagesFailed(inputs.len()));
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ssim_mode: SsimMode,
    /// Round the enhanced image to 8 bits before scoring, as a saved PNG would be.
    pub quantize: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ssim_mode: SsimMode::RgbMean,
            quantize: true,
        }
    }
}

fn score_pair(name: &str, low: &Path, high: &Path, enhancer: &dyn Enhancer, cfg: &EvalConfig) -> Result<MetricsRow> {
    let low_img = load_image(low)?;
    let high_img = load_image(high)?;
    if !low_img.same_dims(&high_img) {
        return Err(Error::DimensionMismatch(format!(
            "{name}: input is {}x{}, reference is {}x{}",
            low_img.height(),
            low_img.width(),
            high_img.height(),
            high_img.width()
        )));
    }
    let mut out = enhancer.enhance(&low_img)?;
    if cfg.quantize {
        out = out.quantized();
    }
    Ok(MetricsRow {
        name: name.to_string(),
        psnr_db: psnr(&out, &high_img)?,
        ssim: ssim_with_mode(&out, &high_img, cfg.ssim_mode)?,
    })
}

/// Scores `enhancer` on the test pairs at native resolution. Pairs that fail
/// to load or score are skipped with a warning.
pub fn evaluate_split(split: &DatasetSplit, enhancer: &dyn Enhancer, cfg: &EvalConfig) -> Result<MetricsReport> {
    if split.test.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    let results: Vec<Result<MetricsRow>> = split
        .test
        .par_iter()
        .map(|p| score_pair(&p.name, &p.low, &p.high, enhancer, cfg))
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    for (p, r) in split.test.iter().zip(results) {
        match r {
            Ok(row) => rows.push(row),
            Err(e @ Error::ModeMismatch { .. }) => return Err(e),
            Err(e) => log::warn!("skipping {}: {e}", p.name),
        }
    }
    if rows.is_empty() {
        return Err(Error::AllImagesFailed(split.test.len()));
    }
    Ok(MetricsReport::from_rows(rows))
}

pub const HISTOGRAM_BINS: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelHistogram {
    pub name: &'static str,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl ChannelHistogram {
    /// 256 equal bins over `[0, 1]`; the last bin is closed. `offset` shifts
    /// zero-centred chroma into range first.
    fn build(name: &'static str, values: &[f32], offset: f32) -> Self {
        let mut counts = vec![0u64; HISTOGRAM_BINS];
        for &v in values {
            let x = (v + offset).clamp(0.0, 1.0);
            let bin = if x.is_nan() { 0 } else { ((x * HISTOGRAM_BINS as f32) as usize).min(HISTOGRAM_BINS - 1) };
            counts[bin] += 1;
        }
        Self { name, counts, total: values.len() as u64 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inspection {
    pub space: LumaSpace,
    pub histograms: Vec<ChannelHistogram>,
    pub luma_mean: f64,
    /// Nearest-rank 99th percentile of the luminance plane.
    pub luma_p99: f32,
}

pub fn inspect(rgb: &PlanarImage, space: LumaSpace) -> Result<Inspection> {
    let pair = split_luma(rgb, space)?;
    let full = pair.to_space_image()?;
    let (names, offsets): ([&'static str; 3], [f32; 3]) = match space {
        LumaSpace::Hsv => (["h", "s", "v"], [0.0; 3]),
        LumaSpace::Ycbcr => (["y", "cb", "cr"], [0.0, 0.5, 0.5]),
    };
    let histograms = (0..3)
        .map(|c| ChannelHistogram::build(names[c], full.plane(c), offsets[c]))
        .collect();
    let mut sorted = pair.luma.data().to_vec();
    sorted.sort_by(f32::total_cmp);
    let rank = ((0.99 * sorted.len() as f64).ceil() as usize).max(1);
    Ok(Inspection {
        space,
        histograms,
        luma_mean: pair.luma.mean(),
        luma_p99: sorted[rank - 1],
    })
}

impl Inspection {
    /// One `# channel=<name>` section of `bin\tcount` rows per channel,
    /// followed by `# luma_mean=..` and `# luma_p99=..`.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for h in &self.histograms {
            let _ = writeln!(s, "# channel={} total={}", h.name, h.total);
            for (i, c) in h.counts.iter().enumerate() {
                let _ = writeln!(s, "{i}\t{c}");
            }
        }
        let _ = writeln!(s, "# luma_mean={:.6}", self.luma_mean);
        let _ = writeln!(s, "# luma_p99={:.6}", self.luma_p99);
        s
    }

    /// One bar chart per channel, stacked vertically, heights normalised per
    /// channel.
    pub fn to_svg(&self) -> String {
        const W: usize = 512;
        const H: usize = 120;
        const GAP: usize = 24;
        let total_h = self.histograms.len() * (H + GAP);
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{total_h}\" viewBox=\"0 0 {W} {total_h}\">\n"
        );
        let colors = ["#d62728", "#2ca02c", "#1f77b4"];
        for (k, h) in self.histograms.iter().enumerate() {
            let top = k * (H + GAP) + GAP;
            let _ = writeln!(s, "<text x=\"2\" y=\"{}\" font-size=\"14\">{}</text>", top - 6, h.name);
            let peak = h.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
            let bar_w = W as f64 / HISTOGRAM_BINS as f64;
            for (i, &c) in h.counts.iter().enumerate() {
                if c == 0 {
                    continue;
                }
                let bh = c as f64 / peak * H as f64;
                let _ = writeln!(
                    s,
                    "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{bar_w:.2}\" height=\"{bh:.2}\" fill=\"{}\"/>",
                    i as f64 * bar_w,
                    (top + H) as f64 - bh,
                    colors[k % colors.len()]
                );
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color::rgb_to_hsv;
    use crate::dataset::ImagePair;

    fn sample() -> PlanarImage {
        PlanarImage::from_fn_rgb(16, 20, |r, c| {
            [0.05 + 0.01 * (r % 7) as f32, 0.04 + 0.005 * (c % 9) as f32, 0.03 + 0.002 * ((r + c) % 5) as f32]
        })
    }

    #[test]
    fn zero_weights_still_brighten_dark_images() {
        // With all-zero networks u = 0, so x = clamp(y, eps, 1) and z = y / x.
        let w = SciWeights::zeros(1, 4, 1e-3);
        for space in [WorkingSpace::Hsv, WorkingSpace::Ycbcr] {
            let out = enhance_image(&sample(), space, &w).unwrap();
            assert_eq!(out.image.space(), ColorSpace::Rgb);
            assert!(out.image.mean() > sample().mean() * 3.0, "{space:?}");
        }
    }

    #[test]
    fn enhancement_examples() {
        let w = SciWeights::zeros(1, 4, 1e-3);
        let out = enhance_image(&PlanarImage::filled(3, 3, 3, ColorSpace::Rgb, 0.25), WorkingSpace::Ycbcr, &w).unwrap();
        assert!(out.image.data().iter().all(|&v| (v - 1.0).abs() < 1e-6));

        let white = PlanarImage::filled(3, 4, 3, ColorSpace::Rgb, 1.0);
        for (space, ch) in [(WorkingSpace::Hsv, 1), (WorkingSpace::Ycbcr, 1), (WorkingSpace::Rgb, 3)] {
            let w = SciWeights::init(ch, 4, 1e-3, 8);
            let out = enhance_image(&white, space, &w).unwrap();
            assert!(out.image.data().iter().all(|&v| (v - 1.0).abs() < 1e-6), "{space:?}");
        }
    }

    #[test]
    fn hsv_mode_keeps_hue_and_saturation() {
        let w = SciWeights::init(1, 4, 1e-3, 3);
        let input = sample();
        let out = enhance_image(&input, WorkingSpace::Hsv, &w).unwrap();
        let (a, b) = (rgb_to_hsv(&input).unwrap(), rgb_to_hsv(&out.image).unwrap());
        for i in 0..input.pixel_count() {
            if a.plane(1)[i] > 0.01 && b.plane(2)[i] > 0.05 {
                let dh = (a.plane(0)[i] - b.plane(0)[i]).abs();
                assert!(dh.min(1.0 - dh) < 1e-4, "pixel {i}");
                assert!((a.plane(1)[i] - b.plane(1)[i]).abs() < 1e-4, "pixel {i}");
            }
        }
    }

    #[test]
    fn mode_mismatch_is_reported() {
        let w = SciWeights::zeros(3, 4, 1e-3);
        assert!(matches!(enhance_image(&sample(), WorkingSpace::Ycbcr, &w), Err(Error::ModeMismatch { .. })));
        assert!(enhance_image(&sample(), WorkingSpace::Rgb, &w).is_ok());
        assert!(SciEnhancer::new(SciWeights::zeros(1, 4, 1e-3), WorkingSpace::Rgb).is_err());
    }

    #[test]
    fn histograms_count_every_pixel() {
        let img = sample();
        for space in [LumaSpace::Hsv, LumaSpace::Ycbcr] {
            let ins = inspect(&img, space).unwrap();
            assert_eq!(ins.histograms.len(), 3);
            for h in &ins.histograms {
                assert_eq!(h.counts.len(), 256);
                assert_eq!(h.total, img.pixel_count() as u64);
                assert_eq!(h.counts.iter().sum::<u64>(), h.total);
            }
            let tsv = ins.to_tsv();
            assert_eq!(tsv.lines().filter(|l| !l.starts_with('#')).count(), 3 * 256);
            assert_eq!(tsv.lines().filter(|l| l.starts_with("# channel=")).count(), 3);
            assert!(ins.to_svg().starts_with("<svg"));
        }
    }

    #[test]
    fn histogram_examples() {
        let gray = PlanarImage::filled(4, 5, 3, ColorSpace::Rgb, 0.5);
        let ins = inspect(&gray, LumaSpace::Ycbcr).unwrap();
        for h in &ins.histograms {
            assert_eq!(h.counts[128], 20, "{}", h.name);
        }
        let black = PlanarImage::filled(4, 5, 3, ColorSpace::Rgb, 0.0);
        for space in [LumaSpace::Hsv, LumaSpace::Ycbcr] {
            let ins = inspect(&black, space).unwrap();
            assert_eq!(ins.histograms[if space == LumaSpace::Hsv { 2 } else { 0 }].counts[0], 20);
            assert_eq!(ins.luma_mean, 0.0);
        }
    }

    #[test]
    fn histogram_edges() {
        let h = ChannelHistogram::build("x", &[0.0, 1.0, 0.999, 0.5, -0.2, 1.3], 0.0);
        assert_eq!(h.counts[0], 2);
        assert_eq!(h.counts[255], 3);
        assert_eq!(h.counts[128], 1);
        let c = ChannelHistogram::build("cb", &[-0.5, 0.0, 0.5], 0.5);
        assert_eq!((c.counts[0], c.counts[128], c.counts[255]), (1, 1, 1));
    }

    #[test]
    fn percentile_is_nearest_rank() {
        let data: Vec<f32> = (1..=100).map(|i| i as f32 / 100.0).collect();
        let img = PlanarImage::new(1, 100, 3, ColorSpace::Rgb, [data.clone(), data.clone(), data].concat()).unwrap();
        let ins = inspect(&img, LumaSpace::Hsv).unwrap();
        assert_eq!(ins.luma_p99, 0.99);
        assert!((ins.luma_mean - 0.505).abs() < 1e-6);
    }

    struct Identity;
    impl Enhancer for Identity {
        fn enhance(&self, rgb: &PlanarImage) -> Result<PlanarImage> {
            Ok(rgb.clone())
        }
    }

    #[test]
    fn evaluation_skips_broken_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let img = sample();
        let (low, high) = (dir.path().join("a_low.png"), dir.path().join("a_high.png"));
        save_image(&img, &low).unwrap();
        save_image(&img, &high).unwrap();
        let pair = |name: &str, l: &Path, h: &Path| ImagePair { name: name.into(), low: l.into(), high: h.into() };
        let split = DatasetSplit {
            seed: 0,
            train: vec![],
            val: vec![],
            test: vec![pair("a", &low, &high), pair("b", &low, &dir.path().join("missing.png"))],
        };
        let report = evaluate_split(&split, &Identity, &EvalConfig::default()).unwrap();
        assert_eq!(report.count, 1);
        assert!(report.rows[0].psnr_db.is_infinite());
        assert!((report.rows[0].ssim - 1.0).abs() < 1e-12);

        let empty = DatasetSplit { test: vec![], ..split };
        assert!(matches!(evaluate_split(&empty, &Identity, &EvalConfig::default()), Err(Error::EmptySplit(_))));
    }

    #[test]
    fn directory_enhancement_writes_one_file_per_input() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in");
        std::fs::create_dir(&input).unwrap();
        for i in 0..3 {
            save_image(&sample(), input.join(format!("{i}.png"))).unwrap();
        }
        std::fs::write(input.join("readme.txt"), "x").unwrap();
        let enh = SciEnhancer::new(SciWeights::init(1, 4, 1e-3, 0), WorkingSpace::Ycbcr).unwrap();
        let out = enhance_path(&input, &dir.path().join("out"), &enh).unwrap();
        assert_eq!(out.len(), 3);
        for p in out {
            let img = load_image(&p).unwrap();
            assert_eq!((img.height(), img.width()), (16, 20));
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn luma_mean(rgb: &PlanarImage) -> f64 {
            split_luma(rgb, LumaSpace::Ycbcr).unwrap().luma.mean()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn dark_inputs_never_get_darker(seed in any::<u64>(), wseed in any::<u64>(), scale in 0.05f32..0.55, hsv in any::<bool>()) {
                use rand::{Rng, SeedableRng};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let img = PlanarImage::from_fn_rgb(6, 7, |_, _| {
                    [rng.random::<f32>() * scale, rng.random::<f32>() * scale, rng.random::<f32>() * scale]
                });
                let space = if hsv { WorkingSpace::Hsv } else { WorkingSpace::Ycbcr };
                let luma = match space { WorkingSpace::Hsv => LumaSpace::Hsv, _ => LumaSpace::Ycbcr };
                let before = split_luma(&img, luma).unwrap().luma.mean();
                prop_assume!(luma_mean(&img) < 0.3);
                let w = SciWeights::init(1, 4, 1e-3, wseed);
                let a = enhance_image(&img, space, &w).unwrap();
                let after = split_luma(&a.image, luma).unwrap().luma.mean();
                prop_assert!(after >= before - 1e-6, "{after} < {before}");
                prop_assert_eq!(a, enhance_image(&img, space, &w).unwrap());
            }
        }
    }
}
