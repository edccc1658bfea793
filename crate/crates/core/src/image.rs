//! Image preprocessing: PPM codec, bilinear resize, color jitter, and
//! ImageNet normalization.
//!
//! The model consumes 3x256x256 channel-first tensors. Raw images of any
//! size pass through resize -> (optional jitter) -> normalize.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AprError, Result};

pub const IMAGE_SIZE: usize = 256;
pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// 8-bit RGB image, row-major, interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    /// height * width * 3 bytes, pixel (x, y) channel c at (y*width + x)*3 + c.
    pub pixels: Vec<u8>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<RawImage> {
        if width < 2 || height < 2 {
            return Err(AprError::Domain(format!(
                "image must be at least 2x2, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height * 3 {
            return Err(AprError::Domain(format!(
                "pixel buffer holds {} bytes, expected {}",
                pixels.len(),
                width * height * 3
            )));
        }
        Ok(RawImage {
            width,
            height,
            pixels,
        })
    }

    pub fn constant(width: usize, height: usize, rgb: [u8; 3]) -> Result<RawImage> {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            pixels.extend_from_slice(&rgb);
        }
        RawImage::new(width, height, pixels)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.pixels[(y * self.width + x) * 3 + c] = v;
    }
}

/// Normalized model input, channel-first 3x256x256.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedImage {
    /// 3 * 256 * 256 values, channel c plane at c*256*256, row-major.
    pub data: Vec<f64>,
}

impl NormalizedImage {
    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * IMAGE_SIZE + y) * IMAGE_SIZE + x]
    }
}

/// Color jitter ranges. Factor half-ranges are fractions of the identity
/// factor 1.0; the hue half-range is a fraction of the full hue circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: false,
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
            hue: 0.05,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, h) in [
            ("brightness", self.brightness),
            ("contrast", self.contrast),
            ("saturation", self.saturation),
            ("hue", self.hue),
        ] {
            if !(0.0..=0.5).contains(&h) {
                return Err(AprError::Domain(format!(
                    "{name} jitter half-range must be in [0, 0.5], got {h}"
                )));
            }
        }
        Ok(())
    }
}

/// Resize to 256x256 with bilinear interpolation, corner-aligned sampling.
///
/// Each output value is a convex combination of input values, so outputs
/// stay within the per-channel [min, max] of the input.
pub fn resize_bilinear_256(img: &RawImage) -> RawImage {
    resize_bilinear(img, IMAGE_SIZE, IMAGE_SIZE)
}

fn resize_bilinear(img: &RawImage, out_w: usize, out_h: usize) -> RawImage {
    let sx = (img.width - 1) as f64 / (out_w - 1) as f64;
    let sy = (img.height - 1) as f64 / (out_h - 1) as f64;
    let mut pixels = vec![0u8; out_w * out_h * 3];
    for y in 0..out_h {
        let fy = y as f64 * sy;
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(img.height - 1);
        let ty = fy - y0 as f64;
        for x in 0..out_w {
            let fx = x as f64 * sx;
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(img.width - 1);
            let tx = fx - x0 as f64;
            for c in 0..3 {
                let v00 = img.get(x0, y0, c) as f64;
                let v10 = img.get(x1, y0, c) as f64;
                let v01 = img.get(x0, y1, c) as f64;
                let v11 = img.get(x1, y1, c) as f64;
                let top = v00 + tx * (v10 - v00);
                let bot = v01 + tx * (v11 - v01);
                let v = top + ty * (bot - top);
                pixels[(y * out_w + x) * 3 + c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    RawImage {
        width: out_w,
        height: out_h,
        pixels,
    }
}

/// Scale pixels to [0, 1] and normalize with ImageNet channel statistics:
/// out = (pixel/255 - mean_c) / std_c.
pub fn normalize_imagenet(img: &RawImage) -> Result<NormalizedImage> {
    if img.width != IMAGE_SIZE || img.height != IMAGE_SIZE {
        return Err(AprError::Domain(format!(
            "normalization expects a {IMAGE_SIZE}x{IMAGE_SIZE} image, got {}x{}",
            img.width, img.height
        )));
    }
    let mut data = vec![0.0; 3 * IMAGE_SIZE * IMAGE_SIZE];
    for c in 0..3 {
        let plane = c * IMAGE_SIZE * IMAGE_SIZE;
        for y in 0..IMAGE_SIZE {
            for x in 0..IMAGE_SIZE {
                let p = img.get(x, y, c) as f64 / 255.0;
                data[plane + y * IMAGE_SIZE + x] = (p - IMAGENET_MEAN[c]) / IMAGENET_STD[c];
            }
        }
    }
    Ok(NormalizedImage { data })
}

/// Apply seeded color jitter: brightness, contrast, saturation, then hue.
///
/// Factors are drawn uniformly from [1-h, 1+h] (hue shift from [-h, +h]) in
/// that fixed order, so a given seed always produces the same output.
/// Stages whose drawn factor is exactly the identity are skipped, which
/// makes zero half-ranges an exact no-op.
pub fn augment_color(img: &RawImage, cfg: &AugmentConfig, seed: u64) -> Result<RawImage> {
    cfg.validate()?;
    if !cfg.enabled {
        return Ok(img.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let brightness = draw_factor(&mut rng, cfg.brightness);
    let contrast = draw_factor(&mut rng, cfg.contrast);
    let saturation = draw_factor(&mut rng, cfg.saturation);
    let hue_shift = if cfg.hue == 0.0 {
        0.0
    } else {
        rng.gen_range(-cfg.hue..=cfg.hue)
    };

    // Work in f64 per channel, clamping to [0, 255] after each stage.
    let mut buf: Vec<f64> = img.pixels.iter().map(|&v| v as f64).collect();

    if brightness != 1.0 {
        for v in buf.iter_mut() {
            *v = (*v * brightness).clamp(0.0, 255.0);
        }
    }
    if contrast != 1.0 {
        let mean_gray = buf
            .chunks_exact(3)
            .map(|p| luma(p[0], p[1], p[2]))
            .sum::<f64>()
            / (img.width * img.height) as f64;
        for v in buf.iter_mut() {
            *v = (contrast * *v + (1.0 - contrast) * mean_gray).clamp(0.0, 255.0);
        }
    }
    if saturation != 1.0 {
        for p in buf.chunks_exact_mut(3) {
            let gray = luma(p[0], p[1], p[2]);
            for v in p.iter_mut() {
                *v = (saturation * *v + (1.0 - saturation) * gray).clamp(0.0, 255.0);
            }
        }
    }
    if hue_shift != 0.0 {
        for p in buf.chunks_exact_mut(3) {
            let (h, s, v) = rgb_to_hsv(p[0] / 255.0, p[1] / 255.0, p[2] / 255.0);
            let h = (h + hue_shift).rem_euclid(1.0);
            let (r, g, b) = hsv_to_rgb(h, s, v);
            p[0] = (r * 255.0).clamp(0.0, 255.0);
            p[1] = (g * 255.0).clamp(0.0, 255.0);
            p[2] = (b * 255.0).clamp(0.0, 255.0);
        }
    }

    let pixels = buf.iter().map(|&v| v.round() as u8).collect();
    Ok(RawImage {
        width: img.width,
        height: img.height,
        pixels,
    })
}

/// Weather-style augmentation stage. Placeholder: identity.
pub fn augment_weather(img: &RawImage) -> RawImage {
    img.clone()
}

/// Full preprocessing pipeline: resize, optional jitter, normalize.
/// Output is always 3x256x256 regardless of input size.
pub fn preprocess_image(
    img: &RawImage,
    augment: Option<(&AugmentConfig, u64)>,
) -> Result<NormalizedImage> {
    let resized = resize_bilinear_256(img);
    let jittered = match augment {
        Some((cfg, seed)) => augment_color(&resized, cfg, seed)?,
        None => resized,
    };
    normalize_imagenet(&jittered)
}

fn draw_factor(rng: &mut ChaCha8Rng, half_range: f64) -> f64 {
    if half_range == 0.0 {
        1.0
    } else {
        rng.gen_range(1.0 - half_range..=1.0 + half_range)
    }
}

/// Rec. 601 luma on [0, 255] channel values.
fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// RGB in [0,1] to (hue in [0,1), saturation, value).
fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let maxc = r.max(g).max(b);
    let minc = r.min(g).min(b);
    let d = maxc - minc;
    let s = if maxc == 0.0 { 0.0 } else { d / maxc };
    let h = if d == 0.0 {
        0.0
    } else if maxc == r {
        (((g - b) / d).rem_euclid(6.0)) / 6.0
    } else if maxc == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    (h, s, maxc)
}

/// (hue in [0,1), saturation, value) to RGB in [0,1].
fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    (r + m, g + m, b + m)
}

/// Write a binary PPM (P6, maxval 255).
pub fn write_ppm(img: &RawImage, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| AprError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = format!("P6\n{} {}\n255\n", img.width, img.height);
    w.write_all(header.as_bytes())
        .and_then(|_| w.write_all(&img.pixels))
        .and_then(|_| w.flush())
        .map_err(|e| AprError::io(path, e))
}

/// Read a binary PPM (P6, maxval 255). Header tokens may be separated by
/// any whitespace and interleaved with '#' comments.
pub fn read_ppm(path: &Path) -> Result<RawImage> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| AprError::io(path, e))?;
    parse_ppm(&bytes).map_err(|msg| AprError::io(path, msg))
}

/// Parse PPM bytes; split out from read_ppm for in-memory payloads.
pub fn parse_ppm(bytes: &[u8]) -> std::result::Result<RawImage, String> {
    let mut pos = 0usize;
    let mut next_token = |bytes: &[u8]| -> std::result::Result<String, String> {
        // Skip whitespace and comments.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("unexpected end of header".to_string());
        }
        String::from_utf8(bytes[start..pos].to_vec()).map_err(|_| "non-ASCII header".to_string())
    };

    let magic = next_token(bytes)?;
    if magic != "P6" {
        return Err(format!("expected P6 magic, got {magic:?}"));
    }
    let width: usize = next_token(bytes)?
        .parse()
        .map_err(|_| "bad width".to_string())?;
    let height: usize = next_token(bytes)?
        .parse()
        .map_err(|_| "bad height".to_string())?;
    let maxval: usize = next_token(bytes)?
        .parse()
        .map_err(|_| "bad maxval".to_string())?;
    if maxval != 255 {
        return Err(format!("only maxval 255 supported, got {maxval}"));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("missing separator after maxval".to_string());
    }
    pos += 1;
    let need = width * height * 3;
    if bytes.len() - pos < need {
        return Err(format!(
            "payload holds {} bytes, expected {need}",
            bytes.len() - pos
        ));
    }
    RawImage::new(width, height, bytes[pos..pos + need].to_vec()).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn checker(width: usize, height: usize) -> RawImage {
        let mut img = RawImage::constant(width, height, [0, 0, 0]).unwrap();
        for y in 0..height {
            for x in 0..width {
                if (x + y) % 2 == 0 {
                    for c in 0..3 {
                        img.set(x, y, c, 255);
                    }
                }
            }
        }
        img
    }

    fn gradient(width: usize, height: usize) -> RawImage {
        let mut img = RawImage::constant(width, height, [0, 0, 0]).unwrap();
        for y in 0..height {
            for x in 0..width {
                img.set(x, y, 0, ((x * 255) / (width - 1)) as u8);
                img.set(x, y, 1, ((y * 255) / (height - 1)) as u8);
                img.set(x, y, 2, (((x + y) * 37) % 256) as u8);
            }
        }
        img
    }

    #[test]
    fn rejects_undersized_images() {
        assert!(RawImage::new(1, 5, vec![0; 15]).is_err());
        assert!(RawImage::new(5, 1, vec![0; 15]).is_err());
        assert!(RawImage::new(4, 4, vec![0; 10]).is_err());
    }

    #[test]
    fn resize_identity_at_256() {
        let img = gradient(256, 256);
        assert_eq!(resize_bilinear_256(&img), img);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = RawImage::constant(512, 512, [17, 200, 99]).unwrap();
        let out = resize_bilinear_256(&img);
        assert_eq!(out.width, 256);
        assert_eq!(out.height, 256);
        for p in out.pixels.chunks_exact(3) {
            assert_eq!(p, [17, 200, 99]);
        }
    }

    #[test]
    fn resize_checkerboard_in_bounds() {
        let out = resize_bilinear_256(&checker(2, 2));
        assert_eq!(out.pixels.len(), 256 * 256 * 3);
        // u8 output is trivially in [0,255]; also check convexity per channel.
        for c in 0..3 {
            for y in 0..256 {
                for x in 0..256 {
                    let v = out.get(x, y, c);
                    assert!((0..=255).contains(&(v as usize)));
                }
            }
        }
    }

    #[test]
    fn resize_stays_within_channel_range() {
        let img = gradient(31, 17);
        let mut lo = [255u8; 3];
        let mut hi = [0u8; 3];
        for p in img.pixels.chunks_exact(3) {
            for c in 0..3 {
                lo[c] = lo[c].min(p[c]);
                hi[c] = hi[c].max(p[c]);
            }
        }
        let out = resize_bilinear_256(&img);
        for p in out.pixels.chunks_exact(3) {
            for c in 0..3 {
                assert!(p[c] >= lo[c] && p[c] <= hi[c]);
            }
        }
    }

    #[test]
    fn normalize_known_values() {
        let mut img = RawImage::constant(256, 256, [124, 255, 0]).unwrap();
        img.set(0, 0, 0, 124);
        let out = normalize_imagenet(&img).unwrap();
        assert!(out.get(0, 0, 0).abs() < 0.01);
        assert!((out.get(1, 0, 0) - 2.4286).abs() < 1e-3);
        assert!((out.get(2, 0, 0) - (-1.8044)).abs() < 1e-3);
    }

    #[test]
    fn normalize_is_affine_per_channel() {
        for c in 0..3 {
            let mut a = RawImage::constant(256, 256, [10, 20, 30]).unwrap();
            let mut b = a.clone();
            a.set(3, 5, c, 200);
            b.set(3, 5, c, 50);
            let na = normalize_imagenet(&a).unwrap();
            let nb = normalize_imagenet(&b).unwrap();
            let diff = na.get(c, 5, 3) - nb.get(c, 5, 3);
            let expected = (200.0 - 50.0) / (255.0 * IMAGENET_STD[c]);
            assert!((diff - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_rejects_wrong_size() {
        let img = RawImage::constant(128, 128, [0, 0, 0]).unwrap();
        assert!(normalize_imagenet(&img).is_err());
    }

    #[test]
    fn augment_zero_ranges_is_identity() {
        let img = gradient(32, 24);
        let cfg = AugmentConfig {
            enabled: true,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue: 0.0,
        };
        assert_eq!(augment_color(&img, &cfg, 7).unwrap(), img);
    }

    #[test]
    fn augment_disabled_is_identity() {
        let img = gradient(32, 24);
        let cfg = AugmentConfig {
            enabled: false,
            ..AugmentConfig::default()
        };
        assert_eq!(augment_color(&img, &cfg, 7).unwrap(), img);
    }

    #[test]
    fn augment_same_seed_same_output() {
        let img = gradient(32, 24);
        let cfg = AugmentConfig {
            enabled: true,
            brightness: 0.3,
            contrast: 0.3,
            saturation: 0.3,
            hue: 0.1,
        };
        let a = augment_color(&img, &cfg, 42).unwrap();
        let b = augment_color(&img, &cfg, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn augment_brightness_bound_on_gray() {
        let img = RawImage::constant(16, 16, [128, 128, 128]).unwrap();
        let cfg = AugmentConfig {
            enabled: true,
            brightness: 0.5,
            contrast: 0.0,
            saturation: 0.0,
            hue: 0.0,
        };
        for seed in 0..20 {
            let out = augment_color(&img, &cfg, seed).unwrap();
            let first = out.pixels[0];
            assert!(out.pixels.iter().all(|&v| v == first));
            assert!((64..=192).contains(&first), "seed {seed} gave {first}");
        }
    }

    #[test]
    fn augment_rejects_out_of_range_config() {
        let cfg = AugmentConfig {
            enabled: true,
            brightness: 0.6,
            ..AugmentConfig::default()
        };
        let img = gradient(4, 4);
        assert!(augment_color(&img, &cfg, 0).is_err());
    }

    #[test]
    fn pipeline_shape_is_fixed() {
        for (w, h) in [(2, 2), (64, 48), (256, 256), (640, 480)] {
            let out = preprocess_image(&checker(w, h), None).unwrap();
            assert_eq!(out.data.len(), 3 * 256 * 256);
            assert!(out.data.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn ppm_round_trip_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let img = gradient(33, 21);
        write_ppm(&img, &path).unwrap();
        assert_eq!(read_ppm(&path).unwrap(), img);
    }

    #[test]
    fn ppm_parser_accepts_comments() {
        let mut bytes = b"P6 # comment\n# another\n 2\n2 # trailing\n255\n".to_vec();
        bytes.extend_from_slice(&[1u8; 12]);
        let img = parse_ppm(&bytes).unwrap();
        assert_eq!((img.width, img.height), (2, 2));
    }

    #[test]
    fn ppm_parser_rejects_bad_inputs() {
        assert!(parse_ppm(b"P5\n2 2\n255\n").is_err());
        assert!(parse_ppm(b"P6\n2 2\n65535\n").is_err());
        let mut truncated = b"P6\n4 4\n255\n".to_vec();
        truncated.extend_from_slice(&[0u8; 10]);
        assert!(parse_ppm(&truncated).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn prop_resize_within_channel_bounds(
            w in 2usize..40,
            h in 2usize..40,
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pixels: Vec<u8> = (0..w * h * 3).map(|_| rng.gen()).collect();
            let img = RawImage::new(w, h, pixels).unwrap();
            let mut lo = [255u8; 3];
            let mut hi = [0u8; 3];
            for p in img.pixels.chunks_exact(3) {
                for c in 0..3 {
                    lo[c] = lo[c].min(p[c]);
                    hi[c] = hi[c].max(p[c]);
                }
            }
            let out = resize_bilinear_256(&img);
            for p in out.pixels.chunks_exact(3) {
                for c in 0..3 {
                    prop_assert!(p[c] >= lo[c] && p[c] <= hi[c]);
                }
            }
        }

        #[test]
        fn prop_augment_deterministic(seed in 0u64..500) {
            let img = gradient(12, 9);
            let cfg = AugmentConfig {
                enabled: true,
                brightness: 0.4,
                contrast: 0.25,
                saturation: 0.5,
                hue: 0.2,
            };
            let a = augment_color(&img, &cfg, seed).unwrap();
            let b = augment_color(&img, &cfg, seed).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
