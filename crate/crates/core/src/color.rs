//! Image and skin-mask ingest, sRGB to CIELab conversion and per-pixel
//! Individual Typology Angle (ITA) extraction.

use std::path::Path;

use crate::distribution::SkinDistribution;
use crate::error::{Error, Result};

/// Decoded 8-bit sRGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!(
                "image must have non-zero area, got {width}x{height}"
            )));
        }
        if pixels.len() != width as usize * height as usize {
            return Err(Error::LengthMismatch {
                what: "pixel count vs width*height",
                left: pixels.len(),
                right: width as usize * height as usize,
            });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }
}

/// One flag per pixel; `true` marks skin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkinMask {
    width: u32,
    height: u32,
    flags: Vec<bool>,
}

impl SkinMask {
    pub fn new(width: u32, height: u32, flags: Vec<bool>) -> Result<Self> {
        if flags.len() != width as usize * height as usize {
            return Err(Error::LengthMismatch {
                what: "mask flag count vs width*height",
                left: flags.len(),
                right: width as usize * height as usize,
            });
        }
        Ok(Self { width, height, flags })
    }

    /// Nonzero bytes are skin.
    pub fn from_bytes(width: u32, height: u32, bytes: &[u8]) -> Result<Self> {
        Self::new(width, height, bytes.iter().map(|&v| v > 0).collect())
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabPixel {
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

fn decode(path: &Path) -> Result<image::DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory(&bytes).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::ZeroArea {
            path: path.to_path_buf(),
        });
    }
    Ok(img)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let img = decode(path.as_ref())?.to_rgb8();
    let (w, h) = img.dimensions();
    let pixels = img.pixels().map(|p| p.0).collect();
    RgbImage::new(w, h, pixels)
}

/// Loads a mask; colour masks are reduced to luma first.
pub fn load_mask(path: impl AsRef<Path>) -> Result<SkinMask> {
    let img = decode(path.as_ref())?.to_luma8();
    let (w, h) = img.dimensions();
    SkinMask::from_bytes(w, h, img.as_raw())
}

// sRGB primaries, D65 white, 2 degree observer.
const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

// White point as the image of RGB (1, 1, 1), so white maps to a = b = 0 exactly.
const WHITE: [f64; 3] = [
    SRGB_TO_XYZ[0][0] + SRGB_TO_XYZ[0][1] + SRGB_TO_XYZ[0][2],
    SRGB_TO_XYZ[1][0] + SRGB_TO_XYZ[1][1] + SRGB_TO_XYZ[1][2],
    SRGB_TO_XYZ[2][0] + SRGB_TO_XYZ[2][1] + SRGB_TO_XYZ[2][2],
];

const LAB_EPSILON: f64 = 216.0 / 24389.0;
const LAB_KAPPA: f64 = 24389.0 / 27.0;

fn srgb_to_linear(c: u8) -> f64 {
    let c = f64::from(c) / 255.0;
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    if t > LAB_EPSILON {
        t.cbrt()
    } else {
        (LAB_KAPPA * t + 16.0) / 116.0
    }
}

// Rounding residue on neutral greys would otherwise pass the `b != 0` guard.
fn snap_chroma(v: f64) -> f64 {
    if v.abs() < 1e-9 {
        0.0
    } else {
        v
    }
}

pub fn srgb_to_cielab(rgb: [u8; 3]) -> LabPixel {
    let lin = rgb.map(srgb_to_linear);
    let mut xyz = [0.0; 3];
    for (row, out) in SRGB_TO_XYZ.iter().zip(xyz.iter_mut()) {
        *out = row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2];
    }
    let fx = lab_f(xyz[0] / WHITE[0]);
    let fy = lab_f(xyz[1] / WHITE[1]);
    let fz = lab_f(xyz[2] / WHITE[2]);
    LabPixel {
        l: (116.0 * fy - 16.0).clamp(0.0, 100.0),
        a: snap_chroma(500.0 * (fx - fy)),
        b: snap_chroma(200.0 * (fy - fz)),
    }
}

/// ITA in degrees; `None` when `b == 0`.
pub fn ita_of(p: LabPixel) -> Option<f64> {
    if p.b == 0.0 {
        return None;
    }
    Some(((p.l - 50.0) / p.b).atan().to_degrees())
}

/// ITA of every pixel that passes the `L != 0 && b != 0` guard.
pub fn ita_samples(pixels: impl IntoIterator<Item = LabPixel>) -> Vec<f64> {
    pixels.into_iter().filter(|p| p.l != 0.0).filter_map(ita_of).collect()
}

/// Collects one ITA sample per masked pixel with `L != 0` and `b != 0`.
pub fn skin_distribution(img: &RgbImage, mask: &SkinMask, source_id: impl Into<String>) -> Result<SkinDistribution> {
    let source_id = source_id.into();
    if img.width != mask.width || img.height != mask.height {
        return Err(Error::DimensionMismatch {
            image: (img.width, img.height),
            mask: (mask.width, mask.height),
        });
    }
    let masked = mask.count();
    let samples = ita_samples(
        img.pixels
            .iter()
            .zip(&mask.flags)
            .filter(|(_, &skin)| skin)
            .map(|(&px, _)| srgb_to_cielab(px)),
    );
    if samples.is_empty() {
        return Err(Error::EmptyDistribution(Some(source_id)));
    }
    let excluded = masked - samples.len();
    if excluded as f64 > 0.99 * masked as f64 {
        log::warn!(
            "{source_id}: {excluded} of {masked} skin pixels excluded (L = 0 or b = 0); \
             image may be greyscale"
        );
    }
    SkinDistribution::new(source_id, samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_and_black() {
        let w = srgb_to_cielab([255, 255, 255]);
        assert!((w.l - 100.0).abs() < 1e-6);
        assert!(w.a.abs() < 1e-6 && w.b.abs() < 1e-6);
        let k = srgb_to_cielab([0, 0, 0]);
        assert_eq!((k.l, k.a, k.b), (0.0, 0.0, 0.0));
    }

    #[test]
    fn grey_119_matches_reference() {
        // Reference value from an independent sRGB/D65 implementation.
        let g = srgb_to_cielab([119, 119, 119]);
        assert!((g.l - 50.034_438_792_538_225).abs() < 1e-4, "{}", g.l);
        assert_eq!((g.a, g.b), (0.0, 0.0));
    }

    #[test]
    fn chromatic_reference_values() {
        let p = srgb_to_cielab([200, 150, 120]);
        assert!((p.l - 66.097_848).abs() < 1e-3);
        assert!((p.a - 14.849_815).abs() < 0.05);
        assert!((p.b - 23.132_817).abs() < 0.05);
    }

    #[test]
    fn ita_cases() {
        let ita = |l, b| ita_of(LabPixel { l, a: 0.0, b }).unwrap();
        assert_eq!(ita(50.0, 12.0), 0.0);
        assert!((ita(60.0, 10.0) - 45.0).abs() < 1e-12);
        assert!((ita(71.6, 12.0) - 60.945_395_900_922_86).abs() < 1e-3);
        assert!(ita_of(LabPixel {
            l: 70.0,
            a: 3.0,
            b: 0.0
        })
        .is_none());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let img = RgbImage::new(2, 2, vec![[10, 20, 30]; 4]).unwrap();
        let mask = SkinMask::new(1, 4, vec![true; 4]).unwrap();
        assert!(matches!(
            skin_distribution(&img, &mask, "x"),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn empty_mask_is_empty_distribution() {
        let img = RgbImage::new(2, 1, vec![[200, 150, 120]; 2]).unwrap();
        let mask = SkinMask::new(2, 1, vec![false; 2]).unwrap();
        assert!(matches!(
            skin_distribution(&img, &mask, "x"),
            Err(Error::EmptyDistribution(_))
        ));
    }

    #[test]
    fn greyscale_pixels_never_contribute() {
        let img = RgbImage::new(3, 1, vec![[119, 119, 119], [0, 0, 0], [200, 150, 120]]).unwrap();
        let mask = SkinMask::new(3, 1, vec![true; 3]).unwrap();
        let d = skin_distribution(&img, &mask, "x").unwrap();
        assert_eq!(d.len(), 1);
    }

    #[test]
    fn uniform_and_two_tone_patches() {
        let lab = |l, b| LabPixel { l, a: 5.0, b };
        let uniform = ita_samples(std::iter::repeat_n(lab(60.0, 10.0), 100));
        assert_eq!(uniform.len(), 100);
        assert!(uniform.iter().all(|&v| (v - 45.0).abs() < 1e-12));

        let patch = (0..20).map(|i| if i % 2 == 0 { lab(60.0, 10.0) } else { lab(40.0, 10.0) });
        let mut two = ita_samples(patch);
        two.sort_by(f64::total_cmp);
        assert!(two[..10].iter().all(|&v| (v + 45.0).abs() < 1e-12));
        assert!(two[10..].iter().all(|&v| (v - 45.0).abs() < 1e-12));
    }

    #[test]
    fn mask_threshold_is_nonzero() {
        let m = SkinMask::from_bytes(3, 1, &[0, 128, 255]).unwrap();
        assert_eq!(m.flags(), &[false, true, true]);
    }
}
