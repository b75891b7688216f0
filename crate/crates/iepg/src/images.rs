//! P6 pixmap IO and the visual by-products: skeleton overlays and
//! colour-coded semantic maps.

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ImageEncoder, ImageReader, RgbImage};
use iepg_core::pose::{kp, ImageTensor, PoseSkeleton, SemanticMap, NUM_LABELS};
use iepg_core::Tensor;

use crate::error::{CliError, CliResult};

/// Body-18 limb connections drawn in overlays.
pub const BONES: [(usize, usize); 17] = [
    (kp::NECK, kp::R_SHOULDER),
    (kp::R_SHOULDER, kp::R_ELBOW),
    (kp::R_ELBOW, kp::R_WRIST),
    (kp::NECK, kp::L_SHOULDER),
    (kp::L_SHOULDER, kp::L_ELBOW),
    (kp::L_ELBOW, kp::L_WRIST),
    (kp::NECK, kp::R_HIP),
    (kp::R_HIP, kp::R_KNEE),
    (kp::R_KNEE, kp::R_ANKLE),
    (kp::NECK, kp::L_HIP),
    (kp::L_HIP, kp::L_KNEE),
    (kp::L_KNEE, kp::L_ANKLE),
    (kp::NECK, kp::NOSE),
    (kp::NOSE, kp::R_EYE),
    (kp::R_EYE, kp::R_EAR),
    (kp::NOSE, kp::L_EYE),
    (kp::L_EYE, kp::L_EAR),
];

/// Label colours: background, head, torso, left/right arm, left/right leg.
pub const PALETTE: [[u8; 3]; NUM_LABELS] = [
    [0, 0, 0],
    [230, 159, 0],
    [86, 180, 233],
    [0, 158, 115],
    [240, 228, 66],
    [0, 114, 178],
    [213, 94, 0],
];

const BONE_COLOR: [u8; 3] = [255, 40, 40];
const JOINT_COLOR: [u8; 3] = [255, 255, 255];

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn to_rgb(img: &ImageTensor) -> RgbImage {
    let (h, w) = (img.height(), img.width());
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        image::Rgb(img.pixel(y as usize, x as usize).map(quantize))
    })
}

pub fn from_rgb(img: &RgbImage) -> CliResult<ImageTensor> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let t = Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        img.get_pixel((p % w) as u32, (p / w) as u32)[c] as f64 / 255.0
    });
    Ok(ImageTensor::new(t)?)
}

pub fn write_rgb(path: &Path, img: &RgbImage) -> CliResult<()> {
    let mut buf = Vec::with_capacity(16 + img.as_raw().len());
    PnmEncoder::new(&mut buf)
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::Rgb8)
        .map_err(|source| CliError::Image { path: path.into(), source })?;
    std::fs::write(path, buf).map_err(|e| CliError::io(path, e))
}

/// Writes a binary (P6) pixmap, 8 bits per channel.
pub fn write_ppm(path: &Path, img: &ImageTensor) -> CliResult<()> {
    write_rgb(path, &to_rgb(img))
}

pub fn read_ppm(path: &Path) -> CliResult<ImageTensor> {
    let img = ImageReader::open(path)
        .map_err(|e| CliError::io(path, e))?
        .with_guessed_format()
        .map_err(|e| CliError::io(path, e))?
        .decode()
        .map_err(|source| CliError::Image { path: path.into(), source })?;
    from_rgb(&img.to_rgb8())
}

pub fn semantic_rgb(map: &SemanticMap) -> RgbImage {
    RgbImage::from_fn(map.width as u32, map.height as u32, |x, y| {
        let l = map.labels[y as usize * map.width + x as usize] as usize;
        image::Rgb(PALETTE[l.min(NUM_LABELS - 1)])
    })
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, image::Rgb(c));
    }
}

/// Skeleton drawn over `base`: visible bones as 1-px lines, visible joints
/// as 3×3 dots.
pub fn overlay(base: &ImageTensor, s: &PoseSkeleton) -> RgbImage {
    let mut img = to_rgb(base);
    let (w, h) = (img.width() as f64, img.height() as f64);
    let px = |p: [f64; 2]| (p[0] * (w - 1.0), p[1] * (h - 1.0));
    for &(a, b) in &BONES {
        if !(s.visible[a] && s.visible[b]) {
            continue;
        }
        let ((x0, y0), (x1, y1)) = (px(s.points[a]), px(s.points[b]));
        let n = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
        for i in 0..=n {
            let t = i as f64 / n as f64;
            put(&mut img, (x0 + t * (x1 - x0)).round() as i64, (y0 + t * (y1 - y0)).round() as i64, BONE_COLOR);
        }
    }
    for (p, _) in s.points.iter().zip(&s.visible).filter(|(_, &v)| v) {
        let (x, y) = px(*p);
        let (x, y) = (x.round() as i64, y.round() as i64);
        for dy in -1..=1 {
            for dx in -1..=1 {
                put(&mut img, x + dx, y + dy, JOINT_COLOR);
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_round_trips_8_bit_values() {
        for k in 0..=255u8 {
            assert_eq!(quantize(k as f64 / 255.0), k);
        }
    }

    #[test]
    fn palette_colours_are_distinct() {
        for (i, a) in PALETTE.iter().enumerate() {
            for b in &PALETTE[i + 1..] {
                assert_ne!(a, b);
            }
        }
    }
}
