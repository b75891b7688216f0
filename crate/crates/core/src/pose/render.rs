//! Capsule rasterization of skeletons into images, part labels and keypoint
//! heatmaps.
//!
//! All geometry is derived from the skeleton alone, so the image and the
//! semantic map of a frame always share it; the person only contributes
//! colours.

use alloc::vec::Vec;

use super::figure::{Pattern, Person};
use super::{kp, ImageTensor, PoseSkeleton, SemanticMap, K};
use crate::tensor::Tensor;

pub const BACKGROUND: [f64; 3] = [0.92, 0.92, 0.92];
const SKIN: [f64; 3] = [0.96, 0.80, 0.69];
const HAIR: [f64; 3] = [0.25, 0.15, 0.08];
const DEFAULT_TORSO: f64 = 0.28;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum BodyPart {
    Head = 1,
    Torso = 2,
    LeftArm = 3,
    RightArm = 4,
    LeftLeg = 5,
    RightLeg = 6,
}

/// How a capsule is coloured.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Fill {
    Legs,
    Body,
    Skin,
    Head { facing: bool },
}

/// Segment `a`–`b` thickened by `radius`, in normalized units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Capsule {
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub radius: f64,
    pub part: BodyPart,
    fill: Fill,
}

impl Capsule {
    /// Distance from `p` to the capsule's core segment.
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        let (dx, dy) = (self.b[0] - self.a[0], self.b[1] - self.a[1]);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 {
            (((p[0] - self.a[0]) * dx + (p[1] - self.a[1]) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (qx, qy) = (self.a[0] + t * dx - p[0], self.a[1] + t * dy - p[1]);
        libm::sqrt(qx * qx + qy * qy)
    }
}

fn torso_length(s: &PoseSkeleton) -> f64 {
    let hips: Vec<f64> = [kp::R_HIP, kp::L_HIP]
        .iter()
        .filter(|&&k| s.visible[k])
        .map(|&k| s.points[k][1])
        .collect();
    if !s.visible[kp::NECK] || hips.is_empty() {
        return DEFAULT_TORSO;
    }
    let len = hips.iter().sum::<f64>() / hips.len() as f64 - s.points[kp::NECK][1];
    if len > 0.05 {
        len
    } else {
        DEFAULT_TORSO
    }
}

/// Capsules of a skeleton in draw order: legs, torso, arms, head.
pub fn capsules(s: &PoseSkeleton) -> Vec<Capsule> {
    let torso = torso_length(s);
    let limb_r = 0.12 * torso;
    let mut out = Vec::new();
    let mut seg = |a: usize, b: usize, radius: f64, part: BodyPart, fill: Fill| {
        if s.visible[a] && s.visible[b] {
            out.push(Capsule {
                a: s.points[a],
                b: s.points[b],
                radius,
                part,
                fill,
            });
        }
    };
    seg(kp::R_HIP, kp::R_KNEE, limb_r, BodyPart::RightLeg, Fill::Legs);
    seg(kp::R_KNEE, kp::R_ANKLE, limb_r, BodyPart::RightLeg, Fill::Legs);
    seg(kp::L_HIP, kp::L_KNEE, limb_r, BodyPart::LeftLeg, Fill::Legs);
    seg(kp::L_KNEE, kp::L_ANKLE, limb_r, BodyPart::LeftLeg, Fill::Legs);

    let hips: Vec<[f64; 2]> = [kp::R_HIP, kp::L_HIP]
        .iter()
        .filter(|&&k| s.visible[k])
        .map(|&k| s.points[k])
        .collect();
    if s.visible[kp::NECK] && !hips.is_empty() {
        let n = hips.len() as f64;
        let pelvis = [
            hips.iter().map(|p| p[0]).sum::<f64>() / n,
            hips.iter().map(|p| p[1]).sum::<f64>() / n,
        ];
        out.push(Capsule {
            a: s.points[kp::NECK],
            b: pelvis,
            radius: 0.29 * torso,
            part: BodyPart::Torso,
            fill: Fill::Body,
        });
    }

    let mut seg = |a: usize, b: usize, part: BodyPart, fill: Fill| {
        if s.visible[a] && s.visible[b] {
            out.push(Capsule {
                a: s.points[a],
                b: s.points[b],
                radius: 0.9 * limb_r,
                part,
                fill,
            });
        }
    };
    seg(kp::R_SHOULDER, kp::R_ELBOW, BodyPart::RightArm, Fill::Body);
    seg(kp::R_ELBOW, kp::R_WRIST, BodyPart::RightArm, Fill::Skin);
    seg(kp::L_SHOULDER, kp::L_ELBOW, BodyPart::LeftArm, Fill::Body);
    seg(kp::L_ELBOW, kp::L_WRIST, BodyPart::LeftArm, Fill::Skin);

    if s.visible[kp::NECK] {
        let neck = s.points[kp::NECK];
        let c = [neck[0], neck[1] - 0.2 * torso];
        out.push(Capsule {
            a: c,
            b: c,
            radius: 0.18 * torso,
            part: BodyPart::Head,
            fill: Fill::Head {
                facing: s.visible[kp::NOSE],
            },
        });
    }
    out
}

fn pixel_center(i: usize, size: usize) -> f64 {
    (i as f64 + 0.5) / size as f64
}

/// Fractional coverage of a pixel at distance `d` (pixels) from a capsule
/// of radius `r` (pixels).
fn coverage(r: f64, d: f64) -> f64 {
    (r + 0.5 - d).clamp(0.0, 1.0)
}

fn fill_color(person: &Person, fill: Fill, row: usize, col: usize) -> [f64; 3] {
    let a = &person.appearance;
    match fill {
        Fill::Legs => a.leg_color,
        Fill::Skin => SKIN,
        Fill::Head { facing } => {
            if facing {
                SKIN
            } else {
                HAIR
            }
        }
        Fill::Body => {
            let alt = match a.pattern {
                Pattern::Solid => false,
                Pattern::Stripe => (row / 2) % 2 == 1,
                Pattern::Checker => (row / 3 + col / 3) % 2 == 1,
            };
            a.body_colors[alt as usize]
        }
    }
}

/// Draws the visible limbs of `skeleton` as anti-aliased capsules.
pub fn render_image(person: &Person, skeleton: &PoseSkeleton, size: usize) -> ImageTensor {
    let caps = capsules(skeleton);
    let plane = size * size;
    let mut t = Tensor::from_fn(&[3, size, size], |i| BACKGROUND[i / plane]);
    let scale = size as f64;
    for row in 0..size {
        for col in 0..size {
            let p = [pixel_center(col, size), pixel_center(row, size)];
            let mut rgb = BACKGROUND;
            for cap in &caps {
                let alpha = coverage(cap.radius * scale, cap.distance(p) * scale);
                if alpha > 0.0 {
                    let c = fill_color(person, cap.fill, row, col);
                    for ch in 0..3 {
                        rgb[ch] = alpha * c[ch] + (1.0 - alpha) * rgb[ch];
                    }
                }
            }
            for (ch, &v) in rgb.iter().enumerate() {
                t.data_mut()[ch * plane + row * size + col] = v;
            }
        }
    }
    ImageTensor::new(t).expect("three channels")
}

/// Part labels over the same capsule geometry; later capsules overwrite
/// earlier ones. A pixel belongs to a capsule when its centre lies within
/// the radius.
pub fn render_semantics(skeleton: &PoseSkeleton, size: usize) -> SemanticMap {
    let caps = capsules(skeleton);
    let mut map = SemanticMap::background(size, size);
    for row in 0..size {
        for col in 0..size {
            let p = [pixel_center(col, size), pixel_center(row, size)];
            for cap in &caps {
                if cap.distance(p) <= cap.radius {
                    map.labels[row * size + col] = cap.part as u8;
                }
            }
        }
    }
    map
}

/// One Gaussian bump per keypoint, peak 1 at the keypoint's nearest pixel;
/// invisible keypoints give an all-zero channel.
pub fn render_heatmaps(skeleton: &PoseSkeleton, sigma: f64, size: usize) -> Tensor {
    let plane = size * size;
    let mut t = Tensor::zeros(&[K, size, size]);
    let inv = 1.0 / (2.0 * sigma * sigma);
    for k in 0..K {
        if !skeleton.visible[k] {
            continue;
        }
        let p = skeleton.points[k];
        let cx = libm::round(p[0] * size as f64 - 0.5);
        let cy = libm::round(p[1] * size as f64 - 0.5);
        let ch = &mut t.data_mut()[k * plane..(k + 1) * plane];
        for row in 0..size {
            let dy = row as f64 - cy;
            for col in 0..size {
                let dx = col as f64 - cx;
                ch[row * size + col] = libm::exp(-(dx * dx + dy * dy) * inv);
            }
        }
    }
    t
}
