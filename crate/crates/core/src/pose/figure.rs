//! Articulated 3-D figure, yaw rotation and orthographic projection.
//!
//! Body frame: `x` points to the figure's left, `y` points down the image,
//! `z` points away from the camera. The figure faces the camera at yaw 0 and
//! stands centred on `x = 0.5`.

use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{kp, PoseSkeleton, K};

/// Texture painted on the torso and upper arms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pattern {
    Solid,
    Stripe,
    Checker,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Appearance {
    pub pattern: Pattern,
    pub body_colors: [[f64; 3]; 2],
    pub leg_color: [f64; 3],
}

/// Limb lengths in normalized image height plus appearance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Person {
    pub id: usize,
    pub seed: u64,
    pub torso: f64,
    pub head: f64,
    pub upper_arm: f64,
    pub lower_arm: f64,
    pub upper_leg: f64,
    pub lower_leg: f64,
    pub appearance: Appearance,
}

impl Person {
    /// Draws a person from `seed`. Limb lengths are positive and sum to
    /// between 0.86 and 0.96.
    pub fn random(id: usize, seed: u64) -> Self {
        let mut rng = crate::rng_from_seed(seed);
        let mut draw = |lo: f64, hi: f64| rng.random_range(lo..hi);
        let raw = [
            draw(0.26, 0.32),
            draw(0.09, 0.12),
            draw(0.12, 0.15),
            draw(0.10, 0.13),
            draw(0.17, 0.21),
            draw(0.16, 0.19),
        ];
        let total: f64 = raw.iter().sum();
        let target = draw(0.86, 0.96);
        let s = target / total;
        let pattern = match (draw(0.0, 3.0)) as usize {
            0 => Pattern::Solid,
            1 => Pattern::Stripe,
            _ => Pattern::Checker,
        };
        let mut color = || [draw(0.05, 0.8), draw(0.05, 0.8), draw(0.05, 0.8)];
        let body_colors = [color(), color()];
        let leg_color = color();
        Person {
            id,
            seed,
            torso: raw[0] * s,
            head: raw[1] * s,
            upper_arm: raw[2] * s,
            lower_arm: raw[3] * s,
            upper_leg: raw[4] * s,
            lower_leg: raw[5] * s,
            appearance: Appearance {
                pattern,
                body_colors,
                leg_color,
            },
        }
    }

    pub fn limb_sum(&self) -> f64 {
        self.torso + self.head + self.upper_arm + self.lower_arm + self.upper_leg + self.lower_leg
    }

    /// Half the distance between the shoulders.
    pub fn shoulder_half_width(&self) -> f64 {
        0.36 * self.torso
    }

    pub fn hip_half_width(&self) -> f64 {
        0.22 * self.torso
    }

    /// Half-extents `(x, z)` of the torso slab used for occlusion.
    pub fn torso_slab(&self) -> (f64, f64) {
        (0.8 * self.shoulder_half_width(), 0.3 * self.shoulder_half_width())
    }

    pub fn head_radius(&self) -> f64 {
        0.5 * self.head
    }

    fn standing_height(&self) -> f64 {
        self.head + self.torso + self.upper_leg + self.lower_leg
    }

    /// Canonical 3-D keypoints in the body frame (yaw 0), `x` relative to the
    /// vertical axis.
    pub fn canonical_joints(&self) -> [[f64; 3]; K] {
        let top = 0.5 - 0.5 * self.standing_height();
        let neck_y = top + self.head;
        let r = self.head_radius();
        let head_c = neck_y - 0.55 * self.head;
        let ws = self.shoulder_half_width();
        let wh = self.hip_half_width();
        let hip_y = neck_y + self.torso;

        let dir = |abduct_deg: f64, forward_deg: f64| {
            let a = abduct_deg.to_radians();
            let f = forward_deg.to_radians();
            [libm::sin(a) * libm::cos(f), libm::cos(a) * libm::cos(f), -libm::sin(f)]
        };
        let step = |from: [f64; 3], d: [f64; 3], len: f64, side: f64| {
            [from[0] + side * d[0] * len, from[1] + d[1] * len, from[2] + d[2] * len]
        };
        let upper = dir(14.0, 12.0);
        let lower = dir(8.0, 40.0);
        let thigh = dir(4.0, 0.0);
        let shin = dir(0.0, 0.0);

        let mut j = [[0.0; 3]; K];
        j[kp::NOSE] = [0.0, head_c + 0.1 * r, -r];
        j[kp::NECK] = [0.0, neck_y, 0.0];
        j[kp::R_EYE] = [-0.35 * r, head_c - 0.15 * r, -0.85 * r];
        j[kp::L_EYE] = [0.35 * r, head_c - 0.15 * r, -0.85 * r];
        j[kp::R_EAR] = [-r, head_c, 0.0];
        j[kp::L_EAR] = [r, head_c, 0.0];
        for (side, sh, el, wr, hp, kn, an) in [
            (-1.0, kp::R_SHOULDER, kp::R_ELBOW, kp::R_WRIST, kp::R_HIP, kp::R_KNEE, kp::R_ANKLE),
            (1.0, kp::L_SHOULDER, kp::L_ELBOW, kp::L_WRIST, kp::L_HIP, kp::L_KNEE, kp::L_ANKLE),
        ] {
            j[sh] = [side * ws, neck_y + 0.02 * self.torso, 0.0];
            j[el] = step(j[sh], upper, self.upper_arm, side);
            j[wr] = step(j[el], lower, self.lower_arm, side);
            j[hp] = [side * wh, hip_y, 0.0];
            j[kn] = step(j[hp], thigh, self.upper_leg, side);
            j[an] = step(j[kn], shin, self.lower_leg, side);
        }
        j
    }
}

/// Rotated, projected joints: `(x, y)` image coordinates and depth `z'`
/// (larger is farther from the camera), before any occlusion test.
pub fn project_at_yaw(person: &Person, yaw_deg: f64) -> Vec<[f64; 3]> {
    let t = yaw_deg.to_radians();
    let (s, c) = (libm::sin(t), libm::cos(t));
    person
        .canonical_joints()
        .iter()
        .map(|&[x, y, z]| [0.5 + x * c + z * s, y, -x * s + z * c])
        .collect()
}

const DEPTH_TOL: f64 = 1e-9;

/// Skeleton of `person` turned by `yaw_deg` about the vertical axis.
///
/// A joint is hidden when it lies behind the torso slab's silhouette, or
/// when a face joint is on the far side of the head.
pub fn skeleton_at_yaw(person: &Person, yaw_deg: f64) -> PoseSkeleton {
    let proj = project_at_yaw(person, yaw_deg);
    let t = yaw_deg.to_radians();
    let (s, c) = (libm::sin(t), libm::cos(t));
    let (sx, sz) = person.torso_slab();
    let half = sx * libm::fabs(c) + sz * libm::fabs(s);
    let joints = person.canonical_joints();
    let (top, bottom) = (joints[kp::NECK][1], joints[kp::R_HIP][1]);

    let mut points = Vec::with_capacity(K);
    let mut visible = Vec::with_capacity(K);
    for (k, p) in proj.iter().enumerate() {
        let behind_torso = p[2] > sz * 0.5 + DEPTH_TOL
            && libm::fabs(p[0] - 0.5) < half - DEPTH_TOL
            && p[1] > top
            && p[1] < bottom;
        let face = matches!(k, kp::NOSE | kp::R_EYE | kp::L_EYE | kp::R_EAR | kp::L_EAR);
        let behind_head = face && p[2] > 0.25 * person.head_radius();
        let vis = !(behind_torso || behind_head);
        points.push([p[0], p[1]]);
        visible.push(vis);
    }
    PoseSkeleton::new(points, visible).expect("K joints")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn limb_sum_below_one() {
        for seed in 0..50 {
            let p = Person::random(0, seed);
            assert!(p.limb_sum() < 1.0 && p.limb_sum() > 0.8);
            assert!([p.torso, p.head, p.upper_arm, p.lower_arm, p.upper_leg, p.lower_leg]
                .iter()
                .all(|&l| l > 0.0));
        }
    }

    #[test]
    fn visible_points_inside_unit_square() {
        for seed in 0..10 {
            let p = Person::random(0, seed);
            for yaw in (0..24).map(|i| i as f64 * 15.0) {
                skeleton_at_yaw(&p, yaw).validate().unwrap();
            }
        }
    }

    #[test]
    fn far_shoulder_hidden_in_profile() {
        let p = Person::random(0, 3);
        let s = skeleton_at_yaw(&p, 90.0);
        // Turning toward the figure's left brings its right side away.
        assert!(!s.visible[kp::R_SHOULDER]);
        assert!(s.visible[kp::L_SHOULDER]);
        let back = skeleton_at_yaw(&p, 180.0);
        assert!(!back.visible[kp::NOSE]);
    }
}
