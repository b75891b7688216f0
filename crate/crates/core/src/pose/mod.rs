//! Skeletons, semantic maps, images and the procedural turning-figure
//! dataset.

mod dataset;
mod figure;
pub mod render;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use self::dataset::{gen_dataset, Dataset, DatasetConfig, Frame};
pub use self::figure::{project_at_yaw, skeleton_at_yaw, Appearance, Pattern, Person};
pub use self::render::{
    render_heatmaps, render_image, render_semantics, BodyPart, Capsule, BACKGROUND,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Number of keypoints (body-18 layout).
pub const K: usize = 18;

/// Number of semantic labels, background included.
pub const NUM_LABELS: usize = 7;

/// Coordinate stored for invisible keypoints.
pub const SENTINEL: f64 = -1.0;

pub mod kp {
    pub const NOSE: usize = 0;
    pub const NECK: usize = 1;
    pub const R_SHOULDER: usize = 2;
    pub const R_ELBOW: usize = 3;
    pub const R_WRIST: usize = 4;
    pub const L_SHOULDER: usize = 5;
    pub const L_ELBOW: usize = 6;
    pub const L_WRIST: usize = 7;
    pub const R_HIP: usize = 8;
    pub const R_KNEE: usize = 9;
    pub const R_ANKLE: usize = 10;
    pub const L_HIP: usize = 11;
    pub const L_KNEE: usize = 12;
    pub const L_ANKLE: usize = 13;
    pub const R_EYE: usize = 14;
    pub const L_EYE: usize = 15;
    pub const R_EAR: usize = 16;
    pub const L_EAR: usize = 17;
}

/// Index of the same joint on the other body side.
pub const fn mirror_index(k: usize) -> usize {
    match k {
        2 => 5,
        3 => 6,
        4 => 7,
        5 => 2,
        6 => 3,
        7 => 4,
        8 => 11,
        9 => 12,
        10 => 13,
        11 => 8,
        12 => 9,
        13 => 10,
        14 => 15,
        15 => 14,
        16 => 17,
        17 => 16,
        other => other,
    }
}

/// `K` keypoints in normalized image units with visibility flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSkeleton {
    pub points: Vec<[f64; 2]>,
    pub visible: Vec<bool>,
}

impl PoseSkeleton {
    /// Builds a skeleton, forcing invisible points to the sentinel.
    pub fn new(points: Vec<[f64; 2]>, visible: Vec<bool>) -> Result<Self> {
        if points.len() != K || visible.len() != K {
            return Err(Error::shape("skeleton", &[points.len()], &[K]));
        }
        let points = points
            .into_iter()
            .zip(&visible)
            .map(|(p, &v)| if v { p } else { [SENTINEL, SENTINEL] })
            .collect();
        Ok(PoseSkeleton { points, visible })
    }

    pub fn invisible() -> Self {
        PoseSkeleton {
            points: alloc::vec![[SENTINEL, SENTINEL]; K],
            visible: alloc::vec![false; K],
        }
    }

    /// Checks the layout invariants.
    pub fn validate(&self) -> Result<()> {
        if self.points.len() != K || self.visible.len() != K {
            return Err(Error::shape("skeleton", &[self.points.len()], &[K]));
        }
        for (p, &v) in self.points.iter().zip(&self.visible) {
            let ok = if v {
                (0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1])
            } else {
                p[0] == SENTINEL && p[1] == SENTINEL
            };
            if !ok {
                return Err(Error::contract("keypoint violates the visibility convention"));
            }
        }
        Ok(())
    }

    /// `2K` flattened coordinates `[x0, y0, x1, y1, ...]`.
    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p[0], p[1]]).collect()
    }

    pub fn visibility_mask(&self) -> Vec<f64> {
        self.visible.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect()
    }

    /// Flattened coordinates multiplied by visibility (invisible → 0).
    pub fn masked_flat(&self) -> Vec<f64> {
        self.points
            .iter()
            .zip(&self.visible)
            .flat_map(|(p, &v)| if v { [p[0], p[1]] } else { [0.0, 0.0] })
            .collect()
    }

    /// Horizontal mirror about `x = 0.5` with left/right labels swapped.
    pub fn mirrored(&self) -> Self {
        let mut points = alloc::vec![[SENTINEL, SENTINEL]; K];
        let mut visible = alloc::vec![false; K];
        for k in 0..K {
            let src = mirror_index(k);
            visible[k] = self.visible[src];
            if visible[k] {
                let p = self.points[src];
                points[k] = [1.0 - p[0], p[1]];
            }
        }
        PoseSkeleton { points, visible }
    }

    /// Mean Euclidean distance over keypoints visible in `reference`.
    pub fn mean_keypoint_error(&self, reference: &PoseSkeleton) -> f64 {
        let mut total = 0.0;
        let mut n = 0;
        for k in 0..K {
            if reference.visible[k] {
                let dx = self.points[k][0] - reference.points[k][0];
                let dy = self.points[k][1] - reference.points[k][1];
                total += libm::sqrt(dx * dx + dy * dy);
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            total / n as f64
        }
    }
}

/// Per-pixel body-part labels, row-major `H×W`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

impl SemanticMap {
    pub fn background(height: usize, width: usize) -> Self {
        SemanticMap {
            height,
            width,
            labels: alloc::vec![0; height * width],
        }
    }

    /// One-hot encoding as `[NUM_LABELS, H, W]`.
    pub fn one_hot(&self) -> Tensor {
        let hw = self.height * self.width;
        let mut t = Tensor::zeros(&[NUM_LABELS, self.height, self.width]);
        for (i, &l) in self.labels.iter().enumerate() {
            t.data_mut()[l as usize * hw + i] = 1.0;
        }
        t
    }

    pub fn histogram(&self) -> [usize; NUM_LABELS] {
        let mut h = [0; NUM_LABELS];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }
}

/// RGB image `[3, H, W]` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor(Tensor);

impl ImageTensor {
    pub fn new(t: Tensor) -> Result<Self> {
        let (c, _, _) = t.dims3()?;
        if c != 3 {
            return Err(Error::shape("image", t.shape(), &[3]));
        }
        Ok(ImageTensor(t.map(|v| v.clamp(0.0, 1.0))))
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let hw = height * width;
        ImageTensor(Tensor::from_fn(&[3, height, width], |i| rgb[i / hw]))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let (h, w) = (self.height(), self.width());
        let d = self.0.data();
        [d[y * w + x], d[h * w + y * w + x], d[2 * h * w + y * w + x]]
    }
}

/// One `(skeleton, semantics, image)` frame of an evolution.
#[derive(Clone, Debug, PartialEq)]
pub struct EvolutionFrame {
    pub skeleton: PoseSkeleton,
    pub semantics: SemanticMap,
    pub image: ImageTensor,
}

/// Frames from source (index 0) to target (last).
#[derive(Clone, Debug, PartialEq)]
pub struct EvolutionSequence {
    frames: Vec<EvolutionFrame>,
}

impl EvolutionSequence {
    pub fn new(frames: Vec<EvolutionFrame>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::contract("evolution sequence must be non-empty"))?;
        let (h, w) = (first.image.height(), first.image.width());
        if frames
            .iter()
            .any(|f| f.image.height() != h || f.image.width() != w)
        {
            return Err(Error::contract("evolution frames must share image dimensions"));
        }
        Ok(EvolutionSequence { frames })
    }

    pub fn frames(&self) -> &[EvolutionFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn last(&self) -> &EvolutionFrame {
        self.frames.last().expect("non-empty by construction")
    }
}
