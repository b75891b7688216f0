use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::figure::{skeleton_at_yaw, Person};
use super::render::{render_heatmaps, render_image, render_semantics};
use super::{ImageTensor, PoseSkeleton, SemanticMap};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_persons: usize,
    pub yaw_step_deg: f64,
    pub image_size: usize,
    pub seed: u64,
    /// Held-out person count; `None` picks `max(1, n_persons / 5)`.
    #[serde(default)]
    pub test_persons: Option<usize>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_persons: 28,
            yaw_step_deg: 15.0,
            image_size: 64,
            seed: 0,
            test_persons: None,
        }
    }
}

impl DatasetConfig {
    pub fn yaw_count(&self) -> Result<usize> {
        let steps = 360.0 / self.yaw_step_deg;
        let n = libm::round(steps);
        if !(self.yaw_step_deg > 0.0) || libm::fabs(steps - n) > 1e-9 || n < 1.0 {
            return Err(Error::config(format!(
                "360 is not divisible by the yaw step {}",
                self.yaw_step_deg
            )));
        }
        Ok(n as usize)
    }

    pub fn test_count(&self) -> usize {
        self.test_persons.unwrap_or((self.n_persons / 5).max(1))
    }
}

/// One rendered view of one person.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub person: usize,
    pub yaw_index: usize,
    pub yaw_deg: f64,
    pub skeleton: PoseSkeleton,
    pub semantics: SemanticMap,
    pub image: ImageTensor,
}

impl Frame {
    pub fn heatmaps(&self, sigma: f64) -> Tensor {
        render_heatmaps(&self.skeleton, sigma, self.image.height())
    }
}

/// Every person rendered at every yaw, split by person.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub persons: Vec<Person>,
    /// `frames[person][yaw_index]`.
    pub frames: Vec<Vec<Frame>>,
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
}

impl Dataset {
    pub fn yaw_count(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    pub fn frame_count(&self) -> usize {
        self.frames.iter().map(Vec::len).sum()
    }

    pub fn frame(&self, person: usize, yaw_index: usize) -> &Frame {
        let n = self.yaw_count();
        &self.frames[person][yaw_index % n]
    }

    pub fn image_size(&self) -> usize {
        self.config.image_size
    }

    /// FNV-1a digest over every frame's coordinates, labels and pixels.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for f in self.frames.iter().flatten() {
            for p in &f.skeleton.points {
                feed(&p[0].to_bits().to_le_bytes());
                feed(&p[1].to_bits().to_le_bytes());
            }
            feed(&f.semantics.labels);
            for v in f.image.tensor().data() {
                feed(&v.to_bits().to_le_bytes());
            }
        }
        for &id in &self.test_ids {
            feed(&(id as u64).to_le_bytes());
        }
        h
    }
}

/// Renders `n_persons` figures at every multiple of `yaw_step_deg`.
pub fn gen_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    let yaws = cfg.yaw_count()?;
    let n_test = cfg.test_count();
    if cfg.n_persons < 2 || n_test == 0 || n_test >= cfg.n_persons {
        return Err(Error::config(format!(
            "cannot split {} persons into train and {} test",
            cfg.n_persons, n_test
        )));
    }
    if cfg.image_size < 16 || !cfg.image_size.is_multiple_of(4) {
        return Err(Error::config("image size must be a multiple of 4, at least 16"));
    }
    let persons: Vec<Person> = (0..cfg.n_persons)
        .map(|i| Person::random(i, cfg.seed.wrapping_mul(1_000_003).wrapping_add(i as u64)))
        .collect();
    let frames = persons
        .iter()
        .map(|p| {
            (0..yaws)
                .map(|y| {
                    let yaw_deg = y as f64 * cfg.yaw_step_deg;
                    let skeleton = skeleton_at_yaw(p, yaw_deg);
                    Frame {
                        person: p.id,
                        yaw_index: y,
                        yaw_deg,
                        semantics: render_semantics(&skeleton, cfg.image_size),
                        image: render_image(p, &skeleton, cfg.image_size),
                        skeleton,
                    }
                })
                .collect()
        })
        .collect();
    let mut ids: Vec<usize> = (0..cfg.n_persons).collect();
    ids.shuffle(&mut crate::rng_from_seed(cfg.seed ^ 0x5EED_0005_0111_7000));
    let mut test_ids = ids[..n_test].to_vec();
    let mut train_ids = ids[n_test..].to_vec();
    test_ids.sort_unstable();
    train_ids.sort_unstable();
    Ok(Dataset {
        config: cfg.clone(),
        persons,
        frames,
        train_ids,
        test_ids,
    })
}
