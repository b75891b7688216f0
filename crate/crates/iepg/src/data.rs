//! On-disk dataset: `person_NNN/yaw_NNN.ppm` frames plus `index.json`.
//!
//! The index records the generator configuration and a digest of the exact
//! (unquantized) frames. Loading regenerates from the configuration and
//! refuses a directory whose digest does not match, so training always sees
//! the full-precision renders while the pixmaps stay inspectable.

use std::fs;
use std::path::Path;

use iepg_core::pose::{gen_dataset, Dataset, DatasetConfig, PoseSkeleton};
use serde::{Deserialize, Serialize};

use crate::checkpoint::write_atomic;
use crate::error::{CliError, CliResult};
use crate::images::write_ppm;

pub const INDEX: &str = "index.json";

/// Skeleton as stored in JSON: normalized `[x, y]` per keypoint plus flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonJson {
    pub keypoints: Vec<[f64; 2]>,
    pub visible: Vec<bool>,
}

impl From<&PoseSkeleton> for SkeletonJson {
    fn from(s: &PoseSkeleton) -> Self {
        SkeletonJson {
            keypoints: s.points.clone(),
            visible: s.visible.clone(),
        }
    }
}

impl SkeletonJson {
    pub fn to_skeleton(&self) -> CliResult<PoseSkeleton> {
        Ok(PoseSkeleton::new(self.keypoints.clone(), self.visible.clone())?)
    }

    pub fn load(path: &Path) -> CliResult<PoseSkeleton> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let s: SkeletonJson = serde_json::from_str(&text).map_err(|source| CliError::Json { path: path.into(), source })?;
        s.to_skeleton()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    /// `<person>:<yaw index>`.
    pub id: String,
    pub person: usize,
    pub yaw_index: usize,
    pub yaw_deg: f64,
    pub split: Split,
    /// Relative to the dataset directory.
    pub file: String,
    pub keypoints: Vec<[f64; 2]>,
    pub visible: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetIndex {
    pub config: DatasetConfig,
    /// Hex FNV digest of the full-precision frames.
    pub digest: String,
    pub frames: Vec<FrameEntry>,
}

pub fn frame_id(person: usize, yaw_index: usize) -> String {
    format!("{person}:{yaw_index}")
}

/// Parses `<person>:<yaw index>` against the dataset bounds.
pub fn parse_frame_id(id: &str, data: &Dataset) -> CliResult<(usize, usize)> {
    let bad = || CliError::Usage(format!("invalid frame id `{id}` (expected <person>:<yaw index>)"));
    let (p, y) = id.split_once(':').ok_or_else(bad)?;
    let (p, y): (usize, usize) = (p.trim().parse().map_err(|_| bad())?, y.trim().parse().map_err(|_| bad())?);
    if p >= data.frames.len() || y >= data.yaw_count() {
        return Err(CliError::Usage(format!(
            "frame `{id}` is outside {} persons × {} yaws",
            data.frames.len(),
            data.yaw_count()
        )));
    }
    Ok((p, y))
}

pub fn index_of(data: &Dataset) -> DatasetIndex {
    let frames = data
        .frames
        .iter()
        .flatten()
        .map(|f| FrameEntry {
            id: frame_id(f.person, f.yaw_index),
            person: f.person,
            yaw_index: f.yaw_index,
            yaw_deg: f.yaw_deg,
            split: if data.test_ids.contains(&f.person) { Split::Test } else { Split::Train },
            file: format!("person_{:03}/yaw_{:03}.ppm", f.person, f.yaw_index),
            keypoints: f.skeleton.points.clone(),
            visible: f.skeleton.visible.clone(),
        })
        .collect();
    DatasetIndex {
        config: data.config.clone(),
        digest: format!("{:016x}", data.digest()),
        frames,
    }
}

/// Generates and writes the dataset; returns it with its index.
pub fn write_dataset(cfg: &DatasetConfig, dir: &Path) -> CliResult<(Dataset, DatasetIndex)> {
    let data = gen_dataset(cfg)?;
    let index = index_of(&data);
    for (f, e) in data.frames.iter().flatten().zip(&index.frames) {
        let path = dir.join(&e.file);
        let parent = path.parent().expect("frame files live in person directories");
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        write_ppm(&path, &f.image)?;
    }
    let json = serde_json::to_string_pretty(&index).expect("index serializes");
    write_atomic(&dir.join(INDEX), json.as_bytes())?;
    Ok((data, index))
}

pub fn read_index(dir: &Path) -> CliResult<DatasetIndex> {
    let path = dir.join(INDEX);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|source| CliError::Json { path, source })
}

/// Regenerates the dataset recorded in `dir` and checks it against the
/// stored digest.
pub fn load_dataset(dir: &Path) -> CliResult<Dataset> {
    let index = read_index(dir)?;
    let data = gen_dataset(&index.config)?;
    let digest = format!("{:016x}", data.digest());
    if digest != index.digest || index.frames.len() != data.frame_count() {
        return Err(CliError::Format(format!(
            "dataset in {} does not match its configuration (digest {} vs {digest})",
            dir.display(),
            index.digest
        )));
    }
    Ok(data)
}
