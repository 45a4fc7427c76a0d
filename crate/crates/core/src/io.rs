//! JSON scene and result files.
//!
//! Scene files carry pixel centroids plus optional ground truth; direction
//! vectors are recomputed from the pixels and the camera on load, so a scene
//! written by hand needs only `format` and `observed`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Attitude, RotationMatrix};
use crate::identify::{IdentificationResult, ObservedStar, Status};
use crate::simulate::{CameraModel, NoiseSpec, Scene, SceneTruth, TrueStar};

pub const SCENE_FORMAT: &str = "starid-scene/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservedRecord {
    pub index: usize,
    pub px: f64,
    pub py: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_hip: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttitudeRecord {
    pub ra: f64,
    pub dec: f64,
    pub roll: f64,
    /// Inertial-to-sensor rotation, row major.
    pub rotation: [[f64; 3]; 3],
}

impl From<&Attitude> for AttitudeRecord {
    fn from(a: &Attitude) -> Self {
        AttitudeRecord {
            ra: a.ra(),
            dec: a.dec(),
            roll: a.roll(),
            rotation: a.rotation.to_rows(),
        }
    }
}

impl AttitudeRecord {
    pub fn to_attitude(&self) -> Attitude {
        let m = nalgebra::Matrix3::from_fn(|i, j| self.rotation[i][j]);
        Attitude::from_rotation(RotationMatrix::from_matrix_unchecked(m))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub attitude: AttitudeRecord,
    pub stars: Vec<TrueStar>,
    #[serde(default)]
    pub injected_false: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub format: String,
    #[serde(default)]
    pub frame: u64,
    #[serde(default)]
    pub camera: CameraModel,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub min_stars: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthRecord>,
    pub observed: Vec<ObservedRecord>,
}

impl From<&Scene> for SceneFile {
    fn from(s: &Scene) -> Self {
        SceneFile {
            format: SCENE_FORMAT.into(),
            frame: s.frame,
            camera: s.camera,
            noise: s.noise,
            min_stars: s.min_stars,
            truth: Some(TruthRecord {
                attitude: (&s.truth.attitude).into(),
                stars: s.truth.stars.clone(),
                injected_false: s.truth.injected_false.clone(),
            }),
            observed: s
                .observed
                .iter()
                .map(|o| ObservedRecord {
                    index: o.index,
                    px: o.px,
                    py: o.py,
                    truth_hip: o.truth_hip,
                })
                .collect(),
        }
    }
}

impl SceneFile {
    pub fn observed_stars(&self) -> Vec<ObservedStar> {
        self.observed
            .iter()
            .map(|o| ObservedStar::new(o.index, o.px, o.py, &self.camera, o.truth_hip))
            .collect()
    }

    /// Observed index to HIP id, when the file carries truth labels.
    pub fn truth_map(&self) -> Option<BTreeMap<usize, u32>> {
        self.truth.as_ref()?;
        Some(
            self.observed
                .iter()
                .filter_map(|o| o.truth_hip.map(|h| (o.index, h)))
                .collect(),
        )
    }

    pub fn to_scene(&self) -> Option<Scene> {
        let truth = self.truth.as_ref()?;
        Some(Scene {
            frame: self.frame,
            camera: self.camera,
            noise: self.noise,
            min_stars: self.min_stars,
            truth: SceneTruth {
                attitude: truth.attitude.to_attitude(),
                stars: truth.stars.clone(),
                injected_false: truth.injected_false.clone(),
            },
            observed: self.observed_stars(),
        })
    }
}

pub fn write_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(&SceneFile::from(scene))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_scene(path: impl AsRef<Path>) -> Result<SceneFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: SceneFile = serde_json::from_str(&text)?;
    if file.format != SCENE_FORMAT {
        return Err(Error::Config(format!(
            "{}: unsupported scene format {:?}",
            path.display(),
            file.format
        )));
    }
    Ok(file)
}

/// One identification outcome as emitted by the command-line tool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub method: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attitude: Option<AttitudeRecord>,
    pub vote_count: usize,
    /// `[observed index, HIP id]`, ascending by index.
    pub matches: Vec<(usize, u32)>,
    pub elapsed_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub success: Option<bool>,
}

impl ResultRecord {
    pub fn new(method: &str, r: &IdentificationResult, success: Option<bool>) -> Self {
        ResultRecord {
            method: method.into(),
            status: r.status,
            attitude: r.attitude.as_ref().map(AttitudeRecord::from),
            vote_count: r.vote_count,
            matches: r.matches.iter().map(|(&o, &h)| (o, h)).collect(),
            elapsed_s: r.elapsed,
            success,
        }
    }
}
