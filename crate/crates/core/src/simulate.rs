//! Centroid-level star map simulator.
//!
//! A frame is rendered from the catalog under a pinhole camera, then degraded
//! by star dropping, Gaussian pixel noise and false-star injection, in that
//! order. Each degradation draws from its own ChaCha8 stream derived from
//! `(seed, frame, purpose)`, so frames generated at different sweep levels
//! share the same attitude, noise draws, kept-star order and false-star
//! positions. Observed stars are listed in detector read-out order (row, then
//! column), independent of their labels.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::catalog::CatalogStar;
use crate::geometry::{angular_distance, Attitude, UnitVec3};
use crate::identify::ObservedStar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    /// Diameter of the circular field of view, degrees.
    pub fov_deg: f64,
    pub focal_length_mm: f64,
    pub width: u32,
    pub height: u32,
    pub pixel_size_um: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel {
            fov_deg: 8.0,
            focal_length_mm: 95.0,
            width: 2048,
            height: 2048,
            pixel_size_um: 6.5,
        }
    }
}

impl CameraModel {
    pub fn center(&self) -> (f64, f64) {
        (self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    /// Focal length in pixel units.
    pub fn focal_px(&self) -> f64 {
        self.focal_length_mm * 1000.0 / self.pixel_size_um
    }

    /// Angular size of one pixel at the boresight, degrees.
    pub fn pixel_scale_deg(&self) -> f64 {
        (1.0 / self.focal_px()).atan().to_degrees()
    }

    /// Relative mismatch between the stated FOV diameter and the one implied
    /// by the narrower detector side.
    pub fn fov_mismatch(&self) -> f64 {
        let half = self.width.min(self.height) as f64 / 2.0;
        let implied = 2.0 * (half / self.focal_px()).atan().to_degrees();
        (implied - self.fov_deg).abs() / self.fov_deg
    }

    pub fn pixel_to_vector(&self, px: f64, py: f64) -> UnitVec3 {
        let (cx, cy) = self.center();
        UnitVec3::from_xyz(px - cx, py - cy, self.focal_px())
    }

    /// Pixel position of a sensor-frame direction; `None` behind the camera.
    pub fn project(&self, v: &UnitVec3) -> Option<(f64, f64)> {
        if v.z() <= 0.0 {
            return None;
        }
        let (cx, cy) = self.center();
        let f = self.focal_px();
        Some((cx + f * v.x() / v.z(), cy + f * v.y() / v.z()))
    }

    pub fn on_detector(&self, px: f64, py: f64) -> bool {
        px >= 0.0 && py >= 0.0 && px < self.width as f64 && py < self.height as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Per-axis Gaussian centroid noise, pixels.
    pub sigma: f64,
    /// False stars added, as a fraction of the real star count.
    pub false_ratio: f64,
    /// Number of real stars kept, if dropping is enabled.
    pub keep_count: Option<usize>,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            sigma: 0.0,
            false_ratio: 0.0,
            keep_count: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrueStar {
    pub hip_id: u32,
    pub px: f64,
    pub py: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneTruth {
    pub attitude: Attitude,
    /// Rendered catalog stars before any degradation.
    pub stars: Vec<TrueStar>,
    pub injected_false: Vec<(f64, f64)>,
}

/// A simulated observation with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub frame: u64,
    pub camera: CameraModel,
    pub noise: NoiseSpec,
    pub min_stars: usize,
    pub truth: SceneTruth,
    pub observed: Vec<ObservedStar>,
}

impl Scene {
    pub fn real_count(&self) -> usize {
        self.observed.iter().filter(|s| s.truth_hip.is_some()).count()
    }

    pub fn false_count(&self) -> usize {
        self.observed.len() - self.real_count()
    }

    /// Ground-truth labels, observed index to HIP id.
    pub fn truth_map(&self) -> std::collections::BTreeMap<usize, u32> {
        self.observed
            .iter()
            .filter_map(|s| s.truth_hip.map(|h| (s.index, h)))
            .collect()
    }

    fn reindex(&mut self) {
        self.observed
            .sort_by(|a, b| a.py.total_cmp(&b.py).then(a.px.total_cmp(&b.px)));
        for (i, s) in self.observed.iter_mut().enumerate() {
            s.index = i;
        }
    }
}

/// Boresight uniform on the sphere, roll uniform in `[0, 360)`.
pub fn random_attitude<R: Rng + ?Sized>(rng: &mut R) -> Attitude {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let ra = rng.random_range(0.0..360.0);
    let roll = rng.random_range(0.0..360.0);
    Attitude::from_euler(ra, z.asin().to_degrees(), roll)
}

/// Catalog stars inside the circular FOV and on the detector.
pub fn visible_stars(catalog: &[CatalogStar], attitude: &Attitude, cam: &CameraModel) -> Vec<TrueStar> {
    let bore = attitude.rotation.boresight();
    let radius = cam.fov_deg / 2.0;
    let cos_r = radius.to_radians().cos();
    catalog
        .iter()
        .filter(|s| s.unit.dot(&bore) >= cos_r && angular_distance(&s.unit, &bore) <= radius)
        .filter_map(|s| {
            let v = attitude.rotation.to_sensor(&s.unit);
            let (px, py) = cam.project(&v)?;
            cam.on_detector(px, py).then_some(TrueStar {
                hip_id: s.hip_id,
                px,
                py,
            })
        })
        .collect()
}

pub fn render_scene(catalog: &[CatalogStar], attitude: Attitude, cam: &CameraModel) -> Scene {
    let stars = visible_stars(catalog, &attitude, cam);
    let observed = stars
        .iter()
        .map(|t| ObservedStar::new(0, t.px, t.py, cam, Some(t.hip_id)))
        .collect();
    let mut scene = Scene {
        frame: 0,
        camera: *cam,
        noise: NoiseSpec::default(),
        min_stars: 0,
        truth: SceneTruth {
            attitude,
            stars,
            injected_false: Vec::new(),
        },
        observed,
    };
    scene.reindex();
    scene
}

/// Independent per-axis Gaussian offsets on every observed star.
pub fn apply_position_noise<R: Rng + ?Sized>(scene: &mut Scene, sigma: f64, rng: &mut R) {
    let cam = scene.camera;
    for s in &mut scene.observed {
        let zx: f64 = rng.sample(StandardNormal);
        let zy: f64 = rng.sample(StandardNormal);
        *s = ObservedStar::new(s.index, s.px + sigma * zx, s.py + sigma * zy, &cam, s.truth_hip);
    }
    scene.noise.sigma = sigma;
}

/// Adds `round(ratio * real_count)` unlabeled stars uniformly on the detector.
pub fn add_false_stars<R: Rng + ?Sized>(scene: &mut Scene, ratio: f64, rng: &mut R) {
    let count = (ratio * scene.real_count() as f64).round() as usize;
    let cam = scene.camera;
    for _ in 0..count {
        let px = rng.random_range(0.0..cam.width as f64);
        let py = rng.random_range(0.0..cam.height as f64);
        scene.truth.injected_false.push((px, py));
        scene.observed.push(ObservedStar::new(0, px, py, &cam, None));
    }
    scene.noise.false_ratio = ratio;
    scene.reindex();
}

/// Keeps `min(keep, real_count)` real stars chosen uniformly; false stars are
/// untouched.
pub fn drop_stars<R: Rng + ?Sized>(scene: &mut Scene, keep: usize, rng: &mut R) {
    let mut real: Vec<usize> = (0..scene.observed.len())
        .filter(|&i| scene.observed[i].truth_hip.is_some())
        .collect();
    real.shuffle(rng);
    let mut keep_mask = vec![true; scene.observed.len()];
    for &i in real.iter().skip(keep) {
        keep_mask[i] = false;
    }
    let mut k = 0;
    scene.observed.retain(|_| {
        k += 1;
        keep_mask[k - 1]
    });
    scene.noise.keep_count = Some(keep);
    scene.reindex();
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stream {
    Attitude = 0,
    Drop = 1,
    Noise = 2,
    False = 3,
}

/// Generator for one named stream of one frame.
pub(crate) fn frame_rng(seed: u64, frame: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame.wrapping_mul(16).wrapping_add(stream));
    rng
}

/// Simulation protocol for a batch of frames.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub camera: CameraModel,
    pub noise: NoiseSpec,
    /// Attitudes are redrawn until at least this many catalog stars render.
    pub min_stars: usize,
}

impl Default for FrameSpec {
    fn default() -> Self {
        FrameSpec {
            camera: CameraModel::default(),
            noise: NoiseSpec::default(),
            min_stars: DEFAULT_MIN_STARS,
        }
    }
}

pub const DEFAULT_MIN_STARS: usize = 9;
const MAX_ATTITUDE_DRAWS: usize = 100_000;

/// Deterministic frame `frame` of the batch described by `spec`.
pub fn generate_frame(catalog: &[CatalogStar], spec: &FrameSpec, frame: u64) -> Scene {
    let seed = spec.noise.seed;
    let mut rng = frame_rng(seed, frame, Stream::Attitude as u64);
    let mut scene = render_scene(catalog, random_attitude(&mut rng), &spec.camera);
    for _ in 1..MAX_ATTITUDE_DRAWS {
        if scene.observed.len() >= spec.min_stars {
            break;
        }
        scene = render_scene(catalog, random_attitude(&mut rng), &spec.camera);
    }
    scene.frame = frame;
    scene.min_stars = spec.min_stars;

    if let Some(keep) = spec.noise.keep_count {
        drop_stars(&mut scene, keep, &mut frame_rng(seed, frame, Stream::Drop as u64));
    }
    if spec.noise.sigma > 0.0 {
        apply_position_noise(
            &mut scene,
            spec.noise.sigma,
            &mut frame_rng(seed, frame, Stream::Noise as u64),
        );
    }
    if spec.noise.false_ratio > 0.0 {
        add_false_stars(
            &mut scene,
            spec.noise.false_ratio,
            &mut frame_rng(seed, frame, Stream::False as u64),
        );
    }
    scene.noise = spec.noise;
    scene
}
