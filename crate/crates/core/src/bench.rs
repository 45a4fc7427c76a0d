//! Monte Carlo sweeps comparing the proposed method with the triangle
//! baseline.
//!
//! Each level of a sweep regenerates the same frame numbers with one noise
//! parameter changed, and both methods see the identical scene. Frames run
//! in parallel on the current rayon pool; rows come out in level order.

use std::fmt::Write as _;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{triangle_identify, TriangleDatabase, TriangleParams};
use crate::catalog::PairDatabase;
use crate::error::{Error, Result};
use crate::identify::{check_success, identify, IdentifyParams};
use crate::simulate::{generate_frame, CameraModel, FrameSpec, NoiseSpec, DEFAULT_MIN_STARS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Per-axis centroid noise, pixels.
    Sigma,
    /// False stars per real star.
    False,
    /// Real stars kept in the frame.
    Missing,
}

impl SweepAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepAxis::Sigma => "sigma",
            SweepAxis::False => "false",
            SweepAxis::Missing => "missing",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigma" => Ok(SweepAxis::Sigma),
            "false" => Ok(SweepAxis::False),
            "missing" => Ok(SweepAxis::Missing),
            _ => Err(Error::Config(format!("unknown sweep {s:?}, expected sigma, false or missing"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Proposed,
    Triangle,
    Both,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::Triangle => "triangle",
            Method::Both => "both",
        }
    }

    pub fn runs_proposed(&self) -> bool {
        matches!(self, Method::Proposed | Method::Both)
    }

    pub fn runs_triangle(&self) -> bool {
        matches!(self, Method::Triangle | Method::Both)
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(Method::Proposed),
            "triangle" => Ok(Method::Triangle),
            "both" => Ok(Method::Both),
            _ => Err(Error::Config(format!("unknown method {s:?}, expected proposed, triangle or both"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub levels: Vec<f64>,
    pub frames: usize,
    pub seed: u64,
    pub method: Method,
    /// Noise settings for the axes not being swept.
    pub base: NoiseSpec,
    pub camera: CameraModel,
    pub min_stars: usize,
    pub params: IdentifyParams,
    /// Fixed triangle tolerances; `None` scales them to each level's sigma.
    pub triangle: Option<TriangleParams>,
}

impl SweepSpec {
    pub fn new(axis: SweepAxis, levels: Vec<f64>, frames: usize, seed: u64) -> Self {
        SweepSpec {
            axis,
            levels,
            frames,
            seed,
            method: Method::Proposed,
            base: NoiseSpec::default(),
            camera: CameraModel::default(),
            min_stars: DEFAULT_MIN_STARS,
            params: IdentifyParams::default(),
            triangle: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.levels.is_empty() {
            return Err(Error::Config("no sweep levels".into()));
        }
        for &l in &self.levels {
            let ok = match self.axis {
                SweepAxis::Sigma | SweepAxis::False => l >= 0.0 && l.is_finite(),
                SweepAxis::Missing => l >= 0.0 && l.fract() == 0.0,
            };
            if !ok {
                return Err(Error::Config(format!("invalid {} level {l}", self.axis.as_str())));
            }
        }
        Ok(())
    }

    /// Noise settings of one level.
    pub fn noise_at(&self, level: f64) -> NoiseSpec {
        let mut n = NoiseSpec {
            seed: self.seed,
            ..self.base
        };
        match self.axis {
            SweepAxis::Sigma => n.sigma = level,
            SweepAxis::False => n.false_ratio = level,
            SweepAxis::Missing => n.keep_count = Some(level as usize),
        }
        n
    }

    pub fn triangle_params_at(&self, level: f64) -> TriangleParams {
        self.triangle.unwrap_or_else(|| {
            let mut p = TriangleParams::for_noise(self.noise_at(level).sigma, &self.camera);
            p.ad_max = self.params.ad_max;
            p
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub level: f64,
    pub frames: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub spec: SweepSpec,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, method: &str, level: f64) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method && r.level == level)
    }

    pub fn rates(&self, method: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.success_rate)
            .collect()
    }
}

#[derive(Clone, Copy, Default)]
struct FrameOutcome {
    proposed: Option<(bool, f64)>,
    triangle: Option<(bool, f64)>,
}

/// Runs the sweep. `triangles` is required when the triangle method runs.
pub fn run_sweep(
    spec: &SweepSpec,
    db: &PairDatabase,
    triangles: Option<&TriangleDatabase>,
) -> Result<BenchReport> {
    spec.validate()?;
    if spec.method.runs_proposed() {
        db.ensure_bin_width(spec.params.n_x)?;
    }
    let triangles = match (spec.method.runs_triangle(), triangles) {
        (true, None) => return Err(Error::Config("triangle method needs a triangle database".into())),
        (_, t) => t,
    };
    let mut rows = Vec::new();
    for &level in &spec.levels {
        let frame_spec = FrameSpec {
            camera: spec.camera,
            noise: spec.noise_at(level),
            min_stars: spec.min_stars,
        };
        let tri_params = spec.triangle_params_at(level);
        let outcomes: Vec<FrameOutcome> = (0..spec.frames as u64)
            .into_par_iter()
            .map(|frame| {
                let scene = generate_frame(db.catalog(), &frame_spec, frame);
                let truth = scene.truth_map();
                let mut out = FrameOutcome::default();
                if spec.method.runs_proposed() {
                    let r = identify(&scene.observed, db, &spec.params);
                    out.proposed = Some((check_success(&r, &truth), r.elapsed));
                }
                if let Some(tdb) = triangles.filter(|_| spec.method.runs_triangle()) {
                    let r = triangle_identify(&scene.observed, tdb, &tri_params);
                    out.triangle = Some((check_success(&r, &truth), r.elapsed));
                }
                out
            })
            .collect();
        for (name, enabled) in [
            ("proposed", spec.method.runs_proposed()),
            ("triangle", spec.method.runs_triangle()),
        ] {
            if !enabled {
                continue;
            }
            let got: Vec<(bool, f64)> = outcomes
                .iter()
                .filter_map(|o| if name == "proposed" { o.proposed } else { o.triangle })
                .collect();
            let successes = got.iter().filter(|g| g.0).count();
            let n = spec.frames.max(1) as f64;
            rows.push(BenchRow {
                method: name.into(),
                level,
                frames: spec.frames,
                successes,
                success_rate: successes as f64 / n,
                mean_time_s: got.iter().map(|g| g.1).sum::<f64>() / n,
            });
        }
    }
    Ok(BenchReport {
        spec: spec.clone(),
        rows,
    })
}

/// `#`-prefixed provenance lines listing every sweep parameter.
pub fn report_header(spec: &SweepSpec) -> String {
    let p = &spec.params;
    let c = &spec.camera;
    let mut h = String::new();
    let _ = writeln!(h, "# starid bench");
    let _ = writeln!(h, "# sweep={} levels={}", spec.axis.as_str(), join(&spec.levels));
    let _ = writeln!(h, "# method={} frames={} seed={}", spec.method.as_str(), spec.frames, spec.seed);
    let _ = writeln!(
        h,
        "# base_sigma={} base_false_ratio={} base_keep={} min_stars={}",
        spec.base.sigma,
        spec.base.false_ratio,
        spec.base.keep_count.map_or("all".to_string(), |k| k.to_string()),
        spec.min_stars
    );
    let _ = writeln!(
        h,
        "# camera fov_deg={} focal_length_mm={} width={} height={} pixel_size_um={}",
        c.fov_deg, c.focal_length_mm, c.width, c.height, c.pixel_size_um
    );
    let _ = writeln!(
        h,
        "# proposed n_x={} n_th={} fnx={} epsilon={} min_pair_sep={} ad_max={} neighbor_merge={}",
        p.n_x, p.n_th, p.fnx, p.epsilon, p.min_pair_sep, p.ad_max, p.neighbor_merge
    );
    match spec.triangle {
        Some(t) => {
            let _ = writeln!(
                h,
                "# triangle (reimplementation) side_tol={} verify_tol={} min_verified={}",
                t.side_tol, t.verify_tol, t.min_verified
            );
        }
        None => {
            let _ = writeln!(h, "# triangle (reimplementation) tolerances scaled to sigma");
        }
    }
    h
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

/// Writes the report as CSV preceded by the provenance header.
pub fn write_report<W: Write>(report: &BenchReport, mut w: W) -> Result<()> {
    w.write_all(report_header(&report.spec).as_bytes())
        .map_err(|e| Error::io("<report>", e))?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["method", "level", "frames", "success_rate", "mean_time_s"])?;
    for r in &report.rows {
        csv.write_record([
            r.method.clone(),
            r.level.to_string(),
            r.frames.to_string(),
            format!("{:.6}", r.success_rate),
            format!("{:.9}", r.mean_time_s),
        ])?;
    }
    csv.flush().map_err(|e| Error::io("<report>", e))?;
    Ok(())
}
