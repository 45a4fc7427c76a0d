//! Bayesian optimization of the bin width `n_x` and pair cap `N_th`.
//!
//! The objective runs the identifier over a fixed batch of simulated frames
//! and scores `y = runtime·w1 − success·w2`. A Latin-hypercube design of
//! `initial_design` points seeds a Gaussian-process surrogate
//! (squared-exponential kernel, per-axis length scales and noise fit by
//! maximum likelihood on a log grid, inputs scaled to the unit square).
//! Each further point maximizes expected improvement over a square grid.
//! `N_th` is searched as a real number and rounded when evaluated.

use std::fmt::Write as _;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::catalog::PairDatabase;
use crate::error::{Error, Result};
use crate::identify::{check_success, identify, IdentifyParams};
use crate::simulate::{generate_frame, CameraModel, FrameSpec, NoiseSpec, Scene, DEFAULT_MIN_STARS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneConfig {
    /// Search interval for `n_x`, degrees.
    pub nx_bounds: [f64; 2],
    pub nth_bounds: [usize; 2],
    /// Weight on runtime.
    pub weight_1: f64,
    /// Weight on success rate.
    pub weight_2: f64,
    /// Optimize the normalized cost instead of the raw one.
    pub normalize_runtime: bool,
    pub sigma: f64,
    pub false_ratio: f64,
    pub keep_count: Option<usize>,
    pub min_stars: usize,
    pub frames: usize,
    pub budget: usize,
    pub initial_design: usize,
    /// Points per axis of the acquisition grid.
    pub grid: usize,
    pub seed: u64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            nx_bounds: [0.004, 0.048],
            nth_bounds: [10, 120],
            weight_1: 0.01,
            weight_2: 1.0,
            normalize_runtime: true,
            sigma: 3.0,
            false_ratio: 0.0,
            keep_count: None,
            min_stars: DEFAULT_MIN_STARS,
            frames: 200,
            budget: 60,
            initial_design: 10,
            grid: 200,
            seed: 1,
        }
    }
}

impl TuneConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.nx_bounds;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::Config(format!("nx_bounds must be positive and ordered, got [{lo}, {hi}]")));
        }
        let [a, b] = self.nth_bounds;
        if !(a >= 1 && b > a) {
            return Err(Error::Config(format!("nth_bounds must be positive and ordered, got [{a}, {b}]")));
        }
        if self.frames == 0 {
            return Err(Error::Config("frames must be positive".into()));
        }
        self.settings().validate()
    }

    pub fn space(&self) -> SearchSpace {
        SearchSpace {
            lower: [self.nx_bounds[0], self.nth_bounds[0] as f64],
            upper: [self.nx_bounds[1], self.nth_bounds[1] as f64],
            integer: [false, true],
        }
    }

    pub fn settings(&self) -> BoSettings {
        BoSettings {
            initial_design: self.initial_design,
            budget: self.budget,
            grid: self.grid,
            seed: self.seed,
        }
    }

    pub fn noise(&self) -> NoiseSpec {
        NoiseSpec {
            sigma: self.sigma,
            false_ratio: self.false_ratio,
            keep_count: self.keep_count,
            seed: self.seed,
        }
    }
}

/// `runtime·w1 − success·w2`.
pub fn cost(runtime: f64, success: f64, weight_1: f64, weight_2: f64) -> f64 {
    runtime * weight_1 - success * weight_2
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub n_x: f64,
    pub n_th: usize,
    /// Mean wall time per frame, seconds.
    pub runtime: f64,
    pub success: f64,
    pub y: f64,
    /// Cost with runtime divided by the reference runtime.
    pub y_norm: f64,
}

/// Frames and database shared by all evaluations of one tuning run.
pub struct EvalContext {
    scenes: Vec<Scene>,
    db: PairDatabase,
    /// Mean zero-noise runtime of the same frames at the box centre.
    pub reference_runtime: f64,
}

impl EvalContext {
    pub fn new(config: &TuneConfig, db: &PairDatabase) -> Result<Self> {
        config.validate()?;
        let make = |noise: NoiseSpec| -> Vec<Scene> {
            let spec = FrameSpec {
                camera: CameraModel::default(),
                noise,
                min_stars: config.min_stars,
            };
            (0..config.frames as u64)
                .into_par_iter()
                .map(|f| generate_frame(db.catalog(), &spec, f))
                .collect()
        };
        let clean = make(NoiseSpec {
            seed: config.seed,
            ..NoiseSpec::default()
        });
        let space = config.space();
        let center = space.to_params([0.5, 0.5]);
        let (runtime, _) = run_batch(&clean, db, center[0], center[1] as usize)?;
        Ok(EvalContext {
            scenes: make(config.noise()),
            db: db.clone(),
            reference_runtime: runtime.max(f64::MIN_POSITIVE),
        })
    }

    pub fn scenes(&self) -> &[Scene] {
        &self.scenes
    }
}

fn run_batch(scenes: &[Scene], db: &PairDatabase, n_x: f64, n_th: usize) -> Result<(f64, f64)> {
    let db = db.with_bin_width(n_x)?;
    let params = IdentifyParams {
        n_th,
        ..IdentifyParams::default().with_bin_width(n_x)
    };
    let outcomes: Vec<(bool, f64)> = scenes
        .par_iter()
        .map(|s| {
            let r = identify(&s.observed, &db, &params);
            (check_success(&r, &s.truth_map()), r.elapsed)
        })
        .collect();
    let n = scenes.len().max(1) as f64;
    let runtime = outcomes.iter().map(|o| o.1).sum::<f64>() / n;
    let success = outcomes.iter().filter(|o| o.0).count() as f64 / n;
    Ok((runtime, success))
}

/// Runs the batch at `(n_x, n_th)` and scores it.
pub fn evaluate_cost(n_x: f64, n_th: usize, ctx: &EvalContext, config: &TuneConfig) -> Result<Evaluation> {
    let (runtime, success) = run_batch(&ctx.scenes, &ctx.db, n_x, n_th)?;
    Ok(Evaluation {
        n_x,
        n_th,
        runtime,
        success,
        y: cost(runtime, success, config.weight_1, config.weight_2),
        y_norm: cost(runtime / ctx.reference_runtime, success, config.weight_1, config.weight_2),
    })
}

/// Axis-aligned box with optionally integer-valued axes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub integer: [bool; 2],
}

impl SearchSpace {
    /// Maps a unit-square point to parameters, rounding integer axes.
    pub fn to_params(&self, u: [f64; 2]) -> [f64; 2] {
        let mut p = [0.0; 2];
        for d in 0..2 {
            let v = self.lower[d] + u[d].clamp(0.0, 1.0) * (self.upper[d] - self.lower[d]);
            p[d] = if self.integer[d] { v.round() } else { v };
        }
        p
    }

    pub fn to_unit(&self, p: [f64; 2]) -> [f64; 2] {
        [0, 1].map(|d| (p[d] - self.lower[d]) / (self.upper[d] - self.lower[d]))
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        (0..2).all(|d| p[d] >= self.lower[d] && p[d] <= self.upper[d])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoSettings {
    pub initial_design: usize,
    pub budget: usize,
    pub grid: usize,
    pub seed: u64,
}

impl BoSettings {
    pub fn validate(&self) -> Result<()> {
        if self.initial_design == 0 {
            return Err(Error::Config("initial design must have at least one point".into()));
        }
        if self.budget < self.initial_design {
            return Err(Error::Config(format!(
                "budget {} is smaller than the initial design of {} points",
                self.budget, self.initial_design
            )));
        }
        if self.grid < 2 {
            return Err(Error::Config("acquisition grid needs at least 2 points per axis".into()));
        }
        Ok(())
    }
}

/// Latin-hypercube sample of `n` points in the unit square.
pub fn latin_hypercube<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<[f64; 2]> {
    let mut axes: Vec<Vec<f64>> = (0..2)
        .map(|_| {
            let mut strata: Vec<usize> = (0..n).collect();
            strata.shuffle(rng);
            strata
                .into_iter()
                .map(|s| (s as f64 + rng.random::<f64>()) / n as f64)
                .collect()
        })
        .collect();
    let ys = axes.pop().expect("two axes");
    let xs = axes.pop().expect("two axes");
    xs.into_iter().zip(ys).map(|(x, y)| [x, y]).collect()
}

/// Zero-mean GP with unit-variance squared-exponential kernel, fit to
/// standardized targets.
#[derive(Clone, Debug)]
pub struct GaussianProcess {
    x: Vec<[f64; 2]>,
    length: [f64; 2],
    noise: f64,
    mean: f64,
    scale: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

const NOISE_GRID: [f64; 4] = [1e-6, 1e-4, 1e-2, 0.1];

fn kernel(a: &[f64; 2], b: &[f64; 2], l: &[f64; 2]) -> f64 {
    let dx = (a[0] - b[0]) / l[0];
    let dy = (a[1] - b[1]) / l[1];
    (-0.5 * (dx * dx + dy * dy)).exp()
}

fn length_grid() -> Vec<f64> {
    // 12 log-spaced values in [0.03, 3]
    (0..12)
        .map(|i| (0.03f64.ln() + i as f64 / 11.0 * (100.0f64).ln()).exp())
        .collect()
}

impl GaussianProcess {
    /// Fits length scales and noise by maximum marginal likelihood over a
    /// fixed grid.
    pub fn fit(x: &[[f64; 2]], y: &[f64]) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::Config("GP needs matching, non-empty inputs".into()));
        }
        let n = y.len();
        let mean = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let scale = if var > 1e-24 { var.sqrt() } else { 1.0 };
        let ys = DVector::from_iterator(n, y.iter().map(|v| (v - mean) / scale));

        let mut best: Option<(f64, [f64; 2], f64)> = None;
        let grid = length_grid();
        for &l0 in &grid {
            for &l1 in &grid {
                for &noise in &NOISE_GRID {
                    let l = [l0, l1];
                    let Some(chol) = Self::factor(x, &l, noise) else {
                        continue;
                    };
                    let alpha = chol.solve(&ys);
                    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
                    let ll = -0.5 * ys.dot(&alpha) - log_det;
                    if best.is_none_or(|b| ll > b.0) {
                        best = Some((ll, l, noise));
                    }
                }
            }
        }
        let (_, length, noise) = best.ok_or_else(|| Error::Config("GP covariance is singular".into()))?;
        let chol = Self::factor(x, &length, noise).expect("factored during the search");
        let alpha = chol.solve(&ys);
        Ok(GaussianProcess {
            x: x.to_vec(),
            length,
            noise,
            mean,
            scale,
            chol,
            alpha,
        })
    }

    fn factor(x: &[[f64; 2]], l: &[f64; 2], noise: f64) -> Option<Cholesky<f64, Dyn>> {
        let n = x.len();
        let k = DMatrix::from_fn(n, n, |i, j| kernel(&x[i], &x[j], l) + if i == j { noise } else { 0.0 });
        Cholesky::new(k)
    }

    pub fn length_scales(&self) -> [f64; 2] {
        self.length
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise
    }

    /// Posterior mean and standard deviation at each point, in the units of
    /// the training targets.
    pub fn predict(&self, pts: &[[f64; 2]]) -> Vec<(f64, f64)> {
        let n = self.x.len();
        let ks = DMatrix::from_fn(n, pts.len(), |i, j| kernel(&self.x[i], &pts[j], &self.length));
        let mu = ks.tr_mul(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .lower_triangle()
            .solve_lower_triangular(&ks)
            .expect("Cholesky factor has a positive diagonal");
        (0..pts.len())
            .map(|j| {
                let var = (1.0 - v.column(j).norm_squared()).max(1e-12);
                (self.mean + self.scale * mu[j], self.scale * var.sqrt())
            })
            .collect()
    }
}

/// Expected improvement below `best` for a Gaussian prediction.
pub fn expected_improvement(mu: f64, sd: f64, best: f64) -> f64 {
    let normal = Normal::standard();
    let imp = best - mu;
    if sd <= 0.0 {
        return imp.max(0.0);
    }
    let z = imp / sd;
    imp * normal.cdf(z) + sd * normal.pdf(z)
}

/// One objective evaluation in optimizer order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub params: [f64; 2],
    pub value: f64,
    /// Best value so far, this sample included.
    pub incumbent: f64,
    pub from_design: bool,
}

/// Minimizes `f` over `space`. Evaluates exactly `budget` points unless the
/// grid runs out of unevaluated parameter settings.
pub fn minimize<F>(space: &SearchSpace, settings: &BoSettings, mut f: F) -> Result<Vec<Sample>>
where
    F: FnMut([f64; 2]) -> Result<f64>,
{
    settings.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut samples: Vec<Sample> = Vec::with_capacity(settings.budget);
    let mut units: Vec<[f64; 2]> = Vec::new();
    let record = |samples: &mut Vec<Sample>, params: [f64; 2], value: f64, from_design: bool| {
        let incumbent = samples.last().map_or(value, |s| s.incumbent.min(value));
        samples.push(Sample {
            params,
            value,
            incumbent,
            from_design,
        });
    };

    for u in latin_hypercube(settings.initial_design, &mut rng) {
        let p = space.to_params(u);
        let value = f(p)?;
        units.push(space.to_unit(p));
        record(&mut samples, p, value, true);
    }

    let g = settings.grid;
    let grid: Vec<[f64; 2]> = (0..g * g)
        .map(|i| [(i / g) as f64 / (g - 1) as f64, (i % g) as f64 / (g - 1) as f64])
        .collect();
    while samples.len() < settings.budget {
        let ys: Vec<f64> = samples.iter().map(|s| s.value).collect();
        let gp = GaussianProcess::fit(&units, &ys)?;
        let best = samples.last().expect("design is non-empty").incumbent;
        let pred = gp.predict(&grid);
        let mut choice: Option<(f64, [f64; 2])> = None;
        for (u, (mu, sd)) in grid.iter().zip(pred) {
            let p = space.to_params(*u);
            if samples.iter().any(|s| same_point(&s.params, &p)) {
                continue;
            }
            let ei = expected_improvement(mu, sd, best);
            if choice.is_none_or(|c| ei > c.0) {
                choice = Some((ei, p));
            }
        }
        let Some((_, p)) = choice else {
            break;
        };
        let value = f(p)?;
        units.push(space.to_unit(p));
        record(&mut samples, p, value, false);
    }
    Ok(samples)
}

fn same_point(a: &[f64; 2], b: &[f64; 2]) -> bool {
    (0..2).all(|d| (a[d] - b[d]).abs() <= 1e-12 * a[d].abs().max(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub phase: String,
    pub eval: Evaluation,
    /// The minimized cost, `y_norm` or `y` per the config.
    pub objective: f64,
    pub incumbent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneTrace {
    pub config: TuneConfig,
    pub reference_runtime: f64,
    pub rows: Vec<TraceRow>,
}

impl TuneTrace {
    /// Row holding the incumbent: the first row reaching the final best.
    pub fn best(&self) -> Option<&TraceRow> {
        let last = self.rows.last()?;
        self.rows.iter().find(|r| r.objective == last.incumbent)
    }

    pub fn incumbent_nonincreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].incumbent <= w[0].incumbent)
    }

    /// CSV with `#` header lines carrying the full configuration.
    pub fn to_csv(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        let _ = writeln!(out, "# starid tune");
        let _ = writeln!(
            out,
            "# nx_bounds={};{} nth_bounds={};{} weight_1={} weight_2={} normalize_runtime={}",
            c.nx_bounds[0], c.nx_bounds[1], c.nth_bounds[0], c.nth_bounds[1], c.weight_1, c.weight_2, c.normalize_runtime
        );
        let _ = writeln!(
            out,
            "# sigma={} false_ratio={} keep_count={} min_stars={} frames={} seed={}",
            c.sigma,
            c.false_ratio,
            c.keep_count.map_or("all".into(), |k| k.to_string()),
            c.min_stars,
            c.frames,
            c.seed
        );
        let _ = writeln!(
            out,
            "# budget={} initial_design={} grid={} reference_runtime_s={:.9}",
            c.budget, c.initial_design, c.grid, self.reference_runtime
        );
        let _ = writeln!(out, "iteration,phase,n_x,n_th,runtime_s,success,y,y_norm,incumbent");
        for r in &self.rows {
            let e = &r.eval;
            let _ = writeln!(
                out,
                "{},{},{:.6},{},{:.9},{:.6},{:.9},{:.9},{:.9}",
                r.iteration, r.phase, e.n_x, e.n_th, e.runtime, e.success, e.y, e.y_norm, r.incumbent
            );
        }
        out
    }
}

/// Tunes `(n_x, N_th)` for the configured scenario. Returns the incumbent
/// parameters and the full trace.
pub fn bayes_optimize(config: &TuneConfig, db: &PairDatabase) -> Result<(f64, usize, TuneTrace)> {
    let ctx = EvalContext::new(config, db)?;
    let mut evals = Vec::new();
    let samples = minimize(&config.space(), &config.settings(), |p| {
        let e = evaluate_cost(p[0], p[1] as usize, &ctx, config)?;
        evals.push(e);
        Ok(if config.normalize_runtime { e.y_norm } else { e.y })
    })?;
    let rows: Vec<TraceRow> = samples
        .iter()
        .zip(evals)
        .enumerate()
        .map(|(i, (s, e))| TraceRow {
            iteration: i,
            phase: if s.from_design { "design" } else { "ei" }.into(),
            eval: e,
            objective: s.value,
            incumbent: s.incumbent,
        })
        .collect();
    let trace = TuneTrace {
        config: config.clone(),
        reference_runtime: ctx.reference_runtime,
        rows,
    };
    let best = trace.best().expect("budget is at least one evaluation");
    Ok((best.eval.n_x, best.eval.n_th, trace.clone()))
}
