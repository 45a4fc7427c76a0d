//! `starid`: build databases, simulate scenes, identify frames, run
//! benchmark sweeps and tune the database parameters.
//!
//! Exit status: 0 on success, including frames that could not be
//! identified; 1 on internal errors; 2 on usage, configuration and file
//! errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use starid::baseline::{build_triangle_database, triangle_identify, TriangleParams, DEFAULT_TRIANGLE_BIN_DEG};
use starid::bench::{run_sweep, write_report, Method, SweepAxis, SweepSpec};
use starid::catalog::{
    build_pair_database, load_catalog, load_database, resolve_doubles, save_database, CatalogStar, DatabaseParams,
    PairDatabase, DEFAULT_AD_MAX_DEG, DEFAULT_MAG_LIMIT, DEFAULT_MIN_SEPARATION_DEG, DEFAULT_NX_DEG,
};
use starid::identify::{check_success, identify, IdentifyParams};
use starid::io::{read_scene, write_scene, ResultRecord};
use starid::simulate::{generate_frame, CameraModel, FrameSpec, NoiseSpec, DEFAULT_MIN_STARS};
use starid::tune::{bayes_optimize, TuneConfig};

#[derive(Parser)]
#[command(name = "starid", version, about = "Lost-in-space star identification toolkit")]
struct Cli {
    /// Worker threads for frame-parallel commands (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the star-pair database from a catalog CSV.
    BuildDb(BuildDbArgs),
    /// Write simulated scenes as JSON files.
    Simulate(SimulateArgs),
    /// Identify one scene file.
    Identify(IdentifyArgs),
    /// Run a seeded sweep and write a CSV report.
    Bench(BenchArgs),
    /// Bayesian optimization of n_x and N_th.
    Tune(TuneArgs),
}

#[derive(Args)]
struct CatalogArgs {
    /// Catalog CSV with columns hip_id,ra_deg,dec_deg,vmag.
    #[arg(long, env = "STARID_CATALOG")]
    catalog: Option<PathBuf>,
    /// Faintest magnitude kept.
    #[arg(long, default_value_t = DEFAULT_MAG_LIMIT)]
    mag_limit: f64,
}

impl CatalogArgs {
    fn load(&self) -> Result<Vec<CatalogStar>> {
        let path = self
            .catalog
            .as_ref()
            .ok_or_else(|| usage("no catalog given (use --catalog or STARID_CATALOG)"))?;
        Ok(load_catalog(path, self.mag_limit)?)
    }
}

#[derive(Args)]
struct BuildDbArgs {
    #[command(flatten)]
    catalog: CatalogArgs,
    /// Largest pair separation stored, degrees.
    #[arg(long, default_value_t = DEFAULT_AD_MAX_DEG, value_parser = positive)]
    ad_max: f64,
    /// Bin width, degrees.
    #[arg(long, default_value_t = DEFAULT_NX_DEG, value_parser = positive)]
    nx: f64,
    /// Stars closer than this to a brighter star are left out, degrees.
    #[arg(long, default_value_t = DEFAULT_MIN_SEPARATION_DEG)]
    min_separation: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Draw stars from this database's catalog.
    #[arg(long, conflicts_with = "catalog")]
    db: Option<PathBuf>,
    #[command(flatten)]
    catalog: CatalogArgs,
    #[arg(long, default_value_t = 1)]
    count: u64,
    /// Centroid noise, pixels.
    #[arg(long, default_value_t = 0.0, value_parser = non_negative)]
    sigma: f64,
    /// False stars as a fraction of real stars.
    #[arg(long = "false", default_value_t = 0.0, value_parser = non_negative)]
    false_ratio: f64,
    /// Real stars kept per frame.
    #[arg(long)]
    keep: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Attitudes are redrawn until this many stars are in view.
    #[arg(long, default_value_t = DEFAULT_MIN_STARS)]
    min_stars: usize,
    /// Output directory, created if needed.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum IdMethod {
    Proposed,
    Triangle,
}

#[derive(Args)]
struct IdentifyArgs {
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    /// Must match the database unless --rebin is given.
    #[arg(long, value_parser = positive)]
    nx: Option<f64>,
    #[arg(long, default_value_t = 55)]
    nth: usize,
    /// Attitude quantization step, degrees.
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    fnx: f64,
    /// Rebucket the database to --nx instead of refusing a mismatch.
    #[arg(long)]
    rebin: bool,
    #[arg(long, value_enum, default_value = "proposed")]
    method: IdMethod,
    /// Print the result record as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    db: PathBuf,
    /// sigma, false or missing.
    #[arg(long)]
    sweep: SweepAxis,
    /// Comma-separated levels.
    #[arg(long, value_delimiter = ',', required = true)]
    levels: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// proposed, triangle or both.
    #[arg(long, default_value = "both")]
    method: Method,
    #[arg(long, value_parser = positive)]
    nx: Option<f64>,
    #[arg(long, default_value_t = 55)]
    nth: usize,
    #[arg(long)]
    rebin: bool,
    /// Noise on the axes not swept.
    #[arg(long, default_value_t = 0.0, value_parser = non_negative)]
    base_sigma: f64,
    #[arg(long, default_value_t = 0.0, value_parser = non_negative)]
    base_false: f64,
    #[arg(long)]
    base_keep: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_MIN_STARS)]
    min_stars: usize,
    /// CSV destination; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TuneArgs {
    /// TOML file; see README for the keys.
    #[arg(long)]
    config: PathBuf,
    /// Trace CSV destination; overrides `trace` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Tune configuration file. Relative paths resolve against the file's
/// directory.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TuneFile {
    database: PathBuf,
    trace: Option<PathBuf>,
    #[serde(default)]
    tune: TuneConfig,
}

/// Marks an error as the caller's fault (exit status 2).
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

fn positive(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be positive, got {v}"))
    }
}

fn non_negative(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be >= 0, got {v}"))
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<std::io::Error>() || cause.is::<toml::de::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<starid::Error>() {
            return match e {
                starid::Error::Domain(_) | starid::Error::Collinear(_) => 1,
                _ => 2,
            };
        }
    }
    1
}

// Library errors already embed their source in the message, so skip causes
// that would only repeat the tail of the previous line.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if out.ends_with(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let res = match cli.command {
        Command::BuildDb(a) => build_db(a),
        Command::Simulate(a) => simulate(a),
        Command::Identify(a) => identify_cmd(a),
        Command::Bench(a) => bench(a),
        Command::Tune(a) => tune(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

fn build_db(a: BuildDbArgs) -> Result<()> {
    let stars = a.catalog.load()?;
    let params = DatabaseParams {
        ad_max: a.ad_max,
        n_x: a.nx,
        mag_limit: a.catalog.mag_limit,
        min_separation: a.min_separation,
    };
    let db = build_pair_database(&stars, params)?;
    save_database(&db, &a.out)?;
    println!(
        "{}: {} stars ({} hidden by brighter companions), {} pairs, n_x {}, ad_max {}",
        a.out.display(),
        db.catalog().len(),
        stars.len() - db.catalog().len(),
        db.pair_count(),
        db.n_x(),
        db.ad_max()
    );
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let stars = match &a.db {
        Some(path) => load_database(path)?.catalog().to_vec(),
        None => resolve_doubles(&a.catalog.load()?, DEFAULT_MIN_SEPARATION_DEG),
    };
    let spec = FrameSpec {
        camera: CameraModel::default(),
        noise: NoiseSpec {
            sigma: a.sigma,
            false_ratio: a.false_ratio,
            keep_count: a.keep,
            seed: a.seed,
        },
        min_stars: a.min_stars,
    };
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for frame in 0..a.count {
        let scene = generate_frame(&stars, &spec, frame);
        write_scene(&scene, a.out.join(format!("scene_{frame:05}.json")))?;
    }
    println!("{} scenes written to {}", a.count, a.out.display());
    Ok(())
}

/// Loads the database and brings it to the requested bin width.
fn open_db(path: &Path, nx: Option<f64>, rebin: bool) -> Result<PairDatabase> {
    let db = load_database(path)?;
    match nx {
        Some(nx) if rebin => Ok(db.with_bin_width(nx)?),
        Some(nx) => {
            db.ensure_bin_width(nx)
                .context("pass --rebin to rebucket, or rebuild with build-db --nx")?;
            Ok(db)
        }
        None => Ok(db),
    }
}

fn identify_cmd(a: IdentifyArgs) -> Result<()> {
    let db = open_db(&a.db, a.nx, a.rebin)?;
    let file = read_scene(&a.scene)?;
    let stars = file.observed_stars();
    let params = IdentifyParams {
        n_th: a.nth,
        fnx: a.fnx,
        image_center: file.camera.center(),
        ..IdentifyParams::default().with_bin_width(db.n_x())
    };
    params.validate().map_err(|e| usage(e.to_string()))?;
    let (name, result) = match a.method {
        IdMethod::Proposed => ("proposed", identify(&stars, &db, &params)),
        IdMethod::Triangle => {
            let tdb = build_triangle_database(db.catalog(), db.ad_max(), DEFAULT_TRIANGLE_BIN_DEG)?;
            let tp = TriangleParams::for_noise(file.noise.sigma, &file.camera);
            ("triangle", triangle_identify(&stars, &tdb, &tp))
        }
    };
    let success = file.truth_map().map(|t| check_success(&result, &t));
    let record = ResultRecord::new(name, &result, success);
    let mut out = std::io::stdout().lock();
    if a.json {
        serde_json::to_writer(&mut out, &record)?;
        writeln!(out)?;
    } else {
        write!(out, "{}: {}", name, record.status.as_str())?;
        if let Some(att) = &record.attitude {
            write!(out, " ra {:.4} dec {:.4} roll {:.4}", att.ra, att.dec, att.roll)?;
        }
        write!(out, " votes {} matched {}", record.vote_count, record.matches.len())?;
        if let Some(ok) = success {
            write!(out, " correct {ok}")?;
        }
        writeln!(out, " ({:.3} ms)", record.elapsed_s * 1e3)?;
        for (obs, hip) in &record.matches {
            writeln!(out, "  {obs} HIP {hip}")?;
        }
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let db = open_db(&a.db, a.nx, a.rebin)?;
    let mut spec = SweepSpec::new(a.sweep, a.levels.clone(), a.frames, a.seed);
    spec.method = a.method;
    spec.min_stars = a.min_stars;
    spec.base = NoiseSpec {
        sigma: a.base_sigma,
        false_ratio: a.base_false,
        keep_count: a.base_keep,
        seed: a.seed,
    };
    spec.params = IdentifyParams {
        n_th: a.nth,
        ..IdentifyParams::default().with_bin_width(db.n_x())
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let tdb = if a.method.runs_triangle() {
        Some(build_triangle_database(db.catalog(), db.ad_max(), DEFAULT_TRIANGLE_BIN_DEG)?)
    } else {
        None
    };
    let report = run_sweep(&spec, &db, tdb.as_ref())?;
    let mut buf = format!(
        "# database={} catalog_sha256={} stars={} pairs={}\n",
        a.db.display(),
        hex(db.catalog_hash()),
        db.catalog().len(),
        db.pair_count()
    )
    .into_bytes();
    write_report(&report, &mut buf)?;
    match &a.out {
        Some(path) => fs::write(path, &buf).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().write_all(&buf)?,
    }
    Ok(())
}

fn tune(a: TuneArgs) -> Result<()> {
    let text = fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let file: TuneFile = toml::from_str(&text).with_context(|| format!("parsing {}", a.config.display()))?;
    file.tune.validate().map_err(|e| usage(e.to_string()))?;
    let base = a.config.parent().unwrap_or(Path::new("."));
    let db = load_database(base.join(&file.database))?;
    let (nx, nth, trace) = bayes_optimize(&file.tune, &db)?;
    let best = trace.best().ok_or_else(|| anyhow!("tuner returned no evaluations"))?;
    let csv = format!(
        "# database={} catalog_sha256={}\n{}",
        file.database.display(),
        hex(db.catalog_hash()),
        trace.to_csv()
    );
    match a.out.or(file.trace.map(|t| base.join(t))) {
        Some(path) => fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{csv}"),
    }
    if !trace.incumbent_nonincreasing() {
        bail!("incumbent cost increased along the trace");
    }
    eprintln!(
        "best n_x {nx:.5} N_th {nth}: success {:.3}, runtime {:.3} ms, cost {:.6}",
        best.eval.success,
        best.eval.runtime * 1e3,
        best.objective
    );
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
