//! Star catalog loading and the angular-distance pair database.
//!
//! Every unordered pair of catalog stars closer than `ad_max` is stored in a
//! bucket keyed by `floor(d / n_x)`. Buckets are dense (index = key) and each
//! one is sorted by distance, so a range query touches a fixed number of
//! buckets regardless of catalog size.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{angular_distance, radec_to_unit, UnitVec3};

/// A star closer than this to a brighter one is treated as unresolved and
/// left out of the database.
pub const DEFAULT_MIN_SEPARATION_DEG: f64 = 0.01;
pub const DEFAULT_AD_MAX_DEG: f64 = 8.0;
pub const DEFAULT_NX_DEG: f64 = 0.016;
pub const DEFAULT_MAG_LIMIT: f64 = 6.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogStar {
    pub hip_id: u32,
    pub ra: f64,
    pub dec: f64,
    pub vmag: f64,
    pub unit: UnitVec3,
}

impl CatalogStar {
    pub fn new(hip_id: u32, ra: f64, dec: f64, vmag: f64) -> Result<Self> {
        Ok(CatalogStar {
            hip_id,
            ra,
            dec,
            vmag,
            unit: radec_to_unit(ra, dec)?,
        })
    }
}

#[derive(Debug, Deserialize)]
struct CatalogRow {
    hip_id: u32,
    ra_deg: f64,
    dec_deg: f64,
    vmag: f64,
}

/// Parses `hip_id,ra_deg,dec_deg,vmag` rows and keeps stars no fainter than
/// `mag_limit`, ordered by HIP id.
///
/// Row numbers in errors are 1-based file lines (the header is line 1).
pub fn read_catalog<R: Read>(source: R, mag_limit: f64) -> Result<Vec<CatalogStar>> {
    if !mag_limit.is_finite() {
        return Err(Error::Config(format!("magnitude limit {mag_limit} is not finite")));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let mut seen = HashMap::new();
    let mut stars = Vec::new();
    for (i, rec) in rdr.deserialize::<CatalogRow>().enumerate() {
        let line = i + 2;
        let row = rec.map_err(|e| Error::Parse {
            row: line,
            msg: e.to_string(),
        })?;
        if seen.insert(row.hip_id, line).is_some() {
            return Err(Error::DuplicateHip(row.hip_id));
        }
        if row.hip_id == 0 {
            return Err(Error::Parse {
                row: line,
                msg: "hip_id must be positive".into(),
            });
        }
        if !row.vmag.is_finite() || !row.ra_deg.is_finite() {
            return Err(Error::Parse {
                row: line,
                msg: "non-finite value".into(),
            });
        }
        if row.vmag > mag_limit {
            continue;
        }
        let star = CatalogStar::new(row.hip_id, row.ra_deg, row.dec_deg, row.vmag).map_err(
            |e| Error::Parse {
                row: line,
                msg: e.to_string(),
            },
        )?;
        stars.push(star);
    }
    stars.sort_by_key(|s| s.hip_id);
    Ok(stars)
}

pub fn load_catalog(path: impl AsRef<Path>, mag_limit: f64) -> Result<Vec<CatalogStar>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_catalog(BufReader::new(file), mag_limit)
}

/// Bucket key for an angular distance.
#[inline]
pub fn hash_index(d: f64, n_x: f64) -> i64 {
    (d / n_x).floor() as i64
}

/// A catalog star pair. `id_a < id_b` are HIP ids; `idx_a`, `idx_b` index the
/// owning database's catalog.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogPair {
    pub id_a: u32,
    pub id_b: u32,
    pub idx_a: u32,
    pub idx_b: u32,
    pub d_r: f64,
}

impl CatalogPair {
    fn order_key(&self) -> (f64, u32, u32) {
        (self.d_r, self.id_a, self.id_b)
    }
}

fn cmp_pairs(a: &CatalogPair, b: &CatalogPair) -> std::cmp::Ordering {
    a.order_key()
        .partial_cmp(&b.order_key())
        .unwrap_or(std::cmp::Ordering::Equal)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatabaseParams {
    pub ad_max: f64,
    pub n_x: f64,
    pub mag_limit: f64,
    pub min_separation: f64,
}

impl Default for DatabaseParams {
    fn default() -> Self {
        DatabaseParams {
            ad_max: DEFAULT_AD_MAX_DEG,
            n_x: DEFAULT_NX_DEG,
            mag_limit: DEFAULT_MAG_LIMIT,
            min_separation: DEFAULT_MIN_SEPARATION_DEG,
        }
    }
}

impl DatabaseParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.n_x > 0.0 && self.n_x.is_finite()) {
            return Err(Error::Config(format!("n_x must be positive, got {}", self.n_x)));
        }
        if !(self.ad_max > 0.0 && self.ad_max.is_finite()) {
            return Err(Error::Config(format!(
                "ad_max must be positive, got {}",
                self.ad_max
            )));
        }
        if !(self.min_separation >= 0.0) {
            return Err(Error::Config("min_separation must be >= 0".into()));
        }
        Ok(())
    }
}

/// Bucketed star-pair distances plus the catalog they index.
#[derive(Clone, Debug)]
pub struct PairDatabase {
    params: DatabaseParams,
    catalog: Vec<CatalogStar>,
    hip_index: HashMap<u32, u32>,
    bins: Vec<Vec<CatalogPair>>,
    catalog_hash: [u8; 32],
}

/// Bucket-level accounting for one range query.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct QueryStats {
    pub bins_touched: usize,
    pub pairs_inspected: usize,
}

pub fn catalog_hash(stars: &[CatalogStar]) -> [u8; 32] {
    let mut h = Sha256::new();
    for s in stars {
        h.update(s.hip_id.to_le_bytes());
        h.update(s.ra.to_le_bytes());
        h.update(s.dec.to_le_bytes());
        h.update(s.vmag.to_le_bytes());
    }
    h.finalize().into()
}

/// Drops every star lying within `min_sep` degrees of a brighter kept star.
///
/// Stars are visited brightest first (ties by HIP id), so a tight group
/// collapses onto its brightest member. Output is ordered by HIP id.
pub fn resolve_doubles(stars: &[CatalogStar], min_sep: f64) -> Vec<CatalogStar> {
    let mut order: Vec<&CatalogStar> = stars.iter().collect();
    order.sort_by(|a, b| a.vmag.total_cmp(&b.vmag).then(a.hip_id.cmp(&b.hip_id)));
    let cos_sep = min_sep.to_radians().cos();
    // kept stars bucketed by declination; a hiding star is at most one band away
    let width = min_sep.max(0.5);
    let mut bands: HashMap<i64, Vec<&CatalogStar>> = HashMap::new();
    let mut kept = Vec::new();
    for s in order {
        let band = (s.dec / width).floor() as i64;
        let hidden = (band - 1..=band + 1).any(|b| {
            bands
                .get(&b)
                .is_some_and(|v| v.iter().any(|k| k.unit.dot(&s.unit) > cos_sep))
        });
        if !hidden {
            bands.entry(band).or_default().push(s);
            kept.push(s.clone());
        }
    }
    kept.sort_by_key(|s| s.hip_id);
    kept
}

/// Builds the pair database from an already magnitude-filtered catalog.
///
/// Unresolved companions are removed first ([`resolve_doubles`]); the
/// database catalog is what remains, and it is the catalog simulations
/// should draw from. Stars are swept in declination order so only stars
/// within `ad_max` in declination are compared. Fewer than two stars yields
/// an empty database.
pub fn build_pair_database(stars: &[CatalogStar], params: DatabaseParams) -> Result<PairDatabase> {
    params.validate()?;
    let mut sorted = stars.to_vec();
    sorted.sort_by_key(|s| s.hip_id);
    for w in sorted.windows(2) {
        if w[0].hip_id == w[1].hip_id {
            return Err(Error::DuplicateHip(w[0].hip_id));
        }
    }
    let catalog = resolve_doubles(&sorted, params.min_separation);

    let mut by_dec: Vec<u32> = (0..catalog.len() as u32).collect();
    by_dec.sort_by(|&a, &b| {
        catalog[a as usize]
            .dec
            .total_cmp(&catalog[b as usize].dec)
            .then(a.cmp(&b))
    });

    let mut pairs = Vec::new();
    for (k, &ia) in by_dec.iter().enumerate() {
        let a = &catalog[ia as usize];
        for &ib in &by_dec[k + 1..] {
            let b = &catalog[ib as usize];
            if b.dec - a.dec > params.ad_max {
                break;
            }
            let d = angular_distance(&a.unit, &b.unit);
            if d > params.ad_max || d < params.min_separation || d <= 0.0 {
                continue;
            }
            let (lo, hi) = if a.hip_id < b.hip_id { (ia, ib) } else { (ib, ia) };
            pairs.push(CatalogPair {
                id_a: catalog[lo as usize].hip_id,
                id_b: catalog[hi as usize].hip_id,
                idx_a: lo,
                idx_b: hi,
                d_r: d,
            });
        }
    }
    let catalog_hash = catalog_hash(&catalog);
    Ok(PairDatabase::assemble(params, catalog, pairs, catalog_hash))
}

impl PairDatabase {
    fn assemble(
        params: DatabaseParams,
        catalog: Vec<CatalogStar>,
        pairs: Vec<CatalogPair>,
        catalog_hash: [u8; 32],
    ) -> Self {
        let n_bins = hash_index(params.ad_max, params.n_x).max(0) as usize + 1;
        let mut bins = vec![Vec::new(); n_bins];
        for p in pairs {
            bins[hash_index(p.d_r, params.n_x) as usize].push(p);
        }
        for b in &mut bins {
            b.sort_by(cmp_pairs);
        }
        let hip_index = catalog
            .iter()
            .enumerate()
            .map(|(i, s)| (s.hip_id, i as u32))
            .collect();
        PairDatabase {
            params,
            catalog,
            hip_index,
            bins,
            catalog_hash,
        }
    }

    /// Same pairs re-bucketed with a different bin width.
    pub fn with_bin_width(&self, n_x: f64) -> Result<PairDatabase> {
        let params = DatabaseParams { n_x, ..self.params };
        params.validate()?;
        let pairs = self.bins.iter().flatten().copied().collect();
        Ok(Self::assemble(
            params,
            self.catalog.clone(),
            pairs,
            self.catalog_hash,
        ))
    }

    pub fn params(&self) -> &DatabaseParams {
        &self.params
    }

    pub fn n_x(&self) -> f64 {
        self.params.n_x
    }

    pub fn ad_max(&self) -> f64 {
        self.params.ad_max
    }

    pub fn catalog(&self) -> &[CatalogStar] {
        &self.catalog
    }

    pub fn catalog_hash(&self) -> &[u8; 32] {
        &self.catalog_hash
    }

    pub fn star(&self, idx: u32) -> &CatalogStar {
        &self.catalog[idx as usize]
    }

    pub fn index_of(&self, hip_id: u32) -> Option<u32> {
        self.hip_index.get(&hip_id).copied()
    }

    pub fn bin_count(&self) -> usize {
        self.bins.len()
    }

    /// Pairs stored under `key`; empty for keys outside the table.
    pub fn bin(&self, key: i64) -> &[CatalogPair] {
        usize::try_from(key)
            .ok()
            .and_then(|k| self.bins.get(k))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn pair_count(&self) -> usize {
        self.bins.iter().map(Vec::len).sum()
    }

    pub fn pairs(&self) -> impl Iterator<Item = &CatalogPair> {
        self.bins.iter().flatten()
    }

    /// Errors unless the database was built with bin width `n_x`.
    pub fn ensure_bin_width(&self, n_x: f64) -> Result<()> {
        if (self.params.n_x - n_x).abs() > 1e-12 {
            return Err(Error::Incompatible(format!(
                "database built with n_x = {}, requested {}",
                self.params.n_x, n_x
            )));
        }
        Ok(())
    }

    /// Calls `f` for every pair with `|d_r - d_m| <= epsilon`, in ascending
    /// `(d_r, id_a, id_b)` order.
    ///
    /// Probes the home bucket and `ceil(epsilon / n_x)` buckets on each side.
    pub fn for_each_candidate<F: FnMut(&CatalogPair)>(
        &self,
        d_m: f64,
        epsilon: f64,
        mut f: F,
    ) -> QueryStats {
        let mut stats = QueryStats::default();
        let home = hash_index(d_m, self.params.n_x);
        let reach = (epsilon / self.params.n_x).ceil() as i64;
        let lo_d = d_m - epsilon;
        let hi_d = d_m + epsilon;
        let last = self.bins.len() as i64 - 1;
        let first_key = (home - reach).max(0);
        let last_key = (home + reach).min(last);
        for key in first_key..=last_key {
            let bin = &self.bins[key as usize];
            stats.bins_touched += 1;
            let start = bin.partition_point(|p| p.d_r < lo_d);
            for p in &bin[start..] {
                stats.pairs_inspected += 1;
                if p.d_r > hi_d {
                    break;
                }
                f(p);
            }
        }
        stats
    }

    pub fn query_pairs(&self, d_m: f64, epsilon: f64) -> Vec<CatalogPair> {
        let mut out = Vec::new();
        self.for_each_candidate(d_m, epsilon, |p| out.push(*p));
        out
    }
}

const MAGIC: &[u8; 8] = b"STARIDPB";
const FORMAT_VERSION: u32 = 1;

/// Writes the database in the little-endian binary layout documented in
/// `docs/database-format.md`.
pub fn write_database<W: Write>(db: &PairDatabase, mut w: W) -> std::io::Result<()> {
    type E = LittleEndian;
    w.write_all(MAGIC)?;
    w.write_u32::<E>(FORMAT_VERSION)?;
    let p = &db.params;
    w.write_f64::<E>(p.n_x)?;
    w.write_f64::<E>(p.ad_max)?;
    w.write_f64::<E>(p.mag_limit)?;
    w.write_f64::<E>(p.min_separation)?;
    w.write_all(&db.catalog_hash)?;
    w.write_u32::<E>(db.catalog.len() as u32)?;
    for s in &db.catalog {
        w.write_u32::<E>(s.hip_id)?;
        w.write_f64::<E>(s.ra)?;
        w.write_f64::<E>(s.dec)?;
        w.write_f64::<E>(s.vmag)?;
    }
    w.write_u32::<E>(db.bins.len() as u32)?;
    for bin in &db.bins {
        w.write_u32::<E>(bin.len() as u32)?;
        for pair in bin {
            w.write_u32::<E>(pair.idx_a)?;
            w.write_u32::<E>(pair.idx_b)?;
            w.write_f64::<E>(pair.d_r)?;
        }
    }
    w.write_u64::<E>(db.pair_count() as u64)?;
    w.flush()
}

fn incompatible(msg: impl Into<String>) -> Error {
    Error::Incompatible(msg.into())
}

pub fn read_database<R: Read>(mut r: R) -> Result<PairDatabase> {
    type E = LittleEndian;
    let trunc = |e: std::io::Error| incompatible(format!("truncated or unreadable file: {e}"));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(trunc)?;
    if &magic != MAGIC {
        return Err(incompatible("bad magic; not a pair database"));
    }
    let version = r.read_u32::<E>().map_err(trunc)?;
    if version != FORMAT_VERSION {
        return Err(incompatible(format!(
            "format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let params = DatabaseParams {
        n_x: r.read_f64::<E>().map_err(trunc)?,
        ad_max: r.read_f64::<E>().map_err(trunc)?,
        mag_limit: r.read_f64::<E>().map_err(trunc)?,
        min_separation: r.read_f64::<E>().map_err(trunc)?,
    };
    params
        .validate()
        .map_err(|e| incompatible(format!("corrupted header: {e}")))?;
    let mut stored_hash = [0u8; 32];
    r.read_exact(&mut stored_hash).map_err(trunc)?;

    let n_stars = r.read_u32::<E>().map_err(trunc)? as usize;
    let mut catalog = Vec::with_capacity(n_stars.min(1 << 20));
    for _ in 0..n_stars {
        let hip = r.read_u32::<E>().map_err(trunc)?;
        let ra = r.read_f64::<E>().map_err(trunc)?;
        let dec = r.read_f64::<E>().map_err(trunc)?;
        let vmag = r.read_f64::<E>().map_err(trunc)?;
        catalog.push(
            CatalogStar::new(hip, ra, dec, vmag)
                .map_err(|e| incompatible(format!("star {hip}: {e}")))?,
        );
    }
    if catalog_hash(&catalog) != stored_hash {
        return Err(incompatible("catalog hash mismatch"));
    }

    let n_bins = r.read_u32::<E>().map_err(trunc)? as usize;
    let expected_bins = hash_index(params.ad_max, params.n_x) as usize + 1;
    if n_bins != expected_bins {
        return Err(incompatible(format!(
            "{n_bins} bins in file, header implies {expected_bins}"
        )));
    }
    let mut pairs = Vec::new();
    for key in 0..n_bins {
        let len = r.read_u32::<E>().map_err(trunc)? as usize;
        for _ in 0..len {
            let idx_a = r.read_u32::<E>().map_err(trunc)?;
            let idx_b = r.read_u32::<E>().map_err(trunc)?;
            let d_r = r.read_f64::<E>().map_err(trunc)?;
            let (Some(a), Some(b)) = (catalog.get(idx_a as usize), catalog.get(idx_b as usize))
            else {
                return Err(incompatible("pair references a star outside the catalog"));
            };
            if hash_index(d_r, params.n_x) as usize != key || a.hip_id >= b.hip_id {
                return Err(incompatible(format!("pair in bin {key} violates bin layout")));
            }
            pairs.push(CatalogPair {
                id_a: a.hip_id,
                id_b: b.hip_id,
                idx_a,
                idx_b,
                d_r,
            });
        }
    }
    let total = r.read_u64::<E>().map_err(trunc)?;
    if total as usize != pairs.len() {
        return Err(incompatible("pair count trailer mismatch"));
    }
    Ok(PairDatabase::assemble(params, catalog, pairs, stored_hash))
}

pub fn save_database(db: &PairDatabase, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_database(db, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load_database(path: impl AsRef<Path>) -> Result<PairDatabase> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_database(BufReader::new(file))
}
