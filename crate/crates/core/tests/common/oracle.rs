//! Independent reimplementations used as test oracles.

use std::collections::{BTreeSet, HashSet};
use std::sync::OnceLock;

use starid::catalog::{build_pair_database, CatalogPair, CatalogStar, DatabaseParams, PairDatabase};
use starid::geometry::{radec_to_unit, separation_rad, triad_attitude, QuantizedAttitude, RotationMatrix, UnitVec3};
use starid::identify::{extract_winner, AttitudeHistogram, Contribution, IdentifyParams};
use starid::simulate::CameraModel;

use super::{catalog, database, haversine_deg};

/// Stored pair set against a haversine double loop over the raw catalog.
/// Pairs touching a star hidden by a brighter companion must be absent.
pub fn check_pair_set() -> Result<usize, String> {
    let cat = catalog();
    let db = database();
    let (lo, hi) = (db.params().min_separation, db.params().ad_max);
    let hidden: HashSet<u32> = cat
        .iter()
        .map(|s| s.hip_id)
        .filter(|h| db.index_of(*h).is_none())
        .collect();
    // pairs within this of a cutoff could legitimately fall either way
    let band = 1e-9;
    let mut oracle = HashSet::new();
    let mut dropped = 0usize;
    for i in 0..cat.len() {
        for j in i + 1..cat.len() {
            let d = haversine_deg(&cat[i], &cat[j]);
            if (d - lo).abs() < band || (d - hi).abs() < band {
                return Err(format!("HIP {} / {} sits on a cutoff", cat[i].hip_id, cat[j].hip_id));
            }
            if d < lo || d > hi {
                continue;
            }
            let key = (cat[i].hip_id.min(cat[j].hip_id), cat[i].hip_id.max(cat[j].hip_id));
            if hidden.contains(&key.0) || hidden.contains(&key.1) {
                dropped += 1;
            } else {
                oracle.insert(key);
            }
        }
    }
    let stored: HashSet<(u32, u32)> = db.pairs().map(|p| (p.id_a, p.id_b)).collect();
    if stored.len() != db.pair_count() {
        return Err("duplicate pairs stored".into());
    }
    if stored != oracle {
        return Err(format!(
            "{} stored pairs missing from the double loop, {} absent from the store",
            stored.difference(&oracle).count(),
            oracle.difference(&stored).count()
        ));
    }
    for p in db.pairs() {
        let d = haversine_deg(db.star(p.idx_a), db.star(p.idx_b));
        if (d - p.d_r).abs() > 1e-9 {
            return Err(format!("{p:?}: haversine {d}"));
        }
    }
    Ok(db.pair_count() + dropped)
}

/// Databases over the 500 stars closest to (84, -1), a crowded patch around
/// Orion, at several bin widths.
pub fn subset_databases() -> &'static [PairDatabase] {
    static DBS: OnceLock<Vec<PairDatabase>> = OnceLock::new();
    DBS.get_or_init(|| {
        let centre = radec_to_unit(84.0, -1.0).unwrap();
        let mut stars: Vec<CatalogStar> = database().catalog().to_vec();
        stars.sort_by(|a, b| b.unit.dot(&centre).total_cmp(&a.unit.dot(&centre)));
        stars.truncate(500);
        let base = build_pair_database(&stars, DatabaseParams::default()).unwrap();
        [0.004, 0.016, 0.05, 0.3]
            .iter()
            .map(|&w| base.with_bin_width(w).unwrap())
            .collect()
    })
}

pub fn linear_scan(db: &PairDatabase, d_m: f64, eps: f64) -> Vec<CatalogPair> {
    let mut out: Vec<CatalogPair> = db.pairs().filter(|p| (p.d_r - d_m).abs() <= eps).copied().collect();
    out.sort_by(|a, b| (a.d_r, a.id_a, a.id_b).partial_cmp(&(b.d_r, b.id_a, b.id_b)).unwrap());
    out
}

pub fn check_query(db: &PairDatabase, d_m: f64, eps: f64) -> Result<(), String> {
    let got = db.query_pairs(d_m, eps);
    let want = linear_scan(db, d_m, eps);
    if got != want {
        return Err(format!(
            "n_x {} d_m {d_m} eps {eps}: {} pairs vs {} by scan",
            db.n_x(),
            got.len(),
            want.len()
        ));
    }
    Ok(())
}

/// A lattice cell with ra/roll wrapped for `fnx = 1`.
pub fn cell(a: i32, d: i32, r: i32) -> QuantizedAttitude {
    QuantizedAttitude {
        qra: a.rem_euclid(360),
        qdec: d,
        qroll: r.rem_euclid(360),
    }
}

fn vote(pair: usize) -> Contribution {
    Contribution {
        pair,
        catalog: CatalogPair {
            id_a: 0,
            id_b: 0,
            idx_a: 0,
            idx_b: 0,
            d_r: 0.0,
        },
        swapped: false,
        rotation: RotationMatrix::identity(),
    }
}

#[derive(Debug, PartialEq)]
pub struct NaiveWinner {
    pub key: QuantizedAttitude,
    pub score: usize,
    pub own_votes: usize,
    pub ambiguous: bool,
    pub contributors: Vec<u32>,
}

/// Scores every occupied cell from scratch and takes the best.
pub fn naive_winner(votes: &[(QuantizedAttitude, usize)], merge: bool) -> NaiveWinner {
    let wrap = 360;
    let cells: BTreeSet<QuantizedAttitude> = votes.iter().map(|v| v.0).collect();
    let reach = if merge { 1 } else { 0 };
    let mut scored = Vec::new();
    for &c in &cells {
        let window: HashSet<usize> = votes
            .iter()
            .filter(|v| v.0.lattice_distance(&c, wrap) <= reach)
            .map(|v| v.1)
            .collect();
        let own: HashSet<usize> = votes.iter().filter(|v| v.0 == c).map(|v| v.1).collect();
        scored.push((c, window.len(), own.len()));
    }
    // BTreeSet order is key order, so the first maximum has the lowest key
    let mut best = scored[0];
    for &s in &scored {
        if (s.1, s.2) > (best.1, best.2) {
            best = s;
        }
    }
    let limit = if merge { 2 } else { 1 };
    let tied = scored
        .iter()
        .any(|s| (s.1, s.2) == (best.1, best.2) && s.0.lattice_distance(&best.0, wrap) > limit);
    NaiveWinner {
        key: best.0,
        score: best.1,
        own_votes: best.2,
        ambiguous: best.1 < 2 || tied,
        contributors: votes
            .iter()
            .enumerate()
            .filter(|(_, v)| v.0.lattice_distance(&best.0, wrap) <= reach)
            .map(|(i, _)| i as u32)
            .collect(),
    }
}

pub fn check_winner(votes: &[(QuantizedAttitude, usize)], merge: bool) -> Result<(), String> {
    let mut hist = AttitudeHistogram::new(1.0);
    for (key, pair) in votes {
        hist.push(*key, vote(*pair));
    }
    let params = IdentifyParams {
        neighbor_merge: merge,
        ..IdentifyParams::default()
    };
    let w = extract_winner(&hist, &params).ok_or("no winner")?;
    let got = NaiveWinner {
        key: w.key,
        score: w.score,
        own_votes: w.own_votes,
        ambiguous: w.ambiguous,
        contributors: w.contributors,
    };
    let want = naive_winner(votes, merge);
    if got != want {
        return Err(format!("merge {merge}: {got:?} vs naive {want:?}"));
    }
    Ok(())
}

pub fn check_triad(r: &RotationMatrix, a: &UnitVec3, b: &UnitVec3) -> Result<(), String> {
    let got = triad_attitude(a, b, &r.to_sensor(a), &r.to_sensor(b)).map_err(|e| e.to_string())?;
    let err = got.max_abs_diff(r);
    if err >= 1e-9 {
        return Err(format!("TRIAD element error {err:e}"));
    }
    Ok(())
}

/// Pixel to vector and back.
pub fn check_pixel_round_trip(px: f64, py: f64) -> Result<(), String> {
    let cam = CameraModel::default();
    let v = cam.pixel_to_vector(px, py);
    let (qx, qy) = cam.project(&v).ok_or("behind camera")?;
    let err = separation_rad(&v, &cam.pixel_to_vector(qx, qy));
    if (qx - px).abs() > 1e-8 || (qy - py).abs() > 1e-8 || err >= 1e-10 {
        return Err(format!("({px}, {py}) -> ({qx}, {qy}), {err:e} rad"));
    }
    Ok(())
}

/// Direction `off` degrees from the boresight at azimuth `az` to pixel and back.
pub fn check_vector_round_trip(off: f64, az: f64) -> Result<(), String> {
    let cam = CameraModel::default();
    let (t, p) = (off.to_radians(), az.to_radians());
    let v = UnitVec3::from_xyz(t.sin() * p.cos(), t.sin() * p.sin(), t.cos());
    let (px, py) = cam.project(&v).ok_or("behind camera")?;
    if !cam.on_detector(px, py) {
        return Err(format!("{off} deg projects off the detector"));
    }
    let err = separation_rad(&v, &cam.pixel_to_vector(px, py));
    if err >= 1e-10 {
        return Err(format!("{off} deg at {az}: {err:e} rad"));
    }
    Ok(())
}
