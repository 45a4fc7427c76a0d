//! Star map identification by reverse attitude statistics.
//!
//! Instead of verifying pair matches geometrically, every tentative match of
//! an observed pair to a catalog pair is turned into a full attitude with the
//! dual-vector method. Attitudes from correct matches agree with each other
//! while wrong matches scatter, so the most populated cell of a quantized
//! attitude histogram identifies both the attitude and the correct matches.
//!
//! Pipeline: [`select_pairs`] → [`initial_match`] → [`accumulate_attitudes`]
//! → [`extract_winner`] → [`assemble_result`]; [`identify`] runs all of it.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::catalog::{CatalogPair, PairDatabase, DEFAULT_AD_MAX_DEG, DEFAULT_NX_DEG};
use crate::geometry::{
    angular_distance, matrix_to_euler, quantize_euler, triad_attitude, triad_from_frames, wrap_steps,
    Attitude, QuantizedAttitude, RotationMatrix, TriadFrame, UnitVec3,
};
use crate::simulate::CameraModel;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservedStar {
    pub index: usize,
    pub px: f64,
    pub py: f64,
    /// Sensor-frame direction derived from `(px, py)`.
    pub unit: UnitVec3,
    /// Ground-truth HIP id; `None` for false stars or real data.
    pub truth_hip: Option<u32>,
}

impl ObservedStar {
    pub fn new(index: usize, px: f64, py: f64, cam: &CameraModel, truth_hip: Option<u32>) -> Self {
        ObservedStar {
            index,
            px,
            py,
            unit: cam.pixel_to_vector(px, py),
            truth_hip,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservedPair {
    pub i1: usize,
    pub i2: usize,
    /// Angular distance, degrees.
    pub d_m: f64,
    /// Mean distance of the two stars from the image center, pixels.
    pub centrality: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentifyParams {
    /// Bin width of the pair database, degrees.
    pub n_x: f64,
    /// Maximum number of observed pairs used.
    pub n_th: usize,
    /// Attitude quantization step, degrees.
    pub fnx: f64,
    /// Angular-distance match tolerance, degrees.
    pub epsilon: f64,
    /// Pairs closer than this are only used when too few others exist.
    pub min_pair_sep: f64,
    /// Pairs wider than this cannot both be in the field.
    pub ad_max: f64,
    /// Score each attitude cell together with its 26 neighbours.
    pub neighbor_merge: bool,
    /// Pixel position of the optical axis, for the centrality preference.
    pub image_center: (f64, f64),
}

impl Default for IdentifyParams {
    fn default() -> Self {
        IdentifyParams {
            n_x: DEFAULT_NX_DEG,
            n_th: 55,
            fnx: 1.0,
            epsilon: DEFAULT_NX_DEG,
            min_pair_sep: 1.5,
            ad_max: DEFAULT_AD_MAX_DEG,
            neighbor_merge: true,
            image_center: CameraModel::default().center(),
        }
    }
}

impl IdentifyParams {
    /// Sets `n_x` and ties `epsilon` to it.
    pub fn with_bin_width(mut self, n_x: f64) -> Self {
        self.n_x = n_x;
        self.epsilon = n_x;
        self
    }

    pub fn validate(&self) -> crate::Result<()> {
        let positive = [
            ("n_x", self.n_x),
            ("fnx", self.fnx),
            ("epsilon", self.epsilon),
            ("min_pair_sep", self.min_pair_sep),
            ("ad_max", self.ad_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(crate::Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_th == 0 {
            return Err(crate::Error::Config("n_th must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Success,
    Ambiguous,
    InsufficientStars,
    NoCandidates,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Success => "success",
            Status::Ambiguous => "ambiguous",
            Status::InsufficientStars => "insufficient_stars",
            Status::NoCandidates => "no_candidates",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdentificationResult {
    pub status: Status,
    /// Refined attitude; present on success.
    pub attitude: Option<Attitude>,
    /// Observed index to HIP id.
    pub matches: BTreeMap<usize, u32>,
    pub vote_count: usize,
    pub elapsed: f64,
}

impl IdentificationResult {
    pub fn failure(status: Status, elapsed: f64) -> Self {
        IdentificationResult {
            status,
            attitude: None,
            matches: BTreeMap::new(),
            vote_count: 0,
            elapsed,
        }
    }

    /// Equality ignoring `elapsed`.
    pub fn same_outcome(&self, other: &IdentificationResult) -> bool {
        self.status == other.status
            && self.attitude == other.attitude
            && self.matches == other.matches
            && self.vote_count == other.vote_count
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairSelection {
    pub pairs: Vec<ObservedPair>,
    /// Pairs formed before filtering and capping, `N(N-1)/2`.
    pub formed: usize,
    /// Set when pairs below `min_pair_sep` had to be used.
    pub used_fallback: bool,
}

/// Forms all observed pairs and picks at most `n_th` of them.
///
/// Pairs wider than `ad_max` are discarded. Pairs at least `min_pair_sep`
/// apart come first, by ascending separation then ascending centrality;
/// narrower pairs follow by descending separation. Returns `None` for fewer
/// than two stars.
pub fn select_pairs(stars: &[ObservedStar], params: &IdentifyParams) -> Option<PairSelection> {
    if stars.len() < 2 {
        return None;
    }
    let (cx, cy) = params.image_center;
    let radius = |s: &ObservedStar| (s.px - cx).hypot(s.py - cy);
    let mut above = Vec::new();
    let mut below = Vec::new();
    let mut formed = 0;
    for (a, sa) in stars.iter().enumerate() {
        for sb in &stars[a + 1..] {
            formed += 1;
            let d_m = angular_distance(&sa.unit, &sb.unit);
            if d_m > params.ad_max {
                continue;
            }
            let pair = ObservedPair {
                i1: sa.index.min(sb.index),
                i2: sa.index.max(sb.index),
                d_m,
                centrality: 0.5 * (radius(sa) + radius(sb)),
            };
            if d_m >= params.min_pair_sep {
                above.push(pair);
            } else {
                below.push(pair);
            }
        }
    }
    // Final tie-break on the pixel positions keeps the order independent of
    // how the star list happens to be numbered.
    let pos_key = |p: &ObservedPair| {
        let s1 = &stars[stars.iter().position(|s| s.index == p.i1).unwrap_or(0)];
        let s2 = &stars[stars.iter().position(|s| s.index == p.i2).unwrap_or(0)];
        let (a, b) = ((s1.py, s1.px), (s2.py, s2.px));
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    };
    let tie = |a: &ObservedPair, b: &ObservedPair| {
        pos_key(a)
            .partial_cmp(&pos_key(b))
            .unwrap_or(std::cmp::Ordering::Equal)
    };
    above.sort_by(|a, b| {
        a.d_m
            .total_cmp(&b.d_m)
            .then(a.centrality.total_cmp(&b.centrality))
            .then_with(|| tie(a, b))
    });
    below.sort_by(|a, b| {
        b.d_m
            .total_cmp(&a.d_m)
            .then(a.centrality.total_cmp(&b.centrality))
            .then_with(|| tie(a, b))
    });
    let used_fallback = above.len() < params.n_th && !below.is_empty();
    let mut pairs = above;
    pairs.extend(below);
    pairs.truncate(params.n_th);
    Some(PairSelection {
        pairs,
        formed,
        used_fallback,
    })
}

/// Catalog candidates for each selected pair, stored contiguously.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CandidateLists {
    offsets: Vec<usize>,
    pairs: Vec<CatalogPair>,
}

impl CandidateLists {
    pub fn len(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn for_pair(&self, k: usize) -> &[CatalogPair] {
        &self.pairs[self.offsets[k]..self.offsets[k + 1]]
    }

    pub fn total(&self) -> usize {
        self.pairs.len()
    }
}

/// Catalog pairs within `epsilon` of each observed separation.
pub fn initial_match(pairs: &[ObservedPair], db: &PairDatabase, params: &IdentifyParams) -> CandidateLists {
    let mut out = CandidateLists {
        offsets: Vec::with_capacity(pairs.len() + 1),
        pairs: Vec::new(),
    };
    out.offsets.push(0);
    for p in pairs {
        db.for_each_candidate(p.d_m, params.epsilon, |c| out.pairs.push(*c));
        out.offsets.push(out.pairs.len());
    }
    out
}

/// One candidate attitude and the match that produced it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contribution {
    /// Index into the selected pair list.
    pub pair: usize,
    pub catalog: CatalogPair,
    /// `false`: catalog `a` ↔ observed `i1`; `true`: catalog `a` ↔ `i2`.
    pub swapped: bool,
    pub rotation: RotationMatrix,
}

impl Contribution {
    /// `(observed index, catalog index)` for both stars of the match.
    pub fn assignments(&self, pairs: &[ObservedPair]) -> [(usize, u32); 2] {
        let p = &pairs[self.pair];
        if self.swapped {
            [(p.i2, self.catalog.idx_a), (p.i1, self.catalog.idx_b)]
        } else {
            [(p.i1, self.catalog.idx_a), (p.i2, self.catalog.idx_b)]
        }
    }
}

/// Quantized-attitude frequency table.
///
/// `frequency` counts attitudes. Winner selection counts distinct observed
/// pairs instead ([`AttitudeHistogram::pair_votes`]), so one pair matching
/// several nearly coincident catalog pairs (a close double star) still
/// votes once.
#[derive(Clone, Debug, Default)]
pub struct AttitudeHistogram {
    fnx: f64,
    entries: Vec<Contribution>,
    bins: FxHashMap<QuantizedAttitude, SmallVec<[u32; 4]>>,
}

impl AttitudeHistogram {
    pub fn new(fnx: f64) -> Self {
        AttitudeHistogram {
            fnx,
            ..Default::default()
        }
    }

    pub fn fnx(&self) -> f64 {
        self.fnx
    }

    pub fn push(&mut self, key: QuantizedAttitude, c: Contribution) {
        let id = self.entries.len() as u32;
        self.entries.push(c);
        self.bins.entry(key).or_default().push(id);
    }

    /// Adds `count` votes to `key`, each from a fresh pair index; used to
    /// build synthetic tables.
    pub fn add_votes(&mut self, key: QuantizedAttitude, count: usize) {
        for _ in 0..count {
            let pair = self.entries.len();
            self.push(
                key,
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
                },
            );
        }
    }

    /// Number of attitudes accumulated.
    pub fn total(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Attitudes accumulated in `key`.
    pub fn frequency(&self, key: &QuantizedAttitude) -> usize {
        self.bins.get(key).map_or(0, |ids| ids.len())
    }

    /// Distinct observed pairs voting for `key`.
    pub fn pair_votes(&self, key: &QuantizedAttitude) -> usize {
        self.bins.get(key).map_or(0, |ids| self.distinct_pairs(ids))
    }

    fn distinct_pairs(&self, ids: &[u32]) -> usize {
        let mut pairs: Vec<usize> = ids.iter().map(|&i| self.entries[i as usize].pair).collect();
        pairs.sort_unstable();
        pairs.dedup();
        pairs.len()
    }

    pub fn contributors(&self, key: &QuantizedAttitude) -> impl Iterator<Item = &Contribution> {
        self.bins
            .get(key)
            .into_iter()
            .flatten()
            .map(|&i| &self.entries[i as usize])
    }

    pub fn keys(&self) -> impl Iterator<Item = &QuantizedAttitude> {
        self.bins.keys()
    }

    /// `(key, frequency)` in key order.
    pub fn frequencies(&self) -> Vec<(QuantizedAttitude, usize)> {
        let mut v: Vec<_> = self.bins.iter().map(|(k, ids)| (*k, ids.len())).collect();
        v.sort_unstable_by_key(|e| e.0);
        v
    }

    pub fn entry(&self, id: u32) -> &Contribution {
        &self.entries[id as usize]
    }
}

/// Solves both assignments of every candidate match and counts the
/// quantized attitudes. Collinear inputs are skipped.
pub fn accumulate_attitudes(
    pairs: &[ObservedPair],
    stars: &[ObservedStar],
    candidates: &CandidateLists,
    db: &PairDatabase,
    params: &IdentifyParams,
) -> AttitudeHistogram {
    let mut hist = AttitudeHistogram::new(params.fnx);
    hist.entries.reserve(2 * candidates.total());
    hist.bins.reserve(2 * candidates.total());
    let by_index: HashMap<usize, &ObservedStar> = stars.iter().map(|s| (s.index, s)).collect();
    for (k, p) in pairs.iter().enumerate() {
        let (Some(o1), Some(o2)) = (by_index.get(&p.i1), by_index.get(&p.i2)) else {
            continue;
        };
        // observed frames for catalog a <-> i1 and catalog a <-> i2
        let (Ok(direct), Ok(swapped)) = (
            TriadFrame::new(&o1.unit, &o2.unit),
            TriadFrame::new(&o2.unit, &o1.unit),
        ) else {
            continue;
        };
        for c in candidates.for_pair(k) {
            let Ok(reference) = TriadFrame::new(&db.star(c.idx_a).unit, &db.star(c.idx_b).unit) else {
                continue;
            };
            for (is_swapped, observed) in [(false, &direct), (true, &swapped)] {
                let rotation = triad_from_frames(observed, &reference);
                let e = matrix_to_euler(&rotation);
                let key = quantize_euler(e.ra, e.dec, e.roll, params.fnx);
                hist.push(
                    key,
                    Contribution {
                        pair: k,
                        catalog: *c,
                        swapped: is_swapped,
                        rotation,
                    },
                );
            }
        }
    }
    hist
}

#[derive(Clone, Debug, PartialEq)]
pub struct Winner {
    pub key: QuantizedAttitude,
    /// Distinct observed pairs voting for the cell, or for any cell of its
    /// 3×3×3 window when merging.
    pub score: usize,
    /// Distinct observed pairs voting for the winning cell alone.
    pub own_votes: usize,
    /// Set when the score is below 2 or another, well separated cell ties on
    /// both score and own votes.
    pub ambiguous: bool,
    /// Entry ids of the contributions inside the winning window.
    pub contributors: Vec<u32>,
}

/// Lattice distance beyond which a tied cell counts as a competing attitude:
/// non-adjacent cells without merging, disjoint windows with merging.
fn competitor_distance(merge: bool) -> i32 {
    if merge {
        2
    } else {
        1
    }
}

/// Finds the mode of the histogram.
///
/// Scores count distinct observed pairs in the cell, or in its 3×3×3 window
/// when merging. Cells are ranked by score (descending), own pair votes
/// (descending), then key (ascending). Window scores are only formed for
/// cells whose attitude count over the surrounding (ra, dec) columns can
/// still reach the best score seen so far.
pub fn extract_winner(hist: &AttitudeHistogram, params: &IdentifyParams) -> Option<Winner> {
    if hist.bins.is_empty() {
        return None;
    }
    let wrap = wrap_steps(hist.fnx);
    let window_ids = |k: &QuantizedAttitude| -> Vec<u32> {
        let mut ids: Vec<u32> = hist.bins[k].to_vec();
        for n in k.neighbors(wrap) {
            if let Some(v) = hist.bins.get(&n) {
                ids.extend_from_slice(v);
            }
        }
        ids
    };

    // (key, score, own pair votes)
    let mut scored: Vec<(QuantizedAttitude, usize, usize)> = Vec::new();
    if params.neighbor_merge {
        let mut columns: FxHashMap<(i32, i32), usize> = FxHashMap::default();
        for (k, ids) in &hist.bins {
            *columns.entry((k.qra, k.qdec)).or_default() += ids.len();
        }
        let column_bound = |k: &QuantizedAttitude| -> usize {
            let mut total = 0;
            for da in -1..=1 {
                for dd in -1..=1 {
                    let c = ((k.qra + da).rem_euclid(wrap), k.qdec + dd);
                    total += columns.get(&c).copied().unwrap_or(0);
                }
            }
            total
        };
        // seed the bound with the fullest cell's window
        let seed = hist
            .bins
            .iter()
            .map(|(k, ids)| (ids.len(), std::cmp::Reverse(*k)))
            .max()
            .map(|(_, k)| k.0)
            .expect("non-empty histogram");
        let mut best = hist.distinct_pairs(&window_ids(&seed));
        for k in hist.bins.keys() {
            if column_bound(k) < best {
                continue;
            }
            let ids = window_ids(k);
            if ids.len() < best {
                continue;
            }
            let score = hist.distinct_pairs(&ids);
            best = best.max(score);
            scored.push((*k, score, hist.pair_votes(k)));
        }
    } else {
        scored = hist
            .bins
            .iter()
            .map(|(k, ids)| {
                let v = hist.distinct_pairs(ids);
                (*k, v, v)
            })
            .collect();
    }
    scored.sort_unstable_by_key(|e| e.0);
    let mut best = scored[0];
    for &cand in &scored[1..] {
        if (cand.1, cand.2) > (best.1, best.2) {
            best = cand;
        }
    }
    let (key, score, own_votes) = best;
    let limit = competitor_distance(params.neighbor_merge);
    let tied = scored
        .iter()
        .any(|(k, s, o)| (*s, *o) == (score, own_votes) && k.lattice_distance(&key, wrap) > limit);

    let mut contributors = if params.neighbor_merge {
        window_ids(&key)
    } else {
        hist.bins[&key].to_vec()
    };
    contributors.sort_unstable();
    Some(Winner {
        key,
        score,
        own_votes,
        ambiguous: score < 2 || tied,
        contributors,
    })
}

/// Votes an observed star needs before it is matched; a lone vote is usually
/// a false star caught in the winning window by chance.
const MIN_STAR_VOTES: usize = 2;

/// Reads star correspondences out of the winning cell.
///
/// Each contribution votes for the two catalog stars it assigns. Every
/// observed star with at least two votes takes its most voted catalog star, ties going to the smaller
/// summed distance residual; a catalog star claimed by several observed stars
/// goes to the one with more votes, or to none on a tie. The attitude is re-solved from the two most voted matches.
pub fn assemble_result(
    winner: &Winner,
    hist: &AttitudeHistogram,
    pairs: &[ObservedPair],
    stars: &[ObservedStar],
    db: &PairDatabase,
) -> IdentificationResult {
    if winner.ambiguous {
        return IdentificationResult {
            vote_count: winner.score,
            ..IdentificationResult::failure(Status::Ambiguous, 0.0)
        };
    }
    // observed star -> catalog idx -> (votes, summed |d_r - d_m|)
    let mut votes: BTreeMap<usize, BTreeMap<u32, (usize, f64)>> = BTreeMap::new();
    for &id in &winner.contributors {
        let c = hist.entry(id);
        let residual = (c.catalog.d_r - pairs[c.pair].d_m).abs();
        for (obs, cat) in c.assignments(pairs) {
            let v = votes.entry(obs).or_default().entry(cat).or_insert((0, 0.0));
            v.0 += 1;
            v.1 += residual;
        }
    }
    // observed star -> (catalog idx, votes); equal votes (a near double)
    // go to the candidate whose pair distances fit better
    let mut best: BTreeMap<usize, (u32, usize)> = BTreeMap::new();
    for (obs, tally) in &votes {
        if tally.values().map(|v| v.0).max().unwrap_or(0) < MIN_STAR_VOTES {
            continue;
        }
        let (cat, n) = tally
            .iter()
            .max_by(|a, b| {
                a.1 .0
                    .cmp(&b.1 .0)
                    .then(b.1 .1.total_cmp(&a.1 .1))
                    .then(b.0.cmp(a.0))
            })
            .map(|(c, v)| (*c, v.0))
            .expect("non-empty tally");
        best.insert(*obs, (cat, n));
    }
    let mut claims: BTreeMap<u32, Vec<(usize, usize)>> = BTreeMap::new();
    for (obs, (cat, n)) in &best {
        claims.entry(*cat).or_default().push((*obs, *n));
    }
    let mut assigned: Vec<(usize, u32, usize)> = Vec::new();
    for (cat, claimants) in claims {
        let top = claimants.iter().map(|c| c.1).max().unwrap_or(0);
        let mut winners = claimants.iter().filter(|c| c.1 == top);
        if let (Some(w), None) = (winners.next(), winners.next()) {
            assigned.push((w.0, cat, w.1));
        }
    }
    if assigned.len() < 2 {
        return IdentificationResult {
            vote_count: winner.score,
            ..IdentificationResult::failure(Status::InsufficientStars, 0.0)
        };
    }

    // most voted first; ties by HIP id so the choice ignores star numbering
    let mut ranked = assigned.clone();
    ranked.sort_by(|a, b| {
        b.2.cmp(&a.2)
            .then(db.star(a.1).hip_id.cmp(&db.star(b.1).hip_id))
    });
    let unit_of = |obs: usize| stars.iter().find(|s| s.index == obs).map(|s| s.unit);
    let mut rotation = None;
    'outer: for i in 0..ranked.len() {
        for j in i + 1..ranked.len() {
            let (Some(o1), Some(o2)) = (unit_of(ranked[i].0), unit_of(ranked[j].0)) else {
                continue;
            };
            let c1 = &db.star(ranked[i].1).unit;
            let c2 = &db.star(ranked[j].1).unit;
            if let Ok(r) = triad_attitude(c1, c2, &o1, &o2) {
                rotation = Some(r);
                break 'outer;
            }
        }
    }
    let Some(rotation) = rotation else {
        return IdentificationResult {
            vote_count: winner.score,
            ..IdentificationResult::failure(Status::InsufficientStars, 0.0)
        };
    };
    IdentificationResult {
        status: Status::Success,
        attitude: Some(Attitude::from_rotation(rotation)),
        matches: assigned
            .iter()
            .map(|(obs, cat, _)| (*obs, db.star(*cat).hip_id))
            .collect(),
        vote_count: winner.score,
        elapsed: 0.0,
    }
}

/// Runs the whole pipeline on one frame. `db` must be bucketed with
/// `params.n_x`; callers check this with [`PairDatabase::ensure_bin_width`].
pub fn identify(stars: &[ObservedStar], db: &PairDatabase, params: &IdentifyParams) -> IdentificationResult {
    let start = Instant::now();
    let mut result = identify_inner(stars, db, params);
    result.elapsed = start.elapsed().as_secs_f64();
    result
}

fn identify_inner(stars: &[ObservedStar], db: &PairDatabase, params: &IdentifyParams) -> IdentificationResult {
    let Some(selection) = select_pairs(stars, params) else {
        return IdentificationResult::failure(Status::InsufficientStars, 0.0);
    };
    let candidates = initial_match(&selection.pairs, db, params);
    let hist = accumulate_attitudes(&selection.pairs, stars, &candidates, db, params);
    let Some(winner) = extract_winner(&hist, params) else {
        return IdentificationResult::failure(Status::NoCandidates, 0.0);
    };
    assemble_result(&winner, &hist, &selection.pairs, stars, db)
}

/// Success criterion: at least two real stars correctly identified, no false
/// star identified and no real star matched to the wrong HIP id.
///
/// `truth` maps observed index to HIP id for real stars; any index missing
/// from it is a false star.
pub fn check_success(result: &IdentificationResult, truth: &BTreeMap<usize, u32>) -> bool {
    let mut correct = 0;
    for (obs, hip) in &result.matches {
        match truth.get(obs) {
            Some(t) if t == hip => correct += 1,
            _ => return false,
        }
    }
    correct >= 2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{build_pair_database, CatalogStar, DatabaseParams};
    use crate::simulate::{render_scene, CameraModel};

    fn q(a: i32, d: i32, r: i32) -> QuantizedAttitude {
        QuantizedAttitude {
            qra: a,
            qdec: d,
            qroll: r,
        }
    }

    fn stars_at(points: &[(f64, f64)]) -> Vec<ObservedStar> {
        let cam = CameraModel::default();
        points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| ObservedStar::new(i, x, y, &cam, None))
            .collect()
    }

    #[test]
    fn select_counts_and_cap() {
        let five = stars_at(&[
            (400.0, 400.0),
            (1600.0, 500.0),
            (1000.0, 1000.0),
            (500.0, 1500.0),
            (1500.0, 1500.0),
        ]);
        let sel = select_pairs(&five, &IdentifyParams::default()).unwrap();
        assert_eq!(sel.formed, 10);
        assert_eq!(sel.pairs.len(), 10);

        let twelve: Vec<(f64, f64)> = (0..12)
            .map(|i| {
                let t = i as f64 / 12.0 * std::f64::consts::TAU;
                (1024.0 + 900.0 * t.cos(), 1024.0 + 900.0 * t.sin())
            })
            .collect();
        let params = IdentifyParams {
            n_th: 20,
            ..Default::default()
        };
        let sel = select_pairs(&stars_at(&twelve), &params).unwrap();
        assert_eq!(sel.formed, 66);
        assert_eq!(sel.pairs.len(), 20);
        assert!(sel.pairs.windows(2).all(|w| w[0].d_m <= w[1].d_m));
        assert!(sel.pairs.iter().all(|p| p.d_m >= 1.5));

        assert!(select_pairs(&stars_at(&[(1.0, 1.0)]), &params).is_none());
    }

    #[test]
    fn select_falls_back_to_close_pairs() {
        // all within ~1 deg (250 px ~ 0.98 deg)
        let close = stars_at(&[(1000.0, 1000.0), (1100.0, 1000.0), (1000.0, 1100.0), (1060.0, 1060.0)]);
        let sel = select_pairs(&close, &IdentifyParams::default()).unwrap();
        assert_eq!(sel.pairs.len(), 6);
        assert!(sel.used_fallback);
        assert!(sel.pairs.windows(2).all(|w| w[0].d_m >= w[1].d_m));
    }

    #[test]
    fn extract_winner_examples() {
        let params = IdentifyParams {
            neighbor_merge: false,
            ..Default::default()
        };
        let (a, b, c) = (q(10, 10, 10), q(50, 20, 30), q(200, -5, 7));
        let mut h = AttitudeHistogram::new(1.0);
        h.add_votes(a, 7);
        h.add_votes(b, 1);
        h.add_votes(c, 1);
        let w = extract_winner(&h, &params).unwrap();
        assert_eq!(w.key, a);
        assert_eq!(w.score, 7);
        assert!(!w.ambiguous);

        let mut h = AttitudeHistogram::new(1.0);
        h.add_votes(a, 3);
        h.add_votes(b, 3);
        let w = extract_winner(&h, &params).unwrap();
        assert_eq!(w.key, a);
        assert!(w.ambiguous);

        assert!(extract_winner(&AttitudeHistogram::new(1.0), &params).is_none());
    }

    #[test]
    fn merged_winner_reports_center_of_split_votes() {
        let params = IdentifyParams::default();
        let mut h = AttitudeHistogram::new(1.0);
        h.add_votes(q(10, 10, 359), 3);
        h.add_votes(q(10, 10, 0), 3);
        h.add_votes(q(100, 10, 0), 1);
        let w = extract_winner(&h, &params).unwrap();
        assert_eq!(w.score, 6);
        assert!(!w.ambiguous);
        assert_eq!(w.contributors.len(), 6);
        assert_eq!(w.key, q(10, 10, 0));
    }

    fn field_catalog() -> Vec<CatalogStar> {
        [
            (1, 150.0, 30.0),
            (2, 151.7, 30.4),
            (3, 149.1, 31.5),
            (4, 150.6, 28.2),
            (5, 148.3, 29.1),
            (6, 152.1, 31.9),
        ]
        .iter()
        .map(|&(h, ra, dec)| CatalogStar::new(h, ra, dec, 4.0).unwrap())
        .collect()
    }

    #[test]
    fn both_assignments_are_counted() {
        let cat = field_catalog();
        let db = build_pair_database(&cat, DatabaseParams::default()).unwrap();
        let scene = render_scene(&cat, Attitude::from_euler(150.0, 30.0, 20.0), &CameraModel::default());
        let pair = ObservedPair {
            i1: 0,
            i2: 1,
            d_m: angular_distance(&scene.observed[0].unit, &scene.observed[1].unit),
            centrality: 0.0,
        };
        let params = IdentifyParams {
            epsilon: 1e-9,
            ..Default::default()
        };
        let cands = initial_match(&[pair], &db, &params);
        assert_eq!(cands.for_pair(0).len(), 1);
        let hist = accumulate_attitudes(&[pair], &scene.observed, &cands, &db, &params);
        assert_eq!(hist.total(), 2);

        let empty = initial_match(&[], &db, &params);
        assert!(accumulate_attitudes(&[], &scene.observed, &empty, &db, &params).is_empty());
    }

    #[test]
    fn noiseless_field_is_identified() {
        let cat = field_catalog();
        let db = build_pair_database(&cat, DatabaseParams::default()).unwrap();
        let scene = render_scene(&cat, Attitude::from_euler(150.3, 30.2, 123.0), &CameraModel::default());
        assert_eq!(scene.observed.len(), 6);
        let r = identify(&scene.observed, &db, &IdentifyParams::default());
        assert_eq!(r.status, Status::Success);
        assert_eq!(r.matches, scene.truth_map());
        assert!(check_success(&r, &scene.truth_map()));
        let att = r.attitude.unwrap();
        assert!(att.rotation.angle_to(&scene.truth.attitude.rotation) < 1e-6);
    }

    #[test]
    fn conflicting_claims_keep_the_stronger_star() {
        let cat = field_catalog();
        let db = build_pair_database(&cat, DatabaseParams::default()).unwrap();
        let stars = stars_at(&[(1000.0, 1000.0), (1200.0, 1000.0), (1000.0, 1300.0)]);
        let pairs = vec![
            ObservedPair { i1: 0, i2: 1, d_m: 1.0, centrality: 0.0 },
            ObservedPair { i1: 0, i2: 2, d_m: 1.0, centrality: 0.0 },
            ObservedPair { i1: 1, i2: 2, d_m: 1.0, centrality: 0.0 },
        ];
        let mk = |pair: usize, a: u32, b: u32| Contribution {
            pair,
            catalog: CatalogPair {
                id_a: cat[a as usize].hip_id,
                id_b: cat[b as usize].hip_id,
                idx_a: a,
                idx_b: b,
                d_r: 1.0,
            },
            swapped: false,
            rotation: RotationMatrix::identity(),
        };
        let mut hist = AttitudeHistogram::new(1.0);
        let key = q(0, 0, 0);
        // star 0 -> idx 0 (2 votes); star 1 splits 1:1 between idx 1 and 3
        // and takes idx 1, which star 2 claims with 2 votes.
        hist.push(key, mk(0, 0, 1));
        hist.push(key, mk(1, 0, 1));
        hist.push(key, mk(2, 3, 1));
        let winner = Winner {
            key,
            score: 3,
            own_votes: 3,
            ambiguous: false,
            contributors: vec![0, 1, 2],
        };
        let r = assemble_result(&winner, &hist, &pairs, &stars, &db);
        assert_eq!(r.status, Status::Success);
        assert_eq!(r.matches.get(&0), Some(&cat[0].hip_id));
        assert_eq!(r.matches.get(&2), Some(&cat[1].hip_id));
        assert_eq!(r.matches.get(&1), None);
    }

    #[test]
    fn too_few_stars() {
        let db = build_pair_database(&field_catalog(), DatabaseParams::default()).unwrap();
        let r = identify(&[], &db, &IdentifyParams::default());
        assert_eq!(r.status, Status::InsufficientStars);
        let r = identify(&stars_at(&[(5.0, 5.0)]), &db, &IdentifyParams::default());
        assert_eq!(r.status, Status::InsufficientStars);
    }

    #[test]
    fn success_criterion() {
        let truth: BTreeMap<usize, u32> = [(0, 10), (1, 11), (2, 12), (3, 13), (4, 14)].into();
        let mut r = IdentificationResult::failure(Status::Success, 0.0);
        r.matches = [(0, 10), (1, 11)].into();
        assert!(check_success(&r, &truth));
        r.matches = [(0, 10), (1, 11), (2, 12), (3, 13), (4, 14), (7, 99)].into();
        assert!(!check_success(&r, &truth));
        r.matches = [(0, 10)].into();
        assert!(!check_success(&r, &truth));
        r.matches = [(0, 10), (1, 11), (2, 13)].into();
        assert!(!check_success(&r, &truth));
    }
}
