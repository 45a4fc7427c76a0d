//! Triangle-matching identification, used as the reference method in
//! benchmarks.
//!
//! Every catalog triangle whose sides are all at most `ad_max` is stored
//! under the bucket key of its sorted sides. Observed triples are tried in
//! index order; a catalog triangle whose sides agree within tolerance and
//! whose handedness matches yields an attitude, which is accepted once
//! another observed star projects onto a catalog star.

use std::collections::BTreeMap;
use std::time::Instant;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::catalog::{build_pair_database, CatalogStar, DatabaseParams, DEFAULT_AD_MAX_DEG};
use crate::error::{Error, Result};
use crate::geometry::{angular_distance, triad_attitude, Attitude, RotationMatrix, UnitVec3};
use crate::identify::{IdentificationResult, ObservedStar, Status};
use crate::simulate::CameraModel;

pub const DEFAULT_TRIANGLE_BIN_DEG: f64 = 0.05;

/// Catalog triangle. `stars[k]` is the vertex opposite `sides[k]`, and
/// `sides` is ascending.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriangleFeature {
    pub stars: [u32; 3],
    pub sides: [f64; 3],
}

impl TriangleFeature {
    /// Orders three vertices by their opposite sides. Ties keep input order.
    pub fn from_vertices(ids: [u32; 3], units: [&UnitVec3; 3]) -> Self {
        let opposite = [
            angular_distance(units[1], units[2]),
            angular_distance(units[0], units[2]),
            angular_distance(units[0], units[1]),
        ];
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| opposite[a].total_cmp(&opposite[b]));
        TriangleFeature {
            stars: order.map(|k| ids[k]),
            sides: order.map(|k| opposite[k]),
        }
    }
}

fn triangle_key(sides: &[f64; 3], w: f64) -> [i32; 3] {
    sides.map(|d| (d / w).floor() as i32)
}

/// Handedness of an ordered vertex triple.
fn chirality(a: &UnitVec3, b: &UnitVec3, c: &UnitVec3) -> f64 {
    a.as_vector().cross(b.as_vector()).dot(c.as_vector())
}

/// Uniform 3-D grid over unit vectors for catalog cone lookups.
#[derive(Clone, Debug)]
pub struct SkyGrid {
    cell: f64,
    cells: FxHashMap<[i32; 3], Vec<u32>>,
}

impl SkyGrid {
    /// `cell` is the grid spacing in unit-vector coordinates.
    pub fn new(stars: &[CatalogStar], cell: f64) -> Self {
        let mut cells: FxHashMap<[i32; 3], Vec<u32>> = FxHashMap::default();
        for (i, s) in stars.iter().enumerate() {
            cells.entry(Self::key(&s.unit, cell)).or_default().push(i as u32);
        }
        SkyGrid { cell, cells }
    }

    fn key(v: &UnitVec3, cell: f64) -> [i32; 3] {
        [v.x(), v.y(), v.z()].map(|c| (c / cell).floor() as i32)
    }

    /// Nearest catalog star within `radius_deg` of `v`. The radius must not
    /// exceed the cell size.
    pub fn nearest(&self, stars: &[CatalogStar], v: &UnitVec3, radius_deg: f64) -> Option<u32> {
        let cos_r = radius_deg.to_radians().cos();
        let k = Self::key(v, self.cell);
        let mut best: Option<(f64, u32)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(ids) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) else {
                        continue;
                    };
                    for &i in ids {
                        let c = stars[i as usize].unit.dot(v);
                        if c >= cos_r && best.is_none_or(|(bc, bi)| c > bc || (c == bc && i < bi)) {
                            best = Some((c, i));
                        }
                    }
                }
            }
        }
        best.map(|(_, i)| i)
    }
}

#[derive(Clone, Debug)]
pub struct TriangleDatabase {
    catalog: Vec<CatalogStar>,
    triangles: Vec<TriangleFeature>,
    bins: FxHashMap<[i32; 3], Vec<u32>>,
    bin_width: f64,
    ad_max: f64,
    grid: SkyGrid,
}

/// Builds the triangle store. Sides shorter than the pair database's
/// double-star cut are excluded along with their triangles.
pub fn build_triangle_database(
    stars: &[CatalogStar],
    ad_max: f64,
    bin_width: f64,
) -> Result<TriangleDatabase> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::Config(format!("bin width must be positive, got {bin_width}")));
    }
    let pairs = build_pair_database(
        stars,
        DatabaseParams {
            ad_max,
            n_x: ad_max,
            ..DatabaseParams::default()
        },
    )?;
    let catalog = pairs.catalog().to_vec();
    let mut adj: Vec<Vec<u32>> = vec![Vec::new(); catalog.len()];
    for p in pairs.pairs() {
        let (a, b) = (p.idx_a.min(p.idx_b), p.idx_a.max(p.idx_b));
        adj[a as usize].push(b);
    }
    for n in &mut adj {
        n.sort_unstable();
    }

    let mut triangles = Vec::new();
    for (i, higher) in adj.iter().enumerate() {
        for (x, &j) in higher.iter().enumerate() {
            for &k in &higher[x + 1..] {
                // j < k, so (j, k) is listed under j when close enough
                if adj[j as usize].binary_search(&k).is_ok() {
                    let ids = [i as u32, j, k];
                    let units = ids.map(|s| &catalog[s as usize].unit);
                    triangles.push(TriangleFeature::from_vertices(ids, units));
                }
            }
        }
    }

    let mut bins: FxHashMap<[i32; 3], Vec<u32>> = FxHashMap::default();
    for (t, tri) in triangles.iter().enumerate() {
        bins.entry(triangle_key(&tri.sides, bin_width)).or_default().push(t as u32);
    }
    let grid = SkyGrid::new(&catalog, 0.02);
    Ok(TriangleDatabase {
        catalog,
        triangles,
        bins,
        bin_width,
        ad_max,
        grid,
    })
}

impl TriangleDatabase {
    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn ad_max(&self) -> f64 {
        self.ad_max
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    pub fn catalog(&self) -> &[CatalogStar] {
        &self.catalog
    }

    pub fn triangles(&self) -> &[TriangleFeature] {
        &self.triangles
    }

    /// Triangles whose sorted sides are each within `tol` of `sides`, in
    /// storage order.
    pub fn query(&self, sides: &[f64; 3], tol: f64) -> Vec<&TriangleFeature> {
        let lo = triangle_key(&sides.map(|d| d - tol), self.bin_width);
        let hi = triangle_key(&sides.map(|d| d + tol), self.bin_width);
        let mut ids = Vec::new();
        for a in lo[0]..=hi[0] {
            for b in lo[1].max(a)..=hi[1] {
                for c in lo[2].max(b)..=hi[2] {
                    if let Some(v) = self.bins.get(&[a, b, c]) {
                        ids.extend(v.iter().copied().filter(|&t| {
                            let s = &self.triangles[t as usize].sides;
                            (0..3).all(|k| (s[k] - sides[k]).abs() <= tol)
                        }));
                    }
                }
            }
        }
        ids.sort_unstable();
        ids.into_iter().map(|t| &self.triangles[t as usize]).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriangleParams {
    /// Side-length match tolerance, degrees.
    pub side_tol: f64,
    /// Radius for matching projected stars to the catalog, degrees.
    pub verify_tol: f64,
    /// Extra stars that must verify before a match is accepted.
    pub min_verified: usize,
    pub ad_max: f64,
}

impl Default for TriangleParams {
    fn default() -> Self {
        TriangleParams::for_noise(0.0, &CameraModel::default())
    }
}

impl TriangleParams {
    /// Tolerances scaled to per-axis centroid noise `sigma` (pixels).
    pub fn for_noise(sigma: f64, cam: &CameraModel) -> Self {
        let scale = cam.pixel_scale_deg();
        TriangleParams {
            side_tol: 0.002 + 3.0 * std::f64::consts::SQRT_2 * sigma * scale,
            verify_tol: 0.005 + 5.0 * sigma * scale,
            min_verified: 1,
            ad_max: DEFAULT_AD_MAX_DEG,
        }
    }
}

struct Hypothesis {
    rotation: RotationMatrix,
    /// observed index -> catalog index, triangle vertices first
    matched: Vec<(usize, u32)>,
}

/// Vertex assignments of an observed triple onto `tri` consistent with the
/// side lengths and handedness.
fn consistent_assignments(
    obs: [&ObservedStar; 3],
    tri: &TriangleFeature,
    cat: &[CatalogStar],
    tol: f64,
) -> Vec<[usize; 3]> {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let cu = tri.stars.map(|s| &cat[s as usize].unit);
    let cat_hand = chirality(cu[0], cu[1], cu[2]);
    PERMS
        .into_iter()
        .filter(|p| {
            let o = p.map(|k| &obs[k].unit);
            let fits = (0..3).all(|v| {
                let d = angular_distance(o[(v + 1) % 3], o[(v + 2) % 3]);
                (d - tri.sides[v]).abs() <= tol
            });
            fits && chirality(o[0], o[1], o[2]).signum() == cat_hand.signum()
        })
        .collect()
}

fn hypothesis(
    obs: [&ObservedStar; 3],
    perm: [usize; 3],
    tri: &TriangleFeature,
    db: &TriangleDatabase,
    params: &TriangleParams,
) -> Option<Hypothesis> {
    let cat = &db.catalog;
    // vertices 0 and 1 span the longest side
    let (o0, o1, o2) = (obs[perm[0]], obs[perm[1]], obs[perm[2]]);
    let [c0, c1, c2] = tri.stars.map(|s| &cat[s as usize].unit);
    let rotation = triad_attitude(c0, c1, &o0.unit, &o1.unit).ok()?;
    if angular_distance(&rotation.to_inertial(&o2.unit), c2) > params.verify_tol {
        return None;
    }
    Some(Hypothesis {
        rotation,
        matched: vec![
            (o0.index, tri.stars[0]),
            (o1.index, tri.stars[1]),
            (o2.index, tri.stars[2]),
        ],
    })
}

/// Matches remaining observed stars through the hypothesis attitude.
fn verify(h: &mut Hypothesis, stars: &[ObservedStar], db: &TriangleDatabase, params: &TriangleParams) -> usize {
    let mut extra = 0;
    for s in stars {
        if h.matched.iter().any(|m| m.0 == s.index) {
            continue;
        }
        let v = h.rotation.to_inertial(&s.unit);
        if let Some(c) = db.grid.nearest(&db.catalog, &v, params.verify_tol) {
            if !h.matched.iter().any(|m| m.1 == c) {
                h.matched.push((s.index, c));
                extra += 1;
            }
        }
    }
    extra
}

/// Identifies a frame by triangle matching.
///
/// Triples are tried in lexicographic index order and the first hypothesis
/// with at least `min_verified` extra stars wins. A frame of exactly three
/// stars is accepted only when one hypothesis exists.
pub fn triangle_identify(
    stars: &[ObservedStar],
    db: &TriangleDatabase,
    params: &TriangleParams,
) -> IdentificationResult {
    let start = Instant::now();
    let mut result = triangle_inner(stars, db, params);
    result.elapsed = start.elapsed().as_secs_f64();
    result
}

fn triangle_inner(stars: &[ObservedStar], db: &TriangleDatabase, params: &TriangleParams) -> IdentificationResult {
    if stars.len() < 3 {
        return IdentificationResult::failure(Status::InsufficientStars, 0.0);
    }
    let n = stars.len();
    let mut any_candidate = false;
    let mut lone: Vec<Hypothesis> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let obs = [&stars[i], &stars[j], &stars[k]];
                let ids = [0u32, 1, 2];
                let tri = TriangleFeature::from_vertices(ids, obs.map(|s| &s.unit));
                if tri.sides[2] > params.ad_max {
                    continue;
                }
                let sorted_obs = tri.stars.map(|v| obs[v as usize]);
                for cand in db.query(&tri.sides, params.side_tol) {
                    for perm in consistent_assignments(sorted_obs, cand, &db.catalog, params.side_tol) {
                        any_candidate = true;
                        let Some(mut h) = hypothesis(sorted_obs, perm, cand, db, params) else {
                            continue;
                        };
                        if n == 3 {
                            lone.push(h);
                            continue;
                        }
                        let votes = verify(&mut h, stars, db, params);
                        if votes >= params.min_verified {
                            return success(h, db, votes + 3);
                        }
                    }
                }
            }
        }
    }
    if lone.len() == 1 {
        return success(lone.pop().expect("one hypothesis"), db, 3);
    }
    let status = if any_candidate {
        Status::Ambiguous
    } else {
        Status::NoCandidates
    };
    IdentificationResult::failure(status, 0.0)
}

fn success(h: Hypothesis, db: &TriangleDatabase, votes: usize) -> IdentificationResult {
    let matches: BTreeMap<usize, u32> = h
        .matched
        .iter()
        .map(|&(o, c)| (o, db.catalog[c as usize].hip_id))
        .collect();
    IdentificationResult {
        status: Status::Success,
        attitude: Some(Attitude::from_rotation(h.rotation)),
        matches,
        vote_count: votes,
        elapsed: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identify::check_success;
    use crate::simulate::render_scene;

    fn star(hip: u32, ra: f64, dec: f64) -> CatalogStar {
        CatalogStar::new(hip, ra, dec, 3.0).unwrap()
    }

    fn brute_force(stars: &[CatalogStar], ad_max: f64) -> usize {
        let ok = |a: &CatalogStar, b: &CatalogStar| {
            let d = angular_distance(&a.unit, &b.unit);
            d <= ad_max && d >= DatabaseParams::default().min_separation
        };
        let mut n = 0;
        for i in 0..stars.len() {
            for j in i + 1..stars.len() {
                for k in j + 1..stars.len() {
                    if ok(&stars[i], &stars[j]) && ok(&stars[i], &stars[k]) && ok(&stars[j], &stars[k]) {
                        n += 1;
                    }
                }
            }
        }
        n
    }

    #[test]
    fn four_stars_give_four_triangles() {
        let stars = vec![star(1, 0.0, 0.0), star(2, 1.0, 0.0), star(3, 0.0, 1.5), star(4, 2.0, 2.0)];
        let db = build_triangle_database(&stars, 8.0, 0.05).unwrap();
        assert_eq!(db.len(), 4);
        for t in db.triangles() {
            assert!(t.sides[0] <= t.sides[1] && t.sides[1] <= t.sides[2]);
            assert!(t.sides[2] <= t.sides[0] + t.sides[1]);
        }
    }

    #[test]
    fn exact_sides_return_the_triangle() {
        let stars = vec![star(1, 0.0, 0.0), star(2, 1.0, 0.0), star(3, 0.0, 1.5), star(4, 2.0, 2.0)];
        let db = build_triangle_database(&stars, 8.0, 0.05).unwrap();
        for t in db.triangles() {
            let hits = db.query(&t.sides, 1e-9);
            assert!(hits.contains(&t));
        }
    }

    #[test]
    fn store_matches_triple_loop() {
        let mut stars = Vec::new();
        let mut x: u64 = 12345;
        let mut next = || {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (x >> 11) as f64 / (1u64 << 53) as f64
        };
        for hip in 1..=100 {
            stars.push(star(hip, next() * 20.0, next() * 20.0 - 10.0));
        }
        let db = build_triangle_database(&stars, 8.0, 0.05).unwrap();
        assert_eq!(db.len(), brute_force(&stars, 8.0));
        assert!(db.len() > 1000);
    }

    fn field() -> Vec<CatalogStar> {
        let pts = [
            (10.0, 5.0),
            (11.2, 5.4),
            (9.1, 6.3),
            (10.4, 3.2),
            (12.0, 7.1),
            (8.7, 4.1),
            (10.9, 6.8),
            (40.0, 40.0),
            (42.0, 41.0),
        ];
        pts.iter()
            .enumerate()
            .map(|(i, &(ra, dec))| star(100 + i as u32, ra, dec))
            .collect()
    }

    #[test]
    fn noiseless_frame_is_identified() {
        let cat = field();
        let db = build_triangle_database(&cat, 8.0, 0.05).unwrap();
        let att = Attitude::from_euler(10.3, 5.4, 33.0);
        let scene = render_scene(&cat, att, &CameraModel::default());
        assert!(scene.observed.len() >= 6);
        let r = triangle_identify(&scene.observed, &db, &TriangleParams::default());
        assert_eq!(r.status, Status::Success);
        assert!(check_success(&r, &scene.truth_map()));
        assert_eq!(r.matches, scene.truth_map());
        assert!(r.attitude.unwrap().rotation.angle_to(&att.rotation) < 1e-6);
    }

    #[test]
    fn mirrored_triangle_is_rejected() {
        let cat = vec![star(1, 0.0, 0.0), star(2, 1.0, 0.0), star(3, 0.3, 1.2)];
        let db = build_triangle_database(&cat, 8.0, 0.05).unwrap();
        let cam = CameraModel::default();
        let att = Attitude::from_euler(0.4, 0.4, 0.0);
        let scene = render_scene(&cat, att, &cam);
        assert_eq!(scene.observed.len(), 3);
        let mirrored: Vec<ObservedStar> = scene
            .observed
            .iter()
            .map(|s| ObservedStar::new(s.index, 2048.0 - s.px, s.py, &cam, s.truth_hip))
            .collect();
        let params = TriangleParams::default();
        assert_eq!(triangle_identify(&scene.observed, &db, &params).status, Status::Success);
        assert_ne!(triangle_identify(&mirrored, &db, &params).status, Status::Success);
    }

    #[test]
    fn two_stars_are_insufficient() {
        let cat = field();
        let db = build_triangle_database(&cat, 8.0, 0.05).unwrap();
        let cam = CameraModel::default();
        let stars = vec![
            ObservedStar::new(0, 100.0, 100.0, &cam, None),
            ObservedStar::new(1, 900.0, 300.0, &cam, None),
        ];
        let r = triangle_identify(&stars, &db, &TriangleParams::default());
        assert_eq!(r.status, Status::InsufficientStars);
    }

    #[test]
    fn sky_grid_finds_nearest() {
        let cat = field();
        let grid = SkyGrid::new(&cat, 0.02);
        let v = radec(10.001, 5.0);
        assert_eq!(grid.nearest(&cat, &v, 0.01), Some(0));
        assert_eq!(grid.nearest(&cat, &radec(25.0, 25.0), 0.5), None);
    }

    fn radec(ra: f64, dec: f64) -> UnitVec3 {
        crate::geometry::radec_to_unit(ra, dec).unwrap()
    }
}
