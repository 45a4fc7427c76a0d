//! Library results checked against slow, independent reimplementations.

mod common;

use nalgebra::{Rotation3, Unit, Vector3};
use proptest::prelude::*;
use starid::catalog::{CatalogPair, CatalogStar};
use starid::geometry::{radec_to_unit, separation_rad, QuantizedAttitude, RotationMatrix, UnitVec3};
use starid::simulate::CameraModel;

use common::oracle::*;
use common::{catalog, database, haversine_deg};

#[test]
fn pair_set_matches_double_loop() {
    let raw = check_pair_set().unwrap();
    assert_eq!(raw, 72082, "pairs in the unfiltered V <= 6 catalog");
}

#[test]
fn double_resolution_matches_greedy_scan() {
    let mut order: Vec<_> = catalog().iter().collect();
    order.sort_by(|a, b| (a.vmag, a.hip_id).partial_cmp(&(b.vmag, b.hip_id)).unwrap());
    let mut kept: Vec<&CatalogStar> = Vec::new();
    for s in order {
        if kept.iter().all(|k| haversine_deg(k, s) >= 0.01) {
            kept.push(s);
        }
    }
    let mut want: Vec<u32> = kept.iter().map(|s| s.hip_id).collect();
    want.sort_unstable();
    let got: Vec<u32> = database().catalog().iter().map(|s| s.hip_id).collect();
    assert_eq!(got, want);
    assert!(got.len() < catalog().len(), "catalog has known close doubles");
}

fn vote_strategy() -> impl Strategy<Value = Vec<(QuantizedAttitude, usize)>> {
    // a small lattice region straddling the ra/roll wrap, so that windows
    // overlap and ties are common
    let c = (-3i32..4, -3i32..4, -3i32..4).prop_map(|(a, d, r)| cell(a, d, r));
    prop::collection::vec((c, 0usize..10), 1..60)
}

fn unit_strategy() -> impl Strategy<Value = UnitVec3> {
    (-1.0f64..1.0, 0.0f64..360.0).prop_map(|(z, ra)| radec_to_unit(ra, z.asin().to_degrees()).unwrap())
}

fn rotation_strategy() -> impl Strategy<Value = RotationMatrix> {
    (unit_strategy(), 0.0f64..std::f64::consts::PI).prop_map(|(axis, angle)| {
        let axis = Unit::new_normalize(Vector3::new(axis.x(), axis.y(), axis.z()));
        RotationMatrix::from_matrix_unchecked(*Rotation3::from_axis_angle(&axis, angle).matrix())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn query_matches_linear_scan(which in 0usize..4, d_m in 0.0f64..8.5, eps in 0.0005f64..0.12) {
        check_query(&subset_databases()[which], d_m, eps).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn query_at_stored_distances(which in 0usize..4, pick in any::<prop::sample::Index>(), eps in 0.0f64..0.05) {
        let db = &subset_databases()[which];
        let pairs: Vec<CatalogPair> = db.pairs().copied().collect();
        let p = pick.get(&pairs);
        prop_assert!(db.query_pairs(p.d_r, eps).contains(p));
        check_query(db, p.d_r, eps).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn winner_matches_naive_scan(votes in vote_strategy(), merge in any::<bool>()) {
        check_winner(&votes, merge).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn triad_recovers_rotation(r in rotation_strategy(), a in unit_strategy(), b in unit_strategy()) {
        prop_assume!(separation_rad(&a, &b).to_degrees() > 0.1);
        prop_assume!(separation_rad(&a, &b).to_degrees() < 179.9);
        check_triad(&r, &a, &b).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn pixel_round_trip(px in 0.0f64..2048.0, py in 0.0f64..2048.0) {
        check_pixel_round_trip(px, py).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn vector_round_trip(off in 0.0f64..4.0, az in 0.0f64..360.0) {
        check_vector_round_trip(off, az).map_err(TestCaseError::fail)?;
    }
}

#[test]
fn corner_pixel_within_diagonal_bound() {
    let cam = CameraModel::default();
    let half_diag_mm = (2.0f64).sqrt() * 1024.0 * 6.5e-3;
    let bound = (half_diag_mm / 95.0).atan();
    let v = cam.pixel_to_vector(0.0, 0.0);
    let off = separation_rad(&v, &UnitVec3::from_xyz(0.0, 0.0, 1.0));
    assert!((off - bound).abs() < 1e-12, "{off} {bound}");
    assert!(off.to_degrees() > cam.fov_deg / 2.0);
}
