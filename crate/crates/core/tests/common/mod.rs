#![allow(dead_code)]

pub mod oracle;

use std::path::PathBuf;
use std::sync::OnceLock;

use starid::catalog::{build_pair_database, load_catalog, CatalogStar, DatabaseParams, PairDatabase};

pub fn catalog_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/hip_mag6.5.csv")
}

/// V <= 6.0 stars of the bundled catalog.
pub fn catalog() -> &'static [CatalogStar] {
    static CAT: OnceLock<Vec<CatalogStar>> = OnceLock::new();
    CAT.get_or_init(|| load_catalog(catalog_path(), 6.0).expect("bundled catalog"))
}

/// Default database (n_x = 0.016, ad_max = 8) over [`catalog`].
pub fn database() -> &'static PairDatabase {
    static DB: OnceLock<PairDatabase> = OnceLock::new();
    DB.get_or_init(|| build_pair_database(catalog(), DatabaseParams::default()).unwrap())
}

/// Haversine separation in degrees, independent of the library's formula.
pub fn haversine_deg(a: &CatalogStar, b: &CatalogStar) -> f64 {
    let (ra1, de1) = (a.ra.to_radians(), a.dec.to_radians());
    let (ra2, de2) = (b.ra.to_radians(), b.dec.to_radians());
    let h = ((de2 - de1) / 2.0).sin().powi(2) + de1.cos() * de2.cos() * ((ra2 - ra1) / 2.0).sin().powi(2);
    (2.0 * h.sqrt().min(1.0).asin()).to_degrees()
}
